#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "reflexsplit/common.hpp"
#include "reflexsplit/image.hpp"
#include "reflexsplit/oracles.hpp"
#include "reflexsplit/synth.hpp"
#include "test_support.hpp"

using namespace reflexsplit;
using namespace reflexsplit::testing;

TEST_CASE("screen blend identities") {
    const Tensor white = Tensor::full({3, 3, 3}, 1.0);
    CHECK(max_abs_diff(screen_blend(white, white, {1.0, 1.0}), white) == 0.0);

    Rng rng(1);
    const Tensor t = Tensor::uniform({4, 6, 3}, 0.0, 1.0, rng);
    const Tensor zero({4, 6, 3});
    const Tensor out = screen_blend(t, zero, {0.87, 0.55});
    for (std::int64_t i = 0; i < out.size(); ++i) {
        CHECK(out[i] == doctest::Approx(0.87 * t[i]).epsilon(1e-15));
    }

    // gamma1 = gamma2 = 1 on 0.5/0.5: 0.5 + 0.5 - 0.25, checked against the
    // scalar oracle value.
    const Tensor half = Tensor::full({2, 2, 3}, 0.5);
    const Tensor blended = screen_blend(half, half, {1.0, 1.0});
    CHECK(blended[0] == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(blended[0] == doctest::Approx(oracle::screen_blend_pixel(0.5, 0.5, 1.0, 1.0)));
}

TEST_CASE("screen blend stays inside [0,1] without needing the clamp") {
    Rng rng(2);
    for (int k = 0; k < 200; ++k) {
        const double tv = rng.uniform(), rv = rng.uniform();
        const BlendCoefficients c = sample_coefficients(rng);
        const double raw = c.gamma1 * tv + c.gamma2 * rv - (c.gamma1 * c.gamma2) * (tv * rv);
        CHECK(raw >= 0.0);
        CHECK(raw <= 1.0 + 1e-15);
        const Tensor t = Tensor::full({1, 1, 3}, tv);
        const Tensor r = Tensor::full({1, 1, 3}, rv);
        CHECK(screen_blend(t, r, c)[0] == doctest::Approx(raw).epsilon(1e-15));
    }
}

TEST_CASE("screen blend is symmetric under the (t,g1)<->(r,g2) swap") {
    Rng rng(3);
    const Tensor t = Tensor::uniform({5, 5, 3}, 0.0, 1.0, rng);
    const Tensor r = Tensor::uniform({5, 5, 3}, 0.0, 1.0, rng);
    const BlendCoefficients c{0.91, 0.47};
    CHECK(bit_equal(screen_blend(t, r, c), screen_blend(r, t, {c.gamma2, c.gamma1})));
}

TEST_CASE("screen blend rejects shape mismatches") {
    CHECK_THROWS_AS(screen_blend(Tensor({2, 2, 3}), Tensor({2, 3, 3}), {1, 1}), ShapeError);
}

TEST_CASE("coefficient sampling is reproducible and stays in range") {
    Rng a(42), b(42);
    const BlendCoefficients ca = sample_coefficients(a);
    const BlendCoefficients cb = sample_coefficients(b);
    CHECK(ca.gamma1 == cb.gamma1);
    CHECK(ca.gamma2 == cb.gamma2);

    Rng rng(7);
    double min1 = 1e9, max1 = -1e9, min2 = 1e9, max2 = -1e9, sum1 = 0.0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const BlendCoefficients c = sample_coefficients(rng);
        min1 = std::min(min1, c.gamma1);
        max1 = std::max(max1, c.gamma1);
        min2 = std::min(min2, c.gamma2);
        max2 = std::max(max2, c.gamma2);
        sum1 += c.gamma1;
    }
    CHECK(min1 >= 0.8);
    CHECK(max1 <= 1.0);
    CHECK(min2 >= 0.4);
    CHECK(max2 <= 1.0);
    const double mean1 = sum1 / n;
    CHECK(mean1 >= 0.89);
    CHECK(mean1 <= 0.91);
}

namespace {

// Independent largest-remainder apportionment for cross-checking.
std::array<int, 3> apportion_oracle(int n, const std::array<double, 3>& ratio) {
    std::array<int, 3> base{};
    std::array<std::pair<double, int>, 3> rem;
    int used = 0;
    for (int i = 0; i < 3; ++i) {
        const double exact = ratio[static_cast<std::size_t>(i)] * n;
        base[static_cast<std::size_t>(i)] = static_cast<int>(exact);
        rem[static_cast<std::size_t>(i)] = {exact - base[static_cast<std::size_t>(i)], i};
        used += base[static_cast<std::size_t>(i)];
    }
    std::stable_sort(rem.begin(), rem.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (int k = 0; k < n - used; ++k) base[static_cast<std::size_t>(rem[k % 3].second)] += 1;
    return base;
}

} // namespace

TEST_CASE("epoch apportionment follows largest remainder with synthetic-first ties") {
    CHECK(apportion_counts(5000, {0.6, 0.2, 0.2}) == std::array<int, 3>{3000, 1000, 1000});
    CHECK(apportion_counts(10, {1.0, 0.0, 0.0}) == std::array<int, 3>{10, 0, 0});
    CHECK(apportion_counts(7, {0.5, 0.5, 0.0}) == std::array<int, 3>{4, 3, 0});
    Rng rng(11);
    for (int k = 0; k < 50; ++k) {
        double a = rng.uniform(), b = rng.uniform(), c = rng.uniform();
        const double s = a + b + c;
        const std::array<double, 3> ratio{a / s, b / s, c / s};
        const int n = rng.uniform_int(0, 500);
        const auto got = apportion_counts(n, ratio);
        const auto want = apportion_oracle(n, ratio);
        CHECK(got == want);
        CHECK(got[0] + got[1] + got[2] == n);
    }
}

namespace {

DataSources tiny_sources(int n_pairs, int n_real, int n_nature, std::uint64_t seed) {
    DataSources s;
    Rng rng(seed);
    for (int i = 0; i < n_pairs; ++i) {
        ImagePair p;
        p.transmission = procedural_image(16, 16, rng);
        p.reflection = procedural_image(16, 16, rng);
        s.synthesis.push_back(std::move(p));
    }
    auto make_triplet = [&rng](TripletOrigin origin) {
        TrainingTriplet t;
        t.origin = origin;
        t.transmission = procedural_image(16, 16, rng);
        t.reflection = procedural_image(16, 16, rng);
        t.mixed = screen_blend(t.transmission, t.reflection, {0.9, 0.6});
        return t;
    };
    for (int i = 0; i < n_real; ++i) s.real.push_back(make_triplet(TripletOrigin::kReal));
    for (int i = 0; i < n_nature; ++i) s.nature.push_back(make_triplet(TripletOrigin::kNature));
    return s;
}

} // namespace

TEST_CASE("build_epoch returns exact counts by origin and re-blends fresh") {
    const DataSources sources = tiny_sources(3, 2, 2, 5);
    EpochSampler sampler;
    sampler.pairs_per_epoch = 10;
    sampler.ratio = {0.6, 0.2, 0.2};
    sampler.seed = 99;
    const auto epoch = build_epoch(sampler, sources);
    REQUIRE(epoch.size() == 10);
    int counts[3] = {0, 0, 0};
    for (const auto& t : epoch) counts[static_cast<int>(t.origin)]++;
    CHECK(counts[0] == 6);
    CHECK(counts[1] == 2);
    CHECK(counts[2] == 2);
    for (const auto& t : epoch) {
        CHECK(t.mixed.same_shape(t.transmission));
        CHECK(t.mixed.same_shape(t.reflection));
    }

    // A different seed re-blends synthetic triplets differently.
    EpochSampler other = sampler;
    other.seed = 100;
    const auto epoch2 = build_epoch(other, sources);
    CHECK_FALSE(bit_equal(epoch[0].mixed, epoch2[0].mixed));
}

TEST_CASE("build_epoch is bit-reproducible under a fixed seed") {
    const DataSources sources = tiny_sources(4, 1, 1, 6);
    EpochSampler sampler;
    sampler.pairs_per_epoch = 8;
    sampler.ratio = {0.5, 0.25, 0.25};
    sampler.seed = 1234;
    const auto a = build_epoch(sampler, sources);
    const auto b = build_epoch(sampler, sources);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(bit_equal(a[i].mixed, b[i].mixed));
        CHECK(bit_equal(a[i].transmission, b[i].transmission));
        CHECK(bit_equal(a[i].reflection, b[i].reflection));
    }
}

TEST_CASE("build_epoch rejects an empty source with nonzero ratio") {
    const DataSources sources = tiny_sources(2, 0, 0, 7);
    EpochSampler sampler;
    sampler.pairs_per_epoch = 4;
    sampler.ratio = {0.5, 0.5, 0.0};
    sampler.seed = 3;
    CHECK_THROWS_AS((void)build_epoch(sampler, sources), DataError);
    sampler.ratio = {1.0, 0.0, 0.0};
    CHECK_NOTHROW((void)build_epoch(sampler, sources));
}

TEST_CASE("manifest loading: tabs, comments, malformed rows, png round trip") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "rxs_manifest_test";
    fs::create_directories(dir);
    Rng rng(8);
    const Tensor t = procedural_image(12, 14, rng);
    const Tensor r = procedural_image(12, 14, rng);
    save_png(t, (dir / "t.png").string());
    save_png(r, (dir / "r.png").string());
    {
        std::ofstream m(dir / "pairs.tsv");
        m << "# transmission\treflection\n";
        m << "t.png\tr.png\n";
    }
    const auto pairs = load_synthesis_manifest(dir.string());
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].transmission.shape() == std::vector<int>{12, 14, 3});
    // 8-bit quantization bound
    CHECK(max_abs_diff(pairs[0].transmission, t) <= 0.5 / 255.0 + 1e-12);

    {
        std::ofstream m(dir / "pairs.tsv");
        m << "only_one_field.png\n";
    }
    CHECK_THROWS_AS(load_synthesis_manifest(dir.string()), DataError);
    CHECK_THROWS_AS(load_synthesis_manifest((dir / "missing").string()), DataError);
    fs::remove_all(dir);
}

TEST_CASE("procedural images are deterministic and in range") {
    Rng a(10), b(10);
    const Tensor x = procedural_image(20, 24, a);
    const Tensor y = procedural_image(20, 24, b);
    CHECK(bit_equal(x, y));
    CHECK(x.min() >= 0.0);
    CHECK(x.max() <= 1.0);
}
