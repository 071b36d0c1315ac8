#include <doctest.h>

#include <sstream>

#include "reflexsplit/common.hpp"
#include "reflexsplit/curriculum.hpp"

using namespace reflexsplit;

// High-precision values frozen ahead of the build (30-digit evaluation of
// 0.8 - 0.6*exp(-0.3*l)).
constexpr double kLambdaInit3 = 0.55605820415564053287;
constexpr double kLambdaInit5 = 0.66612190391094210264;

TEST_CASE("depth-dependent initialization") {
    CHECK(lambda_init(0) == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(std::abs(lambda_init(3) - kLambdaInit3) < 1e-12);
    CHECK(std::abs(lambda_init(5) - kLambdaInit5) < 1e-12);
    CHECK(lambda_init(50) > 0.799);
    CHECK_THROWS_AS(lambda_init(-1), ConfigError);
}

TEST_CASE("epoch-wise warmup ramp") {
    CHECK(std::abs(lambda_warmup(0, 30) - 0.1) < 1e-12);
    CHECK(std::abs(lambda_warmup(30, 30) - 1.0) < 1e-12);
    CHECK(std::abs(lambda_warmup(45, 30) - 1.0) < 1e-12);
    CHECK(std::abs(lambda_warmup(15, 30) - 0.55) < 1e-12);
    CHECK_THROWS_AS(lambda_warmup(-1, 30), ConfigError);
    CHECK_THROWS_AS(lambda_warmup(0, 0), ConfigError);
}

TEST_CASE("effective strength is the product of the two schedules") {
    CHECK(std::abs(lambda_effective(0, 0, 30) - 0.02) < 1e-12);
    CHECK(std::abs(lambda_effective(5, 30, 30) - kLambdaInit5) < 1e-12);
    for (int level = 0; level <= 5; ++level) {
        CHECK(std::abs(lambda_effective(level, 30, 30) - lambda_init(level)) < 1e-15);
    }
}

TEST_CASE("effective strength is monotone and bounded") {
    double prev_epoch = -1.0;
    for (int e = 0; e <= 40; ++e) {
        const double v = lambda_effective(2, e, 30);
        CHECK(v >= prev_epoch);
        prev_epoch = v;
    }
    for (int e = 0; e <= 40; ++e) {
        double prev_level = -1.0;
        for (int l = 0; l <= 8; ++l) {
            const double v = lambda_effective(l, e, 30);
            CHECK(v >= prev_level);
            CHECK(v >= 0.02);
            CHECK(v < 0.8);
            prev_level = v;
        }
    }
}

TEST_CASE("curriculum state snapshots the warmup factor") {
    ModelConfig c = ModelConfig::desk();
    const CurriculumState s0 = CurriculumState::at_epoch(c, 0);
    CHECK(s0.lambda_diff == doctest::Approx(0.1).epsilon(1e-12));
    const CurriculumState s30 = CurriculumState::at_epoch(c, 30);
    CHECK(s30.lambda_diff == 1.0);
    CHECK(s0.mode == LambdaMode::kLearnable);
}

TEST_CASE("schedule dump emits epoch,level,value rows") {
    std::ostringstream out;
    dump_schedule_csv(out, 2, 3, 30);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "epoch,level,value");
    int rows = 0;
    while (std::getline(in, line)) {
        if (!line.empty()) ++rows;
    }
    CHECK(rows == 4 * 3); // epochs 0..3, levels 0..2
}
