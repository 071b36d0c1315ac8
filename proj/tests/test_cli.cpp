#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "reflexsplit/ablate.hpp"
#include "reflexsplit/common.hpp"
#include "reflexsplit/image.hpp"
#include "reflexsplit/oracles.hpp"
#include "reflexsplit/synth.hpp"

using namespace reflexsplit;
namespace fs = std::filesystem;

#ifndef REFLEXSPLIT_CLI_PATH
#define REFLEXSPLIT_CLI_PATH "reflexsplit_cli"
#endif

namespace {

int run_cli(const std::string& args, std::string* output = nullptr) {
    const fs::path out_file = fs::temp_directory_path() / "rxs_cli_out.txt";
    const std::string cmd = std::string(REFLEXSPLIT_CLI_PATH) + " " + args + " > " +
                            out_file.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    if (output) {
        std::ifstream in(out_file);
        std::stringstream ss;
        ss << in.rdbuf();
        *output = ss.str();
    }
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("unknown commands and unknown keys are usage errors") {
    CHECK(run_cli("frobnicate") == 1);
    CHECK(run_cli("synth --procedural --count 1 --set bogus=1 --out /tmp/rxs_x") == 1);
}

TEST_CASE("missing data is a data error, not a crash") {
    CHECK(run_cli("eval --data /definitely/not/here") == 2);
}

TEST_CASE("synth is byte-deterministic under a fixed seed and supports count 0") {
    const fs::path base = fs::temp_directory_path() / "rxs_cli_synth";
    fs::remove_all(base);
    const std::string a = (base / "a").string(), b = (base / "b").string();
    const std::string common =
        "synth --procedural --count 3 --seed 11 --set image_size=32 --out ";
    REQUIRE(run_cli(common + a) == 0);
    REQUIRE(run_cli(common + b) == 0);
    CHECK(slurp(a + "/triplets.tsv") == slurp(b + "/triplets.tsv"));
    CHECK_FALSE(slurp(a + "/triplets.tsv").empty());
    CHECK(slurp(a + "/I_00000.png") == slurp(b + "/I_00000.png"));

    const std::string empty = (base / "empty").string();
    REQUIRE(run_cli("synth --procedural --count 0 --seed 11 --set image_size=32 --out " + empty) ==
            0);
    const std::string manifest = slurp(empty + "/triplets.tsv");
    CHECK(manifest.rfind("#", 0) == 0); // header comment only
    CHECK(manifest.find(".png") == std::string::npos);
    fs::remove_all(base);
}

TEST_CASE("synthesized pixels match the blend oracle through 8-bit quantization") {
    const fs::path dir = fs::temp_directory_path() / "rxs_cli_blendcheck";
    fs::remove_all(dir);
    REQUIRE(run_cli("synth --procedural --count 2 --seed 5 --set image_size=32 --out " +
                    dir.string()) == 0);
    // coefficients are recorded next to the triplets
    std::ifstream coeffs(dir / "coefficients.tsv");
    REQUIRE(coeffs.good());
    std::string line;
    std::getline(coeffs, line); // header
    REQUIRE(std::getline(coeffs, line));
    std::stringstream ss(line);
    int idx;
    double g1, g2;
    ss >> idx >> g1 >> g2;
    const Tensor i_img = load_png((dir / "I_00000.png").string());
    const Tensor t_img = load_png((dir / "T_00000.png").string());
    const Tensor r_img = load_png((dir / "R_00000.png").string());
    Rng rng(77);
    for (int k = 0; k < 5; ++k) {
        const int y = rng.uniform_int(0, 31), x = rng.uniform_int(0, 31);
        const int c = rng.uniform_int(0, 2);
        const double want =
            oracle::screen_blend_pixel(t_img.at(y, x, c), r_img.at(y, x, c), g1, g2);
        // both sides of the comparison passed through 8-bit quantization
        CHECK(std::abs(i_img.at(y, x, c) - want) < 0.02);
    }
    fs::remove_all(dir);
}

TEST_CASE("selfcheck passes on a fresh build and fault injection names the check") {
    std::string out;
    CHECK(run_cli("selfcheck", &out) == 0);
    CHECK(out.find("FAIL") == std::string::npos);
    CHECK(out.find("schedule") != std::string::npos);

    CHECK(run_cli("selfcheck --inject-fault schedule", &out) == 3);
    CHECK(out.find("FAIL  schedule") != std::string::npos);
    CHECK(out.find("PASS  blend") != std::string::npos);
}

TEST_CASE("schedule dump emits the expected csv values") {
    const fs::path csv = fs::temp_directory_path() / "rxs_sched.csv";
    const fs::path svg = fs::temp_directory_path() / "rxs_sched.svg";
    REQUIRE(run_cli("schedule-dump --epochs 2 --levels 1 --out " + csv.string() + " --svg " +
                    svg.string()) == 0);
    std::ifstream in(csv);
    std::string line;
    std::getline(in, line);
    CHECK(line == "epoch,level,value");
    std::getline(in, line);
    CHECK(line.rfind("0,0,0.02", 0) == 0);
    CHECK(slurp(svg).find("<svg") != std::string::npos);
    fs::remove(csv);
    fs::remove(svg);
}

TEST_CASE("ablation tables carry the canonical variant rows") {
    CHECK(ablation_variants("fusion") ==
          std::vector<std::string>{"(a) No Fusion (Direct Aggregation)",
                                   "(b) Simple Concatenation", "(c) Element-wise Addition",
                                   "(d) CrGF (Ours)"});
    CHECK(ablation_variants("lfsb") ==
          std::vector<std::string>{"(a) Baseline", "(b) + Early Fusion", "(c) + SA",
                                   "(d) + SA + CA", "(e) + Diff Sep", "(f) Full LFSB (Ours)"});
    CHECK(ablation_variants("schedule") ==
          std::vector<std::string>{"Fixed λ (=0.5)", "Warmup only", "Depth-init only",
                                   "Full strategy (Ours)"});
    CHECK_THROWS_AS(ablation_variants("nonsense"), ConfigError);

    std::string out;
    CHECK(run_cli("ablate --axis fusion --epochs 0", &out) == 0);
    CHECK(out.find("(d) CrGF (Ours)") != std::string::npos);
    CHECK(out.find("(a) No Fusion (Direct Aggregation)") != std::string::npos);
}

TEST_CASE("end-to-end: synth, train one epoch, evaluate the checkpoint") {
    const fs::path base = fs::temp_directory_path() / "rxs_cli_e2e";
    fs::remove_all(base);
    const std::string tiny =
        " --set image_size=32 --set base_width=4 --set window_size=4 --set heads.0=2 --set "
        "heads.1=2 --set heads.2=2 --set heads.3=2 --set heads.4=2 --set heads.5=2 --set "
        "depth.l0=1 --set depth.l1=1 --set depth.l2=1 --set depth.l3=1 --set depth.l4=1 --set "
        "opt.checkpoint_every=1";
    const std::string data = (base / "data").string();
    REQUIRE(run_cli("synth --procedural --count 3 --seed 2" + tiny + " --out " + data) == 0);

    std::string out;
    const std::string train_dir = (base / "run").string();
    REQUIRE(run_cli("train --procedural 2 --epochs 1 --pairs-per-epoch 2 --seed 2" + tiny +
                        " --out " + train_dir,
                    &out) == 0);
    CHECK(out.find("checkpoint:") != std::string::npos);

    const std::string csv = (base / "metrics.csv").string();
    REQUIRE(run_cli("eval --checkpoint " + train_dir + "/checkpoint_epoch1.bin --data " + data +
                        " --ncc --out " + csv,
                    &out) == 0);
    const std::string metrics = slurp(csv);
    CHECK(metrics.rfind("image_id,psnr_db,ssim,ncc_l0", 0) == 0);
    CHECK(metrics.find("item0") != std::string::npos);
    fs::remove_all(base);
}
