#include "reflexsplit/selfcheck.hpp"

#include <cmath>
#include <sstream>

#include "reflexsplit/curriculum.hpp"
#include "reflexsplit/gradcheck.hpp"
#include "reflexsplit/losses.hpp"
#include "reflexsplit/oracle_bridge.hpp"
#include "reflexsplit/synth.hpp"

namespace reflexsplit {

namespace {

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

CheckResult check_blend(bool fault) {
    CheckResult res{"blend", true, ""};
    Rng rng(11);
    const Tensor white = Tensor::full({4, 4, 3}, 1.0);
    const Tensor wb = screen_blend(white, white, {1.0, 1.0});
    if (max_abs_diff(wb, white) != 0.0) {
        res.pass = false;
        res.detail = "white/white did not stay white";
        return res;
    }
    const Tensor t = Tensor::uniform({5, 6, 3}, 0.0, 1.0, rng);
    const Tensor zero({5, 6, 3});
    const BlendCoefficients c{0.93, 0.61};
    const Tensor zr = screen_blend(t, zero, c);
    for (std::int64_t i = 0; i < t.size(); ++i) {
        if (std::abs(zr[i] - c.gamma1 * t[i]) > 1e-15) {
            res.pass = false;
            res.detail = "zero reflection did not reduce to gamma1*T";
            return res;
        }
    }
    const Tensor r = Tensor::uniform({5, 6, 3}, 0.0, 1.0, rng);
    const Tensor ab = screen_blend(t, r, c);
    const Tensor ba = screen_blend(r, t, {c.gamma2, c.gamma1});
    if (max_abs_diff(ab, ba) != 0.0) {
        res.pass = false;
        res.detail = "blend is not symmetric under (t,g1)<->(r,g2)";
        return res;
    }
    double worst = 0.0;
    for (int k = 0; k < 64; ++k) {
        const double tv = rng.uniform(), rv = rng.uniform();
        const BlendCoefficients cc = sample_coefficients(rng);
        const Tensor one_t = Tensor::full({1, 1, 3}, tv);
        const Tensor one_r = Tensor::full({1, 1, 3}, rv);
        double got = screen_blend(one_t, one_r, cc)[0];
        if (fault && k == 13) got += 1e-3;
        worst = std::max(worst,
                         std::abs(got - oracle::screen_blend_pixel(tv, rv, cc.gamma1, cc.gamma2)));
    }
    if (worst > 1e-12) {
        res.pass = false;
        std::ostringstream os;
        os << "pixel blend deviates from the scalar oracle by " << worst;
        res.detail = os.str();
    }
    return res;
}

CheckResult check_schedule(bool fault) {
    CheckResult res{"schedule", true, ""};
    struct Expect {
        double got, want;
        const char* what;
    };
    const double fudge = fault ? 1e-3 : 0.0;
    const Expect cases[] = {
        {lambda_init(0) + fudge, 0.2, "lambda_init(0)"},
        {lambda_warmup(0, 30), 0.1, "lambda_warmup(0,30)"},
        {lambda_warmup(30, 30), 1.0, "lambda_warmup(30,30)"},
        {lambda_warmup(15, 30), 0.55, "lambda_warmup(15,30)"},
        {lambda_effective(0, 0, 30), 0.02, "lambda_effective(0,0,30)"},
    };
    for (const auto& c : cases) {
        if (std::abs(c.got - c.want) > 1e-12) {
            res.pass = false;
            std::ostringstream os;
            os << c.what << " = " << c.got << ", expected " << c.want;
            res.detail = os.str();
            return res;
        }
    }
    if (!(lambda_init(50) > 0.799)) {
        res.pass = false;
        res.detail = "lambda_init(50) did not approach 0.8";
    }
    return res;
}

CheckResult check_crgf(bool fault) {
    CheckResult res{"crgf", true, ""};
    ParamRegistry reg;
    Rng rng(21);
    CrossScaleGatedFusion fusion(reg, "chk", 8, rng);
    const Var ctx = ad::constant(Tensor::uniform({4, 4, 8}, -1.0, 1.0, rng));
    const Var sem = ad::constant(Tensor::uniform({4, 4, 8}, -1.0, 1.0, rng));
    const Var tex = ad::constant(Tensor::uniform({4, 4, 8}, -1.0, 1.0, rng));
    Tensor got = fusion.forward(ctx, sem, tex)->value;
    if (fault) got[0] += 1e-3;
    const Tensor want =
        oracle::crgf(ctx->value, sem->value, tex->value, oracle::extract_crgf(fusion));
    const double diff = max_abs_diff(got, want);
    if (diff > 1e-10) {
        res.pass = false;
        std::ostringstream os;
        os << "deviates from straight-line oracle by " << diff;
        res.detail = os.str();
    }
    return res;
}

CheckResult check_lfsb(bool fault) {
    CheckResult res{"lfsb", true, ""};
    ParamRegistry reg;
    Rng rng(22);
    LayerFusionSeparationBlock block(reg, "chk", 8, 2, 2, 4, rng);
    CurriculumState cur;
    cur.epoch = 10;
    cur.warmup_epochs = 30;
    cur.lambda_diff = lambda_warmup(10, 30);
    cur.mode = LambdaMode::kLearnable;
    const Var t = ad::constant(Tensor::uniform({6, 6, 8}, -1.0, 1.0, rng));
    const Var r = ad::constant(Tensor::uniform({6, 6, 8}, -1.0, 1.0, rng));
    const DualStream out = block.forward({t, r}, cur);
    const auto want = oracle::lfsb(t->value, r->value, oracle::extract_lfsb(block, 4, cur));
    double diff = std::max(max_abs_diff(out.t->value, want.first),
                           max_abs_diff(out.r->value, want.second));
    if (fault) diff += 1e-3;
    if (diff > 1e-9) {
        res.pass = false;
        std::ostringstream os;
        os << "deviates from straight-line oracle by " << diff;
        res.detail = os.str();
    }
    return res;
}

CheckResult check_loss_gradients(bool fault) {
    CheckResult res{"loss-gradients", true, ""};
    Rng rng(23);
    const Var pt = ad::param(Tensor::uniform({8, 8, 3}, 0.05, 0.95, rng));
    const Var pr = ad::param(Tensor::uniform({8, 8, 3}, 0.05, 0.95, rng));
    const Var rr = ad::param(Tensor::uniform({8, 8, 3}, -0.3, 0.3, rng));
    const Var gt = ad::constant(Tensor::uniform({8, 8, 3}, 0.0, 1.0, rng));
    const Var gr = ad::constant(Tensor::uniform({8, 8, 3}, 0.0, 1.0, rng));
    const Var in = ad::constant(Tensor::uniform({8, 8, 3}, 0.0, 1.0, rng));
    StubPerceptualExtractor stub(99);

    struct Item {
        const char* what;
        std::function<Var()> rebuild;
        std::vector<Var> leaves;
    };
    const std::vector<Item> items = {
        {"charbonnier", [&] { return charbonnier(pt, gt, 1e-6); }, {pt}},
        {"l1", [&] { return reflection_l1(pr, gr); }, {pr}},
        {"perceptual", [&] { return perceptual(pt, gt, stub); }, {pt}},
        {"exclusion", [&] { return exclusion(pt, pr); }, {pt, pr}},
        {"recons", [&] { return reconstruction_consistency(pt, pr, rr, in); }, {pt, pr, rr}},
        {"color", [&] { return color_consistency(pr, gr); }, {pr}},
    };
    const double tol = fault ? 1e-12 : 1e-3;
    for (const auto& item : items) {
        for (const auto& leaf : item.leaves) ad::clear_grad(leaf);
        const GradCheckResult g = finite_diff_check(item.rebuild, item.leaves, 1e-6, 48);
        if (!g.ok(tol)) {
            res.pass = false;
            std::ostringstream os;
            os << item.what << " gradient max rel err " << g.max_rel_err;
            res.detail = os.str();
            return res;
        }
    }
    return res;
}

} // namespace

std::vector<CheckResult> run_selfcheck(const std::string& inject_fault) {
    std::vector<CheckResult> results;
    results.push_back(check_blend(inject_fault == "blend"));
    results.push_back(check_schedule(inject_fault == "schedule"));
    results.push_back(check_crgf(inject_fault == "crgf"));
    results.push_back(check_lfsb(inject_fault == "lfsb"));
    results.push_back(check_loss_gradients(inject_fault == "loss-gradients"));
    return results;
}

} // namespace reflexsplit
