#include <gtest/gtest.h>

#include <cmath>
#include <stdexcept>

#include "tightci/error.hpp"
#include "tightci/interval.hpp"
#include "tightci/rng.hpp"

using namespace tightci;

namespace {

// Reference values below were evaluated at 40 significant digits.
constexpr double kLogCoshOne = 0.4337808304830272;
constexpr double kGammaEHalf = 0.1931471805599453;
constexpr double kHoeffHalfWidth = 0.2716203031481239;   // n=1000, pi=0.1, alpha=0.05
constexpr double kSbBernLambda = 0.01782421209248663;    // same cell
constexpr double kSbBernKappa = 3.886521956554853;
constexpr double kSbBernHalfWidth = 0.4250062427085917;
constexpr double kNaiveHalfWidth = 0.4771882314963751;
constexpr double kCnBoundNineFour = 2.653613888015110;
constexpr double kZ975 = 1.959963984540054;

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

ObservedData bernoulli_data(std::vector<double> y, std::vector<std::uint8_t> z) {
    ObservedData d;
    d.y = std::move(y);
    d.assignment.z = std::move(z);
    d.assignment.scheme = Scheme::Bernoulli;
    return d;
}

ObservedData random_mbcr(std::size_t n, std::size_t n1, double lo, double hi, std::uint64_t seed) {
    RngStream rng(seed);
    std::vector<double> y0(n), y1(n);
    for (std::size_t i = 0; i < n; ++i) {
        y0[i] = rng.uniform(lo, hi);
        y1[i] = rng.uniform(lo, hi);
    }
    return observe(PotentialTable(y0, y1), draw_mbcr(compute_layout(n, n1), rng));
}

}  // namespace

TEST(GammaB, ZeroAtOrigin) {
    EXPECT_EQ(gamma_B(0.0, -1.0, 2.0), 0.0);
    EXPECT_EQ(gamma_B(0.0, -3.0, 0.5), 0.0);
}

TEST(GammaB, SymmetricRangeIsLogCosh) {
    EXPECT_NEAR(gamma_B(1.0, -1.0, 1.0), kLogCoshOne, 1e-15);
    for (double x : {1e-8, 1e-3, 0.5, 3.0, 40.0, 800.0}) {
        EXPECT_NEAR(gamma_B(x, -2.0, 2.0), log_cosh(2.0 * x), 1e-12 * std::max(1.0, log_cosh(2.0 * x)));
        EXPECT_NEAR(log_cosh(x), log_cosh(-x), 1e-15 * std::max(1.0, log_cosh(x)));
    }
    EXPECT_NEAR(log_cosh(800.0), 800.0 - std::log(2.0), 1e-12);
}

TEST(GammaB, SmallLambdaMatchesQuadratic) {
    EXPECT_NEAR(gamma_B(0.1, -1.0, 2.0) / (0.5 * 0.01), 2.0, 0.05 * 2.0);
    for (auto [a, b] : {std::pair{-1.0, 2.0}, {-2.111111111111111, 11.0}, {-0.5, 0.5}}) {
        const double limit = -a * b;
        const double scale = b - a;
        for (double lambda : {1e-3 / scale, 1e-5 / scale, -1e-4 / scale}) {
            const double ratio = gamma_B(lambda, a, b) / (0.5 * lambda * lambda);
            EXPECT_NEAR(ratio / limit, 1.0, 0.01);
        }
    }
}

TEST(GammaB, ConvexAndFiniteForLargeArguments) {
    const double a = -1.5, b = 9.0;
    for (double lambda = -5.0; lambda <= 5.0; lambda += 0.01) {
        const double h = 1e-3;
        const double second = gamma_B(lambda + h, a, b) - 2 * gamma_B(lambda, a, b) + gamma_B(lambda - h, a, b);
        ASSERT_GE(second, -1e-12) << lambda;
    }
    EXPECT_TRUE(std::isfinite(gamma_B(1e4, a, b)));
    EXPECT_TRUE(std::isfinite(gamma_B(-1e4, a, b)));
    EXPECT_THROW(gamma_B(0.1, 1.0, 2.0), ValidationError);
}

TEST(GammaE, WorkedValuesAndDomain) {
    EXPECT_EQ(gamma_E(0.0, 3.0), 0.0);
    EXPECT_NEAR(gamma_E(0.5, 1.0), kGammaEHalf, 1e-15);
    EXPECT_NEAR(gamma_E(1e-4, 2.0) / (0.5 * 1e-8), 1.0, 1e-3);
    EXPECT_THROW(gamma_E(0.5, 2.0), std::domain_error);
    EXPECT_THROW(gamma_E(-0.1, 2.0), std::domain_error);
    double prev = 0.0;
    for (double l = 0.01; l < 0.49; l += 0.01) {
        const double g = gamma_E(l, 2.0);
        ASSERT_GT(g, prev);
        prev = g;
    }
}

TEST(HoeffMbcr, ClosedFormHalfWidth) {
    const auto ci = hoeff_mbcr_ci(0.3, compute_layout(1000, 100), 0.05);
    EXPECT_LT(rel(ci.half_width(), kHoeffHalfWidth), 1e-12);
    EXPECT_DOUBLE_EQ(ci.estimate(), 0.3);
    EXPECT_EQ(ci.method, Method::HoeffMbcr);
    EXPECT_THROW(hoeff_mbcr_ci(0.0, compute_layout(1000, 100), 1.5), ValidationError);
    EXPECT_THROW(hoeff_mbcr_ci(0.0, compute_layout(1000, 100), 0.0), ValidationError);
}

TEST(HoeffMbcr, ScaleConstant) {
    EXPECT_NEAR(cn_mbcr(compute_layout(9, 4)), std::sqrt(3.0), 1e-15);
    EXPECT_NEAR(cn_mbcr(compute_layout(10, 5)), std::sqrt(2.0), 1e-15);
    EXPECT_NEAR(cn_mbcr(compute_layout(1000, 100)), 1.0 / std::sqrt(0.1), 1e-14);
}

TEST(HoeffMbcr, WidthTimesRootEffectiveSizeIsConstant) {
    const double target = std::sqrt(2.0 * std::log(40.0));
    for (std::size_t K = 2; K <= 400; ++K) {
        const std::size_t n = 1000 * K;
        const auto ci = hoeff_mbcr_ci(0.0, compute_layout(n, 1000), 0.05);
        EXPECT_NEAR(ci.half_width() * std::sqrt(1000.0), target, 1e-10);
    }
}

TEST(CnBounds, ExactAndUpperBounds) {
    const auto exact = cn_mbcr_bounds(compute_layout(1000, 100));
    EXPECT_TRUE(exact.exact);
    EXPECT_NEAR(exact.value, 3.1622776601683795, 1e-14);

    const auto nine_four = cn_mbcr_bounds(compute_layout(9, 4));
    EXPECT_EQ(nine_four.nbar1, 2u);
    EXPECT_NEAR(nine_four.value, kCnBoundNineFour, 1e-14);
    EXPECT_GE(nine_four.value, std::sqrt(3.0));
}

TEST(CnBounds, DominateExactConstantOnSweep) {
    std::size_t checked[3] = {0, 0, 0};
    for (std::size_t n = 2; n <= 2000; ++n) {
        for (std::size_t n1 = 1; 2 * n1 <= n; ++n1) {
            const auto L = try_compute_layout(n, n1);
            if (!L) continue;
            const auto b = cn_mbcr_bounds(*L);
            ASSERT_GE(b.value, cn_mbcr(*L) * (1 - 1e-14)) << "n=" << n << " n1=" << n1;
            ++checked[L->nbar1];
        }
    }
    for (auto c : checked) EXPECT_GT(c, 0u);
}

TEST(SubBernoulli, BernoulliClosedForm) {
    const auto ci = sub_bernoulli_bern_ci(0.0, 1000, 0.1, 0.05);
    EXPECT_LT(rel(ci.tuning.get("lambda"), kSbBernLambda), 1e-12);
    EXPECT_LT(rel(ci.tuning.get("kappa"), kSbBernKappa), 1e-10);
    EXPECT_LT(rel(ci.half_width(), kSbBernHalfWidth), 1e-10);
}

TEST(SubBernoulli, AsymptoticConstants) {
    const double n = 1e7, pi = 1e-3;
    const auto bern = sub_bernoulli_bern_ci(0.0, 10'000'000, pi, 0.05);
    EXPECT_NEAR(bern.half_width() * std::sqrt(n * pi) / std::sqrt(4 * std::log(40.0)), 1.0, 0.05);
    const auto mbcr = sub_bernoulli_mbcr_ci(0.0, compute_layout(10'000'000, 10'000), 0.05);
    EXPECT_NEAR(mbcr.half_width() * std::sqrt(n * pi) / std::sqrt(8 * std::log(40.0)), 1.0, 0.05);
}

TEST(SubBernoulli, FinalGroupTermIsIncludedAndLabelled) {
    const auto L = compute_layout(103, 10);
    ASSERT_GT(L.nbar1, 0u);
    const auto ci = sub_bernoulli_mbcr_ci(0.0, L, 0.05);
    EXPECT_GT(ci.tuning.get("final_group_term"), 0.0);
    EXPECT_DOUBLE_EQ(ci.tuning.get("kappa"), ci.tuning.get("full_group_term") + ci.tuning.get("final_group_term"));
    EXPECT_EQ(sub_bernoulli_mbcr_ci(0.0, compute_layout(100, 10), 0.05).tuning.get("final_group_term"), 0.0);
}

TEST(SubBernoulli, LambdaRulesBothGiveValidRecords) {
    const auto L = compute_layout(1000, 100);
    const auto a = sub_bernoulli_mbcr_ci(0.0, L, 0.05, MbcrLambdaRule::Balanced);
    const auto b = sub_bernoulli_mbcr_ci(0.0, L, 0.05, MbcrLambdaRule::FullGroupsOnly);
    EXPECT_NEAR(b.tuning.get("lambda"), 2 * a.tuning.get("lambda"), 1e-15);
    EXPECT_LT(a.half_width(), b.half_width());
    EXPECT_EQ(b.tuning.get("lambda_rule"), 1.0);
}

TEST(SubBernoulli, DispatchesOnScheme) {
    const auto bern = sub_bernoulli_ci(0.0, DesignParams::bernoulli(1000, 0.1), Scheme::Bernoulli, 0.05);
    EXPECT_EQ(bern.method, Method::SubBernoulliBern);
    const auto batched = sub_bernoulli_ci(0.0, DesignParams::complete(1000, 100), Scheme::Mbcr, 0.05);
    EXPECT_EQ(batched.method, Method::SubBernoulliMbcr);
}

TEST(NaiveHoeffding, ClosedForm) {
    EXPECT_LT(rel(naive_hoeffding_ci(0.0, 1000, 0.1, 0.05).half_width(), kNaiveHalfWidth), 1e-12);
    const double half = naive_hoeffding_ci(0.0, 500, 0.5, 0.1).half_width();
    EXPECT_NEAR(half, 4.0 * std::sqrt(std::log(20.0) / 1000.0), 1e-15);
}

TEST(NaiveHoeffding, RatioToBatchedHoeffding) {
    const double pi = 0.01;
    const auto hoeff = hoeff_mbcr_ci(0.0, compute_layout(100000, 1000), 0.05);
    const auto naive = naive_hoeffding_ci(0.0, 100000, pi, 0.05);
    const double ratio = hoeff.half_width() / naive.half_width();
    const double closed = 2.0 / (std::sqrt(pi) * (1.0 / (1.0 - pi) + 1.0 / pi));
    EXPECT_NEAR(ratio, closed, 1e-12);
    EXPECT_NEAR(ratio, 0.198, 0.001);
    EXPECT_NEAR(ratio / (2.0 * std::sqrt(pi)), 1.0, 0.1);
}

TEST(NaiveHoeffding, NeverNarrowerThanBatchedHoeffding) {
    for (std::size_t K = 4; K <= 2000; ++K) {
        for (std::size_t n1 : {1u, 7u, 100u}) {
            const std::size_t n = K * n1;
            const double pi = 1.0 / static_cast<double>(K);
            EXPECT_LE(hoeff_mbcr_ci(0, compute_layout(n, n1), 0.05).half_width(),
                      naive_hoeffding_ci(0, n, pi, 0.05).half_width());
        }
    }
}

TEST(Widths, DecreaseInAlphaAndN) {
    const double alphas[] = {0.01, 0.05, 0.1, 0.2};
    for (std::size_t i = 1; i < 4; ++i) {
        const auto L = compute_layout(1000, 100);
        EXPECT_LT(hoeff_mbcr_ci(0, L, alphas[i]).half_width(), hoeff_mbcr_ci(0, L, alphas[i - 1]).half_width());
        EXPECT_LT(sub_bernoulli_mbcr_ci(0, L, alphas[i]).half_width(),
                  sub_bernoulli_mbcr_ci(0, L, alphas[i - 1]).half_width());
        EXPECT_LT(sub_bernoulli_bern_ci(0, 1000, 0.1, alphas[i]).half_width(),
                  sub_bernoulli_bern_ci(0, 1000, 0.1, alphas[i - 1]).half_width());
        EXPECT_LT(naive_hoeffding_ci(0, 1000, 0.1, alphas[i]).half_width(),
                  naive_hoeffding_ci(0, 1000, 0.1, alphas[i - 1]).half_width());
    }
    for (std::size_t n1 = 1; n1 < 300; ++n1) {
        const auto a = compute_layout(10 * n1, n1), b = compute_layout(10 * (n1 + 1), n1 + 1);
        EXPECT_LT(hoeff_mbcr_ci(0, b, 0.05).half_width(), hoeff_mbcr_ci(0, a, 0.05).half_width());
        EXPECT_LT(sub_bernoulli_mbcr_ci(0, b, 0.05).half_width(), sub_bernoulli_mbcr_ci(0, a, 0.05).half_width());
        EXPECT_LT(sub_bernoulli_bern_ci(0, 10 * (n1 + 1), 0.1, 0.05).half_width(),
                  sub_bernoulli_bern_ci(0, 10 * n1, 0.1, 0.05).half_width());
    }
}

TEST(Studentized, ZeroVarianceUsesCappedLambda) {
    // All outcomes zero: every standard group sum is zero.
    std::vector<double> y(40, 0.0);
    std::vector<std::uint8_t> z(40, 0);
    for (std::size_t i = 0; i < 40; i += 2) z[i] = 1;
    StudentizedOptions opts;
    opts.bernoulli_prop = 0.5;
    const double alpha = 0.05;
    const auto ci = studentized_ci(bernoulli_data(y, z), alpha, opts);
    const double c = ci.tuning.get("c");
    EXPECT_DOUBLE_EQ(c, 3.0);  // 1/(1 - 1/2) + 1
    EXPECT_EQ(ci.tuning.get("lower_v_1"), 0.0);
    EXPECT_EQ(ci.tuning.get("lower_lambda_1"), 1.0 / (2.0 * c));
    const double per_split = std::log(2.0 / alpha) * 2.0 * c / 40.0;
    EXPECT_NEAR(ci.lower, -2.0 * per_split, 1e-14);
}

TEST(Studentized, NeedsFourGroups) {
    auto data = random_mbcr(9, 3, 0.0, 1.0, 1);  // three groups
    try {
        studentized_ci(data, 0.05);
        FAIL() << "expected a validation error";
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("insufficient groups for cross-fitting"), std::string::npos);
    }
    EXPECT_NO_THROW(studentized_ci(random_mbcr(12, 4, 0.0, 1.0, 1), 0.05));
    EXPECT_THROW(studentized_ci(bernoulli_data({0.1, 0.2, 0.3, 0.4}, {1, 0, 0, 1}), 0.05), ValidationError);
}

TEST(Studentized, LambdaNeverExceedsCap) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto ci = studentized_ci(random_mbcr(200, 20, 0.0, seed % 2 ? 1.0 : 0.05, seed), 0.05);
        const double cap = 1.0 / (2.0 * ci.tuning.get("c"));
        for (const char* key : {"lower_lambda_1", "lower_lambda_2", "upper_lambda_1", "upper_lambda_2"}) {
            ASSERT_LE(ci.tuning.get(key), cap);
            ASSERT_GT(ci.tuning.get(key), 0.0);
        }
        ASSERT_TRUE(std::isfinite(ci.lower));
        ASSERT_TRUE(std::isfinite(ci.upper));
        ASSERT_LE(ci.lower, ci.upper);
    }
}

TEST(Studentized, CentersAgreeUnderBatchedDesign) {
    const auto data = random_mbcr(103, 10, 0.0, 1.0, 3);
    const auto ci = studentized_ci(data, 0.05);
    EXPECT_NEAR(ci.tuning.get("lower_center"), ci.tuning.get("upper_center"), 1e-12);
    EXPECT_NEAR(ci.estimate(), ht_mbcr(data), 1e-12);
}

TEST(Studentized, ScaleConventions) {
    const auto data = random_mbcr(100, 10, 0.0, 1.0, 9);
    StudentizedOptions literal;
    literal.scale = ScaleConvention::Literal;
    EXPECT_NEAR(studentized_scale(data, {}), 1.0 / (1.0 - 0.1) + 1.0, 1e-15);
    EXPECT_NEAR(studentized_scale(data, literal), 1.0 / (1.0 - 10.0) + 1.0, 1e-15);
    // G = 2 makes the literal constant zero.
    EXPECT_THROW(studentized_scale(random_mbcr(20, 10, 0.0, 1.0, 9), literal), ValidationError);
}

TEST(Studentized, PenaltyMatchesStationaryApproximation) {
    RngStream rng(77);
    const std::size_t n = 200000;
    std::vector<double> y(n);
    std::vector<std::uint8_t> z(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = rng.uniform(0.3, 0.7);
        z[i] = rng.bernoulli(0.5);
    }
    StudentizedOptions opts;
    opts.bernoulli_prop = 0.5;
    const auto ci = studentized_ci(bernoulli_data(y, z), 0.05, opts);
    const double penalty = ci.estimate() - ci.lower;
    const double sigma = std::sqrt((ci.tuning.get("lower_v_1") + ci.tuning.get("lower_v_2")) / n);
    const double approx = 2.0 * sigma * std::sqrt(std::log(40.0) / n);
    EXPECT_NEAR(penalty / approx, 1.0, 0.15);
}

TEST(Clt, QuantileAndDegenerateCases) {
    const auto data = bernoulli_data({0.2, 0.4, 0.9, 0.1, 0.5, 0.3}, {1, 0, 1, 0, 0, 0});
    const auto ci = clt_ci(data, 1.0 / 3.0, 0.05);
    EXPECT_NEAR(ci.tuning.get("z"), kZ975, 1e-14);
    const auto flat = clt_ci(bernoulli_data({0, 0, 0, 0}, {1, 0, 1, 0}), 0.5, 0.05);
    EXPECT_EQ(flat.half_width(), 0.0);
    EXPECT_THROW(clt_ci(bernoulli_data({0.1, 0.2}, {0, 0}), 0.5, 0.05), ValidationError);
}

TEST(Tuning, ReevaluationReproducesEndpointsExactly) {
    const auto L = compute_layout(103, 10);
    const auto data = random_mbcr(103, 10, 0.0, 1.0, 12);
    std::vector<Interval> all = {
        hoeff_mbcr_ci(0.12, L, 0.05),
        sub_bernoulli_mbcr_ci(0.12, L, 0.05),
        sub_bernoulli_bern_ci(0.12, 103, 0.1, 0.05),
        naive_hoeffding_ci(0.12, 103, 0.1, 0.05),
        studentized_ci(data, 0.025),
        clt_ci(data, 10.0 / 103.0, 0.05),
    };
    for (const auto& ci : all) {
        const auto again = reevaluate(ci);
        EXPECT_EQ(again.lower, ci.lower) << to_string(ci.method);
        EXPECT_EQ(again.upper, ci.upper) << to_string(ci.method);
        EXPECT_EQ(parse_method(to_string(ci.method)), ci.method);
        const auto clipped = clip_to_unit(ci);
        EXPECT_GE(clipped.lower, -1.0);
        EXPECT_LE(clipped.upper, 1.0);
        EXPECT_EQ(reevaluate(clipped).lower, clipped.lower);
    }
    EXPECT_THROW(parse_method("bootstrap"), ValidationError);
}

TEST(Tuning, KeepsInsertionOrder) {
    Tuning t;
    t.set("b", 1);
    t.set("a", 2);
    t.set("b", 3);
    ASSERT_EQ(t.entries().size(), 2u);
    EXPECT_EQ(t.entries()[0].first, "b");
    EXPECT_EQ(t.entries()[0].second, 3.0);
    EXPECT_THROW(t.get("c"), ValidationError);
}
