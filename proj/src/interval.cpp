#include "tightci/interval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <tuple>

#include <boost/math/distributions/normal.hpp>

#include "tightci/error.hpp"

namespace tightci {

namespace {

void check_alpha(double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0,1)");
}

void check_pi(double pi) {
    if (!(pi > 0.0 && pi <= 0.5)) throw ValidationError("propensity must lie in (0, 1/2]");
}

double log_term(double alpha) { return std::log(2.0 / alpha); }

double studentized_penalty(const Tuning& t, std::string_view side) {
    const std::string s(side);
    const double n = t.get("n");
    const double L = t.get("log_term");
    const double c = t.get("c");
    const double lam1 = t.get(s + "_lambda_1");
    const double lam2 = t.get(s + "_lambda_2");
    const double v1 = t.get(s + "_v_1");
    const double v2 = t.get(s + "_v_2");
    // Split 1's deviations are controlled with the lambda tuned on split 2 and vice versa.
    return (gamma_E(lam2, c) * v1 + L) / (n * lam2) + (gamma_E(lam1, c) * v2 + L) / (n * lam1);
}

Interval finish(Method method, double alpha, Tuning tuning) {
    Interval out;
    out.method = method;
    out.alpha = alpha;
    out.tuning = std::move(tuning);
    std::tie(out.lower, out.upper) = assemble(method, out.tuning);
    return out;
}

struct SplitStats {
    double v = 0.0;
    double lambda = 0.0;
};

// Running-mean variance of theta[begin, end), where the running mean starts
// from the sum of the other split.
SplitStats split_stats(const std::vector<double>& theta, std::size_t begin, std::size_t end, double seed_sum,
                       std::size_t seed_count, double L, double c) {
    double running = seed_sum;
    std::size_t count = seed_count;
    double v = 0.0;
    for (std::size_t t = begin; t < end; ++t) {
        const double mu = running / static_cast<double>(count);
        const double d = theta[t] - mu;
        v += d * d;
        running += theta[t];
        ++count;
    }
    const double m = static_cast<double>(end - begin);
    const double sigma2 = v / m;
    const double cap = 1.0 / (2.0 * c);
    const double lambda = sigma2 > 0.0 ? std::min(std::sqrt(2.0 * L / (m * sigma2)), cap) : cap;
    return {v, lambda};
}

void add_side(Tuning& t, std::string_view side, const std::vector<double>& theta, double L, double c) {
    const std::size_t total = theta.size();
    const std::size_t m1 = total / 2;
    double sum1 = 0.0;
    double sum2 = 0.0;
    for (std::size_t i = 0; i < m1; ++i) sum1 += theta[i];
    for (std::size_t i = m1; i < total; ++i) sum2 += theta[i];
    const auto s1 = split_stats(theta, 0, m1, sum2, total - m1, L, c);
    const auto s2 = split_stats(theta, m1, total, sum1, m1, L, c);
    const std::string s(side);
    t.set(s + "_lambda_1", s1.lambda);
    t.set(s + "_lambda_2", s2.lambda);
    t.set(s + "_v_1", s1.v);
    t.set(s + "_v_2", s2.v);
}

double sum_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
}

}  // namespace

std::string_view to_string(Method m) {
    switch (m) {
        case Method::HoeffMbcr: return "hoeff-mbcr";
        case Method::SubBernoulliBern: return "sb-bern";
        case Method::SubBernoulliMbcr: return "sb-mbcr";
        case Method::Studentized: return "studentized";
        case Method::NaiveHoeffding: return "naive-hoeffding";
        case Method::CltBaseline: return "clt";
    }
    return "?";
}

Method parse_method(std::string_view tag) {
    for (auto m : {Method::HoeffMbcr, Method::SubBernoulliBern, Method::SubBernoulliMbcr, Method::Studentized,
                   Method::NaiveHoeffding, Method::CltBaseline}) {
        if (tag == to_string(m)) return m;
    }
    throw ValidationError("unknown method '" + std::string(tag) +
                          "' (expected hoeff-mbcr, sb-bern, sb-mbcr, studentized, naive-hoeffding or clt)");
}

void Tuning::set(std::string name, double value) {
    for (auto& [k, v] : entries_) {
        if (k == name) {
            v = value;
            return;
        }
    }
    entries_.emplace_back(std::move(name), value);
}

std::optional<double> Tuning::find(std::string_view name) const {
    for (const auto& [k, v] : entries_)
        if (k == name) return v;
    return std::nullopt;
}

double Tuning::get(std::string_view name) const {
    if (auto v = find(name)) return *v;
    throw ValidationError("tuning record has no entry '" + std::string(name) + "'");
}

std::pair<double, double> assemble(Method method, const Tuning& t) {
    double lower = 0.0;
    double upper = 0.0;
    auto symmetric = [&](double half) {
        const double e = t.get("estimate");
        lower = e - half;
        upper = e + half;
    };
    switch (method) {
        case Method::HoeffMbcr:
            symmetric(t.get("c_n") * std::sqrt(2.0 * t.get("log_term") / t.get("n")));
            break;
        case Method::NaiveHoeffding:
            symmetric(t.get("range_sum") * std::sqrt(t.get("log_term") / (2.0 * t.get("n"))));
            break;
        case Method::SubBernoulliBern:
        case Method::SubBernoulliMbcr:
            symmetric((t.get("log_term") + t.get("kappa")) / (t.get("n") * t.get("lambda")));
            break;
        case Method::Studentized:
            lower = t.get("lower_center") - studentized_penalty(t, "lower");
            upper = t.get("upper_center") + studentized_penalty(t, "upper");
            break;
        case Method::CltBaseline:
            symmetric(t.get("z") * std::sqrt(t.get("variance") / t.get("n")));
            break;
    }
    if (t.find("clipped").value_or(0.0) != 0.0) {
        lower = std::clamp(lower, -1.0, 1.0);
        upper = std::clamp(upper, -1.0, 1.0);
    }
    return {lower, upper};
}

Interval reevaluate(const Interval& interval) {
    Interval out = interval;
    std::tie(out.lower, out.upper) = assemble(out.method, out.tuning);
    return out;
}

Interval clip_to_unit(Interval interval) {
    interval.tuning.set("clipped", 1.0);
    return reevaluate(interval);
}

double gamma_B(double lambda, double a, double b) {
    if (!(a < 0.0 && b > 0.0)) throw ValidationError("gamma_B needs a < 0 < b");
    const double d = b - a;
    const double wa = b / d;   // weight on e^{lambda a}
    const double wb = -a / d;  // weight on e^{lambda b}
    const double x = lambda * d;
    if (lambda >= 0.0) {
        if (x <= 1.0) return lambda * a + std::log1p(wb * std::expm1(x));
        return lambda * b + std::log(wb + wa * std::exp(-x));
    }
    if (-x <= 1.0) return lambda * b + std::log1p(wa * std::expm1(-x));
    return lambda * a + std::log(wa + wb * std::exp(x));
}

double gamma_E(double lambda, double c) {
    if (!(c > 0.0)) throw ValidationError("gamma_E needs c > 0");
    if (lambda < 0.0 || lambda * c >= 1.0)
        throw std::domain_error("gamma_E needs 0 <= lambda < 1/c");
    const double x = c * lambda;
    return (-std::log1p(-x) - x) / (c * c);
}

double log_cosh(double x) { return gamma_B(x, -1.0, 1.0); }

double cn_mbcr(const MbcrLayout& L) {
    const double G = static_cast<double>(L.G);
    const double Gbar = static_cast<double>(L.Gbar);
    return std::sqrt((static_cast<double>(L.T) * G * G + Gbar * Gbar) / static_cast<double>(L.n));
}

CnBound cn_mbcr_bounds(const MbcrLayout& L) {
    const double pi = L.pi();
    CnBound out;
    out.nbar1 = L.nbar1;
    switch (L.nbar1) {
        case 0:
            out.value = 1.0 / std::sqrt(pi);
            out.exact = true;
            break;
        case 1:
            out.value = (1.0 + pi) / std::sqrt(pi);
            break;
        default: {
            const double r = 1.0 / pi + 1.0;
            out.value = std::sqrt((1.0 + pi) * (1.0 + pi) / pi + 2.0 * r * r / static_cast<double>(L.n));
            break;
        }
    }
    return out;
}

Interval hoeff_mbcr_ci(double psi_hat, const MbcrLayout& layout, double alpha) {
    check_alpha(alpha);
    Tuning t;
    t.set("estimate", psi_hat);
    t.set("n", static_cast<double>(layout.n));
    t.set("log_term", log_term(alpha));
    t.set("c_n", cn_mbcr(layout));
    return finish(Method::HoeffMbcr, alpha, std::move(t));
}

Interval naive_hoeffding_ci(double psi_hat, std::size_t n, double pi, double alpha) {
    check_alpha(alpha);
    check_pi(pi);
    if (n < 1) throw ValidationError("n must be positive");
    Tuning t;
    t.set("estimate", psi_hat);
    t.set("n", static_cast<double>(n));
    t.set("log_term", log_term(alpha));
    t.set("range_sum", 1.0 / (1.0 - pi) + 1.0 / pi);
    return finish(Method::NaiveHoeffding, alpha, std::move(t));
}

Interval sub_bernoulli_bern_ci(double psi_hat, std::size_t n, double pi, double alpha) {
    check_alpha(alpha);
    check_pi(pi);
    if (n < 1) throw ValidationError("n must be positive");
    const double L = log_term(alpha);
    const double nd = static_cast<double>(n);
    const double lo = -1.0 / (1.0 - pi) - 1.0;
    const double hi = 1.0 / pi + 1.0;
    const double lambda = std::sqrt(2.0 * L / (nd * (1.0 / (1.0 - pi) + 1.0) * (1.0 / pi + 1.0)));
    Tuning t;
    t.set("estimate", psi_hat);
    t.set("n", nd);
    t.set("log_term", L);
    t.set("range_lower", lo);
    t.set("range_upper", hi);
    t.set("lambda", lambda);
    t.set("kappa", nd * gamma_B(lambda, lo, hi));
    return finish(Method::SubBernoulliBern, alpha, std::move(t));
}

Interval sub_bernoulli_mbcr_ci(double psi_hat, const MbcrLayout& layout, double alpha, MbcrLambdaRule rule) {
    check_alpha(alpha);
    const double L = log_term(alpha);
    const double G = static_cast<double>(layout.G);
    const double T = static_cast<double>(layout.T);
    const double Gbar = static_cast<double>(layout.Gbar);
    double lambda = 0.0;
    if (rule == MbcrLambdaRule::Balanced) {
        lambda = std::sqrt(2.0 * L / (4.0 * T * G * G + 4.0 * Gbar * Gbar));
    } else {
        if (layout.T == 0) throw ValidationError("full-group lambda needs at least one full group");
        lambda = std::sqrt(2.0 * L / (T * G * G));
    }
    const double full_term = T * log_cosh(2.0 * G * lambda);
    const double final_term = layout.Gbar > 0 ? log_cosh(2.0 * Gbar * lambda) : 0.0;
    Tuning t;
    t.set("estimate", psi_hat);
    t.set("n", static_cast<double>(layout.n));
    t.set("log_term", L);
    t.set("lambda", lambda);
    t.set("lambda_rule", rule == MbcrLambdaRule::Balanced ? 0.0 : 1.0);
    t.set("full_group_term", full_term);
    t.set("final_group_term", final_term);
    t.set("kappa", full_term + final_term);
    return finish(Method::SubBernoulliMbcr, alpha, std::move(t));
}

Interval sub_bernoulli_ci(double psi_hat, const DesignParams& design, Scheme scheme, double alpha,
                          MbcrLambdaRule rule) {
    if (scheme == Scheme::Bernoulli) return sub_bernoulli_bern_ci(psi_hat, design.n, design.pi, alpha);
    return sub_bernoulli_mbcr_ci(psi_hat, compute_layout(design.n, design.n1), alpha, rule);
}

double studentized_scale(const ObservedData& data, const StudentizedOptions& options) {
    const auto& a = data.assignment;
    // Group sizes entering the scale: G for full groups, Gtilde for the final one.
    std::vector<double> sizes;
    if (a.scheme == Scheme::Mbcr) {
        if (!a.mbcr) throw ValidationError("MBCR data needs the stored permutations (beta, eta)");
        const auto& L = a.mbcr->layout;
        sizes.push_back(static_cast<double>(L.G));
        if (L.nbar1 > 0) sizes.push_back(L.Gtilde());
    } else if (a.scheme == Scheme::Bernoulli) {
        if (!options.bernoulli_prop) throw ValidationError("Bernoulli data needs a propensity");
        sizes.push_back(1.0 / *options.bernoulli_prop);
    } else {
        throw ValidationError("studentized interval needs MBCR or Bernoulli data");
    }
    double c = -std::numeric_limits<double>::infinity();
    for (double g : sizes) {
        const double v = options.scale == ScaleConvention::Corrected ? 1.0 / (1.0 - 1.0 / g) + 1.0
                                                                     : 1.0 / (1.0 - g) + 1.0;
        c = std::max(c, v);
    }
    if (!(c > 0.0) || !std::isfinite(c))
        throw ValidationError("scale constant c = " + std::to_string(c) + " is not positive for this design");
    return c;
}

Interval studentized_ci(const ObservedData& data, double alpha, const StudentizedOptions& options) {
    check_alpha(alpha);
    const double prop = options.bernoulli_prop.value_or(0.0);
    const auto lower_theta = groupwise_sums(data, EstimateVariant::Standard, prop);
    if (lower_theta.size() < 4)
        throw ValidationError("insufficient groups for cross-fitting: need at least 4, have " +
                              std::to_string(lower_theta.size()));
    const auto upper_theta = groupwise_sums(data, EstimateVariant::Mirrored, prop);
    const double c = studentized_scale(data, options);
    const double L = log_term(alpha);
    const double n = static_cast<double>(data.size());

    Tuning t;
    const double lower_center = sum_of(lower_theta) / n;
    t.set("estimate", lower_center);
    t.set("lower_center", lower_center);
    t.set("upper_center", sum_of(upper_theta) / n);
    t.set("n", n);
    t.set("log_term", L);
    t.set("c", c);
    t.set("groups", static_cast<double>(lower_theta.size()));
    add_side(t, "lower", lower_theta, L, c);
    add_side(t, "upper", upper_theta, L, c);
    return finish(Method::Studentized, alpha, std::move(t));
}

Interval clt_ci(const ObservedData& data, double prop, double alpha) {
    check_alpha(alpha);
    const std::size_t n = data.size();
    const auto treated = data.assignment.treated();
    if (treated == 0 || treated == n) throw ValidationError("normal interval needs both arms to be nonempty");
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i)
        x[i] = pseudo_outcome(data.y[i], data.assignment.z[i] != 0, prop, EstimateVariant::Standard);
    const double nd = static_cast<double>(n);
    const double mean = sum_of(x) / nd;
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);

    const boost::math::normal_distribution<double> normal;
    Tuning t;
    t.set("estimate", mean);
    t.set("n", nd);
    t.set("z", boost::math::quantile(normal, 1.0 - alpha / 2.0));
    t.set("variance", ss / nd);
    return finish(Method::CltBaseline, alpha, std::move(t));
}

}  // namespace tightci
