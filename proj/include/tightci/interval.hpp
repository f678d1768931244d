#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tightci/design.hpp"
#include "tightci/estimator.hpp"

namespace tightci {

enum class Method { HoeffMbcr, SubBernoulliBern, SubBernoulliMbcr, Studentized, NaiveHoeffding, CltBaseline };

std::string_view to_string(Method m);
Method parse_method(std::string_view tag);

/// Ordered record of named constants. Entries keep insertion order so that
/// serialized output is stable.
class Tuning {
  public:
    void set(std::string name, double value);
    double get(std::string_view name) const;
    std::optional<double> find(std::string_view name) const;
    const std::vector<std::pair<std::string, double>>& entries() const { return entries_; }

  private:
    std::vector<std::pair<std::string, double>> entries_;
};

struct Interval {
    double lower = 0.0;
    double upper = 0.0;
    double alpha = 0.0;
    Method method = Method::HoeffMbcr;
    Tuning tuning;

    double half_width() const { return 0.5 * (upper - lower); }
    /// The point estimate the interval was built around.
    double estimate() const { return tuning.get("estimate"); }
};

/// Recomputes [lower, upper] from a tuning record. Every builder below goes
/// through this function, so the result matches the original bit for bit.
std::pair<double, double> assemble(Method method, const Tuning& tuning);

/// Recomputes the endpoints of an interval from its own tuning record.
Interval reevaluate(const Interval& interval);

/// Clamps both endpoints to [-1, 1] and records the choice in the tuning.
Interval clip_to_unit(Interval interval);

/// log( b/(b-a) e^{lambda a} - a/(b-a) e^{lambda b} ) for a < 0 < b.
double gamma_B(double lambda, double a, double b);

/// c^{-2} (-log(1 - c lambda) - c lambda), defined for 0 <= lambda < 1/c.
double gamma_E(double lambda, double c);

/// log cosh(x), accurate for small and large |x|.
double log_cosh(double x);

/// sqrt((T G^2 + Gbar^2) / n).
double cn_mbcr(const MbcrLayout& layout);

struct CnBound {
    double value = 0.0;
    std::size_t nbar1 = 0;
    bool exact = false;  // true when the bound equals cn_mbcr
};

/// Closed-form value or upper bound on cn_mbcr depending on nbar1.
CnBound cn_mbcr_bounds(const MbcrLayout& layout);

Interval hoeff_mbcr_ci(double psi_hat, const MbcrLayout& layout, double alpha);

Interval naive_hoeffding_ci(double psi_hat, std::size_t n, double pi, double alpha);

Interval sub_bernoulli_bern_ci(double psi_hat, std::size_t n, double pi, double alpha);

enum class MbcrLambdaRule {
    Balanced,  // sqrt(2L / (4 T G^2 + 4 Gbar^2)); default
    FullGroupsOnly,  // sqrt(2L / (T G^2))
};

Interval sub_bernoulli_mbcr_ci(double psi_hat, const MbcrLayout& layout, double alpha,
                               MbcrLambdaRule rule = MbcrLambdaRule::Balanced);

/// Dispatches on the scheme: Bernoulli uses the Bernoulli range; Complete and
/// Mbcr use the batched form on compute_layout(n, n1).
Interval sub_bernoulli_ci(double psi_hat, const DesignParams& design, Scheme scheme, double alpha,
                          MbcrLambdaRule rule = MbcrLambdaRule::Balanced);

enum class ScaleConvention {
    Corrected,  // c = 1/(1 - 1/G) + 1
    Literal,    // c = 1/(1 - G) + 1, rejected when not positive
};

struct StudentizedOptions {
    ScaleConvention scale = ScaleConvention::Corrected;
    /// Required for Bernoulli data; ignored for MBCR data.
    std::optional<double> bernoulli_prop;
};

/// Scale constant of the sub-exponential bound for the given design.
double studentized_scale(const ObservedData& data, const StudentizedOptions& options);

/// Cross-fit interval [L, U]. Each side holds with probability 1 - alpha, so
/// the interval covers with probability at least 1 - 2 alpha.
Interval studentized_ci(const ObservedData& data, double alpha, const StudentizedOptions& options = {});

/// Normal-approximation interval around the Horvitz-Thompson estimate with a
/// common propensity. Asymptotic only.
Interval clt_ci(const ObservedData& data, double prop, double alpha);

}  // namespace tightci
