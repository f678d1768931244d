#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tightci/design.hpp"

namespace tightci {

enum class Provenance { Fixed, Sampled };

/// Potential outcomes (y_i(0), y_i(1)) in [0,1]^2 for every unit.
class PotentialTable {
  public:
    PotentialTable() = default;
    /// Throws ValidationError on length mismatch or values outside [0,1].
    PotentialTable(std::vector<double> y0, std::vector<double> y1, Provenance provenance = Provenance::Fixed);

    std::size_t size() const { return y0_.size(); }
    std::span<const double> y0() const { return y0_; }
    std::span<const double> y1() const { return y1_; }
    Provenance provenance() const { return provenance_; }

    /// Finite-population effect: mean of y1 - y0.
    double ate() const;

  private:
    std::vector<double> y0_;
    std::vector<double> y1_;
    Provenance provenance_ = Provenance::Fixed;
};

/// Reads a CSV with header `y0,y1`, one row per unit.
PotentialTable load_table_csv(const std::filesystem::path& path);

struct ObservedData {
    std::vector<double> y;
    Assignment assignment;

    std::size_t size() const { return y.size(); }
};

/// Reveals Y_i = Z_i y_i(1) + (1 - Z_i) y_i(0).
ObservedData observe(const PotentialTable& table, Assignment assignment);

/// Checks outcomes in [0,1], matching lengths, binary z, and for MBCR data
/// that z agrees with the stored permutations.
void validate(const ObservedData& data);

enum class EstimateVariant { Standard, Mirrored };

/// Standard: y (z/p - (1-z)/(1-p)), range [-1/(1-p), 1/p].
/// Mirrored: (y-1)(z/p - (1-z)/(1-p)), range [-1/p, 1/(1-p)].
double pseudo_outcome(double y, bool z, double prop, EstimateVariant variant);

/// Horvitz-Thompson estimate (1/n) sum of standard pseudo-outcomes with a
/// common propensity.
double ht_standard(const ObservedData& data, double prop);

/// Horvitz-Thompson estimate under mini-batch complete randomization: slot i
/// contributes the outcome of unit eta^{-1}(i), weighted by the allocation
/// a[beta(i)] and its group's propensity (1/G, or nbar1/Gbar in the final group).
double ht_mbcr(const ObservedData& data);

/// Per-group sums of pseudo-outcomes. MBCR data yields T + 1{Gbar > 0} sums in
/// slot order; Bernoulli data yields n singleton "groups" in unit order using
/// the supplied propensity.
std::vector<double> groupwise_sums(const ObservedData& data, EstimateVariant variant, double bernoulli_prop = 0.0);

/// Exact E[psi_hat' | eta] by enumerating every within-group permutation.
/// Throws BudgetExceeded when the beta space exceeds the budget.
double conditional_mean_given_eta(const PotentialTable& table, const MbcrLayout& layout,
                                  const std::vector<std::size_t>& eta,
                                  std::uint64_t budget = kDefaultEnumerationBudget);

}  // namespace tightci
