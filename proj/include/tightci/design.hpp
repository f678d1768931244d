#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tightci/rng.hpp"

namespace tightci {

enum class Scheme { Bernoulli, Complete, Mbcr };

std::string_view to_string(Scheme s);
Scheme parse_scheme(std::string_view s);

struct DesignParams {
    std::size_t n = 0;
    std::size_t n1 = 0;  // 0 for Bernoulli designs
    double pi = 0.0;

    /// Complete/MBCR designs: pi = n1 / n exactly. Rejects n1 < 1 and n1 > n/2.
    static DesignParams complete(std::size_t n, std::size_t n1);
    /// Bernoulli designs: pi in (0, 1/2].
    static DesignParams bernoulli(std::size_t n, double pi);
};

/// Batching arithmetic for mini-batch complete randomization.
///
/// Units are laid out in "slots" 0..n-1. Slots [tG, (t+1)G) form full group t
/// (t < T) with one treated slot each; slots [TG, n) form the final group of
/// size Gbar with nbar1 treated slots.
struct MbcrLayout {
    std::size_t n = 0;
    std::size_t n1 = 0;
    std::size_t G = 0;
    std::size_t T = 0;
    std::size_t Gbar = 0;
    std::size_t nbar1 = 0;

    double pi() const { return static_cast<double>(n1) / static_cast<double>(n); }
    /// Gbar / nbar1; only meaningful when nbar1 > 0.
    double Gtilde() const { return static_cast<double>(Gbar) / static_cast<double>(nbar1); }
    /// T + 1{Gbar > 0}.
    std::size_t total_groups() const { return T + (Gbar > 0 ? 1 : 0); }

    std::size_t group_begin(std::size_t t) const { return t * G; }
    std::size_t group_size(std::size_t t) const { return t < T ? G : Gbar; }
    std::size_t group_of_slot(std::size_t slot) const { return slot < T * G ? slot / G : T; }

    /// Entry a_slot of the pre-randomization allocation vector.
    bool allocation(std::size_t slot) const {
        if (slot < T * G) return slot % G == 0;
        return slot - T * G < nbar1;
    }
    std::vector<std::uint8_t> allocation_pattern() const;

    /// Marginal propensity of the slots in group t: 1/G for full groups,
    /// nbar1/Gbar for the final group.
    double group_propensity(std::size_t t) const;
};

/// Three-case rule: exact 1/pi gives T = n1; otherwise T = n1-1 when
/// n - (n1-1)G >= 2, else T = n1-2. Throws LayoutInfeasible when the rule
/// leaves a final group that cannot hold nbar1 treated units alongside at
/// least one control.
MbcrLayout compute_layout(std::size_t n, std::size_t n1);

/// Non-throwing variant for sweeps.
std::optional<MbcrLayout> try_compute_layout(std::size_t n, std::size_t n1);

/// Permutation bookkeeping of one MBCR draw.
///
/// Conventions (0-based):
///   eta[j]  = slot occupied by unit j            (eta in S(n))
///   beta[i] = allocation index read by slot i    (block-diagonal on groups)
///   z[j]    = a[beta[eta[j]]]
/// so the treatment of the unit sitting in slot i is a[beta[i]] = z[eta_inv[i]].
struct MbcrDetail {
    MbcrLayout layout;
    std::vector<std::size_t> beta;
    std::vector<std::size_t> eta;
    std::vector<std::size_t> eta_inv;

    /// Units belonging to group t (g_t mapped back through eta).
    std::vector<std::size_t> group_members(std::size_t t) const;
};

struct Assignment {
    std::vector<std::uint8_t> z;
    Scheme scheme = Scheme::Bernoulli;
    std::optional<MbcrDetail> mbcr;

    std::size_t treated() const;
};

Assignment draw_bernoulli(std::size_t n, double pi, RngStream& rng);
Assignment draw_complete(std::size_t n, std::size_t n1, RngStream& rng);
Assignment draw_mbcr(const MbcrLayout& layout, RngStream& rng);

/// Builds an MBCR assignment from explicit permutations. Validates that beta
/// is a within-group permutation and eta a permutation of [n].
Assignment mbcr_from_permutations(const MbcrLayout& layout, std::vector<std::size_t> beta,
                                  std::vector<std::size_t> eta);

inline constexpr std::uint64_t kDefaultEnumerationBudget = 100'000'000;

/// Saturating count of (beta_1..beta_T, beta_bar, eta) tuples.
std::uint64_t mbcr_search_space(const MbcrLayout& layout);
/// Saturating count of beta tuples alone.
std::uint64_t mbcr_within_group_space(const MbcrLayout& layout);

struct AssignmentDistribution {
    std::size_t n = 0;
    std::size_t n1 = 0;
    std::uint64_t total = 0;
    std::map<std::vector<std::uint8_t>, std::uint64_t> counts;

    /// True iff exactly C(n, n1) outcomes appear, each with count total/C(n, n1).
    bool is_uniform_over_complete() const;
};

/// Exhaustive enumeration of every (beta, eta) tuple with integer counting.
/// Throws BudgetExceeded when mbcr_search_space(layout) > budget.
AssignmentDistribution enumerate_mbcr_distribution(const MbcrLayout& layout,
                                                   std::uint64_t budget = kDefaultEnumerationBudget);

/// Visits every block-diagonal beta of the layout in lexicographic order of
/// the per-group permutations. Returns false if the budget would be exceeded.
template <typename Visitor>
bool for_each_within_group_permutation(const MbcrLayout& layout, std::uint64_t budget, Visitor&& visit);

std::uint64_t binomial(std::uint64_t n, std::uint64_t k);
std::string exact_fraction(std::uint64_t num, std::uint64_t den);

}  // namespace tightci

#include "tightci/detail/design_enumeration.hpp"
