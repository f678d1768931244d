#include "tightci/design.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "tightci/error.hpp"

namespace tightci {

namespace {

std::uint64_t saturating_mul(std::uint64_t a, std::uint64_t b) {
    std::uint64_t out = 0;
    if (__builtin_mul_overflow(a, b, &out)) return std::numeric_limits<std::uint64_t>::max();
    return out;
}

std::uint64_t saturating_factorial(std::uint64_t k) {
    std::uint64_t f = 1;
    for (std::uint64_t i = 2; i <= k; ++i) f = saturating_mul(f, i);
    return f;
}

void check_complete_arms(std::size_t n, std::size_t n1) {
    if (n1 < 1) throw ValidationError("n1 must be at least 1");
    if (2 * n1 > n)
        throw ValidationError("n1 = " + std::to_string(n1) + " exceeds n/2 (n = " + std::to_string(n) +
                              "); relabel the arms so the treated arm is the smaller one");
}

void check_permutation(const std::vector<std::size_t>& p, std::size_t n, const char* what) {
    if (p.size() != n) throw ValidationError(std::string(what) + " must have length n");
    std::vector<std::uint8_t> seen(n, 0);
    for (auto v : p) {
        if (v >= n || seen[v]) throw ValidationError(std::string(what) + " is not a permutation");
        seen[v] = 1;
    }
}

}  // namespace

std::string_view to_string(Scheme s) {
    switch (s) {
        case Scheme::Bernoulli: return "bernoulli";
        case Scheme::Complete: return "complete";
        case Scheme::Mbcr: return "mbcr";
    }
    return "?";
}

Scheme parse_scheme(std::string_view s) {
    if (s == "bernoulli") return Scheme::Bernoulli;
    if (s == "complete") return Scheme::Complete;
    if (s == "mbcr") return Scheme::Mbcr;
    throw ValidationError("unknown scheme '" + std::string(s) + "' (expected bernoulli, complete or mbcr)");
}

DesignParams DesignParams::complete(std::size_t n, std::size_t n1) {
    check_complete_arms(n, n1);
    return {n, n1, static_cast<double>(n1) / static_cast<double>(n)};
}

DesignParams DesignParams::bernoulli(std::size_t n, double pi) {
    if (n < 1) throw ValidationError("n must be positive");
    if (!(pi > 0.0 && pi <= 0.5))
        throw ValidationError("propensity must lie in (0, 1/2]; relabel the arms if it exceeds 1/2");
    return {n, 0, pi};
}

std::vector<std::uint8_t> MbcrLayout::allocation_pattern() const {
    std::vector<std::uint8_t> a(n);
    for (std::size_t i = 0; i < n; ++i) a[i] = allocation(i) ? 1 : 0;
    return a;
}

double MbcrLayout::group_propensity(std::size_t t) const {
    if (t < T) return 1.0 / static_cast<double>(G);
    return static_cast<double>(nbar1) / static_cast<double>(Gbar);
}

std::optional<MbcrLayout> try_compute_layout(std::size_t n, std::size_t n1) {
    if (n1 < 1 || 2 * n1 > n) return std::nullopt;
    MbcrLayout L;
    L.n = n;
    L.n1 = n1;
    L.G = (n + n1 - 1) / n1;  // ceil(1/pi) with pi = n1/n

    // Signed arithmetic: the second and third branches can go negative.
    const auto sn = static_cast<long long>(n);
    const auto sn1 = static_cast<long long>(n1);
    const auto sG = static_cast<long long>(L.G);
    long long T = 0;
    long long nbar1 = 0;
    if (n % n1 == 0) {
        T = sn1;
        nbar1 = 0;
    } else if (sn - (sn1 - 1) * sG >= 2) {
        T = sn1 - 1;
        nbar1 = 1;
    } else {
        T = sn1 - 2;
        nbar1 = 2;
    }
    const long long Gbar = sn - T * sG;
    if (T < 0 || Gbar < 0) return std::nullopt;
    if (nbar1 == 0 && Gbar != 0) return std::nullopt;
    // The final group needs both arms for its Horvitz-Thompson weights.
    if (nbar1 > 0 && (Gbar < 2 || Gbar <= nbar1)) return std::nullopt;

    L.T = static_cast<std::size_t>(T);
    L.Gbar = static_cast<std::size_t>(Gbar);
    L.nbar1 = static_cast<std::size_t>(nbar1);
    return L;
}

MbcrLayout compute_layout(std::size_t n, std::size_t n1) {
    check_complete_arms(n, n1);
    auto L = try_compute_layout(n, n1);
    if (!L) {
        throw LayoutInfeasible("no mini-batch layout for n = " + std::to_string(n) + ", n1 = " +
                               std::to_string(n1) +
                               ": the batching rule leaves a final group without room for both arms; "
                               "use a propensity of the form 1/K or a sub-Bernoulli interval");
    }
    return *L;
}

std::vector<std::size_t> MbcrDetail::group_members(std::size_t t) const {
    std::vector<std::size_t> units;
    const auto begin = layout.group_begin(t);
    const auto size = layout.group_size(t);
    units.reserve(size);
    for (std::size_t i = begin; i < begin + size; ++i) units.push_back(eta_inv[i]);
    return units;
}

std::size_t Assignment::treated() const {
    return static_cast<std::size_t>(std::count(z.begin(), z.end(), std::uint8_t{1}));
}

Assignment draw_bernoulli(std::size_t n, double pi, RngStream& rng) {
    (void)DesignParams::bernoulli(n, pi);
    Assignment out;
    out.scheme = Scheme::Bernoulli;
    out.z.resize(n);
    for (auto& zi : out.z) zi = rng.bernoulli(pi) ? 1 : 0;
    return out;
}

Assignment draw_complete(std::size_t n, std::size_t n1, RngStream& rng) {
    check_complete_arms(n, n1);
    Assignment out;
    out.scheme = Scheme::Complete;
    out.z.assign(n, 0);
    std::fill_n(out.z.begin(), n1, std::uint8_t{1});
    rng.shuffle(std::span<std::uint8_t>(out.z));
    return out;
}

Assignment mbcr_from_permutations(const MbcrLayout& layout, std::vector<std::size_t> beta,
                                  std::vector<std::size_t> eta) {
    const std::size_t n = layout.n;
    check_permutation(beta, n, "beta");
    check_permutation(eta, n, "eta");
    for (std::size_t i = 0; i < n; ++i) {
        if (layout.group_of_slot(beta[i]) != layout.group_of_slot(i))
            throw ValidationError("beta moves slot " + std::to_string(i) + " out of its group");
    }

    MbcrDetail d;
    d.layout = layout;
    d.beta = std::move(beta);
    d.eta = std::move(eta);
    d.eta_inv.resize(n);
    for (std::size_t j = 0; j < n; ++j) d.eta_inv[d.eta[j]] = j;

    Assignment out;
    out.scheme = Scheme::Mbcr;
    out.z.resize(n);
    for (std::size_t j = 0; j < n; ++j) out.z[j] = layout.allocation(d.beta[d.eta[j]]) ? 1 : 0;
    out.mbcr = std::move(d);
    return out;
}

Assignment draw_mbcr(const MbcrLayout& layout, RngStream& rng) {
    const std::size_t n = layout.n;
    std::vector<std::size_t> beta(n);
    std::iota(beta.begin(), beta.end(), std::size_t{0});
    for (std::size_t t = 0; t < layout.T; ++t) {
        rng.shuffle(std::span<std::size_t>(beta).subspan(layout.group_begin(t), layout.G));
    }
    if (layout.Gbar >= 2) {
        rng.shuffle(std::span<std::size_t>(beta).subspan(layout.group_begin(layout.T), layout.Gbar));
    }
    std::vector<std::size_t> eta(n);
    std::iota(eta.begin(), eta.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(eta));

    // Draws are valid permutations by construction; skip the O(n) re-validation.
    MbcrDetail d;
    d.layout = layout;
    d.beta = std::move(beta);
    d.eta = std::move(eta);
    d.eta_inv.resize(n);
    for (std::size_t j = 0; j < n; ++j) d.eta_inv[d.eta[j]] = j;

    Assignment out;
    out.scheme = Scheme::Mbcr;
    out.z.resize(n);
    for (std::size_t j = 0; j < n; ++j) out.z[j] = layout.allocation(d.beta[d.eta[j]]) ? 1 : 0;
    out.mbcr = std::move(d);
    return out;
}

std::uint64_t mbcr_within_group_space(const MbcrLayout& layout) {
    std::uint64_t s = 1;
    const auto gf = saturating_factorial(layout.G);
    for (std::size_t t = 0; t < layout.T; ++t) s = saturating_mul(s, gf);
    return saturating_mul(s, saturating_factorial(layout.Gbar));
}

std::uint64_t mbcr_search_space(const MbcrLayout& layout) {
    return saturating_mul(mbcr_within_group_space(layout), saturating_factorial(layout.n));
}

bool AssignmentDistribution::is_uniform_over_complete() const {
    const auto outcomes = binomial(n, n1);
    if (counts.size() != outcomes || total % outcomes != 0) return false;
    const auto each = total / outcomes;
    return std::all_of(counts.begin(), counts.end(), [&](const auto& kv) {
        return kv.second == each && std::count(kv.first.begin(), kv.first.end(), std::uint8_t{1}) ==
                                        static_cast<std::ptrdiff_t>(n1);
    });
}

AssignmentDistribution enumerate_mbcr_distribution(const MbcrLayout& layout, std::uint64_t budget) {
    const auto space = mbcr_search_space(layout);
    if (space > budget) {
        throw BudgetExceeded("exhaustive enumeration needs " + std::to_string(space) +
                             " permutation tuples, above the budget of " + std::to_string(budget) +
                             "; use a Monte Carlo check instead (approximate, not a proof)");
    }
    const std::size_t n = layout.n;
    AssignmentDistribution dist;
    dist.n = n;
    dist.n1 = layout.n1;

    // For a fixed beta, slot i reads allocation w[i] = a[beta[i]]; then
    // z[j] = w[eta[j]]. Counting by bitmask keeps the inner loop cheap.
    std::map<std::uint64_t, std::uint64_t> by_mask;
    std::vector<std::uint8_t> w(n);
    std::vector<std::size_t> eta(n);
    for_each_within_group_permutation(layout, budget, [&](const std::vector<std::size_t>& beta) {
        for (std::size_t i = 0; i < n; ++i) w[i] = layout.allocation(beta[i]) ? 1 : 0;
        std::iota(eta.begin(), eta.end(), std::size_t{0});
        do {
            std::uint64_t mask = 0;
            for (std::size_t j = 0; j < n; ++j) mask |= static_cast<std::uint64_t>(w[eta[j]]) << j;
            ++by_mask[mask];
            ++dist.total;
        } while (std::next_permutation(eta.begin(), eta.end()));
    });

    for (const auto& [mask, count] : by_mask) {
        std::vector<std::uint8_t> z(n);
        for (std::size_t j = 0; j < n; ++j) z[j] = (mask >> j) & 1U;
        dist.counts.emplace(std::move(z), count);
    }
    return dist;
}

std::uint64_t binomial(std::uint64_t n, std::uint64_t k) {
    if (k > n) return 0;
    k = std::min(k, n - k);
    std::uint64_t r = 1;
    for (std::uint64_t i = 1; i <= k; ++i) {
        // r * (n - k + i) is divisible by i at every step.
        const auto g = std::gcd(r, i);
        r = saturating_mul(r / g, (n - k + i) / (i / g));
    }
    return r;
}

std::string exact_fraction(std::uint64_t num, std::uint64_t den) {
    const auto g = std::gcd(num, den);
    if (g == 0) return "0/0";
    return std::to_string(num / g) + "/" + std::to_string(den / g);
}

}  // namespace tightci
