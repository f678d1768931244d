#include "tightci/estimator.hpp"

#include <cmath>
#include <numeric>

#include "tightci/csv.hpp"
#include "tightci/error.hpp"

namespace tightci {

namespace {

bool in_unit_interval(double v) { return v >= 0.0 && v <= 1.0; }

}  // namespace

PotentialTable::PotentialTable(std::vector<double> y0, std::vector<double> y1, Provenance provenance)
    : y0_(std::move(y0)), y1_(std::move(y1)), provenance_(provenance) {
    if (y0_.size() != y1_.size()) throw ValidationError("y0 and y1 must have the same length");
    if (y0_.empty()) throw ValidationError("potential outcome table is empty");
    for (std::size_t i = 0; i < y0_.size(); ++i) {
        if (!in_unit_interval(y0_[i]) || !in_unit_interval(y1_[i]))
            throw ValidationError("potential outcomes of unit " + std::to_string(i) + " lie outside [0,1]");
    }
}

double PotentialTable::ate() const {
    double s = 0.0;
    for (std::size_t i = 0; i < y0_.size(); ++i) s += y1_[i] - y0_[i];
    return s / static_cast<double>(y0_.size());
}

PotentialTable load_table_csv(const std::filesystem::path& path) {
    const auto t = csv::read(path);
    const auto c0 = t.column("y0");
    const auto c1 = t.column("y1");
    std::vector<double> y0, y1;
    y0.reserve(t.rows.size());
    y1.reserve(t.rows.size());
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto where = path.string() + " row " + std::to_string(r + 1);
        y0.push_back(csv::parse_double(t.rows[r][c0], where + " y0"));
        y1.push_back(csv::parse_double(t.rows[r][c1], where + " y1"));
    }
    return PotentialTable(std::move(y0), std::move(y1), Provenance::Fixed);
}

ObservedData observe(const PotentialTable& table, Assignment assignment) {
    if (assignment.z.size() != table.size())
        throw ValidationError("assignment length does not match the table");
    ObservedData d;
    d.y.resize(table.size());
    const auto y0 = table.y0();
    const auto y1 = table.y1();
    for (std::size_t i = 0; i < table.size(); ++i) d.y[i] = assignment.z[i] ? y1[i] : y0[i];
    d.assignment = std::move(assignment);
    return d;
}

void validate(const ObservedData& data) {
    const auto& a = data.assignment;
    if (data.y.size() != a.z.size()) throw ValidationError("outcome and assignment lengths differ");
    for (std::size_t i = 0; i < data.y.size(); ++i) {
        if (!in_unit_interval(data.y[i]))
            throw ValidationError("outcome of unit " + std::to_string(i) + " lies outside [0,1]");
        if (a.z[i] > 1) throw ValidationError("assignment of unit " + std::to_string(i) + " is not binary");
    }
    if (a.scheme == Scheme::Mbcr && a.mbcr) {
        const auto& d = *a.mbcr;
        if (d.layout.n != data.y.size()) throw ValidationError("MBCR layout size does not match the data");
        for (std::size_t j = 0; j < a.z.size(); ++j) {
            if (a.z[j] != (d.layout.allocation(d.beta[d.eta[j]]) ? 1 : 0))
                throw ValidationError("treatment of unit " + std::to_string(j) +
                                      " disagrees with the stored MBCR permutations");
        }
    }
}

double pseudo_outcome(double y, bool z, double prop, EstimateVariant variant) {
    if (!(prop > 0.0 && prop < 1.0)) throw ValidationError("propensity must lie in (0,1)");
    const double weight = z ? 1.0 / prop : -1.0 / (1.0 - prop);
    return variant == EstimateVariant::Standard ? y * weight : (y - 1.0) * weight;
}

double ht_standard(const ObservedData& data, double prop) {
    double s = 0.0;
    for (std::size_t i = 0; i < data.y.size(); ++i)
        s += pseudo_outcome(data.y[i], data.assignment.z[i] != 0, prop, EstimateVariant::Standard);
    return s / static_cast<double>(data.y.size());
}

double ht_mbcr(const ObservedData& data) {
    if (!data.assignment.mbcr) throw ValidationError("MBCR estimator needs the stored permutations (beta, eta)");
    const auto& d = *data.assignment.mbcr;
    const auto& L = d.layout;
    const double G = static_cast<double>(L.G);
    const double treated_full = G;              // 1 / (1/G)
    const double control_full = G / (G - 1.0);  // 1 / (1 - 1/G)
    double treated_last = 0.0;
    double control_last = 0.0;
    if (L.nbar1 > 0) {
        const double Gt = L.Gtilde();
        treated_last = Gt;
        control_last = Gt / (Gt - 1.0);
    }

    double s = 0.0;
    const std::size_t full = L.T * L.G;
    for (std::size_t i = 0; i < L.n; ++i) {
        const double y = data.y[d.eta_inv[i]];
        const bool treated = L.allocation(d.beta[i]);
        if (i < full)
            s += treated ? y * treated_full : -y * control_full;
        else
            s += treated ? y * treated_last : -y * control_last;
    }
    return s / static_cast<double>(L.n);
}

std::vector<double> groupwise_sums(const ObservedData& data, EstimateVariant variant, double bernoulli_prop) {
    const auto& a = data.assignment;
    if (a.scheme == Scheme::Mbcr) {
        if (!a.mbcr) throw ValidationError("MBCR group sums need the stored permutations (beta, eta)");
        const auto& d = *a.mbcr;
        const auto& L = d.layout;
        std::vector<double> sums(L.total_groups(), 0.0);
        for (std::size_t t = 0; t < sums.size(); ++t) {
            const double prop = L.group_propensity(t);
            const auto begin = L.group_begin(t);
            const auto end = begin + L.group_size(t);
            double s = 0.0;
            for (std::size_t i = begin; i < end; ++i)
                s += pseudo_outcome(data.y[d.eta_inv[i]], L.allocation(d.beta[i]), prop, variant);
            sums[t] = s;
        }
        return sums;
    }
    if (a.scheme == Scheme::Bernoulli) {
        std::vector<double> sums(data.y.size());
        for (std::size_t i = 0; i < sums.size(); ++i)
            sums[i] = pseudo_outcome(data.y[i], a.z[i] != 0, bernoulli_prop, variant);
        return sums;
    }
    throw ValidationError("group structure needs MBCR permutations or a Bernoulli design");
}

double conditional_mean_given_eta(const PotentialTable& table, const MbcrLayout& layout,
                                  const std::vector<std::size_t>& eta, std::uint64_t budget) {
    if (table.size() != layout.n) throw ValidationError("table size does not match the layout");
    long double sum = 0.0L;
    std::uint64_t count = 0;
    const bool ok = for_each_within_group_permutation(layout, budget, [&](const std::vector<std::size_t>& beta) {
        auto data = observe(table, mbcr_from_permutations(layout, beta, eta));
        sum += ht_mbcr(data);
        ++count;
    });
    if (!ok) {
        throw BudgetExceeded("within-group enumeration needs " + std::to_string(mbcr_within_group_space(layout)) +
                             " permutations, above the budget of " + std::to_string(budget));
    }
    return static_cast<double>(sum / static_cast<long double>(count));
}

}  // namespace tightci
