#include "tightci/dgp.hpp"

#include <algorithm>

#include "tightci/csv.hpp"
#include "tightci/error.hpp"

namespace tightci {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};

void check_range(double lo, double hi) {
    if (!(lo >= 0.0 && hi <= 1.0 && lo < hi))
        throw ValidationError("uniform range must satisfy 0 <= lo < hi <= 1");
}

}  // namespace

void validate(const DgpSpec& spec) {
    std::visit(overloaded{
                   [](const FixedTable& f) {
                       if (f.path.empty()) throw ValidationError("fixed table needs a path");
                   },
                   [](const UniformShift& u) {
                       check_range(u.lo, u.hi);
                       if (u.hi + u.shift > 1.0 || u.lo + u.shift < 0.0)
                           throw ValidationError("shifted outcomes y0 + shift must stay within [0,1]");
                   },
                   [](const UniformNull& u) { check_range(u.lo, u.hi); },
               },
               spec);
}

PotentialTable sample_population(const DgpSpec& spec, std::size_t n, RngStream& rng) {
    validate(spec);
    if (const auto* f = std::get_if<FixedTable>(&spec)) {
        auto table = load_table_csv(f->path);
        if (table.size() != n)
            throw ValidationError(f->path.string() + " has " + std::to_string(table.size()) + " rows, expected " +
                                  std::to_string(n));
        return table;
    }
    double lo = 0.0;
    double hi = 1.0;
    double shift = 0.0;
    if (const auto* u = std::get_if<UniformShift>(&spec)) {
        lo = u->lo;
        hi = u->hi;
        shift = u->shift;
    } else {
        const auto& v = std::get<UniformNull>(spec);
        lo = v.lo;
        hi = v.hi;
    }
    std::vector<double> y0(n), y1(n);
    for (std::size_t i = 0; i < n; ++i) {
        y0[i] = rng.uniform(lo, hi);
        y1[i] = std::min(y0[i] + shift, 1.0);
    }
    return PotentialTable(std::move(y0), std::move(y1), Provenance::Sampled);
}

std::optional<double> superpopulation_effect(const DgpSpec& spec) {
    if (const auto* u = std::get_if<UniformShift>(&spec)) return u->shift;
    if (std::holds_alternative<UniformNull>(spec)) return 0.0;
    return std::nullopt;
}

std::string describe(const DgpSpec& spec) {
    return std::visit(overloaded{
                          [](const FixedTable& f) { return "fixed-table(" + f.path.string() + ")"; },
                          [](const UniformShift& u) {
                              return "uniform-shift(" + csv::format_double(u.lo) + "," + csv::format_double(u.hi) +
                                     "," + csv::format_double(u.shift) + ")";
                          },
                          [](const UniformNull& u) {
                              return "uniform-null(" + csv::format_double(u.lo) + "," + csv::format_double(u.hi) +
                                     ")";
                          },
                      },
                      spec);
}

}  // namespace tightci
