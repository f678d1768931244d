#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <variant>

#include "tightci/estimator.hpp"
#include "tightci/rng.hpp"

namespace tightci {

struct FixedTable {
    std::filesystem::path path;
};

/// y0 ~ Unif(lo, hi), y1 = y0 + shift.
struct UniformShift {
    double lo = 0.0;
    double hi = 1.0;
    double shift = 0.0;
};

/// y0 ~ Unif(lo, hi), y1 = y0.
struct UniformNull {
    double lo = 0.0;
    double hi = 1.0;
};

using DgpSpec = std::variant<FixedTable, UniformShift, UniformNull>;

/// Throws ValidationError when the process could produce values outside [0,1].
void validate(const DgpSpec& spec);

/// Draws n units from the process. FixedTable ignores the stream and requires
/// the file to hold exactly n rows.
PotentialTable sample_population(const DgpSpec& spec, std::size_t n, RngStream& rng);

/// Mean of y1 - y0 under the generating distribution; empty for FixedTable.
std::optional<double> superpopulation_effect(const DgpSpec& spec);

std::string describe(const DgpSpec& spec);

}  // namespace tightci
