#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tightci/dgp.hpp"
#include "tightci/interval.hpp"

namespace tightci {

inline constexpr const char* kToolVersion = "0.3.0";
inline constexpr int kSchemaVersion = 1;

enum class Experiment { Coverage, WidthScaling, Rmse, Equivalence };
enum class Setting { DesignBased, Superpopulation };

std::string_view to_string(Experiment e);
std::string_view to_string(Setting s);

struct ExperimentConfig {
    Experiment experiment = Experiment::Coverage;
    Setting setting = Setting::DesignBased;
    std::vector<std::size_t> n_grid;
    std::vector<double> pi_grid;
    std::vector<double> alpha_grid;
    std::vector<std::size_t> n1_grid;  // equivalence only
    std::vector<std::string> methods;
    DgpSpec dgp = UniformNull{0.0, 1.0};
    std::size_t replications = 1;
    std::uint64_t seed = 0;
    MbcrLambdaRule sb_mbcr_lambda = MbcrLambdaRule::Balanced;
    ScaleConvention studentized_scale = ScaleConvention::Corrected;
    std::uint64_t enumeration_budget = kDefaultEnumerationBudget;
};

/// Validates and converts a JSON document. Errors name the offending field.
/// Relative table paths are resolved against base_dir.
ExperimentConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});

/// Reads and parses a config file; JSON syntax errors report line and column.
ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical JSON form of a parsed config (the input of the config hash).
nlohmann::json to_json(const ExperimentConfig& config);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes);

/// Method tags accepted in configs, e.g. "hoeff-mbcr" or "ht-bernoulli".
const std::vector<std::string>& known_method_tags();

struct ReportRow {
    std::string method;
    std::string variant;
    Scheme scheme = Scheme::Mbcr;
    std::size_t n = 0;
    std::size_t n1 = 0;  // 0 under Bernoulli
    double pi = 0.0;
    double alpha = 0.0;
    std::size_t replications = 0;
    std::optional<double> coverage_rate;
    std::optional<double> coverage_se;
    std::optional<double> mean_halfwidth;
    std::optional<double> width_times_sqrt_npi;
    std::optional<double> mean_upper_margin;
    std::optional<double> mean_lower_margin;
    std::optional<double> rmse;
    std::optional<double> rmse_bound;
    std::optional<double> mean_estimate;
    double target = 0.0;
};

struct Report {
    std::vector<ReportRow> rows;
    std::vector<std::string> notes;  // skipped cells and their reasons
};

enum class Runner { Serial, Parallel };

struct RunOptions {
    Runner runner = Runner::Parallel;
    int workers = 0;  // 0: OpenMP default
};

/// Coverage, width-scaling and RMSE experiments. Replication r of cell k uses
/// streams derived from (seed, k, r) only, so the report does not depend on
/// the runner or the worker count.
Report run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

struct EquivalenceRow {
    std::size_t n = 0;
    std::size_t n1 = 0;
    std::string assignment;  // z as a bit string, unit 0 first
    std::uint64_t count = 0;
    std::uint64_t total = 0;
    std::string probability;  // exact fraction
    bool matches_complete = false;
};

struct EquivalenceReport {
    std::vector<EquivalenceRow> rows;
    bool all_uniform = true;
    std::vector<std::string> notes;
};

EquivalenceReport run_equivalence(std::size_t n, std::size_t n1, std::uint64_t budget = kDefaultEnumerationBudget);
EquivalenceReport run_equivalence(const ExperimentConfig& config);

void write_csv(std::ostream& os, const Report& report, const ExperimentConfig& config);
void write_csv(std::ostream& os, const EquivalenceReport& report);

/// Runs the configured experiment and writes `<experiment>.csv` and
/// `manifest.json` into out_dir. Files are written to temporaries first and
/// renamed once both are complete. Returns the CSV path.
std::filesystem::path run_to_directory(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                                       const RunOptions& options = {});

}  // namespace tightci
