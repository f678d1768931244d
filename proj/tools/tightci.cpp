// tightci: nonasymptotic confidence intervals for the average treatment effect.

#include <cmath>
#include <cstdlib>
#include <limits>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tightci/csv.hpp"
#include "tightci/design.hpp"
#include "tightci/error.hpp"
#include "tightci/estimator.hpp"
#include "tightci/harness.hpp"
#include "tightci/interval.hpp"

namespace {

using namespace tightci;
using nlohmann::json;

struct CiArgs {
    std::string data;
    std::string assignment;
    std::optional<std::uint64_t> seed;
    std::string scheme;
    std::optional<double> pi;
    std::optional<std::size_t> n1;
    std::string method;
    double alpha = 0.05;
    bool clip = false;
    bool json = false;
    std::string sb_lambda = "balanced";
    std::string scale = "corrected";
};

struct SimArgs {
    std::string config;
    std::string out;
    std::optional<int> workers;
    bool serial = false;
};

struct EquivArgs {
    std::size_t n = 0;
    std::size_t n1 = 0;
    std::uint64_t budget = kDefaultEnumerationBudget;
    std::string out;
};

std::vector<std::size_t> index_column(const csv::Table& t, std::string_view name, const std::string& origin) {
    const auto c = t.column(name);
    std::vector<std::size_t> out;
    out.reserve(t.rows.size());
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto v = csv::parse_int(t.rows[r][c], origin + " row " + std::to_string(r + 1) + " " + std::string(name));
        if (v < 0) throw ValidationError(origin + ": negative index in column " + std::string(name));
        out.push_back(static_cast<std::size_t>(v));
    }
    return out;
}

// Loads y and z, and for MBCR attaches (beta, eta) from whichever single
// source was supplied.
ObservedData load_observed(const CiArgs& a, Scheme scheme, std::optional<MbcrLayout> layout, bool need_permutations) {
    const auto table = csv::read(a.data);
    const auto cy = table.column("y");
    const auto cz = table.column("z");
    ObservedData d;
    d.assignment.scheme = scheme;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto where = a.data + " row " + std::to_string(r + 1);
        d.y.push_back(csv::parse_double(table.rows[r][cy], where + " y"));
        const auto z = csv::parse_int(table.rows[r][cz], where + " z");
        if (z != 0 && z != 1) throw ValidationError(where + ": z must be 0 or 1");
        d.assignment.z.push_back(static_cast<std::uint8_t>(z));
    }
    if (d.y.empty()) throw ValidationError(a.data + ": no rows");

    const bool inline_perms = table.has_column("eta") || table.has_column("beta");
    const int sources = (inline_perms ? 1 : 0) + (a.assignment.empty() ? 0 : 1) + (a.seed ? 1 : 0);
    if (sources > 1)
        throw ValidationError("ambiguous permutation source: give exactly one of eta/beta columns, --assignment or --seed");
    if (scheme != Scheme::Mbcr) {
        if (sources > 0) throw ValidationError("permutations are only meaningful for --scheme mbcr");
        validate(d);
        return d;
    }
    if (sources == 0) {
        if (need_permutations)
            throw ValidationError("this method needs the MBCR permutations: add eta and beta columns, "
                                  "--assignment <csv> or --seed <int>");
        validate(d);
        return d;
    }
    if (layout->n != d.y.size()) throw ValidationError("layout size does not match the data");

    Assignment rebuilt;
    if (a.seed) {
        RngStream rng(*a.seed);
        rebuilt = draw_mbcr(*layout, rng);
    } else {
        const auto& path = inline_perms ? a.data : a.assignment;
        const auto& src = inline_perms ? table : csv::read(a.assignment);
        rebuilt = mbcr_from_permutations(*layout, index_column(src, "beta", path), index_column(src, "eta", path));
    }
    if (rebuilt.z != d.assignment.z)
        throw ValidationError("the z column disagrees with the treatments implied by the MBCR permutations");
    d.assignment = std::move(rebuilt);
    validate(d);
    return d;
}

json to_json(const Interval& ci, double user_alpha, double guarantee) {
    json tuning = json::object();
    for (const auto& [k, v] : ci.tuning.entries()) tuning[k] = v;
    return {{"method", std::string(to_string(ci.method))},
            {"estimate", ci.estimate()},
            {"lower", ci.lower},
            {"upper", ci.upper},
            {"half_width", ci.half_width()},
            {"alpha", user_alpha},
            {"coverage_guarantee", guarantee},
            {"tuning", tuning}};
}

int cmd_ci(const CiArgs& a) {
    if (!(a.alpha > 0.0 && a.alpha < 1.0)) throw ValidationError("--alpha must lie in (0,1)");
    const auto scheme = parse_scheme(a.scheme);
    const auto method = parse_method(a.method);

    // Peek at z to size the design before the full load.
    const auto peek = csv::read(a.data);
    const std::size_t n = peek.rows.size();
    std::size_t treated = 0;
    for (const auto& row : peek.rows) treated += csv::parse_int(row[peek.column("z")], a.data + " z") == 1;

    double prop = 0.0;
    std::optional<MbcrLayout> layout;
    if (scheme == Scheme::Bernoulli) {
        if (!a.pi) throw ValidationError("--scheme bernoulli needs --pi");
        if (a.n1) throw ValidationError("--n1 applies to complete and mbcr schemes; use --pi for bernoulli");
        prop = DesignParams::bernoulli(n, *a.pi).pi;
    } else {
        if (a.pi) throw ValidationError("--scheme " + a.scheme + " takes --n1, not --pi");
        const std::size_t n1 = a.n1.value_or(treated);
        if (n1 != treated)
            throw ValidationError("--n1 " + std::to_string(n1) + " but the data has " + std::to_string(treated) +
                                  " treated units");
        prop = DesignParams::complete(n, n1).pi;
        if (scheme == Scheme::Mbcr || method == Method::HoeffMbcr || method == Method::SubBernoulliMbcr)
            layout = compute_layout(n, n1);
    }

    bool need_perm = false;
    switch (method) {
        case Method::HoeffMbcr:
        case Method::SubBernoulliMbcr:
            if (scheme == Scheme::Bernoulli)
                throw ValidationError(std::string(to_string(method)) +
                                      " requires complete or mbcr data; use sb-bern for Bernoulli designs");
            // With one treated unit per batch the batched estimate equals the plain one.
            if (layout->nbar1 > 0) {
                if (scheme == Scheme::Complete)
                    throw ValidationError("this n1 leaves a partial final batch, so the estimate needs MBCR "
                                          "permutations; rerun with --scheme mbcr");
                need_perm = true;
            }
            break;
        case Method::SubBernoulliBern:
            if (scheme != Scheme::Bernoulli)
                throw ValidationError("sb-bern requires Bernoulli data; use sb-mbcr for complete or mbcr designs");
            break;
        case Method::Studentized:
            if (scheme == Scheme::Complete)
                throw ValidationError("studentized needs group structure: use --scheme mbcr with permutations, "
                                      "or Bernoulli data");
            need_perm = scheme == Scheme::Mbcr;
            break;
        case Method::NaiveHoeffding:
        case Method::CltBaseline:
            break;
    }

    const auto data = load_observed(a, scheme, layout, need_perm);
    const auto rule = a.sb_lambda == "balanced"      ? MbcrLambdaRule::Balanced
                      : a.sb_lambda == "full-groups" ? MbcrLambdaRule::FullGroupsOnly
                                                     : throw ValidationError("--sb-lambda must be balanced or full-groups");
    const auto scale = a.scale == "corrected" ? ScaleConvention::Corrected
                       : a.scale == "literal" ? ScaleConvention::Literal
                                              : throw ValidationError("--scale must be corrected or literal");

    auto batched_estimate = [&] { return data.assignment.mbcr ? ht_mbcr(data) : ht_standard(data, prop); };
    Interval ci;
    double guarantee = 1.0 - a.alpha;
    switch (method) {
        case Method::HoeffMbcr: ci = hoeff_mbcr_ci(batched_estimate(), *layout, a.alpha); break;
        case Method::SubBernoulliMbcr: ci = sub_bernoulli_mbcr_ci(batched_estimate(), *layout, a.alpha, rule); break;
        case Method::SubBernoulliBern: ci = sub_bernoulli_bern_ci(ht_standard(data, prop), n, prop, a.alpha); break;
        case Method::NaiveHoeffding: ci = naive_hoeffding_ci(ht_standard(data, prop), n, prop, a.alpha); break;
        case Method::CltBaseline:
            ci = clt_ci(data, prop, a.alpha);
            guarantee = std::numeric_limits<double>::quiet_NaN();  // asymptotic only
            break;
        case Method::Studentized: {
            StudentizedOptions opts;
            opts.scale = scale;
            if (scheme == Scheme::Bernoulli) opts.bernoulli_prop = prop;
            // --alpha is the total miscoverage; each side gets half.
            ci = studentized_ci(data, a.alpha / 2.0, opts);
            break;
        }
    }
    if (a.clip) ci = clip_to_unit(std::move(ci));

    if (a.json) {
        auto j = to_json(ci, a.alpha, guarantee);
        if (std::isnan(guarantee)) j["coverage_guarantee"] = nullptr;
        std::cout << j.dump(2) << '\n';
        return 0;
    }
    std::cout << "method      " << to_string(ci.method) << '\n'
              << "estimate    " << csv::format_double(ci.estimate()) << '\n'
              << "interval    [" << csv::format_double(ci.lower) << ", " << csv::format_double(ci.upper) << "]\n"
              << "half-width  " << csv::format_double(ci.half_width()) << '\n'
              << "alpha       " << csv::format_double(a.alpha);
    if (std::isnan(guarantee))
        std::cout << " (asymptotic, no finite-sample guarantee)\n";
    else
        std::cout << " (coverage >= " << csv::format_double(guarantee) << ")\n";
    std::cout << "tuning\n";
    for (const auto& [k, v] : ci.tuning.entries()) std::cout << "  " << k << " = " << csv::format_double(v) << '\n';
    return 0;
}

int resolve_workers(const std::optional<int>& flag) {
    if (flag) {
        if (*flag < 1) throw ValidationError("--workers must be at least 1");
        return *flag;
    }
    if (const char* env = std::getenv("TIGHTCI_THREADS"); env && *env) {
        const auto v = csv::parse_int(env, "TIGHTCI_THREADS");
        if (v < 1) throw ValidationError("TIGHTCI_THREADS must be at least 1");
        return static_cast<int>(v);
    }
    return 0;
}

int cmd_run(const SimArgs& a, std::optional<Experiment> expected) {
    const auto config = load_config(a.config);
    if (expected && config.experiment != *expected)
        throw ValidationError(a.config + ": this subcommand runs '" + std::string(to_string(*expected)) +
                              "' experiments, the config declares '" + std::string(to_string(config.experiment)) + "'");
    RunOptions opts;
    opts.workers = resolve_workers(a.workers);
    opts.runner = a.serial ? Runner::Serial : Runner::Parallel;
    const auto path = run_to_directory(config, a.out, opts);
    std::cerr << "wrote " << path.string() << " and " << (path.parent_path() / "manifest.json").string() << '\n';
    return 0;
}

int cmd_equivalence(const EquivArgs& a) {
    if (!a.out.empty()) {
        ExperimentConfig c;
        c.experiment = Experiment::Equivalence;
        c.n_grid = {a.n};
        c.n1_grid = {a.n1};
        c.enumeration_budget = a.budget;
        (void)DesignParams::complete(a.n, a.n1);
        const auto path = run_to_directory(c, a.out);
        std::cerr << "wrote " << path.string() << '\n';
        return 0;
    }
    const auto report = run_equivalence(a.n, a.n1, a.budget);
    write_csv(std::cout, report);
    std::cerr << (report.all_uniform ? "every assignment has probability 1/C(n,n1)\n"
                                     : "distribution differs from complete randomization\n");
    return report.all_uniform ? 0 : 2;
}

void add_run_options(CLI::App* sub, SimArgs& a) {
    sub->add_option("--config", a.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", a.out, "output directory")->required();
    sub->add_option("--workers", a.workers, "worker threads (overrides TIGHTCI_THREADS)");
    sub->add_flag("--serial", a.serial, "use the single-threaded reference runner");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Nonasymptotic confidence intervals for the average treatment effect"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string("tightci ") + kToolVersion + " (report schema " +
                                          std::to_string(kSchemaVersion) + ")");

    CiArgs ci;
    auto* ci_cmd = app.add_subcommand("ci", "compute an interval from observed data");
    ci_cmd->add_option("--data", ci.data, "CSV with columns y,z (optionally eta,beta)")->required()->check(CLI::ExistingFile);
    ci_cmd->add_option("--scheme", ci.scheme, "bernoulli, complete or mbcr")->required();
    ci_cmd->add_option("--pi", ci.pi, "propensity (bernoulli)");
    ci_cmd->add_option("--n1", ci.n1, "treated count (complete, mbcr)");
    ci_cmd->add_option("--method", ci.method, "hoeff-mbcr, sb-bern, sb-mbcr, studentized, naive-hoeffding, clt")
        ->required();
    ci_cmd->add_option("--alpha", ci.alpha, "total miscoverage")->capture_default_str();
    ci_cmd->add_flag("--clip", ci.clip, "clip endpoints to [-1, 1]");
    ci_cmd->add_flag("--json", ci.json, "print JSON");
    ci_cmd->add_option("--assignment", ci.assignment, "CSV with eta,beta columns")->check(CLI::ExistingFile);
    ci_cmd->add_option("--seed", ci.seed, "regenerate the MBCR permutations from this seed");
    ci_cmd->add_option("--sb-lambda", ci.sb_lambda, "sb-mbcr lambda: balanced or full-groups")->capture_default_str();
    ci_cmd->add_option("--scale", ci.scale, "studentized scale constant: corrected or literal")->capture_default_str();

    SimArgs sim, scaling, rmse;
    auto* sim_cmd = app.add_subcommand("simulate", "run any experiment config");
    add_run_options(sim_cmd, sim);
    auto* scaling_cmd = app.add_subcommand("scaling", "run a width-scaling config");
    add_run_options(scaling_cmd, scaling);
    auto* rmse_cmd = app.add_subcommand("rmse", "run an RMSE config");
    add_run_options(rmse_cmd, rmse);

    EquivArgs eq;
    auto* eq_cmd = app.add_subcommand("equivalence", "exact MBCR assignment distribution");
    eq_cmd->add_option("--n", eq.n, "units")->required();
    eq_cmd->add_option("--n1", eq.n1, "treated units")->required();
    eq_cmd->add_option("--budget", eq.budget, "enumeration budget")->capture_default_str();
    eq_cmd->add_option("--out", eq.out, "write CSV and manifest here instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*ci_cmd) return cmd_ci(ci);
        if (*sim_cmd) return cmd_run(sim, std::nullopt);
        if (*scaling_cmd) return cmd_run(scaling, Experiment::WidthScaling);
        if (*rmse_cmd) return cmd_run(rmse, Experiment::Rmse);
        if (*eq_cmd) return cmd_equivalence(eq);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 2;
}
