#include "tightci/harness.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "tightci/csv.hpp"
#include "tightci/error.hpp"

namespace tightci {

namespace {

using nlohmann::json;

// Purpose tags mixed into derived seeds.
constexpr std::uint64_t kTableKey = 0x7461626c65;  // "table"
constexpr std::uint64_t kMbcrKey = 0x6d626372;     // "mbcr"
constexpr std::uint64_t kBernKey = 0x6265726e;     // "bern"

struct MethodInfo {
    std::string tag;
    Scheme scheme;
    std::optional<Method> interval;  // empty for bare estimators
    bool closed_form;                // width does not depend on the data
};

const std::vector<MethodInfo>& method_table() {
    static const std::vector<MethodInfo> table = {
        {"hoeff-mbcr", Scheme::Mbcr, Method::HoeffMbcr, true},
        {"sb-bern", Scheme::Bernoulli, Method::SubBernoulliBern, true},
        {"sb-mbcr", Scheme::Mbcr, Method::SubBernoulliMbcr, true},
        {"studentized", Scheme::Mbcr, Method::Studentized, false},
        {"studentized-bern", Scheme::Bernoulli, Method::Studentized, false},
        {"naive-hoeffding", Scheme::Bernoulli, Method::NaiveHoeffding, true},
        {"clt", Scheme::Bernoulli, Method::CltBaseline, false},
        {"ht-mbcr", Scheme::Mbcr, std::nullopt, false},
        {"ht-bernoulli", Scheme::Bernoulli, std::nullopt, false},
    };
    return table;
}

const MethodInfo& method_info(const std::string& tag) {
    for (const auto& m : method_table())
        if (m.tag == tag) return m;
    throw ValidationError("unknown method tag '" + tag + "'");
}

// ---------------------------------------------------------------- config ---

[[noreturn]] void field_error(const std::string& field, const std::string& message) {
    throw ValidationError("config field '" + field + "': " + message);
}

void reject_unknown_keys(const json& obj, const std::string& where, std::initializer_list<std::string_view> allowed) {
    for (const auto& [key, _] : obj.items()) {
        bool ok = false;
        for (auto a : allowed) ok = ok || key == a;
        if (!ok) field_error(where.empty() ? key : where + "." + key, "unknown key");
    }
}

const json& require(const json& obj, const std::string& key, const std::string& where) {
    const auto it = obj.find(key);
    if (it == obj.end()) field_error(where.empty() ? key : where + "." + key, "required");
    return *it;
}

double as_number(const json& v, const std::string& field) {
    if (!v.is_number()) field_error(field, "expected a number");
    return v.get<double>();
}

std::uint64_t as_count(const json& v, const std::string& field) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
    if (v.is_number_float()) {
        const double d = v.get<double>();
        if (d >= 0 && d == std::floor(d) && d < 1.8e19) return static_cast<std::uint64_t>(d);
    }
    field_error(field, "expected a nonnegative integer");
}

std::string as_string(const json& v, const std::string& field) {
    if (!v.is_string()) field_error(field, "expected a string");
    return v.get<std::string>();
}

template <typename Fn>
auto as_list(const json& v, const std::string& field, Fn convert) {
    if (!v.is_array() || v.empty()) field_error(field, "expected a nonempty array");
    std::vector<decltype(convert(v[0], field))> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(convert(v[i], field + "[" + std::to_string(i) + "]"));
    return out;
}

DgpSpec parse_dgp(const json& v, const std::filesystem::path& base_dir) {
    if (!v.is_object()) field_error("dgp", "expected an object");
    const auto kind = as_string(require(v, "kind", "dgp"), "dgp.kind");
    DgpSpec spec;
    if (kind == "uniform-shift") {
        reject_unknown_keys(v, "dgp", {"kind", "lo", "hi", "shift"});
        spec = UniformShift{as_number(require(v, "lo", "dgp"), "dgp.lo"), as_number(require(v, "hi", "dgp"), "dgp.hi"),
                            as_number(require(v, "shift", "dgp"), "dgp.shift")};
    } else if (kind == "uniform-null") {
        reject_unknown_keys(v, "dgp", {"kind", "lo", "hi"});
        spec = UniformNull{as_number(require(v, "lo", "dgp"), "dgp.lo"), as_number(require(v, "hi", "dgp"), "dgp.hi")};
    } else if (kind == "fixed-table") {
        reject_unknown_keys(v, "dgp", {"kind", "path"});
        std::filesystem::path p = as_string(require(v, "path", "dgp"), "dgp.path");
        if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
        spec = FixedTable{p};
    } else {
        field_error("dgp.kind", "expected uniform-shift, uniform-null or fixed-table, got '" + kind + "'");
    }
    try {
        validate(spec);
    } catch (const ValidationError& e) {
        field_error("dgp", e.what());
    }
    return spec;
}

Experiment parse_experiment(const std::string& s) {
    if (s == "coverage") return Experiment::Coverage;
    if (s == "width-scaling") return Experiment::WidthScaling;
    if (s == "rmse") return Experiment::Rmse;
    if (s == "equivalence") return Experiment::Equivalence;
    field_error("experiment", "expected coverage, width-scaling, rmse or equivalence, got '" + s + "'");
}

Setting parse_setting(const std::string& s) {
    if (s == "design-based") return Setting::DesignBased;
    if (s == "superpopulation") return Setting::Superpopulation;
    field_error("setting", "expected design-based or superpopulation, got '" + s + "'");
}

std::string_view to_string(MbcrLambdaRule r) {
    return r == MbcrLambdaRule::Balanced ? "balanced" : "full-groups";
}

std::string_view to_string(ScaleConvention s) { return s == ScaleConvention::Corrected ? "corrected" : "literal"; }

// ----------------------------------------------------------------- runner ---

struct Outcome {
    double estimate = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    bool failed = false;
};

struct Cell {
    std::size_t index = 0;
    std::size_t n = 0;
    double pi = 0.0;
    double alpha = 0.0;
    std::size_t n1 = 0;
    std::optional<MbcrLayout> layout;
    std::vector<const MethodInfo*> methods;  // methods that run in this cell
    bool need_mbcr = false;
    bool need_bern = false;
};

struct CellRun {
    const ExperimentConfig* config = nullptr;
    const Cell* cell = nullptr;
    const PotentialTable* fixed_table = nullptr;  // design-based setting
    std::vector<const MethodInfo*> simulated;     // methods evaluated per replication
};

Outcome evaluate(const MethodInfo& m, const ExperimentConfig& config, const Cell& cell, const ObservedData* mbcr,
                 double mbcr_est, const ObservedData* bern, double bern_est) {
    Outcome o;
    const double alpha = cell.alpha;
    Interval ci;
    if (!m.interval) {
        o.estimate = m.scheme == Scheme::Mbcr ? mbcr_est : bern_est;
        return o;
    }
    switch (*m.interval) {
        case Method::HoeffMbcr: ci = hoeff_mbcr_ci(mbcr_est, *cell.layout, alpha); break;
        case Method::SubBernoulliMbcr:
            ci = sub_bernoulli_mbcr_ci(mbcr_est, *cell.layout, alpha, config.sb_mbcr_lambda);
            break;
        case Method::SubBernoulliBern: ci = sub_bernoulli_bern_ci(bern_est, cell.n, cell.pi, alpha); break;
        case Method::NaiveHoeffding: ci = naive_hoeffding_ci(bern_est, cell.n, cell.pi, alpha); break;
        case Method::CltBaseline: ci = clt_ci(*bern, cell.pi, alpha); break;
        case Method::Studentized: {
            StudentizedOptions opts;
            opts.scale = config.studentized_scale;
            if (m.scheme == Scheme::Bernoulli) {
                opts.bernoulli_prop = cell.pi;
                ci = studentized_ci(*bern, alpha, opts);
            } else {
                ci = studentized_ci(*mbcr, alpha, opts);
            }
            break;
        }
    }
    o.estimate = ci.estimate();
    o.lower = ci.lower;
    o.upper = ci.upper;
    return o;
}

void run_replication(const CellRun& run, std::size_t rep, Outcome* out) {
    const auto& config = *run.config;
    const auto& cell = *run.cell;
    PotentialTable sampled;
    const PotentialTable* table = run.fixed_table;
    if (!table) {
        RngStream rng(derive_seed(config.seed, {cell.index, rep, kTableKey}));
        sampled = sample_population(config.dgp, cell.n, rng);
        table = &sampled;
    }
    std::optional<ObservedData> mbcr, bern;
    double mbcr_est = 0.0, bern_est = 0.0;
    if (cell.need_mbcr) {
        RngStream rng(derive_seed(config.seed, {cell.index, rep, kMbcrKey}));
        mbcr = observe(*table, draw_mbcr(*cell.layout, rng));
        mbcr_est = ht_mbcr(*mbcr);
    }
    if (cell.need_bern) {
        RngStream rng(derive_seed(config.seed, {cell.index, rep, kBernKey}));
        bern = observe(*table, draw_bernoulli(cell.n, cell.pi, rng));
        bern_est = ht_standard(*bern, cell.pi);
    }
    for (std::size_t k = 0; k < run.simulated.size(); ++k) {
        try {
            out[k] = evaluate(*run.simulated[k], config, cell, mbcr ? &*mbcr : nullptr, mbcr_est,
                              bern ? &*bern : nullptr, bern_est);
        } catch (const ValidationError&) {
            // e.g. an empty arm under Bernoulli sampling; counted as a miss.
            out[k].failed = true;
        }
    }
}

void run_serial(const CellRun& run, std::size_t reps, std::vector<Outcome>& out) {
    const std::size_t m = run.simulated.size();
    for (std::size_t r = 0; r < reps; ++r) run_replication(run, r, out.data() + r * m);
}

void run_parallel(const CellRun& run, std::size_t reps, std::vector<Outcome>& out, int workers) {
    const std::size_t m = run.simulated.size();
    std::vector<std::string> errors(reps);
    const auto count = static_cast<long long>(reps);
#ifdef _OPENMP
    const int threads = workers > 0 ? workers : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic, 16) num_threads(threads)
#else
    (void)workers;
#endif
    for (long long r = 0; r < count; ++r) {
        const auto rep = static_cast<std::size_t>(r);
        try {
            run_replication(run, rep, out.data() + rep * m);
        } catch (const std::exception& e) {
            errors[rep] = e.what();
        }
    }
    // Report the first failure by replication index, independent of scheduling.
    for (const auto& e : errors)
        if (!e.empty()) throw std::runtime_error(e);
}

std::string variant_label(const MethodInfo& m, const ExperimentConfig& config, const Cell& cell) {
    if (m.tag == "sb-mbcr") {
        std::string s = std::string(to_string(config.sb_mbcr_lambda)) + "-lambda";
        if (cell.layout && cell.layout->Gbar > 0) s += "+final-group-term";
        return s;
    }
    if (m.interval == Method::Studentized) return std::string(to_string(config.studentized_scale)) + "-scale";
    if (m.interval == Method::CltBaseline) return "asymptotic";
    return "";
}

double effective_size(const MethodInfo& m, const Cell& cell) {
    return m.scheme == Scheme::Mbcr ? static_cast<double>(cell.n1) : static_cast<double>(cell.n) * cell.pi;
}

ReportRow base_row(const MethodInfo& m, const ExperimentConfig& config, const Cell& cell, double target) {
    ReportRow row;
    row.method = m.tag;
    row.variant = variant_label(m, config, cell);
    row.scheme = m.scheme;
    row.n = cell.n;
    row.n1 = m.scheme == Scheme::Mbcr ? cell.n1 : 0;
    row.pi = cell.pi;
    row.alpha = cell.alpha;
    row.target = target;
    const double npi = effective_size(m, cell);
    row.rmse_bound = m.scheme == Scheme::Mbcr ? 2.0 / std::sqrt(npi) : std::sqrt(2.0 / npi);
    return row;
}

ReportRow summarize(const MethodInfo& m, const ExperimentConfig& config, const Cell& cell, double target,
                    const std::vector<Outcome>& outcomes, std::size_t column, std::size_t stride, std::size_t reps) {
    ReportRow row = base_row(m, config, cell, target);
    row.replications = reps;
    double covered = 0.0, width = 0.0, up = 0.0, down = 0.0, sq = 0.0, est = 0.0;
    for (std::size_t r = 0; r < reps; ++r) {
        const auto& o = outcomes[r * stride + column];
        if (o.failed) continue;
        const double err = o.estimate - target;
        sq += err * err;
        est += o.estimate;
        if (m.interval) {
            if (o.lower <= target && target <= o.upper) covered += 1.0;
            width += 0.5 * (o.upper - o.lower);
            up += o.upper - o.estimate;
            down += o.estimate - o.lower;
        }
    }
    const double R = static_cast<double>(reps);
    row.rmse = std::sqrt(sq / R);
    row.mean_estimate = est / R;
    if (m.interval) {
        const double p = covered / R;
        row.coverage_rate = p;
        row.coverage_se = std::sqrt(p * (1.0 - p) / R);
        row.mean_halfwidth = width / R;
        row.width_times_sqrt_npi = *row.mean_halfwidth * std::sqrt(effective_size(m, cell));
        row.mean_upper_margin = up / R;
        row.mean_lower_margin = down / R;
    }
    return row;
}

// Closed-form width at estimate 0; no sampling involved.
ReportRow closed_form_row(const MethodInfo& m, const ExperimentConfig& config, const Cell& cell) {
    ReportRow row = base_row(m, config, cell, 0.0);
    row.rmse_bound.reset();
    const Outcome o = evaluate(m, config, cell, nullptr, 0.0, nullptr, 0.0);
    row.mean_halfwidth = 0.5 * (o.upper - o.lower);
    row.width_times_sqrt_npi = *row.mean_halfwidth * std::sqrt(effective_size(m, cell));
    row.mean_upper_margin = o.upper;
    row.mean_lower_margin = -o.lower;
    return row;
}

std::string opt(const std::optional<double>& v) { return v ? csv::format_double(*v) : std::string(); }

}  // namespace

std::string_view to_string(Experiment e) {
    switch (e) {
        case Experiment::Coverage: return "coverage";
        case Experiment::WidthScaling: return "width-scaling";
        case Experiment::Rmse: return "rmse";
        case Experiment::Equivalence: return "equivalence";
    }
    return "?";
}

std::string_view to_string(Setting s) { return s == Setting::DesignBased ? "design-based" : "superpopulation"; }

const std::vector<std::string>& known_method_tags() {
    static const std::vector<std::string> tags = [] {
        std::vector<std::string> t;
        for (const auto& m : method_table()) t.push_back(m.tag);
        return t;
    }();
    return tags;
}

ExperimentConfig parse_config(const json& doc, const std::filesystem::path& base_dir) {
    if (!doc.is_object()) throw ValidationError("config must be a JSON object");
    reject_unknown_keys(doc, "",
                        {"experiment", "setting", "grid", "methods", "dgp", "replications", "seed", "options"});
    ExperimentConfig c;
    c.experiment = parse_experiment(as_string(require(doc, "experiment", ""), "experiment"));
    if (const auto it = doc.find("setting"); it != doc.end()) c.setting = parse_setting(as_string(*it, "setting"));

    const auto& grid = require(doc, "grid", "");
    if (!grid.is_object()) field_error("grid", "expected an object");
    reject_unknown_keys(grid, "grid", {"n", "pi", "alpha", "n1"});
    c.n_grid = as_list(require(grid, "n", "grid"), "grid.n", [](const json& v, const std::string& f) {
        const auto n = as_count(v, f);
        if (n < 2) field_error(f, "n must be at least 2");
        return static_cast<std::size_t>(n);
    });

    if (const auto it = doc.find("seed"); it != doc.end()) c.seed = as_count(*it, "seed");

    if (c.experiment == Experiment::Equivalence) {
        c.n1_grid = as_list(require(grid, "n1", "grid"), "grid.n1", [](const json& v, const std::string& f) {
            const auto n1 = as_count(v, f);
            if (n1 < 1) field_error(f, "n1 must be at least 1");
            return static_cast<std::size_t>(n1);
        });
        if (const auto it = doc.find("options"); it != doc.end()) {
            reject_unknown_keys(*it, "options", {"enumeration_budget"});
            if (const auto b = it->find("enumeration_budget"); b != it->end())
                c.enumeration_budget = as_count(*b, "options.enumeration_budget");
        }
        return c;
    }

    c.pi_grid = as_list(require(grid, "pi", "grid"), "grid.pi", [](const json& v, const std::string& f) {
        const double pi = as_number(v, f);
        if (!(pi > 0.0 && pi <= 0.5)) field_error(f, "propensity must lie in (0, 1/2]");
        return pi;
    });
    c.alpha_grid = as_list(require(grid, "alpha", "grid"), "grid.alpha", [](const json& v, const std::string& f) {
        const double a = as_number(v, f);
        if (!(a > 0.0 && a < 1.0)) field_error(f, "alpha must lie in (0,1)");
        return a;
    });
    c.methods = as_list(require(doc, "methods", ""), "methods", [](const json& v, const std::string& f) {
        auto tag = as_string(v, f);
        const auto& tags = known_method_tags();
        if (std::find(tags.begin(), tags.end(), tag) == tags.end()) {
            std::string all;
            for (const auto& t : tags) all += (all.empty() ? "" : ", ") + t;
            field_error(f, "unknown method '" + tag + "' (expected one of " + all + ")");
        }
        return tag;
    });
    {
        std::set<std::string> seen;
        for (std::size_t i = 0; i < c.methods.size(); ++i)
            if (!seen.insert(c.methods[i]).second)
                field_error("methods[" + std::to_string(i) + "]", "duplicate method '" + c.methods[i] + "'");
    }
    c.dgp = parse_dgp(require(doc, "dgp", ""), base_dir);
    if (c.setting == Setting::Superpopulation && std::holds_alternative<FixedTable>(c.dgp))
        field_error("setting", "superpopulation targets need a sampling DGP, not a fixed table");

    const auto reps = as_count(require(doc, "replications", ""), "replications");
    if (reps < 1) field_error("replications", "must be at least 1");
    c.replications = static_cast<std::size_t>(reps);

    if (const auto it = doc.find("options"); it != doc.end()) {
        if (!it->is_object()) field_error("options", "expected an object");
        reject_unknown_keys(*it, "options", {"sb_mbcr_lambda", "studentized_scale"});
        if (const auto v = it->find("sb_mbcr_lambda"); v != it->end()) {
            const auto s = as_string(*v, "options.sb_mbcr_lambda");
            if (s == "balanced")
                c.sb_mbcr_lambda = MbcrLambdaRule::Balanced;
            else if (s == "full-groups")
                c.sb_mbcr_lambda = MbcrLambdaRule::FullGroupsOnly;
            else
                field_error("options.sb_mbcr_lambda", "expected balanced or full-groups");
        }
        if (const auto v = it->find("studentized_scale"); v != it->end()) {
            const auto s = as_string(*v, "options.studentized_scale");
            if (s == "corrected")
                c.studentized_scale = ScaleConvention::Corrected;
            else if (s == "literal")
                c.studentized_scale = ScaleConvention::Literal;
            else
                field_error("options.studentized_scale", "expected corrected or literal");
        }
    }
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        std::size_t line = 1, col = 1;
        for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw ValidationError(path.string() + ":" + std::to_string(line) + ":" + std::to_string(col) +
                              ": invalid JSON");
    }
    try {
        return parse_config(doc, path.parent_path());
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

json to_json(const ExperimentConfig& c) {
    json j;
    j["experiment"] = std::string(to_string(c.experiment));
    j["seed"] = c.seed;
    j["grid"]["n"] = c.n_grid;
    if (c.experiment == Experiment::Equivalence) {
        j["grid"]["n1"] = c.n1_grid;
        j["options"]["enumeration_budget"] = c.enumeration_budget;
        return j;
    }
    j["setting"] = std::string(to_string(c.setting));
    j["grid"]["pi"] = c.pi_grid;
    j["grid"]["alpha"] = c.alpha_grid;
    j["methods"] = c.methods;
    j["replications"] = c.replications;
    j["dgp"] = std::visit(
        [](const auto& d) -> json {
            using D = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<D, FixedTable>) return {{"kind", "fixed-table"}, {"path", d.path.string()}};
            else if constexpr (std::is_same_v<D, UniformShift>)
                return {{"kind", "uniform-shift"}, {"lo", d.lo}, {"hi", d.hi}, {"shift", d.shift}};
            else
                return {{"kind", "uniform-null"}, {"lo", d.lo}, {"hi", d.hi}};
        },
        c.dgp);
    j["options"]["sb_mbcr_lambda"] = std::string(to_string(c.sb_mbcr_lambda));
    j["options"]["studentized_scale"] = std::string(to_string(c.studentized_scale));
    return j;
}

std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

Report run_experiment(const ExperimentConfig& config, const RunOptions& options) {
    if (config.experiment == Experiment::Equivalence)
        throw ValidationError("equivalence configs run through run_equivalence");
    Report report;
    std::vector<const MethodInfo*> methods;
    for (const auto& tag : config.methods) methods.push_back(&method_info(tag));

    std::size_t index = 0;
    for (const auto n : config.n_grid) {
        // One population per n in the design-based setting, shared across pi and alpha.
        std::optional<PotentialTable> fixed;
        auto ensure_fixed = [&] {
            if (fixed || config.setting != Setting::DesignBased) return;
            RngStream rng(derive_seed(config.seed, {kTableKey, n}));
            fixed = sample_population(config.dgp, n, rng);
        };
        for (const auto pi : config.pi_grid) {
            for (const auto alpha : config.alpha_grid) {
                Cell cell;
                cell.index = index++;
                cell.n = n;
                cell.pi = pi;
                cell.alpha = alpha;
                const std::string where = "n=" + std::to_string(n) + " pi=" + csv::format_double(pi) +
                                          " alpha=" + csv::format_double(alpha);
                const auto rounded = std::llround(static_cast<double>(n) * pi);
                cell.n1 = rounded > 0 ? static_cast<std::size_t>(rounded) : 0;
                std::string layout_problem;
                if (cell.n1 < 1) {
                    layout_problem = "n*pi rounds to zero treated units";
                } else {
                    cell.layout = try_compute_layout(n, cell.n1);
                    if (!cell.layout)
                        layout_problem = "no mini-batch layout for n1=" + std::to_string(cell.n1);
                }
                for (const auto* m : methods) {
                    if (m->scheme == Scheme::Mbcr && !cell.layout) {
                        report.notes.push_back("skipped " + m->tag + " at " + where + ": " + layout_problem);
                        continue;
                    }
                    if (m->interval == Method::Studentized) {
                        const std::size_t groups = m->scheme == Scheme::Mbcr ? cell.layout->total_groups() : n;
                        if (groups < 4) {
                            report.notes.push_back("skipped " + m->tag + " at " + where +
                                                   ": insufficient groups for cross-fitting");
                            continue;
                        }
                    }
                    cell.methods.push_back(m);
                }

                CellRun run;
                run.config = &config;
                run.cell = &cell;
                for (const auto* m : cell.methods) {
                    if (config.experiment == Experiment::WidthScaling && m->closed_form) continue;
                    run.simulated.push_back(m);
                    cell.need_mbcr = cell.need_mbcr || m->scheme == Scheme::Mbcr;
                    cell.need_bern = cell.need_bern || m->scheme == Scheme::Bernoulli;
                }
                double target = 0.0;
                if (!run.simulated.empty()) {
                    ensure_fixed();
                    run.fixed_table = fixed ? &*fixed : nullptr;
                    target = fixed ? fixed->ate() : *superpopulation_effect(config.dgp);
                }

                std::vector<Outcome> outcomes;
                const std::size_t reps = run.simulated.empty() ? 0 : config.replications;
                if (reps > 0) {
                    outcomes.resize(reps * run.simulated.size());
                    if (options.runner == Runner::Serial)
                        run_serial(run, reps, outcomes);
                    else
                        run_parallel(run, reps, outcomes, options.workers);
                }

                std::size_t column = 0;
                for (const auto* m : cell.methods) {
                    if (config.experiment == Experiment::WidthScaling && m->closed_form) {
                        report.rows.push_back(closed_form_row(*m, config, cell));
                        continue;
                    }
                    report.rows.push_back(
                        summarize(*m, config, cell, target, outcomes, column, run.simulated.size(), reps));
                    std::size_t failures = 0;
                    for (std::size_t r = 0; r < reps; ++r) failures += outcomes[r * run.simulated.size() + column].failed;
                    if (failures > 0)
                        report.notes.push_back(m->tag + " at " + where + ": " + std::to_string(failures) +
                                               " replications could not form an interval and count as misses");
                    ++column;
                }
            }
        }
    }
    return report;
}

EquivalenceReport run_equivalence(std::size_t n, std::size_t n1, std::uint64_t budget) {
    const auto layout = compute_layout(n, n1);
    const auto dist = enumerate_mbcr_distribution(layout, budget);
    EquivalenceReport report;
    report.all_uniform = dist.is_uniform_over_complete();
    const auto expected = binomial(n, n1);
    for (const auto& [z, count] : dist.counts) {
        EquivalenceRow row;
        row.n = n;
        row.n1 = n1;
        for (auto bit : z) row.assignment.push_back(bit ? '1' : '0');
        row.count = count;
        row.total = dist.total;
        row.probability = exact_fraction(count, dist.total);
        row.matches_complete = row.probability == exact_fraction(1, expected);
        report.rows.push_back(std::move(row));
    }
    return report;
}

EquivalenceReport run_equivalence(const ExperimentConfig& config) {
    EquivalenceReport out;
    for (const auto n : config.n_grid) {
        for (const auto n1 : config.n1_grid) {
            const std::string where = "n=" + std::to_string(n) + " n1=" + std::to_string(n1);
            if (2 * n1 > n) {
                out.notes.push_back("skipped " + where + ": n1 exceeds n/2");
                continue;
            }
            if (!try_compute_layout(n, n1)) {
                out.notes.push_back("skipped " + where + ": no mini-batch layout");
                continue;
            }
            auto part = run_equivalence(n, n1, config.enumeration_budget);
            out.all_uniform = out.all_uniform && part.all_uniform;
            for (auto& r : part.rows) out.rows.push_back(std::move(r));
        }
    }
    return out;
}

void write_csv(std::ostream& os, const Report& report, const ExperimentConfig& config) {
    csv::write_row(os, {"schema_version", "experiment", "method", "variant", "scheme", "setting", "n", "n1", "pi",
                        "alpha", "replications", "seed", "coverage_rate", "coverage_se", "mean_halfwidth",
                        "width_times_sqrt_npi", "mean_upper_margin", "mean_lower_margin", "rmse", "rmse_bound",
                        "mean_estimate", "target"});
    for (const auto& r : report.rows) {
        csv::write_row(os, {std::to_string(kSchemaVersion), std::string(to_string(config.experiment)), r.method,
                            r.variant, std::string(to_string(r.scheme)), std::string(to_string(config.setting)),
                            std::to_string(r.n), std::to_string(r.n1), csv::format_double(r.pi),
                            csv::format_double(r.alpha), std::to_string(r.replications), std::to_string(config.seed),
                            opt(r.coverage_rate), opt(r.coverage_se), opt(r.mean_halfwidth),
                            opt(r.width_times_sqrt_npi), opt(r.mean_upper_margin), opt(r.mean_lower_margin),
                            opt(r.rmse), opt(r.rmse_bound), opt(r.mean_estimate), csv::format_double(r.target)});
    }
}

void write_csv(std::ostream& os, const EquivalenceReport& report) {
    csv::write_row(os, {"schema_version", "n", "n1", "assignment", "count", "total", "probability", "expected",
                        "matches"});
    for (const auto& r : report.rows) {
        csv::write_row(os, {std::to_string(kSchemaVersion), std::to_string(r.n), std::to_string(r.n1), r.assignment,
                            std::to_string(r.count), std::to_string(r.total), r.probability,
                            exact_fraction(1, binomial(r.n, r.n1)), r.matches_complete ? "true" : "false"});
    }
}

std::filesystem::path run_to_directory(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                                       const RunOptions& options) {
    std::ostringstream body;
    std::vector<std::string> notes;
    bool uniform = true;
    if (config.experiment == Experiment::Equivalence) {
        const auto report = run_equivalence(config);
        write_csv(body, report);
        notes = report.notes;
        uniform = report.all_uniform;
    } else {
        const auto report = run_experiment(config, options);
        write_csv(body, report, config);
        notes = report.notes;
    }

    const auto canonical = to_json(config).dump();
    std::ostringstream hash;
    hash << std::hex << std::setw(16) << std::setfill('0') << fnv1a(canonical);
    const std::string csv_name = std::string(to_string(config.experiment)) + ".csv";
    json manifest;
    manifest["schema_version"] = kSchemaVersion;
    manifest["tool_version"] = kToolVersion;
    manifest["experiment"] = std::string(to_string(config.experiment));
    manifest["config_hash"] = hash.str();
    manifest["seed"] = config.seed;
    manifest["config"] = to_json(config);
    manifest["outputs"] = {csv_name};
    manifest["notes"] = notes;
    if (config.experiment == Experiment::Equivalence) manifest["all_uniform"] = uniform;

    std::filesystem::create_directories(out_dir);
    const auto csv_path = out_dir / csv_name;
    const auto manifest_path = out_dir / "manifest.json";
    const auto csv_tmp = out_dir / ("." + csv_name + ".tmp");
    const auto manifest_tmp = out_dir / ".manifest.json.tmp";
    {
        std::ofstream f(csv_tmp, std::ios::binary);
        f << body.str();
        if (!f) throw std::runtime_error("cannot write " + csv_tmp.string());
    }
    {
        std::ofstream f(manifest_tmp, std::ios::binary);
        f << manifest.dump(2) << '\n';
        if (!f) throw std::runtime_error("cannot write " + manifest_tmp.string());
    }
    std::filesystem::rename(csv_tmp, csv_path);
    std::filesystem::rename(manifest_tmp, manifest_path);
    return csv_path;
}

}  // namespace tightci
