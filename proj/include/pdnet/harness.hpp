// Copyright 2026 The pdnet Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <atomic>
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "pdnet/baselines.hpp"
#include "pdnet/distributed.hpp"
#include "pdnet/problems.hpp"
#include "pdnet/trainer.hpp"

namespace pdnet {

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

/// Environment variable naming the default output directory.
inline constexpr const char* kOutDirEnv = "PDNET_OUT_DIR";

inline std::string default_out_dir() {
    const char* env = std::getenv(kOutDirEnv);
    return env && *env ? std::string(env) : std::string("results");
}

/// A method name with optional overrides, e.g. "centralized:layers=3:width=20".
struct MethodSpec {
    std::string name;
    std::map<std::string, std::string> options;
    std::string text;

    static MethodSpec parse(const std::string& s) {
        MethodSpec m;
        m.text = s;
        std::stringstream ss(s);
        std::string part;
        std::getline(ss, m.name, ':');
        while (std::getline(ss, part, ':')) {
            auto eq = part.find('=');
            if (eq == std::string::npos) throw std::invalid_argument("method option without '=': " + part);
            m.options[part.substr(0, eq)] = part.substr(eq + 1);
        }
        return m;
    }
    std::optional<int> int_option(const std::string& key) const {
        auto it = options.find(key);
        if (it == options.end()) return std::nullopt;
        return std::stoi(it->second);
    }
};

inline const std::vector<std::string>& known_methods() {
    static const std::vector<std::string> m{"centralized", "distributed", "oracle", "short_term", "fixed", "wmmse",
                                            "naive", "peak", "random", "supervised"};
    return m;
}

inline bool method_applies(const std::string& method, ProblemId p) {
    if (method == "oracle" || method == "short_term" || method == "fixed") return p == ProblemId::p3;
    if (method == "wmmse" || method == "supervised") return p == ProblemId::p4;
    if (method == "naive" || method == "peak" || method == "random") return p != ProblemId::p3;
    return method == "centralized" || method == "distributed";
}

struct ExperimentConfig {
    std::string name = "custom";
    ProblemId problem = ProblemId::p3;
    std::size_t nodes = 2;
    std::optional<int> hidden_layers;
    std::optional<int> width;
    TrainConfig train = TrainConfig::desk_scale();
    std::vector<double> snr_db{0.0};
    std::vector<double> backhaul_bits{0.0};
    std::vector<double> pp_ratio{1.0};
    double gamma = 1.0;
    std::vector<std::string> methods{"centralized"};
    std::vector<std::uint64_t> seeds{1};
    Index test_size = 10000;
    bool stochastic_eval = false;
    std::string out_dir = default_out_dir();
    int threads = 0;  // 0: hardware concurrency
    bool save_artifacts = true;

    void validate() const {
        if (nodes < 1) throw std::invalid_argument("config: nodes must be >= 1");
        train.validate();
        if (snr_db.empty() || pp_ratio.empty() || backhaul_bits.empty())
            throw std::invalid_argument("config: sweep grids must be nonempty");
        for (double s : snr_db)
            for (double r : pp_ratio)
                for (double b : backhaul_bits) SweepPoint{s, gamma, r, b}.validate();
        if (seeds.empty()) throw std::invalid_argument("config: need at least one seed");
        for (std::size_t i = 0; i < seeds.size(); ++i)
            for (std::size_t j = i + 1; j < seeds.size(); ++j)
                if (seeds[i] == seeds[j]) throw std::invalid_argument("config: seeds must be distinct");
        if (methods.empty()) throw std::invalid_argument("config: need at least one method");
        for (const auto& m : methods) {
            auto spec = MethodSpec::parse(m);
            if (std::find(known_methods().begin(), known_methods().end(), spec.name) == known_methods().end())
                throw std::invalid_argument("config: unknown method '" + spec.name + "'");
            if (!method_applies(spec.name, problem))
                throw std::invalid_argument("config: method '" + spec.name + "' does not apply to " + to_string(problem));
        }
        if (test_size < 1) throw std::invalid_argument("config: test_size must be >= 1");
        if (threads < 0) throw std::invalid_argument("config: threads must be >= 0");
    }

    void apply_paper_scale() {
        const auto paper = TrainConfig::paper_scale();
        train.batch_size = paper.batch_size;
        train.iterations = paper.iterations;
        train.lr = paper.lr;
        train.lr_dual.reset();
        train.validation_size = paper.validation_size;
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double d = 0;
    try {
        d = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size()) throw std::invalid_argument("config: '" + key + "' expects a number, got '" + v + "'");
    return d;
}

inline long long parse_int(const std::string& key, const std::string& v) {
    const double d = parse_double(key, v);
    if (d != std::floor(d)) throw std::invalid_argument("config: '" + key + "' expects an integer, got '" + v + "'");
    return static_cast<long long>(d);
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::invalid_argument("config: '" + key + "' expects true/false, got '" + v + "'");
}

}  // namespace detail

/// Applies one `key = value` setting.
inline void set_config_value(ExperimentConfig& c, const std::string& key, const std::string& v) {
    using namespace detail;
    auto doubles = [&] {
        std::vector<double> out;
        for (auto& s : split_list(v)) out.push_back(parse_double(key, s));
        return out;
    };
    if (key == "name") c.name = v;
    else if (key == "problem") c.problem = problem_from_string(v);
    else if (key == "nodes") c.nodes = std::size_t(parse_int(key, v));
    else if (key == "hidden_layers") c.hidden_layers = int(parse_int(key, v));
    else if (key == "width") c.width = int(parse_int(key, v));
    else if (key == "scale") {
        if (v == "paper") c.apply_paper_scale();
        else if (v != "desk") throw std::invalid_argument("config: scale must be paper or desk");
    } else if (key == "batch_size") c.train.batch_size = parse_int(key, v);
    else if (key == "iterations") c.train.iterations = long(parse_int(key, v));
    else if (key == "lr") c.train.lr = parse_double(key, v);
    else if (key == "lr_dual") c.train.lr_dual = parse_double(key, v);
    else if (key == "checkpoint_interval") c.train.checkpoint_interval = long(parse_int(key, v));
    else if (key == "validation_size") c.train.validation_size = parse_int(key, v);
    else if (key == "calibration_size") c.train.calibration_size = parse_int(key, v);
    else if (key == "bn_freeze_fraction") c.train.bn_freeze_fraction = parse_double(key, v);
    else if (key == "anneal") c.train.anneal = parse_bool(key, v);
    else if (key == "snr_db") c.snr_db = doubles();
    else if (key == "backhaul_bits") c.backhaul_bits = doubles();
    else if (key == "pp_ratio") c.pp_ratio = doubles();
    else if (key == "gamma") c.gamma = parse_double(key, v);
    else if (key == "methods") c.methods = split_list(v);
    else if (key == "seeds") {
        c.seeds.clear();
        for (auto& s : split_list(v)) c.seeds.push_back(std::uint64_t(parse_int(key, s)));
    } else if (key == "test_size") c.test_size = parse_int(key, v);
    else if (key == "stochastic_eval") c.stochastic_eval = parse_bool(key, v);
    else if (key == "out_dir") c.out_dir = v;
    else if (key == "threads") c.threads = int(parse_int(key, v));
    else if (key == "save_artifacts") c.save_artifacts = parse_bool(key, v);
    else throw std::invalid_argument("config: unknown key '" + key + "'");
}

/// Key-value text: one `key = value` per line, '#' starts a comment, lists
/// are comma separated. Keys not given keep their defaults.
inline ExperimentConfig parse_config(std::istream& is, ExperimentConfig base = {}) {
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
        try {
            set_config_value(base, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    base.validate();
    return base;
}

inline std::vector<std::string> preset_names() {
    return {"fig3-desk", "fig6-desk", "fig7-desk", "fig8-desk", "arch-desk"};
}

/// Built-in experiment definitions, written in the config file syntax.
inline std::string preset_text(const std::string& name) {
    if (name == "fig3-desk")
        return "name = fig3-desk\nproblem = p3\nnodes = 2\ngamma = 1\n"
               "snr_db = -2, 0, 2, 4, 6, 8, 10\nbackhaul_bits = 0, 1, 2, 3\n"
               "methods = centralized, distributed, oracle, short_term, fixed\nseeds = 1, 2, 3\n";
    if (name == "fig6-desk")
        return "name = fig6-desk\nproblem = p4\nnodes = 3\npp_ratio = 1\n"
               "snr_db = 0, 5, 10, 15, 20\nbackhaul_bits = 0, 1, 2\n"
               "methods = centralized, distributed, wmmse, naive, peak, random\nseeds = 1, 2, 3\n";
    if (name == "fig7-desk")
        return "name = fig7-desk\nproblem = p4\nnodes = 3\npp_ratio = 1, 1.5, 2.5\n"
               "snr_db = 0, 10, 20\nbackhaul_bits = 0, 1, 2\nmethods = centralized, distributed\nseeds = 1, 2, 3\n";
    if (name == "fig8-desk")
        return "name = fig8-desk\nproblem = p5\nnodes = 3\npp_ratio = 1\n"
               "snr_db = 0, 5, 10, 15, 20\nbackhaul_bits = 0, 1, 2, 3\n"
               "methods = centralized, distributed, peak, random\nseeds = 1, 2, 3\n";
    if (name == "arch-desk")
        return "name = arch-desk\nproblem = p3\nnodes = 2\nsnr_db = 5\n"
               "methods = centralized:layers=0, centralized:layers=1, centralized:layers=2, "
               "centralized:layers=3, centralized:layers=4, centralized:layers=6, "
               "centralized:width=5, centralized:width=10, centralized:width=40, oracle\nseeds = 1, 2, 3\n";
    throw std::invalid_argument("unknown preset '" + name + "'");
}

/// `spec` is a preset name or a path to a config file.
inline ExperimentConfig load_config(const std::string& spec) {
    auto names = preset_names();
    if (std::find(names.begin(), names.end(), spec) != names.end()) {
        std::istringstream is(preset_text(spec));
        return parse_config(is);
    }
    std::ifstream is(spec);
    if (!is) throw std::invalid_argument("cannot open config '" + spec + "' (not a preset either)");
    return parse_config(is);
}

// ---------------------------------------------------------------------------
// Result table
// ---------------------------------------------------------------------------

struct ResultRow {
    std::string problem;
    std::string method;
    double snr_db = 0;
    double backhaul_bits = -1;  // -1 where not applicable
    double pp_ratio = 1;
    std::uint64_t seed = 0;
    double metric_mean = 0;
    double metric_ci = 0;
    bool feasible = true;
    double max_rel_violation = 0;
    std::vector<double> constraint_means;
    std::uint64_t test_hash = 0;
    std::string status = "ok";

    bool operator==(const ResultRow& o) const {
        auto same = [](double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); };
        if (constraint_means.size() != o.constraint_means.size()) return false;
        for (std::size_t k = 0; k < constraint_means.size(); ++k)
            if (!same(constraint_means[k], o.constraint_means[k])) return false;
        return problem == o.problem && method == o.method && same(snr_db, o.snr_db) &&
               same(backhaul_bits, o.backhaul_bits) && same(pp_ratio, o.pp_ratio) && seed == o.seed &&
               same(metric_mean, o.metric_mean) && same(metric_ci, o.metric_ci) && feasible == o.feasible &&
               same(max_rel_violation, o.max_rel_violation) && test_hash == o.test_hash && status == o.status;
    }
};

inline const std::vector<std::string>& result_columns() {
    static const std::vector<std::string> cols{"problem",   "method",       "snr_db",          "backhaul_bits",
                                               "pp_ratio",  "seed",         "metric_mean",     "metric_ci",
                                               "feasible",  "max_rel_violation", "constraint_means", "test_hash",
                                               "status"};
    return cols;
}

struct ResultTable {
    std::vector<ResultRow> rows;

    bool operator==(const ResultTable&) const = default;

    static std::string format_double(double v) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return buf;
    }

    void write_csv(std::ostream& os) const {
        for (std::size_t c = 0; c < result_columns().size(); ++c) os << (c ? "," : "") << result_columns()[c];
        os << '\n';
        for (const auto& r : rows) {
            std::string cm;
            for (std::size_t k = 0; k < r.constraint_means.size(); ++k)
                cm += (k ? ";" : "") + format_double(r.constraint_means[k]);
            std::string status = r.status;
            std::replace(status.begin(), status.end(), ',', ';');
            std::replace(status.begin(), status.end(), '\n', ' ');
            os << r.problem << ',' << r.method << ',' << format_double(r.snr_db) << ','
               << format_double(r.backhaul_bits) << ',' << format_double(r.pp_ratio) << ',' << r.seed << ','
               << format_double(r.metric_mean) << ',' << format_double(r.metric_ci) << ',' << (r.feasible ? 1 : 0)
               << ',' << format_double(r.max_rel_violation) << ',' << cm << ',' << r.test_hash << ',' << status
               << '\n';
        }
    }

    static ResultTable read_csv(std::istream& is) {
        ResultTable t;
        std::string line;
        if (!std::getline(is, line)) throw std::runtime_error("results csv: empty input");
        std::vector<std::string> header;
        {
            std::stringstream ss(line);
            std::string f;
            while (std::getline(ss, f, ',')) header.push_back(f);
        }
        if (header != result_columns()) throw std::runtime_error("results csv: unexpected header '" + line + "'");
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            std::vector<std::string> f;
            std::stringstream ss(line);
            std::string x;
            while (std::getline(ss, x, ',')) f.push_back(x);
            if (!line.empty() && line.back() == ',') f.emplace_back();
            if (f.size() != header.size())
                throw std::runtime_error("results csv: row has " + std::to_string(f.size()) + " fields");
            ResultRow r;
            r.problem = f[0];
            r.method = f[1];
            r.snr_db = std::stod(f[2]);
            r.backhaul_bits = std::stod(f[3]);
            r.pp_ratio = std::stod(f[4]);
            r.seed = std::stoull(f[5]);
            r.metric_mean = std::stod(f[6]);
            r.metric_ci = std::stod(f[7]);
            r.feasible = f[8] == "1";
            r.max_rel_violation = std::stod(f[9]);
            std::stringstream cs(f[10]);
            while (std::getline(cs, x, ';'))
                if (!x.empty()) r.constraint_means.push_back(std::stod(x));
            r.test_hash = std::stoull(f[11]);
            r.status = f[12];
            t.rows.push_back(std::move(r));
        }
        return t;
    }
};

/// FNV-1a over the raw bytes of a batch.
inline std::uint64_t hash_matrix(const Matrix& m) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&](const void* p, std::size_t n) {
        auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 1099511628211ULL;
    };
    const Index r = m.rows(), c = m.cols();
    mix(&r, sizeof r);
    mix(&c, sizeof c);
    mix(m.data(), sizeof(double) * std::size_t(m.size()));
    return h;
}

inline std::uint64_t hash_double(std::uint64_t h, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    return derive_seed(h, bits);
}

inline std::uint64_t hash_string(std::uint64_t h, const std::string& s) {
    for (unsigned char ch : s) h = derive_seed(h, ch);
    return h;
}

/// The test set of one (seed, operating point): independent of the method and
/// of the backhaul budget, so every method is scored on the same draws.
inline Matrix test_set_for(const Problem& problem, std::uint64_t seed, double snr_db, double pp_ratio, Index size) {
    std::uint64_t s = derive_seed(seed, 0x7e57);
    s = hash_double(s, snr_db);
    s = hash_double(s, pp_ratio);
    s = derive_seed(s, problem.num_nodes() * 16 + std::uint64_t(problem.id()));
    Rng rng(s);
    return problem.sample(size, rng);
}

// ---------------------------------------------------------------------------
// Running experiments
// ---------------------------------------------------------------------------

struct RunContext {
    const ExperimentConfig& config;
    std::filesystem::path out;
};

namespace detail {

inline ResultRow base_row(const ExperimentConfig& c, const std::string& method, double snr, double bits,
                          double pp, std::uint64_t seed, std::uint64_t hash) {
    ResultRow r;
    r.problem = to_string(c.problem);
    r.method = method;
    r.snr_db = snr;
    r.backhaul_bits = bits;
    r.pp_ratio = pp;
    r.seed = seed;
    r.test_hash = hash;
    return r;
}

inline void fill_metrics(ResultRow& r, const Problem& problem, const Metrics& m) {
    r.metric_mean = m.mean_utility;
    r.metric_ci = m.ci95;
    r.feasible = m.all_feasible();
    r.max_rel_violation = m.max_relative_violation(problem.bounds());
    r.constraint_means = m.constraint_means;
}

inline std::string artifact_stem(const std::string& method, double snr, double bits, double pp, std::uint64_t seed) {
    std::string s = method;
    std::replace(s.begin(), s.end(), ':', '_');
    std::replace(s.begin(), s.end(), '=', '-');
    char buf[160];
    std::snprintf(buf, sizeof buf, "_snr%g_B%g_pp%g_seed%" PRIu64, snr, bits, pp, seed);
    return s + buf;
}

inline std::uint64_t train_seed(std::uint64_t seed, const std::string& method, double snr, double bits, double pp) {
    std::uint64_t s = hash_string(derive_seed(seed, 0x77a1), method);
    s = hash_double(s, snr);
    s = hash_double(s, bits);
    return hash_double(s, pp);
}

}  // namespace detail

/// All rows of one (seed, operating point). Methods run in the configured
/// order; a failure is recorded in its row and the rest continue.
inline std::vector<ResultRow> run_point(const ExperimentConfig& cfg, double snr, double pp, std::uint64_t seed,
                                        const std::filesystem::path& out) {
    std::vector<ResultRow> rows;
    const SweepPoint pt{snr, cfg.gamma, pp, 0};
    auto problem = make_problem(cfg.problem, cfg.nodes, pt);
    const Matrix test = test_set_for(*problem, seed, snr, pp, cfg.test_size);
    const std::uint64_t hash = hash_matrix(test);
    const Mode eval_mode = cfg.stochastic_eval ? Mode::eval_stochastic : Mode::eval;
    std::optional<CentralizedPolicy> centralized;  // reused by "naive"

    auto save_log = [&](const ConvergenceLog& log, const std::string& stem) {
        if (!cfg.save_artifacts) return;
        std::filesystem::create_directories(out / "logs");
        std::ofstream os(out / "logs" / (stem + ".csv"));
        log.write_csv(os);
    };

    auto train_centralized_for = [&](const MethodSpec& spec, std::uint64_t s) {
        TrainConfig tc = cfg.train;
        tc.seed = s;
        Architecture arch = centralized_architecture(*problem);
        if (cfg.hidden_layers) arch.hidden_layers = *cfg.hidden_layers;
        if (cfg.width) arch.width = *cfg.width;
        if (auto l = spec.int_option("layers")) arch.hidden_layers = *l;
        if (auto w = spec.int_option("width")) arch.width = *w;
        return train_centralized(*problem, tc, arch);
    };

    for (const auto& mtext : cfg.methods) {
        const auto spec = MethodSpec::parse(mtext);
        const std::vector<double> bit_grid =
            spec.name == "distributed" ? cfg.backhaul_bits : std::vector<double>{-1.0};
        for (double bits : bit_grid) {
            ResultRow row = detail::base_row(cfg, mtext, snr, bits, pp, seed, hash);
            const std::string stem = detail::artifact_stem(mtext, snr, bits, pp, seed);
            const std::uint64_t s = detail::train_seed(seed, mtext, snr, bits, pp);
            try {
                Metrics m;
                if (spec.name == "centralized") {
                    auto res = train_centralized_for(spec, s);
                    save_log(res.log, stem);
                    if (res.status == TrainStatus::diverged) row.status = "diverged: " + res.message;
                    if (cfg.save_artifacts) {
                        std::filesystem::create_directories(out / "checkpoints");
                        std::ofstream os(out / "checkpoints" / (stem + ".txt"));
                        res.policy.net().save(os);
                    }
                    m = evaluate(res.policy, *problem, test, eval_mode);
                    if (mtext == "centralized") centralized = res.policy;
                } else if (spec.name == "distributed") {
                    TrainConfig tc = cfg.train;
                    tc.seed = s;
                    auto arch = distributed_architecture(*problem);
                    if (auto l = spec.int_option("layers")) arch.optimizer_layers = *l;
                    if (auto w = spec.int_option("width")) arch.optimizer_width = arch.quantizer_width = *w;
                    auto res = train_distributed(*problem, Topology::uniform(cfg.nodes, bits), tc, arch);
                    save_log(res.log, stem);
                    if (res.status == TrainStatus::diverged) row.status = "diverged: " + res.message;
                    if (cfg.save_artifacts) res.policy.save(out / "checkpoints" / stem);
                    m = evaluate(res.policy, *problem, test, eval_mode);
                } else if (spec.name == "naive") {
                    if (!centralized) centralized = train_centralized_for(MethodSpec::parse("centralized"),
                                                                          detail::train_seed(seed, "centralized", snr, -1.0, pp)).policy;
                    NaivePolicy naive(*centralized, problem->observation_dims());
                    m = evaluate(naive, *problem, test, Mode::eval);
                } else if (spec.name == "oracle") {
                    const auto& cmac = dynamic_cast<const CmacProblem&>(*problem);
                    auto res = cmac_dual_oracle(cmac, test);
                    if (!res.converged) row.status = "not converged: " + res.diagnostics;
                    m = res.metrics;
                } else if (spec.name == "short_term") {
                    m = evaluate_decisions(*problem, test,
                                           short_term_decisions(dynamic_cast<const CmacProblem&>(*problem), test));
                } else if (spec.name == "fixed" || spec.name == "peak" || spec.name == "random") {
                    Rng rng(s);
                    const Heuristic h = spec.name == "fixed" ? Heuristic::fixed_cmac
                                        : spec.name == "peak" ? Heuristic::peak
                                                              : Heuristic::random;
                    m = evaluate_decisions(*problem, test, heuristic_decisions(h, *problem, test, rng));
                } else if (spec.name == "wmmse") {
                    m = evaluate_decisions(*problem, test,
                                           wmmse_decisions(dynamic_cast<const IfcProblem&>(*problem), test));
                } else if (spec.name == "supervised") {
                    SupervisedConfig sc;
                    sc.seed = s;
                    auto net = train_supervised(dynamic_cast<const IfcProblem&>(*problem), sc);
                    m = evaluate(net, *problem, test, Mode::eval);
                } else {
                    throw std::invalid_argument("unknown method " + spec.name);
                }
                detail::fill_metrics(row, *problem, m);
            } catch (const std::exception& e) {
                row.status = std::string("error: ") + e.what();
                row.metric_mean = row.metric_ci = row.max_rel_violation = std::numeric_limits<double>::quiet_NaN();
                row.feasible = false;
            }
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

/// Every (seed, operating point) runs as one task on a pool of worker threads.
/// Rows come back in a fixed order regardless of scheduling.
inline ResultTable run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    struct Task {
        double snr, pp;
        std::uint64_t seed;
    };
    std::vector<Task> tasks;
    for (double pp : cfg.pp_ratio)
        for (double snr : cfg.snr_db)
            for (std::uint64_t seed : cfg.seeds) tasks.push_back({snr, pp, seed});
    std::vector<std::vector<ResultRow>> out(tasks.size());
    const std::filesystem::path dir(cfg.out_dir);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t k = next++; k < tasks.size(); k = next++)
            out[k] = run_point(cfg, tasks[k].snr, tasks[k].pp, tasks[k].seed, dir);
    };
    unsigned n = cfg.threads > 0 ? unsigned(cfg.threads) : std::max(1u, std::thread::hardware_concurrency());
    n = std::min<unsigned>(n, unsigned(tasks.size()));
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < n; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();

    ResultTable table;
    for (auto& rows : out)
        for (auto& r : rows) table.rows.push_back(std::move(r));
    // Paired comparison: every row at a (seed, point) saw the same test set.
    std::map<std::tuple<double, double, std::uint64_t>, std::uint64_t> seen;
    for (const auto& r : table.rows) {
        auto [it, fresh] = seen.emplace(std::tuple{r.snr_db, r.pp_ratio, r.seed}, r.test_hash);
        if (!fresh && it->second != r.test_hash) throw std::logic_error("test set differs between methods");
    }
    return table;
}

// ---------------------------------------------------------------------------
// Plot specifications
// ---------------------------------------------------------------------------

/// A line chart drawn from the results CSV: every series selects rows by
/// column equality and averages metric_mean over seeds at each x.
struct PlotSeries {
    std::string label;
    std::vector<std::pair<std::string, std::string>> where;
    bool hline = false;  // constant reference drawn across the x range
};

struct PlotSpec {
    std::string name;
    std::string title;
    std::string data = "results.csv";
    std::string x;
    std::string y = "metric_mean";
    std::string xlabel, ylabel;
    std::vector<std::pair<std::string, std::string>> where;  // applies to all series
    std::vector<PlotSeries> series;

    void write(std::ostream& os) const {
        os << "plotspec 1\n";
        os << "title " << title << '\n';
        os << "data " << data << '\n';
        os << "x " << x << '\n';
        os << "y " << y << '\n';
        os << "xlabel " << xlabel << '\n';
        os << "ylabel " << ylabel << '\n';
        for (auto& [k, v] : where) os << "where " << k << '=' << v << '\n';
        for (const auto& s : series) {
            os << "series" << (s.hline ? " hline" : "");
            for (auto& [k, v] : s.where) os << ' ' << k << '=' << v;
            os << " | " << s.label << '\n';
        }
    }
};

inline std::string method_label(const std::string& m) {
    static const std::map<std::string, std::string> names{
        {"centralized", "Centralized DNN"}, {"oracle", "Optimal"},       {"short_term", "Short-term constraint"},
        {"fixed", "Fixed allocation"},      {"wmmse", "WMMSE"},          {"naive", "Naive DNN"},
        {"peak", "Peak power"},             {"random", "Random power"},  {"supervised", "Supervised"}};
    auto it = names.find(m);
    return it == names.end() ? m : it->second;
}

/// One chart against SNR per peak/average ratio and, when several backhaul
/// budgets are swept, one chart against B per SNR.
inline std::vector<PlotSpec> make_plotspecs(const ExperimentConfig& cfg, const ResultTable& table) {
    std::vector<PlotSpec> specs;
    const ProblemId pid = cfg.problem;
    const std::string metric = pid == ProblemId::p3 ? "Average sum capacity (nats)"
                               : pid == ProblemId::p4 ? "Average sum rate (nats)"
                                                      : "Average max-min rate (nats)";
    auto fmt = [](double v) {
        char b[32];
        std::snprintf(b, sizeof b, "%.17g", v);
        return std::string(b);
    };
    for (double pp : cfg.pp_ratio) {
        PlotSpec s;
        s.name = cfg.name + "_snr" + (cfg.pp_ratio.size() > 1 ? "_pp" + fmt(pp) : "");
        s.title = cfg.name + ": " + metric + " vs SNR" + (pid != ProblemId::p3 ? " (P_P/P_A = " + fmt(pp) + ")" : "");
        s.x = "snr_db";
        s.xlabel = "SNR (dB)";
        s.ylabel = metric;
        s.where.push_back({"pp_ratio", fmt(pp)});
        for (const auto& m : cfg.methods) {
            if (MethodSpec::parse(m).name == "distributed") {
                for (double b : cfg.backhaul_bits)
                    s.series.push_back({"Distributed DNN, B=" + fmt(b), {{"method", m}, {"backhaul_bits", fmt(b)}}});
            } else {
                s.series.push_back({method_label(m), {{"method", m}}});
            }
        }
        specs.push_back(s);
    }
    const bool has_dist = std::any_of(cfg.methods.begin(), cfg.methods.end(),
                                      [](const auto& m) { return MethodSpec::parse(m).name == "distributed"; });
    if (has_dist && cfg.backhaul_bits.size() > 1) {
        for (double pp : cfg.pp_ratio)
            for (double snr : cfg.snr_db) {
                PlotSpec s;
                s.name = cfg.name + "_bits_snr" + fmt(snr) + (cfg.pp_ratio.size() > 1 ? "_pp" + fmt(pp) : "");
                s.title = cfg.name + ": " + metric + " vs B at " + fmt(snr) + " dB";
                s.x = "backhaul_bits";
                s.xlabel = "Backhaul bits B";
                s.ylabel = metric;
                s.where = {{"pp_ratio", fmt(pp)}, {"snr_db", fmt(snr)}};
                for (const auto& m : cfg.methods) {
                    if (MethodSpec::parse(m).name == "distributed")
                        s.series.push_back({"Distributed DNN", {{"method", m}}});
                    else
                        s.series.push_back({method_label(m), {{"method", m}}, true});
                }
                specs.push_back(s);
            }
    }
    (void)table;
    return specs;
}

/// Writes results.csv and one <name>.plotspec per chart into cfg.out_dir.
inline std::vector<std::filesystem::path> emit(const ExperimentConfig& cfg, const ResultTable& table) {
    if (table.rows.empty()) throw std::invalid_argument("emit: empty result table");
    const std::filesystem::path dir(cfg.out_dir);
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> files;
    {
        auto p = dir / "results.csv";
        std::ofstream os(p);
        table.write_csv(os);
        if (!os) throw std::runtime_error("cannot write " + p.string());
        files.push_back(p);
    }
    for (const auto& spec : make_plotspecs(cfg, table)) {
        auto p = dir / (spec.name + ".plotspec");
        std::ofstream os(p);
        spec.write(os);
        if (!os) throw std::runtime_error("cannot write " + p.string());
        files.push_back(p);
    }
    return files;
}

/// Mean over seeds of each (method, snr, B, pp) group, for quick reporting.
struct SummaryRow {
    std::string method;
    double snr_db, backhaul_bits, pp_ratio;
    double mean = 0, spread = 0;  // mean and sample std over seeds
    int seeds = 0;
    bool all_feasible = true;
};

inline std::vector<SummaryRow> summarize(const ResultTable& t) {
    std::map<std::tuple<std::string, double, double, double>, std::vector<const ResultRow*>> groups;
    std::vector<std::tuple<std::string, double, double, double>> order;
    for (const auto& r : t.rows) {
        auto key = std::tuple{r.method, r.snr_db, r.backhaul_bits, r.pp_ratio};
        if (!groups.count(key)) order.push_back(key);
        groups[key].push_back(&r);
    }
    std::vector<SummaryRow> out;
    for (const auto& key : order) {
        const auto& g = groups[key];
        SummaryRow s{std::get<0>(key), std::get<1>(key), std::get<2>(key), std::get<3>(key)};
        double sum = 0, sq = 0;
        for (auto* r : g) {
            sum += r->metric_mean;
            sq += r->metric_mean * r->metric_mean;
            s.all_feasible = s.all_feasible && r->feasible;
        }
        s.seeds = int(g.size());
        s.mean = sum / s.seeds;
        s.spread = s.seeds > 1 ? std::sqrt(std::max(0.0, (sq - s.seeds * s.mean * s.mean) / (s.seeds - 1))) : 0.0;
        out.push_back(s);
    }
    return out;
}

}  // namespace pdnet
