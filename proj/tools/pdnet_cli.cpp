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

// Command-line front end: train, eval, sweep, oracle, gradcheck, report.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "pdnet/pdnet.hpp"

namespace fs = std::filesystem;
using namespace pdnet;

namespace {

struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> scale;
    std::optional<std::string> problem;
    std::optional<std::string> method;
    std::optional<double> snr_db;
    std::optional<unsigned> bits;
    std::optional<unsigned> nodes;
    std::optional<long> iterations;
    std::optional<int> threads;
};

void add_flags(CLI::App* cmd, Flags& f) {
    cmd->add_option("--config", f.config, "preset name or key-value config file");
    cmd->add_option("--seed", f.seed, "base seed");
    cmd->add_option("--out", f.out, std::string("output directory (default $") + kOutDirEnv + " or ./results)");
    cmd->add_option("--scale", f.scale, "hyperparameter scale")->check(CLI::IsMember({"paper", "desk"}));
    cmd->add_option("--problem", f.problem, "problem id")->check(CLI::IsMember({"p3", "p4", "p5"}));
    cmd->add_option("--method", f.method, "method name");
    cmd->add_option("--snr-db", f.snr_db, "operating SNR in dB");
    cmd->add_option("--backhaul-bits", f.bits, "bits per directed backhaul link");
    cmd->add_option("--nodes", f.nodes, "number of nodes");
    cmd->add_option("--iterations", f.iterations, "training iterations");
    cmd->add_option("--threads", f.threads, "worker threads for sweeps");
}

ExperimentConfig build_config(const Flags& f) {
    ExperimentConfig c;
    if (!f.config.empty()) c = load_config(f.config);
    if (f.scale && *f.scale == "paper") c.apply_paper_scale();
    if (f.problem) {
        c.problem = problem_from_string(*f.problem);
        if (f.config.empty()) c.nodes = c.problem == ProblemId::p3 ? 2 : 3;
    }
    if (f.nodes) c.nodes = *f.nodes;
    if (f.seed) c.seeds = {*f.seed};
    if (f.out) c.out_dir = *f.out;
    if (f.method) c.methods = {*f.method};
    if (f.snr_db) c.snr_db = {*f.snr_db};
    if (f.bits) c.backhaul_bits = {double(*f.bits)};
    if (f.iterations) c.train.iterations = *f.iterations;
    if (f.threads) c.threads = *f.threads;
    c.validate();
    return c;
}

void print_metrics(const Problem& problem, const Metrics& m) {
    std::printf("%s: %.6f +- %.6f\n", problem.metric_name().c_str(), m.mean_utility, m.ci95);
    const auto names = problem.constraint_names();
    const auto G = problem.bounds();
    for (std::size_t k = 0; k < G.size(); ++k)
        std::printf("  %-14s mean %.6f  bound %.6f  %s\n", names[k].c_str(), m.constraint_means[k], G[k],
                    m.feasible[k] ? "ok" : "VIOLATED");
}

/// Records what `train` produced so `eval` can rebuild the operating point.
void write_meta(const fs::path& dir, const ExperimentConfig& c, const std::string& method) {
    std::ofstream os(dir / "train_meta.txt");
    os << "problem = " << to_string(c.problem) << "\nnodes = " << c.nodes << "\nsnr_db = " << c.snr_db[0]
       << "\npp_ratio = " << c.pp_ratio[0] << "\ngamma = " << c.gamma << "\nbackhaul_bits = " << c.backhaul_bits[0]
       << "\nmethods = " << method << "\nseeds = " << c.seeds[0] << "\ntest_size = " << c.test_size << '\n';
}

int cmd_train(const Flags& f) {
    auto c = build_config(f);
    const std::string method = c.methods.front();
    if (method != "centralized" && method != "distributed")
        throw std::invalid_argument("train: method must be centralized or distributed");
    const double snr = c.snr_db.front(), pp = c.pp_ratio.front(), bits = c.backhaul_bits.front();
    auto problem = make_problem(c.problem, c.nodes, SweepPoint{snr, c.gamma, pp, bits});
    TrainConfig tc = c.train;
    tc.seed = c.seeds.front();
    const fs::path dir(c.out_dir);
    fs::create_directories(dir);
    const Matrix test = test_set_for(*problem, c.seeds.front(), snr, pp, c.test_size);
    Metrics m;
    ConvergenceLog log;
    std::string status;
    if (method == "centralized") {
        Architecture arch = centralized_architecture(*problem);
        if (c.hidden_layers) arch.hidden_layers = *c.hidden_layers;
        if (c.width) arch.width = *c.width;
        auto res = train_centralized(*problem, tc, arch);
        std::ofstream os(dir / "model.txt");
        res.policy.net().save(os);
        m = evaluate(res.policy, *problem, test);
        log = res.log;
        status = res.message;
    } else {
        auto res = train_distributed(*problem, Topology::uniform(c.nodes, bits), tc);
        res.policy.save(dir / "model");
        m = evaluate(res.policy, *problem, test);
        log = res.log;
        status = res.message;
    }
    std::ofstream ls(dir / "convergence.csv");
    log.write_csv(ls);
    write_meta(dir, c, method);
    if (!status.empty()) std::fprintf(stderr, "training stopped early: %s\n", status.c_str());
    print_metrics(*problem, m);
    std::printf("wrote %s\n", dir.string().c_str());
    return status.empty() ? 0 : 1;
}

int cmd_eval(const Flags& f) {
    const fs::path dir(f.out.value_or(default_out_dir()));
    std::ifstream meta(dir / "train_meta.txt");
    if (!meta) throw std::invalid_argument("eval: no train_meta.txt in " + dir.string());
    auto c = parse_config(meta);
    if (f.seed) c.seeds = {*f.seed};
    const double snr = c.snr_db.front(), pp = c.pp_ratio.front();
    auto problem = make_problem(c.problem, c.nodes, SweepPoint{snr, c.gamma, pp, c.backhaul_bits.front()});
    const Matrix test = test_set_for(*problem, c.seeds.front(), snr, pp, c.test_size);
    Metrics m;
    if (c.methods.front() == "centralized") {
        std::ifstream is(dir / "model.txt");
        CentralizedPolicy policy(Mlp::load(is));
        m = evaluate(policy, *problem, test);
    } else {
        auto policy = DistributedPolicy::load(dir / "model");
        m = evaluate(policy, *problem, test);
    }
    print_metrics(*problem, m);
    ResultTable t;
    ResultRow r = detail::base_row(c, c.methods.front(), snr,
                                   c.methods.front() == "distributed" ? c.backhaul_bits.front() : -1.0, pp,
                                   c.seeds.front(), hash_matrix(test));
    detail::fill_metrics(r, *problem, m);
    t.rows.push_back(r);
    std::ofstream os(dir / "eval.csv");
    t.write_csv(os);
    return 0;
}

void print_summary(const ResultTable& t) {
    std::printf("%-28s %8s %6s %6s %12s %10s %5s %s\n", "method", "snr_db", "B", "pp", "mean", "std", "seeds",
                "feasible");
    for (const auto& s : summarize(t))
        std::printf("%-28s %8g %6g %6g %12.6f %10.6f %5d %s\n", s.method.c_str(), s.snr_db, s.backhaul_bits,
                    s.pp_ratio, s.mean, s.spread, s.seeds, s.all_feasible ? "yes" : "no");
}

int cmd_sweep(const Flags& f) {
    if (f.config.empty() && !f.problem) throw std::invalid_argument("sweep: give --config or --problem");
    auto c = build_config(f);
    auto table = run_experiment(c);
    auto files = emit(c, table);
    print_summary(table);
    for (const auto& p : files) std::printf("wrote %s\n", p.string().c_str());
    int failures = 0;
    for (const auto& r : table.rows)
        if (r.status.rfind("error", 0) == 0) ++failures;
    return failures ? 1 : 0;
}

int cmd_oracle(const Flags& f) {
    auto c = build_config(f);
    const double snr = c.snr_db.front(), pp = c.pp_ratio.front();
    auto problem = make_problem(c.problem, c.nodes, SweepPoint{snr, c.gamma, pp, 0});
    const Matrix test = test_set_for(*problem, c.seeds.front(), snr, pp, c.test_size);
    if (auto* cmac = dynamic_cast<const CmacProblem*>(problem.get())) {
        auto res = cmac_dual_oracle(*cmac, test);
        std::printf("dual decomposition: %s after %d iterations, duality gap %.3g\n",
                    res.converged ? "converged" : "NOT converged", res.iterations, res.duality_gap);
        for (std::size_t i = 0; i < res.lambda.size(); ++i) std::printf("  lambda_%zu = %.6g\n", i + 1, res.lambda[i]);
        std::printf("  mu = %.6g\n", res.mu);
        print_metrics(*problem, res.metrics);
        return res.converged ? 0 : 1;
    }
    const auto& ifc = dynamic_cast<const IfcProblem&>(*problem);
    if (ifc.objective() == IfcObjective::sum_rate) {
        std::printf("WMMSE from p = P_A:\n");
        print_metrics(*problem, evaluate_decisions(*problem, test, wmmse_decisions(ifc, test)));
    }
    if (c.nodes <= kGridMaxNodes) {
        const Index n = std::min<Index>(100, test.rows());
        double total = 0;
        for (Index r = 0; r < n; ++r)
            total += grid_oracle(ifc_channel_from_row(row_span(test, r)), ifc.objective(), ifc.peak_power(), 40, 3).value;
        std::printf("grid search, per-realization optimum over %ld samples: %.6f\n", long(n), total / double(n));
    }
    return 0;
}

int cmd_gradcheck(const Flags& f) {
    auto rep = gradcheck_all(f.seed.value_or(1));
    std::map<std::string, std::pair<int, double>> by_name;
    for (const auto& c : rep.cases) {
        auto& e = by_name[c.name];
        ++e.first;
        e.second = std::max(e.second, c.rel_error);
    }
    for (const auto& [name, e] : by_name) std::printf("%-22s %3d cases  worst %.3g\n", name.c_str(), e.first, e.second);
    int failed = 0;
    for (const auto& c : rep.cases)
        if (!c.passed) {
            ++failed;
            std::printf("FAIL %s rel_error %.3g\n", c.name.c_str(), c.rel_error);
        }
    std::printf("%zu cases, %d failed, worst relative error %.3g\n", rep.cases.size(), failed, rep.worst());
    return rep.passed() ? 0 : 1;
}

int cmd_report(const Flags& f) {
    const fs::path dir(f.out.value_or(default_out_dir()));
    std::ifstream is(dir / "results.csv");
    if (!is) throw std::invalid_argument("report: no results.csv in " + dir.string());
    auto table = ResultTable::read_csv(is);
    print_summary(table);
    std::ofstream os(dir / "summary.csv");
    os << "method,snr_db,backhaul_bits,pp_ratio,mean,std,seeds,all_feasible\n";
    for (const auto& s : summarize(table))
        os << s.method << ',' << ResultTable::format_double(s.snr_db) << ',' << ResultTable::format_double(s.backhaul_bits)
           << ',' << ResultTable::format_double(s.pp_ratio) << ',' << ResultTable::format_double(s.mean) << ','
           << ResultTable::format_double(s.spread) << ',' << s.seeds << ',' << (s.all_feasible ? 1 : 0) << '\n';
    std::printf("wrote %s\n", (dir / "summary.csv").string().c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"Primal-dual training of power-control networks"};
    app.require_subcommand(1);
    Flags flags;
    struct Sub {
        const char* name;
        const char* help;
        int (*run)(const Flags&);
    };
    const Sub subs[] = {
        {"train", "train one centralized or distributed policy", cmd_train},
        {"eval", "evaluate a trained policy from --out on its test set", cmd_eval},
        {"sweep", "run an experiment grid and write results.csv and plotspecs", cmd_sweep},
        {"oracle", "run the reference solvers at one operating point", cmd_oracle},
        {"gradcheck", "finite-difference checks of every differentiable op", cmd_gradcheck},
        {"report", "summarize results.csv in --out", cmd_report},
    };
    std::vector<CLI::App*> cmds;
    for (const auto& s : subs) {
        auto* cmd = app.add_subcommand(s.name, s.help);
        add_flags(cmd, flags);
        cmds.push_back(cmd);
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }
    try {
        for (std::size_t k = 0; k < cmds.size(); ++k)
            if (cmds[k]->parsed()) return subs[k].run(flags);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
