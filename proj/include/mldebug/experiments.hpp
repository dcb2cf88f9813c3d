#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "mldebug/conditions.hpp"
#include "mldebug/csv.hpp"
#include "mldebug/game.hpp"
#include "mldebug/lasso.hpp"
#include "mldebug/synth.hpp"
#include "mldebug/tuning.hpp"

namespace mldebug {

using json = nlohmann::json;

inline constexpr const char* kLibraryVersion = "0.1.0";

struct ConfigError : Error {
    using Error::Error;
};

namespace expdetail {

inline void check_keys(const json& obj, const std::vector<std::string>& allowed,
                       const std::string& where) {
    if (!obj.is_object()) throw ConfigError(where + ": expected an object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
            throw ConfigError(where + ": unknown key '" + it.key() + "'");
    }
}

template <typename T>
T get_or(const json& obj, const std::string& key, T fallback) {
    if (!obj.contains(key)) return fallback;
    return obj.at(key).get<T>();
}

template <typename T>
T require(const json& obj, const std::string& key, const std::string& where) {
    if (!obj.contains(key)) throw ConfigError(where + ": missing key '" + key + "'");
    return obj.at(key).get<T>();
}

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hash_hex(const json& canonical) {
    char buf[19];
    std::snprintf(buf, sizeof buf, "0x%016llx",
                  static_cast<unsigned long long>(fnv1a64(canonical.dump())));
    return buf;
}

inline json finite_or_null(double v) {
    if (std::isfinite(v)) return v;
    return nullptr;
}

/// Runs fn(trial) over a bounded worker pool; one failed trial is recorded,
/// not fatal.
template <typename Fn>
std::vector<json> parallel_trials(long trials, int threads, Fn&& fn) {
    std::vector<json> results(static_cast<size_t>(trials));
    if (trials == 0) return results;
    threads = std::max(1, std::min<int>(threads, static_cast<int>(trials)));
    std::atomic<long> next{0};
    auto worker = [&] {
        for (;;) {
            long i = next.fetch_add(1);
            if (i >= trials) return;
            try {
                results[static_cast<size_t>(i)] = fn(i);
            } catch (const std::exception& e) {
                results[static_cast<size_t>(i)] = json{{"error", e.what()}};
            }
        }
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < threads; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    return results;
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                              std::uint64_t c = 0) {
    Rng r(seed ^ (a * 0x9e3779b97f4a7c15ULL) ^ (b << 20) ^ (c << 40));
    return r.next_u64();
}

// --------------------------------------------------------------------------
// data loading shared by debug / tune / conditions
// --------------------------------------------------------------------------

struct LoadedData {
    ContaminatedPool pool;
    std::optional<GroundTruth> truth;
    json canonical;
};

inline LoadedData load_data(const json& cfg) {
    check_keys(cfg, {"csv", "synth"}, "data");
    LoadedData out;
    if (cfg.contains("csv") == cfg.contains("synth"))
        throw ConfigError("data: exactly one of 'csv' or 'synth' required");
    if (cfg.contains("csv")) {
        const json& c = cfg.at("csv");
        check_keys(c, {"path", "label_column", "header"}, "data.csv");
        std::string path = require<std::string>(c, "path", "data.csv");
        std::string label = require<std::string>(c, "label_column", "data.csv");
        bool header = get_or(c, "header", true);
        LoadedCsv loaded = load_csv(path, label, header);
        out.pool = std::move(loaded.pool);
        out.canonical = {{"csv", {{"path", path}, {"label_column", label}, {"header", header}}}};
    } else {
        const json& s = cfg.at("synth");
        check_keys(s, {"n", "p", "t", "c_t", "sigma_star", "bug_law", "bug_constant", "seed"},
                   "data.synth");
        SynthSpec spec;
        spec.n = require<long>(s, "n", "data.synth");
        spec.p = require<long>(s, "p", "data.synth");
        if (s.contains("t") == s.contains("c_t"))
            throw ConfigError("data.synth: exactly one of 't' or 'c_t' required");
        spec.t = s.contains("t") ? s.at("t").get<long>()
                                 : t_from_fraction(s.at("c_t").get<double>(), spec.n);
        spec.sigma_star = get_or(s, "sigma_star", 0.0);
        std::string law = get_or<std::string>(s, "bug_law", "paper_c3");
        if (law == "paper_c3") {
            spec.bug_law = BugLaw::kPaperC3;
        } else if (law == "constant") {
            spec.bug_law = BugLaw::kConstant;
            spec.bug_constant = require<double>(s, "bug_constant", "data.synth");
        } else {
            throw ConfigError("data.synth: unknown bug_law '" + law + "'");
        }
        spec.seed = get_or<std::uint64_t>(s, "seed", 0);
        auto [pool, truth] = generate(spec);
        out.pool = std::move(pool);
        out.truth = std::move(truth);
        json canon = {{"n", spec.n},         {"p", spec.p},
                      {"t", spec.t},         {"sigma_star", spec.sigma_star},
                      {"bug_law", law},      {"seed", spec.seed}};
        if (spec.bug_law == BugLaw::kConstant) canon["bug_constant"] = spec.bug_constant;
        out.canonical = {{"synth", canon}};
    }
    return out;
}

struct LoadedClean {
    CleanPool clean;
    json canonical;  // null when absent
};

inline LoadedClean load_clean(const json& cfg, const LoadedData& data) {
    LoadedClean out;
    out.clean = CleanPool::empty(data.pool.p());
    out.canonical = nullptr;
    if (!cfg.contains("clean")) return out;
    const json& c = cfg.at("clean");
    check_keys(c, {"csv", "requery", "eta"}, "clean");
    double eta = require<double>(c, "eta", "clean");
    if (c.contains("csv") == c.contains("requery"))
        throw ConfigError("clean: exactly one of 'csv' or 'requery' required");
    if (c.contains("csv")) {
        const json& cc = c.at("csv");
        check_keys(cc, {"path", "label_column", "header"}, "clean.csv");
        LoadedCsv loaded = load_csv(require<std::string>(cc, "path", "clean.csv"),
                                    require<std::string>(cc, "label_column", "clean.csv"),
                                    get_or(cc, "header", true));
        out.clean.X = std::move(loaded.pool.X);
        out.clean.y = std::move(loaded.pool.y);
        out.clean.eta = eta;
        out.canonical = {{"csv", cc}, {"eta", eta}};
    } else {
        if (!data.truth)
            throw ConfigError("clean.requery needs synthetic data (labels come from truth)");
        IndexSet D;
        for (long i : c.at("requery").get<std::vector<long>>()) D.push_back(i);
        out.clean = generate_clean_pool(data.pool, *data.truth, D, eta);
        out.canonical = {{"requery", c.at("requery")}, {"eta", eta}};
    }
    return out;
}

inline json solution_json(const LassoSolution& sol, bool emit_gamma) {
    json flagged = json::array();
    for (Index i : sol.support)
        flagged.push_back({{"index", i}, {"gamma", sol.gamma_hat[i]}});
    json out{{"support", sol.support},
             {"flagged", flagged},
             {"beta_hat", std::vector<double>(sol.beta_hat.data(),
                                              sol.beta_hat.data() + sol.beta_hat.size())},
             {"lambda", sol.lambda},
             {"kkt_residual", sol.kkt_residual},
             {"converged", sol.converged},
             {"iterations", sol.iterations}};
    if (emit_gamma)
        out["gamma_hat"] = std::vector<double>(sol.gamma_hat.data(),
                                               sol.gamma_hat.data() + sol.gamma_hat.size());
    return out;
}

}  // namespace expdetail

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline json run_debug(const json& cfg) {
    using namespace expdetail;
    check_keys(cfg, {"data", "clean", "lambda", "emit_gamma", "tol", "max_iter"}, "debug");
    LoadedData data = load_data(require<json>(cfg, "data", "debug"));
    LoadedClean clean = load_clean(cfg, data);
    double lambda = require<double>(cfg, "lambda", "debug");
    bool emit_gamma = get_or(cfg, "emit_gamma", false);
    SolverOptions opts;
    opts.tol = get_or(cfg, "tol", kKktTol);
    opts.max_iter = get_or<long>(cfg, "max_iter", 0);

    json canonical{{"data", data.canonical}, {"lambda", lambda},
                   {"emit_gamma", emit_gamma}, {"tol", opts.tol},
                   {"max_iter", opts.max_iter}};
    if (!clean.canonical.is_null()) canonical["clean"] = clean.canonical;

    StackedSystem sys = build_stacked(data.pool, clean.clean);
    LassoSolution sol = solve_gamma(sys, lambda, opts);
    json result = solution_json(sol, emit_gamma);
    result["n"] = data.pool.n();
    result["p"] = data.pool.p();
    if (data.truth) {
        result["true_support"] = data.truth->support;
        result["exact_recovery"] = sol.support == data.truth->support;
    }
    return json{{"canonical", canonical}, {"result", result}};
}

inline json run_tune(const json& cfg) {
    using namespace expdetail;
    check_keys(cfg, {"data", "clean", "c_bar", "lambda_u", "halving_factor", "max_rounds"},
               "tune");
    LoadedData data = load_data(require<json>(cfg, "data", "tune"));
    LoadedClean clean = load_clean(cfg, data);
    StackedSystem sys = build_stacked(data.pool, clean.clean);

    TuningConfig tc;
    tc.c_bar = get_or(cfg, "c_bar", kDefaultCBar);
    tc.halving_factor = get_or(cfg, "halving_factor", 2.0);
    tc.max_rounds = get_or<long>(cfg, "max_rounds", 64);
    tc.lambda_u = get_or(cfg, "lambda_u", 0.0);
    bool auto_lambda_u = tc.lambda_u == 0.0;
    if (auto_lambda_u) tc.lambda_u = default_lambda_u(sys);

    json canonical{{"data", data.canonical},
                   {"c_bar", tc.c_bar},
                   {"lambda_u", auto_lambda_u ? json(nullptr) : json(tc.lambda_u)},
                   {"halving_factor", tc.halving_factor},
                   {"max_rounds", tc.max_rounds}};
    if (!clean.canonical.is_null()) canonical["clean"] = clean.canonical;

    TuningResult res = select_lambda(sys, tc);
    json rounds = json::array();
    for (const auto& r : res.trace.rounds)
        rounds.push_back({{"lambda", r.lambda},
                          {"support_size", r.support_size},
                          {"sigma_hat", r.sigma_hat},
                          {"stop_stat", r.stop_stat},
                          {"threshold", r.threshold},
                          {"stopped", r.stopped}});
    json result{{"lambda_u", tc.lambda_u},
                {"lambda_hat", res.lambda_hat},
                {"stopped", res.trace.status == TuningTrace::Status::kConverged},
                {"rounds", rounds},
                {"solution", solution_json(res.solution, false)}};
    if (data.truth) {
        result["true_support"] = data.truth->support;
        result["exact_recovery"] = res.solution.support == data.truth->support;
    }
    return json{{"canonical", canonical}, {"result", result}};
}

inline json run_conditions(const json& cfg) {
    using namespace expdetail;
    check_keys(cfg, {"data", "clean", "T", "lambda", "etas"}, "conditions");
    LoadedData data = load_data(require<json>(cfg, "data", "conditions"));
    LoadedClean clean = load_clean(cfg, data);
    double lambda = require<double>(cfg, "lambda", "conditions");

    IndexSet T;
    if (cfg.contains("T")) {
        for (long i : cfg.at("T").get<std::vector<long>>()) T.push_back(i);
    } else if (data.truth) {
        T = data.truth->support;
    } else {
        throw ConfigError("conditions: 'T' required for CSV data");
    }

    json canonical{{"data", data.canonical}, {"lambda", lambda}, {"T", T}};
    if (!clean.canonical.is_null()) canonical["clean"] = clean.canonical;
    if (cfg.contains("etas")) canonical["etas"] = cfg.at("etas");

    StackedSystem sys = build_stacked(data.pool, clean.clean);
    const GroundTruth* truth = data.truth ? &*data.truth : nullptr;
    ConditionReport rep = check_conditions(sys, T, lambda, truth);
    json result{{"b_min", rep.b_min},
                {"alpha", rep.alpha ? json(*rep.alpha) : json(nullptr)},
                {"gamma_min_bound",
                 rep.gamma_min_bound ? json(*rep.gamma_min_bound) : json(nullptr)},
                {"lambda_star", rep.lambda_star ? json(*rep.lambda_star) : json(nullptr)},
                {"verdict_eigen", rep.verdict_eigen},
                {"verdict_incoherence", rep.verdict_incoherence},
                {"verdict_gamma", rep.verdict_gamma},
                {"certified", rep.certified},
                {"has_truth", rep.has_truth}};
    if (cfg.contains("etas")) {
        auto etas = cfg.at("etas").get<std::vector<double>>();
        DebugProblem prob{data.pool, clean.clean};
        json sweep = json::array();
        for (auto [eta, bmin] : eigenvalue_sweep(prob, T, etas))
            sweep.push_back({{"eta", eta}, {"b_min", bmin}});
        result["eigenvalue_sweep"] = sweep;
    }
    return json{{"canonical", canonical}, {"result", result}};
}

inline json run_game(const json& cfg, int threads) {
    using namespace expdetail;
    check_keys(cfg,
               {"n", "p", "t", "m", "eta", "strategy", "design", "trials", "seed",
                "lambda_grid", "lambda_fractions", "bug_magnitude"},
               "game");
    const Index n = require<long>(cfg, "n", "game");
    const Index p = require<long>(cfg, "p", "game");
    const Index t = require<long>(cfg, "t", "game");
    const Index m = get_or<long>(cfg, "m", 0);
    const double eta = get_or(cfg, "eta", 1.0);
    const long trials = require<long>(cfg, "trials", "game");
    const std::uint64_t seed = get_or<std::uint64_t>(cfg, "seed", 0);
    const std::string design = get_or<std::string>(cfg, "design", "gaussian");
    const std::string strategy_name = get_or<std::string>(cfg, "strategy", "leverage");
    DebugStrategy strategy = strategy_from_string(strategy_name);
    std::vector<double> fractions =
        get_or(cfg, "lambda_fractions",
               std::vector<double>{0.25, 1.0 / 64.0, 1.0 / 1024.0});
    std::optional<std::vector<double>> fixed_grid;
    if (cfg.contains("lambda_grid"))
        fixed_grid = cfg.at("lambda_grid").get<std::vector<double>>();
    const double bug_magnitude = get_or(cfg, "bug_magnitude", 0.0);
    if (design != "gaussian" && design != "orthogonal_skewed")
        throw ConfigError("game: unknown design '" + design + "'");
    if (design == "orthogonal_skewed" && n != 2 * p)
        throw ConfigError("game: orthogonal_skewed requires n = 2p");

    json canonical{{"n", n},        {"p", p},
                   {"t", t},        {"m", m},
                   {"eta", eta},    {"strategy", strategy_name},
                   {"design", design}, {"trials", trials},
                   {"seed", seed},  {"bug_magnitude", bug_magnitude},
                   {"lambda_fractions", fractions}};
    if (fixed_grid) canonical["lambda_grid"] = *fixed_grid;

    auto trial_fn = [&](long trial) -> json {
        std::uint64_t ts = mix_seed(seed, static_cast<std::uint64_t>(trial), 17);
        Rng rng(ts);
        GameInstance gi;
        if (design == "gaussian") {
            gi.pool.X = rng.gaussian_matrix(n, p);
        } else {
            // orthogonal-leaning pairs: heavy (weight ~2) and light (weight ~1)
            // points per direction, so incoherence fails by construction
            Matrix Z = rng.gaussian_matrix(p, p);
            Eigen::HouseholderQR<Matrix> qr(Z);
            Matrix Q = qr.householderQ() * Matrix::Identity(p, p);
            gi.pool.X.resize(2 * p, p);
            for (Index j = 0; j < p; ++j) {
                gi.pool.X.row(2 * j) = rng.uniform(1.8, 2.2) * Q.col(j).transpose();
                gi.pool.X.row(2 * j + 1) = rng.uniform(0.8, 1.2) * Q.col(j).transpose();
            }
        }
        gi.beta_star = rng.gaussian_vector(p);
        gi.pool.y = gi.pool.X * gi.beta_star;
        gi.t = t;
        gi.m = m;
        gi.eta = eta;
        gi.bug_magnitude =
            bug_magnitude > 0.0 ? bug_magnitude : default_bug_magnitude(gi.pool.y);

        std::vector<double> grid;
        if (fixed_grid) {
            grid = *fixed_grid;
        } else {
            for (double f : fractions)
                grid.push_back(gi.bug_magnitude * f / static_cast<double>(n));
        }
        GameOutcome out = generator_search(gi, strategy, grid, ts);
        json j{{"trial", trial},
               {"recovered", out.recovered},
               {"schemes_tested", out.schemes_tested},
               {"in_theory_regime", gi.in_theory_regime()}};
        if (!out.recovered) j["fooling_scheme"] = out.scheme;
        if (!out.D.empty()) j["D"] = out.D;
        return j;
    };

    auto trial_results = parallel_trials(trials, threads, trial_fn);
    long successes = 0, errors = 0;
    for (const auto& r : trial_results) {
        if (r.contains("error"))
            ++errors;
        else if (r.at("recovered").get<bool>())
            ++successes;
    }
    json result{{"successes", successes},
                {"trials", trials},
                {"errors", errors},
                {"success_rate",
                 trials > 0 ? static_cast<double>(successes) / trials : 0.0},
                {"per_trial", trial_results}};
    return json{{"canonical", canonical}, {"result", result}};
}

inline json run_sweep(const json& cfg, int threads) {
    using namespace expdetail;
    check_keys(cfg,
               {"n", "c_t", "p", "sigma_star", "trials", "seed", "lambda_multiples",
                "algorithm1", "c_bar"},
               "sweep");
    std::vector<long> n_list = cfg.at("n").is_array()
                                   ? cfg.at("n").get<std::vector<long>>()
                                   : std::vector<long>{cfg.at("n").get<long>()};
    std::vector<double> ct_list = require<std::vector<double>>(cfg, "c_t", "sweep");
    const Index p = require<long>(cfg, "p", "sweep");
    const double sigma = require<double>(cfg, "sigma_star", "sweep");
    const long trials = require<long>(cfg, "trials", "sweep");
    const std::uint64_t seed = get_or<std::uint64_t>(cfg, "seed", 0);
    std::vector<double> multiples =
        get_or(cfg, "lambda_multiples", std::vector<double>{});
    const bool use_alg1 = get_or(cfg, "algorithm1", false);
    const double c_bar = get_or(cfg, "c_bar", 0.2);
    if (multiples.empty() && !use_alg1)
        throw ConfigError("sweep: need lambda_multiples and/or algorithm1");

    json canonical{{"n", n_list},        {"c_t", ct_list},
                   {"p", p},             {"sigma_star", sigma},
                   {"trials", trials},   {"seed", seed},
                   {"lambda_multiples", multiples}, {"algorithm1", use_alg1},
                   {"c_bar", c_bar}};

    json cells = json::array();
    for (size_t ni = 0; ni < n_list.size(); ++ni) {
        const Index n = n_list[ni];
        const double lambda0 = std::sqrt(std::log(2.0 * n)) * sigma / n;
        for (size_t ci = 0; ci < ct_list.size(); ++ci) {
            const Index t = t_from_fraction(ct_list[ci], n);
            auto trial_fn = [&, n, t](long trial) -> json {
                SynthSpec spec;
                spec.n = n;
                spec.p = p;
                spec.t = t;
                spec.sigma_star = sigma;
                spec.seed = mix_seed(seed, ni, ci, static_cast<std::uint64_t>(trial));
                auto [pool, truth] = generate(spec);
                StackedSystem sys = build_stacked(pool, CleanPool::empty(p));
                json res{{"trial", trial}};
                for (double mult : multiples) {
                    LassoSolution sol = solve_gamma(sys, mult * lambda0);
                    res["fixed"].push_back(
                        {{"multiple", mult},
                         {"exact", sol.support == truth.support}});
                }
                if (use_alg1) {
                    TuningConfig tc;
                    tc.lambda_u = default_lambda_u(sys);
                    tc.c_bar = c_bar;
                    try {
                        TuningResult tr = select_lambda(sys, tc);
                        res["algorithm1"] = {
                            {"lambda_hat", tr.lambda_hat},
                            {"rounds", tr.trace.rounds.size()},
                            {"exact", tr.solution.support == truth.support}};
                    } catch (const Error& e) {
                        res["algorithm1"] = {{"error", e.what()}, {"exact", false}};
                    }
                }
                return res;
            };
            auto per_trial = parallel_trials(trials, threads, trial_fn);

            json cell{{"n", n}, {"c_t", ct_list[ci]}, {"t", t}, {"rates", json::object()}};
            for (size_t mi = 0; mi < multiples.size(); ++mi) {
                long hits = 0, valid = 0;
                for (const auto& r : per_trial) {
                    if (r.contains("error")) continue;
                    ++valid;
                    if (r.at("fixed")[mi].at("exact").get<bool>()) ++hits;
                }
                char key[64];
                std::snprintf(key, sizeof key, "lambda_%gx", multiples[mi]);
                cell["rates"][key] =
                    valid > 0 ? static_cast<double>(hits) / valid : 0.0;
            }
            if (use_alg1) {
                long hits = 0, valid = 0;
                for (const auto& r : per_trial) {
                    if (r.contains("error")) continue;
                    ++valid;
                    if (r.at("algorithm1").at("exact").get<bool>()) ++hits;
                }
                cell["rates"]["algorithm1"] =
                    valid > 0 ? static_cast<double>(hits) / valid : 0.0;
            }
            cell["per_trial"] = per_trial;
            cells.push_back(cell);
        }
    }
    return json{{"canonical", canonical}, {"result", {{"cells", cells}}}};
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

/// Executes one configured experiment and wraps the outcome in a report
/// with a canonical-config hash and timing metadata.
inline json run_experiment(const std::string& command, const json& cfg,
                           int threads = 0) {
    using namespace expdetail;
    if (threads <= 0)
        threads = std::max(1u, std::thread::hardware_concurrency());
    auto start = std::chrono::steady_clock::now();
    json inner;
    if (command == "debug")
        inner = run_debug(cfg);
    else if (command == "tune")
        inner = run_tune(cfg);
    else if (command == "conditions")
        inner = run_conditions(cfg);
    else if (command == "game")
        inner = run_game(cfg, threads);
    else if (command == "sweep")
        inner = run_sweep(cfg, threads);
    else
        throw ConfigError("unknown command '" + command + "'");
    double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    json report{{"command", command},
                {"config", inner.at("canonical")},
                {"config_hash", hash_hex(inner.at("canonical"))},
                {"library_version", kLibraryVersion},
                {"threads", threads},
                {"wall_time_sec", wall},
                {"result", inner.at("result")}};
    return report;
}

/// Emits sweep/game tables as CSV for external plotting.
inline void write_table_csv(const json& report, const std::string& path) {
    std::ofstream f(path);
    if (!f.is_open()) throw Error("cannot open " + path + " for writing");
    const std::string& command = report.at("command").get_ref<const std::string&>();
    if (command == "sweep") {
        f << "n,c_t,rule,success_rate\n";
        for (const auto& cell : report.at("result").at("cells")) {
            for (auto it = cell.at("rates").begin(); it != cell.at("rates").end(); ++it)
                f << cell.at("n") << ',' << cell.at("c_t") << ',' << it.key() << ','
                  << it.value() << '\n';
        }
    } else if (command == "game") {
        f << "trial,recovered\n";
        for (const auto& r : report.at("result").at("per_trial")) {
            if (r.contains("error")) continue;
            f << r.at("trial") << ',' << (r.at("recovered").get<bool>() ? 1 : 0) << '\n';
        }
    } else {
        throw Error("no CSV table for command '" + command + "'");
    }
}

}  // namespace mldebug
