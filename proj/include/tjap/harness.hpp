#pragma once

// Experiment orchestration: JSON run configs, seed derivation, the cell
// grid (algorithm × H × repetition), per-run CSVs, the aggregate curve and a
// manifest, plus an independent verification pass over written results.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "environment.hpp"
#include "errors.hpp"
#include "policy.hpp"
#include "rng.hpp"

#ifndef TJAP_VERSION_STRING
#define TJAP_VERSION_STRING "0.1.0"
#endif

namespace tjap {

using json = nlohmann::json;

inline const std::vector<std::string>& registered_algorithms() {
    static const std::vector<std::string> names{"tjap", "pool", "target_only", "topk_pricing", "clairvoyant"};
    return names;
}

inline constexpr const char* kCsvHeader = "algorithm,H,d,s0,N,K,seed,t,cum_regret,forced,episode";

struct RunConfig {
    ScenarioConfig scenario;
    std::vector<int> sources{0};
    std::vector<std::string> algorithms{"tjap"};
    int repetitions = 1;
    std::uint64_t master_seed = 1;
    std::string output_dir = "results";
    int parallelism = 1;
    PolicyConfig policy;
    json echo;
};

inline std::uint64_t scenario_seed(std::uint64_t master, int repetition) {
    return hash_combine(master, hash_string("scenario"), static_cast<std::uint64_t>(repetition));
}

/// Run seed of one cell; the scenario seed of the same repetition is shared
/// by every algorithm and every H.
inline std::uint64_t seed_derivation(std::uint64_t master, const std::string& algorithm, int H, int repetition) {
    return hash_combine(master, hash_string(algorithm), static_cast<std::uint64_t>(H),
                        static_cast<std::uint64_t>(repetition));
}

inline json default_config_json() {
    return json{
        {"scenario",
         {{"d", 10}, {"N", 30}, {"K", 5}, {"s0", 2}, {"delta", 0.1}, {"T", 2000},
          {"L0", ScenarioConfig{}.sensitivity_floor}, {"max_utility", nullptr},
          {"gamma_low", ScenarioConfig{}.gamma_low}, {"gamma_high", ScenarioConfig{}.gamma_high},
          {"max_gamma_scale", ScenarioConfig{}.max_gamma_scale}, {"source_policy", "uniform"}}},
        {"H", {0, 1, 3, 5}},
        {"algorithms", {"tjap", "pool"}},
        {"repetitions", 10},
        {"master_seed", 20240601},
        {"output_dir", "results"},
        {"grid_points", 512},
        {"parallelism", 1},
        {"estimation",
         {{"c_alpha", EstimationConfig{}.c_alpha}, {"c_lambda", EstimationConfig{}.c_lambda},
          {"c_beta", EstimationConfig{}.c_beta}, {"lambda0", EstimationConfig{}.lambda0},
          {"tol", EstimationConfig{}.tol}, {"newton_max_iters", EstimationConfig{}.newton_max_iters},
          {"prox_max_iters", EstimationConfig{}.prox_max_iters}}},
        {"policy",
         {{"kappa", PolicyConfig{}.kappa}, {"c_gate", PolicyConfig{}.c_gate},
          {"forced_cap_fraction", PolicyConfig{}.forced_cap_fraction}, {"covariate_weights", false}}},
    };
}

namespace detail {

inline int line_of_offset(const std::string& text, std::size_t offset) {
    offset = std::min(offset, text.size());
    return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

/// Line of the first occurrence of "key" in the source text, 0 if absent.
inline int line_of_key(const std::string& text, const std::string& key) {
    const auto pos = text.find("\"" + key + "\"");
    return pos == std::string::npos ? 0 : line_of_offset(text, pos);
}

class ConfigReader {
public:
    explicit ConfigReader(const std::string& text) : text_(text) {}

    [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
        const int line = line_of_key(text_, key);
        throw ConfigError((line > 0 ? "line " + std::to_string(line) + ": " : std::string{}) + "'" + key + "' " + msg,
                          line);
    }

    void only_keys(const json& obj, const std::string& where, std::initializer_list<const char*> keys) const {
        if (!obj.is_object()) fail(where, "must be an object");
        const std::set<std::string> allowed(keys.begin(), keys.end());
        for (const auto& [k, v] : obj.items())
            if (!allowed.count(k)) fail(k, "is not a recognised key in '" + where + "'");
    }

    template <class T>
    void read(const json& obj, const char* key, T& out) const {
        if (!obj.contains(key)) return;
        try {
            out = obj.at(key).get<T>();
        } catch (const json::exception&) {
            fail(key, "has the wrong type");
        }
    }

private:
    const std::string& text_;
};

}  // namespace detail

/// Parses and validates a config document. Errors carry the source line.
inline RunConfig parse_run_config(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        const int line = detail::line_of_offset(text, e.byte == 0 ? 0 : e.byte - 1);
        throw ConfigError("line " + std::to_string(line) + ": malformed JSON", line);
    }
    detail::ConfigReader rd(text);
    rd.only_keys(doc, "config", {"scenario", "H", "algorithms", "repetitions", "master_seed", "output_dir",
                                 "grid_points", "parallelism", "estimation", "policy"});
    RunConfig cfg;
    cfg.echo = doc;

    if (doc.contains("scenario")) {
        const json& s = doc["scenario"];
        rd.only_keys(s, "scenario", {"d", "N", "K", "s0", "delta", "T", "L0", "max_utility", "source_policy",
                                     "max_gamma_scale", "gamma_low", "gamma_high"});
        auto& sc = cfg.scenario;
        rd.read(s, "d", sc.d);
        rd.read(s, "N", sc.num_items);
        rd.read(s, "K", sc.capacity);
        rd.read(s, "s0", sc.s0);
        rd.read(s, "delta", sc.delta);
        rd.read(s, "T", sc.horizon);
        rd.read(s, "L0", sc.sensitivity_floor);
        rd.read(s, "max_gamma_scale", sc.max_gamma_scale);
        rd.read(s, "gamma_low", sc.gamma_low);
        rd.read(s, "gamma_high", sc.gamma_high);
        if (s.contains("max_utility") && !s["max_utility"].is_null()) rd.read(s, "max_utility", sc.max_utility);
        std::string sp = "uniform";
        rd.read(s, "source_policy", sp);
        if (sp == "uniform") sc.source_policy = SourcePolicy::Uniform;
        else if (sp == "greedy") sc.source_policy = SourcePolicy::Greedy;
        else rd.fail("source_policy", "must be \"uniform\" or \"greedy\"");
    }
    rd.read(doc, "H", cfg.sources);
    rd.read(doc, "algorithms", cfg.algorithms);
    rd.read(doc, "repetitions", cfg.repetitions);
    rd.read(doc, "master_seed", cfg.master_seed);
    rd.read(doc, "output_dir", cfg.output_dir);
    rd.read(doc, "parallelism", cfg.parallelism);
    rd.read(doc, "grid_points", cfg.policy.grid_points);
    cfg.scenario.grid_points = cfg.policy.grid_points;

    if (doc.contains("estimation")) {
        const json& e = doc["estimation"];
        rd.only_keys(e, "estimation", {"c_alpha", "c_lambda", "c_beta", "lambda0", "tol", "newton_max_iters",
                                       "prox_max_iters", "eta_total"});
        auto& est = cfg.policy.estimation;
        rd.read(e, "c_alpha", est.c_alpha);
        rd.read(e, "c_lambda", est.c_lambda);
        rd.read(e, "c_beta", est.c_beta);
        rd.read(e, "lambda0", est.lambda0);
        rd.read(e, "tol", est.tol);
        rd.read(e, "newton_max_iters", est.newton_max_iters);
        rd.read(e, "prox_max_iters", est.prox_max_iters);
        rd.read(e, "eta_total", est.eta_total);
        try {
            est.validate();
        } catch (const DomainError& err) {
            rd.fail("estimation", err.what());
        }
    }
    if (doc.contains("policy")) {
        const json& p = doc["policy"];
        rd.only_keys(p, "policy", {"kappa", "c_gate", "forced_cap_fraction", "cov_floor", "covariate_weights"});
        rd.read(p, "kappa", cfg.policy.kappa);
        rd.read(p, "c_gate", cfg.policy.c_gate);
        rd.read(p, "forced_cap_fraction", cfg.policy.forced_cap_fraction);
        rd.read(p, "cov_floor", cfg.policy.cov_floor);
        rd.read(p, "covariate_weights", cfg.policy.covariate_weights);
        if (!(cfg.policy.kappa > 0.0)) rd.fail("kappa", "must be positive");
        if (!(cfg.policy.c_gate > 0.0)) rd.fail("c_gate", "must be positive");
        if (!(cfg.policy.forced_cap_fraction >= 0.0 && cfg.policy.forced_cap_fraction <= 1.0))
            rd.fail("forced_cap_fraction", "must lie in [0, 1]");
    }

    const auto& sc = cfg.scenario;
    if (sc.d < 1) rd.fail("d", "must be at least 1");
    if (sc.num_items < 1) rd.fail("N", "must be at least 1");
    if (sc.capacity < 1 || sc.capacity > sc.num_items) rd.fail("K", "must lie in [1, N]");
    if (sc.s0 < 0 || sc.s0 > 2 * sc.d) rd.fail("s0", "must lie in [0, 2d]");
    if (sc.horizon < 2 * sc.d + 2) rd.fail("T", "must be at least 2d + 2");
    if (!(sc.delta >= 0.0)) rd.fail("delta", "must be non-negative");
    if (!(sc.sensitivity_floor > 0.0)) rd.fail("L0", "must be positive");
    if (!(sc.gamma_low > 0.0 && sc.gamma_high >= sc.gamma_low)) rd.fail("gamma_high", "needs 0 < gamma_low <= gamma_high");
    if (!(sc.max_gamma_scale >= 1.0)) rd.fail("max_gamma_scale", "must be at least 1");
    if (cfg.policy.grid_points < 2) rd.fail("grid_points", "must be at least 2");
    if (cfg.repetitions < 1) rd.fail("repetitions", "must be at least 1");
    if (cfg.parallelism < 1) rd.fail("parallelism", "must be at least 1");
    if (cfg.sources.empty()) rd.fail("H", "must list at least one value");
    for (int h : cfg.sources)
        if (h < 0) rd.fail("H", "values must be non-negative");
    if (cfg.algorithms.empty()) rd.fail("algorithms", "must list at least one algorithm");
    for (const auto& a : cfg.algorithms) {
        const auto& reg = registered_algorithms();
        if (std::find(reg.begin(), reg.end(), a) == reg.end()) rd.fail("algorithms", "contains unknown '" + a + "'");
    }
    return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

// ---------------------------------------------------------------------------
// CSV rows

struct ResultRow {
    std::string algorithm;
    int H = 0, d = 0, s0 = 0, N = 0, K = 0;
    std::string seed;  // decimal run seed, or "mean" in the aggregate
    int t = 0;
    double cum_regret = 0.0;
    double forced = 0.0;
    int episode = 0;
};

inline std::string format_g9(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

inline std::string format_row(const ResultRow& r) {
    std::string s = r.algorithm;
    for (int v : {r.H, r.d, r.s0, r.N, r.K}) s += "," + std::to_string(v);
    s += "," + r.seed + "," + std::to_string(r.t) + "," + format_g9(r.cum_regret) + "," + format_g9(r.forced) + "," +
         std::to_string(r.episode);
    return s;
}

inline ResultRow parse_row(const std::string& line) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 11) throw DomainError("CSV row has " + std::to_string(f.size()) + " fields: " + line);
    ResultRow r;
    r.algorithm = f[0];
    r.H = std::stoi(f[1]);
    r.d = std::stoi(f[2]);
    r.s0 = std::stoi(f[3]);
    r.N = std::stoi(f[4]);
    r.K = std::stoi(f[5]);
    r.seed = f[6];
    r.t = std::stoi(f[7]);
    r.cum_regret = std::stod(f[8]);
    r.forced = std::stod(f[9]);
    r.episode = std::stoi(f[10]);
    return r;
}

inline bool should_log(int t, int horizon) { return horizon <= 4096 || t % 8 == 0 || t == horizon; }

inline std::vector<ResultRow> rows_from_records(const std::vector<RegretRecord>& recs, const std::string& algorithm,
                                                const ScenarioConfig& sc, std::uint64_t seed) {
    std::vector<ResultRow> rows;
    for (const auto& r : recs) {
        if (!should_log(r.t, sc.horizon)) continue;
        ResultRow row{algorithm, sc.num_sources, sc.d, sc.s0, sc.num_items, sc.capacity, std::to_string(seed),
                      r.t, r.cum_regret, static_cast<double>(r.forced_so_far), r.episode};
        // round-trip through the printed form so aggregates are reproducible from files
        row.cum_regret = std::stod(format_g9(row.cum_regret));
        rows.push_back(row);
    }
    return rows;
}

inline void write_csv(const std::filesystem::path& path, const std::vector<ResultRow>& rows) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << kCsvHeader << '\n';
    for (const auto& r : rows) out << format_row(r) << '\n';
}

inline std::vector<ResultRow> read_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != kCsvHeader) throw DomainError(path.string() + ": unexpected header");
    std::vector<ResultRow> rows;
    while (std::getline(in, line))
        if (!line.empty()) rows.push_back(parse_row(line));
    return rows;
}

/// Mean curve over runs that share (algorithm, H); rows are matched by t.
inline std::vector<ResultRow> mean_curve(const std::vector<std::vector<ResultRow>>& runs) {
    if (runs.empty()) return {};
    std::vector<ResultRow> out = runs.front();
    for (std::size_t k = 0; k < out.size(); ++k) {
        double reg = 0.0, forced = 0.0;
        for (const auto& run : runs) {
            if (run.size() != out.size() || run[k].t != out[k].t) throw DomainError("mean_curve: round grids differ");
            reg += run[k].cum_regret;
            forced += run[k].forced;
        }
        out[k].seed = "mean";
        out[k].cum_regret = reg / static_cast<double>(runs.size());
        out[k].forced = forced / static_cast<double>(runs.size());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Orchestration

struct Cell {
    std::string algorithm;
    int H = 0;
    int repetition = 0;
    std::uint64_t seed = 0;
    std::uint64_t scenario_seed = 0;
    std::string file;  // relative to the output directory
    bool ok = false;
    std::string error;
    double final_cum_regret = 0.0;
    int forced_rounds = 0;
    std::vector<ResultRow> rows;
};

struct ExperimentResult {
    std::vector<Cell> cells;
    int exit_code = 0;
    double wall_clock_seconds = 0.0;
};

inline std::vector<Cell> enumerate_cells(const RunConfig& cfg) {
    std::vector<Cell> cells;
    for (const auto& alg : cfg.algorithms)
        for (int h : cfg.sources)
            for (int rep = 0; rep < cfg.repetitions; ++rep) {
                Cell c;
                c.algorithm = alg;
                c.H = h;
                c.repetition = rep;
                c.seed = seed_derivation(cfg.master_seed, alg, h, rep);
                c.scenario_seed = scenario_seed(cfg.master_seed, rep);
                c.file = "runs/" + alg + "_H" + std::to_string(h) + "_rep" + std::to_string(rep) + ".csv";
                cells.push_back(std::move(c));
            }
    return cells;
}

inline void run_cell(const RunConfig& cfg, Cell& cell) {
    ScenarioConfig sc = cfg.scenario;
    sc.num_sources = cell.H;
    const MarketScenario scenario = generate_scenario(sc, cell.scenario_seed);
    auto policy = make_policy(cell.algorithm, scenario, cfg.policy, cell.seed);
    const auto recs = run_policy(scenario, *policy, sc.horizon);
    cell.rows = rows_from_records(recs, cell.algorithm, sc, cell.seed);
    cell.final_cum_regret = recs.empty() ? 0.0 : recs.back().cum_regret;
    cell.forced_rounds = recs.empty() ? 0 : recs.back().forced_so_far;
}

/// Runs every cell on a bounded pool of worker threads, then writes the
/// per-run CSVs, aggregate.csv and manifest.json into `out_dir`.
inline ExperimentResult run_experiment(const RunConfig& cfg, const std::filesystem::path& out_dir, int workers,
                                       const std::function<void(const std::string&)>& log = {}) {
    namespace fs = std::filesystem;
    const auto start = std::chrono::steady_clock::now();
    ExperimentResult res;
    res.cells = enumerate_cells(cfg);
    fs::create_directories(out_dir / "runs");

    std::atomic<std::size_t> next{0};
    std::mutex log_mu;
    auto worker = [&] {
        for (std::size_t i = next++; i < res.cells.size(); i = next++) {
            Cell& c = res.cells[i];
            try {
                run_cell(cfg, c);
                write_csv(out_dir / c.file, c.rows);
                c.ok = true;
            } catch (const std::exception& e) {
                c.ok = false;
                c.error = e.what();
            }
            if (log) {
                std::lock_guard lock(log_mu);
                log(c.algorithm + " H=" + std::to_string(c.H) + " rep=" + std::to_string(c.repetition) +
                    (c.ok ? " ok, regret " + format_g9(c.final_cum_regret) : " FAILED: " + c.error));
            }
        }
    };
    const int n = std::max(1, std::min<int>(workers, static_cast<int>(res.cells.size())));
    std::vector<std::thread> pool;
    for (int k = 1; k < n; ++k) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();

    std::vector<ResultRow> aggregate;
    for (const auto& alg : cfg.algorithms)
        for (int h : cfg.sources) {
            std::vector<std::vector<ResultRow>> runs;
            for (const auto& c : res.cells)
                if (c.ok && c.algorithm == alg && c.H == h) runs.push_back(c.rows);
            const auto curve = mean_curve(runs);
            aggregate.insert(aggregate.end(), curve.begin(), curve.end());
        }
    write_csv(out_dir / "aggregate.csv", aggregate);

    res.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    json cells = json::array();
    bool any_failed = false;
    for (const auto& c : res.cells) {
        json jc{{"algorithm", c.algorithm}, {"H", c.H},       {"repetition", c.repetition},
                {"seed", c.seed},           {"scenario_seed", c.scenario_seed},
                {"status", c.ok ? "ok" : "failed"}};
        if (c.ok) {
            jc["file"] = c.file;
            jc["final_cum_regret"] = c.final_cum_regret;
            jc["forced_rounds"] = c.forced_rounds;
        } else {
            jc["error"] = c.error;
            any_failed = true;
        }
        cells.push_back(jc);
    }
    json manifest{{"version", TJAP_VERSION_STRING},
                  {"config", cfg.echo},
                  {"wall_clock_seconds", res.wall_clock_seconds},
                  {"aggregate", "aggregate.csv"},
                  {"cells", cells}};
    std::ofstream(out_dir / "manifest.json", std::ios::binary | std::ios::trunc) << manifest.dump(2) << '\n';
    res.exit_code = any_failed ? 1 : 0;
    return res;
}

struct VerifyReport {
    bool ok = true;
    std::vector<std::string> problems;
};

/// Recomputes aggregate.csv from the per-run CSVs listed in the manifest.
inline VerifyReport verify_results(const std::filesystem::path& out_dir) {
    VerifyReport rep;
    auto problem = [&](std::string msg) {
        rep.ok = false;
        rep.problems.push_back(std::move(msg));
    };
    json manifest;
    {
        std::ifstream in(out_dir / "manifest.json");
        if (!in) {
            problem("manifest.json missing");
            return rep;
        }
        try {
            in >> manifest;
        } catch (const json::exception& e) {
            problem(std::string("manifest.json unreadable: ") + e.what());
            return rep;
        }
    }
    std::map<std::pair<std::string, int>, std::vector<std::vector<ResultRow>>> groups;
    std::vector<std::pair<std::string, int>> order;
    try {
        for (const auto& c : manifest.at("cells")) {
            const auto key = std::make_pair(c.at("algorithm").get<std::string>(), c.at("H").get<int>());
            if (std::find(order.begin(), order.end(), key) == order.end()) order.push_back(key);
            if (c.at("status") != "ok") continue;
            groups[key].push_back(read_csv(out_dir / c.at("file").get<std::string>()));
        }
        std::vector<std::string> expected;
        for (const auto& key : order)
            for (const auto& r : mean_curve(groups[key])) expected.push_back(format_row(r));
        std::vector<std::string> actual;
        for (const auto& r : read_csv(out_dir / "aggregate.csv")) actual.push_back(format_row(r));
        if (actual.size() != expected.size())
            problem("aggregate has " + std::to_string(actual.size()) + " rows, expected " +
                    std::to_string(expected.size()));
        for (std::size_t i = 0; i < std::min(actual.size(), expected.size()); ++i)
            if (actual[i] != expected[i]) {
                problem("aggregate row " + std::to_string(i + 2) + " is '" + actual[i] + "', recomputed '" +
                        expected[i] + "'");
                break;
            }
    } catch (const std::exception& e) {
        problem(e.what());
    }
    return rep;
}

}  // namespace tjap
