#pragma once

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "ccp/config.hpp"
#include "ccp/engine.hpp"

namespace ccp {

// ---------------------------------------------------------------------------
// Per-run files: metrics.csv (one row per CCP iteration), report.json (final
// summary) and trace.csv (per-sample epoch series when tracing is on).
// ---------------------------------------------------------------------------

inline const char* kMetricsHeader =
    "iteration,epochs_run,pseudo_label_accuracy,mean_strength_correct,"
    "mean_strength_incorrect,p_chosen,d_max,gamma,ema_loss_final";

inline void write_metrics_csv(const std::string& path, const std::vector<IterationMetrics>& rows) {
    std::ofstream os(path);
    if (!os) throw InputError("cannot open for writing: " + path);
    os << kMetricsHeader << "\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%d,%d,%.17g,%.17g,%.17g,%d,%.17g,%.17g,%.17g\n",
                      r.iteration, r.epochs_run, r.pseudo_label_accuracy, r.mean_strength_correct,
                      r.mean_strength_incorrect, r.p_chosen, r.d_max, r.gamma, r.ema_loss_final);
        os << buf;
    }
}

inline std::vector<IterationMetrics> read_metrics_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw InputError("cannot open metrics file: " + path);
    std::string line;
    if (!std::getline(is, line) || line != kMetricsHeader)
        throw InputError("malformed metrics header in " + path);
    std::vector<IterationMetrics> rows;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        IterationMetrics r;
        int n = std::sscanf(line.c_str(), "%d,%d,%lf,%lf,%lf,%d,%lf,%lf,%lf", &r.iteration,
                            &r.epochs_run, &r.pseudo_label_accuracy, &r.mean_strength_correct,
                            &r.mean_strength_incorrect, &r.p_chosen, &r.d_max, &r.gamma,
                            &r.ema_loss_final);
        if (n != 9)
            throw InputError("malformed metrics row at " + path + ":" + std::to_string(line_no));
        rows.push_back(r);
    }
    return rows;
}

// Epochs are numbered cumulatively across iterations so each traced sample
// forms one continuous series.
inline void write_trace_csv(const std::string& path, const std::vector<TraceRow>& rows,
                            std::size_t num_classes) {
    std::ofstream os(path);
    if (!os) throw InputError("cannot open for writing: " + path);
    os << "sample_id,epoch";
    for (std::size_t k = 0; k < num_classes; ++k) os << ",q_" << k;
    os << "\n";

    std::vector<std::pair<int, int>> seen; // (iteration, epoch) in first-seen order
    auto global_epoch = [&](int iteration, int epoch) {
        std::pair<int, int> key{iteration, epoch};
        for (std::size_t i = 0; i < seen.size(); ++i)
            if (seen[i] == key) return i + 1;
        seen.push_back(key);
        return seen.size();
    };

    char buf[40];
    for (const auto& r : rows) {
        os << r.sample << "," << global_epoch(r.iteration, r.epoch);
        for (double v : r.q) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            os << "," << buf;
        }
        os << "\n";
    }
}

inline nlohmann::json report_to_json(const PipelineResult& result) {
    nlohmann::json j;
    j["scenario"] = result.scenario;
    j["severity"] = result.severity;
    j["seed"] = result.seed;
    j["baseline_test_acc"] = result.baseline_test_accuracy;
    if (result.ran_ccp) {
        j["ccp_test_acc"] = result.ccp_test_accuracy;
        nlohmann::json iters = nlohmann::json::array();
        for (const auto& it : result.iterations) {
            iters.push_back({{"iteration", it.iteration},
                             {"epochs_run", it.epochs_run},
                             {"pseudo_label_accuracy", it.pseudo_label_accuracy},
                             {"mean_strength_correct", it.mean_strength_correct},
                             {"mean_strength_incorrect", it.mean_strength_incorrect},
                             {"p_chosen", it.p_chosen},
                             {"d_max", it.d_max},
                             {"gamma", it.gamma},
                             {"ema_loss_final", it.ema_loss_final}});
        }
        j["iterations"] = iters;
    }
    return j;
}

inline void write_report_json(const std::string& path, const PipelineResult& result) {
    std::ofstream os(path);
    if (!os) throw InputError("cannot open for writing: " + path);
    os << report_to_json(result).dump(2) << "\n";
}

inline PipelineResult read_report_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw InputError("cannot open report: " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        throw InputError("malformed report " + path + ": " + e.what());
    }
    PipelineResult r;
    r.scenario = j.at("scenario").get<std::string>();
    r.severity = j.at("severity").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.baseline_test_accuracy = j.at("baseline_test_acc").get<double>();
    if (j.contains("ccp_test_acc")) {
        r.ran_ccp = true;
        r.ccp_test_accuracy = j.at("ccp_test_acc").get<double>();
        for (const auto& it : j.at("iterations")) {
            IterationMetrics m;
            m.iteration = it.at("iteration").get<int>();
            m.epochs_run = it.at("epochs_run").get<int>();
            m.pseudo_label_accuracy = it.at("pseudo_label_accuracy").get<double>();
            m.mean_strength_correct = it.at("mean_strength_correct").get<double>();
            m.mean_strength_incorrect = it.at("mean_strength_incorrect").get<double>();
            m.p_chosen = it.at("p_chosen").get<int>();
            m.d_max = it.at("d_max").get<double>();
            m.gamma = it.at("gamma").get<double>();
            m.ema_loss_final = it.at("ema_loss_final").get<double>();
            r.iterations.push_back(m);
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// Sweep over the scenario grid.
// ---------------------------------------------------------------------------

struct GridCell {
    std::string scenario;
    int severity = 0; // 0 for the base case
};

inline std::vector<GridCell> full_grid() {
    std::vector<GridCell> grid;
    grid.push_back({"base", 0});
    for (const char* s : {"few-label", "open-set", "noisy-label", "imbalance-U", "imbalance-L"})
        for (int sev = 1; sev <= 3; ++sev) grid.push_back({s, sev});
    return grid;
}

struct CellResult {
    GridCell cell;
    std::vector<std::uint64_t> seeds;
    std::vector<double> baseline_accs;
    std::vector<double> ccp_accs;
    bool failed = false;
    std::string error;

    double baseline_median() const;
    double ccp_median() const;
    bool ccp_wins() const { return ccp_median() >= baseline_median(); }
};

inline double median_of(std::vector<double> xs) {
    if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(xs.begin(), xs.end());
    std::size_t mid = xs.size() / 2;
    if (xs.size() % 2 == 1) return xs[mid];
    return 0.5 * (xs[mid - 1] + xs[mid]);
}

inline double CellResult::baseline_median() const { return median_of(baseline_accs); }
inline double CellResult::ccp_median() const { return median_of(ccp_accs); }

struct AggregateReport {
    std::vector<CellResult> cells;
};

inline std::string cell_dir_name(const GridCell& cell, std::uint64_t seed) {
    std::string s = cell.scenario + "_s" + std::to_string(cell.severity) + "_seed" +
                    std::to_string(seed);
    std::replace(s.begin(), s.end(), '/', '_');
    return s;
}

inline std::size_t sweep_thread_count() {
    if (const char* env = std::getenv("CCP_THREADS")) {
        long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return static_cast<std::size_t>(v);
    }
    unsigned hw = std::thread::hardware_concurrency();
    return std::max(1u, std::min(hw, 4u));
}

// Runs every (cell, seed) combination, one engine per task, writing the
// usual per-run files under out/<scenario>_s<sev>_seed<k>/. Failed cells are
// recorded and the sweep continues. The open-set cells follow the single
// CCP iteration protocol unless the config explicitly asked for one anyway.
inline AggregateReport run_sweep(const ExperimentConfig& base_cfg, const std::vector<GridCell>& grid,
                                 std::size_t threads) {
    struct Task {
        std::size_t cell_index;
        std::size_t seed_index;
    };
    std::vector<Task> tasks;
    AggregateReport report;
    for (std::size_t c = 0; c < grid.size(); ++c) {
        CellResult cell;
        cell.cell = grid[c];
        cell.seeds = base_cfg.seeds;
        cell.baseline_accs.assign(base_cfg.seeds.size(), 0.0);
        cell.ccp_accs.assign(base_cfg.seeds.size(), 0.0);
        report.cells.push_back(std::move(cell));
        for (std::size_t s = 0; s < base_cfg.seeds.size(); ++s) tasks.push_back({c, s});
    }

    std::filesystem::create_directories(base_cfg.out);
    std::atomic<std::size_t> next{0};
    std::vector<std::string> errors(tasks.size());

    auto worker = [&]() {
        for (;;) {
            std::size_t t = next.fetch_add(1);
            if (t >= tasks.size()) return;
            const Task& task = tasks[t];
            CellResult& cell = report.cells[task.cell_index];
            std::uint64_t seed = base_cfg.seeds[task.seed_index];
            try {
                ExperimentConfig cfg = base_cfg;
                cfg.scenario = cell.cell.scenario;
                cfg.severity = std::max(1, cell.cell.severity);
                if (cell.cell.scenario == "open-set") cfg.single_iteration = true;

                ScenarioDataset ds = generate_scenario(to_scenario_spec(cfg, seed));
                if (cell.cell.scenario == "base") ds.severity = 0;
                Engine engine(ds, to_run_config(cfg, seed));
                PipelineResult result = engine.run_full_pipeline();

                std::string dir = base_cfg.out + "/" + cell_dir_name(cell.cell, seed);
                std::filesystem::create_directories(dir);
                write_metrics_csv(dir + "/metrics.csv", result.iterations);
                write_report_json(dir + "/report.json", result);

                cell.baseline_accs[task.seed_index] = result.baseline_test_accuracy;
                cell.ccp_accs[task.seed_index] = result.ccp_test_accuracy;
            } catch (const std::exception& e) {
                errors[t] = e.what();
            }
        }
    };

    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < std::max<std::size_t>(1, threads); ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();

    for (std::size_t t = 0; t < tasks.size(); ++t) {
        if (errors[t].empty()) continue;
        CellResult& cell = report.cells[tasks[t].cell_index];
        cell.failed = true;
        if (!cell.error.empty()) cell.error += "; ";
        cell.error += errors[t];
    }
    return report;
}

inline void write_aggregate_csv(const std::string& path, const AggregateReport& report) {
    std::ofstream os(path);
    if (!os) throw InputError("cannot open for writing: " + path);
    os << "scenario,severity,seed,baseline_test_acc,ccp_test_acc\n";
    char buf[128];
    for (const auto& cell : report.cells) {
        if (cell.failed) continue;
        for (std::size_t s = 0; s < cell.seeds.size(); ++s) {
            std::snprintf(buf, sizeof buf, "%s,%d,%llu,%.17g,%.17g\n", cell.cell.scenario.c_str(),
                          cell.cell.severity, static_cast<unsigned long long>(cell.seeds[s]),
                          cell.baseline_accs[s], cell.ccp_accs[s]);
            os << buf;
        }
    }
}

inline void write_medians_csv(const std::string& path, const AggregateReport& report) {
    std::ofstream os(path);
    if (!os) throw InputError("cannot open for writing: " + path);
    os << "scenario,severity,baseline_median,ccp_median,ccp_wins,status\n";
    char buf[160];
    for (const auto& cell : report.cells) {
        if (cell.failed) {
            std::snprintf(buf, sizeof buf, "%s,%d,nan,nan,0,failed\n", cell.cell.scenario.c_str(),
                          cell.cell.severity);
        } else {
            std::snprintf(buf, sizeof buf, "%s,%d,%.17g,%.17g,%d,ok\n", cell.cell.scenario.c_str(),
                          cell.cell.severity, cell.baseline_median(), cell.ccp_median(),
                          cell.ccp_wins() ? 1 : 0);
        }
        os << buf;
    }
}

// ---------------------------------------------------------------------------
// Plot-ready series aggregated from run directories.
// ---------------------------------------------------------------------------

inline void write_series_from_runs(const std::vector<std::string>& run_dirs,
                                   const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    std::ofstream acc(out_dir + "/series_accuracy.csv");
    std::ofstream str(out_dir + "/series_strength.csv");
    if (!acc || !str) throw InputError("cannot open series outputs under " + out_dir);
    acc << "run,iteration,pseudo_label_accuracy\n";
    str << "run,iteration,mean_strength_correct,mean_strength_incorrect\n";
    char buf[160];
    for (const auto& dir : run_dirs) {
        auto rows = read_metrics_csv(dir + "/metrics.csv");
        std::string run = std::filesystem::path(dir).filename().string();
        if (run.empty()) run = dir;
        for (const auto& r : rows) {
            std::snprintf(buf, sizeof buf, "%s,%d,%.17g\n", run.c_str(), r.iteration,
                          r.pseudo_label_accuracy);
            acc << buf;
            std::snprintf(buf, sizeof buf, "%s,%d,%.17g,%.17g\n", run.c_str(), r.iteration,
                          r.mean_strength_correct, r.mean_strength_incorrect);
            str << buf;
        }
    }
}

} // namespace ccp
