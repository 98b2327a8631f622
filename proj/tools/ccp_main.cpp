// ccp: generate synthetic scenario datasets, run the CCP pipeline against a
// supervised baseline, sweep the scenario grid, and aggregate reports.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ccp/config.hpp"
#include "ccp/engine.hpp"
#include "ccp/report.hpp"
#include "ccp/scenarios.hpp"

namespace {

struct CommonFlags {
    std::string config_path;
    std::string out;
    std::string scenario;
    int severity = 0;
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool single_iteration = false;
    bool no_subsample = false;
    bool no_pretrain = false;
};

void add_common_flags(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "experiment config file (key = value lines)");
    cmd->add_option("--out", flags.out, "output directory");
    cmd->add_option("--scenario", flags.scenario,
                    "base, few-label, open-set, noisy-label, imbalance-U, imbalance-L");
    cmd->add_option("--severity", flags.severity, "scenario severity (1-3)")
        ->check(CLI::Range(1, 3));
    auto* seed_opt = cmd->add_option("--seed", flags.seed, "run seed");
    seed_opt->each([&flags](const std::string&) { flags.seed_set = true; });
    cmd->add_flag("--single-iteration", flags.single_iteration, "run exactly one CCP iteration");
    cmd->add_flag("--no-subsample", flags.no_subsample, "disable D_KL subsampling");
    cmd->add_flag("--no-pretrain", flags.no_pretrain, "skip the SimCLR warmup");
}

ccp::ExperimentConfig resolve_config(const CommonFlags& flags) {
    ccp::ExperimentConfig cfg;
    if (!flags.config_path.empty()) cfg = ccp::parse_config_file(flags.config_path);
    if (!flags.out.empty()) cfg.out = flags.out;
    if (!flags.scenario.empty()) cfg.scenario = flags.scenario;
    if (flags.severity != 0) cfg.severity = flags.severity;
    if (flags.seed_set) cfg.seed = flags.seed;
    if (flags.single_iteration) cfg.single_iteration = true;
    if (flags.no_subsample) cfg.subsampling = false;
    if (flags.no_pretrain) cfg.pretrain = false;
    ccp::validate_config(cfg, flags.config_path.empty() ? "<defaults>" : flags.config_path);
    return cfg;
}

ccp::ScenarioDataset dataset_for(const ccp::ExperimentConfig& cfg, std::uint64_t seed) {
    if (!cfg.dataset.empty())
        return ccp::load_scenario(cfg.dataset, ccp::test_path_for(cfg.dataset));
    return ccp::generate_scenario(ccp::to_scenario_spec(cfg, seed));
}

int cmd_generate(const CommonFlags& flags) {
    ccp::ExperimentConfig cfg = resolve_config(flags);
    std::filesystem::create_directories(cfg.out);
    ccp::ScenarioDataset ds = ccp::generate_scenario(ccp::to_scenario_spec(cfg, cfg.seed));
    std::string train_path = cfg.out + "/dataset.csv";
    std::string test_path = ccp::test_path_for(train_path);
    ccp::write_samples_csv(train_path, ds.train, ds.feature_dim);
    ccp::write_samples_csv(test_path, ds.test, ds.feature_dim);
    std::cout << "wrote " << train_path << " (" << ds.train.size() << " rows: "
              << ds.labeled_count() << " labeled, " << ds.unlabeled_count() << " unlabeled)\n";
    std::cout << "wrote " << test_path << " (" << ds.test.size() << " rows)\n";
    return 0;
}

void write_run_outputs(const std::string& dir, const ccp::PipelineResult& result,
                       ccp::Engine* engine) {
    std::filesystem::create_directories(dir);
    if (result.ran_ccp) ccp::write_metrics_csv(dir + "/metrics.csv", result.iterations);
    ccp::write_report_json(dir + "/report.json", result);
    if (engine != nullptr && engine->config().trace_samples > 0)
        ccp::write_trace_csv(dir + "/trace.csv", engine->trace_rows(), engine->dataset().num_classes);
    if (engine != nullptr) {
        ccp::ModelState final_model = engine->model();
        if (final_model.ema) final_model.params = *final_model.ema;
        ccp::save_checkpoint(final_model, dir + "/model.ckpt");
    }
}

int cmd_run(const CommonFlags& flags, bool baseline_only) {
    ccp::ExperimentConfig cfg = resolve_config(flags);
    ccp::ScenarioDataset ds = dataset_for(cfg, cfg.seed);
    ccp::Engine engine(ds, ccp::to_run_config(cfg, cfg.seed));
    ccp::PipelineResult result =
        baseline_only ? engine.run_baseline_only() : engine.run_full_pipeline();
    write_run_outputs(cfg.out, result, baseline_only ? nullptr : &engine);

    std::cout << "scenario=" << result.scenario << " severity=" << result.severity
              << " seed=" << result.seed << "\n";
    std::cout << "baseline_test_acc=" << result.baseline_test_accuracy << "\n";
    if (result.ran_ccp) {
        std::cout << "ccp_test_acc=" << result.ccp_test_accuracy << "\n";
        if (!result.iterations.empty())
            std::cout << "final_pseudo_label_acc="
                      << result.iterations.back().pseudo_label_accuracy << "\n";
    }
    return 0;
}

int cmd_sweep(const CommonFlags& flags) {
    ccp::ExperimentConfig cfg = resolve_config(flags);
    std::vector<ccp::GridCell> grid;
    if (!flags.scenario.empty()) {
        if (flags.scenario == "base") {
            grid.push_back({"base", 0});
        } else if (flags.severity != 0) {
            grid.push_back({flags.scenario, flags.severity});
        } else {
            for (int sev = 1; sev <= 3; ++sev) grid.push_back({flags.scenario, sev});
        }
    } else {
        grid = ccp::full_grid();
    }

    ccp::AggregateReport report = ccp::run_sweep(cfg, grid, ccp::sweep_thread_count());
    ccp::write_aggregate_csv(cfg.out + "/aggregate.csv", report);
    ccp::write_medians_csv(cfg.out + "/medians.csv", report);

    int failed = 0;
    for (const auto& cell : report.cells) {
        if (cell.failed) {
            ++failed;
            std::cout << cell.cell.scenario << " s" << cell.cell.severity
                      << ": FAILED (" << cell.error << ")\n";
            continue;
        }
        std::cout << cell.cell.scenario << " s" << cell.cell.severity
                  << ": baseline=" << cell.baseline_median() << " ccp=" << cell.ccp_median()
                  << (cell.ccp_wins() ? "" : "  [below baseline]") << "\n";
    }
    std::cout << "wrote " << cfg.out << "/aggregate.csv and " << cfg.out << "/medians.csv\n";
    return failed == 0 ? 0 : 1;
}

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out) {
    ccp::write_series_from_runs(run_dirs, out.empty() ? "." : out);
    std::cout << "wrote series_accuracy.csv and series_strength.csv ("
              << run_dirs.size() << " runs)\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Contrastive credibility propagation at desk scale"};
    app.require_subcommand(1);

    CommonFlags gen_flags, run_flags, base_flags, sweep_flags;
    std::vector<std::string> report_dirs;
    std::string report_out;

    CLI::App* generate = app.add_subcommand("generate", "synthesize a scenario dataset");
    add_common_flags(generate, gen_flags);
    CLI::App* run = app.add_subcommand("run", "run the CCP pipeline and the supervised baseline");
    add_common_flags(run, run_flags);
    CLI::App* baseline = app.add_subcommand("baseline", "run only the supervised baseline");
    add_common_flags(baseline, base_flags);
    CLI::App* sweep = app.add_subcommand("sweep", "run the scenario grid across seeds");
    add_common_flags(sweep, sweep_flags);
    CLI::App* report = app.add_subcommand("report", "aggregate plot-ready series from run dirs");
    report->add_option("dirs", report_dirs, "run directories containing metrics.csv");
    report->add_option("--out", report_out, "output directory for the series files");

    try {
        app.parse(argc, argv);
        if (generate->parsed()) return cmd_generate(gen_flags);
        if (run->parsed()) return cmd_run(run_flags, false);
        if (baseline->parsed()) return cmd_run(base_flags, true);
        if (sweep->parsed()) return cmd_sweep(sweep_flags);
        if (report->parsed()) return cmd_report(report_dirs, report_out);
        return 2;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const ccp::InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ccp::ContractError& e) {
        std::cerr << "contract violation: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
