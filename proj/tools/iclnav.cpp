// Command-line front end: train, eval, sweep, plot, validate.
// Exit codes: 0 success, 1 diagnosable input/config error, 2 internal error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "iclnav/config.hpp"
#include "iclnav/plot.hpp"
#include "iclnav/sweep.hpp"
#include "iclnav/trainer.hpp"

namespace fs = std::filesystem;
using namespace iclnav;

namespace {

/// ICLNAV_OUTPUT_ROOT redirects run output to <root>/<run name> without
/// touching the config file.
void apply_output_root(ConfigTable& table) {
    const char* root = std::getenv("ICLNAV_OUTPUT_ROOT");
    if (!root || !*root) return;
    detail_config::Reader r{table, nullptr};
    std::string name = r.str("run", "name", "run");
    table.set("run", "output_dir", (fs::path(root) / name).string());
}

ConfigTable load_table(const std::string& config_path, const std::vector<std::string>& sets) {
    ConfigTable table = parse_config_file(config_path);
    for (const std::string& s : sets) apply_override(table, s);
    apply_output_root(table);
    return table;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& sets) {
    fs::path dir = fs::path(config_path).parent_path();
    ConfigTable table = load_table(config_path, sets);
    RunConfig cfg = load_run_config(table, dir);
    std::cout << "run " << cfg.name << ": " << cfg.episodes << " episodes, "
              << cfg.seeds.size() << " seed(s), output " << cfg.output_dir << "\n";
    std::vector<SeedResult> results = train_run(cfg);
    for (const SeedResult& r : results) {
        std::cout << "seed " << r.seed << ": final stage " << r.final_stage_position
                  << ", final-window success " << r.final_window_success
                  << " (greedy " << r.final_eval_success << ")"
                  << ", mean return " << r.mean_return;
        if (r.episodes_to_threshold)
            std::cout << ", threshold at episode " << *r.episodes_to_threshold;
        std::cout << "\n  " << r.run_dir << "\n";
    }
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint, int episodes,
             uint64_t seed, const std::string& report_path,
             const std::vector<std::string>& sets) {
    fs::path dir = fs::path(config_path).parent_path();
    ConfigTable table = load_table(config_path, sets);
    RunConfig cfg = load_run_config(table, dir);
    EvalReport report = evaluate_checkpoint(cfg, checkpoint, episodes, seed);
    std::cout << "evaluated " << report.episodes << " greedy episode(s) at stage "
              << report.goal_stage << "\n";
    for (const auto& [object, stats] : report.per_object) {
        std::cout << "  " << object << ": success " << stats.success_rate() << " ("
                  << stats.successes << "/" << stats.episodes << "), mean steps "
                  << stats.mean_steps() << "\n";
    }
    if (report.episodes > 0)
        std::cout << "overall: success " << report.overall_success << ", mean steps "
                  << report.mean_steps << "\n";
    if (!report_path.empty()) {
        nlohmann::json j{{"episodes", report.episodes},
                         {"goal_stage", report.goal_stage},
                         {"overall_success", report.overall_success},
                         {"mean_steps", report.mean_steps}};
        for (const auto& [object, stats] : report.per_object)
            j["per_object"][object] = {{"episodes", stats.episodes},
                                       {"successes", stats.successes},
                                       {"success_rate", stats.success_rate()},
                                       {"mean_steps", stats.mean_steps()}};
        std::ofstream out(report_path);
        if (!out) throw ConfigError("cannot open report path " + report_path);
        out << j.dump(2) << '\n';
    }
    return 0;
}

int cmd_sweep(const std::string& config_path, int jobs, const std::vector<std::string>& sets) {
    fs::path dir = fs::path(config_path).parent_path();
    ConfigTable table = load_table(config_path, sets);
    SweepSpec spec = parse_sweep(table, dir);
    std::vector<SweepCell> cells = expand_cells(spec);
    std::cout << "sweep: " << cells.size() << " cell(s), output " << spec.output_dir << "\n";
    std::vector<SweepRow> rows = run_sweep(spec, dir, jobs);
    int failed = 0;
    for (const SweepRow& row : rows) {
        if (row.ok) {
            std::cout << "  " << row.cell.dir_name << ": ok, final-window success "
                      << row.result.final_window_success << "\n";
        } else {
            ++failed;
            std::cout << "  " << row.cell.dir_name << ": FAILED: " << row.error << "\n";
        }
    }
    std::cout << "summary: " << (fs::path(spec.output_dir) / "summary.csv").string() << "\n";
    if (failed > 0) std::cout << failed << " cell(s) failed; their rows are marked\n";
    return 0;
}

int cmd_plot(const std::vector<std::string>& files, const std::string& out_dir, int window,
             bool use_eval, bool by_object) {
    PlotRequest req;
    req.metrics_files = files;
    req.out_dir = out_dir;
    req.window = window;
    req.use_eval = use_eval;
    req.by_object = by_object;
    PlotOutputs out = run_plot(req);
    std::cout << out.success_svg << "\n" << out.return_svg << "\n" << out.csv_path << "\n";
    return 0;
}

int cmd_validate(const std::vector<std::string>& files) {
    int problems = 0;
    for (const std::string& file : files) {
        std::vector<std::string> findings;
        fs::path dir = fs::path(file).parent_path();
        try {
            ConfigTable table = parse_config_file(file);
            ConfigTable base = table;
            base.sections.erase("sweep");
            findings = lint_run_config(base, dir);
            if (table.sections.count("sweep")) {
                SweepSpec spec = parse_sweep(table, dir);
                for (const SweepCell& cell : expand_cells(spec)) {
                    for (const std::string& f : lint_run_config(cell.table, dir))
                        findings.push_back(cell.dir_name + ": " + f);
                }
            }
        } catch (const Error& e) {
            findings.push_back(e.what());
        }
        if (findings.empty()) {
            std::cout << file << ": OK\n";
        } else {
            problems += static_cast<int>(findings.size());
            std::cout << file << ": " << findings.size() << " finding(s)\n";
            for (const std::string& f : findings) std::cout << "  " << f << "\n";
        }
    }
    return problems == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Instruction-following gridworld agent: training and analysis"};
    app.require_subcommand(1);

    std::string config_path, checkpoint, report_path, out_dir;
    std::vector<std::string> sets, files;
    int episodes = 100, window = 100, jobs = 1;
    uint64_t seed = 1;
    bool use_eval = false, by_object = false;

    CLI::App* train = app.add_subcommand("train", "Train per the config, one run per seed");
    train->add_option("--config", config_path, "run config file")->required();
    train->add_option("--set", sets, "override section.key=value (repeatable)");

    CLI::App* eval = app.add_subcommand("eval", "Greedy evaluation of a checkpoint");
    eval->add_option("--config", config_path, "run config file")->required();
    eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    eval->add_option("--episodes", episodes, "evaluation episodes (default 100)");
    eval->add_option("--seed", seed, "task sampling seed (default 1)");
    eval->add_option("--report", report_path, "also write a JSON report here");
    eval->add_option("--set", sets, "override section.key=value (repeatable)");

    CLI::App* sweep = app.add_subcommand("sweep", "Run every cell of a parameter sweep");
    sweep->add_option("--config", config_path, "sweep config file")->required();
    sweep->add_option("--jobs", jobs, "parallel cells (default 1)");
    sweep->add_option("--set", sets, "override section.key=value (repeatable)");

    CLI::App* plot = app.add_subcommand("plot", "Render metrics to SVG charts and CSV");
    plot->add_option("files", files, "metrics.jsonl files")->required()->expected(-1);
    plot->add_option("--out", out_dir, "output directory")->required();
    plot->add_option("--window", window, "smoothing window (default 100)");
    plot->add_flag("--eval", use_eval, "plot greedy evaluation episodes");
    plot->add_flag("--by-object", by_object, "one series per target object");

    CLI::App* validate = app.add_subcommand("validate", "Lint config files");
    validate->add_option("files", files, "config files")->required()->expected(-1);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (train->parsed()) return cmd_train(config_path, sets);
        if (eval->parsed()) return cmd_eval(config_path, checkpoint, episodes, seed,
                                            report_path, sets);
        if (sweep->parsed()) return cmd_sweep(config_path, jobs, sets);
        if (plot->parsed()) return cmd_plot(files, out_dir, window, use_eval, by_object);
        if (validate->parsed()) return cmd_validate(files);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
