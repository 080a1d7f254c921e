#pragma once
// Cartesian parameter sweeps over a base config: one run directory per cell,
// derived seeds, optional thread-pool execution, and a summary CSV with one
// row per cell whether the cell succeeded or not.

#include <atomic>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "iclnav/config.hpp"
#include "iclnav/errors.hpp"
#include "iclnav/plot.hpp"
#include "iclnav/trainer.hpp"

namespace iclnav {

struct SweepAxis {
    std::string key;  // section.key
    std::vector<std::string> values;
};

struct SweepSpec {
    ConfigTable base;  // without the [sweep] section
    std::vector<SweepAxis> axes;
    int repetitions = 1;
    std::string output_dir;
};

/// Reads the [sweep] section: axis.<n>.key / axis.<n>.values pairs numbered
/// from 1, plus repetitions. The rest of the table is the base config.
inline SweepSpec parse_sweep(const ConfigTable& table, const std::filesystem::path& config_dir) {
    auto sweep_it = table.sections.find("sweep");
    if (sweep_it == table.sections.end())
        throw ConfigError("sweep: config has no [sweep] section");

    SweepSpec spec;
    spec.base = table;
    spec.base.sections.erase("sweep");

    const auto& kv = sweep_it->second;
    for (int n = 1;; ++n) {
        std::string prefix = "axis." + std::to_string(n) + ".";
        auto key_it = kv.find(prefix + "key");
        auto val_it = kv.find(prefix + "values");
        if (key_it == kv.end() && val_it == kv.end()) break;
        if (key_it == kv.end() || val_it == kv.end())
            throw ConfigError("sweep." + prefix + "key/values: both parts are required");
        SweepAxis axis;
        axis.key = key_it->second;
        if (axis.key.find('.') == std::string::npos)
            throw ConfigError("sweep." + prefix + "key: wants section.key, got '" + axis.key + "'");
        axis.values = detail_config::split_list(val_it->second);
        if (axis.values.empty())
            throw ConfigError("sweep." + prefix + "values: axis has no values");
        spec.axes.push_back(std::move(axis));
    }
    if (spec.axes.empty()) throw ConfigError("sweep: no axes declared");
    for (const auto& [key, value] : kv) {
        if (key.rfind("axis.", 0) == 0) continue;
        if (key == "repetitions") continue;
        throw ConfigError("sweep." + key + ": unknown key");
    }
    if (auto it = kv.find("repetitions"); it != kv.end()) {
        try {
            spec.repetitions = std::stoi(it->second);
        } catch (const std::exception&) {
            throw ConfigError("sweep.repetitions: '" + it->second + "' is not an integer");
        }
    }
    if (spec.repetitions < 1) throw ConfigError("sweep.repetitions: must be >= 1");

    // Comparisons across curriculum modes are only meaningful with equal
    // training budgets, so refuse the combination that could break parity.
    bool varies_mode = false, varies_budget = false;
    for (const SweepAxis& a : spec.axes) {
        if (a.key == "curriculum.mode") varies_mode = true;
        if (a.key == "run.episodes") varies_budget = true;
    }
    if (varies_mode && varies_budget)
        throw ConfigError("sweep: axes vary curriculum.mode and run.episodes together, "
                          "which breaks budget parity between the compared modes");

    detail_config::Reader r{spec.base, nullptr};
    spec.output_dir =
        detail_config::resolve(config_dir, r.str("run", "output_dir",
                                                 "runs/" + r.str("run", "name", "sweep")));
    return spec;
}

struct SweepCell {
    int index = 0;       // 0-based over combos x repetitions
    int repetition = 0;  // 0-based
    std::vector<std::pair<std::string, std::string>> overrides;  // axis key -> value
    uint64_t seed = 0;
    std::string dir_name;
    ConfigTable table;  // base + overrides + derived seed/output_dir
};

namespace detail_sweep {

inline std::string sanitize(const std::string& s) {
    std::string out;
    for (char c : s) {
        unsigned char u = static_cast<unsigned char>(c);
        out.push_back(std::isalnum(u) || c == '.' || c == '-' ? c : '_');
    }
    return out;
}

inline std::string short_key(const std::string& key) {
    size_t dot = key.rfind('.');
    return dot == std::string::npos ? key : key.substr(dot + 1);
}

}  // namespace detail_sweep

/// Cells in deterministic order: first axis slowest, last axis fastest,
/// repetitions innermost. Cell seed = base seed xor cell index.
inline std::vector<SweepCell> expand_cells(const SweepSpec& spec) {
    detail_config::Reader r{spec.base, nullptr};
    uint64_t base_seed = 1;
    {
        std::vector<std::string> seeds = r.list("run", "seeds");
        if (!seeds.empty())
            base_seed = std::stoull(seeds.front());
        else if (spec.base.has("run", "seed"))
            base_seed = static_cast<uint64_t>(r.integer("run", "seed", 1));
    }

    size_t combos = 1;
    for (const SweepAxis& a : spec.axes) combos *= a.values.size();

    std::vector<SweepCell> cells;
    cells.reserve(combos * static_cast<size_t>(spec.repetitions));
    for (size_t combo = 0; combo < combos; ++combo) {
        std::vector<size_t> pick(spec.axes.size());
        size_t rem = combo;
        for (size_t ai = spec.axes.size(); ai-- > 0;) {
            pick[ai] = rem % spec.axes[ai].values.size();
            rem /= spec.axes[ai].values.size();
        }
        for (int rep = 0; rep < spec.repetitions; ++rep) {
            SweepCell cell;
            cell.index = static_cast<int>(combo) * spec.repetitions + rep;
            cell.repetition = rep;
            cell.seed = base_seed ^ static_cast<uint64_t>(cell.index);
            cell.table = spec.base;
            char idx[16];
            snprintf(idx, sizeof(idx), "cell%03d", cell.index);
            cell.dir_name = idx;
            for (size_t ai = 0; ai < spec.axes.size(); ++ai) {
                const SweepAxis& axis = spec.axes[ai];
                const std::string& value = axis.values[pick[ai]];
                cell.overrides.emplace_back(axis.key, value);
                apply_override(cell.table, axis.key + "=" + value);
                cell.dir_name += "_" + detail_sweep::sanitize(detail_sweep::short_key(axis.key)) +
                                 "-" + detail_sweep::sanitize(value);
            }
            if (spec.repetitions > 1) cell.dir_name += "_rep" + std::to_string(rep);
            cell.table.set("run", "seeds", std::to_string(cell.seed));
            cell.table.sections["run"].erase("seed");
            cell.table.set("run", "output_dir",
                           (std::filesystem::path(spec.output_dir) / "cells" / cell.dir_name)
                               .string());
            cells.push_back(std::move(cell));
        }
    }
    return cells;
}

struct SweepRow {
    SweepCell cell;
    bool ok = false;
    std::string error;
    SeedResult result;  // valid when ok
};

namespace detail_sweep {

inline void run_cell(const SweepCell& cell, const std::filesystem::path& config_dir,
                     SweepRow& row) {
    row.cell = cell;
    try {
        RunConfig cfg = load_run_config(cell.table, config_dir);
        std::vector<SeedResult> results = train_run(cfg);
        row.result = results.front();
        row.ok = true;
    } catch (const std::exception& e) {
        row.ok = false;
        row.error = e.what();
    }
}

}  // namespace detail_sweep

inline void write_sweep_summary(std::ostream& out, const std::vector<SweepAxis>& axes,
                                const std::vector<SweepRow>& rows) {
    out << "cell,repetition,seed";
    for (const SweepAxis& a : axes) out << ',' << detail_plot::csv_escape(a.key);
    out << ",status,episodes,final_stage,final_window_success,final_eval_success,"
           "mean_return,episodes_to_threshold,run_dir,error\n";
    for (const SweepRow& row : rows) {
        out << row.cell.index << ',' << row.cell.repetition << ',' << row.cell.seed;
        for (const auto& [key, value] : row.cell.overrides)
            out << ',' << detail_plot::csv_escape(value);
        if (row.ok) {
            const SeedResult& r = row.result;
            out << ",ok," << r.episodes << ',' << r.final_stage_position << ','
                << detail_plot::fmt(r.final_window_success) << ','
                << detail_plot::fmt(r.final_eval_success) << ','
                << detail_plot::fmt(r.mean_return) << ',';
            if (r.episodes_to_threshold) out << *r.episodes_to_threshold;
            out << ',' << detail_plot::csv_escape(r.run_dir) << ',';
        } else {
            out << ",error,,,,,,,," << detail_plot::csv_escape(row.error);
        }
        out << '\n';
    }
}

/// Runs every cell (jobs > 1 uses a thread pool; cells share nothing) and
/// writes summary.csv plus per-cell success plots. A failing cell is
/// reported in its row and never blocks the others.
inline std::vector<SweepRow> run_sweep(const SweepSpec& spec,
                                       const std::filesystem::path& config_dir, int jobs = 1) {
    if (jobs < 1) throw ConfigError("sweep: jobs must be >= 1");
    std::vector<SweepCell> cells = expand_cells(spec);
    std::vector<SweepRow> rows(cells.size());

    if (jobs == 1 || cells.size() <= 1) {
        for (size_t i = 0; i < cells.size(); ++i)
            detail_sweep::run_cell(cells[i], config_dir, rows[i]);
    } else {
        std::atomic<size_t> next{0};
        auto worker = [&]() {
            while (true) {
                size_t i = next.fetch_add(1);
                if (i >= cells.size()) return;
                detail_sweep::run_cell(cells[i], config_dir, rows[i]);
            }
        };
        std::vector<std::thread> pool;
        size_t n = std::min<size_t>(static_cast<size_t>(jobs), cells.size());
        for (size_t t = 0; t < n; ++t) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }

    std::filesystem::create_directories(spec.output_dir);
    {
        std::ofstream f(std::filesystem::path(spec.output_dir) / "summary.csv");
        write_sweep_summary(f, spec.axes, rows);
    }
    for (const SweepRow& row : rows) {
        if (!row.ok) continue;
        try {
            PlotRequest req;
            req.metrics_files = {(std::filesystem::path(row.result.run_dir) / "metrics.jsonl")
                                     .string()};
            req.out_dir = (std::filesystem::path(row.result.run_dir) / "plots").string();
            run_plot(req);
        } catch (const std::exception&) {
            // a cell too short to smooth still keeps its summary row
        }
    }
    nlohmann::json manifest{
        {"version", kVersionString},
        {"config_hash", config_hash(spec.base)},
        {"cells", cells.size()},
        {"repetitions", spec.repetitions},
    };
    std::ofstream mf(std::filesystem::path(spec.output_dir) / "sweep_manifest.json");
    mf << manifest.dump(2) << '\n';
    return rows;
}

}  // namespace iclnav
