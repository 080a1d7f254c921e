#pragma once
// Line-oriented [section] key = value configuration: parsing, typed run
// configs with validation findings, overrides, and a content hash that
// detects drift between a run directory and the config that produced it.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "iclnav/curriculum.hpp"
#include "iclnav/errors.hpp"
#include "iclnav/rng.hpp"

namespace iclnav {

struct ConfigTable {
    // section -> key -> value, plus the order keys first appeared (for hashing
    // we sort, so order is cosmetic only)
    std::map<std::string, std::map<std::string, std::string>> sections;

    bool has(const std::string& sec, const std::string& key) const {
        auto s = sections.find(sec);
        return s != sections.end() && s->second.count(key) > 0;
    }
    const std::string* find(const std::string& sec, const std::string& key) const {
        auto s = sections.find(sec);
        if (s == sections.end()) return nullptr;
        auto k = s->second.find(key);
        return k == s->second.end() ? nullptr : &k->second;
    }
    void set(const std::string& sec, const std::string& key, const std::string& value) {
        sections[sec][key] = value;
    }
};

namespace detail_config {

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

/// Splits on whitespace and commas, so `a b` and `a, b` read the same.
inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string tok;
    for (char c : s) {
        if (c == ',' || c == ' ' || c == '\t') {
            if (!tok.empty()) out.push_back(std::move(tok));
            tok.clear();
        } else {
            tok += c;
        }
    }
    if (!tok.empty()) out.push_back(std::move(tok));
    return out;
}

}  // namespace detail_config

/// Parses `[section]` headers and `key = value` lines. `#` starts a comment,
/// blank lines are skipped. Values keep internal whitespace; list values
/// split on whitespace or commas when read.
inline ConfigTable parse_config(std::istream& in, const std::string& source = "config") {
    ConfigTable table;
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = detail_config::trim(line);
        size_t hash = t.find('#');
        if (hash != std::string::npos) t = detail_config::trim(t.substr(0, hash));
        if (t.empty()) continue;
        if (t.front() == '[') {
            if (t.back() != ']' || t.size() < 3)
                throw ParseError(source + ":" + std::to_string(lineno) + ": malformed section header");
            section = detail_config::trim(t.substr(1, t.size() - 2));
            table.sections[section];  // empty sections are legal
            continue;
        }
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ParseError(source + ":" + std::to_string(lineno) + ": expected key = value");
        std::string key = detail_config::trim(t.substr(0, eq));
        std::string value = detail_config::trim(t.substr(eq + 1));
        if (key.empty())
            throw ParseError(source + ":" + std::to_string(lineno) + ": empty key");
        if (section.empty())
            throw ParseError(source + ":" + std::to_string(lineno) + ": key before any [section]");
        table.sections[section][key] = value;
    }
    return table;
}

inline ConfigTable parse_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    return parse_config(in, path.filename().string());
}

/// `section.key=value`, applied on top of the parsed table.
inline void apply_override(ConfigTable& table, const std::string& spec) {
    size_t eq = spec.find('=');
    size_t dot = spec.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq)
        throw ConfigError("override wants section.key=value, got '" + spec + "'");
    std::string sec = detail_config::trim(spec.substr(0, dot));
    std::string key = detail_config::trim(spec.substr(dot + 1, eq - dot - 1));
    std::string value = detail_config::trim(spec.substr(eq + 1));
    if (sec.empty() || key.empty())
        throw ConfigError("override wants section.key=value, got '" + spec + "'");
    table.set(sec, key, value);
}

/// Content hash over sorted section/key/value triples: formatting, comments
/// and key order do not affect it.
inline uint64_t config_hash(const ConfigTable& table) {
    uint64_t h = 0xCBF29CE484222325ULL;
    for (const auto& [sec, kv] : table.sections)
        for (const auto& [key, value] : kv) {
            h = fnv1a64(sec.data(), sec.size(), h);
            h = fnv1a64("\x1f", 1, h);
            h = fnv1a64(key.data(), key.size(), h);
            h = fnv1a64("\x1f", 1, h);
            h = fnv1a64(value.data(), value.size(), h);
            h = fnv1a64("\x1e", 1, h);
        }
    return h;
}

struct RunConfig {
    std::string name = "run";
    std::vector<uint64_t> seeds{1};
    std::string output_dir = "runs/out";
    int episodes = 12000;
    bool checkpoint_stages = true;

    std::string map_path;
    std::string templates_path;
    std::string stopwords_path;
    std::vector<std::string> objects;
    std::vector<std::string> receptacles;
    std::string template_id;  // empty = all templates

    int maxtime = 100;
    int window_depth = 3;
    int window_width = 3;

    bool baseline = false;
    int final_stage = 4;
    int mastery_window = 0;  // 0 disables mastery-based advancement
    double mastery_threshold = 0.9;

    RewardVariant variant = RewardVariant::Neutral;

    double eps_start = 0.9;
    double eps_floor = 0.05;
    double eps_decay_fraction = 0.8;  // of the stage episode budget

    double gamma = 0.99;
    double learning_rate = 1e-4;
    double lr_floor = 1e-4;           // learning_rate when not set: constant schedule
    double lr_decay_fraction = 0.8;   // of the stage episode budget
    int batch_size = 32;
    int replay_capacity = 10000;
    int train_start = 1000;
    int sync_every = 500;
    int train_every = 1;
    int image_features = 512;
    int text_hidden = 64;
    bool aux_value_head = false;

    int eval_every = 10;
    int eval_episodes = 5;

    uint64_t hash = 0;  // of the table this config came from
};

namespace detail_config {

struct Reader {
    const ConfigTable& table;
    std::vector<std::string>* findings;  // collect instead of throwing when set

    void fail(const std::string& field, const std::string& msg) const {
        if (findings)
            findings->push_back(field + ": " + msg);
        else
            throw ConfigError(field + ": " + msg);
    }

    std::string str(const std::string& sec, const std::string& key, std::string dflt) const {
        const std::string* v = table.find(sec, key);
        return v ? *v : dflt;
    }

    long long integer(const std::string& sec, const std::string& key, long long dflt) const {
        const std::string* v = table.find(sec, key);
        if (!v) return dflt;
        try {
            size_t pos = 0;
            long long out = std::stoll(*v, &pos);
            if (pos != v->size()) throw std::invalid_argument("");
            return out;
        } catch (const std::exception&) {
            fail(sec + "." + key, "'" + *v + "' is not an integer");
            return dflt;
        }
    }

    double real(const std::string& sec, const std::string& key, double dflt) const {
        const std::string* v = table.find(sec, key);
        if (!v) return dflt;
        try {
            size_t pos = 0;
            double out = std::stod(*v, &pos);
            if (pos != v->size()) throw std::invalid_argument("");
            return out;
        } catch (const std::exception&) {
            fail(sec + "." + key, "'" + *v + "' is not a number");
            return dflt;
        }
    }

    bool boolean(const std::string& sec, const std::string& key, bool dflt) const {
        const std::string* v = table.find(sec, key);
        if (!v) return dflt;
        if (*v == "true" || *v == "1" || *v == "yes") return true;
        if (*v == "false" || *v == "0" || *v == "no") return false;
        fail(sec + "." + key, "'" + *v + "' is not a boolean");
        return dflt;
    }

    std::vector<std::string> list(const std::string& sec, const std::string& key) const {
        const std::string* v = table.find(sec, key);
        if (!v) return {};
        return split_list(*v);
    }
};

inline std::string resolve(const std::filesystem::path& base, const std::string& p) {
    if (p.empty()) return p;
    std::filesystem::path fp(p);
    if (fp.is_absolute()) return fp.lexically_normal().string();
    return (base / fp).lexically_normal().string();
}

}  // namespace detail_config

/// Builds the typed config. With `findings` null, the first problem throws
/// ConfigError naming the field; with `findings` set, problems accumulate and
/// a best-effort config is still returned (for `validate`).
inline RunConfig make_run_config(const ConfigTable& table, const std::filesystem::path& config_dir,
                                 std::vector<std::string>* findings = nullptr) {
    detail_config::Reader r{table, findings};
    RunConfig cfg;
    cfg.hash = config_hash(table);
    cfg.name = r.str("run", "name", "run");
    cfg.output_dir = detail_config::resolve(config_dir, r.str("run", "output_dir", "runs/" + cfg.name));
    cfg.episodes = static_cast<int>(r.integer("run", "episodes", 12000));
    cfg.checkpoint_stages = r.boolean("run", "checkpoint_stages", true);
    cfg.seeds.clear();
    for (const std::string& s : r.list("run", "seeds")) {
        try {
            cfg.seeds.push_back(std::stoull(s));
        } catch (const std::exception&) {
            r.fail("run.seeds", "'" + s + "' is not a seed");
        }
    }
    if (cfg.seeds.empty() && table.has("run", "seed"))
        cfg.seeds.push_back(static_cast<uint64_t>(r.integer("run", "seed", 1)));
    if (cfg.seeds.empty()) cfg.seeds.push_back(1);

    cfg.map_path = detail_config::resolve(config_dir, r.str("map", "path", ""));
    cfg.templates_path = detail_config::resolve(config_dir, r.str("task", "templates", ""));
    cfg.stopwords_path = detail_config::resolve(config_dir, r.str("task", "stopwords", ""));
    cfg.objects = r.list("task", "objects");
    cfg.receptacles = r.list("task", "receptacles");
    cfg.template_id = r.str("task", "template", "");

    cfg.maxtime = static_cast<int>(r.integer("env", "maxtime", 100));
    cfg.window_depth = static_cast<int>(r.integer("env", "window_depth", 3));
    cfg.window_width = static_cast<int>(r.integer("env", "window_width", 3));

    std::string mode = r.str("curriculum", "mode", "icl");
    if (mode == "baseline")
        cfg.baseline = true;
    else if (mode != "icl")
        r.fail("curriculum.mode", "'" + mode + "' is neither icl nor baseline");
    cfg.final_stage = static_cast<int>(r.integer("curriculum", "stages", 4));
    cfg.mastery_window = static_cast<int>(r.integer("curriculum", "mastery_window", 0));
    cfg.mastery_threshold = r.real("curriculum", "mastery_threshold", 0.9);

    std::string variant = r.str("reward", "variant", "neutral");
    if (auto v = parse_reward_variant(variant))
        cfg.variant = *v;
    else
        r.fail("reward.variant", "'" + variant + "' is not a reward variant");

    cfg.eps_start = r.real("epsilon", "start", 0.9);
    cfg.eps_floor = r.real("epsilon", "floor", 0.05);
    cfg.eps_decay_fraction = r.real("epsilon", "decay_fraction", 0.8);

    cfg.gamma = r.real("agent", "gamma", 0.99);
    cfg.learning_rate = r.real("agent", "learning_rate", 1e-4);
    cfg.lr_floor = r.real("agent", "lr_floor", cfg.learning_rate);
    cfg.lr_decay_fraction = r.real("agent", "lr_decay_fraction", 0.8);
    cfg.batch_size = static_cast<int>(r.integer("agent", "batch_size", 32));
    cfg.replay_capacity = static_cast<int>(r.integer("agent", "replay_capacity", 10000));
    cfg.train_start = static_cast<int>(r.integer("agent", "train_start", 1000));
    cfg.sync_every = static_cast<int>(r.integer("agent", "sync_every", 500));
    cfg.train_every = static_cast<int>(r.integer("agent", "train_every", 1));
    cfg.image_features = static_cast<int>(r.integer("agent", "image_features", 512));
    cfg.text_hidden = static_cast<int>(r.integer("agent", "text_hidden", 64));
    cfg.aux_value_head = r.boolean("agent", "aux_value_head", false);

    cfg.eval_every = static_cast<int>(r.integer("eval", "every", 10));
    cfg.eval_episodes = static_cast<int>(r.integer("eval", "episodes", 5));
    return cfg;
}

/// All structural checks in one pass. Returns an empty list when the config
/// is runnable.
inline std::vector<std::string> lint_run_config(const ConfigTable& table,
                                                const std::filesystem::path& config_dir) {
    std::vector<std::string> findings;
    RunConfig cfg = make_run_config(table, config_dir, &findings);

    auto need_file = [&](const std::string& field, const std::string& path) {
        if (path.empty())
            findings.push_back(field + ": required path is missing");
        else if (!std::filesystem::exists(path))
            findings.push_back(field + ": no such file " + path);
    };
    need_file("map.path", cfg.map_path);
    need_file("task.templates", cfg.templates_path);
    need_file("task.stopwords", cfg.stopwords_path);

    if (cfg.episodes < 1) findings.push_back("run.episodes: must be >= 1");
    if (cfg.seeds.empty()) findings.push_back("run.seeds: must name at least one seed");
    if (cfg.objects.empty()) findings.push_back("task.objects: must name at least one object");
    if (cfg.maxtime < 1) findings.push_back("env.maxtime: must be >= 1");
    if (cfg.window_depth < 1) findings.push_back("env.window_depth: must be >= 1");
    if (cfg.window_width < 1 || cfg.window_width % 2 == 0)
        findings.push_back("env.window_width: must be odd and >= 1");
    if (cfg.final_stage < 1 || cfg.final_stage > 4)
        findings.push_back("curriculum.stages: must lie in 1..4");
    if (cfg.final_stage >= 3 && cfg.receptacles.empty())
        findings.push_back("task.receptacles: stage 3+ goals need at least one receptacle");
    if (cfg.mastery_window < 0) findings.push_back("curriculum.mastery_window: must be >= 0");
    if (cfg.mastery_window > 0 &&
        (cfg.mastery_threshold <= 0.0 || cfg.mastery_threshold > 1.0))
        findings.push_back("curriculum.mastery_threshold: must lie in (0, 1]");
    if (!(cfg.eps_start >= cfg.eps_floor && cfg.eps_floor >= 0.0 && cfg.eps_start <= 1.0))
        findings.push_back("epsilon: wants 1 >= start >= floor >= 0");
    if (!(cfg.eps_decay_fraction > 0.0 && cfg.eps_decay_fraction <= 1.0))
        findings.push_back("epsilon.decay_fraction: must lie in (0, 1]");
    if (!(cfg.gamma >= 0.0 && cfg.gamma < 1.0)) findings.push_back("agent.gamma: must lie in [0, 1)");
    if (cfg.learning_rate <= 0.0) findings.push_back("agent.learning_rate: must be positive");
    if (!(cfg.lr_floor > 0.0 && cfg.lr_floor <= cfg.learning_rate))
        findings.push_back("agent.lr_floor: must lie in (0, agent.learning_rate]");
    if (!(cfg.lr_decay_fraction > 0.0 && cfg.lr_decay_fraction <= 1.0))
        findings.push_back("agent.lr_decay_fraction: must lie in (0, 1]");
    if (cfg.batch_size < 1) findings.push_back("agent.batch_size: must be >= 1");
    if (cfg.replay_capacity < cfg.batch_size)
        findings.push_back("agent.replay_capacity: must hold at least one batch");
    if (cfg.train_start < cfg.batch_size)
        findings.push_back("agent.train_start: must be >= agent.batch_size");
    if (cfg.sync_every < 1) findings.push_back("agent.sync_every: must be >= 1");
    if (cfg.train_every < 1) findings.push_back("agent.train_every: must be >= 1");
    if (cfg.image_features < 1) findings.push_back("agent.image_features: must be >= 1");
    if (cfg.text_hidden < 1) findings.push_back("agent.text_hidden: must be >= 1");
    if (cfg.eval_every < 1) findings.push_back("eval.every: must be >= 1");
    if (cfg.eval_episodes < 0) findings.push_back("eval.episodes: must be >= 0");
    if (!cfg.baseline && cfg.episodes < cfg.final_stage)
        findings.push_back("run.episodes: too few to cover every curriculum stage");

    static const std::set<std::string> known = {
        "run.name", "run.seed", "run.seeds", "run.output_dir", "run.episodes",
        "run.checkpoint_stages",
        "map.path",
        "task.templates", "task.stopwords", "task.objects", "task.receptacles", "task.template",
        "env.maxtime", "env.window_depth", "env.window_width",
        "curriculum.mode", "curriculum.stages", "curriculum.mastery_window",
        "curriculum.mastery_threshold",
        "reward.variant",
        "epsilon.start", "epsilon.floor", "epsilon.decay_fraction",
        "agent.gamma", "agent.learning_rate", "agent.lr_floor", "agent.lr_decay_fraction",
        "agent.batch_size", "agent.replay_capacity",
        "agent.train_start", "agent.sync_every", "agent.train_every", "agent.image_features",
        "agent.text_hidden", "agent.aux_value_head",
        "eval.every", "eval.episodes",
    };
    for (const auto& [sec, kv] : table.sections) {
        if (sec == "sweep") continue;  // sweep keys are read by the sweep runner
        for (const auto& [key, value] : kv)
            if (known.count(sec + "." + key) == 0)
                findings.push_back(sec + "." + key + ": unknown key");
    }
    return findings;
}

/// Lint that throws: for code paths that need a runnable config.
inline RunConfig load_run_config(const ConfigTable& table,
                                 const std::filesystem::path& config_dir) {
    std::vector<std::string> findings = lint_run_config(table, config_dir);
    if (!findings.empty()) {
        std::string msg = "config is not runnable:";
        for (const std::string& f : findings) msg += "\n  " + f;
        throw ConfigError(msg);
    }
    return make_run_config(table, config_dir);
}

}  // namespace iclnav
