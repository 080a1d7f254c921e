#pragma once
// Episode metrics as JSON Lines: one record per episode, append-only, with a
// reader that validates the schema and a fingerprint that ignores wall time
// so reruns of the same seed can be compared bit-for-bit.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "iclnav/errors.hpp"
#include "iclnav/rng.hpp"

namespace iclnav {

struct EpisodeRecord {
    std::string run_id;
    int stage = 1;         // curriculum stage the episode ran under
    int episode = 0;       // global training episode, 1-based
    int episode_in_stage = 0;
    bool eval = false;     // greedy evaluation episode (training was paused)
    int eval_index = 0;    // 0..N-1 within one evaluation point, 0 for training
    bool success = false;
    int steps = 0;
    double episode_return = 0.0;
    double epsilon = 0.0;
    std::string object;    // target object, for per-object curves
    double wall_ms = 0.0;  // excluded from determinism comparisons
};

namespace detail_metrics {

inline const std::vector<std::string>& record_keys() {
    static const std::vector<std::string> keys = {
        "run_id", "stage", "episode", "episode_in_stage", "eval", "eval_index",
        "success", "steps", "return", "epsilon", "object", "wall_ms"};
    return keys;
}

}  // namespace detail_metrics

inline nlohmann::json to_json(const EpisodeRecord& r) {
    return nlohmann::json{
        {"run_id", r.run_id},
        {"stage", r.stage},
        {"episode", r.episode},
        {"episode_in_stage", r.episode_in_stage},
        {"eval", r.eval},
        {"eval_index", r.eval_index},
        {"success", r.success},
        {"steps", r.steps},
        {"return", r.episode_return},
        {"epsilon", r.epsilon},
        {"object", r.object},
        {"wall_ms", r.wall_ms},
    };
}

inline EpisodeRecord record_from_json(const nlohmann::json& j, const std::string& where) {
    for (const std::string& key : detail_metrics::record_keys())
        if (!j.contains(key)) throw MixedSchema(where + ": record lacks field '" + key + "'");
    const auto& keys = detail_metrics::record_keys();
    for (const auto& item : j.items())
        if (std::find(keys.begin(), keys.end(), item.key()) == keys.end())
            throw MixedSchema(where + ": unexpected field '" + item.key() + "'");
    EpisodeRecord r;
    try {
        r.run_id = j.at("run_id").get<std::string>();
        r.stage = j.at("stage").get<int>();
        r.episode = j.at("episode").get<int>();
        r.episode_in_stage = j.at("episode_in_stage").get<int>();
        r.eval = j.at("eval").get<bool>();
        r.eval_index = j.at("eval_index").get<int>();
        r.success = j.at("success").get<bool>();
        r.steps = j.at("steps").get<int>();
        r.episode_return = j.at("return").get<double>();
        r.epsilon = j.at("epsilon").get<double>();
        r.object = j.at("object").get<std::string>();
        r.wall_ms = j.at("wall_ms").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw MixedSchema(where + ": " + e.what());
    }
    return r;
}

/// Append-only JSONL writer. Episode indices must be strictly increasing;
/// within an evaluation point eval_index orders the records.
class MetricsWriter {
public:
    explicit MetricsWriter(const std::string& path) : out_(path, std::ios::app) {
        if (!out_) throw ConfigError("cannot open metrics file " + path);
    }

    void write(const EpisodeRecord& r) {
        if (r.episode < last_episode_ ||
            (r.episode == last_episode_ && !r.eval) ||
            (r.episode == last_episode_ && r.eval && r.eval_index <= last_eval_index_))
            throw ValidationError("episode records must be appended in increasing order");
        out_ << to_json(r).dump() << '\n';
        if (!out_) throw ValidationError("metrics write failed");
        last_episode_ = r.episode;
        last_eval_index_ = r.eval ? r.eval_index : -1;
    }

    void flush() { out_.flush(); }

private:
    std::ofstream out_;
    int last_episode_ = 0;
    int last_eval_index_ = -1;
};

inline std::vector<EpisodeRecord> read_metrics(std::istream& in, const std::string& source) {
    std::vector<EpisodeRecord> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::string where = source + ":" + std::to_string(lineno);
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) throw ParseError(where + ": not a JSON object");
        out.push_back(record_from_json(j, where));
    }
    return out;
}

inline std::vector<EpisodeRecord> read_metrics_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open metrics file " + path);
    return read_metrics(in, path);
}

/// Hash of the record stream with wall_ms removed and keys canonically
/// ordered. Two runs of the same config and seed must agree on this.
inline uint64_t metrics_fingerprint(const std::vector<EpisodeRecord>& records) {
    uint64_t h = 0xCBF29CE484222325ULL;
    for (const EpisodeRecord& r : records) {
        nlohmann::json j = to_json(r);
        j.erase("wall_ms");
        std::string s = j.dump();
        h = fnv1a64(s.data(), s.size(), h);
        h = fnv1a64("\n", 1, h);
    }
    return h;
}

}  // namespace iclnav
