#pragma once
// End-to-end training and evaluation runs: loads the assets a config names,
// drives the per-episode DQN loop under the curriculum controller, records
// JSONL metrics, and writes checkpoints plus a run manifest.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "iclnav/agent.hpp"
#include "iclnav/checkpoint.hpp"
#include "iclnav/config.hpp"
#include "iclnav/curriculum.hpp"
#include "iclnav/errors.hpp"
#include "iclnav/gridworld.hpp"
#include "iclnav/instruction.hpp"
#include "iclnav/metrics.hpp"

namespace iclnav {

inline const char* kVersionString = "0.1.0";

/// Everything a run needs that lives in files, loaded and validated once.
struct RunAssets {
    GridMap map;
    std::vector<InstructionTemplate> templates;  // filtered to usable ones
    Vocabulary vocab;
    Parameter embedding;
    std::vector<StageSpec> schedule;
    int observation_dim = 0;
};

inline RunAssets load_run_assets(const RunConfig& cfg) {
    RunAssets a;
    {
        std::ifstream in(cfg.map_path);
        if (!in) throw ConfigError("map.path: cannot open " + cfg.map_path);
        std::stringstream ss;
        ss << in.rdbuf();
        a.map = load_map(ss.str());
    }
    {
        std::ifstream in(cfg.templates_path);
        if (!in) throw ConfigError("task.templates: cannot open " + cfg.templates_path);
        std::vector<InstructionTemplate> all = parse_templates(in);
        for (const InstructionTemplate& t : all) {
            if (!cfg.template_id.empty() && t.id != cfg.template_id) continue;
            if (t.clauses.size() < static_cast<size_t>(cfg.final_stage)) continue;
            if (cfg.final_stage >= 3 && !t.needs_receptacle()) continue;
            if (t.needs_receptacle() && cfg.receptacles.empty()) continue;
            a.templates.push_back(t);
        }
        if (a.templates.empty())
            throw ConfigError("task.templates: no template supports a stage-" +
                              std::to_string(cfg.final_stage) + " goal with the given pools");
    }
    std::set<std::string> stops;
    {
        std::ifstream in(cfg.stopwords_path);
        if (!in) throw ConfigError("task.stopwords: cannot open " + cfg.stopwords_path);
        stops = parse_stop_words(in);
    }
    for (const std::string& obj : cfg.objects)
        if (!a.map.spawn_group(detail::lower(obj)))
            throw ConfigError("task.objects: '" + obj + "' never spawns on map " + cfg.map_path);
    for (const std::string& rec : cfg.receptacles) {
        auto kind = parse_receptacle_kind(detail::lower(rec));
        if (!kind || !a.map.has_receptacle_kind(*kind))
            throw ConfigError("task.receptacles: '" + rec + "' absent from map " + cfg.map_path);
    }
    a.vocab = build_vocabulary(a.templates, cfg.objects, cfg.receptacles, stops);
    a.embedding = make_embedding_table(a.vocab);
    a.schedule = cfg.baseline
                     ? make_baseline_schedule(cfg.final_stage, cfg.episodes)
                     : make_stage_schedule(
                           cfg.final_stage, cfg.episodes,
                           cfg.mastery_window > 0
                               ? std::optional<MasterySpec>(MasterySpec{
                                     cfg.mastery_window, cfg.mastery_threshold})
                               : std::nullopt);
    for (const StageSpec& s : a.schedule)
        for (size_t i = 0; i < s.actions.size(); ++i)
            if (s.actions[i] != static_cast<Action>(i))
                throw ValidationError("stage action sets must be prefixes of the action enum");
    ObservationSpec spec = ObservationSpec::for_map(a.map, cfg.window_depth, cfg.window_width);
    a.observation_dim = spec.dim();
    return a;
}

struct EpisodeStats {
    bool success = false;
    int steps = 0;
    double episode_return = 0.0;
};

/// One greedy (epsilon = 0) episode. Consumes no random numbers beyond the
/// reset seed, so evaluation never perturbs training streams.
template <class Model>
EpisodeStats greedy_rollout(Env& env, Model& model, const std::vector<int>& tokens,
                            uint64_t reset_seed) {
    Rng unused(0);
    EpisodeStats stats;
    Observation obs = env.reset(reset_seed);
    while (true) {
        int a = select_action(model, obs.bits, tokens, 0.0, unused);
        StepOutcome out = env.step(static_cast<Action>(a));
        stats.episode_return += out.reward;
        ++stats.steps;
        obs = std::move(out.observation);
        if (out.terminal) {
            stats.success = out.success;
            return stats;
        }
    }
}

struct SeedResult {
    uint64_t seed = 0;
    std::string run_id;
    std::string run_dir;
    std::string checkpoint_path;
    int episodes = 0;
    int final_stage_position = 1;
    std::vector<int> advanced_at;
    double final_window_success = 0.0;       // trailing training episodes, final stage
    double final_eval_success = 0.0;         // trailing greedy evaluation episodes
    double mean_return = 0.0;                // over all training episodes
    std::optional<int> episodes_to_threshold;  // trailing-window success >= 0.9
    uint64_t metrics_fingerprint = 0;
    double wall_seconds = 0.0;
};

namespace detail_trainer {

constexpr int kSummaryWindow = 100;
constexpr double kSummaryThreshold = 0.9;

/// Derives the summary statistics every report shares from a record stream.
inline void summarize_records(const std::vector<EpisodeRecord>& records, SeedResult& r) {
    std::vector<const EpisodeRecord*> train, eval;
    for (const EpisodeRecord& rec : records)
        (rec.eval ? eval : train).push_back(&rec);
    if (!train.empty()) {
        double sum = 0.0;
        for (const EpisodeRecord* t : train) sum += t->episode_return;
        r.mean_return = sum / static_cast<double>(train.size());
    }
    int final_stage = train.empty() ? 1 : train.back()->stage;
    auto tail_success = [](const std::vector<const EpisodeRecord*>& v, int stage) {
        std::vector<const EpisodeRecord*> in_stage;
        for (const EpisodeRecord* rec : v)
            if (rec->stage == stage) in_stage.push_back(rec);
        if (in_stage.empty()) return 0.0;
        size_t n = std::min<size_t>(kSummaryWindow, in_stage.size());
        int wins = 0;
        for (size_t i = in_stage.size() - n; i < in_stage.size(); ++i)
            wins += in_stage[i]->success ? 1 : 0;
        return static_cast<double>(wins) / static_cast<double>(n);
    };
    r.final_window_success = tail_success(train, final_stage);
    r.final_eval_success = tail_success(eval, final_stage);

    // First training episode whose trailing window within the final goal
    // stage clears the threshold.
    int wins = 0;
    std::vector<const EpisodeRecord*> in_stage;
    for (const EpisodeRecord* t : train)
        if (t->stage == final_stage) in_stage.push_back(t);
    for (size_t i = 0; i < in_stage.size(); ++i) {
        wins += in_stage[i]->success ? 1 : 0;
        if (i >= static_cast<size_t>(kSummaryWindow)) wins -= in_stage[i - kSummaryWindow]->success ? 1 : 0;
        size_t have = std::min<size_t>(kSummaryWindow, i + 1);
        if (have == static_cast<size_t>(kSummaryWindow) &&
            wins >= static_cast<int>(std::ceil(kSummaryThreshold * static_cast<double>(have)))) {
            r.episodes_to_threshold = in_stage[i]->episode;
            break;
        }
    }
}

}  // namespace detail_trainer

/// Trains one seed end to end and writes metrics.jsonl, stage and final
/// checkpoints, and manifest.json under run_dir.
inline SeedResult train_seed(const RunConfig& cfg, const RunAssets& assets, uint64_t seed,
                             const std::filesystem::path& run_dir) {
    auto run_start = std::chrono::steady_clock::now();
    std::filesystem::create_directories(run_dir);

    SeedResult result;
    result.seed = seed;
    result.run_id = cfg.name + "-s" + std::to_string(seed);
    result.run_dir = run_dir.string();

    // Independent streams, forked in pinned order so adding consumers to one
    // never shifts another.
    Rng master(seed);
    uint64_t model_seed = master.fork_seed();
    Rng task_rng(master.fork_seed());
    Rng control_rng(master.fork_seed());
    Rng grow_rng(master.fork_seed());
    Rng eval_rng(master.fork_seed());

    MdqnConfig mc;
    mc.observation_dim = assets.observation_dim;
    mc.image_features = cfg.image_features;
    mc.text_hidden = cfg.text_hidden;
    mc.action_count = static_cast<int>(assets.schedule.front().actions.size());
    mc.aux_value_head = cfg.aux_value_head;
    mc.seed = model_seed;
    MdqnModel model(mc, assets.embedding);
    MdqnModel target = model;

    ReplayBuffer buffer(static_cast<size_t>(cfg.replay_capacity));
    RmsPropState opt;
    opt.learning_rate = cfg.learning_rate;
    CurriculumState st;
    int64_t env_steps = 0;
    int64_t train_steps = 0;

    std::string metrics_path = (run_dir / "metrics.jsonl").string();
    std::filesystem::remove(metrics_path);  // reruns replace, never interleave
    MetricsWriter writer(metrics_path);
    std::vector<EpisodeRecord> records;

    auto save = [&](const std::string& filename) {
        CheckpointHeader h;
        h.stage = st.current_stage;
        h.action_count = model.action_count();
        h.episodes_in_stage = st.episodes_in_stage;
        h.train_steps = train_steps;
        h.global_episode = result.episodes;
        h.config_hash = cfg.hash;
        h.seed = seed;
        std::vector<const Parameter*> params;
        for (Parameter* p : model.parameters()) params.push_back(p);
        std::string path = (run_dir / filename).string();
        save_checkpoint(path, h, params);
        return path;
    };

    for (int episode = 1; episode <= cfg.episodes; ++episode) {
        const StageSpec& stage = assets.schedule[static_cast<size_t>(st.current_stage - 1)];
        try {
            auto ep_start = std::chrono::steady_clock::now();
            EpsilonSchedule es{cfg.eps_start, cfg.eps_floor,
                               std::max(1, static_cast<int>(std::lround(
                                              cfg.eps_decay_fraction *
                                              static_cast<double>(stage.episode_budget))))};
            double eps = es.value(st.episodes_in_stage);
            // The learning rate anneals over the stage the same way epsilon
            // does, so each stage opens plastic and closes settled.
            EpsilonSchedule lrs{cfg.learning_rate, cfg.lr_floor,
                                std::max(1, static_cast<int>(std::lround(
                                               cfg.lr_decay_fraction *
                                               static_cast<double>(stage.episode_budget))))};
            opt.learning_rate = lrs.value(st.episodes_in_stage);

            InstructionTask task =
                sample_task(assets.templates, cfg.objects, cfg.receptacles, task_rng.next_u64());
            EncodedInstruction enc =
                preprocess(task.stages[static_cast<size_t>(stage.instruction_stage - 1)],
                           assets.vocab);
            Env env(assets.map, task,
                    EnvConfig{cfg.maxtime, cfg.window_depth, cfg.window_width,
                              stage.instruction_stage},
                    make_reward_fn(stage, cfg.variant));
            Observation obs = env.reset(task_rng.next_u64());

            EpisodeStats stats;
            while (true) {
                int a = select_action(model, obs.bits, enc.token_indices, eps, control_rng);
                StepOutcome out = env.step(static_cast<Action>(a));
                // The step limit truncates rather than terminates: bootstrap
                // through it so near-limit states keep their continuation
                // value. Only goal success ends the TD recursion.
                buffer.push(Transition{obs.bits, enc.token_indices, a, out.reward,
                                       out.observation.bits, out.terminal && out.success});
                stats.episode_return += out.reward;
                ++stats.steps;
                ++env_steps;
                if (buffer.size() >= static_cast<size_t>(cfg.train_start) &&
                    env_steps % cfg.train_every == 0) {
                    train_step(model, target, buffer, opt, cfg.batch_size, cfg.gamma,
                               control_rng);
                    if (++train_steps % cfg.sync_every == 0) sync_target(model, target);
                }
                obs = std::move(out.observation);
                if (out.terminal) {
                    stats.success = out.success;
                    break;
                }
            }

            record_outcome(st, assets.schedule, stats.success);
            result.episodes = episode;

            EpisodeRecord rec;
            rec.run_id = result.run_id;
            rec.stage = stage.instruction_stage;
            rec.episode = episode;
            rec.episode_in_stage = st.episodes_in_stage;
            rec.success = stats.success;
            rec.steps = stats.steps;
            rec.episode_return = stats.episode_return;
            rec.epsilon = eps;
            rec.object = task.target_object;
            rec.wall_ms = std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - ep_start)
                              .count();
            writer.write(rec);
            records.push_back(rec);

            if (cfg.eval_episodes > 0 && episode % cfg.eval_every == 0) {
                for (int i = 0; i < cfg.eval_episodes; ++i) {
                    auto ev_start = std::chrono::steady_clock::now();
                    InstructionTask ev_task = sample_task(assets.templates, cfg.objects,
                                                          cfg.receptacles, eval_rng.next_u64());
                    EncodedInstruction ev_enc = preprocess(
                        ev_task.stages[static_cast<size_t>(stage.instruction_stage - 1)],
                        assets.vocab);
                    Env ev_env(assets.map, ev_task,
                               EnvConfig{cfg.maxtime, cfg.window_depth, cfg.window_width,
                                         stage.instruction_stage},
                               make_reward_fn(stage, cfg.variant));
                    EpisodeStats ev =
                        greedy_rollout(ev_env, model, ev_enc.token_indices, eval_rng.next_u64());
                    EpisodeRecord er;
                    er.run_id = result.run_id;
                    er.stage = stage.instruction_stage;
                    er.episode = episode;
                    er.episode_in_stage = st.episodes_in_stage;
                    er.eval = true;
                    er.eval_index = i;
                    er.success = ev.success;
                    er.steps = ev.steps;
                    er.episode_return = ev.episode_return;
                    er.epsilon = 0.0;
                    er.object = ev_task.target_object;
                    er.wall_ms = std::chrono::duration<double, std::milli>(
                                     std::chrono::steady_clock::now() - ev_start)
                                     .count();
                    writer.write(er);
                    records.push_back(er);
                }
            }

            AdvanceDecision d = maybe_advance(st, assets.schedule, episode);
            if (d.advanced) {
                if (d.grow_head) grow_head(model, d.new_action_count, grow_rng);
                sync_target(model, target);
                if (cfg.checkpoint_stages)
                    save("checkpoint_stage" + std::to_string(d.from_index) + ".bin");
            }
        } catch (const std::exception& e) {
            throw Error("seed " + std::to_string(seed) + " stage " +
                        std::to_string(stage.instruction_stage) + " episode " +
                        std::to_string(episode) + ": " + e.what());
        }
    }
    writer.flush();

    result.final_stage_position = st.current_stage;
    result.advanced_at = st.advanced_at;
    result.checkpoint_path = save("checkpoint_final.bin");
    result.metrics_fingerprint = metrics_fingerprint(records);
    detail_trainer::summarize_records(records, result);
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - run_start).count();

    nlohmann::json manifest{
        {"run_id", result.run_id},
        {"version", kVersionString},
        {"config_hash", cfg.hash},
        {"seed", seed},
        {"episodes", result.episodes},
        {"final_stage_position", result.final_stage_position},
        {"advanced_at", result.advanced_at},
        {"records", records.size()},
        {"metrics_fingerprint", result.metrics_fingerprint},
        {"checkpoint", std::filesystem::path(result.checkpoint_path).filename().string()},
        {"checkpoint_checksum", checkpoint_checksum(result.checkpoint_path)},
        {"wall_seconds", result.wall_seconds},
    };
    std::ofstream mf(run_dir / "manifest.json");
    mf << manifest.dump(2) << '\n';
    return result;
}

/// Runs every seed in the config. Layout: <output_dir>/seed<k>/.
inline std::vector<SeedResult> train_run(const RunConfig& cfg) {
    RunAssets assets = load_run_assets(cfg);
    std::vector<SeedResult> results;
    for (uint64_t seed : cfg.seeds)
        results.push_back(train_seed(cfg, assets, seed,
                                     std::filesystem::path(cfg.output_dir) /
                                         ("seed" + std::to_string(seed))));
    return results;
}

struct ObjectStats {
    int episodes = 0;
    int successes = 0;
    double total_steps = 0.0;

    double success_rate() const {
        return episodes == 0 ? 0.0 : static_cast<double>(successes) / episodes;
    }
    double mean_steps() const { return episodes == 0 ? 0.0 : total_steps / episodes; }
};

struct EvalReport {
    int episodes = 0;
    int goal_stage = 0;
    std::map<std::string, ObjectStats> per_object;
    double overall_success = 0.0;
    double mean_steps = 0.0;
};

/// Greedy evaluation of a stored checkpoint on freshly sampled tasks.
/// episodes = 0 produces an empty report.
inline EvalReport evaluate_checkpoint(const RunConfig& cfg, const std::string& checkpoint_path,
                                      int episodes, uint64_t seed) {
    if (episodes < 0) throw ValidationError("evaluation episode count must be >= 0");
    RunAssets assets = load_run_assets(cfg);
    CheckpointData ckpt = load_checkpoint(checkpoint_path);

    MdqnConfig mc;
    mc.observation_dim = assets.observation_dim;
    mc.image_features = cfg.image_features;
    mc.text_hidden = cfg.text_hidden;
    mc.action_count = ckpt.header.action_count;
    mc.aux_value_head = cfg.aux_value_head;
    mc.seed = 0;  // every tensor is about to be overwritten
    MdqnModel model(mc, assets.embedding);
    restore_parameters(ckpt, model.parameters());

    int position = std::min<int>(ckpt.header.stage, static_cast<int>(assets.schedule.size()));
    const StageSpec& stage = assets.schedule[static_cast<size_t>(std::max(position, 1) - 1)];

    EvalReport report;
    report.goal_stage = stage.instruction_stage;
    Rng rng(seed);
    double steps_total = 0.0;
    int wins = 0;
    for (int i = 0; i < episodes; ++i) {
        InstructionTask task =
            sample_task(assets.templates, cfg.objects, cfg.receptacles, rng.next_u64());
        EncodedInstruction enc = preprocess(
            task.stages[static_cast<size_t>(stage.instruction_stage - 1)], assets.vocab);
        Env env(assets.map, task,
                EnvConfig{cfg.maxtime, cfg.window_depth, cfg.window_width,
                          stage.instruction_stage},
                make_reward_fn(stage, cfg.variant));
        EpisodeStats stats = greedy_rollout(env, model, enc.token_indices, rng.next_u64());
        ObjectStats& os = report.per_object[task.target_object];
        ++os.episodes;
        os.successes += stats.success ? 1 : 0;
        os.total_steps += stats.steps;
        steps_total += stats.steps;
        wins += stats.success ? 1 : 0;
    }
    report.episodes = episodes;
    if (episodes > 0) {
        report.overall_success = static_cast<double>(wins) / episodes;
        report.mean_steps = steps_total / episodes;
    }
    return report;
}

}  // namespace iclnav
