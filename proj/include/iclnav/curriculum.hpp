#pragma once
// Incremental curriculum control: stage schedules over instruction prefixes,
// stage-dependent reward assembly with its scaling variants, and the
// mastery/budget advancement rule with head-growth directives.

#include <algorithm>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "iclnav/errors.hpp"
#include "iclnav/gridworld.hpp"

namespace iclnav {

enum class RewardVariant { Neutral, PositiveIncremental, Norm, Div10 };

inline const char* reward_variant_name(RewardVariant v) {
    switch (v) {
        case RewardVariant::Neutral: return "neutral";
        case RewardVariant::PositiveIncremental: return "positive_incremental";
        case RewardVariant::Norm: return "norm";
        case RewardVariant::Div10: return "div10";
    }
    return "?";
}

inline std::optional<RewardVariant> parse_reward_variant(const std::string& s) {
    if (s == "neutral") return RewardVariant::Neutral;
    if (s == "positive_incremental") return RewardVariant::PositiveIncremental;
    if (s == "norm") return RewardVariant::Norm;
    if (s == "div10") return RewardVariant::Div10;
    return std::nullopt;
}

constexpr double kStepPenalty = -0.05;
constexpr double kMaxGoalReward = 20.0;

/// Linear schedule between the 5.0 and 20.0 endpoints.
inline double stage_goal_reward(int index) {
    if (index < 1 || index > 4)
        throw IndexOutOfRange("stage index " + std::to_string(index) + " outside 1..4");
    return 5.0 * index;
}

/// Stage 1 is navigation only; Pickup unlocks with the take stage and stays
/// enabled from then on (the carry goal depends on it); Place joins for the
/// final placement stage, growing the head 3 -> 4 -> 4 -> 5.
inline std::vector<Action> enabled_actions(int index) {
    if (index < 1 || index > 4)
        throw IndexOutOfRange("stage index " + std::to_string(index) + " outside 1..4");
    std::vector<Action> out{Action::MoveAhead, Action::RotateLeft, Action::RotateRight};
    if (index >= 2) out.push_back(Action::Pickup);
    if (index >= 4) out.push_back(Action::Place);
    return out;
}

struct MasterySpec {
    int window = 200;
    double threshold = 0.9;
};

struct StageSpec {
    int index = 1;              // curriculum position, 1-based
    int instruction_stage = 1;  // which instruction prefix is the goal
    std::vector<Action> actions;
    double goal_reward = 5.0;
    int episode_budget = 3000;
    std::optional<MasterySpec> mastery;
};

/// Stages 1..stage_count with an even split of the total episode budget.
inline std::vector<StageSpec> make_stage_schedule(int stage_count, int total_budget = 12000,
                                                  std::optional<MasterySpec> mastery = {}) {
    if (stage_count < 1 || stage_count > 4)
        throw ValidationError("stage count " + std::to_string(stage_count) + " outside 1..4");
    if (total_budget < stage_count) throw ValidationError("episode budget too small to split");
    if (mastery && (mastery->window < 1 || mastery->threshold <= 0.0 || mastery->threshold > 1.0))
        throw ValidationError("mastery wants window >= 1 and threshold in (0, 1]");
    std::vector<StageSpec> out;
    int per = total_budget / stage_count;
    for (int k = 1; k <= stage_count; ++k) {
        StageSpec s;
        s.index = k;
        s.instruction_stage = k;
        s.actions = enabled_actions(k);
        s.goal_reward = stage_goal_reward(k);
        s.episode_budget = per;
        s.mastery = mastery;
        out.push_back(std::move(s));
    }
    return out;
}

/// No curriculum: the full final-stage instruction from episode 1, every
/// action enabled, the whole budget in one block.
inline std::vector<StageSpec> make_baseline_schedule(int final_stage, int total_budget = 12000) {
    if (final_stage < 1 || final_stage > 4)
        throw ValidationError("final stage " + std::to_string(final_stage) + " outside 1..4");
    StageSpec s;
    s.index = final_stage;
    s.instruction_stage = final_stage;
    s.actions = enabled_actions(final_stage);
    s.goal_reward = stage_goal_reward(final_stage);
    s.episode_budget = total_budget;
    return {s};
}

/// Per-step reward: the step penalty, the stage's goal reward on terminal
/// success, and under PositiveIncremental the goal rewards of earlier stages
/// whose sub-goals fired this step (the environment emits each at most once
/// per episode). Norm and Div10 scale the neutral assembly.
inline double reward_value(const std::vector<Event>& events, const StageSpec& stage,
                           RewardVariant variant, bool terminal_success) {
    double total = kStepPenalty;
    if (terminal_success) total += stage.goal_reward;
    if (variant == RewardVariant::PositiveIncremental)
        for (const Event& e : events)
            if (e.kind == Event::Kind::SubGoalReached && e.stage < stage.index)
                total += stage_goal_reward(e.stage);
    if (variant == RewardVariant::Norm) total /= kMaxGoalReward;
    if (variant == RewardVariant::Div10) total /= 10.0;
    return total;
}

inline RewardFn make_reward_fn(const StageSpec& stage, RewardVariant variant) {
    return [stage, variant](const std::vector<Event>& events, bool success) {
        return reward_value(events, stage, variant, success);
    };
}

struct CurriculumState {
    int current_stage = 1;  // position within the schedule, 1-based
    int episodes_in_stage = 0;
    std::deque<uint8_t> success_history;
    std::vector<int> advanced_at;  // global episode indices of advancements
};

struct AdvanceDecision {
    bool advanced = false;
    int from_index = 0;  // schedule positions, 1-based
    int to_index = 0;
    bool grow_head = false;
    int new_action_count = 0;
    bool budget_exhausted = false;  // false means the mastery window fired
};

/// Appends one finished episode's outcome to the stage history, keeping at
/// most the mastery window (or a single entry when mastery is unset).
inline void record_outcome(CurriculumState& st, const std::vector<StageSpec>& schedule,
                           bool success) {
    if (st.current_stage < 1 || st.current_stage > static_cast<int>(schedule.size()))
        throw IndexOutOfRange("curriculum stage " + std::to_string(st.current_stage) +
                              " outside the schedule");
    const StageSpec& stage = schedule[st.current_stage - 1];
    ++st.episodes_in_stage;
    st.success_history.push_back(success ? 1 : 0);
    size_t cap = stage.mastery ? static_cast<size_t>(stage.mastery->window) : 1;
    while (st.success_history.size() > cap) st.success_history.pop_front();
}

/// Advances on a full mastery window at or above threshold, or on budget
/// exhaustion, whichever happens first. The final stage never advances.
inline AdvanceDecision maybe_advance(CurriculumState& st, const std::vector<StageSpec>& schedule,
                                     int global_episode) {
    AdvanceDecision d;
    if (st.current_stage >= static_cast<int>(schedule.size())) return d;
    const StageSpec& stage = schedule[st.current_stage - 1];
    bool mastered = false;
    if (stage.mastery && st.success_history.size() >= static_cast<size_t>(stage.mastery->window)) {
        int wins = 0;
        for (uint8_t s : st.success_history) wins += s;
        mastered = wins >= stage.mastery->threshold * stage.mastery->window;
    }
    bool exhausted = st.episodes_in_stage >= stage.episode_budget;
    if (!mastered && !exhausted) return d;
    const StageSpec& next = schedule[st.current_stage];
    d.advanced = true;
    d.from_index = st.current_stage;
    d.to_index = st.current_stage + 1;
    d.budget_exhausted = !mastered;
    d.new_action_count = static_cast<int>(next.actions.size());
    d.grow_head = next.actions.size() > stage.actions.size();
    st.current_stage += 1;
    st.episodes_in_stage = 0;
    st.success_history.clear();
    st.advanced_at.push_back(global_episode);
    return d;
}

}  // namespace iclnav
