#pragma once
// Multimodal DQN agent: model assembly, epsilon-greedy control, experience
// replay, TD targets, and the train/sync/grow operations around them.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "iclnav/autodiff.hpp"
#include "iclnav/errors.hpp"
#include "iclnav/instruction.hpp"
#include "iclnav/nn.hpp"
#include "iclnav/rng.hpp"
#include "iclnav/tensor.hpp"

namespace iclnav {

struct Transition {
    std::vector<uint8_t> observation;
    std::vector<int> instruction;  // token indices
    int action = 0;
    double reward = 0.0;
    std::vector<uint8_t> next_observation;
    bool terminal = false;
};

/// Fixed-capacity ring with strict FIFO eviction. Minibatch sampling is
/// uniform without replacement.
class ReplayBuffer {
  public:
    explicit ReplayBuffer(size_t capacity) : capacity_(capacity) {
        if (capacity_ < 1) throw ValidationError("replay capacity must be positive");
        ring_.reserve(std::min<size_t>(capacity_, 4096));
    }

    void push(Transition t) {
        if (!std::isfinite(t.reward)) throw ValidationError("transition reward is not finite");
        if (t.action < 0) throw IndexOutOfRange("transition action index is negative");
        if (ring_.size() < capacity_)
            ring_.push_back(std::move(t));
        else
            ring_[inserted_ % capacity_] = std::move(t);
        ++inserted_;
    }

    size_t size() const { return ring_.size(); }
    size_t capacity() const { return capacity_; }
    uint64_t inserted() const { return inserted_; }

    /// i = 0 addresses the oldest transition still present.
    const Transition& at(size_t i) const {
        if (i >= ring_.size())
            throw IndexOutOfRange("replay index " + std::to_string(i) + " of " +
                                  std::to_string(ring_.size()));
        if (ring_.size() < capacity_) return ring_[i];
        return ring_[(inserted_ + i) % capacity_];
    }

    std::vector<const Transition*> sample(int batch, Rng& rng) const {
        if (batch < 1) throw ValidationError("batch size must be positive");
        if (static_cast<size_t>(batch) > ring_.size())
            throw BufferTooSmall("batch " + std::to_string(batch) + " from buffer of " +
                                 std::to_string(ring_.size()));
        // partial Fisher-Yates over the index range
        std::vector<int> idx(ring_.size());
        for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
        std::vector<const Transition*> out;
        out.reserve(batch);
        for (int k = 0; k < batch; ++k) {
            int j = k + rng.uniform_below(static_cast<int>(idx.size()) - k);
            std::swap(idx[k], idx[j]);
            out.push_back(&ring_[idx[k]]);
        }
        return out;
    }

  private:
    size_t capacity_;
    std::vector<Transition> ring_;
    uint64_t inserted_ = 0;
};

/// Linear decay from start to floor over decay_episodes, flat afterwards.
struct EpsilonSchedule {
    double start = 0.9;
    double floor = 0.05;
    int decay_episodes = 1;

    double value(int episode) const {
        if (!(start <= 1.0 && start >= floor && floor >= 0.0))
            throw ValidationError("epsilon schedule wants 1 >= start >= floor >= 0");
        if (decay_episodes < 1) throw ValidationError("decay_episodes must be positive");
        if (episode < 0) throw ValidationError("episode index is negative");
        double frac = std::min(1.0, static_cast<double>(episode) / decay_episodes);
        return start - (start - floor) * frac;
    }
};

struct MdqnConfig {
    int observation_dim = 0;
    int embedding_dim = 50;
    int image_features = 512;
    int text_hidden = 64;
    std::array<int, 3> trunk_dims = {640, 512, 256};
    int action_count = 3;
    bool aux_value_head = false;
    uint64_t seed = 1;
};

/// Q-network over a frozen visual projection concatenated with a recurrent
/// text encoding: trunk of three ReLU layers, then a linear action head.
/// An optional auxiliary scalar value head shares the trunk but takes no
/// part in training.
class MdqnModel {
  public:
    MdqnModel() = default;

    MdqnModel(const MdqnConfig& cfg, Parameter embedding)
        : cfg_(cfg), embedding_(std::move(embedding)) {
        if (cfg_.observation_dim < 1) throw ValidationError("observation_dim must be positive");
        if (cfg_.action_count < 3 || cfg_.action_count > 5)
            throw ValidationError("action_count " + std::to_string(cfg_.action_count) +
                                  " outside the supported 3..5 range");
        if (cfg_.image_features < 1 || cfg_.text_hidden < 1)
            throw ValidationError("encoder feature dims must be positive");
        for (int d : cfg_.trunk_dims)
            if (d < 1) throw ValidationError("trunk dims must be positive");
        if (embedding_.value.shape.size() != 2 || embedding_.value.cols() != cfg_.embedding_dim)
            throw ShapeMismatch("embedding table " + embedding_.value.dims_str() +
                                " does not provide " + std::to_string(cfg_.embedding_dim) +
                                "-dim rows");
        Rng rng(cfg_.seed);
        projector_ = FrozenProjector("visual.projection", cfg_.observation_dim,
                                     cfg_.image_features, rng.next_u64());
        encoder_ = RecurrentEncoder("text.rnn", cfg_.embedding_dim, cfg_.text_hidden, rng);
        int joint = cfg_.image_features + cfg_.text_hidden;
        trunk1_ = DenseLayer("trunk1", cfg_.trunk_dims[0], joint, rng);
        trunk2_ = DenseLayer("trunk2", cfg_.trunk_dims[1], cfg_.trunk_dims[0], rng);
        trunk3_ = DenseLayer("trunk3", cfg_.trunk_dims[2], cfg_.trunk_dims[1], rng);
        head_ = DenseLayer("q_head", cfg_.action_count, cfg_.trunk_dims[2], rng);
        if (cfg_.aux_value_head) value_head_ = DenseLayer("value_head", 1, cfg_.trunk_dims[2], rng);
    }

    int action_count() const { return cfg_.action_count; }
    const MdqnConfig& config() const { return cfg_; }
    const FrozenProjector& projector() const { return projector_; }
    const Parameter& embedding() const { return embedding_; }

    /// Batched Q-values: one column per sample, one row per action. Identical
    /// instruction token sequences within the batch share a single encoder
    /// pass; gradient accumulation through the shared node keeps backward
    /// exact.
    Var q_graph(Graph& g, const std::vector<const std::vector<uint8_t>*>& obs,
                const std::vector<const std::vector<int>*>& instr) {
        return head_.forward(g, trunk_graph(g, obs, instr));
    }

    Tensor q_values(const std::vector<uint8_t>& obs, const std::vector<int>& instr) {
        Graph g;
        std::vector<const std::vector<uint8_t>*> o{&obs};
        std::vector<const std::vector<int>*> i{&instr};
        return g.value(q_graph(g, o, i));
    }

    Tensor value_estimate(const std::vector<uint8_t>& obs, const std::vector<int>& instr) {
        if (!cfg_.aux_value_head) throw ValidationError("auxiliary value head is disabled");
        Graph g;
        std::vector<const std::vector<uint8_t>*> o{&obs};
        std::vector<const std::vector<int>*> i{&instr};
        return g.value(value_head_.forward(g, trunk_graph(g, o, i)));
    }

    /// Enlarges the action head in place. Existing rows are copied verbatim
    /// so Q-values of the original actions are bit-identical; new rows start
    /// fresh. Equal size is a no-op that consumes no randomness.
    void grow_head(int new_action_count, Rng& rng) {
        int old = cfg_.action_count;
        if (new_action_count < old)
            throw ShrinkNotAllowed("head " + std::to_string(old) + " -> " +
                                   std::to_string(new_action_count));
        if (new_action_count == old) return;
        int in = cfg_.trunk_dims[2];
        Tensor fresh = Tensor::matrix(new_action_count - old, in);
        glorot_fill(fresh, in, new_action_count, rng);
        Tensor w = Tensor::matrix(new_action_count, in);
        std::copy(head_.W.value.data.begin(), head_.W.value.data.end(), w.data.begin());
        std::copy(fresh.data.begin(), fresh.data.end(),
                  w.data.begin() + static_cast<size_t>(old) * in);
        Tensor b = Tensor::zeros({new_action_count});
        std::copy(head_.b.value.data.begin(), head_.b.value.data.end(), b.data.begin());
        head_.W.value = std::move(w);
        head_.b.value = std::move(b);
        head_.W.grad = Tensor{};
        head_.b.grad = Tensor{};
        cfg_.action_count = new_action_count;
    }

    /// Every parameter in pinned order, frozen ones included (checkpointing).
    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> out{&projector_.P, &embedding_};
        for (Parameter* p : encoder_.parameters()) out.push_back(p);
        for (DenseLayer* l : {&trunk1_, &trunk2_, &trunk3_, &head_}) {
            out.push_back(&l->W);
            out.push_back(&l->b);
        }
        if (cfg_.aux_value_head) {
            out.push_back(&value_head_.W);
            out.push_back(&value_head_.b);
        }
        return out;
    }

    /// Parameters the optimizer may move: text encoder, trunk, action head.
    /// The auxiliary value head is excluded from the loss, so it is not
    /// listed here either.
    std::vector<Parameter*> trainable_parameters() {
        std::vector<Parameter*> out = encoder_.parameters();
        for (DenseLayer* l : {&trunk1_, &trunk2_, &trunk3_, &head_}) {
            out.push_back(&l->W);
            out.push_back(&l->b);
        }
        return out;
    }

  private:
    Var trunk_graph(Graph& g, const std::vector<const std::vector<uint8_t>*>& obs,
                    const std::vector<const std::vector<int>*>& instr) {
        if (obs.empty()) throw EmptyInput("q_graph: empty batch");
        if (obs.size() != instr.size())
            throw ShapeMismatch("q_graph: " + std::to_string(obs.size()) + " observations for " +
                                std::to_string(instr.size()) + " instructions");
        Var image = g.constant(projector_.project_bits_batch(obs));
        std::map<std::vector<int>, Var> seen;
        std::vector<Var> text_cols;
        text_cols.reserve(instr.size());
        for (const std::vector<int>* tokens : instr) {
            auto [it, fresh] = seen.try_emplace(*tokens);
            if (fresh) {
                EncodedInstruction enc;
                enc.token_indices = *tokens;
                it->second = encoder_.forward(g, embed(enc, embedding_.value));
            }
            text_cols.push_back(it->second);
        }
        Var text = g.concat_cols(text_cols);
        Var x = g.concat_rows(image, text);
        Var h1 = g.relu(trunk1_.forward(g, x));
        Var h2 = g.relu(trunk2_.forward(g, h1));
        return g.relu(trunk3_.forward(g, h2));
    }

    MdqnConfig cfg_;
    FrozenProjector projector_;
    Parameter embedding_;
    RecurrentEncoder encoder_;
    DenseLayer trunk1_, trunk2_, trunk3_, head_, value_head_;
};

inline void grow_head(MdqnModel& model, int new_action_count, Rng& rng) {
    model.grow_head(new_action_count, rng);
}

/// Lowest index wins ties.
inline int argmax_index(const Tensor& q) {
    if (q.size() == 0) throw EmptyInput("argmax over empty tensor");
    int best = 0;
    for (int i = 1; i < q.size(); ++i)
        if (q.data[i] > q.data[best]) best = i;
    return best;
}

/// With probability epsilon a uniform action, otherwise greedy. The greedy
/// branch consumes no randomness, so epsilon = 0 evaluation needs no rng
/// state management.
template <class Model>
int select_action(Model& model, const std::vector<uint8_t>& obs, const std::vector<int>& instr,
                  double epsilon, Rng& rng) {
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ValidationError("epsilon must lie in [0, 1]");
    if (epsilon > 0.0 && rng.uniform() < epsilon) return rng.uniform_below(model.action_count());
    return argmax_index(model.q_values(obs, instr));
}

/// r for terminal transitions, r + gamma * max_a Q_target(s', a) otherwise.
template <class Model>
std::vector<double> td_targets(const std::vector<const Transition*>& batch, Model& target,
                               double gamma) {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ValidationError("gamma must lie in [0, 1)");
    if (batch.empty()) throw EmptyInput("td_targets: empty batch");
    std::vector<const std::vector<uint8_t>*> next;
    std::vector<const std::vector<int>*> instr;
    next.reserve(batch.size());
    instr.reserve(batch.size());
    for (const Transition* t : batch) {
        next.push_back(&t->next_observation);
        instr.push_back(&t->instruction);
    }
    Graph g;
    Tensor q = g.value(target.q_graph(g, next, instr));
    int actions = q.rows();
    std::vector<double> out(batch.size());
    for (size_t j = 0; j < batch.size(); ++j) {
        if (batch[j]->terminal) {
            out[j] = batch[j]->reward;
            continue;
        }
        double best = q.at(0, static_cast<int>(j));
        for (int a = 1; a < actions; ++a) best = std::max(best, q.at(a, static_cast<int>(j)));
        out[j] = batch[j]->reward + gamma * best;
    }
    return out;
}

/// One DQN update on an explicit minibatch: MSE between Q(s, a) of the taken
/// actions and the TD targets, one backward pass, one optimizer step.
template <class Model>
double train_step(Model& model, Model& target, const std::vector<const Transition*>& batch,
                  RmsPropState& opt, double gamma) {
    std::vector<double> targets = td_targets(batch, target, gamma);
    std::vector<const std::vector<uint8_t>*> obs;
    std::vector<const std::vector<int>*> instr;
    std::vector<int> actions;
    obs.reserve(batch.size());
    instr.reserve(batch.size());
    actions.reserve(batch.size());
    for (const Transition* t : batch) {
        if (t->action >= model.action_count())
            throw IndexOutOfRange("stored action " + std::to_string(t->action) +
                                  " outside head of " + std::to_string(model.action_count()));
        obs.push_back(&t->observation);
        instr.push_back(&t->instruction);
        actions.push_back(t->action);
    }
    Graph g;
    Var q = model.q_graph(g, obs, instr);
    Var picked = g.select_entries(q, actions);
    Tensor target_vec = Tensor::zeros({static_cast<int>(targets.size())});
    std::copy(targets.begin(), targets.end(), target_vec.data.begin());
    Var loss = g.mse_against(picked, target_vec);
    std::vector<Parameter*> params = model.trainable_parameters();
    for (Parameter* p : params) p->zero_grad();
    g.backward(loss);
    rmsprop_step(opt, params);
    return g.value(loss)[0];
}

template <class Model>
double train_step(Model& model, Model& target, const ReplayBuffer& buffer, RmsPropState& opt,
                  int batch_size, double gamma, Rng& rng) {
    std::vector<const Transition*> batch = buffer.sample(batch_size, rng);
    return train_step(model, target, batch, opt, gamma);
}

/// Bit-exact parameter copy onto the target network.
template <class Model>
void sync_target(const Model& model, Model& target) {
    target = model;
}

}  // namespace iclnav
