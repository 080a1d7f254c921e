#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "iclnav/autodiff.hpp"
#include "iclnav/errors.hpp"
#include "iclnav/rng.hpp"
#include "iclnav/tensor.hpp"

namespace iclnav {

/// Uniform init in ±sqrt(6 / (fan_in + fan_out)), the usual Glorot bound.
inline void glorot_fill(Tensor& t, int fan_in, int fan_out, Rng& rng) {
    double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& v : t.data) v = (2.0 * rng.uniform() - 1.0) * bound;
}

inline Parameter make_dense_weight(std::string name, int out, int in, Rng& rng) {
    Parameter p;
    p.name = std::move(name);
    p.value = Tensor::matrix(out, in);
    glorot_fill(p.value, in, out, rng);
    return p;
}

inline Parameter make_bias(std::string name, int out) {
    Parameter p;
    p.name = std::move(name);
    p.value = Tensor::zeros({out});
    return p;
}

/// Affine map y = Wx + b. W is out×in, b is out.
struct DenseLayer {
    Parameter W;
    Parameter b;

    DenseLayer() = default;
    DenseLayer(const std::string& name, int out, int in, Rng& rng)
        : W(make_dense_weight(name + ".W", out, in, rng)), b(make_bias(name + ".b", out)) {}

    int out_dim() const { return W.value.rows(); }
    int in_dim() const { return W.value.cols(); }

    Var forward(Graph& g, Var x) { return g.add_cols(g.matmul(g.param(W), x), g.param(b)); }
};

inline Var dense_forward(Graph& g, DenseLayer& layer, Var x) { return layer.forward(g, x); }

/// Gated recurrence (GRU-style, three gates) folding a sequence of input
/// vectors into one hidden state. The cell type is behind this contract so a
/// four-gate variant could replace it without touching callers.
struct RecurrentEncoder {
    int input_dim = 0;
    int hidden_dim = 0;
    Parameter Wz, Uz, bz;
    Parameter Wr, Ur, br;
    Parameter Wh, Uh, bh;

    RecurrentEncoder() = default;
    RecurrentEncoder(const std::string& name, int input_dim_, int hidden_dim_, Rng& rng)
        : input_dim(input_dim_), hidden_dim(hidden_dim_) {
        Wz = make_dense_weight(name + ".Wz", hidden_dim, input_dim, rng);
        Uz = make_dense_weight(name + ".Uz", hidden_dim, hidden_dim, rng);
        bz = make_bias(name + ".bz", hidden_dim);
        Wr = make_dense_weight(name + ".Wr", hidden_dim, input_dim, rng);
        Ur = make_dense_weight(name + ".Ur", hidden_dim, hidden_dim, rng);
        br = make_bias(name + ".br", hidden_dim);
        Wh = make_dense_weight(name + ".Wh", hidden_dim, input_dim, rng);
        Uh = make_dense_weight(name + ".Uh", hidden_dim, hidden_dim, rng);
        bh = make_bias(name + ".bh", hidden_dim);
    }

    /// z = σ(Wz x + Uz h + bz)
    /// r = σ(Wr x + Ur h + br)
    /// ĥ = tanh(Wh x + Uh (r⊙h) + bh)
    /// h' = (1−z)⊙h + z⊙ĥ
    Var forward(Graph& g, const std::vector<Tensor>& xs) {
        if (xs.empty()) throw EmptySequence("recurrent_forward: empty input sequence");
        for (const Tensor& x : xs)
            if (x.rows() != input_dim || x.cols() != 1)
                throw ShapeMismatch("recurrent_forward: input " + x.dims_str() + " for dim " +
                                    std::to_string(input_dim));
        Var h = g.constant(Tensor::zeros({hidden_dim}));
        for (const Tensor& xt : xs) {
            Var x = g.constant(xt);
            Var z = g.sigmoid(g.add_cols(g.add(g.matmul(g.param(Wz), x), g.matmul(g.param(Uz), h)), g.param(bz)));
            Var r = g.sigmoid(g.add_cols(g.add(g.matmul(g.param(Wr), x), g.matmul(g.param(Ur), h)), g.param(br)));
            Var hc = g.tanh_act(g.add_cols(
                g.add(g.matmul(g.param(Wh), x), g.matmul(g.param(Uh), g.mul(r, h))), g.param(bh)));
            h = g.add(g.mul(g.one_minus(z), h), g.mul(z, hc));
        }
        return h;
    }

    std::vector<Parameter*> parameters() {
        return {&Wz, &Uz, &bz, &Wr, &Ur, &br, &Wh, &Uh, &bh};
    }
};

inline Var recurrent_forward(Graph& g, RecurrentEncoder& enc, const std::vector<Tensor>& xs) {
    return enc.forward(g, xs);
}

/// Fixed random linear map from the flat observation bit vector to the visual
/// embedding. Stands in for a frozen pretrained image encoder. P is stored
/// input-major (row per observation bit) so projecting a sparse 0/1 vector
/// accumulates contiguous rows.
struct FrozenProjector {
    Parameter P;
    int in_dim = 0;
    int out_dim = 0;

    FrozenProjector() = default;
    FrozenProjector(const std::string& name, int in, int out, uint64_t seed) : in_dim(in), out_dim(out) {
        Rng rng(seed);
        P.name = name + ".P";
        P.value = Tensor::matrix(in, out);
        glorot_fill(P.value, in, out, rng);
        P.trainable = false;
    }

    Tensor project_bits(const std::vector<uint8_t>& bits) const {
        if (static_cast<int>(bits.size()) != in_dim)
            throw ShapeMismatch("project_bits: " + std::to_string(bits.size()) + " bits for dim " +
                                std::to_string(in_dim));
        Tensor y = Tensor::zeros({out_dim});
        for (int i = 0; i < in_dim; ++i) {
            if (!bits[i]) continue;
            const double* row = P.value.data.data() + static_cast<size_t>(i) * out_dim;
            for (int o = 0; o < out_dim; ++o) y[o] += row[o];
        }
        return y;
    }

    /// Columns of the result are the projections of the given observations.
    Tensor project_bits_batch(const std::vector<const std::vector<uint8_t>*>& obs) const {
        Tensor y = Tensor::matrix(out_dim, static_cast<int>(obs.size()));
        for (size_t j = 0; j < obs.size(); ++j) {
            Tensor col = project_bits(*obs[j]);
            for (int o = 0; o < out_dim; ++o) y.at(o, static_cast<int>(j)) = col[o];
        }
        return y;
    }
};

/// Shared optimizer: one state object serves every parameter of a model,
/// keyed by parameter name. acc ← decay·acc + (1−decay)·g²;
/// p ← p − lr·g / (√acc + eps).
struct RmsPropState {
    double learning_rate = 1e-4;
    double decay = 0.99;
    double epsilon = 1e-8;
    std::unordered_map<std::string, Tensor> acc;
};

/// One optimizer step over the given parameters, consuming their grad
/// buffers. Frozen parameters are skipped. When a parameter gained rows
/// since its accumulator was created (a grown head), the accumulator grows
/// with zero rows so transferred weights keep their history.
inline void rmsprop_step(RmsPropState& st, const std::vector<Parameter*>& params) {
    for (Parameter* p : params) {
        if (!p->trainable) continue;
        if (p->grad.data.size() != p->value.data.size())
            throw ShapeMismatch("rmsprop_step: no gradient for " + p->name);
        auto it = st.acc.find(p->name);
        if (it == st.acc.end()) {
            it = st.acc.emplace(p->name, Tensor::zeros(p->value.shape)).first;
        } else if (it->second.data.size() != p->value.data.size()) {
            Tensor& a = it->second;
            if (a.cols() == p->value.cols() && a.rows() < p->value.rows()) {
                Tensor grown = Tensor::zeros(p->value.shape);
                std::copy(a.data.begin(), a.data.end(), grown.data.begin());
                a = std::move(grown);
            } else {
                throw ShapeMismatch("rmsprop_step: accumulator " + a.dims_str() + " vs parameter " +
                                    p->value.dims_str() + " for " + p->name);
            }
        }
        Tensor& a = it->second;
        for (size_t i = 0; i < p->value.data.size(); ++i) {
            double g = p->grad.data[i];
            a.data[i] = st.decay * a.data[i] + (1.0 - st.decay) * g * g;
            p->value.data[i] -= st.learning_rate * g / (std::sqrt(a.data[i]) + st.epsilon);
        }
        if (!p->value.finite()) throw NonFiniteValue("rmsprop_step: " + p->name + " went non-finite");
    }
}

struct GradCheckResult {
    double max_rel_err = 0.0;
    int checked = 0;
    std::string worst;
};

/// Central finite-difference check. Callers run one graph backward so the
/// analytic gradients sit in each parameter's grad buffer, then pass a
/// side-effect-free loss recomputation. Entries are subsampled per parameter.
/// Relative error uses max(1, |analytic|, |numeric|) as the denominator.
template <class LossFn>
GradCheckResult check_gradients(LossFn&& loss, const std::vector<Parameter*>& params, Rng& rng,
                                int samples_per_param = 8, double h = 1e-5) {
    GradCheckResult res;
    for (Parameter* p : params) {
        if (!p->trainable) continue;
        if (p->grad.data.size() != p->value.data.size())
            throw ShapeMismatch("check_gradients: no gradient for " + p->name);
        int n = static_cast<int>(p->value.data.size());
        int take = samples_per_param < n ? samples_per_param : n;
        for (int s = 0; s < take; ++s) {
            int i = take == n ? s : rng.uniform_below(n);
            double saved = p->value.data[i];
            p->value.data[i] = saved + h;
            double up = loss();
            p->value.data[i] = saved - h;
            double down = loss();
            p->value.data[i] = saved;
            double numeric = (up - down) / (2.0 * h);
            double analytic = p->grad.data[i];
            double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
            double rel = std::abs(analytic - numeric) / denom;
            ++res.checked;
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst = p->name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return res;
}

}  // namespace iclnav
