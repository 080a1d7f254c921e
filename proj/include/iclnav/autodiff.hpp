#pragma once

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "iclnav/errors.hpp"
#include "iclnav/tensor.hpp"

namespace iclnav {

/// Named tensor with an optional gradient buffer. Models own their parameters;
/// graphs accumulate into `grad` during backward. Frozen parameters
/// (trainable == false) never receive gradients and are skipped by optimizers.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;

    void zero_grad() {
        grad.shape = value.shape;
        grad.data.assign(value.data.size(), 0.0);
    }
};

namespace detail {
using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<EMat>;
using CMap = Eigen::Map<const EMat>;

inline CMap cmap(const Tensor& t) { return CMap(t.data.data(), t.rows(), t.cols()); }
inline Map mmap(Tensor& t) { return Map(t.data.data(), t.rows(), t.cols()); }
}  // namespace detail

/// Define-by-run reverse-mode tape over Tensors. Values are computed eagerly
/// when an op node is created; gradients only exist once backward() runs.
/// Node ids grow monotonically, so reverse creation order is a valid
/// topological order for backpropagation.
class Graph {
public:
    struct Var {
        int id = -1;
        bool valid() const { return id >= 0; }
    };

    Var constant(Tensor t) { return push(std::move(t), {}, {}); }

    /// Leaf bound to a model parameter. Backward accumulates into p.grad
    /// unless the parameter is frozen.
    Var param(Parameter& p) {
        Parameter* pp = &p;
        return push(p.value, {}, [pp](Graph& g, int id) {
            if (!pp->trainable) return;
            if (pp->grad.data.size() != pp->value.data.size()) pp->zero_grad();
            const Tensor& gin = g.nodes_[id].grad;
            for (size_t i = 0; i < gin.data.size(); ++i) pp->grad.data[i] += gin.data[i];
        });
    }

    Var matmul(Var a, Var b) {
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        if (ta.cols() != tb.rows())
            throw ShapeMismatch("matmul: " + ta.dims_str() + " * " + tb.dims_str());
        Tensor out = Tensor::matrix(ta.rows(), tb.cols());
        detail::mmap(out).noalias() = detail::cmap(ta) * detail::cmap(tb);
        return push(std::move(out), {a.id, b.id}, [](Graph& g, int id) {
            auto& n = g.nodes_[id];
            const Tensor& gy = n.grad;
            int ia = n.parents[0], ib = n.parents[1];
            const Tensor& ta = g.nodes_[ia].value;
            const Tensor& tb = g.nodes_[ib].value;
            if (g.wants_grad(ia))
                detail::mmap(g.grad_buf(ia)).noalias() += detail::cmap(gy) * detail::cmap(tb).transpose();
            if (g.wants_grad(ib))
                detail::mmap(g.grad_buf(ib)).noalias() += detail::cmap(ta).transpose() * detail::cmap(gy);
        });
    }

    /// Broadcast-add a column vector b to every column of x.
    Var add_cols(Var x, Var b) {
        const Tensor& tx = value(x);
        const Tensor& tb = value(b);
        if (tb.cols() != 1 || tb.rows() != tx.rows())
            throw ShapeMismatch("add_cols: " + tx.dims_str() + " + " + tb.dims_str());
        Tensor out = tx;
        for (int r = 0; r < tx.rows(); ++r)
            for (int c = 0; c < tx.cols(); ++c) out.at(r, c) += tb[r];
        return push(std::move(out), {x.id, b.id}, [](Graph& g, int id) {
            auto& n = g.nodes_[id];
            const Tensor& gy = n.grad;
            int ix = n.parents[0], ib = n.parents[1];
            if (g.wants_grad(ix)) {
                Tensor& gx = g.grad_buf(ix);
                for (size_t i = 0; i < gy.data.size(); ++i) gx.data[i] += gy.data[i];
            }
            if (g.wants_grad(ib)) {
                Tensor& gb = g.grad_buf(ib);
                for (int r = 0; r < gy.rows(); ++r)
                    for (int c = 0; c < gy.cols(); ++c) gb[r] += gy.at(r, c);
            }
        });
    }

    Var add(Var a, Var b) { return binary_pointwise(a, b, "add",
        [](double x, double y) { return x + y; }, 1.0, 1.0); }

    Var sub(Var a, Var b) { return binary_pointwise(a, b, "sub",
        [](double x, double y) { return x - y; }, 1.0, -1.0); }

    /// Elementwise product.
    Var mul(Var a, Var b) {
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        require_dims(ta, tb, "mul");
        Tensor out = ta;
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= tb.data[i];
        return push(std::move(out), {a.id, b.id}, [](Graph& g, int id) {
            auto& n = g.nodes_[id];
            const Tensor& gy = n.grad;
            int ia = n.parents[0], ib = n.parents[1];
            const Tensor& ta = g.nodes_[ia].value;
            const Tensor& tb = g.nodes_[ib].value;
            if (g.wants_grad(ia)) {
                Tensor& ga = g.grad_buf(ia);
                for (size_t i = 0; i < gy.data.size(); ++i) ga.data[i] += gy.data[i] * tb.data[i];
            }
            if (g.wants_grad(ib)) {
                Tensor& gb = g.grad_buf(ib);
                for (size_t i = 0; i < gy.data.size(); ++i) gb.data[i] += gy.data[i] * ta.data[i];
            }
        });
    }

    Var relu(Var x) {
        Tensor out = value(x);
        for (double& v : out.data) v = v > 0.0 ? v : 0.0;
        return push(std::move(out), {x.id}, [](Graph& g, int id) {
            auto& n = g.nodes_[id];
            int ix = n.parents[0];
            if (!g.wants_grad(ix)) return;
            const Tensor& tx = g.nodes_[ix].value;
            Tensor& gx = g.grad_buf(ix);
            // subgradient at exactly 0 is pinned to 0
            for (size_t i = 0; i < tx.data.size(); ++i)
                if (tx.data[i] > 0.0) gx.data[i] += n.grad.data[i];
        });
    }

    Var sigmoid(Var x) {
        Tensor out = value(x);
        for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
        return unary_from_output(std::move(out), x, [](double y) { return y * (1.0 - y); });
    }

    Var tanh_act(Var x) {
        Tensor out = value(x);
        for (double& v : out.data) v = std::tanh(v);
        return unary_from_output(std::move(out), x, [](double y) { return 1.0 - y * y; });
    }

    Var one_minus(Var x) {
        Tensor out = value(x);
        for (double& v : out.data) v = 1.0 - v;
        return push(std::move(out), {x.id}, [](Graph& g, int id) {
            auto& n = g.nodes_[id];
            int ix = n.parents[0];
            if (!g.wants_grad(ix)) return;
            Tensor& gx = g.grad_buf(ix);
            for (size_t i = 0; i < n.grad.data.size(); ++i) gx.data[i] -= n.grad.data[i];
        });
    }

    Var scale(Var x, double c) {
        Tensor out = value(x);
        for (double& v : out.data) v *= c;
        return push(std::move(out), {x.id}, [c](Graph& g, int id) {
            auto& n = g.nodes_[id];
            int ix = n.parents[0];
            if (!g.wants_grad(ix)) return;
            Tensor& gx = g.grad_buf(ix);
            for (size_t i = 0; i < n.grad.data.size(); ++i) gx.data[i] += c * n.grad.data[i];
        });
    }

    /// Stack a on top of b (column counts must match). a occupies the low rows.
    Var concat_rows(Var a, Var b) {
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        if (ta.size() == 0) return b;
        if (tb.size() == 0) return a;
        if (ta.cols() != tb.cols())
            throw ShapeMismatch("concat_rows: " + ta.dims_str() + " over " + tb.dims_str());
        Tensor out = Tensor::matrix(ta.rows() + tb.rows(), ta.cols());
        detail::mmap(out).topRows(ta.rows()) = detail::cmap(ta);
        detail::mmap(out).bottomRows(tb.rows()) = detail::cmap(tb);
        if (out.cols() == 1) out.shape = {out.rows()};
        return push(std::move(out), {a.id, b.id}, [](Graph& g, int id) {
            auto& n = g.nodes_[id];
            const Tensor& gy = n.grad;
            int ia = n.parents[0], ib = n.parents[1];
            int ra = g.nodes_[ia].value.rows();
            int rb = g.nodes_[ib].value.rows();
            if (g.wants_grad(ia))
                detail::mmap(g.grad_buf(ia)) += detail::cmap(gy).topRows(ra);
            if (g.wants_grad(ib))
                detail::mmap(g.grad_buf(ib)) += detail::cmap(gy).bottomRows(rb);
        });
    }

    /// Columns of a batch matrix from per-sample column vectors.
    Var concat_cols(const std::vector<Var>& xs) {
        if (xs.empty()) throw EmptySequence("concat_cols: no columns");
        int r = value(xs[0]).rows();
        Tensor out = Tensor::matrix(r, static_cast<int>(xs.size()));
        std::vector<int> parents;
        parents.reserve(xs.size());
        for (size_t j = 0; j < xs.size(); ++j) {
            const Tensor& tj = value(xs[j]);
            if (tj.rows() != r || tj.cols() != 1)
                throw ShapeMismatch("concat_cols: column " + std::to_string(j) + " is " + tj.dims_str());
            for (int i = 0; i < r; ++i) out.at(i, static_cast<int>(j)) = tj[i];
            parents.push_back(xs[j].id);
        }
        return push(std::move(out), std::move(parents), [](Graph& g, int id) {
            auto& n = g.nodes_[id];
            const Tensor& gy = n.grad;
            for (size_t j = 0; j < n.parents.size(); ++j) {
                int ij = n.parents[j];
                if (!g.wants_grad(ij)) continue;
                Tensor& gj = g.grad_buf(ij);
                for (int i = 0; i < gy.rows(); ++i) gj[i] += gy.at(i, static_cast<int>(j));
            }
        });
    }

    /// Per-column entry selection: out[j] = q(idx[j], j).
    Var select_entries(Var q, std::vector<int> idx) {
        const Tensor& tq = value(q);
        if (static_cast<int>(idx.size()) != tq.cols())
            throw ShapeMismatch("select_entries: " + std::to_string(idx.size()) + " indices for " + tq.dims_str());
        Tensor out = Tensor::zeros({static_cast<int>(idx.size())});
        for (size_t j = 0; j < idx.size(); ++j) {
            if (idx[j] < 0 || idx[j] >= tq.rows())
                throw IndexOutOfRange("select_entries: action " + std::to_string(idx[j]));
            out[static_cast<int>(j)] = tq.at(idx[j], static_cast<int>(j));
        }
        auto indices = std::make_shared<std::vector<int>>(std::move(idx));
        return push(std::move(out), {q.id}, [indices](Graph& g, int id) {
            auto& n = g.nodes_[id];
            int iq = n.parents[0];
            if (!g.wants_grad(iq)) return;
            Tensor& gq = g.grad_buf(iq);
            for (size_t j = 0; j < indices->size(); ++j)
                gq.at((*indices)[j], static_cast<int>(j)) += n.grad[static_cast<int>(j)];
        });
    }

    /// Mean squared error against a fixed target vector; scalar output.
    Var mse_against(Var pred, Tensor target) {
        const Tensor& tp = value(pred);
        require_dims(tp, target, "mse_against");
        double acc = 0.0;
        for (size_t i = 0; i < tp.data.size(); ++i) {
            double d = tp.data[i] - target.data[i];
            acc += d * d;
        }
        int n = static_cast<int>(tp.data.size());
        Tensor out = Tensor::from({acc / n});
        auto tgt = std::make_shared<Tensor>(std::move(target));
        return push(std::move(out), {pred.id}, [tgt, n](Graph& g, int id) {
            auto& node = g.nodes_[id];
            int ip = node.parents[0];
            if (!g.wants_grad(ip)) return;
            const Tensor& tp = g.nodes_[ip].value;
            Tensor& gp = g.grad_buf(ip);
            double s = node.grad[0] * 2.0 / n;
            for (size_t i = 0; i < tp.data.size(); ++i)
                gp.data[i] += s * (tp.data[i] - tgt->data[i]);
        });
    }

    Var sum(Var x) {
        const Tensor& tx = value(x);
        double acc = 0.0;
        for (double v : tx.data) acc += v;
        return push(Tensor::from({acc}), {x.id}, [](Graph& g, int id) {
            auto& n = g.nodes_[id];
            int ix = n.parents[0];
            if (!g.wants_grad(ix)) return;
            Tensor& gx = g.grad_buf(ix);
            for (double& v : gx.data) v += n.grad[0];
        });
    }

    const Tensor& value(Var v) const {
        check(v);
        return nodes_[v.id].value;
    }

    /// Gradient w.r.t. a node; only meaningful after backward().
    const Tensor& grad(Var v) const {
        check(v);
        return nodes_[v.id].grad;
    }

    /// Reverse-mode sweep from a scalar loss node. Accumulates into every
    /// reachable Parameter's grad buffer (callers zero those beforehand).
    void backward(Var loss) {
        if (!loss.valid() || loss.id >= static_cast<int>(nodes_.size()) || nodes_.empty())
            throw NoRecordedForward("backward: no recorded forward pass for this loss");
        if (nodes_[loss.id].value.size() != 1)
            throw ShapeMismatch("backward: loss must be scalar, got " + nodes_[loss.id].value.dims_str());
        for (int i = 0; i <= loss.id; ++i) {
            nodes_[i].grad.shape = nodes_[i].value.shape;
            nodes_[i].grad.data.assign(nodes_[i].value.data.size(), 0.0);
        }
        nodes_[loss.id].grad.data[0] = 1.0;
        for (int i = loss.id; i >= 0; --i)
            if (nodes_[i].back) nodes_[i].back(*this, i);
    }

    int node_count() const { return static_cast<int>(nodes_.size()); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<int> parents;
        std::function<void(Graph&, int)> back;
    };

    Var push(Tensor value, std::vector<int> parents, std::function<void(Graph&, int)> back) {
        Node n;
        n.value = std::move(value);
        n.parents = std::move(parents);
        n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    // backward() zeroes every buffer up to the loss node before the sweep,
    // so these are trivially true / pre-sized by the time a back fn runs.
    bool wants_grad(int) const { return true; }
    Tensor& grad_buf(int id) { return nodes_[id].grad; }

    void check(Var v) const {
        if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
            throw NoRecordedForward("invalid graph variable");
    }

    std::vector<Node> nodes_;

    template <class Op>
    Var binary_pointwise(Var a, Var b, const char* name, Op op, double ca, double cb) {
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        require_dims(ta, tb, name);
        Tensor out = ta;
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = op(ta.data[i], tb.data[i]);
        return push(std::move(out), {a.id, b.id}, [ca, cb](Graph& g, int id) {
            auto& n = g.nodes_[id];
            int ia = n.parents[0], ib = n.parents[1];
            if (g.wants_grad(ia)) {
                Tensor& ga = g.grad_buf(ia);
                for (size_t i = 0; i < n.grad.data.size(); ++i) ga.data[i] += ca * n.grad.data[i];
            }
            if (g.wants_grad(ib)) {
                Tensor& gb = g.grad_buf(ib);
                for (size_t i = 0; i < n.grad.data.size(); ++i) gb.data[i] += cb * n.grad.data[i];
            }
        });
    }

    template <class DOut>
    Var unary_from_output(Tensor out, Var x, DOut dout) {
        return push(std::move(out), {x.id}, [dout](Graph& g, int id) {
            auto& n = g.nodes_[id];
            int ix = n.parents[0];
            if (!g.wants_grad(ix)) return;
            Tensor& gx = g.grad_buf(ix);
            for (size_t i = 0; i < n.grad.data.size(); ++i)
                gx.data[i] += n.grad.data[i] * dout(n.value.data[i]);
        });
    }
};

using Var = Graph::Var;

}  // namespace iclnav
