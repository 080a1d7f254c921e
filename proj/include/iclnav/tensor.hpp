#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "iclnav/errors.hpp"

namespace iclnav {

/// Dense rank-1/rank-2 tensor, row-major doubles. Rank-1 tensors behave as
/// column vectors (n x 1) in every matrix op.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;

    static Tensor zeros(std::vector<int> s) {
        Tensor t;
        t.shape = std::move(s);
        t.data.assign(t.count(), 0.0);
        return t;
    }

    static Tensor from(std::vector<double> values) {
        Tensor t;
        t.shape = {static_cast<int>(values.size())};
        t.data = std::move(values);
        return t;
    }

    static Tensor matrix(int r, int c) { return zeros({r, c}); }

    int count() const {
        int n = 1;
        for (int d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }

    int rows() const { return shape.empty() ? 0 : shape[0]; }
    int cols() const { return shape.size() >= 2 ? shape[1] : (shape.empty() ? 0 : 1); }
    int size() const { return static_cast<int>(data.size()); }

    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }
    double& operator[](int i) { return data[i]; }
    double operator[](int i) const { return data[i]; }

    bool same_dims(const Tensor& o) const { return rows() == o.rows() && cols() == o.cols(); }

    bool finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::string dims_str() const {
        std::ostringstream os;
        os << rows() << "x" << cols();
        return os.str();
    }
};

inline void require_dims(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_dims(b))
        throw ShapeMismatch(std::string(op) + ": " + a.dims_str() + " vs " + b.dims_str());
}

}  // namespace iclnav
