#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "denserec/errors.hpp"

namespace denserec {

// Dense row-major array, rank 1..3, 64-bit values. Gradient checks rely on
// the double precision; nothing in here is templated on element type.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        std::size_t n = 1;
        if (shape_.empty() || shape_.size() > 3) {
            throw shape_error("tensor rank must be 1..3, got rank " + std::to_string(shape_.size()));
        }
        for (int d : shape_) {
            if (d <= 0) throw shape_error("tensor extents must be positive: " + shape_str(shape_));
            n *= static_cast<std::size_t>(d);
        }
        data_.assign(n, 0.0);
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int> shape, double v) {
        Tensor t(std::move(shape));
        for (double& x : t.data_) x = v;
        return t;
    }

    static Tensor from_rows(const std::vector<std::vector<double>>& rows) {
        Tensor t({static_cast<int>(rows.size()), static_cast<int>(rows.at(0).size())});
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != rows[0].size()) throw shape_error("ragged row initializer");
            for (std::size_t j = 0; j < rows[i].size(); ++j) t.at(int(i), int(j)) = rows[i][j];
        }
        return t;
    }

    static Tensor from_vector(std::vector<double> v) {
        Tensor t({static_cast<int>(v.size())});
        t.data_ = std::move(v);
        return t;
    }

    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
    const std::vector<int>& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    int rows() const { return rank() == 1 ? 1 : dim(0); }
    int cols() const { return rank() == 1 ? dim(0) : dim(rank() - 1); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(int i) { return data_[static_cast<std::size_t>(i)]; }
    double at(int i) const { return data_[static_cast<std::size_t>(i)]; }
    double& at(int i, int j) { return data_[static_cast<std::size_t>(i) * cols() + j]; }
    double at(int i, int j) const { return data_[static_cast<std::size_t>(i) * cols() + j]; }

    double* row_ptr(int i) { return data_.data() + static_cast<std::size_t>(i) * cols(); }
    const double* row_ptr(int i) const { return data_.data() + static_cast<std::size_t>(i) * cols(); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    void fill(double v) {
        for (double& x : data_) x = v;
    }

    void zero() { fill(0.0); }

    bool all_finite() const {
        for (double x : data_) {
            if (!std::isfinite(x)) return false;
        }
        return true;
    }

    double squared_norm() const {
        double s = 0.0;
        for (double x : data_) s += x * x;
        return s;
    }

    static std::string shape_str(const std::vector<int>& shape) {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) os << "x";
            os << shape[i];
        }
        os << "]";
        return os.str();
    }

    std::string shape_str() const { return shape_str(shape_); }

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b)) {
        throw shape_error(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
}

// c (+)= op(a) * op(b); plain triple loop in the cache-friendly order.
// Shapes are the *effective* (post-transpose) ones.
inline void matmul_into(const Tensor& a, const Tensor& b, Tensor& c, bool ta, bool tb, bool accumulate) {
    const int am = a.rank() == 1 ? 1 : a.dim(0);
    const int an = a.rank() == 1 ? a.dim(0) : a.dim(1);
    const int bm = b.rank() == 1 ? 1 : b.dim(0);
    const int bn = b.rank() == 1 ? b.dim(0) : b.dim(1);
    const int m = ta ? an : am;
    const int k = ta ? am : an;
    const int kb = tb ? bn : bm;
    const int n = tb ? bm : bn;
    if (k != kb) {
        throw shape_error("matmul: inner extents differ, " + a.shape_str() + (ta ? "^T" : "") + " * " +
                          b.shape_str() + (tb ? "^T" : ""));
    }
    if (c.rows() != m || c.cols() != n) {
        throw shape_error("matmul: output shape " + c.shape_str() + " incompatible with result [" +
                          std::to_string(m) + "x" + std::to_string(n) + "]");
    }
    if (!accumulate) c.zero();
    const double* pa = a.data();
    const double* pb = b.data();
    double* pc = c.data();
    if (!ta && !tb) {
        for (int i = 0; i < m; ++i) {
            const double* arow = pa + std::size_t(i) * k;
            double* crow = pc + std::size_t(i) * n;
            for (int t = 0; t < k; ++t) {
                const double av = arow[t];
                if (av == 0.0) continue;
                const double* brow = pb + std::size_t(t) * n;
                for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    } else if (!ta && tb) {
        for (int i = 0; i < m; ++i) {
            const double* arow = pa + std::size_t(i) * k;
            double* crow = pc + std::size_t(i) * n;
            for (int j = 0; j < n; ++j) {
                const double* brow = pb + std::size_t(j) * k;
                double s = 0.0;
                for (int t = 0; t < k; ++t) s += arow[t] * brow[t];
                crow[j] += s;
            }
        }
    } else if (ta && !tb) {
        for (int t = 0; t < k; ++t) {
            const double* arow = pa + std::size_t(t) * m;
            const double* brow = pb + std::size_t(t) * n;
            for (int i = 0; i < m; ++i) {
                const double av = arow[i];
                if (av == 0.0) continue;
                double* crow = pc + std::size_t(i) * n;
                for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    } else {
        for (int i = 0; i < m; ++i) {
            double* crow = pc + std::size_t(i) * n;
            for (int j = 0; j < n; ++j) {
                const double* brow = pb + std::size_t(j) * k;
                double s = 0.0;
                for (int t = 0; t < k; ++t) s += pa[std::size_t(t) * m + i] * brow[t];
                crow[j] += s;
            }
        }
    }
}

}  // namespace denserec
