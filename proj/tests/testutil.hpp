#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "denserec/autograd.hpp"
#include "denserec/rng.hpp"
#include "denserec/tensor.hpp"

namespace testutil {

// Scratch directory under the system temp root, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        auto base = std::filesystem::temp_directory_path();
        for (int i = 0; i < 10000; ++i) {
            auto candidate = base / (tag + "-" + std::to_string(i));
            std::error_code ec;
            if (std::filesystem::create_directory(candidate, ec)) {
                path_ = candidate;
                return;
            }
        }
        throw std::runtime_error("could not create temp dir for " + tag);
    }

    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }

    const std::filesystem::path& path() const { return path_; }

    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline denserec::Tensor random_tensor(std::vector<int> shape, denserec::RngStream& rng, double scale = 1.0) {
    denserec::Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * (2.0 * rng.next_uniform() - 1.0);
    return t;
}

// Independent triple-loop product used as the matmul oracle.
inline denserec::Tensor matmul_oracle(const denserec::Tensor& a, const denserec::Tensor& b) {
    const int m = a.rows(), k = a.cols(), n = b.cols();
    denserec::Tensor c({m, n});
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int t = 0; t < k; ++t) s += a.at(i, t) * b.at(t, j);
            c.at(i, j) = s;
        }
    }
    return c;
}

// Scalar readout sum_ij w_ij * x_ij built from existing tape ops, for
// driving gradient checks of matrix-valued primitives.
inline denserec::NodeId weighted_sum(denserec::Tape& tape, denserec::NodeId x, const denserec::Tensor& w) {
    using denserec::Tensor;
    const Tensor& xv = tape.value(x);
    if (xv.rank() == 1) {
        denserec::NodeId wrow = tape.constant(w);  // [1 x d]
        return tape.dot_rows(wrow, x);             // [1]
    }
    denserec::NodeId wn = tape.constant(w);              // [m x 1] per-column weights
    denserec::NodeId per_row = tape.matmul(x, wn);       // [n x 1]
    Tensor ones({1, xv.rows()});
    ones.fill(1.0);
    denserec::NodeId onesn = tape.constant(ones);
    return tape.matmul(onesn, per_row);  // [1 x 1]
}

}  // namespace testutil
