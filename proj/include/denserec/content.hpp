#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "denserec/errors.hpp"

namespace denserec {

// Fixed per-item content vectors, keyed by catalog index. All vectors share
// one dimension and must be finite; both are checked on insert.
class ContentEmbeddingStore {
public:
    ContentEmbeddingStore() = default;
    explicit ContentEmbeddingStore(int dim) : dim_(dim) {
        if (dim <= 0) throw config_error("content dimension must be positive, got " + std::to_string(dim));
    }

    int dim() const { return dim_; }
    std::size_t size() const { return vectors_.size(); }
    bool has(int item) const { return vectors_.find(item) != vectors_.end(); }

    const std::vector<double>& vec(int item) const {
        auto it = vectors_.find(item);
        if (it == vectors_.end())
            throw data_error("no content vector stored for item index " + std::to_string(item));
        return it->second;
    }

    // Inserts or replaces; returns false when an existing entry was replaced.
    bool set(int item, std::vector<double> v) {
        if (dim_ == 0) {
            if (v.empty()) throw data_error("content vector for item " + std::to_string(item) + " is empty");
            dim_ = int(v.size());
        }
        if (int(v.size()) != dim_)
            throw data_error("content vector for item " + std::to_string(item) + " has dimension " +
                             std::to_string(v.size()) + ", store uses " + std::to_string(dim_));
        for (double x : v)
            if (!std::isfinite(x))
                throw data_error("content vector for item " + std::to_string(item) + " contains a non-finite value");
        auto [it, inserted] = vectors_.insert_or_assign(item, std::move(v));
        (void)it;
        return inserted;
    }

    const std::unordered_map<int, std::vector<double>>& all() const { return vectors_; }

private:
    int dim_ = 0;
    std::unordered_map<int, std::vector<double>> vectors_;
};

}  // namespace denserec
