#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "denserec/autograd.hpp"
#include "denserec/content.hpp"
#include "denserec/data.hpp"
#include "denserec/errors.hpp"
#include "denserec/log.hpp"
#include "denserec/model.hpp"
#include "denserec/tensor.hpp"
#include "denserec/training.hpp"

namespace denserec {

// The retrieval index: one embedding row per rankable item. Known items use
// their trained ID rows; cold items (dual-path mode only) use projected
// content. Rows keep ascending catalog-index order.
struct CandidateMatrix {
    std::vector<int> items;
    Tensor embeddings;
    std::vector<std::uint8_t> dense_tag;  // 1 when the row came from projected content
    std::unordered_map<int, int> row_of;
    int excluded_missing_content = 0;

    int row_for(int item) const {
        auto it = row_of.find(item);
        return it == row_of.end() ? -1 : it->second;
    }
};

inline CandidateMatrix assemble_candidates(const CatalogIndex& catalog, const ModelState& state,
                                           const ContentEmbeddingStore& contents, Mode eval_mode) {
    if (catalog.num_train_items != state.num_train_items)
        throw contract_error("catalog has " + std::to_string(catalog.num_train_items) +
                             " training items but the model was built for " +
                             std::to_string(state.num_train_items));

    CandidateMatrix out;
    std::vector<int> cold_items;
    for (int i = 0; i < catalog.num_items(); ++i) {
        if (!catalog.in_candidate_set(i)) continue;
        if (catalog.is_train_item(i)) {
            out.items.push_back(i);
        } else if (eval_mode == Mode::denserec) {
            if (contents.has(i)) {
                out.items.push_back(i);
                cold_items.push_back(i);
            } else {
                ++out.excluded_missing_content;
            }
        }
        // id_only mode cannot represent cold items at all; they simply have
        // no row and every such target becomes a structural miss.
    }
    if (out.excluded_missing_content > 0) {
        log::info("warning: %d cold candidate items lack content vectors and were excluded from ranking",
                  out.excluded_missing_content);
    }
    if (out.items.empty()) throw contract_error("assemble_candidates: empty candidate set");

    const int d = state.cfg.d;
    out.embeddings = Tensor({int(out.items.size()), d});
    out.dense_tag.assign(out.items.size(), 0);

    Tensor cold_rows;
    if (!cold_items.empty()) {
        if (!state.projection) throw contract_error("cold candidates require a projection layer");
        Tensor cold_contents({int(cold_items.size()), state.cfg.d_c});
        for (std::size_t r = 0; r < cold_items.size(); ++r) {
            const std::vector<double>& v = contents.vec(cold_items[r]);
            for (int j = 0; j < state.cfg.d_c; ++j) cold_contents.at(int(r), j) = v[std::size_t(j)];
        }
        cold_rows = project_content_values(*state.projection, cold_contents);
    }

    std::size_t next_cold = 0;
    for (std::size_t r = 0; r < out.items.size(); ++r) {
        const int item = out.items[r];
        out.row_of.emplace(item, int(r));
        double* dst = out.embeddings.row_ptr(int(r));
        if (catalog.is_train_item(item)) {
            const double* src = state.item_emb.value.row_ptr(item);
            for (int j = 0; j < d; ++j) dst[j] = src[j];
        } else {
            out.dense_tag[r] = 1;
            const double* src = cold_rows.row_ptr(int(next_cold++));
            for (int j = 0; j < d; ++j) dst[j] = src[j];
        }
    }
    return out;
}

// Encodes one held-out interaction history for scoring. Dual-path mode sends
// known items through their ID rows and cold items through the projection;
// ID-only mode drops cold items entirely. Returns nothing when no usable
// positions remain. No stochastic path selection and no dropout here.
inline std::optional<Tensor> encode_test_sequence(const std::vector<int>& items, ModelState& state,
                                                  const ContentEmbeddingStore& contents, Mode eval_mode,
                                                  int* dropped_positions = nullptr) {
    std::vector<int> kept;
    PathMask mask;
    int dropped = 0;
    for (int item : items) {
        const bool cold = item >= state.num_train_items;
        if (!cold) {
            kept.push_back(item);
            mask.z.push_back(0);
        } else if (eval_mode == Mode::denserec && contents.has(item)) {
            kept.push_back(item);
            mask.z.push_back(1);
        } else {
            ++dropped;
        }
    }
    if (dropped_positions) *dropped_positions += dropped;
    if (kept.empty()) return std::nullopt;

    Tape tape;
    RngStream no_drop(0, 0);
    NodeId h = encode_sequence(tape, kept, mask, state, contents, /*training=*/false, no_drop);
    return tape.value(h);
}

// Exact top-k by score, descending; equal scores break toward the smaller
// row index so rankings are reproducible.
inline std::vector<int> topk(const Tensor& scores, int k) {
    if (scores.rank() != 1) throw shape_error("topk expects a rank-1 score vector, got " + scores.shape_str());
    const int n = int(scores.size());
    if (k <= 0 || k > n)
        throw contract_error("topk: k = " + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
        const double sa = scores[std::size_t(a)], sb = scores[std::size_t(b)];
        if (sa != sb) return sa > sb;
        return a < b;
    });
    idx.resize(static_cast<std::size_t>(k));
    return idx;
}

struct EvalReport {
    int k = 10;
    long long total = 0, hits = 0;
    long long cold_total = 0, cold_hits = 0;
    long long known_total = 0, known_hits = 0;
    long long skipped_inputs = 0;      // histories with no usable positions; scored as misses
    long long structural_misses = 0;   // targets with no candidate row; scored as misses
    long long dropped_positions = 0;   // individual history positions removed before encoding
    int excluded_candidates = 0;       // cold items left out of the index for missing content
    std::string config_echo;

    double hr() const { return total > 0 ? double(hits) / double(total) : 0.0; }
    double hr_cold() const { return cold_total > 0 ? double(cold_hits) / double(cold_total) : 0.0; }
    double hr_known() const { return known_total > 0 ? double(known_hits) / double(known_total) : 0.0; }
    double cold_hit_share() const { return hits > 0 ? double(cold_hits) / double(hits) : 0.0; }
};

namespace detail {

struct EvalCounters {
    long long total = 0, hits = 0, cold_total = 0, cold_hits = 0, known_total = 0, known_hits = 0;
    long long skipped_inputs = 0, structural_misses = 0, dropped_positions = 0;

    void merge(const EvalCounters& o) {
        total += o.total;
        hits += o.hits;
        cold_total += o.cold_total;
        cold_hits += o.cold_hits;
        known_total += o.known_total;
        known_hits += o.known_hits;
        skipped_inputs += o.skipped_inputs;
        structural_misses += o.structural_misses;
        dropped_positions += o.dropped_positions;
    }
};

inline EvalCounters eval_chunk(const std::vector<SequenceExample>& examples, std::size_t begin, std::size_t end,
                               ModelState& state, const ContentEmbeddingStore& contents,
                               const CandidateMatrix& candidates, Mode eval_mode, int k) {
    EvalCounters c;
    for (std::size_t i = begin; i < end; ++i) {
        const SequenceExample& ex = examples[i];
        const bool cold_target = ex.target >= state.num_train_items;
        ++c.total;
        (cold_target ? c.cold_total : c.known_total)++;

        const int target_row = candidates.row_for(ex.target);
        if (target_row < 0) {
            ++c.structural_misses;
            continue;
        }
        int dropped = 0;
        std::optional<Tensor> h = encode_test_sequence(ex.input, state, contents, eval_mode, &dropped);
        c.dropped_positions += dropped;
        if (!h) {
            ++c.skipped_inputs;
            continue;
        }
        const Tensor scores = score_items(*h, candidates.embeddings);
        const std::vector<int> top = topk(scores, k);
        if (std::find(top.begin(), top.end(), target_row) != top.end()) {
            ++c.hits;
            (cold_target ? c.cold_hits : c.known_hits)++;
        }
    }
    return c;
}

}  // namespace detail

// Last-item hit rate over held-out examples. Every example counts in the
// denominator: unreachable targets and unencodable histories score as
// misses. Workers split the example list into contiguous chunks; counters
// merge in chunk order, so results do not depend on the worker count.
inline EvalReport hit_rate_at_k(const std::vector<SequenceExample>& examples, ModelState& state,
                                const ContentEmbeddingStore& contents, const CandidateMatrix& candidates,
                                int k, int workers = 1) {
    if (k <= 0) throw config_error("k must be positive, got " + std::to_string(k));
    if (k > int(candidates.items.size()))
        throw config_error("k = " + std::to_string(k) + " exceeds the candidate count " +
                           std::to_string(candidates.items.size()));
    if (workers <= 0) throw config_error("workers must be positive, got " + std::to_string(workers));

    const Mode eval_mode = state.cfg.mode;
    if (eval_mode == Mode::id_only) {
        for (std::uint8_t t : candidates.dense_tag)
            if (t) throw contract_error("ID-only evaluation cannot rank projected candidate rows");
    }

    detail::EvalCounters merged;
    const std::size_t n = examples.size();
    const std::size_t chunk_count = std::min<std::size_t>(std::size_t(workers), std::max<std::size_t>(n, 1));
    if (chunk_count <= 1) {
        merged = detail::eval_chunk(examples, 0, n, state, contents, candidates, eval_mode, k);
    } else {
        std::vector<detail::EvalCounters> parts(chunk_count);
        std::vector<std::thread> threads;
        const std::size_t step = (n + chunk_count - 1) / chunk_count;
        for (std::size_t c = 0; c < chunk_count; ++c) {
            const std::size_t b = c * step, e = std::min(n, b + step);
            if (b >= e) continue;
            threads.emplace_back([&, c, b, e] {
                parts[c] = detail::eval_chunk(examples, b, e, state, contents, candidates, eval_mode, k);
            });
        }
        for (auto& t : threads) t.join();
        for (const auto& p : parts) merged.merge(p);
    }

    EvalReport r;
    r.k = k;
    r.total = merged.total;
    r.hits = merged.hits;
    r.cold_total = merged.cold_total;
    r.cold_hits = merged.cold_hits;
    r.known_total = merged.known_total;
    r.known_hits = merged.known_hits;
    r.skipped_inputs = merged.skipped_inputs;
    r.structural_misses = merged.structural_misses;
    r.dropped_positions = merged.dropped_positions;
    r.excluded_candidates = candidates.excluded_missing_content;
    r.config_echo = "mode=" + to_string(eval_mode) + " k=" + std::to_string(k) +
                    " candidates=" + std::to_string(candidates.items.size());
    return r;
}

inline std::string format_eval_report(const EvalReport& r) {
    char buf[256];
    std::string out;
    out += "slice      hit_rate@" + std::to_string(r.k) + "  hits/total\n";
    std::snprintf(buf, sizeof buf, "overall    %-10.6f  %lld/%lld\n", r.hr(), r.hits, r.total);
    out += buf;
    std::snprintf(buf, sizeof buf, "cold       %-10.6f  %lld/%lld\n", r.hr_cold(), r.cold_hits, r.cold_total);
    out += buf;
    std::snprintf(buf, sizeof buf, "known      %-10.6f  %lld/%lld\n", r.hr_known(), r.known_hits, r.known_total);
    out += buf;
    std::snprintf(buf, sizeof buf, "cold share of hits: %.6f\n", r.cold_hit_share());
    out += buf;
    std::snprintf(buf, sizeof buf,
                  "skipped inputs: %lld, structural misses: %lld, dropped positions: %lld, excluded candidates: %d\n",
                  r.skipped_inputs, r.structural_misses, r.dropped_positions, r.excluded_candidates);
    out += buf;
    out += "config: " + r.config_echo + "\n";
    return out;
}

// One record per metric: name, slice, k, value, count — tab-separated.
inline std::string eval_records(const EvalReport& r) {
    char buf[160];
    std::string out;
    auto rec = [&](const char* name, const char* slice, double value, long long count) {
        std::snprintf(buf, sizeof buf, "%s\t%s\t%d\t%.9g\t%lld\n", name, slice, r.k, value, count);
        out += buf;
    };
    rec("hit_rate", "overall", r.hr(), r.total);
    rec("hit_rate", "cold", r.hr_cold(), r.cold_total);
    rec("hit_rate", "known", r.hr_known(), r.known_total);
    rec("cold_hit_share", "overall", r.cold_hit_share(), r.hits);
    rec("skipped_inputs", "overall", double(r.skipped_inputs), r.total);
    rec("structural_misses", "overall", double(r.structural_misses), r.total);
    rec("excluded_candidates", "overall", double(r.excluded_candidates), r.total);
    return out;
}

struct SweepRow {
    double p_dense = 0.0;
    EvalReport report;
};

// Trains one model per path-probability value (shared seeds, shared data,
// identical protocol) and evaluates each. Probability zero runs as the
// ID-only baseline, so that row reproduces the baseline exactly.
inline std::vector<SweepRow> sweep_p_dense(const std::vector<double>& values,
                                           const std::vector<SequenceExample>& train_examples,
                                           const std::vector<SequenceExample>& test_examples,
                                           const ContentEmbeddingStore& contents, const CatalogIndex& catalog,
                                           const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                                           std::uint64_t init_seed, int k, int workers = 1) {
    if (values.empty()) throw config_error("sweep needs at least one p_dense value");
    std::vector<SweepRow> rows;
    rows.reserve(values.size());
    for (double p : values) {
        if (p < 0.0 || p > 1.0) throw config_error("p_dense value " + std::to_string(p) + " outside [0,1]");
        ModelConfig cfg = model_cfg;
        cfg.p_dense = p;
        cfg.mode = p == 0.0 ? Mode::id_only : Mode::denserec;
        ModelState state = ModelState::init(cfg, catalog.num_train_items, init_seed);
        train(state, train_examples, contents, train_cfg);
        CandidateMatrix candidates = assemble_candidates(catalog, state, contents, cfg.mode);
        SweepRow row;
        row.p_dense = p;
        row.report = hit_rate_at_k(test_examples, state, contents, candidates, k, workers);
        log::info("sweep p_dense=%.2f: hit_rate@%d overall %.4f, cold %.4f, known %.4f", p, k,
                  row.report.hr(), row.report.hr_cold(), row.report.hr_known());
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::string format_sweep_table(const std::vector<SweepRow>& rows) {
    std::string out = "p_dense\thit_rate\thit_rate_cold\thit_rate_known\tcold_total\tknown_total\n";
    char buf[160];
    for (const SweepRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%.2f\t%.6f\t%.6f\t%.6f\t%lld\t%lld\n", r.p_dense, r.report.hr(),
                      r.report.hr_cold(), r.report.hr_known(), r.report.cold_total, r.report.known_total);
        out += buf;
    }
    return out;
}

}  // namespace denserec
