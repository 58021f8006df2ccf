#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <string>
#include <vector>

#include "denserec/autograd.hpp"
#include "denserec/content.hpp"
#include "denserec/data.hpp"
#include "denserec/errors.hpp"
#include "denserec/log.hpp"
#include "denserec/model.hpp"
#include "denserec/optim.hpp"
#include "denserec/rng.hpp"

namespace denserec {

struct TrainConfig {
    int epochs = 20;
    int batch_size = 512;
    AdamConfig adam;          // adam.lr defaults to 1e-3
    std::uint64_t seed = 1;
    double grad_clip = 0.0;   // global-norm clip threshold; 0 disables
    int log_every = 0;        // debug-log cadence in batches; 0 disables

    void validate() const {
        if (epochs <= 0) throw config_error("epochs must be positive, got " + std::to_string(epochs));
        if (batch_size <= 0) throw config_error("batch_size must be positive, got " + std::to_string(batch_size));
        if (!(adam.lr > 0.0)) throw config_error("learning rate must be positive");
        if (grad_clip < 0.0) throw config_error("grad_clip must be >= 0");
    }
};

struct EpochStats {
    int epoch = 0;
    double mean_loss = 0.0;
    double dense_fraction = 0.0;  // share of effective dense-path draws (inputs, target, negatives)
    double grad_norm_mean = 0.0;  // global gradient norm per batch, averaged over batches
    double grad_norm_max = 0.0;
    double wallclock_s = 0.0;
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    double total_wallclock_s = 0.0;
};

// Binary-cross-entropy objective at the final position: the positive target
// is pushed up, each sampled negative pushed down. target_emb must be
// [1 x d], negative_embs [K x d], h the rank-1 encoder output.
inline NodeId compute_loss(Tape& tape, NodeId h, NodeId target_emb, NodeId negative_embs) {
    NodeId pos = tape.logistic_loss(tape.dot_rows(target_emb, h), +1.0);
    NodeId neg = tape.logistic_loss(tape.dot_rows(negative_embs, h), -1.0);
    return tape.add(pos, neg);
}

namespace detail {

// Clears dense-path bits for items without a content vector (they fall back
// to the ID path). Returns how many bits were cleared.
inline int apply_content_fallback(PathMask& mask, const std::vector<int>& items,
                                  const ContentEmbeddingStore& contents) {
    int fallbacks = 0;
    for (std::size_t i = 0; i < mask.z.size(); ++i) {
        if (mask.z[i] && !contents.has(items[std::size_t(i)])) {
            mask.z[i] = 0;
            ++fallbacks;
        }
    }
    return fallbacks;
}

}  // namespace detail

// One pass over the training examples. Example order is reshuffled per epoch;
// all stochastic choices come from streams derived from cfg.seed and the
// epoch index, so a rerun reproduces the epoch exactly. Within one example
// the path-selection draws happen in a fixed order: input positions, then
// the target, then each negative. In id_only mode no path draws are made at
// all, so the shuffle / negative / dropout streams line up position-for-
// position with a dual-path run of the same seed.
inline EpochStats train_epoch(ModelState& state, const std::vector<SequenceExample>& examples,
                              const ContentEmbeddingStore& contents, const TrainConfig& cfg, int epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    if (examples.empty()) throw config_error("train_epoch: no training examples");

    const bool dual_path = state.cfg.mode == Mode::denserec;
    const double p_dense = state.cfg.p_dense;
    const int num_neg = state.cfg.num_negatives;
    const int vocab = state.num_train_items;

    RngStream shuffle_rng = RngStream::named(cfg.seed, "shuffle").substream(std::uint64_t(epoch));
    RngStream path_rng = RngStream::named(cfg.seed, "path-mask").substream(std::uint64_t(epoch));
    RngStream negative_rng = RngStream::named(cfg.seed, "negatives").substream(std::uint64_t(epoch));
    RngStream dropout_rng = RngStream::named(cfg.seed, "dropout").substream(std::uint64_t(epoch));

    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), std::size_t(0));
    for (std::size_t i = order.size(); i > 1; --i) {
        std::uint64_t j = shuffle_rng.next_int(i);
        std::swap(order[i - 1], order[std::size_t(j)]);
    }

    EpochStats stats;
    stats.epoch = epoch;
    double loss_sum = 0.0;
    long long example_count = 0;
    long long dense_draws = 0, total_draws = 0;
    long long content_fallbacks = 0;
    double grad_norm_sum = 0.0;
    int batch_count = 0;

    for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch_size)) {
        const std::size_t end = std::min(order.size(), start + std::size_t(cfg.batch_size));
        const double batch_n = double(end - start);

        for (std::size_t pos = start; pos < end; ++pos) {
            const SequenceExample& ex = examples[order[pos]];
            if (ex.target < 0 || ex.target >= vocab)
                throw contract_error("train_epoch: target " + std::to_string(ex.target) +
                                     " outside training vocabulary of size " + std::to_string(vocab));

            Tape tape;

            PathMask input_mask;
            if (dual_path) {
                input_mask = sample_path_mask(int(ex.input.size()), p_dense, path_rng);
                content_fallbacks += detail::apply_content_fallback(input_mask, ex.input, contents);
            } else {
                input_mask.z.assign(ex.input.size(), 0);
            }

            PathMask target_mask;
            if (dual_path) {
                target_mask.z.push_back(path_rng.next_bernoulli(p_dense) ? 1 : 0);
            } else {
                target_mask.z.push_back(0);
            }
            std::vector<int> target_items{ex.target};
            content_fallbacks += dual_path ? detail::apply_content_fallback(target_mask, target_items, contents) : 0;

            std::vector<int> negatives = sample_negatives(ex.target, vocab, num_neg, negative_rng);
            PathMask negative_mask;
            if (dual_path) {
                negative_mask = sample_path_mask(num_neg, p_dense, path_rng);
                content_fallbacks += detail::apply_content_fallback(negative_mask, negatives, contents);
            } else {
                negative_mask.z.assign(std::size_t(num_neg), 0);
            }

            if (dual_path) {
                for (auto b : input_mask.z) dense_draws += b;
                dense_draws += target_mask.z[0];
                for (auto b : negative_mask.z) dense_draws += b;
                total_draws += static_cast<long long>(input_mask.z.size()) + 1 + num_neg;
            }

            NodeId h = encode_sequence(tape, ex.input, input_mask, state, contents,
                                       /*training=*/true, dropout_rng);
            NodeId target_emb = resolve_embedding_rows(tape, target_items, target_mask, state, contents);
            NodeId negative_emb = resolve_embedding_rows(tape, negatives, negative_mask, state, contents);
            NodeId loss = compute_loss(tape, h, target_emb, negative_emb);

            const double loss_value = tape.value(loss)[0];
            if (!std::isfinite(loss_value)) {
                throw numeric_error("non-finite loss " + std::to_string(loss_value) + " at epoch " +
                                    std::to_string(epoch) + ", batch " + std::to_string(batch_count) +
                                    ", user " + ex.user_id);
            }
            loss_sum += loss_value;
            ++example_count;

            tape.backward(loss, 1.0 / batch_n);
        }

        double grad_sq = 0.0;
        state.for_each_parameter([&](Parameter& p) { grad_sq += p.grad.squared_norm(); });
        const double grad_norm = std::sqrt(grad_sq);
        if (!std::isfinite(grad_norm)) {
            throw numeric_error("non-finite gradient norm at epoch " + std::to_string(epoch) +
                                ", batch " + std::to_string(batch_count));
        }
        if (cfg.grad_clip > 0.0 && grad_norm > cfg.grad_clip) {
            const double scale = cfg.grad_clip / grad_norm;
            state.for_each_parameter([&](Parameter& p) {
                for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] *= scale;
            });
        }
        grad_norm_sum += grad_norm;
        stats.grad_norm_max = std::max(stats.grad_norm_max, grad_norm);

        state.for_each_parameter([&](Parameter& p) { adam_step(p, cfg.adam); });
        state.zero_padding_row();

        ++batch_count;
        if (cfg.log_every > 0 && batch_count % cfg.log_every == 0) {
            log::debug("epoch %d batch %d: running mean loss %.6f, grad norm %.6f", epoch, batch_count,
                       loss_sum / double(example_count), grad_norm);
        }
    }

    if (content_fallbacks > 0) {
        log::info("warning: epoch %d: %lld dense-path draws fell back to the ID path (missing content vectors)",
                  epoch, content_fallbacks);
    }

    stats.mean_loss = loss_sum / double(example_count);
    stats.dense_fraction = total_draws > 0 ? double(dense_draws) / double(total_draws) : 0.0;
    stats.grad_norm_mean = batch_count > 0 ? grad_norm_sum / double(batch_count) : 0.0;
    stats.wallclock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return stats;
}

// Runs the configured number of epochs, mutating `state` in place.
inline TrainReport train(ModelState& state, const std::vector<SequenceExample>& examples,
                         const ContentEmbeddingStore& contents, const TrainConfig& cfg) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    TrainReport report;
    report.epochs.reserve(std::size_t(cfg.epochs));
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        EpochStats s = train_epoch(state, examples, contents, cfg, epoch);
        log::info("epoch %d\tmean_loss %.6f\tdense_fraction %.4f\t%.2fs", s.epoch, s.mean_loss,
                  s.dense_fraction, s.wallclock_s);
        report.epochs.push_back(s);
    }
    report.total_wallclock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

// One tab-separated line per epoch: epoch, mean loss, dense fraction,
// wallclock seconds.
inline void write_train_log(const std::string& path, const TrainReport& report) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw data_error("cannot open training log for writing: " + path);
    std::fprintf(f, "# epoch\tmean_loss\tdense_fraction\twallclock_s\n");
    for (const EpochStats& s : report.epochs) {
        std::fprintf(f, "%d\t%.9g\t%.6f\t%.3f\n", s.epoch, s.mean_loss, s.dense_fraction, s.wallclock_s);
    }
    std::fclose(f);
}

}  // namespace denserec
