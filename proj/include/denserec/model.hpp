#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "denserec/autograd.hpp"
#include "denserec/content.hpp"
#include "denserec/errors.hpp"
#include "denserec/log.hpp"
#include "denserec/rng.hpp"
#include "denserec/tensor.hpp"

namespace denserec {

// denserec: dual-path item embeddings (learned ID rows for known items, a
// linear projection of content vectors otherwise). id_only: the same
// backbone with the projection absent; items without ID rows are invisible.
enum class Mode { denserec, id_only };

inline std::string to_string(Mode m) { return m == Mode::denserec ? "denserec" : "id_only"; }

inline Mode mode_from_string(const std::string& s) {
    if (s == "denserec") return Mode::denserec;
    if (s == "id_only") return Mode::id_only;
    throw config_error("unknown mode '" + s + "' (expected denserec or id_only)");
}

struct ModelConfig {
    int d = 64;        // ID-embedding dimension
    int d_c = 0;       // content-embedding dimension (required in denserec mode)
    int num_blocks = 3;
    int num_heads = 2;
    int max_len = 30;
    double dropout_rate = 0.5;
    double p_dense = 0.5;     // training-time probability of the dense path
    int num_negatives = 64;   // K
    bool use_positional = true;
    Mode mode = Mode::denserec;

    int head_dim() const { return d / num_heads; }

    void validate() const {
        if (d <= 0) throw config_error("d must be positive");
        if (num_heads <= 0 || d % num_heads != 0)
            throw config_error("d=" + std::to_string(d) + " must be divisible by num_heads=" + std::to_string(num_heads));
        if (num_blocks <= 0) throw config_error("num_blocks must be positive");
        if (max_len <= 0) throw config_error("max_len must be positive");
        if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw config_error("dropout_rate must be in [0,1)");
        if (p_dense < 0.0 || p_dense > 1.0) throw config_error("p_dense must be in [0,1]");
        if (num_negatives <= 0) throw config_error("num_negatives must be positive");
        if (mode == Mode::denserec && d_c <= 0)
            throw config_error("denserec mode requires a positive content dimension d_c");
    }
};

struct ProjectionLayer {
    Parameter w;  // [d x d_c]
    Parameter b;  // [d]
};

struct HeadParams {
    Parameter wq, wk, wv;  // [d x head_dim]
    Parameter wo;          // [head_dim x d]
};

struct BlockParams {
    Parameter ln1_gain, ln1_bias;
    std::vector<HeadParams> heads;
    Parameter ln2_gain, ln2_bias;
    Parameter ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

// Per-position path choices: true selects the dense (projected content) path.
struct PathMask {
    std::vector<std::uint8_t> z;

    double dense_fraction() const {
        if (z.empty()) return 0.0;
        std::size_t k = 0;
        for (auto b : z) k += b ? 1 : 0;
        return double(k) / double(z.size());
    }
};

inline PathMask sample_path_mask(int length, double p_dense, RngStream& rng) {
    if (length < 0) throw contract_error("sample_path_mask: negative length");
    if (p_dense < 0.0 || p_dense > 1.0) throw contract_error("sample_path_mask: p_dense must be in [0,1]");
    PathMask m;
    m.z.resize(std::size_t(length));
    for (auto& b : m.z) b = rng.next_bernoulli(p_dense) ? 1 : 0;
    return m;
}

// All trainable state. The ID table has one extra row at index
// num_train_items reserved for padding; it is pinned to zero.
struct ModelState {
    ModelConfig cfg;
    int num_train_items = 0;
    Parameter item_emb;                        // [(num_train_items + 1) x d]
    std::optional<Parameter> pos_emb;          // [max_len x d]
    std::optional<ProjectionLayer> projection; // absent in id_only mode
    std::vector<BlockParams> blocks;

    int padding_row() const { return num_train_items; }

    template <class F>
    void for_each_parameter(F&& f) {
        f(item_emb);
        if (pos_emb) f(*pos_emb);
        if (projection) {
            f(projection->w);
            f(projection->b);
        }
        for (auto& blk : blocks) {
            f(blk.ln1_gain);
            f(blk.ln1_bias);
            for (auto& h : blk.heads) {
                f(h.wq);
                f(h.wk);
                f(h.wv);
                f(h.wo);
            }
            f(blk.ln2_gain);
            f(blk.ln2_bias);
            f(blk.ffn_w1);
            f(blk.ffn_b1);
            f(blk.ffn_w2);
            f(blk.ffn_b2);
        }
    }

    void zero_padding_row() {
        double* r = item_emb.value.row_ptr(padding_row());
        double* g = item_emb.grad.row_ptr(padding_row());
        for (int j = 0; j < cfg.d; ++j) {
            r[j] = 0.0;
            g[j] = 0.0;
        }
    }

    // Weights drawn from per-parameter named streams, so two models built
    // from the same seed share every common parameter bit-for-bit even when
    // one of them lacks the projection.
    static ModelState init(const ModelConfig& cfg, int num_train_items, std::uint64_t seed) {
        cfg.validate();
        if (num_train_items <= 0) throw config_error("model needs a positive training vocabulary size");

        auto weight = [&](const std::string& name, std::vector<int> shape) {
            Parameter p(name, Tensor::zeros(std::move(shape)));
            RngStream rng = RngStream::named(seed, "init/" + name);
            for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = rng.next_truncated_normal(0.02);
            return p;
        };
        auto filled = [&](const std::string& name, std::vector<int> shape, double v) {
            return Parameter(name, Tensor::full(std::move(shape), v));
        };

        ModelState s;
        s.cfg = cfg;
        s.num_train_items = num_train_items;
        s.item_emb = weight("item_embeddings", {num_train_items + 1, cfg.d});
        s.zero_padding_row();
        if (cfg.use_positional) s.pos_emb = weight("positional_embeddings", {cfg.max_len, cfg.d});
        if (cfg.mode == Mode::denserec) {
            s.projection = ProjectionLayer{weight("projection.weight", {cfg.d, cfg.d_c}),
                                           filled("projection.bias", {cfg.d}, 0.0)};
        }
        const int dh = cfg.head_dim();
        for (int b = 0; b < cfg.num_blocks; ++b) {
            const std::string prefix = "block" + std::to_string(b) + ".";
            BlockParams blk;
            blk.ln1_gain = filled(prefix + "norm1.gain", {cfg.d}, 1.0);
            blk.ln1_bias = filled(prefix + "norm1.bias", {cfg.d}, 0.0);
            for (int h = 0; h < cfg.num_heads; ++h) {
                const std::string hp = prefix + "attn.head" + std::to_string(h) + ".";
                blk.heads.push_back(HeadParams{weight(hp + "query", {cfg.d, dh}), weight(hp + "key", {cfg.d, dh}),
                                               weight(hp + "value", {cfg.d, dh}), weight(hp + "output", {dh, cfg.d})});
            }
            blk.ln2_gain = filled(prefix + "norm2.gain", {cfg.d}, 1.0);
            blk.ln2_bias = filled(prefix + "norm2.bias", {cfg.d}, 0.0);
            blk.ffn_w1 = weight(prefix + "ffn.w1", {cfg.d, cfg.d});
            blk.ffn_b1 = filled(prefix + "ffn.b1", {cfg.d}, 0.0);
            blk.ffn_w2 = weight(prefix + "ffn.w2", {cfg.d, cfg.d});
            blk.ffn_b2 = filled(prefix + "ffn.b2", {cfg.d}, 0.0);
            s.blocks.push_back(std::move(blk));
        }
        return s;
    }
};

// content_rows: [k x d_c] node. Returns [k x d] = content . W^T + b.
inline NodeId project_content_rows(Tape& tape, NodeId content_rows, ProjectionLayer& proj) {
    NodeId prod = tape.matmul(content_rows, tape.leaf(proj.w), false, true);
    return tape.add_bias(prod, tape.leaf(proj.b));
}

// Single-vector form: vector[d_c] -> vector[d], differentiable w.r.t. the
// projection weights (and c when it comes from a differentiable node).
inline NodeId project_content(Tape& tape, const std::vector<double>& c, ProjectionLayer& proj) {
    if (int(c.size()) != proj.w.value.cols())
        throw shape_error("project_content: content dimension " + std::to_string(c.size()) + " does not match " +
                          proj.w.value.shape_str());
    NodeId rows = project_content_rows(tape, tape.constant(Tensor::from_rows({c})), proj);
    return tape.select_row(rows, 0);
}

// Tape-free projection for evaluation-time candidate assembly.
inline Tensor project_content_values(const ProjectionLayer& proj, const Tensor& contents) {
    const int k = contents.rows();
    const int d = proj.w.value.rows();
    Tensor out({k, d});
    matmul_into(contents, proj.w.value, out, false, true, /*accumulate=*/false);
    for (int i = 0; i < k; ++i) {
        double* r = out.row_ptr(i);
        for (int j = 0; j < d; ++j) r[j] += proj.b.value[std::size_t(j)];
    }
    return out;
}

// One item, one path choice -> [1 x d]. Gradient flows only through the
// selected path.
inline NodeId resolve_embedding(Tape& tape, int item, bool dense_path, ModelState& state,
                                const ContentEmbeddingStore& contents) {
    if (!dense_path) {
        if (item < 0 || item >= state.num_train_items)
            throw data_error("item index " + std::to_string(item) + " is not in the training vocabulary (size " +
                             std::to_string(state.num_train_items) + ")");
        return tape.gather(state.item_emb, {item});
    }
    if (!state.projection) throw contract_error("dense path requested on a model without a projection layer");
    if (!contents.has(item)) throw data_error("item index " + std::to_string(item) + " has no content vector");
    return project_content_rows(tape, tape.constant(Tensor::from_rows({contents.vec(item)})), *state.projection);
}

// items + per-position path mask -> [n x d]; one gather covers all ID-path
// positions and one projection covers all dense-path positions.
inline NodeId resolve_embedding_rows(Tape& tape, const std::vector<int>& items, const PathMask& mask,
                                     ModelState& state, const ContentEmbeddingStore& contents) {
    if (items.empty()) throw contract_error("resolve_embedding_rows: empty item list");
    if (mask.z.size() != items.size()) throw contract_error("resolve_embedding_rows: mask/item length mismatch");

    std::vector<int> id_items, dense_items;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (mask.z[i]) {
            dense_items.push_back(items[i]);
        } else {
            if (items[i] < 0 || items[i] >= state.num_train_items)
                throw data_error("item index " + std::to_string(items[i]) + " is not in the training vocabulary (size " +
                                 std::to_string(state.num_train_items) + ")");
            id_items.push_back(items[i]);
        }
    }
    if (dense_items.empty()) return tape.gather(state.item_emb, std::move(id_items));

    if (!state.projection) throw contract_error("dense path requested on a model without a projection layer");
    Tensor content_rows({int(dense_items.size()), contents.dim()});
    for (std::size_t i = 0; i < dense_items.size(); ++i) {
        if (!contents.has(dense_items[i]))
            throw data_error("item index " + std::to_string(dense_items[i]) + " has no content vector");
        const auto& c = contents.vec(dense_items[i]);
        double* dst = content_rows.row_ptr(int(i));
        for (std::size_t j = 0; j < c.size(); ++j) dst[j] = c[j];
    }
    NodeId dense_node = project_content_rows(tape, tape.constant(std::move(content_rows)), *state.projection);
    if (id_items.empty()) return dense_node;

    NodeId id_node = tape.gather(state.item_emb, std::move(id_items));
    std::vector<std::pair<NodeId, int>> order;
    order.reserve(items.size());
    int next_id = 0, next_dense = 0;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (mask.z[i]) {
            order.emplace_back(dense_node, next_dense++);
        } else {
            order.emplace_back(id_node, next_id++);
        }
    }
    return tape.concat_rows(std::move(order));
}

// n x n lower-triangular attend-mask: position i may attend to j <= i.
inline std::vector<std::uint8_t> causal_mask(int n) {
    std::vector<std::uint8_t> m(std::size_t(n) * std::size_t(n), 0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) m[std::size_t(i) * n + j] = 1;
    return m;
}

// Pre-norm block: H + dropout(attention(norm1(H))), then + dropout(ffn(norm2(.))).
// attn_mask is n x n row-major, nonzero = "query row may attend to key column".
inline NodeId transformer_block_forward(Tape& tape, NodeId H, BlockParams& blk,
                                        const std::vector<std::uint8_t>& attn_mask, bool training,
                                        RngStream& dropout_rng, const ModelConfig& cfg) {
    const double scale = 1.0 / std::sqrt(double(cfg.head_dim()));
    NodeId A = tape.layer_norm(H, tape.leaf(blk.ln1_gain), tape.leaf(blk.ln1_bias));
    NodeId attn = -1;
    for (auto& h : blk.heads) {
        NodeId q = tape.matmul(A, tape.leaf(h.wq));
        NodeId k = tape.matmul(A, tape.leaf(h.wk));
        NodeId v = tape.matmul(A, tape.leaf(h.wv));
        NodeId scores = tape.scale(tape.matmul(q, k, false, true), scale);
        NodeId weights = tape.softmax_rows(scores, attn_mask);
        NodeId out = tape.matmul(tape.matmul(weights, v), tape.leaf(h.wo));
        attn = attn < 0 ? out : tape.add(attn, out);
    }
    NodeId H1 = tape.add(H, tape.dropout(attn, cfg.dropout_rate, dropout_rng, training));
    NodeId B = tape.layer_norm(H1, tape.leaf(blk.ln2_gain), tape.leaf(blk.ln2_bias));
    NodeId F = tape.relu(tape.add_bias(tape.matmul(B, tape.leaf(blk.ffn_w1)), tape.leaf(blk.ffn_b1)));
    F = tape.add_bias(tape.matmul(F, tape.leaf(blk.ffn_w2)), tape.leaf(blk.ffn_b2));
    return tape.add(H1, tape.dropout(F, cfg.dropout_rate, dropout_rng, training));
}

// Sequence -> representation of the last position. Only the n real tokens
// are materialized: in the equivalent left-padded layout the padding rows
// carry the zero embedding row and are masked out of attention as keys, so
// they cannot influence any real position through the row-local stages
// (norms, feed-forward, residuals) or through attention. Positional rows
// max_len-n .. max_len-1 keep the padded layout's position identities.
inline NodeId encode_sequence(Tape& tape, std::vector<int> items, PathMask mask, ModelState& state,
                              const ContentEmbeddingStore& contents, bool training, RngStream& dropout_rng) {
    if (items.empty()) throw contract_error("encode_sequence: empty item sequence");
    if (mask.z.size() != items.size()) throw contract_error("encode_sequence: mask/item length mismatch");
    const int L = state.cfg.max_len;
    if (int(items.size()) > L) {
        items.erase(items.begin(), items.end() - L);
        mask.z.erase(mask.z.begin(), mask.z.end() - L);
    }
    const int n = int(items.size());

    NodeId H = resolve_embedding_rows(tape, items, mask, state, contents);
    if (state.cfg.use_positional && state.pos_emb) {
        std::vector<int> pos_rows(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) pos_rows[std::size_t(i)] = L - n + i;
        H = tape.add(H, tape.gather(*state.pos_emb, std::move(pos_rows)));
    }
    H = tape.dropout(H, state.cfg.dropout_rate, dropout_rng, training);

    const auto attend = causal_mask(n);
    for (auto& blk : state.blocks) {
        H = transformer_block_forward(tape, H, blk, attend, training, dropout_rng, state.cfg);
    }
    return tape.select_row(H, n - 1);
}

// scores[i] = h . items[i]; plain (tape-free) form used at retrieval time.
inline Tensor score_items(const Tensor& h, const Tensor& items) {
    if (h.rank() != 1 || items.rank() != 2 || int(h.size()) != items.cols())
        throw shape_error("score_items: representation " + h.shape_str() + " vs candidates " + items.shape_str());
    const int n = items.rows(), d = items.cols();
    Tensor out({n});
    for (int i = 0; i < n; ++i) {
        const double* r = items.row_ptr(i);
        double s = 0.0;
        for (int j = 0; j < d; ++j) s += r[j] * h[std::size_t(j)];
        out[std::size_t(i)] = s;
    }
    return out;
}

}  // namespace denserec
