#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "denserec/errors.hpp"
#include "denserec/rng.hpp"
#include "denserec/tensor.hpp"

namespace denserec {

// Trainable value plus its accumulated gradient and Adam moments.
// m and v stay all-zero until the first optimizer step.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor m;
    Tensor v;
    std::int64_t step_count = 0;

    Parameter() = default;

    Parameter(std::string param_name, Tensor init)
        : name(std::move(param_name)),
          value(std::move(init)),
          grad(Tensor::zeros(value.shape())),
          m(Tensor::zeros(value.shape())),
          v(Tensor::zeros(value.shape())) {}

    void zero_grad() { grad.zero(); }
};

using NodeId = int;

// Reverse-mode tape. Forward ops append nodes; backward() replays the tape
// in reverse creation order, which is a valid topological order because
// every op only consumes already-created nodes. Gradients w.r.t. Parameters
// are accumulated into Parameter::grad (not zeroed here), so one tape per
// example composes into batched gradient accumulation.
class Tape {
public:
    Tape() { nodes_.reserve(64); }

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    const Tensor& value(NodeId id) const { return nodes_[std::size_t(id)].value; }
    Tensor& grad(NodeId id) { return nodes_[std::size_t(id)].grad; }

    std::size_t node_count() const { return nodes_.size(); }

    void reset() { nodes_.clear(); }

    NodeId constant(Tensor v) { return push(std::move(v), {}); }

    // Leaf over a Parameter; the node holds a copy of the current value and
    // routes its gradient into p.grad. Create one node per Parameter per tape.
    NodeId leaf(Parameter& p) {
        NodeId id = push(p.value, {});
        Parameter* pp = &p;
        nodes_[std::size_t(id)].backward = [this, id, pp] {
            Tensor& g = nodes_[std::size_t(id)].grad;
            double* dst = pp->grad.data();
            const double* src = g.data();
            for (std::size_t i = 0; i < g.size(); ++i) dst[i] += src[i];
        };
        return id;
    }

    // Row gather from an embedding table without copying the table onto the
    // tape; backward scatter-adds row gradients straight into table.grad.
    NodeId gather(Parameter& table, std::vector<int> rows) {
        const int d = table.value.cols();
        const int n_rows_table = table.value.dim(0);
        for (int r : rows) {
            if (r < 0 || r >= n_rows_table) {
                throw contract_error("embedding_gather: index " + std::to_string(r) + " outside table extent " +
                                     std::to_string(n_rows_table));
            }
        }
        Tensor out({static_cast<int>(rows.size()), d});
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const double* src = table.value.row_ptr(rows[i]);
            double* dst = out.row_ptr(static_cast<int>(i));
            for (int j = 0; j < d; ++j) dst[j] = src[j];
        }
        NodeId id = push(std::move(out), {});
        Parameter* tp = &table;
        nodes_[std::size_t(id)].backward = [this, id, tp, rows = std::move(rows)] {
            const Tensor& g = nodes_[std::size_t(id)].grad;
            const int d2 = g.cols();
            for (std::size_t i = 0; i < rows.size(); ++i) {
                double* dst = tp->grad.row_ptr(rows[i]);
                const double* src = g.row_ptr(static_cast<int>(i));
                for (int j = 0; j < d2; ++j) dst[j] += src[j];
            }
        };
        return id;
    }

    // Gather from constant data (e.g. the content store); no gradient flow.
    NodeId gather_const(const Tensor& table, const std::vector<int>& rows) {
        const int d = table.cols();
        Tensor out({static_cast<int>(rows.size()), d});
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const double* src = table.row_ptr(rows[i]);
            double* dst = out.row_ptr(static_cast<int>(i));
            for (int j = 0; j < d; ++j) dst[j] = src[j];
        }
        return push(std::move(out), {});
    }

    // c = op(a) * op(b), op = transpose when the flag is set.
    NodeId matmul(NodeId a, NodeId b, bool ta = false, bool tb = false) {
        const Tensor& av = value(a);
        const Tensor& bv = value(b);
        const int m = ta ? av.cols() : av.rows();
        const int n = tb ? bv.rows() : bv.cols();
        Tensor out({m, n});
        matmul_into(av, bv, out, ta, tb, /*accumulate=*/false);
        NodeId id = push(std::move(out), {});
        nodes_[std::size_t(id)].backward = [this, id, a, b, ta, tb] {
            const Tensor& g = nodes_[std::size_t(id)].grad;
            const Tensor& avv = value(a);
            const Tensor& bvv = value(b);
            Tensor& ga = nodes_[std::size_t(a)].grad;
            Tensor& gb = nodes_[std::size_t(b)].grad;
            if (!ta && !tb) {
                matmul_into(g, bvv, ga, false, true, true);
                matmul_into(avv, g, gb, true, false, true);
            } else if (!ta && tb) {
                matmul_into(g, bvv, ga, false, false, true);
                matmul_into(g, avv, gb, true, false, true);
            } else if (ta && !tb) {
                matmul_into(bvv, g, ga, false, true, true);
                matmul_into(avv, g, gb, false, false, true);
            } else {
                matmul_into(bvv, g, ga, true, true, true);
                matmul_into(g, avv, gb, true, true, true);
            }
        };
        return id;
    }

    NodeId add(NodeId a, NodeId b) {
        const Tensor& av = value(a);
        const Tensor& bv = value(b);
        check_same_shape(av, bv, "add");
        Tensor out = av;
        const double* pb = bv.data();
        double* po = out.data();
        for (std::size_t i = 0; i < out.size(); ++i) po[i] += pb[i];
        NodeId id = push(std::move(out), {});
        nodes_[std::size_t(id)].backward = [this, id, a, b] {
            const Tensor& g = nodes_[std::size_t(id)].grad;
            accumulate(a, g);
            accumulate(b, g);
        };
        return id;
    }

    // x: [n x d], bias: [d] broadcast over rows.
    NodeId add_bias(NodeId x, NodeId bias) {
        const Tensor& xv = value(x);
        const Tensor& bv = value(bias);
        if (bv.size() != std::size_t(xv.cols())) {
            throw shape_error("add_bias: bias " + bv.shape_str() + " does not match row width of " + xv.shape_str());
        }
        Tensor out = xv;
        const int n = out.rows(), d = out.cols();
        for (int i = 0; i < n; ++i) {
            double* r = out.row_ptr(i);
            for (int j = 0; j < d; ++j) r[j] += bv[std::size_t(j)];
        }
        NodeId id = push(std::move(out), {});
        nodes_[std::size_t(id)].backward = [this, id, x, bias] {
            const Tensor& g = nodes_[std::size_t(id)].grad;
            accumulate(x, g);
            Tensor& gb = nodes_[std::size_t(bias)].grad;
            const int n2 = g.rows(), d2 = g.cols();
            for (int i = 0; i < n2; ++i) {
                const double* r = g.row_ptr(i);
                for (int j = 0; j < d2; ++j) gb[std::size_t(j)] += r[j];
            }
        };
        return id;
    }

    NodeId scale(NodeId x, double s) {
        Tensor out = value(x);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
        NodeId id = push(std::move(out), {});
        nodes_[std::size_t(id)].backward = [this, id, x, s] {
            const Tensor& g = nodes_[std::size_t(id)].grad;
            Tensor& gx = nodes_[std::size_t(x)].grad;
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += s * g[i];
        };
        return id;
    }

    NodeId relu(NodeId x) {
        Tensor out = value(x);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
        NodeId id = push(std::move(out), {});
        nodes_[std::size_t(id)].backward = [this, id, x] {
            const Tensor& g = nodes_[std::size_t(id)].grad;
            const Tensor& xv = value(x);
            Tensor& gx = nodes_[std::size_t(x)].grad;
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (xv[i] > 0.0) gx[i] += g[i];
            }
        };
        return id;
    }

    NodeId sigmoid(NodeId x) {
        Tensor out = value(x);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(out[i]);
        NodeId id = push(std::move(out), {});
        nodes_[std::size_t(id)].backward = [this, id, x] {
            const Tensor& g = nodes_[std::size_t(id)].grad;
            const Tensor& y = value(id);
            Tensor& gx = nodes_[std::size_t(x)].grad;
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += y[i] * (1.0 - y[i]) * g[i];
        };
        return id;
    }

    // Inverted dropout: kept activations scaled by 1/(1-rate) at train time,
    // identity in eval mode and at rate 0 (no RNG consumed in either case).
    NodeId dropout(NodeId x, double rate, RngStream& rng, bool training) {
        if (!training || rate == 0.0) return x;
        if (rate < 0.0 || rate >= 1.0) throw contract_error("dropout: rate must be in [0,1)");
        const double keep_scale = 1.0 / (1.0 - rate);
        const Tensor& xv = value(x);
        Tensor factors(xv.shape());
        for (std::size_t i = 0; i < factors.size(); ++i) {
            factors[i] = rng.next_bernoulli(rate) ? 0.0 : keep_scale;
        }
        Tensor out = xv;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factors[i];
        NodeId id = push(std::move(out), {});
        nodes_[std::size_t(id)].backward = [this, id, x, factors = std::move(factors)] {
            const Tensor& g = nodes_[std::size_t(id)].grad;
            Tensor& gx = nodes_[std::size_t(x)].grad;
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factors[i] * g[i];
        };
        return id;
    }

    // Row-wise normalization to zero mean / unit variance, then affine.
    // gain and bias are rank-1 [d] nodes.
    NodeId layer_norm(NodeId x, NodeId gain, NodeId bias, double eps = 1e-8) {
        if (eps <= 0.0) throw contract_error("layer_norm: eps must be positive");
        const Tensor& xv = value(x);
        const Tensor& gv = value(gain);
        const Tensor& bv = value(bias);
        const int n = xv.rows(), d = xv.cols();
        if (gv.size() != std::size_t(d) || bv.size() != std::size_t(d)) {
            throw shape_error("layer_norm: gain/bias width does not match " + xv.shape_str());
        }
        Tensor normalized({n, d});
        Tensor inv_std({n});
        Tensor out({n, d});
        for (int i = 0; i < n; ++i) {
            const double* r = xv.row_ptr(i);
            double mean = 0.0;
            for (int j = 0; j < d; ++j) mean += r[j];
            mean /= d;
            double var = 0.0;
            for (int j = 0; j < d; ++j) {
                const double c = r[j] - mean;
                var += c * c;
            }
            var /= d;
            const double inv = 1.0 / std::sqrt(var + eps);
            inv_std[std::size_t(i)] = inv;
            double* yr = normalized.row_ptr(i);
            double* orow = out.row_ptr(i);
            for (int j = 0; j < d; ++j) {
                yr[j] = (r[j] - mean) * inv;
                orow[j] = yr[j] * gv[std::size_t(j)] + bv[std::size_t(j)];
            }
        }
        NodeId id = push(std::move(out), {});
        nodes_[std::size_t(id)].backward = [this, id, x, gain, bias, normalized = std::move(normalized),
                                            inv_std = std::move(inv_std)] {
            const Tensor& g = nodes_[std::size_t(id)].grad;
            const Tensor& gv2 = value(gain);
            Tensor& gx = nodes_[std::size_t(x)].grad;
            Tensor& gg = nodes_[std::size_t(gain)].grad;
            Tensor& gb = nodes_[std::size_t(bias)].grad;
            const int n2 = g.rows(), d2 = g.cols();
            for (int i = 0; i < n2; ++i) {
                const double* gr = g.row_ptr(i);
                const double* yr = normalized.row_ptr(i);
                const double inv = inv_std[std::size_t(i)];
                double h_mean = 0.0, hy_mean = 0.0;
                for (int j = 0; j < d2; ++j) {
                    const double h = gr[j] * gv2[std::size_t(j)];
                    h_mean += h;
                    hy_mean += h * yr[j];
                    gg[std::size_t(j)] += gr[j] * yr[j];
                    gb[std::size_t(j)] += gr[j];
                }
                h_mean /= d2;
                hy_mean /= d2;
                double* gxr = gx.row_ptr(i);
                for (int j = 0; j < d2; ++j) {
                    const double h = gr[j] * gv2[std::size_t(j)];
                    gxr[j] += inv * (h - h_mean - yr[j] * hy_mean);
                }
            }
        };
        return id;
    }

    // Row-wise masked softmax with max-subtraction; masked entries are
    // exactly 0 in the output. mask is row-major, nonzero = keep.
    NodeId softmax_rows(NodeId x, const std::vector<std::uint8_t>& mask) {
        const Tensor& xv = value(x);
        const int n = xv.rows(), m = xv.cols();
        if (mask.size() != std::size_t(n) * std::size_t(m)) {
            throw shape_error("softmax_rows: mask size does not match " + xv.shape_str());
        }
        Tensor out({n, m});
        for (int i = 0; i < n; ++i) {
            const double* r = xv.row_ptr(i);
            const std::uint8_t* mr = mask.data() + std::size_t(i) * m;
            double mx = -1e300;
            bool any = false;
            for (int j = 0; j < m; ++j) {
                if (mr[j] && r[j] > mx) mx = r[j];
                any = any || mr[j] != 0;
            }
            if (!any) throw contract_error("softmax_rows: fully masked row " + std::to_string(i));
            double sum = 0.0;
            double* orow = out.row_ptr(i);
            for (int j = 0; j < m; ++j) {
                orow[j] = mr[j] ? std::exp(r[j] - mx) : 0.0;
                sum += orow[j];
            }
            const double inv = 1.0 / sum;
            for (int j = 0; j < m; ++j) orow[j] *= inv;
        }
        NodeId id = push(std::move(out), {});
        nodes_[std::size_t(id)].backward = [this, id, x] {
            const Tensor& g = nodes_[std::size_t(id)].grad;
            const Tensor& p = value(id);
            Tensor& gx = nodes_[std::size_t(x)].grad;
            const int n2 = g.rows(), m2 = g.cols();
            for (int i = 0; i < n2; ++i) {
                const double* gr = g.row_ptr(i);
                const double* pr = p.row_ptr(i);
                double dot = 0.0;
                for (int j = 0; j < m2; ++j) dot += gr[j] * pr[j];
                double* gxr = gx.row_ptr(i);
                for (int j = 0; j < m2; ++j) gxr[j] += pr[j] * (gr[j] - dot);
            }
        };
        return id;
    }

    // [n x d] -> rank-1 [d].
    NodeId select_row(NodeId x, int row) {
        const Tensor& xv = value(x);
        if (row < 0 || row >= xv.rows()) throw contract_error("select_row: row out of range");
        Tensor out({xv.cols()});
        const double* src = xv.row_ptr(row);
        for (int j = 0; j < xv.cols(); ++j) out[std::size_t(j)] = src[j];
        NodeId id = push(std::move(out), {});
        nodes_[std::size_t(id)].backward = [this, id, x, row] {
            const Tensor& g = nodes_[std::size_t(id)].grad;
            Tensor& gx = nodes_[std::size_t(x)].grad;
            double* dst = gx.row_ptr(row);
            for (std::size_t j = 0; j < g.size(); ++j) dst[j] += g[j];
        };
        return id;
    }

    // Assemble [k x d] from (source node, source row) pairs; the inverse
    // routing happens on the way back.
    NodeId concat_rows(std::vector<std::pair<NodeId, int>> sources) {
        if (sources.empty()) throw contract_error("concat_rows: empty source list");
        const int d = value(sources.front().first).cols();
        Tensor out({static_cast<int>(sources.size()), d});
        for (std::size_t i = 0; i < sources.size(); ++i) {
            const Tensor& src = value(sources[i].first);
            if (src.cols() != d) throw shape_error("concat_rows: row width mismatch");
            const double* sp = src.row_ptr(sources[i].second);
            double* dp = out.row_ptr(static_cast<int>(i));
            for (int j = 0; j < d; ++j) dp[j] = sp[j];
        }
        NodeId id = push(std::move(out), {});
        nodes_[std::size_t(id)].backward = [this, id, sources = std::move(sources)] {
            const Tensor& g = nodes_[std::size_t(id)].grad;
            const int d2 = g.cols();
            for (std::size_t i = 0; i < sources.size(); ++i) {
                Tensor& gs = nodes_[std::size_t(sources[i].first)].grad;
                double* dst = gs.row_ptr(sources[i].second);
                const double* src = g.row_ptr(static_cast<int>(i));
                for (int j = 0; j < d2; ++j) dst[j] += src[j];
            }
        };
        return id;
    }

    // scores[i] = mat_row_i . vec;  mat: [n x d], vec: rank-1 [d] -> [n].
    NodeId dot_rows(NodeId mat, NodeId vec) {
        const Tensor& mv = value(mat);
        const Tensor& vv = value(vec);
        if (vv.size() != std::size_t(mv.cols())) {
            throw shape_error("dot_rows: vector " + vv.shape_str() + " vs matrix " + mv.shape_str());
        }
        const int n = mv.rows(), d = mv.cols();
        Tensor out({n});
        for (int i = 0; i < n; ++i) {
            const double* r = mv.row_ptr(i);
            double s = 0.0;
            for (int j = 0; j < d; ++j) s += r[j] * vv[std::size_t(j)];
            out[std::size_t(i)] = s;
        }
        NodeId id = push(std::move(out), {});
        nodes_[std::size_t(id)].backward = [this, id, mat, vec] {
            const Tensor& g = nodes_[std::size_t(id)].grad;
            const Tensor& mvv = value(mat);
            const Tensor& vvv = value(vec);
            Tensor& gm = nodes_[std::size_t(mat)].grad;
            Tensor& gv = nodes_[std::size_t(vec)].grad;
            const int n2 = mvv.rows(), d2 = mvv.cols();
            for (int i = 0; i < n2; ++i) {
                const double gi = g[std::size_t(i)];
                if (gi == 0.0) continue;
                const double* r = mvv.row_ptr(i);
                double* gr = gm.row_ptr(i);
                for (int j = 0; j < d2; ++j) {
                    gr[j] += gi * vvv[std::size_t(j)];
                    gv[std::size_t(j)] += gi * r[j];
                }
            }
        };
        return id;
    }

    // sum_i softplus(-sign * s_i): the stable form of -sum_i log sigmoid(sign * s_i).
    NodeId logistic_loss(NodeId scores, double sign) {
        const Tensor& sv = value(scores);
        double total = 0.0;
        for (std::size_t i = 0; i < sv.size(); ++i) total += softplus(-sign * sv[i]);
        Tensor out({1});
        out[0] = total;
        NodeId id = push(std::move(out), {});
        nodes_[std::size_t(id)].backward = [this, id, scores, sign] {
            const double g = nodes_[std::size_t(id)].grad[0];
            const Tensor& sv2 = value(scores);
            Tensor& gs = nodes_[std::size_t(scores)].grad;
            for (std::size_t i = 0; i < sv2.size(); ++i) {
                gs[i] += -sign * stable_sigmoid(-sign * sv2[i]) * g;
            }
        };
        return id;
    }

    void backward(NodeId loss, double seed = 1.0) {
        Tensor& g = nodes_[std::size_t(loss)].grad;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed;
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            if (nodes_[i].backward) nodes_[i].backward();
        }
    }

    static double stable_sigmoid(double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
    }

    // log(1 + e^x) without overflow.
    static double softplus(double x) {
        if (x > 0.0) return x + std::log1p(std::exp(-x));
        return std::log1p(std::exp(x));
    }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::function<void()> backward;
    };

    NodeId push(Tensor value, std::function<void()> bw) {
        Node n;
        n.grad = Tensor::zeros(value.shape());
        n.value = std::move(value);
        n.backward = std::move(bw);
        nodes_.push_back(std::move(n));
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    void accumulate(NodeId target, const Tensor& g) {
        Tensor& gt = nodes_[std::size_t(target)].grad;
        for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
    }

    std::vector<Node> nodes_;
};

}  // namespace denserec
