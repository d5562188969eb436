// SPDX-License-Identifier: Apache-2.0
//
// Small tape-based reverse-mode autodiff over Eigen double matrices.
// Convention: sequences are stored column-wise (feature dim x positions).
// Each forward op appends a node; creation order is already topological, so
// backward() walks the tape in reverse.
#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <utility>
#include <vector>

#include "ecgcap/common.hpp"

namespace ecgcap::ad {

class Graph {
public:
    struct Node {
        Mat value;
        Mat grad;                 // allocated on first use
        bool requires_grad = false;
        std::vector<int> parents;
        std::function<void(Graph&, int)> backward;
    };

    Graph() { nodes_.reserve(512); }

    const Mat& val(int v) const { return nodes_[static_cast<std::size_t>(v)].value; }
    Mat& grad(int v) { return nodes_[static_cast<std::size_t>(v)].grad; }
    bool needs_grad(int v) const {
        return nodes_[static_cast<std::size_t>(v)].requires_grad;
    }
    std::size_t size() const { return nodes_.size(); }

    int input(Mat v) { return add_node(std::move(v), false, {}, nullptr); }
    int param(Mat v) { return add_node(std::move(v), true, {}, nullptr); }

    // -- elementwise ---------------------------------------------------------

    int add(int a, int b) {
        check_same_shape(a, b, "add");
        return add_node(val(a) + val(b), needs_grad(a) || needs_grad(b), {a, b},
                        [](Graph& g, int self) {
                            auto& n = g.node(self);
                            g.accumulate(n.parents[0], n.grad);
                            g.accumulate(n.parents[1], n.grad);
                        });
    }

    /// X (R x C) + column vector b (R x 1) broadcast over columns.
    int add_col(int x, int b) {
        const Mat& bv = val(b);
        return add_node(val(x).colwise() + Eigen::VectorXd(bv.col(0)),
                        needs_grad(x) || needs_grad(b), {x, b},
                        [](Graph& g, int self) {
                            auto& n = g.node(self);
                            g.accumulate(n.parents[0], n.grad);
                            if (g.needs_grad(n.parents[1]))
                                g.accumulate(n.parents[1], n.grad.rowwise().sum());
                        });
    }

    int scale(int a, double s) {
        return add_node(val(a) * s, needs_grad(a), {a},
                        [s](Graph& g, int self) {
                            auto& n = g.node(self);
                            g.accumulate(n.parents[0], (n.grad * s).eval());
                        });
    }

    /// c - x, elementwise.
    int rsub_scalar(int x, double c) {
        return add_node((c - val(x).array()).matrix(), needs_grad(x), {x},
                        [](Graph& g, int self) {
                            auto& n = g.node(self);
                            g.accumulate(n.parents[0], (-n.grad).eval());
                        });
    }

    int mul(int a, int b) {
        check_same_shape(a, b, "mul");
        return add_node(val(a).cwiseProduct(val(b)), needs_grad(a) || needs_grad(b),
                        {a, b}, [](Graph& g, int self) {
                            auto& n = g.node(self);
                            if (g.needs_grad(n.parents[0]))
                                g.accumulate(n.parents[0],
                                             n.grad.cwiseProduct(g.val(n.parents[1])));
                            if (g.needs_grad(n.parents[1]))
                                g.accumulate(n.parents[1],
                                             n.grad.cwiseProduct(g.val(n.parents[0])));
                        });
    }

    int square(int x) {
        return add_node(val(x).cwiseProduct(val(x)), needs_grad(x), {x},
                        [](Graph& g, int self) {
                            auto& n = g.node(self);
                            g.accumulate(n.parents[0],
                                         (2.0 * n.grad.cwiseProduct(g.val(n.parents[0]))).eval());
                        });
    }

    int relu(int x) {
        return add_node(val(x).cwiseMax(0.0), needs_grad(x), {x},
                        [](Graph& g, int self) {
                            auto& n = g.node(self);
                            Mat m = (g.val(n.parents[0]).array() > 0.0)
                                        .cast<double>()
                                        .matrix();
                            g.accumulate(n.parents[0], n.grad.cwiseProduct(m));
                        });
    }

    int sigmoid(int x) {
        Mat y = (1.0 / (1.0 + (-val(x).array()).exp())).matrix();
        return add_node(std::move(y), needs_grad(x), {x},
                        [](Graph& g, int self) {
                            auto& n = g.node(self);
                            Mat d = (n.value.array() * (1.0 - n.value.array())).matrix();
                            g.accumulate(n.parents[0], n.grad.cwiseProduct(d));
                        });
    }

    int tanh(int x) {
        Mat y = val(x).array().tanh().matrix();
        return add_node(std::move(y), needs_grad(x), {x},
                        [](Graph& g, int self) {
                            auto& n = g.node(self);
                            Mat d = (1.0 - n.value.array().square()).matrix();
                            g.accumulate(n.parents[0], n.grad.cwiseProduct(d));
                        });
    }

    // -- linear algebra ------------------------------------------------------

    int matmul(int a, int b) {
        if (val(a).cols() != val(b).rows())
            throw Error("matmul: inner dimension mismatch");
        return add_node(val(a) * val(b), needs_grad(a) || needs_grad(b), {a, b},
                        [](Graph& g, int self) {
                            auto& n = g.node(self);
                            if (g.needs_grad(n.parents[0]))
                                g.accumulate(n.parents[0],
                                             n.grad * g.val(n.parents[1]).transpose());
                            if (g.needs_grad(n.parents[1]))
                                g.accumulate(n.parents[1],
                                             g.val(n.parents[0]).transpose() * n.grad);
                        });
    }

    /// A^T * B
    int matmul_tn(int a, int b) {
        if (val(a).rows() != val(b).rows())
            throw Error("matmul_tn: inner dimension mismatch");
        return add_node(val(a).transpose() * val(b), needs_grad(a) || needs_grad(b),
                        {a, b}, [](Graph& g, int self) {
                            auto& n = g.node(self);
                            if (g.needs_grad(n.parents[0]))
                                g.accumulate(n.parents[0],
                                             g.val(n.parents[1]) * n.grad.transpose());
                            if (g.needs_grad(n.parents[1]))
                                g.accumulate(n.parents[1], g.val(n.parents[0]) * n.grad);
                        });
    }

    /// A * B^T
    int matmul_nt(int a, int b) {
        if (val(a).cols() != val(b).cols())
            throw Error("matmul_nt: inner dimension mismatch");
        return add_node(val(a) * val(b).transpose(), needs_grad(a) || needs_grad(b),
                        {a, b}, [](Graph& g, int self) {
                            auto& n = g.node(self);
                            if (g.needs_grad(n.parents[0]))
                                g.accumulate(n.parents[0], n.grad * g.val(n.parents[1]));
                            if (g.needs_grad(n.parents[1]))
                                g.accumulate(n.parents[1],
                                             n.grad.transpose() * g.val(n.parents[0]));
                        });
    }

    // -- shape ----------------------------------------------------------------

    int slice_rows(int x, int r0, int rows) {
        return add_node(val(x).middleRows(r0, rows), needs_grad(x), {x},
                        [r0, rows](Graph& g, int self) {
                            auto& n = g.node(self);
                            if (!g.needs_grad(n.parents[0])) return;
                            g.ensure_grad(n.parents[0]);
                            g.grad(n.parents[0]).middleRows(r0, rows) += n.grad;
                        });
    }

    int slice_cols(int x, int c0, int cols) {
        return add_node(val(x).middleCols(c0, cols), needs_grad(x), {x},
                        [c0, cols](Graph& g, int self) {
                            auto& n = g.node(self);
                            if (!g.needs_grad(n.parents[0])) return;
                            g.ensure_grad(n.parents[0]);
                            g.grad(n.parents[0]).middleCols(c0, cols) += n.grad;
                        });
    }

    int concat_rows(int a, int b) {
        if (val(a).cols() != val(b).cols())
            throw Error("concat_rows: column mismatch");
        Mat y(val(a).rows() + val(b).rows(), val(a).cols());
        y << val(a), val(b);
        return add_node(std::move(y), needs_grad(a) || needs_grad(b), {a, b},
                        [](Graph& g, int self) {
                            auto& n = g.node(self);
                            auto ra = g.val(n.parents[0]).rows();
                            auto rb = g.val(n.parents[1]).rows();
                            if (g.needs_grad(n.parents[0]))
                                g.accumulate(n.parents[0], n.grad.topRows(ra));
                            if (g.needs_grad(n.parents[1]))
                                g.accumulate(n.parents[1], n.grad.bottomRows(rb));
                        });
    }

    int concat_cols(const std::vector<int>& parts) {
        if (parts.empty()) throw Error("concat_cols: empty list");
        Eigen::Index rows = val(parts[0]).rows(), cols = 0;
        bool req = false;
        for (int p : parts) {
            if (val(p).rows() != rows) throw Error("concat_cols: row mismatch");
            cols += val(p).cols();
            req = req || needs_grad(p);
        }
        Mat y(rows, cols);
        Eigen::Index at = 0;
        for (int p : parts) {
            y.middleCols(at, val(p).cols()) = val(p);
            at += val(p).cols();
        }
        return add_node(std::move(y), req, parts, [](Graph& g, int self) {
            auto& n = g.node(self);
            Eigen::Index at = 0;
            for (int p : n.parents) {
                auto c = g.val(p).cols();
                if (g.needs_grad(p))
                    g.accumulate(p, n.grad.middleCols(at, c));
                at += c;
            }
        });
    }

    /// Embedding lookup: columns of table at the given indices.
    int gather_cols(int table, const std::vector<int>& ids) {
        const Mat& t = val(table);
        Mat y(t.rows(), static_cast<Eigen::Index>(ids.size()));
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] < 0 || ids[i] >= t.cols())
                throw Error("gather_cols: index out of range");
            y.col(static_cast<Eigen::Index>(i)) = t.col(ids[i]);
        }
        return add_node(std::move(y), needs_grad(table), {table},
                        [ids](Graph& g, int self) {
                            auto& n = g.node(self);
                            if (!g.needs_grad(n.parents[0])) return;
                            g.ensure_grad(n.parents[0]);
                            Mat& gp = g.grad(n.parents[0]);
                            for (std::size_t i = 0; i < ids.size(); ++i)
                                gp.col(ids[i]) += n.grad.col(static_cast<Eigen::Index>(i));
                        });
    }

    // -- reductions ----------------------------------------------------------

    int sum_all(int x) {
        Mat y(1, 1);
        y(0, 0) = val(x).sum();
        return add_node(std::move(y), needs_grad(x), {x},
                        [](Graph& g, int self) {
                            auto& n = g.node(self);
                            if (!g.needs_grad(n.parents[0])) return;
                            g.ensure_grad(n.parents[0]);
                            g.grad(n.parents[0]).array() += n.grad(0, 0);
                        });
    }

    /// (R x C) -> (R x 1), summing across columns.
    int sum_cols(int x) {
        return add_node(val(x).rowwise().sum(), needs_grad(x), {x},
                        [](Graph& g, int self) {
                            auto& n = g.node(self);
                            if (!g.needs_grad(n.parents[0])) return;
                            g.ensure_grad(n.parents[0]);
                            g.grad(n.parents[0]).colwise() +=
                                Eigen::VectorXd(n.grad.col(0));
                        });
    }

    /// (R x C) -> (1 x C), summing across rows.
    int sum_rows(int x) {
        return add_node(val(x).colwise().sum(), needs_grad(x), {x},
                        [](Graph& g, int self) {
                            auto& n = g.node(self);
                            if (!g.needs_grad(n.parents[0])) return;
                            g.ensure_grad(n.parents[0]);
                            g.grad(n.parents[0]).rowwise() +=
                                Eigen::RowVectorXd(n.grad.row(0));
                        });
    }

    int mean_cols(int x) {
        return scale(sum_cols(x), 1.0 / static_cast<double>(val(x).cols()));
    }

    // -- softmax --------------------------------------------------------------

    /// Softmax independently over each column.
    int softmax_cols(int x) {
        Mat y = val(x);
        for (Eigen::Index c = 0; c < y.cols(); ++c) {
            double mx = y.col(c).maxCoeff();
            y.col(c) = (y.col(c).array() - mx).exp();
            y.col(c) /= y.col(c).sum();
        }
        return add_node(std::move(y), needs_grad(x), {x},
                        [](Graph& g, int self) {
                            auto& n = g.node(self);
                            if (!g.needs_grad(n.parents[0])) return;
                            Mat dx(n.value.rows(), n.value.cols());
                            for (Eigen::Index c = 0; c < n.value.cols(); ++c) {
                                double dot = n.value.col(c).dot(n.grad.col(c));
                                dx.col(c) = n.value.col(c).cwiseProduct(
                                    (n.grad.col(c).array() - dot).matrix());
                            }
                            g.accumulate(n.parents[0], dx);
                        });
    }

    /// Softmax independently over each row.
    int softmax_rows(int x) {
        Mat y = val(x);
        for (Eigen::Index r = 0; r < y.rows(); ++r) {
            double mx = y.row(r).maxCoeff();
            y.row(r) = (y.row(r).array() - mx).exp();
            y.row(r) /= y.row(r).sum();
        }
        return add_node(std::move(y), needs_grad(x), {x},
                        [](Graph& g, int self) {
                            auto& n = g.node(self);
                            if (!g.needs_grad(n.parents[0])) return;
                            Mat dx(n.value.rows(), n.value.cols());
                            for (Eigen::Index r = 0; r < n.value.rows(); ++r) {
                                double dot = n.value.row(r).dot(n.grad.row(r));
                                dx.row(r) = n.value.row(r).cwiseProduct(
                                    (n.grad.row(r).array() - dot).matrix());
                            }
                            g.accumulate(n.parents[0], dx);
                        });
    }

    // -- layer norm ------------------------------------------------------------

    /// Per-column layer normalization over the feature (row) axis.
    int layernorm_cols(int x, int gain, int bias, double eps = 1e-5) {
        const Mat& xv = val(x);
        auto d = static_cast<double>(xv.rows());
        Mat xhat(xv.rows(), xv.cols());
        Mat inv_sigma(1, xv.cols());
        for (Eigen::Index c = 0; c < xv.cols(); ++c) {
            double mu = xv.col(c).mean();
            double var = (xv.col(c).array() - mu).square().sum() / d;
            double is = 1.0 / std::sqrt(var + eps);
            inv_sigma(0, c) = is;
            xhat.col(c) = (xv.col(c).array() - mu) * is;
        }
        Mat y = ((xhat.array().colwise() * Eigen::ArrayXd(val(gain).col(0))).colwise() +
                 Eigen::ArrayXd(val(bias).col(0)))
                    .matrix();
        int node = add_node(std::move(y),
                            needs_grad(x) || needs_grad(gain) || needs_grad(bias),
                            {x, gain, bias}, nullptr);
        auto xh = std::make_shared<Mat>(std::move(xhat));
        auto isg = std::make_shared<Mat>(std::move(inv_sigma));
        nodes_[static_cast<std::size_t>(node)].backward =
            [xh, isg, d](Graph& g, int self) {
                auto& n = g.node(self);
                int xp = n.parents[0], gp = n.parents[1], bp = n.parents[2];
                if (g.needs_grad(gp))
                    g.accumulate(gp, n.grad.cwiseProduct(*xh).rowwise().sum());
                if (g.needs_grad(bp)) g.accumulate(bp, n.grad.rowwise().sum());
                if (!g.needs_grad(xp)) return;
                Mat dx(n.value.rows(), n.value.cols());
                const Vec gainv = g.val(gp).col(0);
                for (Eigen::Index c = 0; c < n.value.cols(); ++c) {
                    Vec dxhat = n.grad.col(c).cwiseProduct(gainv);
                    double mean_dxhat = dxhat.mean();
                    double mean_dxhat_xhat = dxhat.cwiseProduct(xh->col(c)).mean();
                    dx.col(c) = (((*isg)(0, c)) *
                                 (dxhat.array() - mean_dxhat -
                                  xh->col(c).array() * mean_dxhat_xhat))
                                    .matrix();
                }
                g.accumulate(xp, dx);
            };
        return node;
    }

    // -- temporal ops ----------------------------------------------------------

    /// 1D convolution over columns: x (Cin x L), w (Cout x Cin*k), b (Cout x 1).
    /// Symmetric zero padding of (k-1)/2, configurable stride.
    int conv1d(int x, int w, int b, int kernel, int stride) {
        const Mat& xv = val(x);
        auto cin = xv.rows();
        auto len = xv.cols();
        if (val(w).cols() != cin * kernel)
            throw Error("conv1d: weight shape does not match Cin*kernel");
        if (val(b).rows() != val(w).rows())
            throw Error("conv1d: bias shape mismatch");
        int pad = (kernel - 1) / 2;
        auto lout = (len + 2 * pad - kernel) / stride + 1;
        if (lout < 1)
            throw Error("conv1d: input of length " + std::to_string(len) +
                        " too short for kernel " + std::to_string(kernel));

        auto col = std::make_shared<Mat>(cin * kernel, lout);
        col->setZero();
        for (Eigen::Index t = 0; t < lout; ++t) {
            Eigen::Index start = t * stride - pad;
            for (int j = 0; j < kernel; ++j) {
                Eigen::Index src = start + j;
                if (src < 0 || src >= len) continue;
                col->block(static_cast<Eigen::Index>(j) * cin, t, cin, 1) =
                    xv.col(src);
            }
        }
        Mat y = (val(w) * (*col)).colwise() + Eigen::VectorXd(val(b).col(0));
        return add_node(std::move(y), needs_grad(x) || needs_grad(w) || needs_grad(b),
                        {x, w, b},
                        [col, kernel, stride, pad](Graph& g, int self) {
                            auto& n = g.node(self);
                            int xp = n.parents[0], wp = n.parents[1], bp = n.parents[2];
                            if (g.needs_grad(wp))
                                g.accumulate(wp, n.grad * col->transpose());
                            if (g.needs_grad(bp))
                                g.accumulate(bp, n.grad.rowwise().sum());
                            if (!g.needs_grad(xp)) return;
                            const Mat& xv = g.val(xp);
                            auto cin = xv.rows();
                            Mat dcol = g.val(wp).transpose() * n.grad;
                            g.ensure_grad(xp);
                            Mat& dx = g.grad(xp);
                            for (Eigen::Index t = 0; t < dcol.cols(); ++t) {
                                Eigen::Index start = t * stride - pad;
                                for (int j = 0; j < kernel; ++j) {
                                    Eigen::Index src = start + j;
                                    if (src < 0 || src >= xv.cols()) continue;
                                    dx.col(src) += dcol.block(
                                        static_cast<Eigen::Index>(j) * cin, t, cin, 1);
                                }
                            }
                        });
    }

    /// Max pooling over columns with zero padding.
    int maxpool1d(int x, int kernel, int stride, int pad) {
        const Mat& xv = val(x);
        auto rows = xv.rows();
        auto len = xv.cols();
        auto lout = (len + 2 * pad - kernel) / stride + 1;
        if (lout < 1) throw Error("maxpool1d: input too short");

        Mat y(rows, lout);
        auto argmax = std::make_shared<std::vector<Eigen::Index>>(
            static_cast<std::size_t>(rows * lout));
        for (Eigen::Index t = 0; t < lout; ++t) {
            Eigen::Index start = t * stride - pad;
            for (Eigen::Index r = 0; r < rows; ++r) {
                double best = -std::numeric_limits<double>::infinity();
                Eigen::Index best_idx = -1;
                for (int j = 0; j < kernel; ++j) {
                    Eigen::Index src = start + j;
                    if (src < 0 || src >= len) continue;
                    if (xv(r, src) > best) {
                        best = xv(r, src);
                        best_idx = src;
                    }
                }
                // fully out-of-range windows cannot happen for pad < kernel
                y(r, t) = best;
                (*argmax)[static_cast<std::size_t>(t * rows + r)] = best_idx;
            }
        }
        return add_node(std::move(y), needs_grad(x), {x},
                        [argmax](Graph& g, int self) {
                            auto& n = g.node(self);
                            int xp = n.parents[0];
                            if (!g.needs_grad(xp)) return;
                            g.ensure_grad(xp);
                            Mat& dx = g.grad(xp);
                            auto rows = n.value.rows();
                            for (Eigen::Index t = 0; t < n.value.cols(); ++t)
                                for (Eigen::Index r = 0; r < rows; ++r)
                                    dx(r, (*argmax)[static_cast<std::size_t>(t * rows + r)]) +=
                                        n.grad(r, t);
                        });
    }

    /// Adaptive average pooling to exactly k output positions. Bins are
    /// contiguous windows of width L/k with fractional endpoints, so the mean
    /// over output positions equals the input mean per channel exactly.
    int adaptive_avg_pool(int x, int k) {
        const Mat& xv = val(x);
        auto len = xv.cols();
        auto pool = std::make_shared<Mat>(pooling_matrix(len, k));
        Mat y = xv * (*pool);
        return add_node(std::move(y), needs_grad(x), {x},
                        [pool](Graph& g, int self) {
                            auto& n = g.node(self);
                            if (!g.needs_grad(n.parents[0])) return;
                            g.accumulate(n.parents[0], n.grad * pool->transpose());
                        });
    }

    static Mat pooling_matrix(Eigen::Index len, int k) {
        Mat p = Mat::Zero(len, k);
        double width = static_cast<double>(len) / static_cast<double>(k);
        for (int bin = 0; bin < k; ++bin) {
            double lo = bin * width;
            double hi = (bin + 1) * width;
            for (Eigen::Index s = static_cast<Eigen::Index>(std::floor(lo));
                 s < len && static_cast<double>(s) < hi; ++s) {
                double overlap = std::min(hi, static_cast<double>(s) + 1.0) -
                                 std::max(lo, static_cast<double>(s));
                if (overlap > 0.0) p(s, bin) = overlap / width;
            }
        }
        return p;
    }

    // -- loss ------------------------------------------------------------------

    /// Sum of token-level cross-entropy over the selected columns of a
    /// (vocab x steps) logit matrix. Fused log-softmax for stability.
    int cross_entropy_cols(int logits, const std::vector<int>& targets,
                           const std::vector<bool>& active) {
        const Mat& lv = val(logits);
        if (static_cast<Eigen::Index>(targets.size()) != lv.cols())
            throw Error("cross_entropy_cols: target/step mismatch");
        auto probs = std::make_shared<Mat>(lv.rows(), lv.cols());
        double total = 0.0;
        for (Eigen::Index t = 0; t < lv.cols(); ++t) {
            double mx = lv.col(t).maxCoeff();
            Vec e = (lv.col(t).array() - mx).exp();
            double z = e.sum();
            probs->col(t) = e / z;
            if (active[static_cast<std::size_t>(t)])
                total -= std::log((*probs)(targets[static_cast<std::size_t>(t)], t));
        }
        Mat y(1, 1);
        y(0, 0) = total;
        return add_node(std::move(y), needs_grad(logits), {logits},
                        [probs, targets, active](Graph& g, int self) {
                            auto& n = g.node(self);
                            if (!g.needs_grad(n.parents[0])) return;
                            double up = n.grad(0, 0);
                            Mat dl = *probs;
                            for (Eigen::Index t = 0; t < dl.cols(); ++t) {
                                if (!active[static_cast<std::size_t>(t)]) {
                                    dl.col(t).setZero();
                                    continue;
                                }
                                dl(targets[static_cast<std::size_t>(t)], t) -= 1.0;
                            }
                            g.accumulate(n.parents[0], (dl * up).eval());
                        });
    }

    // -- engine ------------------------------------------------------------------

    void backward(int loss) {
        auto& ln = node(loss);
        if (ln.value.rows() != 1 || ln.value.cols() != 1)
            throw Error("backward: loss must be a 1x1 node");
        ensure_grad(loss);
        grad(loss)(0, 0) = 1.0;
        for (int i = loss; i >= 0; --i) {
            auto& n = nodes_[static_cast<std::size_t>(i)];
            if (!n.requires_grad || !n.backward) continue;
            if (n.grad.size() == 0) continue; // not an ancestor of the loss
            n.backward(*this, i);
        }
    }

    Node& node(int v) { return nodes_[static_cast<std::size_t>(v)]; }

    void ensure_grad(int v) {
        auto& n = node(v);
        if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    }

    template <typename Expr>
    void accumulate(int v, const Expr& delta) {
        if (!needs_grad(v)) return;
        ensure_grad(v);
        grad(v) += delta;
    }

private:
    int add_node(Mat value, bool req, std::vector<int> parents,
                 std::function<void(Graph&, int)> backward) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = req;
        n.parents = std::move(parents);
        n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    void check_same_shape(int a, int b, const char* op) const {
        if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols())
            throw Error(std::string(op) + ": shape mismatch (" +
                        std::to_string(val(a).rows()) + "x" +
                        std::to_string(val(a).cols()) + " vs " +
                        std::to_string(val(b).rows()) + "x" +
                        std::to_string(val(b).cols()) + ")");
    }

    std::vector<Node> nodes_;
};

/// Learnable tensor plus its optimizer state.
struct Parameter {
    std::string name;
    Mat value;
    Mat adam_m;
    Mat adam_v;

    Parameter(std::string n, Mat v)
        : name(std::move(n)),
          value(std::move(v)),
          adam_m(Mat::Zero(value.rows(), value.cols())),
          adam_v(Mat::Zero(value.rows(), value.cols())) {}
};

/// Flat ordered collection of parameters; ids are stable indices.
class ParamBag {
public:
    int add(std::string name, Mat value) {
        params_.emplace_back(std::move(name), std::move(value));
        return static_cast<int>(params_.size()) - 1;
    }
    Parameter& operator[](int id) { return params_[static_cast<std::size_t>(id)]; }
    const Parameter& operator[](int id) const {
        return params_[static_cast<std::size_t>(id)];
    }
    std::size_t size() const { return params_.size(); }
    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
        return n;
    }

    int find(const std::string& name) const {
        for (std::size_t i = 0; i < params_.size(); ++i)
            if (params_[i].name == name) return static_cast<int>(i);
        throw Error("parameter not found: " + name);
    }

private:
    std::vector<Parameter> params_;
};

/// Binds ParamBag entries to graph leaves, one graph per forward pass.
/// After backward(), flush_grads() adds each bound leaf's gradient into the
/// caller's accumulation buffer (ordered like the bag).
class Binder {
public:
    explicit Binder(const ParamBag& bag, bool requires_grad = true)
        : bag_(bag),
          requires_grad_(requires_grad),
          vars_(bag.size(), -1) {}

    Graph& graph() { return g_; }

    int operator()(int param_id) {
        auto idx = static_cast<std::size_t>(param_id);
        if (vars_[idx] < 0) {
            vars_[idx] = requires_grad_ ? g_.param(bag_[param_id].value)
                                        : g_.input(bag_[param_id].value);
        }
        return vars_[idx];
    }

    void flush_grads(std::vector<Mat>& buffer) {
        for (std::size_t i = 0; i < vars_.size(); ++i) {
            if (vars_[i] < 0) continue;
            const Mat& grad = g_.grad(static_cast<int>(vars_[static_cast<std::size_t>(i)]));
            if (grad.size() == 0) continue;
            if (buffer[i].size() == 0)
                buffer[i] = grad;
            else
                buffer[i] += grad;
        }
    }

private:
    const ParamBag& bag_;
    bool requires_grad_;
    Graph g_;
    std::vector<int> vars_;
};

} // namespace ecgcap::ad
