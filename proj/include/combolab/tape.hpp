#pragma once

#include <algorithm>
#include <array>
#include <deque>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include "combolab/error.hpp"
#include "combolab/tensor.hpp"

namespace combolab {

// Handle to a node on a Tape.
struct Var {
    std::uint32_t id = UINT32_MAX;
    bool valid() const { return id != UINT32_MAX; }
};

// Define-by-run computation tape. Every primitive records the closure that
// pushes gradients to its inputs; append order is topological by
// construction, so one reverse sweep from the loss fills every reachable
// gradient.
//
// backward() accumulates into leaf gradients: calling it twice without
// zero_grads() doubles them. A tape is confined to one execution context;
// independent tapes may run in parallel.
class Tape {
public:
    // Node storage is a deque so references returned by value()/grad() stay
    // valid while further nodes are recorded.
    Var leaf(Tensor value) { return push(std::move(value), {}, nullptr); }

    // Alias for leaf; a constant is just a node nobody reads gradients from.
    Var constant(Tensor value) { return leaf(std::move(value)); }

    Var constant(double v) { return leaf(Tensor::scalar(v)); }

    const Tensor& value(Var v) const { return node(v).value; }
    const Tensor& grad(Var v) const { return node(v).grad; }
    std::size_t size() const { return nodes_.size(); }

    void zero_grads() {
        for (Node& n : nodes_)
            std::fill(n.grad.data().begin(), n.grad.data().end(), 0.0);
    }

    // ---- elementwise binary (scalar<->tensor or identical shapes) ----

    Var add(Var a, Var b) {
        return binary("add", a, b, [](double x, double y) { return x + y; },
                      [](double, double, double g) { return std::pair{g, g}; });
    }

    Var sub(Var a, Var b) {
        return binary("sub", a, b, [](double x, double y) { return x - y; },
                      [](double, double, double g) { return std::pair{g, -g}; });
    }

    Var mul(Var a, Var b) {
        return binary("mul", a, b, [](double x, double y) { return x * y; },
                      [](double x, double y, double g) {
                          return std::pair{g * y, g * x};
                      });
    }

    Var add(Var a, double c) { return add(a, constant(c)); }
    Var sub(Var a, double c) { return sub(a, constant(c)); }
    Var mul(Var a, double c) { return mul(a, constant(c)); }

    // ---- elementwise unary ----

    Var abs(Var a) {
        // derivative at 0 is taken as 0 (subgradient choice)
        return unary(a, [](double x) { return std::fabs(x); },
                     [](double x, double) {
                         return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
                     });
    }

    Var relu(Var a) {
        return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                     [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
    }

    Var sigmoid(Var a) {
        return unary(a,
                     [](double x) {
                         if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
                         double e = std::exp(x);
                         return e / (1.0 + e);
                     },
                     [](double, double y) { return y * (1.0 - y); });
    }

    Var log(Var a) {
        for (double v : value(a).data())
            if (v <= 0.0)
                throw DomainError("log of non-positive value " + std::to_string(v) +
                                  "; callers must pre-clamp");
        return unary(a, [](double x) { return std::log(x); },
                     [](double x, double) { return 1.0 / x; });
    }

    Var clamp_min(Var a, double eps) {
        return unary(a, [eps](double x) { return x < eps ? eps : x; },
                     [eps](double x, double) { return x < eps ? 0.0 : 1.0; });
    }

    Var square(Var a) {
        return unary(a, [](double x) { return x * x; },
                     [](double x, double) { return 2.0 * x; });
    }

    // ---- matrix ops ----

    Var matmul(Var a, Var b) {
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        if (ta.rank() != 2 || tb.rank() != 2 || ta.extent(1) != tb.extent(0))
            throw ShapeError("matmul: incompatible shapes " + shape_str(ta.shape()) +
                             " and " + shape_str(tb.shape()));
        const std::size_t m = ta.extent(0), k = ta.extent(1), n = tb.extent(1);
        Tensor out(Shape{m, n});
        gemm_nn(ta.data().data(), tb.data().data(), out.data().data(), m, k, n);
        return push(std::move(out), {a, b}, [m, k, n](Tape& t, std::uint32_t self) {
            Node& s = t.nodes_[self];
            Node& na = t.nodes_[s.parents[0]];
            Node& nb = t.nodes_[s.parents[1]];
            // dA = G * B^T, dB = A^T * G
            gemm_nt(s.grad.data().data(), nb.value.data().data(),
                    na.grad.data().data(), m, n, k);
            gemm_tn(na.value.data().data(), s.grad.data().data(),
                    nb.grad.data().data(), k, m, n);
        });
    }

    Var transpose(Var a) {
        const Tensor& ta = value(a);
        if (ta.rank() != 2)
            throw ShapeError("transpose: rank-2 tensor required, got " +
                             shape_str(ta.shape()));
        const std::size_t r = ta.extent(0), c = ta.extent(1);
        Tensor out(Shape{c, r});
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) out.at(j, i) = ta.at(i, j);
        return push(std::move(out), {a}, [r, c](Tape& t, std::uint32_t self) {
            Node& s = t.nodes_[self];
            Node& na = t.nodes_[s.parents[0]];
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    na.grad.at(i, j) += s.grad.at(j, i);
        });
    }

    // Adds a length-n row vector to every row of an [m x n] matrix.
    Var add_rowvec(Var mat, Var vec) {
        const Tensor& tm = value(mat);
        const Tensor& tv = value(vec);
        if (tm.rank() != 2 || tv.rank() != 1 || tm.extent(1) != tv.extent(0))
            throw ShapeError("add_rowvec: incompatible shapes " +
                             shape_str(tm.shape()) + " and " + shape_str(tv.shape()));
        const std::size_t m = tm.extent(0), n = tm.extent(1);
        Tensor out(tm.shape());
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out.at(i, j) = tm.at(i, j) + tv[j];
        return push(std::move(out), {mat, vec}, [m, n](Tape& t, std::uint32_t self) {
            Node& s = t.nodes_[self];
            Node& nm = t.nodes_[s.parents[0]];
            Node& nv = t.nodes_[s.parents[1]];
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    nm.grad.at(i, j) += s.grad.at(i, j);
                    nv.grad[j] += s.grad.at(i, j);
                }
        });
    }

    // ---- softmax (row-wise over an [N x C] tensor) ----

    Var softmax(Var logits) {
        const Tensor& tl = value(logits);
        if (tl.rank() != 2 || tl.extent(1) < 2)
            throw ShapeError("softmax: [N x C] tensor with C >= 2 required, got " +
                             shape_str(tl.shape()));
        const std::size_t n = tl.extent(0), c = tl.extent(1);
        Tensor out(tl.shape());
        for (std::size_t i = 0; i < n; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, tl.at(i, j));
            double sum = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                out.at(i, j) = std::exp(tl.at(i, j) - mx);
                sum += out.at(i, j);
            }
            for (std::size_t j = 0; j < c; ++j) out.at(i, j) /= sum;
        }
        return push(std::move(out), {logits}, [n, c](Tape& t, std::uint32_t self) {
            Node& s = t.nodes_[self];
            Node& nl = t.nodes_[s.parents[0]];
            // dx_j = y_j * (g_j - sum_k g_k y_k), per row
            for (std::size_t i = 0; i < n; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j)
                    dot += s.grad.at(i, j) * s.value.at(i, j);
                for (std::size_t j = 0; j < c; ++j)
                    nl.grad.at(i, j) += s.value.at(i, j) * (s.grad.at(i, j) - dot);
            }
        });
    }

    // ---- pooling / channel scaling (rank-3, [C x H x W]) ----

    Var global_avg_pool(Var u) {
        const Tensor& tu = value(u);
        if (tu.rank() != 3)
            throw ShapeError("global_avg_pool: [C x H x W] tensor required, got " +
                             shape_str(tu.shape()));
        const std::size_t c = tu.extent(0), h = tu.extent(1), w = tu.extent(2);
        Tensor out(Shape{c});
        const double inv = 1.0 / static_cast<double>(h * w);
        for (std::size_t ch = 0; ch < c; ++ch) {
            double sum = 0.0;
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = 0; j < w; ++j) sum += tu.at(ch, i, j);
            out[ch] = sum * inv;
        }
        return push(std::move(out), {u}, [c, h, w, inv](Tape& t, std::uint32_t self) {
            Node& s = t.nodes_[self];
            Node& nu = t.nodes_[s.parents[0]];
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double g = s.grad[ch] * inv;
                for (std::size_t i = 0; i < h; ++i)
                    for (std::size_t j = 0; j < w; ++j) nu.grad.at(ch, i, j) += g;
            }
        });
    }

    // x~_c = s_c * u_c: scales each channel of u [C x H x W] by s[c].
    Var scale_channels(Var u, Var s) {
        const Tensor& tu = value(u);
        const Tensor& ts = value(s);
        if (tu.rank() != 3 || ts.rank() != 1 || ts.extent(0) != tu.extent(0))
            throw ShapeError("scale_channels: incompatible shapes " +
                             shape_str(tu.shape()) + " and " + shape_str(ts.shape()));
        const std::size_t c = tu.extent(0), h = tu.extent(1), w = tu.extent(2);
        Tensor out(tu.shape());
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = 0; j < w; ++j)
                    out.at(ch, i, j) = ts[ch] * tu.at(ch, i, j);
        return push(std::move(out), {u, s}, [c, h, w](Tape& t, std::uint32_t self) {
            Node& sn = t.nodes_[self];
            Node& nu = t.nodes_[sn.parents[0]];
            Node& ns = t.nodes_[sn.parents[1]];
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t i = 0; i < h; ++i)
                    for (std::size_t j = 0; j < w; ++j) {
                        nu.grad.at(ch, i, j) += ns.value[ch] * sn.grad.at(ch, i, j);
                        ns.grad[ch] += nu.value.at(ch, i, j) * sn.grad.at(ch, i, j);
                    }
        });
    }

    // ---- reductions ----

    Var reduce_sum(Var a) {
        const Tensor& ta = value(a);
        double sum = 0.0;
        for (double v : ta.data()) sum += v;
        return push(Tensor::scalar(sum), {a}, [](Tape& t, std::uint32_t self) {
            Node& s = t.nodes_[self];
            Node& na = t.nodes_[s.parents[0]];
            for (double& g : na.grad.data()) g += s.grad[0];
        });
    }

    Var reduce_mean(Var a) {
        const std::size_t n = value(a).numel();
        const double inv = 1.0 / static_cast<double>(n);
        Var s = reduce_sum(a);
        return mul(s, inv);
    }

    // axis = 0 collapses rows, axis = 1 collapses columns (rank-2 only).
    Var reduce_sum(Var a, int axis) {
        const Tensor& ta = value(a);
        if (ta.rank() != 2 || (axis != 0 && axis != 1))
            throw ContractError("reduce_sum: axis " + std::to_string(axis) +
                                " invalid for shape " + shape_str(ta.shape()));
        const std::size_t m = ta.extent(0), n = ta.extent(1);
        Tensor out(Shape{axis == 0 ? n : m});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out[axis == 0 ? j : i] += ta.at(i, j);
        return push(std::move(out), {a}, [m, n, axis](Tape& t, std::uint32_t self) {
            Node& s = t.nodes_[self];
            Node& na = t.nodes_[s.parents[0]];
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    na.grad.at(i, j) += s.grad[axis == 0 ? j : i];
        });
    }

    Var reduce_mean(Var a, int axis) {
        const Tensor& ta = value(a);
        if (ta.rank() != 2 || (axis != 0 && axis != 1))
            throw ContractError("reduce_mean: axis " + std::to_string(axis) +
                                " invalid for shape " + shape_str(ta.shape()));
        const double inv = 1.0 / static_cast<double>(axis == 0 ? ta.extent(0)
                                                               : ta.extent(1));
        return mul(reduce_sum(a, axis), inv);
    }

    // ---- shape ops ----

    Var reshape(Var a, Shape shape) {
        const Tensor& ta = value(a);
        if (shape_numel(shape) != ta.numel())
            throw ShapeError("reshape: cannot view " + shape_str(ta.shape()) +
                             " as " + shape_str(shape));
        Tensor out(std::move(shape), ta.data());
        return push(std::move(out), {a}, [](Tape& t, std::uint32_t self) {
            Node& s = t.nodes_[self];
            Node& na = t.nodes_[s.parents[0]];
            for (std::size_t i = 0; i < na.grad.numel(); ++i)
                na.grad[i] += s.grad[i];
        });
    }

    // Contiguous sub-range view, reshaped to `shape`.
    Var slice(Var a, std::size_t offset, Shape shape) {
        const Tensor& ta = value(a);
        const std::size_t n = shape_numel(shape);
        if (offset + n > ta.numel())
            throw ShapeError("slice: range [" + std::to_string(offset) + ", " +
                             std::to_string(offset + n) + ") exceeds " +
                             shape_str(ta.shape()));
        Tensor out(std::move(shape),
                   std::vector<double>(ta.data().begin() + offset,
                                       ta.data().begin() + offset + n));
        return push(std::move(out), {a}, [offset, n](Tape& t, std::uint32_t self) {
            Node& s = t.nodes_[self];
            Node& na = t.nodes_[s.parents[0]];
            for (std::size_t i = 0; i < n; ++i) na.grad[offset + i] += s.grad[i];
        });
    }

    // ---- reverse sweep ----

    void backward(Var loss) {
        if (!loss.valid() || loss.id >= nodes_.size())
            throw ContractError("backward: invalid loss handle");
        if (!value(loss).is_scalar())
            throw ContractError("backward: loss must be scalar, got " +
                                shape_str(value(loss).shape()));
        // Computed nodes start each sweep clean; leaf gradients accumulate
        // across sweeps until zero_grads().
        for (Node& n : nodes_)
            if (n.backward)
                std::fill(n.grad.data().begin(), n.grad.data().end(), 0.0);
        nodes_[loss.id].grad[0] += 1.0;
        for (std::uint32_t i = loss.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.backward) n.backward(*this, i);
        }
    }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::array<std::uint32_t, 2> parents{UINT32_MAX, UINT32_MAX};
        std::function<void(Tape&, std::uint32_t)> backward;
    };

    const Node& node(Var v) const {
        if (!v.valid() || v.id >= nodes_.size())
            throw ContractError("invalid tape handle");
        return nodes_[v.id];
    }

    Var push(Tensor value, std::initializer_list<Var> parents,
             std::function<void(Tape&, std::uint32_t)> backward) {
        Node n;
        n.grad = Tensor(value.shape());
        n.value = std::move(value);
        std::size_t i = 0;
        for (Var p : parents) n.parents[i++] = p.id;
        n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    template <class F, class DF>
    Var unary(Var a, F f, DF df) {
        const Tensor& ta = value(a);
        Tensor out(ta.shape());
        for (std::size_t i = 0; i < ta.numel(); ++i) out[i] = f(ta[i]);
        return push(std::move(out), {a}, [df](Tape& t, std::uint32_t self) {
            Node& s = t.nodes_[self];
            Node& na = t.nodes_[s.parents[0]];
            for (std::size_t i = 0; i < s.value.numel(); ++i)
                na.grad[i] += s.grad[i] * df(na.value[i], s.value[i]);
        });
    }

    // Broadcasting is restricted to scalar<->tensor and identical shapes.
    template <class F, class DF>
    Var binary(const char* name, Var a, Var b, F f, DF df) {
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        const bool a_scalar = ta.is_scalar(), b_scalar = tb.is_scalar();
        if (!a_scalar && !b_scalar && !ta.same_shape(tb))
            throw ShapeError(std::string(name) + ": shapes " + shape_str(ta.shape()) +
                             " and " + shape_str(tb.shape()) +
                             " are not broadcast-compatible (scalar or equal "
                             "shapes only)");
        const Tensor& big = a_scalar ? tb : ta;
        Tensor out(big.shape());
        for (std::size_t i = 0; i < big.numel(); ++i)
            out[i] = f(ta[a_scalar ? 0 : i], tb[b_scalar ? 0 : i]);
        return push(std::move(out), {a, b},
                    [df, a_scalar, b_scalar](Tape& t, std::uint32_t self) {
                        Node& s = t.nodes_[self];
                        Node& na = t.nodes_[s.parents[0]];
                        Node& nb = t.nodes_[s.parents[1]];
                        for (std::size_t i = 0; i < s.value.numel(); ++i) {
                            auto [ga, gb] = df(na.value[a_scalar ? 0 : i],
                                               nb.value[b_scalar ? 0 : i], s.grad[i]);
                            na.grad[a_scalar ? 0 : i] += ga;
                            nb.grad[b_scalar ? 0 : i] += gb;
                        }
                    });
    }

    // C += A * B variants; ikj loops keep the inner stride 1.
    static void gemm_nn(const double* a, const double* b, double* c,
                        std::size_t m, std::size_t k, std::size_t n) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
                const double av = a[i * k + p];
                for (std::size_t j = 0; j < n; ++j) c[i * n + j] += av * b[p * n + j];
            }
    }

    // C[m x k] += A[m x n] * B^T where B is [k x n]
    static void gemm_nt(const double* a, const double* b, double* c,
                        std::size_t m, std::size_t n, std::size_t k) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < k; ++j) {
                double sum = 0.0;
                for (std::size_t p = 0; p < n; ++p) sum += a[i * n + p] * b[j * n + p];
                c[i * k + j] += sum;
            }
    }

    // C[k x n] += A^T * B where A is [m x k], B is [m x n]
    static void gemm_tn(const double* a, const double* b, double* c,
                        std::size_t k, std::size_t m, std::size_t n) {
        for (std::size_t p = 0; p < m; ++p)
            for (std::size_t i = 0; i < k; ++i) {
                const double av = a[p * k + i];
                for (std::size_t j = 0; j < n; ++j) c[i * n + j] += av * b[p * n + j];
            }
    }

    std::deque<Node> nodes_;
};

}  // namespace combolab
