#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mgfte/tensor.hpp"

namespace mgfte {

/// Handle into a TapeT's node list.
struct Var {
    std::size_t id = static_cast<std::size_t>(-1);
    bool valid() const { return id != static_cast<std::size_t>(-1); }
};

/// Reverse-mode gradient tape over rank-2 tensors.
///
/// Every op records a node holding the forward value plus a closure that
/// scatters the node's gradient into its parents. backward() seeds a 1x1
/// loss node with 1 and sweeps the tape in reverse. One tape per training
/// step; a tape is single-writer and backward() may run once.
///
/// Subgradient conventions (they matter for emission ties):
///   relu'(0) = 0; column max-pool routes the whole gradient to the first
///   maximal row; |x|' at 0 is 0.
template <typename S>
class TapeT {
public:
    TapeT() = default;
    TapeT(const TapeT&) = delete;
    TapeT& operator=(const TapeT&) = delete;

    /// Leaf with gradient tracking (model parameters, op inputs under test).
    Var leaf(TensorT<S> value) { return push(std::move(value), {}, nullptr); }

    /// Leaf that never needs a gradient (episode data). Grads are still
    /// accumulated, just unused; there is no separate no-grad path.
    Var constant(TensorT<S> value) { return push(std::move(value), {}, nullptr); }

    const TensorT<S>& value(Var v) const { return node(v).value; }
    const TensorT<S>& grad(Var v) const {
        if (!ran_backward_) throw std::logic_error("tape: grad() before backward()");
        return node(v).grad;
    }

    std::size_t size() const { return nodes_.size(); }

    /// Seeds d(loss)/d(loss) = 1 and accumulates gradients into every node.
    void backward(Var loss) {
        if (ran_backward_) throw std::logic_error("tape: backward() already ran");
        const TensorT<S>& lv = value(loss);
        if (lv.numel() != 1) throw std::invalid_argument("backward: loss must be 1x1");
        for (auto& n : nodes_) n.grad = TensorT<S>::zeros(n.value.rows(), n.value.cols());
        nodes_[loss.id].grad.data[0] = S(1);
        ran_backward_ = true;
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            current_ = i;
            if (nodes_[i].backward) nodes_[i].backward(*this);
        }
    }

    // ---------------------------------------------------------------- ops

    Var add(Var a, Var b) {
        const auto &av = value(a), &bv = value(b);
        require_same_shape(av, bv, "add");
        TensorT<S> out = av;
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv.data[i];
        return push(std::move(out), {a, b}, [a, b](TapeT& t) {
            const auto& g = t.out_grad();
            t.accumulate(a, g);
            t.accumulate(b, g);
        });
    }

    Var sub(Var a, Var b) {
        const auto &av = value(a), &bv = value(b);
        require_same_shape(av, bv, "sub");
        TensorT<S> out = av;
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= bv.data[i];
        return push(std::move(out), {a, b}, [a, b](TapeT& t) {
            const auto& g = t.out_grad();
            t.accumulate(a, g);
            TensorT<S> ng = g;
            for (auto& v : ng.data) v = -v;
            t.accumulate(b, ng);
        });
    }

    /// a + c*b, elementwise.
    Var add_scaled(Var a, Var b, S c) {
        const auto &av = value(a), &bv = value(b);
        require_same_shape(av, bv, "add_scaled");
        TensorT<S> out = av;
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += c * bv.data[i];
        return push(std::move(out), {a, b}, [a, b, c](TapeT& t) {
            const auto& g = t.out_grad();
            t.accumulate(a, g);
            TensorT<S> sg = g;
            for (auto& v : sg.data) v *= c;
            t.accumulate(b, sg);
        });
    }

    Var scale(Var a, S c) {
        TensorT<S> out = value(a);
        for (auto& v : out.data) v *= c;
        return push(std::move(out), {a}, [a, c](TapeT& t) {
            TensorT<S> g = t.out_grad();
            for (auto& v : g.data) v *= c;
            t.accumulate(a, g);
        });
    }

    Var neg(Var a) { return scale(a, S(-1)); }

    /// Elementwise (Hadamard) product.
    Var hadamard(Var a, Var b) {
        const auto &av = value(a), &bv = value(b);
        require_same_shape(av, bv, "hadamard");
        TensorT<S> out = av;
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv.data[i];
        return push(std::move(out), {a, b}, [a, b](TapeT& t) {
            const auto& g = t.out_grad();
            const auto &av2 = t.value(a), &bv2 = t.value(b);
            TensorT<S> ga = g, gb = g;
            for (std::size_t i = 0; i < g.data.size(); ++i) {
                ga.data[i] *= bv2.data[i];
                gb.data[i] *= av2.data[i];
            }
            t.accumulate(a, ga);
            t.accumulate(b, gb);
        });
    }

    /// Elementwise |a - b|; derivative at a == b is 0.
    Var absdiff(Var a, Var b) {
        const auto &av = value(a), &bv = value(b);
        require_same_shape(av, bv, "absdiff");
        TensorT<S> out = av;
        for (std::size_t i = 0; i < out.data.size(); ++i)
            out.data[i] = std::abs(av.data[i] - bv.data[i]);
        return push(std::move(out), {a, b}, [a, b](TapeT& t) {
            const auto& g = t.out_grad();
            const auto &av2 = t.value(a), &bv2 = t.value(b);
            TensorT<S> ga = g, gb = g;
            for (std::size_t i = 0; i < g.data.size(); ++i) {
                S d = av2.data[i] - bv2.data[i];
                S sgn = d > S(0) ? S(1) : (d < S(0) ? S(-1) : S(0));
                ga.data[i] *= sgn;
                gb.data[i] *= -sgn;
            }
            t.accumulate(a, ga);
            t.accumulate(b, gb);
        });
    }

    /// max(0, x); derivative at exactly 0 is 0.
    Var relu(Var a) {
        TensorT<S> out = value(a);
        for (auto& v : out.data) v = v > S(0) ? v : S(0);
        return push(std::move(out), {a}, [a](TapeT& t) {
            TensorT<S> g = t.out_grad();
            const auto& av = t.value(a);
            for (std::size_t i = 0; i < g.data.size(); ++i)
                if (!(av.data[i] > S(0))) g.data[i] = S(0);
            t.accumulate(a, g);
        });
    }

    /// C = A * B.
    Var matmul(Var a, Var b) {
        const auto &av = value(a), &bv = value(b);
        require_rank2_pair(av, bv, "matmul");
        if (av.cols() != bv.rows()) throw std::invalid_argument("matmul: inner dims");
        TensorT<S> out = TensorT<S>::zeros(av.rows(), bv.cols());
        for (std::size_t i = 0; i < av.rows(); ++i)
            for (std::size_t k = 0; k < av.cols(); ++k) {
                S aik = av.at(i, k);
                for (std::size_t j = 0; j < bv.cols(); ++j)
                    out.at(i, j) += aik * bv.at(k, j);
            }
        return push(std::move(out), {a, b}, [a, b](TapeT& t) {
            const auto& g = t.out_grad();
            const auto &av2 = t.value(a), &bv2 = t.value(b);
            // dA = g * B^T ; dB = A^T * g
            TensorT<S> ga = TensorT<S>::zeros(av2.rows(), av2.cols());
            TensorT<S> gb = TensorT<S>::zeros(bv2.rows(), bv2.cols());
            for (std::size_t i = 0; i < av2.rows(); ++i)
                for (std::size_t j = 0; j < bv2.cols(); ++j) {
                    S gij = g.at(i, j);
                    for (std::size_t k = 0; k < av2.cols(); ++k) {
                        ga.at(i, k) += gij * bv2.at(k, j);
                        gb.at(k, j) += av2.at(i, k) * gij;
                    }
                }
            t.accumulate(a, ga);
            t.accumulate(b, gb);
        });
    }

    /// C = A * B^T.
    Var matmul_nt(Var a, Var b) {
        const auto &av = value(a), &bv = value(b);
        require_rank2_pair(av, bv, "matmul_nt");
        if (av.cols() != bv.cols()) throw std::invalid_argument("matmul_nt: inner dims");
        TensorT<S> out = TensorT<S>::zeros(av.rows(), bv.rows());
        for (std::size_t i = 0; i < av.rows(); ++i)
            for (std::size_t j = 0; j < bv.rows(); ++j) {
                S acc = S(0);
                for (std::size_t k = 0; k < av.cols(); ++k)
                    acc += av.at(i, k) * bv.at(j, k);
                out.at(i, j) = acc;
            }
        return push(std::move(out), {a, b}, [a, b](TapeT& t) {
            const auto& g = t.out_grad();
            const auto &av2 = t.value(a), &bv2 = t.value(b);
            // dA = g * B ; dB = g^T * A
            TensorT<S> ga = TensorT<S>::zeros(av2.rows(), av2.cols());
            TensorT<S> gb = TensorT<S>::zeros(bv2.rows(), bv2.cols());
            for (std::size_t i = 0; i < av2.rows(); ++i)
                for (std::size_t j = 0; j < bv2.rows(); ++j) {
                    S gij = g.at(i, j);
                    for (std::size_t k = 0; k < av2.cols(); ++k) {
                        ga.at(i, k) += gij * bv2.at(j, k);
                        gb.at(j, k) += gij * av2.at(i, k);
                    }
                }
            t.accumulate(a, ga);
            t.accumulate(b, gb);
        });
    }

    /// C = A^T * B.
    Var matmul_tn(Var a, Var b) {
        const auto &av = value(a), &bv = value(b);
        require_rank2_pair(av, bv, "matmul_tn");
        if (av.rows() != bv.rows()) throw std::invalid_argument("matmul_tn: inner dims");
        TensorT<S> out = TensorT<S>::zeros(av.cols(), bv.cols());
        for (std::size_t k = 0; k < av.rows(); ++k)
            for (std::size_t i = 0; i < av.cols(); ++i) {
                S aki = av.at(k, i);
                for (std::size_t j = 0; j < bv.cols(); ++j)
                    out.at(i, j) += aki * bv.at(k, j);
            }
        return push(std::move(out), {a, b}, [a, b](TapeT& t) {
            const auto& g = t.out_grad();
            const auto &av2 = t.value(a), &bv2 = t.value(b);
            // dA = B * g^T ; dB = A * g
            TensorT<S> ga = TensorT<S>::zeros(av2.rows(), av2.cols());
            TensorT<S> gb = TensorT<S>::zeros(bv2.rows(), bv2.cols());
            for (std::size_t k = 0; k < av2.rows(); ++k)
                for (std::size_t i = 0; i < av2.cols(); ++i)
                    for (std::size_t j = 0; j < bv2.cols(); ++j) {
                        ga.at(k, i) += bv2.at(k, j) * g.at(i, j);
                        gb.at(k, j) += av2.at(k, i) * g.at(i, j);
                    }
            t.accumulate(a, ga);
            t.accumulate(b, gb);
        });
    }

    Var transpose(Var a) {
        const auto& av = value(a);
        detail::require_rank2(av, "transpose");
        TensorT<S> out = TensorT<S>::zeros(av.cols(), av.rows());
        for (std::size_t i = 0; i < av.rows(); ++i)
            for (std::size_t j = 0; j < av.cols(); ++j) out.at(j, i) = av.at(i, j);
        return push(std::move(out), {a}, [a](TapeT& t) {
            const auto& g = t.out_grad();
            TensorT<S> ga = TensorT<S>::zeros(g.cols(), g.rows());
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < g.cols(); ++j) ga.at(j, i) = g.at(i, j);
            t.accumulate(a, ga);
        });
    }

    /// Concatenation along the feature (column) axis.
    Var concat_cols(const std::vector<Var>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
        std::size_t r = value(parts[0]).rows(), c = 0;
        for (Var p : parts) {
            detail::require_rank2(value(p), "concat_cols");
            if (value(p).rows() != r) throw std::invalid_argument("concat_cols: row mismatch");
            c += value(p).cols();
        }
        TensorT<S> out = TensorT<S>::zeros(r, c);
        std::size_t off = 0;
        for (Var p : parts) {
            const auto& pv = value(p);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < pv.cols(); ++j) out.at(i, off + j) = pv.at(i, j);
            off += pv.cols();
        }
        return push(std::move(out), parts, [parts](TapeT& t) {
            const auto& g = t.out_grad();
            std::size_t off2 = 0;
            for (Var p : parts) {
                const auto& pv = t.value(p);
                TensorT<S> gp = TensorT<S>::zeros(pv.rows(), pv.cols());
                for (std::size_t i = 0; i < pv.rows(); ++i)
                    for (std::size_t j = 0; j < pv.cols(); ++j) gp.at(i, j) = g.at(i, off2 + j);
                t.accumulate(p, gp);
                off2 += pv.cols();
            }
        });
    }

    /// Stacks 1xd rows into an nxd matrix.
    Var stack_rows(const std::vector<Var>& rows_in) {
        if (rows_in.empty()) throw std::invalid_argument("stack_rows: empty");
        std::size_t d = value(rows_in[0]).cols();
        for (Var r : rows_in)
            if (value(r).rows() != 1 || value(r).cols() != d)
                throw std::invalid_argument("stack_rows: need 1xd rows of equal width");
        TensorT<S> out = TensorT<S>::zeros(rows_in.size(), d);
        for (std::size_t i = 0; i < rows_in.size(); ++i)
            for (std::size_t j = 0; j < d; ++j) out.at(i, j) = value(rows_in[i]).at(0, j);
        return push(std::move(out), rows_in, [rows_in](TapeT& t) {
            const auto& g = t.out_grad();
            for (std::size_t i = 0; i < rows_in.size(); ++i) {
                TensorT<S> gr = TensorT<S>::zeros(1, g.cols());
                for (std::size_t j = 0; j < g.cols(); ++j) gr.at(0, j) = g.at(i, j);
                t.accumulate(rows_in[i], gr);
            }
        });
    }

    /// One row as a 1xd slice.
    Var row(Var a, std::size_t r) {
        const auto& av = value(a);
        detail::require_rank2(av, "row");
        if (r >= av.rows()) throw std::invalid_argument("row: index out of range");
        TensorT<S> out = TensorT<S>::zeros(1, av.cols());
        for (std::size_t j = 0; j < av.cols(); ++j) out.at(0, j) = av.at(r, j);
        return push(std::move(out), {a}, [a, r](TapeT& t) {
            const auto& g = t.out_grad();
            const auto& av2 = t.value(a);
            TensorT<S> ga = TensorT<S>::zeros(av2.rows(), av2.cols());
            for (std::size_t j = 0; j < av2.cols(); ++j) ga.at(r, j) = g.at(0, j);
            t.accumulate(a, ga);
        });
    }

    /// Sum of a row subset, as 1xd. Duplicate indices count multiply.
    Var sum_selected_rows(Var a, const std::vector<std::size_t>& idx) {
        const auto& av = value(a);
        detail::require_rank2(av, "sum_selected_rows");
        if (idx.empty()) throw std::invalid_argument("sum_selected_rows: empty selection");
        for (std::size_t r : idx)
            if (r >= av.rows()) throw std::invalid_argument("sum_selected_rows: index out of range");
        TensorT<S> out = TensorT<S>::zeros(1, av.cols());
        for (std::size_t r : idx)
            for (std::size_t j = 0; j < av.cols(); ++j) out.at(0, j) += av.at(r, j);
        return push(std::move(out), {a}, [a, idx](TapeT& t) {
            const auto& g = t.out_grad();
            const auto& av2 = t.value(a);
            TensorT<S> ga = TensorT<S>::zeros(av2.rows(), av2.cols());
            for (std::size_t r : idx)
                for (std::size_t j = 0; j < av2.cols(); ++j) ga.at(r, j) += g.at(0, j);
            t.accumulate(a, ga);
        });
    }

    /// Rectangular block slice.
    Var block(Var a, std::size_t r0, std::size_t c0, std::size_t nr, std::size_t nc) {
        const auto& av = value(a);
        detail::require_rank2(av, "block");
        if (r0 + nr > av.rows() || c0 + nc > av.cols())
            throw std::invalid_argument("block: out of range");
        TensorT<S> out = TensorT<S>::zeros(nr, nc);
        for (std::size_t i = 0; i < nr; ++i)
            for (std::size_t j = 0; j < nc; ++j) out.at(i, j) = av.at(r0 + i, c0 + j);
        return push(std::move(out), {a}, [a, r0, c0, nr, nc](TapeT& t) {
            const auto& g = t.out_grad();
            const auto& av2 = t.value(a);
            TensorT<S> ga = TensorT<S>::zeros(av2.rows(), av2.cols());
            for (std::size_t i = 0; i < nr; ++i)
                for (std::size_t j = 0; j < nc; ++j) ga.at(r0 + i, c0 + j) = g.at(i, j);
            t.accumulate(a, ga);
        });
    }

    /// Single entry as 1x1.
    Var pick(Var a, std::size_t r, std::size_t c) { return block(a, r, c, 1, 1); }

    /// Sum of picked entries as 1x1. Duplicates count multiply.
    Var sum_picks(Var a, const std::vector<std::pair<std::size_t, std::size_t>>& cells) {
        const auto& av = value(a);
        detail::require_rank2(av, "sum_picks");
        S acc = S(0);
        for (auto [r, c] : cells) {
            if (r >= av.rows() || c >= av.cols())
                throw std::invalid_argument("sum_picks: out of range");
            acc += av.at(r, c);
        }
        return push(TensorT<S>::scalar(acc), {a}, [a, cells](TapeT& t) {
            S g = t.out_grad().data[0];
            const auto& av2 = t.value(a);
            TensorT<S> ga = TensorT<S>::zeros(av2.rows(), av2.cols());
            for (auto [r, c] : cells) ga.at(r, c) += g;
            t.accumulate(a, ga);
        });
    }

    Var softmax_rows(Var a) { return softmax_impl(a, Axis::rows); }
    Var softmax_cols(Var a) { return softmax_impl(a, Axis::cols); }

    /// logsumexp of a 1xn or nx1 vector, as 1x1.
    Var logsumexp_vec(Var a) {
        const auto& av = value(a);
        detail::require_rank2(av, "logsumexp_vec");
        if (av.rows() != 1 && av.cols() != 1)
            throw std::invalid_argument("logsumexp_vec: vector required");
        if (av.numel() == 0) throw std::invalid_argument("logsumexp_vec: empty");
        S out = logsumexp(av.data);
        return push(TensorT<S>::scalar(out), {a}, [a, out](TapeT& t) {
            S g = t.out_grad().data[0];
            const auto& av2 = t.value(a);
            TensorT<S> ga = TensorT<S>::zeros(av2.rows(), av2.cols());
            if (std::isfinite(static_cast<double>(out))) {
                for (std::size_t i = 0; i < av2.data.size(); ++i)
                    ga.data[i] = g * std::exp(av2.data[i] - out);
            }
            t.accumulate(a, ga);
        });
    }

    /// Per-column logsumexp over rows: nxm -> 1xm.
    Var logsumexp_cols(Var a) {
        const auto& av = value(a);
        detail::require_rank2(av, "logsumexp_cols");
        TensorT<S> out = TensorT<S>::zeros(1, av.cols());
        for (std::size_t j = 0; j < av.cols(); ++j) {
            std::vector<S> col(av.rows());
            for (std::size_t i = 0; i < av.rows(); ++i) col[i] = av.at(i, j);
            out.at(0, j) = logsumexp(col);
        }
        TensorT<S> saved = out;
        return push(std::move(out), {a}, [a, saved](TapeT& t) {
            const auto& g = t.out_grad();
            const auto& av2 = t.value(a);
            TensorT<S> ga = TensorT<S>::zeros(av2.rows(), av2.cols());
            for (std::size_t j = 0; j < av2.cols(); ++j) {
                if (!std::isfinite(static_cast<double>(saved.at(0, j)))) continue;
                for (std::size_t i = 0; i < av2.rows(); ++i)
                    ga.at(i, j) = g.at(0, j) * std::exp(av2.at(i, j) - saved.at(0, j));
            }
            t.accumulate(a, ga);
        });
    }

    /// Adds v[j] to every row of m (v is 1 x cols).
    Var add_rowvec(Var m, Var v) {
        const auto &mv = value(m), &vv = value(v);
        if (vv.rows() != 1 || vv.cols() != mv.cols())
            throw std::invalid_argument("add_rowvec: shape mismatch");
        TensorT<S> out = mv;
        for (std::size_t i = 0; i < mv.rows(); ++i)
            for (std::size_t j = 0; j < mv.cols(); ++j) out.at(i, j) += vv.at(0, j);
        return push(std::move(out), {m, v}, [m, v](TapeT& t) {
            const auto& g = t.out_grad();
            t.accumulate(m, g);
            TensorT<S> gv = TensorT<S>::zeros(1, g.cols());
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < g.cols(); ++j) gv.at(0, j) += g.at(i, j);
            t.accumulate(v, gv);
        });
    }

    /// Adds v[i] to every column of m (v is 1 x rows).
    Var add_colvec(Var m, Var v) {
        const auto &mv = value(m), &vv = value(v);
        if (vv.rows() != 1 || vv.cols() != mv.rows())
            throw std::invalid_argument("add_colvec: shape mismatch");
        TensorT<S> out = mv;
        for (std::size_t i = 0; i < mv.rows(); ++i)
            for (std::size_t j = 0; j < mv.cols(); ++j) out.at(i, j) += vv.at(0, i);
        return push(std::move(out), {m, v}, [m, v](TapeT& t) {
            const auto& g = t.out_grad();
            t.accumulate(m, g);
            TensorT<S> gv = TensorT<S>::zeros(1, g.rows());
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < g.cols(); ++j) gv.at(0, i) += g.at(i, j);
            t.accumulate(v, gv);
        });
    }

    /// Column-wise max over rows: nxd -> 1xd. Gradient routes to the first
    /// maximal row per column.
    Var max_pool_cols(Var a) {
        const auto& av = value(a);
        detail::require_rank2(av, "max_pool_cols");
        if (av.rows() == 0) throw std::invalid_argument("max_pool_cols: empty");
        TensorT<S> out = TensorT<S>::zeros(1, av.cols());
        std::vector<std::size_t> arg(av.cols(), 0);
        for (std::size_t j = 0; j < av.cols(); ++j) {
            S best = av.at(0, j);
            for (std::size_t i = 1; i < av.rows(); ++i)
                if (av.at(i, j) > best) {
                    best = av.at(i, j);
                    arg[j] = i;
                }
            out.at(0, j) = best;
        }
        return push(std::move(out), {a}, [a, arg](TapeT& t) {
            const auto& g = t.out_grad();
            const auto& av2 = t.value(a);
            TensorT<S> ga = TensorT<S>::zeros(av2.rows(), av2.cols());
            for (std::size_t j = 0; j < av2.cols(); ++j) ga.at(arg[j], j) = g.at(0, j);
            t.accumulate(a, ga);
        });
    }

    /// Column-wise mean over rows: nxd -> 1xd.
    Var mean_pool_cols(Var a) {
        const auto& av = value(a);
        detail::require_rank2(av, "mean_pool_cols");
        if (av.rows() == 0) throw std::invalid_argument("mean_pool_cols: empty");
        TensorT<S> out = TensorT<S>::zeros(1, av.cols());
        for (std::size_t j = 0; j < av.cols(); ++j) {
            S acc = S(0);
            for (std::size_t i = 0; i < av.rows(); ++i) acc += av.at(i, j);
            out.at(0, j) = acc / S(av.rows());
        }
        return push(std::move(out), {a}, [a](TapeT& t) {
            const auto& g = t.out_grad();
            const auto& av2 = t.value(a);
            S inv = S(1) / S(av2.rows());
            TensorT<S> ga = TensorT<S>::zeros(av2.rows(), av2.cols());
            for (std::size_t i = 0; i < av2.rows(); ++i)
                for (std::size_t j = 0; j < av2.cols(); ++j) ga.at(i, j) = g.at(0, j) * inv;
            t.accumulate(a, ga);
        });
    }

    /// C[i][j] = -||A_i - B_j||^2 for A nxd, B mxd. CRF emission kernel.
    Var pairwise_neg_sqdist(Var a, Var b) {
        const auto &av = value(a), &bv = value(b);
        require_rank2_pair(av, bv, "pairwise_neg_sqdist");
        if (av.cols() != bv.cols())
            throw std::invalid_argument("pairwise_neg_sqdist: feature width mismatch");
        TensorT<S> out = TensorT<S>::zeros(av.rows(), bv.rows());
        for (std::size_t i = 0; i < av.rows(); ++i)
            for (std::size_t j = 0; j < bv.rows(); ++j) {
                S acc = S(0);
                for (std::size_t k = 0; k < av.cols(); ++k) {
                    S d = av.at(i, k) - bv.at(j, k);
                    acc += d * d;
                }
                out.at(i, j) = -acc;
            }
        return push(std::move(out), {a, b}, [a, b](TapeT& t) {
            const auto& g = t.out_grad();
            const auto &av2 = t.value(a), &bv2 = t.value(b);
            TensorT<S> ga = TensorT<S>::zeros(av2.rows(), av2.cols());
            TensorT<S> gb = TensorT<S>::zeros(bv2.rows(), bv2.cols());
            for (std::size_t i = 0; i < av2.rows(); ++i)
                for (std::size_t j = 0; j < bv2.rows(); ++j) {
                    S gij = g.at(i, j);
                    if (gij == S(0)) continue;
                    for (std::size_t k = 0; k < av2.cols(); ++k) {
                        S d = av2.at(i, k) - bv2.at(j, k);
                        ga.at(i, k) += gij * S(-2) * d;
                        gb.at(j, k) += gij * S(2) * d;
                    }
                }
            t.accumulate(a, ga);
            t.accumulate(b, gb);
        });
    }

    /// ||x - y||^2 of two 1xn rows, as 1x1.
    Var sq_euclidean_rows(Var x, Var y) {
        const auto &xv = value(x), &yv = value(y);
        if (xv.rows() != 1 || yv.rows() != 1 || xv.cols() != yv.cols())
            throw std::invalid_argument("sq_euclidean_rows: 1xn rows of equal length required");
        Var d = neg(pairwise_neg_sqdist(x, y));
        return d;
    }

    /// Gathers table rows by id: len(ids) x d. Backward scatter-adds, so
    /// repeated ids accumulate.
    Var embedding_rows(Var table, const std::vector<std::size_t>& ids) {
        const auto& tv = value(table);
        detail::require_rank2(tv, "embedding_rows");
        if (ids.empty()) throw std::invalid_argument("embedding_rows: empty id list");
        for (std::size_t id : ids)
            if (id >= tv.rows()) throw std::invalid_argument("embedding_rows: id out of range");
        TensorT<S> out = TensorT<S>::zeros(ids.size(), tv.cols());
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::size_t j = 0; j < tv.cols(); ++j) out.at(i, j) = tv.at(ids[i], j);
        return push(std::move(out), {table}, [table, ids](TapeT& t) {
            const auto& g = t.out_grad();
            const auto& tv2 = t.value(table);
            TensorT<S> gt = TensorT<S>::zeros(tv2.rows(), tv2.cols());
            for (std::size_t i = 0; i < ids.size(); ++i)
                for (std::size_t j = 0; j < tv2.cols(); ++j) gt.at(ids[i], j) += g.at(i, j);
            t.accumulate(table, gt);
        });
    }

    /// Mean of 1x1 scalars, as 1x1.
    Var mean_of(const std::vector<Var>& scalars) {
        if (scalars.empty()) throw std::invalid_argument("mean_of: empty");
        S acc = S(0);
        for (Var v : scalars) {
            if (value(v).numel() != 1) throw std::invalid_argument("mean_of: non-scalar");
            acc += value(v).data[0];
        }
        acc /= S(scalars.size());
        return push(TensorT<S>::scalar(acc), scalars, [scalars](TapeT& t) {
            S g = t.out_grad().data[0] / S(scalars.size());
            for (Var v : scalars) t.accumulate(v, TensorT<S>::scalar(g));
        });
    }

private:
    struct Node {
        TensorT<S> value;
        TensorT<S> grad;
        std::function<void(TapeT&)> backward;
    };

    std::vector<Node> nodes_;
    bool ran_backward_ = false;
    std::size_t current_ = 0;  // node whose backward closure is running

    const Node& node(Var v) const {
        if (!v.valid() || v.id >= nodes_.size()) throw std::invalid_argument("tape: bad Var");
        return nodes_[v.id];
    }

    Var push(TensorT<S> value, std::vector<Var> /*parents kept via capture*/,
             std::function<void(TapeT&)> bw) {
        if (ran_backward_) throw std::logic_error("tape: op recorded after backward()");
        detail::require_rank2(value, "tape op");
        Node n;
        n.value = std::move(value);
        n.backward = std::move(bw);
        nodes_.push_back(std::move(n));
        return Var{nodes_.size() - 1};
    }

    // Helpers available to backward closures.
    const TensorT<S>& out_grad() const { return nodes_[current_].grad; }

    void accumulate(Var v, const TensorT<S>& g) {
        auto& dst = nodes_[v.id].grad;
        for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += g.data[i];
    }

    Var softmax_impl(Var a, Axis axis) {
        const auto& av = value(a);
        detail::require_rank2(av, "softmax");
        TensorT<S> out = softmax_axis(av, axis);
        TensorT<S> saved = out;
        return push(std::move(out), {a}, [a, saved, axis](TapeT& t) {
            const auto& g = t.out_grad();
            TensorT<S> ga = TensorT<S>::zeros(saved.rows(), saved.cols());
            if (axis == Axis::rows) {
                for (std::size_t i = 0; i < saved.rows(); ++i) {
                    S dot = S(0);
                    for (std::size_t j = 0; j < saved.cols(); ++j)
                        dot += g.at(i, j) * saved.at(i, j);
                    for (std::size_t j = 0; j < saved.cols(); ++j)
                        ga.at(i, j) = (g.at(i, j) - dot) * saved.at(i, j);
                }
            } else {
                for (std::size_t j = 0; j < saved.cols(); ++j) {
                    S dot = S(0);
                    for (std::size_t i = 0; i < saved.rows(); ++i)
                        dot += g.at(i, j) * saved.at(i, j);
                    for (std::size_t i = 0; i < saved.rows(); ++i)
                        ga.at(i, j) = (g.at(i, j) - dot) * saved.at(i, j);
                }
            }
            t.accumulate(a, ga);
        });
    }

    static void require_same_shape(const TensorT<S>& a, const TensorT<S>& b, const char* op) {
        if (!a.same_shape(b)) throw std::invalid_argument(std::string(op) + ": shape mismatch");
    }
    static void require_rank2_pair(const TensorT<S>& a, const TensorT<S>& b, const char* op) {
        detail::require_rank2(a, op);
        detail::require_rank2(b, op);
    }
};

using Tape = TapeT<double>;

}  // namespace mgfte
