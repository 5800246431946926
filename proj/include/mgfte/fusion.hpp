#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "mgfte/corpus.hpp"
#include "mgfte/rng.hpp"
#include "mgfte/tape.hpp"

namespace mgfte {

/// Cross-attention fusion weight, 4d x d. One matrix serves both the
/// query-side and prototype-side recombination; a second matrix is kept
/// only when unshared mode is configured.
template <typename S>
struct FusionParamsT {
    TensorT<S> w;        // 4d x d
    TensorT<S> w_query;  // 4d x d, only when unshared
    bool unshared = false;

    static FusionParamsT init(std::size_t d, std::uint64_t seed, bool unshared = false) {
        FusionParamsT p;
        p.unshared = unshared;
        double s = 1.0 / std::sqrt(static_cast<double>(d));
        auto fill = [&](TensorT<S>& t, std::uint64_t stream) {
            t = TensorT<S>::zeros(4 * d, d);
            Rng rng(derive_seed(seed, stream));
            for (auto& v : t.data) v = static_cast<S>(rng.uniform(-s, s));
        };
        fill(p.w, 10);
        if (unshared) fill(p.w_query, 11);
        return p;
    }
};

template <typename S>
struct FusionVars {
    Var w;
    Var w_query;  // == w when shared
    static FusionVars bind(TapeT<S>& tape, const FusionParamsT<S>& p) {
        Var w = tape.leaf(p.w);
        return {w, p.unshared ? tape.leaf(p.w_query) : w};
    }
};

template <typename S>
struct FusedPair {
    Var q_hat;  // T_q x d
    Var p_hat;  // m x d
    Var alpha;  // T_q x m raw similarity, kept for dumps
};

/// Proto-level fusion: alpha = Q P^T; each token attends over the m
/// prototype rows (row softmax) and each prototype over the T_q tokens
/// (column softmax); both sides are then recombined through
/// relu([X; X'; |X-X'|; X o X'] W). Works for any row count m on the
/// prototype side, which the support-token ablation relies on.
template <typename S>
FusedPair<S> fuse(TapeT<S>& tape, Var q, Var p, const FusionVars<S>& params) {
    const auto &qv = tape.value(q), &pv = tape.value(p);
    if (!qv.rank2() || !pv.rank2() || qv.cols() != pv.cols())
        throw std::invalid_argument("fuse: Q and P must be rank-2 with equal width");
    Var alpha = tape.matmul_nt(q, p);
    Var q_mix = tape.matmul(tape.softmax_rows(alpha), p);        // T_q x d
    Var p_mix = tape.matmul_tn(tape.softmax_cols(alpha), q);     // m x d

    auto recombine = [&](Var x, Var mix, Var w) {
        return tape.relu(tape.matmul(
            tape.concat_cols({x, mix, tape.absdiff(x, mix), tape.hadamard(x, mix)}), w));
    };
    return {recombine(q, q_mix, params.w_query), recombine(p, p_mix, params.w), alpha};
}

/// CSV dump of the raw similarity matrix and both attention normalizations
/// for one (query, relation) pair. Three sections, each headed by the tag
/// names, one row per query token, 6 significant digits.
template <typename S>
std::string dump_fusion_matrix(const TensorT<S>& alpha,
                               const std::vector<std::string>& tokens,
                               const std::vector<std::string>& col_names) {
    if (alpha.rows() != tokens.size() || alpha.cols() != col_names.size())
        throw std::invalid_argument("dump_fusion_matrix: label shape mismatch");
    TensorT<S> row_sm = softmax_axis(alpha, Axis::rows);
    TensorT<S> col_sm = softmax_axis(alpha, Axis::cols);
    std::string out;
    auto emit = [&](const char* title, const TensorT<S>& m) {
        out += "# ";
        out += title;
        out += "\ntoken";
        for (const auto& name : col_names) {
            out += ",";
            out += name;
        }
        out += "\n";
        for (std::size_t t = 0; t < m.rows(); ++t) {
            out += tokens[t];
            for (std::size_t j = 0; j < m.cols(); ++j) {
                char buf[32];
                std::snprintf(buf, sizeof(buf), ",%.6g", static_cast<double>(m.at(t, j)));
                out += buf;
            }
            out += "\n";
        }
    };
    emit("alpha", alpha);
    emit("row_softmax", row_sm);
    emit("col_softmax", col_sm);
    return out;
}

template <typename S>
std::string dump_fusion_matrix(const TensorT<S>& alpha,
                               const std::vector<std::string>& tokens) {
    std::vector<std::string> tags(kTagNames.begin(), kTagNames.end());
    return dump_fusion_matrix(alpha, tokens, tags);
}

}  // namespace mgfte
