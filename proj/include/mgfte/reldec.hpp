#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "mgfte/fusion.hpp"
#include "mgfte/prototype.hpp"
#include "mgfte/rng.hpp"
#include "mgfte/tape.hpp"

namespace mgfte {

/// Relation matching MLP: W_r (4d x d) and V_r (d x 1).
template <typename S>
struct RelDecoderParamsT {
    TensorT<S> w_r;
    TensorT<S> v_r;

    static RelDecoderParamsT init(std::size_t d, std::uint64_t seed) {
        RelDecoderParamsT p;
        double s = 1.0 / std::sqrt(static_cast<double>(d));
        p.w_r = TensorT<S>::zeros(4 * d, d);
        Rng r1(derive_seed(seed, 20));
        for (auto& v : p.w_r.data) v = static_cast<S>(r1.uniform(-s, s));
        p.v_r = TensorT<S>::zeros(d, 1);
        Rng r2(derive_seed(seed, 21));
        for (auto& v : p.v_r.data) v = static_cast<S>(r2.uniform(-s, s));
        return p;
    }
};

template <typename S>
struct RelDecoderVars {
    Var w_r, v_r;
    static RelDecoderVars bind(TapeT<S>& tape, const RelDecoderParamsT<S>& p) {
        return {tape.leaf(p.w_r), tape.leaf(p.v_r)};
    }
};

/// Global semantic pooling: [column max; column mean], 1 x 2d.
template <typename S>
Var pool_global(TapeT<S>& tape, Var x) {
    return tape.concat_cols({tape.max_pool_cols(x), tape.mean_pool_cols(x)});
}

/// ms(q, p) = V_r^T relu([q; p] W_r), a 1x1 score.
template <typename S>
Var relation_matching_score(TapeT<S>& tape, Var q_tilde, Var p_tilde,
                            const RelDecoderVars<S>& params) {
    const auto &qv = tape.value(q_tilde), &pv = tape.value(p_tilde);
    if (qv.rows() != 1 || pv.rows() != 1)
        throw std::invalid_argument("relation_matching_score: pooled rows required");
    Var joint = tape.concat_cols({q_tilde, p_tilde});
    if (tape.value(joint).cols() != tape.value(params.w_r).rows())
        throw std::invalid_argument("relation_matching_score: dimension mismatch with W_r");
    return tape.matmul(tape.relu(tape.matmul(joint, params.w_r)), params.v_r);
}

template <typename S>
struct RelationScoresT {
    Var scores;              // 1 x N
    std::size_t best = 0;    // argmax, ties to lowest index
};

/// Scores the query against each relation's fused prototypes and returns the
/// argmax plus the full score vector.
template <typename S>
RelationScoresT<S> classify_relation(TapeT<S>& tape, Var q, const PrototypeSetT<S>& prototypes,
                                     const FusionVars<S>& fusion_params,
                                     const RelDecoderVars<S>& rel_params,
                                     bool disable_pfm = false) {
    if (prototypes.n_way() == 0)
        throw std::invalid_argument("classify_relation: empty prototype set");
    std::vector<Var> per_relation;
    for (std::size_t i = 0; i < prototypes.n_way(); ++i) {
        Var q_side = q, p_side = prototypes.proto[i];
        if (!disable_pfm) {
            FusedPair<S> fused = fuse(tape, q, prototypes.proto[i], fusion_params);
            q_side = fused.q_hat;
            p_side = fused.p_hat;
        }
        per_relation.push_back(relation_matching_score(
            tape, pool_global(tape, q_side), pool_global(tape, p_side), rel_params));
    }
    Var scores = tape.concat_cols(per_relation);
    const auto& sv = tape.value(scores);
    std::size_t best = 0;
    for (std::size_t i = 1; i < sv.cols(); ++i)
        if (sv.at(0, i) > sv.at(0, best)) best = i;
    return {scores, best};
}

/// Variant used when entity guidance is ablated: the prototype side of the
/// fusion is each raw support sentence's token matrix; pooled pairs are
/// averaged over the K shots before scoring.
template <typename S>
RelationScoresT<S> classify_relation_support_tokens(
    TapeT<S>& tape, Var q, const std::vector<std::vector<Var>>& encoded_support,
    const FusionVars<S>& fusion_params, const RelDecoderVars<S>& rel_params) {
    if (encoded_support.empty())
        throw std::invalid_argument("classify_relation: empty support");
    std::vector<Var> per_relation;
    for (const auto& sentences : encoded_support) {
        std::vector<Var> q_pools, s_pools;
        for (Var s : sentences) {
            FusedPair<S> fused = fuse(tape, q, s, fusion_params);
            q_pools.push_back(pool_global(tape, fused.q_hat));
            s_pools.push_back(pool_global(tape, fused.p_hat));
        }
        auto average = [&](const std::vector<Var>& parts) {
            Var acc = parts[0];
            for (std::size_t k = 1; k < parts.size(); ++k) acc = tape.add(acc, parts[k]);
            return tape.scale(acc, S(1) / static_cast<S>(parts.size()));
        };
        per_relation.push_back(relation_matching_score(tape, average(q_pools),
                                                       average(s_pools), rel_params));
    }
    Var scores = tape.concat_cols(per_relation);
    const auto& sv = tape.value(scores);
    std::size_t best = 0;
    for (std::size_t i = 1; i < sv.cols(); ++i)
        if (sv.at(0, i) > sv.at(0, best)) best = i;
    return {scores, best};
}

/// Cross-entropy over the N matching scores: -log softmax(scores)[gold].
template <typename S>
Var relation_loss(TapeT<S>& tape, Var scores, std::size_t gold_index) {
    const auto& sv = tape.value(scores);
    if (sv.rows() != 1) throw std::invalid_argument("relation_loss: score row required");
    if (gold_index >= sv.cols())
        throw std::invalid_argument("relation_loss: gold index out of range");
    return tape.neg(tape.sub(tape.pick(scores, 0, gold_index), tape.logsumexp_vec(scores)));
}

}  // namespace mgfte
