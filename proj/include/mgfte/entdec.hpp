#pragma once

#include <limits>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mgfte/corpus.hpp"
#include "mgfte/tape.hpp"

namespace mgfte {

inline constexpr std::size_t kCrfStates = 7;  // 5 tags + START + STOP
inline constexpr std::size_t kCrfStart = 5;
inline constexpr std::size_t kCrfStop = 6;

/// Learned 7x7 transition table over the augmented state set. Only the
/// structurally legal region is ever read by scoring: tag->tag, START->tag
/// and tag->STOP. transition_score() is the masked view: entries into START
/// or out of STOP are -inf; the stored tensor itself stays finite so
/// checkpoints round-trip exactly.
template <typename S>
struct CrfParamsT {
    TensorT<S> transitions;  // 7 x 7, zero-initialized

    static CrfParamsT init() { return {TensorT<S>::zeros(kCrfStates, kCrfStates)}; }

    S transition_score(std::size_t from, std::size_t to) const {
        if (to == kCrfStart || from == kCrfStop)
            return -std::numeric_limits<S>::infinity();
        return transitions.at(from, to);
    }
};

template <typename S>
struct CrfVars {
    Var transitions;
    static CrfVars bind(TapeT<S>& tape, const CrfParamsT<S>& p) {
        return {tape.leaf(p.transitions)};
    }
};

/// Q_bar = [Q; Q_hat], P_bar = [P; P_hat] along the feature axis; keeps the
/// pre-fusion features so entity identity is not washed out by fusion.
template <typename S>
std::pair<Var, Var> combined_reps(TapeT<S>& tape, Var q, Var q_hat, Var p, Var p_hat) {
    return {tape.concat_cols({q, q_hat}), tape.concat_cols({p, p_hat})};
}

/// Emission (t, l) = -||Q_bar[t] - P_bar[l]||^2, a T x 5 matrix of
/// nonpositive scores.
template <typename S>
Var emission_scores(TapeT<S>& tape, Var q_bar, Var p_bar) {
    return tape.pairwise_neg_sqdist(q_bar, p_bar);
}

/// Total path score of one tag sequence: emissions along the path plus
/// START->y_0, pairwise, and y_last->STOP transitions.
template <typename S>
Var crf_gold_score(TapeT<S>& tape, Var emissions, const CrfVars<S>& crf,
                   const TagSequence& gold) {
    const auto& ev = tape.value(emissions);
    if (gold.size() != ev.rows())
        throw std::invalid_argument("crf: gold tag length mismatch");
    std::vector<std::pair<std::size_t, std::size_t>> emission_cells;
    for (std::size_t t = 0; t < gold.size(); ++t)
        emission_cells.emplace_back(t, static_cast<std::size_t>(gold[t]));
    std::vector<std::pair<std::size_t, std::size_t>> transition_cells;
    transition_cells.emplace_back(kCrfStart, static_cast<std::size_t>(gold[0]));
    for (std::size_t t = 0; t + 1 < gold.size(); ++t)
        transition_cells.emplace_back(static_cast<std::size_t>(gold[t]),
                                      static_cast<std::size_t>(gold[t + 1]));
    transition_cells.emplace_back(static_cast<std::size_t>(gold.back()), kCrfStop);
    return tape.add(tape.sum_picks(emissions, emission_cells),
                    tape.sum_picks(crf.transitions, transition_cells));
}

/// log-domain forward algorithm over all 5^T sequences.
template <typename S>
Var crf_log_partition(TapeT<S>& tape, Var emissions, const CrfVars<S>& crf) {
    const auto& ev = tape.value(emissions);
    if (ev.rows() < 1 || ev.cols() != kNumTags)
        throw std::invalid_argument("crf: emissions must be T x 5 with T >= 1");
    Var core = tape.block(crf.transitions, 0, 0, kNumTags, kNumTags);
    Var start = tape.block(crf.transitions, kCrfStart, 0, 1, kNumTags);
    Var stop = tape.transpose(tape.block(crf.transitions, 0, kCrfStop, kNumTags, 1));

    Var alpha = tape.add(tape.row(emissions, 0), start);
    for (std::size_t t = 1; t < ev.rows(); ++t) {
        // M[i][j] = alpha[i] + core[i][j] + emissions[t][j]
        Var m = tape.add_rowvec(tape.add_colvec(core, alpha), tape.row(emissions, t));
        alpha = tape.logsumexp_cols(m);
    }
    return tape.logsumexp_vec(tape.add(alpha, stop));
}

/// CRF negative log-likelihood of the gold path; nonnegative.
template <typename S>
Var crf_nll(TapeT<S>& tape, Var emissions, const CrfVars<S>& crf, const TagSequence& gold) {
    return tape.sub(crf_log_partition(tape, emissions, crf),
                    crf_gold_score(tape, emissions, crf, gold));
}

/// Highest-scoring tag sequence. Exact score ties resolve to the
/// lexicographically smallest sequence under the tag order BS,IS,BO,IO,O,
/// which a suffix DP plus greedy forward reconstruction yields directly.
template <typename S>
TagSequence viterbi_decode(const TensorT<S>& emissions, const CrfParamsT<S>& crf) {
    if (!emissions.rank2() || emissions.rows() < 1 || emissions.cols() != kNumTags)
        throw std::invalid_argument("viterbi: emissions must be T x 5 with T >= 1");
    const std::size_t T = emissions.rows();
    // delta[t][j]: best score of a path suffix starting at t in state j,
    // including emissions[t][j] and the final ->STOP transition.
    std::vector<std::vector<S>> delta(T, std::vector<S>(kNumTags));
    for (std::size_t j = 0; j < kNumTags; ++j)
        delta[T - 1][j] = emissions.at(T - 1, j) + crf.transitions.at(j, kCrfStop);
    for (std::size_t t = T - 1; t-- > 0;) {
        for (std::size_t j = 0; j < kNumTags; ++j) {
            S best = -std::numeric_limits<S>::infinity();
            for (std::size_t k = 0; k < kNumTags; ++k)
                best = std::max(best, crf.transitions.at(j, k) + delta[t + 1][k]);
            delta[t][j] = emissions.at(t, j) + best;
        }
    }
    TagSequence path(T, Tag::O);
    S best = -std::numeric_limits<S>::infinity();
    std::size_t state = 0;
    for (std::size_t j = 0; j < kNumTags; ++j) {
        S cand = crf.transitions.at(kCrfStart, j) + delta[0][j];
        if (cand > best) {
            best = cand;
            state = j;
        }
    }
    path[0] = static_cast<Tag>(state);
    for (std::size_t t = 1; t < T; ++t) {
        S target = -std::numeric_limits<S>::infinity();
        std::size_t next = 0;
        for (std::size_t k = 0; k < kNumTags; ++k) {
            S cand = crf.transitions.at(state, k) + delta[t][k];
            if (cand > target) {
                target = cand;
                next = k;
            }
        }
        state = next;
        path[t] = static_cast<Tag>(state);
    }
    return path;
}

/// First subject span and first object span recovered from a tag sequence.
/// Lenient mode treats a dangling IS/IO as an opening BS/BO; strict mode
/// skips it. Predicted sequences may be malformed, gold ones never are.
inline std::pair<std::optional<Span>, std::optional<Span>> tags_to_spans(
    const TagSequence& tags, bool lenient = true) {
    std::optional<Span> subject, object;
    std::optional<Span> open_subj, open_obj;
    auto close_subj = [&] {
        if (open_subj && !subject) subject = open_subj;
        open_subj.reset();
    };
    auto close_obj = [&] {
        if (open_obj && !object) object = open_obj;
        open_obj.reset();
    };
    for (std::size_t t = 0; t < tags.size(); ++t) {
        switch (tags[t]) {
            case Tag::BS:
                close_subj();
                close_obj();
                open_subj = Span{t, t + 1};
                break;
            case Tag::IS:
                close_obj();
                if (open_subj)
                    open_subj->end = t + 1;
                else if (lenient)
                    open_subj = Span{t, t + 1};
                break;
            case Tag::BO:
                close_subj();
                close_obj();
                open_obj = Span{t, t + 1};
                break;
            case Tag::IO:
                close_subj();
                if (open_obj)
                    open_obj->end = t + 1;
                else if (lenient)
                    open_obj = Span{t, t + 1};
                break;
            case Tag::O:
                close_subj();
                close_obj();
                break;
        }
    }
    close_subj();
    close_obj();
    return {subject, object};
}

}  // namespace mgfte
