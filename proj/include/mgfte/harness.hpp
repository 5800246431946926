#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mgfte/corpus.hpp"
#include "mgfte/entdec.hpp"
#include "mgfte/metrics.hpp"
#include "mgfte/model.hpp"
#include "mgfte/prototype.hpp"
#include "mgfte/reldec.hpp"
#include "mgfte/vocab.hpp"

namespace mgfte {

struct TrainConfig {
    std::size_t n_way = 5;
    std::size_t k_shot = 5;
    std::size_t q_per_relation = 3;
    std::size_t episodes = 500;
    double learning_rate = 1e-3;
    double lambda_ent = 1.0;
    std::uint64_t seed = 42;
    std::string precision = "f64";  // f64 | f32
    bool disable_pfm = false;
    bool disable_rge = false;
    bool disable_egr = false;
    bool proto_k_norm = false;      // literal divide-by-K prototype normalization
    bool fusion_unshared = false;
    std::size_t d = 64;
    std::size_t max_len = 64;
    std::string train_corpus;
    std::string eval_corpus;
    std::string vocab_path;
    bool cross_domain = false;

    void validate() const {
        if (n_way == 0 || k_shot == 0 || q_per_relation == 0)
            throw std::invalid_argument("config: n_way, k_shot, q_per_relation must be positive");
        if (lambda_ent < 0) throw std::invalid_argument("config: lambda_ent must be >= 0");
        if (d == 0 || max_len == 0)
            throw std::invalid_argument("config: d and max_len must be positive");
        if (precision != "f64" && precision != "f32")
            throw std::invalid_argument("config: precision must be f64 or f32");
    }
};

// Distinct sampling streams; training never replays evaluation episodes.
inline constexpr std::uint64_t kTrainStream = 0;
inline constexpr std::uint64_t kEvalStream = 1;

/// Per-episode support state: bound parameters, encoded support and
/// prototypes on one tape.
template <typename S>
struct EpisodeStateT {
    BoundModelT<S> model;
    std::vector<std::vector<Var>> encoded_support;   // [N][K]
    std::vector<std::vector<TagSequence>> support_tags;
    PrototypeSetT<S> prototypes;
};

template <typename S>
EpisodeStateT<S> build_episode_state(TapeT<S>& tape, const ModelParamsT<S>& params,
                                     const std::vector<std::vector<AnnotatedSentence>>& support,
                                     const Vocabulary& vocab, const TrainConfig& cfg) {
    EpisodeStateT<S> st;
    st.model = BoundModelT<S>::bind(tape, params);
    for (const auto& group : support) {
        std::vector<Var> encoded;
        std::vector<TagSequence> tags;
        for (const auto& sent : group) {
            encoded.push_back(encode(tape, sent.tokens, st.model.encoder, vocab));
            tags.push_back(derive_bio_tags(sent));
        }
        st.encoded_support.push_back(std::move(encoded));
        st.support_tags.push_back(std::move(tags));
    }
    st.prototypes = compute_entity_prototypes(tape, st.encoded_support, st.support_tags,
                                              cfg.proto_k_norm);
    return st;
}

/// Relation scores for one encoded query under the configured decoder
/// variant.
template <typename S>
RelationScoresT<S> score_relations(TapeT<S>& tape, const EpisodeStateT<S>& st, Var q,
                                   const TrainConfig& cfg) {
    if (cfg.disable_egr)
        return classify_relation_support_tokens(tape, q, st.encoded_support, st.model.fusion,
                                                st.model.reldec);
    return classify_relation(tape, q, st.prototypes, st.model.fusion, st.model.reldec,
                             cfg.disable_pfm);
}

/// Emission matrix for one query under relation i: fuse (unless ablated),
/// concatenate original+fused features on both sides, negative squared
/// distances.
template <typename S>
Var query_emissions(TapeT<S>& tape, const EpisodeStateT<S>& st, Var q, std::size_t relation,
                    const TrainConfig& cfg) {
    Var p = st.prototypes.proto[relation];
    Var q_hat = q, p_hat = p;
    if (!cfg.disable_pfm) {
        FusedPair<S> fused = fuse(tape, q, p, st.model.fusion);
        q_hat = fused.q_hat;
        p_hat = fused.p_hat;
    }
    auto [q_bar, p_bar] = combined_reps(tape, q, q_hat, p, p_hat);
    return emission_scores(tape, q_bar, p_bar);
}

/// Training loss for one episode: mean over query instances of
/// L_rel + lambda_ent * L_ent, with the entity CRF teacher-forced on the
/// gold relation. Returns the loss node; the caller owns the tape.
template <typename S>
Var episode_loss_graph(TapeT<S>& tape, const EpisodeStateT<S>& st, const Episode& episode,
                       const Vocabulary& vocab, const TrainConfig& cfg) {
    if (episode.query.empty()) throw std::invalid_argument("episode_loss: no queries");
    std::vector<Var> per_query;
    for (const auto& q : episode.query) {
        std::size_t gold = episode.relation_index(q.relation);
        Var encoded = encode(tape, q.tokens, st.model.encoder, vocab);
        RelationScoresT<S> rel = score_relations(tape, st, encoded, cfg);
        Var l_rel = relation_loss(tape, rel.scores, gold);
        if (cfg.lambda_ent == 0.0) {
            per_query.push_back(l_rel);
            continue;
        }
        Var emissions = query_emissions(tape, st, encoded, gold, cfg);
        Var l_ent = crf_nll(tape, emissions, st.model.crf, derive_bio_tags(q));
        per_query.push_back(tape.add_scaled(l_rel, l_ent, static_cast<S>(cfg.lambda_ent)));
    }
    return tape.mean_of(per_query);
}

/// Forward-only episode loss at the current parameters.
template <typename S>
double episode_loss(const ModelParamsT<S>& params, const Episode& episode,
                    const Vocabulary& vocab, const TrainConfig& cfg) {
    TapeT<S> tape;
    EpisodeStateT<S> st = build_episode_state(tape, params, episode.support, vocab, cfg);
    Var loss = episode_loss_graph(tape, st, episode, vocab, cfg);
    return static_cast<double>(tape.value(loss).item());
}

/// A query stripped to its token sequence. Prediction consumes only this
/// type, so the evaluation path cannot read gold labels by construction.
struct QueryInput {
    std::vector<std::string> tokens;
};

inline QueryInput strip_labels(const AnnotatedSentence& s) { return {s.tokens}; }

struct QueryPrediction {
    std::size_t relation_index = 0;
    std::optional<Span> subject;
    std::optional<Span> object;
    TagSequence tags;
    bool complete() const { return subject.has_value() && object.has_value(); }
};

namespace detail {

/// Path score of a decoded sequence under raw emissions/transitions;
/// used to pick a relation when relation guidance is ablated.
template <typename S>
S path_score(const TensorT<S>& emissions, const CrfParamsT<S>& crf, const TagSequence& path) {
    S acc = crf.transitions.at(kCrfStart, static_cast<std::size_t>(path[0]));
    for (std::size_t t = 0; t < path.size(); ++t) {
        acc += emissions.at(t, static_cast<std::size_t>(path[t]));
        if (t + 1 < path.size())
            acc += crf.transitions.at(static_cast<std::size_t>(path[t]),
                                      static_cast<std::size_t>(path[t + 1]));
    }
    acc += crf.transitions.at(static_cast<std::size_t>(path.back()), kCrfStop);
    return acc;
}

}  // namespace detail

/// Test-time prediction for one query: relation from the relation decoder,
/// spans from Viterbi under the predicted relation (or, with disable_rge,
/// under whichever relation's best path scores highest).
template <typename S>
QueryPrediction predict_query(TapeT<S>& tape, const EpisodeStateT<S>& st,
                              const ModelParamsT<S>& params, const QueryInput& query,
                              const Vocabulary& vocab, const TrainConfig& cfg) {
    Var encoded = encode(tape, query.tokens, st.model.encoder, vocab);
    RelationScoresT<S> rel = score_relations(tape, st, encoded, cfg);

    QueryPrediction pred;
    pred.relation_index = rel.best;
    if (cfg.disable_rge) {
        bool first = true;
        S best_score = S(0);
        for (std::size_t i = 0; i < st.prototypes.n_way(); ++i) {
            const TensorT<S>& em = tape.value(query_emissions(tape, st, encoded, i, cfg));
            TagSequence path = viterbi_decode(em, params.crf);
            S score = detail::path_score(em, params.crf, path);
            if (first || score > best_score) {
                first = false;
                best_score = score;
                pred.tags = path;
            }
        }
    } else {
        const TensorT<S>& em =
            tape.value(query_emissions(tape, st, encoded, pred.relation_index, cfg));
        pred.tags = viterbi_decode(em, params.crf);
    }
    auto [subj, obj] = tags_to_spans(pred.tags);
    pred.subject = subj;
    pred.object = obj;
    return pred;
}

struct EpisodeCounts {
    std::size_t index = 0;
    PRF entity, relation, triple;
};

struct EvalRecord {
    std::size_t episode = 0;
    std::size_t query = 0;
    std::string gold_relation;
    std::string predicted_relation;
    QueryPrediction prediction;
};

struct EvalResult {
    Metrics metrics;
    std::vector<EpisodeCounts> per_episode;
    std::vector<EvalRecord> records;
};

/// Scores a fixed set of episodes. Gold labels enter only after prediction,
/// when counts are accumulated.
template <typename S>
EvalResult evaluate_episodes(const ModelParamsT<S>& params, const std::vector<Episode>& episodes,
                             const Vocabulary& vocab, const TrainConfig& cfg) {
    EvalResult result;
    for (std::size_t e = 0; e < episodes.size(); ++e) {
        const Episode& ep = episodes[e];
        TapeT<S> tape;
        EpisodeStateT<S> st = build_episode_state(tape, params, ep.support, vocab, cfg);
        EpisodeCounts counts;
        counts.index = e;
        for (std::size_t qi = 0; qi < ep.query.size(); ++qi) {
            const AnnotatedSentence& q = ep.query[qi];
            QueryPrediction pred = predict_query(tape, st, params, strip_labels(q), vocab, cfg);

            std::size_t gold_rel = ep.relation_index(q.relation);
            bool rel_ok = pred.relation_index == gold_rel;
            if (rel_ok)
                counts.relation.tp += 1;
            else {
                counts.relation.fp += 1;
                counts.relation.fn += 1;
            }

            auto score_span = [&](const std::optional<Span>& got, const Span& want) {
                if (!got)
                    counts.entity.fn += 1;
                else if (*got == want)
                    counts.entity.tp += 1;
                else {
                    counts.entity.fp += 1;
                    counts.entity.fn += 1;
                }
            };
            score_span(pred.subject, q.subject);
            score_span(pred.object, q.object);

            bool triple_ok = rel_ok && pred.subject && *pred.subject == q.subject &&
                             pred.object && *pred.object == q.object;
            if (triple_ok)
                counts.triple.tp += 1;
            else {
                if (pred.complete()) counts.triple.fp += 1;
                counts.triple.fn += 1;
            }

            result.records.push_back(
                {e, qi, q.relation, ep.relations[pred.relation_index], pred});
        }
        result.metrics.entity += counts.entity;
        result.metrics.relation += counts.relation;
        result.metrics.triple += counts.triple;
        result.metrics.episodes += 1;
        result.metrics.queries += ep.query.size();
        result.per_episode.push_back(counts);
    }
    return result;
}

/// Samples cfg.episodes evaluation tasks (seed stream disjoint from
/// training) and scores them.
template <typename S>
EvalResult evaluate(const ModelParamsT<S>& params, const Corpus& corpus, const Vocabulary& vocab,
                    const TrainConfig& cfg) {
    cfg.validate();
    std::vector<Episode> episodes;
    std::uint64_t stream = derive_seed(cfg.seed, kEvalStream);
    for (std::size_t e = 0; e < cfg.episodes; ++e)
        episodes.push_back(
            sample_episode(corpus, cfg.n_way, cfg.k_shot, cfg.q_per_relation, derive_seed(stream, e)));
    return evaluate_episodes(params, episodes, vocab, cfg);
}

/// Adam update rule over the named parameter list.
template <typename S>
class AdamOptimizer {
public:
    AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ModelParamsT<S>& params, const std::vector<TensorT<S>>& grads) {
        std::vector<TensorT<S>*> tensors;
        params.for_each_param([&](const char*, TensorT<S>& t) { tensors.push_back(&t); });
        if (tensors.size() != grads.size())
            throw std::invalid_argument("adam: gradient count mismatch");
        if (m_.empty()) {
            for (auto* t : tensors) {
                m_.push_back(TensorT<S>::zeros(t->rows(), t->cols()));
                v_.push_back(TensorT<S>::zeros(t->rows(), t->cols()));
            }
        }
        ++t_;
        double bc1 = 1.0 - std::pow(beta1_, t_);
        double bc2 = 1.0 - std::pow(beta2_, t_);
        for (std::size_t p = 0; p < tensors.size(); ++p) {
            auto& w = tensors[p]->data;
            const auto& g = grads[p].data;
            for (std::size_t i = 0; i < w.size(); ++i) {
                double gi = static_cast<double>(g[i]);
                double m = beta1_ * static_cast<double>(m_[p].data[i]) + (1.0 - beta1_) * gi;
                double v = beta2_ * static_cast<double>(v_[p].data[i]) + (1.0 - beta2_) * gi * gi;
                m_[p].data[i] = static_cast<S>(m);
                v_[p].data[i] = static_cast<S>(v);
                w[i] -= static_cast<S>(lr_ * (m / bc1) / (std::sqrt(v / bc2) + eps_));
            }
        }
    }

private:
    double lr_, beta1_, beta2_, eps_;
    int t_ = 0;
    std::vector<TensorT<S>> m_, v_;
};

/// Validates that the corpus can supply the configured episodes.
inline void check_episode_feasibility(const Corpus& corpus, const TrainConfig& cfg) {
    if (corpus.relation_count() < cfg.n_way) {
        std::ostringstream os;
        os << "corpus has " << corpus.relation_count() << " relations, need " << cfg.n_way;
        throw std::runtime_error(os.str());
    }
    // Sampling may draw any relation, so every group must be adequate.
    std::size_t need = cfg.k_shot + cfg.q_per_relation;
    for (const auto& g : corpus.groups)
        if (g.sentences.size() < need) {
            std::ostringstream os;
            os << "relation " << g.relation << " has " << g.sentences.size()
               << " sentences, need " << need;
            throw std::runtime_error(os.str());
        }
}

inline void assert_disjoint_relations(const Corpus& train, const Corpus& eval) {
    std::set<std::string> train_rels;
    for (const auto& g : train.groups) train_rels.insert(g.relation);
    for (const auto& g : eval.groups)
        if (train_rels.count(g.relation))
            throw std::runtime_error("cross-domain mode requires disjoint relation inventories; "
                                     "both corpora contain " + g.relation);
}

struct TrainResult {
    std::vector<double> losses;  // one per episode
};

/// Episodic training: one Adam step per sampled episode. Deterministic
/// given (params seed, config); per-episode sampling seeds derive from
/// (master seed, episode index).
template <typename S>
TrainResult train_model(ModelParamsT<S>& params, const Corpus& corpus, const Vocabulary& vocab,
                        const TrainConfig& cfg) {
    cfg.validate();
    check_episode_feasibility(corpus, cfg);
    TrainResult result;
    AdamOptimizer<S> opt(cfg.learning_rate);
    std::uint64_t stream = derive_seed(cfg.seed, kTrainStream);
    for (std::size_t e = 0; e < cfg.episodes; ++e) {
        Episode ep = sample_episode(corpus, cfg.n_way, cfg.k_shot, cfg.q_per_relation,
                                    derive_seed(stream, e));
        TapeT<S> tape;
        EpisodeStateT<S> st = build_episode_state(tape, params, ep.support, vocab, cfg);
        Var loss = episode_loss_graph(tape, st, ep, vocab, cfg);
        tape.backward(loss);
        opt.step(params, st.model.grads(tape));
        result.losses.push_back(static_cast<double>(tape.value(loss).item()));
    }
    return result;
}

/// Builds support groups from a support corpus for extraction: every
/// relation must supply the same number of instances.
inline std::vector<std::vector<AnnotatedSentence>> support_from_corpus(const Corpus& corpus) {
    if (corpus.groups.empty()) throw std::runtime_error("support corpus has no relations");
    std::size_t k = corpus.groups.front().sentences.size();
    std::vector<std::vector<AnnotatedSentence>> support;
    for (const auto& g : corpus.groups) {
        if (g.sentences.size() != k)
            throw std::runtime_error("malformed support: relation " + g.relation + " has " +
                                     std::to_string(g.sentences.size()) + " instances, expected " +
                                     std::to_string(k));
        support.push_back(g.sentences);
    }
    return support;
}

struct ExtractedTriple {
    std::string relation;
    std::optional<Span> subject;
    std::optional<Span> object;
    bool complete() const { return subject.has_value() && object.has_value(); }
};

/// End-to-end extraction: prototypes from the support corpus, then relation
/// and spans for the given sentence.
template <typename S>
ExtractedTriple extract(const ModelParamsT<S>& params, const Corpus& support_corpus,
                        const std::vector<std::string>& tokens, const Vocabulary& vocab,
                        const TrainConfig& cfg) {
    if (tokens.size() < 2)
        throw std::invalid_argument("extract: sentence must have at least 2 tokens");
    auto support = support_from_corpus(support_corpus);
    TapeT<S> tape;
    EpisodeStateT<S> st = build_episode_state(tape, params, support, vocab, cfg);
    QueryPrediction pred = predict_query(tape, st, params, QueryInput{tokens}, vocab, cfg);
    return {support_corpus.groups[pred.relation_index].relation, pred.subject, pred.object};
}

}  // namespace mgfte
