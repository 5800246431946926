#pragma once

#include <cstddef>
#include <string>

#include <json.hpp>

namespace mgfte {

/// Pooled true/false positive and false negative counts with micro
/// precision/recall/F1. F1 is 0 when P + R is 0.
struct PRF {
    std::size_t tp = 0, fp = 0, fn = 0;

    double precision() const { return tp + fp == 0 ? 0.0 : double(tp) / double(tp + fp); }
    double recall() const { return tp + fn == 0 ? 0.0 : double(tp) / double(tp + fn); }
    double f1() const {
        double p = precision(), r = recall();
        return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
    }

    PRF& operator+=(const PRF& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        return *this;
    }
};

/// Micro-aggregated scores for entity spans, relation classification and
/// full triples.
struct Metrics {
    PRF entity, relation, triple;
    std::size_t episodes = 0;
    std::size_t queries = 0;

    Metrics& operator+=(const Metrics& o) {
        entity += o.entity;
        relation += o.relation;
        triple += o.triple;
        episodes += o.episodes;
        queries += o.queries;
        return *this;
    }

    nlohmann::ordered_json to_json() const {
        auto prf = [](const PRF& x) {
            nlohmann::ordered_json j;
            j["tp"] = x.tp;
            j["fp"] = x.fp;
            j["fn"] = x.fn;
            j["precision"] = x.precision();
            j["recall"] = x.recall();
            j["f1"] = x.f1();
            return j;
        };
        nlohmann::ordered_json j;
        j["episodes"] = episodes;
        j["queries"] = queries;
        j["entity"] = prf(entity);
        j["relation"] = prf(relation);
        j["triple"] = prf(triple);
        return j;
    }
};

}  // namespace mgfte
