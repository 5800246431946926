#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgfte/encoder.hpp"
#include "mgfte/entdec.hpp"
#include "mgfte/fusion.hpp"
#include "mgfte/reldec.hpp"
#include "mgfte/tensor.hpp"

namespace mgfte {

inline constexpr int kCheckpointVersion = 1;

/// Every trainable tensor in the pipeline, named for checkpoints and the
/// gradient suite. for_each_param and BoundModelT::bind enumerate tensors in
/// the same fixed order; keep them in sync.
template <typename S>
struct ModelParamsT {
    EncoderParamsT<S> encoder;
    FusionParamsT<S> fusion;
    RelDecoderParamsT<S> reldec;
    CrfParamsT<S> crf;

    std::size_t dim() const { return encoder.dim(); }
    std::size_t max_len() const { return encoder.max_len(); }
    std::size_t vocab_size() const { return encoder.token_embedding.rows(); }

    static ModelParamsT init(std::size_t vocab, std::size_t d, std::size_t max_len,
                             std::uint64_t seed, bool fusion_unshared = false) {
        ModelParamsT p;
        p.encoder = EncoderParamsT<S>::init(vocab, d, max_len, seed);
        p.fusion = FusionParamsT<S>::init(d, seed, fusion_unshared);
        p.reldec = RelDecoderParamsT<S>::init(d, seed);
        p.crf = CrfParamsT<S>::init();
        return p;
    }

    template <typename F>
    void for_each_param(F&& f) {
        f("encoder.token_embedding", encoder.token_embedding);
        f("encoder.position_embedding", encoder.position_embedding);
        f("encoder.attn_query", encoder.attn_query);
        f("encoder.attn_key", encoder.attn_key);
        f("encoder.attn_value", encoder.attn_value);
        f("encoder.attn_output", encoder.attn_output);
        f("fusion.w", fusion.w);
        if (fusion.unshared) f("fusion.w_query", fusion.w_query);
        f("reldec.w_r", reldec.w_r);
        f("reldec.v_r", reldec.v_r);
        f("crf.transitions", crf.transitions);
    }

    template <typename F>
    void for_each_param(F&& f) const {
        const_cast<ModelParamsT*>(this)->for_each_param(
            [&](const char* name, TensorT<S>& t) { f(name, static_cast<const TensorT<S>&>(t)); });
    }

    bool all_finite() const {
        bool ok = true;
        for_each_param([&](const char*, const TensorT<S>& t) { ok = ok && t.all_finite(); });
        return ok;
    }

    bool operator==(const ModelParamsT& o) const {
        bool eq = fusion.unshared == o.fusion.unshared;
        if (!eq) return false;
        std::vector<const TensorT<S>*> mine, theirs;
        for_each_param([&](const char*, const TensorT<S>& t) { mine.push_back(&t); });
        o.for_each_param([&](const char*, const TensorT<S>& t) { theirs.push_back(&t); });
        for (std::size_t i = 0; i < mine.size(); ++i)
            if (!(*mine[i] == *theirs[i])) return false;
        return true;
    }
};

/// All parameter tensors registered as leaves on one tape, in
/// for_each_param order.
template <typename S>
struct BoundModelT {
    EncoderVars<S> encoder;
    FusionVars<S> fusion;
    RelDecoderVars<S> reldec;
    CrfVars<S> crf;
    std::vector<Var> leaves;

    static BoundModelT bind(TapeT<S>& tape, const ModelParamsT<S>& p) {
        BoundModelT b;
        b.encoder = EncoderVars<S>::bind(tape, p.encoder);
        b.fusion = FusionVars<S>::bind(tape, p.fusion);
        b.reldec = RelDecoderVars<S>::bind(tape, p.reldec);
        b.crf = CrfVars<S>::bind(tape, p.crf);
        b.leaves = {b.encoder.token_embedding, b.encoder.position_embedding,
                    b.encoder.attn_query,      b.encoder.attn_key,
                    b.encoder.attn_value,      b.encoder.attn_output,
                    b.fusion.w};
        if (p.fusion.unshared) b.leaves.push_back(b.fusion.w_query);
        b.leaves.push_back(b.reldec.w_r);
        b.leaves.push_back(b.reldec.v_r);
        b.leaves.push_back(b.crf.transitions);
        return b;
    }

    /// Parameter gradients after tape.backward(), aligned with leaves.
    std::vector<TensorT<S>> grads(const TapeT<S>& tape) const {
        std::vector<TensorT<S>> out;
        out.reserve(leaves.size());
        for (Var v : leaves) out.push_back(tape.grad(v));
        return out;
    }
};

/// Writes {version, d, vocab_hash, params} as JSON. Field order is fixed so
/// identical params give identical bytes; values print with shortest
/// round-trip precision so a 64-bit reload is exact.
template <typename S>
void save_checkpoint(const ModelParamsT<S>& params, const std::string& vocab_hash,
                     const std::string& path) {
    nlohmann::ordered_json doc;
    doc["version"] = kCheckpointVersion;
    doc["d"] = params.dim();
    doc["vocab_hash"] = vocab_hash;
    doc["params"] = nlohmann::ordered_json::array();
    params.for_each_param([&](const char* name, const TensorT<S>& t) {
        nlohmann::ordered_json entry;
        entry["name"] = name;
        entry["shape"] = t.shape;
        std::vector<double> values(t.data.begin(), t.data.end());
        entry["values"] = values;
        doc["params"].push_back(std::move(entry));
    });
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out << doc.dump(1) << "\n";
}

struct CheckpointInfo {
    std::size_t d = 0;
    std::string vocab_hash;
};

template <typename S>
ModelParamsT<S> load_checkpoint(const std::string& path, CheckpointInfo* info = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("checkpoint parse error (" + std::string(e.what()) +
                                 "): " + path);
    }
    if (!doc.contains("version") || !doc["version"].is_number_integer())
        throw std::runtime_error("checkpoint missing version field: " + path);
    int version = doc["version"].get<int>();
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint version " + std::to_string(version) +
                                 " unsupported (expected " +
                                 std::to_string(kCheckpointVersion) + "): " + path);

    std::map<std::string, TensorT<S>> tensors;
    for (const auto& entry : doc.at("params")) {
        std::string name = entry.at("name").get<std::string>();
        std::vector<std::size_t> shape = entry.at("shape").get<std::vector<std::size_t>>();
        std::vector<double> values = entry.at("values").get<std::vector<double>>();
        std::size_t expect = 1;
        for (std::size_t s : shape) expect *= s;
        if (shape.size() != 2 || expect != values.size())
            throw std::runtime_error("checkpoint shape corruption in " + name + ": " + path);
        TensorT<S> t;
        t.shape = shape;
        t.data.assign(values.begin(), values.end());
        tensors[name] = std::move(t);
    }

    auto take = [&](const char* name) {
        auto it = tensors.find(name);
        if (it == tensors.end())
            throw std::runtime_error(std::string("checkpoint missing tensor ") + name + ": " +
                                     path);
        return it->second;
    };

    ModelParamsT<S> p;
    p.encoder.token_embedding = take("encoder.token_embedding");
    p.encoder.position_embedding = take("encoder.position_embedding");
    p.encoder.attn_query = take("encoder.attn_query");
    p.encoder.attn_key = take("encoder.attn_key");
    p.encoder.attn_value = take("encoder.attn_value");
    p.encoder.attn_output = take("encoder.attn_output");
    p.fusion.w = take("fusion.w");
    p.fusion.unshared = tensors.count("fusion.w_query") > 0;
    if (p.fusion.unshared) p.fusion.w_query = take("fusion.w_query");
    p.reldec.w_r = take("reldec.w_r");
    p.reldec.v_r = take("reldec.v_r");
    p.crf.transitions = take("crf.transitions");

    std::size_t d = doc.at("d").get<std::size_t>();
    if (p.encoder.token_embedding.cols() != d)
        throw std::runtime_error("checkpoint shape corruption: d mismatch: " + path);
    if (p.crf.transitions.rows() != kCrfStates || p.crf.transitions.cols() != kCrfStates)
        throw std::runtime_error("checkpoint shape corruption: transitions: " + path);
    if (info) {
        info->d = d;
        info->vocab_hash = doc.value("vocab_hash", "");
    }
    return p;
}

}  // namespace mgfte
