#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "mgfte/rng.hpp"
#include "mgfte/tape.hpp"
#include "mgfte/tensor.hpp"
#include "mgfte/vocab.hpp"

namespace mgfte {

/// Token + positional embeddings followed by one residual single-head
/// scaled-dot-product self-attention layer. Deliberately the smallest
/// differentiable context mixer; any encoder with the same Tx d contract can
/// replace it.
template <typename S>
struct EncoderParamsT {
    TensorT<S> token_embedding;     // vocab x d
    TensorT<S> position_embedding;  // max_len x d
    TensorT<S> attn_query;          // d x d
    TensorT<S> attn_key;            // d x d
    TensorT<S> attn_value;          // d x d
    TensorT<S> attn_output;         // d x d

    std::size_t dim() const { return token_embedding.cols(); }
    std::size_t max_len() const { return position_embedding.rows(); }

    static EncoderParamsT init(std::size_t vocab, std::size_t d, std::size_t max_len,
                               std::uint64_t seed) {
        EncoderParamsT p;
        double s = 1.0 / std::sqrt(static_cast<double>(d));
        auto fill = [&](TensorT<S>& t, std::size_t r, std::size_t c, std::uint64_t stream) {
            t = TensorT<S>::zeros(r, c);
            Rng rng(derive_seed(seed, stream));
            for (auto& v : t.data) v = static_cast<S>(rng.uniform(-s, s));
        };
        fill(p.token_embedding, vocab, d, 0);
        fill(p.position_embedding, max_len, d, 1);
        fill(p.attn_query, d, d, 2);
        fill(p.attn_key, d, d, 3);
        fill(p.attn_value, d, d, 4);
        fill(p.attn_output, d, d, 5);
        return p;
    }
};

/// Tape handles for one episode's encoder parameters.
template <typename S>
struct EncoderVars {
    Var token_embedding, position_embedding, attn_query, attn_key, attn_value, attn_output;
    std::size_t max_len = 0;

    static EncoderVars bind(TapeT<S>& tape, const EncoderParamsT<S>& p) {
        return {tape.leaf(p.token_embedding), tape.leaf(p.position_embedding),
                tape.leaf(p.attn_query),      tape.leaf(p.attn_key),
                tape.leaf(p.attn_value),      tape.leaf(p.attn_output),
                p.max_len()};
    }
};

/// Contextual T x d representation of a token sequence.
template <typename S>
Var encode(TapeT<S>& tape, const std::vector<std::string>& tokens, const EncoderVars<S>& enc,
           const Vocabulary& vocab) {
    if (tokens.empty()) throw std::invalid_argument("encode: empty sentence");
    if (tokens.size() > enc.max_len)
        throw std::invalid_argument("encode: sentence longer than max_len (" +
                                    std::to_string(tokens.size()) + " > " +
                                    std::to_string(enc.max_len) + ")");
    std::vector<std::size_t> ids = vocab.encode(tokens);
    std::vector<std::size_t> positions(tokens.size());
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;

    Var x = tape.add(tape.embedding_rows(enc.token_embedding, ids),
                     tape.embedding_rows(enc.position_embedding, positions));
    std::size_t d = tape.value(x).cols();
    Var q = tape.matmul(x, enc.attn_query);
    Var k = tape.matmul(x, enc.attn_key);
    Var v = tape.matmul(x, enc.attn_value);
    Var att = tape.softmax_rows(
        tape.scale(tape.matmul_nt(q, k), S(1) / static_cast<S>(std::sqrt(double(d)))));
    Var mixed = tape.matmul(tape.matmul(att, v), enc.attn_output);
    return tape.add(x, mixed);
}

}  // namespace mgfte
