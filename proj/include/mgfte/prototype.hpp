#pragma once

#include <array>
#include <stdexcept>
#include <vector>

#include "mgfte/corpus.hpp"
#include "mgfte/tape.hpp"

namespace mgfte {

/// Per-relation 5 x d entity prototype matrices (rows in tag order
/// BS, IS, BO, IO, O) plus the support token count behind each row.
template <typename S>
struct PrototypeSetT {
    std::vector<Var> proto;                        // [N], each 5 x d
    std::vector<std::array<std::size_t, kNumTags>> counts;  // [N][tag]

    std::size_t n_way() const { return proto.size(); }
};

/// Masked mean of support token vectors per (relation, tag). A tag with no
/// support tokens gets the zero vector; its count stays 0 so callers can
/// mask. With literal_k_norm the masked sum is divided by K instead of the
/// matching-token count.
template <typename S>
PrototypeSetT<S> compute_entity_prototypes(
    TapeT<S>& tape, const std::vector<std::vector<Var>>& encoded_support,
    const std::vector<std::vector<TagSequence>>& support_tags, bool literal_k_norm = false) {
    if (encoded_support.size() != support_tags.size())
        throw std::invalid_argument("prototypes: support/tags group count mismatch");
    PrototypeSetT<S> out;
    for (std::size_t i = 0; i < encoded_support.size(); ++i) {
        const auto& sentences = encoded_support[i];
        const auto& tags = support_tags[i];
        if (sentences.empty() || sentences.size() != tags.size())
            throw std::invalid_argument("prototypes: malformed support group");
        std::size_t d = tape.value(sentences[0]).cols();
        std::size_t k_shot = sentences.size();

        std::vector<Var> rows;
        std::array<std::size_t, kNumTags> counts{};
        for (int tag = 0; tag < kNumTags; ++tag) {
            std::vector<Var> partials;
            std::size_t count = 0;
            for (std::size_t k = 0; k < k_shot; ++k) {
                if (tape.value(sentences[k]).rows() != tags[k].size())
                    throw std::invalid_argument("prototypes: tag length mismatch");
                std::vector<std::size_t> idx;
                for (std::size_t t = 0; t < tags[k].size(); ++t)
                    if (static_cast<int>(tags[k][t]) == tag) idx.push_back(t);
                if (!idx.empty()) {
                    partials.push_back(tape.sum_selected_rows(sentences[k], idx));
                    count += idx.size();
                }
            }
            counts[static_cast<std::size_t>(tag)] = count;
            if (count == 0) {
                rows.push_back(tape.constant(TensorT<S>::zeros(1, d)));
                continue;
            }
            Var sum = partials[0];
            for (std::size_t p = 1; p < partials.size(); ++p) sum = tape.add(sum, partials[p]);
            S denom = literal_k_norm ? static_cast<S>(k_shot) : static_cast<S>(count);
            rows.push_back(tape.scale(sum, S(1) / denom));
        }
        out.proto.push_back(tape.stack_rows(rows));
        out.counts.push_back(counts);
    }
    return out;
}

}  // namespace mgfte
