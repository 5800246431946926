#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace mgfte {

/// Entity tags in fixed order; prototype rows, emission columns and CRF
/// states all follow this order.
enum class Tag : int { BS = 0, IS = 1, BO = 2, IO = 3, O = 4 };

inline constexpr int kNumTags = 5;
inline constexpr std::array<const char*, kNumTags> kTagNames = {"BS", "IS", "BO", "IO", "O"};

using TagSequence = std::vector<Tag>;

/// Half-open token index interval [start, end).
struct Span {
    std::size_t start = 0;
    std::size_t end = 0;
    bool operator==(const Span&) const = default;
};

/// One sentence with its gold triple: relation id plus subject/object spans.
struct AnnotatedSentence {
    std::vector<std::string> tokens;
    std::string relation;
    Span subject;
    Span object;
};

/// Checks the sentence invariants; returns an explanation on failure.
std::optional<std::string> validate_sentence(const AnnotatedSentence& s);

/// Sentences grouped by relation id. Groups are kept sorted by relation id
/// so iteration order (and thus sampling) is deterministic.
struct Corpus {
    struct Group {
        std::string relation;
        std::vector<AnnotatedSentence> sentences;
    };
    std::vector<Group> groups;
    std::string domain;

    std::size_t relation_count() const { return groups.size(); }
    const Group* find(const std::string& relation) const;
    std::vector<std::string> relation_ids() const;
};

/// One N-way-K-shot task.
struct Episode {
    std::size_t n_way = 0;
    std::size_t k_shot = 0;
    std::vector<std::vector<AnnotatedSentence>> support;  // [N][K]
    std::vector<AnnotatedSentence> query;
    std::vector<std::string> relations;  // index -> relation id

    std::size_t relation_index(const std::string& id) const;
};

/// Parses one JSONL corpus file:
///   {"tokens": [...], "relation": "id", "subject": [s,e), "object": [s,e)}
/// Throws std::runtime_error naming the offending line on malformed JSON or
/// invariant violations; "empty corpus" when no sentences survive.
Corpus parse_corpus(const std::string& path);

/// Parses lines already in memory (used by parse_corpus and tests).
Corpus parse_corpus_lines(const std::vector<std::string>& lines, const std::string& origin);

/// Gold BIO tags: subject start BS then IS, object start BO then IO, O elsewhere.
TagSequence derive_bio_tags(const AnnotatedSentence& s);

/// Samples an N-way-K-shot episode with q_per_relation queries per relation.
/// Relations and instances are drawn without replacement; support and query
/// are disjoint; fully deterministic under seed.
Episode sample_episode(const Corpus& corpus, std::size_t n_way, std::size_t k_shot,
                       std::size_t q_per_relation, std::uint64_t seed);

struct SyntheticSpec {
    std::size_t n_relations = 5;
    std::size_t sentences_per_relation = 40;
    std::size_t vocab_size = 120;
    std::size_t min_len = 8, max_len = 14;
    std::size_t min_entity_len = 1, max_entity_len = 2;
    std::uint64_t seed = 1;
};

/// Deterministic synthetic corpus: each relation owns disjoint cue tokens and
/// subject/object entity vocabularies, mixed with a shared distractor pool,
/// so relation and spans are statistically learnable.
Corpus generate_synthetic_corpus(const SyntheticSpec& spec);

/// Every token string the generator with this spec can emit, in id order.
/// Feeding this to the vocabulary keeps embeddings defined for relations
/// held out from training.
std::vector<std::string> synthetic_vocab(const SyntheticSpec& spec);

/// Serializes a corpus back to JSONL (inverse of parse_corpus).
std::string corpus_to_jsonl(const Corpus& corpus);
void write_corpus(const Corpus& corpus, const std::string& path);

}  // namespace mgfte
