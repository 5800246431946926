#include "mgfte/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "mgfte/rng.hpp"

namespace mgfte {

using nlohmann::json;

std::optional<std::string> validate_sentence(const AnnotatedSentence& s) {
    if (s.tokens.size() < 2) return "sentence has fewer than 2 tokens";
    if (s.relation.empty()) return "empty relation id";
    auto check_span = [&](const Span& sp, const char* which) -> std::optional<std::string> {
        if (sp.start >= sp.end || sp.end > s.tokens.size())
            return std::string(which) + " span out of range";
        return std::nullopt;
    };
    if (auto e = check_span(s.subject, "subject")) return e;
    if (auto e = check_span(s.object, "object")) return e;
    if (s.subject.start < s.object.end && s.object.start < s.subject.end)
        return "subject and object spans overlap";
    return std::nullopt;
}

const Corpus::Group* Corpus::find(const std::string& relation) const {
    for (const auto& g : groups)
        if (g.relation == relation) return &g;
    return nullptr;
}

std::vector<std::string> Corpus::relation_ids() const {
    std::vector<std::string> ids;
    ids.reserve(groups.size());
    for (const auto& g : groups) ids.push_back(g.relation);
    return ids;
}

std::size_t Episode::relation_index(const std::string& id) const {
    for (std::size_t i = 0; i < relations.size(); ++i)
        if (relations[i] == id) return i;
    throw std::runtime_error("episode: relation not in task: " + id);
}

namespace {

AnnotatedSentence parse_line(const std::string& line, std::size_t line_no,
                             const std::string& origin) {
    auto fail = [&](const std::string& why) -> std::runtime_error {
        std::ostringstream os;
        os << origin << ": " << why << ", line " << line_no;
        return std::runtime_error(os.str());
    };
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        throw fail(std::string("malformed JSON (") + e.what() + ")");
    }
    if (!j.is_object()) throw fail("line is not a JSON object");
    AnnotatedSentence s;
    try {
        if (!j.contains("tokens") || !j.contains("relation") || !j.contains("subject") ||
            !j.contains("object"))
            throw fail("missing required key (tokens/relation/subject/object)");
        s.tokens = j.at("tokens").get<std::vector<std::string>>();
        s.relation = j.at("relation").get<std::string>();
        auto read_span = [&](const char* key) {
            const auto& arr = j.at(key);
            if (!arr.is_array() || arr.size() != 2 || !arr[0].is_number_integer() ||
                !arr[1].is_number_integer() || arr[0].get<long long>() < 0 ||
                arr[1].get<long long>() < 0)
                throw fail(std::string(key) + " span must be two nonnegative integers");
            return Span{arr[0].get<std::size_t>(), arr[1].get<std::size_t>()};
        };
        s.subject = read_span("subject");
        s.object = read_span("object");
    } catch (const json::exception& e) {
        throw fail(std::string("bad field type (") + e.what() + ")");
    }
    if (auto why = validate_sentence(s)) throw fail(*why);
    return s;
}

}  // namespace

Corpus parse_corpus_lines(const std::vector<std::string>& lines, const std::string& origin) {
    std::map<std::string, std::vector<AnnotatedSentence>> by_relation;
    std::size_t line_no = 0;
    for (const auto& line : lines) {
        ++line_no;
        bool blank = line.find_first_not_of(" \t\r") == std::string::npos;
        if (blank) continue;
        AnnotatedSentence s = parse_line(line, line_no, origin);
        by_relation[s.relation].push_back(std::move(s));
    }
    if (by_relation.empty()) throw std::runtime_error(origin + ": empty corpus");
    Corpus corpus;
    for (auto& [rel, sents] : by_relation)
        corpus.groups.push_back({rel, std::move(sents)});
    return corpus;
}

Corpus parse_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open corpus file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    Corpus c = parse_corpus_lines(lines, path);
    c.domain = path;
    return c;
}

TagSequence derive_bio_tags(const AnnotatedSentence& s) {
    if (auto why = validate_sentence(s))
        throw std::invalid_argument("derive_bio_tags: " + *why);
    TagSequence tags(s.tokens.size(), Tag::O);
    tags[s.subject.start] = Tag::BS;
    for (std::size_t t = s.subject.start + 1; t < s.subject.end; ++t) tags[t] = Tag::IS;
    tags[s.object.start] = Tag::BO;
    for (std::size_t t = s.object.start + 1; t < s.object.end; ++t) tags[t] = Tag::IO;
    return tags;
}

namespace {

/// Partial Fisher-Yates: first k entries of a seeded permutation of [0, n).
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, Rng& rng) {
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t j = i + rng.index(n - i);
        std::swap(all[i], all[j]);
    }
    all.resize(k);
    return all;
}

}  // namespace

Episode sample_episode(const Corpus& corpus, std::size_t n_way, std::size_t k_shot,
                       std::size_t q_per_relation, std::uint64_t seed) {
    if (n_way == 0 || k_shot == 0)
        throw std::invalid_argument("sample_episode: n_way and k_shot must be positive");
    if (corpus.relation_count() < n_way) {
        std::ostringstream os;
        os << "sample_episode: corpus has " << corpus.relation_count()
           << " relations, need " << n_way;
        throw std::runtime_error(os.str());
    }
    Rng rng(seed);
    std::vector<std::size_t> rel_idx =
        sample_indices(corpus.relation_count(), n_way, rng);

    Episode ep;
    ep.n_way = n_way;
    ep.k_shot = k_shot;
    ep.support.resize(n_way);
    for (std::size_t i = 0; i < n_way; ++i) {
        const auto& group = corpus.groups[rel_idx[i]];
        std::size_t need = k_shot + q_per_relation;
        if (group.sentences.size() < need) {
            std::ostringstream os;
            os << "sample_episode: relation " << group.relation << " has "
               << group.sentences.size() << " sentences, need " << need;
            throw std::runtime_error(os.str());
        }
        ep.relations.push_back(group.relation);
        std::vector<std::size_t> picks = sample_indices(group.sentences.size(), need, rng);
        for (std::size_t k = 0; k < k_shot; ++k)
            ep.support[i].push_back(group.sentences[picks[k]]);
        for (std::size_t q = 0; q < q_per_relation; ++q)
            ep.query.push_back(group.sentences[picks[k_shot + q]]);
    }
    return ep;
}

namespace {

struct VocabLayout {
    // Per relation: cue tokens, subject-entity tokens, object-entity tokens.
    static constexpr std::size_t kCues = 4;
    static constexpr std::size_t kSubj = 5;
    static constexpr std::size_t kObj = 5;
    static constexpr std::size_t kPerRelation = kCues + kSubj + kObj;
    static constexpr std::size_t kMinDistractors = 8;

    std::size_t n_relations;
    std::size_t vocab_size;

    std::size_t cue_id(std::size_t rel, std::size_t i) const {
        return rel * kPerRelation + i;
    }
    std::size_t subj_id(std::size_t rel, std::size_t i) const {
        return rel * kPerRelation + kCues + i;
    }
    std::size_t obj_id(std::size_t rel, std::size_t i) const {
        return rel * kPerRelation + kCues + kSubj + i;
    }
    std::size_t distractor_id(std::size_t i) const {
        return n_relations * kPerRelation + i;
    }
    std::size_t distractor_count() const {
        return vocab_size - n_relations * kPerRelation;
    }
};

std::string token_name(std::size_t id) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "tok%04zu", id);
    return buf;
}

std::string relation_name(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "rel%02zu", i);
    return buf;
}

VocabLayout check_layout(const SyntheticSpec& spec) {
    if (spec.n_relations == 0 || spec.sentences_per_relation == 0)
        throw std::invalid_argument("synthetic corpus: counts must be positive");
    if (spec.min_len < 2 || spec.min_len > spec.max_len)
        throw std::invalid_argument("synthetic corpus: bad length range");
    if (spec.min_entity_len == 0 || spec.min_entity_len > spec.max_entity_len)
        throw std::invalid_argument("synthetic corpus: bad entity length range");
    if (spec.min_len < 2 * spec.max_entity_len + 1)
        throw std::invalid_argument(
            "synthetic corpus: min_len must be at least 2*max_entity_len+1");
    VocabLayout layout{spec.n_relations, spec.vocab_size};
    if (spec.vocab_size < spec.n_relations * VocabLayout::kPerRelation +
                              VocabLayout::kMinDistractors)
        throw std::invalid_argument("synthetic corpus: infeasible vocabulary partition");
    return layout;
}

}  // namespace

std::vector<std::string> synthetic_vocab(const SyntheticSpec& spec) {
    check_layout(spec);
    std::vector<std::string> vocab;
    vocab.reserve(spec.vocab_size);
    for (std::size_t i = 0; i < spec.vocab_size; ++i) vocab.push_back(token_name(i));
    return vocab;
}

Corpus generate_synthetic_corpus(const SyntheticSpec& spec) {
    VocabLayout layout = check_layout(spec);
    Corpus corpus;
    corpus.domain = "synthetic";
    for (std::size_t rel = 0; rel < spec.n_relations; ++rel) {
        Corpus::Group group;
        group.relation = relation_name(rel);
        Rng rng(derive_seed(spec.seed, rel));
        for (std::size_t n = 0; n < spec.sentences_per_relation; ++n) {
            std::size_t len = rng.range(spec.min_len, spec.max_len);
            std::size_t subj_len = rng.range(spec.min_entity_len, spec.max_entity_len);
            std::size_t obj_len = rng.range(spec.min_entity_len, spec.max_entity_len);

            // Enumerate every non-overlapping placement and pick one uniformly;
            // min_len >= 2*max_entity_len+1 guarantees at least one exists.
            std::vector<std::pair<std::size_t, std::size_t>> placements;
            for (std::size_t s = 0; s + subj_len <= len; ++s)
                for (std::size_t o = 0; o + obj_len <= len; ++o)
                    if (s + subj_len <= o || o + obj_len <= s) placements.emplace_back(s, o);
            auto [s_start, o_start] = placements[rng.index(placements.size())];

            AnnotatedSentence sent;
            sent.relation = group.relation;
            sent.subject = {s_start, s_start + subj_len};
            sent.object = {o_start, o_start + obj_len};
            sent.tokens.resize(len);
            for (std::size_t t = 0; t < subj_len; ++t)
                sent.tokens[s_start + t] =
                    token_name(layout.subj_id(rel, rng.index(VocabLayout::kSubj)));
            for (std::size_t t = 0; t < obj_len; ++t)
                sent.tokens[o_start + t] =
                    token_name(layout.obj_id(rel, rng.index(VocabLayout::kObj)));
            bool first_context = true;
            for (std::size_t t = 0; t < len; ++t) {
                if (!sent.tokens[t].empty()) continue;
                // First context slot always carries a relation cue so every
                // sentence is classifiable; the rest mix cues and distractors.
                bool cue = first_context || rng.bernoulli(0.45);
                first_context = false;
                sent.tokens[t] =
                    cue ? token_name(layout.cue_id(rel, rng.index(VocabLayout::kCues)))
                        : token_name(layout.distractor_id(rng.index(layout.distractor_count())));
            }
            group.sentences.push_back(std::move(sent));
        }
        corpus.groups.push_back(std::move(group));
    }
    return corpus;
}

std::string corpus_to_jsonl(const Corpus& corpus) {
    std::ostringstream os;
    for (const auto& group : corpus.groups) {
        for (const auto& s : group.sentences) {
            json j;
            j["tokens"] = s.tokens;
            j["relation"] = s.relation;
            j["subject"] = {s.subject.start, s.subject.end};
            j["object"] = {s.object.start, s.object.end};
            os << j.dump() << "\n";
        }
    }
    return os.str();
}

void write_corpus(const Corpus& corpus, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write corpus file: " + path);
    out << corpus_to_jsonl(corpus);
}

}  // namespace mgfte
