#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace mgfte {

/// Token string <-> id map with reserved padding and unknown ids.
class Vocabulary {
public:
    static constexpr std::size_t kPadId = 0;
    static constexpr std::size_t kUnkId = 1;

    Vocabulary() = default;
    explicit Vocabulary(const std::vector<std::string>& tokens);

    static Vocabulary from_file(const std::string& path);
    /// Sorted unique tokens of a token stream (fallback when no vocab file).
    static Vocabulary from_tokens(std::vector<std::string> tokens);

    std::size_t size() const { return id_to_token_.size(); }
    std::size_t lookup(const std::string& token) const;
    const std::string& token(std::size_t id) const { return id_to_token_.at(id); }

    std::vector<std::size_t> encode(const std::vector<std::string>& tokens) const;

    /// FNV-1a over the non-reserved token list; recorded in checkpoints so a
    /// model is never evaluated against a different vocabulary.
    std::string content_hash() const;

private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, std::size_t> token_to_id_;
};

}  // namespace mgfte
