#include "mgfte/vocab.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace mgfte {

Vocabulary::Vocabulary(const std::vector<std::string>& tokens) {
    id_to_token_ = {"<pad>", "<unk>"};
    for (const auto& t : tokens) {
        if (t.empty()) continue;
        if (token_to_id_.count(t))
            throw std::invalid_argument("vocabulary: duplicate token: " + t);
        token_to_id_[t] = id_to_token_.size();
        id_to_token_.push_back(t);
    }
}

Vocabulary Vocabulary::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open vocab file: " + path);
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
        if (!line.empty()) tokens.push_back(line);
    }
    return Vocabulary(tokens);
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
    std::sort(tokens.begin(), tokens.end());
    tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
    return Vocabulary(tokens);
}

std::size_t Vocabulary::lookup(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnkId : it->second;
}

std::vector<std::size_t> Vocabulary::encode(const std::vector<std::string>& tokens) const {
    std::vector<std::size_t> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(lookup(t));
    return ids;
}

std::string Vocabulary::content_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&](unsigned char c) {
        h ^= c;
        h *= 0x100000001b3ULL;
    };
    for (std::size_t i = 2; i < id_to_token_.size(); ++i) {
        for (unsigned char c : id_to_token_[i]) mix(c);
        mix('\n');
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace mgfte
