#pragma once

#include <cstdint>
#include <istream>
#include <string>
#include <unordered_map>
#include <vector>

#include "ptu/error.hpp"

namespace ptu {

// Special token ids are fixed at 0..4.
constexpr int64_t kClsId = 0;
constexpr int64_t kSepId = 1;
constexpr int64_t kMaskId = 2;
constexpr int64_t kPadId = 3;
constexpr int64_t kUnkId = 4;
constexpr int64_t kNumSpecials = 5;

class Vocabulary {
public:
    // Whitespace tokens ranked by frequency (ties lexicographic), truncated
    // to max_size including the 5 specials.
    static Vocabulary build(std::istream& corpus, int64_t max_size);
    static Vocabulary build(const std::string& corpus, int64_t max_size);

    // File format: UTF-8, one token per line, line number = id.
    static Vocabulary load(const std::string& path);
    void save(const std::string& path) const;

    int64_t size() const { return static_cast<int64_t>(tokens_.size()); }
    // Unknown tokens map to [UNK].
    int64_t id(const std::string& token) const;
    bool contains(const std::string& token) const { return ids_.count(token) > 0; }
    const std::string& token(int64_t id) const;

private:
    void push(const std::string& token);

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int64_t> ids_;
};

struct TokenSequence {
    std::vector<int64_t> ids;    // leading [CLS], trailing [SEP]
    std::vector<bool> maskable;  // per position; specials are never maskable
    int64_t length() const { return static_cast<int64_t>(ids.size()); }
};

// [CLS] + content ids + [SEP]. Texts with fewer than 3 whitespace tokens are
// rejected (callers filter at dataset build). Content longer than max_len is
// truncated to max_len-1 tokens, then [SEP] is appended.
TokenSequence tokenize(const std::string& text, const Vocabulary& vocab, int64_t max_len);

// Joins content tokens back to text, specials stripped.
std::string detokenize(const TokenSequence& seq, const Vocabulary& vocab);

std::vector<std::string> split_whitespace(const std::string& text);

}  // namespace ptu
