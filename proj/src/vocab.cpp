#include "ptu/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

namespace ptu {

namespace {
const char* kSpecialForms[kNumSpecials] = {"[CLS]", "[SEP]", "[MASK]", "[PAD]", "[UNK]"};
}

std::vector<std::string> split_whitespace(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream is(text);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

void Vocabulary::push(const std::string& token) {
    ids_.emplace(token, static_cast<int64_t>(tokens_.size()));
    tokens_.push_back(token);
}

Vocabulary Vocabulary::build(std::istream& corpus, int64_t max_size) {
    if (max_size < kNumSpecials)
        throw ValueError("vocabulary max_size " + std::to_string(max_size) +
                         " cannot hold the " + std::to_string(kNumSpecials) + " special tokens");
    std::map<std::string, int64_t> freq;
    std::string tok;
    while (corpus >> tok) ++freq[tok];
    if (freq.empty()) throw ValueError("empty corpus");

    std::vector<std::pair<std::string, int64_t>> ranked(freq.begin(), freq.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    Vocabulary v;
    for (const char* s : kSpecialForms) v.push(s);
    for (const auto& [token, count] : ranked) {
        (void)count;
        if (v.size() >= max_size) break;
        if (!v.contains(token)) v.push(token);
    }
    return v;
}

Vocabulary Vocabulary::build(const std::string& corpus, int64_t max_size) {
    std::istringstream is(corpus);
    return build(is, max_size);
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open vocabulary file: " + path);
    Vocabulary v;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        v.push(line);
    }
    if (v.size() < kNumSpecials) throw IoError("vocabulary file too short: " + path);
    for (int64_t i = 0; i < kNumSpecials; ++i)
        if (v.tokens_[static_cast<size_t>(i)] != kSpecialForms[i])
            throw IoError("vocabulary file missing special token at line " + std::to_string(i));
    return v;
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write vocabulary file: " + path);
    for (const auto& t : tokens_) out << t << "\n";
    if (!out) throw IoError("failed writing vocabulary file: " + path);
}

int64_t Vocabulary::id(const std::string& token) const {
    const auto it = ids_.find(token);
    return it == ids_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(int64_t id) const {
    if (id < 0 || id >= size())
        throw ValueError("token id " + std::to_string(id) + " out of vocabulary of size " +
                         std::to_string(size()));
    return tokens_[static_cast<size_t>(id)];
}

TokenSequence tokenize(const std::string& text, const Vocabulary& vocab, int64_t max_len) {
    const auto words = split_whitespace(text);
    if (words.size() < 3)
        throw ValueError("text has fewer than 3 tokens: \"" + text + "\"");
    std::vector<int64_t> content;
    content.reserve(words.size());
    for (const auto& w : words) content.push_back(vocab.id(w));
    if (static_cast<int64_t>(content.size()) > max_len)
        content.resize(static_cast<size_t>(max_len - 1));

    TokenSequence seq;
    seq.ids.reserve(content.size() + 2);
    seq.ids.push_back(kClsId);
    seq.ids.insert(seq.ids.end(), content.begin(), content.end());
    seq.ids.push_back(kSepId);
    seq.maskable.assign(seq.ids.size(), true);
    seq.maskable.front() = false;
    seq.maskable.back() = false;
    for (size_t i = 0; i < seq.ids.size(); ++i)
        if (seq.ids[i] == kPadId) seq.maskable[i] = false;
    return seq;
}

std::string detokenize(const TokenSequence& seq, const Vocabulary& vocab) {
    std::string out;
    for (size_t i = 0; i < seq.ids.size(); ++i) {
        const int64_t id = seq.ids[i];
        if (id == kClsId || id == kSepId || id == kPadId) continue;
        if (!out.empty()) out += ' ';
        out += vocab.token(id);
    }
    return out;
}

}  // namespace ptu
