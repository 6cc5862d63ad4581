#ifndef RISKRANK_CORPUS_HPP
#define RISKRANK_CORPUS_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "riskrank/riskmeasures.hpp"

namespace riskrank::corpus {

// Fixed special token ids. All other ids are dense above them.
inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kClsId = 1;
inline constexpr std::int32_t kSepId = 2;
inline constexpr std::int32_t kUnkId = 3;
inline constexpr std::int32_t kNumSpecialIds = 4;

// Lowercases and splits raw text into sentences of tokens. Sentences end at
// '.', '!' or '?'; tokens are maximal alphanumeric runs, with every other
// non-space character kept as its own single-character token.
std::vector<std::vector<std::string>> split_sentences(const std::string& text);

bool is_punctuation_token(const std::string& token);

// The fixed built-in English stopword list used for explanation filtering.
const std::unordered_set<std::string>& english_stopwords();

class Vocabulary {
public:
    Vocabulary() = default;

    // Deterministic construction: lowercase word tokens with frequency >=
    // min_count, ordered by (frequency desc, lexicographic asc) after the
    // four special ids.
    static Vocabulary build(const std::vector<std::string>& training_documents,
                            std::size_t min_count);

    std::int32_t id_of(const std::string& token) const {
        auto it = token_to_id_.find(token);
        return it == token_to_id_.end() ? kUnkId : it->second;
    }

    const std::string& token_of(std::int32_t id) const { return id_to_token_.at(static_cast<std::size_t>(id)); }

    std::size_t size() const { return id_to_token_.size(); }

    bool is_special(std::int32_t id) const { return id < kNumSpecialIds; }

    bool is_stopword(const std::string& token) const {
        return english_stopwords().count(token) > 0;
    }

    // FNV-1a over the id-ordered token list; keys encoded-corpus caches and
    // the run manifest.
    std::uint64_t hash() const;

    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

private:
    std::unordered_map<std::string, std::int32_t> token_to_id_;
    std::vector<std::string> id_to_token_;
};

// A document as an L x l grid of token ids with sentence and token masks.
struct EncodedDocument {
    std::string doc_id;
    int year = 0;
    int max_sentences = 0; // L
    int max_tokens = 0;    // l
    std::vector<std::int32_t> token_ids;  // L*l, row-major
    std::vector<std::uint8_t> token_mask; // L*l
    std::vector<std::uint8_t> sentence_mask; // L
    std::optional<riskmeasures::RiskLabel> label;

    std::int32_t id_at(int s, int t) const { return token_ids[static_cast<std::size_t>(s) * max_tokens + t]; }
    bool token_on(int s, int t) const { return token_mask[static_cast<std::size_t>(s) * max_tokens + t] != 0; }
    bool sentence_on(int s) const { return sentence_mask[static_cast<std::size_t>(s)] != 0; }
    int unmasked_sentence_count() const;
};

// Encodes a raw document into the fixed L x l grid: each sentence becomes
// [CLS, tokens..., SEP] truncated to l (SEP keeps the final position) and
// padded with PAD; the document is truncated or padded to L sentence rows.
EncodedDocument encode_document(const std::string& text, const Vocabulary& vocab,
                                int max_sentences = 350, int max_tokens = 40);

struct RawDocument {
    std::string doc_id;
    int year = 0;
    std::string text;
};

// JSON-lines ingestion: one {"doc_id": str, "year": int, "text": str} per line.
std::vector<RawDocument> load_jsonl(const std::string& path);
void save_jsonl(const std::vector<RawDocument>& docs, const std::string& path);

// Versioned binary cache of an encoded corpus, keyed by vocabulary hash.
void save_encoded_corpus(const std::vector<EncodedDocument>& docs, std::uint64_t vocab_hash,
                         const std::string& path);
std::vector<EncodedDocument> load_encoded_corpus(const std::string& path, std::uint64_t vocab_hash);

} // namespace riskrank::corpus

#endif
