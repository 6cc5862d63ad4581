#include "riskrank/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "riskrank/errors.hpp"

namespace riskrank::corpus {

namespace {

bool is_word_char(unsigned char c) { return std::isalnum(c) != 0; }
bool is_sentence_end(char c) { return c == '.' || c == '!' || c == '?'; }

} // namespace

std::vector<std::vector<std::string>> split_sentences(const std::string& text) {
    std::vector<std::vector<std::string>> sentences;
    std::vector<std::string> current;
    std::string word;

    auto flush_word = [&] {
        if (!word.empty()) {
            current.push_back(word);
            word.clear();
        }
    };
    auto flush_sentence = [&] {
        flush_word();
        if (!current.empty()) {
            sentences.push_back(std::move(current));
            current.clear();
        }
    };

    for (char raw : text) {
        const auto c = static_cast<unsigned char>(raw);
        if (is_word_char(c)) {
            word.push_back(static_cast<char>(std::tolower(c)));
        } else if (std::isspace(c)) {
            flush_word();
        } else {
            flush_word();
            current.emplace_back(1, raw);
            if (is_sentence_end(raw)) flush_sentence();
        }
    }
    flush_sentence();
    return sentences;
}

bool is_punctuation_token(const std::string& token) {
    if (token.empty()) return false;
    return std::none_of(token.begin(), token.end(),
                        [](unsigned char c) { return std::isalnum(c) != 0; });
}

const std::unordered_set<std::string>& english_stopwords() {
    static const std::unordered_set<std::string> words = {
        "a", "about", "above", "after", "again", "against", "all", "am", "an", "and", "any",
        "are", "as", "at", "be", "because", "been", "before", "being", "below", "between",
        "both", "but", "by", "can", "could", "did", "do", "does", "doing", "down", "during",
        "each", "few", "for", "from", "further", "had", "has", "have", "having", "he", "her",
        "here", "hers", "herself", "him", "himself", "his", "how", "i", "if", "in", "into",
        "is", "it", "its", "itself", "just", "me", "more", "most", "my", "myself", "no",
        "nor", "not", "now", "of", "off", "on", "once", "only", "or", "other", "our", "ours",
        "ourselves", "out", "over", "own", "same", "she", "should", "so", "some", "such",
        "than", "that", "the", "their", "theirs", "them", "themselves", "then", "there",
        "these", "they", "this", "those", "through", "to", "too", "under", "until", "up",
        "very", "was", "we", "were", "what", "when", "where", "which", "while", "who",
        "whom", "why", "will", "with", "would", "you", "your", "yours", "yourself",
        "yourselves",
    };
    return words;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& training_documents,
                             std::size_t min_count) {
    if (training_documents.empty()) {
        throw Error(ErrorKind::EmptyCorpus, "cannot build a vocabulary from an empty corpus");
    }

    std::map<std::string, std::size_t> counts;
    bool any_token = false;
    for (const std::string& doc : training_documents) {
        for (const auto& sentence : split_sentences(doc)) {
            for (const auto& token : sentence) {
                ++counts[token];
                any_token = true;
            }
        }
    }
    if (!any_token) {
        throw Error(ErrorKind::EmptyCorpus, "corpus contains no tokens");
    }

    std::vector<std::pair<std::string, std::size_t>> kept;
    for (const auto& [token, count] : counts) {
        if (count >= min_count) kept.emplace_back(token, count);
    }
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    Vocabulary vocab;
    vocab.id_to_token_ = {"[PAD]", "[CLS]", "[SEP]", "[UNK]"};
    for (const auto& [token, count] : kept) {
        (void)count;
        vocab.token_to_id_.emplace(token, static_cast<std::int32_t>(vocab.id_to_token_.size()));
        vocab.id_to_token_.push_back(token);
    }
    return vocab;
}

std::uint64_t Vocabulary::hash() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const std::string& s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ull;
        }
        h ^= 0xff;
        h *= 1099511628211ull;
    };
    for (const auto& token : id_to_token_) mix(token);
    return h;
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::IoError, "cannot write vocabulary to " + path);
    out << "riskrank-vocab v1\n";
    for (std::size_t i = kNumSpecialIds; i < id_to_token_.size(); ++i) {
        out << id_to_token_[i] << "\n";
    }
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoError, "cannot read vocabulary from " + path);
    std::string header;
    std::getline(in, header);
    if (header != "riskrank-vocab v1") {
        throw Error(ErrorKind::IoError, "unrecognized vocabulary header in " + path);
    }
    Vocabulary vocab;
    vocab.id_to_token_ = {"[PAD]", "[CLS]", "[SEP]", "[UNK]"};
    std::string token;
    while (std::getline(in, token)) {
        if (token.empty()) continue;
        vocab.token_to_id_.emplace(token, static_cast<std::int32_t>(vocab.id_to_token_.size()));
        vocab.id_to_token_.push_back(token);
    }
    return vocab;
}

int EncodedDocument::unmasked_sentence_count() const {
    int n = 0;
    for (std::uint8_t m : sentence_mask) n += m != 0 ? 1 : 0;
    return n;
}

EncodedDocument encode_document(const std::string& text, const Vocabulary& vocab,
                                int max_sentences, int max_tokens) {
    if (max_sentences < 1 || max_tokens < 3) {
        throw Error(ErrorKind::InputShapeError, "grid must allow at least [CLS, token, SEP]");
    }

    EncodedDocument doc;
    doc.max_sentences = max_sentences;
    doc.max_tokens = max_tokens;
    doc.token_ids.assign(static_cast<std::size_t>(max_sentences) * max_tokens, kPadId);
    doc.token_mask.assign(static_cast<std::size_t>(max_sentences) * max_tokens, 0);
    doc.sentence_mask.assign(static_cast<std::size_t>(max_sentences), 0);

    const auto sentences = split_sentences(text);
    const int rows = std::min<int>(max_sentences, static_cast<int>(sentences.size()));
    for (int s = 0; s < rows; ++s) {
        const auto& words = sentences[static_cast<std::size_t>(s)];
        // Prefix truncation: keep the first l-2 tokens, SEP takes the last slot.
        const int kept = std::min<int>(static_cast<int>(words.size()), max_tokens - 2);
        const std::size_t base = static_cast<std::size_t>(s) * max_tokens;
        doc.token_ids[base] = kClsId;
        doc.token_mask[base] = 1;
        for (int t = 0; t < kept; ++t) {
            doc.token_ids[base + 1 + t] = vocab.id_of(words[static_cast<std::size_t>(t)]);
            doc.token_mask[base + 1 + t] = 1;
        }
        doc.token_ids[base + 1 + kept] = kSepId;
        doc.token_mask[base + 1 + kept] = 1;
        doc.sentence_mask[static_cast<std::size_t>(s)] = 1;
    }
    return doc;
}

std::vector<RawDocument> load_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot open corpus file " + path);
    std::vector<RawDocument> docs;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("doc_id") || !j.contains("year") || !j.contains("text")) {
            throw Error(ErrorKind::IoError,
                        path + ":" + std::to_string(lineno) + ": expected {doc_id, year, text}");
        }
        RawDocument doc;
        doc.doc_id = j.at("doc_id").get<std::string>();
        doc.year = j.at("year").get<int>();
        doc.text = j.at("text").get<std::string>();
        docs.push_back(std::move(doc));
    }
    return docs;
}

void save_jsonl(const std::vector<RawDocument>& docs, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::IoError, "cannot write corpus file " + path);
    for (const auto& doc : docs) {
        nlohmann::json j;
        j["doc_id"] = doc.doc_id;
        j["year"] = doc.year;
        j["text"] = doc.text;
        out << j.dump() << "\n";
    }
}

namespace {

constexpr char kCorpusMagic[8] = {'R', 'R', 'E', 'N', 'C', 'v', '0', '1'};

template <typename T>
void write_pod(std::ostream& out, const T& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    return value;
}

void write_string(std::ostream& out, const std::string& s) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
    const auto n = read_pod<std::uint32_t>(in);
    std::string s(n, '\0');
    in.read(s.data(), n);
    return s;
}

} // namespace

void save_encoded_corpus(const std::vector<EncodedDocument>& docs, std::uint64_t vocab_hash,
                         const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::IoError, "cannot write encoded corpus to " + path);
    out.write(kCorpusMagic, sizeof(kCorpusMagic));
    write_pod<std::uint64_t>(out, vocab_hash);
    write_pod<std::uint64_t>(out, docs.size());
    for (const auto& doc : docs) {
        write_string(out, doc.doc_id);
        write_pod<std::int32_t>(out, doc.year);
        write_pod<std::int32_t>(out, doc.max_sentences);
        write_pod<std::int32_t>(out, doc.max_tokens);
        out.write(reinterpret_cast<const char*>(doc.token_ids.data()),
                  static_cast<std::streamsize>(doc.token_ids.size() * sizeof(std::int32_t)));
        out.write(reinterpret_cast<const char*>(doc.token_mask.data()),
                  static_cast<std::streamsize>(doc.token_mask.size()));
        out.write(reinterpret_cast<const char*>(doc.sentence_mask.data()),
                  static_cast<std::streamsize>(doc.sentence_mask.size()));
    }
}

std::vector<EncodedDocument> load_encoded_corpus(const std::string& path, std::uint64_t vocab_hash) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoError, "cannot read encoded corpus from " + path);
    char magic[sizeof(kCorpusMagic)] = {};
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCorpusMagic, sizeof(magic)) != 0) {
        throw Error(ErrorKind::IoError, "unrecognized encoded-corpus header in " + path);
    }
    const auto stored_hash = read_pod<std::uint64_t>(in);
    if (stored_hash != vocab_hash) {
        throw Error(ErrorKind::IoError, "encoded corpus was built with a different vocabulary");
    }
    const auto count = read_pod<std::uint64_t>(in);
    std::vector<EncodedDocument> docs;
    docs.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        EncodedDocument doc;
        doc.doc_id = read_string(in);
        doc.year = read_pod<std::int32_t>(in);
        doc.max_sentences = read_pod<std::int32_t>(in);
        doc.max_tokens = read_pod<std::int32_t>(in);
        const std::size_t cells = static_cast<std::size_t>(doc.max_sentences) * doc.max_tokens;
        doc.token_ids.resize(cells);
        doc.token_mask.resize(cells);
        doc.sentence_mask.resize(static_cast<std::size_t>(doc.max_sentences));
        in.read(reinterpret_cast<char*>(doc.token_ids.data()),
                static_cast<std::streamsize>(cells * sizeof(std::int32_t)));
        in.read(reinterpret_cast<char*>(doc.token_mask.data()), static_cast<std::streamsize>(cells));
        in.read(reinterpret_cast<char*>(doc.sentence_mask.data()),
                static_cast<std::streamsize>(doc.max_sentences));
        if (!in) throw Error(ErrorKind::IoError, "truncated encoded corpus in " + path);
        docs.push_back(std::move(doc));
    }
    return docs;
}

} // namespace riskrank::corpus
