#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "riskrank/corpus.hpp"
#include "riskrank/errors.hpp"

using namespace riskrank;
using namespace riskrank::corpus;

TEST_CASE("sentence splitting and tokenization") {
    const auto sentences = split_sentences("The firm GREW 5% this year! Costs fell.");
    REQUIRE(sentences.size() == 2);
    CHECK(sentences[0] ==
          std::vector<std::string>{"the", "firm", "grew", "5", "%", "this", "year", "!"});
    CHECK(sentences[1] == std::vector<std::string>{"costs", "fell", "."});

    CHECK(split_sentences("").empty());
    CHECK(split_sentences("   \n\t ").empty());
    // Trailing text without sentence-final punctuation still forms a sentence.
    CHECK(split_sentences("no terminator here").size() == 1);
}

TEST_CASE("vocabulary build ordering and determinism") {
    const Vocabulary vocab = Vocabulary::build({"a a b"}, 1);
    // Frequency desc, then lexicographic; specials own ids 0-3.
    CHECK(vocab.id_of("a") == 4);
    CHECK(vocab.id_of("b") == 5);
    CHECK(vocab.size() == 6);
    CHECK(vocab.token_of(kPadId) == "[PAD]");
    CHECK(vocab.token_of(kClsId) == "[CLS]");
    CHECK(vocab.token_of(kSepId) == "[SEP]");
    CHECK(vocab.token_of(kUnkId) == "[UNK]");

    const Vocabulary filtered = Vocabulary::build({"a b"}, 2);
    CHECK(filtered.size() == 4);
    CHECK(filtered.id_of("a") == kUnkId);

    const Vocabulary again = Vocabulary::build({"a a b"}, 1);
    CHECK(again.hash() == vocab.hash());

    CHECK_THROWS_AS(Vocabulary::build({}, 1), Error);
    CHECK_THROWS_AS(Vocabulary::build({"", "  "}, 1), Error);
}

TEST_CASE("vocabulary save/load round-trip") {
    const Vocabulary vocab = Vocabulary::build({"alpha beta beta gamma. delta!"}, 1);
    const std::string path = (std::filesystem::temp_directory_path() / "rr_vocab.txt").string();
    vocab.save(path);
    const Vocabulary loaded = Vocabulary::load(path);
    CHECK(loaded.hash() == vocab.hash());
    CHECK(loaded.id_of("beta") == vocab.id_of("beta"));
    std::filesystem::remove(path);
}

TEST_CASE("encode_document layout") {
    const Vocabulary vocab = Vocabulary::build({"w1 w2 w3 w4 w5 w6 w7 w8"}, 1);

    SUBCASE("empty text yields all-PAD grid") {
        const EncodedDocument doc = encode_document("", vocab, 5, 8);
        CHECK(doc.unmasked_sentence_count() == 0);
        for (auto m : doc.token_mask) CHECK(m == 0);
        for (auto id : doc.token_ids) CHECK(id == kPadId);
    }

    SUBCASE("single short sentence: CLS tokens SEP then PAD") {
        const EncodedDocument doc = encode_document("w1 w2 w3", vocab, 5, 40);
        CHECK(doc.sentence_on(0));
        CHECK(doc.id_at(0, 0) == kClsId);
        CHECK(doc.id_at(0, 1) == vocab.id_of("w1"));
        CHECK(doc.id_at(0, 2) == vocab.id_of("w2"));
        CHECK(doc.id_at(0, 3) == vocab.id_of("w3"));
        CHECK(doc.id_at(0, 4) == kSepId);
        for (int t = 5; t < 40; ++t) {
            CHECK(doc.id_at(0, t) == kPadId);
            CHECK_FALSE(doc.token_on(0, t));
        }
        for (int t = 0; t < 5; ++t) CHECK(doc.token_on(0, t));
    }

    SUBCASE("long sentence truncates with SEP in the final slot") {
        std::string text;
        for (int i = 0; i < 60; ++i) text += "w1 ";
        const EncodedDocument doc = encode_document(text, vocab, 5, 40);
        for (int t = 0; t < 40; ++t) CHECK(doc.token_on(0, t));
        CHECK(doc.id_at(0, 0) == kClsId);
        CHECK(doc.id_at(0, 39) == kSepId);
        for (int t = 1; t < 39; ++t) CHECK(doc.id_at(0, t) == vocab.id_of("w1"));
    }

    SUBCASE("document truncates to L sentences") {
        std::string text;
        for (int i = 0; i < 9; ++i) text += "w1 w2. ";
        const EncodedDocument doc = encode_document(text, vocab, 4, 8);
        CHECK(doc.unmasked_sentence_count() == 4);
    }

    SUBCASE("unknown words map to UNK") {
        const EncodedDocument doc = encode_document("zzz w1", vocab, 2, 8);
        CHECK(doc.id_at(0, 1) == kUnkId);
        CHECK(doc.id_at(0, 2) == vocab.id_of("w1"));
    }
}

TEST_CASE("round-trip of an untruncated sentence") {
    const Vocabulary vocab = Vocabulary::build({"profits rose sharply. margins were stable."}, 1);
    const std::string text = "Profits rose sharply.";
    const EncodedDocument doc = encode_document(text, vocab, 4, 16);
    const auto expected = split_sentences(text);
    std::vector<std::string> decoded;
    for (int t = 0; t < doc.max_tokens; ++t) {
        const auto id = doc.id_at(0, t);
        if (id >= kNumSpecialIds) decoded.push_back(vocab.token_of(id));
    }
    CHECK(decoded == expected[0]);
}

TEST_CASE("encoded corpus cache round-trip keyed by vocab hash") {
    const Vocabulary vocab = Vocabulary::build({"w1 w2 w3. w4 w5."}, 1);
    std::vector<EncodedDocument> docs;
    EncodedDocument doc = encode_document("w1 w2. w4 w5.", vocab, 3, 8);
    doc.doc_id = "d1";
    doc.year = 2020;
    docs.push_back(doc);

    const std::string path = (std::filesystem::temp_directory_path() / "rr_corpus.bin").string();
    save_encoded_corpus(docs, vocab.hash(), path);
    const auto loaded = load_encoded_corpus(path, vocab.hash());
    REQUIRE(loaded.size() == 1);
    CHECK(loaded[0].doc_id == "d1");
    CHECK(loaded[0].year == 2020);
    CHECK(loaded[0].token_ids == doc.token_ids);
    CHECK(loaded[0].token_mask == doc.token_mask);
    CHECK(loaded[0].sentence_mask == doc.sentence_mask);

    CHECK_THROWS_AS(load_encoded_corpus(path, vocab.hash() + 1), Error);
    std::filesystem::remove(path);
}

TEST_CASE("jsonl ingestion") {
    const std::string path = (std::filesystem::temp_directory_path() / "rr_docs.jsonl").string();
    save_jsonl({{"a", 2020, "text one."}, {"b", 2021, "text two."}}, path);
    const auto docs = load_jsonl(path);
    REQUIRE(docs.size() == 2);
    CHECK(docs[0].doc_id == "a");
    CHECK(docs[1].year == 2021);
    std::filesystem::remove(path);
}

TEST_CASE("stopwords and punctuation helpers") {
    CHECK(english_stopwords().count("the") == 1);
    CHECK(english_stopwords().count("profit") == 0);
    CHECK(is_punctuation_token("."));
    CHECK(is_punctuation_token("%"));
    CHECK_FALSE(is_punctuation_token("a1"));
    CHECK_FALSE(is_punctuation_token("profit"));
}
