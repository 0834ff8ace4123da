#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "ciea/synthetic.hpp"
#include "support/temp_dir.hpp"

using namespace ciea;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    os << text;
}

}  // namespace

TEST(Vocabulary, FrequencyOrderAfterReservedBlock) {
    auto v = Vocabulary::build({"a b", "a c"}, 1);
    ASSERT_EQ(v.size(), kReservedTokens + 3);
    EXPECT_EQ(*v.find("a"), kReservedTokens);
    EXPECT_EQ(*v.find("b"), kReservedTokens + 1);
    EXPECT_EQ(*v.find("c"), kReservedTokens + 2);
    EXPECT_EQ(v.token(kPadId), "<pad>");
    EXPECT_EQ(v.token(kMaskId), "<mask>");
}

TEST(Vocabulary, MinCountFilters) {
    auto v = Vocabulary::build({"a b", "a c"}, 2);
    EXPECT_EQ(v.size(), kReservedTokens + 1);
    EXPECT_TRUE(v.find("a"));
    EXPECT_FALSE(v.find("b"));
}

TEST(Vocabulary, SizeOfSyntheticCorpusEqualsDistinctWordsPlusReserved) {
    SyntheticSpec spec;
    spec.n_docs = 200;
    auto ds = gen_synthetic(spec, 3);
    std::vector<std::string> texts;
    std::set<std::string> distinct;
    for (const auto& d : ds.corpus) {
        texts.push_back(d.raw_text);
        std::istringstream is(d.raw_text);
        for (std::string w; is >> w;) distinct.insert(w);
    }
    EXPECT_EQ(Vocabulary::build(texts, 1).size(), distinct.size() + kReservedTokens);
}

TEST(Vocabulary, TokenizeLowercasesDropsUnknownAndTruncates) {
    auto v = Vocabulary::build({"a b"}, 1);
    EXPECT_EQ(v.tokenize("A b"), (TokenSequence{*v.find("a"), *v.find("b")}));
    EXPECT_TRUE(v.tokenize("x y z").empty());
    std::string long_text;
    for (int i = 0; i < 200; ++i) long_text += (i % 2 ? "b " : "a ");
    auto ids = v.tokenize(long_text, 128);
    ASSERT_EQ(ids.size(), 128u);
    for (std::size_t i = 0; i < ids.size(); ++i) EXPECT_EQ(ids[i], *v.find(i % 2 ? "b" : "a"));
}

TEST(Vocabulary, DetokenizeReturnsAdmittedSubsequence) {
    auto v = Vocabulary::build({"red bridge", "red car"}, 2);
    EXPECT_EQ(v.detokenize(v.tokenize("Red, bridge over RED water")), "red red");
}

TEST(Vocabulary, ReservedWordsInTextAreNotAdmittedAsIds) {
    auto v = Vocabulary::build({"a"}, 1);
    EXPECT_TRUE(v.tokenize("<mask> <pad>").empty());
}

TEST(Vocabulary, SaveLoadRoundTrip) {
    oracle::TempDir dir;
    auto v = Vocabulary::build({"delta alpha", "alpha"}, 1);
    v.save(dir.file("vocab.txt"));
    auto back = Vocabulary::load(dir.file("vocab.txt"));
    EXPECT_EQ(back.tokens(), v.tokens());
    write_text(dir.file("bad.txt"), "x\ny\n");
    EXPECT_THROW(Vocabulary::load(dir.file("bad.txt")), ContractError);
    EXPECT_THROW(Vocabulary::load(dir.file("missing.txt")), IoError);
}

TEST(Corpus, TextOnlyAndMultimodalLines) {
    oracle::TempDir dir;
    write_text(dir.file("c.jsonl"),
               "{\"id\":\"d1\",\"text\":\"red bridge\"}\n"
               "{\"id\":\"d2\",\"text\":\"x\",\"patches\":[[1,2,3,4,5,6,7,8],[1,2,3,4,5,6,7,8],[0,0,0,0,0,0,0,0],[1,1,1,1,1,1,1,1]]}\n");
    auto docs = load_corpus(dir.file("c.jsonl"));
    ASSERT_EQ(docs.size(), 2u);
    EXPECT_FALSE(docs[0].multimodal());
    EXPECT_EQ(docs[0].raw_text, "red bridge");
    ASSERT_TRUE(docs[1].multimodal());
    EXPECT_EQ(docs[1].patches->rows, 4u);
    EXPECT_EQ(docs[1].patches->cols, 8u);
}

TEST(Corpus, DuplicateIdIsReferentialErrorNamingTheId) {
    oracle::TempDir dir;
    write_text(dir.file("c.jsonl"), "{\"id\":\"d1\",\"text\":\"a\"}\n{\"id\":\"d1\",\"text\":\"b\"}\n");
    try {
        load_corpus(dir.file("c.jsonl"));
        FAIL() << "expected ReferentialError";
    } catch (const ReferentialError& e) {
        EXPECT_NE(std::string(e.what()).find("d1"), std::string::npos);
    }
}

TEST(Corpus, MalformedLinesReportLineNumbers) {
    oracle::TempDir dir;
    write_text(dir.file("c.jsonl"), "{\"id\":\"d1\",\"text\":\"a\"}\n{not json\n");
    try {
        load_corpus(dir.file("c.jsonl"));
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
    write_text(dir.file("ragged.jsonl"), "{\"id\":\"d1\",\"patches\":[[1,2],[3]]}\n");
    EXPECT_THROW(load_corpus(dir.file("ragged.jsonl")), ParseError);
    write_text(dir.file("empty.jsonl"), "{\"id\":\"d1\"}\n");
    EXPECT_THROW(load_corpus(dir.file("empty.jsonl")), ParseError);
    EXPECT_THROW(load_corpus(dir.file("absent.jsonl")), IoError);
}

TEST(Queries, PositivesMustBeNonEmptyAndKnown) {
    oracle::TempDir dir;
    write_text(dir.file("q.jsonl"), "{\"qid\":\"q1\",\"text\":\"a\",\"positives\":[]}\n");
    EXPECT_THROW(load_queries(dir.file("q.jsonl")), ParseError);
    write_text(dir.file("q.jsonl"), "{\"qid\":\"q1\",\"text\":\"a\",\"positives\":[\"d9\"]}\n");
    auto qs = load_queries(dir.file("q.jsonl"));
    std::vector<Document> corpus{{"d1", "a", {}, std::nullopt}};
    EXPECT_THROW(validate_references(qs, corpus), ReferentialError);
}

TEST(Qrels, RoundTripAndMalformedLine) {
    oracle::TempDir dir;
    Qrels q{{"q1", {"d1", "d2"}}, {"q2", {"d3"}}};
    save_qrels(q, dir.file("qrels.tsv"));
    EXPECT_EQ(load_qrels(dir.file("qrels.tsv")), q);
    write_text(dir.file("bad.tsv"), "q1 d1\n");
    EXPECT_THROW(load_qrels(dir.file("bad.tsv")), ParseError);
}

TEST(Corpus, SaveLoadRoundTripKeepsPatchesExactly) {
    oracle::TempDir dir;
    SyntheticSpec spec;
    spec.n_docs = 40;
    spec.text_only_fraction = 0.3;
    auto ds = gen_synthetic(spec, 5);
    save_corpus(ds.corpus, dir.file("c.jsonl"));
    save_queries(ds.queries, dir.file("q.jsonl"));
    auto docs = load_corpus(dir.file("c.jsonl"));
    auto qs = load_queries(dir.file("q.jsonl"));
    ASSERT_EQ(docs.size(), ds.corpus.size());
    for (std::size_t i = 0; i < docs.size(); ++i) {
        EXPECT_EQ(docs[i].id, ds.corpus[i].id);
        EXPECT_EQ(docs[i].raw_text, ds.corpus[i].raw_text);
        ASSERT_EQ(docs[i].multimodal(), ds.corpus[i].multimodal());
        if (docs[i].multimodal()) EXPECT_EQ(docs[i].patches->values, ds.corpus[i].patches->values);
    }
    ASSERT_EQ(qs.size(), ds.queries.size());
    for (std::size_t i = 0; i < qs.size(); ++i) EXPECT_EQ(qs[i].positives, ds.queries[i].positives);
}

namespace {

std::set<std::string> words(const std::string& text) {
    std::set<std::string> out;
    std::istringstream is(text);
    for (std::string w; is >> w;) out.insert(w);
    return out;
}

}  // namespace

TEST(Synthetic, NoComplementaryQueriesAreAnswerableFromCaptions) {
    SyntheticSpec spec;
    spec.n_docs = 200;
    spec.complementary_fraction = 0.0;
    auto ds = gen_synthetic(spec, 7);
    for (std::size_t i = 0; i < ds.queries.size(); ++i) {
        EXPECT_FALSE(ds.complementary[i]);
        const auto caption = words(ds.corpus[i].raw_text);
        for (const auto& w : words(ds.queries[i].raw_text)) EXPECT_TRUE(caption.count(w)) << ds.queries[i].qid << " " << w;
    }
}

TEST(Synthetic, AllComplementaryQueriesNeedAPatchOnlyWord) {
    SyntheticSpec spec;
    spec.n_docs = 200;
    spec.complementary_fraction = 1.0;
    auto ds = gen_synthetic(spec, 7);
    for (std::size_t i = 0; i < ds.queries.size(); ++i) {
        EXPECT_TRUE(ds.complementary[i]);
        ASSERT_TRUE(ds.corpus[i].multimodal());
        const auto caption = words(ds.corpus[i].raw_text);
        std::size_t missing = 0;
        for (const auto& w : words(ds.queries[i].raw_text)) missing += caption.count(w) ? 0 : 1;
        EXPECT_EQ(missing, 1u) << ds.queries[i].qid;
    }
}

TEST(Synthetic, CaptionAloneCannotSeparateAComplementaryPositiveFromItsGroup) {
    SyntheticSpec spec;
    spec.n_docs = 100;
    spec.complementary_fraction = 1.0;
    auto ds = gen_synthetic(spec, 9);
    auto overlap = [](const std::set<std::string>& q, const std::string& text) {
        std::size_t n = 0;
        for (const auto& w : words(text)) n += q.count(w);
        return n;
    };
    for (std::size_t i = 0; i < ds.queries.size(); ++i) {
        const auto q = words(ds.queries[i].raw_text);
        const std::size_t own = overlap(q, ds.corpus[i].raw_text);
        std::size_t ties = 0;
        for (const auto& d : ds.corpus) {
            const std::size_t o = overlap(q, d.raw_text);
            EXPECT_LE(o, own);
            ties += o == own ? 1 : 0;
        }
        EXPECT_GE(ties, spec.group_size) << ds.queries[i].qid;
    }
}

TEST(Synthetic, SameSeedGivesByteIdenticalFiles) {
    oracle::TempDir dir;
    SyntheticSpec spec;
    spec.n_docs = 120;
    for (const char* tag : {"a", "b"}) {
        auto ds = gen_synthetic(spec, 7);
        save_corpus(ds.corpus, dir.file(std::string(tag) + ".jsonl"));
        save_qrels(ds.qrels, dir.file(std::string(tag) + ".tsv"));
    }
    EXPECT_EQ(slurp(dir.file("a.jsonl")), slurp(dir.file("b.jsonl")));
    EXPECT_EQ(slurp(dir.file("a.tsv")), slurp(dir.file("b.tsv")));
    auto other = gen_synthetic(spec, 8);
    save_corpus(other.corpus, dir.file("c.jsonl"));
    EXPECT_NE(slurp(dir.file("a.jsonl")), slurp(dir.file("c.jsonl")));
}

TEST(Synthetic, RejectsImpossibleSpecs) {
    SyntheticSpec spec;
    spec.complementary_fraction = 1.5;
    EXPECT_THROW(gen_synthetic(spec, 1), ContractError);
    spec = {};
    spec.patches_per_doc = 2;
    EXPECT_THROW(gen_synthetic(spec, 1), ContractError);
    spec = {};
    spec.n_docs = 100000;
    EXPECT_THROW(gen_synthetic(spec, 1), ContractError);
}
