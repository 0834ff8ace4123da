#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "ciea/document_encoder.hpp"
#include "support/finite_difference.hpp"
#include "support/fixtures.hpp"
#include "support/temp_dir.hpp"

using namespace ciea;

namespace {

EncoderParams tiny_encoder(std::size_t layers, std::uint64_t seed = 1) {
    auto cfg = oracle::tiny_model_config(12).encoder;
    cfg.layers = layers;
    std::mt19937_64 rng(seed);
    return EncoderParams::init(cfg, rng);
}

void zero_positions(EncoderParams& p) {
    for (double& x : p.position_embedding.mutable_values()) x = 0.0;
}

std::vector<double> row_of(const Tensor& t, std::size_t r) {
    std::vector<double> out;
    for (std::size_t c = 0; c < t.cols(); ++c) out.push_back(t.at(r, c));
    return out;
}

double norm(const Tensor& t) {
    double s = 0.0;
    for (double x : t.values()) s += x * x;
    return std::sqrt(s);
}

Tensor fixed_direction(std::size_t d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return random_param(rng, {d}, 1.0).clone(false);
}

}  // namespace

TEST(Embed, SingleTokenWithZeroPositionsIsItsRow) {
    auto p = tiny_encoder(1);
    zero_positions(p);
    Tape tape;
    const TokenSequence tok{7};
    Tensor e = embed(tape, tok, p);
    EXPECT_EQ(e.shape(), (Shape{1, 8}));
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(e.at(0, c), p.token_embedding.at(7, c));
    const TokenSequence two{4, 5};
    EXPECT_EQ(embed(tape, two, p).shape(), (Shape{2, 8}));
}

TEST(Embed, PerturbingOneRowChangesOnlyItsOccurrences) {
    auto p = tiny_encoder(1);
    const TokenSequence seq{4, 6, 5, 6, 7};
    Tape tape;
    Tensor before = embed(tape, seq, p).clone(false);
    p.token_embedding.mutable_values()[6 * 8 + 3] += 0.25;
    Tensor after = embed(tape, seq, p);
    for (std::size_t r = 0; r < seq.size(); ++r)
        for (std::size_t c = 0; c < 8; ++c) {
            const bool touched = seq[r] == 6 && c == 3;
            EXPECT_EQ(after.at(r, c) != before.at(r, c), touched) << r << "," << c;
        }
}

TEST(Embed, SequenceLongerThanPositionalTableIsRejected) {
    auto p = tiny_encoder(1);
    Tape tape;
    const TokenSequence seq(17, 4);
    EXPECT_THROW(embed(tape, seq, p), ContractError);
}

TEST(Trans, NoBlocksIsIdentity) {
    auto p = tiny_encoder(0);
    std::mt19937_64 rng(2);
    Tensor x = random_param(rng, {5, 8}, 1.0).clone(false);
    Tape tape;
    Tensor y = trans(tape, x, std::vector<bool>(5, false), p);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y.at(i), x.at(i));
}

TEST(Trans, AllPadGivesZeros) {
    auto p = tiny_encoder(2);
    std::mt19937_64 rng(3);
    Tensor x = random_param(rng, {4, 8}, 1.0).clone(false);
    Tape tape;
    Tensor y = trans(tape, x, std::vector<bool>(4, true), p);
    for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(Trans, PadPositionsDoNotInfluenceOthers) {
    auto p = tiny_encoder(2);
    std::mt19937_64 rng(4);
    Tensor x = random_param(rng, {4, 8}, 1.0).clone(false);
    Tensor x2 = x.clone(false);
    for (std::size_t c = 0; c < 8; ++c) x2.mutable_values()[3 * 8 + c] += 5.0;
    const std::vector<bool> pad{false, false, false, true};
    Tape tape;
    Tensor a = trans(tape, x, pad, p), b = trans(tape, x2, pad, p);
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(a.at(r, c), b.at(r, c));
}

TEST(Trans, PermutationEquivariantWithoutPositions) {
    auto p = tiny_encoder(2);
    std::mt19937_64 rng(5);
    Tensor x = random_param(rng, {4, 8}, 1.0).clone(false);
    std::vector<double> swapped(x.values().begin(), x.values().end());
    for (std::size_t c = 0; c < 8; ++c) std::swap(swapped[1 * 8 + c], swapped[3 * 8 + c]);
    Tape tape;
    Tensor a = trans(tape, x, std::vector<bool>(4, false), p);
    Tensor b = trans(tape, Tensor::matrix(4, 8, swapped), std::vector<bool>(4, false), p);
    const std::size_t perm[] = {0, 3, 2, 1};
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(b.at(r, c), a.at(perm[r], c), 1e-12);
}

TEST(EncodeQuery, UnitNormAndDeterministic) {
    auto p = tiny_encoder(2);
    const TokenSequence q{4, 9, 5};
    Tape t1, t2;
    Tensor a = encode_query(t1, q, p).vector, b = encode_query(t2, q, p).vector;
    EXPECT_NEAR(norm(a), 1.0, 1e-9);
    EXPECT_EQ(row_of(reshape(t1, a, {1, 8}), 0), row_of(reshape(t2, b, {1, 8}), 0));
    EXPECT_THROW(encode_query(t1, TokenSequence{}, p), ContractError);
}

TEST(EncodeQuery, PoolsTheStartPosition) {
    auto p = tiny_encoder(2);
    const TokenSequence q{4, 9, 5};
    Tape tape;
    const TokenSequence seq{kStartId, 4, 9, 5};
    Tensor h = trans(tape, embed(tape, seq, p), pad_positions(seq), p);
    Tensor first = normalize_rows(tape, slice_rows(tape, h, 0, 1));
    Tensor rep = encode_query(tape, q, p).vector;
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(rep.at(c), first.at(0, c));
}

TEST(EncodeQuery, OverlongQueryIsTruncatedToTheTable) {
    auto p = tiny_encoder(1);
    TokenSequence longq(40, 6);
    TokenSequence cut(15, 6);
    Tape tape;
    Tensor a = encode_query(tape, longq, p).vector, b = encode_query(tape, cut, p).vector;
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(a.at(c), b.at(c));
}

TEST(EncodeQuery, GradientMatchesFiniteDifferences) {
    auto p = tiny_encoder(2, 6);
    const TokenSequence q{4, 9, 5, 4};
    Tensor dir = fixed_direction(8, 7);
    ParamList params;
    p.collect(params);
    auto r = oracle::check_scalar_fn(params, [&](Tape& t) { return cosine(t, encode_query(t, q, p).vector, dir); },
                                     1e-5, 1e-6);
    EXPECT_LT(r.worst_relative, 1e-4) << r.worst_param;
}

TEST(Featurize, ZeroPatchWithZeroBiasIsZero) {
    auto frozen = FrozenVisualParams::from(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}), Tensor::vector({0, 0, 0}));
    PatchGrid g{2, 2, {0, 0, 1, 1}};
    Tensor f = featurize(g, frozen);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(f.at(0, c), 0.0);
    EXPECT_NEAR(f.at(1, 0), std::tanh(5.0), 1e-15);
    EXPECT_FALSE(f.requires_grad());
}

TEST(Featurize, IdenticalPatchesGiveIdenticalRows) {
    auto frozen = FrozenVisualParams::make({4, 6, 99});
    PatchGrid g{2, 4, {0.3, -1, 2, 0.5, 0.3, -1, 2, 0.5}};
    Tensor f = featurize(g, frozen);
    EXPECT_EQ(row_of(f, 0), row_of(f, 1));
}

TEST(Featurize, WidthMismatchIsRejected) {
    auto frozen = FrozenVisualParams::make({4, 6, 99});
    PatchGrid g{1, 3, {1, 2, 3}};
    EXPECT_THROW(featurize(g, frozen), ContractError);
}

TEST(Featurize, SameSeedSameWeights) {
    EXPECT_EQ(FrozenVisualParams::make({4, 6, 99}).fingerprint(), FrozenVisualParams::make({4, 6, 99}).fingerprint());
    EXPECT_NE(FrozenVisualParams::make({4, 6, 99}).fingerprint(), FrozenVisualParams::make({4, 6, 98}).fingerprint());
}

TEST(Project, IdentityWeightsPassThrough) {
    std::vector<double> eye(9, 0.0);
    for (std::size_t i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
    Projector proj{Tensor::matrix(3, 3, eye, true), Tensor::zeros({3}, true)};
    Tensor x = Tensor::matrix(2, 3, {1, -2, 3, 0.5, 0, 4});
    Tape tape;
    Tensor y = project(tape, x, proj);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(y.at(i), x.at(i));
}

TEST(Project, ShapeAndGradient) {
    std::mt19937_64 rng(8);
    auto proj = Projector::init(10, 32, rng);
    Tensor x = random_param(rng, {7, 10}, 1.0).clone(false);
    Tape tape;
    EXPECT_EQ(project(tape, x, proj).shape(), (Shape{7, 32}));
    ParamList params;
    proj.collect(params);
    auto r = oracle::check_scalar_fn(params, [&](Tape& t) { return sum(t, project(t, x, proj)); });
    EXPECT_LT(r.worst_relative, 1e-6) << r.worst_param;
}

namespace {

Document make_doc(std::size_t patches, TokenSequence text, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Document d;
    d.id = "d";
    d.text = std::move(text);
    if (patches > 0) d.patches = oracle::random_patches(rng, patches, 5);
    return d;
}

}  // namespace

TEST(EncodeDocument, TextOnlyMatchesQueryPath) {
    auto model = Model::init(oracle::tiny_model_config(14), 3);
    auto d = make_doc(0, {4, 5, 6}, 1);
    Tape tape;
    Tensor a = encode_document(tape, d, model).vector;
    Tensor b = encode_query(tape, d.text, model.encoder).vector;
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(a.at(c), b.at(c));
    EXPECT_EQ(encode_document(tape, d, model).source, RepSource::text_only);
}

TEST(EncodeDocument, FusedLayoutIsStartImageEndText) {
    auto model = Model::init(oracle::tiny_model_config(14), 3);
    auto d = make_doc(4, {4, 5, 6, 7, 8, 9}, 2);
    Tape tape;
    Tensor text = token_embeddings(tape, d.text, model.encoder);
    auto img = encode_image_patches(tape, d, text, model);
    Tensor fused = fused_sequence(tape, img.reweighted, text, model);
    ASSERT_EQ(fused.shape(), (Shape{12, 8}));
    for (std::size_t c = 0; c < 8; ++c) {
        EXPECT_EQ(fused.at(0, c), model.encoder.token_embedding.at(kStartId, c));
        for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(fused.at(1 + j, c), img.reweighted.at(j, c));
        EXPECT_EQ(fused.at(5, c), model.encoder.token_embedding.at(kEndId, c));
        for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(fused.at(6 + j, c), model.encoder.token_embedding.at(d.text[j], c));
    }
}

TEST(EncodeDocument, OverlongCaptionIsCutToTheTable) {
    auto model = Model::init(oracle::tiny_model_config(14), 3);
    auto d = make_doc(3, TokenSequence(30, 6), 2);
    Tape tape;
    Tensor text = token_embeddings(tape, d.text, model.encoder);
    auto img = encode_image_patches(tape, d, text, model);
    EXPECT_EQ(fused_sequence(tape, img.reweighted, text, model).shape()[0], 16u);
    EXPECT_NEAR(norm(encode_document(tape, d, model).vector), 1.0, 1e-9);
}

TEST(EncodeImageOnly, EmptyCaptionUsesUniformWeights) {
    auto model = Model::init(oracle::tiny_model_config(14), 3);
    auto d = make_doc(3, {}, 4);
    Tape tape;
    auto img = encode_image_patches(tape, d, model);
    for (double w : img.weights.w.values()) EXPECT_EQ(w, 1.0);
    Tensor a = encode_image_only(tape, d, model).vector;
    EXPECT_NEAR(norm(a), 1.0, 1e-9);
    Tensor b = encode_image_only(tape, d, model).vector;
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(a.at(c), b.at(c));
}

TEST(EncodeImageOnly, DiffersFromFusedRepresentation) {
    auto model = Model::init(oracle::tiny_model_config(14), 3);
    auto d = make_doc(3, {4, 5, 6}, 5);
    Tape tape;
    Tensor a = encode_image_only(tape, d, model).vector, b = encode_document(tape, d, model).vector;
    double diff = 0.0;
    for (std::size_t c = 0; c < 8; ++c) diff += std::abs(a.at(c) - b.at(c));
    EXPECT_GT(diff, 1e-3);
    EXPECT_THROW(encode_image_only(tape, make_doc(0, {4}, 1), model), ContractError);
}

TEST(EncodeDocument, GradientThroughProjectorAndExtractor) {
    auto model = Model::init(oracle::tiny_model_config(14), 5);
    auto d = make_doc(4, {4, 5, 6, 7}, 6);
    Tensor dir = fixed_direction(8, 9);
    ParamList params;
    model.projector.collect(params);
    model.extractor.collect(params);
    auto r = oracle::check_scalar_fn(params, [&](Tape& t) { return cosine(t, encode_document(t, d, model).vector, dir); },
                                     1e-5, 1e-6);
    EXPECT_LT(r.worst_relative, 1e-4) << r.worst_param;
}

TEST(EncodeDocument, FrozenWeightsNeverReceiveGradients) {
    auto model = Model::init(oracle::tiny_model_config(14), 5);
    auto d = make_doc(4, {4, 5, 6, 7}, 6);
    const auto before = model.frozen.fingerprint();
    Tape tape;
    backward(sum(tape, encode_document(tape, d, model).vector), tape);
    EXPECT_FALSE(model.frozen.weight().has_grad());
    EXPECT_FALSE(model.frozen.bias().has_grad());
    EXPECT_TRUE(model.extractor.w_query.has_grad());
    EXPECT_EQ(model.frozen.fingerprint(), before);
}

TEST(Checkpoint, RoundTripIsBitExact) {
    oracle::TempDir dir;
    auto model = Model::init(oracle::tiny_model_config(6), 5);
    auto vocab = Vocabulary::build({"a b"}, 1);
    save_checkpoint(dir.path() + "/ck", model, vocab, {{"note", 1}});
    auto back = load_checkpoint(dir.path() + "/ck");
    EXPECT_EQ(back.model.snapshot(), model.snapshot());
    EXPECT_EQ(back.vocab.tokens(), vocab.tokens());
    EXPECT_EQ(back.extra.at("note"), 1);
    EXPECT_THROW(load_checkpoint(dir.path() + "/missing"), IoError);
}

TEST(EncodedCorpus, RoundTrip) {
    oracle::TempDir dir;
    auto b = oracle::tiny_batch(2);
    auto model = Model::init(oracle::tiny_model_config(b.vocab_size), 5);
    auto enc = encode_corpus(b.corpus, model);
    save_encoded_corpus(enc, dir.file("enc"));
    auto back = load_encoded_corpus(dir.file("enc"));
    EXPECT_EQ(back.ids, enc.ids);
    EXPECT_EQ(back.vectors, enc.vectors);
}
