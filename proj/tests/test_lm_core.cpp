#include <cmath>
#include <cstring>
#include <fstream>

#include <gtest/gtest.h>

#include "kpig/lm/checkpoint.hpp"
#include "kpig/lm/model.hpp"
#include "kpig/lm/optimizer.hpp"
#include "kpig/lm/prompt.hpp"
#include "kpig/lm/transformer.hpp"
#include "kpig/lm/vocabulary.hpp"
#include "support.hpp"

using namespace kpig;
using namespace kpig::lm;
using kpig::fixtures::FunctionModel;
using kpig::fixtures::TempDir;

namespace {

std::vector<double> point_mass(std::size_t vocab, TokenId z) {
    std::vector<double> logits(vocab, -1e9);
    logits[static_cast<std::size_t>(z)] = 0.0;
    return logits;
}

Transformer tiny_transformer(std::size_t vocab, std::uint64_t seed = 1) {
    TransformerConfig c;
    c.vocab_size = vocab;
    c.d_model = 8;
    c.n_layers = 1;
    c.n_heads = 2;
    c.context = 32;
    c.init_seed = seed;
    c.init_std = 0.3;
    return Transformer(c);
}

struct Scalar {
    std::vector<double> w{5.0};
    std::span<double> parameters() { return w; }
};

}  // namespace

TEST(Vocabulary, RoundTripsInVocabularyText) {
    const auto v = Vocabulary::build({"a b", "Hello, world!"});
    const auto ids = v.encode("a b");
    ASSERT_EQ(ids.size(), 2u);
    EXPECT_EQ(ids[0], v.id_of("a"));
    EXPECT_EQ(v.decode(ids), "a b");
    EXPECT_EQ(v.decode(v.encode("Hello, world!")), "Hello, world!");
    EXPECT_TRUE(v.encode("").empty());
    EXPECT_EQ(v.decode({}), "");
}

TEST(Vocabulary, UnknownWordsMapToUnk) {
    const auto v = Vocabulary::build({"a b"});
    EXPECT_EQ(v.encode("zebra"), (std::vector<TokenId>{Vocabulary::kUnk}));
}

TEST(Vocabulary, MaskLiteralMapsToMaskId) {
    const auto v = Vocabulary::build({"answer in lowercase", "[MASK] text"});
    const auto ids = v.encode("please [MASK] now");
    ASSERT_EQ(ids.size(), 3u);
    EXPECT_EQ(ids[1], Vocabulary::kMask);
    // ordinary text never produces the mask id
    for (const auto& s : {"MASK", "[ MASK ]", "mask", "[MASK"}) {
        for (TokenId id : v.encode(s)) {
            EXPECT_NE(id, Vocabulary::kMask) << s;
        }
    }
    EXPECT_EQ(v.encode("x [SEP] y")[1], Vocabulary::kSep);
}

TEST(Vocabulary, TokenListRoundTrip) {
    const auto v = Vocabulary::build({"one two three"});
    EXPECT_EQ(Vocabulary::from_tokens(v.tokens()), v);
    auto broken = v.tokens();
    broken[0] = "<oops>";
    EXPECT_THROW(Vocabulary::from_tokens(broken), ParseError);
}

TEST(TeacherForcing, PointMassModelGoldProbs) {
    const TokenId z = 7;
    auto model = fixtures::constant_model(point_mass(10, z));
    const std::vector<TokenId> x = {2, 6};
    const std::vector<TokenId> y = {7, 8, 7};
    const auto s = teacher_forced_distributions(model, x, y);
    ASSERT_EQ(s.length(), 3u);
    EXPECT_DOUBLE_EQ(s.gold_probs[0], 1.0);
    EXPECT_DOUBLE_EQ(s.gold_probs[1], 0.0);
    EXPECT_DOUBLE_EQ(s.gold_probs[2], 1.0);
}

TEST(TeacherForcing, HandSetLogitsGiveQuarterThreeQuarters) {
    auto model = fixtures::constant_model({0.0, std::log(3.0)});
    const std::vector<TokenId> x = {0};
    const std::vector<TokenId> y = {1, 0, 1};
    const auto s = teacher_forced_distributions(model, x, y);
    for (std::size_t k = 0; k < s.length(); ++k) {
        const auto d = s.distribution(k);
        EXPECT_NEAR(d[0], 0.25, 1e-12);
        EXPECT_NEAR(d[1], 0.75, 1e-12);
        EXPECT_DOUBLE_EQ(s.gold_probs[k], d[static_cast<std::size_t>(y[k])]);
    }
}

TEST(TeacherForcing, ConditionsOnGoldPrefix) {
    // Records the prefix each row was conditioned on via its last token.
    std::vector<std::vector<TokenId>> prefixes;
    FunctionModel model(6, [&](std::span<const TokenId> p) {
        prefixes.emplace_back(p.begin(), p.end());
        return std::vector<double>(6, 0.0);
    });
    const std::vector<TokenId> x = {1, 2};
    const std::vector<TokenId> y = {3, 4, 5};
    teacher_forced_distributions(model, x, y);
    ASSERT_EQ(prefixes.size(), 3u);
    EXPECT_EQ(prefixes[0], (std::vector<TokenId>{1, 2}));
    EXPECT_EQ(prefixes[1], (std::vector<TokenId>{1, 2, 3}));
    EXPECT_EQ(prefixes[2], (std::vector<TokenId>{1, 2, 3, 4}));
}

TEST(TeacherForcing, ErrorsNameLengths) {
    auto model = fixtures::constant_model({0.0, 0.0}, 4);
    const std::vector<TokenId> x = {0, 1, 0};
    const std::vector<TokenId> y = {1, 1};
    try {
        teacher_forced_distributions(model, x, y);
        FAIL();
    } catch (const ContractError& e) {
        EXPECT_NE(std::string(e.what()).find("need 5"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("holds 4"), std::string::npos) << e.what();
    }
    EXPECT_THROW(teacher_forced_distributions(model, x, std::vector<TokenId>{}), ContractError);
}

TEST(GenerateGreedy, PointMassCases) {
    auto eos = fixtures::constant_model(point_mass(6, Vocabulary::kEos));
    const std::vector<TokenId> x = {2};
    EXPECT_TRUE(generate_greedy(eos, x, 5).empty());
    auto z = fixtures::constant_model(point_mass(6, 5));
    EXPECT_EQ(generate_greedy(z, x, 3), (std::vector<TokenId>{5, 5, 5}));
    EXPECT_THROW(generate_greedy(z, x, 0), ContractError);
}

TEST(GenerateGreedy, HandSetArgmaxChain) {
    // tokens: 3 = EOS, 6 = a, 7 = b. After the prompt a wins, after a b wins, after b EOS wins.
    const TokenId a = 6, b = 7;
    FunctionModel model(8, [&](std::span<const TokenId> p) {
        std::vector<double> logits(8, 0.0);
        switch (p.back()) {
            case 6: logits[7] = 2.0; logits[6] = 1.0; break;
            case 7: logits[Vocabulary::kEos] = 2.0; logits[6] = 1.9; break;
            default: logits[6] = 3.0; logits[7] = 2.5; break;
        }
        return logits;
    });
    const std::vector<TokenId> x = {2};
    EXPECT_EQ(generate_greedy(model, x, 10), (std::vector<TokenId>{a, b}));
}

TEST(GenerateGreedy, TiesGoToLowestId) {
    auto flat = fixtures::constant_model(std::vector<double>(8, 0.0));
    const std::vector<TokenId> x = {2};
    EXPECT_EQ(generate_greedy(flat, x, 2, 99), (std::vector<TokenId>{0, 0}));
}

TEST(Transformer, DistributionsNormalize) {
    auto model = tiny_transformer(12);
    Rng rng = derive_rng(1, "normalize");
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<TokenId> seq(1 + uniform_index(rng, 20));
        for (auto& t : seq) {
            t = static_cast<TokenId>(uniform_index(rng, 12));
        }
        const auto lp = model.next_token_log_probs(seq, 0);
        ASSERT_EQ(lp.rows, seq.size());
        for (std::size_t r = 0; r < lp.rows; ++r) {
            double sum = 0.0;
            for (double v : lp.row(r)) {
                EXPECT_GE(std::exp(v), 0.0);
                sum += std::exp(v);
            }
            EXPECT_NEAR(sum, 1.0, 1e-6);
        }
    }
}

TEST(Transformer, TeacherForcingIsPrefixLocal) {
    auto model = tiny_transformer(12);
    const std::vector<TokenId> x = {2, 6, 7, 5};
    std::vector<TokenId> y = {8, 9, 10, 11, 3};
    const auto base = teacher_forced_distributions(model, x, y);
    for (std::size_t j = 0; j < y.size(); ++j) {
        auto changed = y;
        changed[j] = changed[j] == 8 ? 9 : 8;
        const auto s = teacher_forced_distributions(model, x, changed);
        for (std::size_t k = 0; k <= j; ++k) {
            for (std::size_t v = 0; v < 12; ++v) {
                EXPECT_EQ(s.log_probs(k, v), base.log_probs(k, v)) << "j " << j << " k " << k;
            }
        }
    }
}

TEST(Transformer, RejectsBadShapes) {
    TransformerConfig c;
    c.vocab_size = 10;
    c.d_model = 10;
    c.n_heads = 3;
    EXPECT_THROW(Transformer{c}, ContractError);
    auto model = tiny_transformer(12);
    const std::vector<TokenId> bad = {2, 40};
    EXPECT_THROW(model.next_token_log_probs(bad, 0), ContractError);
    const std::vector<TokenId> too_long(33, 2);
    EXPECT_THROW(model.next_token_log_probs(too_long, 0), ContractError);
}

TEST(TrainStep, ZeroGradientIsANoOp) {
    auto model = tiny_transformer(12);
    const std::vector<double> before(model.parameters().begin(), model.parameters().end());
    AdamState state;
    const std::vector<double> zero(model.parameter_count(), 0.0);
    train_step(model, 1.0, zero, state);
    EXPECT_TRUE(std::equal(before.begin(), before.end(), model.parameters().begin()));
    EXPECT_EQ(state.step, 0u);
    EXPECT_TRUE(state.m.empty());
}

TEST(TrainStep, NonFiniteLossAborts) {
    auto model = tiny_transformer(12);
    AdamState state;
    std::vector<double> g(model.parameter_count(), 0.1);
    EXPECT_THROW(train_step(model, std::nan(""), g, state), Error);
    g[3] = INFINITY;
    EXPECT_THROW(train_step(model, 1.0, g, state), Error);
    EXPECT_EQ(state.step, 0u);
    std::vector<double> short_grad(3, 0.0);
    EXPECT_THROW(train_step(model, 1.0, short_grad, state), ContractError);
}

TEST(TrainStep, SgdOnQuadraticFollowsClosedForm) {
    // L(w) = (w - 2)^2, gradient 2(w - 2); iterate w_n = 2 + (w_0 - 2)(1 - 2 lr)^n
    Scalar s;
    const SgdState sgd{0.1};
    double previous_gap = std::abs(s.w[0] - 2.0);
    for (int n = 1; n <= 20; ++n) {
        const double w = s.w[0];
        const std::vector<double> g{2.0 * (w - 2.0)};
        train_step(s, (w - 2.0) * (w - 2.0), g, sgd);
        EXPECT_NEAR(s.w[0], 2.0 + 3.0 * std::pow(0.8, n), 1e-12);
        const double gap = std::abs(s.w[0] - 2.0);
        EXPECT_LT(gap, previous_gap);
        previous_gap = gap;
    }
}

TEST(TrainStep, SeededRunsAreIdentical) {
    auto run = [] {
        auto model = tiny_transformer(12, 9);
        AdamState state;
        const std::vector<TokenId> x = {2, 6, 7};
        const std::vector<TokenId> y = {8, 3};
        for (int step = 0; step < 5; ++step) {
            std::vector<TokenId> seq = {2, 6, 7, 8};
            Transformer::Cache cache;
            const auto lp = model.forward(seq, 2, cache);
            Matrix d(2, 12);
            double loss = 0.0;
            for (std::size_t k = 0; k < 2; ++k) {
                for (std::size_t v = 0; v < 12; ++v) {
                    d(k, v) = std::exp(lp(k, v)) / 2.0;
                }
                d(k, static_cast<std::size_t>(y[k])) -= 0.5;
                loss -= lp(k, static_cast<std::size_t>(y[k])) / 2.0;
            }
            std::vector<double> grad(model.parameter_count(), 0.0);
            model.backward(cache, d, grad);
            train_step(model, loss, grad, state);
        }
        return std::vector<double>(model.parameters().begin(), model.parameters().end());
    };
    EXPECT_EQ(run(), run());
}

TEST(Freeze, SnapshotSurvivesLiveTraining) {
    auto live = tiny_transformer(12);
    const auto frozen = freeze_snapshot(live);
    const std::vector<TokenId> x = {2, 6};
    const std::vector<TokenId> y = {7, 3};
    const auto before = teacher_forced_distributions(frozen, x, y);
    EXPECT_EQ(before.log_probs, teacher_forced_distributions(live, x, y).log_probs);

    AdamState state;
    std::vector<double> g(live.parameter_count(), 0.01);
    train_step(live, 1.0, g, state);
    EXPECT_NE(teacher_forced_distributions(live, x, y).log_probs, before.log_probs);
    EXPECT_EQ(teacher_forced_distributions(frozen, x, y).log_probs, before.log_probs);
    EXPECT_EQ(teacher_forced_distributions(frozen, x, y).log_probs, before.log_probs);

    const auto twice = freeze_snapshot(frozen);
    EXPECT_EQ(teacher_forced_distributions(twice, x, y).log_probs, before.log_probs);
}

TEST(Checkpoint, RoundTripsEverything) {
    TempDir dir("ckpt");
    const auto vocab = Vocabulary::build({"alpha beta gamma delta epsilon zeta"});
    auto model = tiny_transformer(vocab.size(), 4);
    AdamState opt;
    opt.config.lr = 0.01;
    std::vector<double> g(model.parameter_count(), 0.02);
    train_step(model, 1.0, g, opt);
    save_checkpoint(dir.file("a.ckpt"), vocab, model, opt, 3);
    const auto loaded = load_checkpoint(dir.file("a.ckpt"));
    EXPECT_EQ(loaded.vocab, vocab);
    EXPECT_EQ(loaded.time_step, 3u);
    EXPECT_EQ(loaded.model.config(), model.config());
    EXPECT_TRUE(std::equal(model.parameters().begin(), model.parameters().end(), loaded.model.parameters().begin()));
    EXPECT_EQ(loaded.optimizer, opt);
}

TEST(Checkpoint, RejectsVersionMismatchAndGarbage) {
    TempDir dir("ckpt");
    const auto vocab = Vocabulary::build({"a b"});
    auto model = tiny_transformer(vocab.size());
    save_checkpoint(dir.file("a.ckpt"), vocab, model, AdamState{}, 1);
    {
        std::fstream f(dir.file("a.ckpt"), std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(8);
        const std::uint32_t v = kCheckpointVersion + 1;
        f.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
    try {
        load_checkpoint(dir.file("a.ckpt"));
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
    }
    std::ofstream(dir.file("junk.ckpt")) << "not a checkpoint at all";
    EXPECT_THROW(load_checkpoint(dir.file("junk.ckpt")), ParseError);
    EXPECT_THROW(load_checkpoint(dir.file("none.ckpt")), ParseError);
}

TEST(Prompt, RendersInstructionDemosAndContext) {
    Instance demo{"", "ctx one", "out one", "t", "d"};
    EXPECT_EQ(render_input("Do it.", {demo}, std::string("the input")),
              "Do it. [SEP] ctx one [SEP] out one [SEP] the input [SEP]");
    EXPECT_EQ(render_input("Do it.", {}, std::nullopt), "Do it. [SEP]");
    const auto v = Vocabulary::build({"Do it.", "x"});
    const auto ids = input_tokens(v, "Do it.", {}, std::nullopt);
    EXPECT_EQ(ids.front(), Vocabulary::kBos);
    EXPECT_EQ(ids.back(), Vocabulary::kSep);
    EXPECT_EQ(output_tokens(v, "x").back(), Vocabulary::kEos);
}
