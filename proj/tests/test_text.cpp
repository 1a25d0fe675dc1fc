#include <cmath>

#include <gtest/gtest.h>

#include "kpig/text.hpp"

using namespace kpig::text;

TEST(Normalize, LowercasesAndStripsEdgePunctuation) {
    EXPECT_EQ(normalize_text("  Hello, World!  "), (std::vector<std::string>{"hello", "world"}));
    EXPECT_EQ(normalize_text("[1, 2, 3]"), (std::vector<std::string>{"1", "2", "3"}));
    EXPECT_EQ(normalize_text("{[1, 2, 3]}"), normalize_text("[1, 2, 3]"));
    EXPECT_TRUE(normalize_text(" ... ").empty());
    EXPECT_EQ(normalized_string("It's  A test."), "it's a test");
}

TEST(SplitOn, KeepsEmptyPiecesTrimmed) {
    EXPECT_EQ(split_on("a; b;c", ";"), (std::vector<std::string>{"a", "b", "c"}));
    EXPECT_EQ(split_on("a,,b", ","), (std::vector<std::string>{"a", "", "b"}));
}

TEST(Rouge, LcsBasedF1) {
    // lcs 2, precision 2/3, recall 1
    EXPECT_NEAR(rouge_l(normalize_text("[1, 2, 3]"), normalize_text("[1, 2]")), 0.8, 1e-12);
    EXPECT_DOUBLE_EQ(rouge_l({"a", "b"}, {"a", "b"}), 1.0);
    EXPECT_DOUBLE_EQ(rouge_l({"a"}, {"b"}), 0.0);
    EXPECT_DOUBLE_EQ(rouge_l({}, {"b"}), 0.0);
    // subsequence, not substring: "a c" inside "a b c"
    EXPECT_NEAR(rouge_l({"a", "c"}, {"a", "b", "c"}), 2.0 * 1.0 * (2.0 / 3.0) / (1.0 + 2.0 / 3.0), 1e-12);
}

TEST(Rouge, UnigramClipsRepeatedTokens) {
    // prediction "a a a" vs "a b": overlap 1, p = 1/3, r = 1/2
    const double p = 1.0 / 3.0, r = 0.5;
    EXPECT_NEAR(rouge_1({"a", "a", "a"}, {"a", "b"}), 2 * p * r / (p + r), 1e-12);
}

TEST(Bleu, MatchesHandComputedSmoothedPrecisions) {
    const auto cand = normalize_text("the cat sat on the mat");
    const auto ref = normalize_text("the cat is on the mat");
    // clipped matches per order: 5/6, 3/5, 1/4, 0/3; orders >= 2 add one to both sides
    const double expected = std::pow((5.0 / 6.0) * (4.0 / 6.0) * (2.0 / 5.0) * (1.0 / 4.0), 0.25);
    EXPECT_NEAR(sentence_bleu(cand, {ref}), expected, 1e-12);
}

TEST(Bleu, BrevityPenaltyUsesClosestReference) {
    const std::vector<std::string> cand = {"a", "b"};
    const std::vector<std::string> ref = {"a", "b", "c", "d"};
    // 1-gram 2/2; 2-gram (1+1)/(1+1); 3,4-gram (0+1)/(0+1); bp = exp(1 - 4/2)
    EXPECT_NEAR(sentence_bleu(cand, {ref}), std::exp(1.0 - 2.0), 1e-12);
}

TEST(Bleu, ZeroWithoutUnigramOverlap) {
    EXPECT_DOUBLE_EQ(sentence_bleu({"x"}, {{"y"}}), 0.0);
    EXPECT_DOUBLE_EQ(sentence_bleu({}, {{"y"}}), 0.0);
}

TEST(SelfBleu, IdenticalItemsScoreOne) {
    const std::vector<std::vector<std::string>> same(3, normalize_text("a b c d"));
    EXPECT_NEAR(self_bleu(same), 1.0, 1e-12);
    EXPECT_DOUBLE_EQ(self_bleu({normalize_text("a b")}), 0.0);
}

TEST(SelfBleu, DisjointItemsScoreZero) {
    EXPECT_DOUBLE_EQ(self_bleu({normalize_text("a b c d"), normalize_text("w x y z")}), 0.0);
}
