#include <gtest/gtest.h>

#include "pgtask/tokenizer.hpp"
#include "support.hpp"

using namespace pgtask;
using namespace testing_support;

namespace {

// <unk>=0 <gen>=1 <sep>=2 <eos>=3 i=4 like=5 dogs=6 have=7 a=8 dog=9 cats=10
WordTokenizer fixed_words() { return WordTokenizer(Vocabulary({"i", "like", "dogs", "have", "a", "dog", "cats"})); }

}  // namespace

TEST(Vocabulary, SpecialsArePrependedOnce) {
    const Vocabulary v({"x", "<sep>", "y"});
    EXPECT_EQ(v.size(), 6u);
    EXPECT_EQ(v.token(v.unk()), "<unk>");
    EXPECT_EQ(v.token(v.sep()), "<sep>");
    EXPECT_TRUE(v.is_special(v.gen()));
    EXPECT_FALSE(v.is_special(v.id("x")));
    EXPECT_EQ(v.id("never-seen"), v.unk());
    EXPECT_THROW(Vocabulary({"x", "x"}), ValidationError);
}

TEST(WordTokenizer, BuildOrdersByFrequencyThenAlphabet) {
    const auto t = WordTokenizer::build({"b a a", "c b a"});
    const auto& toks = t.vocab().tokens();
    ASSERT_EQ(toks.size(), 7u);
    EXPECT_EQ(std::vector<std::string>(toks.begin() + 4, toks.end()), (std::vector<std::string>{"a", "b", "c"}));
    EXPECT_EQ(WordTokenizer::build({"a a b"}, 2).vocab().size(), 5u);
}

TEST(FormatExample, WordLevelHandIds) {
    const auto t = fixed_words();
    const auto ex = format_example("i like dogs", {"i have a dog", "i like cats"}, t);
    EXPECT_EQ(ex.ids, (std::vector<TokenId>{4, 5, 6, 1, 4, 7, 8, 9, 2, 4, 5, 10, 3}));
    EXPECT_EQ(ex.boundary, 3u);
    std::vector<bool> mask(13, true);
    for (int i = 0; i <= 3; ++i) mask[i] = false;
    EXPECT_EQ(ex.mask, mask);
    EXPECT_EQ(detokenize(t, ex.ids), "i like dogs <gen> i have a dog <sep> i like cats <eos>");
}

TEST(FormatExample, CharLevelHandIds) {
    const auto t = CharTokenizer::build("ab ");
    const auto ex = format_example("ab", {"b", "a a"}, t);
    // a=4 b=5 ' '=6
    EXPECT_EQ(ex.ids, (std::vector<TokenId>{4, 5, 1, 5, 2, 4, 6, 4, 3}));
    EXPECT_EQ(ex.mask, (std::vector<bool>{false, false, false, true, true, true, true, true, true}));
    EXPECT_EQ(detokenize(t, ex.ids), "ab <gen> b <sep> a a <eos>");
}

TEST(FormatExample, NoProfilesIsAnError) {
    EXPECT_THROW(format_example("x", {}, fixed_words()), ValidationError);
}

// Length, separator count and mask coverage over random records.
TEST(FormatExample, StructuralProperties) {
    Rng rng(17);
    std::vector<std::string> texts;
    for (int i = 0; i < 200; ++i) texts.push_back(random_sentence(rng, 1, 10));
    const auto t = WordTokenizer::build(texts);
    for (int trial = 0; trial < 500; ++trial) {
        const auto u = random_sentence(rng, 1, 10);
        std::vector<std::string> profiles(1 + rng.below(4));
        std::size_t words = 0;
        for (auto& p : profiles) {
            p = random_sentence(rng, 1, 8);
            words += split_whitespace(p).size();
        }
        const auto ex = format_example(u, profiles, t);
        const auto uw = split_whitespace(u).size();
        ASSERT_EQ(ex.ids.size(), uw + 1 + words + (profiles.size() - 1) + 1);
        EXPECT_EQ(std::count(ex.ids.begin(), ex.ids.end(), t.vocab().sep()), std::ptrdiff_t(profiles.size() - 1));
        EXPECT_EQ(std::count(ex.ids.begin(), ex.ids.end(), t.vocab().gen()), 1);
        EXPECT_EQ(ex.ids.back(), t.vocab().eos());
        EXPECT_EQ(std::count(ex.mask.begin(), ex.mask.end(), true), std::ptrdiff_t(ex.ids.size() - uw - 1));
        for (std::size_t i = 0; i <= ex.boundary; ++i) EXPECT_FALSE(ex.mask[i]);

        const auto text = detokenize(t, ex.ids);
        const auto after = text.substr(text.find("<gen>") + 5);
        EXPECT_EQ(split_profiles(after.substr(0, after.rfind("<eos>"))), profiles);
    }
}

TEST(SplitProfiles, Examples) {
    EXPECT_EQ(split_profiles("i have a dog <sep> i like cats"), (std::vector<std::string>{"i have a dog", "i like cats"}));
    EXPECT_EQ(split_profiles("a <sep> <sep> b"), (std::vector<std::string>{"a", "b"}));
    EXPECT_EQ(split_profiles("single"), (std::vector<std::string>{"single"}));
    EXPECT_TRUE(split_profiles("").empty());
    EXPECT_TRUE(split_profiles(" <sep> ").empty());
}

TEST(TokenizerJson, RoundTripsBothKinds) {
    const auto w = fixed_words();
    const auto back = tokenizer_from_json(to_json(w));
    EXPECT_EQ(back->kind(), "word");
    EXPECT_EQ(back->vocab(), w.vocab());
    const auto c = CharTokenizer::build("xyz");
    EXPECT_EQ(tokenizer_from_json(to_json(c))->encode("zx"), c.encode("zx"));
    EXPECT_THROW(tokenizer_from_json({{"kind", "bpe"}, {"tokens", nlohmann::json::array()}}), ValidationError);
}
