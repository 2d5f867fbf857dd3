#include <gtest/gtest.h>

#include <cmath>

#include "pgtask/alignment.hpp"
#include "support.hpp"

using namespace pgtask;
using namespace testing_support;

namespace {

AlignedPair with_confidence(double c, int turn = 0) {
    AlignedPair p;
    p.dialogue_id = "d";
    p.turn = turn;
    p.speaker = "A";
    p.utterance = "u";
    p.profile = "p" + std::to_string(turn);
    p.confidence = c;
    return p;
}

// Argmax-is-entailment evaluated straight from the logits, without the
// library's softmax: E wins iff its logit is strictly the largest.
bool oracle_entailed(const Logits3& z) { return z[2] > z[0] && z[2] > z[1]; }

double oracle_p_entail(const Logits3& z) {
    return std::exp(z[2]) / (std::exp(z[0]) + std::exp(z[1]) + std::exp(z[2]));
}

void strip_probs(std::vector<AlignedPair>& v) {
    for (auto& p : v) p.probs.reset();
}

}  // namespace

TEST(EntailedProfiles, PersonaTableExampleReturnsBothSentences) {
    const Utterance u{"d", 0, "A", "I am almost done, I only have two years left in law school."};
    const auto d = make_dialogue("d", {{"A", u.text}},
                                 {{"A", {"I have got two more years in college.", "I play the violin.", "I study law.",
                                         "My cat is orange."}}});
    auto table = std::make_shared<TableStubBackend>();
    table->set(u.text, "I have got two more years in college.", TableStubBackend::with_entailment(0.998));
    table->set(u.text, "I study law.", TableStubBackend::with_entailment(0.995));
    const auto got = entailed_profiles(u, d.persona("A"), ClassifierHandle(table));
    ASSERT_EQ(got.size(), 2u);
    EXPECT_EQ(got[0].profile, "I have got two more years in college.");
    EXPECT_EQ(got[1].profile, "I study law.");
    EXPECT_NEAR(got[0].confidence, 0.998, 1e-12);

    const auto by_overlap = entailed_profiles(u, d.persona("A"), ClassifierHandle(std::make_shared<OverlapStubBackend>()));
    ASSERT_EQ(by_overlap.size(), 2u);
    EXPECT_EQ(by_overlap[1].profile, "I study law.");
}

TEST(EntailedProfiles, AllNeutralGivesNothing) {
    const Utterance u{"d", 0, "A", "hello"};
    const auto d = make_dialogue("d", {{"A", "hello"}}, {{"A", {"x", "y"}}});
    EXPECT_TRUE(entailed_profiles(u, d.persona("A"), ClassifierHandle(std::make_shared<TableStubBackend>())).empty());
    EXPECT_THROW(entailed_profiles(u, {}, ClassifierHandle(std::make_shared<TableStubBackend>())), ValidationError);
}

TEST(AlignCorpus, EmptyCorpusGivesNothing) {
    EXPECT_TRUE(align_corpus(DialogueCorpus{}, ClassifierHandle(std::make_shared<OverlapStubBackend>())).empty());
}

// Brute-force double loop over dialogues x turns x same-speaker persona.
TEST(AlignCorpus, EquivalentToBruteForceOracleOnRandomCorpora) {
    Rng rng(2024);
    for (int trial = 0; trial < 100; ++trial) {
        const auto corpus = random_corpus(rng, 10);
        const auto backend = std::make_shared<HashStubBackend>(trial);
        const auto got = align_corpus(corpus, ClassifierHandle(backend), 1 + trial % 5);
        std::vector<AlignedPair> want;
        for (const auto& d : corpus.dialogues)
            for (const auto& u : d.turns)
                for (const auto& p : d.personas.at(u.speaker)) {
                    const auto z = backend->logits(u.text, p.text);
                    if (oracle_entailed(z)) {
                        AlignedPair a{d.id, u.turn, u.speaker, u.text, p.text, oracle_p_entail(z), std::nullopt};
                        want.push_back(a);
                    }
                }
        ASSERT_EQ(got.size(), want.size()) << "trial " << trial;
        for (std::size_t i = 0; i < got.size(); ++i) {
            EXPECT_EQ(got[i].dialogue_id, want[i].dialogue_id);
            EXPECT_EQ(got[i].turn, want[i].turn);
            EXPECT_EQ(got[i].speaker, want[i].speaker);
            EXPECT_EQ(got[i].profile, want[i].profile);
            EXPECT_NEAR(got[i].confidence, want[i].confidence, 1e-12);
            ASSERT_TRUE(got[i].probs.has_value());
            EXPECT_EQ(got[i].probs->argmax(), NliLabel::Entailment);
        }
    }
}

TEST(AlignCorpus, StoredConfidenceEqualsReclassification) {
    Rng rng(77);
    const auto corpus = random_corpus(rng, 10);
    const ClassifierHandle h(std::make_shared<OverlapStubBackend>());
    for (const auto& p : align_corpus(corpus, h)) EXPECT_EQ(classify(h, p.utterance, p.profile).entailment, p.confidence);
}

TEST(AlignCorpus, ThreadCountDoesNotChangeTheResult) {
    Rng rng(5);
    const auto corpus = random_corpus(rng, 10);
    const ClassifierHandle h(std::make_shared<HashStubBackend>(2));
    EXPECT_EQ(align_corpus(corpus, h, 1), align_corpus(corpus, h, 8));
}

TEST(FilterByConfidence, StrictlyAboveThreshold) {
    const auto got = filter_by_confidence({with_confidence(0.995, 0), with_confidence(0.97, 1), with_confidence(0.999, 2)}, 0.99);
    ASSERT_EQ(got.size(), 2u);
    EXPECT_EQ(got[0].confidence, 0.995);
    EXPECT_EQ(got[1].confidence, 0.999);
    EXPECT_TRUE(filter_by_confidence({with_confidence(0.99)}, 0.99).empty());
    EXPECT_TRUE(filter_by_confidence({with_confidence(0.5), with_confidence(0.7)}, 0.8).empty());
    EXPECT_THROW(filter_by_confidence({}, 1.5), ValidationError);
}

TEST(FilterByConfidence, MonotoneAndIdempotentOverThresholdGrid) {
    Rng rng(31);
    std::vector<AlignedPair> pairs;
    for (int i = 0; i < 1000; ++i) pairs.push_back(with_confidence(0.34 + 0.66 * rng.uniform(), i));
    std::vector<double> grid;
    for (int k = 0; k <= 50; ++k) grid.push_back(0.50 + 0.01 * k);
    std::vector<std::vector<AlignedPair>> outs;
    for (double t : grid) {
        auto f = filter_by_confidence(pairs, t);
        EXPECT_EQ(filter_by_confidence(f, t), f);
        for (const auto& p : f) EXPECT_GT(p.confidence, t);
        std::size_t expected = 0;
        for (const auto& p : pairs) expected += p.confidence > t ? 1 : 0;
        EXPECT_EQ(f.size(), expected);
        outs.push_back(std::move(f));
    }
    for (std::size_t k = 1; k < outs.size(); ++k) {
        std::set<int> prev;
        for (const auto& p : outs[k - 1]) prev.insert(p.turn);
        for (const auto& p : outs[k]) EXPECT_TRUE(prev.count(p.turn));
    }
}

TEST(ConfidenceSummary, HandArithmetic) {
    auto s = confidence_summary({with_confidence(0.9), with_confidence(0.9)});
    EXPECT_NEAR(s.mean, 90.0, 1e-9);
    EXPECT_NEAR(s.variance, 0.0, 1e-9);
    s = confidence_summary({with_confidence(0.8), with_confidence(1.0)});
    EXPECT_NEAR(s.mean, 90.0, 1e-9);
    EXPECT_NEAR(s.variance, 100.0, 1e-9);
    EXPECT_THROW(confidence_summary({}), ValidationError);
}

TEST(ConfidenceSummary, BinsSumToCountAndTopIsClosed) {
    Rng rng(4);
    std::vector<AlignedPair> pairs;
    for (int i = 0; i < 500; ++i) pairs.push_back(with_confidence(0.34 + 0.66 * rng.uniform(), i));
    pairs.push_back(with_confidence(1.0));
    const auto s = confidence_summary(pairs);
    ASSERT_EQ(s.bins.size(), 100u);
    std::size_t total = 0;
    for (auto b : s.bins) total += b;
    EXPECT_EQ(total, pairs.size());
    EXPECT_GE(s.bins[99], 1u);
    EXPECT_GT(s.mean, 0.0);
    EXPECT_LE(s.mean, 100.0);
    EXPECT_EQ(confidence_summary(pairs, 5.0).bins.size(), 20u);
}

TEST(ConfidenceSummary, HistogramCsv) {
    TempDir dir;
    const auto s = confidence_summary({with_confidence(0.955), with_confidence(0.951), with_confidence(0.5)}, 10.0);
    write_histogram_csv(s, dir / "h.csv");
    EXPECT_EQ(slurp(dir / "h.csv"), "0;0\n10;0\n20;0\n30;0\n40;0\n50;1\n60;0\n70;0\n80;0\n90;2\n");
}

TEST(AlignedPairDump, RoundTripsAtFullPrecision) {
    TempDir dir;
    Rng rng(6);
    auto pairs = align_corpus(random_corpus(rng, 10), ClassifierHandle(std::make_shared<HashStubBackend>(4)));
    ASSERT_FALSE(pairs.empty());
    write_aligned_pairs(pairs, dir / "p.jsonl");
    auto back = read_aligned_pairs(dir / "p.jsonl");
    strip_probs(pairs);
    EXPECT_EQ(back, pairs);
    const auto line = slurp(dir / "p.jsonl").substr(0, slurp(dir / "p.jsonl").find('\n'));
    const auto j = nlohmann::json::parse(line);
    for (const char* k : {"dialogue", "turn", "speaker", "utterance", "profile", "p_entail"}) EXPECT_TRUE(j.contains(k));
    EXPECT_EQ(j.size(), 6u);
}

TEST(AlignedPairDump, RejectsOutOfRangeConfidence) {
    TempDir dir;
    spit(dir / "bad.jsonl",
         R"({"dialogue":"d","turn":0,"speaker":"A","utterance":"u","profile":"p","p_entail":1.5})"
         "\n");
    EXPECT_THROW(read_aligned_pairs(dir / "bad.jsonl"), ParseError);
}

TEST(PairId, StableAndDistinguishesProfiles) {
    const auto a = with_confidence(0.9, 3);
    auto b = a;
    b.profile = "other";
    EXPECT_EQ(pair_id(a), pair_id(a));
    EXPECT_NE(pair_id(a), pair_id(b));
    EXPECT_EQ(pair_id(a).rfind("d:3:", 0), 0u);
}
