#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <thread>

#include "pgtask/annotation.hpp"
#include "support.hpp"

using namespace pgtask;
using namespace testing_support;

namespace {

AlignedPair pair_at(double confidence, int i) {
    return AlignedPair{"d" + std::to_string(i / 10), i % 10, "A", "utterance " + std::to_string(i),
                       "profile " + std::to_string(i), confidence, std::nullopt};
}

// 1000 pairs with confidences spread over [0.5, 1].
std::vector<AlignedPair> spread_pairs(std::uint64_t seed, int n = 1000) {
    Rng rng(seed);
    std::vector<AlignedPair> out;
    for (int i = 0; i < n; ++i) out.push_back(pair_at(0.5 + 0.5 * rng.uniform(), i));
    return out;
}

AnnotationBatch batch_of(int n_items, const std::string& interval = "]90,100]") {
    AnnotationBatch b;
    b.id = "b";
    b.intervals = {parse_interval(interval)};
    for (int i = 0; i < n_items; ++i)
        b.items.push_back({"p" + std::to_string(i), "u", "q", parse_interval(interval).tag(), 0.95});
    return b;
}

std::unique_ptr<JudgmentStore> fixture_store() {
    auto store = std::make_unique<JudgmentStore>();
    store->add_batch(read_batch(fixture("annotation_batch.json")));
    store->replay(fixture("annotation_log.jsonl"));
    return store;
}

// marks[a][i] for annotator a on item i.
JudgmentMap judgments_from(const AnnotationBatch& b, const std::vector<std::vector<bool>>& marks) {
    JudgmentMap m;
    for (std::size_t a = 0; a < marks.size(); ++a)
        for (std::size_t i = 0; i < marks[a].size(); ++i)
            m[{std::string(1, char('A' + a)), b.items[i].pair_id}] = marks[a][i];
    return m;
}

// Split pattern for a 3-annotator item with k marks, rotating who marks.
std::vector<bool> item_marks(int k, int rotation) {
    std::vector<bool> v(3, false);
    for (int j = 0; j < k; ++j) v[(rotation + j) % 3] = true;
    return v;
}

}  // namespace

TEST(Interval, ParsesTheThreeSamplingIntervals) {
    const auto iv = default_intervals();
    ASSERT_EQ(iv.size(), 3u);
    EXPECT_TRUE(iv[0].contains(50.0));
    EXPECT_TRUE(iv[0].contains(70.0));
    EXPECT_FALSE(iv[1].contains(70.0));
    EXPECT_TRUE(iv[1].contains(90.0));
    EXPECT_FALSE(iv[2].contains(90.0));
    EXPECT_TRUE(iv[2].contains(100.0));
    EXPECT_EQ(iv[1].tag(), "]70,90]");
    EXPECT_EQ(parse_interval("]99,100]").tag(), "]99,100]");
    for (const char* bad : {"", "50,70", "[70,50]", "[0,101]", "{1,2}", "[a,b]"})
        EXPECT_THROW(parse_interval(bad), ValidationError) << bad;
}

TEST(StratifiedSample, HundredPerIntervalGivesThreeHundredUniqueItems) {
    const auto pairs = spread_pairs(1);
    const auto b = stratified_sample(pairs, default_intervals(), 100, 7);
    ASSERT_EQ(b.items.size(), 300u);
    std::set<std::string> ids;
    std::map<std::string, int> per_interval;
    for (const auto& it : b.items) {
        ids.insert(it.pair_id);
        ++per_interval[it.interval];
        EXPECT_TRUE(parse_interval(it.interval).contains(it.confidence * 100.0));
    }
    EXPECT_EQ(ids.size(), 300u);
    for (const auto& iv : default_intervals()) EXPECT_EQ(per_interval[iv.tag()], 100);

    // Interval membership is not visible from the order.
    std::size_t runs = 1;
    for (std::size_t i = 1; i < b.items.size(); ++i) runs += b.items[i].interval != b.items[i - 1].interval;
    EXPECT_GT(runs, 3u);
}

TEST(StratifiedSample, ZeroRequestedGivesEmptyBatch) {
    EXPECT_TRUE(stratified_sample(spread_pairs(2), default_intervals(), 0, 1).items.empty());
}

TEST(StratifiedSample, SameSeedSameBatch) {
    const auto pairs = spread_pairs(3);
    EXPECT_EQ(stratified_sample(pairs, default_intervals(), 50, 11), stratified_sample(pairs, default_intervals(), 50, 11));
    EXPECT_NE(stratified_sample(pairs, default_intervals(), 50, 11).items,
              stratified_sample(pairs, default_intervals(), 50, 12).items);
}

TEST(StratifiedSample, TooFewPairsNamesTheInterval) {
    std::vector<AlignedPair> pairs;
    for (int i = 0; i < 10; ++i) pairs.push_back(pair_at(0.995, i));
    try {
        stratified_sample(pairs, {parse_interval("]99,100]")}, 11, 0);
        FAIL() << "expected ValidationError";
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("]99,100]"), std::string::npos);
    }
}

// Every pair in a 50-pair pool should be drawn equally often over many seeds.
// 49 degrees of freedom; 85.35 is the 0.999 quantile.
TEST(StratifiedSample, DrawsAreUniformWithinAnInterval) {
    std::vector<AlignedPair> pairs;
    for (int i = 0; i < 50; ++i) pairs.push_back(pair_at(0.95, i));
    std::map<std::string, int> counts;
    const int seeds = 2000, n = 10;
    for (int s = 0; s < seeds; ++s)
        for (const auto& it : stratified_sample(pairs, {parse_interval("]90,100]")}, n, s).items) ++counts[it.pair_id];
    ASSERT_EQ(counts.size(), 50u);
    const double expected = double(seeds) * n / 50.0;
    double chi2 = 0.0;
    for (const auto& [id, c] : counts) chi2 += (c - expected) * (c - expected) / expected;
    EXPECT_LT(chi2, 85.35);
}

TEST(BatchFile, RoundTrips) {
    TempDir dir;
    const auto b = stratified_sample(spread_pairs(4), default_intervals(), 20, 5, "round");
    write_batch(b, dir / "b.json");
    EXPECT_EQ(read_batch(dir / "b.json"), b);
}

TEST(JudgmentStore, FixtureReplayGivesTwelveEffectiveJudgments) {
    const auto store = fixture_store();
    EXPECT_EQ(store->snapshot().size(), 12u);
    EXPECT_EQ(store->log().size(), 12u);
}

TEST(JudgmentStore, ResubmissionOverwritesAndIsLogged) {
    TempDir dir;
    std::int64_t now = 0;
    JudgmentStore store(dir / "log.jsonl", [&] { return now += 10; });
    store.add_batch(batch_of(2));
    auto ack = store.record("A", "p0", true);
    EXPECT_FALSE(ack.overwrite);
    EXPECT_TRUE(ack.changed);
    ack = store.record("A", "p0", true);
    EXPECT_TRUE(ack.overwrite);
    EXPECT_FALSE(ack.changed);
    ack = store.record("A", "p0", false);
    EXPECT_TRUE(ack.overwrite);
    EXPECT_TRUE(ack.changed);
    EXPECT_EQ(ack.seq, 3u);
    EXPECT_EQ(store.snapshot().size(), 1u);
    EXPECT_FALSE(store.snapshot().at({"A", "p0"}));
    EXPECT_EQ(store.log().size(), 3u);

    std::size_t lines = 0;
    std::istringstream in(slurp(dir / "log.jsonl"));
    for (std::string l; std::getline(in, l);) ++lines;
    EXPECT_EQ(lines, 3u);
}

TEST(JudgmentStore, RejectsUnknownPairEmptyAnnotatorAndClosedBatch) {
    JudgmentStore store;
    store.add_batch(batch_of(2));
    EXPECT_THROW(store.record("A", "nope", true), NotFoundError);
    EXPECT_THROW(store.record(" ", "p0", true), ValidationError);
    EXPECT_THROW(store.next_item("missing", "A"), NotFoundError);
    EXPECT_THROW(store.add_batch(batch_of(1)), ConflictError);
    store.close_batch("b");
    EXPECT_FALSE(store.is_open("b"));
    EXPECT_THROW(store.record("A", "p0", true), ConflictError);
}

TEST(JudgmentStore, NextItemWalksTheBatchPerAnnotator) {
    JudgmentStore store;
    store.add_batch(batch_of(3));
    auto n = store.next_item("b", "A");
    ASSERT_TRUE(n);
    EXPECT_EQ(n->position, 0u);
    EXPECT_EQ(n->batch_size, 3u);
    store.record("A", "p0", true);
    store.record("A", "p2", false);
    EXPECT_EQ(store.next_item("b", "A")->item.pair_id, "p1");
    EXPECT_EQ(store.next_item("b", "B")->item.pair_id, "p0");
    store.record("A", "p1", false);
    EXPECT_FALSE(store.next_item("b", "A"));
}

TEST(JudgmentStore, ConcurrentSubmissionsAreAllKept) {
    JudgmentStore store;
    store.add_batch(batch_of(50));
    std::vector<std::thread> threads;
    for (int a = 0; a < 8; ++a)
        threads.emplace_back([&, a] {
            for (int i = 0; i < 50; ++i) store.record("ann" + std::to_string(a), "p" + std::to_string(i), (a + i) % 2);
        });
    for (auto& t : threads) t.join();
    EXPECT_EQ(store.snapshot().size(), 400u);
    const auto log = store.log();
    for (std::size_t i = 0; i < log.size(); ++i) EXPECT_EQ(log[i].seq, i + 1);
}

// A marks i1; B marks i1 and i2; C marks nothing. Four items.
TEST(Report, FixtureHandValues) {
    const auto store = fixture_store();
    const auto batch = store->batch("fixture");
    const auto r = make_report(batch, store->snapshot());
    ASSERT_EQ(r.intervals.size(), 1u);
    EXPECT_DOUBLE_EQ(*r.intervals[0].accuracy, 25.0);
    EXPECT_DOUBLE_EQ(*r.agreement_rate, 200.0 / 3.0);
    EXPECT_DOUBLE_EQ(*r.unanimous_agreement, 50.0);
    EXPECT_EQ(r.annotator_count, 3u);
    EXPECT_EQ(r.judgment_count, 12u);
    EXPECT_TRUE(r.complete);

    auto two = store->snapshot();
    for (auto it = two.begin(); it != two.end();) it = it->first.first == "C" ? two.erase(it) : std::next(it);
    EXPECT_DOUBLE_EQ(agreement_rate(batch, two), 75.0);
}

// With three annotators, each split item costs exactly 2 of 3 pairwise
// agreements, so 4 items can only reach 100 - 50k/3 percent.
TEST(Report, ThreeAnnotatorsFourItemsCannotReachSeventyFive) {
    const auto batch = read_batch(fixture("annotation_batch.json"));
    std::set<double> reachable;
    for (unsigned mask = 0; mask < (1u << 12); ++mask) {
        std::vector<std::vector<bool>> marks(3, std::vector<bool>(4));
        for (int b = 0; b < 12; ++b) marks[b / 4][b % 4] = (mask >> b) & 1;
        reachable.insert(std::round(agreement_rate(batch, judgments_from(batch, marks)) * 1e6) / 1e6);
    }
    EXPECT_FALSE(reachable.count(75.0));
    EXPECT_EQ(reachable.size(), 5u);
}

TEST(Report, PermutingItemsAndRenamingAnnotatorsChangesNothing) {
    Rng rng(21);
    auto batch = batch_of(40);
    std::vector<std::vector<bool>> marks(4, std::vector<bool>(40));
    for (auto& row : marks)
        for (std::size_t i = 0; i < row.size(); ++i) row[i] = rng.below(3) == 0;
    const auto base = make_report(batch, judgments_from(batch, marks));

    auto shuffled = batch;
    rng.shuffle(shuffled.items);
    JudgmentMap renamed;
    for (const auto& [key, m] : judgments_from(batch, marks)) renamed[{"z-" + key.first, key.second}] = m;
    const auto other = make_report(shuffled, renamed);
    EXPECT_DOUBLE_EQ(*other.agreement_rate, *base.agreement_rate);
    EXPECT_DOUBLE_EQ(*other.unanimous_agreement, *base.unanimous_agreement);
    EXPECT_DOUBLE_EQ(*other.intervals[0].accuracy, *base.intervals[0].accuracy);
}

TEST(Report, UnanimousMarkingIsPerfectAgreement) {
    const auto batch = batch_of(10);
    const auto r = make_report(batch, judgments_from(batch, std::vector(3, std::vector<bool>(10, true))));
    EXPECT_DOUBLE_EQ(*r.intervals[0].accuracy, 100.0);
    EXPECT_DOUBLE_EQ(*r.agreement_rate, 100.0);
    EXPECT_DOUBLE_EQ(*r.unanimous_agreement, 100.0);
}

TEST(Report, SingleAnnotatorHasNoAgreement) {
    const auto batch = batch_of(3);
    const auto m = judgments_from(batch, {{true, false, false}});
    const auto r = make_report(batch, m);
    EXPECT_FALSE(r.agreement_rate);
    EXPECT_FALSE(r.unanimous_agreement);
    EXPECT_NEAR(*r.intervals[0].accuracy, 100.0 / 3.0, 1e-12);
    EXPECT_THROW(agreement_rate(batch, m), ValidationError);
    EXPECT_THROW(make_report(batch, {}), ValidationError);
}

TEST(Report, ReplayReproducesTheReportAndLogExactly) {
    TempDir dir;
    std::int64_t now = 5000;
    const auto batch = stratified_sample(spread_pairs(9), default_intervals(), 10, 3, "replay");
    std::string live;
    {
        JudgmentStore store(dir / "log.jsonl", [&] { return now += 7; });
        store.add_batch(batch);
        Rng rng(4);
        for (int k = 0; k < 200; ++k)
            store.record("ann" + std::to_string(rng.below(3)), batch.items[rng.below(batch.items.size())].pair_id,
                         rng.below(2));
        live = to_json(make_report(batch, store.snapshot())).dump();
    }
    JudgmentStore again;
    again.add_batch(batch);
    again.replay(dir / "log.jsonl");
    EXPECT_EQ(to_json(make_report(batch, again.snapshot())).dump(), live);
    std::string relog;
    for (const auto& e : again.log()) relog += to_json(e).dump() + "\n";
    EXPECT_EQ(relog, slurp(dir / "log.jsonl"));
}

TEST(Report, ReplayPointsAtTheBadRecord) {
    TempDir dir;
    spit(dir / "log.jsonl", R"({"seq":1,"annotator":"A","pair_id":"i1","marked":true,"timestamp_ms":1})"
                            "\n"
                            R"({"seq":2,"annotator":"A","pair_id":"i1"})"
                            "\n");
    JudgmentStore store;
    store.add_batch(read_batch(fixture("annotation_batch.json")));
    try {
        store.replay(dir / "log.jsonl");
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.record(), 2u);
    }
}

// First round: 3 annotators, 100 items per interval. Marks per interval are
// 25, 37 and 155 with 60 split items in total, which gives accuracies
// 25/3, 37/3, 155/3 and pairwise agreement 1 - 120/900.
TEST(Report, FirstRoundFigures) {
    AnnotationBatch batch;
    batch.id = "round1";
    batch.intervals = default_intervals();
    std::vector<std::vector<bool>> marks(3);
    auto add = [&](const IntervalSpec& iv, int k, int count) {
        for (int c = 0; c < count; ++c) {
            const auto id = iv.tag() + "#" + std::to_string(batch.items.size());
            batch.items.push_back({id, "u", "p", iv.tag(), 0.0});
            const auto m = item_marks(k, int(batch.items.size()));
            for (int a = 0; a < 3; ++a) marks[a].push_back(m[a]);
        }
    };
    const auto iv = default_intervals();
    add(iv[0], 1, 25);
    add(iv[0], 0, 75);
    add(iv[1], 1, 10);
    add(iv[1], 2, 9);
    add(iv[1], 3, 3);
    add(iv[1], 0, 78);
    add(iv[2], 2, 16);
    add(iv[2], 3, 41);
    add(iv[2], 0, 43);
    const auto r = make_report(batch, judgments_from(batch, marks));
    EXPECT_NEAR(*r.intervals[0].accuracy, 8.33, 0.005);
    EXPECT_NEAR(*r.intervals[1].accuracy, 12.33, 0.005);
    EXPECT_NEAR(*r.intervals[2].accuracy, 51.67, 0.005);
    EXPECT_NEAR(*r.agreement_rate, 86.67, 0.005);
}

// Second round: 100 items above 99%, 262 marks out of 300, 9 split items.
// The 91% figure is the unanimity share; pairwise agreement is 94%.
TEST(Report, SecondRoundFigures) {
    AnnotationBatch batch;
    batch.id = "round2";
    batch.intervals = {parse_interval("]99,100]")};
    std::vector<std::vector<bool>> marks(3);
    auto add = [&](int k, int count) {
        for (int c = 0; c < count; ++c) {
            batch.items.push_back({"x" + std::to_string(batch.items.size()), "u", "p", "]99,100]", 0.0});
            const auto m = item_marks(k, int(batch.items.size()));
            for (int a = 0; a < 3; ++a) marks[a].push_back(m[a]);
        }
    };
    add(3, 83);
    add(0, 8);
    add(2, 4);
    add(1, 5);
    const auto r = make_report(batch, judgments_from(batch, marks));
    EXPECT_NEAR(*r.intervals[0].accuracy, 87.33, 0.005);
    EXPECT_DOUBLE_EQ(*r.unanimous_agreement, 91.0);
    EXPECT_DOUBLE_EQ(*r.agreement_rate, 94.0);

    // Pairwise agreement over 100 items and 3 annotators is 100 - 2k/3 for k
    // split items; 91 would need k = 13.5.
    for (int k = 0; k <= 100; ++k) EXPECT_NE(100.0 - 2.0 * k / 3.0, 91.0);
}
