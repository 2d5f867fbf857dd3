#pragma once

// Human validation loop: stratified sampling of aligned pairs by confidence
// interval, an append-only judgment store, and accuracy/agreement reports.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pgtask/alignment.hpp"
#include "pgtask/common.hpp"
#include "pgtask/random.hpp"

namespace pgtask {

class NotFoundError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class ConflictError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// A confidence interval in percent, e.g. "]70,90]".
struct IntervalSpec {
    double lower = 0.0;
    double upper = 100.0;
    bool lower_inclusive = true;
    bool upper_inclusive = true;

    bool contains(double percent) const {
        const bool lo = lower_inclusive ? percent >= lower : percent > lower;
        const bool hi = upper_inclusive ? percent <= upper : percent < upper;
        return lo && hi;
    }

    std::string tag() const {
        auto num = [](double v) { return v == std::floor(v) ? std::to_string(static_cast<long long>(v)) : nlohmann::json(v).dump(); };
        return std::string(lower_inclusive ? "[" : "]") + num(lower) + "," + num(upper) + (upper_inclusive ? "]" : "[");
    }

    bool operator==(const IntervalSpec&) const = default;
};

/// Parses "[a,b]", "]a,b]", "[a,b[" or "]a,b[" (a "(" / ")" also means open).
inline IntervalSpec parse_interval(std::string_view text) {
    const auto s = trim(text);
    auto fail = [&]() -> IntervalSpec { throw ValidationError("invalid interval '" + std::string(text) + "'"); };
    if (s.size() < 5) return fail();
    const char open = s.front(), close = s.back();
    const auto comma = s.find(',');
    if (comma == std::string_view::npos) return fail();
    IntervalSpec iv;
    if (open == '[') iv.lower_inclusive = true;
    else if (open == ']' || open == '(') iv.lower_inclusive = false;
    else return fail();
    if (close == ']') iv.upper_inclusive = true;
    else if (close == '[' || close == ')') iv.upper_inclusive = false;
    else return fail();
    try {
        iv.lower = std::stod(std::string(trim(s.substr(1, comma - 1))));
        iv.upper = std::stod(std::string(trim(s.substr(comma + 1, s.size() - comma - 2))));
    } catch (const std::exception&) {
        return fail();
    }
    if (!(0.0 <= iv.lower && iv.lower < iv.upper && iv.upper <= 100.0)) return fail();
    return iv;
}

/// The first-round sampling intervals.
inline std::vector<IntervalSpec> default_intervals() {
    return {parse_interval("[50,70]"), parse_interval("]70,90]"), parse_interval("]90,100]")};
}

struct AnnotationItem {
    std::string pair_id;
    std::string utterance;
    std::string profile;
    std::string interval;  // tag of the interval the item was drawn from
    double confidence = 0.0;

    bool operator==(const AnnotationItem&) const = default;
};

struct AnnotationBatch {
    std::string id;
    std::vector<IntervalSpec> intervals;
    std::vector<AnnotationItem> items;
    std::uint64_t seed = 0;

    bool operator==(const AnnotationBatch&) const = default;
};

/// Draws n pairs uniformly without replacement from each interval, then
/// shuffles the combined batch so interval membership is not visible in the order.
inline AnnotationBatch stratified_sample(const std::vector<AlignedPair>& pairs,
                                         const std::vector<IntervalSpec>& intervals, std::size_t n_per_interval,
                                         std::uint64_t seed, std::string batch_id = {}) {
    AnnotationBatch batch;
    batch.id = batch_id.empty() ? "batch-" + std::to_string(seed) : std::move(batch_id);
    batch.intervals = intervals;
    batch.seed = seed;
    Rng rng(seed);
    std::set<std::string> taken;
    for (const auto& iv : intervals) {
        std::vector<const AlignedPair*> pool;
        std::set<std::string> pool_ids;
        for (const auto& p : pairs) {
            const auto id = pair_id(p);
            if (iv.contains(p.confidence * 100.0) && !taken.count(id) && pool_ids.insert(id).second)
                pool.push_back(&p);
        }
        if (pool.size() < n_per_interval)
            throw ValidationError("interval " + iv.tag() + " has " + std::to_string(pool.size()) +
                                  " pairs, fewer than the " + std::to_string(n_per_interval) + " requested");
        for (std::size_t i = 0; i < n_per_interval; ++i) {
            const auto j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
            std::swap(pool[i], pool[j]);
            const auto& p = *pool[i];
            taken.insert(pair_id(p));
            batch.items.push_back({pair_id(p), p.utterance, p.profile, iv.tag(), p.confidence});
        }
    }
    rng.shuffle(batch.items);
    return batch;
}

inline nlohmann::json to_json(const AnnotationBatch& b) {
    nlohmann::json items = nlohmann::json::array(), intervals = nlohmann::json::array();
    for (const auto& iv : b.intervals) intervals.push_back(iv.tag());
    for (const auto& it : b.items)
        items.push_back({{"pair_id", it.pair_id},
                         {"utterance", it.utterance},
                         {"profile", it.profile},
                         {"interval", it.interval},
                         {"confidence", it.confidence}});
    return {{"id", b.id}, {"seed", b.seed}, {"intervals", intervals}, {"items", items}};
}

inline AnnotationBatch batch_from_json(const nlohmann::json& j) {
    try {
        AnnotationBatch b;
        b.id = j.at("id").get<std::string>();
        b.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& t : j.at("intervals")) b.intervals.push_back(parse_interval(t.get<std::string>()));
        std::set<std::string> ids;
        for (const auto& it : j.at("items")) {
            AnnotationItem item{it.at("pair_id").get<std::string>(), it.at("utterance").get<std::string>(),
                                it.at("profile").get<std::string>(), it.at("interval").get<std::string>(),
                                it.at("confidence").get<double>()};
            if (!ids.insert(item.pair_id).second) throw ValidationError("duplicate pair id " + item.pair_id);
            b.items.push_back(std::move(item));
        }
        return b;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed annotation batch: ") + e.what());
    }
}

inline void write_batch(const AnnotationBatch& b, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << to_json(b).dump(2) << '\n';
}

inline AnnotationBatch read_batch(const std::filesystem::path& path) {
    auto in = detail::open_input(path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed annotation batch: ") + e.what());
    }
    return batch_from_json(j);
}

// ---------------------------------------------------------------------------
// Judgments

struct Judgment {
    std::string annotator;
    std::string pair_id;
    bool marked = false;  // "X": the profile can be extracted from the utterance
    std::int64_t timestamp_ms = 0;

    bool operator==(const Judgment&) const = default;
};

struct LogEntry {
    std::uint64_t seq = 0;
    Judgment judgment;
    bool overwrite = false;  // an earlier judgment for (annotator, pair) existed
};

struct Acknowledgement {
    std::uint64_t seq = 0;
    bool overwrite = false;
    bool changed = true;  // effective judgment differs from before
};

using JudgmentKey = std::pair<std::string, std::string>;  // (annotator, pair id)
using JudgmentMap = std::map<JudgmentKey, bool>;

inline nlohmann::json to_json(const LogEntry& e) {
    return {{"seq", e.seq},
            {"annotator", e.judgment.annotator},
            {"pair_id", e.judgment.pair_id},
            {"marked", e.judgment.marked},
            {"timestamp_ms", e.judgment.timestamp_ms},
            {"overwrite", e.overwrite}};
}

/// Thread-safe judgment store. Every write goes through a single lock and is
/// appended to the in-memory log and, when configured, to a JSON-lines file.
class JudgmentStore {
public:
    using Clock = std::function<std::int64_t()>;

    explicit JudgmentStore(std::filesystem::path log_path = {}, Clock clock = {})
        : log_path_(std::move(log_path)), clock_(clock ? std::move(clock) : Clock(&system_ms)) {}

    static std::int64_t system_ms() {
        return std::chrono::duration_cast<std::chrono::milliseconds>(
                   std::chrono::system_clock::now().time_since_epoch())
            .count();
    }

    void add_batch(AnnotationBatch batch) {
        std::lock_guard lock(mutex_);
        if (batches_.count(batch.id)) throw ConflictError("batch '" + batch.id + "' already exists");
        for (const auto& it : batch.items) pair_batch_.emplace(it.pair_id, batch.id);
        const auto id = batch.id;
        batches_.emplace(id, State{std::move(batch), true});
    }

    void close_batch(const std::string& id) {
        std::lock_guard lock(mutex_);
        state(id).open = false;
    }

    bool is_open(const std::string& id) const {
        std::lock_guard lock(mutex_);
        return state(id).open;
    }

    AnnotationBatch batch(const std::string& id) const {
        std::lock_guard lock(mutex_);
        return state(id).batch;
    }

    Acknowledgement record(const std::string& annotator, const std::string& pair, bool marked) {
        if (trim(annotator).empty()) throw ValidationError("annotator id must be non-empty");
        std::lock_guard lock(mutex_);
        auto it = pair_batch_.find(pair);
        if (it == pair_batch_.end()) throw NotFoundError("unknown pair id '" + pair + "'");
        if (!state(it->second).open) throw ConflictError("batch '" + it->second + "' is closed");
        return apply(Judgment{annotator, pair, marked, clock_()}, true);
    }

    /// Next item of the batch this annotator has not judged yet, in batch order.
    struct NextItem {
        AnnotationItem item;
        std::size_t position = 0;  // 0-based
        std::size_t batch_size = 0;
    };
    std::optional<NextItem> next_item(const std::string& batch_id, const std::string& annotator) const {
        std::lock_guard lock(mutex_);
        const auto& b = state(batch_id).batch;
        for (std::size_t i = 0; i < b.items.size(); ++i)
            if (!effective_.count({annotator, b.items[i].pair_id})) return NextItem{b.items[i], i, b.items.size()};
        return std::nullopt;
    }

    /// Consistent copy of the effective judgments.
    JudgmentMap snapshot() const {
        std::lock_guard lock(mutex_);
        return effective_;
    }

    std::vector<LogEntry> log() const {
        std::lock_guard lock(mutex_);
        return log_;
    }

    /// Re-applies a JSON-lines judgment log without writing it back out.
    void replay(const std::filesystem::path& path) {
        auto in = detail::open_input(path);
        std::string line;
        std::size_t record = 0;
        std::lock_guard lock(mutex_);
        while (std::getline(in, line)) {
            ++record;
            if (trim(line).empty()) continue;
            const auto j = detail::parse_line(line, record);
            try {
                apply(Judgment{j.at("annotator").get<std::string>(), j.at("pair_id").get<std::string>(),
                               j.at("marked").get<bool>(), j.at("timestamp_ms").get<std::int64_t>()},
                      false);
            } catch (const nlohmann::json::exception& e) {
                throw ParseError(e.what(), record);
            }
        }
    }

private:
    struct State {
        AnnotationBatch batch;
        bool open = true;
    };

    State& state(const std::string& id) {
        auto it = batches_.find(id);
        if (it == batches_.end()) throw NotFoundError("unknown batch '" + id + "'");
        return it->second;
    }
    const State& state(const std::string& id) const {
        auto it = batches_.find(id);
        if (it == batches_.end()) throw NotFoundError("unknown batch '" + id + "'");
        return it->second;
    }

    Acknowledgement apply(Judgment j, bool persist) {
        const JudgmentKey key{j.annotator, j.pair_id};
        auto it = effective_.find(key);
        Acknowledgement ack;
        ack.overwrite = it != effective_.end();
        ack.changed = !ack.overwrite || it->second != j.marked;
        ack.seq = log_.size() + 1;
        effective_[key] = j.marked;
        LogEntry entry{ack.seq, std::move(j), ack.overwrite};
        if (persist && !log_path_.empty()) {
            std::ofstream out(log_path_, std::ios::app | std::ios::binary);
            if (!out) throw Error("cannot append to " + log_path_.string());
            out << to_json(entry).dump() << '\n';
            out.flush();
        }
        log_.push_back(std::move(entry));
        return ack;
    }

    std::filesystem::path log_path_;
    Clock clock_;
    mutable std::mutex mutex_;
    std::map<std::string, State> batches_;
    std::map<std::string, std::string> pair_batch_;
    JudgmentMap effective_;
    std::vector<LogEntry> log_;
};

// ---------------------------------------------------------------------------
// Reports. These are pure functions of (batch, judgments).

struct IntervalAccuracy {
    std::string interval;
    std::size_t items = 0;
    std::optional<double> accuracy;  // percent; absent when nothing in the interval was judged
};

struct AgreementReport {
    std::string batch_id;
    std::optional<double> agreement_rate;       // mean pairwise observed agreement, percent
    std::optional<double> unanimous_agreement;  // share of items judged identically by all, percent
    std::vector<IntervalAccuracy> intervals;
    std::size_t annotator_count = 0;
    std::size_t item_count = 0;
    std::size_t judgment_count = 0;
    bool complete = false;  // every annotator judged every item
};

namespace detail {
inline std::vector<std::string> batch_annotators(const AnnotationBatch& batch, const JudgmentMap& judgments) {
    std::set<std::string> ids;
    for (const auto& it : batch.items) ids.insert(it.pair_id);
    std::set<std::string> annotators;
    for (const auto& [key, marked] : judgments)
        if (ids.count(key.second)) annotators.insert(key.first);
    return {annotators.begin(), annotators.end()};
}
}  // namespace detail

/// Per interval: mean over annotators of (marked items / judged items), in percent.
inline std::vector<IntervalAccuracy> interval_accuracy(const AnnotationBatch& batch, const JudgmentMap& judgments) {
    const auto annotators = detail::batch_annotators(batch, judgments);
    if (annotators.empty()) throw ValidationError("interval_accuracy: no judgments for batch '" + batch.id + "'");
    std::vector<IntervalAccuracy> out;
    for (const auto& iv : batch.intervals) {
        IntervalAccuracy acc{iv.tag(), 0, std::nullopt};
        double sum = 0.0;
        std::size_t contributing = 0;
        for (const auto& a : annotators) {
            std::size_t judged = 0, marked = 0;
            for (const auto& it : batch.items) {
                if (it.interval != acc.interval) continue;
                auto j = judgments.find({a, it.pair_id});
                if (j == judgments.end()) continue;
                ++judged;
                marked += j->second ? 1 : 0;
            }
            if (judged == 0) continue;
            sum += 100.0 * double(marked) / double(judged);
            ++contributing;
        }
        for (const auto& it : batch.items) acc.items += it.interval == acc.interval ? 1 : 0;
        if (contributing > 0) acc.accuracy = sum / double(contributing);
        out.push_back(std::move(acc));
    }
    return out;
}

/// Mean over annotator pairs of the share of commonly judged items with identical marks, in percent.
inline double agreement_rate(const AnnotationBatch& batch, const JudgmentMap& judgments) {
    const auto annotators = detail::batch_annotators(batch, judgments);
    if (annotators.size() < 2) throw ValidationError("agreement_rate: needs at least two annotators");
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < annotators.size(); ++a) {
        for (std::size_t b = a + 1; b < annotators.size(); ++b) {
            std::size_t common = 0, same = 0;
            for (const auto& it : batch.items) {
                auto ja = judgments.find({annotators[a], it.pair_id});
                auto jb = judgments.find({annotators[b], it.pair_id});
                if (ja == judgments.end() || jb == judgments.end()) continue;
                ++common;
                same += ja->second == jb->second ? 1 : 0;
            }
            if (common == 0) continue;
            sum += 100.0 * double(same) / double(common);
            ++pairs;
        }
    }
    if (pairs == 0) throw ValidationError("agreement_rate: no item was judged by two annotators");
    return sum / double(pairs);
}

/// Share of items (judged by every annotator) on which all annotators agree, in percent.
inline std::optional<double> unanimous_agreement(const AnnotationBatch& batch, const JudgmentMap& judgments) {
    const auto annotators = detail::batch_annotators(batch, judgments);
    if (annotators.size() < 2) return std::nullopt;
    std::size_t full = 0, same = 0;
    for (const auto& it : batch.items) {
        std::set<bool> marks;
        std::size_t judged = 0;
        for (const auto& a : annotators) {
            auto j = judgments.find({a, it.pair_id});
            if (j == judgments.end()) continue;
            ++judged;
            marks.insert(j->second);
        }
        if (judged != annotators.size()) continue;
        ++full;
        same += marks.size() == 1 ? 1 : 0;
    }
    if (full == 0) return std::nullopt;
    return 100.0 * double(same) / double(full);
}

inline AgreementReport make_report(const AnnotationBatch& batch, const JudgmentMap& judgments) {
    AgreementReport r;
    r.batch_id = batch.id;
    r.item_count = batch.items.size();
    const auto annotators = detail::batch_annotators(batch, judgments);
    r.annotator_count = annotators.size();
    std::set<std::string> ids;
    for (const auto& it : batch.items) ids.insert(it.pair_id);
    for (const auto& [key, m] : judgments) r.judgment_count += ids.count(key.second);
    r.complete = r.annotator_count > 0 && r.judgment_count == r.annotator_count * r.item_count;
    r.intervals = interval_accuracy(batch, judgments);
    if (annotators.size() >= 2) {
        try {
            r.agreement_rate = agreement_rate(batch, judgments);
        } catch (const ValidationError&) {
        }
        r.unanimous_agreement = unanimous_agreement(batch, judgments);
    }
    return r;
}

inline nlohmann::json to_json(const AgreementReport& r) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    nlohmann::json intervals = nlohmann::json::array();
    for (const auto& iv : r.intervals)
        intervals.push_back({{"interval", iv.interval}, {"items", iv.items}, {"accuracy", opt(iv.accuracy)}});
    return {{"batch", r.batch_id},
            {"agreement_rate", opt(r.agreement_rate)},
            {"agreement_statistic", "mean pairwise observed agreement"},
            {"unanimous_agreement", opt(r.unanimous_agreement)},
            {"intervals", intervals},
            {"annotator_count", r.annotator_count},
            {"item_count", r.item_count},
            {"judgment_count", r.judgment_count},
            {"complete", r.complete}};
}

}  // namespace pgtask
