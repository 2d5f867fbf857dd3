#pragma once

// The profile-generation dataset: one record per utterance that keeps at
// least one entailed profile sentence above the confidence threshold.

#include <cctype>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pgtask/alignment.hpp"
#include "pgtask/common.hpp"
#include "pgtask/corpus.hpp"
#include "pgtask/log.hpp"
#include "pgtask/nli.hpp"

namespace pgtask {

struct ScoredProfile {
    std::string text;
    double confidence = 0.0;

    bool operator==(const ScoredProfile&) const = default;
};

struct Provenance {
    std::string dialogue_id;
    int turn = 0;
    std::string speaker;

    bool operator==(const Provenance&) const = default;
};

struct PgdRecord {
    std::string utterance;
    std::vector<ScoredProfile> profiles;
    Split split = Split::Train;
    Provenance provenance;

    std::vector<std::string> profile_texts() const {
        std::vector<std::string> out;
        for (const auto& p : profiles) out.push_back(p.text);
        return out;
    }

    bool operator==(const PgdRecord&) const = default;
};

struct PgdMetadata {
    double threshold = 0.99;
    std::string classifier_id;
    std::string build_timestamp;
    nlohmann::json config = nlohmann::json::object();  // producing run config, if any
    std::string config_hash;

    bool operator==(const PgdMetadata&) const = default;
};

struct PgdDataset {
    std::vector<PgdRecord> records;
    PgdMetadata metadata;

    std::vector<PgdRecord> split(Split s) const {
        std::vector<PgdRecord> out;
        for (const auto& r : records)
            if (r.split == s) out.push_back(r);
        return out;
    }

    bool operator==(const PgdDataset&) const = default;
};

/// UTC ISO-8601 build time. Honors SOURCE_DATE_EPOCH for reproducible outputs.
inline std::string build_timestamp() {
    std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    if (const char* env = std::getenv("SOURCE_DATE_EPOCH"); env && *env) t = static_cast<std::time_t>(std::stoll(env));
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct SplitPairs {
    Split split = Split::Train;
    std::vector<AlignedPair> pairs;
};

/// Groups aligned pairs into records. Pairs are filtered at `threshold`
/// (strict), grouped per (dialogue, turn, speaker) in order of first
/// appearance, and profiles are deduplicated by text keeping the first.
inline std::vector<PgdRecord> assemble_records(const std::vector<SplitPairs>& inputs, double threshold) {
    std::vector<PgdRecord> out;
    for (const auto& in : inputs) {
        std::map<std::tuple<std::string, int, std::string>, std::size_t> index;
        std::vector<std::set<std::string>> seen;
        std::vector<PgdRecord> records;
        for (const auto& p : filter_by_confidence(in.pairs, threshold)) {
            auto key = std::make_tuple(p.dialogue_id, p.turn, p.speaker);
            auto [it, fresh] = index.emplace(key, records.size());
            if (fresh) {
                records.push_back({p.utterance, {}, in.split, {p.dialogue_id, p.turn, p.speaker}});
                seen.emplace_back();
            }
            if (seen[it->second].insert(p.profile).second)
                records[it->second].profiles.push_back({p.profile, p.confidence});
        }
        out.insert(out.end(), std::make_move_iterator(records.begin()), std::make_move_iterator(records.end()));
    }
    return out;
}

/// Aligns each corpus, filters at `threshold`, and assembles the dataset.
/// Records inherit the split of their source corpus.
inline PgdDataset build_pgd(const std::vector<DialogueCorpus>& corpora, const ClassifierHandle& classifier,
                            double threshold) {
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw ValidationError("threshold must lie in [0, 1]");
    std::vector<SplitPairs> inputs;
    for (const auto& c : corpora) inputs.push_back({c.split, align_corpus(c, classifier)});
    PgdDataset ds;
    ds.records = assemble_records(inputs, threshold);
    ds.metadata.threshold = threshold;
    ds.metadata.classifier_id = classifier.id();
    ds.metadata.build_timestamp = build_timestamp();
    if (ds.records.empty()) warn("build_pgd: no utterance kept a profile above the threshold");
    return ds;
}

// ---------------------------------------------------------------------------
// Statistics

struct SplitStats {
    std::size_t samples = 0;
    std::optional<double> avg_profiles;
    std::optional<double> avg_utterance_words;
    std::optional<double> avg_profile_words;

    bool operator==(const SplitStats&) const = default;
};

struct PgdStats {
    SplitStats train, valid, test;

    const SplitStats& at(Split s) const { return s == Split::Train ? train : s == Split::Valid ? valid : test; }
    SplitStats& at(Split s) { return s == Split::Train ? train : s == Split::Valid ? valid : test; }

    bool operator==(const PgdStats&) const = default;
};

/// Words are whitespace-separated tokens of the raw text. Profile words are
/// averaged over all profile sentences of a split, not per record.
inline PgdStats compute_statistics(const std::vector<PgdRecord>& records) {
    struct Acc {
        std::size_t samples = 0, profiles = 0, utt_words = 0, prof_words = 0;
    };
    std::map<Split, Acc> acc;
    for (const auto& r : records) {
        auto& a = acc[r.split];
        ++a.samples;
        a.profiles += r.profiles.size();
        a.utt_words += split_whitespace(r.utterance).size();
        for (const auto& p : r.profiles) a.prof_words += split_whitespace(p.text).size();
    }
    PgdStats stats;
    for (const auto& [split, a] : acc) {
        auto& s = stats.at(split);
        s.samples = a.samples;
        if (a.samples == 0) continue;
        s.avg_profiles = double(a.profiles) / double(a.samples);
        s.avg_utterance_words = double(a.utt_words) / double(a.samples);
        if (a.profiles > 0) s.avg_profile_words = double(a.prof_words) / double(a.profiles);
    }
    return stats;
}

inline nlohmann::json to_json(const SplitStats& s) {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    return {{"samples", s.samples},
            {"avg_profile_sentences", opt(s.avg_profiles)},
            {"avg_utterance_words", opt(s.avg_utterance_words)},
            {"avg_profile_sentence_words", opt(s.avg_profile_words)}};
}

inline nlohmann::json to_json(const PgdStats& s) {
    return {{"train", to_json(s.train)}, {"valid", to_json(s.valid)}, {"test", to_json(s.test)}};
}

/// Plain-text table with one block per split, two decimals, "-" for absent averages.
inline std::string format_stats_table(const PgdStats& stats) {
    std::ostringstream os;
    auto num = [](const std::optional<double>& v) {
        if (!v) return std::string("-");
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", *v);
        return std::string(buf);
    };
    const char* rule = "+-------+-----------------------------+----------+\n";
    os << rule;
    for (auto split : {Split::Train, Split::Valid, Split::Test}) {
        const auto& s = stats.at(split);
        std::string name(to_string(split));
        name[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(name[0])));
        char line[128];
        std::snprintf(line, sizeof line, "| %-5s | %-27s | %8zu |\n", name.c_str(), "# Samples", s.samples);
        os << line;
        std::snprintf(line, sizeof line, "| %-5s | %-27s | %8s |\n", "", "Avg. Profile Sentences", num(s.avg_profiles).c_str());
        os << line;
        std::snprintf(line, sizeof line, "| %-5s | %-27s | %8s |\n", "", "Avg. Utterance Words",
                      num(s.avg_utterance_words).c_str());
        os << line;
        std::snprintf(line, sizeof line, "| %-5s | %-27s | %8s |\n", "", "Avg. Profile Sentence Words",
                      num(s.avg_profile_words).c_str());
        os << line << rule;
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Persistence: {dir}/pgd.jsonl plus {dir}/metadata.json

inline nlohmann::json to_json(const PgdRecord& r) {
    nlohmann::json profiles = nlohmann::json::array(), confidences = nlohmann::json::array();
    for (const auto& p : r.profiles) {
        profiles.push_back(p.text);
        confidences.push_back(p.confidence);
    }
    return {{"utterance", r.utterance},
            {"profiles", std::move(profiles)},
            {"confidences", std::move(confidences)},
            {"split", to_string(r.split)},
            {"provenance",
             {{"dialogue", r.provenance.dialogue_id}, {"turn", r.provenance.turn}, {"speaker", r.provenance.speaker}}}};
}

inline PgdRecord parse_pgd_record(const nlohmann::json& j, std::size_t record) {
    PgdRecord r;
    r.utterance = detail::require_string(j, "utterance", record);
    const auto& profiles = detail::require(j, "profiles", record);
    const auto& confidences = detail::require(j, "confidences", record);
    if (!profiles.is_array() || !confidences.is_array() || profiles.size() != confidences.size())
        throw ParseError("'profiles' and 'confidences' must be arrays of equal length", record);
    if (profiles.empty()) throw ParseError("record has no profiles", record);
    std::set<std::string> seen;
    for (std::size_t i = 0; i < profiles.size(); ++i) {
        if (!profiles[i].is_string() || !confidences[i].is_number())
            throw ParseError("profile entries must be strings with numeric confidences", record);
        auto text = profiles[i].get<std::string>();
        if (!seen.insert(text).second) throw ParseError("duplicate profile '" + text + "'", record);
        r.profiles.push_back({std::move(text), confidences[i].get<double>()});
    }
    try {
        r.split = parse_split(detail::require_string(j, "split", record));
    } catch (const ValidationError& e) {
        throw ParseError(e.what(), record);
    }
    const auto& prov = detail::require(j, "provenance", record);
    if (!prov.is_object()) throw ParseError("'provenance' must be an object", record);
    r.provenance.dialogue_id = detail::require_string(prov, "dialogue", record);
    const auto& turn = detail::require(prov, "turn", record);
    if (!turn.is_number_integer()) throw ParseError("provenance turn must be an integer", record);
    r.provenance.turn = turn.get<int>();
    r.provenance.speaker = detail::require_string(prov, "speaker", record);
    return r;
}

inline void write_pgd(const PgdDataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "pgd.jsonl", std::ios::binary);
        if (!out) throw Error("cannot write " + (dir / "pgd.jsonl").string());
        for (const auto& r : ds.records) out << to_json(r).dump() << '\n';
    }
    const nlohmann::json meta = {{"threshold", ds.metadata.threshold},
                                 {"classifier", ds.metadata.classifier_id},
                                 {"build_timestamp", ds.metadata.build_timestamp},
                                 {"template", {{"separator", "<sep>"}, {"boundary", "<gen>"}, {"spacing", "single space"}}},
                                 {"config", ds.metadata.config},
                                 {"config_hash", ds.metadata.config_hash},
                                 {"statistics", to_json(compute_statistics(ds.records))}};
    std::ofstream(dir / "metadata.json", std::ios::binary) << meta.dump(2) << '\n';
}

/// Reads a dataset directory and re-checks every confidence against the
/// stored build threshold.
inline PgdDataset read_pgd(const std::filesystem::path& dir) {
    PgdDataset ds;
    {
        auto in = detail::open_input(dir / "metadata.json");
        nlohmann::json meta;
        try {
            in >> meta;
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("metadata: ") + e.what(), 0);
        }
        if (!meta.contains("threshold") || !meta["threshold"].is_number())
            throw ParseError("metadata: missing numeric 'threshold'", 0);
        ds.metadata.threshold = meta["threshold"].get<double>();
        ds.metadata.classifier_id = meta.value("classifier", "");
        ds.metadata.build_timestamp = meta.value("build_timestamp", "");
        ds.metadata.config = meta.value("config", nlohmann::json::object());
        ds.metadata.config_hash = meta.value("config_hash", "");
    }
    auto in = detail::open_input(dir / "pgd.jsonl");
    std::string line;
    std::size_t record = 0;
    while (std::getline(in, line)) {
        ++record;
        if (trim(line).empty()) continue;
        auto r = parse_pgd_record(detail::parse_line(line, record), record);
        for (const auto& p : r.profiles)
            if (!(p.confidence > ds.metadata.threshold))
                throw ParseError("confidence " + std::to_string(p.confidence) + " does not exceed build threshold",
                                 record);
        ds.records.push_back(std::move(r));
    }
    return ds;
}

}  // namespace pgtask
