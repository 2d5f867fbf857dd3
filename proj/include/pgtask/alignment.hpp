#pragma once

// Utterance/profile alignment: a profile sentence is attached to an utterance
// when the classifier's argmax label for {utterance, profile} is entailment.

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pgtask/common.hpp"
#include "pgtask/corpus.hpp"
#include "pgtask/nli.hpp"

namespace pgtask {

struct AlignedPair {
    std::string dialogue_id;
    int turn = 0;
    std::string speaker;
    std::string utterance;
    std::string profile;
    double confidence = 0.0;             // p(E) at full precision
    std::optional<ProbSimplex3> probs;   // absent when read back from a dump

    bool operator==(const AlignedPair&) const = default;
};

/// Stable identifier used by the annotation service: "{dialogue}:{turn}:{hash of profile}".
inline std::string pair_id(const AlignedPair& p) {
    return p.dialogue_id + ":" + std::to_string(p.turn) + ":" + hex64(fnv1a64(p.profile)).substr(0, 8);
}

inline AlignedPair make_aligned_pair(const Utterance& u, const ProfileSentence& p, const ProbSimplex3& probs) {
    return {u.dialogue_id, u.turn, u.speaker, u.text, p.text, probs.entailment, probs};
}

/// The profile sentences of `persona` entailed by `utterance`, in persona order.
inline std::vector<AlignedPair> entailed_profiles(const Utterance& utterance,
                                                  const std::vector<ProfileSentence>& persona,
                                                  const ClassifierHandle& classifier) {
    if (persona.empty()) throw ValidationError("entailed_profiles: empty persona");
    std::vector<AlignedPair> out;
    for (const auto& p : persona) {
        const auto probs = classify(classifier, utterance.text, p.text);
        if (probs.argmax() == NliLabel::Entailment) out.push_back(make_aligned_pair(utterance, p, probs));
    }
    return out;
}

/// Aligns every utterance against its own speaker's persona. Pairs are
/// classified in parallel and merged back in enumeration order.
inline std::vector<AlignedPair> align_corpus(const DialogueCorpus& corpus, const ClassifierHandle& classifier,
                                             unsigned threads = default_threads()) {
    const auto candidates = enumerate_pairs(corpus);
    std::vector<TextPair> texts;
    texts.reserve(candidates.size());
    for (const auto& c : candidates) texts.push_back({c.utterance->text, c.profile->text});
    const auto probs = classify_batch(classifier, texts, threads);
    std::vector<AlignedPair> out;
    for (std::size_t i = 0; i < candidates.size(); ++i)
        if (probs[i].argmax() == NliLabel::Entailment)
            out.push_back(make_aligned_pair(*candidates[i].utterance, *candidates[i].profile, probs[i]));
    return out;
}

/// Keeps pairs whose confidence is strictly greater than threshold.
inline std::vector<AlignedPair> filter_by_confidence(const std::vector<AlignedPair>& pairs, double threshold) {
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw ValidationError("threshold must lie in [0, 1]");
    std::vector<AlignedPair> out;
    for (const auto& p : pairs)
        if (p.confidence > threshold) out.push_back(p);
    return out;
}

struct ConfidenceSummary {
    double bin_width = 1.0;               // percentage points
    std::vector<std::size_t> bins;        // bins[i] counts [i*w, (i+1)*w); the last bin is closed at 100
    std::size_t count = 0;
    double mean = 0.0;                    // percent
    double variance = 0.0;                // population variance, percent^2

    double bin_start(std::size_t i) const { return static_cast<double>(i) * bin_width; }
};

inline ConfidenceSummary confidence_summary(const std::vector<AlignedPair>& pairs, double bin_width = 1.0) {
    if (pairs.empty()) throw ValidationError("confidence_summary: no pairs");
    if (!(bin_width > 0.0 && bin_width <= 100.0)) throw ValidationError("bin width must lie in (0, 100]");
    ConfidenceSummary s;
    s.bin_width = bin_width;
    s.bins.assign(static_cast<std::size_t>(std::ceil(100.0 / bin_width - 1e-9)), 0);
    s.count = pairs.size();
    double sum = 0.0;
    for (const auto& p : pairs) {
        const double pct = p.confidence * 100.0;
        sum += pct;
        auto idx = static_cast<std::size_t>(std::max(0.0, std::floor(pct / bin_width)));
        if (idx >= s.bins.size()) idx = s.bins.size() - 1;
        ++s.bins[idx];
    }
    s.mean = sum / static_cast<double>(pairs.size());
    double sq = 0.0;
    for (const auto& p : pairs) {
        const double d = p.confidence * 100.0 - s.mean;
        sq += d * d;
    }
    s.variance = sq / static_cast<double>(pairs.size());
    return s;
}

// ---------------------------------------------------------------------------
// Dumps

inline nlohmann::json to_json(const AlignedPair& p) {
    return {{"dialogue", p.dialogue_id}, {"turn", p.turn},       {"speaker", p.speaker},
            {"utterance", p.utterance},  {"profile", p.profile}, {"p_entail", p.confidence}};
}

inline void write_aligned_pairs(const std::vector<AlignedPair>& pairs, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    for (const auto& p : pairs) out << to_json(p).dump() << '\n';
}

inline std::vector<AlignedPair> read_aligned_pairs(const std::filesystem::path& path) {
    auto in = detail::open_input(path);
    std::vector<AlignedPair> out;
    std::string line;
    std::size_t record = 0;
    while (std::getline(in, line)) {
        ++record;
        if (trim(line).empty()) continue;
        const auto j = detail::parse_line(line, record);
        AlignedPair p;
        p.dialogue_id = detail::require_string(j, "dialogue", record);
        const auto& turn = detail::require(j, "turn", record);
        if (!turn.is_number_integer()) throw ParseError("field 'turn' must be an integer", record);
        p.turn = turn.get<int>();
        p.speaker = detail::require_string(j, "speaker", record);
        p.utterance = detail::require_string(j, "utterance", record);
        p.profile = detail::require_string(j, "profile", record);
        const auto& conf = detail::require(j, "p_entail", record);
        if (!conf.is_number()) throw ParseError("field 'p_entail' must be a number", record);
        p.confidence = conf.get<double>();
        if (!(p.confidence > 0.0 && p.confidence <= 1.0))
            throw ParseError("p_entail must lie in (0, 1]", record);
        out.push_back(std::move(p));
    }
    return out;
}

/// Histogram as `bin_start;count` lines, one per bin.
inline void write_histogram_csv(const ConfidenceSummary& s, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    for (std::size_t i = 0; i < s.bins.size(); ++i) {
        const double start = s.bin_start(i);
        nlohmann::json v = start;
        if (start == std::floor(start)) v = static_cast<long long>(start);
        out << v.dump() << ';' << s.bins[i] << '\n';
    }
}

}  // namespace pgtask
