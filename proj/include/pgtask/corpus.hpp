#pragma once

// Canonical in-memory model for persona-grounded dialogue corpora and NLI
// corpora, plus enumeration of candidate (utterance, profile sentence) pairs.

#include <array>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pgtask/common.hpp"
#include "pgtask/nli_label.hpp"

namespace pgtask {

struct Utterance {
    std::string dialogue_id;
    int turn = 0;
    std::string speaker;
    std::string text;

    bool operator==(const Utterance&) const = default;
};

struct ProfileSentence {
    std::string id;  // "{dialogue}/{speaker}/{index}"
    std::string speaker;
    std::string text;

    bool operator==(const ProfileSentence&) const = default;
};

struct Dialogue {
    std::string id;
    std::vector<Utterance> turns;
    std::map<std::string, std::vector<ProfileSentence>> personas;

    const std::vector<ProfileSentence>& persona(const std::string& speaker) const {
        return personas.at(speaker);
    }

    bool operator==(const Dialogue&) const = default;
};

struct DialogueCorpus {
    Split split = Split::Train;
    std::vector<Dialogue> dialogues;

    bool operator==(const DialogueCorpus&) const = default;
};

struct LoadIssue {
    std::size_t record = 0;  // 1-based line number
    std::string dialogue_id;
    std::string message;
    bool rejected = false;  // false: warning only, dialogue kept
};

struct CorpusLoad {
    DialogueCorpus corpus;
    std::vector<LoadIssue> issues;

    std::size_t rejected_count() const {
        std::size_t n = 0;
        for (const auto& i : issues) n += i.rejected ? 1 : 0;
        return n;
    }
};

struct NliExample {
    std::string premise;
    std::string hypothesis;
    NliLabel label = NliLabel::Neutral;

    bool operator==(const NliExample&) const = default;
};

enum class NliFormat { MultiGenre, DialogueNli };

inline NliFormat parse_nli_format(std::string_view s) {
    if (s == "multi-genre" || s == "mnli") return NliFormat::MultiGenre;
    if (s == "dialogue-nli" || s == "dnli") return NliFormat::DialogueNli;
    throw ValidationError("unknown NLI format '" + std::string(s) +
                          "' (expected multi-genre|dialogue-nli)");
}

struct LabelMapping {
    std::string_view source;
    NliLabel label;
};

/// Label strings accepted by the multi-genre format (MNLI "gold_label" values).
inline constexpr std::array<LabelMapping, 3> kMultiGenreLabels = {{
    {"entailment", NliLabel::Entailment},
    {"neutral", NliLabel::Neutral},
    {"contradiction", NliLabel::Contradiction},
}};

/// Label strings accepted by the dialogue-NLI format. The source corpus marks
/// entailed triples "positive" and contradicting triples "negative"; the
/// multi-genre names are also accepted so converted files load unchanged.
inline constexpr std::array<LabelMapping, 5> kDialogueNliLabels = {{
    {"positive", NliLabel::Entailment},
    {"neutral", NliLabel::Neutral},
    {"negative", NliLabel::Contradiction},
    {"entailment", NliLabel::Entailment},
    {"contradiction", NliLabel::Contradiction},
}};

inline NliLabel map_nli_label(std::string_view raw, NliFormat format) {
    auto lookup = [&](const auto& table) -> const LabelMapping* {
        for (const auto& m : table)
            if (m.source == raw) return &m;
        return nullptr;
    };
    const LabelMapping* m = format == NliFormat::MultiGenre ? lookup(kMultiGenreLabels)
                                                            : lookup(kDialogueNliLabels);
    if (!m) throw ValidationError("unknown label '" + std::string(raw) + "'");
    return m->label;
}

namespace detail {

inline std::ifstream open_input(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw Error("file not found: " + path.string());
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    return in;
}

inline const nlohmann::json& require(const nlohmann::json& obj, const char* key,
                                     std::size_t record) {
    auto it = obj.find(key);
    if (it == obj.end()) throw ParseError(std::string("missing field '") + key + "'", record);
    return *it;
}

inline std::string require_string(const nlohmann::json& obj, const char* key, std::size_t record) {
    const auto& v = require(obj, key, record);
    if (!v.is_string()) throw ParseError(std::string("field '") + key + "' must be a string", record);
    return v.get<std::string>();
}

inline nlohmann::json parse_line(const std::string& line, std::size_t record) {
    try {
        auto j = nlohmann::json::parse(line);
        if (!j.is_object()) throw ParseError("expected a JSON object", record);
        return j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("invalid JSON: ") + e.what(), record);
    }
}

/// Returns an empty string when the dialogue satisfies every invariant.
inline std::string check_dialogue(const Dialogue& d) {
    std::set<std::string> speakers;
    for (std::size_t i = 0; i < d.turns.size(); ++i) {
        const auto& u = d.turns[i];
        if (trim(u.text).empty()) return "turn " + std::to_string(i) + " has empty text";
        if (i > 0 && d.turns[i - 1].speaker == u.speaker)
            return "turns " + std::to_string(i - 1) + " and " + std::to_string(i) +
                   " do not alternate speakers";
        speakers.insert(u.speaker);
    }
    if (speakers.size() > 2) return "more than two speakers";
    for (const auto& s : speakers) {
        auto it = d.personas.find(s);
        if (it == d.personas.end() || it->second.empty())
            return "speaker '" + s + "' has no persona";
    }
    for (const auto& [speaker, sentences] : d.personas)
        for (const auto& p : sentences)
            if (trim(p.text).empty()) return "empty persona sentence for speaker '" + speaker + "'";
    return {};
}

}  // namespace detail

/// Builds a dialogue from raw parts, assigning turn indices and sentence ids.
inline Dialogue make_dialogue(std::string id,
                              const std::vector<std::pair<std::string, std::string>>& turns,
                              const std::map<std::string, std::vector<std::string>>& personas) {
    Dialogue d;
    d.id = std::move(id);
    for (std::size_t i = 0; i < turns.size(); ++i)
        d.turns.push_back({d.id, static_cast<int>(i), turns[i].first, turns[i].second});
    for (const auto& [speaker, sentences] : personas) {
        auto& out = d.personas[speaker];
        for (std::size_t i = 0; i < sentences.size(); ++i)
            out.push_back({d.id + "/" + speaker + "/" + std::to_string(i), speaker, sentences[i]});
    }
    return d;
}

/// Parses one dialogue JSON line. Schema errors throw ParseError.
inline Dialogue parse_dialogue(const nlohmann::json& j, std::size_t record) {
    const auto id = detail::require_string(j, "id", record);
    const auto& turns = detail::require(j, "turns", record);
    if (!turns.is_array()) throw ParseError("field 'turns' must be an array", record);
    std::vector<std::pair<std::string, std::string>> raw_turns;
    for (const auto& t : turns) {
        if (!t.is_object()) throw ParseError("each turn must be an object", record);
        raw_turns.emplace_back(detail::require_string(t, "speaker", record),
                               detail::require_string(t, "text", record));
    }
    const auto& personas = detail::require(j, "personas", record);
    if (!personas.is_object()) throw ParseError("field 'personas' must be an object", record);
    std::map<std::string, std::vector<std::string>> raw_personas;
    for (const auto& [speaker, sentences] : personas.items()) {
        if (!sentences.is_array()) throw ParseError("persona entries must be arrays", record);
        auto& out = raw_personas[speaker];
        for (const auto& s : sentences) {
            if (!s.is_string()) throw ParseError("persona sentences must be strings", record);
            out.push_back(s.get<std::string>());
        }
    }
    return make_dialogue(id, raw_turns, raw_personas);
}

/// Loads a JSON-lines dialogue file. Malformed records throw ParseError;
/// dialogues that violate an invariant are dropped and reported in issues.
inline CorpusLoad load_dialogue_corpus(const std::filesystem::path& path, Split split) {
    auto in = detail::open_input(path);
    CorpusLoad result;
    result.corpus.split = split;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t record = 0;
    while (std::getline(in, line)) {
        ++record;
        if (trim(line).empty()) continue;
        Dialogue d = parse_dialogue(detail::parse_line(line, record), record);
        if (auto why = detail::check_dialogue(d); !why.empty()) {
            result.issues.push_back({record, d.id, why, true});
            continue;
        }
        if (!seen.insert(d.id).second) {
            result.issues.push_back({record, d.id, "duplicate dialogue id", true});
            continue;
        }
        for (const auto& [speaker, sentences] : d.personas) {
            if (sentences.size() < 3 || sentences.size() > 5)
                result.issues.push_back({record, d.id,
                                         "persona of '" + speaker + "' has " +
                                             std::to_string(sentences.size()) +
                                             " sentences (expected 3 to 5)",
                                         false});
        }
        result.corpus.dialogues.push_back(std::move(d));
    }
    return result;
}

inline nlohmann::json to_json(const Dialogue& d) {
    nlohmann::json turns = nlohmann::json::array();
    for (const auto& u : d.turns) turns.push_back({{"speaker", u.speaker}, {"text", u.text}});
    nlohmann::json personas = nlohmann::json::object();
    for (const auto& [speaker, sentences] : d.personas) {
        auto arr = nlohmann::json::array();
        for (const auto& p : sentences) arr.push_back(p.text);
        personas[speaker] = std::move(arr);
    }
    return {{"id", d.id}, {"turns", std::move(turns)}, {"personas", std::move(personas)}};
}

inline void write_dialogue_corpus(const DialogueCorpus& corpus, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    for (const auto& d : corpus.dialogues) out << to_json(d).dump() << '\n';
}

/// Loads a JSON-lines NLI file. Keys "premise"/"hypothesis"/"label" are
/// canonical; the upstream names "sentence1"/"sentence2"/"gold_label" are
/// accepted as aliases.
inline std::vector<NliExample> load_nli_corpus(const std::filesystem::path& path, NliFormat format) {
    auto in = detail::open_input(path);
    std::vector<NliExample> out;
    std::string line;
    std::size_t record = 0;
    auto pick = [](const nlohmann::json& j, const char* a, const char* b) {
        return j.contains(a) ? a : b;
    };
    while (std::getline(in, line)) {
        ++record;
        if (trim(line).empty()) continue;
        auto j = detail::parse_line(line, record);
        NliExample ex;
        ex.premise = detail::require_string(j, pick(j, "premise", "sentence1"), record);
        ex.hypothesis = detail::require_string(j, pick(j, "hypothesis", "sentence2"), record);
        const auto raw = detail::require_string(j, pick(j, "label", "gold_label"), record);
        try {
            ex.label = map_nli_label(raw, format);
        } catch (const ValidationError& e) {
            throw ParseError(e.what(), record);
        }
        out.push_back(std::move(ex));
    }
    return out;
}

inline void write_nli_corpus(const std::vector<NliExample>& examples,
                             const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    for (const auto& ex : examples)
        out << nlohmann::json{{"premise", ex.premise},
                              {"hypothesis", ex.hypothesis},
                              {"label", long_name(ex.label)}}
                   .dump()
            << '\n';
}

/// A candidate pair. Both pointers view into the corpus it was enumerated
/// from, which must outlive the pair.
struct CandidatePair {
    const Dialogue* dialogue = nullptr;
    const Utterance* utterance = nullptr;
    const ProfileSentence* profile = nullptr;
    std::size_t profile_index = 0;  // position within the speaker's persona
};

/// Calls fn(CandidatePair) for every utterance paired with every profile
/// sentence of the same speaker, in dialogue, turn, persona order.
template <typename Fn>
void for_each_pair(const DialogueCorpus& corpus, Fn&& fn) {
    for (const auto& d : corpus.dialogues) {
        for (const auto& u : d.turns) {
            auto it = d.personas.find(u.speaker);
            if (it == d.personas.end()) continue;
            for (std::size_t i = 0; i < it->second.size(); ++i) fn(CandidatePair{&d, &u, &it->second[i], i});
        }
    }
}

inline std::vector<CandidatePair> enumerate_pairs(const DialogueCorpus& corpus) {
    std::vector<CandidatePair> out;
    for_each_pair(corpus, [&](const CandidatePair& p) { out.push_back(p); });
    return out;
}

inline std::size_t utterance_count(const DialogueCorpus& corpus) {
    std::size_t n = 0;
    for (const auto& d : corpus.dialogues) n += d.turns.size();
    return n;
}

}  // namespace pgtask
