#pragma once

// Shared helpers for the test binaries: fixture paths, scratch directories,
// and random corpus generators.

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "pgtask/corpus.hpp"
#include "pgtask/random.hpp"

namespace testing_support {

namespace fs = std::filesystem;

inline fs::path fixture(const std::string& name) { return fs::path(PGTASK_FIXTURES) / name; }

inline std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void spit(const fs::path& p, const std::string& content) {
    std::ofstream(p, std::ios::binary) << content;
}

class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                ("pgtask-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

inline const std::vector<std::string>& word_pool() {
    static const std::vector<std::string> words = {
        "i",     "have", "a",    "dog",   "cat",   "like",  "love",   "music", "law",    "school",
        "study", "my",   "mom",  "is",    "best",  "friend", "play",  "guitar", "run",   "every",
        "day",   "work", "at",   "bank",  "nurse", "two",   "years", "left",   "college", "bake"};
    return words;
}

inline std::string random_sentence(pgtask::Rng& rng, std::size_t min_words, std::size_t max_words) {
    const auto& pool = word_pool();
    const auto n = min_words + rng.below(max_words - min_words + 1);
    std::string s;
    for (std::size_t i = 0; i < n; ++i) {
        if (i) s += ' ';
        s += pool[rng.below(pool.size())];
    }
    return s;
}

/// A valid random dialogue: two alternating speakers, personas of 1-5
/// sentences; some utterances copy one of the speaker's persona sentences.
inline pgtask::Dialogue random_dialogue(pgtask::Rng& rng, const std::string& id) {
    std::map<std::string, std::vector<std::string>> personas;
    for (const char* s : {"A", "B"}) {
        const auto n = 1 + rng.below(5);
        for (std::size_t i = 0; i < n; ++i) personas[s].push_back(random_sentence(rng, 2, 6));
    }
    std::vector<std::pair<std::string, std::string>> turns;
    const auto n_turns = rng.below(7);
    const bool a_first = rng.below(2) == 0;
    for (std::size_t t = 0; t < n_turns; ++t) {
        const std::string spk = ((t % 2 == 0) == a_first) ? "A" : "B";
        std::string text = random_sentence(rng, 1, 10);
        if (rng.below(3) == 0) {
            const auto& p = personas[spk];
            text = p[rng.below(p.size())] + " " + text;
        }
        turns.emplace_back(spk, text);
    }
    return pgtask::make_dialogue(id, turns, personas);
}

inline pgtask::DialogueCorpus random_corpus(pgtask::Rng& rng, std::size_t max_dialogues,
                                            pgtask::Split split = pgtask::Split::Train) {
    pgtask::DialogueCorpus c;
    c.split = split;
    const auto n = rng.below(max_dialogues + 1);
    for (std::size_t i = 0; i < n; ++i) c.dialogues.push_back(random_dialogue(rng, "r" + std::to_string(i)));
    return c;
}

}  // namespace testing_support
