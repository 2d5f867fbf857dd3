#pragma once

// Vocabulary, tokenizers, and the `utterance <gen> p1 <sep> p2 ... <eos>`
// training template with its loss mask.

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pgtask/common.hpp"

namespace pgtask {

using TokenId = std::int32_t;

inline constexpr std::string_view kUnkToken = "<unk>";
inline constexpr std::string_view kGenToken = "<gen>";
inline constexpr std::string_view kSepToken = "<sep>";
inline constexpr std::string_view kEosToken = "<eos>";

class Vocabulary {
public:
    Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

    /// Special tokens are prepended when missing from `tokens`.
    explicit Vocabulary(std::vector<std::string> tokens) {
        std::vector<std::string> missing;
        for (auto special : {kUnkToken, kGenToken, kSepToken, kEosToken})
            if (std::find(tokens.begin(), tokens.end(), special) == tokens.end()) missing.emplace_back(special);
        tokens.insert(tokens.begin(), missing.begin(), missing.end());
        for (auto& t : tokens) {
            if (index_.count(t)) throw ValidationError("duplicate vocabulary entry '" + t + "'");
            index_.emplace(t, static_cast<TokenId>(tokens_.size()));
            tokens_.push_back(std::move(t));
        }
        unk_ = index_.at(std::string(kUnkToken));
        gen_ = index_.at(std::string(kGenToken));
        sep_ = index_.at(std::string(kSepToken));
        eos_ = index_.at(std::string(kEosToken));
    }

    std::size_t size() const { return tokens_.size(); }
    TokenId unk() const { return unk_; }
    TokenId gen() const { return gen_; }
    TokenId sep() const { return sep_; }
    TokenId eos() const { return eos_; }

    bool is_special(TokenId id) const { return id == unk_ || id == gen_ || id == sep_ || id == eos_; }

    TokenId id(std::string_view token) const {
        auto it = index_.find(std::string(token));
        return it == index_.end() ? unk_ : it->second;
    }
    bool contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }
    const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> index_;
    TokenId unk_ = 0, gen_ = 0, sep_ = 0, eos_ = 0;
};

class Tokenizer {
public:
    virtual ~Tokenizer() = default;
    virtual std::string kind() const = 0;
    virtual std::vector<TokenId> encode(std::string_view text) const = 0;
    /// Decodes a run of non-special tokens.
    virtual std::string decode(std::span<const TokenId> ids) const = 0;
    virtual const Vocabulary& vocab() const = 0;
};

/// Whitespace tokens, case preserved. Unknown words map to <unk>.
class WordTokenizer final : public Tokenizer {
public:
    explicit WordTokenizer(Vocabulary vocab) : vocab_(std::move(vocab)) {}

    /// Specials first, then words by descending frequency, ties alphabetical.
    static WordTokenizer build(const std::vector<std::string>& texts, std::size_t min_count = 1) {
        std::map<std::string, std::size_t> counts;
        for (const auto& t : texts)
            for (auto& w : split_whitespace(t)) ++counts[w];
        std::vector<std::pair<std::string, std::size_t>> sorted(counts.begin(), counts.end());
        std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
        std::vector<std::string> tokens = {std::string(kUnkToken), std::string(kGenToken), std::string(kSepToken),
                                           std::string(kEosToken)};
        for (auto& [w, c] : sorted)
            if (c >= min_count && w != kUnkToken && w != kGenToken && w != kSepToken && w != kEosToken)
                tokens.push_back(w);
        return WordTokenizer(Vocabulary(std::move(tokens)));
    }

    std::string kind() const override { return "word"; }
    std::vector<TokenId> encode(std::string_view text) const override {
        std::vector<TokenId> out;
        for (const auto& w : split_whitespace(text)) out.push_back(vocab_.id(w));
        return out;
    }
    std::string decode(std::span<const TokenId> ids) const override {
        std::string out;
        for (auto id : ids) {
            if (!out.empty()) out += ' ';
            out += vocab_.token(id);
        }
        return out;
    }
    const Vocabulary& vocab() const override { return vocab_; }

private:
    Vocabulary vocab_;
};

/// One token per byte; the vocabulary holds the characters it was built from.
class CharTokenizer final : public Tokenizer {
public:
    explicit CharTokenizer(Vocabulary vocab) : vocab_(std::move(vocab)) {}

    static CharTokenizer build(std::string_view alphabet) {
        std::vector<std::string> tokens = {std::string(kUnkToken), std::string(kGenToken), std::string(kSepToken),
                                           std::string(kEosToken)};
        for (char c : alphabet) {
            std::string s(1, c);
            if (std::find(tokens.begin(), tokens.end(), s) == tokens.end()) tokens.push_back(s);
        }
        return CharTokenizer(Vocabulary(std::move(tokens)));
    }

    std::string kind() const override { return "char"; }
    std::vector<TokenId> encode(std::string_view text) const override {
        std::vector<TokenId> out;
        for (char c : text) out.push_back(vocab_.id(std::string(1, c)));
        return out;
    }
    std::string decode(std::span<const TokenId> ids) const override {
        std::string out;
        for (auto id : ids) out += vocab_.token(id);
        return out;
    }
    const Vocabulary& vocab() const override { return vocab_; }

private:
    Vocabulary vocab_;
};

inline nlohmann::json to_json(const Tokenizer& t) { return {{"kind", t.kind()}, {"tokens", t.vocab().tokens()}}; }

inline std::shared_ptr<const Tokenizer> tokenizer_from_json(const nlohmann::json& j) {
    const auto kind = j.at("kind").get<std::string>();
    Vocabulary vocab(j.at("tokens").get<std::vector<std::string>>());
    if (kind == "word") return std::make_shared<WordTokenizer>(std::move(vocab));
    if (kind == "char") return std::make_shared<CharTokenizer>(std::move(vocab));
    throw ValidationError("unknown tokenizer kind '" + kind + "'");
}

// ---------------------------------------------------------------------------

/// Token ids with a loss mask. mask[i] is true when token i is a prediction
/// target: every profile token, every <sep>, and the final <eos>.
struct FormattedExample {
    std::vector<TokenId> ids;
    std::vector<bool> mask;
    std::size_t boundary = 0;  // index of <gen>

    bool operator==(const FormattedExample&) const = default;
};

inline FormattedExample format_example(std::string_view utterance, const std::vector<std::string>& profiles,
                                       const Tokenizer& tokenizer) {
    if (profiles.empty()) throw ValidationError("format_example: at least one profile sentence is required");
    const auto& v = tokenizer.vocab();
    FormattedExample ex;
    ex.ids = tokenizer.encode(utterance);
    ex.boundary = ex.ids.size();
    ex.ids.push_back(v.gen());
    for (std::size_t i = 0; i < profiles.size(); ++i) {
        if (i > 0) ex.ids.push_back(v.sep());
        const auto p = tokenizer.encode(profiles[i]);
        ex.ids.insert(ex.ids.end(), p.begin(), p.end());
    }
    ex.ids.push_back(v.eos());
    ex.mask.assign(ex.ids.size(), false);
    for (std::size_t i = ex.boundary + 1; i < ex.ids.size(); ++i) ex.mask[i] = true;
    return ex;
}

/// Renders ids as text with a single space around every special token, e.g.
/// "i like dogs <gen> i have a dog <eos>".
inline std::string detokenize(const Tokenizer& tokenizer, std::span<const TokenId> ids) {
    const auto& v = tokenizer.vocab();
    std::vector<std::string> parts;
    std::vector<TokenId> run;
    auto flush = [&] {
        if (!run.empty()) parts.push_back(tokenizer.decode(run));
        run.clear();
    };
    for (auto id : ids) {
        if (id == v.gen() || id == v.sep() || id == v.eos()) {
            flush();
            parts.push_back(v.token(id));
        } else {
            run.push_back(id);
        }
    }
    flush();
    return join(parts, " ");
}

/// Splits generated text on <sep>, trimming and dropping empty pieces.
inline std::vector<std::string> split_profiles(std::string_view generated) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = generated.find(kSepToken, start);
        const auto piece = trim(generated.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (!piece.empty()) out.emplace_back(piece);
        if (pos == std::string_view::npos) break;
        start = pos + kSepToken.size();
    }
    return out;
}

}  // namespace pgtask
