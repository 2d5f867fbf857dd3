#pragma once

// Generation metrics on whitespace tokens, all reported in percent:
// corpus BLEU-1..4 (no smoothing), per-example ROUGE-1/2/L F1, and a greedy
// cosine-matching embedding score.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pgtask/common.hpp"
#include "pgtask/generator.hpp"

namespace pgtask {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

inline NgramCounts ngram_counts(const std::vector<std::string>& tokens, std::size_t n) {
    NgramCounts out;
    if (n == 0 || tokens.size() < n) return out;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i)
        ++out[std::vector<std::string>(tokens.begin() + std::ptrdiff_t(i), tokens.begin() + std::ptrdiff_t(i + n))];
    return out;
}

/// Candidate n-grams matched against the reference, each clipped at its reference count.
inline std::size_t clipped_matches(const NgramCounts& cand, const NgramCounts& ref) {
    std::size_t m = 0;
    for (const auto& [g, c] : cand)
        if (auto it = ref.find(g); it != ref.end()) m += std::min(c, it->second);
    return m;
}

namespace detail {
inline void check_corpus(const std::vector<std::string>& candidates, const std::vector<std::string>& references) {
    if (candidates.size() != references.size()) throw ValidationError("candidates and references differ in length");
    if (candidates.empty()) throw ValidationError("empty corpus");
}
}  // namespace detail

/// Corpus-level BLEU-n with brevity penalty and no smoothing.
inline double bleu(const std::vector<std::string>& candidates, const std::vector<std::string>& references, int n) {
    detail::check_corpus(candidates, references);
    if (n < 1 || n > 4) throw ValidationError("BLEU order must be 1..4");
    std::vector<std::size_t> matches(std::size_t(n), 0), totals(std::size_t(n), 0);
    std::size_t c_len = 0, r_len = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const auto c = split_whitespace(candidates[i]);
        const auto r = split_whitespace(references[i]);
        c_len += c.size();
        r_len += r.size();
        for (int k = 1; k <= n; ++k) {
            const auto cc = ngram_counts(c, std::size_t(k));
            matches[std::size_t(k - 1)] += clipped_matches(cc, ngram_counts(r, std::size_t(k)));
            for (const auto& [g, cnt] : cc) totals[std::size_t(k - 1)] += cnt;
        }
    }
    double log_p = 0.0;
    for (int k = 0; k < n; ++k) {
        if (matches[std::size_t(k)] == 0 || totals[std::size_t(k)] == 0) return 0.0;
        log_p += std::log(double(matches[std::size_t(k)]) / double(totals[std::size_t(k)]));
    }
    const double bp = c_len > r_len ? 1.0 : std::exp(1.0 - double(r_len) / double(c_len));
    return 100.0 * bp * std::exp(log_p / double(n));
}

inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

enum class RougeVariant { One, Two, L };

inline RougeVariant parse_rouge_variant(std::string_view s) {
    if (s == "1") return RougeVariant::One;
    if (s == "2") return RougeVariant::Two;
    if (s == "L" || s == "l") return RougeVariant::L;
    throw ValidationError("unknown ROUGE variant '" + std::string(s) + "'");
}

/// F1 in [0, 1] for one pair. Two texts with no units to compare score 1; one empty side scores 0.
inline double rouge_f1(const std::string& candidate, const std::string& reference, RougeVariant variant) {
    const auto c = split_whitespace(candidate);
    const auto r = split_whitespace(reference);
    std::size_t match = 0, c_units = 0, r_units = 0;
    if (variant == RougeVariant::L) {
        match = lcs_length(c, r);
        c_units = c.size();
        r_units = r.size();
    } else {
        const std::size_t n = variant == RougeVariant::One ? 1 : 2;
        const auto cc = ngram_counts(c, n);
        const auto rc = ngram_counts(r, n);
        match = clipped_matches(cc, rc);
        for (const auto& [g, k] : cc) c_units += k;
        for (const auto& [g, k] : rc) r_units += k;
    }
    if (c_units == 0 && r_units == 0) return 1.0;
    if (c_units == 0 || r_units == 0 || match == 0) return 0.0;
    const double p = double(match) / double(c_units);
    const double rc = double(match) / double(r_units);
    return 2.0 * p * rc / (p + rc);
}

/// Mean per-example F1, in percent.
inline double rouge(const std::vector<std::string>& candidates, const std::vector<std::string>& references,
                    RougeVariant variant) {
    detail::check_corpus(candidates, references);
    double sum = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) sum += rouge_f1(candidates[i], references[i], variant);
    return 100.0 * sum / double(candidates.size());
}

// ---------------------------------------------------------------------------
// Embedding score

/// Maps a token sequence to one vector per token (contextual models may look
/// at the whole sequence).
class TokenEmbedder {
public:
    virtual ~TokenEmbedder() = default;
    virtual std::string id() const = 0;
    virtual std::vector<std::vector<double>> embed(const std::vector<std::string>& tokens) const = 0;
};

/// Static per-word vectors derived from a hash of the word.
class HashEmbedder final : public TokenEmbedder {
public:
    explicit HashEmbedder(std::size_t dim = 16, std::uint64_t seed = 0) : dim_(dim), seed_(seed) {}
    std::string id() const override { return "stub:hash-embed:" + std::to_string(dim_); }
    std::vector<std::vector<double>> embed(const std::vector<std::string>& tokens) const override {
        std::vector<std::vector<double>> out;
        for (const auto& t : tokens) {
            Rng rng(fnv1a64(t, 0xcbf29ce484222325ULL ^ seed_));
            std::vector<double> v(dim_);
            for (auto& x : v) x = rng.normal();
            out.push_back(std::move(v));
        }
        return out;
    }

private:
    std::size_t dim_;
    std::uint64_t seed_;
};

/// Fixed word -> vector table; unknown words get a zero vector (cosine 0 to everything).
class TableEmbedder final : public TokenEmbedder {
public:
    explicit TableEmbedder(std::map<std::string, std::vector<double>> table, std::string name = "stub:table-embed")
        : table_(std::move(table)), name_(std::move(name)) {
        for (const auto& [w, v] : table_) dim_ = std::max(dim_, v.size());
    }
    std::string id() const override { return name_; }
    std::vector<std::vector<double>> embed(const std::vector<std::string>& tokens) const override {
        std::vector<std::vector<double>> out;
        for (const auto& t : tokens) {
            auto it = table_.find(t);
            out.push_back(it == table_.end() ? std::vector<double>(dim_, 0.0) : it->second);
        }
        return out;
    }

private:
    std::map<std::string, std::vector<double>> table_;
    std::string name_;
    std::size_t dim_ = 0;
};

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    if (a == b) return 1.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

struct EmbeddingMatch {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// Greedy matching: each candidate token takes its most similar reference
/// token (precision) and vice versa (recall). Negative means clamp to 0.
inline EmbeddingMatch embedding_match(const std::string& candidate, const std::string& reference,
                                      const TokenEmbedder& embedder) {
    const auto ct = split_whitespace(candidate);
    const auto rt = split_whitespace(reference);
    if (ct.empty() && rt.empty()) return {1.0, 1.0, 1.0};
    if (ct.empty() || rt.empty()) return {};
    const auto ce = embedder.embed(ct);
    const auto re = embedder.embed(rt);
    if (ce.size() != ct.size() || re.size() != rt.size()) throw BackendError("embedder returned the wrong number of vectors");
    std::vector<double> best_c(ce.size(), -1.0), best_r(re.size(), -1.0);
    for (std::size_t i = 0; i < ce.size(); ++i)
        for (std::size_t j = 0; j < re.size(); ++j) {
            const double s = cosine(ce[i], re[j]);
            best_c[i] = std::max(best_c[i], s);
            best_r[j] = std::max(best_r[j], s);
        }
    EmbeddingMatch m;
    for (double s : best_c) m.precision += s;
    for (double s : best_r) m.recall += s;
    m.precision = std::max(0.0, m.precision / double(ce.size()));
    m.recall = std::max(0.0, m.recall / double(re.size()));
    m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    return m;
}

/// Corpus mean of per-example F1, in percent.
inline double embedding_score(const std::vector<std::string>& candidates, const std::vector<std::string>& references,
                              const TokenEmbedder& embedder) {
    detail::check_corpus(candidates, references);
    const auto f = parallel_map(candidates.size(),
                                [&](std::size_t i) { return embedding_match(candidates[i], references[i], embedder).f1; });
    double sum = 0.0;
    for (double v : f) sum += v;
    return 100.0 * std::min(1.0, sum / double(candidates.size()));
}

inline std::shared_ptr<const TokenEmbedder> make_embedder(const std::string& spec) {
    if (spec == "stub:hash-embed") return std::make_shared<HashEmbedder>();
    if (spec.rfind("stub:hash-embed:", 0) == 0) return std::make_shared<HashEmbedder>(std::stoul(spec.substr(16)));
    throw BackendError("embedding scorer '" + spec + "' requires a contextual-embedding runtime, which this build does not include");
}

// ---------------------------------------------------------------------------
// Reports

inline const std::vector<std::string>& metric_names() {
    static const std::vector<std::string> names = {"bleu-1",  "bleu-2",  "bleu-3",  "bleu-4",
                                                   "rouge-1", "rouge-2", "rouge-l", "embedding"};
    return names;
}

struct MetricReport {
    std::map<std::string, double> scores;  // percent
    std::uint64_t seed = 0;
    std::size_t n_examples = 0;
    std::string embedding_model;

    bool operator==(const MetricReport&) const = default;
};

/// Multi-profile golden references are joined with a single space.
inline std::string join_references(const std::vector<std::string>& golden) { return join(golden, " "); }

inline MetricReport evaluate_predictions(const std::vector<Prediction>& preds, const TokenEmbedder* embedder,
                                         std::uint64_t seed = 0) {
    if (preds.empty()) throw ValidationError("no predictions to evaluate");
    std::vector<std::string> cand, ref;
    for (const auto& p : preds) {
        cand.push_back(p.generated);
        ref.push_back(join_references(p.golden));
    }
    MetricReport r;
    r.seed = seed;
    r.n_examples = preds.size();
    for (int n = 1; n <= 4; ++n) r.scores["bleu-" + std::to_string(n)] = bleu(cand, ref, n);
    r.scores["rouge-1"] = rouge(cand, ref, RougeVariant::One);
    r.scores["rouge-2"] = rouge(cand, ref, RougeVariant::Two);
    r.scores["rouge-l"] = rouge(cand, ref, RougeVariant::L);
    if (embedder) {
        r.scores["embedding"] = embedding_score(cand, ref, *embedder);
        r.embedding_model = embedder->id();
    }
    return r;
}

struct AggregateReport {
    std::map<std::string, double> mean;
    std::map<std::string, std::vector<double>> per_seed;
    std::vector<std::uint64_t> seeds;
    std::string embedding_model;
};

/// Arithmetic mean per metric; every report must carry the same metric set.
inline AggregateReport aggregate(const std::vector<MetricReport>& reports) {
    if (reports.empty()) throw ValidationError("aggregate: no reports");
    AggregateReport a;
    a.embedding_model = reports.front().embedding_model;
    for (const auto& r : reports) {
        if (r.scores.size() != reports.front().scores.size())
            throw ValidationError("aggregate: inconsistent metric sets");
        for (const auto& [name, v] : reports.front().scores)
            if (!r.scores.count(name)) throw ValidationError("aggregate: inconsistent metric sets");
        if (r.embedding_model != a.embedding_model) throw ValidationError("aggregate: reports use different embedding models");
        a.seeds.push_back(r.seed);
        for (const auto& [name, v] : r.scores) a.per_seed[name].push_back(v);
    }
    for (const auto& [name, values] : a.per_seed) {
        auto sorted = values;  // fixed summation order keeps the mean independent of report order
        std::sort(sorted.begin(), sorted.end());
        double s = 0.0;
        for (double v : sorted) s += v;
        a.mean[name] = s / double(values.size());
    }
    return a;
}

inline nlohmann::json to_json(const MetricReport& r) {
    return {{"scores", r.scores},
            {"seed", r.seed},
            {"n_examples", r.n_examples},
            {"embedding_model", r.embedding_model},
            {"reference_joining", "single space"},
            {"tokenization", "whitespace"},
            {"bleu", "corpus-level, no smoothing"},
            {"rouge", "per-example F1, mean"}};
}

inline nlohmann::json to_json(const AggregateReport& a) {
    return {{"mean", a.mean}, {"per_seed", a.per_seed}, {"seeds", a.seeds}, {"embedding_model", a.embedding_model}};
}

/// One row per model, one column per metric, two decimals.
inline std::string format_results_table(const std::vector<std::pair<std::string, std::map<std::string, double>>>& rows) {
    static const std::map<std::string, std::string> headers = {
        {"bleu-1", "BLEU-1"},   {"bleu-2", "BLEU-2"},   {"bleu-3", "BLEU-3"},   {"bleu-4", "BLEU-4"},
        {"rouge-1", "ROUGE-1"}, {"rouge-2", "ROUGE-2"}, {"rouge-l", "ROUGE-L"}, {"embedding", "Embedding"}};
    std::size_t width = 5;
    for (const auto& [model, s] : rows) width = std::max(width, model.size());
    std::ostringstream os;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%-*s", int(width), "Model");
    os << buf;
    for (const auto& m : metric_names()) {
        std::snprintf(buf, sizeof buf, " | %9s", headers.at(m).c_str());
        os << buf;
    }
    os << '\n' << std::string(width, '-');
    for (std::size_t i = 0; i < metric_names().size(); ++i) os << "-+-----------";
    os << '\n';
    for (const auto& [model, scores] : rows) {
        std::snprintf(buf, sizeof buf, "%-*s", int(width), model.c_str());
        os << buf;
        for (const auto& m : metric_names()) {
            auto it = scores.find(m);
            if (it == scores.end()) std::snprintf(buf, sizeof buf, " | %9s", "-");
            else std::snprintf(buf, sizeof buf, " | %9.2f", it->second);
            os << buf;
        }
        os << '\n';
    }
    return os.str();
}

}  // namespace pgtask
