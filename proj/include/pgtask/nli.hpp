#pragma once

// Three-way entailment classification: p(y | premise, hypothesis) = softmax(W h).
// Backends are injectable so the rest of the pipeline runs without a GPU.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pgtask/common.hpp"
#include "pgtask/corpus.hpp"
#include "pgtask/log.hpp"
#include "pgtask/nli_label.hpp"
#include "pgtask/optim.hpp"
#include "pgtask/parallel.hpp"
#include "pgtask/random.hpp"

namespace pgtask {

struct ProbSimplex3 {
    double contradiction = 0.0;
    double neutral = 0.0;
    double entailment = 0.0;

    double operator[](NliLabel l) const {
        switch (l) {
            case NliLabel::Contradiction: return contradiction;
            case NliLabel::Neutral: return neutral;
            case NliLabel::Entailment: return entailment;
        }
        return 0.0;
    }

    /// Ties go to the earlier label in C < N < E order.
    NliLabel argmax() const {
        NliLabel best = NliLabel::Contradiction;
        for (auto l : kAllLabels)
            if ((*this)[l] > (*this)[best]) best = l;
        return best;
    }

    bool is_valid(double tol = 1e-6) const {
        for (auto l : kAllLabels)
            if (!((*this)[l] >= 0.0 && (*this)[l] <= 1.0)) return false;
        return std::abs(contradiction + neutral + entailment - 1.0) <= tol;
    }

    bool operator==(const ProbSimplex3&) const = default;
};

using Logits3 = std::array<double, 3>;

inline ProbSimplex3 softmax3(const Logits3& z) {
    const double m = std::max({z[0], z[1], z[2]});
    const double a = std::exp(z[0] - m), b = std::exp(z[1] - m), c = std::exp(z[2] - m);
    const double s = a + b + c;
    return {a / s, b / s, c / s};
}

/// Produces the classification-layer output W h for a premise/hypothesis pair.
class NliBackend {
public:
    virtual ~NliBackend() = default;
    virtual std::string id() const = 0;
    virtual Logits3 logits(std::string_view premise, std::string_view hypothesis) const = 0;
};

/// Immutable, shareable classifier. Concurrent classify calls are safe.
class ClassifierHandle {
public:
    static constexpr std::size_t kDefaultMaxWords = 256;

    explicit ClassifierHandle(std::shared_ptr<const NliBackend> backend,
                              std::size_t max_words = kDefaultMaxWords)
        : backend_(std::move(backend)), max_words_(max_words) {
        if (!backend_) throw BackendError("null NLI backend");
        if (max_words_ < 2) throw ValidationError("NLI length budget must be at least 2 words");
    }

    std::string id() const { return backend_->id(); }
    const NliBackend& backend() const { return *backend_; }
    std::size_t max_words() const { return max_words_; }

private:
    std::shared_ptr<const NliBackend> backend_;
    std::size_t max_words_;
};

struct TruncatedPair {
    std::string premise;
    std::string hypothesis;
    bool truncated = false;
};

/// Fits a pair into a whitespace-word budget. Words are dropped from the end
/// of the premise first (keeping at least one); the hypothesis is cut last.
inline TruncatedPair fit_to_budget(std::string_view premise, std::string_view hypothesis,
                                   std::size_t max_words) {
    auto p = split_whitespace(premise);
    auto h = split_whitespace(hypothesis);
    if (p.size() + h.size() <= max_words) return {std::string(premise), std::string(hypothesis), false};
    const std::size_t keep_h = std::min(h.size(), max_words - 1);
    const std::size_t keep_p = std::min(p.size(), max_words - keep_h);
    p.resize(keep_p);
    h.resize(keep_h);
    return {join(p, " "), join(h, " "), true};
}

inline ProbSimplex3 classify(const ClassifierHandle& handle, std::string_view premise,
                             std::string_view hypothesis) {
    if (trim(premise).empty() || trim(hypothesis).empty())
        throw ValidationError("classify: premise and hypothesis must be non-empty");
    auto fitted = fit_to_budget(premise, hypothesis, handle.max_words());
    if (fitted.truncated)
        warn("NLI input truncated to " + std::to_string(handle.max_words()) + " words");
    const auto z = handle.backend().logits(fitted.premise, fitted.hypothesis);
    for (double v : z)
        if (!std::isfinite(v)) throw BackendError("backend '" + handle.id() + "' returned non-finite logits");
    return softmax3(z);
}

struct TextPair {
    std::string_view premise;
    std::string_view hypothesis;
};

/// Classifies pairs in parallel; results are returned in input order.
inline std::vector<ProbSimplex3> classify_batch(const ClassifierHandle& handle,
                                                const std::vector<TextPair>& pairs,
                                                unsigned threads = default_threads()) {
    return parallel_map(
        pairs.size(), [&](std::size_t i) { return classify(handle, pairs[i].premise, pairs[i].hypothesis); },
        threads);
}

// ---------------------------------------------------------------------------
// Pair features shared by the stub and trainable backends.

/// Lowercased whitespace tokens with leading/trailing punctuation removed.
inline std::vector<std::string> normalized_tokens(std::string_view text) {
    std::vector<std::string> out;
    for (auto& w : split_whitespace(text)) {
        std::size_t b = 0, e = w.size();
        while (b < e && std::ispunct(static_cast<unsigned char>(w[b]))) ++b;
        while (e > b && std::ispunct(static_cast<unsigned char>(w[e - 1]))) --e;
        if (b == e) continue;
        std::string t = w.substr(b, e - b);
        for (auto& c : t) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        out.push_back(std::move(t));
    }
    return out;
}

/// Fraction of distinct hypothesis tokens that also occur in the premise.
inline double token_overlap(std::string_view premise, std::string_view hypothesis) {
    const auto pt = normalized_tokens(premise);
    const auto ht = normalized_tokens(hypothesis);
    const std::set<std::string> p(pt.begin(), pt.end());
    const std::set<std::string> h(ht.begin(), ht.end());
    if (h.empty()) return 0.0;
    std::size_t shared = 0;
    for (const auto& t : h) shared += p.count(t);
    return static_cast<double>(shared) / static_cast<double>(h.size());
}

// ---------------------------------------------------------------------------
// Deterministic stub backends.

/// Predicts entailment iff token_overlap(premise, hypothesis) >= 0.5, neutral
/// otherwise. Entailment confidence grows with the overlap.
class OverlapStubBackend final : public NliBackend {
public:
    std::string id() const override { return "stub:overlap"; }
    Logits3 logits(std::string_view premise, std::string_view hypothesis) const override {
        const double o = token_overlap(premise, hypothesis);
        const double e = o >= 0.5 ? 1.5 + 12.0 * (o - 0.5) : 0.5 - 4.0 * (0.5 - o);
        return {0.0, 1.0, e};
    }
};

/// Pseudo-random but deterministic logits in [-4, 4] keyed on the texts.
class HashStubBackend final : public NliBackend {
public:
    explicit HashStubBackend(std::uint64_t seed = 0) : seed_(seed) {}
    std::string id() const override { return "stub:hash:" + std::to_string(seed_); }
    Logits3 logits(std::string_view premise, std::string_view hypothesis) const override {
        std::uint64_t h = fnv1a64(premise, 0xcbf29ce484222325ULL ^ (seed_ * 0x9e3779b97f4a7c15ULL));
        h = fnv1a64("\x1f", h);
        h = fnv1a64(hypothesis, h);
        Logits3 z{};
        for (auto& v : z) {
            h ^= h >> 33;
            h *= 0xff51afd7ed558ccdULL;
            h ^= h >> 33;
            v = -4.0 + 8.0 * static_cast<double>(h >> 11) * 0x1.0p-53;
        }
        return z;
    }

private:
    std::uint64_t seed_;
};

/// Exact lookup of logits by (premise, hypothesis); unknown pairs get `fallback`.
class TableStubBackend final : public NliBackend {
public:
    explicit TableStubBackend(Logits3 fallback = {0.0, 1.0, 0.0}) : fallback_(fallback) {}

    TableStubBackend& set(std::string premise, std::string hypothesis, Logits3 z) {
        table_[{std::move(premise), std::move(hypothesis)}] = z;
        return *this;
    }
    /// Logits whose softmax puts exactly `p_entail` on entailment and splits the rest evenly.
    static Logits3 with_entailment(double p_entail) {
        const double rest = std::max((1.0 - p_entail) / 2.0, 1e-300);
        return {std::log(rest), std::log(rest), std::log(std::max(p_entail, 1e-300))};
    }

    std::string id() const override { return "stub:table"; }
    Logits3 logits(std::string_view premise, std::string_view hypothesis) const override {
        auto it = table_.find({std::string(premise), std::string(hypothesis)});
        return it == table_.end() ? fallback_ : it->second;
    }

private:
    Logits3 fallback_;
    std::map<std::pair<std::string, std::string>, Logits3> table_;
};

// ---------------------------------------------------------------------------
// Trainable backend: multinomial logistic regression over pair features.

class LinearNliBackend final : public NliBackend {
public:
    static constexpr std::size_t kDense = 7;
    static constexpr std::size_t kHashed = 32;
    static constexpr std::size_t kFeatures = kDense + kHashed;
    static constexpr std::string_view kId = "linear-nli";

    using Features = std::array<double, kFeatures>;
    using Weights = std::array<double, 3 * kFeatures>;

    LinearNliBackend() { weights_.fill(0.0); }
    explicit LinearNliBackend(const Weights& w) : weights_(w) {}

    std::string id() const override { return std::string(kId); }

    static Features features(std::string_view premise, std::string_view hypothesis) {
        static const std::set<std::string> negations = {"not", "no", "never", "don't", "dont",
                                                        "didn't", "can't", "cannot", "isn't",
                                                        "won't", "nothing", "hate"};
        const auto pt = normalized_tokens(premise);
        const auto ht = normalized_tokens(hypothesis);
        const std::set<std::string> p(pt.begin(), pt.end());
        const std::set<std::string> h(ht.begin(), ht.end());
        Features f{};
        f[0] = 1.0;
        std::size_t shared = 0;
        for (const auto& t : h) shared += p.count(t);
        f[1] = h.empty() ? 0.0 : double(shared) / double(h.size());
        f[2] = p.empty() ? 0.0 : double(shared) / double(p.size());
        const std::size_t uni = p.size() + h.size() - shared;
        f[3] = uni == 0 ? 0.0 : double(shared) / double(uni);
        auto has_neg = [&](const std::set<std::string>& s) {
            for (const auto& n : negations)
                if (s.count(n)) return true;
            return false;
        };
        const bool np = has_neg(p), nh = has_neg(h);
        f[4] = np != nh ? 1.0 : 0.0;
        f[5] = np && nh ? 1.0 : 0.0;
        const double lp = double(pt.size()), lh = double(ht.size());
        f[6] = std::max(lp, lh) == 0.0 ? 0.0 : std::min(lp, lh) / std::max(lp, lh);
        for (const auto& t : h)
            if (!p.count(t)) f[kDense + fnv1a64(t) % kHashed] += 1.0 / double(h.size());
        return f;
    }

    Logits3 logits_from_features(const Features& f) const {
        Logits3 z{};
        for (std::size_t k = 0; k < 3; ++k)
            for (std::size_t i = 0; i < kFeatures; ++i) z[k] += weights_[k * kFeatures + i] * f[i];
        return z;
    }

    Logits3 logits(std::string_view premise, std::string_view hypothesis) const override {
        return logits_from_features(features(premise, hypothesis));
    }

    const Weights& weights() const { return weights_; }
    Weights& weights() { return weights_; }

private:
    Weights weights_;
};

// ---------------------------------------------------------------------------
// Training and evaluation.

struct NliTrainConfig {
    double learning_rate = 5e-5;
    int batch_size = 32;
    int max_epochs = 20;
    int patience = 5;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
        if (batch_size <= 0) throw ValidationError("batch size must be positive");
        if (max_epochs <= 0) throw ValidationError("max epochs must be positive");
        if (patience <= 0) throw ValidationError("patience must be positive");
        if (patience > max_epochs) throw ValidationError("patience must not exceed max epochs");
    }

    nlohmann::json to_json() const {
        return {{"learning_rate", learning_rate}, {"batch_size", batch_size},
                {"max_epochs", max_epochs},       {"patience", patience},
                {"early_stop_metric", "valid_accuracy"}, {"optimizer", "adam"},
                {"seed", seed}};
    }
};

inline double evaluate_accuracy(const ClassifierHandle& handle, const std::vector<NliExample>& test) {
    if (test.empty()) throw ValidationError("evaluate_accuracy: empty test set");
    std::vector<TextPair> pairs;
    pairs.reserve(test.size());
    for (const auto& ex : test) pairs.push_back({ex.premise, ex.hypothesis});
    const auto probs = classify_batch(handle, pairs);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < test.size(); ++i) correct += probs[i].argmax() == test[i].label ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

/// Concatenates a and b and shuffles deterministically by seed.
inline std::vector<NliExample> merge_training_sets(const std::vector<NliExample>& a,
                                                   const std::vector<NliExample>& b,
                                                   std::uint64_t seed) {
    std::vector<NliExample> out;
    out.reserve(a.size() + b.size());
    out.insert(out.end(), a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    Rng rng(seed);
    rng.shuffle(out);
    return out;
}

struct TrainedNli {
    ClassifierHandle handle;
    std::shared_ptr<const LinearNliBackend> model;
    NliTrainConfig config;
    EarlyStopResult run;
};

/// Fine-tunes the linear head with Adam on mean cross-entropy and returns the
/// epoch with the best validation accuracy.
inline TrainedNli train_nli(const std::vector<NliExample>& train, const std::vector<NliExample>& valid,
                            const NliTrainConfig& config) {
    config.validate();
    if (train.empty() || valid.empty()) throw ValidationError("train_nli: train and valid must be non-empty");

    using F = LinearNliBackend::Features;
    std::vector<F> feats;
    feats.reserve(train.size());
    for (const auto& ex : train) feats.push_back(LinearNliBackend::features(ex.premise, ex.hypothesis));

    Rng rng(config.seed);
    auto model = std::make_shared<LinearNliBackend>();
    for (auto& w : model->weights()) w = rng.normal(0.0, 0.01);
    auto best = model->weights();

    constexpr std::size_t K = LinearNliBackend::kFeatures;
    Adam adam(3 * K, config.learning_rate);
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    auto run_epoch = [&](int epoch) -> std::pair<double, double> {
        rng.shuffle(order);
        double total = 0.0;
        std::vector<double> grad(3 * K);
        for (std::size_t start = 0; start < order.size(); start += std::size_t(config.batch_size)) {
            const std::size_t end = std::min(order.size(), start + std::size_t(config.batch_size));
            std::fill(grad.begin(), grad.end(), 0.0);
            const double inv = 1.0 / double(end - start);
            for (std::size_t b = start; b < end; ++b) {
                const auto& f = feats[order[b]];
                const auto p = softmax3(model->logits_from_features(f));
                const auto gold = index_of(train[order[b]].label);
                const double pg = p[kAllLabels[gold]];
                total += -std::log(std::max(pg, 1e-300));
                for (std::size_t k = 0; k < 3; ++k) {
                    const double d = (p[kAllLabels[k]] - (k == gold ? 1.0 : 0.0)) * inv;
                    for (std::size_t i = 0; i < K; ++i) grad[k * K + i] += d * f[i];
                }
            }
            adam.step(model->weights(), grad);
        }
        const double loss = total / double(train.size());
        const auto& w = model->weights();
        if (!std::isfinite(loss) || !std::all_of(w.begin(), w.end(), [](double v) { return std::isfinite(v); }))
            throw DivergenceError("NLI training diverged at epoch " + std::to_string(epoch));
        const ClassifierHandle current(std::make_shared<LinearNliBackend>(model->weights()));
        try {
            return {loss, evaluate_accuracy(current, valid)};
        } catch (const BackendError&) {
            // Finite but huge weights can still overflow the logits.
            throw DivergenceError("NLI training diverged at epoch " + std::to_string(epoch));
        }
    };
    auto run = run_early_stopping(config.max_epochs, config.patience, true, run_epoch,
                                  [&](int) { best = model->weights(); });
    auto best_model = std::make_shared<const LinearNliBackend>(best);
    return {ClassifierHandle(best_model), best_model, config, std::move(run)};
}

// ---------------------------------------------------------------------------
// Checkpoints and backend resolution.

/// Pretrained encoders the pipeline is configured for. No transformer runtime
/// is linked, so these resolve to a BackendError.
struct EncoderSpec {
    std::string_view id;
    int layers;
    int hidden;
    int heads;
    int params_millions;
};

inline constexpr std::array<EncoderSpec, 1> kPretrainedEncoders = {{{"roberta-base", 12, 768, 12, 125}}};

/// Writes `{root}/linear-nli/metadata.json` and `weights.json`. Returns the backend directory.
inline std::filesystem::path save_nli_checkpoint(const TrainedNli& trained, const std::filesystem::path& root) {
    const auto dir = root / std::string(LinearNliBackend::kId);
    std::filesystem::create_directories(dir);
    nlohmann::json history = nlohmann::json::array();
    for (const auto& e : trained.run.history)
        history.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"valid_accuracy", e.metric}});
    nlohmann::json meta = {{"backend", LinearNliBackend::kId},
                           {"config", trained.config.to_json()},
                           {"seed", trained.config.seed},
                           {"best_valid_accuracy", trained.run.best_metric},
                           {"epoch", trained.run.best_epoch},
                           {"stopped_epoch", trained.run.stopped_epoch},
                           {"history", history}};
    std::ofstream(dir / "metadata.json", std::ios::binary) << meta.dump(2) << '\n';
    std::ofstream(dir / "weights.json", std::ios::binary)
        << nlohmann::json(std::vector<double>(trained.model->weights().begin(), trained.model->weights().end())).dump()
        << '\n';
    return dir;
}

inline std::shared_ptr<const LinearNliBackend> load_linear_nli(const std::filesystem::path& dir) {
    std::ifstream in(dir / "weights.json");
    if (!in) throw BackendError("cannot read " + (dir / "weights.json").string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw BackendError(std::string("corrupt NLI weights: ") + e.what());
    }
    LinearNliBackend::Weights w{};
    if (!j.is_array() || j.size() != w.size()) throw BackendError("NLI weights have the wrong size");
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = j[i].get<double>();
    return std::make_shared<const LinearNliBackend>(w);
}

/// Directory used to resolve bare checkpoint names (PGTASK_CACHE_DIR).
inline std::filesystem::path checkpoint_cache_dir() {
    if (const char* env = std::getenv("PGTASK_CACHE_DIR"); env && *env) return env;
    return {};
}

namespace detail {
/// Finds the directory holding metadata.json: `path` itself, or its single backend subdirectory.
inline std::filesystem::path locate_checkpoint(std::filesystem::path path) {
    namespace fs = std::filesystem;
    if (!fs::exists(path) && !path.is_absolute() && !checkpoint_cache_dir().empty())
        path = checkpoint_cache_dir() / path;
    if (!fs::is_directory(path)) throw BackendError("checkpoint not found: " + path.string());
    if (fs::exists(path / "metadata.json")) return path;
    std::vector<fs::path> found;
    for (const auto& e : fs::directory_iterator(path))
        if (e.is_directory() && fs::exists(e.path() / "metadata.json")) found.push_back(e.path());
    if (found.size() != 1)
        throw BackendError("expected exactly one backend checkpoint under " + path.string());
    return found.front();
}
}  // namespace detail

/// Resolves "stub:overlap", "stub:hash[:seed]", a pretrained id, or a checkpoint directory.
inline ClassifierHandle make_classifier(const std::string& spec) {
    if (spec == "stub:overlap") return ClassifierHandle(std::make_shared<OverlapStubBackend>());
    if (spec.rfind("stub:hash", 0) == 0) {
        std::uint64_t seed = 0;
        if (spec.size() > 9) {
            if (spec[9] != ':') throw BackendError("unknown NLI backend '" + spec + "'");
            seed = std::stoull(spec.substr(10));
        }
        return ClassifierHandle(std::make_shared<HashStubBackend>(seed));
    }
    for (const auto& enc : kPretrainedEncoders)
        if (spec == enc.id)
            throw BackendError("pretrained encoder '" + spec +
                               "' requires a transformer runtime, which this build does not include");
    const auto dir = detail::locate_checkpoint(spec);
    nlohmann::json meta;
    try {
        std::ifstream(dir / "metadata.json") >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw BackendError(std::string("corrupt checkpoint metadata: ") + e.what());
    }
    if (meta.value("backend", "") != LinearNliBackend::kId)
        throw BackendError("unsupported NLI backend in " + dir.string());
    return ClassifierHandle(load_linear_nli(dir));
}

}  // namespace pgtask
