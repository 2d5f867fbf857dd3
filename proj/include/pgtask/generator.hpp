#pragma once

// Profile generation: decoder backends, masked-objective training, and
// greedy decoding from `utterance <gen>`.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pgtask/common.hpp"
#include "pgtask/lm_loss.hpp"
#include "pgtask/optim.hpp"
#include "pgtask/parallel.hpp"
#include "pgtask/pgd.hpp"
#include "pgtask/random.hpp"
#include "pgtask/tokenizer.hpp"

namespace pgtask {

class DecoderBackend {
public:
    virtual ~DecoderBackend() = default;
    virtual std::string id() const = 0;
    virtual std::size_t vocab_size() const = 0;
    /// Scores for the token following `prefix`.
    virtual std::vector<double> next_logits(std::span<const TokenId> prefix) const = 0;
};

/// Always predicts end-of-sequence.
class EosStubDecoder final : public DecoderBackend {
public:
    EosStubDecoder(std::size_t vocab_size, TokenId eos) : vocab_size_(vocab_size), eos_(eos) {}
    std::string id() const override { return "stub:eos"; }
    std::size_t vocab_size() const override { return vocab_size_; }
    std::vector<double> next_logits(std::span<const TokenId>) const override {
        std::vector<double> z(vocab_size_, 0.0);
        z[static_cast<std::size_t>(eos_)] = 10.0;
        return z;
    }

private:
    std::size_t vocab_size_;
    TokenId eos_;
};

/// Next token is looked up from the last prefix token; unmapped tokens go to `fallback`.
class TableStubDecoder final : public DecoderBackend {
public:
    TableStubDecoder(std::size_t vocab_size, std::map<TokenId, TokenId> next, TokenId fallback)
        : vocab_size_(vocab_size), next_(std::move(next)), fallback_(fallback) {}
    std::string id() const override { return "stub:table"; }
    std::size_t vocab_size() const override { return vocab_size_; }
    std::vector<double> next_logits(std::span<const TokenId> prefix) const override {
        TokenId t = fallback_;
        if (!prefix.empty())
            if (auto it = next_.find(prefix.back()); it != next_.end()) t = it->second;
        std::vector<double> z(vocab_size_, 0.0);
        z[static_cast<std::size_t>(t)] = 10.0;
        return z;
    }

private:
    std::size_t vocab_size_;
    std::map<TokenId, TokenId> next_;
    TokenId fallback_;
};

/// Small trainable log-linear decoder:
///   h_t = tanh(E_prev[x_t] + E_prev2[x_{t-1}] + mean_{j < c_t} E_ctx[x_j])
///   logits_t = O h_t + b
/// where c_t = min(t + 1, index of <gen>), so the context is the utterance.
class TinyDecoder final : public DecoderBackend {
public:
    static constexpr std::string_view kId = "tiny-decoder";

    TinyDecoder(std::size_t vocab_size, std::size_t hidden, TokenId gen)
        : V_(vocab_size), d_(hidden), gen_(gen), params_(parameter_count(vocab_size, hidden), 0.0) {}

    static std::size_t parameter_count(std::size_t V, std::size_t d) { return V * d + (V + 1) * d + V * d + V * d + V; }

    void init(std::uint64_t seed, double scale = 0.1) {
        Rng rng(seed);
        const std::size_t bias = off_bias();
        for (std::size_t i = 0; i < params_.size(); ++i) params_[i] = i >= bias ? 0.0 : rng.normal(0.0, scale);
    }

    std::string id() const override { return std::string(kId); }
    std::size_t vocab_size() const override { return V_; }
    std::size_t hidden() const { return d_; }
    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }

    struct Cache {
        std::vector<std::vector<double>> h;  // per needed row
        std::vector<std::size_t> ctx_end;
    };

    /// Logits for every row flagged in `need`; other rows stay zero.
    Matrix forward(std::span<const TokenId> inputs, const std::vector<bool>& need, Cache* cache = nullptr) const {
        const std::size_t n = inputs.size();
        Matrix logits(n, V_, 0.0);
        if (cache) {
            cache->h.assign(n, {});
            cache->ctx_end.assign(n, 0);
        }
        std::size_t g = n;
        for (std::size_t i = 0; i < n; ++i)
            if (inputs[i] == gen_) {
                g = i;
                break;
            }
        std::vector<double> ctx_sum(d_, 0.0), h(d_);
        std::size_t ctx_count = 0;
        for (std::size_t t = 0; t < n; ++t) {
            if (t < g) {
                const double* e = &params_[off_ctx() + idx(inputs[t]) * d_];
                for (std::size_t k = 0; k < d_; ++k) ctx_sum[k] += e[k];
                ++ctx_count;
            }
            if (!need[t]) continue;
            const double* ep = &params_[off_prev() + idx(inputs[t]) * d_];
            const double* ep2 = &params_[off_prev2() + (t > 0 ? idx(inputs[t - 1]) : V_) * d_];
            for (std::size_t k = 0; k < d_; ++k) {
                const double c = ctx_count ? ctx_sum[k] / double(ctx_count) : 0.0;
                h[k] = std::tanh(ep[k] + ep2[k] + c);
            }
            auto row = logits.row(t);
            const double* O = &params_[off_out()];
            const double* b = &params_[off_bias()];
            for (std::size_t v = 0; v < V_; ++v) {
                double s = b[v];
                const double* o = O + v * d_;
                for (std::size_t k = 0; k < d_; ++k) s += o[k] * h[k];
                row[v] = s;
            }
            if (cache) {
                cache->h[t] = h;
                cache->ctx_end[t] = ctx_count;
            }
        }
        return logits;
    }

    /// Adds d loss / d params into `grad` given d loss / d logits.
    void backward(std::span<const TokenId> inputs, const Matrix& grad_logits, const Cache& cache,
                  std::vector<double>& grad) const {
        std::map<std::size_t, std::vector<double>> ctx_grad;  // ctx_end -> summed dpre
        std::vector<double> dh(d_), dpre(d_);
        const double* O = &params_[off_out()];
        for (std::size_t t = 0; t < inputs.size(); ++t) {
            if (cache.h[t].empty()) continue;
            const auto gl = grad_logits.row(t);
            const auto& h = cache.h[t];
            std::fill(dh.begin(), dh.end(), 0.0);
            for (std::size_t v = 0; v < V_; ++v) {
                const double g = gl[v];
                if (g == 0.0) continue;
                grad[off_bias() + v] += g;
                double* dO = &grad[off_out() + v * d_];
                const double* o = O + v * d_;
                for (std::size_t k = 0; k < d_; ++k) {
                    dO[k] += g * h[k];
                    dh[k] += g * o[k];
                }
            }
            for (std::size_t k = 0; k < d_; ++k) dpre[k] = dh[k] * (1.0 - h[k] * h[k]);
            double* dEp = &grad[off_prev() + idx(inputs[t]) * d_];
            double* dEp2 = &grad[off_prev2() + (t > 0 ? idx(inputs[t - 1]) : V_) * d_];
            for (std::size_t k = 0; k < d_; ++k) {
                dEp[k] += dpre[k];
                dEp2[k] += dpre[k];
            }
            if (const auto c = cache.ctx_end[t]; c > 0) {
                auto& acc = ctx_grad[c];
                acc.resize(d_, 0.0);
                for (std::size_t k = 0; k < d_; ++k) acc[k] += dpre[k] / double(c);
            }
        }
        // A context of length c covers inputs[0..c); fold the buckets from the longest down.
        std::vector<double> running(d_, 0.0);
        std::size_t pos = inputs.size();
        for (auto it = ctx_grad.rbegin(); it != ctx_grad.rend(); ++it) {
            const std::size_t c = it->first;
            for (; pos > c; --pos)
                if (pos - 1 < inputs.size()) add_ctx(grad, inputs[pos - 1], running);
            for (std::size_t k = 0; k < d_; ++k) running[k] += it->second[k];
        }
        for (; pos > 0; --pos) add_ctx(grad, inputs[pos - 1], running);
    }

    std::vector<double> next_logits(std::span<const TokenId> prefix) const override {
        if (prefix.empty()) return std::vector<double>(V_, 0.0);
        std::vector<bool> need(prefix.size(), false);
        need.back() = true;
        const auto m = forward(prefix, need);
        const auto r = m.row(prefix.size() - 1);
        return {r.begin(), r.end()};
    }

private:
    std::size_t idx(TokenId t) const {
        const auto i = static_cast<std::size_t>(t);
        if (t < 0 || i >= V_) throw ValidationError("token id out of range for decoder");
        return i;
    }
    void add_ctx(std::vector<double>& grad, TokenId tok, const std::vector<double>& g) const {
        double* d = &grad[off_ctx() + idx(tok) * d_];
        for (std::size_t k = 0; k < d_; ++k) d[k] += g[k];
    }
    std::size_t off_prev() const { return 0; }
    std::size_t off_prev2() const { return V_ * d_; }
    std::size_t off_ctx() const { return off_prev2() + (V_ + 1) * d_; }
    std::size_t off_out() const { return off_ctx() + V_ * d_; }
    std::size_t off_bias() const { return off_out() + V_ * d_; }

    std::size_t V_, d_;
    TokenId gen_;
    std::vector<double> params_;
};

/// Decoder plus its tokenizer. Immutable; safe for concurrent generation.
class DecoderHandle {
public:
    DecoderHandle(std::shared_ptr<const Tokenizer> tokenizer, std::shared_ptr<const DecoderBackend> backend)
        : tokenizer_(std::move(tokenizer)), backend_(std::move(backend)) {
        if (!tokenizer_ || !backend_) throw BackendError("decoder handle needs a tokenizer and a backend");
        const auto& v = tokenizer_->vocab();
        if (!v.contains(kGenToken) || !v.contains(kSepToken) || !v.contains(kEosToken))
            throw BackendError("vocabulary is missing a special token");
        if (backend_->vocab_size() != v.size())
            throw BackendError("decoder vocabulary size does not match the tokenizer");
    }

    std::string id() const { return backend_->id(); }
    const Tokenizer& tokenizer() const { return *tokenizer_; }
    std::shared_ptr<const Tokenizer> tokenizer_ptr() const { return tokenizer_; }
    const DecoderBackend& backend() const { return *backend_; }
    std::shared_ptr<const DecoderBackend> backend_ptr() const { return backend_; }

private:
    std::shared_ptr<const Tokenizer> tokenizer_;
    std::shared_ptr<const DecoderBackend> backend_;
};

/// Greedy decoding from `utterance <gen>`; stops at <eos> or after max_new_tokens.
/// Returns the text after <gen> with <sep> kept as a literal separator.
inline std::string generate(const DecoderHandle& model, std::string_view utterance, std::size_t max_new_tokens = 50) {
    if (trim(utterance).empty()) throw ValidationError("generate: empty utterance");
    const auto& v = model.tokenizer().vocab();
    auto prefix = model.tokenizer().encode(utterance);
    prefix.push_back(v.gen());
    const std::size_t start = prefix.size();
    for (std::size_t step = 0; step < max_new_tokens; ++step) {
        const auto z = model.backend().next_logits(prefix);
        const auto best = static_cast<TokenId>(std::distance(z.begin(), std::max_element(z.begin(), z.end())));
        if (best == v.eos()) break;
        prefix.push_back(best);
    }
    return detokenize(model.tokenizer(), std::span<const TokenId>(prefix).subspan(start));
}

// ---------------------------------------------------------------------------
// Configuration and model registry

struct DecoderSpec {
    std::string_view id;
    int layers;
    int hidden;
    int heads;
    int params_millions;
    int batch_size;
    int grad_accum;
};

inline constexpr std::array<DecoderSpec, 3> kPretrainedDecoders = {{
    {"distilgpt2", 6, 768, 12, 82, 16, 1},
    {"gpt2", 12, 768, 12, 117, 16, 1},
    {"gpt2-medium", 24, 1024, 16, 345, 4, 4},
}};

inline const DecoderSpec* find_pretrained_decoder(std::string_view id) {
    if (id == "gpt2-small") id = "gpt2";
    for (const auto& s : kPretrainedDecoders)
        if (s.id == id) return &s;
    return nullptr;
}

struct GenTrainConfig {
    double learning_rate = 5e-5;
    int batch_size = 16;
    int grad_accum = 1;
    int max_epochs = 20;
    int patience = 5;
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    std::size_t max_new_tokens = 50;
    LossReduction reduction = LossReduction::Mean;
    std::size_t hidden = 32;  // tiny decoder width

    /// Defaults for a registry model (batch 4 with 4 accumulation steps for the largest).
    static GenTrainConfig for_model(std::string_view id) {
        GenTrainConfig c;
        if (const auto* s = find_pretrained_decoder(id)) {
            c.batch_size = s->batch_size;
            c.grad_accum = s->grad_accum;
        }
        return c;
    }

    void validate() const {
        if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
        if (batch_size <= 0 || grad_accum <= 0) throw ValidationError("batch size and accumulation must be positive");
        if (max_epochs <= 0 || patience <= 0) throw ValidationError("epochs and patience must be positive");
        if (patience > max_epochs) throw ValidationError("patience must not exceed max epochs");
        if (seeds.empty()) throw ValidationError("at least one seed is required");
        if (max_new_tokens == 0) throw ValidationError("max new tokens must be positive");
        if (hidden == 0) throw ValidationError("hidden size must be positive");
    }

    nlohmann::json to_json() const {
        return {{"learning_rate", learning_rate},
                {"batch_size", batch_size},
                {"grad_accum", grad_accum},
                {"max_epochs", max_epochs},
                {"patience", patience},
                {"early_stop_metric", "valid_loss"},
                {"seeds", seeds},
                {"max_new_tokens", max_new_tokens},
                {"decoding", "greedy"},
                {"reduction", reduction == LossReduction::Mean ? "mean" : "sum"},
                {"hidden", hidden}};
    }
};

// ---------------------------------------------------------------------------
// Training

struct TrainedGenerator {
    DecoderHandle handle;
    std::shared_ptr<const TinyDecoder> model;
    GenTrainConfig config;
    std::uint64_t seed = 0;
    EarlyStopResult run;
};

inline std::vector<ShiftedExample> prepare_examples(const std::vector<PgdRecord>& records, const Tokenizer& tok) {
    std::vector<ShiftedExample> out;
    for (const auto& r : records) {
        auto s = shift_for_training(format_example(r.utterance, r.profile_texts(), tok));
        if (!s.targets.empty()) out.push_back(std::move(s));
    }
    return out;
}

/// Token-weighted mean (or per-example sum) of the masked objective.
inline double dataset_pg_loss(const TinyDecoder& model, const std::vector<ShiftedExample>& data,
                              LossReduction reduction = LossReduction::Mean) {
    double total = 0.0;
    std::size_t tokens = 0;
    for (const auto& ex : data) {
        const auto logits = model.forward(ex.inputs, ex.mask);
        const auto n = static_cast<std::size_t>(std::count(ex.mask.begin(), ex.mask.end(), true));
        total += pg_loss(logits, ex.targets, ex.mask, LossReduction::Sum);
        tokens += n;
    }
    if (reduction == LossReduction::Sum) return total / double(std::max<std::size_t>(1, data.size()));
    return total / double(std::max<std::size_t>(1, tokens));
}

/// Trains a copy of `init` (which must wrap a TinyDecoder) under the masked
/// objective with Adam, keeping the epoch with the lowest validation loss.
inline TrainedGenerator train_generator(const DecoderHandle& init, const std::vector<PgdRecord>& train,
                                        const std::vector<PgdRecord>& valid, const GenTrainConfig& config,
                                        std::uint64_t seed) {
    config.validate();
    if (train.empty() || valid.empty()) throw ValidationError("train_generator: train and valid must be non-empty");
    const auto* base = dynamic_cast<const TinyDecoder*>(&init.backend());
    if (!base) throw BackendError("decoder backend '" + init.id() + "' is not trainable in this build");

    const auto& tok = init.tokenizer();
    const auto train_ex = prepare_examples(train, tok);
    const auto valid_ex = prepare_examples(valid, tok);

    auto model = std::make_shared<TinyDecoder>(*base);
    auto best = model->params();
    Adam adam(model->params().size(), config.learning_rate);
    Rng rng(seed);
    std::vector<std::size_t> order(train_ex.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const std::size_t step_examples = std::size_t(config.batch_size) * std::size_t(config.grad_accum);

    auto run_epoch = [&](int epoch) -> std::pair<double, double> {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t epoch_tokens = 0;
        std::vector<double> grad(model->params().size());
        for (std::size_t start = 0; start < order.size(); start += step_examples) {
            const std::size_t end = std::min(order.size(), start + step_examples);
            std::fill(grad.begin(), grad.end(), 0.0);
            std::size_t tokens = 0;
            for (std::size_t i = start; i < end; ++i) {
                const auto& ex = train_ex[order[i]];
                TinyDecoder::Cache cache;
                const auto logits = model->forward(ex.inputs, ex.mask, &cache);
                epoch_loss += pg_loss(logits, ex.targets, ex.mask, LossReduction::Sum);
                const auto gl = pg_loss_grad(logits, ex.targets, ex.mask, LossReduction::Sum);
                model->backward(ex.inputs, gl, cache, grad);
                tokens += static_cast<std::size_t>(std::count(ex.mask.begin(), ex.mask.end(), true));
            }
            epoch_tokens += tokens;
            const double scale =
                config.reduction == LossReduction::Mean ? 1.0 / double(tokens) : 1.0 / double(end - start);
            for (auto& g : grad) g *= scale;
            adam.step(model->params(), grad);
        }
        const double loss = config.reduction == LossReduction::Mean ? epoch_loss / double(epoch_tokens)
                                                                    : epoch_loss / double(train_ex.size());
        if (!std::isfinite(loss)) throw DivergenceError("generator training diverged at epoch " + std::to_string(epoch));
        const double vloss = dataset_pg_loss(*model, valid_ex, config.reduction);
        if (!std::isfinite(vloss)) throw DivergenceError("validation loss is not finite at epoch " + std::to_string(epoch));
        return {loss, vloss};
    };
    auto run = run_early_stopping(config.max_epochs, config.patience, false, run_epoch,
                                  [&](int) { best = model->params(); });
    auto final_model = std::make_shared<TinyDecoder>(*model);
    final_model->params() = std::move(best);
    std::shared_ptr<const TinyDecoder> frozen = final_model;
    return {DecoderHandle(init.tokenizer_ptr(), frozen), frozen, config, seed, std::move(run)};
}

/// Fresh tiny decoder with a word vocabulary built from the records' texts.
inline DecoderHandle make_tiny_decoder(const std::vector<PgdRecord>& records, std::size_t hidden, std::uint64_t seed) {
    std::vector<std::string> texts;
    for (const auto& r : records) {
        texts.push_back(r.utterance);
        for (const auto& p : r.profiles) texts.push_back(p.text);
    }
    auto tok = std::make_shared<WordTokenizer>(WordTokenizer::build(texts));
    auto model = std::make_shared<TinyDecoder>(tok->vocab().size(), hidden, tok->vocab().gen());
    model->init(seed);
    return DecoderHandle(tok, model);
}

// ---------------------------------------------------------------------------
// Checkpoints

inline void save_generator(const TrainedGenerator& trained, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json history = nlohmann::json::array();
    for (const auto& e : trained.run.history)
        history.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"valid_loss", e.metric}});
    const nlohmann::json meta = {{"backend", TinyDecoder::kId},
                                 {"hidden", trained.model->hidden()},
                                 {"config", trained.config.to_json()},
                                 {"seed", trained.seed},
                                 {"best_valid_loss", trained.run.best_metric},
                                 {"epoch", trained.run.best_epoch},
                                 {"stopped_epoch", trained.run.stopped_epoch},
                                 {"history", history}};
    std::ofstream(dir / "metadata.json", std::ios::binary) << meta.dump(2) << '\n';
    std::ofstream(dir / "tokenizer.json", std::ios::binary) << to_json(trained.handle.tokenizer()).dump() << '\n';
    std::ofstream(dir / "weights.json", std::ios::binary) << nlohmann::json(trained.model->params()).dump() << '\n';
}

inline DecoderHandle load_generator(const std::filesystem::path& dir) {
    auto read = [&](const char* name) {
        std::ifstream in(dir / name);
        if (!in) throw BackendError("cannot read " + (dir / name).string());
        try {
            return nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw BackendError(std::string("corrupt decoder checkpoint: ") + e.what());
        }
    };
    const auto meta = read("metadata.json");
    if (meta.value("backend", "") != TinyDecoder::kId) throw BackendError("unsupported decoder backend in " + dir.string());
    auto tok = tokenizer_from_json(read("tokenizer.json"));
    auto model = std::make_shared<TinyDecoder>(tok->vocab().size(), meta.at("hidden").get<std::size_t>(), tok->vocab().gen());
    auto w = read("weights.json").get<std::vector<double>>();
    if (w.size() != model->params().size()) throw BackendError("decoder weights have the wrong size");
    model->params() = std::move(w);
    return DecoderHandle(tok, model);
}

/// Resolves "stub:eos" (specials-only vocabulary), a pretrained id, or a checkpoint directory.
inline DecoderHandle make_decoder(const std::string& spec) {
    if (spec == "stub:eos") {
        auto tok = std::make_shared<WordTokenizer>(Vocabulary{});
        return DecoderHandle(tok, std::make_shared<EosStubDecoder>(tok->vocab().size(), tok->vocab().eos()));
    }
    if (find_pretrained_decoder(spec))
        throw BackendError("pretrained decoder '" + spec + "' requires a transformer runtime, which this build does not include");
    return load_generator(detail::locate_checkpoint(spec));
}

// ---------------------------------------------------------------------------
// Prediction dumps

struct Prediction {
    std::string utterance;
    std::vector<std::string> golden;
    std::string generated;
    std::uint64_t seed = 0;

    bool operator==(const Prediction&) const = default;
};

inline std::vector<Prediction> predict(const DecoderHandle& model, const std::vector<PgdRecord>& records,
                                       std::uint64_t seed, std::size_t max_new_tokens = 50) {
    return parallel_map(records.size(), [&](std::size_t i) {
        return Prediction{records[i].utterance, records[i].profile_texts(),
                          generate(model, records[i].utterance, max_new_tokens), seed};
    });
}

inline void write_predictions(const std::vector<Prediction>& preds, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    for (const auto& p : preds)
        out << nlohmann::json{{"utterance", p.utterance}, {"golden", p.golden}, {"generated", p.generated}, {"seed", p.seed}}
                   .dump()
            << '\n';
}

inline std::vector<Prediction> read_predictions(const std::filesystem::path& path) {
    auto in = detail::open_input(path);
    std::vector<Prediction> out;
    std::string line;
    std::size_t record = 0;
    while (std::getline(in, line)) {
        ++record;
        if (trim(line).empty()) continue;
        const auto j = detail::parse_line(line, record);
        try {
            out.push_back({j.at("utterance").get<std::string>(), j.at("golden").get<std::vector<std::string>>(),
                           j.at("generated").get<std::string>(), j.value("seed", std::uint64_t{0})});
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(e.what(), record);
        }
    }
    return out;
}

}  // namespace pgtask
