#pragma once

// Corpus ingestion, AdamW with linear warmup and cosine decay, global-norm
// gradient clipping, and paired training of the supervised and control
// models from one seed.

#include "headforge/config.hpp"
#include "headforge/model.hpp"
#include "headforge/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iterator>
#include <numbers>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace headforge {

struct TrainConfig {
    double lr_peak = 3e-4;
    double weight_decay = 0.1;
    std::size_t batch_size = 64;
    std::size_t seq_len = 512;
    std::size_t warmup_steps = 1000;
    std::size_t total_steps = 10000;
    double clip_norm = 1.0;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double val_fraction = 0.05;
    std::size_t eval_batches = 8;

    void validate() const {
        if (lr_peak <= 0.0 || batch_size == 0 || seq_len == 0 || clip_norm <= 0.0)
            throw std::invalid_argument("train config: lr, batch size, sequence length and clip must be positive");
        if (warmup_steps > total_steps)
            throw std::invalid_argument("train config: warmup_steps exceeds total_steps");
        if (weight_decay < 0.0) throw std::invalid_argument("train config: weight_decay must be >= 0");
        if (val_fraction < 0.0 || val_fraction >= 1.0)
            throw std::invalid_argument("train config: val_fraction must be in [0, 1)");
    }
};

inline TrainConfig train_config_from(const KeyValueConfig& kv) {
    TrainConfig t;
    t.lr_peak = kv.get_double("lr_peak", t.lr_peak);
    t.weight_decay = kv.get_double("weight_decay", t.weight_decay);
    t.batch_size = kv.get_uint("batch_size", t.batch_size);
    t.seq_len = kv.get_uint("seq_len", t.seq_len);
    t.warmup_steps = kv.get_uint("warmup_steps", t.warmup_steps);
    t.total_steps = kv.get_uint("total_steps", t.total_steps);
    t.clip_norm = kv.get_double("clip_norm", t.clip_norm);
    t.seed = kv.get_uint("seed", t.seed);
    t.val_fraction = kv.get_double("val_fraction", t.val_fraction);
    t.eval_batches = kv.get_uint("eval_batches", t.eval_batches);
    t.validate();
    return t;
}

// Linear warmup from 0 to lr_peak, then cosine decay to 0 at total_steps.
inline double lr_at(const TrainConfig& c, std::size_t step) {
    if (step < c.warmup_steps)
        return c.lr_peak * static_cast<double>(step) / static_cast<double>(c.warmup_steps);
    if (step >= c.total_steps) return 0.0;
    const double span = static_cast<double>(c.total_steps - c.warmup_steps);
    if (span <= 0.0) return c.lr_peak;
    const double progress = static_cast<double>(step - c.warmup_steps) / span;
    return c.lr_peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// ---- corpus ----------------------------------------------------------------

enum class CorpusFormat { kTokensU32, kRawBytes };

inline CorpusFormat parse_corpus_format(const std::string& s) {
    if (s == "tokens_u32") return CorpusFormat::kTokensU32;
    if (s == "raw_bytes") return CorpusFormat::kRawBytes;
    throw std::invalid_argument("unknown corpus format '" + s + "' (expected tokens_u32 or raw_bytes)");
}

struct Corpus {
    std::vector<std::uint32_t> token_ids;
    std::string source;

    // Leading (1 - val_fraction) share for training, the rest for validation.
    std::pair<std::span<const std::uint32_t>, std::span<const std::uint32_t>> split(double val_fraction) const {
        const auto n = token_ids.size();
        const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * val_fraction));
        std::span<const std::uint32_t> all(token_ids);
        return {all.first(n - n_val), all.subspan(n - n_val)};
    }
};

inline Corpus ingest(const std::string& path, CorpusFormat format, std::size_t vocab) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open corpus " + path);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Corpus c;
    c.source = path;
    if (format == CorpusFormat::kRawBytes) {
        if (vocab < 256) throw std::invalid_argument("raw_bytes corpus needs vocab >= 256, got " + std::to_string(vocab));
        c.token_ids.reserve(bytes.size());
        for (char b : bytes) c.token_ids.push_back(static_cast<unsigned char>(b));
        return c;
    }
    if (bytes.size() % 4 != 0)
        throw std::runtime_error("tokens_u32 corpus " + path + " has " + std::to_string(bytes.size()) +
                                 " bytes, not a multiple of 4");
    c.token_ids.resize(bytes.size() / 4);
    std::memcpy(c.token_ids.data(), bytes.data(), bytes.size());
    for (std::size_t i = 0; i < c.token_ids.size(); ++i) {
        if (c.token_ids[i] >= vocab)
            throw std::out_of_range("token id " + std::to_string(c.token_ids[i]) + " at byte offset " +
                                    std::to_string(4 * i) + " exceeds vocabulary size " + std::to_string(vocab));
    }
    return c;
}

// ---- optimisation ----------------------------------------------------------

// Scales all gradients so their global L2 norm is at most max_norm; returns
// the norm before clipping.
template <class T>
double clip_grad_norm(std::vector<Tensor<T>>& params, double max_norm) {
    double sq = 0.0;
    for (auto& p : params)
        for (T g : std::as_const(p).grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const T s = static_cast<T>(max_norm / norm);
        for (auto& p : params)
            for (auto& g : p.grad()) g *= s;
    }
    return norm;
}

// Decoupled weight decay (applied to matrices only), bias-corrected moments.
template <class T>
class AdamW {
   public:
    AdamW(std::vector<Tensor<T>> params, double beta1, double beta2, double eps)
        : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (const auto& p : params_) {
            m_.emplace_back(p.size(), 0.0);
            v_.emplace_back(p.size(), 0.0);
        }
    }

    void step(double lr, double weight_decay) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            auto w = p.data();
            auto g = std::as_const(p).grad();
            const bool decay = p.rank() >= 2 && weight_decay > 0.0;
            for (std::size_t j = 0; j < w.size(); ++j) {
                const double gj = g.empty() ? 0.0 : static_cast<double>(g[j]);
                m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * gj;
                v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * gj * gj;
                double wj = static_cast<double>(w[j]);
                if (decay) wj *= 1.0 - lr * weight_decay;
                wj -= lr * (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + eps_);
                w[j] = static_cast<T>(wj);
            }
        }
    }

    std::size_t steps_taken() const { return t_; }

   private:
    std::vector<Tensor<T>> params_;
    double beta1_, beta2_, eps_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t t_ = 0;
};

// ---- batches -----------------------------------------------------------------

struct Batch {
    std::vector<std::uint32_t> inputs;   // batch * seq_len
    std::vector<std::int64_t> targets;  // next token of each input
    std::size_t seq_len = 0;
};

// Random contiguous windows of seq_len + 1 tokens; order is a pure function
// of the seed.
class BatchSampler {
   public:
    BatchSampler(std::span<const std::uint32_t> tokens, std::size_t batch_size, std::size_t seq_len,
                 std::uint64_t seed)
        : tokens_(tokens), batch_size_(batch_size), seq_len_(seq_len), rng_(seed) {
        if (tokens_.size() < seq_len_ + 1)
            throw std::invalid_argument("corpus of " + std::to_string(tokens_.size()) +
                                        " tokens is too short for sequence length " + std::to_string(seq_len_));
    }

    Batch next() {
        std::uniform_int_distribution<std::size_t> start(0, tokens_.size() - seq_len_ - 1);
        Batch b;
        b.seq_len = seq_len_;
        for (std::size_t i = 0; i < batch_size_; ++i) {
            const std::size_t s = start(rng_);
            for (std::size_t t = 0; t < seq_len_; ++t) {
                b.inputs.push_back(tokens_[s + t]);
                b.targets.push_back(tokens_[s + t + 1]);
            }
        }
        return b;
    }

   private:
    std::span<const std::uint32_t> tokens_;
    std::size_t batch_size_, seq_len_;
    std::mt19937_64 rng_;
};

// Non-overlapping windows over a span, for deterministic evaluation.
inline std::vector<Batch> sequential_batches(std::span<const std::uint32_t> tokens, std::size_t batch_size,
                                             std::size_t seq_len, std::size_t max_batches) {
    std::vector<Batch> out;
    std::size_t pos = 0;
    while (out.size() < max_batches) {
        Batch b;
        b.seq_len = seq_len;
        for (std::size_t i = 0; i < batch_size && pos + seq_len + 1 <= tokens.size(); ++i) {
            for (std::size_t t = 0; t < seq_len; ++t) {
                b.inputs.push_back(tokens[pos + t]);
                b.targets.push_back(tokens[pos + t + 1]);
            }
            pos += seq_len;
        }
        if (b.inputs.empty()) break;
        out.push_back(std::move(b));
    }
    return out;
}

// ---- training ------------------------------------------------------------

struct StepMetrics {
    std::size_t step = 0;
    double loss = 0.0;
    std::vector<double> layer_ce;
    double lr = 0.0;
    double grad_norm = 0.0;
};

inline void write_metrics_header(std::ostream& out, std::size_t layers) {
    out << "step\tloss";
    for (std::size_t l = 0; l < layers; ++l) out << "\tce_" << l;
    out << "\tlr\tgrad_norm\n";
}

inline void write_metrics_line(std::ostream& out, const StepMetrics& m) {
    out << m.step << '\t' << std::setprecision(8) << m.loss;
    for (double ce : m.layer_ce) out << '\t' << ce;
    out << '\t' << m.lr << '\t' << m.grad_norm << '\n';
}

template <class T>
class Trainer {
   public:
    Trainer(Model<T>& model, TrainConfig cfg)
        : model_(model),
          cfg_(std::move(cfg)),
          params_(model.params().tensors()),
          opt_(params_, cfg_.beta1, cfg_.beta2, cfg_.eps),
          dropout_rng_(cfg_.seed ^ 0x9e3779b97f4a7c15ULL) {
        cfg_.validate();
    }

    StepMetrics train_step(const Batch& batch) {
        for (auto& p : params_) {
            p.ensure_grad();
            p.zero_grad();
        }
        Graph<T> g(true);
        ForwardOptions opt;
        opt.training = true;
        opt.dropout_rng = &dropout_rng_;
        auto res = model_.forward(g, batch.inputs, batch.seq_len, opt);
        auto loss = model_.pls_loss(g, res.layer_logits, batch.targets);
        StepMetrics m;
        m.step = step_;
        m.loss = static_cast<double>(loss.total.item());
        m.layer_ce = loss.layer_ce;
        if (!std::isfinite(m.loss))
            throw std::runtime_error("non-finite loss at step " + std::to_string(step_));
        g.backward(loss.total);
        m.grad_norm = clip_grad_norm(params_, cfg_.clip_norm);
        m.lr = lr_at(cfg_, step_);
        opt_.step(m.lr, cfg_.weight_decay);
        ++step_;
        return m;
    }

    std::size_t step() const { return step_; }

   private:
    Model<T>& model_;
    TrainConfig cfg_;
    std::vector<Tensor<T>> params_;
    AdamW<T> opt_;
    std::mt19937_64 dropout_rng_;
    std::size_t step_ = 0;
};

// Mean per-layer CE over deterministic windows, dropout off.
template <class T>
std::vector<double> evaluate_layer_ce(const Model<T>& model, std::span<const std::uint32_t> tokens,
                                      std::size_t batch_size, std::size_t seq_len, std::size_t max_batches) {
    std::vector<double> sum(model.config().layers, 0.0);
    std::size_t count = 0;
    for (const auto& b : sequential_batches(tokens, batch_size, seq_len, max_batches)) {
        Graph<T> g(false);
        auto res = model.forward(g, b.inputs, b.seq_len);
        for (std::size_t l = 0; l < sum.size(); ++l)
            sum[l] += static_cast<double>(g.cross_entropy(res.layer_logits[l], b.targets).item());
        ++count;
    }
    if (count == 0) throw std::invalid_argument("evaluation split too short for one window");
    for (auto& s : sum) s /= static_cast<double>(count);
    return sum;
}

struct TrainedPair {
    Model<float> pls;
    Model<float> control;
    std::vector<double> pls_val_ce;
    std::vector<double> control_val_ce;
};

using StepCallback = std::function<void(bool is_pls, const StepMetrics&)>;

// Trains the supervised model and its control from identical initial weights,
// identical batches and identical dropout draws; only pls_enabled differs.
inline TrainedPair train_pair(ModelConfig model_cfg, const TrainConfig& cfg, const Corpus& corpus,
                              const StepCallback& on_step = {}) {
    cfg.validate();
    if (corpus.token_ids.empty()) throw std::invalid_argument("refusing to train on an empty corpus");
    auto [train_split, val_split] = corpus.split(cfg.val_fraction);
    if (cfg.seq_len > model_cfg.max_seq_len)
        throw std::invalid_argument("seq_len exceeds the model's max_seq_len");

    auto init = Parameters<float>::init(model_cfg, cfg.seed);
    model_cfg.pls_enabled = true;
    Model<float> pls(model_cfg, init.clone());
    model_cfg.pls_enabled = false;
    Model<float> control(model_cfg, init.clone());

    auto run = [&](Model<float>& m, bool is_pls) {
        Trainer<float> trainer(m, cfg);
        BatchSampler sampler(train_split, cfg.batch_size, cfg.seq_len, cfg.seed + 1);
        for (std::size_t s = 0; s < cfg.total_steps; ++s) {
            auto metrics = trainer.train_step(sampler.next());
            if (on_step) on_step(is_pls, metrics);
        }
    };
    run(pls, true);
    run(control, false);

    TrainedPair out{std::move(pls), std::move(control), {}, {}};
    if (val_split.size() > cfg.seq_len) {
        out.pls_val_ce = evaluate_layer_ce(out.pls, val_split, cfg.batch_size, cfg.seq_len, cfg.eval_batches);
        out.control_val_ce = evaluate_layer_ce(out.control, val_split, cfg.batch_size, cfg.seq_len, cfg.eval_batches);
    }
    return out;
}

}  // namespace headforge
