#pragma once

// Dual-stream transformer with gated attention, per-layer logits through a
// tied head, and the per-layer supervision loss.
//
// The residual state is split into a token stream x_t and a contextual
// stream x_e. In CASCADE mode x_t is frozen after embedding and every
// sublayer writes into x_e; in the standard dual mode attention writes into
// x_t and the feed-forward block writes into x_e. Both modes use Pre-LN:
//   a = Attn(LN1(x)),  f = FFN(LN2(x + a)),  x = x_t + x_e.

#include "headforge/checkpoint.hpp"
#include "headforge/io.hpp"
#include "headforge/tensor.hpp"

#include <cmath>
#include <compare>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace headforge {

enum class StreamMode : std::uint32_t { kCascade = 0, kDualStandard = 1 };

inline const char* to_string(StreamMode m) {
    return m == StreamMode::kCascade ? "cascade" : "dual_standard";
}

struct ModelConfig {
    std::size_t layers = 6;
    std::size_t heads = 6;
    std::size_t hidden = 384;
    std::size_t ffn = 1536;
    std::size_t vocab = 50257;
    std::size_t max_seq_len = 512;
    double dropout = 0.1;
    bool pls_enabled = true;
    double pls_lambda = 0.1;
    StreamMode mode = StreamMode::kCascade;
    // Learned absolute positions are added to x_t at embedding time; x_e
    // always starts at zero.
    bool learned_positions = true;

    std::size_t head_dim() const { return hidden / heads; }

    void validate() const {
        if (layers == 0 || heads == 0 || hidden == 0 || ffn == 0 || vocab == 0 || max_seq_len == 0)
            throw std::invalid_argument("model config: all sizes must be positive");
        if (hidden % heads != 0)
            throw std::invalid_argument("model config: hidden " + std::to_string(hidden) +
                                        " is not divisible by heads " + std::to_string(heads));
        if (pls_lambda < 0.0) throw std::invalid_argument("model config: lambda must be >= 0");
        if (dropout < 0.0 || dropout >= 1.0)
            throw std::invalid_argument("model config: dropout must be in [0, 1)");
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct HeadRef {
    std::size_t layer = 0;
    std::size_t head = 0;
    friend auto operator<=>(const HeadRef&, const HeadRef&) = default;
};

// Multiplies the post-gate output of each target head by `scale` before the
// heads are concatenated. scale 0 is ablation, scale 1 is the identity.
struct InterventionSpec {
    std::vector<HeadRef> targets;
    double scale = 1.0;
};

template <class T>
struct LayerParams {
    Tensor<T> ln1_gamma, ln1_beta;
    Tensor<T> w_q, w_k, w_v, w_o;
    std::vector<Tensor<T>> gate_w;  // per head [d_h, d_h]
    std::vector<Tensor<T>> gate_b;  // per head [d_h]
    Tensor<T> ln2_gamma, ln2_beta;
    Tensor<T> w_1, b_1, w_2, b_2;
};

template <class T>
struct Parameters {
    Tensor<T> tok_emb;  // [V, d], also the transposed LM head
    Tensor<T> pos_emb;  // [max_seq_len, d]
    std::vector<LayerParams<T>> layers;
    Tensor<T> lnf_gamma, lnf_beta;

    // Stable order; checkpoints and optimizer state follow it.
    std::vector<std::pair<std::string, Tensor<T>>> named() const {
        std::vector<std::pair<std::string, Tensor<T>>> out;
        out.emplace_back("tok_emb", tok_emb);
        out.emplace_back("pos_emb", pos_emb);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const auto& p = layers[l];
            const std::string pre = "layers." + std::to_string(l) + ".";
            out.emplace_back(pre + "ln1.gamma", p.ln1_gamma);
            out.emplace_back(pre + "ln1.beta", p.ln1_beta);
            out.emplace_back(pre + "attn.w_q", p.w_q);
            out.emplace_back(pre + "attn.w_k", p.w_k);
            out.emplace_back(pre + "attn.w_v", p.w_v);
            out.emplace_back(pre + "attn.w_o", p.w_o);
            for (std::size_t h = 0; h < p.gate_w.size(); ++h) {
                out.emplace_back(pre + "attn.gate_w." + std::to_string(h), p.gate_w[h]);
                out.emplace_back(pre + "attn.gate_b." + std::to_string(h), p.gate_b[h]);
            }
            out.emplace_back(pre + "ln2.gamma", p.ln2_gamma);
            out.emplace_back(pre + "ln2.beta", p.ln2_beta);
            out.emplace_back(pre + "ffn.w_1", p.w_1);
            out.emplace_back(pre + "ffn.b_1", p.b_1);
            out.emplace_back(pre + "ffn.w_2", p.w_2);
            out.emplace_back(pre + "ffn.b_2", p.b_2);
        }
        out.emplace_back("lnf.gamma", lnf_gamma);
        out.emplace_back("lnf.beta", lnf_beta);
        return out;
    }

    std::vector<Tensor<T>> tensors() const {
        std::vector<Tensor<T>> out;
        for (auto& [_, t] : named()) out.push_back(t);
        return out;
    }

    std::size_t count() const {
        std::size_t n = 0;
        for (auto& [_, t] : named()) n += t.size();
        return n;
    }

    // Allocates zero weights, unit LayerNorm gains.
    static Parameters zeros(const ModelConfig& c) {
        c.validate();
        const std::size_t d = c.hidden, dh = c.head_dim();
        Parameters p;
        p.tok_emb = Tensor<T>({c.vocab, d}, true);
        p.pos_emb = Tensor<T>({c.max_seq_len, d}, true);
        for (std::size_t l = 0; l < c.layers; ++l) {
            LayerParams<T> lp;
            lp.ln1_gamma = ones({d});
            lp.ln1_beta = Tensor<T>({d}, true);
            lp.w_q = Tensor<T>({d, d}, true);
            lp.w_k = Tensor<T>({d, d}, true);
            lp.w_v = Tensor<T>({d, d}, true);
            lp.w_o = Tensor<T>({d, d}, true);
            for (std::size_t h = 0; h < c.heads; ++h) {
                lp.gate_w.emplace_back(Shape{dh, dh}, true);
                lp.gate_b.emplace_back(Shape{dh}, true);
            }
            lp.ln2_gamma = ones({d});
            lp.ln2_beta = Tensor<T>({d}, true);
            lp.w_1 = Tensor<T>({d, c.ffn}, true);
            lp.b_1 = Tensor<T>({c.ffn}, true);
            lp.w_2 = Tensor<T>({c.ffn, d}, true);
            lp.b_2 = Tensor<T>({d}, true);
            p.layers.push_back(std::move(lp));
        }
        p.lnf_gamma = ones({d});
        p.lnf_beta = Tensor<T>({d}, true);
        return p;
    }

    // normal(0, 0.02) for embeddings and projections, zero biases, unit gains.
    static Parameters init(const ModelConfig& c, std::uint64_t seed) {
        Parameters p = zeros(c);
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> normal(0.0, 0.02);
        for (auto& [name, t] : p.named()) {
            if (t.rank() != 2) continue;
            if (name == "pos_emb" && !c.learned_positions) continue;
            for (auto& v : t.data()) v = static_cast<T>(normal(rng));
        }
        return p;
    }

    Parameters clone() const { return cast<T>(); }

    template <class U>
    Parameters<U> cast() const {
        Parameters<U> out;
        auto conv = [](const Tensor<T>& t) {
            return Tensor<U>(t.shape(), std::vector<U>(t.data().begin(), t.data().end()),
                             t.requires_grad());
        };
        out.tok_emb = conv(tok_emb);
        out.pos_emb = conv(pos_emb);
        for (const auto& lp : layers) {
            LayerParams<U> q;
            q.ln1_gamma = conv(lp.ln1_gamma);
            q.ln1_beta = conv(lp.ln1_beta);
            q.w_q = conv(lp.w_q);
            q.w_k = conv(lp.w_k);
            q.w_v = conv(lp.w_v);
            q.w_o = conv(lp.w_o);
            for (auto& g : lp.gate_w) q.gate_w.push_back(conv(g));
            for (auto& g : lp.gate_b) q.gate_b.push_back(conv(g));
            q.ln2_gamma = conv(lp.ln2_gamma);
            q.ln2_beta = conv(lp.ln2_beta);
            q.w_1 = conv(lp.w_1);
            q.b_1 = conv(lp.b_1);
            q.w_2 = conv(lp.w_2);
            q.b_2 = conv(lp.b_2);
            out.layers.push_back(std::move(q));
        }
        out.lnf_gamma = conv(lnf_gamma);
        out.lnf_beta = conv(lnf_beta);
        return out;
    }

   private:
    static Tensor<T> ones(Shape s) {
        Tensor<T> t(std::move(s), true);
        for (auto& v : t.data()) v = T{1};
        return t;
    }
};

template <class T>
struct DualStreamState {
    Tensor<T> token;    // x_t [n, d]
    Tensor<T> context;  // x_e [n, d]
};

// Attention of one layer for packed rows n = batch * seq_len.
//   probs[h]     [n, seq_len] softmax attention A
//   gate_mean[h] [n]          mean gate over the head dimension
//   effective[h] [n, seq_len] A scaled row-wise by gate_mean
template <class T>
struct AttentionRecord {
    std::size_t seq_len = 0;
    std::vector<std::vector<T>> probs;
    std::vector<std::vector<T>> gate_mean;
    std::vector<std::vector<T>> effective;
};

struct ForwardOptions {
    const InterventionSpec* intervention = nullptr;
    bool capture_attention = false;
    bool capture_states = false;
    // Oracle path: the attention sublayer contributes exactly nothing.
    bool skip_attention = false;
    bool training = false;
    std::mt19937_64* dropout_rng = nullptr;
};

template <class T>
struct ForwardResult {
    std::vector<Tensor<T>> layer_logits;  // L tensors [n, V]
    std::vector<AttentionRecord<T>> attention;
    std::vector<DualStreamState<T>> states;  // L+1 entries, states[l+1] after block l
    std::vector<Tensor<T>> head_outputs;       // L*H post-gate, post-intervention y_h
    std::vector<Tensor<T>> attention_outputs;  // L projected sublayer outputs
};

inline std::vector<double> pls_layer_weights(std::size_t layers) {
    std::vector<double> w;
    for (std::size_t l = 0; l + 1 < layers; ++l)
        w.push_back(static_cast<double>(l + 1) / static_cast<double>(layers));
    return w;
}

template <class T>
struct PlsLoss {
    Tensor<T> total;
    std::vector<double> layer_ce;  // per-layer CE, index L-1 is the final layer
};

template <class T>
class Model {
   public:
    Model(ModelConfig config, Parameters<T> params)
        : config_(std::move(config)), params_(std::move(params)) {
        config_.validate();
    }

    static Model initialized(const ModelConfig& config, std::uint64_t seed) {
        return Model(config, Parameters<T>::init(config, seed));
    }

    const ModelConfig& config() const { return config_; }
    ModelConfig& mutable_config() { return config_; }
    const Parameters<T>& params() const { return params_; }
    Parameters<T>& params() { return params_; }

    DualStreamState<T> embed_init(Graph<T>& g, std::span<const std::uint32_t> ids,
                                  std::size_t seq_len) const {
        check_packing(ids.size(), seq_len);
        DualStreamState<T> s;
        s.token = g.embedding(params_.tok_emb, ids);
        if (config_.learned_positions) {
            std::vector<std::uint32_t> pos(ids.size());
            for (std::size_t i = 0; i < ids.size(); ++i) pos[i] = static_cast<std::uint32_t>(i % seq_len);
            s.token = g.add(s.token, g.embedding(params_.pos_emb, pos));
        }
        s.context = Tensor<T>({ids.size(), config_.hidden});
        return s;
    }

    // Forward over `ids` packed as consecutive sequences of length seq_len.
    ForwardResult<T> forward(Graph<T>& g, std::span<const std::uint32_t> ids, std::size_t seq_len,
                             const ForwardOptions& opt = {}) const {
        const auto scales = head_scales(opt.intervention);
        ForwardResult<T> res;
        DualStreamState<T> state = embed_init(g, ids, seq_len);
        if (opt.capture_states) res.states.push_back(state);
        for (std::size_t l = 0; l < config_.layers; ++l) {
            state = layer_forward(g, state, l, seq_len, scales, opt, res);
            if (opt.capture_states) res.states.push_back(state);
            res.layer_logits.push_back(logits(g, state));
        }
        return res;
    }

    // Logits through the shared final LayerNorm and the tied head W_E^T.
    Tensor<T> logits(Graph<T>& g, const DualStreamState<T>& s) const {
        auto x = g.add(s.token, s.context);
        auto h = g.layer_norm(x, params_.lnf_gamma, params_.lnf_beta);
        return g.matmul_nt(h, params_.tok_emb);
    }

    // Final-layer CE plus lambda * sum_l w_l CE_l over the first L-1 layers.
    // targets are already shifted (target of row i is the token after row i).
    PlsLoss<T> pls_loss(Graph<T>& g, const std::vector<Tensor<T>>& layer_logits,
                        std::span<const std::int64_t> targets) const {
        const std::size_t L = layer_logits.size();
        if (L != config_.layers)
            throw ShapeError("pls_loss: got " + std::to_string(L) + " logit sets for " +
                             std::to_string(config_.layers) + " layers");
        PlsLoss<T> out;
        std::vector<Tensor<T>> ce;
        for (const auto& z : layer_logits) {
            ce.push_back(g.cross_entropy(z, targets));
            out.layer_ce.push_back(static_cast<double>(ce.back().item()));
        }
        if (!config_.pls_enabled || L == 1) {
            out.total = ce.back();
            return out;
        }
        std::vector<Tensor<T>> terms{ce.back()};
        std::vector<T> weights{T{1}};
        const auto w = pls_layer_weights(L);
        for (std::size_t l = 0; l + 1 < L; ++l) {
            terms.push_back(ce[l]);
            weights.push_back(static_cast<T>(config_.pls_lambda * w[l]));
        }
        out.total = g.weighted_sum(std::move(terms), std::move(weights));
        return out;
    }

   private:
    using ScaleTable = std::vector<std::vector<double>>;

    ScaleTable head_scales(const InterventionSpec* spec) const {
        ScaleTable s(config_.layers, std::vector<double>(config_.heads, 1.0));
        if (!spec) return s;
        if (spec->scale < 0.0) throw std::invalid_argument("intervention scale must be >= 0");
        for (const auto& t : spec->targets) {
            if (t.layer >= config_.layers || t.head >= config_.heads)
                throw std::out_of_range("intervention head " + std::to_string(t.layer) + ":" +
                                        std::to_string(t.head) + " out of range for L=" +
                                        std::to_string(config_.layers) +
                                        " H=" + std::to_string(config_.heads));
            s[t.layer][t.head] = spec->scale;
        }
        return s;
    }

    void check_packing(std::size_t n, std::size_t seq_len) const {
        if (seq_len == 0 || n == 0 || n % seq_len != 0)
            throw ShapeError("token count " + std::to_string(n) +
                             " is not a positive multiple of sequence length " +
                             std::to_string(seq_len));
        if (seq_len > config_.max_seq_len)
            throw ShapeError("sequence length " + std::to_string(seq_len) + " exceeds max " +
                             std::to_string(config_.max_seq_len));
    }

    DualStreamState<T> layer_forward(Graph<T>& g, const DualStreamState<T>& in, std::size_t l,
                                     std::size_t seq_len, const ScaleTable& scales,
                                     const ForwardOptions& opt, ForwardResult<T>& res) const {
        const auto& p = params_.layers[l];
        const bool drop = opt.training && config_.dropout > 0.0 && opt.dropout_rng;
        auto x = g.add(in.token, in.context);

        std::optional<Tensor<T>> attn;
        if (!opt.skip_attention) {
            attn = gated_attention(g, x, l, seq_len, scales, opt, res);
            if (drop) attn = g.dropout(*attn, config_.dropout, *opt.dropout_rng);
        }

        auto h2 = g.layer_norm(attn ? g.add(x, *attn) : x, p.ln2_gamma, p.ln2_beta);
        auto f = g.add_row(g.matmul(g.gelu(g.add_row(g.matmul(h2, p.w_1), p.b_1)), p.w_2), p.b_2);
        if (drop) f = g.dropout(f, config_.dropout, *opt.dropout_rng);

        DualStreamState<T> out;
        if (config_.mode == StreamMode::kCascade) {
            out.token = in.token;
            out.context = g.add(attn ? g.add(in.context, *attn) : in.context, f);
        } else {
            out.token = attn ? g.add(in.token, *attn) : in.token;
            out.context = g.add(in.context, f);
        }
        return out;
    }

    Tensor<T> gated_attention(Graph<T>& g, const Tensor<T>& x, std::size_t l, std::size_t seq_len,
                              const ScaleTable& scales, const ForwardOptions& opt,
                              ForwardResult<T>& res) const {
        const auto& p = params_.layers[l];
        const std::size_t H = config_.heads, dh = config_.head_dim(), n = x.rows();
        const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
        auto h = g.layer_norm(x, p.ln1_gamma, p.ln1_beta);
        auto q = g.matmul(h, p.w_q);
        auto k = g.matmul(h, p.w_k);
        auto v = g.matmul(h, p.w_v);

        AttentionRecord<T> rec;
        rec.seq_len = seq_len;
        std::vector<Tensor<T>> heads;
        for (std::size_t hd = 0; hd < H; ++hd) {
            auto qh = g.slice_cols(q, hd * dh, dh);
            auto kh = g.slice_cols(k, hd * dh, dh);
            auto vh = g.slice_cols(v, hd * dh, dh);
            auto probs = g.softmax_rows(g.causal_scores(qh, kh, seq_len, inv_sqrt));
            auto mixed = g.attend(probs, vh, seq_len);
            auto gate = g.sigmoid(g.add_row(g.matmul(qh, p.gate_w[hd]), p.gate_b[hd]));
            auto y = g.mul(gate, mixed);
            if (scales[l][hd] != 1.0) y = g.scale(y, static_cast<T>(scales[l][hd]));
            if (opt.capture_attention) {
                rec.probs.emplace_back(probs.data().begin(), probs.data().end());
                std::vector<T> gm(n);
                auto gv = gate.data();
                for (std::size_t r = 0; r < n; ++r) {
                    T s{0};
                    for (std::size_t c = 0; c < dh; ++c) s += gv[r * dh + c];
                    gm[r] = s / static_cast<T>(dh);
                }
                std::vector<T> eff(probs.data().begin(), probs.data().end());
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < seq_len; ++c) eff[r * seq_len + c] *= gm[r];
                rec.gate_mean.push_back(std::move(gm));
                rec.effective.push_back(std::move(eff));
                res.head_outputs.push_back(y);
            }
            heads.push_back(y);
        }
        auto out = g.matmul(g.concat_cols(std::move(heads)), p.w_o);
        if (opt.capture_attention) {
            res.attention.push_back(std::move(rec));
            res.attention_outputs.push_back(out);
        }
        return out;
    }

    ModelConfig config_;
    Parameters<T> params_;
};

// ---- checkpoint -----------------------------------------------------------

namespace detail {
inline constexpr std::uint32_t kFlagLearnedPositions = 1u << 0;
}

// HFCK header record after magic + version:
//   u32 L, H, d, d_ff, V, max_seq_len; f64 dropout, lambda;
//   u32 mode, pls_enabled, flags; u64 tensor count; then tensor records.
template <class T>
void save_checkpoint(std::ostream& out, const Model<T>& model) {
    const auto& c = model.config();
    io::write_magic(out, "HFCK");
    io::write_pod<std::uint32_t>(out, kCheckpointVersion);
    for (std::size_t v : {c.layers, c.heads, c.hidden, c.ffn, c.vocab, c.max_seq_len})
        io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(v));
    io::write_pod<double>(out, c.dropout);
    io::write_pod<double>(out, c.pls_lambda);
    io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(c.mode));
    io::write_pod<std::uint32_t>(out, c.pls_enabled ? 1u : 0u);
    io::write_pod<std::uint32_t>(out, c.learned_positions ? detail::kFlagLearnedPositions : 0u);
    const auto named = model.params().named();
    io::write_pod<std::uint64_t>(out, named.size());
    for (const auto& [name, t] : named) write_tensor_record(out, name, t);
}

template <class T>
void save_checkpoint(const std::string& path, const Model<T>& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    save_checkpoint(out, model);
    if (!out) throw std::runtime_error("write failed: " + path);
}

template <class T>
Model<T> load_checkpoint(std::istream& in) {
    io::expect_magic(in, "HFCK");
    io::expect_version(in, kCheckpointVersion);
    ModelConfig c;
    std::size_t* sizes[] = {&c.layers, &c.heads, &c.hidden, &c.ffn, &c.vocab, &c.max_seq_len};
    for (auto* s : sizes) *s = io::read_pod<std::uint32_t>(in, "model config");
    c.dropout = io::read_pod<double>(in, "dropout");
    c.pls_lambda = io::read_pod<double>(in, "lambda");
    const auto mode = io::read_pod<std::uint32_t>(in, "mode");
    if (mode > 1) throw io::FormatError("unknown stream mode " + std::to_string(mode));
    c.mode = static_cast<StreamMode>(mode);
    c.pls_enabled = io::read_pod<std::uint32_t>(in, "pls flag") != 0;
    c.learned_positions = (io::read_pod<std::uint32_t>(in, "flags") & detail::kFlagLearnedPositions) != 0;
    c.validate();

    auto params = Parameters<T>::zeros(c);
    auto expected = params.named();
    const auto count = io::read_pod<std::uint64_t>(in, "tensor count");
    if (count != expected.size())
        throw io::FormatError("checkpoint has " + std::to_string(count) + " tensors, expected " +
                              std::to_string(expected.size()));
    for (auto& [name, dst] : expected) {
        auto [got_name, t] = read_tensor_record<T>(in);
        if (got_name != name) throw io::FormatError("expected tensor '" + name + "', found '" + got_name + "'");
        if (t.shape() != dst.shape())
            throw io::FormatError("tensor '" + name + "' has shape " + shape_str(t.shape()) +
                                  ", expected " + shape_str(dst.shape()));
        std::copy(t.data().begin(), t.data().end(), dst.data().begin());
    }
    io::expect_eof(in);
    return Model<T>(c, std::move(params));
}

template <class T>
Model<T> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path);
    return load_checkpoint<T>(in);
}

}  // namespace headforge
