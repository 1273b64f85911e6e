#pragma once

// Per-prediction computation traces: per-layer probabilities at the query
// position, the query row of raw and gated attention for every head, mean
// gates, and a raw activation snapshot for the vocabulary baseline.

#include "headforge/io.hpp"
#include "headforge/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace headforge {

struct PredictionTrace {
    std::uint64_t sequence_id = 0;
    std::uint32_t position = 0;   // predicted position t
    std::uint32_t query_pos = 0;  // t - 1
    std::uint32_t context_len = 0;
    std::uint32_t query_token = 0;
    std::uint32_t final_pred = 0;
    std::optional<std::uint32_t> ground_truth;
    std::uint32_t layers = 0;
    std::uint32_t heads = 0;

    std::vector<float> layer_probs;        // [L] p(final_pred) at each layer
    std::vector<std::uint32_t> layer_argmax;  // [L]
    std::vector<float> layer_second_prob;  // [L] second-highest probability
    std::vector<float> gate_means;         // [L*H]
    std::vector<float> attn_rows;          // [L*H*(query_pos+1)] effective attention
    std::vector<float> raw_attn_rows;      // same shape, before gating
    std::vector<float> raw_activation;     // [2d] = [x_t ; x_e] at the baseline layer

    std::size_t keys() const { return static_cast<std::size_t>(query_pos) + 1; }

    std::span<const float> row(std::size_t layer, std::size_t head) const {
        return std::span<const float>(attn_rows).subspan((layer * heads + head) * keys(), keys());
    }
    std::span<float> row(std::size_t layer, std::size_t head) {
        return std::span<float>(attn_rows).subspan((layer * heads + head) * keys(), keys());
    }
    std::span<const float> raw_row(std::size_t layer, std::size_t head) const {
        return std::span<const float>(raw_attn_rows).subspan((layer * heads + head) * keys(), keys());
    }
    float gate_mean(std::size_t layer, std::size_t head) const { return gate_means[layer * heads + head]; }

    friend bool operator==(const PredictionTrace&, const PredictionTrace&) = default;
};

struct CaptureOptions {
    std::size_t baseline_layer = 5;
    std::uint64_t sequence_id = 0;
};

// Clamps the conventional baseline layer to the model depth.
inline std::size_t effective_baseline_layer(const ModelConfig& c, std::size_t requested) {
    return std::min(requested, c.layers - 1);
}

// One forward pass over the whole context, then one trace per requested
// predicted position t (query at t - 1). t may equal the context length, in
// which case the trace has no ground truth.
template <class T>
std::vector<PredictionTrace> capture(const Model<T>& model, std::span<const std::uint32_t> token_ids,
                                     std::span<const std::size_t> positions, const CaptureOptions& opt = {}) {
    const auto& c = model.config();
    const std::size_t n = token_ids.size();
    for (std::size_t t : positions) {
        if (t == 0) throw std::invalid_argument("position 0 has no query token; positions must be >= 1");
        if (t > n)
            throw std::out_of_range("position " + std::to_string(t) + " beyond context of length " +
                                    std::to_string(n));
    }
    const std::size_t base = effective_baseline_layer(c, opt.baseline_layer);
    Graph<T> g(false);
    ForwardOptions fo;
    fo.capture_attention = true;
    fo.capture_states = true;
    auto res = model.forward(g, token_ids, n, fo);

    const std::size_t L = c.layers, H = c.heads, V = c.vocab, d = c.hidden;
    std::vector<PredictionTrace> out;
    out.reserve(positions.size());
    for (std::size_t t : positions) {
        const std::size_t q = t - 1;
        PredictionTrace tr;
        tr.sequence_id = opt.sequence_id;
        tr.position = static_cast<std::uint32_t>(t);
        tr.query_pos = static_cast<std::uint32_t>(q);
        tr.context_len = static_cast<std::uint32_t>(n);
        tr.query_token = token_ids[q];
        if (t < n) tr.ground_truth = token_ids[t];
        tr.layers = static_cast<std::uint32_t>(L);
        tr.heads = static_cast<std::uint32_t>(H);

        // softmax per layer at the query row, in double
        std::vector<std::vector<double>> probs(L, std::vector<double>(V));
        for (std::size_t l = 0; l < L; ++l) {
            auto z = std::as_const(res.layer_logits[l]).data().subspan(q * V, V);
            const double mx = static_cast<double>(*std::max_element(z.begin(), z.end()));
            double sum = 0;
            for (std::size_t v = 0; v < V; ++v) sum += (probs[l][v] = std::exp(static_cast<double>(z[v]) - mx));
            for (auto& p : probs[l]) p /= sum;
        }
        auto argmax = [](const std::vector<double>& p) {
            return static_cast<std::uint32_t>(std::max_element(p.begin(), p.end()) - p.begin());
        };
        tr.final_pred = argmax(probs[L - 1]);
        for (std::size_t l = 0; l < L; ++l) {
            const auto top = argmax(probs[l]);
            double second = 0.0;
            for (std::size_t v = 0; v < V; ++v)
                if (v != top) second = std::max(second, probs[l][v]);
            tr.layer_argmax.push_back(top);
            tr.layer_probs.push_back(static_cast<float>(probs[l][tr.final_pred]));
            tr.layer_second_prob.push_back(static_cast<float>(second));
        }

        for (std::size_t l = 0; l < L; ++l) {
            const auto& rec = res.attention[l];
            for (std::size_t h = 0; h < H; ++h) {
                tr.gate_means.push_back(static_cast<float>(rec.gate_mean[h][q]));
                for (std::size_t k = 0; k <= q; ++k) {
                    tr.attn_rows.push_back(static_cast<float>(rec.effective[h][q * n + k]));
                    tr.raw_attn_rows.push_back(static_cast<float>(rec.probs[h][q * n + k]));
                }
            }
        }

        const auto& st = res.states[base + 1];
        auto xt = std::as_const(st.token).data().subspan(q * d, d);
        auto xe = std::as_const(st.context).data().subspan(q * d, d);
        tr.raw_activation.reserve(2 * d);
        for (T v : xt) tr.raw_activation.push_back(static_cast<float>(v));
        for (T v : xe) tr.raw_activation.push_back(static_cast<float>(v));
        out.push_back(std::move(tr));
    }
    return out;
}

// ---- HFTR trace file -------------------------------------------------------

inline constexpr std::uint32_t kTraceVersion = 1;
// raw_activation holds the concatenation [x_t ; x_e] (2d values)
inline constexpr std::uint32_t kTraceFlagConcatActivation = 1u << 0;

struct TraceFileHeader {
    std::uint32_t layers = 0, heads = 0, hidden = 0, vocab = 0, baseline_layer = 0;
    std::uint32_t flags = kTraceFlagConcatActivation;
    friend bool operator==(const TraceFileHeader&, const TraceFileHeader&) = default;
};

inline TraceFileHeader trace_header_for(const ModelConfig& c, std::size_t baseline_layer) {
    return TraceFileHeader{static_cast<std::uint32_t>(c.layers), static_cast<std::uint32_t>(c.heads),
                           static_cast<std::uint32_t>(c.hidden), static_cast<std::uint32_t>(c.vocab),
                           static_cast<std::uint32_t>(effective_baseline_layer(c, baseline_layer)),
                           kTraceFlagConcatActivation};
}

struct TraceFile {
    TraceFileHeader header;
    std::vector<PredictionTrace> traces;
};

inline void write_traces(std::ostream& out, const TraceFile& f) {
    io::write_magic(out, "HFTR");
    io::write_pod<std::uint32_t>(out, kTraceVersion);
    const auto& h = f.header;
    for (auto v : {h.layers, h.heads, h.hidden, h.vocab, h.baseline_layer, h.flags}) io::write_pod<std::uint32_t>(out, v);
    io::write_pod<std::uint64_t>(out, f.traces.size());
    for (const auto& t : f.traces) {
        if (t.layers != h.layers || t.heads != h.heads)
            throw std::invalid_argument("trace shape does not match file header");
        io::write_pod<std::uint64_t>(out, t.sequence_id);
        for (auto v : {t.position, t.query_pos, t.context_len, t.query_token, t.final_pred})
            io::write_pod<std::uint32_t>(out, v);
        io::write_pod<std::uint32_t>(out, t.ground_truth ? 1u : 0u);
        io::write_pod<std::uint32_t>(out, t.ground_truth.value_or(0));
        io::write_array<float>(out, t.layer_probs);
        io::write_array<std::uint32_t>(out, t.layer_argmax);
        io::write_array<float>(out, t.layer_second_prob);
        io::write_array<float>(out, t.gate_means);
        io::write_array<float>(out, t.attn_rows);
        io::write_array<float>(out, t.raw_attn_rows);
        io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.raw_activation.size()));
        io::write_array<float>(out, t.raw_activation);
    }
}

inline void write_traces(const std::string& path, const TraceFile& f) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    write_traces(out, f);
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline TraceFile read_traces(std::istream& in) {
    io::expect_magic(in, "HFTR");
    io::expect_version(in, kTraceVersion);
    TraceFile f;
    auto& h = f.header;
    for (auto* v : {&h.layers, &h.heads, &h.hidden, &h.vocab, &h.baseline_layer, &h.flags})
        *v = io::read_pod<std::uint32_t>(in, "trace header");
    const auto count = io::read_pod<std::uint64_t>(in, "trace count");
    const std::size_t L = h.layers, H = h.heads;
    for (std::uint64_t i = 0; i < count; ++i) {
        PredictionTrace t;
        t.layers = h.layers;
        t.heads = h.heads;
        t.sequence_id = io::read_pod<std::uint64_t>(in, "sequence id");
        for (auto* v : {&t.position, &t.query_pos, &t.context_len, &t.query_token, &t.final_pred})
            *v = io::read_pod<std::uint32_t>(in, "trace record");
        const auto has_gt = io::read_pod<std::uint32_t>(in, "ground truth flag");
        const auto gt = io::read_pod<std::uint32_t>(in, "ground truth");
        if (has_gt) t.ground_truth = gt;
        if (t.query_pos + 1 > t.context_len) throw io::FormatError("trace query position beyond context");
        t.layer_probs.resize(L);
        t.layer_argmax.resize(L);
        t.layer_second_prob.resize(L);
        t.gate_means.resize(L * H);
        t.attn_rows.resize(L * H * t.keys());
        t.raw_attn_rows.resize(L * H * t.keys());
        io::read_array<float>(in, t.layer_probs, "layer probabilities");
        io::read_array<std::uint32_t>(in, t.layer_argmax, "layer argmax");
        io::read_array<float>(in, t.layer_second_prob, "second probabilities");
        io::read_array<float>(in, t.gate_means, "gate means");
        io::read_array<float>(in, t.attn_rows, "attention rows");
        io::read_array<float>(in, t.raw_attn_rows, "raw attention rows");
        const auto dim = io::read_pod<std::uint32_t>(in, "activation dim");
        if (dim > (1u << 24)) throw io::FormatError("implausible activation dimension");
        t.raw_activation.resize(dim);
        io::read_array<float>(in, t.raw_activation, "raw activation");
        f.traces.push_back(std::move(t));
    }
    io::expect_eof(in);
    return f;
}

inline TraceFile read_traces(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open trace file " + path);
    return read_traces(in);
}

}  // namespace headforge
