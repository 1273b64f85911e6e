#pragma once

// Vocabulary-invariant features of one prediction trace: trajectory,
// stability, per-head activation and entropy, attention position statistics,
// and the sorted top-k attention profile. All functions are pure.

#include "headforge/io.hpp"
#include "headforge/model.hpp"
#include "headforge/trace.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace headforge {

inline constexpr double kGhostThreshold = 0.1;
inline constexpr std::size_t kLocalWindow = 5;

enum class Tier : std::uint32_t { kTier1 = 1, kTier2 = 2, kTier2Position = 3, kTopK = 4 };

inline Tier parse_tier(const std::string& s) {
    if (s == "t1") return Tier::kTier1;
    if (s == "t2") return Tier::kTier2;
    if (s == "t2p") return Tier::kTier2Position;
    if (s == "topk") return Tier::kTopK;
    throw std::invalid_argument("unknown tier '" + s + "' (expected t1, t2, t2p or topk)");
}

inline const char* to_string(Tier t) {
    switch (t) {
        case Tier::kTier1: return "t1";
        case Tier::kTier2: return "t2";
        case Tier::kTier2Position: return "t2p";
        case Tier::kTopK: return "topk";
    }
    return "?";
}

inline std::size_t tier_dim(Tier t, std::size_t L, std::size_t H, std::size_t k = 5) {
    const std::size_t head = (3 * L - 1) + 2;
    switch (t) {
        case Tier::kTier1: return 5;
        case Tier::kTier2: return head + 4 * L * H;
        case Tier::kTier2Position: return head + 4 * L * H + 4;
        case Tier::kTopK: return head + 2 * L * H * k + 2 * L * H + 4;
    }
    return 0;
}

struct FeatureVector {
    Tier tier = Tier::kTier2;
    std::vector<double> values;
};

struct HeadGroups {
    std::vector<HeadRef> anchor{{5, 2}, {5, 3}};
    std::vector<HeadRef> entity{{5, 4}, {5, 5}};

    void validate(std::size_t layers, std::size_t heads) const {
        for (const auto* g : {&anchor, &entity})
            for (const auto& r : *g)
                if (r.layer >= layers || r.head >= heads)
                    throw std::out_of_range("head group member " + std::to_string(r.layer) + ":" +
                                            std::to_string(r.head) + " outside " + std::to_string(layers) +
                                            " layers x " + std::to_string(heads) + " heads");
    }
};

struct Trajectory {
    std::vector<double> prob;    // [L]
    std::vector<double> margin;  // [L]
    std::vector<double> drops;   // [L-1]
};

inline Trajectory trajectory(const PredictionTrace& t) {
    const std::size_t L = t.layers;
    Trajectory r;
    for (std::size_t l = 0; l < L; ++l) {
        const double p = t.layer_argmax[l] == t.final_pred ? static_cast<double>(t.layer_probs[l]) : 0.0;
        r.prob.push_back(p);
        r.margin.push_back(p - static_cast<double>(t.layer_second_prob[l]));
    }
    for (std::size_t l = 1; l < L; ++l) r.drops.push_back(std::max(0.0, r.prob[l - 1] - r.prob[l]));
    return r;
}

struct Stability {
    std::size_t k_star = 0;
    std::size_t kappa = 0;
};

// k* is the start of the final run of layers agreeing with the final
// prediction; kappa is the longest run matching the ground truth (or the
// final prediction when no ground truth is known).
inline Stability stability(const PredictionTrace& t) {
    const std::size_t L = t.layers;
    Stability s;
    s.k_star = L - 1;
    while (s.k_star > 0 && t.layer_argmax[s.k_star - 1] == t.final_pred) --s.k_star;
    const std::uint32_t target = t.ground_truth.value_or(t.final_pred);
    std::size_t run = 0;
    for (std::size_t l = 0; l < L; ++l) {
        run = t.layer_argmax[l] == target ? run + 1 : 0;
        s.kappa = std::max(s.kappa, run);
    }
    return s;
}

inline std::vector<double> head_activation(const PredictionTrace& t, std::size_t layer) {
    std::vector<double> out(t.heads, 0.0);
    for (std::size_t h = 0; h < t.heads; ++h) {
        auto row = t.row(layer, h);
        out[h] = static_cast<double>(*std::max_element(row.begin(), row.end()));
    }
    return out;
}

// Shannon entropy (natural log) of the renormalised effective attention row.
// Values are summed in sorted order so the result does not depend on key
// order. Heads below the ghost threshold report 0.
inline std::vector<double> head_entropy(const PredictionTrace& t, std::size_t layer) {
    const auto act = head_activation(t, layer);
    std::vector<double> out(t.heads, 0.0);
    for (std::size_t h = 0; h < t.heads; ++h) {
        if (act[h] < kGhostThreshold) continue;
        auto row = t.row(layer, h);
        std::vector<double> a(row.begin(), row.end());
        std::sort(a.begin(), a.end());
        double total = 0.0;
        for (double v : a) total += v;
        if (total <= 0.0) continue;
        double e = 0.0;
        for (double v : a) {
            if (v <= 0.0) continue;
            const double p = v / total;
            e -= p * std::log(p);
        }
        out[h] = std::max(0.0, e);
    }
    return out;
}

struct PositionFeatures {
    double span = 0.0;
    double local_mass = 0.0;
};

inline PositionFeatures position_features(const PredictionTrace& t, std::size_t layer) {
    const std::size_t q = t.query_pos;
    const std::size_t lo = q >= kLocalWindow ? q - kLocalWindow : 0;
    double weighted = 0.0, total = 0.0;
    PositionFeatures r;
    for (std::size_t h = 0; h < t.heads; ++h) {
        auto row = t.row(layer, h);
        for (std::size_t k = 0; k <= q; ++k) {
            const double a = row[k];
            weighted += a * static_cast<double>(q - k);
            total += a;
            if (k >= lo && k < q) r.local_mass += a;
        }
    }
    r.span = total > 0.0 ? weighted / total : 0.0;
    return r;
}

inline FeatureVector tier1(const PredictionTrace& t, const HeadGroups& groups = {}) {
    groups.validate(t.layers, t.heads);
    const std::size_t L = t.layers;
    auto mass = [&](const std::vector<HeadRef>& g) {
        double m = 0.0;
        for (const auto& r : g) {
            auto row = t.row(r.layer, r.head);
            m += static_cast<double>(*std::max_element(row.begin(), row.end()));
        }
        return m;
    };
    return {Tier::kTier1,
            {static_cast<double>(stability(t).k_star), static_cast<double>(t.layer_probs[L - 1]), mass(groups.anchor),
             mass(groups.entity), position_features(t, L - 1).span}};
}

namespace detail {

inline void append_trajectory_and_stability(const PredictionTrace& t, std::vector<double>& v) {
    const auto tr = trajectory(t);
    v.insert(v.end(), tr.prob.begin(), tr.prob.end());
    v.insert(v.end(), tr.margin.begin(), tr.margin.end());
    v.insert(v.end(), tr.drops.begin(), tr.drops.end());
    const auto s = stability(t);
    v.push_back(static_cast<double>(s.k_star));
    v.push_back(static_cast<double>(s.kappa));
}

// L*H block with only the given layer's slice filled.
inline void append_layer_block(const PredictionTrace& t, std::size_t layer, const std::vector<double>& values,
                               std::size_t width, std::vector<double>& v) {
    const std::size_t base = v.size();
    v.resize(base + t.layers * t.heads * width, 0.0);
    std::copy(values.begin(), values.end(), v.begin() + static_cast<std::ptrdiff_t>(base + layer * t.heads * width));
}

inline void append_position(const PredictionTrace& t, std::size_t stable, std::vector<double>& v) {
    const auto ps = position_features(t, stable);
    const auto pf = position_features(t, t.layers - 1);
    v.insert(v.end(), {ps.span, pf.span, ps.local_mass, pf.local_mass});
}

}  // namespace detail

inline FeatureVector tier2(const PredictionTrace& t, bool include_position = false) {
    const std::size_t L = t.layers, H = t.heads;
    const std::size_t stable = std::min(stability(t).k_star, L - 1);
    FeatureVector f{include_position ? Tier::kTier2Position : Tier::kTier2, {}};
    auto& v = f.values;
    v.reserve(tier_dim(f.tier, L, H));
    detail::append_trajectory_and_stability(t, v);
    detail::append_layer_block(t, stable, head_activation(t, stable), 1, v);
    detail::append_layer_block(t, L - 1, head_activation(t, L - 1), 1, v);
    detail::append_layer_block(t, stable, head_entropy(t, stable), 1, v);
    detail::append_layer_block(t, L - 1, head_entropy(t, L - 1), 1, v);
    if (include_position) detail::append_position(t, stable, v);
    return f;
}

// Per head the k largest effective attention values in descending order,
// zero padded; ghost heads (mean gate below the threshold) give zeros.
inline std::vector<double> topk_attention(const PredictionTrace& t, std::size_t layer, std::size_t k) {
    std::vector<double> out(t.heads * k, 0.0);
    for (std::size_t h = 0; h < t.heads; ++h) {
        if (static_cast<double>(t.gate_mean(layer, h)) < kGhostThreshold) continue;
        auto row = t.row(layer, h);
        std::vector<double> a(row.begin(), row.end());
        const std::size_t m = std::min(k, a.size());
        std::partial_sort(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(m), a.end(), std::greater<>());
        std::copy(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(m), out.begin() + static_cast<std::ptrdiff_t>(h * k));
    }
    return out;
}

inline FeatureVector topk_features(const PredictionTrace& t, std::size_t k = 5) {
    if (k == 0) throw std::invalid_argument("top-k needs k >= 1");
    const std::size_t L = t.layers, H = t.heads;
    const std::size_t stable = std::min(stability(t).k_star, L - 1);
    FeatureVector f{Tier::kTopK, {}};
    auto& v = f.values;
    v.reserve(tier_dim(Tier::kTopK, L, H, k));
    detail::append_trajectory_and_stability(t, v);
    detail::append_layer_block(t, stable, topk_attention(t, stable, k), k, v);
    detail::append_layer_block(t, L - 1, topk_attention(t, L - 1, k), k, v);
    detail::append_layer_block(t, stable, head_entropy(t, stable), 1, v);
    detail::append_layer_block(t, L - 1, head_entropy(t, L - 1), 1, v);
    detail::append_position(t, stable, v);
    return f;
}

struct FeatureOptions {
    HeadGroups groups;
    std::size_t k = 5;
};

inline FeatureVector extract(const PredictionTrace& t, Tier tier, const FeatureOptions& opt = {}) {
    switch (tier) {
        case Tier::kTier1: return tier1(t, opt.groups);
        case Tier::kTier2: return tier2(t, false);
        case Tier::kTier2Position: return tier2(t, true);
        case Tier::kTopK: return topk_features(t, opt.k);
    }
    throw std::invalid_argument("unknown tier");
}

// ---- HFFM feature matrix -----------------------------------------------------

inline constexpr std::uint32_t kFeatureVersion = 1;

struct FeatureMatrix {
    Tier tier = Tier::kTier2;
    std::size_t rows = 0;
    std::size_t dim = 0;
    std::vector<float> data;  // row-major

    std::span<const float> row(std::size_t r) const { return std::span<const float>(data).subspan(r * dim, dim); }
    friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;
};

inline FeatureMatrix build_matrix(const std::vector<PredictionTrace>& traces, Tier tier,
                                  const FeatureOptions& opt = {}) {
    FeatureMatrix m;
    m.tier = tier;
    for (const auto& t : traces) {
        auto f = extract(t, tier, opt);
        if (m.rows == 0) m.dim = f.values.size();
        if (f.values.size() != m.dim) throw std::invalid_argument("traces disagree on feature dimension");
        for (double v : f.values) m.data.push_back(static_cast<float>(v));
        ++m.rows;
    }
    return m;
}

inline void write_features(std::ostream& out, const FeatureMatrix& m) {
    io::write_magic(out, "HFFM");
    io::write_pod<std::uint32_t>(out, kFeatureVersion);
    io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(m.tier));
    io::write_pod<std::uint64_t>(out, m.rows);
    io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(m.dim));
    io::write_array<float>(out, m.data);
}

inline void write_features(const std::string& path, const FeatureMatrix& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    write_features(out, m);
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline FeatureMatrix read_features(std::istream& in) {
    io::expect_magic(in, "HFFM");
    io::expect_version(in, kFeatureVersion);
    FeatureMatrix m;
    const auto tier = io::read_pod<std::uint32_t>(in, "tier");
    if (tier < 1 || tier > 4) throw io::FormatError("unknown tier tag " + std::to_string(tier));
    m.tier = static_cast<Tier>(tier);
    m.rows = io::read_pod<std::uint64_t>(in, "row count");
    m.dim = io::read_pod<std::uint32_t>(in, "dimension");
    if (m.dim != 0 && m.rows > (std::uint64_t{1} << 34) / m.dim) throw io::FormatError("implausible matrix size");
    m.data.resize(m.rows * m.dim);
    io::read_array<float>(in, m.data, "feature data");
    io::expect_eof(in);
    return m;
}

inline FeatureMatrix read_features(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open feature file " + path);
    return read_features(in);
}

// Companion index: row, sequence id, predicted position, query token.
inline void write_feature_index(std::ostream& out, const std::vector<PredictionTrace>& traces) {
    out << "row\tsequence_id\tposition\tquery_token\tfinal_pred\n";
    for (std::size_t i = 0; i < traces.size(); ++i)
        out << i << '\t' << traces[i].sequence_id << '\t' << traces[i].position << '\t' << traces[i].query_token
            << '\t' << traces[i].final_pred << '\n';
}

}  // namespace headforge
