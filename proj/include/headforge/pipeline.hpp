#pragma once

// Glue between the stages: sampling trace windows from a token stream and
// converting feature matrices for clustering.

#include "headforge/clustering.hpp"
#include "headforge/features.hpp"
#include "headforge/trace.hpp"

#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace headforge {

struct TraceSampling {
    std::size_t windows = 40;
    std::size_t window_len = 128;
    std::size_t baseline_layer = 5;
};

// Non-overlapping windows from the start of `tokens`; every position
// 1 .. window_len - 1 of each window is traced, so every trace has a ground
// truth. sequence_id is the window index.
template <class T>
std::vector<PredictionTrace> capture_windows(const Model<T>& model, std::span<const std::uint32_t> tokens,
                                             const TraceSampling& s) {
    if (s.window_len < 2) throw std::invalid_argument("trace window must hold at least 2 tokens");
    if (s.window_len > model.config().max_seq_len)
        throw std::invalid_argument("trace window exceeds the model's max_seq_len");
    const std::size_t available = tokens.size() / s.window_len;
    if (available == 0) throw std::invalid_argument("token stream shorter than one trace window");
    std::vector<std::size_t> positions(s.window_len - 1);
    std::iota(positions.begin(), positions.end(), std::size_t{1});
    std::vector<PredictionTrace> out;
    for (std::size_t w = 0; w < std::min(s.windows, available); ++w) {
        auto window = tokens.subspan(w * s.window_len, s.window_len);
        auto tr = capture(model, window, positions, CaptureOptions{s.baseline_layer, w});
        out.insert(out.end(), std::make_move_iterator(tr.begin()), std::make_move_iterator(tr.end()));
    }
    return out;
}

inline DataMatrix to_matrix(const FeatureMatrix& m) { return to_matrix(m.data, m.rows, m.dim); }

inline DataMatrix raw_activation_matrix(const std::vector<PredictionTrace>& traces) {
    if (traces.empty()) throw std::invalid_argument("no traces");
    const std::size_t dim = traces.front().raw_activation.size();
    DataMatrix x(static_cast<Eigen::Index>(traces.size()), static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < traces.size(); ++i) {
        if (traces[i].raw_activation.size() != dim) throw std::invalid_argument("raw activation sizes differ");
        for (std::size_t j = 0; j < dim; ++j)
            x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = traces[i].raw_activation[j];
    }
    return x;
}

// Fraction of traces whose stability layer is 0 or 1.
inline double early_fraction(const std::vector<PredictionTrace>& traces) {
    if (traces.empty()) return 0.0;
    std::size_t early = 0;
    for (const auto& t : traces) early += stability(t).k_star <= 1 ? 1 : 0;
    return static_cast<double>(early) / static_cast<double>(traces.size());
}

inline DepthDistribution depth_distribution(const std::vector<PredictionTrace>& traces) {
    std::vector<double> k;
    k.reserve(traces.size());
    for (const auto& t : traces) k.push_back(static_cast<double>(stability(t).k_star));
    return depth_distribution(k);
}

}  // namespace headforge
