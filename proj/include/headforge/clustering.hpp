#pragma once

// Standardisation, PCA, k-means, HDBSCAN, adjusted Rand index and the small
// reports built on them (depth distribution, diverse samples, raw-activation
// baseline).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace headforge {

using DataMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline DataMatrix to_matrix(std::span<const float> data, std::size_t rows, std::size_t cols) {
    if (data.size() != rows * cols) throw std::invalid_argument("matrix data does not match its shape");
    DataMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < data.size(); ++i) m.data()[i] = static_cast<double>(data[i]);
    return m;
}

// ---- standardisation -----------------------------------------------------------

inline constexpr double kStdFloor = 1e-12;

// Zero mean, unit (population) variance per column; constant columns map to 0.
inline DataMatrix standardize(const DataMatrix& x) {
    if (x.rows() < 2) throw std::invalid_argument("standardize needs at least 2 rows");
    const Eigen::RowVectorXd mean = x.colwise().mean();
    DataMatrix out = x.rowwise() - mean;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const double sd = std::sqrt(out.col(j).squaredNorm() / static_cast<double>(x.rows()));
        if (sd < kStdFloor) {
            out.col(j).setZero();
        } else {
            out.col(j) /= sd;
        }
    }
    return out;
}

// ---- PCA -----------------------------------------------------------------------

struct PcaModel {
    Eigen::RowVectorXd mean;
    DataMatrix components;  // [m, D], orthonormal rows
    std::vector<double> explained_variance_ratio;
    std::string warning;

    double cumulative_explained() const {
        return std::accumulate(explained_variance_ratio.begin(), explained_variance_ratio.end(), 0.0);
    }

    DataMatrix project(const DataMatrix& x) const {
        return (x.rowwise() - mean) * components.transpose();
    }
};

struct PcaResult {
    PcaModel model;
    DataMatrix projected;
};

// Eigen-decomposition of the sample covariance. Components whose variance is
// numerically zero are dropped (with a warning) so m may shrink for
// rank-deficient data. Each component's sign is fixed so its largest-magnitude
// entry is positive.
inline PcaResult pca_fit_project(const DataMatrix& x, std::size_t m = 30) {
    const auto n = static_cast<std::size_t>(x.rows()), D = static_cast<std::size_t>(x.cols());
    if (n < 2) throw std::invalid_argument("PCA needs at least 2 rows");
    if (m == 0 || m > std::min(n, D))
        throw std::invalid_argument("PCA components " + std::to_string(m) + " must be in [1, min(n, D) = " +
                                    std::to_string(std::min(n, D)) + "]");
    PcaModel pm;
    pm.mean = x.colwise().mean();
    const DataMatrix c = x.rowwise() - pm.mean;
    const Eigen::MatrixXd cov = (c.transpose() * c) / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.info() != Eigen::Success) throw std::runtime_error("PCA eigendecomposition failed");
    const Eigen::VectorXd& ev = es.eigenvalues();  // ascending
    const double total = std::max(0.0, ev.sum());
    const double tiny = std::max(1e-12 * std::abs(ev(ev.size() - 1)), 1e-300);

    std::size_t kept = 0;
    std::vector<Eigen::Index> order;
    for (Eigen::Index i = ev.size() - 1; i >= 0 && kept < m; --i, ++kept) {
        if (ev(i) <= tiny) break;
        order.push_back(i);
    }
    if (order.size() < m)
        pm.warning = "covariance rank " + std::to_string(order.size()) + " < requested " + std::to_string(m) +
                     " components; keeping " + std::to_string(order.size());
    if (order.empty()) throw std::invalid_argument("PCA on data with zero variance");
    pm.components.resize(static_cast<Eigen::Index>(order.size()), static_cast<Eigen::Index>(D));
    for (std::size_t r = 0; r < order.size(); ++r) {
        Eigen::VectorXd v = es.eigenvectors().col(order[r]);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;
        pm.components.row(static_cast<Eigen::Index>(r)) = v.transpose();
        pm.explained_variance_ratio.push_back(total > 0 ? ev(order[r]) / total : 0.0);
    }
    PcaResult r{pm, {}};
    r.projected = c * pm.components.transpose();
    return r;
}

// ---- cluster assignment ----------------------------------------------------------

struct ClusterAssignment {
    std::vector<int> labels;  // -1 = noise
    std::size_t clusters = 0;
    std::string algorithm;
    std::string params;
    double inertia = 0.0;
    std::vector<double> inertia_history;  // per Lloyd iteration of the winning restart
};

inline void write_labels(std::ostream& out, const std::vector<int>& labels) {
    for (int l : labels) out << l << '\n';
}

inline void write_labels(const std::string& path, const std::vector<int>& labels) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    write_labels(out, labels);
}

inline std::vector<int> read_labels(std::istream& in, const std::string& source = "<labels>") {
    std::vector<int> labels;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            std::size_t used = 0;
            const int v = std::stoi(line, &used);
            if (used != line.size() || v < -1) throw std::invalid_argument("bad label");
            labels.push_back(v);
        } catch (const std::exception&) {
            throw std::runtime_error(source + ":" + std::to_string(lineno) + ": invalid label '" + line + "'");
        }
    }
    return labels;
}

inline std::vector<int> read_labels(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open labels " + path);
    return read_labels(in, path);
}

// ---- k-means ---------------------------------------------------------------------

struct KMeansOptions {
    std::size_t k = 10;
    std::uint64_t seed = 0;
    std::size_t n_init = 10;
    std::size_t max_iter = 300;
    double tol = 1e-6;  // largest centre shift
};

namespace detail {

inline double sq_dist(const DataMatrix& x, Eigen::Index i, const DataMatrix& c, Eigen::Index j) {
    return (x.row(i) - c.row(j)).squaredNorm();
}

inline DataMatrix kmeanspp_init(const DataMatrix& x, std::size_t k, std::mt19937_64& rng) {
    const Eigen::Index n = x.rows();
    DataMatrix centres(static_cast<Eigen::Index>(k), x.cols());
    std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
    centres.row(0) = x.row(first(rng));
    std::vector<double> d2(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) d2[static_cast<std::size_t>(i)] = sq_dist(x, i, centres, 0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t c = 1; c < k; ++c) {
        const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
        Eigen::Index pick = 0;
        if (total > 0) {
            double r = u(rng) * total;
            pick = n - 1;
            for (Eigen::Index i = 0; i < n; ++i) {
                r -= d2[static_cast<std::size_t>(i)];
                if (r < 0) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = first(rng);
        }
        centres.row(static_cast<Eigen::Index>(c)) = x.row(pick);
        for (Eigen::Index i = 0; i < n; ++i)
            d2[static_cast<std::size_t>(i)] =
                std::min(d2[static_cast<std::size_t>(i)], sq_dist(x, i, centres, static_cast<Eigen::Index>(c)));
    }
    return centres;
}

struct LloydRun {
    std::vector<int> labels;
    double inertia = 0.0;
    std::vector<double> history;
};

inline double assign(const DataMatrix& x, const DataMatrix& centres, std::vector<int>& labels) {
    double inertia = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        int arg = 0;
        for (Eigen::Index c = 0; c < centres.rows(); ++c) {
            const double d = sq_dist(x, i, centres, c);
            if (d < best) {
                best = d;
                arg = static_cast<int>(c);
            }
        }
        labels[static_cast<std::size_t>(i)] = arg;
        inertia += best;
    }
    return inertia;
}

inline LloydRun lloyd(const DataMatrix& x, DataMatrix centres, const KMeansOptions& opt) {
    const Eigen::Index n = x.rows(), k = centres.rows();
    LloydRun run;
    run.labels.assign(static_cast<std::size_t>(n), 0);
    run.inertia = assign(x, centres, run.labels);
    run.history.push_back(run.inertia);
    for (std::size_t it = 0; it < opt.max_iter; ++it) {
        DataMatrix next = DataMatrix::Zero(k, x.cols());
        std::vector<std::size_t> count(static_cast<std::size_t>(k), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            next.row(run.labels[static_cast<std::size_t>(i)]) += x.row(i);
            ++count[static_cast<std::size_t>(run.labels[static_cast<std::size_t>(i)])];
        }
        for (Eigen::Index c = 0; c < k; ++c) {
            if (count[static_cast<std::size_t>(c)] > 0) {
                next.row(c) /= static_cast<double>(count[static_cast<std::size_t>(c)]);
            } else {
                // empty cluster: move it onto the point farthest from its centre
                Eigen::Index far = 0;
                double worst = -1;
                for (Eigen::Index i = 0; i < n; ++i) {
                    const double d = sq_dist(x, i, centres, run.labels[static_cast<std::size_t>(i)]);
                    if (d > worst) {
                        worst = d;
                        far = i;
                    }
                }
                next.row(c) = x.row(far);
            }
        }
        const double shift = (next - centres).rowwise().norm().maxCoeff();
        centres = std::move(next);
        std::vector<int> labels(run.labels.size());
        const double inertia = assign(x, centres, labels);
        run.history.push_back(inertia);
        const bool same = labels == run.labels;
        run.labels = std::move(labels);
        run.inertia = inertia;
        if (same || shift < opt.tol) break;
    }
    return run;
}

}  // namespace detail

// k-means++ initialisation and Lloyd iterations, best of n_init restarts by
// inertia. Deterministic given the seed.
inline ClusterAssignment kmeans(const DataMatrix& x, const KMeansOptions& opt = {}) {
    const auto n = static_cast<std::size_t>(x.rows());
    if (opt.k == 0) throw std::invalid_argument("k-means needs k >= 1");
    if (opt.k > n) throw std::invalid_argument("k-means: k = " + std::to_string(opt.k) + " exceeds n = " + std::to_string(n));
    std::mt19937_64 rng(opt.seed);
    detail::LloydRun best;
    best.inertia = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < std::max<std::size_t>(1, opt.n_init); ++r) {
        auto run = detail::lloyd(x, detail::kmeanspp_init(x, opt.k, rng), opt);
        if (run.inertia < best.inertia) best = std::move(run);
    }
    ClusterAssignment a;
    a.labels = std::move(best.labels);
    a.clusters = opt.k;
    a.algorithm = "kmeans";
    a.params = "k=" + std::to_string(opt.k) + " seed=" + std::to_string(opt.seed) + " n_init=" +
               std::to_string(opt.n_init);
    a.inertia = best.inertia;
    a.inertia_history = std::move(best.history);
    return a;
}

inline double inertia_of(const DataMatrix& x, const std::vector<int>& labels, std::size_t k) {
    DataMatrix c = DataMatrix::Zero(static_cast<Eigen::Index>(k), x.cols());
    std::vector<std::size_t> count(k, 0);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        c.row(labels[static_cast<std::size_t>(i)]) += x.row(i);
        ++count[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
    }
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j)
        if (count[j]) c.row(static_cast<Eigen::Index>(j)) /= static_cast<double>(count[j]);
    for (Eigen::Index i = 0; i < x.rows(); ++i) s += detail::sq_dist(x, i, c, labels[static_cast<std::size_t>(i)]);
    return s;
}

// ---- HDBSCAN ------------------------------------------------------------------------

struct HdbscanOptions {
    std::size_t min_cluster_size = 10;
    std::size_t min_samples = 1;
};

namespace detail {

struct CondensedEdge {
    std::size_t parent;  // cluster id
    std::size_t child;   // cluster id (child_is_cluster) or point index
    double lambda;
    std::size_t size;
    bool child_is_cluster;
};

}  // namespace detail

// Mutual-reachability distances (core distance = distance to the
// min_samples-th nearest other point), exact Prim MST, single-linkage
// hierarchy, condensed tree, excess-of-mass selection without the root.
inline ClusterAssignment hdbscan(const DataMatrix& x, const HdbscanOptions& opt = {}) {
    const auto n = static_cast<std::size_t>(x.rows());
    ClusterAssignment out;
    out.algorithm = "hdbscan";
    out.params = "min_cluster_size=" + std::to_string(opt.min_cluster_size) +
                 " min_samples=" + std::to_string(opt.min_samples);
    out.labels.assign(n, -1);
    if (opt.min_cluster_size < 2) throw std::invalid_argument("min_cluster_size must be >= 2");
    if (n < 2 || opt.min_cluster_size > n || opt.min_samples >= n) return out;

    // pairwise distances
    std::vector<double> dist(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            dist[i * n + j] = dist[j * n + i] =
                (x.row(static_cast<Eigen::Index>(i)) - x.row(static_cast<Eigen::Index>(j))).norm();
    std::vector<double> core(n, 0.0);
    if (opt.min_samples > 0) {
        std::vector<double> row(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::copy(dist.begin() + static_cast<std::ptrdiff_t>(i * n),
                      dist.begin() + static_cast<std::ptrdiff_t>((i + 1) * n), row.begin());
            row[i] = std::numeric_limits<double>::infinity();
            std::nth_element(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(opt.min_samples - 1), row.end());
            core[i] = row[opt.min_samples - 1];
        }
    }
    auto mreach = [&](std::size_t i, std::size_t j) { return std::max({dist[i * n + j], core[i], core[j]}); };

    // Prim's MST
    struct Edge {
        std::size_t a, b;
        double w;
    };
    std::vector<Edge> mst;
    mst.reserve(n - 1);
    std::vector<bool> in(n, false);
    std::vector<double> best(n, std::numeric_limits<double>::infinity());
    std::vector<std::size_t> from(n, 0);
    std::size_t cur = 0;
    in[0] = true;
    for (std::size_t step = 1; step < n; ++step) {
        std::size_t next = n;
        double bw = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            if (in[j]) continue;
            const double w = mreach(cur, j);
            if (w < best[j]) {
                best[j] = w;
                from[j] = cur;
            }
            if (best[j] < bw) {
                bw = best[j];
                next = j;
            }
        }
        in[next] = true;
        mst.push_back({from[next], next, bw});
        cur = next;
    }
    std::stable_sort(mst.begin(), mst.end(), [](const Edge& p, const Edge& q) { return p.w < q.w; });

    // single-linkage hierarchy: nodes n .. 2n-2
    const std::size_t nodes = 2 * n - 1;
    std::vector<std::size_t> left(nodes, 0), right(nodes, 0), size(nodes, 1);
    std::vector<double> height(nodes, 0.0);
    std::vector<std::size_t> uf(nodes);
    std::iota(uf.begin(), uf.end(), 0);
    auto find = [&](std::size_t a) {
        while (uf[a] != a) a = uf[a] = uf[uf[a]];
        return a;
    };
    for (std::size_t e = 0; e < mst.size(); ++e) {
        const std::size_t node = n + e;
        const std::size_t ra = find(mst[e].a), rb = find(mst[e].b);
        left[node] = ra;
        right[node] = rb;
        size[node] = size[ra] + size[rb];
        height[node] = mst[e].w;
        uf[ra] = uf[rb] = node;
    }
    const std::size_t root = nodes - 1;
    auto lambda_of = [](double d) { return 1.0 / std::max(d, 1e-12); };

    // condensed tree
    std::vector<detail::CondensedEdge> tree;
    std::vector<double> birth{0.0};  // cluster 0 is the root
    std::vector<std::size_t> cluster_of(nodes, 0);
    auto points_under = [&](std::size_t node, auto&& emit) {
        std::vector<std::size_t> stack{node};
        while (!stack.empty()) {
            const auto v = stack.back();
            stack.pop_back();
            if (v < n) {
                emit(v);
            } else {
                stack.push_back(left[v]);
                stack.push_back(right[v]);
            }
        }
    };
    std::vector<std::size_t> queue{root};
    for (std::size_t qi = 0; qi < queue.size(); ++qi) {
        const std::size_t node = queue[qi];
        if (node < n) continue;
        const std::size_t parent = cluster_of[node];
        const double lam = lambda_of(height[node]);
        const std::size_t l = left[node], r = right[node];
        const bool big_l = size[l] >= opt.min_cluster_size, big_r = size[r] >= opt.min_cluster_size;
        auto fall_out = [&](std::size_t sub) {
            points_under(sub, [&](std::size_t p) { tree.push_back({parent, p, lam, 1, false}); });
        };
        if (big_l && big_r) {
            for (std::size_t child : {l, r}) {
                const std::size_t id = birth.size();
                birth.push_back(lam);
                cluster_of[child] = id;
                tree.push_back({parent, id, lam, size[child], true});
                queue.push_back(child);
            }
        } else if (!big_l && !big_r) {
            fall_out(l);
            fall_out(r);
        } else {
            const std::size_t keep = big_l ? l : r, drop = big_l ? r : l;
            cluster_of[keep] = parent;
            queue.push_back(keep);
            fall_out(drop);
        }
    }

    const std::size_t C = birth.size();
    std::vector<double> stab(C, 0.0);
    std::vector<std::vector<std::size_t>> children(C);
    for (const auto& e : tree) {
        stab[e.parent] += (e.lambda - birth[e.parent]) * static_cast<double>(e.size);
        if (e.child_is_cluster) children[e.parent].push_back(e.child);
    }
    // cluster ids are assigned parent-before-child, so reverse order is bottom-up
    std::vector<bool> selected(C, false);
    for (std::size_t c = C; c-- > 1;) {
        if (children[c].empty()) {
            selected[c] = true;
            continue;
        }
        double sub = 0.0;
        for (auto ch : children[c]) sub += stab[ch];
        if (stab[c] > sub) {
            selected[c] = true;
            std::vector<std::size_t> stack(children[c].begin(), children[c].end());
            while (!stack.empty()) {
                const auto v = stack.back();
                stack.pop_back();
                selected[v] = false;
                stack.insert(stack.end(), children[v].begin(), children[v].end());
            }
        } else {
            stab[c] = sub;
        }
    }

    std::vector<std::size_t> parent_cluster(C, 0);
    for (const auto& e : tree)
        if (e.child_is_cluster) parent_cluster[e.child] = e.parent;
    auto selected_ancestor = [&](std::size_t c) -> long {
        while (c != 0) {
            if (selected[c]) return static_cast<long>(c);
            c = parent_cluster[c];
        }
        return -1;
    };
    std::vector<long> raw(n, -1);
    for (const auto& e : tree)
        if (!e.child_is_cluster) raw[e.child] = selected_ancestor(e.parent);
    // relabel by first appearance in row order
    std::map<long, int> rename;
    for (std::size_t i = 0; i < n; ++i) {
        if (raw[i] < 0) continue;
        auto it = rename.find(raw[i]);
        if (it == rename.end()) it = rename.emplace(raw[i], static_cast<int>(rename.size())).first;
        out.labels[i] = it->second;
    }
    out.clusters = rename.size();
    return out;
}

// ---- ARI ----------------------------------------------------------------------------

// Hubert-Arabie adjusted Rand index; every label value (noise included) is a
// class of its own.
inline double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
    if (a.size() != b.size())
        throw std::invalid_argument("ARI: label lengths differ (" + std::to_string(a.size()) + " vs " +
                                    std::to_string(b.size()) + ")");
    const std::uint64_t n = a.size();
    std::map<std::pair<int, int>, std::uint64_t> nij;
    std::map<int, std::uint64_t> ai, bj;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ++nij[{a[i], b[i]}];
        ++ai[a[i]];
        ++bj[b[i]];
    }
    auto c2 = [](std::uint64_t v) { return v * (v - (v > 0 ? 1 : 0)) / 2; };
    std::uint64_t index = 0, sa = 0, sb = 0;
    for (const auto& [k, v] : nij) index += c2(v);
    for (const auto& [k, v] : ai) sa += c2(v);
    for (const auto& [k, v] : bj) sb += c2(v);
    const double total = static_cast<double>(c2(n));
    if (total == 0.0) return 1.0;
    const double expected = static_cast<double>(sa) * static_cast<double>(sb) / total;
    const double max_index = 0.5 * (static_cast<double>(sa) + static_cast<double>(sb));
    if (max_index == expected) return 1.0;  // both trivial partitions
    return (static_cast<double>(index) - expected) / (max_index - expected);
}

// ---- reports ------------------------------------------------------------------------

struct DepthDistribution {
    double early = 0.0;   // k* in {0, 1}
    double middle = 0.0;  // k* in {2, 3, 4}
    double late = 0.0;    // k* >= 5
    std::size_t count = 0;
};

inline DepthDistribution depth_distribution(std::span<const double> k_star) {
    DepthDistribution d;
    d.count = k_star.size();
    if (k_star.empty()) return d;
    std::size_t e = 0, m = 0, l = 0;
    for (double k : k_star) {
        if (k < 1.5) {
            ++e;
        } else if (k < 4.5) {
            ++m;
        } else {
            ++l;
        }
    }
    const auto n = static_cast<double>(k_star.size());
    d.early = static_cast<double>(e) / n;
    d.middle = static_cast<double>(m) / n;
    d.late = static_cast<double>(l) / n;
    return d;
}

// k* column (index 17 of the tier-2 layout at L = 6) of a feature matrix.
inline std::vector<double> k_star_column(const DataMatrix& features, std::size_t layers = 6) {
    const auto idx = static_cast<Eigen::Index>(3 * layers - 1);
    if (features.cols() <= idx) throw std::invalid_argument("feature matrix has no k* column");
    std::vector<double> out(static_cast<std::size_t>(features.rows()));
    for (Eigen::Index i = 0; i < features.rows(); ++i) out[static_cast<std::size_t>(i)] = features(i, idx);
    return out;
}

// Greedy max-min selection seeded at the cluster medoid.
inline std::vector<std::size_t> diverse_samples(const DataMatrix& x, std::span<const int> labels, int cluster,
                                                std::size_t count = 15) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == cluster) members.push_back(i);
    if (members.empty()) throw std::invalid_argument("cluster " + std::to_string(cluster) + " is empty");
    auto d = [&](std::size_t i, std::size_t j) {
        return (x.row(static_cast<Eigen::Index>(i)) - x.row(static_cast<Eigen::Index>(j))).norm();
    };
    std::size_t medoid = members[0];
    double best = std::numeric_limits<double>::infinity();
    for (auto i : members) {
        double s = 0.0;
        for (auto j : members) s += d(i, j);
        if (s < best) {
            best = s;
            medoid = i;
        }
    }
    std::vector<std::size_t> chosen{medoid};
    std::vector<double> mind(members.size());
    for (std::size_t m = 0; m < members.size(); ++m) mind[m] = d(members[m], medoid);
    std::vector<bool> taken(members.size(), false);
    taken[static_cast<std::size_t>(std::find(members.begin(), members.end(), medoid) - members.begin())] = true;
    while (chosen.size() < std::min(count, members.size())) {
        std::size_t arg = 0;
        double far = -1.0;
        for (std::size_t m = 0; m < members.size(); ++m)
            if (!taken[m] && mind[m] > far) {
                far = mind[m];
                arg = m;
            }
        taken[arg] = true;
        chosen.push_back(members[arg]);
        for (std::size_t m = 0; m < members.size(); ++m) mind[m] = std::min(mind[m], d(members[m], members[arg]));
    }
    return chosen;
}

// ARI between k-means on raw activations and an engineered-feature labelling.
inline double raw_activation_baseline(const DataMatrix& raw, std::span<const int> engineered_labels,
                                      std::size_t k = 10, std::uint64_t seed = 0) {
    KMeansOptions o;
    o.k = k;
    o.seed = seed;
    const auto a = kmeans(raw, o);
    return adjusted_rand_index(a.labels, engineered_labels);
}

}  // namespace headforge
