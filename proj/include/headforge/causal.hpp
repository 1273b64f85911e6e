#pragma once

// Task suites and head interventions: per-case probability deltas, suite
// statistics, task x head-group effect matrices and steering sweeps.

#include "headforge/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace headforge {

struct TaskCase {
    std::string task;
    std::vector<std::uint32_t> context_ids;
    std::uint32_t correct_id = 0;
    std::optional<std::uint32_t> incorrect_id;
};

class SuiteError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::uint32_t parse_id(const std::string& s, std::size_t vocab, const std::string& where) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(s, &used);
    } catch (const std::exception&) {
        throw SuiteError(where + ": '" + s + "' is not a token id");
    }
    if (used != s.size() || s.empty() || s[0] == '-') throw SuiteError(where + ": '" + s + "' is not a token id");
    if (v >= vocab)
        throw SuiteError(where + ": token id " + s + " exceeds vocabulary size " + std::to_string(vocab));
    return static_cast<std::uint32_t>(v);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) out.push_back(cur);
    if (!s.empty() && s.back() == sep) out.emplace_back();
    return out;
}

}  // namespace detail

// One case per line: task<TAB>id,id,...<TAB>correct[<TAB>incorrect].
// Blank lines and lines starting with '#' are skipped.
inline std::vector<TaskCase> parse_suite(std::istream& in, std::size_t vocab, const std::string& source = "<suite>") {
    std::vector<TaskCase> cases;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const std::string where = source + ":" + std::to_string(lineno);
        const auto fields = detail::split(line, '\t');
        if (fields.size() != 3 && fields.size() != 4)
            throw SuiteError(where + ": expected 3 or 4 tab-separated fields, got " + std::to_string(fields.size()));
        TaskCase c;
        c.task = fields[0];
        if (c.task.empty()) throw SuiteError(where + ": empty task tag");
        for (const auto& tok : detail::split(fields[1], ',')) c.context_ids.push_back(detail::parse_id(tok, vocab, where));
        if (c.context_ids.size() < 2) throw SuiteError(where + ": context needs at least 2 tokens");
        c.correct_id = detail::parse_id(fields[2], vocab, where);
        if (fields.size() == 4) c.incorrect_id = detail::parse_id(fields[3], vocab, where);
        cases.push_back(std::move(c));
    }
    return cases;
}

inline std::vector<TaskCase> load_suite(const std::string& path, std::size_t vocab) {
    std::ifstream in(path);
    if (!in) throw SuiteError("cannot open suite " + path);
    return parse_suite(in, vocab, path);
}

// Parses "5:4,5:5" into head references.
inline std::vector<HeadRef> parse_heads(const std::string& s) {
    std::vector<HeadRef> out;
    if (s.empty()) return out;
    for (const auto& item : detail::split(s, ',')) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw std::invalid_argument("head '" + item + "' is not layer:head");
        try {
            std::size_t u1 = 0, u2 = 0;
            const auto l = std::stoul(item.substr(0, colon), &u1);
            const auto h = std::stoul(item.substr(colon + 1), &u2);
            if (u1 != colon || u2 != item.size() - colon - 1) throw std::invalid_argument("trailing");
            out.push_back({l, h});
        } catch (const std::exception&) {
            throw std::invalid_argument("head '" + item + "' is not layer:head");
        }
    }
    return out;
}

struct CaseResult {
    double p_baseline = 0.0;
    double p_intervened = 0.0;
    double delta = 0.0;
    std::optional<double> p_incorrect_baseline;
    std::optional<double> p_incorrect_intervened;
};

// Final-layer next-token distribution at the last context position.
template <class T>
std::vector<double> next_token_distribution(const Model<T>& model, const std::vector<std::uint32_t>& ids,
                                            const InterventionSpec* spec = nullptr) {
    Graph<T> g(false);
    ForwardOptions fo;
    fo.intervention = spec;
    auto res = model.forward(g, ids, ids.size(), fo);
    const std::size_t V = model.config().vocab;
    auto z = std::as_const(res.layer_logits.back()).data().subspan((ids.size() - 1) * V, V);
    const double mx = static_cast<double>(*std::max_element(z.begin(), z.end()));
    std::vector<double> p(V);
    double sum = 0.0;
    for (std::size_t v = 0; v < V; ++v) sum += (p[v] = std::exp(static_cast<double>(z[v]) - mx));
    for (auto& x : p) x /= sum;
    return p;
}

template <class T>
CaseResult run_case(const Model<T>& model, const TaskCase& c, const InterventionSpec* spec = nullptr) {
    const auto base = next_token_distribution(model, c.context_ids);
    CaseResult r;
    r.p_baseline = base[c.correct_id];
    if (c.incorrect_id) r.p_incorrect_baseline = base[*c.incorrect_id];
    if (!spec) {
        r.p_intervened = r.p_baseline;
        r.p_incorrect_intervened = r.p_incorrect_baseline;
        return r;
    }
    const auto after = next_token_distribution(model, c.context_ids, spec);
    r.p_intervened = after[c.correct_id];
    if (c.incorrect_id) r.p_incorrect_intervened = after[*c.incorrect_id];
    r.delta = r.p_intervened - r.p_baseline;
    return r;
}

template <class T>
std::vector<CaseResult> run_suite(const Model<T>& model, const std::vector<TaskCase>& cases,
                                  const InterventionSpec* spec = nullptr) {
    std::vector<CaseResult> out;
    out.reserve(cases.size());
    for (const auto& c : cases) out.push_back(run_case(model, c, spec));
    return out;
}

struct SuiteStats {
    std::size_t n = 0;
    double mean = 0.0;
    double sd = 0.0;  // sample standard deviation (n - 1); 0 for a single case
    std::vector<double> deltas;
};

inline SuiteStats suite_stats(const std::vector<CaseResult>& results) {
    if (results.empty()) throw std::invalid_argument("suite statistics need at least one result");
    SuiteStats s;
    s.n = results.size();
    for (const auto& r : results) s.deltas.push_back(r.delta);
    // sum in sorted order so the statistics do not depend on case order
    std::vector<double> sorted = s.deltas;
    std::sort(sorted.begin(), sorted.end());
    double sum = 0.0;
    for (double d : sorted) sum += d;
    s.mean = sum / static_cast<double>(s.n);
    if (s.n > 1) {
        std::vector<double> sq;
        for (double d : sorted) sq.push_back((d - s.mean) * (d - s.mean));
        std::sort(sq.begin(), sq.end());
        double ss = 0.0;
        for (double v : sq) ss += v;
        s.sd = std::sqrt(ss / static_cast<double>(s.n - 1));
    }
    return s;
}

// ---- effect matrix --------------------------------------------------------------

struct NamedSuite {
    std::string name;
    std::vector<TaskCase> cases;
};

struct NamedGroup {
    std::string name;
    std::vector<HeadRef> heads;
};

inline std::vector<NamedGroup> default_head_groups() {
    return {{"anchor", {{5, 2}, {5, 3}}}, {"entity", {{5, 4}, {5, 5}}}};
}

// Which (task, group) cells are expected to carry the effect.
inline std::vector<std::pair<std::string, std::string>> default_on_target() {
    return {{"capitalization", "entity"}, {"gender", "anchor"}};
}

struct EffectMatrix {
    std::vector<std::string> tasks;
    std::vector<std::string> groups;
    std::vector<std::vector<double>> mean_delta;  // [task][group]
    std::vector<std::vector<double>> sd_delta;
    double diagonality = 0.0;  // mean on-target |delta| / mean off-target |delta|
};

inline double diagonality_score(const EffectMatrix& m,
                                const std::vector<std::pair<std::string, std::string>>& on_target) {
    double on = 0.0, off = 0.0;
    std::size_t n_on = 0, n_off = 0;
    for (std::size_t t = 0; t < m.tasks.size(); ++t)
        for (std::size_t g = 0; g < m.groups.size(); ++g) {
            const bool target = std::find(on_target.begin(), on_target.end(),
                                          std::make_pair(m.tasks[t], m.groups[g])) != on_target.end();
            (target ? on : off) += std::abs(m.mean_delta[t][g]);
            ++(target ? n_on : n_off);
        }
    if (n_on == 0) return 0.0;
    on /= static_cast<double>(n_on);
    if (n_off == 0 || off == 0.0) return on > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    return on / (off / static_cast<double>(n_off));
}

template <class T>
EffectMatrix effect_matrix(const Model<T>& model, const std::vector<NamedSuite>& suites,
                           const std::vector<NamedGroup>& groups,
                           const std::vector<std::pair<std::string, std::string>>& on_target = default_on_target()) {
    EffectMatrix m;
    for (const auto& g : groups) m.groups.push_back(g.name);
    for (const auto& s : suites) {
        m.tasks.push_back(s.name);
        std::vector<double> means, sds;
        for (const auto& g : groups) {
            InterventionSpec spec{g.heads, 0.0};
            if (s.cases.empty()) {
                means.push_back(0.0);
                sds.push_back(0.0);
                continue;
            }
            const auto st = suite_stats(run_suite(model, s.cases, &spec));
            means.push_back(st.mean);
            sds.push_back(st.sd);
        }
        m.mean_delta.push_back(std::move(means));
        m.sd_delta.push_back(std::move(sds));
    }
    m.diagonality = diagonality_score(m, on_target);
    return m;
}

// ---- steering ---------------------------------------------------------------------

inline std::vector<double> default_grid() { return {0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5}; }

// "start:stop:step", inclusive of stop; points are start + i * step.
inline std::vector<double> parse_grid(const std::string& s) {
    const auto parts = detail::split(s, ':');
    if (parts.size() != 3) throw std::invalid_argument("grid '" + s + "' is not start:stop:step");
    double a = 0, b = 0, step = 0;
    try {
        a = std::stod(parts[0]);
        b = std::stod(parts[1]);
        step = std::stod(parts[2]);
    } catch (const std::exception&) {
        throw std::invalid_argument("grid '" + s + "' is not start:stop:step");
    }
    if (step <= 0 || b < a) throw std::invalid_argument("grid '" + s + "' needs step > 0 and stop >= start");
    std::vector<double> g;
    for (std::size_t i = 0;; ++i) {
        const double v = a + static_cast<double>(i) * step;
        if (v > b + 1e-9 * step) break;
        g.push_back(v);
    }
    return g;
}

struct SteeringPoint {
    double scale = 0.0;
    double mean_p = 0.0;
};

struct SteeringCurve {
    std::vector<SteeringPoint> points;
    double baseline_mean_p = 0.0;
    double control_range = 0.0;  // max - min of mean_p over the grid
};

template <class T>
SteeringCurve steering_sweep(const Model<T>& model, const std::vector<TaskCase>& cases,
                             const std::vector<HeadRef>& targets, const std::vector<double>& grid = default_grid()) {
    if (cases.empty()) throw std::invalid_argument("steering sweep needs at least one case");
    const bool has0 = std::find(grid.begin(), grid.end(), 0.0) != grid.end();
    const bool has1 = std::find(grid.begin(), grid.end(), 1.0) != grid.end();
    for (double s : grid)
        if (s < 0.0 || s > 1.5) throw std::invalid_argument("steering grid values must lie in [0, 1.5]");
    if (!has0 || !has1) throw std::invalid_argument("steering grid must contain 0 and 1");

    auto mean_of = [&](const InterventionSpec* spec) {
        double sum = 0.0;
        for (const auto& c : cases) sum += next_token_distribution(model, c.context_ids, spec)[c.correct_id];
        return sum / static_cast<double>(cases.size());
    };
    SteeringCurve curve;
    curve.baseline_mean_p = mean_of(nullptr);
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (double s : grid) {
        InterventionSpec spec{targets, s};
        const double m = mean_of(&spec);
        curve.points.push_back({s, m});
        lo = std::min(lo, m);
        hi = std::max(hi, m);
    }
    curve.control_range = hi - lo;
    return curve;
}

}  // namespace headforge
