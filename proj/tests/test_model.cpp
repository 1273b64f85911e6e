#include <catch2/catch_amalgamated.hpp>

#include "headforge/gradcheck.hpp"
#include "headforge/model.hpp"

#include <cmath>
#include <random>
#include <sstream>

using namespace headforge;
using Catch::Approx;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.layers = 2;
    c.heads = 2;
    c.hidden = 8;
    c.ffn = 32;
    c.vocab = 20;
    c.max_seq_len = 8;
    c.dropout = 0.0;
    return c;
}

std::vector<std::uint32_t> random_ids(std::size_t n, std::size_t vocab, std::mt19937_64& rng) {
    std::uniform_int_distribution<std::uint32_t> d(0, static_cast<std::uint32_t>(vocab - 1));
    std::vector<std::uint32_t> ids(n);
    for (auto& v : ids) v = d(rng);
    return ids;
}

// Gives every parameter (including biases and gains) a random perturbation so
// no gradient path is trivially zero.
template <class T>
void randomize(Parameters<T>& p, std::uint64_t seed, double scale = 0.3) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    for (auto& [name, t] : p.named()) {
        const bool gain = name.find("gamma") != std::string::npos;
        for (auto& v : t.data()) v = static_cast<T>((gain ? 1.0 : 0.0) + n(rng));
    }
}

bool bit_equal(const Tensor<double>& a, const Tensor<double>& b) {
    if (a.shape() != b.shape()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (std::memcmp(&a[i], &b[i], sizeof(double)) != 0) return false;
    return true;
}

}  // namespace

TEST_CASE("embedding initialises the two streams", "[model]") {
    auto c = tiny_config();
    c.learned_positions = false;
    auto m = Model<double>::initialized(c, 1);
    for (std::size_t j = 0; j < c.hidden; ++j) m.params().tok_emb.at(0, j) = 1.0;
    Graph<double> g(false);
    std::vector<std::uint32_t> ids{0, 5, 5, 3};
    auto s = m.embed_init(g, ids, 4);
    for (double v : s.context.data()) CHECK(v == 0.0);
    for (std::size_t j = 0; j < c.hidden; ++j) {
        CHECK(s.token.at(0, j) == 1.0);
        CHECK(s.token.at(1, j) == s.token.at(2, j));
    }
    std::vector<std::uint32_t> bad{1, 20};
    try {
        m.embed_init(g, bad, 2);
        FAIL("expected out_of_range");
    } catch (const std::out_of_range& e) {
        CHECK(std::string(e.what()).find("position 1") != std::string::npos);
    }
}

TEST_CASE("gated attention records", "[model][attention]") {
    auto c = tiny_config();
    auto m = Model<double>::initialized(c, 3);
    randomize(m.params(), 4);
    std::mt19937_64 rng(5);
    auto ids = random_ids(6, c.vocab, rng);
    ForwardOptions opt;
    opt.capture_attention = true;

    SECTION("zero gate parameters give gate mean 0.5") {
        for (auto& lp : m.params().layers) {
            for (auto& w : lp.gate_w) std::fill(w.data().begin(), w.data().end(), 0.0);
            for (auto& b : lp.gate_b) std::fill(b.data().begin(), b.data().end(), 0.0);
        }
        Graph<double> g(false);
        auto r = m.forward(g, ids, 6, opt);
        for (const auto& rec : r.attention)
            for (std::size_t h = 0; h < c.heads; ++h)
                for (std::size_t row = 0; row < 6; ++row) {
                    CHECK(rec.gate_mean[h][row] == 0.5);
                    double s = 0;
                    for (std::size_t k = 0; k < 6; ++k) s += rec.effective[h][row * 6 + k];
                    CHECK(std::abs(s - 0.5) < 1e-12);
                }
    }
    SECTION("large negative gate bias disables a head") {
        for (auto& b : m.params().layers[1].gate_b) std::fill(b.data().begin(), b.data().end(), -60.0);
        Graph<double> g(false);
        auto r = m.forward(g, ids, 6, opt);
        for (std::size_t h = 0; h < c.heads; ++h) {
            for (double v : r.head_outputs[c.heads + h].data()) CHECK(std::abs(v) < 1e-20);
        }
    }
    SECTION("a single position attends only to itself") {
        Graph<double> g(false);
        std::vector<std::uint32_t> one{7};
        auto r = m.forward(g, one, 1, opt);
        for (const auto& rec : r.attention)
            for (std::size_t h = 0; h < c.heads; ++h) CHECK(rec.probs[h][0] == 1.0);
    }
}

TEST_CASE("cascade layer keeps the token stream frozen", "[model][cascade]") {
    auto c = tiny_config();
    SECTION("all-zero weights leave the contextual stream unchanged") {
        auto p = Parameters<double>::zeros(c);
        std::mt19937_64 rng(9);
        std::normal_distribution<double> n;
        for (auto& v : p.tok_emb.data()) v = n(rng);
        Model<double> m(c, p);
        Graph<double> g(false);
        std::vector<std::uint32_t> ids{1, 2, 3, 4};
        ForwardOptions opt;
        opt.capture_states = true;
        auto r = m.forward(g, ids, 4, opt);
        // a = concat(y) W_O = 0; f = GELU(0) * 0 + 0 = 0
        for (const auto& s : r.states)
            for (double v : s.context.data()) CHECK(v == 0.0);
    }
    SECTION("random inputs: x_t is bit-identical at every layer") {
        auto m = Model<double>::initialized(c, 2);
        randomize(m.params(), 21);
        std::mt19937_64 rng(22);
        for (int trial = 0; trial < 20; ++trial) {
            auto ids = random_ids(8, c.vocab, rng);
            Graph<double> g(false);
            ForwardOptions opt;
            opt.capture_states = true;
            auto r = m.forward(g, ids, 8, opt);
            for (const auto& s : r.states) CHECK(bit_equal(s.token, r.states[0].token));
        }
    }
}

TEST_CASE("standard dual mode routes attention into x_t and FFN into x_e", "[model]") {
    auto c = tiny_config();
    c.mode = StreamMode::kDualStandard;
    auto m = Model<double>::initialized(c, 5);
    randomize(m.params(), 6);
    std::vector<std::uint32_t> ids{3, 1, 4, 1};
    ForwardOptions opt;
    opt.capture_states = true;

    SECTION("FFN silenced: x_e never moves") {
        for (auto& lp : m.params().layers) {
            std::fill(lp.w_2.data().begin(), lp.w_2.data().end(), 0.0);
            std::fill(lp.b_2.data().begin(), lp.b_2.data().end(), 0.0);
        }
        Graph<double> g(false);
        auto r = m.forward(g, ids, 4, opt);
        for (double v : r.states.back().context.data()) CHECK(v == 0.0);
        CHECK_FALSE(bit_equal(r.states.back().token, r.states[0].token));
    }
    SECTION("attention silenced: x_t never moves, x_e accumulates") {
        for (auto& lp : m.params().layers) std::fill(lp.w_o.data().begin(), lp.w_o.data().end(), 0.0);
        Graph<double> g(false);
        auto r = m.forward(g, ids, 4, opt);
        CHECK(bit_equal(r.states.back().token, r.states[0].token));
        double mass = 0;
        for (double v : r.states.back().context.data()) mass += std::abs(v);
        CHECK(mass > 0.0);
    }
}

TEST_CASE("per-layer logits through the tied head", "[model][logits]") {
    SECTION("one logit set per layer") {
        ModelConfig c = tiny_config();
        c.layers = 6;
        auto m = Model<double>::initialized(c, 1);
        Graph<double> g(false);
        std::vector<std::uint32_t> ids{1, 2, 3};
        auto r = m.forward(g, ids, 3);
        CHECK(r.layer_logits.size() == 6);
        for (const auto& z : r.layer_logits) CHECK(z.shape() == Shape{3, c.vocab});
    }
    SECTION("orthonormal zero-mean embedding rows decode to themselves") {
        // Rows 1..7 of the 8x8 Sylvester-Hadamard matrix, scaled to unit norm,
        // are orthonormal with zero mean: LayerNorm(W_E[k]) = sqrt(8) W_E[k]
        // (up to eps), so z_j = sqrt(8) delta_jk.
        ModelConfig c = tiny_config();
        c.vocab = 7;
        auto m = Model<double>::initialized(c, 1);
        auto& emb = m.params().tok_emb;
        for (std::size_t k = 0; k < 7; ++k)
            for (std::size_t j = 0; j < 8; ++j) {
                const int parity = __builtin_popcount(static_cast<unsigned>((k + 1) & j)) & 1;
                emb.at(k, j) = (parity ? -1.0 : 1.0) / std::sqrt(8.0);
            }
        for (std::size_t k = 0; k < 7; ++k) {
            DualStreamState<double> s;
            s.token = Tensor<double>({1, 8});
            s.context = Tensor<double>({1, 8});
            for (std::size_t j = 0; j < 8; ++j) s.token.at(0, j) = emb.at(k, j);
            Graph<double> g(false);
            auto z = m.logits(g, s);
            std::size_t best = 0;
            for (std::size_t j = 1; j < 7; ++j)
                if (z[j] > z[best]) best = j;
            CHECK(best == k);
            CHECK(z[k] == Approx(std::sqrt(8.0)).epsilon(1e-4));
        }
    }
    SECTION("identical states give identical logits") {
        auto m = Model<double>::initialized(tiny_config(), 3);
        std::mt19937_64 rng(1);
        std::normal_distribution<double> n;
        DualStreamState<double> s;
        s.token = Tensor<double>({2, 8});
        s.context = Tensor<double>({2, 8});
        for (auto& v : s.token.data()) v = n(rng);
        Graph<double> g(false);
        CHECK(bit_equal(m.logits(g, s), m.logits(g, s)));
    }
}

TEST_CASE("per-layer supervision loss", "[model][pls]") {
    SECTION("linear decay weights for L=6") {
        const auto w = pls_layer_weights(6);
        REQUIRE(w.size() == 5);
        CHECK(w[0] == 1.0 / 6.0);
        CHECK(w[1] == 2.0 / 6.0);
        CHECK(w[2] == 3.0 / 6.0);
        CHECK(w[3] == 4.0 / 6.0);
        CHECK(w[4] == 5.0 / 6.0);
    }
    ModelConfig c = tiny_config();
    c.layers = 6;
    auto m = Model<double>::initialized(c, 8);
    randomize(m.params(), 9, 0.2);
    std::vector<std::uint32_t> ids{1, 4, 2, 8, 5, 7};
    std::vector<std::int64_t> targets{4, 2, 8, 5, 7, 3};

    SECTION("lambda = 0 is exactly the final-layer CE") {
        m.mutable_config().pls_lambda = 0.0;
        Graph<double> g(false);
        auto r = m.forward(g, ids, 6);
        auto loss = m.pls_loss(g, r.layer_logits, targets);
        auto ce = g.cross_entropy(r.layer_logits.back(), targets);
        CHECK(loss.total.item() == ce.item());
    }
    SECTION("disabled supervision is exactly the final-layer CE") {
        m.mutable_config().pls_enabled = false;
        Graph<double> g(false);
        auto r = m.forward(g, ids, 6);
        auto loss = m.pls_loss(g, r.layer_logits, targets);
        CHECK(loss.total.item() == g.cross_entropy(r.layer_logits.back(), targets).item());
    }
    SECTION("identical logits at every layer scale the CE by 1 + 0.1 * 2.5") {
        Graph<double> g(false);
        auto r = m.forward(g, ids, 6);
        std::vector<Tensor<double>> same(6, r.layer_logits.back());
        auto loss = m.pls_loss(g, same, targets);
        const double ce = g.cross_entropy(r.layer_logits.back(), targets).item();
        CHECK(loss.total.item() == Approx(1.25 * ce).epsilon(1e-12));
    }
    SECTION("target outside the vocabulary is rejected") {
        Graph<double> g(false);
        auto r = m.forward(g, ids, 6);
        std::vector<std::int64_t> bad{4, 2, 8, 5, 7, 20};
        CHECK_THROWS_AS(m.pls_loss(g, r.layer_logits, bad), std::out_of_range);
    }
}

TEST_CASE("pls loss gradient passes central differences on the tiny config", "[model][gradcheck]") {
    auto c = tiny_config();
    auto m = Model<double>::initialized(c, 13);
    randomize(m.params(), 14, 0.4);
    std::mt19937_64 rng(15);
    auto ids = random_ids(9, c.vocab, rng);
    std::vector<std::uint32_t> input(ids.begin(), ids.end() - 1);
    std::vector<std::int64_t> targets(ids.begin() + 1, ids.end());
    auto rep = finite_difference_check(m.params().named(), [&](Graph<double>& g) {
        auto r = m.forward(g, input, 8);
        return m.pls_loss(g, r.layer_logits, targets).total;
    });
    INFO("worst " << rep.worst_param << "[" << rep.worst_index << "] analytic "
                  << rep.worst_analytic << " numeric " << rep.worst_numeric);
    CHECK(rep.max_rel_error < 1e-4);
    CHECK(rep.checked == m.params().count());
}

TEST_CASE("head interventions", "[model][hooks]") {
    auto c = tiny_config();
    c.layers = 3;
    auto m = Model<double>::initialized(c, 17);
    randomize(m.params(), 18);
    std::mt19937_64 rng(19);
    auto ids = random_ids(8, c.vocab, rng);
    ForwardOptions base_opt;
    base_opt.capture_attention = true;
    Graph<double> g(false);
    auto base = m.forward(g, ids, 8, base_opt);

    SECTION("scale 1 is bit-identical to no intervention") {
        InterventionSpec spec{{{0, 0}, {1, 1}, {2, 0}}, 1.0};
        ForwardOptions opt = base_opt;
        opt.intervention = &spec;
        auto r = m.forward(g, ids, 8, opt);
        for (std::size_t l = 0; l < c.layers; ++l) CHECK(bit_equal(r.layer_logits[l], base.layer_logits[l]));
    }
    SECTION("zeroing every head equals the attention-skipped forward") {
        InterventionSpec spec;
        for (std::size_t l = 0; l < c.layers; ++l)
            for (std::size_t h = 0; h < c.heads; ++h) spec.targets.push_back({l, h});
        spec.scale = 0.0;
        ForwardOptions opt;
        opt.intervention = &spec;
        auto r = m.forward(g, ids, 8, opt);
        ForwardOptions skip;
        skip.skip_attention = true;
        auto s = m.forward(g, ids, 8, skip);
        for (std::size_t l = 0; l < c.layers; ++l)
            for (std::size_t i = 0; i < s.layer_logits[l].size(); ++i)
                CHECK(std::abs(r.layer_logits[l][i] - s.layer_logits[l][i]) < 1e-12);
    }
    SECTION("scaling one head scales its projected contribution linearly") {
        const std::size_t layer = 1, head = 1, dh = c.head_dim();
        auto run = [&](double s) {
            InterventionSpec spec{{{layer, head}}, s};
            ForwardOptions opt = base_opt;
            opt.intervention = &spec;
            return m.forward(g, ids, 8, opt);
        };
        auto r0 = run(0.0), r5 = run(0.5), r1 = run(1.0);
        // contribution of the head: y_h (from the s=1 run) times its W_O rows
        const auto& y = r1.head_outputs[layer * c.heads + head];
        const auto& wo = m.params().layers[layer].w_o;
        for (std::size_t row = 0; row < 8; ++row)
            for (std::size_t j = 0; j < c.hidden; ++j) {
                double contrib = 0;
                for (std::size_t i = 0; i < dh; ++i) contrib += y.at(row, i) * wo.at(head * dh + i, j);
                const double a0 = r0.attention_outputs[layer].at(row, j);
                const double a5 = r5.attention_outputs[layer].at(row, j);
                const double a1 = r1.attention_outputs[layer].at(row, j);
                CHECK(a0 - a1 == Approx(-contrib).margin(1e-12));
                CHECK(a5 - a0 == Approx(0.5 * contrib).margin(1e-12));
            }
        for (std::size_t i = 0; i < y.size(); ++i)
            CHECK(r5.head_outputs[layer * c.heads + head][i] == 0.5 * y[i]);
    }
    SECTION("head index out of range is rejected") {
        InterventionSpec spec{{{0, 2}}, 0.0};
        ForwardOptions opt;
        opt.intervention = &spec;
        CHECK_THROWS_AS(m.forward(g, ids, 8, opt), std::out_of_range);
        InterventionSpec spec2{{{3, 0}}, 0.0};
        opt.intervention = &spec2;
        CHECK_THROWS_AS(m.forward(g, ids, 8, opt), std::out_of_range);
    }
}

TEST_CASE("supervised and control models share the forward path", "[model]") {
    auto c = tiny_config();
    auto pls = Model<double>::initialized(c, 23);
    c.pls_enabled = false;
    auto c2 = Model<double>(c, pls.params().clone());
    std::mt19937_64 rng(24);
    auto ids = random_ids(8, c.vocab, rng);
    ForwardOptions opt;
    opt.capture_attention = true;
    opt.capture_states = true;
    Graph<double> g(false);
    auto a = pls.forward(g, ids, 8, opt);
    auto b = c2.forward(g, ids, 8, opt);
    for (std::size_t l = 0; l < c.layers; ++l) {
        CHECK(bit_equal(a.layer_logits[l], b.layer_logits[l]));
        CHECK(a.attention[l].effective == b.attention[l].effective);
    }
}

TEST_CASE("checkpoint round trip", "[model][checkpoint]") {
    auto c = tiny_config();
    c.pls_enabled = false;
    c.mode = StreamMode::kDualStandard;
    auto m = Model<float>::initialized(c, 31);
    std::stringstream ss;
    save_checkpoint(ss, m);
    const std::string bytes = ss.str();
    CHECK(bytes.substr(0, 4) == "HFCK");

    std::stringstream in(bytes);
    auto back = load_checkpoint<float>(in);
    CHECK(back.config() == m.config());
    auto a = m.params().named();
    auto b = back.params().named();
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].first == b[i].first);
        CHECK(std::equal(a[i].second.data().begin(), a[i].second.data().end(), b[i].second.data().begin()));
    }

    std::stringstream bad_magic("XXXX" + bytes.substr(4));
    CHECK_THROWS_AS(load_checkpoint<float>(bad_magic), io::FormatError);
    std::stringstream truncated(bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(load_checkpoint<float>(truncated), io::FormatError);
}
