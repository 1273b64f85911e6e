#include <catch2/catch_amalgamated.hpp>

#include "headforge/trace.hpp"

#include <random>
#include <sstream>

using namespace headforge;

namespace {

ModelConfig trace_config() {
    ModelConfig c;
    c.layers = 3;
    c.heads = 2;
    c.hidden = 8;
    c.ffn = 16;
    c.vocab = 24;
    c.max_seq_len = 16;
    c.dropout = 0.0;
    return c;
}

std::vector<std::uint32_t> ids_of(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::uint32_t> d(0, 23);
    std::vector<std::uint32_t> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

TraceFile round_trip(const TraceFile& f) {
    std::stringstream ss;
    write_traces(ss, f);
    return read_traces(ss);
}

}  // namespace

TEST_CASE("single-key trace equals the gate means", "[trace]") {
    auto m = Model<float>::initialized(trace_config(), 3);
    auto ids = ids_of(2, 1);
    std::vector<std::size_t> pos{1};
    auto tr = capture(m, ids, pos);
    REQUIRE(tr.size() == 1);
    CHECK(tr[0].query_pos == 0);
    CHECK(tr[0].ground_truth == ids[1]);
    CHECK(tr[0].attn_rows.size() == 3 * 2);
    for (std::size_t i = 0; i < tr[0].attn_rows.size(); ++i) CHECK(tr[0].attn_rows[i] == tr[0].gate_means[i]);
    for (float r : tr[0].raw_attn_rows) CHECK(r == 1.0f);
}

TEST_CASE("gates forced open make effective equal raw attention", "[trace]") {
    auto m = Model<double>::initialized(trace_config(), 4);
    for (auto& lp : m.params().layers)
        for (std::size_t h = 0; h < lp.gate_b.size(); ++h) {
            for (auto& v : lp.gate_w[h].data()) v = 0.0;
            for (auto& v : lp.gate_b[h].data()) v = 60.0;
        }
    auto ids = ids_of(10, 2);
    std::vector<std::size_t> pos{3, 9, 10};
    for (const auto& t : capture(m, ids, pos)) {
        CHECK(t.attn_rows == t.raw_attn_rows);
        for (float g : t.gate_means) CHECK(g == 1.0f);
    }
}

TEST_CASE("trace invariants", "[trace][property]") {
    auto m = Model<float>::initialized(trace_config(), 5);
    for (std::uint64_t s = 0; s < 20; ++s) {
        auto ids = ids_of(16, 100 + s);
        std::vector<std::size_t> pos{1, 5, 15, 16};
        for (const auto& t : capture(m, ids, pos)) {
            CHECK(t.query_pos + 1 == t.position);
            CHECK(t.layer_argmax.back() == t.final_pred);
            CHECK(t.raw_activation.size() == 16);
            for (float p : t.layer_probs) CHECK((p >= 0.0f && p <= 1.0f));
            for (float p : t.layer_second_prob) CHECK((p >= 0.0f && p <= 1.0f));
            for (std::size_t l = 0; l < 3; ++l)
                for (std::size_t h = 0; h < 2; ++h) {
                    double sum = 0;
                    for (float a : t.row(l, h)) {
                        CHECK((a >= 0.0f && a <= 1.0f));
                        sum += a;
                    }
                    CHECK(std::abs(sum - t.gate_mean(l, h)) < 1e-6);
                }
            CHECK(t.ground_truth.has_value() == (t.position < 16));
        }
    }
}

TEST_CASE("capture is pure", "[trace]") {
    auto m = Model<float>::initialized(trace_config(), 6);
    auto ids = ids_of(12, 9);
    std::vector<std::size_t> pos{7, 7};
    auto a = capture(m, ids, pos, {2, 4});
    auto b = capture(m, ids, pos, {2, 4});
    CHECK(a[0] == a[1]);
    CHECK(a == b);
    CHECK(a[0].sequence_id == 4);
}

TEST_CASE("raw activation is the concatenated streams at the baseline layer", "[trace]") {
    auto c = trace_config();
    auto m = Model<double>::initialized(c, 8);
    auto ids = ids_of(6, 3);
    std::vector<std::size_t> pos{4};
    auto t = capture(m, ids, pos, {1, 0})[0];
    Graph<double> g(false);
    ForwardOptions fo;
    fo.capture_states = true;
    auto res = m.forward(g, ids, 6, fo);
    for (std::size_t j = 0; j < 8; ++j) {
        CHECK(t.raw_activation[j] == static_cast<float>(res.states[2].token.at(3, j)));
        CHECK(t.raw_activation[8 + j] == static_cast<float>(res.states[2].context.at(3, j)));
    }
    CHECK(effective_baseline_layer(c, 5) == 2);
}

TEST_CASE("capture rejects invalid positions", "[trace]") {
    auto m = Model<float>::initialized(trace_config(), 1);
    auto ids = ids_of(4, 1);
    std::vector<std::size_t> zero{0}, far{5};
    CHECK_THROWS_AS(capture(m, ids, zero), std::invalid_argument);
    CHECK_THROWS_AS(capture(m, ids, far), std::out_of_range);
}

TEST_CASE("trace file round trip", "[trace][io]") {
    auto c = trace_config();
    auto m = Model<float>::initialized(c, 2);
    TraceFile f{trace_header_for(c, 5), {}};
    CHECK(f.header.baseline_layer == 2);
    CHECK(round_trip(f).traces.empty());

    auto ids = ids_of(16, 4);
    std::vector<std::size_t> pos{1, 2, 8, 16};
    f.traces = capture(m, ids, pos, {5, 77});
    auto back = round_trip(f);
    CHECK(back.header == f.header);
    CHECK(back.traces == f.traces);

    std::stringstream ss;
    write_traces(ss, f);
    const auto bytes = ss.str();
    for (std::size_t cut : {std::size_t{3}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
        std::istringstream in(bytes.substr(0, cut));
        CHECK_THROWS(read_traces(in));
    }
    auto bad = bytes;
    bad[0] = 'X';
    std::istringstream in(bad);
    CHECK_THROWS_AS(read_traces(in), io::FormatError);
    auto badver = bytes;
    badver[4] = 9;
    std::istringstream in2(badver);
    CHECK_THROWS_AS(read_traces(in2), io::FormatError);
}
