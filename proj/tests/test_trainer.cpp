#include <catch2/catch_amalgamated.hpp>

#include "headforge/trainer.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace headforge;
using Catch::Approx;

namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.layers = 2;
    c.heads = 2;
    c.hidden = 8;
    c.ffn = 16;
    c.vocab = 20;
    c.max_seq_len = 8;
    c.dropout = 0.0;
    return c;
}

TrainConfig small_train() {
    TrainConfig t;
    t.lr_peak = 1e-2;
    t.batch_size = 2;
    t.seq_len = 8;
    t.warmup_steps = 2;
    t.total_steps = 4;
    t.seed = 7;
    t.eval_batches = 2;
    return t;
}

std::string temp_file(const std::string& name, const std::string& bytes) {
    const auto path = (std::filesystem::temp_directory_path() / ("hf_trainer_" + name)).string();
    std::ofstream(path, std::ios::binary) << bytes;
    return path;
}

Corpus cyclic_corpus(std::size_t n, std::size_t vocab) {
    Corpus c;
    for (std::size_t i = 0; i < n; ++i) c.token_ids.push_back(static_cast<std::uint32_t>((i * 7 + i / 5) % vocab));
    return c;
}

std::string checkpoint_bytes(const Model<float>& m) {
    std::ostringstream os;
    save_checkpoint(os, m);
    return os.str();
}

}  // namespace

TEST_CASE("learning rate schedule", "[trainer]") {
    TrainConfig c;
    c.lr_peak = 3e-4;
    c.warmup_steps = 1000;
    c.total_steps = 11000;
    CHECK(lr_at(c, 0) == 0.0);
    CHECK(lr_at(c, 1000) == Approx(3e-4).epsilon(1e-12));
    CHECK(lr_at(c, 500) == Approx(1.5e-4));
    CHECK(lr_at(c, 6000) == Approx(1.5e-4).epsilon(1e-12));
    CHECK(lr_at(c, 11000) == 0.0);
    CHECK(std::abs(lr_at(c, 999) - lr_at(c, 1000)) < 1e-6);
    CHECK(std::abs(lr_at(c, 1001) - lr_at(c, 1000)) < 1e-9);
    for (std::size_t s = 1000; s < 11000; s += 97) CHECK(lr_at(c, s + 1) <= lr_at(c, s));
}

TEST_CASE("train config validation and parsing", "[trainer]") {
    std::istringstream in("lr_peak = 0.001\nwarmup_steps=5\ntotal_steps=10\nbatch_size=4\nseq_len=16\n");
    auto t = train_config_from(KeyValueConfig::parse(in));
    CHECK(t.lr_peak == 0.001);
    CHECK(t.warmup_steps == 5);
    CHECK(t.batch_size == 4);
    std::istringstream bad("warmup_steps=20\ntotal_steps=10\n");
    CHECK_THROWS_AS(train_config_from(KeyValueConfig::parse(bad)), std::invalid_argument);
}

TEST_CASE("global norm clipping", "[trainer]") {
    Tensor<double> a({2}, {1.2, 0.0}, true), b({1, 2}, {0.0, 1.6}, true);
    a.ensure_grad();
    b.ensure_grad();
    a.grad()[0] = 1.2;
    b.grad()[1] = 1.6;
    std::vector<Tensor<double>> ps{a, b};
    const double norm = clip_grad_norm(ps, 1.0);
    CHECK(norm == Approx(2.0));
    CHECK(a.grad()[0] == Approx(0.6));
    CHECK(b.grad()[1] == Approx(0.8));
    CHECK(clip_grad_norm(ps, 1.0) <= 1.0 + 1e-6);

    // below the threshold nothing changes
    a.grad()[0] = 0.3;
    b.grad()[1] = 0.4;
    CHECK(clip_grad_norm(ps, 1.0) == Approx(0.5));
    CHECK(a.grad()[0] == 0.3);
}

TEST_CASE("clipping never increases the norm", "[trainer][property]") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 2.0);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor<double> a({3, 4}, true);
        a.ensure_grad();
        for (auto& g : a.grad()) g = n(rng);
        std::vector<Tensor<double>> ps{a};
        const double before = clip_grad_norm(ps, 1e9);
        const double pre = clip_grad_norm(ps, 1.0);
        CHECK(pre == Approx(before));
        const double after = clip_grad_norm(ps, 1e9);
        CHECK(after <= std::min(before, 1.0) + 1e-6);
    }
}

TEST_CASE("AdamW with zero grads and no decay leaves weights unchanged", "[trainer]") {
    Tensor<double> w({2, 2}, {1, 2, 3, 4}, true);
    w.ensure_grad();
    w.zero_grad();
    AdamW<double> opt({w}, 0.9, 0.999, 1e-8);
    opt.step(1e-2, 0.0);
    opt.step(1e-2, 0.0);
    CHECK(w[0] == 1.0);
    CHECK(w[3] == 4.0);
}

TEST_CASE("AdamW decays matrices only", "[trainer]") {
    Tensor<double> w({1, 1}, {2.0}, true), b({1}, {2.0}, true);
    w.ensure_grad();
    b.ensure_grad();
    AdamW<double> opt({w, b}, 0.9, 0.999, 1e-8);
    opt.step(0.1, 0.5);
    CHECK(w[0] == Approx(2.0 * (1.0 - 0.05)));
    CHECK(b[0] == 2.0);
}

TEST_CASE("AdamW first step moves by lr against the gradient sign", "[trainer]") {
    Tensor<double> w({1}, {0.5}, true);
    w.ensure_grad();
    w.grad()[0] = 3.0;
    AdamW<double> opt({w}, 0.9, 0.999, 1e-8);
    opt.step(0.01, 0.0);
    CHECK(w[0] == Approx(0.49).epsilon(1e-6));
}

TEST_CASE("one step on a one-sample dataset reduces its loss", "[trainer]") {
    auto c = small_config();
    auto model = Model<float>::initialized(c, 11);
    Batch b;
    b.seq_len = 8;
    for (std::uint32_t i = 0; i < 8; ++i) {
        b.inputs.push_back((i * 3) % 20);
        b.targets.push_back(((i + 1) * 3) % 20);
    }
    auto loss_of = [&] {
        Graph<float> g(false);
        auto res = model.forward(g, b.inputs, b.seq_len);
        return static_cast<double>(model.pls_loss(g, res.layer_logits, b.targets).total.item());
    };
    auto t = small_train();
    t.warmup_steps = 0;
    const double before = loss_of();
    Trainer<float> trainer(model, t);
    auto m = trainer.train_step(b);
    CHECK(m.loss == Approx(before).epsilon(1e-5));
    CHECK(m.layer_ce.size() == 2);
    CHECK(m.lr == Approx(1e-2));
    CHECK(loss_of() < before);
}

TEST_CASE("ingest formats", "[trainer]") {
    auto raw = ingest(temp_file("ab.bin", "AB"), CorpusFormat::kRawBytes, 256);
    CHECK(raw.token_ids == std::vector<std::uint32_t>{65, 66});
    CHECK_THROWS_AS(ingest(temp_file("ab2.bin", "AB"), CorpusFormat::kRawBytes, 100), std::invalid_argument);

    std::string bytes(8, '\0');
    const std::uint32_t ids[2] = {1, 2};
    std::memcpy(bytes.data(), ids, 8);
    auto u32 = ingest(temp_file("u32.bin", bytes), CorpusFormat::kTokensU32, 20);
    CHECK(u32.token_ids == std::vector<std::uint32_t>{1, 2});

    const std::uint32_t bad[2] = {1, 25};
    std::memcpy(bytes.data(), bad, 8);
    try {
        ingest(temp_file("bad.bin", bytes), CorpusFormat::kTokensU32, 20);
        FAIL("expected an error");
    } catch (const std::out_of_range& e) {
        CHECK(std::string(e.what()).find("byte offset 4") != std::string::npos);
    }
    CHECK_THROWS(ingest(temp_file("odd.bin", "abc"), CorpusFormat::kTokensU32, 20));
    CHECK_THROWS_AS(parse_corpus_format("utf16"), std::invalid_argument);

    auto empty = ingest(temp_file("empty.bin", ""), CorpusFormat::kRawBytes, 256);
    CHECK(empty.token_ids.empty());
    CHECK_THROWS_AS(train_pair(small_config(), small_train(), empty), std::invalid_argument);
}

TEST_CASE("corpus split keeps the final share for validation", "[trainer]") {
    auto c = cyclic_corpus(100, 20);
    auto [tr, va] = c.split(0.05);
    CHECK(tr.size() == 95);
    CHECK(va.size() == 5);
    CHECK(va.front() == c.token_ids[95]);
}

TEST_CASE("batch sampler is deterministic and shifts targets", "[trainer]") {
    auto c = cyclic_corpus(200, 20);
    BatchSampler a(c.token_ids, 3, 8, 5), b(c.token_ids, 3, 8, 5);
    for (int i = 0; i < 4; ++i) {
        auto x = a.next(), y = b.next();
        CHECK(x.inputs == y.inputs);
        CHECK(x.targets == y.targets);
        REQUIRE(x.inputs.size() == 24);
        for (std::size_t r = 0; r < 3; ++r)
            for (std::size_t t = 0; t + 1 < 8; ++t)
                CHECK(static_cast<std::int64_t>(x.inputs[r * 8 + t + 1]) == x.targets[r * 8 + t]);
    }
    std::vector<std::uint32_t> tiny(5);
    CHECK_THROWS_AS(BatchSampler(tiny, 1, 8, 0), std::invalid_argument);
}

TEST_CASE("zero-step pair is bit-identical", "[trainer]") {
    auto t = small_train();
    t.warmup_steps = 0;
    t.total_steps = 0;
    auto pair = train_pair(small_config(), t, cyclic_corpus(400, 20));
    CHECK(pair.pls.config().pls_enabled);
    CHECK_FALSE(pair.control.config().pls_enabled);
    auto a = pair.pls.params().named();
    auto b = pair.control.params().named();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].first == b[i].first);
        auto da = std::as_const(a[i].second).data();
        auto db = std::as_const(b[i].second).data();
        CHECK(std::memcmp(da.data(), db.data(), da.size_bytes()) == 0);
    }
}

TEST_CASE("training is deterministic under a seed", "[trainer]") {
    auto cfg = small_config();
    cfg.dropout = 0.1;
    auto corpus = cyclic_corpus(400, 20);
    std::vector<StepMetrics> log;
    auto p1 = train_pair(cfg, small_train(), corpus, [&](bool, const StepMetrics& m) { log.push_back(m); });
    auto p2 = train_pair(cfg, small_train(), corpus);
    CHECK(log.size() == 8);
    CHECK(checkpoint_bytes(p1.pls) == checkpoint_bytes(p2.pls));
    CHECK(checkpoint_bytes(p1.control) == checkpoint_bytes(p2.control));
    CHECK(checkpoint_bytes(p1.pls) != checkpoint_bytes(p1.control));
    CHECK(p1.pls_val_ce == p2.pls_val_ce);
    CHECK(p1.pls_val_ce.size() == 2);

    std::ostringstream os;
    write_metrics_header(os, 2);
    write_metrics_line(os, log.front());
    const auto text = os.str();
    CHECK(text.rfind("step\tloss\tce_0\tce_1\tlr\tgrad_norm\n", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\t') == 10);
}

TEST_CASE("non-finite loss aborts with the step number", "[trainer]") {
    auto c = small_config();
    auto model = Model<float>::initialized(c, 1);
    for (auto& v : model.params().tok_emb.data()) v = std::numeric_limits<float>::quiet_NaN();
    Batch b;
    b.seq_len = 8;
    b.inputs.assign(8, 1);
    b.targets.assign(8, 2);
    Trainer<float> trainer(model, small_train());
    CHECK_THROWS_WITH(trainer.train_step(b), Catch::Matchers::ContainsSubstring("step 0"));
}
