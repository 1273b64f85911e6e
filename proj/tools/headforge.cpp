// headforge: train -> trace -> features -> cluster -> ablate/steer -> report.
// Exit codes: 0 success, 2 usage error, 1 runtime error.

#include "headforge/causal.hpp"
#include "headforge/clustering.hpp"
#include "headforge/config.hpp"
#include "headforge/features.hpp"
#include "headforge/pipeline.hpp"
#include "headforge/trace.hpp"
#include "headforge/trainer.hpp"
#include "manifest.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace headforge;
using headforge::cli::StageRecord;
using headforge::cli::update_manifest;

namespace {

std::vector<std::string> g_argv;

std::string parent_dir(const std::string& file) {
    const auto p = fs::path(file).parent_path();
    return p.empty() ? std::string(".") : p.string();
}

void ensure_parent(const std::string& file) {
    const auto p = fs::path(file).parent_path();
    if (!p.empty()) fs::create_directories(p);
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << std::setprecision(8);
    return out;
}

StageRecord stage(const std::string& name) {
    StageRecord r;
    r.stage = name;
    r.argv = g_argv;
    return r;
}

// ---- train ---------------------------------------------------------------------

struct TrainArgs {
    std::string config, out, corpus, format;
    std::vector<std::string> overrides;
    std::size_t log_every = 50;
};

int cmd_train(const TrainArgs& a) {
    auto kv = KeyValueConfig::load(a.config);
    for (const auto& o : a.overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) throw CLI::ValidationError("--set", "expected key=value, got '" + o + "'");
        kv.set(o.substr(0, eq), o.substr(eq + 1));
    }
    if (!a.corpus.empty()) kv.set("corpus", a.corpus);
    if (!a.format.empty()) kv.set("corpus_format", a.format);
    const auto mcfg = model_config_from(kv);
    const auto tcfg = train_config_from(kv);
    const auto corpus_path = kv.get_string("corpus", "");
    if (corpus_path.empty()) throw std::invalid_argument("no corpus given (config key 'corpus' or --corpus)");
    const auto corpus = ingest(corpus_path, parse_corpus_format(kv.get_string("corpus_format", "raw_bytes")), mcfg.vocab);

    fs::create_directories(a.out);
    const auto dir = fs::path(a.out);
    auto m_pls = open_out((dir / "metrics_pls.tsv").string());
    auto m_c2 = open_out((dir / "metrics_c2.tsv").string());
    write_metrics_header(m_pls, mcfg.layers);
    write_metrics_header(m_c2, mcfg.layers);
    std::cerr << "training on " << corpus.token_ids.size() << " tokens, " << tcfg.total_steps << " steps per model\n";
    auto pair = train_pair(mcfg, tcfg, corpus, [&](bool is_pls, const StepMetrics& m) {
        write_metrics_line(is_pls ? m_pls : m_c2, m);
        if (a.log_every && (m.step % a.log_every == 0 || m.step + 1 == tcfg.total_steps))
            std::cerr << (is_pls ? "pls" : "c2 ") << " step " << m.step << " loss " << m.loss << " lr " << m.lr
                      << " grad_norm " << m.grad_norm << "\n";
    });
    m_pls.close();
    m_c2.close();
    save_checkpoint((dir / "pls.hfck").string(), pair.pls);
    save_checkpoint((dir / "c2.hfck").string(), pair.control);
    {
        auto v = open_out((dir / "val_ce.tsv").string());
        v << "layer\tpls\tc2\n";
        for (std::size_t l = 0; l < pair.pls_val_ce.size(); ++l)
            v << l << '\t' << pair.pls_val_ce[l] << '\t' << pair.control_val_ce[l] << '\n';
    }
    {
        auto c = open_out((dir / "config.txt").string());
        c << kv.dump();
    }
    auto rec = stage("train");
    rec.config = kv.values();
    rec.seeds["seed"] = tcfg.seed;
    rec.seeds["sampler"] = tcfg.seed + 1;
    rec.inputs = {a.config, corpus_path};
    for (const char* f : {"pls.hfck", "c2.hfck", "metrics_pls.tsv", "metrics_c2.tsv", "val_ce.tsv", "config.txt"})
        rec.outputs.push_back((dir / f).string());
    update_manifest(a.out, rec);
    std::cout << "wrote " << (dir / "pls.hfck").string() << " and " << (dir / "c2.hfck").string() << "\n";
    return 0;
}

// ---- trace ---------------------------------------------------------------------

struct TraceArgs {
    std::string model, corpus, format = "raw_bytes", out, split = "val";
    TraceSampling sampling;
    double val_fraction = 0.05;
};

int cmd_trace(const TraceArgs& a) {
    const auto model = load_checkpoint<float>(a.model);
    const auto corpus = ingest(a.corpus, parse_corpus_format(a.format), model.config().vocab);
    auto [train, val] = corpus.split(a.val_fraction);
    std::span<const std::uint32_t> src = a.split == "val" ? val : a.split == "train" ? train : std::span<const std::uint32_t>(corpus.token_ids);
    TraceFile f{trace_header_for(model.config(), a.sampling.baseline_layer), capture_windows(model, src, a.sampling)};
    ensure_parent(a.out);
    write_traces(a.out, f);
    auto rec = stage("trace");
    rec.config = {{"windows", std::to_string(a.sampling.windows)},
                  {"window_len", std::to_string(a.sampling.window_len)},
                  {"baseline_layer", std::to_string(f.header.baseline_layer)},
                  {"split", a.split}};
    rec.inputs = {a.model, a.corpus};
    rec.outputs = {a.out};
    update_manifest(parent_dir(a.out), rec);
    std::cout << "captured " << f.traces.size() << " traces into " << a.out << "\n";
    return 0;
}

// ---- features ------------------------------------------------------------------

struct FeatureArgs {
    std::string tier = "t2", in, out, index, anchor = "5:2,5:3", entity = "5:4,5:5";
    std::size_t k = 5;
};

int cmd_features(const FeatureArgs& a) {
    const auto traces = read_traces(a.in);
    FeatureOptions opt;
    opt.k = a.k;
    opt.groups.anchor = parse_heads(a.anchor);
    opt.groups.entity = parse_heads(a.entity);
    const auto m = build_matrix(traces.traces, parse_tier(a.tier), opt);
    ensure_parent(a.out);
    write_features(a.out, m);
    auto rec = stage("features_" + a.tier);
    rec.config = {{"tier", a.tier}, {"k", std::to_string(a.k)}, {"anchor", a.anchor}, {"entity", a.entity}};
    rec.inputs = {a.in};
    rec.outputs = {a.out};
    if (!a.index.empty()) {
        auto idx = open_out(a.index);
        write_feature_index(idx, traces.traces);
        idx.close();
        rec.outputs.push_back(a.index);
    }
    update_manifest(parent_dir(a.out), rec);
    std::cout << "wrote " << m.rows << " x " << m.dim << " " << a.tier << " features to " << a.out << "\n";
    return 0;
}

// ---- cluster -------------------------------------------------------------------

struct ClusterArgs {
    std::string algo = "kmeans", in, out, preprocess = "auto";
    std::size_t k = 10, n_init = 10, pca = 30, min_cluster_size = 10, min_samples = 1, layers = 6;
    std::uint64_t seed = 0;
};

int cmd_cluster(const ClusterArgs& a) {
    const auto fm = read_features(a.in);
    const DataMatrix raw = to_matrix(fm);
    std::string pre = a.preprocess;
    if (pre == "auto") pre = a.algo == "hdbscan" ? "pca" : "none";
    DataMatrix x = raw;
    std::string pca_note;
    if (pre == "standardize" || pre == "pca") x = standardize(raw);
    if (pre == "pca") {
        const auto m = std::min<std::size_t>({a.pca, static_cast<std::size_t>(x.rows()), static_cast<std::size_t>(x.cols())});
        auto p = pca_fit_project(x, m);
        if (!p.model.warning.empty()) std::cerr << "warning: " << p.model.warning << "\n";
        pca_note = std::to_string(p.model.cumulative_explained());
        x = std::move(p.projected);
    }
    ClusterAssignment c;
    if (a.algo == "kmeans") {
        c = kmeans(x, KMeansOptions{a.k, a.seed, a.n_init, 300, 1e-6});
    } else {
        c = hdbscan(x, HdbscanOptions{a.min_cluster_size, a.min_samples});
    }
    fs::create_directories(a.out);
    const auto dir = fs::path(a.out);
    write_labels((dir / "labels.txt").string(), c.labels);

    // per-cluster size and depth profile
    const bool has_depth = fm.tier != Tier::kTier1 && fm.dim > 3 * a.layers - 1;
    std::map<int, std::vector<double>> depth;
    for (std::size_t i = 0; i < fm.rows; ++i)
        depth[c.labels[i]].push_back(has_depth ? static_cast<double>(fm.row(i)[3 * a.layers - 1]) : 0.0);
    {
        auto out = open_out((dir / "clusters.tsv").string());
        out << "cluster\tsize\tfraction";
        if (has_depth) out << "\tearly\tmiddle\tlate\tmean_k_star";
        out << '\n';
        for (const auto& [label, ks] : depth) {
            out << label << '\t' << ks.size() << '\t' << static_cast<double>(ks.size()) / static_cast<double>(fm.rows);
            if (has_depth) {
                const auto d = depth_distribution(ks);
                double mean = 0;
                for (double v : ks) mean += v;
                out << '\t' << d.early << '\t' << d.middle << '\t' << d.late << '\t' << mean / static_cast<double>(ks.size());
            }
            out << '\n';
        }
    }
    {
        // plot coordinates: top-2 principal axes of the standardised features
        auto out = open_out((dir / "pca2d.tsv").string());
        out << "row\tpc1\tpc2\tlabel\n";
        if (fm.rows >= 2 && fm.dim >= 2) {
            const auto p2 = pca_fit_project(standardize(raw), 2);
            for (std::size_t i = 0; i < fm.rows; ++i) {
                const auto r = static_cast<Eigen::Index>(i);
                out << i << '\t' << (p2.projected.cols() > 0 ? p2.projected(r, 0) : 0.0) << '\t'
                    << (p2.projected.cols() > 1 ? p2.projected(r, 1) : 0.0) << '\t' << c.labels[i] << '\n';
            }
        }
    }
    auto rec = stage("cluster_" + a.algo);
    rec.config = {{"algo", a.algo}, {"preprocess", pre}, {"params", c.params}};
    if (!pca_note.empty()) rec.config["pca_explained"] = pca_note;
    rec.seeds["kmeans"] = a.seed;
    rec.inputs = {a.in};
    for (const char* f : {"labels.txt", "clusters.tsv", "pca2d.tsv"}) rec.outputs.push_back((dir / f).string());
    update_manifest(a.out, rec);
    const auto noise = std::count(c.labels.begin(), c.labels.end(), -1);
    std::cout << c.algorithm << ": " << c.clusters << " clusters, " << noise << " noise of " << c.labels.size();
    if (a.algo == "kmeans") std::cout << ", inertia " << c.inertia;
    std::cout << "\n";
    return 0;
}

// ---- ari -----------------------------------------------------------------------

int cmd_ari(const std::string& a, const std::string& b) {
    const auto la = read_labels(a), lb = read_labels(b);
    std::cout << std::fixed << std::setprecision(6) << adjusted_rand_index(la, lb) << "\n";
    return 0;
}

// ---- ablate / steer -----------------------------------------------------------------

struct AblateArgs {
    std::string model, suite, heads = "5:4,5:5", out;
    double scale = 0.0;
};

int cmd_ablate(const AblateArgs& a) {
    const auto model = load_checkpoint<float>(a.model);
    const auto cases = load_suite(a.suite, model.config().vocab);
    InterventionSpec spec{parse_heads(a.heads), a.scale};
    const auto results = run_suite(model, cases, &spec);
    const auto st = suite_stats(results);
    std::ostringstream os;
    os << std::setprecision(8);
    os << "case\ttask\tp_baseline\tp_intervened\tdelta\tp_incorrect_baseline\tp_incorrect_intervened\n";
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto& r = results[i];
        os << i << '\t' << cases[i].task << '\t' << r.p_baseline << '\t' << r.p_intervened << '\t' << r.delta << '\t';
        if (r.p_incorrect_baseline) {
            os << *r.p_incorrect_baseline << '\t' << *r.p_incorrect_intervened;
        } else {
            os << "NA\tNA";
        }
        os << '\n';
    }
    os << "# n=" << st.n << "\tmean_delta_pct=" << 100.0 * st.mean << "\tsd_delta_pct=" << 100.0 * st.sd
       << "\theads=" << a.heads << "\tscale=" << a.scale << '\n';
    std::cout << os.str();
    if (!a.out.empty()) {
        ensure_parent(a.out);
        open_out(a.out) << os.str();
        auto rec = stage("ablate");
        rec.config = {{"heads", a.heads}, {"scale", std::to_string(a.scale)}};
        rec.inputs = {a.model, a.suite};
        rec.outputs = {a.out};
        update_manifest(parent_dir(a.out), rec);
    }
    return 0;
}

struct SteerArgs {
    std::string model, suite, heads = "5:4,5:5", grid = "0:1.5:0.25", out;
};

int cmd_steer(const SteerArgs& a) {
    const auto model = load_checkpoint<float>(a.model);
    const auto cases = load_suite(a.suite, model.config().vocab);
    const auto curve = steering_sweep(model, cases, parse_heads(a.heads), parse_grid(a.grid));
    std::ostringstream os;
    os << std::setprecision(8) << "scale\tmean_p_correct\n";
    for (const auto& p : curve.points) os << p.scale << '\t' << p.mean_p << '\n';
    os << "# baseline_mean_p=" << curve.baseline_mean_p << "\tcontrol_range=" << curve.control_range << '\n';
    std::cout << os.str();
    if (!a.out.empty()) {
        ensure_parent(a.out);
        open_out(a.out) << os.str();
        auto rec = stage("steer");
        rec.config = {{"heads", a.heads}, {"grid", a.grid}};
        rec.inputs = {a.model, a.suite};
        rec.outputs = {a.out};
        update_manifest(parent_dir(a.out), rec);
    }
    return 0;
}

// ---- report --------------------------------------------------------------------

struct ReportArgs {
    std::string dir, suite_dir, steer_suite = "capitalization", steer_heads = "5:4,5:5", grid = "0:1.5:0.25";
};

int cmd_report(const ReportArgs& a) {
    const auto dir = fs::path(a.dir);
    const auto pls_ckpt = (dir / "pls.hfck").string(), c2_ckpt = (dir / "c2.hfck").string();
    if (!fs::exists(pls_ckpt) || !fs::exists(c2_ckpt))
        throw std::runtime_error("report needs pls.hfck and c2.hfck in " + a.dir);
    const auto pls = load_checkpoint<float>(pls_ckpt);
    const auto c2 = load_checkpoint<float>(c2_ckpt);
    auto rec = stage("report");
    rec.inputs = {pls_ckpt, c2_ckpt};

    // Table 1: depth distribution by architecture
    const auto tp = dir / "traces_pls.bin", tc = dir / "traces_c2.bin";
    if (fs::exists(tp) && fs::exists(tc)) {
        const auto dp = depth_distribution(read_traces(tp.string()).traces);
        const auto dc = depth_distribution(read_traces(tc.string()).traces);
        std::ostringstream os;
        os << std::setprecision(6) << "depth\tpls\tc2\n"
           << "early(0-1)\t" << dp.early << '\t' << dc.early << '\n'
           << "middle(2-4)\t" << dp.middle << '\t' << dc.middle << '\n'
           << "late(5+)\t" << dp.late << '\t' << dc.late << '\n'
           << "traces\t" << dp.count << '\t' << dc.count << '\n';
        std::cout << "# depth distribution\n" << os.str();
        open_out((dir / "depth_table.tsv").string()) << os.str();
        rec.inputs.push_back(tp.string());
        rec.inputs.push_back(tc.string());
        rec.outputs.push_back((dir / "depth_table.tsv").string());
    } else {
        std::cerr << "note: traces_pls.bin / traces_c2.bin not found; skipping depth table\n";
    }

    // Table 2: task x head-group effect matrix, plus per-case winograd deltas
    const std::string sdir = a.suite_dir.empty() ? (dir / "suites").string() : a.suite_dir;
    std::vector<NamedSuite> suites;
    if (fs::is_directory(sdir)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(sdir))
            if (e.path().extension() == ".tsv") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            suites.push_back({f.stem().string(), load_suite(f.string(), pls.config().vocab)});
            rec.inputs.push_back(f.string());
        }
    }
    if (!suites.empty()) {
        auto groups = default_head_groups();
        std::ostringstream os;
        os << std::setprecision(6) << "model\ttask\tgroup\tmean_delta_pct\tsd_delta_pct\n";
        std::ostringstream diag;
        for (const auto* m : {&pls, &c2}) {
            const auto e = effect_matrix(*m, suites, groups);
            const char* name = m == &pls ? "pls" : "c2";
            for (std::size_t t = 0; t < e.tasks.size(); ++t)
                for (std::size_t g = 0; g < e.groups.size(); ++g)
                    os << name << '\t' << e.tasks[t] << '\t' << e.groups[g] << '\t' << 100.0 * e.mean_delta[t][g]
                       << '\t' << 100.0 * e.sd_delta[t][g] << '\n';
            diag << "# " << name << " diagonality=" << e.diagonality << '\n';
        }
        std::cout << "# effect matrix\n" << os.str() << diag.str();
        open_out((dir / "effect_matrix.tsv").string()) << os.str() << diag.str();
        rec.outputs.push_back((dir / "effect_matrix.tsv").string());

        for (const auto& s : suites) {
            if (s.name != "winograd" || s.cases.empty()) continue;
            InterventionSpec spec{parse_heads("5:4,5:5"), 0.0};
            const auto rp = run_suite(pls, s.cases, &spec), rc = run_suite(c2, s.cases, &spec);
            std::ostringstream w;
            w << std::setprecision(6) << "case\tpls_delta_pct\tc2_delta_pct\n";
            for (std::size_t i = 0; i < rp.size(); ++i)
                w << i << '\t' << 100.0 * rp[i].delta << '\t' << 100.0 * rc[i].delta << '\n';
            const auto sp = suite_stats(rp), sc = suite_stats(rc);
            w << "# sd_pct\t" << 100.0 * sp.sd << '\t' << 100.0 * sc.sd << '\n';
            std::cout << "# winograd deltas (entity ablation)\n" << w.str();
            open_out((dir / "winograd_deltas.tsv").string()) << w.str();
            rec.outputs.push_back((dir / "winograd_deltas.tsv").string());
        }
        for (const auto& s : suites) {
            if (s.name != a.steer_suite || s.cases.empty()) continue;
            const auto heads = parse_heads(a.steer_heads);
            const auto grid = parse_grid(a.grid);
            const auto cp = steering_sweep(pls, s.cases, heads, grid), cc = steering_sweep(c2, s.cases, heads, grid);
            std::ostringstream st;
            st << std::setprecision(6) << "scale\tpls_mean_p\tc2_mean_p\n";
            for (std::size_t i = 0; i < cp.points.size(); ++i)
                st << cp.points[i].scale << '\t' << cp.points[i].mean_p << '\t' << cc.points[i].mean_p << '\n';
            st << "# control_range\t" << cp.control_range << '\t' << cc.control_range << '\n';
            std::cout << "# steering (" << s.name << ", heads " << a.steer_heads << ")\n" << st.str();
            open_out((dir / "steering.tsv").string()) << st.str();
            rec.outputs.push_back((dir / "steering.tsv").string());
        }
    } else {
        std::cerr << "note: no suites found in " << sdir << "; skipping effect matrix\n";
    }
    if (!rec.outputs.empty()) update_manifest(a.dir, rec);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    g_argv.assign(argv, argv + argc);
    CLI::App app{"headforge: dual-stream transformer interpretability workbench"};
    app.require_subcommand(1);

    TrainArgs train;
    auto* t = app.add_subcommand("train", "Train the supervised model and its control");
    t->add_option("--config", train.config, "key=value config file")->required()->check(CLI::ExistingFile);
    t->add_option("--out", train.out, "Output directory")->required();
    t->add_option("--corpus", train.corpus, "Corpus path (overrides config)");
    t->add_option("--format", train.format, "Corpus format")->check(CLI::IsMember({"raw_bytes", "tokens_u32"}));
    t->add_option("--set", train.overrides, "Config override key=value (repeatable)");
    t->add_option("--log-every", train.log_every, "Progress interval in steps (0 = quiet)");

    TraceArgs trace;
    auto* tr = app.add_subcommand("trace", "Capture prediction traces");
    tr->add_option("--model", trace.model, "Checkpoint")->required()->check(CLI::ExistingFile);
    tr->add_option("--corpus", trace.corpus, "Corpus to sample windows from")->required()->check(CLI::ExistingFile);
    tr->add_option("--format", trace.format, "Corpus format")->check(CLI::IsMember({"raw_bytes", "tokens_u32"}));
    tr->add_option("--out", trace.out, "Trace file")->required();
    tr->add_option("--windows", trace.sampling.windows, "Number of windows");
    tr->add_option("--window-len", trace.sampling.window_len, "Tokens per window");
    tr->add_option("--baseline-layer", trace.sampling.baseline_layer, "Layer for raw activations");
    tr->add_option("--split", trace.split, "Corpus region")->check(CLI::IsMember({"val", "train", "all"}));
    tr->add_option("--val-fraction", trace.val_fraction, "Validation share at the end of the corpus");

    FeatureArgs feat;
    auto* f = app.add_subcommand("features", "Extract feature matrices from traces");
    f->add_option("--tier", feat.tier, "t1, t2, t2p or topk")->check(CLI::IsMember({"t1", "t2", "t2p", "topk"}));
    f->add_option("--in", feat.in, "Trace file")->required()->check(CLI::ExistingFile);
    f->add_option("--out", feat.out, "Feature matrix file")->required();
    f->add_option("--index", feat.index, "Row index TSV");
    f->add_option("--k", feat.k, "Top-k width")->check(CLI::PositiveNumber);
    f->add_option("--anchor", feat.anchor, "Anchor heads layer:head,...");
    f->add_option("--entity", feat.entity, "Entity heads layer:head,...");

    ClusterArgs clus;
    auto* c = app.add_subcommand("cluster", "Cluster a feature matrix");
    c->add_option("--algo", clus.algo, "kmeans or hdbscan")->check(CLI::IsMember({"kmeans", "hdbscan"}));
    c->add_option("--in", clus.in, "Feature matrix")->required()->check(CLI::ExistingFile);
    c->add_option("--out", clus.out, "Output directory")->required();
    c->add_option("--preprocess", clus.preprocess, "auto, none, standardize or pca")
        ->check(CLI::IsMember({"auto", "none", "standardize", "pca"}));
    c->add_option("--pca", clus.pca, "PCA components")->check(CLI::PositiveNumber);
    c->add_option("--k", clus.k, "k-means clusters")->check(CLI::PositiveNumber);
    c->add_option("--n-init", clus.n_init, "k-means restarts")->check(CLI::PositiveNumber);
    c->add_option("--seed", clus.seed, "k-means seed");
    c->add_option("--min-cluster-size", clus.min_cluster_size, "HDBSCAN min_cluster_size");
    c->add_option("--min-samples", clus.min_samples, "HDBSCAN min_samples");
    c->add_option("--layers", clus.layers, "Model depth (locates k* in the feature layout)");

    std::string ari_a, ari_b;
    auto* ar = app.add_subcommand("ari", "Adjusted Rand index of two label files");
    ar->add_option("--a", ari_a, "Labels")->required()->check(CLI::ExistingFile);
    ar->add_option("--b", ari_b, "Labels")->required()->check(CLI::ExistingFile);

    AblateArgs abl;
    auto* ab = app.add_subcommand("ablate", "Per-case deltas under a head intervention");
    ab->add_option("--model", abl.model, "Checkpoint")->required()->check(CLI::ExistingFile);
    ab->add_option("--suite", abl.suite, "Task suite")->required()->check(CLI::ExistingFile);
    ab->add_option("--heads", abl.heads, "layer:head,...");
    ab->add_option("--scale", abl.scale, "Scale factor (0 = ablation)")->check(CLI::NonNegativeNumber);
    ab->add_option("--out", abl.out, "Also write the table here");

    SteerArgs ste;
    auto* st = app.add_subcommand("steer", "Steering sweep over head scales");
    st->add_option("--model", ste.model, "Checkpoint")->required()->check(CLI::ExistingFile);
    st->add_option("--suite", ste.suite, "Task suite")->required()->check(CLI::ExistingFile);
    st->add_option("--heads", ste.heads, "layer:head,...");
    st->add_option("--grid", ste.grid, "start:stop:step");
    st->add_option("--out", ste.out, "Also write the curve here");

    ReportArgs rep;
    auto* re = app.add_subcommand("report", "Depth table, effect matrix and steering curves for a run");
    re->add_option("--dir", rep.dir, "Run directory")->required()->check(CLI::ExistingDirectory);
    re->add_option("--suite-dir", rep.suite_dir, "Directory of *.tsv suites (default <dir>/suites)");
    re->add_option("--steer-suite", rep.steer_suite, "Suite used for the steering curve");
    re->add_option("--steer-heads", rep.steer_heads, "Heads scaled in the steering curve");
    re->add_option("--grid", rep.grid, "Steering grid start:stop:step");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    try {
        if (*t) return cmd_train(train);
        if (*tr) return cmd_trace(trace);
        if (*f) return cmd_features(feat);
        if (*c) return cmd_cluster(clus);
        if (*ar) return cmd_ari(ari_a, ari_b);
        if (*ab) return cmd_ablate(abl);
        if (*st) return cmd_steer(ste);
        if (*re) return cmd_report(rep);
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
