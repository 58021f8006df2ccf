// End-to-end acceptance checks. Each test prints one
//   [ACCEPTANCE] <name>: PASS|FAIL
// line so a log scan shows exactly which guarantees hold.

#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "denserec/checkpoint.hpp"
#include "denserec/data.hpp"
#include "denserec/eval.hpp"
#include "denserec/gradcheck.hpp"
#include "denserec/model.hpp"
#include "denserec/synthetic.hpp"
#include "denserec/training.hpp"
#include "testutil.hpp"

using namespace denserec;

namespace {

struct Announcer {
    const char* name;
    bool ok = false;
    explicit Announcer(const char* n) : name(n) {}
    ~Announcer() {
        std::printf("[ACCEPTANCE] %s: %s\n", name, ok ? "PASS" : "FAIL");
        std::fflush(stdout);
    }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Pipeline {
    CatalogIndex catalog;
    std::vector<SequenceExample> train_examples;
    std::vector<SequenceExample> test_examples;
    ContentEmbeddingStore store;
};

Pipeline build_pipeline(const SyntheticSpec& spec, int max_len) {
    SyntheticData data = generate_synthetic(spec);
    TemporalSplit split = temporal_split(data.events, spec.train_frac, 0.0);
    Pipeline p;
    p.catalog = CatalogIndex::build(split);
    p.train_examples = build_sequences(split.train, p.catalog, max_len, Split::train).examples;
    p.test_examples = build_sequences(split.test, p.catalog, max_len, Split::test).examples;
    ContentEmbeddingStore store(data.content_dim);
    for (const auto& [id, vec] : data.contents) {
        const int idx = p.catalog.lookup(id);
        if (idx >= 0) store.set(idx, vec);
    }
    p.store = store;
    return p;
}

ContentEmbeddingStore random_store(int num_items, int d_c, std::uint64_t seed) {
    ContentEmbeddingStore store(d_c);
    RngStream rng(seed, 77);
    for (int i = 0; i < num_items; ++i) {
        std::vector<double> v(static_cast<std::size_t>(d_c));
        for (auto& x : v) x = rng.next_uniform() * 2.0 - 1.0;
        store.set(i, v);
    }
    return store;
}

bool tensors_identical(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

int run_cli(const std::string& args) {
    const char* bin = std::getenv("DENSEREC_BIN");
    REQUIRE(bin != nullptr);
    const std::string cmd = std::string(bin) + " " + args + " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    if (rc == -1) return -1;
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -2;
}

}  // namespace

TEST_CASE("gradient correctness across seeds", "[acceptance][grad]") {
    Announcer announce("gradient-correctness");
    const auto t0 = std::chrono::steady_clock::now();

    ModelConfig cfg;
    cfg.d = 8;
    cfg.d_c = 6;
    cfg.num_blocks = 1;
    cfg.num_heads = 2;
    cfg.max_len = 5;
    cfg.dropout_rate = 0.0;  // dropout off: the loss must be a fixed function of the weights
    cfg.num_negatives = 3;
    const int vocab = 9;

    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        ModelState state = ModelState::init(cfg, vocab, seed);
        ContentEmbeddingStore store = random_store(vocab, cfg.d_c, seed + 100);

        RngStream r(seed, 201);
        const int len = 3 + int(r.next_int(3));
        std::vector<int> items(static_cast<std::size_t>(len));
        for (auto& it : items) it = int(r.next_int(std::uint64_t(vocab)));
        const int target = int(r.next_int(std::uint64_t(vocab)));
        std::vector<int> negatives = sample_negatives(target, vocab, cfg.num_negatives, r);

        // the path mask is drawn once and then held fixed for the check
        PathMask input_mask = sample_path_mask(len, 0.5, r);
        PathMask target_mask = sample_path_mask(1, 0.5, r);
        PathMask neg_mask = sample_path_mask(cfg.num_negatives, 0.5, r);

        auto loss_fn = [&](bool with_grad) {
            Tape tape;
            RngStream no_drop(0, 0);
            NodeId h = encode_sequence(tape, items, input_mask, state, store, /*training=*/false, no_drop);
            NodeId t = resolve_embedding_rows(tape, {target}, target_mask, state, store);
            NodeId n = resolve_embedding_rows(tape, negatives, neg_mask, state, store);
            NodeId loss = compute_loss(tape, h, t, n);
            if (with_grad) tape.backward(loss);
            return tape.value(loss)[0];
        };

        std::vector<Parameter*> params;
        state.for_each_parameter([&](Parameter& p) { params.push_back(&p); });
        RngStream coord_rng(seed, 202);
        GradCheckOptions opts;
        opts.max_coords_per_tensor = 8;
        const double err = finite_difference_check(loss_fn, params, coord_rng, opts);
        worst = std::max(worst, err);
        INFO("seed " << seed << " relative error " << err);
        REQUIRE(err < 1e-4);
    }
    INFO("worst relative error " << worst);
    REQUIRE(seconds_since(t0) < 30.0);
    announce.ok = true;
}

TEST_CASE("p_dense=0 training is indistinguishable from the ID-only model", "[acceptance][equiv]") {
    Announcer announce("baseline-equivalence");

    SyntheticSpec spec;
    spec.num_items = 500;
    spec.num_users = 800;
    spec.num_clusters = 10;
    spec.cold_fraction = 0.2;
    spec.content_dim = 12;
    spec.events_per_user = 7;
    spec.train_frac = 0.7;
    spec.seed = 29;
    Pipeline p = build_pipeline(spec, 10);

    ModelConfig dual_cfg;
    dual_cfg.d = 32;
    dual_cfg.d_c = spec.content_dim;
    dual_cfg.num_blocks = 2;
    dual_cfg.num_heads = 2;
    dual_cfg.max_len = 10;
    dual_cfg.dropout_rate = 0.5;
    dual_cfg.num_negatives = 16;
    dual_cfg.p_dense = 0.0;
    ModelConfig id_cfg = dual_cfg;
    id_cfg.mode = Mode::id_only;
    id_cfg.d_c = 0;

    TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 128;
    tc.seed = 31;

    ModelState dual = ModelState::init(dual_cfg, p.catalog.num_train_items, 31);
    ModelState id_only = ModelState::init(id_cfg, p.catalog.num_train_items, 31);
    TrainReport dual_report = train(dual, p.train_examples, p.store, tc);
    TrainReport id_report = train(id_only, p.train_examples, p.store, tc);

    for (std::size_t e = 0; e < dual_report.epochs.size(); ++e) {
        INFO("epoch " << e << ": " << dual_report.epochs[e].mean_loss << " vs " << id_report.epochs[e].mean_loss);
        REQUIRE(std::abs(dual_report.epochs[e].mean_loss - id_report.epochs[e].mean_loss) <= 1e-6);
    }

    // both models must retrieve identical ranked lists over the shared vocabulary
    CandidateMatrix cand_dual = assemble_candidates(p.catalog, dual, p.store, Mode::id_only);
    CandidateMatrix cand_id = assemble_candidates(p.catalog, id_only, p.store, Mode::id_only);
    REQUIRE(cand_dual.items == cand_id.items);

    int compared = 0;
    for (const SequenceExample& ex : p.test_examples) {
        std::optional<Tensor> ha = encode_test_sequence(ex.input, dual, p.store, Mode::id_only);
        std::optional<Tensor> hb = encode_test_sequence(ex.input, id_only, p.store, Mode::id_only);
        REQUIRE(ha.has_value() == hb.has_value());
        if (!ha) continue;
        const std::vector<int> ta = topk(score_items(*ha, cand_dual.embeddings), 10);
        const std::vector<int> tb = topk(score_items(*hb, cand_id.embeddings), 10);
        REQUIRE(ta == tb);
        ++compared;
    }
    REQUIRE(compared > 100);
    announce.ok = true;
}

TEST_CASE("extreme path probabilities leave the unused parameters bitwise intact", "[acceptance][isolation]") {
    Announcer announce("path-isolation");

    SyntheticSpec spec;
    spec.num_items = 100;
    spec.num_users = 300;
    spec.num_clusters = 10;
    spec.cold_fraction = 0.2;
    spec.content_dim = 8;
    spec.events_per_user = 7;
    spec.train_frac = 0.7;
    spec.seed = 43;
    Pipeline p = build_pipeline(spec, 10);

    ModelConfig cfg;
    cfg.d = 16;
    cfg.d_c = spec.content_dim;
    cfg.num_blocks = 2;
    cfg.num_heads = 2;
    cfg.max_len = 10;
    cfg.dropout_rate = 0.5;
    cfg.num_negatives = 16;

    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 64;
    tc.seed = 47;

    {
        ModelConfig all_dense = cfg;
        all_dense.p_dense = 1.0;
        ModelState state = ModelState::init(all_dense, p.catalog.num_train_items, 51);
        const Tensor id_rows_before = state.item_emb.value;
        const Tensor proj_before = state.projection->w.value;
        train(state, p.train_examples, p.store, tc);
        REQUIRE(tensors_identical(id_rows_before, state.item_emb.value));  // includes the zero padding row
        REQUIRE_FALSE(tensors_identical(proj_before, state.projection->w.value));
    }
    {
        ModelConfig all_id = cfg;
        all_id.p_dense = 0.0;
        ModelState state = ModelState::init(all_id, p.catalog.num_train_items, 51);
        const Tensor w_before = state.projection->w.value;
        const Tensor b_before = state.projection->b.value;
        const Tensor id_rows_before = state.item_emb.value;
        train(state, p.train_examples, p.store, tc);
        REQUIRE(tensors_identical(w_before, state.projection->w.value));
        REQUIRE(tensors_identical(b_before, state.projection->b.value));
        REQUIRE_FALSE(tensors_identical(id_rows_before, state.item_emb.value));
    }
    announce.ok = true;
}

namespace {

// The shared desk-scale replication fixture: 200 items in 10 clusters, a
// quarter of each cluster held out cold, 5000 users walking a sticky
// cluster chain, content vectors = cluster centroid + small noise.
SyntheticSpec coldstart_spec() {
    SyntheticSpec spec;
    spec.num_items = 200;
    spec.num_users = 5000;
    spec.num_clusters = 10;
    spec.cold_fraction = 0.25;
    spec.noise = 0.1;
    spec.concentration = 0.2;
    spec.content_dim = 16;
    spec.events_per_user = 7;
    spec.train_frac = 0.7;
    spec.seed = 11;
    return spec;
}

ModelConfig coldstart_model(int d_c) {
    ModelConfig cfg;  // reference hyperparameters, embedding width scaled to 32
    cfg.d = 32;
    cfg.d_c = d_c;
    cfg.num_blocks = 3;
    cfg.num_heads = 2;
    cfg.max_len = 30;
    cfg.dropout_rate = 0.5;
    cfg.num_negatives = 64;
    cfg.p_dense = 0.5;
    return cfg;
}

TrainConfig coldstart_training() {
    TrainConfig tc;  // epochs 20, batch 512, lr 1e-3
    tc.seed = 11;
    return tc;
}

}  // namespace

TEST_CASE("content projection lifts cold-start retrieval", "[acceptance][coldstart]") {
    Announcer announce("synthetic-cold-start-lift");
    const auto t0 = std::chrono::steady_clock::now();

    Pipeline p = build_pipeline(coldstart_spec(), 30);
    REQUIRE(p.catalog.num_items() == 200);
    REQUIRE(p.catalog.num_cold_items() == 50);  // 25% of every cluster

    const TrainConfig tc = coldstart_training();

    ModelConfig dual_cfg = coldstart_model(coldstart_spec().content_dim);
    ModelState dual = ModelState::init(dual_cfg, p.catalog.num_train_items, tc.seed);
    train(dual, p.train_examples, p.store, tc);
    CandidateMatrix dual_cand = assemble_candidates(p.catalog, dual, p.store, Mode::denserec);
    const EvalReport dual_report = hit_rate_at_k(p.test_examples, dual, p.store, dual_cand, 10, 1);

    ModelConfig id_cfg = coldstart_model(0);
    id_cfg.mode = Mode::id_only;
    id_cfg.p_dense = 0.0;
    ModelState id_only = ModelState::init(id_cfg, p.catalog.num_train_items, tc.seed);
    train(id_only, p.train_examples, p.store, tc);
    CandidateMatrix id_cand = assemble_candidates(p.catalog, id_only, p.store, Mode::id_only);
    const EvalReport id_report = hit_rate_at_k(p.test_examples, id_only, p.store, id_cand, 10, 1);

    INFO("dual overall " << dual_report.hr() << ", cold " << dual_report.hr_cold());
    INFO("id-only overall " << id_report.hr() << ", cold " << id_report.hr_cold());

    // an ID-only model cannot even rank a cold item: exactly zero, structurally
    REQUIRE(id_report.cold_hits == 0);
    REQUIRE(id_report.hr_cold() == 0.0);
    REQUIRE(id_report.structural_misses == id_report.cold_total);
    REQUIRE(id_report.cold_total > 0);

    // the dense path clears 3x the random-ranking baseline k/n = 10/200
    REQUIRE(dual_report.hr_cold() >= 0.15);
    REQUIRE(dual_report.hr() > id_report.hr());

    REQUIRE(seconds_since(t0) < 300.0);
    announce.ok = true;
}

TEST_CASE("all-dense training underperforms the interior of the mixing grid", "[acceptance][sweep]") {
    Announcer announce("sweep-shape");
    const auto t0 = std::chrono::steady_clock::now();

    Pipeline p = build_pipeline(coldstart_spec(), 30);
    ModelConfig cfg = coldstart_model(coldstart_spec().content_dim);
    const TrainConfig tc = coldstart_training();

    const std::vector<double> values = {0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 1.0};
    const std::vector<SweepRow> rows = sweep_p_dense(values, p.train_examples, p.test_examples, p.store,
                                                     p.catalog, cfg, tc, tc.seed, 10, 1);
    REQUIRE(rows.size() == values.size());

    double interior_max = 0.0;
    for (std::size_t i = 0; i + 1 < rows.size(); ++i) interior_max = std::max(interior_max, rows[i].report.hr());
    const double extreme = rows.back().report.hr();
    INFO("max hit rate over p_dense 0.2..0.8 = " << interior_max << ", at 1.0 = " << extreme);
    REQUIRE(extreme < interior_max);

    REQUIRE(seconds_since(t0) < 1800.0);
    announce.ok = true;
}

TEST_CASE("ranking oracles and closed-form loss values agree", "[acceptance][oracle]") {
    Announcer announce("oracle-equivalence");

    // exact top-k vs a full sort on 100 random score vectors
    RngStream rng(71, 4);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 10 + int(rng.next_int(300));
        const int k = 1 + int(rng.next_int(std::uint64_t(n)));
        Tensor scores({n});
        for (int i = 0; i < n; ++i) scores[std::size_t(i)] = std::floor(rng.next_uniform() * 50.0) / 50.0;
        std::vector<int> idx(static_cast<std::size_t>(n));
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](int a, int b) {
            const double sa = scores[std::size_t(a)], sb = scores[std::size_t(b)];
            if (sa != sb) return sa > sb;
            return a < b;
        });
        idx.resize(static_cast<std::size_t>(k));
        REQUIRE(topk(scores, k) == idx);
    }

    // the training objective at all-zero logits: (64 + 1) * ln 2
    {
        Tape tape;
        NodeId loss = compute_loss(tape, tape.constant(Tensor::zeros({32})), tape.constant(Tensor::zeros({1, 32})),
                                   tape.constant(Tensor::zeros({64, 32})));
        REQUIRE(std::abs(tape.value(loss)[0] - 65.0 * std::log(2.0)) <= 1e-9);
    }

    // hit rate is monotone in k on every checkpoint we evaluate
    SyntheticSpec spec;
    spec.num_items = 40;
    spec.num_users = 150;
    spec.num_clusters = 4;
    spec.cold_fraction = 0.2;
    spec.content_dim = 6;
    spec.events_per_user = 8;
    spec.train_frac = 0.6;
    spec.seed = 53;
    Pipeline p = build_pipeline(spec, 8);

    ModelConfig cfg;
    cfg.d = 16;
    cfg.d_c = spec.content_dim;
    cfg.num_blocks = 1;
    cfg.num_heads = 2;
    cfg.max_len = 8;
    cfg.dropout_rate = 0.2;
    cfg.num_negatives = 8;

    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 64;
    tc.seed = 59;

    auto check_monotone = [&](ModelState& state, Mode mode) {
        CandidateMatrix cand = assemble_candidates(p.catalog, state, p.store, mode);
        double prev = -1.0;
        for (int k : {1, 5, 10, 20}) {
            const EvalReport r = hit_rate_at_k(p.test_examples, state, p.store, cand, k, 1);
            INFO("k = " << k << ", hit rate " << r.hr());
            REQUIRE(r.hr() >= prev);
            prev = r.hr();
        }
    };

    ModelState fresh = ModelState::init(cfg, p.catalog.num_train_items, 61);
    check_monotone(fresh, Mode::denserec);  // an untrained model still ranks deterministically

    ModelState trained = ModelState::init(cfg, p.catalog.num_train_items, 61);
    train(trained, p.train_examples, p.store, tc);
    check_monotone(trained, Mode::denserec);

    ModelConfig id_cfg = cfg;
    id_cfg.mode = Mode::id_only;
    id_cfg.d_c = 0;
    ModelState id_state = ModelState::init(id_cfg, p.catalog.num_train_items, 61);
    train(id_state, p.train_examples, p.store, tc);
    check_monotone(id_state, Mode::id_only);

    announce.ok = true;
}

TEST_CASE("a rerun with the same config and seed is byte-identical", "[acceptance][determinism]") {
    Announcer announce("determinism");

    testutil::TempDir dir("denserec-acc-det");
    const std::string root = dir.path().string();
    auto config_for = [&](const std::string& out) {
        std::string cfg;
        cfg += "out_dir = " + out + "\n";
        cfg += "data_dir = " + out + "\n";
        cfg += "events_path = " + out + "/events.tsv\n";
        cfg += "embeddings_path = " + out + "/content_embeddings.tsv\n";
        cfg += "train_frac = 0.6\nvalid_frac = 0.0\nmin_item_count = 1\n";
        cfg += "d = 16\nnum_blocks = 1\nnum_heads = 2\nmax_len = 8\ndropout = 0.5\nnum_negatives = 8\n";
        cfg += "epochs = 2\nbatch_size = 64\nk = 10\nseed = 67\nworkers = 1\n";
        cfg += "sweep_values = 0.0,0.5,1.0\n";
        cfg += "synth_num_items = 40\nsynth_num_users = 150\nsynth_num_clusters = 4\n";
        cfg += "synth_cold_fraction = 0.2\nsynth_content_dim = 6\nsynth_events_per_user = 8\n";
        cfg += "synth_train_frac = 0.6\n";
        const std::string path = out + ".cfg";
        testutil::write_file(path, cfg);
        return path;
    };

    std::vector<std::string> outs = {root + "/a", root + "/b"};
    for (const std::string& out : outs) {
        const std::string cfg = config_for(out);
        REQUIRE(run_cli("synth --config " + cfg) == 0);
        REQUIRE(run_cli("prepare --config " + cfg) == 0);
        REQUIRE(run_cli("train --config " + cfg) == 0);
        REQUIRE(run_cli("eval --config " + cfg) == 0);
        REQUIRE(run_cli("sweep --config " + cfg) == 0);
    }

    for (const char* name : {"/stats.tsv", "/model.ckpt", "/eval_k10.txt", "/eval_k10.records.tsv", "/sweep.tsv"}) {
        INFO("artifact " << name);
        REQUIRE(testutil::read_file(outs[0] + name) == testutil::read_file(outs[1] + name));
    }
    announce.ok = true;
}
