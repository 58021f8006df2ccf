#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "denserec/checkpoint.hpp"
#include "denserec/data.hpp"
#include "denserec/eval.hpp"
#include "denserec/errors.hpp"
#include "denserec/log.hpp"
#include "denserec/model.hpp"
#include "denserec/run_config.hpp"
#include "denserec/synthetic.hpp"
#include "denserec/training.hpp"

namespace fs = std::filesystem;
using namespace denserec;

namespace {

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc | std::ios::binary);
    if (!f) throw data_error("cannot open file for writing: " + path);
    f << text;
    if (!f) throw data_error("short write to " + path);
}

TemporalSplit read_prepared_splits(const RunConfig& cfg) {
    const std::string dir = cfg.resolved_data_dir();
    TemporalSplit split;
    split.train = ingest_events(dir + "/train_events.tsv", cfg.max_malformed_lines);
    split.valid = ingest_events(dir + "/valid_events.tsv", cfg.max_malformed_lines);
    split.test = ingest_events(dir + "/test_events.tsv", cfg.max_malformed_lines);
    return split;
}

ContentEmbeddingStore load_required_embeddings(const RunConfig& cfg, const CatalogIndex& catalog,
                                               const char* needed_by) {
    if (cfg.embeddings_path.empty())
        throw config_error(std::string("embeddings_path is not set (required by ") + needed_by + ")");
    ContentLoadResult loaded = load_content_embeddings(cfg.embeddings_path, catalog);
    log::info("content embeddings: %d rows, train coverage %.3f, cold coverage %.3f", loaded.rows_read,
              loaded.train_coverage, loaded.cold_coverage);
    return std::move(loaded.store);
}

int cmd_synth(const RunConfig& cfg) {
    cfg.validate();
    SyntheticSpec spec = cfg.synth;
    spec.seed = cfg.seed;
    SyntheticData data = generate_synthetic(spec);
    fs::create_directories(cfg.out_dir);
    save_events(cfg.out_dir + "/events.tsv", data.events);
    save_content_embeddings(cfg.out_dir + "/content_embeddings.tsv", data.contents, data.content_dim);
    save_labels(cfg.out_dir + "/labels.tsv", data.labels);

    long long cold = 0;
    for (const auto& lbl : data.labels) cold += lbl.cold ? 1 : 0;
    std::printf("wrote %zu events, %zu content vectors (d_c=%d), %zu labels (%lld cold) to %s\n",
                data.events.size(), data.contents.size(), data.content_dim, data.labels.size(), cold,
                cfg.out_dir.c_str());
    return 0;
}

int cmd_prepare(const RunConfig& cfg) {
    cfg.validate();
    if (cfg.events_path.empty())
        throw config_error("events_path is not set; point it at a user/item/timestamp TSV file");

    const std::vector<InteractionEvent> raw = ingest_events(cfg.events_path, cfg.max_malformed_lines);
    const std::vector<InteractionEvent> filtered =
        filter_min_counts(raw, cfg.min_item_count, cfg.min_user_count);
    if (filtered.empty()) throw data_error("no events remain after min-count filtering");
    const TemporalSplit split = temporal_split(filtered, cfg.train_frac, cfg.valid_frac);
    const CatalogIndex catalog = CatalogIndex::build(split);

    fs::create_directories(cfg.out_dir);
    save_events(cfg.out_dir + "/train_events.tsv", split.train);
    save_events(cfg.out_dir + "/valid_events.tsv", split.valid);
    save_events(cfg.out_dir + "/test_events.tsv", split.test);

    std::unordered_set<std::string> users;
    for (const auto& ev : filtered) users.insert(ev.user_id);

    const SequenceBuildResult test_seqs = build_sequences(split.test, catalog, cfg.model.max_len, Split::test);
    long long cold_targets = 0, cold_in_sequence = 0;
    for (const auto& ex : test_seqs.examples) {
        if (!catalog.is_train_item(ex.target)) ++cold_targets;
        for (int item : ex.input) {
            if (!catalog.is_train_item(item)) {
                ++cold_in_sequence;
                break;
            }
        }
    }
    const double n_test = test_seqs.examples.empty() ? 1.0 : double(test_seqs.examples.size());

    char buf[128];
    std::string stats;
    auto put = [&](const char* key, const std::string& value) { stats += std::string(key) + "\t" + value + "\n"; };
    auto putf = [&](const char* key, const char* fmt, auto... args) {
        std::snprintf(buf, sizeof buf, fmt, args...);
        put(key, buf);
    };
    putf("users", "%zu", users.size());
    putf("items", "%d", catalog.num_items());
    putf("events_raw", "%zu", raw.size());
    putf("events_filtered", "%zu", filtered.size());
    putf("train_events", "%zu", split.train.size());
    putf("valid_events", "%zu", split.valid.size());
    putf("test_events", "%zu", split.test.size());
    putf("train_items", "%d", catalog.num_train_items);
    putf("cold_items", "%d", catalog.num_cold_items());
    putf("avg_seq_len", "%.4f", users.empty() ? 0.0 : double(filtered.size()) / double(users.size()));
    putf("test_examples", "%zu", test_seqs.examples.size());
    putf("skipped_test_users", "%d", test_seqs.skipped_users);
    putf("cold_target_share", "%.4f", double(cold_targets) / n_test);
    putf("cold_in_sequence_share", "%.4f", double(cold_in_sequence) / n_test);

    write_text(cfg.out_dir + "/stats.tsv", stats);
    std::fputs(stats.c_str(), stdout);
    return 0;
}

int cmd_train(const RunConfig& cfg) {
    cfg.validate();
    const TemporalSplit split = read_prepared_splits(cfg);
    const CatalogIndex catalog = CatalogIndex::build(split);
    if (catalog.num_train_items <= 0) throw data_error("prepared training split is empty");

    ModelConfig mc = cfg.model;
    ContentEmbeddingStore store;
    if (mc.mode == Mode::id_only) {
        mc.p_dense = 0.0;  // the dense path does not exist in this mode
        mc.d_c = 0;
    } else {
        store = load_required_embeddings(cfg, catalog, "mode denserec");
        mc.d_c = store.dim();
    }
    mc.validate();

    const SequenceBuildResult train_seqs = build_sequences(split.train, catalog, mc.max_len, Split::train);
    if (train_seqs.examples.empty()) throw data_error("no training examples could be built");

    ModelState state = ModelState::init(mc, catalog.num_train_items, cfg.seed);
    TrainConfig tc = cfg.training;
    tc.seed = cfg.seed;
    const TrainReport report = train(state, train_seqs.examples, store, tc);

    fs::create_directories(cfg.out_dir);
    save_checkpoint(state, cfg.resolved_model_path());
    write_train_log(cfg.out_dir + "/train.log", report);
    std::printf("trained %zu epochs on %zu examples; final mean loss %.6f\ncheckpoint: %s\n",
                report.epochs.size(), train_seqs.examples.size(),
                report.epochs.empty() ? 0.0 : report.epochs.back().mean_loss,
                cfg.resolved_model_path().c_str());
    return 0;
}

int cmd_eval(const RunConfig& cfg) {
    cfg.validate();
    const TemporalSplit split = read_prepared_splits(cfg);
    const CatalogIndex catalog = CatalogIndex::build(split);

    ModelState state = load_checkpoint(cfg.resolved_model_path());
    if (state.num_train_items != catalog.num_train_items)
        throw data_error("checkpoint was trained on " + std::to_string(state.num_train_items) +
                         " items but the prepared data has " + std::to_string(catalog.num_train_items));

    // --mode id_only restricts a dual-path checkpoint to its ID table, which
    // is how the two modes are compared head-to-head.
    if (cfg.mode_from_flag && cfg.model.mode != state.cfg.mode) {
        if (cfg.model.mode == Mode::denserec)
            throw config_error("checkpoint was trained id_only; it has no projection to evaluate in denserec mode");
        log::info("%s", "evaluating a dual-path checkpoint in id_only mode");
        state.cfg.mode = Mode::id_only;
    }

    ContentEmbeddingStore store;
    if (state.cfg.mode == Mode::denserec) {
        store = load_required_embeddings(cfg, catalog, "a dual-path checkpoint");
        if (store.dim() != state.cfg.d_c)
            throw data_error("content dimension mismatch: checkpoint expects d_c=" +
                             std::to_string(state.cfg.d_c) + " but the embeddings file has d_c=" +
                             std::to_string(store.dim()));
    }

    const SequenceBuildResult test_seqs = build_sequences(split.test, catalog, state.cfg.max_len, Split::test);
    const CandidateMatrix candidates = assemble_candidates(catalog, state, store, state.cfg.mode);
    fs::create_directories(cfg.out_dir);

    for (int k : cfg.k_list) {
        if (k > int(candidates.items.size()))
            throw config_error("k=" + std::to_string(k) + " exceeds the candidate count " +
                               std::to_string(candidates.items.size()));
        const EvalReport r = hit_rate_at_k(test_seqs.examples, state, store, candidates, k, cfg.workers);
        const std::string human = format_eval_report(r);
        write_text(cfg.out_dir + "/eval_k" + std::to_string(k) + ".txt", human);
        write_text(cfg.out_dir + "/eval_k" + std::to_string(k) + ".records.tsv", eval_records(r));
        std::fputs(human.c_str(), stdout);
    }
    return 0;
}

int cmd_sweep(const RunConfig& cfg) {
    cfg.validate();
    const TemporalSplit split = read_prepared_splits(cfg);
    const CatalogIndex catalog = CatalogIndex::build(split);
    ContentEmbeddingStore store = load_required_embeddings(cfg, catalog, "sweep");

    ModelConfig mc = cfg.model;
    mc.d_c = store.dim();
    const SequenceBuildResult train_seqs = build_sequences(split.train, catalog, mc.max_len, Split::train);
    const SequenceBuildResult test_seqs = build_sequences(split.test, catalog, mc.max_len, Split::test);
    if (train_seqs.examples.empty()) throw data_error("no training examples could be built");

    TrainConfig tc = cfg.training;
    tc.seed = cfg.seed;
    const int k = cfg.k_list.front();
    const std::vector<SweepRow> rows =
        sweep_p_dense(cfg.resolved_sweep_values(), train_seqs.examples, test_seqs.examples, store, catalog,
                      mc, tc, cfg.seed, k, cfg.workers);

    fs::create_directories(cfg.out_dir);
    const std::string table = format_sweep_table(rows);
    write_text(cfg.out_dir + "/sweep.tsv", table);
    std::fputs(table.c_str(), stdout);
    return 0;
}

struct FlagValues {
    std::string config_path, mode, k, out;
    double p_dense = -1.0;
    long long seed = -1;
    int workers = -1;
};

RunConfig build_config(const FlagValues& f) {
    RunConfig cfg;
    if (!f.config_path.empty()) cfg.load_file(f.config_path);
    if (f.seed >= 0) cfg.seed = std::uint64_t(f.seed);
    if (!f.mode.empty()) {
        cfg.model.mode = mode_from_string(f.mode);
        cfg.mode_from_flag = true;
    }
    if (f.p_dense >= 0.0) cfg.model.p_dense = f.p_dense;
    if (!f.k.empty()) cfg.k_list = detail::parse_int_list("k", f.k);
    if (!f.out.empty()) cfg.out_dir = f.out;
    if (f.workers >= 0) cfg.workers = f.workers;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dual-path sequential recommender: prepare, synth, train, eval, sweep"};
    app.require_subcommand(1);

    FlagValues f;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", f.config_path, "key=value run configuration file");
        sub->add_option("--seed", f.seed, "root random seed")->check(CLI::NonNegativeNumber);
        sub->add_option("--mode", f.mode, "embedding mode")->check(CLI::IsMember({"denserec", "id_only"}));
        sub->add_option("--p-dense", f.p_dense, "dense-path probability")->check(CLI::Range(0.0, 1.0));
        sub->add_option("--k", f.k, "comma-separated ranking cutoffs");
        sub->add_option("--out", f.out, "output directory");
        sub->add_option("--workers", f.workers, "evaluation worker count")->check(CLI::PositiveNumber);
        return sub;
    };
    add_common(app.add_subcommand("prepare", "ingest, filter and time-split an events file"));
    add_common(app.add_subcommand("synth", "generate a synthetic dataset with content vectors"));
    add_common(app.add_subcommand("train", "train a model on a prepared dataset"));
    add_common(app.add_subcommand("eval", "rank the catalog against held-out sequences"));
    add_common(app.add_subcommand("sweep", "train and evaluate across a p_dense grid"));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // usage problems exit 2; --help exits 0
    }

    try {
        const RunConfig cfg = build_config(f);
        const std::string name = app.get_subcommands().front()->get_name();
        if (name == "prepare") return cmd_prepare(cfg);
        if (name == "synth") return cmd_synth(cfg);
        if (name == "train") return cmd_train(cfg);
        if (name == "eval") return cmd_eval(cfg);
        if (name == "sweep") return cmd_sweep(cfg);
        log::error("unknown subcommand: %s", name.c_str());
        return 2;
    } catch (const config_error& e) {
        log::error("%s", e.what());
        return 2;
    } catch (const data_error& e) {
        log::error("%s", e.what());
        return 3;
    } catch (const numeric_error& e) {
        log::error("%s", e.what());
        return 4;
    } catch (const std::exception& e) {
        log::error("internal error: %s", e.what());
        return 1;
    }
}
