#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "denserec/data.hpp"
#include "denserec/synthetic.hpp"
#include "testutil.hpp"

using namespace denserec;

TEST_CASE("ingest_events parses, sorts stably, and reports bad lines", "[data][ingest]") {
    testutil::TempDir dir("denserec-data");

    testutil::write_file(dir.file("empty.tsv"), "");
    REQUIRE(ingest_events(dir.file("empty.tsv")).empty());

    testutil::write_file(dir.file("events.tsv"),
                         "# interaction log\n"
                         "u1\ti1\t100\n"
                         "u2\ti2\t50\n"
                         "\n"
                         "u1\ti3\t100\n"
                         "this line is broken\n"
                         "u3\ti1\t7\n");
    auto events = ingest_events(dir.file("events.tsv"));
    REQUIRE(events.size() == 4);
    REQUIRE(events[0].user_id == "u3");
    REQUIRE(events[0].timestamp == 7);
    REQUIRE(events[1].item_id == "i2");
    // equal timestamps keep file order (stable sort)
    REQUIRE(events[2].item_id == "i1");
    REQUIRE(events[3].item_id == "i3");

    // malformed lines above the threshold abort with a data error
    REQUIRE_THROWS_AS(ingest_events(dir.file("events.tsv"), /*max_malformed=*/0), data_error);

    testutil::write_file(dir.file("badts.tsv"), "u1\ti1\tnotanumber\nu1\ti1\t-5\nu1\t\t3\n");
    REQUIRE_THROWS_AS(ingest_events(dir.file("badts.tsv"), 2), data_error);

    REQUIRE_THROWS_AS(ingest_events(dir.file("missing.tsv")), data_error);
}

TEST_CASE("event files round-trip through save and ingest", "[data][ingest]") {
    testutil::TempDir dir("denserec-data");
    std::vector<InteractionEvent> events = {{"u1", "i1", 5}, {"u2", "i9", 10}, {"u1", "i2", 11}};
    save_events(dir.file("out.tsv"), events);
    auto back = ingest_events(dir.file("out.tsv"));
    REQUIRE(back.size() == events.size());
    for (std::size_t i = 0; i < events.size(); ++i) {
        REQUIRE(back[i].user_id == events[i].user_id);
        REQUIRE(back[i].item_id == events[i].item_id);
        REQUIRE(back[i].timestamp == events[i].timestamp);
    }
}

namespace {

std::vector<InteractionEvent> repeat_item(const std::string& user, const std::string& item, int times,
                                          std::int64_t& ts) {
    std::vector<InteractionEvent> out;
    for (int i = 0; i < times; ++i) out.push_back({user + std::to_string(i % 7), item, ts++});
    return out;
}

}  // namespace

TEST_CASE("filter_min_counts removes rare items then stranded users", "[data][filter]") {
    std::int64_t ts = 0;
    std::vector<InteractionEvent> events;
    auto extend = [&](std::vector<InteractionEvent> more) {
        events.insert(events.end(), more.begin(), more.end());
    };
    extend(repeat_item("u", "popular", 12, ts));
    extend(repeat_item("u", "alsofine", 8, ts));
    events.push_back({"u0", "rare", ts++});
    events.push_back({"u1", "rare", ts++});
    events.push_back({"u2", "rare", ts++});
    events.push_back({"u3", "rare", ts++});  // 4 interactions: below the threshold of 5
    events.push_back({"loner", "popular", ts++});  // 1 event once 'rare' is gone... still 1 event overall

    auto kept = filter_min_counts(events);
    std::unordered_map<std::string, int> item_counts, user_counts;
    for (const auto& ev : kept) {
        ++item_counts[ev.item_id];
        ++user_counts[ev.user_id];
    }
    REQUIRE(item_counts.count("rare") == 0);
    REQUIRE(user_counts.count("loner") == 0);
    for (const auto& [item, n] : item_counts) REQUIRE(n >= 5);
    for (const auto& [user, n] : user_counts) REQUIRE(n >= 2);

    // idempotence: a second pass changes nothing
    auto twice = filter_min_counts(kept);
    REQUIRE(twice.size() == kept.size());

    // the cascade reaches a fixed point even when user removal re-lowers item counts
    std::vector<InteractionEvent> cascade;
    for (int i = 0; i < 5; ++i) cascade.push_back({"solo" + std::to_string(i), "borderline", 100 + i});
    // every user has exactly 1 event; all get dropped, taking 'borderline' with them
    auto gone = filter_min_counts(cascade);
    REQUIRE(gone.empty());
}

TEST_CASE("temporal_split uses timestamp quantiles", "[data][split]") {
    std::vector<InteractionEvent> events;
    for (int t = 1; t <= 10; ++t) events.push_back({"u" + std::to_string(t % 3), "i", t});

    TemporalSplit s = temporal_split(events, 0.8, 0.1);
    REQUIRE(s.train.size() == 8);
    REQUIRE(s.valid.size() == 1);
    REQUIRE(s.test.size() == 1);
    REQUIRE(s.train_cutoff == 8);
    REQUIRE(s.valid_cutoff == 9);
    REQUIRE(s.valid[0].timestamp == 9);
    REQUIRE(s.test[0].timestamp == 10);

    // all-equal timestamps: everything lands in train
    std::vector<InteractionEvent> flat(6, InteractionEvent{"u", "i", 42});
    TemporalSplit f = temporal_split(flat, 0.8, 0.1);
    REQUIRE(f.train.size() == 6);
    REQUIRE(f.valid.empty());
    REQUIRE(f.test.empty());

    REQUIRE_THROWS_AS(temporal_split(events, 0.0, 0.1), config_error);
    REQUIRE_THROWS_AS(temporal_split(events, 0.9, 0.2), config_error);
}

TEST_CASE("temporal_split partitions exactly and respects time order", "[data][split][property]") {
    RngStream rng(77, 1);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<InteractionEvent> events;
        const int n = 30 + rng.next_int(100);
        for (int i = 0; i < n; ++i)
            events.push_back({"u" + std::to_string(rng.next_int(9)), "i" + std::to_string(rng.next_int(14)),
                              std::int64_t(rng.next_int(500))});
        TemporalSplit s = temporal_split(events, 0.6, 0.2);
        REQUIRE(s.train.size() + s.valid.size() + s.test.size() == events.size());
        REQUIRE_FALSE(s.train.empty());
        for (const auto& ev : s.train) REQUIRE(ev.timestamp <= s.train_cutoff);
        for (const auto& ev : s.valid) {
            REQUIRE(ev.timestamp > s.train_cutoff);
            REQUIRE(ev.timestamp <= s.valid_cutoff);
        }
        for (const auto& ev : s.test) REQUIRE(ev.timestamp > s.valid_cutoff);
        if (!s.test.empty()) {
            for (const auto& tr : s.train)
                for (const auto& te : s.test) REQUIRE(tr.timestamp < te.timestamp);
        }
    }
}

TEST_CASE("catalog indexes training vocabulary first", "[data][catalog]") {
    TemporalSplit split;
    split.train = {{"u1", "a", 1}, {"u1", "b", 2}, {"u2", "a", 3}};
    split.valid = {{"u1", "c", 4}};
    split.test = {{"u2", "d", 5}, {"u3", "a", 6}};

    CatalogIndex cat = CatalogIndex::build(split);
    REQUIRE(cat.num_items() == 4);
    REQUIRE(cat.num_train_items == 2);
    REQUIRE(cat.num_cold_items() == 2);
    REQUIRE(cat.lookup("a") == 0);
    REQUIRE(cat.lookup("b") == 1);
    REQUIRE(cat.lookup("c") == 2);
    REQUIRE(cat.lookup("d") == 3);
    REQUIRE(cat.lookup("nope") == -1);
    REQUIRE(cat.is_train_item(0));
    REQUIRE(cat.is_train_item(1));
    REQUIRE_FALSE(cat.is_train_item(2));
    REQUIRE_FALSE(cat.is_train_item(3));
    REQUIRE(cat.id_of(3) == "d");
}

TEST_CASE("build_sequences emits per-position train and last-item test examples", "[data][sequences]") {
    TemporalSplit split;
    split.train = {{"u1", "a", 1}, {"u1", "b", 2}, {"u1", "c", 3}, {"u2", "a", 4}};
    split.test = {{"u9", "x", 10}, {"u9", "y", 11}, {"u9", "z", 12}, {"u8", "x", 13}};
    // give the test items catalog entries: x,y,z are cold here
    CatalogIndex cat = CatalogIndex::build(split);

    auto train = build_sequences(split.train, cat, 30, Split::train);
    REQUIRE(train.examples.size() == 2);  // u2 has a single event -> skipped
    REQUIRE(train.skipped_users == 1);
    REQUIRE(train.examples[0].input == std::vector<int>{cat.lookup("a")});
    REQUIRE(train.examples[0].target == cat.lookup("b"));
    REQUIRE(train.examples[1].input == (std::vector<int>{cat.lookup("a"), cat.lookup("b")}));
    REQUIRE(train.examples[1].target == cat.lookup("c"));

    auto test = build_sequences(split.test, cat, 30, Split::test);
    REQUIRE(test.examples.size() == 1);
    REQUIRE(test.skipped_users == 1);  // u8 has one event in the window
    REQUIRE(test.examples[0].input == (std::vector<int>{cat.lookup("x"), cat.lookup("y")}));
    REQUIRE(test.examples[0].target == cat.lookup("z"));
    REQUIRE(test.examples[0].user_id == "u9");

    // truncation keeps the most recent max_len inputs
    TemporalSplit longsplit;
    for (int t = 0; t < 6; ++t) longsplit.train.push_back({"u", "i" + std::to_string(t), t});
    CatalogIndex cat2 = CatalogIndex::build(longsplit);
    auto seqs = build_sequences(longsplit.train, cat2, 3, Split::train);
    const auto& last = seqs.examples.back();
    REQUIRE(last.target == 5);
    REQUIRE(last.input == (std::vector<int>{2, 3, 4}));
}

TEST_CASE("sample_negatives excludes the target and stays uniform", "[data][negatives]") {
    RngStream rng(123, 9);
    const int vocab = 100, target = 37;

    for (int trial = 0; trial < 1000; ++trial) {
        auto negs = sample_negatives(target, vocab, 10, rng);
        REQUIRE(negs.size() == 10);
        for (int n : negs) {
            REQUIRE(n != target);
            REQUIRE(n >= 0);
            REQUIRE(n < vocab);
        }
    }

    // marginal frequency over 10^6 draws: chi-square against uniform over
    // the 99 allowed items, plus a generous per-item deviation bound
    std::vector<double> counts(std::size_t(vocab), 0.0);
    const int num_draws = 1000000;
    for (int i = 0; i < num_draws / 10; ++i) {
        for (int n : sample_negatives(target, vocab, 10, rng)) counts[std::size_t(n)] += 1.0;
    }
    const double expect = double(num_draws) / (vocab - 1);
    const double sigma = std::sqrt(double(num_draws) * (1.0 / (vocab - 1)) * (1.0 - 1.0 / (vocab - 1)));
    double chi2 = 0.0;
    for (int i = 0; i < vocab; ++i) {
        if (i == target) {
            REQUIRE(counts[std::size_t(i)] == 0.0);
            continue;
        }
        chi2 += (counts[std::size_t(i)] - expect) * (counts[std::size_t(i)] - expect) / expect;
        REQUIRE(std::fabs(counts[std::size_t(i)] - expect) < 5.0 * sigma);
    }
    // chi2 ~ chi-square(98): mean 98, stddev ~14
    REQUIRE(chi2 < 160.0);

    REQUIRE_THROWS_AS(sample_negatives(0, 11, 10, rng), config_error);
    REQUIRE_NOTHROW(sample_negatives(0, 12, 10, rng));
}

TEST_CASE("load_content_embeddings parses the header-and-rows format", "[data][embeddings]") {
    testutil::TempDir dir("denserec-emb");
    TemporalSplit split;
    split.train = {{"u", "a", 1}, {"u", "b", 2}};
    split.test = {{"u", "c", 3}};
    CatalogIndex cat = CatalogIndex::build(split);

    testutil::write_file(dir.file("emb.tsv"),
                         "denserec-emb 1 3 4\n"
                         "a\t1,2,3,4\n"
                         "b\t0.5,-0.5,0,1\n"
                         "c\t-1,-2,-3,-4\n");
    auto res = load_content_embeddings(dir.file("emb.tsv"), cat);
    REQUIRE(res.store.size() == 3);
    REQUIRE(res.store.dim() == 4);
    REQUIRE(res.rows_read == 3);
    REQUIRE(res.train_coverage == 1.0);
    REQUIRE(res.cold_coverage == 1.0);
    REQUIRE(res.store.vec(cat.lookup("b"))[1] == -0.5);

    // empty store from a header-only file
    testutil::write_file(dir.file("none.tsv"), "denserec-emb 1 0 4\n");
    auto empty = load_content_embeddings(dir.file("none.tsv"), cat);
    REQUIRE(empty.store.size() == 0);
    REQUIRE(empty.train_coverage == 0.0);

    // unknown items ignored but counted; duplicates keep the last value
    testutil::write_file(dir.file("extra.tsv"),
                         "denserec-emb 1 3 2\n"
                         "ghost\t1,1\n"
                         "a\t1,2\n"
                         "a\t3,4\n");
    auto extra = load_content_embeddings(dir.file("extra.tsv"), cat);
    REQUIRE(extra.ignored_unknown == 1);
    REQUIRE(extra.duplicates == 1);
    REQUIRE(extra.store.vec(cat.lookup("a"))[0] == 3.0);

    // dimension mismatch aborts with the row number
    testutil::write_file(dir.file("dim.tsv"),
                         "denserec-emb 1 2 3\n"
                         "a\t1,2,3\n"
                         "b\t1,2\n");
    try {
        load_content_embeddings(dir.file("dim.tsv"), cat);
        FAIL("expected data_error");
    } catch (const data_error& e) {
        REQUIRE(std::string(e.what()).find(":3") != std::string::npos);
    }

    testutil::write_file(dir.file("hdr.tsv"), "not-a-header\n");
    REQUIRE_THROWS_AS(load_content_embeddings(dir.file("hdr.tsv"), cat), data_error);
}

TEST_CASE("content embeddings round-trip through save and load", "[data][embeddings]") {
    testutil::TempDir dir("denserec-emb");
    TemporalSplit split;
    split.train = {{"u", "a", 1}, {"u", "b", 2}};
    CatalogIndex cat = CatalogIndex::build(split);

    std::vector<std::pair<std::string, std::vector<double>>> rows = {
        {"a", {0.12345678901234567, -3.5, 1e-9}},
        {"b", {2.0, 0.0, -0.25}},
    };
    save_content_embeddings(dir.file("rt.tsv"), rows, 3);
    auto res = load_content_embeddings(dir.file("rt.tsv"), cat);
    REQUIRE(res.store.size() == 2);
    for (const auto& [id, vec] : rows) {
        const auto& got = res.store.vec(cat.lookup(id));
        for (std::size_t j = 0; j < vec.size(); ++j) REQUIRE(got[j] == vec[j]);
    }
}

TEST_CASE("generate_synthetic is reproducible and respects its spec", "[data][synthetic]") {
    SyntheticSpec spec;
    spec.num_items = 50;
    spec.num_users = 300;
    spec.num_clusters = 10;
    spec.events_per_user = 7;
    spec.seed = 5;

    SyntheticData a = generate_synthetic(spec);
    SyntheticData b = generate_synthetic(spec);
    REQUIRE(a.events.size() == b.events.size());
    REQUIRE(a.events.size() == std::size_t(300 * 7));
    for (std::size_t i = 0; i < a.events.size(); ++i) {
        REQUIRE(a.events[i].user_id == b.events[i].user_id);
        REQUIRE(a.events[i].item_id == b.events[i].item_id);
        REQUIRE(a.events[i].timestamp == b.events[i].timestamp);
    }
    for (std::size_t i = 1; i < a.events.size(); ++i) REQUIRE(a.events[i].timestamp > a.events[i - 1].timestamp);
    REQUIRE(a.labels.size() == 50);
    REQUIRE(a.contents.size() == 50);

    // zero noise: items in one cluster share identical content vectors
    SyntheticSpec flat = spec;
    flat.noise = 0.0;
    SyntheticData f = generate_synthetic(flat);
    std::unordered_map<int, std::vector<double>> centroid;
    for (std::size_t i = 0; i < f.labels.size(); ++i) {
        auto [it, fresh] = centroid.try_emplace(f.labels[i].cluster, f.contents[i].second);
        if (!fresh) {
            for (std::size_t j = 0; j < it->second.size(); ++j) REQUIRE(f.contents[i].second[j] == it->second[j]);
        }
    }

    SyntheticSpec bad = spec;
    bad.cold_fraction = 1.0;
    REQUIRE_THROWS_AS(generate_synthetic(bad), config_error);
}

TEST_CASE("synthetic cold items never reach the training split", "[data][synthetic]") {
    SyntheticSpec spec;
    spec.num_items = 100;
    spec.num_users = 2000;
    spec.num_clusters = 10;
    spec.cold_fraction = 0.25;
    spec.events_per_user = 7;
    spec.train_frac = 0.7;
    spec.seed = 11;

    SyntheticData data = generate_synthetic(spec);
    auto events = filter_min_counts(data.events);
    TemporalSplit split = temporal_split(events, spec.train_frac, 0.0);
    CatalogIndex cat = CatalogIndex::build(split);

    // 10 items per cluster, round(0.25 * 10) = 3 cold in each
    std::unordered_set<std::string> labeled_cold;
    for (const auto& l : data.labels)
        if (l.cold) labeled_cold.insert(l.item_id);
    REQUIRE(labeled_cold.size() == 30);

    // no cold item in any training event, and the catalog agrees
    for (const auto& ev : split.train) REQUIRE(labeled_cold.count(ev.item_id) == 0);
    for (int i = 0; i < cat.num_items(); ++i) {
        if (cat.is_train_item(i)) REQUIRE(labeled_cold.count(cat.id_of(i)) == 0);
        else REQUIRE(labeled_cold.count(cat.id_of(i)) == 1);
    }
    // with these sizes every cold item shows up after the cutoff
    REQUIRE(cat.num_cold_items() == 30);

    // cold_fraction 0 leaves no cold items in the split
    SyntheticSpec warm = spec;
    warm.cold_fraction = 0.0;
    SyntheticData wd = generate_synthetic(warm);
    TemporalSplit ws = temporal_split(filter_min_counts(wd.events), warm.train_frac, 0.0);
    REQUIRE(CatalogIndex::build(ws).num_cold_items() == 0);
}

TEST_CASE("synthetic cold-target share approaches cold_fraction", "[data][synthetic][slow]") {
    SyntheticSpec spec;
    spec.num_items = 200;
    spec.num_users = 10000;
    spec.num_clusters = 10;
    spec.cold_fraction = 0.25;
    spec.events_per_user = 7;
    spec.train_frac = 0.7;
    spec.seed = 3;

    SyntheticData data = generate_synthetic(spec);
    TemporalSplit split = temporal_split(filter_min_counts(data.events), spec.train_frac, 0.0);
    CatalogIndex cat = CatalogIndex::build(split);
    auto test = build_sequences(split.test, cat, 30, Split::test);
    REQUIRE(test.examples.size() > 5000);

    int cold_targets = 0;
    for (const auto& ex : test.examples)
        if (!cat.is_train_item(ex.target)) ++cold_targets;
    const double share = double(cold_targets) / double(test.examples.size());
    REQUIRE(share > 0.20);
    REQUIRE(share < 0.30);
}

TEST_CASE("labels file format", "[data][synthetic]") {
    testutil::TempDir dir("denserec-labels");
    std::vector<SyntheticLabel> labels = {{"i0", 0, false}, {"i1", 3, true}};
    save_labels(dir.file("labels.tsv"), labels);
    REQUIRE(testutil::read_file(dir.file("labels.tsv")) == "i0\t0\t0\ni1\t3\t1\n");
}
