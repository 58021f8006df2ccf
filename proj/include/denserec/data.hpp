#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "denserec/content.hpp"
#include "denserec/errors.hpp"
#include "denserec/log.hpp"
#include "denserec/rng.hpp"

namespace denserec {

struct InteractionEvent {
    std::string user_id;
    std::string item_id;
    std::int64_t timestamp = 0;
};

// Events file: one "user_id TAB item_id TAB integer timestamp" per line,
// '#' starts a comment line, blank lines are ignored. Malformed lines are
// reported with their line number; more than max_malformed of them aborts.
inline std::vector<InteractionEvent> ingest_events(const std::string& path, int max_malformed = 100) {
    std::ifstream f(path);
    if (!f) throw data_error("cannot open events file: " + path);

    std::vector<InteractionEvent> events;
    std::string line;
    int line_no = 0;
    int malformed = 0;

    auto reject = [&](const std::string& why) {
        ++malformed;
        log::error("%s:%d: malformed event line (%s)", path.c_str(), line_no, why.c_str());
        if (malformed > max_malformed)
            throw data_error(path + ": more than " + std::to_string(max_malformed) + " malformed lines, aborting");
    };

    while (std::getline(f, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.find_first_not_of(" \t") == std::string::npos) continue;
        if (line[0] == '#') continue;

        const std::size_t t1 = line.find('\t');
        const std::size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos) {
            reject("expected exactly 3 tab-separated fields");
            continue;
        }
        InteractionEvent ev;
        ev.user_id = line.substr(0, t1);
        ev.item_id = line.substr(t1 + 1, t2 - t1 - 1);
        const std::string ts_text = line.substr(t2 + 1);
        if (ev.user_id.empty() || ev.item_id.empty()) {
            reject("empty id field");
            continue;
        }
        try {
            std::size_t used = 0;
            ev.timestamp = std::stoll(ts_text, &used);
            if (used != ts_text.size()) throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
            reject("bad timestamp '" + ts_text + "'");
            continue;
        }
        if (ev.timestamp < 0) {
            reject("negative timestamp");
            continue;
        }
        events.push_back(std::move(ev));
    }

    std::stable_sort(events.begin(), events.end(),
                     [](const InteractionEvent& a, const InteractionEvent& b) { return a.timestamp < b.timestamp; });
    return events;
}

inline void save_events(const std::string& path, const std::vector<InteractionEvent>& events) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw data_error("cannot open events file for writing: " + path);
    for (const auto& ev : events) f << ev.user_id << '\t' << ev.item_id << '\t' << ev.timestamp << '\n';
    if (!f) throw data_error("short write to events file: " + path);
}

// Iteratively removes items with fewer than min_item_count interactions and
// users left with fewer than min_user_count events, until stable.
inline std::vector<InteractionEvent> filter_min_counts(std::vector<InteractionEvent> events, int min_item_count = 5,
                                                       int min_user_count = 2) {
    bool changed = true;
    while (changed) {
        changed = false;

        std::unordered_map<std::string, int> item_counts;
        for (const auto& ev : events) ++item_counts[ev.item_id];
        std::vector<InteractionEvent> kept;
        kept.reserve(events.size());
        for (auto& ev : events) {
            if (item_counts[ev.item_id] >= min_item_count) kept.push_back(std::move(ev));
        }
        changed = changed || kept.size() != events.size();
        events = std::move(kept);

        std::unordered_map<std::string, int> user_counts;
        for (const auto& ev : events) ++user_counts[ev.user_id];
        kept.clear();
        kept.reserve(events.size());
        for (auto& ev : events) {
            if (user_counts[ev.user_id] >= min_user_count) kept.push_back(std::move(ev));
        }
        changed = changed || kept.size() != events.size();
        events = std::move(kept);
    }
    return events;
}

struct TemporalSplit {
    std::vector<InteractionEvent> train, valid, test;
    std::int64_t train_cutoff = 0;  // train: timestamp <= train_cutoff
    std::int64_t valid_cutoff = 0;  // valid: train_cutoff < timestamp <= valid_cutoff
};

// Quantile cutoffs over all event timestamps; events are partitioned exactly
// (order preserved) and anything after the train cutoff never reaches the
// training set.
inline TemporalSplit temporal_split(const std::vector<InteractionEvent>& events, double train_frac,
                                    double valid_frac) {
    if (!(train_frac > 0.0) || valid_frac < 0.0 || !(train_frac + valid_frac < 1.0))
        throw config_error("split fractions must satisfy 0 < train_frac and train_frac + valid_frac < 1");
    TemporalSplit out;
    if (events.empty()) return out;

    std::vector<std::int64_t> ts;
    ts.reserve(events.size());
    for (const auto& ev : events) ts.push_back(ev.timestamp);
    std::sort(ts.begin(), ts.end());
    const auto n = static_cast<std::int64_t>(ts.size());
    auto quantile_cut = [&](double frac) {
        std::int64_t idx = static_cast<std::int64_t>(frac * double(n)) - 1;
        if (idx < 0) idx = 0;
        if (idx >= n) idx = n - 1;
        return ts[std::size_t(idx)];
    };
    out.train_cutoff = quantile_cut(train_frac);
    out.valid_cutoff = std::max(out.train_cutoff, quantile_cut(train_frac + valid_frac));

    if (out.train_cutoff == ts.back())
        log::info("%s", "warning: train cutoff equals the maximum timestamp; validation and test splits are empty");
    if (out.train_cutoff == ts.front())
        log::info("%s", "warning: train cutoff equals the minimum timestamp; training split is tiny");

    for (const auto& ev : events) {
        if (ev.timestamp <= out.train_cutoff) out.train.push_back(ev);
        else if (ev.timestamp <= out.valid_cutoff) out.valid.push_back(ev);
        else out.test.push_back(ev);
    }
    return out;
}

// item_id <-> dense index. Training-vocabulary items occupy [0,
// num_train_items) in first-appearance order; items seen only after the
// train cutoff (cold) follow. The ID-embedding table reserves its row
// num_train_items for padding, so no catalog lookup may feed an index >=
// num_train_items into the table.
struct CatalogIndex {
    std::vector<std::string> ids;
    std::unordered_map<std::string, int> index;
    std::vector<std::uint8_t> seen_in_test;  // per index; candidate sets take train items plus these
    int num_train_items = 0;

    int num_items() const { return int(ids.size()); }
    int num_cold_items() const { return num_items() - num_train_items; }

    int lookup(const std::string& id) const {
        auto it = index.find(id);
        return it == index.end() ? -1 : it->second;
    }

    bool is_train_item(int idx) const { return idx >= 0 && idx < num_train_items; }

    // Retrieval ranks against the union of training-vocabulary items and items
    // that appear in the test split; items seen only in validation stay out.
    bool in_candidate_set(int idx) const {
        return is_train_item(idx) || (idx >= 0 && idx < num_items() && seen_in_test[std::size_t(idx)]);
    }

    const std::string& id_of(int idx) const {
        if (idx < 0 || idx >= num_items()) throw contract_error("catalog index out of range: " + std::to_string(idx));
        return ids[std::size_t(idx)];
    }

    static CatalogIndex build(const TemporalSplit& split) {
        CatalogIndex cat;
        auto add_new = [&](const std::string& id) {
            if (cat.index.find(id) == cat.index.end()) {
                cat.index.emplace(id, cat.num_items());
                cat.ids.push_back(id);
            }
        };
        for (const auto& ev : split.train) add_new(ev.item_id);
        cat.num_train_items = cat.num_items();
        for (const auto& ev : split.valid) add_new(ev.item_id);
        for (const auto& ev : split.test) add_new(ev.item_id);
        cat.seen_in_test.assign(std::size_t(cat.num_items()), 0);
        for (const auto& ev : split.test) cat.seen_in_test[std::size_t(cat.index.at(ev.item_id))] = 1;
        return cat;
    }
};

enum class Split { train, valid, test };

inline std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::valid: return "valid";
        default: return "test";
    }
}

struct SequenceExample {
    std::vector<int> input;  // catalog indices, chronological
    int target = -1;
    std::string user_id;
    Split split = Split::train;
};

struct SequenceBuildResult {
    std::vector<SequenceExample> examples;
    int skipped_users = 0;  // users with fewer than 2 events in the window
};

// Train windows yield a next-item example at every position; validation and
// test windows yield exactly one example per user with the last item as the
// target. Inputs keep at most the most recent max_len items.
inline SequenceBuildResult build_sequences(const std::vector<InteractionEvent>& events, const CatalogIndex& catalog,
                                           int max_len, Split split) {
    if (max_len <= 0) throw config_error("max_len must be positive");

    std::vector<std::string> user_order;
    std::unordered_map<std::string, std::vector<int>> by_user;
    for (const auto& ev : events) {
        const int idx = catalog.lookup(ev.item_id);
        if (idx < 0) throw data_error("event item '" + ev.item_id + "' missing from the catalog");
        auto [it, inserted] = by_user.try_emplace(ev.user_id);
        if (inserted) user_order.push_back(ev.user_id);
        it->second.push_back(idx);
    }

    SequenceBuildResult out;
    auto tail = [&](const std::vector<int>& seq, std::size_t end) {
        const std::size_t start = end > std::size_t(max_len) ? end - std::size_t(max_len) : 0;
        return std::vector<int>(seq.begin() + std::ptrdiff_t(start), seq.begin() + std::ptrdiff_t(end));
    };

    for (const auto& user : user_order) {
        const auto& seq = by_user[user];
        if (seq.size() < 2) {
            ++out.skipped_users;
            continue;
        }
        if (split == Split::train) {
            for (std::size_t t = 1; t < seq.size(); ++t) {
                out.examples.push_back(SequenceExample{tail(seq, t), seq[t], user, split});
            }
        } else {
            out.examples.push_back(SequenceExample{tail(seq, seq.size() - 1), seq.back(), user, split});
        }
    }
    return out;
}

// K uniform draws over the training vocabulary, redrawing any hit on the
// target. Duplicates among the negatives are allowed.
inline std::vector<int> sample_negatives(int target, int vocab_size, int k, RngStream& rng) {
    if (vocab_size <= k + 1)
        throw config_error("training vocabulary of " + std::to_string(vocab_size) +
                           " items is too small for K=" + std::to_string(k) + " negatives");
    std::vector<int> negs(static_cast<std::size_t>(k));
    for (auto& n : negs) {
        int draw = rng.next_int(vocab_size);
        while (draw == target) draw = rng.next_int(vocab_size);
        n = draw;
    }
    return negs;
}

struct ContentLoadResult {
    ContentEmbeddingStore store;
    int rows_read = 0;
    int ignored_unknown = 0;  // item ids absent from the catalog
    int duplicates = 0;
    double train_coverage = 0.0;  // fraction of training-vocabulary items covered
    double cold_coverage = 0.0;   // fraction of cold items covered
};

// Embeddings file: header "denserec-emb 1 <count> <d_c>", then one
// "item_id TAB v1,v2,...,v<d_c>" row per item.
inline ContentLoadResult load_content_embeddings(const std::string& path, const CatalogIndex& catalog) {
    std::ifstream f(path);
    if (!f) throw data_error("cannot open embeddings file: " + path);

    std::string line;
    if (!std::getline(f, line)) throw data_error(path + ": missing embeddings header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream header(line);
    std::string magic;
    int version = 0, declared_count = 0, d_c = 0;
    header >> magic >> version >> declared_count >> d_c;
    if (!header || magic != "denserec-emb")
        throw data_error(path + ": bad embeddings header '" + line + "'");
    if (version != 1) throw data_error(path + ": unsupported embeddings version " + std::to_string(version));
    if (d_c <= 0 && declared_count > 0) throw data_error(path + ": non-positive embedding dimension in header");

    ContentLoadResult out;
    if (d_c > 0) out.store = ContentEmbeddingStore(d_c);
    int line_no = 1;
    while (std::getline(f, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos || tab == 0)
            throw data_error(path + ":" + std::to_string(line_no) + ": expected 'item_id TAB floats'");
        const std::string item_id = line.substr(0, tab);

        std::vector<double> vec;
        vec.reserve(std::size_t(d_c));
        std::size_t start = tab + 1;
        while (start <= line.size()) {
            std::size_t comma = line.find(',', start);
            if (comma == std::string::npos) comma = line.size();
            try {
                std::size_t used = 0;
                const std::string field = line.substr(start, comma - start);
                vec.push_back(std::stod(field, &used));
                if (used != field.size()) throw std::invalid_argument("trailing characters");
            } catch (const std::exception&) {
                throw data_error(path + ":" + std::to_string(line_no) + ": bad float value");
            }
            start = comma + 1;
        }
        if (int(vec.size()) != d_c)
            throw data_error(path + ":" + std::to_string(line_no) + ": row has " + std::to_string(vec.size()) +
                             " values, header says " + std::to_string(d_c));
        ++out.rows_read;

        const int idx = catalog.lookup(item_id);
        if (idx < 0) {
            ++out.ignored_unknown;
            continue;
        }
        if (!out.store.set(idx, std::move(vec))) {
            ++out.duplicates;
            log::info("warning: duplicate content vector for item '%s' at %s:%d; last one wins", item_id.c_str(),
                      path.c_str(), line_no);
        }
    }
    if (declared_count != out.rows_read)
        log::info("warning: %s header declares %d rows but %d were read", path.c_str(), declared_count, out.rows_read);

    int train_covered = 0, cold_covered = 0;
    for (int i = 0; i < catalog.num_items(); ++i) {
        if (out.store.has(i)) {
            if (catalog.is_train_item(i)) ++train_covered;
            else ++cold_covered;
        }
    }
    if (catalog.num_train_items > 0) out.train_coverage = double(train_covered) / catalog.num_train_items;
    if (catalog.num_cold_items() > 0) out.cold_coverage = double(cold_covered) / catalog.num_cold_items();
    return out;
}

inline void save_content_embeddings(const std::string& path,
                                    const std::vector<std::pair<std::string, std::vector<double>>>& rows, int d_c) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw data_error("cannot open embeddings file for writing: " + path);
    f << "denserec-emb 1 " << rows.size() << ' ' << d_c << '\n';
    char buf[40];
    for (const auto& [id, vec] : rows) {
        f << id << '\t';
        for (std::size_t j = 0; j < vec.size(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", vec[j]);
            f << (j ? "," : "") << buf;
        }
        f << '\n';
    }
    if (!f) throw data_error("short write to embeddings file: " + path);
}

}  // namespace denserec
