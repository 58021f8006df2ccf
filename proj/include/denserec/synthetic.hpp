#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "denserec/content.hpp"
#include "denserec/data.hpp"
#include "denserec/errors.hpp"
#include "denserec/rng.hpp"

namespace denserec {

// Clustered cold-start testbed: items live in clusters, content vectors are
// cluster centroids plus isotropic noise, and each user walks a cluster-level
// Markov chain picking items inside the current cluster. A cold_fraction of
// every cluster is withheld from the item pool until the planned train
// cutoff, so cold items are absent from training by construction.
struct SyntheticSpec {
    int num_items = 200;
    int num_users = 5000;
    int num_clusters = 10;
    double cold_fraction = 0.25;
    double noise = 0.1;          // content noise stddev around the centroid
    double concentration = 0.2;  // Dirichlet concentration of cluster-transition rows
    int content_dim = 16;
    int events_per_user = 7;
    double train_frac = 0.7;     // must match the split used downstream
    std::uint64_t seed = 1;

    void validate() const {
        if (num_items <= 0 || num_users <= 0 || num_clusters <= 0 || content_dim <= 0 || events_per_user <= 0)
            throw config_error("synthetic sizes must be positive");
        if (num_clusters > num_items) throw config_error("synthetic num_clusters exceeds num_items");
        if (cold_fraction < 0.0 || cold_fraction >= 1.0) throw config_error("cold_fraction must be in [0,1)");
        if (noise < 0.0) throw config_error("noise must be non-negative");
        if (concentration <= 0.0) throw config_error("concentration must be positive");
        if (!(train_frac > 0.0 && train_frac < 1.0)) throw config_error("train_frac must be in (0,1)");
    }
};

struct SyntheticLabel {
    std::string item_id;
    int cluster = 0;
    bool cold = false;
};

struct SyntheticData {
    std::vector<InteractionEvent> events;  // timestamp-sorted, timestamps unique
    std::vector<std::pair<std::string, std::vector<double>>> contents;  // per item, generation order
    std::vector<SyntheticLabel> labels;
    int content_dim = 0;
};

inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();

    auto item_name = [](int i) { return "i" + std::to_string(i); };
    auto user_name = [](int u) { return "u" + std::to_string(u); };

    // cluster membership round-robin; the tail of each cluster is cold
    std::vector<int> cluster_of(std::size_t(spec.num_items));
    std::vector<std::vector<int>> members(std::size_t(spec.num_clusters));
    for (int i = 0; i < spec.num_items; ++i) {
        cluster_of[std::size_t(i)] = i % spec.num_clusters;
        members[std::size_t(i % spec.num_clusters)].push_back(i);
    }
    std::vector<std::uint8_t> cold(std::size_t(spec.num_items), 0);
    std::vector<std::vector<int>> warm_members(std::size_t(spec.num_clusters));
    for (int c = 0; c < spec.num_clusters; ++c) {
        const auto& m = members[std::size_t(c)];
        const int n_cold = int(spec.cold_fraction * double(m.size()) + 0.5);
        for (std::size_t j = 0; j < m.size(); ++j) {
            if (int(m.size() - j) <= n_cold) cold[std::size_t(m[j])] = 1;
            else warm_members[std::size_t(c)].push_back(m[j]);
        }
        if (warm_members[std::size_t(c)].empty())
            throw config_error("cold_fraction leaves cluster " + std::to_string(c) + " without warm items");
    }

    SyntheticData out;
    out.content_dim = spec.content_dim;

    // content vectors: centroid + noise
    RngStream centroid_rng = RngStream::named(spec.seed, "synth/centroids");
    std::vector<std::vector<double>> centroids(std::size_t(spec.num_clusters),
                                               std::vector<double>(std::size_t(spec.content_dim)));
    for (auto& c : centroids)
        for (auto& x : c) x = centroid_rng.next_normal();
    RngStream content_rng = RngStream::named(spec.seed, "synth/content");
    for (int i = 0; i < spec.num_items; ++i) {
        std::vector<double> v = centroids[std::size_t(cluster_of[std::size_t(i)])];
        for (auto& x : v) x += spec.noise * content_rng.next_normal();
        out.contents.emplace_back(item_name(i), std::move(v));
        out.labels.push_back(SyntheticLabel{item_name(i), cluster_of[std::size_t(i)], cold[std::size_t(i)] != 0});
    }

    // cluster-transition rows drawn once, shared by all users
    RngStream trans_rng = RngStream::named(spec.seed, "synth/transitions");
    std::vector<std::vector<double>> transition(std::size_t(spec.num_clusters),
                                                std::vector<double>(std::size_t(spec.num_clusters)));
    for (auto& row : transition) {
        double sum = 0.0;
        for (auto& x : row) {
            x = trans_rng.next_gamma(spec.concentration);
            sum += x;
        }
        for (auto& x : row) x /= sum;
    }

    // Timestamps interleave users round-robin (event e of user u gets
    // timestamp e*num_users + u), so every user's history spreads across the
    // whole timeline and the quantile train cutoff lands at
    // floor(train_frac * total_events) events exactly.
    const std::int64_t total = std::int64_t(spec.num_users) * spec.events_per_user;
    const std::int64_t planned_cutoff = std::int64_t(spec.train_frac * double(total));
    out.events.reserve(std::size_t(total));
    for (int e = 0; e < spec.events_per_user; ++e) {
        for (int u = 0; u < spec.num_users; ++u) {
            out.events.push_back(InteractionEvent{user_name(u), "", std::int64_t(e) * spec.num_users + u});
        }
    }

    for (int u = 0; u < spec.num_users; ++u) {
        RngStream walk = RngStream::named(spec.seed, "synth/walk").substream(std::uint64_t(u));
        int cluster = walk.next_int(spec.num_clusters);
        for (int e = 0; e < spec.events_per_user; ++e) {
            const std::size_t slot = std::size_t(e) * std::size_t(spec.num_users) + std::size_t(u);
            const bool pre_cutoff = out.events[slot].timestamp < planned_cutoff;
            const auto& pool = pre_cutoff ? warm_members[std::size_t(cluster)] : members[std::size_t(cluster)];
            out.events[slot].item_id = item_name(pool[std::size_t(walk.next_int(int(pool.size())))]);

            // step the cluster chain
            const double r = walk.next_uniform();
            double acc = 0.0;
            int next = spec.num_clusters - 1;
            for (int c = 0; c < spec.num_clusters; ++c) {
                acc += transition[std::size_t(cluster)][std::size_t(c)];
                if (r < acc) {
                    next = c;
                    break;
                }
            }
            cluster = next;
        }
    }
    return out;
}

// Labels file: "item_id TAB cluster_id TAB cold_flag" per item.
inline void save_labels(const std::string& path, const std::vector<SyntheticLabel>& labels) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw data_error("cannot open labels file for writing: " + path);
    for (const auto& l : labels) f << l.item_id << '\t' << l.cluster << '\t' << (l.cold ? 1 : 0) << '\n';
    if (!f) throw data_error("short write to labels file: " + path);
}

}  // namespace denserec
