#pragma once

#include <cctype>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <string>
#include <vector>

#include "denserec/errors.hpp"
#include "denserec/model.hpp"
#include "denserec/synthetic.hpp"
#include "denserec/training.hpp"

namespace denserec {

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

inline long long parse_i64(const std::string& key, const std::string& value) {
    char* end = nullptr;
    const long long v = std::strtoll(value.c_str(), &end, 10);
    if (end == value.c_str() || *end != '\0')
        throw config_error("config key '" + key + "' expects an integer, got '" + value + "'");
    return v;
}

inline double parse_f64(const std::string& key, const std::string& value) {
    char* end = nullptr;
    const double v = std::strtod(value.c_str(), &end);
    if (end == value.c_str() || *end != '\0')
        throw config_error("config key '" + key + "' expects a number, got '" + value + "'");
    return v;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw config_error("config key '" + key + "' expects true/false, got '" + value + "'");
}

inline std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        const std::size_t comma = s.find(',', start);
        const std::size_t end = comma == std::string::npos ? s.size() : comma;
        out.push_back(trim(s.substr(start, end - start)));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

inline std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
    std::vector<int> out;
    for (const std::string& piece : split_commas(value)) {
        if (piece.empty()) throw config_error("config key '" + key + "' has an empty list entry");
        out.push_back(int(parse_i64(key, piece)));
    }
    if (out.empty()) throw config_error("config key '" + key + "' expects a non-empty list");
    return out;
}

inline std::vector<double> parse_double_list(const std::string& key, const std::string& value) {
    std::vector<double> out;
    for (const std::string& piece : split_commas(value)) {
        if (piece.empty()) throw config_error("config key '" + key + "' has an empty list entry");
        out.push_back(parse_f64(key, piece));
    }
    if (out.empty()) throw config_error("config key '" + key + "' expects a non-empty list");
    return out;
}

}  // namespace detail

// Everything one run needs, assembled from defaults, then a key=value config
// file, then command-line flags (later sources win). Unknown keys are
// rejected so typos cannot silently fall back to defaults.
struct RunConfig {
    // artifact paths
    std::string events_path;      // raw interactions for `prepare`
    std::string embeddings_path;  // content vectors for train/eval/sweep
    std::string out_dir = "out";
    std::string data_dir;    // prepared splits; defaults to out_dir
    std::string model_path;  // defaults to <out_dir>/model.ckpt

    // pipeline
    double train_frac = 0.8;
    double valid_frac = 0.1;
    int min_item_count = 5;
    int min_user_count = 2;
    int max_malformed_lines = 100;

    ModelConfig model;     // d_c is filled from the embeddings file at load time
    TrainConfig training;  // training.seed is overwritten by `seed`

    std::uint64_t seed = 1;
    std::vector<int> k_list = {100, 10};
    int workers = 1;
    bool mode_from_flag = false;  // set when --mode was given; lets eval re-mode a checkpoint
    std::vector<double> sweep_values;  // empty -> default_sweep_grid()

    SyntheticSpec synth;

    static std::vector<double> default_sweep_grid() {
        std::vector<double> v;
        for (int i = 0; i <= 10; ++i) v.push_back(double(i) / 10.0);
        return v;
    }

    std::string resolved_data_dir() const { return data_dir.empty() ? out_dir : data_dir; }
    std::string resolved_model_path() const { return model_path.empty() ? out_dir + "/model.ckpt" : model_path; }
    std::vector<double> resolved_sweep_values() const {
        return sweep_values.empty() ? default_sweep_grid() : sweep_values;
    }

    void apply(const std::string& key, const std::string& value) {
        using namespace detail;
        if (key == "events_path") events_path = value;
        else if (key == "embeddings_path") embeddings_path = value;
        else if (key == "out_dir") out_dir = value;
        else if (key == "data_dir") data_dir = value;
        else if (key == "model_path") model_path = value;
        else if (key == "train_frac") train_frac = parse_f64(key, value);
        else if (key == "valid_frac") valid_frac = parse_f64(key, value);
        else if (key == "min_item_count") min_item_count = int(parse_i64(key, value));
        else if (key == "min_user_count") min_user_count = int(parse_i64(key, value));
        else if (key == "max_malformed_lines") max_malformed_lines = int(parse_i64(key, value));
        else if (key == "d") model.d = int(parse_i64(key, value));
        else if (key == "num_blocks") model.num_blocks = int(parse_i64(key, value));
        else if (key == "num_heads") model.num_heads = int(parse_i64(key, value));
        else if (key == "max_len") model.max_len = int(parse_i64(key, value));
        else if (key == "dropout") model.dropout_rate = parse_f64(key, value);
        else if (key == "num_negatives") model.num_negatives = int(parse_i64(key, value));
        else if (key == "use_positional") model.use_positional = parse_bool(key, value);
        else if (key == "p_dense") model.p_dense = parse_f64(key, value);
        else if (key == "mode") model.mode = mode_from_string(value);
        else if (key == "epochs") training.epochs = int(parse_i64(key, value));
        else if (key == "batch_size") training.batch_size = int(parse_i64(key, value));
        else if (key == "learning_rate") training.adam.lr = parse_f64(key, value);
        else if (key == "grad_clip") training.grad_clip = parse_f64(key, value);
        else if (key == "log_every") training.log_every = int(parse_i64(key, value));
        else if (key == "seed") seed = std::uint64_t(parse_i64(key, value));
        else if (key == "k") k_list = parse_int_list(key, value);
        else if (key == "workers") workers = int(parse_i64(key, value));
        else if (key == "sweep_values") sweep_values = parse_double_list(key, value);
        else if (key == "synth_num_items") synth.num_items = int(parse_i64(key, value));
        else if (key == "synth_num_users") synth.num_users = int(parse_i64(key, value));
        else if (key == "synth_num_clusters") synth.num_clusters = int(parse_i64(key, value));
        else if (key == "synth_cold_fraction") synth.cold_fraction = parse_f64(key, value);
        else if (key == "synth_noise") synth.noise = parse_f64(key, value);
        else if (key == "synth_concentration") synth.concentration = parse_f64(key, value);
        else if (key == "synth_content_dim") synth.content_dim = int(parse_i64(key, value));
        else if (key == "synth_events_per_user") synth.events_per_user = int(parse_i64(key, value));
        else if (key == "synth_train_frac") synth.train_frac = parse_f64(key, value);
        else throw config_error("unknown config key '" + key + "'");
    }

    // Lines are `key = value`; blank lines and lines starting with '#' are
    // skipped. Errors carry the file path and line number.
    void load_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw config_error("cannot open config file: " + path);
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            const std::string stripped = detail::trim(line);
            if (stripped.empty() || stripped[0] == '#') continue;
            const std::size_t eq = stripped.find('=');
            if (eq == std::string::npos)
                throw config_error(path + ":" + std::to_string(line_no) + ": expected 'key = value'");
            const std::string key = detail::trim(stripped.substr(0, eq));
            const std::string value = detail::trim(stripped.substr(eq + 1));
            if (key.empty()) throw config_error(path + ":" + std::to_string(line_no) + ": empty key");
            try {
                apply(key, value);
            } catch (const config_error& e) {
                throw config_error(path + ":" + std::to_string(line_no) + ": " + e.what());
            }
        }
    }

    void validate() const {
        if (!(train_frac > 0.0) || valid_frac < 0.0 || train_frac + valid_frac >= 1.0)
            throw config_error("split fractions must satisfy train_frac > 0, valid_frac >= 0, sum < 1");
        if (min_item_count < 0 || min_user_count < 0) throw config_error("min counts must be >= 0");
        if (workers <= 0) throw config_error("workers must be positive, got " + std::to_string(workers));
        for (int k : k_list)
            if (k <= 0) throw config_error("k values must be positive, got " + std::to_string(k));
        for (double p : resolved_sweep_values())
            if (p < 0.0 || p > 1.0) throw config_error("sweep values must lie in [0,1]");
        training.validate();
    }
};

}  // namespace denserec
