#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "denserec/errors.hpp"
#include "denserec/model.hpp"

namespace denserec {

// Binary checkpoint: magic "DREC", u32 format version, a length-prefixed
// key=value text block describing the model configuration, then every
// parameter in canonical order as (name, rank, extents, little-endian f32
// data). Values are stored at 32-bit precision; save -> load -> save is a
// byte-for-byte fixed point.
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(char(v & 0xff));
    out.push_back(char((v >> 8) & 0xff));
    out.push_back(char((v >> 16) & 0xff));
    out.push_back(char((v >> 24) & 0xff));
}

inline void put_f32(std::string& out, double v) {
    const float f = float(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}

inline std::string format_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

class ByteReader {
public:
    ByteReader(const std::string& bytes, const std::string& path) : bytes_(bytes), path_(path) {}

    std::uint32_t u32() {
        need(4);
        const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes_.data()) + pos_;
        pos_ += 4;
        return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
               (std::uint32_t(p[3]) << 24);
    }

    double f32() {
        const std::uint32_t bits = u32();
        float f;
        std::memcpy(&f, &bits, 4);
        return double(f);
    }

    std::string str(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool at_end() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) {
        if (pos_ + n > bytes_.size()) throw data_error("truncated checkpoint file: " + path_);
    }

    const std::string& bytes_;
    std::string path_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_model_config(const ModelConfig& cfg, int num_train_items) {
    std::string s;
    s += "mode=" + to_string(cfg.mode) + "\n";
    s += "d=" + std::to_string(cfg.d) + "\n";
    s += "d_c=" + std::to_string(cfg.d_c) + "\n";
    s += "num_blocks=" + std::to_string(cfg.num_blocks) + "\n";
    s += "num_heads=" + std::to_string(cfg.num_heads) + "\n";
    s += "max_len=" + std::to_string(cfg.max_len) + "\n";
    s += "dropout_rate=" + detail::format_real(cfg.dropout_rate) + "\n";
    s += "p_dense=" + detail::format_real(cfg.p_dense) + "\n";
    s += "num_negatives=" + std::to_string(cfg.num_negatives) + "\n";
    s += "use_positional=" + std::string(cfg.use_positional ? "1" : "0") + "\n";
    s += "num_train_items=" + std::to_string(num_train_items) + "\n";
    return s;
}

inline void parse_model_config(const std::string& text, ModelConfig& cfg, int& num_train_items,
                               const std::string& path) {
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        const std::string line = text.substr(start, end - start);
        start = end + 1;
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) throw data_error("malformed config line in checkpoint " + path + ": " + line);
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        try {
            if (key == "mode") cfg.mode = mode_from_string(val);
            else if (key == "d") cfg.d = std::stoi(val);
            else if (key == "d_c") cfg.d_c = std::stoi(val);
            else if (key == "num_blocks") cfg.num_blocks = std::stoi(val);
            else if (key == "num_heads") cfg.num_heads = std::stoi(val);
            else if (key == "max_len") cfg.max_len = std::stoi(val);
            else if (key == "dropout_rate") cfg.dropout_rate = std::stod(val);
            else if (key == "p_dense") cfg.p_dense = std::stod(val);
            else if (key == "num_negatives") cfg.num_negatives = std::stoi(val);
            else if (key == "use_positional") cfg.use_positional = (val == "1");
            else if (key == "num_train_items") num_train_items = std::stoi(val);
            else throw data_error("unknown config key in checkpoint " + path + ": " + key);
        } catch (const std::invalid_argument&) {
            throw data_error("bad config value in checkpoint " + path + ": " + line);
        } catch (const std::out_of_range&) {
            throw data_error("bad config value in checkpoint " + path + ": " + line);
        }
    }
}

// Serializes to <path>.tmp first and renames into place, so an interrupted
// save never leaves a half-written file under the final name.
inline void save_checkpoint(ModelState& state, const std::string& path) {
    std::string out;
    out += "DREC";
    detail::put_u32(out, kCheckpointVersion);

    const std::string cfg_text = serialize_model_config(state.cfg, state.num_train_items);
    detail::put_u32(out, std::uint32_t(cfg_text.size()));
    out += cfg_text;

    std::uint32_t count = 0;
    state.for_each_parameter([&](Parameter&) { ++count; });
    detail::put_u32(out, count);

    state.for_each_parameter([&](Parameter& p) {
        detail::put_u32(out, std::uint32_t(p.name.size()));
        out += p.name;
        detail::put_u32(out, std::uint32_t(p.value.rank()));
        for (int a = 0; a < p.value.rank(); ++a) detail::put_u32(out, std::uint32_t(p.value.dim(a)));
        for (std::size_t i = 0; i < p.value.size(); ++i) detail::put_f32(out, p.value[i]);
    });

    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw data_error("cannot open checkpoint file for writing: " + tmp);
        f.write(out.data(), std::streamsize(out.size()));
        if (!f) throw data_error("short write to checkpoint file: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw data_error("cannot move checkpoint into place: " + path);
}

inline ModelState load_checkpoint(const std::string& path) {
    std::string bytes;
    {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw data_error("cannot open checkpoint file: " + path);
        bytes.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
    }
    detail::ByteReader r(bytes, path);
    if (r.str(4) != "DREC") throw data_error("bad checkpoint magic in " + path);
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw data_error("unsupported checkpoint version " + std::to_string(version) + " in " + path);

    ModelConfig cfg;
    int num_train_items = 0;
    parse_model_config(r.str(r.u32()), cfg, num_train_items, path);

    ModelState state = ModelState::init(cfg, num_train_items, /*seed=*/0);
    std::vector<Parameter*> params;
    state.for_each_parameter([&](Parameter& p) { params.push_back(&p); });

    const std::uint32_t count = r.u32();
    if (count != params.size())
        throw data_error("checkpoint " + path + " holds " + std::to_string(count) + " parameters, expected " +
                         std::to_string(params.size()));
    for (Parameter* p : params) {
        const std::string name = r.str(r.u32());
        if (name != p->name)
            throw data_error("checkpoint " + path + " parameter order mismatch: got '" + name + "', expected '" +
                             p->name + "'");
        const std::uint32_t rank = r.u32();
        if (int(rank) != p->value.rank()) throw data_error("checkpoint " + path + ": rank mismatch for " + name);
        for (int a = 0; a < p->value.rank(); ++a) {
            if (int(r.u32()) != p->value.dim(a))
                throw data_error("checkpoint " + path + ": extent mismatch for " + name);
        }
        for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] = r.f32();
    }
    if (!r.at_end()) throw data_error("trailing bytes after checkpoint payload in " + path);
    return state;
}

}  // namespace denserec
