#pragma once

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "vadnet/error.hpp"
#include "vadnet/model.hpp"

// Text checkpoint. Doubles are written as C99 hex floats so a save/load
// round trip is bit-exact.
//
//   vadnet-checkpoint 1
//   dimension valence
//   preset mini
//   width 4
//   seed 42
//   ortho_layers all            (or a comma list, or "none")
//   iteration 2000
//   meta <key> <value>          (free-form, zero or more)
//   tensor conv0.weight 4 4 1 3 3
//   <hex values, one line>
//   stats norm0 <channels> <momentum> <eps>
//   <running mean line>
//   <running var line>
//   end

namespace vadnet {

inline constexpr std::string_view kCheckpointMagic = "vadnet-checkpoint";
inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline std::string hex(double value) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", value);
    return buf;
}

inline void write_values(std::ostream& out, std::span<const double> values) {
    for (std::size_t i = 0; i < values.size(); ++i) out << (i ? " " : "") << hex(values[i]);
    out << '\n';
}

inline double parse_hex(const std::string& token) {
    errno = 0;
    char* end = nullptr;
    const double value = std::strtod(token.c_str(), &end);
    if (end == token.c_str() || *end != '\0' || errno == ERANGE) {
        throw Error(ErrorKind::Parse, "checkpoint: bad number '" + token + "'");
    }
    return value;
}

inline std::vector<double> read_values(std::istream& in, std::size_t count) {
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorKind::Parse, "checkpoint: truncated value line");
    std::istringstream fields(line);
    std::vector<double> values;
    values.reserve(count);
    for (std::string token; fields >> token;) values.push_back(parse_hex(token));
    if (values.size() != count) {
        throw Error(ErrorKind::Parse, "checkpoint: expected " + std::to_string(count) + " values, got " +
                                          std::to_string(values.size()));
    }
    return values;
}

}  // namespace detail

struct CheckpointMeta {
    std::map<std::string, std::string> entries;
};

inline void save_checkpoint(std::ostream& out, const DimensionModel& model, const CheckpointMeta& meta = {}) {
    const NetworkConfig& cfg = model.config;
    out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
    out << "dimension " << dimension_name(model.dimension) << '\n';
    out << "preset " << preset_name(cfg.preset) << '\n';
    out << "width " << cfg.resolved_width() << '\n';
    out << "seed " << cfg.seed << '\n';
    out << "ortho_layers ";
    if (!cfg.ortho_layers) {
        out << "all";
    } else if (cfg.ortho_layers->empty()) {
        out << "none";
    } else {
        bool first = true;
        for (std::size_t layer : *cfg.ortho_layers) {
            out << (first ? "" : ",") << layer;
            first = false;
        }
    }
    out << '\n';
    out << "iteration " << model.iteration << '\n';
    for (const auto& [key, value] : meta.entries) out << "meta " << key << ' ' << value << '\n';
    for (const auto& [name, tensor] : model.named_parameters()) {
        out << "tensor " << name << ' ' << tensor.rank();
        for (std::size_t e : tensor.shape()) out << ' ' << e;
        out << '\n';
        detail::write_values(out, tensor.data());
    }
    for (std::size_t i = 0; i < model.norms.size(); ++i) {
        const BatchNormState& s = model.norms[i].state;
        out << "stats norm" << i << ' ' << s.running_mean.size() << ' ' << detail::hex(s.momentum) << ' '
            << detail::hex(s.eps) << '\n';
        detail::write_values(out, s.running_mean);
        detail::write_values(out, s.running_var);
    }
    out << "end\n";
    if (!out) throw Error(ErrorKind::Io, "checkpoint: write failed");
}

struct LoadedCheckpoint {
    DimensionModel model;
    CheckpointMeta meta;
};

/// Rebuilds the architecture from the header, then overwrites every
/// parameter and running statistic with the stored values.
inline LoadedCheckpoint load_checkpoint(std::istream& in) {
    std::string line;
    auto next = [&](const char* what) {
        if (!std::getline(in, line)) throw Error(ErrorKind::Parse, std::string("checkpoint: missing ") + what);
        return std::istringstream(line);
    };
    auto expect_key = [&](const char* key) {
        auto fields = next(key);
        std::string k, v;
        fields >> k >> v;
        if (k != key || v.empty()) throw Error(ErrorKind::Parse, std::string("checkpoint: expected '") + key + "'");
        return v;
    };

    {
        auto fields = next("header");
        std::string magic;
        int version = 0;
        fields >> magic >> version;
        if (magic != kCheckpointMagic) throw Error(ErrorKind::Parse, "checkpoint: not a vadnet checkpoint");
        if (version != kCheckpointVersion) {
            throw Error(ErrorKind::Parse, "checkpoint: unsupported version " + std::to_string(version));
        }
    }
    const auto dim = parse_dimension(expect_key("dimension"));
    if (!dim) throw Error(ErrorKind::Parse, "checkpoint: unknown dimension");
    NetworkConfig cfg;
    const auto preset = parse_preset(expect_key("preset"));
    if (!preset) throw Error(ErrorKind::Parse, "checkpoint: unknown preset");
    cfg.preset = *preset;
    try {
        cfg.width = std::stoul(expect_key("width"));
        cfg.seed = std::stoull(expect_key("seed"));
    } catch (const std::logic_error&) {
        throw Error(ErrorKind::Parse, "checkpoint: bad width or seed");
    }
    const std::string layers = expect_key("ortho_layers");
    if (layers == "none") {
        cfg.ortho_layers = std::set<std::size_t>{};
    } else if (layers != "all") {
        std::set<std::size_t> set;
        std::istringstream list(layers);
        for (std::string item; std::getline(list, item, ',');) {
            try {
                set.insert(std::stoul(item));
            } catch (const std::logic_error&) {
                throw Error(ErrorKind::Parse, "checkpoint: bad ortho layer '" + item + "'");
            }
        }
        cfg.ortho_layers = std::move(set);
    }
    LoadedCheckpoint loaded{build_model(cfg, *dim), {}};
    DimensionModel& model = loaded.model;
    try {
        model.iteration = std::stoull(expect_key("iteration"));
    } catch (const std::logic_error&) {
        throw Error(ErrorKind::Parse, "checkpoint: bad iteration");
    }

    std::map<std::string, Tensor> by_name;
    for (auto& [name, tensor] : model.named_parameters()) by_name.emplace(name, tensor);
    std::size_t tensors_read = 0;
    std::size_t stats_read = 0;
    while (true) {
        auto fields = next("end marker");
        std::string tag;
        fields >> tag;
        if (tag == "end") break;
        if (tag == "meta") {
            std::string key, value;
            fields >> key;
            std::getline(fields >> std::ws, value);
            loaded.meta.entries[key] = value;
        } else if (tag == "tensor") {
            std::string name;
            std::size_t rank = 0;
            fields >> name >> rank;
            Shape shape(rank);
            for (std::size_t& e : shape) fields >> e;
            const auto it = by_name.find(name);
            if (it == by_name.end()) throw Error(ErrorKind::Parse, "checkpoint: unexpected tensor " + name);
            Tensor target = it->second;
            if (!fields || target.shape() != shape) {
                throw Error(ErrorKind::InvalidShape, "checkpoint: tensor " + name + " has shape " +
                                                         shape_string(shape) + ", model expects " +
                                                         shape_string(target.shape()));
            }
            const auto values = detail::read_values(in, target.size());
            std::copy(values.begin(), values.end(), target.mutable_data().begin());
            ++tensors_read;
        } else if (tag == "stats") {
            std::string name, momentum, eps;
            std::size_t channels = 0;
            fields >> name >> channels >> momentum >> eps;
            std::size_t index = 0;
            if (name.rfind("norm", 0) != 0 || (index = std::stoul(name.substr(4))) >= model.norms.size()) {
                throw Error(ErrorKind::Parse, "checkpoint: unexpected stats " + name);
            }
            BatchNormState& s = model.norms[index].state;
            if (channels != s.running_mean.size()) throw Error(ErrorKind::InvalidShape, "checkpoint: stats size");
            s.momentum = detail::parse_hex(momentum);
            s.eps = detail::parse_hex(eps);
            s.running_mean = detail::read_values(in, channels);
            s.running_var = detail::read_values(in, channels);
            ++stats_read;
        } else {
            throw Error(ErrorKind::Parse, "checkpoint: unknown record '" + tag + "'");
        }
    }
    if (tensors_read != by_name.size() || stats_read != model.norms.size()) {
        throw Error(ErrorKind::Parse, "checkpoint: incomplete (" + std::to_string(tensors_read) + "/" +
                                          std::to_string(by_name.size()) + " tensors)");
    }
    return loaded;
}

inline void save_checkpoint(const std::string& path, const DimensionModel& model, const CheckpointMeta& meta = {}) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
    save_checkpoint(out, model, meta);
}

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
    return load_checkpoint(in);
}

}  // namespace vadnet
