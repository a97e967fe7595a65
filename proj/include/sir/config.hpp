// Run configuration: a flat key=value document with dotted section keys.
// Flags override file values; the resolved result is echoed beside outputs.

#pragma once

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "data.hpp"
#include "persist.hpp"
#include "tensor.hpp"
#include "viz.hpp"

namespace sir {

struct Config {
    std::uint64_t seed = 42;
    int image_size = 64;
    int channels = 1;
    int base_channels = 16;
    int loops = 3;
    int iterations = 500;
    int batch_size = 16;
    double learning_rate = 1e-4;
    double sigma_smooth = 4.0;
    double epsilon_cos = 1e-8;
    double leaky_slope = 0.1;
    std::string protocol = "one_shot_universal";
    std::vector<std::string> manifest_paths;
    std::string out_dir;
    RenderSpec render;
    SynthSpec synth;
};

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void validate_config(const Config& c) {
    auto positive = [](double v, const char* name) {
        if (!(v > 0)) fail(ErrorKind::config, std::string("config: ") + name + " must be positive");
    };
    positive(c.image_size, "image_size");
    positive(c.channels, "channels");
    positive(c.base_channels, "base_channels");
    positive(c.iterations, "iterations");
    positive(c.batch_size, "batch_size");
    positive(c.learning_rate, "learning_rate");
    positive(c.sigma_smooth, "sigma_smooth");
    positive(c.epsilon_cos, "epsilon_cos");
    positive(c.leaky_slope, "leaky_slope");
    if (c.loops < 1) fail(ErrorKind::config, "config: loops must be >= 1");
    if (c.image_size % 16 != 0) fail(ErrorKind::config, "config: image_size must be divisible by 16");
    if (c.channels != 1 && c.channels != 3) fail(ErrorKind::config, "config: channels must be 1 or 3");
    parse_protocol(c.protocol, c.seed); // rejects unknown protocols
    if (!(c.render.p_lo < c.render.p_hi)) fail(ErrorKind::config, "config: render.p_lo must be below render.p_hi");
    if (c.render.alpha < 0.0 || c.render.alpha > 1.0) fail(ErrorKind::config, "config: render.alpha must be in [0,1]");
}

inline void apply_config_kv(Config& c, const std::string& key, const std::string& value) {
    try {
        if (key == "seed") c.seed = std::stoull(value);
        else if (key == "image_size") c.image_size = std::stoi(value);
        else if (key == "channels") c.channels = std::stoi(value);
        else if (key == "base_channels") c.base_channels = std::stoi(value);
        else if (key == "loops") c.loops = std::stoi(value);
        else if (key == "iterations") c.iterations = std::stoi(value);
        else if (key == "batch_size") c.batch_size = std::stoi(value);
        else if (key == "learning_rate") c.learning_rate = std::stod(value);
        else if (key == "sigma_smooth") c.sigma_smooth = std::stod(value);
        else if (key == "epsilon_cos") c.epsilon_cos = std::stod(value);
        else if (key == "leaky_slope") c.leaky_slope = std::stod(value);
        else if (key == "protocol") c.protocol = value;
        else if (key == "out_dir") c.out_dir = value;
        else if (key == "manifests") {
            c.manifest_paths.clear();
            std::istringstream is(value);
            std::string item;
            while (std::getline(is, item, ',')) {
                if (!item.empty()) c.manifest_paths.push_back(item);
            }
        } else if (key == "render.p_lo") c.render.p_lo = std::stod(value);
        else if (key == "render.p_hi") c.render.p_hi = std::stod(value);
        else if (key == "render.alpha") c.render.alpha = std::stod(value);
        else if (key == "render.colormap") c.render.colormap = value;
        else if (key == "synth.domains") c.synth.domains = std::stoi(value);
        else if (key == "synth.train_normals") c.synth.train_normals = std::stoi(value);
        else if (key == "synth.test_normals") c.synth.test_normals = std::stoi(value);
        else if (key == "synth.test_anomalies") c.synth.test_anomalies = std::stoi(value);
        else if (key == "synth.size") c.synth.size = std::stoi(value);
        else if (key == "synth.defect_contrast") c.synth.defect_contrast = std::stod(value);
        else if (key == "synth.defect_radius") c.synth.defect_radius = std::stod(value);
        else if (key == "synth.seed") c.synth.seed = std::stoull(value);
        else fail(ErrorKind::config, "config: unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
        fail(ErrorKind::config, "config: invalid value '" + value + "' for key '" + key + "'");
    } catch (const std::out_of_range&) {
        fail(ErrorKind::config, "config: out-of-range value '" + value + "' for key '" + key + "'");
    }
}

inline Config load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) fail(ErrorKind::io, path + ": cannot open config file");
    std::stringstream ss;
    ss << f.rdbuf();
    Config c;
    for (const auto& [k, v] : parse_kv(ss.str())) apply_config_kv(c, k, v);
    return c;
}

// Canonical echo of the fully resolved configuration, stable across runs.
inline std::string config_echo(const Config& c) {
    std::ostringstream os;
    os << "seed = " << c.seed << "\n";
    os << "image_size = " << c.image_size << "\n";
    os << "channels = " << c.channels << "\n";
    os << "base_channels = " << c.base_channels << "\n";
    os << "loops = " << c.loops << "\n";
    os << "iterations = " << c.iterations << "\n";
    os << "batch_size = " << c.batch_size << "\n";
    os << "learning_rate = " << fmt_double(c.learning_rate) << "\n";
    os << "sigma_smooth = " << fmt_double(c.sigma_smooth) << "\n";
    os << "epsilon_cos = " << fmt_double(c.epsilon_cos) << "\n";
    os << "leaky_slope = " << fmt_double(c.leaky_slope) << "\n";
    os << "protocol = " << c.protocol << "\n";
    std::string joined;
    for (const std::string& m : c.manifest_paths) {
        if (!joined.empty()) joined += ",";
        joined += m;
    }
    os << "manifests = " << joined << "\n";
    os << "out_dir = " << c.out_dir << "\n";
    os << "render.p_lo = " << fmt_double(c.render.p_lo) << "\n";
    os << "render.p_hi = " << fmt_double(c.render.p_hi) << "\n";
    os << "render.alpha = " << fmt_double(c.render.alpha) << "\n";
    os << "render.colormap = " << c.render.colormap << "\n";
    os << "synth.domains = " << c.synth.domains << "\n";
    os << "synth.train_normals = " << c.synth.train_normals << "\n";
    os << "synth.test_normals = " << c.synth.test_normals << "\n";
    os << "synth.test_anomalies = " << c.synth.test_anomalies << "\n";
    os << "synth.size = " << c.synth.size << "\n";
    os << "synth.defect_contrast = " << fmt_double(c.synth.defect_contrast) << "\n";
    os << "synth.defect_radius = " << fmt_double(c.synth.defect_radius) << "\n";
    os << "synth.seed = " << c.synth.seed << "\n";
    return os.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) fail(ErrorKind::io, path + ": cannot open for writing");
    f << text;
    if (!f) fail(ErrorKind::io, path + ": write failed");
}

} // namespace sir
