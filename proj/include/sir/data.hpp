// Dataset manifests, protocol assembly, preprocessing and the seeded
// synthetic multi-domain benchmark generator.

#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "image_io.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace sir {

struct SampleRecord {
    Tensor image; // [1,c,H,W] in [0,1]
    std::string domain;
    bool anomalous = false;
    std::string source;
};

struct DatasetManifest {
    std::string domain;
    std::string base_dir; // paths below are relative to this
    std::vector<std::string> train_normal;
    std::vector<std::string> test_normal;
    std::vector<std::string> test_anomalous;

    std::string resolve(const std::string& rel) const {
        return (std::filesystem::path(base_dir) / rel).string();
    }
};

enum class ProtocolKind {
    one_shot_universal,
    full_shot_universal,
    k_shot_universal,
    one_shot_specialized,
    full_shot_specialized,
};

struct Protocol {
    ProtocolKind kind = ProtocolKind::one_shot_universal;
    int k = 1; // k_shot_universal only
    std::uint64_t seed = 0;
};

inline std::string protocol_name(const Protocol& p) {
    switch (p.kind) {
        case ProtocolKind::one_shot_universal: return "one_shot_universal";
        case ProtocolKind::full_shot_universal: return "full_shot_universal";
        case ProtocolKind::k_shot_universal: return "k_shot_universal(" + std::to_string(p.k) + ")";
        case ProtocolKind::one_shot_specialized: return "one_shot_specialized";
        case ProtocolKind::full_shot_specialized: return "full_shot_specialized";
    }
    return "?";
}

inline Protocol parse_protocol(const std::string& name, std::uint64_t seed) {
    Protocol p;
    p.seed = seed;
    if (name == "one_shot_universal") p.kind = ProtocolKind::one_shot_universal;
    else if (name == "full_shot_universal") p.kind = ProtocolKind::full_shot_universal;
    else if (name == "one_shot_specialized") p.kind = ProtocolKind::one_shot_specialized;
    else if (name == "full_shot_specialized") p.kind = ProtocolKind::full_shot_specialized;
    else if (name.rfind("k_shot_universal", 0) == 0) {
        p.kind = ProtocolKind::k_shot_universal;
        auto lp = name.find('('), rp = name.find(')');
        if (lp == std::string::npos || rp == std::string::npos || rp <= lp + 1)
            fail(ErrorKind::config, "protocol: expected k_shot_universal(k), got '" + name + "'");
        p.k = std::stoi(name.substr(lp + 1, rp - lp - 1));
        if (p.k < 1) fail(ErrorKind::config, "protocol: k must be >= 1");
    } else
        fail(ErrorKind::config, "protocol: unknown protocol '" + name + "'");
    return p;
}

// ---------------------------------------------------------------------------
// Manifest file format: one document per domain.
//
//   domain: <name>
//   train_normal:
//     <relative path>
//   test_normal:
//     <relative path>
//   test_anomalous:
//     <relative path>
//
// Paths resolve relative to the manifest file's directory.
// ---------------------------------------------------------------------------

inline DatasetManifest load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) fail(ErrorKind::io, path + ": cannot open manifest");
    DatasetManifest m;
    m.base_dir = std::filesystem::path(path).parent_path().string();
    std::vector<std::string>* section = nullptr;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::string trimmed = line;
        const auto first = trimmed.find_first_not_of(" \t");
        if (first == std::string::npos || trimmed[first] == '#') continue;
        const bool indented = first > 0;
        trimmed = trimmed.substr(first);
        if (!indented) {
            if (trimmed.rfind("domain:", 0) == 0) {
                auto v = trimmed.substr(7);
                const auto b = v.find_first_not_of(" \t");
                m.domain = b == std::string::npos ? "" : v.substr(b);
                section = nullptr;
            } else if (trimmed == "train_normal:") section = &m.train_normal;
            else if (trimmed == "test_normal:") section = &m.test_normal;
            else if (trimmed == "test_anomalous:") section = &m.test_anomalous;
            else
                fail(ErrorKind::config, path + ":" + std::to_string(lineno) + ": unknown manifest key '" + trimmed + "'");
        } else {
            if (!section)
                fail(ErrorKind::config, path + ":" + std::to_string(lineno) + ": entry outside any section");
            section->push_back(trimmed);
        }
    }
    if (m.domain.empty()) fail(ErrorKind::config, path + ": manifest has no domain name");
    return m;
}

inline void write_manifest(const std::string& path, const DatasetManifest& m) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream f(path);
    if (!f) fail(ErrorKind::io, path + ": cannot write manifest");
    f << "domain: " << m.domain << "\n";
    auto section = [&](const char* key, const std::vector<std::string>& items) {
        f << key << ":\n";
        for (const std::string& s : items) f << "  " << s << "\n";
    };
    section("train_normal", m.train_normal);
    section("test_normal", m.test_normal);
    section("test_anomalous", m.test_anomalous);
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

// Bilinear resize to size x size plus channel adaptation (3->1 luminance,
// 1->3 replication); values stay in [0,1].
inline Tensor preprocess(const Tensor& img, int size, int channels) {
    Tensor t = img;
    if (t.shape.c == 3 && channels == 1) {
        Tensor gray(Shape{t.shape.n, 1, t.shape.h, t.shape.w});
        for (int n = 0; n < t.shape.n; ++n)
            for (int y = 0; y < t.shape.h; ++y)
                for (int x = 0; x < t.shape.w; ++x)
                    gray.at(n, 0, y, x) = 0.299 * t.at(n, 0, y, x) + 0.587 * t.at(n, 1, y, x) +
                                          0.114 * t.at(n, 2, y, x);
        t = std::move(gray);
    } else if (t.shape.c == 1 && channels == 3) {
        Tensor rgb(Shape{t.shape.n, 3, t.shape.h, t.shape.w});
        for (int n = 0; n < t.shape.n; ++n)
            for (int y = 0; y < t.shape.h; ++y)
                for (int x = 0; x < t.shape.w; ++x) {
                    const double v = t.at(n, 0, y, x);
                    rgb.at(n, 0, y, x) = rgb.at(n, 1, y, x) = rgb.at(n, 2, y, x) = v;
                }
        t = std::move(rgb);
    } else if (t.shape.c != channels) {
        fail(ErrorKind::data, "preprocess: cannot adapt " + std::to_string(t.shape.c) + " channels to " +
                                  std::to_string(channels));
    }
    if (t.shape.h != size || t.shape.w != size) t = bilinear_upsample(t, size, size);
    return t;
}

inline SampleRecord load_sample(const std::string& path, const std::string& domain, bool anomalous,
                                int size, int channels) {
    SampleRecord rec;
    rec.image = preprocess(load_image(path), size, channels);
    rec.domain = domain;
    rec.anomalous = anomalous;
    rec.source = path;
    return rec;
}

// ---------------------------------------------------------------------------
// Protocol assembly
// ---------------------------------------------------------------------------

struct DomainTestSet {
    std::string domain;
    std::vector<std::string> normal_paths;    // absolute/resolved
    std::vector<std::string> anomalous_paths; // absolute/resolved
};

// One trained model and its evaluation targets. Universal protocols produce
// a single run over all domains; specialized protocols one run per domain.
struct ProtocolRun {
    std::string name;
    std::vector<std::string> train_paths; // resolved, normals only
    std::vector<DomainTestSet> tests;
};

namespace detail {

// Seeded Fisher-Yates over the sorted path list; selection = first k.
inline std::vector<std::string> select_train(const DatasetManifest& m, std::size_t k, std::uint64_t seed) {
    if (m.train_normal.empty())
        fail(ErrorKind::config, "protocol: domain '" + m.domain + "' has an empty train_normal list");
    std::vector<std::string> paths = m.train_normal;
    std::sort(paths.begin(), paths.end());
    Rng rng(Rng::derive(seed, "select:" + m.domain));
    for (std::size_t i = paths.size() - 1; i > 0; --i)
        std::swap(paths[i], paths[rng.below(i + 1)]);
    if (k < paths.size()) paths.resize(k);
    std::sort(paths.begin(), paths.end());
    std::vector<std::string> resolved;
    for (const std::string& p : paths) resolved.push_back(m.resolve(p));
    return resolved;
}

inline DomainTestSet test_set_of(const DatasetManifest& m) {
    DomainTestSet t;
    t.domain = m.domain;
    for (const std::string& p : m.test_normal) t.normal_paths.push_back(m.resolve(p));
    for (const std::string& p : m.test_anomalous) t.anomalous_paths.push_back(m.resolve(p));
    return t;
}

} // namespace detail

inline std::vector<ProtocolRun> build_protocol(const std::vector<DatasetManifest>& manifests,
                                               const Protocol& protocol) {
    if (manifests.empty()) fail(ErrorKind::config, "protocol: no manifests given");
    const bool universal = protocol.kind == ProtocolKind::one_shot_universal ||
                           protocol.kind == ProtocolKind::full_shot_universal ||
                           protocol.kind == ProtocolKind::k_shot_universal;
    std::size_t per_domain;
    switch (protocol.kind) {
        case ProtocolKind::one_shot_universal:
        case ProtocolKind::one_shot_specialized: per_domain = 1; break;
        case ProtocolKind::k_shot_universal: per_domain = static_cast<std::size_t>(protocol.k); break;
        default: per_domain = static_cast<std::size_t>(-1); break;
    }

    std::vector<ProtocolRun> runs;
    if (universal) {
        ProtocolRun run;
        run.name = protocol_name(protocol);
        for (const DatasetManifest& m : manifests) {
            auto sel = detail::select_train(m, per_domain, protocol.seed);
            run.train_paths.insert(run.train_paths.end(), sel.begin(), sel.end());
            run.tests.push_back(detail::test_set_of(m));
        }
        runs.push_back(std::move(run));
    } else {
        for (const DatasetManifest& m : manifests) {
            ProtocolRun run;
            run.name = protocol_name(protocol) + ":" + m.domain;
            run.train_paths = detail::select_train(m, per_domain, protocol.seed);
            run.tests.push_back(detail::test_set_of(m));
            runs.push_back(std::move(run));
        }
    }
    return runs;
}

// ---------------------------------------------------------------------------
// Synthetic benchmark generator
// ---------------------------------------------------------------------------

struct SynthSpec {
    int domains = 3;
    int train_normals = 20;
    int test_normals = 20;
    int test_anomalies = 20;
    int size = 64;
    double defect_contrast = 0.9;
    double defect_radius = 12.0; // pixels, blob defects
    std::uint64_t seed = 42;
};

namespace detail {

// Domain appearance families; each domain instance draws its own parameters.
struct DomainModel {
    int family = 0; // 0 texture, 1 grid, 2 radial
    double f1x, f1y, f2x, f2y; // texture frequencies
    double grid_period;
    double cx, cy, rscale;     // radial center + falloff
    double base, amp;
};

inline DomainModel make_domain_model(int index, std::uint64_t seed) {
    Rng rng(Rng::derive(seed, "synth:domain:" + std::to_string(index)));
    DomainModel d;
    d.family = index % 3;
    d.f1x = rng.uniform(2.0, 5.0);
    d.f1y = rng.uniform(2.0, 5.0);
    d.f2x = rng.uniform(6.0, 11.0);
    d.f2y = rng.uniform(6.0, 11.0);
    d.grid_period = rng.uniform(6.0, 12.0);
    d.cx = rng.uniform(0.35, 0.65);
    d.cy = rng.uniform(0.35, 0.65);
    d.rscale = rng.uniform(0.8, 1.4);
    d.base = rng.uniform(0.4, 0.6);
    d.amp = rng.uniform(0.22, 0.3);
    return d;
}

inline Tensor synth_normal(const DomainModel& d, int size, Rng& rng) {
    // small per-image variation: phase jitter plus pixel noise
    const double ph1 = rng.uniform(0.0, 0.6);
    const double ph2 = rng.uniform(0.0, 0.6);
    const double shift = rng.uniform(-0.03, 0.03);
    Tensor img(Shape{1, 1, size, size});
    constexpr double tau = 6.283185307179586476925286766559;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double u = static_cast<double>(x) / size;
            const double v = static_cast<double>(y) / size;
            double p;
            switch (d.family) {
                case 0:
                    p = d.base + d.amp * 0.5 *
                                     (std::sin(tau * (d.f1x * u + d.f1y * v) + ph1) +
                                      std::sin(tau * (d.f2x * u - d.f2y * v) + ph2));
                    break;
                case 1: {
                    const double gx = std::sin(tau * size * u / d.grid_period + ph1);
                    const double gy = std::sin(tau * size * v / d.grid_period + ph2);
                    p = d.base + d.amp * (gx * gy > 0.0 ? 0.8 : -0.8);
                    break;
                }
                default: {
                    const double dx = (u - d.cx - shift) / d.rscale;
                    const double dy = (v - d.cy - shift) / d.rscale;
                    p = d.base + d.amp * std::cos(tau * 1.5 * std::sqrt(dx * dx + dy * dy) + ph1);
                    break;
                }
            }
            p += 0.02 * rng.normal();
            if (p < 0.0) p = 0.0;
            if (p > 1.0) p = 1.0;
            img.at(0, 0, y, x) = p;
        }
    return img;
}

// Defect families cycle per sample index; contrast 0 is an exact no-op for
// every family (negative-control fixture).
inline void inject_defect(Tensor& img, const DomainModel& d, const SynthSpec& spec, int index, Rng& rng) {
    const int size = img.shape.h;
    const int kind = index % 3;
    const double cx = rng.uniform(0.25, 0.75) * size;
    const double cy = rng.uniform(0.25, 0.75) * size;
    const double contrast = spec.defect_contrast;
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    if (kind == 0) {
        // additive gaussian blob
        const double sigma = spec.defect_radius / 2.0;
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const double r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                double v = img.at(0, 0, y, x) + sign * contrast * std::exp(-0.5 * r2 / (sigma * sigma));
                if (v < 0.0) v = 0.0;
                if (v > 1.0) v = 1.0;
                img.at(0, 0, y, x) = v;
            }
    } else if (kind == 1) {
        // rectangular occlusion blended toward a constant
        const int half = static_cast<int>(spec.defect_radius);
        const double fill = rng.uniform(0.0, 1.0);
        for (int y = std::max(0, static_cast<int>(cy) - half); y < std::min(size, static_cast<int>(cy) + half); ++y)
            for (int x = std::max(0, static_cast<int>(cx) - half); x < std::min(size, static_cast<int>(cx) + half); ++x)
                img.at(0, 0, y, x) = (1.0 - contrast) * img.at(0, 0, y, x) + contrast * fill;
    } else {
        // local texture swap: blend a patch with the content of a shifted patch
        const int half = static_cast<int>(spec.defect_radius);
        const int sx = static_cast<int>(rng.uniform(0.2, 0.8) * size);
        const int sy = static_cast<int>(rng.uniform(0.2, 0.8) * size);
        Tensor src = img;
        for (int dy = -half; dy < half; ++dy)
            for (int dx = -half; dx < half; ++dx) {
                const int ty = static_cast<int>(cy) + dy, tx = static_cast<int>(cx) + dx;
                int fy = sy + dy, fx = sx + dx;
                if (ty < 0 || ty >= size || tx < 0 || tx >= size) continue;
                fy = std::clamp(fy, 0, size - 1);
                fx = std::clamp(fx, 0, size - 1);
                // transpose the source patch so structure visibly breaks
                img.at(0, 0, ty, tx) = (1.0 - contrast) * img.at(0, 0, ty, tx) + contrast * src.at(0, 0, fx, fy);
            }
    }
    (void)d;
}

} // namespace detail

// Generates `spec.domains` synthetic domains under out_dir, writes P5 images
// plus one manifest per domain, and returns the manifests. Fully determined
// by spec.seed.
inline std::vector<DatasetManifest> synth_benchmark(const std::string& out_dir, const SynthSpec& spec) {
    if (spec.domains < 1) fail(ErrorKind::config, "synth_benchmark: need at least one domain");
    if (spec.test_anomalies < 1)
        fail(ErrorKind::config, "synth_benchmark: zero requested test anomalies");
    std::vector<DatasetManifest> manifests;
    const char* family_names[] = {"texture", "grid", "radial"};
    for (int d = 0; d < spec.domains; ++d) {
        const detail::DomainModel dm = detail::make_domain_model(d, spec.seed);
        DatasetManifest man;
        man.domain = std::string(family_names[dm.family]) + std::to_string(d);
        const std::string ddir = (std::filesystem::path(out_dir) / man.domain).string();
        man.base_dir = ddir;
        auto emit = [&](const char* split, int count, bool anomalous, std::vector<std::string>& list) {
            for (int i = 0; i < count; ++i) {
                Rng rng(Rng::derive(spec.seed, "synth:" + man.domain + ":" + split + ":" + std::to_string(i)));
                Tensor img = detail::synth_normal(dm, spec.size, rng);
                if (anomalous) detail::inject_defect(img, dm, spec, i, rng);
                char name[64];
                std::snprintf(name, sizeof(name), "%s_%03d.pgm", split, i);
                write_image((std::filesystem::path(ddir) / name).string(), img);
                list.push_back(name);
            }
        };
        emit("train", spec.train_normals, false, man.train_normal);
        emit("test_normal", spec.test_normals, false, man.test_normal);
        emit("test_anom", spec.test_anomalies, true, man.test_anomalous);
        write_manifest((std::filesystem::path(ddir) / "manifest.txt").string(), man);
        manifests.push_back(std::move(man));
    }
    return manifests;
}

} // namespace sir
