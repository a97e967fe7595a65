// Bit-exact checkpoint serialization.
//
// File layout (all integers little-endian):
//   magic "SIRCKPT1" (8 bytes; the trailing digit is the format version,
//   a '2' is reserved for a future 32-bit payload variant)
//   u32 entry count
//   per entry: u32 name length, name bytes, u8 rank, u32 extent per rank
//              dimension, payload as 64-bit LE doubles in row-major order
//   u32 config-echo length, config-echo bytes (textual key=value document)

#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "model.hpp"
#include "optim.hpp"
#include "tensor.hpp"

namespace sir {

struct CheckpointEntry {
    std::string name;
    std::vector<std::uint32_t> extents;
    std::vector<double> data;
};

struct Checkpoint {
    std::vector<CheckpointEntry> entries;
    std::string config_echo;

    const CheckpointEntry* find(const std::string& name) const {
        for (const CheckpointEntry& e : entries)
            if (e.name == name) return &e;
        return nullptr;
    }
};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is, const std::string& ctx) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        fail(ErrorKind::data, "checkpoint: truncated while reading " + ctx);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f64(std::ostream& os, const double* p, std::size_t count) {
    // doubles are emitted byte-for-byte; host is little-endian IEEE-754
    static_assert(sizeof(double) == 8);
    os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(count * 8));
}

} // namespace detail

inline constexpr char kCheckpointMagic[8] = {'S', 'I', 'R', 'C', 'K', 'P', 'T', '1'};

inline void write_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
    os.write(kCheckpointMagic, 8);
    detail::put_u32(os, static_cast<std::uint32_t>(ckpt.entries.size()));
    for (const CheckpointEntry& e : ckpt.entries) {
        detail::put_u32(os, static_cast<std::uint32_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        os.put(static_cast<char>(e.extents.size()));
        std::size_t numel = 1;
        for (std::uint32_t ext : e.extents) {
            detail::put_u32(os, ext);
            numel *= ext;
        }
        if (numel != e.data.size())
            fail(ErrorKind::shape, "checkpoint: entry '" + e.name + "' extents do not match payload");
        detail::put_f64(os, e.data.data(), e.data.size());
    }
    detail::put_u32(os, static_cast<std::uint32_t>(ckpt.config_echo.size()));
    os.write(ckpt.config_echo.data(), static_cast<std::streamsize>(ckpt.config_echo.size()));
}

inline Checkpoint read_checkpoint(std::istream& is) {
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        fail(ErrorKind::data, "checkpoint: bad magic or unsupported version");
    Checkpoint ckpt;
    const std::uint32_t count = detail::get_u32(is, "entry count");
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointEntry e;
        const std::uint32_t name_len = detail::get_u32(is, "entry name length");
        e.name.resize(name_len);
        if (!is.read(e.name.data(), name_len))
            fail(ErrorKind::data, "checkpoint: truncated entry name (entry " + std::to_string(i) + ")");
        int rank = is.get();
        if (rank < 0) fail(ErrorKind::data, "checkpoint: truncated rank for entry '" + e.name + "'");
        std::size_t numel = 1;
        for (int r = 0; r < rank; ++r) {
            e.extents.push_back(detail::get_u32(is, "extents of '" + e.name + "'"));
            numel *= e.extents.back();
        }
        e.data.resize(numel);
        if (!is.read(reinterpret_cast<char*>(e.data.data()), static_cast<std::streamsize>(numel * 8)))
            fail(ErrorKind::data, "checkpoint: truncated payload for entry '" + e.name + "'");
        ckpt.entries.push_back(std::move(e));
    }
    const std::uint32_t cfg_len = detail::get_u32(is, "config echo length");
    ckpt.config_echo.resize(cfg_len);
    if (!is.read(ckpt.config_echo.data(), cfg_len))
        fail(ErrorKind::data, "checkpoint: truncated config echo");
    return ckpt;
}

inline CheckpointEntry entry_of(const std::string& name, const Tensor& t) {
    CheckpointEntry e;
    e.name = name;
    const Shape s = t.shape;
    e.extents = {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
                 static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)};
    e.data = t.data;
    return e;
}

// Serialize just the teacher (used for the frozen-teacher byte check and for
// external-backbone substitution files).
inline std::string serialize_teacher(SirModel& m) {
    Checkpoint ckpt;
    for (const NamedParam& p : teacher_params(m)) ckpt.entries.push_back(entry_of(p.name, *p.tensor));
    std::ostringstream os(std::ios::binary);
    write_checkpoint(os, ckpt);
    return os.str();
}

inline Checkpoint build_checkpoint(SirModel& m, const Adam* opt, const std::string& config_echo) {
    Checkpoint ckpt;
    for (const NamedParam& p : teacher_params(m)) ckpt.entries.push_back(entry_of(p.name, *p.tensor));
    for (const NamedParam& p : student_params(m)) ckpt.entries.push_back(entry_of(p.name, *p.tensor));
    if (opt) {
        const auto& params = opt->params();
        for (std::size_t i = 0; i < params.size(); ++i) {
            ckpt.entries.push_back(entry_of("adam.m." + params[i].name, opt->first_moments()[i]));
            ckpt.entries.push_back(entry_of("adam.v." + params[i].name, opt->second_moments()[i]));
        }
        CheckpointEntry t;
        t.name = "adam.t";
        t.extents = {1};
        t.data = {static_cast<double>(opt->step_count())};
        ckpt.entries.push_back(std::move(t));
    }
    ckpt.config_echo = config_echo;
    return ckpt;
}

inline void save_checkpoint(const std::string& path, SirModel& m, const Adam* opt,
                            const std::string& config_echo) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) fail(ErrorKind::io, path + ": cannot open checkpoint for writing");
    write_checkpoint(f, build_checkpoint(m, opt, config_echo));
    if (!f) fail(ErrorKind::io, path + ": checkpoint write failed");
}

inline Checkpoint load_checkpoint_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(ErrorKind::io, path + ": cannot open checkpoint");
    return read_checkpoint(f);
}

namespace detail {

inline void apply_entry(const CheckpointEntry& e, Tensor& t, const std::string& name) {
    const Shape s = t.shape;
    const std::vector<std::uint32_t> want = {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
                                             static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)};
    if (e.extents != want)
        fail(ErrorKind::shape, "checkpoint: entry '" + name + "' has mismatched shape for the configured architecture");
    t.data = e.data;
}

} // namespace detail

// Applies a checkpoint onto a constructed model. Teacher-only files load the
// teacher and leave the student fresh. Returns true if optimizer state was
// present and restored into `opt` (when given).
inline bool apply_checkpoint(const Checkpoint& ckpt, SirModel& m, Adam* opt) {
    for (const NamedParam& p : teacher_params(m)) {
        if (const CheckpointEntry* e = ckpt.find(p.name)) detail::apply_entry(*e, *p.tensor, p.name);
    }
    bool any_student = false;
    for (const NamedParam& p : student_params(m)) {
        if (const CheckpointEntry* e = ckpt.find(p.name)) {
            detail::apply_entry(*e, *p.tensor, p.name);
            any_student = true;
        }
    }
    (void)any_student;
    if (!opt) return false;
    const CheckpointEntry* t_entry = ckpt.find("adam.t");
    if (!t_entry) return false; // missing optimizer entries -> fresh state
    std::vector<Tensor> ms, vs;
    for (const NamedParam& p : opt->params()) {
        const CheckpointEntry* em = ckpt.find("adam.m." + p.name);
        const CheckpointEntry* ev = ckpt.find("adam.v." + p.name);
        if (!em || !ev)
            fail(ErrorKind::data, "checkpoint: incomplete optimizer state for '" + p.name + "'");
        Tensor tm(p.tensor->shape), tv(p.tensor->shape);
        detail::apply_entry(*em, tm, "adam.m." + p.name);
        detail::apply_entry(*ev, tv, "adam.v." + p.name);
        ms.push_back(std::move(tm));
        vs.push_back(std::move(tv));
    }
    opt->restore(std::move(ms), std::move(vs), static_cast<std::int64_t>(t_entry->data[0]));
    return true;
}

// ---------------------------------------------------------------------------
// key=value metadata documents (config echoes, run metadata)
// ---------------------------------------------------------------------------

inline std::map<std::string, std::string> parse_kv(const std::string& text) {
    std::map<std::string, std::string> out;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t");
            const auto e = s.find_last_not_of(" \t");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return out;
}

} // namespace sir
