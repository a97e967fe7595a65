// Binary netpbm codec: PGM (P5) and PPM (P6), 8-bit, maxval 255.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace sir {

namespace detail {

// Skips netpbm whitespace and '#' comments, returns the next ASCII integer.
inline int read_pnm_int(const std::vector<char>& buf, std::size_t& pos, const std::string& path) {
    while (pos < buf.size()) {
        char c = buf[pos];
        if (c == '#') {
            while (pos < buf.size() && buf[pos] != '\n') ++pos;
        } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
            ++pos;
        } else {
            break;
        }
    }
    if (pos >= buf.size() || buf[pos] < '0' || buf[pos] > '9')
        fail(ErrorKind::data, path + ": malformed header, expected integer at byte offset " +
                                  std::to_string(pos));
    int v = 0;
    while (pos < buf.size() && buf[pos] >= '0' && buf[pos] <= '9') {
        v = v * 10 + (buf[pos] - '0');
        ++pos;
    }
    return v;
}

} // namespace detail

// Loads a P5/P6 file into a [1,c,h,w] tensor scaled into [0,1].
inline Tensor load_image(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(ErrorKind::io, path + ": cannot open file");
    std::vector<char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 2) fail(ErrorKind::data, path + ": truncated header at byte offset 0");
    int channels;
    if (buf[0] == 'P' && buf[1] == '5')
        channels = 1;
    else if (buf[0] == 'P' && buf[1] == '6')
        channels = 3;
    else
        fail(ErrorKind::data, path + ": unsupported magic at byte offset 0 (want P5 or P6)");

    std::size_t pos = 2;
    const int w = detail::read_pnm_int(buf, pos, path);
    const int h = detail::read_pnm_int(buf, pos, path);
    const int maxval = detail::read_pnm_int(buf, pos, path);
    if (w <= 0 || h <= 0) fail(ErrorKind::data, path + ": non-positive image extents");
    if (maxval != 255)
        fail(ErrorKind::data, path + ": unsupported maxval " + std::to_string(maxval) +
                                  " at byte offset " + std::to_string(pos) + " (want 255)");
    if (pos >= buf.size()) fail(ErrorKind::data, path + ": missing payload");
    ++pos; // single whitespace byte after maxval

    const std::size_t need = static_cast<std::size_t>(w) * h * channels;
    if (buf.size() - pos < need)
        fail(ErrorKind::data, path + ": truncated payload at byte offset " +
                                  std::to_string(buf.size()) + ", expected " +
                                  std::to_string(pos + need) + " bytes");

    Tensor out(Shape{1, channels, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < channels; ++c) {
                const auto b = static_cast<std::uint8_t>(buf[pos + (static_cast<std::size_t>(y) * w + x) * channels + c]);
                out.at(0, c, y, x) = static_cast<double>(b) / 255.0;
            }
    return out;
}

// Writes a [1,1,h,w] tensor as P5 or a [1,3,h,w] tensor as P6, rounding
// values in [0,1] to 8-bit.
inline void write_image(const std::string& path, const Tensor& img) {
    const Shape s = img.shape;
    if (s.n != 1 || (s.c != 1 && s.c != 3))
        fail(ErrorKind::shape, "write_image: expects [1,1,h,w] or [1,3,h,w], got " + s.str());
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) fail(ErrorKind::io, path + ": cannot open file for writing");
    f << (s.c == 1 ? "P5" : "P6") << "\n" << s.w << " " << s.h << "\n255\n";
    std::vector<char> payload(static_cast<std::size_t>(s.h) * s.w * s.c);
    for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x)
            for (int c = 0; c < s.c; ++c) {
                double v = img.at(0, c, y, x);
                if (v < 0.0) v = 0.0;
                if (v > 1.0) v = 1.0;
                payload[(static_cast<std::size_t>(y) * s.w + x) * s.c + c] =
                    static_cast<char>(static_cast<int>(v * 255.0 + 0.5));
            }
    f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!f) fail(ErrorKind::io, path + ": write failed");
}

} // namespace sir
