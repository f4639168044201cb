#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <zlib.h>

#include "vadnet/error.hpp"

namespace vadnet {

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<char>((v >> shift) & 0xFF));
}

inline void put_chunk(std::string& out, const char type[4], const std::string& payload) {
    put_u32(out, static_cast<std::uint32_t>(payload.size()));
    std::string body(type, 4);
    body += payload;
    out += body;
    put_u32(out, static_cast<std::uint32_t>(
                     crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()))));
}

}  // namespace detail

/// Encodes 8-bit grayscale pixels (row-major) as a PNG. Output bytes depend
/// only on the input, so equal images always yield equal files.
inline std::string encode_png_gray8(std::span<const std::uint8_t> pixels, std::size_t width, std::size_t height) {
    if (width == 0 || height == 0 || pixels.size() != width * height) {
        throw Error(ErrorKind::InvalidShape, "png: " + std::to_string(pixels.size()) + " pixels for " +
                                                 std::to_string(width) + "x" + std::to_string(height));
    }
    std::string raw;
    raw.reserve(height * (width + 1));
    for (std::size_t y = 0; y < height; ++y) {
        raw.push_back('\0');  // filter: none
        raw.append(reinterpret_cast<const char*>(pixels.data() + y * width), width);
    }
    uLongf packed_size = compressBound(static_cast<uLong>(raw.size()));
    std::string packed(packed_size, '\0');
    if (compress2(reinterpret_cast<Bytef*>(packed.data()), &packed_size, reinterpret_cast<const Bytef*>(raw.data()),
                  static_cast<uLong>(raw.size()), 9) != Z_OK) {
        throw Error(ErrorKind::Io, "png: deflate failed");
    }
    packed.resize(packed_size);

    std::string header;
    detail::put_u32(header, static_cast<std::uint32_t>(width));
    detail::put_u32(header, static_cast<std::uint32_t>(height));
    header += std::string{8, 0, 0, 0, 0};  // bit depth 8, grayscale, deflate, no filter set, no interlace

    std::string png("\x89PNG\r\n\x1a\n", 8);
    detail::put_chunk(png, "IHDR", header);
    detail::put_chunk(png, "IDAT", packed);
    detail::put_chunk(png, "IEND", {});
    return png;
}

/// Inverse of encode_png_gray8 for files it produced (used to verify output).
inline std::vector<std::uint8_t> decode_png_gray8(const std::string& png, std::size_t& width, std::size_t& height) {
    auto u32 = [&](std::size_t at) {
        if (at + 4 > png.size()) throw Error(ErrorKind::Parse, "png: truncated");
        std::uint32_t v = 0;
        for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(png[at + i]);
        return v;
    };
    if (png.compare(0, 8, std::string("\x89PNG\r\n\x1a\n", 8)) != 0) throw Error(ErrorKind::Parse, "png: bad signature");
    std::string idat;
    std::size_t pos = 8;
    while (pos + 12 <= png.size()) {
        const std::uint32_t len = u32(pos);
        const std::string type = png.substr(pos + 4, 4);
        if (pos + 12 + len > png.size()) throw Error(ErrorKind::Parse, "png: truncated chunk");
        const std::uint32_t crc = u32(pos + 8 + len);
        const auto* body = reinterpret_cast<const Bytef*>(png.data() + pos + 4);
        if (crc32(0L, body, len + 4) != crc) throw Error(ErrorKind::Parse, "png: crc mismatch in " + type);
        if (type == "IHDR") {
            width = u32(pos + 8);
            height = u32(pos + 12);
            if (png[pos + 16] != 8 || png[pos + 17] != 0) throw Error(ErrorKind::Parse, "png: not 8-bit grayscale");
        } else if (type == "IDAT") {
            idat += png.substr(pos + 8, len);
        }
        pos += 12 + len;
    }
    std::string raw(height * (width + 1), '\0');
    uLongf raw_size = raw.size();
    if (uncompress(reinterpret_cast<Bytef*>(raw.data()), &raw_size, reinterpret_cast<const Bytef*>(idat.data()),
                   static_cast<uLong>(idat.size())) != Z_OK ||
        raw_size != raw.size()) {
        throw Error(ErrorKind::Parse, "png: bad image data");
    }
    std::vector<std::uint8_t> pixels;
    pixels.reserve(width * height);
    for (std::size_t y = 0; y < height; ++y) {
        if (raw[y * (width + 1)] != 0) throw Error(ErrorKind::Parse, "png: unsupported filter");
        for (std::size_t x = 0; x < width; ++x) pixels.push_back(static_cast<std::uint8_t>(raw[y * (width + 1) + 1 + x]));
    }
    return pixels;
}

}  // namespace vadnet
