#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace codeccap {

/// 8-bit interleaved RGB image.
struct Raster {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> rgb;

    Raster() = default;
    Raster(std::size_t w, std::size_t h, std::uint8_t r = 0, std::uint8_t g = 0, std::uint8_t b = 0);

    bool empty() const { return width == 0 || height == 0; }
    std::uint8_t* pixel(std::size_t x, std::size_t y) { return &rgb[(y * width + x) * 3]; }
    const std::uint8_t* pixel(std::size_t x, std::size_t y) const { return &rgb[(y * width + x) * 3]; }
};

/// Binary netpbm: P6 (RGB) and P5 (gray, expanded to RGB). maxval must be 255.
Raster decode_pnm(std::string_view bytes);
std::string encode_ppm(const Raster& image);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);
/// Writes to a sibling temp file and renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

/// One decoded frame file in a per-second frame directory.
struct FrameFile {
    double time_s = 0.0;
    std::filesystem::path path;
};

/// Lists `*.ppm` / `*.pgm` files whose stem parses as seconds, sorted by time.
std::vector<FrameFile> list_frame_dir(const std::filesystem::path& dir);

/// Raw RGB24 frames back to back in `stream`, one timestamp per line in
/// `timing`.
std::vector<std::pair<double, Raster>> read_raw_frames(std::string_view stream, std::string_view timing,
                                                       std::size_t width, std::size_t height);

} // namespace codeccap
