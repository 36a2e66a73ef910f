#include "codeccap/raster.hpp"

#include "codeccap/error.hpp"
#include "text_util.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace codeccap {

namespace fs = std::filesystem;

Raster::Raster(std::size_t w, std::size_t h, std::uint8_t r, std::uint8_t g, std::uint8_t b)
    : width(w), height(h), rgb(w * h * 3) {
    for (std::size_t i = 0; i < w * h; ++i) {
        rgb[i * 3] = r;
        rgb[i * 3 + 1] = g;
        rgb[i * 3 + 2] = b;
    }
}

namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string_view next_token(std::string_view bytes, std::size_t& pos) {
    for (;;) {
        while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        if (pos < bytes.size() && bytes[pos] == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            continue;
        }
        break;
    }
    std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw ParseError("truncated netpbm header", start);
    return bytes.substr(start, pos - start);
}

} // namespace

Raster decode_pnm(std::string_view bytes) {
    std::size_t pos = 0;
    auto magic = next_token(bytes, pos);
    bool gray = magic == "P5";
    if (magic != "P6" && !gray) throw ParseError("not a binary netpbm image", 0);
    auto w = text::parse_int(next_token(bytes, pos));
    auto h = text::parse_int(next_token(bytes, pos));
    auto maxval = text::parse_int(next_token(bytes, pos));
    if (!w || !h || *w <= 0 || *h <= 0) throw ParseError("bad netpbm dimensions", pos);
    if (!maxval || *maxval != 255) throw ParseError("only maxval 255 is supported", pos);
    ++pos;  // single whitespace before raster data
    const std::size_t channels = gray ? 1 : 3;
    const std::size_t need = static_cast<std::size_t>(*w) * static_cast<std::size_t>(*h) * channels;
    if (bytes.size() < pos + need) throw ParseError("truncated netpbm raster", bytes.size());
    Raster img;
    img.width = static_cast<std::size_t>(*w);
    img.height = static_cast<std::size_t>(*h);
    img.rgb.resize(img.width * img.height * 3);
    const auto* src = reinterpret_cast<const std::uint8_t*>(bytes.data() + pos);
    if (gray) {
        for (std::size_t i = 0; i < img.width * img.height; ++i)
            img.rgb[i * 3] = img.rgb[i * 3 + 1] = img.rgb[i * 3 + 2] = src[i];
    } else {
        std::copy(src, src + need, img.rgb.begin());
    }
    return img;
}

std::string encode_ppm(const Raster& image) {
    std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
    out.append(reinterpret_cast<const char*>(image.rgb.data()), image.rgb.size());
    return out;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, std::string_view bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write '" + path.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InputError("short write to '" + path.string() + "'");
}

void write_file_atomic(const fs::path& path, std::string_view bytes) {
    fs::path tmp = path;
    tmp += ".tmp";
    write_file(tmp, bytes);
    fs::rename(tmp, path);
}

std::vector<FrameFile> list_frame_dir(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw InputError("frame directory '" + dir.string() + "' does not exist");
    std::vector<FrameFile> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        auto ext = entry.path().extension().string();
        if (ext != ".ppm" && ext != ".pgm") continue;
        auto t = text::parse_double(entry.path().stem().string());
        if (!t || *t < 0.0) continue;
        out.push_back({*t, entry.path()});
    }
    std::sort(out.begin(), out.end(), [](const FrameFile& a, const FrameFile& b) { return a.time_s < b.time_s; });
    return out;
}

std::vector<std::pair<double, Raster>> read_raw_frames(std::string_view stream, std::string_view timing,
                                                       std::size_t width, std::size_t height) {
    if (width == 0 || height == 0) throw InputError("raw frame dimensions must be positive");
    std::vector<double> times;
    std::size_t line_no = 0;
    for (auto line : text::split_lines(timing)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        auto t = text::parse_double(line);
        if (!t) throw ParseError("bad timing line", line_no);
        times.push_back(*t);
    }
    const std::size_t frame_bytes = width * height * 3;
    if (stream.size() != frame_bytes * times.size())
        throw InputError("raw stream holds " + std::to_string(stream.size() / frame_bytes) + " frames but timing lists " +
                         std::to_string(times.size()));
    std::vector<std::pair<double, Raster>> out;
    for (std::size_t i = 0; i < times.size(); ++i) {
        Raster r;
        r.width = width;
        r.height = height;
        const auto* src = reinterpret_cast<const std::uint8_t*>(stream.data() + i * frame_bytes);
        r.rgb.assign(src, src + frame_bytes);
        out.emplace_back(times[i], std::move(r));
    }
    return out;
}

} // namespace codeccap
