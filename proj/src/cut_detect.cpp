#include "codeccap/cut_detect.hpp"

#include "codeccap/error.hpp"
#include "text_util.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>

namespace codeccap {

void CutDetectConfig::validate() const {
    if (!(threshold > 0.0 && threshold <= 2.0)) throw ConfigError("cut threshold must be in (0, 2]");
    if (!(min_scene_len_s > 0.0)) throw ConfigError("min_scene_len_s must be > 0");
    if (bins_per_channel <= 0 || bins_per_channel > 256) throw ConfigError("bins_per_channel must be in [1, 256]");
}

FrameFeature frame_feature(const Raster& frame, double time_s, int bins_per_channel) {
    if (frame.empty()) throw InputError("cannot extract features from an empty raster");
    if (bins_per_channel <= 0 || bins_per_channel > 256) throw ConfigError("bins_per_channel must be in [1, 256]");
    const auto bins = static_cast<std::size_t>(bins_per_channel);
    std::vector<std::size_t> counts(bins * 3, 0);
    const std::size_t pixels = frame.width * frame.height;
    for (std::size_t i = 0; i < pixels; ++i)
        for (std::size_t c = 0; c < 3; ++c)
            ++counts[c * bins + (frame.rgb[i * 3 + c] * bins) / 256];
    FrameFeature f;
    f.time_s = time_s;
    f.histogram.resize(counts.size());
    const double total = static_cast<double>(pixels) * 3.0;
    for (std::size_t i = 0; i < counts.size(); ++i) f.histogram[i] = static_cast<double>(counts[i]) / total;
    return f;
}

double l1_distance(const FrameFeature& a, const FrameFeature& b) {
    if (a.histogram.size() != b.histogram.size()) throw InputError("histogram bin counts differ");
    double d = 0.0;
    for (std::size_t i = 0; i < a.histogram.size(); ++i) d += std::abs(a.histogram[i] - b.histogram[i]);
    return d;
}

CutList detect_cuts(const std::vector<FrameFeature>& features, const CutDetectConfig& cfg) {
    cfg.validate();
    for (std::size_t i = 1; i < features.size(); ++i)
        if (!(features[i].time_s > features[i - 1].time_s))
            throw InputError("frame features must have strictly increasing times (index " + std::to_string(i) + ")");
    CutList out;
    std::optional<double> last_cut;
    for (std::size_t i = 1; i < features.size(); ++i) {
        if (l1_distance(features[i - 1], features[i]) <= cfg.threshold) continue;
        const double t = features[i].time_s;
        if (last_cut && t - *last_cut < cfg.min_scene_len_s - 1e-9) continue;
        out.cut_times.push_back(quantize_time(t));
        last_cut = t;
    }
    return out;
}

namespace {

std::optional<double> parse_time_value(std::string_view v) {
    v = text::trim(v);
    if (!v.empty() && v.front() == '"' && v.back() == '"' && v.size() >= 2) v = v.substr(1, v.size() - 2);
    if (auto d = text::parse_double(v)) return d;
    // HH:MM:SS(.mmm)
    auto parts = text::split(v, ':');
    if (parts.size() != 3) return std::nullopt;
    auto h = text::parse_double(parts[0]);
    auto m = text::parse_double(parts[1]);
    auto s = text::parse_double(parts[2]);
    if (!h || !m || !s) return std::nullopt;
    return *h * 3600.0 + *m * 60.0 + *s;
}

bool is_start_column(std::string_view name, std::string_view wanted) {
    auto n = text::lower(text::trim(name));
    if (!wanted.empty()) return n == text::lower(wanted);
    return n == "start time (seconds)" || n == "start_time" || n == "start_s" || n == "start" ||
           n == "start time" || n == "start timecode" || n == "time" || n == "time_s";
}

} // namespace

CutList import_cuts(std::string_view bytes, CutFormat format, std::string_view start_column) {
    auto lines = text::split_lines(bytes);
    if (format == CutFormat::auto_detect) {
        format = CutFormat::plain;
        for (auto l : lines) {
            auto t = text::trim(l);
            if (t.empty() || t.front() == '#') continue;
            if (t.find(',') != std::string_view::npos) format = CutFormat::csv;
            break;
        }
    }

    CutList out;
    if (format == CutFormat::plain) {
        std::size_t line_no = 0;
        for (auto l : lines) {
            ++line_no;
            auto t = text::trim(l);
            if (t.empty() || t.front() == '#') continue;
            auto v = parse_time_value(t);
            if (!v) throw ParseError("bad cut time '" + std::string(t) + "'", line_no);
            out.cut_times.push_back(quantize_time(*v));
        }
    } else {
        std::optional<std::size_t> column;
        std::size_t line_no = 0;
        for (auto l : lines) {
            ++line_no;
            auto t = text::trim(l);
            if (t.empty() || t.front() == '#') continue;
            auto cells = text::split(t, ',');
            if (!column) {
                for (std::size_t c = 0; c < cells.size(); ++c)
                    if (is_start_column(cells[c], start_column)) {
                        column = c;
                        break;
                    }
                // Some exporters put a timecode list line before the header.
                if (!column && text::lower(text::trim(cells[0])).rfind("timecode list", 0) == 0) continue;
                if (!column) throw ParseError("no start-time column in cut list header", line_no);
                continue;
            }
            if (*column >= cells.size()) throw ParseError("cut record is missing the start-time column", line_no);
            auto v = parse_time_value(cells[*column]);
            if (!v) throw ParseError("bad cut time '" + std::string(cells[*column]) + "'", line_no);
            out.cut_times.push_back(quantize_time(*v));
        }
    }
    std::erase_if(out.cut_times, [](double t) { return t <= 0.0; });
    std::sort(out.cut_times.begin(), out.cut_times.end());
    out.cut_times.erase(std::unique(out.cut_times.begin(), out.cut_times.end()), out.cut_times.end());
    return out;
}

std::string serialize_cuts(const CutList& cuts) {
    std::string out;
    char buf[64];
    for (double t : cuts.cut_times) {
        std::snprintf(buf, sizeof buf, "%.3f\n", t);
        out += buf;
    }
    return out;
}

std::vector<FrameFeature> features_from_dir(const std::filesystem::path& dir, int bins_per_channel) {
    std::vector<FrameFeature> out;
    for (const auto& f : list_frame_dir(dir))
        out.push_back(frame_feature(decode_pnm(read_file(f.path)), f.time_s, bins_per_channel));
    return out;
}

} // namespace codeccap
