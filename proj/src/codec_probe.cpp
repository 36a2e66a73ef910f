#include "codeccap/codec_probe.hpp"

#include "codeccap/error.hpp"
#include "codeccap/json_io.hpp"
#include "text_util.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>

namespace codeccap {

namespace {

using json_io::Json;

std::int64_t to_ms(double seconds) { return std::llround(seconds * 1000.0); }
double from_ms(std::int64_t ms) { return quantize_time(static_cast<double>(ms) / 1000.0); }

void sort_unique(std::vector<double>& v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
}

std::optional<double> record_time(const Json& rec) {
    for (const char* key : {"pts_time", "pkt_pts_time", "best_effort_timestamp_time", "pkt_dts_time"}) {
        auto it = rec.find(key);
        if (it == rec.end() || it->is_null()) continue;
        if (it->is_number()) return it->get<double>();
        if (it->is_string()) {
            auto v = text::parse_double(it->get<std::string>());
            if (v) return v;
        }
        return std::nullopt;
    }
    return std::nullopt;
}

IFrameTimeline parse_probe_json(std::string_view bytes) {
    const Json j = json_io::parse(bytes);
    const Json* records = nullptr;
    bool packets = false;
    if (j.is_object() && j.contains("frames")) {
        records = &j["frames"];
    } else if (j.is_object() && j.contains("packets")) {
        records = &j["packets"];
        packets = true;
    } else if (j.is_array()) {
        records = &j;
    }
    if (!records || !records->is_array())
        throw ParseError("probe output has no 'frames' or 'packets' list", 0);

    IFrameTimeline tl;
    tl.source = TimelineSource::probe_tool_json;
    std::size_t index = 0;
    for (const auto& rec : *records) {
        if (!rec.is_object()) throw ParseError("probe record is not an object", index);
        if (auto mt = rec.find("media_type"); mt != rec.end() && mt->is_string() && *mt != "video") {
            ++index;
            continue;
        }
        bool intra = false;
        if (packets) {
            auto flags = rec.find("flags");
            if (flags == rec.end() || !flags->is_string()) throw ParseError("packet record lacks flags", index);
            intra = flags->get<std::string>().find('K') != std::string::npos;
        } else {
            auto pt = rec.find("pict_type");
            if (pt == rec.end() || !pt->is_string()) throw ParseError("frame record lacks pict_type", index);
            intra = *pt == "I";
        }
        if (intra) {
            auto t = record_time(rec);
            if (!t || *t < 0.0 || !std::isfinite(*t))
                throw ParseError("frame record lacks a usable presentation time", index);
            tl.timestamps.push_back(quantize_time(*t));
        }
        ++index;
    }
    return tl;
}

IFrameTimeline parse_plain(std::string_view bytes) {
    IFrameTimeline tl;
    tl.source = TimelineSource::plain_list;
    std::size_t line_no = 0;
    for (auto line : text::split_lines(bytes)) {
        ++line_no;
        auto t = text::trim(line);
        if (t.empty() || t.front() == '#') continue;
        auto v = text::parse_double(t);
        if (!v || *v < 0.0) throw ParseError("bad timestamp '" + std::string(t) + "'", line_no);
        tl.timestamps.push_back(quantize_time(*v));
    }
    return tl;
}

} // namespace

std::string_view to_string(SegmentationMode mode) {
    return mode == SegmentationMode::iframe_primary ? "iframe_primary" : "content_primary";
}

void SegmentationConfig::validate() const {
    if (!(tau_gop >= 0.0) || !std::isfinite(tau_gop)) throw ConfigError("tau_gop must be >= 0");
    if (!(proximity_window_s > 0.0)) throw ConfigError("proximity_window_s must be > 0");
    if (!(max_segment_s > 0.0)) throw ConfigError("max_segment_s must be > 0");
    if (!(min_segment_s >= 0.0)) throw ConfigError("min_segment_s must be >= 0");
    if (!(min_segment_s < max_segment_s)) throw ConfigError("min_segment_s must be < max_segment_s");
    if (2 * static_cast<std::int64_t>(std::ceil(min_segment_s * 1000.0 - 1e-9)) >
        static_cast<std::int64_t>(std::floor(max_segment_s * 1000.0 + 1e-9)))
        throw ConfigError("min_segment_s must be at most half of max_segment_s");
}

IFrameTimeline parse_iframe_timeline(std::string_view bytes, TimelineSource source) {
    IFrameTimeline tl = source == TimelineSource::probe_tool_json ? parse_probe_json(bytes) : parse_plain(bytes);
    sort_unique(tl.timestamps);
    if (tl.timestamps.empty()) throw InputError("empty I-frame timeline: no intra-coded frames found");
    return tl;
}

IFrameTimeline parse_iframe_timeline(std::string_view bytes) {
    auto t = text::trim(bytes);
    bool json = !t.empty() && (t.front() == '{' || t.front() == '[');
    return parse_iframe_timeline(bytes, json ? TimelineSource::probe_tool_json : TimelineSource::plain_list);
}

GapStats gap_statistics(const IFrameTimeline& timeline) {
    GapStats s;
    const auto& ts = timeline.timestamps;
    for (std::size_t i = 1; i < ts.size(); ++i) s.gaps.push_back(ts[i] - ts[i - 1]);
    if (s.gaps.empty()) return s;
    double sum = 0.0;
    for (double g : s.gaps) sum += g;
    s.mean = sum / static_cast<double>(s.gaps.size());
    double sq = 0.0;
    for (double g : s.gaps) sq += (g - s.mean) * (g - s.mean);
    s.stddev = std::sqrt(sq / static_cast<double>(s.gaps.size()));
    // A single gap has no spread to measure.
    s.cv = (s.gaps.size() >= 2 && s.mean > 0.0) ? s.stddev / s.mean : 0.0;
    return s;
}

SegmentationMode select_mode(const GapStats& stats, const SegmentationConfig& cfg) {
    return stats.cv >= cfg.tau_gop ? SegmentationMode::iframe_primary : SegmentationMode::content_primary;
}

std::vector<double> match_boundaries(const IFrameTimeline& timeline, const CutList& cuts,
                                     const SegmentationConfig& cfg) {
    std::vector<double> out;
    const auto& c = cuts.cut_times;
    if (c.empty()) return out;
    for (double t : timeline.timestamps) {
        auto it = std::lower_bound(c.begin(), c.end(), t);
        double best = std::numeric_limits<double>::infinity();
        if (it != c.end()) best = std::min(best, std::abs(*it - t));
        if (it != c.begin()) best = std::min(best, std::abs(*std::prev(it) - t));
        if (best <= cfg.proximity_window_s) out.push_back(t);
    }
    return out;
}

SegmentPlan plan_video(const VideoRef& video, const IFrameTimeline& timeline, const CutList& cuts,
                       const SegmentationConfig& cfg) {
    cfg.validate();
    if (!video.duration_s || !(*video.duration_s > 0.0))
        throw ConfigError("video '" + video.video_id + "' has no positive duration");
    const std::int64_t duration = to_ms(*video.duration_s);
    if (duration <= 0) throw ConfigError("video '" + video.video_id + "' is shorter than 1 ms");
    const auto min_ms = static_cast<std::int64_t>(std::ceil(cfg.min_segment_s * 1000.0 - 1e-9));
    const auto max_ms = static_cast<std::int64_t>(std::floor(cfg.max_segment_s * 1000.0 + 1e-9));

    SegmentPlan plan;
    plan.video = video;
    plan.stats = gap_statistics(timeline);
    plan.mode = select_mode(plan.stats, cfg);

    struct Boundary {
        std::int64_t ms;
        BoundaryKind kind;
    };
    std::vector<Boundary> bounds{{0, BoundaryKind::video_start}};
    {
        std::vector<double> interior;
        BoundaryKind kind;
        if (plan.mode == SegmentationMode::iframe_primary) {
            interior = match_boundaries(timeline, cuts, cfg);
            kind = BoundaryKind::iframe_matched;
        } else {
            interior = cuts.cut_times;
            kind = BoundaryKind::content_cut;
        }
        std::vector<std::int64_t> ms;
        for (double t : interior) {
            auto m = to_ms(t);
            if (m > 0 && m < duration) ms.push_back(m);
        }
        std::sort(ms.begin(), ms.end());
        ms.erase(std::unique(ms.begin(), ms.end()), ms.end());
        for (auto m : ms) bounds.push_back({m, kind});
    }
    bounds.push_back({duration, BoundaryKind::video_end});

    // Merge short segments: into the predecessor, or forward for the first one.
    for (;;) {
        if (bounds.size() <= 2) break;
        std::size_t short_seg = bounds.size();
        for (std::size_t i = 0; i + 1 < bounds.size(); ++i) {
            if (bounds[i + 1].ms - bounds[i].ms < min_ms) {
                short_seg = i;
                break;
            }
        }
        if (short_seg == bounds.size()) break;
        std::size_t drop = short_seg == 0 ? 1 : short_seg;
        bounds.erase(bounds.begin() + static_cast<std::ptrdiff_t>(drop));
    }

    // Split over-long segments into equal parts.
    std::vector<Boundary> split{bounds.front()};
    for (std::size_t i = 0; i + 1 < bounds.size(); ++i) {
        const std::int64_t a = bounds[i].ms;
        const std::int64_t b = bounds[i + 1].ms;
        const std::int64_t len = b - a;
        const std::int64_t parts = (len + max_ms - 1) / max_ms;
        for (std::int64_t p = 1; p < parts; ++p)
            split.push_back({a + (len * p) / parts, BoundaryKind::duration_split});
        split.push_back(bounds[i + 1]);
    }

    for (std::size_t i = 0; i + 1 < split.size(); ++i) {
        Segment s;
        s.index = i;
        s.start_s = from_ms(split[i].ms);
        s.end_s = from_ms(split[i + 1].ms);
        s.start_kind = split[i].kind;
        s.end_kind = split[i + 1].kind;
        plan.segments.push_back(s);
    }
    return plan;
}

std::vector<Segment> plan_segments(const VideoRef& video, const IFrameTimeline& timeline, const CutList& cuts,
                                   const SegmentationConfig& cfg) {
    return plan_video(video, timeline, cuts, cfg).segments;
}

std::string serialize_plan(const SegmentPlan& plan) {
    Json j;
    j["schema_version"] = kSchemaVersion;
    j["video"] = json_io::encode(plan.video);
    j["mode"] = std::string(to_string(plan.mode));
    Json stats;
    stats["gap_count"] = plan.stats.gaps.size();
    stats["mean"] = plan.stats.mean;
    stats["stddev"] = plan.stats.stddev;
    stats["cv"] = plan.stats.cv;
    j["gap_stats"] = std::move(stats);
    Json segs = Json::array();
    for (const auto& s : plan.segments) segs.push_back(json_io::encode(s));
    j["segments"] = std::move(segs);
    return json_io::dump(j);
}

SegmentPlan deserialize_plan(std::string_view bytes) {
    const Json j = json_io::parse(bytes);
    SegmentPlan plan;
    plan.video = json_io::decode_video(json_io::field(j, "video"));
    auto mode = json_io::string_field(j, "mode");
    if (mode == "iframe_primary") plan.mode = SegmentationMode::iframe_primary;
    else if (mode == "content_primary") plan.mode = SegmentationMode::content_primary;
    else throw InputError("unknown segmentation mode '" + mode + "'");
    if (j.contains("gap_stats")) {
        const auto& st = j["gap_stats"];
        plan.stats.mean = json_io::number_field(st, "mean");
        plan.stats.stddev = json_io::number_field(st, "stddev");
        plan.stats.cv = json_io::number_field(st, "cv");
    }
    for (const auto& s : json_io::field(j, "segments")) plan.segments.push_back(json_io::decode_segment(s));
    validate_segments(plan.segments, plan.video.duration_s);
    return plan;
}

} // namespace codeccap
