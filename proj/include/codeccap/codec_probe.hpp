#pragma once

#include "codeccap/caption_model.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace codeccap {

enum class TimelineSource { probe_tool_json, plain_list };

/// Intra-coded frame presentation times, sorted and unique.
struct IFrameTimeline {
    std::vector<double> timestamps;
    TimelineSource source = TimelineSource::plain_list;
};

/// Content-cut instants, sorted and unique.
struct CutList {
    std::vector<double> cut_times;
    bool operator==(const CutList&) const = default;
};

struct SegmentationConfig {
    double tau_gop = 0.5;
    double proximity_window_s = 0.5;
    double max_segment_s = 60.0;
    double min_segment_s = 1.0;

    /// Throws ConfigError. Besides the obvious ranges this requires
    /// 2 * min_segment_s <= max_segment_s, otherwise an equal split of a
    /// slightly over-long segment cannot satisfy both bounds.
    void validate() const;
};

struct GapStats {
    std::vector<double> gaps;
    double mean = 0.0;
    double stddev = 0.0;  ///< population standard deviation
    double cv = 0.0;
};

enum class SegmentationMode { iframe_primary, content_primary };

std::string_view to_string(SegmentationMode mode);

/// Reads probe-tool frame metadata (JSON with a `frames` or `packets` list whose
/// records carry a picture type and a presentation time) or a plain
/// newline-separated list of seconds.
IFrameTimeline parse_iframe_timeline(std::string_view bytes, TimelineSource source);

/// Picks the source kind from the first non-blank character.
IFrameTimeline parse_iframe_timeline(std::string_view bytes);

GapStats gap_statistics(const IFrameTimeline& timeline);

SegmentationMode select_mode(const GapStats& stats, const SegmentationConfig& cfg);

/// I-frame times with a cut inside the proximity window. The boundary snaps to
/// the I-frame time.
std::vector<double> match_boundaries(const IFrameTimeline& timeline, const CutList& cuts,
                                     const SegmentationConfig& cfg);

struct SegmentPlan {
    VideoRef video;
    SegmentationMode mode = SegmentationMode::content_primary;
    GapStats stats;
    std::vector<Segment> segments;
};

std::vector<Segment> plan_segments(const VideoRef& video, const IFrameTimeline& timeline,
                                   const CutList& cuts, const SegmentationConfig& cfg);

/// plan_segments plus the mode and gap statistics that drove it.
SegmentPlan plan_video(const VideoRef& video, const IFrameTimeline& timeline, const CutList& cuts,
                       const SegmentationConfig& cfg);

std::string serialize_plan(const SegmentPlan& plan);
SegmentPlan deserialize_plan(std::string_view bytes);

} // namespace codeccap
