#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace codeccap {

inline constexpr int kSchemaVersion = 1;
inline constexpr std::string_view kNoVisibleChange = "No visible change.";

struct VideoRef {
    std::string video_id;
    std::string source;                ///< path or URL as given in the manifest
    std::optional<double> duration_s;
    std::optional<double> frame_rate;

    bool operator==(const VideoRef&) const = default;
};

enum class BoundaryKind { iframe_matched, content_cut, duration_split, video_start, video_end };

std::string_view to_string(BoundaryKind kind);
BoundaryKind boundary_kind_from_string(std::string_view name);

/// A half-open interval [start_s, end_s) of the video. `start_kind` records how
/// the start boundary was found; `end_kind` the same for the end boundary.
struct Segment {
    std::size_t index = 0;
    double start_s = 0.0;
    double end_s = 0.0;
    BoundaryKind start_kind = BoundaryKind::video_start;
    BoundaryKind end_kind = BoundaryKind::video_end;

    double duration() const { return end_s - start_s; }
    bool operator==(const Segment&) const = default;
};

struct AnchorCaption {
    std::size_t segment_index = 0;
    double anchor_time_s = 0.0;
    std::string text;
    std::size_t word_count = 0;

    bool operator==(const AnchorCaption&) const = default;
};

AnchorCaption make_anchor(std::size_t segment_index, double time_s, std::string text);

/// Indices into a segment's sampled frames; always adjacent (second = first + 1).
struct FramePair {
    std::size_t first = 0;
    std::size_t second = 1;

    auto operator<=>(const FramePair&) const = default;
};

enum class SpatialKind { zone, percent };

struct SpatialRef {
    SpatialKind kind = SpatialKind::zone;
    std::string zone;   ///< one of the nine grid names when kind == zone
    double x_pct = 0.0;
    double y_pct = 0.0;
    bool in_range = true;

    bool operator==(const SpatialRef&) const = default;
};

struct ResidualRecord {
    std::size_t segment_index = 0;
    FramePair frame_pair;
    std::string delta_caption;
    std::vector<SpatialRef> spatial_tags;

    bool is_no_change() const;
    bool operator==(const ResidualRecord&) const = default;
};

struct SceneNarrative {
    std::size_t segment_index = 0;
    double start_s = 0.0;
    double end_s = 0.0;
    std::string text;

    bool operator==(const SceneNarrative&) const = default;
};

/// The four caption levels for one video. `residuals[k]` holds segment k's
/// records ordered by frame pair.
struct CaptionDocument {
    VideoRef video;
    double sample_rate_hz = 1.0;
    std::vector<Segment> segments;
    std::vector<AnchorCaption> anchors;
    std::vector<std::vector<ResidualRecord>> residuals;
    std::vector<SceneNarrative> scene_narratives;
    std::string video_narrative;

    std::size_t segment_count() const { return segments.size(); }
    std::size_t residual_count() const;
    bool operator==(const CaptionDocument&) const = default;
};

/// Whitespace-token count.
std::size_t word_count(std::string_view text);

/// Times are kept at millisecond precision.
double quantize_time(double seconds);

/// Number of samples at `rate_hz` in [start_s, end_s); at least 1.
std::size_t sample_count(double start_s, double end_s, double rate_hz);

/// Throws ValidationError naming the first broken invariant.
void validate(const CaptionDocument& doc);
void validate_segments(const std::vector<Segment>& segments, std::optional<double> duration_s);

std::string serialize_document(const CaptionDocument& doc);
CaptionDocument deserialize_document(std::string_view bytes);

// Manifest: JSON lines with video_id, path, optional duration_s.
std::vector<VideoRef> parse_manifest(std::string_view bytes);
std::string format_manifest_entry(const VideoRef& video);

} // namespace codeccap
