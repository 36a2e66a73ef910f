#pragma once

#include "codeccap/backend.hpp"
#include "codeccap/caption_model.hpp"
#include "codeccap/error.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace codeccap {

struct SamplePlan {
    std::size_t segment_index = 0;
    std::vector<double> sample_times;
    double rate_hz = 1.0;
};

/// Inclusive sample-index range [first, last].
struct Window {
    std::size_t first = 0;
    std::size_t last = 0;

    std::size_t size() const { return last - first + 1; }
    bool operator==(const Window&) const = default;
};

struct WindowPlan {
    std::vector<Window> windows;
    std::size_t window_size = 8;
    std::size_t overlap = 1;
};

struct CaptionConfig {
    double rate_hz = 1.0;
    std::size_t window_size = 8;
    std::size_t overlap = 1;
    /// When set, pairs the model leaves out are filled with the no-change
    /// literal instead of counting as malformed output.
    bool no_change_omitted = false;
    DecodeParams anchor_decode{2048, 0.0};
    DecodeParams residual_decode{2048, 0.0};

    void validate() const;
};

SamplePlan plan_samples(const Segment& segment, double rate_hz);

WindowPlan plan_windows(const SamplePlan& plan, std::size_t window_size, std::size_t overlap);

// --- spatial language ---------------------------------------------------------

/// The nine grid names, row-major from upper-left.
const std::vector<std::string>& zone_names();

/// Thirds partition of [0,100]^2; boundaries belong to the lower-index cell.
std::string zone_of(double x_pct, double y_pct);

/// Zone names and "(x%, y%)" coordinates in order of appearance. Percent
/// references outside [0,100] are kept with in_range = false.
std::vector<SpatialRef> extract_spatial_refs(std::string_view caption);

// --- structured residual output ----------------------------------------------

struct ParsedResidual {
    FramePair frame_pair;
    std::string delta_caption;
};

struct RejectedResidual {
    std::size_t position = 0;  ///< index in the model's array
    std::string reason;
};

struct ResidualPayload {
    std::vector<ParsedResidual> residuals;
    std::vector<RejectedResidual> rejected;
};

/// Extracts the JSON array from the text (bare, fenced, or wrapped in prose).
/// Records that are not adjacent pairs inside `window` are rejected
/// individually. Throws ParseError when no array can be found.
ResidualPayload parse_residual_payload(std::string_view text, std::optional<Window> window = std::nullopt);

// --- captioning ---------------------------------------------------------------

/// Supplies encoded frames by timestamp.
class FrameSource {
public:
    virtual ~FrameSource() = default;
    /// Throws InputError when no frame exists near `time_s`.
    virtual std::string frame_bytes(double time_s) const = 0;
};

/// Frames from a directory of per-second images named by timestamp. A frame
/// matches a requested time when it lies within `tolerance_s`.
class DirectoryFrameSource : public FrameSource {
public:
    explicit DirectoryFrameSource(const std::filesystem::path& dir, double tolerance_s = 0.5);
    std::string frame_bytes(double time_s) const override;

private:
    std::vector<std::pair<double, std::filesystem::path>> frames_;
    double tolerance_s_;
};

std::string render_anchor_prompt(const Segment& segment);
std::string render_residual_prompt(const SamplePlan& plan, const Window& window);

/// Raised when the anchor call yields no usable text.
class AnchorGenerationError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 2; }
    const char* kind() const noexcept override { return "anchor_generation"; }
};

AnchorCaption caption_anchor(const Segment& segment, const ImageInput& anchor_frame, ModelBackend& backend,
                             const CaptionConfig& cfg = {});

struct WindowResult {
    Window window;
    std::vector<ResidualRecord> records;
    bool failed = false;
    bool repaired = false;
    std::string error;
    std::string raw_text;  ///< kept for audit when failed
};

/// One record per adjacent pair in the window, in pair order.
WindowResult caption_window(std::size_t segment_index, const SamplePlan& plan, const Window& window,
                            const std::vector<ImageInput>& frames, ModelBackend& backend,
                            const CaptionConfig& cfg = {});

struct SegmentCaptions {
    Segment segment;
    SamplePlan samples;
    std::optional<AnchorCaption> anchor;
    std::string anchor_error;
    std::vector<ResidualRecord> residuals;  ///< deduplicated, ordered by pair
    std::vector<WindowResult> windows;

    bool failed() const;
};

/// Anchor plus windowed residuals for one segment. Shared boundary pairs keep
/// the earlier window's record.
SegmentCaptions caption_segment(const Segment& segment, const FrameSource& frames, ModelBackend& backend,
                                const CaptionConfig& cfg = {});

std::string serialize_segment_captions(const SegmentCaptions& captions);
SegmentCaptions deserialize_segment_captions(std::string_view bytes);

} // namespace codeccap
