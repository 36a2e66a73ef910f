#pragma once

#include "codeccap/codec_probe.hpp"
#include "codeccap/raster.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace codeccap {

/// Per-channel quantized color histogram, channels concatenated (R, G, B) and
/// normalized so the whole vector sums to 1. Each channel section therefore
/// carries a third of the mass.
struct FrameFeature {
    double time_s = 0.0;
    std::vector<double> histogram;
};

struct CutDetectConfig {
    double threshold = 0.4;        ///< L1 histogram distance, in (0, 2]
    double min_scene_len_s = 1.0;
    int bins_per_channel = 8;

    void validate() const;
};

FrameFeature frame_feature(const Raster& frame, double time_s, int bins_per_channel = 8);

double l1_distance(const FrameFeature& a, const FrameFeature& b);

/// Scans adjacent feature pairs and emits a cut at feature i when the L1
/// distance to feature i-1 exceeds the threshold and the previous emitted cut
/// is at least min_scene_len_s earlier. The first cut is not constrained.
CutList detect_cuts(const std::vector<FrameFeature>& features, const CutDetectConfig& cfg);

enum class CutFormat { auto_detect, plain, csv };

/// Newline-separated seconds, or comma-separated records whose header names a
/// start-time column (`start_column`, or a built-in list of common names).
/// Values may be seconds or HH:MM:SS[.mmm] timecodes. Cuts at t <= 0 are
/// dropped since the video start is always a boundary.
CutList import_cuts(std::string_view bytes, CutFormat format = CutFormat::auto_detect,
                    std::string_view start_column = {});

std::string serialize_cuts(const CutList& cuts);

/// Loads every frame in `dir` (see list_frame_dir) and extracts features.
std::vector<FrameFeature> features_from_dir(const std::filesystem::path& dir, int bins_per_channel);

} // namespace codeccap
