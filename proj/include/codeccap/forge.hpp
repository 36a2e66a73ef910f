#pragma once

#include "codeccap/aggregate.hpp"
#include "codeccap/anchor_residual.hpp"
#include "codeccap/backend.hpp"
#include "codeccap/caption_model.hpp"
#include "codeccap/codec_probe.hpp"
#include "codeccap/cut_detect.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace codeccap {

enum class JobStage { pending, segmented, captioned, aggregated, done, failed };

std::string_view to_string(JobStage stage);
JobStage job_stage_from_string(std::string_view name);

/// One journal line. `event` is "attempt" (a run starts at pending), "stage"
/// (the job reached `stage`) or "failed".
struct JournalEntry {
    std::size_t seq = 0;
    std::string event;
    JobStage stage = JobStage::pending;
    std::size_t attempt = 0;
    std::vector<std::string> artifacts;  ///< paths relative to the job directory
    std::string error;

    bool operator==(const JournalEntry&) const = default;
};

struct JobState {
    std::string video_id;
    JobStage stage = JobStage::pending;
    std::size_t attempt = 0;
    std::string last_error;
    std::map<JobStage, std::vector<std::string>> artifacts;

    bool operator==(const JobState&) const = default;
};

std::string serialize_journal_entry(const JournalEntry& e);

/// Parses a journal. A final line without a newline is a torn write and is
/// ignored; any other bad line is a StateError.
std::vector<JournalEntry> parse_journal(std::string_view bytes, std::string_view label = "journal");

/// Folds a journal into a state, checking sequence numbers and that stages
/// only move forward (failed -> pending needs a new attempt).
JobState replay_journal(const std::string& video_id, const std::vector<JournalEntry>& entries,
                        std::size_t max_attempts);

// --- statistics -------------------------------------------------------------

/// Per-second captions of one video.
struct BaselineCaptions {
    std::string video_id;
    std::vector<std::pair<double, std::string>> captions;  ///< (time_s, text), sorted by time
};

/// {"video_id": ..., "captions": [{"time_s": t, "text": ...}, ...]}
BaselineCaptions parse_baseline(std::string_view bytes);

using Tokenizer = std::function<std::size_t(std::string_view)>;

struct CorpusStats {
    std::size_t videos = 0;
    double total_hours = 0.0;
    double median_segments = 0.0;
    double mean_anchor_words = 0.0;
    double mean_residuals_per_video = 0.0;
    double mean_residual_words = 0.0;
    /// Baseline tokens over anchor plus residual tokens, on videos with a baseline.
    std::optional<double> token_efficiency;
    std::size_t baseline_videos = 0;

    bool operator==(const CorpusStats&) const = default;
};

/// Stats over completed documents. Throws InputError on an empty list.
CorpusStats compute_stats(const std::vector<CaptionDocument>& documents,
                          const std::vector<BaselineCaptions>& baselines = {}, const Tokenizer& tokenizer = {});

std::string serialize_stats(const CorpusStats& stats);

struct DuplicateSentence {
    std::string sentence;         ///< normalized form
    std::vector<double> times;    ///< every occurrence, first one included
};

struct RedundancyReport {
    std::string video_id;
    std::size_t baseline_tokens = 0;
    std::size_t codec_tokens = 0;
    std::size_t anchor_tokens = 0;
    std::size_t residual_tokens = 0;
    double ratio = 0.0;  ///< baseline / codec
    std::size_t no_change_records = 0;
    std::size_t duplicate_occurrences = 0;  ///< repeats after the first occurrence
    std::vector<double> duplicate_times;    ///< distinct times holding a repeat
    std::vector<DuplicateSentence> duplicates;
};

/// Exact-duplicate sentences are compared after lowercasing and squashing
/// whitespace. Throws InputError when the video ids differ.
RedundancyReport redundancy_report(const CaptionDocument& doc, const BaselineCaptions& baseline,
                                   const Tokenizer& tokenizer = {});

std::string serialize_redundancy(const RedundancyReport& report);

/// Document with segments, anchors and residuals filled from a plan and its
/// per-segment captions (in plan order). Throws InputError on a missing anchor
/// or a segment mismatch.
CaptionDocument assemble_document(const SegmentPlan& plan, const std::vector<SegmentCaptions>& captions,
                                  double rate_hz);

// --- batch engine -------------------------------------------------------------

/// A video's input directory, named by the manifest's path (relative to the
/// manifest). Holds frames/ (images named by seconds), iframes.json or
/// iframes.txt, and optionally cuts.txt / cuts.csv; without a cut file the
/// histogram detector runs over the frames.
struct VideoInputs {
    std::filesystem::path dir;
    std::filesystem::path frames_dir;
    IFrameTimeline timeline;
    CutList cuts;
    double duration_s = 0.0;
};

VideoInputs load_video_inputs(const VideoRef& video, const std::filesystem::path& base_dir,
                              const CutDetectConfig& cut_cfg, double rate_hz);

struct ForgeOptions {
    std::filesystem::path state_dir;
    std::filesystem::path input_base;  ///< manifest paths are relative to this
    std::size_t workers = 1;
    std::size_t max_attempts = 2;
    SegmentationConfig segmentation;
    CutDetectConfig cuts;
    CaptionConfig caption;
    AggregateOptions aggregate;
    /// Each job stops once it reaches this stage.
    std::optional<JobStage> stop_after;
    /// Called after every journal append with the running total.
    std::function<void(std::size_t)> on_journal_append;
};

struct ForgeReport {
    std::vector<JobState> jobs;  ///< manifest order
    std::optional<CorpusStats> stats;
};

/// Processes every manifest video through segmentation, captioning and
/// aggregation. Finished stages recorded in the state directory are not
/// redone. Writes state/index.json and state/stats.json once the pool drains.
ForgeReport run_forge(const std::vector<VideoRef>& manifest, ModelBackend& backend, const ForgeOptions& opts);

/// Journals under `state_dir`, replayed; throws StateError on corruption.
std::vector<JobState> load_state(const std::filesystem::path& state_dir, std::size_t max_attempts);

/// Documents of done jobs, sorted by video id.
std::vector<CaptionDocument> load_documents(const std::filesystem::path& state_dir, std::size_t max_attempts);

std::filesystem::path job_dir(const std::filesystem::path& state_dir, const std::string& video_id);

} // namespace codeccap
