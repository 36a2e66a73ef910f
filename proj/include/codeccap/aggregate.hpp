#pragma once

#include "codeccap/backend.hpp"
#include "codeccap/caption_model.hpp"

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace codeccap {

enum class ClaimKind { motion, event, attribute_update, observation };

std::string_view to_string(ClaimKind kind);
ClaimKind claim_kind_from_string(std::string_view name);

/// One normalized assertion from one residual record. For motion claims
/// `predicate` is the canonical verb and `value` the direction; for the other
/// kinds `predicate` is the attribute and `value` its (new) value. A predicate
/// of "occurs" marks a stateless event.
struct Claim {
    std::size_t id = 0;            ///< position in the segment's claim list
    std::size_t record_index = 0;  ///< position in the segment's residual list
    FramePair pair;
    ClaimKind kind = ClaimKind::event;
    std::string subject;
    std::string predicate;
    std::string value;
    std::string text;      ///< the clause as written
    std::string sentence;  ///< the full source sentence
    std::size_t sentence_index = 0;

    bool stateless() const { return predicate == "occurs"; }
    bool operator==(const Claim&) const = default;
};

enum class ExtractorMode { deterministic, backend };

std::string_view to_string(ExtractorMode mode);

struct ClaimSet {
    std::vector<Claim> claims;
    ExtractorMode mode = ExtractorMode::deterministic;
    bool fallback = false;  ///< backend extraction failed, deterministic used
    std::string warning;
};

/// Sentence split that keeps initials ("T. McCloud") and dotted
/// abbreviations ("U.S.") inside their sentence.
std::vector<std::string> sentences_of(std::string_view text);

/// Pattern-table extractor over one caption. Claims are numbered from zero.
std::vector<Claim> extract_text_claims(std::string_view text, FramePair pair = {}, std::size_t record_index = 0);

/// Deterministic extraction over a segment's residuals; no-change records
/// yield nothing.
ClaimSet extract_claims(const std::vector<ResidualRecord>& residuals);

/// Text-backend extraction, falling back to the pattern table on failure.
ClaimSet extract_claims(const std::vector<ResidualRecord>& residuals, ModelBackend& backend);

enum class EvidenceKind { continuous_change, discrete_event, attribute_update };

std::string_view to_string(EvidenceKind kind);

struct EvidenceItem {
    EvidenceKind kind = EvidenceKind::discrete_event;
    std::string subject;
    std::string predicate;
    std::string value;
    std::string description;
    std::vector<std::size_t> support_pairs;  ///< first index of each supporting pair, sorted
    std::size_t support_count = 0;
    double start_s = 0.0;
    double end_s = 0.0;
    std::vector<std::size_t> claim_ids;

    bool continuous() const { return kind == EvidenceKind::continuous_change; }
    bool operator==(const EvidenceItem&) const = default;
};

struct Omission {
    std::vector<std::size_t> claim_ids;
    std::string reason;  ///< insufficient_consecutive_support, precondition_contradicted, ...
    std::string detail;

    bool operator==(const Omission&) const = default;
};

struct RuleOutcome {
    std::vector<EvidenceItem> accepted;
    std::vector<Omission> omissions;
};

enum class LedgerOrigin { anchor, residual };

struct LedgerEntry {
    std::string value;
    double last_update_s = 0.0;
    LedgerOrigin origin = LedgerOrigin::anchor;

    bool operator==(const LedgerEntry&) const = default;
};

struct LedgerChange {
    std::string subject;
    std::string attribute;
    LedgerEntry entry;

    bool operator==(const LedgerChange&) const = default;
};

struct AttributeLedger {
    std::map<std::string, std::map<std::string, LedgerEntry>> entries;
    std::vector<LedgerChange> history;

    std::optional<LedgerEntry> get(const std::string& subject, const std::string& attribute) const;
    void set(const std::string& subject, const std::string& attribute, LedgerEntry entry);
    bool operator==(const AttributeLedger&) const = default;
};

/// Attribute entries stated by the anchor text ("The door is closed.").
AttributeLedger ledger_from_anchor(const AnchorCaption& anchor);

/// Pairs of mutually exclusive motion values.
using AntonymTable = std::vector<std::pair<std::string, std::string>>;
const AntonymTable& default_antonyms();

/// Sample time of a frame index; frame_times[i] for i in range.
using FrameTimes = std::vector<double>;

/// Motion claims grouped by (subject, predicate, value): every maximal run of
/// two or more consecutive pairs becomes one item. Shorter runs are omitted.
RuleOutcome accept_continuous(const std::vector<Claim>& claims, const FrameTimes& times);

/// Event and attribute-update claims in temporal order against a working
/// state seeded from `ledger`. Observations are omitted as stative.
RuleOutcome accept_discrete(const std::vector<Claim>& claims, const AttributeLedger& ledger, const FrameTimes& times);

/// Two items conflict when they share a subject, assert incompatible values
/// and (unless `ignore_time`) overlap in time. An item survives only when its
/// support is strictly greater than that of every item it conflicts with.
RuleOutcome resolve_contradictions(std::vector<EvidenceItem> items, const AntonymTable& antonyms = default_antonyms(),
                                   bool ignore_time = false);

bool conflicts(const EvidenceItem& a, const EvidenceItem& b, const AntonymTable& antonyms, bool ignore_time);

/// Anchor entries overridden by accepted discrete evidence in temporal order.
AttributeLedger apply_attribute_locking(const AttributeLedger& anchor_ledger, const std::vector<EvidenceItem>& accepted);

enum class SynthesisMode { template_mode, backend };

std::string_view to_string(SynthesisMode mode);
SynthesisMode synthesis_mode_from_string(std::string_view name);

struct AggregateOptions {
    SynthesisMode mode = SynthesisMode::template_mode;
    bool backend_claims = false;  ///< use the text backend for claim extraction
    AntonymTable antonyms = default_antonyms();
    double rate_hz = 1.0;
};

struct SegmentAggregate {
    Segment segment;
    AnchorCaption anchor;
    FrameTimes times;
    ClaimSet claims;
    AttributeLedger anchor_ledger;
    AttributeLedger ledger;
    std::vector<EvidenceItem> evidence;  ///< accepted, in temporal order
    std::vector<Omission> omissions;
    SceneNarrative scene;
    bool synthesis_fallback = false;
    std::vector<std::string> warnings;
};

/// Runs the four rules over one segment and renders its scene narrative.
SegmentAggregate aggregate_segment(const Segment& segment, const AnchorCaption& anchor,
                                   const std::vector<ResidualRecord>& residuals, const AggregateOptions& opts,
                                   ModelBackend* backend = nullptr);

/// Deterministic scene text: the anchor, then one sentence per accepted item.
std::string render_scene_template(const AnchorCaption& anchor, const std::vector<EvidenceItem>& evidence,
                                  const std::vector<Claim>& claims);

/// Capitalized words in `text` that do not occur in `allowed`.
std::vector<std::string> whitelist_violations(std::string_view text, std::string_view allowed);

struct VideoSynthesis {
    std::string narrative;
    std::vector<Omission> cross_boundary_omissions;  ///< claim ids are per segment, see segment_of
    std::vector<std::size_t> segment_of;
    bool fallback = false;
    std::vector<std::string> warnings;
};

/// Chronological fold over scenes. Continuous evidence about a subject that
/// recurs in adjacent segments is re-resolved across the boundary; losers are
/// dropped from the video narrative.
VideoSynthesis synthesize_video(const std::vector<SegmentAggregate>& segments, const AggregateOptions& opts,
                                ModelBackend* backend = nullptr);

struct AggregateResult {
    CaptionDocument document;
    std::vector<SegmentAggregate> segments;
    VideoSynthesis video;
};

/// Fills scene_narratives and video_narrative of a document that already has
/// segments, anchors and residuals. The result is validated.
AggregateResult aggregate_document(CaptionDocument doc, const AggregateOptions& opts, ModelBackend* backend = nullptr);

/// Omissions, evidence, ledgers and warnings as JSON.
std::string serialize_audit(const AggregateResult& result);

} // namespace codeccap
