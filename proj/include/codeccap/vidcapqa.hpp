#pragma once

#include "codeccap/backend.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace codeccap {

/// The fourteen capability dimensions, snake_case, alphabetical.
const std::vector<std::string>& capability_names();
/// Accepts "camera movement", "Camera Movement" or "camera_movement".
std::string normalize_capability(std::string_view name);
bool is_unknown_vote(std::string_view vote);

/// The eight source benchmarks.
const std::vector<std::string>& source_names();
std::string normalize_source(std::string_view name);

enum class Difficulty { easy, medium, hard, very_hard };

std::string_view to_string(Difficulty d);
Difficulty difficulty_from_string(std::string_view name);

enum class FilterState {
    pool,
    text_leak,
    normal,
    suspected_wrong_gt,
    phase_b_pending,
    consensus_hard,
    likely_correct,
    discarded
};

std::string_view to_string(FilterState s);
FilterState filter_state_from_string(std::string_view name);

inline constexpr int kUnknownAnswer = -1;

struct QaQuestion {
    std::string question_id;
    std::string source_benchmark;
    std::string video_id;
    std::string question;
    std::array<std::string, 4> options;
    int ground_truth = 0;
    std::optional<std::string> capability;
    std::optional<Difficulty> difficulty;
    FilterState filter_state = FilterState::pool;
    int phase_a_matches = -1;  ///< set once phase A has run

    void validate() const;
    bool operator==(const QaQuestion&) const = default;
};

enum class VotePhase { relabel, text_only, phase_a, phase_b, eval };

std::string_view to_string(VotePhase p);

struct VoteRecord {
    std::string question_id;
    std::string voter_id;
    std::string vote;
    VotePhase phase = VotePhase::relabel;
};

/// "A".."D", "0".."3" or unknown; anything else is an InputError.
int parse_answer(std::string_view vote);

// --- filtering rules ------------------------------------------------------------

/// Four capability votes (names or "unknown"). With `strict_unknown` a label
/// must beat the unknown count; otherwise it must only match it.
std::optional<std::string> relabel_capability(const std::vector<std::string>& votes, bool strict_unknown = true);

/// True when either text-only answer hits the ground truth (discard).
bool text_leak(int ground_truth, const std::vector<int>& answers);

FilterState phase_a_classify(int ground_truth, const std::vector<int>& answers);

FilterState phase_b_classify(const std::vector<bool>& confirmations);

/// Easy/medium from phase A match counts, hard/very hard from phase B.
Difficulty assign_difficulty(const QaQuestion& q);

/// Votes grouped by question and phase, in file order.
struct VoteBook {
    std::map<std::string, std::map<VotePhase, std::vector<VoteRecord>>> votes;

    void add(VoteRecord v);
    const std::vector<VoteRecord>& get(const std::string& question_id, VotePhase phase) const;
};

/// Reads relabel.jsonl, text_only.jsonl, phase_a.jsonl and phase_b.jsonl.
VoteBook load_votes(const std::filesystem::path& dir);
VoteBook parse_votes(std::string_view bytes, VotePhase phase, VoteBook book = {});

struct FilterOutcome {
    std::vector<QaQuestion> questions;  ///< every pool question with its final state
    std::vector<QaQuestion> retained;   ///< normal, likely_correct or consensus_hard, with difficulty
};

/// Pure function of the pool and the recorded votes.
FilterOutcome run_filters(std::vector<QaQuestion> pool, const VoteBook& votes, bool strict_unknown = true);

// --- pool ingestion ---------------------------------------------------------------

/// Field names of one source's records. Ground truth may be an index, a letter
/// or the text of an option.
struct PoolAdapter {
    std::string question_id = "question_id";
    std::string video_id = "video_id";
    std::string question = "question";
    std::string options = "options";
    std::string ground_truth = "ground_truth";
};

/// Adapters keyed by source; each record names its source in
/// "source_benchmark" (or "source").
using AdapterTable = std::map<std::string, PoolAdapter>;
AdapterTable parse_adapters(std::string_view json);

std::vector<QaQuestion> parse_pool(std::string_view bytes, const AdapterTable& adapters = {});

// --- sampling ---------------------------------------------------------------------

/// Target shares per difficulty, as integer parts.
using Mixture = std::array<std::size_t, 4>;
inline constexpr Mixture kDefaultMixture{30, 35, 25, 10};

/// Dimensions with too few questions get all of them; the rest share the
/// remaining budget evenly, larger shares first by availability then name.
std::map<std::string, std::size_t> allocate_budget(const std::map<std::string, std::size_t>& available,
                                                   std::size_t budget);

/// quota x mixture by largest remainder; ties go to the easier level.
std::array<std::size_t, 4> largest_remainder(std::size_t quota, const Mixture& mixture = kDefaultMixture);

/// Largest-remainder targets with shortfalls moved to the nearest level that
/// has spare questions (easier first on ties).
std::array<std::size_t, 4> difficulty_targets(std::size_t quota, const std::array<std::size_t, 4>& available,
                                              const Mixture& mixture = kDefaultMixture);

std::uint64_t splitmix64(std::uint64_t x);

/// Uniform integer in [0, n) by rejection on a 64-bit Mersenne twister.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed);
    std::uint64_t below(std::uint64_t n);

private:
    std::mt19937_64 engine_;
};

/// Selected ids per difficulty level; each level sorted by id.
std::array<std::vector<std::string>, 4> sample_within_dimension(const std::array<std::vector<std::string>, 4>& candidates,
                                                                 std::size_t quota, std::uint64_t seed,
                                                                 const Mixture& mixture = kDefaultMixture);

struct Benchmark {
    std::vector<QaQuestion> questions;  ///< ordered by capability, difficulty, id
    std::map<std::string, std::size_t> allocation;
    std::uint64_t seed = 0;
    std::size_t budget = 0;
};

Benchmark build_benchmark(const std::vector<QaQuestion>& retained, std::size_t budget, std::uint64_t seed,
                          const Mixture& mixture = kDefaultMixture);

/// JSON lines, one question per line.
std::string serialize_questions(const std::vector<QaQuestion>& questions);
std::vector<QaQuestion> parse_questions(std::string_view bytes);

// --- evaluation -------------------------------------------------------------------

struct EvalResult {
    std::string question_id;
    std::string capability;
    int predicted = kUnknownAnswer;
    std::string rationale;
    std::string observation;
    bool correct = false;
    bool parse_failure = false;
    bool repaired = false;
    bool errored = false;
    std::string error;

    bool operator==(const EvalResult&) const = default;
};

/// Parsed model answer, or nullopt when no usable choice is present.
struct ParsedAnswer {
    int choice = kUnknownAnswer;
    std::string rationale;
    std::string observation;
};
std::optional<ParsedAnswer> parse_eval_answer(std::string_view text);

std::string render_eval_prompt(std::string_view caption, const QaQuestion& q);

/// Caption-then-predict. An empty caption answers unknown without a call.
EvalResult evaluate_caption(std::string_view caption, const QaQuestion& q, ModelBackend& backend);

std::string serialize_eval_result(const EvalResult& r);
EvalResult parse_eval_result(std::string_view line);

struct MetricCI {
    std::size_t n = 0;
    double estimate = 0.0;
    double lo = 0.0;
    double hi = 0.0;

    bool operator==(const MetricCI&) const = default;
};

struct MetricsReport {
    MetricCI overall;
    MetricCI no_evidence;
    std::map<std::string, MetricCI> per_dimension;  ///< all fourteen, n may be 0
    std::size_t questions = 0;
    std::size_t unknown = 0;
    std::size_t errored = 0;
    std::size_t excluded = 0;
    std::uint64_t seed = 0;
    std::size_t resamples = 0;

    bool operator==(const MetricsReport&) const = default;
};

/// Percentile bootstrap CI of the mean of 0/1 outcomes, clamped to contain the
/// point estimate.
MetricCI bootstrap_mean(const std::vector<std::uint8_t>& outcomes, std::uint64_t seed, std::size_t resamples);

/// Errored results count as unknown unless `strict`, which drops them.
MetricsReport compute_metrics(const std::vector<EvalResult>& results, std::uint64_t seed,
                              std::size_t resamples = 10000, bool strict = false);

std::string serialize_metrics(const MetricsReport& report);
std::string format_metrics_table(const MetricsReport& report);

/// Evaluates every question, appending to `log_path` (JSON lines) and skipping
/// questions already logged there. `caption_for` returns the caption text for
/// a video id. Returns results in benchmark order.
std::vector<EvalResult> run_evaluation(const std::vector<QaQuestion>& questions,
                                       const std::function<std::string(const std::string&)>& caption_for,
                                       ModelBackend& backend, const std::filesystem::path& log_path,
                                       std::size_t workers = 1);

} // namespace codeccap
