#include "codeccap/forge.hpp"

#include "codeccap/error.hpp"
#include "codeccap/json_io.hpp"
#include "codeccap/raster.hpp"
#include "text_util.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include <fcntl.h>
#include <unistd.h>

namespace codeccap {

namespace fs = std::filesystem;
using json_io::Json;

namespace {

constexpr std::array<std::string_view, 6> kStageNames{"pending", "segmented", "captioned",
                                                      "aggregated", "done", "failed"};

std::int64_t to_ms(double s) { return static_cast<std::int64_t>(std::llround(s * 1000.0)); }

std::size_t count_tokens(const Tokenizer& tok, std::string_view text) {
    return tok ? tok(text) : word_count(text);
}

std::string recovery_hint(const fs::path& job) {
    return "; move '" + job.string() + "' aside (or delete it) to reprocess that video, then rerun";
}

} // namespace

std::string_view to_string(JobStage stage) { return kStageNames[static_cast<std::size_t>(stage)]; }

JobStage job_stage_from_string(std::string_view name) {
    for (std::size_t i = 0; i < kStageNames.size(); ++i)
        if (kStageNames[i] == name) return static_cast<JobStage>(i);
    throw InputError("unknown job stage '" + std::string(name) + "'");
}

// --- journal -----------------------------------------------------------------

std::string serialize_journal_entry(const JournalEntry& e) {
    Json j;
    j["seq"] = e.seq;
    j["event"] = e.event;
    j["stage"] = to_string(e.stage);
    j["attempt"] = e.attempt;
    if (!e.artifacts.empty()) j["artifacts"] = e.artifacts;
    if (!e.error.empty()) j["error"] = e.error;
    return j.dump() + "\n";
}

std::vector<JournalEntry> parse_journal(std::string_view bytes, std::string_view label) {
    std::vector<JournalEntry> out;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos < bytes.size()) {
        const auto nl = bytes.find('\n', pos);
        if (nl == std::string_view::npos) break;  // torn tail
        const auto line = bytes.substr(pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        auto bad = [&](const std::string& why) {
            return StateError(std::string(label) + " line " + std::to_string(line_no) + ": " + why);
        };
        Json j;
        try {
            j = Json::parse(line);
        } catch (const nlohmann::json::exception&) {
            throw bad("not valid JSON");
        }
        try {
            JournalEntry e;
            e.seq = j.at("seq").get<std::size_t>();
            e.event = j.at("event").get<std::string>();
            e.stage = job_stage_from_string(j.at("stage").get<std::string>());
            e.attempt = j.at("attempt").get<std::size_t>();
            if (j.contains("artifacts")) e.artifacts = j["artifacts"].get<std::vector<std::string>>();
            if (j.contains("error")) e.error = j["error"].get<std::string>();
            if (e.event != "attempt" && e.event != "stage" && e.event != "failed") throw bad("unknown event " + e.event);
            out.push_back(std::move(e));
        } catch (const nlohmann::json::exception& ex) {
            throw bad(ex.what());
        } catch (const InputError& ex) {
            throw bad(ex.what());
        }
    }
    return out;
}

JobState replay_journal(const std::string& video_id, const std::vector<JournalEntry>& entries,
                        std::size_t max_attempts) {
    JobState s;
    s.video_id = video_id;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& e = entries[i];
        auto bad = [&](const std::string& why) {
            return StateError("journal of '" + video_id + "' entry " + std::to_string(i) + ": " + why);
        };
        if (e.seq != i) throw bad("sequence number " + std::to_string(e.seq) + ", expected " + std::to_string(i));
        if (e.event == "attempt") {
            if (i > 0 && s.stage != JobStage::failed) throw bad("new attempt while not failed");
            if (e.attempt != s.attempt + 1) throw bad("attempt numbers must increase by one");
            if (e.attempt > max_attempts) throw bad("attempt " + std::to_string(e.attempt) + " exceeds the maximum");
            if (e.stage != JobStage::pending) throw bad("an attempt starts at pending");
            s.attempt = e.attempt;
            s.stage = JobStage::pending;
            s.artifacts.clear();
            continue;
        }
        if (s.attempt == 0) throw bad("event before the first attempt");
        if (e.attempt != s.attempt) throw bad("attempt number does not match the running attempt");
        if (s.stage == JobStage::failed || s.stage == JobStage::done) throw bad("event after a terminal stage");
        if (e.event == "failed") {
            if (e.stage != JobStage::failed) throw bad("failed event must carry the failed stage");
            s.stage = JobStage::failed;
            s.last_error = e.error;
            continue;
        }
        if (e.stage == JobStage::failed || e.stage == JobStage::pending ||
            static_cast<int>(e.stage) != static_cast<int>(s.stage) + 1)
            throw bad("stage " + std::string(to_string(e.stage)) + " cannot follow " + std::string(to_string(s.stage)));
        s.stage = e.stage;
        s.artifacts[e.stage] = e.artifacts;
    }
    return s;
}

namespace {

/// Append-only journal of one job. A torn final line left by a crash is cut
/// off when the journal is opened.
class Journal {
public:
    Journal(fs::path path, std::string video_id, std::size_t max_attempts)
        : path_(std::move(path)), video_id_(std::move(video_id)) {
        if (fs::exists(path_)) {
            auto bytes = read_file(path_);
            const auto keep = bytes.rfind('\n');
            const std::size_t good = keep == std::string::npos ? 0 : keep + 1;
            if (good != bytes.size()) fs::resize_file(path_, good);
            entries_ = parse_journal(std::string_view(bytes).substr(0, good), path_.string());
        }
        state_ = replay_journal(video_id_, entries_, max_attempts);
    }

    const JobState& state() const { return state_; }

    void append(JournalEntry e, std::size_t max_attempts) {
        e.seq = entries_.size();
        const auto line = serialize_journal_entry(e);
        const int fd = ::open(path_.c_str(), O_WRONLY | O_APPEND | O_CREAT, 0644);
        if (fd < 0) throw StateError("cannot open journal '" + path_.string() + "'");
        const auto n = ::write(fd, line.data(), line.size());
        ::fsync(fd);
        ::close(fd);
        if (n != static_cast<ssize_t>(line.size())) throw StateError("short write to '" + path_.string() + "'");
        entries_.push_back(std::move(e));
        state_ = replay_journal(video_id_, entries_, max_attempts);
    }

private:
    fs::path path_;
    std::string video_id_;
    std::vector<JournalEntry> entries_;
    JobState state_;
};

std::string escape_id(const std::string& id) {
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned char c : id) {
        if (std::isalnum(c) || c == '-' || c == '_' || c == '.') {
            out += static_cast<char>(c);
        } else {
            out += '%';
            out += hex[c >> 4];
            out += hex[c & 15];
        }
    }
    if (out == "." || out == "..") out = "%2e" + out.substr(1);
    return out;
}

std::string caption_file(std::size_t k) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "captions/segment_%04zu.json", k);
    return buf;
}

} // namespace

fs::path job_dir(const fs::path& state_dir, const std::string& video_id) {
    return state_dir / "jobs" / escape_id(video_id);
}

// --- inputs --------------------------------------------------------------------

VideoInputs load_video_inputs(const VideoRef& video, const fs::path& base_dir, const CutDetectConfig& cut_cfg,
                              double rate_hz) {
    VideoInputs in;
    in.dir = fs::path(video.source).is_absolute() ? fs::path(video.source) : base_dir / video.source;
    if (!fs::is_directory(in.dir))
        throw InputError("input directory '" + in.dir.string() + "' for video '" + video.video_id + "' not found");
    in.frames_dir = in.dir / "frames";
    const auto frames = list_frame_dir(in.frames_dir);
    if (frames.empty()) throw InputError("no frames in '" + in.frames_dir.string() + "'");

    if (fs::exists(in.dir / "iframes.json"))
        in.timeline = parse_iframe_timeline(read_file(in.dir / "iframes.json"), TimelineSource::probe_tool_json);
    else if (fs::exists(in.dir / "iframes.txt"))
        in.timeline = parse_iframe_timeline(read_file(in.dir / "iframes.txt"), TimelineSource::plain_list);
    else
        throw InputError("no iframes.json or iframes.txt in '" + in.dir.string() + "'");

    if (fs::exists(in.dir / "cuts.txt"))
        in.cuts = import_cuts(read_file(in.dir / "cuts.txt"), CutFormat::plain);
    else if (fs::exists(in.dir / "cuts.csv"))
        in.cuts = import_cuts(read_file(in.dir / "cuts.csv"), CutFormat::csv);
    else
        in.cuts = detect_cuts(features_from_dir(in.frames_dir, cut_cfg.bins_per_channel), cut_cfg);

    in.duration_s = video.duration_s ? *video.duration_s : quantize_time(frames.back().time_s + 1.0 / rate_hz);
    return in;
}

// --- statistics ----------------------------------------------------------------

BaselineCaptions parse_baseline(std::string_view bytes) {
    const auto j = json_io::parse(bytes);
    BaselineCaptions b;
    b.video_id = json_io::string_field(j, "video_id");
    const auto& caps = json_io::field(j, "captions");
    if (!caps.is_array()) throw ValidationError("captions is an array", "baseline '" + b.video_id + "'");
    for (const auto& c : caps) {
        const double t = c.contains("time_s") ? json_io::number_field(c, "time_s") : json_io::number_field(c, "time");
        const auto text = c.contains("text") ? json_io::string_field(c, "text") : json_io::string_field(c, "caption");
        b.captions.emplace_back(quantize_time(t), text);
    }
    std::stable_sort(b.captions.begin(), b.captions.end(),
                     [](const auto& a, const auto& c) { return a.first < c.first; });
    return b;
}

CorpusStats compute_stats(const std::vector<CaptionDocument>& documents, const std::vector<BaselineCaptions>& baselines,
                          const Tokenizer& tokenizer) {
    if (documents.empty()) throw InputError("corpus statistics need at least one completed document");
    CorpusStats s;
    s.videos = documents.size();

    std::vector<std::size_t> seg_counts;
    std::int64_t total_ms = 0;
    std::size_t anchors = 0, anchor_words = 0, records = 0, residual_words = 0;
    std::map<std::string, std::size_t> codec_tokens;
    for (const auto& d : documents) {
        seg_counts.push_back(d.segments.size());
        const double dur = d.video.duration_s ? *d.video.duration_s : (d.segments.empty() ? 0.0 : d.segments.back().end_s);
        total_ms += to_ms(dur);
        std::size_t codec = 0;
        for (const auto& a : d.anchors) {
            const auto n = count_tokens(tokenizer, a.text);
            anchor_words += n;
            codec += n;
            ++anchors;
        }
        for (const auto& seg : d.residuals)
            for (const auto& r : seg) {
                const auto n = count_tokens(tokenizer, r.delta_caption);
                residual_words += n;
                codec += n;
                ++records;
            }
        codec_tokens[d.video.video_id] += codec;
    }
    std::sort(seg_counts.begin(), seg_counts.end());
    const auto n = seg_counts.size();
    s.median_segments = n % 2 ? static_cast<double>(seg_counts[n / 2])
                              : (static_cast<double>(seg_counts[n / 2 - 1]) + static_cast<double>(seg_counts[n / 2])) / 2.0;
    s.total_hours = static_cast<double>(total_ms) / 3.6e6;
    s.mean_anchor_words = anchors ? static_cast<double>(anchor_words) / static_cast<double>(anchors) : 0.0;
    s.mean_residuals_per_video = static_cast<double>(records) / static_cast<double>(s.videos);
    s.mean_residual_words = records ? static_cast<double>(residual_words) / static_cast<double>(records) : 0.0;

    std::size_t base_total = 0, codec_total = 0;
    for (const auto& b : baselines) {
        auto it = codec_tokens.find(b.video_id);
        if (it == codec_tokens.end()) continue;
        for (const auto& [t, text] : b.captions) base_total += count_tokens(tokenizer, text);
        codec_total += it->second;
        ++s.baseline_videos;
    }
    if (s.baseline_videos > 0 && codec_total > 0)
        s.token_efficiency = static_cast<double>(base_total) / static_cast<double>(codec_total);
    return s;
}

std::string serialize_stats(const CorpusStats& s) {
    Json j;
    j["videos"] = s.videos;
    j["total_hours"] = s.total_hours;
    j["median_segments"] = s.median_segments;
    j["mean_anchor_words"] = s.mean_anchor_words;
    j["mean_residuals_per_video"] = s.mean_residuals_per_video;
    j["mean_residual_words"] = s.mean_residual_words;
    j["baseline_videos"] = s.baseline_videos;
    j["token_efficiency"] = s.token_efficiency ? Json(*s.token_efficiency) : Json(nullptr);
    return json_io::dump(j);
}

RedundancyReport redundancy_report(const CaptionDocument& doc, const BaselineCaptions& baseline,
                                   const Tokenizer& tokenizer) {
    if (doc.video.video_id != baseline.video_id)
        throw InputError("baseline is for video '" + baseline.video_id + "' but the document is for '" +
                         doc.video.video_id + "'");
    RedundancyReport r;
    r.video_id = doc.video.video_id;
    for (const auto& a : doc.anchors) r.anchor_tokens += count_tokens(tokenizer, a.text);
    for (const auto& seg : doc.residuals)
        for (const auto& rec : seg) {
            r.residual_tokens += count_tokens(tokenizer, rec.delta_caption);
            if (rec.is_no_change()) ++r.no_change_records;
        }
    r.codec_tokens = r.anchor_tokens + r.residual_tokens;

    std::map<std::string, std::size_t> index;  // normalized sentence -> position in duplicates
    std::vector<DuplicateSentence> seen;
    std::set<std::int64_t> dup_ms;
    for (const auto& [t, text] : baseline.captions) {
        r.baseline_tokens += count_tokens(tokenizer, text);
        for (const auto& sentence : sentences_of(text)) {
            const auto key = text::lower(text::squash_spaces(text::trim(sentence)));
            if (key.empty()) continue;
            auto [it, fresh] = index.emplace(key, seen.size());
            if (fresh) {
                seen.push_back({key, {t}});
            } else {
                seen[it->second].times.push_back(t);
                ++r.duplicate_occurrences;
                dup_ms.insert(to_ms(t));
            }
        }
    }
    for (auto& d : seen)
        if (d.times.size() > 1) r.duplicates.push_back(std::move(d));
    for (auto ms : dup_ms) r.duplicate_times.push_back(static_cast<double>(ms) / 1000.0);
    r.ratio = r.codec_tokens ? static_cast<double>(r.baseline_tokens) / static_cast<double>(r.codec_tokens) : 0.0;
    return r;
}

std::string serialize_redundancy(const RedundancyReport& r) {
    Json j;
    j["video_id"] = r.video_id;
    j["baseline_tokens"] = r.baseline_tokens;
    j["codec_tokens"] = r.codec_tokens;
    j["anchor_tokens"] = r.anchor_tokens;
    j["residual_tokens"] = r.residual_tokens;
    j["ratio"] = r.ratio;
    j["no_change_records"] = r.no_change_records;
    j["duplicate_occurrences"] = r.duplicate_occurrences;
    Json times = Json::array();
    for (double t : r.duplicate_times) times.push_back(json_io::time_value(t));
    j["duplicate_times"] = times;
    Json dups = Json::array();
    for (const auto& d : r.duplicates) {
        Json ts = Json::array();
        for (double t : d.times) ts.push_back(json_io::time_value(t));
        dups.push_back({{"sentence", d.sentence}, {"times", ts}});
    }
    j["duplicates"] = dups;
    return json_io::dump(j);
}

CaptionDocument assemble_document(const SegmentPlan& plan, const std::vector<SegmentCaptions>& captions,
                                  double rate_hz) {
    if (captions.size() != plan.segments.size())
        throw InputError("plan has " + std::to_string(plan.segments.size()) + " segments but " +
                         std::to_string(captions.size()) + " caption files were given");
    CaptionDocument doc;
    doc.video = plan.video;
    doc.sample_rate_hz = rate_hz;
    doc.segments = plan.segments;
    for (std::size_t k = 0; k < captions.size(); ++k) {
        const auto& c = captions[k];
        if (!(c.segment == plan.segments[k]))
            throw InputError("caption file for segment " + std::to_string(k) + " does not match the plan");
        if (!c.anchor) throw InputError("segment " + std::to_string(k) + " has no anchor: " + c.anchor_error);
        doc.anchors.push_back(*c.anchor);
        doc.residuals.push_back(c.residuals);
    }
    return doc;
}

// --- batch engine ----------------------------------------------------------------

namespace {

class JobFailure : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "job"; }
};

struct JobContext {
    const VideoRef& video;
    ModelBackend& backend;
    const ForgeOptions& opts;
    fs::path dir;
    Journal& journal;
    std::atomic<std::size_t>& appends;

    void record(JournalEntry e) {
        e.attempt = e.event == "attempt" ? e.attempt : journal.state().attempt;
        journal.append(std::move(e), opts.max_attempts);
        const auto n = ++appends;
        if (opts.on_journal_append) opts.on_journal_append(n);
    }

    void reach(JobStage stage, std::vector<std::string> artifacts) {
        record({0, "stage", stage, 0, std::move(artifacts), {}});
    }
};

SegmentPlan read_plan(const fs::path& dir) { return deserialize_plan(read_file(dir / "segments.json")); }

void stage_segment(JobContext& ctx) {
    const auto& o = ctx.opts;
    const auto in = load_video_inputs(ctx.video, o.input_base, o.cuts, o.caption.rate_hz);
    VideoRef v = ctx.video;
    v.duration_s = in.duration_s;
    const auto plan = plan_video(v, in.timeline, in.cuts, o.segmentation);
    write_file_atomic(ctx.dir / "segments.json", serialize_plan(plan));
    ctx.reach(JobStage::segmented, {"segments.json"});
}

void stage_caption(JobContext& ctx) {
    const auto& o = ctx.opts;
    const auto plan = read_plan(ctx.dir);
    const auto in_dir = fs::path(ctx.video.source).is_absolute() ? fs::path(ctx.video.source)
                                                                 : o.input_base / ctx.video.source;
    const DirectoryFrameSource frames(in_dir / "frames", 0.5 / o.caption.rate_hz);
    fs::create_directories(ctx.dir / "captions");
    std::vector<std::string> artifacts;
    for (const auto& seg : plan.segments) {
        const auto rel = caption_file(seg.index);
        const auto path = ctx.dir / rel;
        if (fs::exists(path)) {
            const auto prior = deserialize_segment_captions(read_file(path));
            if (!prior.failed() && prior.segment == seg) {
                artifacts.push_back(rel);
                continue;
            }
        }
        const auto caps = caption_segment(seg, frames, ctx.backend, o.caption);
        if (caps.failed()) {
            std::string why = caps.anchor_error;
            for (const auto& w : caps.windows)
                if (w.failed)
                    why += (why.empty() ? "" : "; ") + std::string("window [") + std::to_string(w.window.first) + "," +
                           std::to_string(w.window.last) + "]: " + w.error;
            throw JobFailure("segment " + std::to_string(seg.index) + " failed: " + why);
        }
        write_file_atomic(path, serialize_segment_captions(caps));
        artifacts.push_back(rel);
    }
    ctx.reach(JobStage::captioned, std::move(artifacts));
}

void stage_aggregate(JobContext& ctx) {
    const auto& o = ctx.opts;
    const auto plan = read_plan(ctx.dir);
    std::vector<SegmentCaptions> caps;
    for (const auto& seg : plan.segments)
        caps.push_back(deserialize_segment_captions(read_file(ctx.dir / caption_file(seg.index))));
    auto doc = assemble_document(plan, caps, o.caption.rate_hz);
    const bool needs_backend = o.aggregate.mode == SynthesisMode::backend || o.aggregate.backend_claims;
    const auto result = aggregate_document(std::move(doc), o.aggregate, needs_backend ? &ctx.backend : nullptr);
    write_file_atomic(ctx.dir / "document.json", serialize_document(result.document));
    write_file_atomic(ctx.dir / "audit.json", serialize_audit(result));
    ctx.reach(JobStage::aggregated, {"document.json", "audit.json"});
}

void stage_finish(JobContext& ctx) {
    validate(deserialize_document(read_file(ctx.dir / "document.json")));
    ctx.reach(JobStage::done, {"document.json"});
}

bool stop_here(const ForgeOptions& o, JobStage s) { return o.stop_after && *o.stop_after == s; }

void run_job(JobContext& ctx) {
    const auto& o = ctx.opts;
    for (;;) {
        auto s = ctx.journal.state();
        if (s.stage == JobStage::done) return;
        if (s.stage == JobStage::failed || s.attempt == 0) {
            if (s.attempt >= o.max_attempts) return;
            ctx.record({0, "attempt", JobStage::pending, s.attempt + 1, {}, {}});
        }
        try {
            for (;;) {
                const auto stage = ctx.journal.state().stage;
                if (stage == JobStage::done) return;
                if (stage != JobStage::pending && stop_here(o, stage)) return;
                switch (stage) {
                case JobStage::pending: stage_segment(ctx); break;
                case JobStage::segmented: stage_caption(ctx); break;
                case JobStage::captioned: stage_aggregate(ctx); break;
                case JobStage::aggregated: stage_finish(ctx); break;
                default: return;
                }
            }
        } catch (const StateError&) {
            throw;
        } catch (const Error& e) {
            ctx.record({0, "failed", JobStage::failed, 0, {}, std::string(e.kind()) + ": " + e.what()});
        } catch (const std::exception& e) {
            ctx.record({0, "failed", JobStage::failed, 0, {}, std::string("internal: ") + e.what()});
        }
    }
}

void check_artifacts(const fs::path& dir, const JobState& s) {
    for (const auto& [stage, files] : s.artifacts)
        for (const auto& f : files)
            if (!fs::exists(dir / f))
                throw StateError("state of '" + s.video_id + "' lists missing artifact '" + f + "' for stage " +
                                 std::string(to_string(stage)) + recovery_hint(dir));
}

Json index_entry(const JobState& s) {
    Json j;
    j["video_id"] = s.video_id;
    j["stage"] = to_string(s.stage);
    j["attempt"] = s.attempt;
    j["last_error"] = s.last_error;
    j["document"] = s.stage == JobStage::done ? Json("jobs/" + escape_id(s.video_id) + "/document.json") : Json(nullptr);
    return j;
}

JobState read_job(const fs::path& dir, const std::string& video_id, std::size_t max_attempts) {
    const auto path = dir / "journal.jsonl";
    if (!fs::exists(path)) {
        JobState s;
        s.video_id = video_id;
        return s;
    }
    try {
        auto bytes = read_file(path);
        const auto keep = bytes.rfind('\n');
        bytes.resize(keep == std::string::npos ? 0 : keep + 1);
        auto s = replay_journal(video_id, parse_journal(bytes, path.string()), max_attempts);
        check_artifacts(dir, s);
        return s;
    } catch (const StateError& e) {
        const std::string msg = e.what();
        if (msg.find("reprocess") != std::string::npos) throw;
        throw StateError(msg + recovery_hint(dir));
    }
}

} // namespace

std::vector<JobState> load_state(const fs::path& state_dir, std::size_t max_attempts) {
    const auto index_path = state_dir / "index.json";
    if (!fs::exists(index_path)) {
        if (!fs::exists(state_dir / "jobs"))
            throw StateError("'" + state_dir.string() + "' is not a forge state directory");
    }
    std::vector<JobState> out;
    if (fs::exists(state_dir / "jobs")) {
        for (const auto& e : fs::directory_iterator(state_dir / "jobs")) {
            if (!e.is_directory()) continue;
            const auto journal = e.path() / "journal.jsonl";
            if (!fs::exists(journal)) continue;
            // The video id is stored in the index; fall back to the directory name.
            out.push_back(read_job(e.path(), e.path().filename().string(), max_attempts));
        }
    }
    if (fs::exists(index_path)) {
        Json idx;
        try {
            idx = json_io::parse(read_file(index_path));
        } catch (const InputError& ex) {
            throw StateError("index '" + index_path.string() + "' is unreadable: " + ex.what() +
                             "; delete it and rerun forge to rebuild it");
        }
        std::map<std::string, std::string> by_dir;
        for (const auto& j : idx) {
            const auto id = j.at("video_id").get<std::string>();
            by_dir[escape_id(id)] = id;
        }
        for (auto& s : out)
            if (auto it = by_dir.find(s.video_id); it != by_dir.end()) s.video_id = it->second;
    }
    std::sort(out.begin(), out.end(), [](const JobState& a, const JobState& b) { return a.video_id < b.video_id; });
    return out;
}

std::vector<CaptionDocument> load_documents(const fs::path& state_dir, std::size_t max_attempts) {
    std::vector<CaptionDocument> docs;
    for (const auto& s : load_state(state_dir, max_attempts))
        if (s.stage == JobStage::done)
            docs.push_back(deserialize_document(read_file(job_dir(state_dir, s.video_id) / "document.json")));
    std::sort(docs.begin(), docs.end(),
              [](const CaptionDocument& a, const CaptionDocument& b) { return a.video.video_id < b.video.video_id; });
    return docs;
}

ForgeReport run_forge(const std::vector<VideoRef>& manifest, ModelBackend& backend, const ForgeOptions& opts) {
    if (opts.max_attempts == 0) throw ConfigError("forge.max_attempts must be at least 1");
    opts.segmentation.validate();
    opts.cuts.validate();
    opts.caption.validate();
    fs::create_directories(opts.state_dir / "jobs");

    // Open every journal up front so a corrupt state directory stops the run
    // before any work starts.
    std::vector<std::unique_ptr<Journal>> journals;
    for (const auto& v : manifest) {
        const auto dir = job_dir(opts.state_dir, v.video_id);
        fs::create_directories(dir);
        try {
            journals.push_back(std::make_unique<Journal>(dir / "journal.jsonl", v.video_id, opts.max_attempts));
        } catch (const StateError& e) {
            throw StateError(std::string(e.what()) + recovery_hint(dir));
        }
        check_artifacts(dir, journals.back()->state());
    }

    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> appends{0};
    std::mutex err_mu;
    std::exception_ptr fatal;
    auto worker = [&] {
        for (;;) {
            const auto i = next++;
            if (i >= manifest.size()) return;
            {
                std::lock_guard lk(err_mu);
                if (fatal) return;
            }
            try {
                JobContext ctx{manifest[i], backend, opts, job_dir(opts.state_dir, manifest[i].video_id), *journals[i],
                               appends};
                run_job(ctx);
            } catch (...) {
                std::lock_guard lk(err_mu);
                if (!fatal) fatal = std::current_exception();
            }
        }
    };
    const auto n = std::max<std::size_t>(1, std::min(opts.workers, manifest.size()));
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < n; ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (fatal) std::rethrow_exception(fatal);

    ForgeReport report;
    std::vector<JobState> sorted;
    for (const auto& j : journals) {
        report.jobs.push_back(j->state());
        sorted.push_back(j->state());
    }
    std::sort(sorted.begin(), sorted.end(), [](const JobState& a, const JobState& b) { return a.video_id < b.video_id; });
    Json idx = Json::array();
    for (const auto& s : sorted) idx.push_back(index_entry(s));
    write_file_atomic(opts.state_dir / "index.json", json_io::dump(idx));

    std::vector<CaptionDocument> docs;
    std::vector<BaselineCaptions> baselines;
    for (const auto& s : sorted) {
        if (s.stage != JobStage::done) continue;
        docs.push_back(deserialize_document(read_file(job_dir(opts.state_dir, s.video_id) / "document.json")));
        const auto it = std::find_if(manifest.begin(), manifest.end(),
                                     [&](const VideoRef& v) { return v.video_id == s.video_id; });
        const auto in_dir = fs::path(it->source).is_absolute() ? fs::path(it->source) : opts.input_base / it->source;
        if (fs::exists(in_dir / "baseline.json")) baselines.push_back(parse_baseline(read_file(in_dir / "baseline.json")));
    }
    const auto stats_path = opts.state_dir / "stats.json";
    if (!docs.empty()) {
        report.stats = compute_stats(docs, baselines);
        write_file_atomic(stats_path, serialize_stats(*report.stats));
    } else if (fs::exists(stats_path)) {
        fs::remove(stats_path);
    }
    return report;
}

} // namespace codeccap
