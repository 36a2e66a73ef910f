#include "codeccap/cli.hpp"

#include "codeccap/aggregate.hpp"
#include "codeccap/anchor_residual.hpp"
#include "codeccap/backend.hpp"
#include "codeccap/codec_probe.hpp"
#include "codeccap/cut_detect.hpp"
#include "codeccap/error.hpp"
#include "codeccap/forge.hpp"
#include "codeccap/json_io.hpp"
#include "codeccap/raster.hpp"
#include "codeccap/vidcapqa.hpp"
#include "text_util.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include <csignal>
#include <cstdlib>
#include <memory>
#include <thread>

#include <unistd.h>

namespace codeccap {

namespace fs = std::filesystem;
using json_io::Json;

namespace {

/// A subcommand flag that feeds a config key.
struct Binding {
    CLI::Option* option;
    std::string key;
    std::shared_ptr<std::string> value;
};

struct Context {
    Config cfg;
    std::ostream& out;
    std::ostream& err;
    std::shared_ptr<spdlog::logger> log;
};

void emit(std::ostream& out, const fs::path& path, std::string_view bytes) {
    if (path.empty() || path == "-") {
        out << bytes;
    } else {
        if (path.has_parent_path()) fs::create_directories(path.parent_path());
        write_file_atomic(path, bytes);
    }
}

std::size_t resolve_workers(long long n) {
    if (n < 0) throw ConfigError("forge.workers must be >= 0");
    if (n == 0) return std::max(1u, std::thread::hardware_concurrency());
    return static_cast<std::size_t>(n);
}

BackendConfig resolve_backend(const Config& cfg) {
    const auto name = cfg.string("backend.profile");
    BackendConfig bc;
    const fs::path direct(name);
    const fs::path in_dir = fs::path(cfg.string("backend.profiles_dir")) / (name + ".json");
    if (direct.extension() == ".json" && fs::exists(direct))
        bc = load_profile(direct);
    else if (fs::exists(in_dir))
        bc = load_profile(in_dir);
    else if (name != "replay")
        throw ConfigError("backend profile '" + name + "' not found (looked for " + in_dir.string() + ")");
    bc.mode = backend_mode_from_string(cfg.string("backend.mode"));
    bc.fixture_dir = cfg.string("backend.fixture_dir");
    bc.validate();
    return bc;
}

std::unique_ptr<ModelBackend> make_backend(const Config& cfg) {
    auto bc = resolve_backend(cfg);
    auto transport = bc.mode == BackendMode::replay ? nullptr : make_http_transport();
    return std::make_unique<ModelBackend>(std::move(bc), std::move(transport));
}

VideoRef read_video_entry(const std::string& arg) {
    const auto text = text::trim(arg);
    const auto bytes = !text.empty() && text.front() == '{' ? std::string(text) : read_file(arg);
    auto entries = parse_manifest(bytes);
    if (entries.size() != 1)
        throw InputError("--video must hold exactly one manifest entry, found " + std::to_string(entries.size()));
    return entries.front();
}

std::vector<SegmentCaptions> read_caption_dir(const fs::path& dir, SegmentPlan& plan) {
    if (!fs::is_directory(dir)) throw InputError("captions directory '" + dir.string() + "' not found");
    plan = deserialize_plan(read_file(dir / "plan.json"));
    std::vector<SegmentCaptions> caps;
    for (const auto& seg : plan.segments) {
        char name[40];
        std::snprintf(name, sizeof name, "segment_%04zu.json", seg.index);
        const auto path = dir / name;
        if (!fs::exists(path)) throw InputError("missing caption file '" + path.string() + "'");
        caps.push_back(deserialize_segment_captions(read_file(path)));
    }
    return caps;
}

std::map<std::string, std::string> read_narratives(const fs::path& dir, const Config& cfg) {
    std::map<std::string, std::string> out;
    std::vector<CaptionDocument> docs;
    if (fs::exists(dir / "jobs")) {
        docs = load_documents(dir, static_cast<std::size_t>(cfg.integer("forge.max_attempts")));
    } else {
        if (!fs::is_directory(dir)) throw InputError("captions directory '" + dir.string() + "' not found");
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) docs.push_back(deserialize_document(read_file(f)));
    }
    for (const auto& d : docs)
        if (!out.emplace(d.video.video_id, d.video_narrative).second)
            throw InputError("two caption documents for video '" + d.video.video_id + "'");
    return out;
}

// --- subcommands ------------------------------------------------------------------

struct SegmentArgs {
    std::string video, iframes, cuts, out;
};

void run_segment(Context& c, const SegmentArgs& a) {
    const auto video = read_video_entry(a.video);
    const auto timeline = parse_iframe_timeline(read_file(a.iframes));
    const auto cuts = a.cuts.empty() ? CutList{} : import_cuts(read_file(a.cuts));
    const auto plan = plan_video(video, timeline, cuts, c.cfg.segmentation());
    c.log->info("{}: {} segments, {} (cv {:.3f})", video.video_id, plan.segments.size(), to_string(plan.mode),
                plan.stats.cv);
    emit(c.out, a.out, serialize_plan(plan));
}

struct CutsArgs {
    std::string frames_dir, import, format = "auto", column, out;
};

void run_cuts(Context& c, const CutsArgs& a) {
    CutList cuts;
    if (!a.import.empty()) {
        CutFormat f = CutFormat::auto_detect;
        if (a.format == "plain") f = CutFormat::plain;
        else if (a.format == "csv") f = CutFormat::csv;
        else if (a.format != "auto") throw InputError("--format must be auto, plain or csv");
        cuts = import_cuts(read_file(a.import), f, a.column);
    } else {
        const auto cfg = c.cfg.cut_detect();
        cuts = detect_cuts(features_from_dir(a.frames_dir, cfg.bins_per_channel), cfg);
    }
    c.log->info("{} cuts", cuts.cut_times.size());
    emit(c.out, a.out, serialize_cuts(cuts));
}

struct CaptionArgs {
    std::string plan, frames, out;
};

void run_caption(Context& c, const CaptionArgs& a) {
    const auto cfg = c.cfg.caption();
    const auto plan = deserialize_plan(read_file(a.plan));
    auto backend = make_backend(c.cfg);
    const DirectoryFrameSource frames(a.frames, 0.5 / cfg.rate_hz);
    fs::create_directories(a.out);
    write_file_atomic(fs::path(a.out) / "plan.json", serialize_plan(plan));
    std::vector<std::string> failed;
    for (const auto& seg : plan.segments) {
        const auto caps = caption_segment(seg, frames, *backend, cfg);
        char name[40];
        std::snprintf(name, sizeof name, "segment_%04zu.json", seg.index);
        write_file_atomic(fs::path(a.out) / name, serialize_segment_captions(caps));
        c.log->info("segment {}: {} residuals{}", seg.index, caps.residuals.size(), caps.failed() ? " (failed)" : "");
        if (caps.failed()) failed.push_back(std::to_string(seg.index));
    }
    if (!failed.empty())
        throw BackendError("model output unusable after repair for segment(s) " + text::join(failed, ", "));
}

struct AggregateArgs {
    std::string captions, out, audit;
};

void run_aggregate(Context& c, const AggregateArgs& a) {
    SegmentPlan plan;
    const auto caps = read_caption_dir(a.captions, plan);
    auto opts = c.cfg.aggregate();
    if (!caps.empty()) opts.rate_hz = caps.front().samples.rate_hz;
    auto doc = assemble_document(plan, caps, opts.rate_hz);
    std::unique_ptr<ModelBackend> backend;
    if (opts.mode == SynthesisMode::backend || opts.backend_claims) backend = make_backend(c.cfg);
    const auto result = aggregate_document(std::move(doc), opts, backend.get());
    for (const auto& s : result.segments)
        for (const auto& w : s.warnings) c.log->warn("segment {}: {}", s.segment.index, w);
    emit(c.out, a.out, serialize_document(result.document));
    if (!a.audit.empty()) emit(c.out, a.audit, serialize_audit(result));
}

struct ForgeArgs {
    std::string manifest, state, stop_after;
    std::size_t crash_after = 0;
};

void run_forge_cmd(Context& c, const ForgeArgs& a) {
    const auto manifest = parse_manifest(read_file(a.manifest));
    auto backend = make_backend(c.cfg);
    ForgeOptions o;
    o.state_dir = a.state;
    o.input_base = fs::path(a.manifest).parent_path();
    o.workers = resolve_workers(c.cfg.integer("forge.workers"));
    const auto attempts = c.cfg.integer("forge.max_attempts");
    if (attempts < 1) throw ConfigError("forge.max_attempts must be at least 1");
    o.max_attempts = static_cast<std::size_t>(attempts);
    o.segmentation = c.cfg.segmentation();
    o.cuts = c.cfg.cut_detect();
    o.caption = c.cfg.caption();
    o.aggregate = c.cfg.aggregate();
    if (!a.stop_after.empty()) o.stop_after = job_stage_from_string(a.stop_after);
    if (a.crash_after > 0) {
        const auto limit = a.crash_after;
        o.on_journal_append = [limit](std::size_t n) {
            if (n >= limit) ::kill(::getpid(), SIGKILL);
        };
    }
    c.log->info("forge: {} videos, {} workers", manifest.size(), o.workers);
    const auto report = run_forge(manifest, *backend, o);

    Json summary;
    Json jobs = Json::array();
    std::vector<std::string> failed;
    for (const auto& s : report.jobs) {
        jobs.push_back({{"video_id", s.video_id}, {"stage", to_string(s.stage)}, {"attempt", s.attempt},
                        {"last_error", s.last_error}});
        if (s.stage == JobStage::failed) {
            failed.push_back(s.video_id);
            c.log->error("{} failed: {}", s.video_id, s.last_error);
        }
    }
    summary["jobs"] = jobs;
    summary["stats"] = report.stats ? json_io::parse(serialize_stats(*report.stats)) : Json(nullptr);
    c.out << json_io::dump(summary);
    if (!failed.empty()) throw InputError(std::to_string(failed.size()) + " job(s) failed: " + text::join(failed, ", "));
}

struct StatsArgs {
    std::string state, baselines, out;
};

void run_stats(Context& c, const StatsArgs& a) {
    const auto docs = load_documents(a.state, static_cast<std::size_t>(c.cfg.integer("forge.max_attempts")));
    std::vector<BaselineCaptions> baselines;
    if (!a.baselines.empty()) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(a.baselines))
            if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) baselines.push_back(parse_baseline(read_file(f)));
    }
    emit(c.out, a.out, serialize_stats(compute_stats(docs, baselines)));
}

struct RedundancyArgs {
    std::string doc, baseline, out;
};

void run_redundancy(Context& c, const RedundancyArgs& a) {
    const auto doc = deserialize_document(read_file(a.doc));
    const auto base = parse_baseline(read_file(a.baseline));
    emit(c.out, a.out, serialize_redundancy(redundancy_report(doc, base)));
}

struct QaBuildArgs {
    std::string pool, votes, out, filtered;
};

void run_qa_build(Context& c, const QaBuildArgs& a) {
    AdapterTable adapters;
    if (const auto path = c.cfg.string("qa.adapters"); !path.empty()) adapters = parse_adapters(read_file(path));
    auto pool = parse_pool(read_file(a.pool), adapters);
    const auto votes = load_votes(a.votes);
    const auto outcome = run_filters(std::move(pool), votes, c.cfg.flag("qa.strict_unknown"));
    const auto budget = c.cfg.integer("qa.budget");
    const auto seed = c.cfg.integer("qa.seed");
    if (budget < 0 || seed < 0) throw ConfigError("qa.budget and qa.seed must be non-negative");
    const auto bench = build_benchmark(outcome.retained, static_cast<std::size_t>(budget),
                                       static_cast<std::uint64_t>(seed));
    c.log->info("{} of {} questions retained, {} sampled", outcome.retained.size(), outcome.questions.size(),
                bench.questions.size());
    emit(c.out, a.out, serialize_questions(bench.questions));
    if (!a.filtered.empty()) emit(c.out, a.filtered, serialize_questions(outcome.questions));
}

struct QaEvalArgs {
    std::string benchmark, captions, out, table, log;
};

void run_qa_eval(Context& c, const QaEvalArgs& a) {
    const auto questions = parse_questions(read_file(a.benchmark));
    const auto captions = read_narratives(a.captions, c.cfg);
    auto backend = make_backend(c.cfg);
    const fs::path log_path = a.log.empty() ? fs::path(a.out + ".results.jsonl") : fs::path(a.log);
    auto caption_for = [&](const std::string& id) {
        auto it = captions.find(id);
        return it == captions.end() ? std::string() : it->second;
    };
    const auto results =
        run_evaluation(questions, caption_for, *backend, log_path, resolve_workers(c.cfg.integer("forge.workers")));
    const auto seed = c.cfg.integer("qa.seed");
    const auto resamples = c.cfg.integer("qa.resamples");
    if (seed < 0 || resamples < 1) throw ConfigError("qa.seed must be >= 0 and qa.resamples >= 1");
    const auto report = compute_metrics(results, static_cast<std::uint64_t>(seed),
                                        static_cast<std::size_t>(resamples), c.cfg.flag("qa.strict_errors"));
    emit(c.out, a.out, serialize_metrics(report));
    emit(c.out, a.table.empty() ? fs::path("-") : fs::path(a.table), format_metrics_table(report));
}

Json error_json(const Error& e) {
    Json j;
    j["error"] = e.kind();
    j["message"] = e.what();
    j["exit_code"] = e.exit_code();
    if (const auto* fm = dynamic_cast<const FixtureMissingError*>(&e)) j["hash"] = fm->hash();
    return j;
}

} // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err,
             const Config::EnvLookup& env) {
    CLI::App app{"Codec-aligned video captioning and caption-based QA"};
    app.name("codeccap");
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::vector<std::string> sets;
    app.add_option("--config", config_path, "Config file (JSON object of sections)");
    app.add_option("--set", sets, "Override any config key: section.key=value")->take_all();
    std::vector<Binding> bindings;
    auto bind = [&](CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
        auto v = std::make_shared<std::string>();
        bindings.push_back({sub->add_option(flag, *v, help + " [" + key + "]"), key, v});
    };
    auto bind_flag = [&](CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
        auto v = std::make_shared<std::string>();
        auto* o = sub->add_flag_callback(flag, [v] { *v = "true"; }, help + " [" + key + "]");
        bindings.push_back({o, key, v});
    };
    auto bind_backend = [&](CLI::App* sub) {
        bind(sub, "--backend", "backend.profile", "Backend profile name or .json path");
        bind(sub, "--mode", "backend.mode", "live, record or replay");
        bind(sub, "--fixtures", "backend.fixture_dir", "Replay fixture directory");
    };
    auto bind_caption = [&](CLI::App* sub) {
        bind(sub, "--rate", "caption.rate_hz", "Sampling rate in Hz");
        bind(sub, "--window", "caption.window_size", "Frames per residual window");
        bind(sub, "--overlap", "caption.overlap", "Frames shared by adjacent windows");
        bind_flag(sub, "--no-change-omitted", "caption.no_change_omitted", "Fill pairs the model leaves out");
    };
    auto bind_segment = [&](CLI::App* sub) {
        bind(sub, "--tau-gop", "segment.tau_gop", "CV threshold for I-frame-primary mode");
        bind(sub, "--proximity", "segment.proximity", "Cut to I-frame matching window (s)");
        bind(sub, "--max-seg", "segment.max_seg", "Maximum segment length (s)");
        bind(sub, "--min-seg", "segment.min_seg", "Minimum segment length (s)");
    };
    auto bind_cuts = [&](CLI::App* sub) {
        bind(sub, "--threshold", "cuts.threshold", "Histogram L1 distance threshold");
        bind(sub, "--min-scene-len", "cuts.min_scene_len", "Minimum spacing between cuts (s)");
        bind(sub, "--bins", "cuts.bins", "Histogram bins per channel");
    };

    std::function<void(Context&)> action;

    SegmentArgs seg_a;
    auto* seg = app.add_subcommand("segment", "Plan scene-aligned segments from I-frames and cuts");
    seg->add_option("--video", seg_a.video, "Manifest entry (JSON text or file)")->required();
    seg->add_option("--iframes", seg_a.iframes, "I-frame timeline (probe JSON or list)")->required();
    seg->add_option("--cuts", seg_a.cuts, "Cut list");
    seg->add_option("--out", seg_a.out, "Output plan file (default stdout)");
    bind_segment(seg);
    seg->callback([&] { action = [&](Context& c) { run_segment(c, seg_a); }; });

    CutsArgs cuts_a;
    auto* cuts = app.add_subcommand("cuts", "Detect or import content cuts");
    auto* fd = cuts->add_option("--frames-dir", cuts_a.frames_dir, "Directory of per-second frames");
    auto* im = cuts->add_option("--import", cuts_a.import, "Existing cut list (plain or CSV)");
    fd->excludes(im);
    cuts->add_option("--format", cuts_a.format, "Import format: auto, plain or csv");
    cuts->add_option("--column", cuts_a.column, "CSV start-time column");
    cuts->add_option("--out", cuts_a.out, "Output cut list (default stdout)");
    bind_cuts(cuts);
    cuts->callback([&] {
        if (cuts_a.frames_dir.empty() && cuts_a.import.empty())
            throw CLI::RequiredError("--frames-dir or --import");
        action = [&](Context& c) { run_cuts(c, cuts_a); };
    });

    CaptionArgs cap_a;
    auto* cap = app.add_subcommand("caption", "Anchor and residual captions for each planned segment");
    cap->add_option("--plan", cap_a.plan, "Segment plan file")->required();
    cap->add_option("--frames", cap_a.frames, "Directory of per-second frames")->required();
    cap->add_option("--out", cap_a.out, "Output directory")->required();
    bind_backend(cap);
    bind_caption(cap);
    cap->callback([&] { action = [&](Context& c) { run_caption(c, cap_a); }; });

    AggregateArgs agg_a;
    auto* agg = app.add_subcommand("aggregate", "Validate residual evidence and write narratives");
    agg->add_option("--captions", agg_a.captions, "Directory written by caption")->required();
    agg->add_option("--out", agg_a.out, "Output caption document (default stdout)");
    agg->add_option("--audit", agg_a.audit, "Omissions and evidence log");
    bind(agg, "--mode", "aggregate.mode", "template or backend");
    bind(agg, "--backend", "backend.profile", "Backend profile name or .json path");
    bind(agg, "--backend-mode", "backend.mode", "live, record or replay");
    bind(agg, "--fixtures", "backend.fixture_dir", "Replay fixture directory");
    bind_flag(agg, "--backend-claims", "aggregate.backend_claims", "Extract claims with the text model");
    agg->callback([&] { action = [&](Context& c) { run_aggregate(c, agg_a); }; });

    ForgeArgs forge_a;
    auto* forge = app.add_subcommand("forge", "Batch-process a manifest with checkpointing");
    forge->add_option("--manifest", forge_a.manifest, "Manifest (JSON lines; paths relative to it)")->required();
    forge->add_option("--state", forge_a.state, "State directory")->required();
    forge->add_option("--stop-after", forge_a.stop_after, "Stop each job after this stage");
    forge->add_option("--crash-after", forge_a.crash_after)->group("");
    bind(forge, "--workers", "forge.workers", "Worker threads (0 = CPU count)");
    bind(forge, "--max-attempts", "forge.max_attempts", "Attempts per video");
    bind_backend(forge);
    bind_caption(forge);
    bind_segment(forge);
    bind(forge, "--aggregate-mode", "aggregate.mode", "template or backend");
    forge->callback([&] { action = [&](Context& c) { run_forge_cmd(c, forge_a); }; });

    StatsArgs stats_a;
    auto* stats = app.add_subcommand("stats", "Corpus statistics over completed documents");
    stats->add_option("--state", stats_a.state, "Forge state directory")->required();
    stats->add_option("--baselines", stats_a.baselines, "Directory of per-second baseline captions");
    stats->add_option("--out", stats_a.out, "Output file (default stdout)");
    stats->callback([&] { action = [&](Context& c) { run_stats(c, stats_a); }; });

    RedundancyArgs red_a;
    auto* red = app.add_subcommand("redundancy", "Compare a document with per-second captions");
    red->add_option("--doc", red_a.doc, "Caption document")->required();
    red->add_option("--baseline", red_a.baseline, "Per-second baseline captions")->required();
    red->add_option("--out", red_a.out, "Output file (default stdout)");
    red->callback([&] { action = [&](Context& c) { run_redundancy(c, red_a); }; });

    QaBuildArgs qb_a;
    auto* qb = app.add_subcommand("qa-build", "Filter a question pool and sample the benchmark");
    qb->add_option("--pool", qb_a.pool, "Question pool (JSON lines)")->required();
    qb->add_option("--votes", qb_a.votes, "Directory of recorded votes")->required();
    qb->add_option("--out", qb_a.out, "Benchmark file (default stdout)");
    qb->add_option("--filtered", qb_a.filtered, "Every pool question with its filter state");
    bind(qb, "--budget", "qa.budget", "Benchmark size");
    bind(qb, "--seed", "qa.seed", "Sampling seed");
    bind(qb, "--adapters", "qa.adapters", "Per-source field maps (JSON)");
    bind(qb, "--strict-unknown", "qa.strict_unknown", "Labels must beat unknown votes (true/false)");
    qb->callback([&] { action = [&](Context& c) { run_qa_build(c, qb_a); }; });

    QaEvalArgs qe_a;
    auto* qe = app.add_subcommand("qa-eval", "Caption-then-predict evaluation");
    qe->add_option("--benchmark", qe_a.benchmark, "Benchmark file")->required();
    qe->add_option("--captions", qe_a.captions, "Caption documents directory or forge state")->required();
    qe->add_option("--out", qe_a.out, "Metrics report (JSON)")->required();
    qe->add_option("--table", qe_a.table, "Human-readable table (default stdout)");
    qe->add_option("--log", qe_a.log, "Resumable result log (default <out>.results.jsonl)");
    bind_backend(qe);
    bind(qe, "--seed", "qa.seed", "Bootstrap seed");
    bind(qe, "--resamples", "qa.resamples", "Bootstrap resamples");
    bind(qe, "--workers", "forge.workers", "Worker threads (0 = CPU count)");
    bind_flag(qe, "--strict-errors", "qa.strict_errors", "Drop errored questions from accuracy");
    qe->callback([&] { action = [&](Context& c) { run_qa_eval(c, qe_a); }; });

    auto* show = app.add_subcommand("config", "Print the resolved configuration with sources");
    show->callback([&] { action = [&](Context& c) { c.out << c.cfg.dump(); }; });

    auto fail = [&](const Error& e) {
        err << error_json(e).dump() << "\n";
        return e.exit_code();
    };

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
        err << sub->help();
        std::string msg = e.what();
        if (app.get_subcommands().empty())
            for (int i = 1; i < argc; ++i)
                if (argv[i][0] != '-') {
                    msg = "unknown subcommand '" + std::string(argv[i]) + "'";
                    break;
                }
        return fail(InputError(msg));
    } catch (const Error& e) {
        return fail(e);
    }

    try {
        Context ctx{Config{}, out, err, nullptr};
        if (!config_path.empty()) ctx.cfg.load_file(config_path);
        ctx.cfg.apply_env(env);
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + s + "'");
            ctx.cfg.set(s.substr(0, eq), s.substr(eq + 1));
        }
        for (const auto& b : bindings)
            if (b.option->count() > 0) ctx.cfg.set(b.key, *b.value);

        ctx.log = std::make_shared<spdlog::logger>("codeccap", std::make_shared<spdlog::sinks::ostream_sink_mt>(err));
        ctx.log->set_pattern("[%l] %v");
        const auto level = spdlog::level::from_str(ctx.cfg.string("log.level"));
        if (level == spdlog::level::off && ctx.cfg.string("log.level") != "off")
            throw ConfigError("log.level must be trace, debug, info, warn, error, critical or off");
        ctx.log->set_level(level);

        action(ctx);
        return 0;
    } catch (const Error& e) {
        return fail(e);
    } catch (const std::exception& e) {
        return fail(Error(e.what()));
    }
}

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    return dispatch(argc, argv, out, err, [](const char* name) { return std::getenv(name); });
}

} // namespace codeccap
