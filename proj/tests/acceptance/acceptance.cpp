// One PASS or FAIL line per acceptance criterion. Exit status is the number
// of failures.

#include "codeccap/aggregate.hpp"
#include "codeccap/anchor_residual.hpp"
#include "codeccap/codec_probe.hpp"
#include "codeccap/forge.hpp"
#include "codeccap/raster.hpp"
#include "codeccap/vidcapqa.hpp"
#include "claim_oracle.hpp"
#include "docgen.hpp"
#include "synthetic.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <sys/wait.h>

using namespace codeccap;
namespace fs = std::filesystem;
using Steady = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool ok = true;
    std::string detail;

    void require(bool cond, const std::string& what) {
        if (!cond && ok) {
            ok = false;
            detail = what;
        }
    }
};

double seconds_since(Steady::time_point t0) { return std::chrono::duration<double>(Steady::now() - t0).count(); }

IFrameTimeline timeline(std::vector<double> ts) {
    IFrameTimeline t;
    t.timestamps = std::move(ts);
    return t;
}

VideoRef video(double duration) {
    VideoRef v;
    v.video_id = "v";
    v.duration_s = duration;
    return v;
}

std::map<std::string, std::string> tree(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = read_file(e.path());
    return out;
}

fs::path corpus_copy(const std::string& tag) {
    const auto root = codeccap::testing::temp_dir(tag);
    fs::copy(codeccap::testing::fixture_dir() / "corpus" / "videos", root / "videos", fs::copy_options::recursive);
    fs::copy_file(codeccap::testing::fixture_dir() / "corpus" / "manifest.jsonl", root / "manifest.jsonl");
    return root;
}

fs::path replay_dir() { return codeccap::testing::fixture_dir() / "corpus" / "replay"; }

ForgeReport forge(const fs::path& root, std::size_t workers) {
    auto backend = codeccap::testing::replay_backend(replay_dir());
    ForgeOptions o;
    o.state_dir = root / "state";
    o.input_base = root;
    o.workers = workers;
    return run_forge(parse_manifest(read_file(root / "manifest.jsonl")), *backend, o);
}

Outcome segmentation_regimes() {
    Outcome r;
    const auto t0 = Steady::now();
    SegmentationConfig cfg;
    cfg.tau_gop = 0.5;
    const auto uniform = gap_statistics(timeline({0, 2, 4, 6, 8, 10}));
    r.require(uniform.cv == 0.0, "uniform gaps should have cv 0");
    r.require(select_mode(uniform, cfg) == SegmentationMode::content_primary, "uniform gaps should be content-primary");
    const auto mixed = gap_statistics(timeline({0, 1, 4}));
    r.require(std::abs(mixed.cv - 0.5) < 1e-12, "gaps 1 and 3 should have cv 0.5");
    r.require(select_mode(mixed, cfg) == SegmentationMode::iframe_primary, "cv equal to the threshold is I-frame-primary");
    r.require(seconds_since(t0) < 1.0, "took longer than 1 s");
    return r;
}

Outcome boundary_matching() {
    Outcome r;
    std::mt19937_64 rng(1000);
    std::uniform_int_distribution<int> n(0, 15);
    std::uniform_int_distribution<int> q(0, 240);
    std::uniform_int_distribution<int> wq(1, 8);
    for (int trial = 0; trial < 1000 && r.ok; ++trial) {
        std::vector<double> ts, cs;
        for (int i = n(rng); i > 0; --i) ts.push_back(q(rng) * 0.25);
        for (int i = n(rng); i > 0; --i) cs.push_back(q(rng) * 0.25);
        std::sort(ts.begin(), ts.end());
        ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
        std::sort(cs.begin(), cs.end());
        SegmentationConfig cfg;
        cfg.proximity_window_s = wq(rng) * 0.25;
        std::vector<double> want;
        for (double t : ts) {
            bool hit = false;
            for (double c : cs) hit = hit || std::abs(t - c) <= cfg.proximity_window_s;
            if (hit) want.push_back(t);
        }
        r.require(match_boundaries(timeline(ts), CutList{cs}, cfg) == want, "mismatch on instance " + std::to_string(trial));
    }
    return r;
}

Outcome tiling() {
    Outcome r;
    std::mt19937_64 rng(500);
    std::uniform_real_distribution<double> dur(0.2, 400.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> n(0, 20);
    for (int trial = 0; trial < 500 && r.ok; ++trial) {
        SegmentationConfig cfg;
        cfg.max_segment_s = 5 + unit(rng) * 80;
        cfg.min_segment_s = unit(rng) * cfg.max_segment_s / 2;
        cfg.tau_gop = unit(rng);
        const double d = std::round(dur(rng) * 1000) / 1000;
        std::vector<double> ts{0}, cs;
        for (int i = n(rng); i > 0; --i) ts.push_back(std::round(unit(rng) * d * 1000) / 1000);
        for (int i = n(rng); i > 0; --i) cs.push_back(std::round(unit(rng) * d * 1000) / 1000);
        std::sort(ts.begin(), ts.end());
        ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
        std::sort(cs.begin(), cs.end());
        cs.erase(std::unique(cs.begin(), cs.end()), cs.end());
        const auto segs = plan_segments(video(d), timeline(ts), CutList{cs}, cfg);
        const auto tag = " (config " + std::to_string(trial) + ")";
        r.require(!segs.empty() && segs.front().start_s == 0.0 && segs.back().end_s == d, "does not span the video" + tag);
        for (std::size_t i = 0; i < segs.size(); ++i) {
            if (i) r.require(segs[i].start_s == segs[i - 1].end_s, "gap or overlap" + tag);
            r.require(segs[i].duration() <= cfg.max_segment_s + 1e-9, "segment above max" + tag);
            if (segs.size() > 1) r.require(segs[i].duration() >= cfg.min_segment_s - 1e-3, "segment below min" + tag);
        }
    }
    return r;
}

Outcome news_clip_structure() {
    Outcome r;
    const auto root = codeccap::testing::temp_dir("accept_news");
    fs::copy(codeccap::testing::fixture_dir() / "corpus" / "videos", root / "videos", fs::copy_options::recursive);
    std::ofstream(root / "manifest.jsonl") << read_file(codeccap::testing::fixture_dir() / "corpus" / "manifest.jsonl")
                                                  .substr(0, read_file(codeccap::testing::fixture_dir() / "corpus" /
                                                                       "manifest.jsonl")
                                                                 .find('\n') + 1);
    const auto report = forge(root, 1);
    r.require(report.jobs.size() == 1 && report.jobs[0].stage == JobStage::done, "news clip job did not finish");
    if (!r.ok) return r;
    const auto bytes = read_file(job_dir(root / "state", "news_clip") / "document.json");
    const auto golden = read_file(codeccap::testing::fixture_dir() / "corpus" / "golden" / "news_clip_document.json");
    r.require(bytes == golden, "document differs from the golden file");
    const auto doc = deserialize_document(bytes);
    r.require(doc.segment_count() == 4, "expected 4 segments");
    if (!r.ok) return r;
    const double bounds[] = {0, 3, 21, 25, 31};
    for (std::size_t k = 0; k < 4; ++k)
        r.require(doc.segments[k].start_s == bounds[k] && doc.segments[k].end_s == bounds[k + 1], "segment bounds");
    // spans 1-2 and 21-24 are the first and third segments
    for (std::size_t k : {0u, 2u}) {
        r.require(!doc.residuals[k].empty(), "missing residuals in segment " + std::to_string(k));
        for (const auto& rec : doc.residuals[k]) r.require(rec.is_no_change(), "change recorded in a static span");
    }
    const auto& scene = doc.scene_narratives[1].text;
    std::size_t last = scene.find("Hover");
    r.require(last != std::string::npos, "hover event missing from the webpage scene");
    for (const auto& name : codeccap::testing::resume_names()) {
        const auto pos = scene.find("resume of " + name);
        r.require(pos != std::string::npos && pos > last, "resume of " + name + " missing or out of order");
        last = pos;
    }
    return r;
}

Outcome aggregation_rules() {
    Outcome r;
    const auto t0 = Steady::now();
    std::mt19937_64 rng(2024);
    for (int i = 0; i < 2000 && r.ok; ++i) {
        const auto stream = codeccap::testing::random_stream(rng);
        const auto why = codeccap::testing::compare_with_oracle(stream, rng);
        r.require(why.empty(), "stream " + std::to_string(i) + ": " + why);
    }
    r.require(seconds_since(t0) < 10.0, "took longer than 10 s");
    return r;
}

FilterState phase_a_oracle(int gt, const std::vector<int>& a) {
    int matches = 0;
    for (int x : a) matches += x == gt;
    if (matches >= 2) return FilterState::normal;
    // three voters in agreement on one wrong option
    if (a[0] == a[1] && a[1] == a[2] && a[0] != gt) return FilterState::suspected_wrong_gt;
    return FilterState::phase_b_pending;
}

Outcome filter_state_machine() {
    Outcome r;
    for (int gt = 0; gt < 4; ++gt)
        for (int i = 0; i < 64; ++i) {
            const std::vector<int> a{i / 16, i / 4 % 4, i % 4};
            r.require(phase_a_classify(gt, a) == phase_a_oracle(gt, a),
                      "phase A pattern " + std::to_string(i) + " with ground truth " + std::to_string(gt));
        }
    for (int i = 0; i < 8; ++i) {
        const std::vector<bool> c{bool(i & 4), bool(i & 2), bool(i & 1)};
        const int yes = c[0] + c[1] + c[2];
        const auto want = yes == 3 ? FilterState::consensus_hard
                                   : yes == 2 ? FilterState::likely_correct : FilterState::discarded;
        r.require(phase_b_classify(c) == want, "phase B pattern " + std::to_string(i));
    }
    return r;
}

Outcome stratified_sampling() {
    Outcome r;
    std::map<std::string, std::size_t> avail;
    for (const auto& n : capability_names()) avail[n] = 400;
    avail["trajectory"] = 41;
    const auto alloc = allocate_budget(avail, 1000);
    std::size_t total = 0;
    r.require(alloc.size() == 14, "expected 14 dimensions");
    for (const auto& [name, n] : alloc) {
        total += n;
        if (name == "trajectory") r.require(n == 41, "trajectory should get 41");
        else r.require(n == 73 || n == 74, name + " got " + std::to_string(n));
    }
    r.require(total == 1000, "allocation does not sum to 1000");
    r.require(largest_remainder(74) == std::array<std::size_t, 4>{22, 26, 19, 7}, "quota 74 split");
    return r;
}

Outcome metrics() {
    Outcome r;
    const auto t0 = Steady::now();
    std::vector<EvalResult> rs;
    std::mt19937_64 rng(444);
    std::vector<int> order(1000);
    for (int i = 0; i < 1000; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    for (int i = 0; i < 1000; ++i) {
        EvalResult e;
        e.question_id = "q" + std::to_string(i);
        e.capability = capability_names()[i % 14];
        e.correct = order[i] < 444;
        e.predicted = e.correct ? 0 : (order[i] < 600 ? kUnknownAnswer : 1);
        rs.push_back(e);
    }
    const auto a = compute_metrics(rs, 7, 10000);
    const auto b = compute_metrics(rs, 7, 10000);
    r.require(a.overall.estimate == 0.444, "overall accuracy is not 0.444");
    r.require(a.overall.lo == b.overall.lo && a.overall.hi == b.overall.hi, "interval differs across runs");
    r.require(serialize_metrics(a) == serialize_metrics(b), "report differs across runs");
    r.require(a.overall.lo <= 0.444 && 0.444 <= a.overall.hi, "interval does not contain 0.444");
    r.require(seconds_since(t0) < 5.0, "took longer than 5 s");
    return r;
}

Outcome corpus_stats() {
    Outcome r;
    const auto s = compute_stats(codeccap::testing::reference_shaped_corpus());
    r.require(s.median_segments == 6.0, "median segments " + std::to_string(s.median_segments));
    r.require(std::abs(s.mean_anchor_words - 270.0) <= 1.0, "anchor words " + std::to_string(s.mean_anchor_words));
    r.require(std::abs(s.mean_residuals_per_video - 225.0) <= 1.0, "residuals " + std::to_string(s.mean_residuals_per_video));
    r.require(std::abs(s.mean_residual_words - 25.0) <= 1.0, "residual words " + std::to_string(s.mean_residual_words));
    return r;
}

Outcome redundancy() {
    Outcome r;
    const auto root = codeccap::testing::fixture_dir() / "corpus";
    const auto doc = deserialize_document(read_file(root / "golden" / "news_clip_document.json"));
    const auto baseline = parse_baseline(read_file(root / "videos" / "news_clip" / "baseline.json"));
    const auto rep = redundancy_report(doc, baseline);
    r.require(rep.baseline_tokens > rep.codec_tokens, "baseline is not longer than the codec representation");
    r.require(rep.duplicate_occurrences >= 5, "only " + std::to_string(rep.duplicate_occurrences) + " duplicates");
    return r;
}

Outcome determinism_and_resume() {
    Outcome r;
    const auto one = corpus_copy("accept_w1");
    const auto four = corpus_copy("accept_w4");
    forge(one, 1);
    forge(four, 4);
    const auto ref = tree(one / "state");
    r.require(ref == tree(four / "state"), "1 and 4 workers differ");

    const auto crash = corpus_copy("accept_crash");
    const std::string cmd = "CODECCAP_REPLAY_DIR='" + replay_dir().string() + "' '" + CODECCAP_TOOL +
                            "' forge --workers 2 --manifest '" + (crash / "manifest.jsonl").string() + "' --state '" +
                            (crash / "state").string() + "' >/dev/null 2>&1";
    const int killed = std::system((cmd + " --crash-after 7").c_str());
    r.require(WIFEXITED(killed) == 0 || WEXITSTATUS(killed) != 0, "crash run exited cleanly");
    r.require(!fs::exists(crash / "state" / "index.json"), "crash run finished before the kill");
    const int resumed = std::system(cmd.c_str());
    r.require(WIFEXITED(resumed) && WEXITSTATUS(resumed) == 0, "resume run failed");
    r.require(ref == tree(crash / "state"), "kill-and-resume output differs");
    return r;
}

Outcome offline_completeness() {
    Outcome r;
    // a replay backend has no transport at all; every corpus request must hit
    // a stored fixture
    const auto root = corpus_copy("accept_offline");
    const auto report = forge(root, 2);
    for (const auto& j : report.jobs) r.require(j.stage == JobStage::done, j.video_id + ": " + j.last_error);
    for (const auto& e : fs::directory_iterator(replay_dir())) {
        const auto j = nlohmann::json::parse(read_file(e.path()));
        r.require(j.contains("response"), "fixture without a stored response: " + e.path().filename().string());
    }
    return r;
}

} // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"segmentation regimes", segmentation_regimes},
        {"boundary matching vs double loop (1000 instances)", boundary_matching},
        {"segment tiling and bounds (500 configs)", tiling},
        {"news clip structure and golden document", news_clip_structure},
        {"aggregation rules vs oracle (2000 streams)", aggregation_rules},
        {"filter state machine truth tables", filter_state_machine},
        {"stratified sampling allocation", stratified_sampling},
        {"metrics and bootstrap interval", metrics},
        {"corpus statistics", corpus_stats},
        {"redundancy against per-second captions", redundancy},
        {"determinism across workers and kill-and-resume", determinism_and_resume},
        {"offline replay completeness", offline_completeness},
    };
    int failures = 0;
    for (const auto& [name, check] : criteria) {
        Outcome o;
        const auto t0 = Steady::now();
        try {
            o = check();
        } catch (const std::exception& e) {
            o.ok = false;
            o.detail = std::string("exception: ") + e.what();
        }
        char took[32];
        std::snprintf(took, sizeof took, "%.2fs", seconds_since(t0));
        std::cout << (o.ok ? "PASS " : "FAIL ") << name << " [" << took << "]";
        if (!o.ok) std::cout << ": " << o.detail;
        std::cout << "\n";
        failures += !o.ok;
    }
    return failures;
}
