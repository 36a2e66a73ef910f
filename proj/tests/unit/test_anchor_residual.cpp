#include "codeccap/anchor_residual.hpp"
#include "codeccap/error.hpp"
#include "codeccap/prompts.hpp"
#include "codeccap/raster.hpp"
#include "synthetic.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdlib>
#include <deque>
#include <fstream>
#include <random>
#include <sstream>

using namespace codeccap;
using codeccap::testing::ScriptedTransport;

namespace {

// Answers from a callback on the prompt text.
class PromptTransport : public Transport {
public:
    std::function<std::string(const std::string&, std::size_t call)> reply;
    std::size_t calls = 0;
    std::vector<std::string> prompts;

    HttpReply post(const std::string&, const Headers&, const std::string& body, double) override {
        std::lock_guard lk(mu_);
        auto j = nlohmann::json::parse(body);
        auto prompt = j["messages"][0]["content"][0]["text"].get<std::string>();
        prompts.push_back(prompt);
        return {200, ScriptedTransport::reply_body(reply(prompt, calls++))};
    }

private:
    std::mutex mu_;
};

class MemoryFrames : public FrameSource {
public:
    std::string frame_bytes(double time_s) const override {
        auto v = static_cast<std::uint8_t>(static_cast<int>(time_s * 10) % 256);
        return encode_ppm(Raster(4, 4, v, v, v));
    }
};

struct Live {
    Live() {
        setenv("CODECCAP_TEST_KEY", "k", 1);
        transport = std::make_shared<PromptTransport>();
        BackendConfig cfg;
        cfg.profile_name = "test";
        cfg.endpoint = "http://localhost:1/v1/chat/completions";
        cfg.mode = BackendMode::live;
        cfg.rpm_limit = 100000;
        backend = std::make_unique<ModelBackend>(cfg, transport, std::make_shared<ManualClock>());
    }
    std::shared_ptr<PromptTransport> transport;
    std::unique_ptr<ModelBackend> backend;
};

Segment segment(double a, double b, std::size_t index = 0) {
    Segment s;
    s.index = index;
    s.start_s = a;
    s.end_s = b;
    return s;
}

std::vector<ImageInput> window_frames(const SamplePlan& plan, const Window& w) {
    std::vector<ImageInput> out;
    MemoryFrames f;
    for (auto i = w.first; i <= w.last; ++i)
        out.push_back(ImageInput::from_bytes(plan.sample_times[i], f.frame_bytes(plan.sample_times[i])));
    return out;
}

std::string pairs_json(std::size_t first, std::size_t last, const std::string& caption) {
    nlohmann::json arr = nlohmann::json::array();
    for (auto i = first; i < last; ++i) arr.push_back({{"frame_pair", {i, i + 1}}, {"delta_caption", caption}});
    return arr.dump();
}

// First and last frame index named in a residual or repair prompt's pair list.
std::pair<std::size_t, std::size_t> expected_range(const std::string& prompt) {
    auto pos = prompt.find("Expected pairs: [");
    if (pos == std::string::npos) pos = prompt.find("for these pairs: [");
    pos = prompt.find('[', pos);
    auto eol = prompt.find_first_of(".\n", pos);
    std::size_t a = std::stoul(prompt.substr(pos + 1));
    auto last = prompt.rfind(", ", eol);
    std::size_t b = std::stoul(prompt.substr(last + 2));
    return {a, b};
}

std::string golden(const std::string& name) {
    std::ifstream in(codeccap::testing::source_dir() / "tests" / "golden" / name, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("sample plans") {
    CHECK(plan_samples(segment(0, 5), 1.0).sample_times == std::vector<double>{0, 1, 2, 3, 4});
    auto web = plan_samples(segment(3, 21), 1.0);
    CHECK(web.sample_times.size() == 18);
    CHECK(web.sample_times.front() == 3);
    CHECK(plan_samples(segment(0, 0.5), 1.0).sample_times == std::vector<double>{0});
    CHECK(plan_samples(segment(1, 2.2), 2.0).sample_times == std::vector<double>{1, 1.5, 2});
}

TEST_CASE("window plans") {
    auto p5 = plan_samples(segment(0, 5), 1.0);
    CHECK(plan_windows(p5, 8, 1).windows == std::vector<Window>{{0, 4}});
    auto p10 = plan_samples(segment(0, 10), 1.0);
    CHECK(plan_windows(p10, 8, 1).windows == std::vector<Window>{{0, 7}, {7, 9}});
    CHECK(plan_windows(plan_samples(segment(0, 1), 1.0), 8, 1).windows.empty());
    CHECK_THROWS_AS(plan_windows(p10, 1, 0), ConfigError);
    CHECK_THROWS_AS(plan_windows(p10, 4, 4), ConfigError);
    CHECK_THROWS_AS(plan_windows(p10, 4, 0), ConfigError);
}

TEST_CASE("windows share exactly O frames and cover every pair") {
    for (std::size_t n = 1; n <= 40; ++n) {
        for (std::size_t w = 2; w <= 9; ++w) {
            for (std::size_t o = 1; o < w; ++o) {
                SamplePlan plan;
                for (std::size_t i = 0; i < n; ++i) plan.sample_times.push_back(double(i));
                auto wp = plan_windows(plan, w, o).windows;
                if (n < 2) {
                    CHECK(wp.empty());
                    continue;
                }
                REQUIRE(!wp.empty());
                CHECK(wp.front().first == 0);
                CHECK(wp.back().last == n - 1);
                std::vector<int> covered(n - 1, 0);
                for (std::size_t k = 0; k < wp.size(); ++k) {
                    CHECK(wp[k].size() >= 2);
                    CHECK(wp[k].size() <= w);
                    if (k) CHECK(wp[k].first == wp[k - 1].last + 1 - o);
                    for (auto i = wp[k].first; i < wp[k].last; ++i) covered[i] = 1;
                }
                for (int c : covered) CHECK(c == 1);
            }
        }
    }
}

TEST_CASE("zones") {
    CHECK(zone_of(50, 50) == "center");
    CHECK(zone_of(0, 0) == "upper-left");
    CHECK(zone_of(100.0 / 3, 80) == "lower-left");
    CHECK(zone_of(100, 100) == "lower-right");
    CHECK(zone_of(200.0 / 3, 10) == "upper-center");
    CHECK_THROWS_AS(zone_of(101, 50), InputError);
    CHECK_THROWS_AS(zone_of(50, -0.1), InputError);
}

TEST_CASE("zone grid covers the square once") {
    const auto& names = zone_names();
    REQUIRE(names.size() == 9);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0, 100);
    for (int i = 0; i < 5000; ++i) {
        double x = i < 121 ? (i % 11) * 10.0 : u(rng);
        double y = i < 121 ? (i / 11) * 10.0 : u(rng);
        auto z = zone_of(x, y);
        int col = x <= 100.0 / 3 ? 0 : (x <= 200.0 / 3 ? 1 : 2);
        int row = y <= 100.0 / 3 ? 0 : (y <= 200.0 / 3 ? 1 : 2);
        CHECK(z == names[row * 3 + col]);
    }
}

TEST_CASE("spatial references") {
    auto a = extract_spatial_refs("cursor moves to upper-left");
    REQUIRE(a.size() == 1);
    CHECK(a[0].kind == SpatialKind::zone);
    CHECK(a[0].zone == "upper-left");
    auto b = extract_spatial_refs("person at (40%, 75%) walks");
    REQUIRE(b.size() == 1);
    CHECK(b[0].kind == SpatialKind::percent);
    CHECK(b[0].x_pct == 40);
    CHECK(b[0].y_pct == 75);
    CHECK(b[0].in_range);
    auto c = extract_spatial_refs("moves to (140%, 10%)");
    REQUIRE(c.size() == 1);
    CHECK_FALSE(c[0].in_range);
    auto d = extract_spatial_refs("The ball rolls from the center to the lower-right at (90%, 85%).");
    REQUIRE(d.size() == 3);
    CHECK(d[0].zone == "center");
    CHECK(d[1].zone == "lower-right");
    CHECK(extract_spatial_refs("No visible change.").empty());
}

TEST_CASE("residual payload parsing") {
    auto a = parse_residual_payload(R"([{"frame_pair":[0,1],"delta_caption":"Ball moves right."}])");
    REQUIRE(a.residuals.size() == 1);
    CHECK(a.residuals[0].frame_pair == FramePair{0, 1});
    CHECK(a.residuals[0].delta_caption == "Ball moves right.");

    auto b = parse_residual_payload("Here are the residuals:\n```json\n"
                                    "[{\"frame_pair\":[3,4],\"delta_caption\":\"Hover.\",\"confidence\":0.9}]\n```\nDone.");
    REQUIRE(b.residuals.size() == 1);
    CHECK(b.residuals[0].frame_pair == FramePair{3, 4});

    auto c = parse_residual_payload(R"([{"frame_pair":[0,2],"delta_caption":"skip"},
                                        {"frame_pair":[1,2],"delta_caption":"ok"}])");
    REQUIRE(c.residuals.size() == 1);
    CHECK(c.residuals[0].frame_pair == FramePair{1, 2});
    REQUIRE(c.rejected.size() == 1);
    CHECK(c.rejected[0].position == 0);

    auto d = parse_residual_payload(R"([{"frame_pair":[0,1],"delta_caption":"in"},
                                        {"frame_pair":[5,6],"delta_caption":"out"}])", Window{0, 3});
    CHECK(d.residuals.size() == 1);
    CHECK(d.rejected.size() == 1);

    CHECK_THROWS_AS(parse_residual_payload("no array here"), ParseError);
    CHECK_THROWS_AS(parse_residual_payload("[{\"frame_pair\": [0,"), ParseError);
}

TEST_CASE("anchor captioning") {
    Live live;
    live.transport->reply = [](const std::string& prompt, std::size_t) {
        CHECK(prompt.find("starts at 3.000 s and ends at 21.000 s") != std::string::npos);
        return std::string("An elderly man in a dark suit and tie holds a silver mesh microphone under a red banner.");
    };
    auto seg = segment(3, 21, 1);
    MemoryFrames f;
    auto a = caption_anchor(seg, ImageInput::from_bytes(3, f.frame_bytes(3)), *live.backend);
    CHECK(a.anchor_time_s == 3);
    CHECK(a.segment_index == 1);
    CHECK(a.text.find("silver mesh microphone") != std::string::npos);
    CHECK(a.word_count == word_count(a.text));

    live.transport->reply = [](const std::string&, std::size_t) { return std::string(); };
    CHECK_THROWS_AS(caption_anchor(seg, ImageInput::from_bytes(3, f.frame_bytes(3)), *live.backend),
                    AnchorGenerationError);
}

TEST_CASE("window captioning") {
    Live live;
    auto plan = plan_samples(segment(0, 8), 1.0);
    SUBCASE("identical frames give the no-change literal") {
        live.transport->reply = [](const std::string& p, std::size_t) {
            auto [a, b] = expected_range(p);
            return pairs_json(a, b, "No visible change.");
        };
        Window w{0, 1};
        auto r = caption_window(0, plan, w, window_frames(plan, w), *live.backend);
        REQUIRE(r.records.size() == 1);
        CHECK(r.records[0].is_no_change());
        CHECK_FALSE(r.failed);
    }
    SUBCASE("W frames give W-1 records") {
        live.transport->reply = [](const std::string& p, std::size_t) {
            auto [a, b] = expected_range(p);
            return "```json\n" + pairs_json(a, b, "Hover on the link turns the text red.") + "\n```";
        };
        Window w{0, 7};
        auto r = caption_window(0, plan, w, window_frames(plan, w), *live.backend);
        CHECK(r.records.size() == 7);
        for (std::size_t i = 0; i < r.records.size(); ++i) CHECK(r.records[i].frame_pair == FramePair{i, i + 1});
        CHECK(live.transport->calls == 1);
    }
    SUBCASE("malformed output gets one repair") {
        live.transport->reply = [](const std::string& p, std::size_t call) {
            if (call == 0) return std::string("I cannot format this.");
            auto [a, b] = expected_range(p);
            return pairs_json(a, b, "The cup tips over.");
        };
        Window w{2, 5};
        auto r = caption_window(0, plan, w, window_frames(plan, w), *live.backend);
        CHECK(r.repaired);
        CHECK_FALSE(r.failed);
        CHECK(r.records.size() == 3);
        CHECK(r.records[0].frame_pair == FramePair{2, 3});
        CHECK(live.transport->calls == 2);
    }
    SUBCASE("still malformed after repair fails the window") {
        live.transport->reply = [](const std::string&, std::size_t call) {
            return call == 0 ? std::string("nope") : std::string("[{\"frame_pair\":[2,3],\"delta_caption\":\"x\"}]");
        };
        Window w{2, 5};
        auto r = caption_window(0, plan, w, window_frames(plan, w), *live.backend);
        CHECK(r.failed);
        CHECK(r.records.empty());
        CHECK(r.raw_text.find("nope") != std::string::npos);
        CHECK(r.error.find("missing frame pairs") != std::string::npos);
    }
    SUBCASE("omitted pairs can be filled when configured") {
        live.transport->reply = [](const std::string&, std::size_t) {
            return std::string("[{\"frame_pair\":[1,2],\"delta_caption\":\"Door opens.\"}]");
        };
        CaptionConfig cfg;
        cfg.no_change_omitted = true;
        Window w{0, 3};
        auto r = caption_window(0, plan, w, window_frames(plan, w), *live.backend, cfg);
        REQUIRE(r.records.size() == 3);
        CHECK(r.records[0].is_no_change());
        CHECK(r.records[1].delta_caption == "Door opens.");
    }
}

TEST_CASE("segment captioning dedups shared pairs and keeps the earlier window") {
    Live live;
    live.transport->reply = [](const std::string& p, std::size_t) -> std::string {
        if (p.find("Expected pairs") == std::string::npos) return "A quiet room with a closed door.";
        auto [a, b] = expected_range(p);
        return pairs_json(a, b, "window starting " + std::to_string(a) + ".");
    };
    CaptionConfig cfg;
    cfg.window_size = 4;
    cfg.overlap = 2;
    auto sc = caption_segment(segment(10, 22, 2), MemoryFrames{}, *live.backend, cfg);
    CHECK_FALSE(sc.failed());
    REQUIRE(sc.anchor);
    CHECK(sc.anchor->anchor_time_s == 10);
    REQUIRE(sc.residuals.size() == 11);
    std::size_t prev_window_start = 0;
    for (std::size_t i = 0; i < sc.residuals.size(); ++i) {
        CHECK(sc.residuals[i].frame_pair == FramePair{i, i + 1});
        CHECK(sc.residuals[i].segment_index == 2);
        // each pair's record comes from the first window containing it
        std::size_t first_window = 0;
        for (const auto& w : sc.windows)
            if (w.window.first <= i && i < w.window.last) {
                first_window = w.window.first;
                break;
            }
        CHECK(sc.residuals[i].delta_caption == "window starting " + std::to_string(first_window) + ".");
        CHECK(first_window >= prev_window_start);
        prev_window_start = first_window;
    }
    auto back = deserialize_segment_captions(serialize_segment_captions(sc));
    CHECK(back.residuals == sc.residuals);
    CHECK(back.anchor == sc.anchor);
}

TEST_CASE("anchor-only segment makes no residual calls") {
    Live live;
    live.transport->reply = [](const std::string&, std::size_t) { return std::string("A still frame."); };
    auto sc = caption_segment(segment(0, 0.8), MemoryFrames{}, *live.backend);
    CHECK(sc.residuals.empty());
    CHECK(sc.windows.empty());
    CHECK(live.transport->calls == 1);
}

TEST_CASE("failed anchor marks the segment and keeps going") {
    Live live;
    live.transport->reply = [](const std::string& p, std::size_t) -> std::string {
        if (p.find("Expected pairs") == std::string::npos) return "";
        auto [a, b] = expected_range(p);
        return pairs_json(a, b, "No visible change.");
    };
    auto sc = caption_segment(segment(0, 3), MemoryFrames{}, *live.backend);
    CHECK(sc.failed());
    CHECK_FALSE(sc.anchor);
    CHECK_FALSE(sc.anchor_error.empty());
    CHECK(sc.residuals.size() == 2);
}

TEST_CASE("rendered prompts match the golden files") {
    CHECK(render_anchor_prompt(segment(3, 21, 1)) == golden("anchor_prompt.txt"));
    auto plan = plan_samples(segment(3, 21, 1), 1.0);
    CHECK(render_residual_prompt(plan, Window{7, 14}) == golden("residual_prompt.txt"));
    const std::string screen = "follow screen coordinates rather than subject-centric";
    CHECK(std::string(prompt_template("anchor")).find(screen) != std::string::npos);
    CHECK(std::string(prompt_template("residual")).find(screen) != std::string::npos);
    CHECK(std::string(prompt_template("residual")).find("\"No visible change.\"") != std::string::npos);
}
