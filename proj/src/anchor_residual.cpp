#include "codeccap/anchor_residual.hpp"

#include "codeccap/json_io.hpp"
#include "codeccap/prompts.hpp"
#include "codeccap/raster.hpp"
#include "text_util.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <regex>

namespace codeccap {

using json_io::Json;

namespace {

std::string fmt_seconds(double t) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", t);
    return buf;
}

std::string fmt_rate(double r) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", r);
    return buf;
}

std::string pair_list(const Window& w) {
    std::string out;
    for (std::size_t i = w.first; i < w.last; ++i) {
        if (!out.empty()) out += ", ";
        out += "[" + std::to_string(i) + ", " + std::to_string(i + 1) + "]";
    }
    return out;
}

} // namespace

void CaptionConfig::validate() const {
    if (!(rate_hz > 0.0)) throw ConfigError("sample rate must be > 0");
    if (window_size < 2) throw ConfigError("window size must be >= 2");
    if (overlap < 1 || overlap >= window_size) throw ConfigError("window overlap must satisfy 1 <= O < W");
}

SamplePlan plan_samples(const Segment& segment, double rate_hz) {
    if (!(rate_hz > 0.0)) throw ConfigError("sample rate must be > 0");
    SamplePlan p;
    p.segment_index = segment.index;
    p.rate_hz = rate_hz;
    const std::size_t n = sample_count(segment.start_s, segment.end_s, rate_hz);
    for (std::size_t k = 0; k < n; ++k)
        p.sample_times.push_back(quantize_time(segment.start_s + static_cast<double>(k) / rate_hz));
    return p;
}

WindowPlan plan_windows(const SamplePlan& plan, std::size_t window_size, std::size_t overlap) {
    if (window_size < 2 || overlap < 1 || overlap >= window_size)
        throw ConfigError("window plan needs W >= 2 and 1 <= O < W");
    WindowPlan wp;
    wp.window_size = window_size;
    wp.overlap = overlap;
    const std::size_t n = plan.sample_times.size();
    if (n < 2) return wp;
    std::size_t start = 0;
    for (;;) {
        const std::size_t end = std::min(start + window_size - 1, n - 1);
        wp.windows.push_back({start, end});
        if (end == n - 1) break;
        start = end - overlap + 1;
    }
    return wp;
}

// --- spatial ----------------------------------------------------------------

const std::vector<std::string>& zone_names() {
    static const std::vector<std::string> names{"upper-left", "upper-center", "upper-right",
                                                "middle-left", "center",      "middle-right",
                                                "lower-left", "lower-center", "lower-right"};
    return names;
}

std::string zone_of(double x_pct, double y_pct) {
    if (!(x_pct >= 0.0 && x_pct <= 100.0 && y_pct >= 0.0 && y_pct <= 100.0))
        throw InputError("zone_of: coordinates must lie in [0, 100]");
    auto third = [](double v) { return v <= 100.0 / 3.0 ? 0 : (v <= 200.0 / 3.0 ? 1 : 2); };
    return zone_names()[static_cast<std::size_t>(third(y_pct) * 3 + third(x_pct))];
}

std::vector<SpatialRef> extract_spatial_refs(std::string_view caption) {
    static const std::regex percent_re(R"(\(\s*(-?\d+(?:\.\d+)?)\s*%\s*,\s*(-?\d+(?:\.\d+)?)\s*%\s*\))");
    // Longest names first so "upper-center" is not read as "center".
    static const std::regex zone_re(
        R"(\b(upper|middle|lower)[- ](left|center|right)\b|\bcenter\b)", std::regex::icase);

    struct Hit {
        std::size_t pos;
        SpatialRef ref;
    };
    std::vector<Hit> hits;
    const std::string s(caption);
    for (auto it = std::sregex_iterator(s.begin(), s.end(), percent_re); it != std::sregex_iterator(); ++it) {
        SpatialRef r;
        r.kind = SpatialKind::percent;
        r.x_pct = std::stod((*it)[1].str());
        r.y_pct = std::stod((*it)[2].str());
        r.in_range = r.x_pct >= 0 && r.x_pct <= 100 && r.y_pct >= 0 && r.y_pct <= 100;
        hits.push_back({static_cast<std::size_t>(it->position()), r});
    }
    for (auto it = std::sregex_iterator(s.begin(), s.end(), zone_re); it != std::sregex_iterator(); ++it) {
        SpatialRef r;
        r.kind = SpatialKind::zone;
        if ((*it)[1].matched) {
            r.zone = text::lower((*it)[1].str()) + "-" + text::lower((*it)[2].str());
            if (r.zone == "middle-center") r.zone = "center";
        } else {
            r.zone = "center";
        }
        hits.push_back({static_cast<std::size_t>(it->position()), r});
    }
    std::stable_sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) { return a.pos < b.pos; });
    std::vector<SpatialRef> out;
    for (auto& h : hits) out.push_back(std::move(h.ref));
    return out;
}

// --- payload parsing ----------------------------------------------------------

namespace {

std::optional<Json> try_array(std::string_view s) {
    try {
        auto j = Json::parse(s);
        if (j.is_array()) return j;
    } catch (const nlohmann::json::parse_error&) {
    }
    return std::nullopt;
}

std::optional<Json> find_array(std::string_view text) {
    auto trimmed = text::trim(text);
    if (auto j = try_array(trimmed)) return j;
    // Fenced block.
    for (std::size_t open = text.find("```"); open != std::string_view::npos; open = text.find("```", open + 3)) {
        auto body_start = text.find('\n', open);
        if (body_start == std::string_view::npos) break;
        auto close = text.find("```", body_start);
        if (close == std::string_view::npos) break;
        if (auto j = try_array(text.substr(body_start + 1, close - body_start - 1))) return j;
        open = close;
    }
    // First bracketed span that parses.
    for (std::size_t b = text.find('['); b != std::string_view::npos; b = text.find('[', b + 1)) {
        for (std::size_t e = text.rfind(']'); e != std::string_view::npos && e > b; e = text.rfind(']', e - 1)) {
            if (auto j = try_array(text.substr(b, e - b + 1))) return j;
            if (e == 0) break;
        }
    }
    return std::nullopt;
}

} // namespace

ResidualPayload parse_residual_payload(std::string_view text, std::optional<Window> window) {
    auto arr = find_array(text);
    if (!arr) throw ParseError("no JSON array of residuals found in model output", 0);
    ResidualPayload out;
    std::size_t pos = 0;
    for (const auto& item : *arr) {
        auto reject = [&](std::string reason) { out.rejected.push_back({pos, std::move(reason)}); };
        if (!item.is_object()) {
            reject("record is not an object");
        } else if (!item.contains("frame_pair") || !item["frame_pair"].is_array() || item["frame_pair"].size() != 2 ||
                   !item["frame_pair"][0].is_number_integer() || !item["frame_pair"][1].is_number_integer()) {
            reject("frame_pair must be two integers");
        } else if (!item.contains("delta_caption") || !item["delta_caption"].is_string() ||
                   text::trim(item["delta_caption"].get<std::string>()).empty()) {
            reject("delta_caption must be a nonempty string");
        } else {
            const auto i = item["frame_pair"][0].get<long long>();
            const auto j = item["frame_pair"][1].get<long long>();
            if (i < 0 || j != i + 1) {
                reject("frame_pair [" + std::to_string(i) + "," + std::to_string(j) + "] is not adjacent");
            } else if (window && (static_cast<std::size_t>(i) < window->first ||
                                  static_cast<std::size_t>(j) > window->last)) {
                reject("frame_pair [" + std::to_string(i) + "," + std::to_string(j) + "] lies outside the window");
            } else {
                out.residuals.push_back({{static_cast<std::size_t>(i), static_cast<std::size_t>(j)},
                                         std::string(text::trim(item["delta_caption"].get<std::string>()))});
            }
        }
        ++pos;
    }
    return out;
}

// --- frames -----------------------------------------------------------------

DirectoryFrameSource::DirectoryFrameSource(const std::filesystem::path& dir, double tolerance_s)
    : tolerance_s_(tolerance_s) {
    for (auto& f : list_frame_dir(dir)) frames_.emplace_back(f.time_s, f.path);
}

std::string DirectoryFrameSource::frame_bytes(double time_s) const {
    const std::filesystem::path* best = nullptr;
    double best_d = tolerance_s_ + 1e-9;
    for (const auto& [t, p] : frames_) {
        double d = std::abs(t - time_s);
        if (d <= best_d) {
            best_d = d;
            best = &p;
        }
    }
    if (!best) throw InputError("missing frame near t=" + fmt_seconds(time_s) + " s");
    return read_file(*best);
}

// --- prompts ----------------------------------------------------------------

std::string render_anchor_prompt(const Segment& segment) {
    return text::render(prompt_template("anchor"), [&](std::string_view key) -> std::string {
        if (key == "start_s") return fmt_seconds(segment.start_s);
        if (key == "end_s") return fmt_seconds(segment.end_s);
        throw InputError("anchor prompt has unknown placeholder '" + std::string(key) + "'");
    });
}

std::string render_residual_prompt(const SamplePlan& plan, const Window& window) {
    return text::render(prompt_template("residual"), [&](std::string_view key) -> std::string {
        if (key == "frame_count") return std::to_string(window.size());
        if (key == "rate_hz") return fmt_rate(plan.rate_hz);
        if (key == "pair_list") return pair_list(window);
        if (key == "frame_list") {
            std::string out;
            for (std::size_t i = window.first; i <= window.last; ++i)
                out += "- frame " + std::to_string(i) + " at t=" + fmt_seconds(plan.sample_times[i]) + " s (image " +
                       std::to_string(i - window.first + 1) + ")\n";
            if (!out.empty()) out.pop_back();
            return out;
        }
        throw InputError("residual prompt has unknown placeholder '" + std::string(key) + "'");
    });
}

namespace {

std::string render_repair_prompt(const Window& window, const std::string& problem, const std::string& previous) {
    return text::render(prompt_template("residual_repair"), [&](std::string_view key) -> std::string {
        if (key == "problem") return problem;
        if (key == "previous") return previous;
        if (key == "pair_list") return pair_list(window);
        throw InputError("repair prompt has unknown placeholder '" + std::string(key) + "'");
    });
}

} // namespace

// --- captioning ---------------------------------------------------------------

AnchorCaption caption_anchor(const Segment& segment, const ImageInput& anchor_frame, ModelBackend& backend,
                             const CaptionConfig& cfg) {
    ModelRequest req;
    req.role = ModelRole::vision_caption;
    req.prompt = render_anchor_prompt(segment);
    req.images = {anchor_frame};
    req.decode = cfg.anchor_decode;
    auto resp = backend.invoke(req);
    auto body = std::string(text::trim(resp.text));
    if (resp.refusal || body.empty())
        throw AnchorGenerationError("anchor generation for segment " + std::to_string(segment.index) +
                                    " returned no text");
    return make_anchor(segment.index, segment.start_s, std::move(body));
}

WindowResult caption_window(std::size_t segment_index, const SamplePlan& plan, const Window& window,
                            const std::vector<ImageInput>& frames, ModelBackend& backend, const CaptionConfig& cfg) {
    if (window.size() < 2) throw InputError("a residual window needs at least two frames");
    if (frames.size() != window.size()) throw InputError("window frame count does not match the window");

    WindowResult result;
    result.window = window;

    ModelRequest req;
    req.role = ModelRole::vision_caption;
    req.prompt = render_residual_prompt(plan, window);
    req.images = frames;
    req.decode = cfg.residual_decode;

    // Returns a problem description, or empty when the output is complete.
    auto attempt = [&](const std::string& raw, std::map<std::size_t, std::string>& by_pair) -> std::string {
        ResidualPayload payload;
        try {
            payload = parse_residual_payload(raw, window);
        } catch (const ParseError& e) {
            return e.what();
        }
        for (auto& r : payload.residuals) by_pair.emplace(r.frame_pair.first, std::move(r.delta_caption));
        std::string missing;
        for (std::size_t i = window.first; i < window.last; ++i) {
            if (by_pair.count(i)) continue;
            if (cfg.no_change_omitted) {
                by_pair.emplace(i, std::string(kNoVisibleChange));
                continue;
            }
            missing += (missing.empty() ? "" : ", ") + ("[" + std::to_string(i) + ", " + std::to_string(i + 1) + "]");
        }
        if (!missing.empty()) return "missing frame pairs " + missing;
        return {};
    };

    auto first = backend.invoke(req);
    std::map<std::size_t, std::string> by_pair;
    std::string problem = attempt(first.text, by_pair);
    std::string raw = first.text;
    if (!problem.empty()) {
        ModelRequest repair = req;
        repair.prompt = render_repair_prompt(window, problem, first.text);
        auto second = backend.invoke(repair);
        result.repaired = true;
        by_pair.clear();
        problem = attempt(second.text, by_pair);
        raw += "\n--- repair ---\n" + second.text;
    }
    if (!problem.empty()) {
        result.failed = true;
        result.error = problem;
        result.raw_text = raw;
        return result;
    }
    for (auto& [i, caption] : by_pair) {
        ResidualRecord r;
        r.segment_index = segment_index;
        r.frame_pair = {i, i + 1};
        r.spatial_tags = extract_spatial_refs(caption);
        r.delta_caption = std::move(caption);
        result.records.push_back(std::move(r));
    }
    return result;
}

bool SegmentCaptions::failed() const {
    if (!anchor) return true;
    return std::any_of(windows.begin(), windows.end(), [](const WindowResult& w) { return w.failed; });
}

SegmentCaptions caption_segment(const Segment& segment, const FrameSource& frames, ModelBackend& backend,
                                const CaptionConfig& cfg) {
    cfg.validate();
    SegmentCaptions out;
    out.segment = segment;
    out.samples = plan_samples(segment, cfg.rate_hz);

    std::vector<ImageInput> images;
    images.reserve(out.samples.sample_times.size());
    for (double t : out.samples.sample_times) images.push_back(ImageInput::from_bytes(t, frames.frame_bytes(t)));

    try {
        out.anchor = caption_anchor(segment, images.front(), backend, cfg);
    } catch (const AnchorGenerationError& e) {
        out.anchor_error = e.what();
    }

    const auto wp = plan_windows(out.samples, cfg.window_size, cfg.overlap);
    std::map<std::size_t, ResidualRecord> merged;
    for (const auto& w : wp.windows) {
        std::vector<ImageInput> win(images.begin() + static_cast<std::ptrdiff_t>(w.first),
                                    images.begin() + static_cast<std::ptrdiff_t>(w.last + 1));
        auto res = caption_window(segment.index, out.samples, w, win, backend, cfg);
        for (const auto& r : res.records) merged.emplace(r.frame_pair.first, r);  // earlier window wins
        out.windows.push_back(std::move(res));
    }
    for (auto& [i, r] : merged) out.residuals.push_back(std::move(r));
    return out;
}

std::string serialize_segment_captions(const SegmentCaptions& c) {
    Json j;
    j["schema_version"] = kSchemaVersion;
    j["segment"] = json_io::encode(c.segment);
    j["sample_rate_hz"] = c.samples.rate_hz;
    Json times = Json::array();
    for (double t : c.samples.sample_times) times.push_back(json_io::time_value(t));
    j["sample_times"] = std::move(times);
    j["anchor"] = c.anchor ? json_io::encode(*c.anchor) : Json(nullptr);
    j["anchor_error"] = c.anchor_error;
    Json res = Json::array();
    for (const auto& r : c.residuals) res.push_back(json_io::encode(r));
    j["residuals"] = std::move(res);
    Json wins = Json::array();
    for (const auto& w : c.windows) {
        Json wj;
        wj["first"] = w.window.first;
        wj["last"] = w.window.last;
        wj["failed"] = w.failed;
        wj["repaired"] = w.repaired;
        wj["error"] = w.error;
        wj["raw_text"] = w.raw_text;
        wins.push_back(std::move(wj));
    }
    j["windows"] = std::move(wins);
    return json_io::dump(j);
}

SegmentCaptions deserialize_segment_captions(std::string_view bytes) {
    const Json j = json_io::parse(bytes);
    SegmentCaptions c;
    c.segment = json_io::decode_segment(json_io::field(j, "segment"));
    c.samples.segment_index = c.segment.index;
    c.samples.rate_hz = json_io::number_field(j, "sample_rate_hz");
    for (const auto& t : json_io::field(j, "sample_times")) c.samples.sample_times.push_back(t.get<double>());
    if (!json_io::field(j, "anchor").is_null()) c.anchor = json_io::decode_anchor(j["anchor"]);
    if (j.contains("anchor_error")) c.anchor_error = json_io::string_field(j, "anchor_error");
    for (const auto& r : json_io::field(j, "residuals")) {
        c.residuals.push_back(json_io::decode_residual(r));
    }
    if (j.contains("windows")) {
        for (const auto& wj : j["windows"]) {
            WindowResult w;
            w.window = {json_io::index_field(wj, "first"), json_io::index_field(wj, "last")};
            w.failed = wj.value("failed", false);
            w.repaired = wj.value("repaired", false);
            w.error = wj.value("error", std::string());
            w.raw_text = wj.value("raw_text", std::string());
            c.windows.push_back(std::move(w));
        }
    }
    return c;
}

} // namespace codeccap
