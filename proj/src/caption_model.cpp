#include "codeccap/caption_model.hpp"

#include "codeccap/error.hpp"
#include "codeccap/json_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

namespace codeccap {

namespace {

constexpr double kTimeEps = 1e-6;

constexpr std::string_view kBoundaryNames[] = {
    "iframe_matched", "content_cut", "duration_split", "video_start", "video_end"};

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

} // namespace

std::string_view to_string(BoundaryKind kind) {
    return kBoundaryNames[static_cast<int>(kind)];
}

BoundaryKind boundary_kind_from_string(std::string_view name) {
    for (int i = 0; i < 5; ++i)
        if (kBoundaryNames[i] == name) return static_cast<BoundaryKind>(i);
    throw InputError("unknown boundary kind '" + std::string(name) + "'");
}

std::size_t word_count(std::string_view text) {
    std::size_t n = 0;
    bool in_word = false;
    for (char c : text) {
        bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
        if (!space && !in_word) ++n;
        in_word = !space;
    }
    return n;
}

double quantize_time(double seconds) {
    double q = std::round(seconds * 1000.0) / 1000.0;
    return q == 0.0 ? 0.0 : q;  // drop negative zero
}

std::size_t sample_count(double start_s, double end_s, double rate_hz) {
    std::size_t n = 1;
    while (start_s + static_cast<double>(n) / rate_hz < end_s - kTimeEps) ++n;
    return n;
}

AnchorCaption make_anchor(std::size_t segment_index, double time_s, std::string text) {
    AnchorCaption a;
    a.segment_index = segment_index;
    a.anchor_time_s = time_s;
    a.word_count = word_count(text);
    a.text = std::move(text);
    return a;
}

bool ResidualRecord::is_no_change() const {
    return trim(delta_caption) == kNoVisibleChange;
}

std::size_t CaptionDocument::residual_count() const {
    std::size_t n = 0;
    for (const auto& r : residuals) n += r.size();
    return n;
}

void validate_segments(const std::vector<Segment>& segments, std::optional<double> duration_s) {
    if (duration_s && !(*duration_s > 0.0))
        throw ValidationError("duration_s > 0", "got " + std::to_string(*duration_s));
    for (std::size_t k = 0; k < segments.size(); ++k) {
        const auto& s = segments[k];
        if (s.index != k)
            throw ValidationError("segment index = position", "segment at " + std::to_string(k));
        if (!(s.start_s < s.end_s))
            throw ValidationError("start_s < end_s", "segment " + std::to_string(k));
        if (k == 0 && std::abs(s.start_s) > kTimeEps)
            throw ValidationError("segments tile the video", "first segment must start at 0");
        if (k > 0 && std::abs(segments[k - 1].end_s - s.start_s) > kTimeEps)
            throw ValidationError("segments tile the video",
                                  "gap or overlap before segment " + std::to_string(k));
    }
    if (duration_s && !segments.empty() &&
        std::abs(segments.back().end_s - *duration_s) > 1e-3)
        throw ValidationError("segments tile the video", "last segment must end at duration_s");
}

void validate(const CaptionDocument& doc) {
    if (doc.video.video_id.empty()) throw ValidationError("video_id nonempty", "");
    if (doc.video.frame_rate && !(*doc.video.frame_rate > 0.0))
        throw ValidationError("frame_rate > 0", "");
    if (!(doc.sample_rate_hz > 0.0)) throw ValidationError("sample_rate_hz > 0", "");
    validate_segments(doc.segments, doc.video.duration_s);

    const std::size_t k = doc.segments.size();
    if (doc.anchors.size() != k)
        throw ValidationError("|anchors| = K", std::to_string(doc.anchors.size()) + " vs " + std::to_string(k));
    if (doc.scene_narratives.size() != k)
        throw ValidationError("|scene_narratives| = K",
                              std::to_string(doc.scene_narratives.size()) + " vs " + std::to_string(k));
    if (doc.residuals.size() != k)
        throw ValidationError("|residuals| = K", std::to_string(doc.residuals.size()) + " vs " + std::to_string(k));

    for (std::size_t i = 0; i < k; ++i) {
        const auto& seg = doc.segments[i];
        const auto& a = doc.anchors[i];
        if (a.segment_index != i) throw ValidationError("anchor segment_index = position", std::to_string(i));
        if (std::abs(a.anchor_time_s - seg.start_s) > kTimeEps)
            throw ValidationError("anchor_time_s = segment start", "segment " + std::to_string(i));
        if (trim(a.text).empty()) throw ValidationError("anchor text nonempty", "segment " + std::to_string(i));
        if (a.word_count != word_count(a.text))
            throw ValidationError("word_count = whitespace tokens", "anchor " + std::to_string(i));

        const auto& sn = doc.scene_narratives[i];
        if (sn.segment_index != i) throw ValidationError("scene segment_index = position", std::to_string(i));
        if (std::abs(sn.start_s - seg.start_s) > kTimeEps || std::abs(sn.end_s - seg.end_s) > kTimeEps)
            throw ValidationError("scene span = segment span", "segment " + std::to_string(i));

        const std::size_t n = sample_count(seg.start_s, seg.end_s, doc.sample_rate_hz);
        const FramePair* prev = nullptr;
        for (const auto& r : doc.residuals[i]) {
            if (r.segment_index != i)
                throw ValidationError("residual segment_index = position", "segment " + std::to_string(i));
            if (r.frame_pair.second != r.frame_pair.first + 1)
                throw ValidationError("frame_pair j = i+1", "segment " + std::to_string(i));
            if (r.frame_pair.second >= n)
                throw ValidationError("frame_pair within sampled range",
                                      "segment " + std::to_string(i) + " pair (" +
                                          std::to_string(r.frame_pair.first) + "," +
                                          std::to_string(r.frame_pair.second) + ") with " +
                                          std::to_string(n) + " samples");
            if (prev && !(*prev < r.frame_pair))
                throw ValidationError("residuals ordered by frame_pair", "segment " + std::to_string(i));
            if (trim(r.delta_caption).empty())
                throw ValidationError("delta_caption nonempty", "segment " + std::to_string(i));
            for (const auto& t : r.spatial_tags) {
                if (t.kind == SpatialKind::percent) {
                    bool ok = t.x_pct >= 0 && t.x_pct <= 100 && t.y_pct >= 0 && t.y_pct <= 100;
                    if (ok != t.in_range)
                        throw ValidationError("spatial in_range flag matches [0,100]", r.delta_caption);
                }
            }
            prev = &r.frame_pair;
        }
    }
}

std::string serialize_document(const CaptionDocument& doc) {
    validate(doc);
    using json_io::Json;
    Json j;
    j["schema_version"] = kSchemaVersion;
    j["video"] = json_io::encode(doc.video);
    j["sample_rate_hz"] = doc.sample_rate_hz;
    Json segs = Json::array();
    for (const auto& s : doc.segments) segs.push_back(json_io::encode(s));
    j["segments"] = std::move(segs);
    Json anchors = Json::array();
    for (const auto& a : doc.anchors) anchors.push_back(json_io::encode(a));
    j["anchors"] = std::move(anchors);
    Json residuals = Json::array();
    for (const auto& per_seg : doc.residuals) {
        Json arr = Json::array();
        for (const auto& r : per_seg) arr.push_back(json_io::encode(r));
        residuals.push_back(std::move(arr));
    }
    j["residuals"] = std::move(residuals);
    Json scenes = Json::array();
    for (const auto& s : doc.scene_narratives) scenes.push_back(json_io::encode(s));
    j["scene_narratives"] = std::move(scenes);
    j["video_narrative"] = doc.video_narrative;
    return json_io::dump(j);
}

CaptionDocument deserialize_document(std::string_view bytes) {
    using json_io::Json;
    const Json j = json_io::parse(bytes);
    if (!j.is_object()) throw ParseError("caption document must be a JSON object", 0);
    const auto version = json_io::number_field(j, "schema_version");
    if (version != kSchemaVersion)
        throw InputError("unsupported schema_version " + std::to_string(version));

    CaptionDocument doc;
    doc.video = json_io::decode_video(json_io::field(j, "video"));
    if (j.contains("sample_rate_hz")) doc.sample_rate_hz = json_io::number_field(j, "sample_rate_hz");
    for (const auto& s : json_io::field(j, "segments")) doc.segments.push_back(json_io::decode_segment(s));
    for (const auto& a : json_io::field(j, "anchors")) doc.anchors.push_back(json_io::decode_anchor(a));
    for (const auto& arr : json_io::field(j, "residuals")) {
        if (!arr.is_array()) throw InputError("residuals must be a list of lists");
        std::vector<ResidualRecord> per_seg;
        for (const auto& r : arr) per_seg.push_back(json_io::decode_residual(r));
        doc.residuals.push_back(std::move(per_seg));
    }
    for (const auto& s : json_io::field(j, "scene_narratives")) doc.scene_narratives.push_back(json_io::decode_scene(s));
    doc.video_narrative = json_io::string_field(j, "video_narrative");
    validate(doc);
    return doc;
}

std::vector<VideoRef> parse_manifest(std::string_view bytes) {
    std::vector<VideoRef> out;
    std::set<std::string> seen;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= bytes.size()) {
        auto nl = bytes.find('\n', pos);
        auto line = bytes.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        ++line_no;
        pos = nl == std::string_view::npos ? bytes.size() + 1 : nl + 1;
        if (trim(line).empty() || trim(line)[0] == '#') continue;
        json_io::Json j;
        try {
            j = json_io::Json::parse(line);
        } catch (const nlohmann::json::parse_error&) {
            throw ParseError("malformed manifest record", line_no);
        }
        VideoRef v;
        v.video_id = json_io::string_field(j, "video_id");
        v.source = json_io::string_field(j, "path");
        if (j.contains("duration_s") && !j["duration_s"].is_null()) {
            v.duration_s = json_io::number_field(j, "duration_s");
            if (!(*v.duration_s > 0.0))
                throw ValidationError("duration_s > 0", "manifest line " + std::to_string(line_no));
        }
        if (v.video_id.empty()) throw ValidationError("video_id nonempty", "manifest line " + std::to_string(line_no));
        if (!seen.insert(v.video_id).second)
            throw ValidationError("video_id unique within a manifest", v.video_id);
        out.push_back(std::move(v));
    }
    return out;
}

std::string format_manifest_entry(const VideoRef& video) {
    json_io::Json j;
    j["video_id"] = video.video_id;
    j["path"] = video.source;
    if (video.duration_s) j["duration_s"] = json_io::time_value(*video.duration_s);
    return j.dump();
}

// ---------------------------------------------------------------------------

namespace json_io {

Json time_value(double seconds) { return quantize_time(seconds); }

Json parse(std::string_view bytes) {
    try {
        return Json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("malformed JSON: ") + e.what(), e.byte);
    }
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

const Json& field(const Json& j, std::string_view name) {
    if (!j.is_object()) throw InputError("expected an object holding '" + std::string(name) + "'");
    auto it = j.find(name);
    if (it == j.end()) throw InputError("missing field '" + std::string(name) + "'");
    return *it;
}

double number_field(const Json& j, std::string_view name) {
    const auto& v = field(j, name);
    if (!v.is_number()) throw InputError("field '" + std::string(name) + "' must be a number");
    return v.get<double>();
}

std::size_t index_field(const Json& j, std::string_view name) {
    const auto& v = field(j, name);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
        throw InputError("field '" + std::string(name) + "' must be a nonnegative integer");
    return v.get<std::size_t>();
}

std::string string_field(const Json& j, std::string_view name) {
    const auto& v = field(j, name);
    if (!v.is_string()) throw InputError("field '" + std::string(name) + "' must be a string");
    return v.get<std::string>();
}

Json encode(const VideoRef& video) {
    Json j;
    j["video_id"] = video.video_id;
    j["source"] = video.source;
    j["duration_s"] = video.duration_s ? time_value(*video.duration_s) : Json(nullptr);
    j["frame_rate"] = video.frame_rate ? Json(*video.frame_rate) : Json(nullptr);
    return j;
}

VideoRef decode_video(const Json& j) {
    VideoRef v;
    v.video_id = string_field(j, "video_id");
    v.source = string_field(j, "source");
    if (j.contains("duration_s") && !j["duration_s"].is_null()) v.duration_s = number_field(j, "duration_s");
    if (j.contains("frame_rate") && !j["frame_rate"].is_null()) v.frame_rate = number_field(j, "frame_rate");
    return v;
}

Json encode(const Segment& s) {
    Json j;
    j["index"] = s.index;
    j["start_s"] = time_value(s.start_s);
    j["end_s"] = time_value(s.end_s);
    j["boundary_kind"] = std::string(to_string(s.start_kind));
    j["end_kind"] = std::string(to_string(s.end_kind));
    return j;
}

Segment decode_segment(const Json& j) {
    Segment s;
    s.index = index_field(j, "index");
    s.start_s = number_field(j, "start_s");
    s.end_s = number_field(j, "end_s");
    s.start_kind = boundary_kind_from_string(string_field(j, "boundary_kind"));
    if (j.contains("end_kind")) s.end_kind = boundary_kind_from_string(string_field(j, "end_kind"));
    return s;
}

Json encode(const AnchorCaption& a) {
    Json j;
    j["segment_index"] = a.segment_index;
    j["anchor_time_s"] = time_value(a.anchor_time_s);
    j["text"] = a.text;
    j["word_count"] = a.word_count;
    return j;
}

AnchorCaption decode_anchor(const Json& j) {
    AnchorCaption a;
    a.segment_index = index_field(j, "segment_index");
    a.anchor_time_s = number_field(j, "anchor_time_s");
    a.text = string_field(j, "text");
    a.word_count = j.contains("word_count") ? index_field(j, "word_count") : word_count(a.text);
    return a;
}

Json encode(const SpatialRef& r) {
    Json j;
    if (r.kind == SpatialKind::zone) {
        j["kind"] = "zone";
        j["zone"] = r.zone;
    } else {
        j["kind"] = "percent";
        j["x_pct"] = r.x_pct;
        j["y_pct"] = r.y_pct;
        j["in_range"] = r.in_range;
    }
    return j;
}

SpatialRef decode_spatial(const Json& j) {
    SpatialRef r;
    auto kind = string_field(j, "kind");
    if (kind == "zone") {
        r.kind = SpatialKind::zone;
        r.zone = string_field(j, "zone");
    } else if (kind == "percent") {
        r.kind = SpatialKind::percent;
        r.x_pct = number_field(j, "x_pct");
        r.y_pct = number_field(j, "y_pct");
        r.in_range = field(j, "in_range").get<bool>();
    } else {
        throw InputError("unknown spatial kind '" + kind + "'");
    }
    return r;
}

Json encode(const ResidualRecord& r) {
    Json j;
    j["segment_index"] = r.segment_index;
    j["frame_pair"] = Json::array({r.frame_pair.first, r.frame_pair.second});
    j["delta_caption"] = r.delta_caption;
    Json tags = Json::array();
    for (const auto& t : r.spatial_tags) tags.push_back(encode(t));
    j["spatial_tags"] = std::move(tags);
    return j;
}

ResidualRecord decode_residual(const Json& j) {
    ResidualRecord r;
    r.segment_index = index_field(j, "segment_index");
    const auto& fp = field(j, "frame_pair");
    if (!fp.is_array() || fp.size() != 2 || !fp[0].is_number_unsigned() || !fp[1].is_number_unsigned())
        throw InputError("frame_pair must be two nonnegative integers");
    r.frame_pair = {fp[0].get<std::size_t>(), fp[1].get<std::size_t>()};
    r.delta_caption = string_field(j, "delta_caption");
    if (j.contains("spatial_tags"))
        for (const auto& t : j["spatial_tags"]) r.spatial_tags.push_back(decode_spatial(t));
    return r;
}

Json encode(const SceneNarrative& s) {
    Json j;
    j["segment_index"] = s.segment_index;
    j["start_s"] = time_value(s.start_s);
    j["end_s"] = time_value(s.end_s);
    j["text"] = s.text;
    return j;
}

SceneNarrative decode_scene(const Json& j) {
    SceneNarrative s;
    s.segment_index = index_field(j, "segment_index");
    s.start_s = number_field(j, "start_s");
    s.end_s = number_field(j, "end_s");
    s.text = string_field(j, "text");
    return s;
}

} // namespace json_io
} // namespace codeccap
