#include "codeccap/config.hpp"

#include "codeccap/error.hpp"
#include "codeccap/json_io.hpp"
#include "codeccap/raster.hpp"
#include "text_util.hpp"

#include <cctype>

namespace codeccap {

std::string_view to_string(ConfigSource s) {
    switch (s) {
    case ConfigSource::default_value: return "default";
    case ConfigSource::file: return "file";
    case ConfigSource::env: return "env";
    case ConfigSource::flag: return "flag";
    }
    return "default";
}

Config::Config() {
    auto def = [&](const char* key, Json v) { entries_[key].layers[0] = std::move(v); };
    def("segment.tau_gop", 0.5);
    def("segment.proximity", 0.5);
    def("segment.max_seg", 60.0);
    def("segment.min_seg", 1.0);
    def("cuts.threshold", 0.4);
    def("cuts.min_scene_len", 1.0);
    def("cuts.bins", 8);
    def("caption.rate_hz", 1.0);
    def("caption.window_size", 8);
    def("caption.overlap", 1);
    def("caption.no_change_omitted", false);
    def("caption.max_tokens", 2048);
    def("caption.temperature", 0.0);
    def("aggregate.mode", "template");
    def("aggregate.backend_claims", false);
    def("backend.profile", "replay");
    def("backend.mode", "replay");
    def("backend.fixture_dir", "");
    def("backend.profiles_dir", "profiles");
    def("forge.workers", 0);
    def("forge.max_attempts", 2);
    def("qa.budget", 1000);
    def("qa.seed", 0);
    def("qa.resamples", 10000);
    def("qa.strict_unknown", true);
    def("qa.strict_errors", false);
    def("qa.adapters", "");
    def("log.level", "info");
}

Config::Entry& Config::entry(std::string_view key) {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
    return it->second;
}

const Config::Entry& Config::entry(std::string_view key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
    return it->second;
}

Config::Json Config::coerce(std::string_view key, const Json& value, std::string_view origin) const {
    const Json& def = *entry(key).layers[0];
    auto bad = [&](const char* want) {
        return ConfigError(std::string(origin) + ": '" + std::string(key) + "' must be " + want);
    };
    if (def.is_boolean()) {
        if (value.is_boolean()) return value;
        if (value.is_string()) {
            const auto v = text::lower(text::trim(value.get<std::string>()));
            if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
            if (v == "false" || v == "0" || v == "no" || v == "off") return false;
        }
        throw bad("a boolean");
    }
    if (def.is_number_integer()) {
        if (value.is_number_integer()) return value;
        if (value.is_string())
            if (auto n = text::parse_int(text::trim(value.get<std::string>()))) return *n;
        throw bad("an integer");
    }
    if (def.is_number()) {
        if (value.is_number()) return value.get<double>();
        if (value.is_string())
            if (auto n = text::parse_double(text::trim(value.get<std::string>()))) return *n;
        throw bad("a number");
    }
    if (value.is_string()) return value;
    throw bad("a string");
}

void Config::load_json(std::string_view text, std::string_view origin) {
    const Json j = json_io::parse(text);
    if (!j.is_object()) throw ConfigError(std::string(origin) + ": top level must be an object of sections");
    for (const auto& [section, body] : j.items()) {
        if (!body.is_object()) throw ConfigError(std::string(origin) + ": section '" + section + "' must be an object");
        for (const auto& [key, value] : body.items()) {
            const auto dotted = section + "." + key;
            if (!entries_.count(dotted))
                throw ConfigError(std::string(origin) + ": unknown config key '" + dotted + "'");
            entry(dotted).layers[1] = coerce(dotted, value, origin);
        }
    }
}

void Config::load_file(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ConfigError("config file '" + path.string() + "' not found");
    load_json(read_file(path), path.string());
}

std::string Config::env_name(std::string_view key) {
    std::string out = "CODECCAP_";
    for (char c : key) out += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

void Config::apply_env(const EnvLookup& lookup) {
    if (const char* v = lookup("CODECCAP_REPLAY_DIR"))
        entry("backend.fixture_dir").layers[2] = coerce("backend.fixture_dir", std::string(v), "CODECCAP_REPLAY_DIR");
    for (auto& [key, e] : entries_) {
        const auto name = env_name(key);
        if (const char* v = lookup(name.c_str())) e.layers[2] = coerce(key, std::string(v), name);
    }
}

void Config::set(std::string_view key, std::string_view value, ConfigSource layer) {
    entry(key).layers[static_cast<std::size_t>(layer)] = coerce(key, std::string(value), "--" + std::string(key));
}

const Config::Json& Config::get(std::string_view key) const {
    const auto& e = entry(key);
    for (std::size_t i = 4; i-- > 0;)
        if (e.layers[i]) return *e.layers[i];
    throw Error("config key without a default");
}

ConfigSource Config::source_of(std::string_view key) const {
    const auto& e = entry(key);
    for (std::size_t i = 4; i-- > 0;)
        if (e.layers[i]) return static_cast<ConfigSource>(i);
    return ConfigSource::default_value;
}

double Config::number(std::string_view key) const { return get(key).get<double>(); }
long long Config::integer(std::string_view key) const { return get(key).get<long long>(); }
bool Config::flag(std::string_view key) const { return get(key).get<bool>(); }
std::string Config::string(std::string_view key) const { return get(key).get<std::string>(); }

std::string Config::dump() const {
    Json out = Json::object();
    for (const auto& [key, e] : entries_) {
        const auto dot = key.find('.');
        out[key.substr(0, dot)][key.substr(dot + 1)] = {{"value", get(key)}, {"source", to_string(source_of(key))}};
    }
    return json_io::dump(out);
}

SegmentationConfig Config::segmentation() const {
    SegmentationConfig c;
    c.tau_gop = number("segment.tau_gop");
    c.proximity_window_s = number("segment.proximity");
    c.max_segment_s = number("segment.max_seg");
    c.min_segment_s = number("segment.min_seg");
    c.validate();
    return c;
}

CutDetectConfig Config::cut_detect() const {
    CutDetectConfig c;
    c.threshold = number("cuts.threshold");
    c.min_scene_len_s = number("cuts.min_scene_len");
    c.bins_per_channel = static_cast<int>(integer("cuts.bins"));
    c.validate();
    return c;
}

CaptionConfig Config::caption() const {
    CaptionConfig c;
    c.rate_hz = number("caption.rate_hz");
    const auto w = integer("caption.window_size");
    const auto o = integer("caption.overlap");
    if (w < 0 || o < 0) throw ConfigError("caption.window_size and caption.overlap must be non-negative");
    c.window_size = static_cast<std::size_t>(w);
    c.overlap = static_cast<std::size_t>(o);
    c.no_change_omitted = flag("caption.no_change_omitted");
    c.anchor_decode.max_tokens = c.residual_decode.max_tokens = static_cast<int>(integer("caption.max_tokens"));
    c.anchor_decode.temperature = c.residual_decode.temperature = number("caption.temperature");
    c.validate();
    return c;
}

AggregateOptions Config::aggregate() const {
    AggregateOptions o;
    o.mode = synthesis_mode_from_string(string("aggregate.mode"));
    o.backend_claims = flag("aggregate.backend_claims");
    o.rate_hz = number("caption.rate_hz");
    return o;
}

} // namespace codeccap
