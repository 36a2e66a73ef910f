#pragma once

#include "codeccap/aggregate.hpp"
#include "codeccap/anchor_residual.hpp"
#include "codeccap/codec_probe.hpp"
#include "codeccap/cut_detect.hpp"

#include <json.hpp>

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace codeccap {

enum class ConfigSource { default_value, file, env, flag };

std::string_view to_string(ConfigSource s);

/// Settings for every stage, addressed as "section.key". Each source has its
/// own layer and the highest one wins: flag > env > file > default.
class Config {
public:
    using Json = nlohmann::ordered_json;
    using EnvLookup = std::function<const char*(const char*)>;

    Config();

    /// JSON object of sections; unknown sections or keys are a ConfigError.
    void load_file(const std::filesystem::path& path);
    void load_json(std::string_view text, std::string_view origin = "config");

    /// CODECCAP_<SECTION>_<KEY> for every known key, plus CODECCAP_REPLAY_DIR
    /// for backend.fixture_dir.
    void apply_env(const EnvLookup& lookup);

    /// Parses `value` as the key's type and stores it in the given layer.
    void set(std::string_view key, std::string_view value, ConfigSource layer = ConfigSource::flag);

    const Json& get(std::string_view key) const;
    double number(std::string_view key) const;
    long long integer(std::string_view key) const;
    bool flag(std::string_view key) const;
    std::string string(std::string_view key) const;
    ConfigSource source_of(std::string_view key) const;

    /// Resolved values with their sources.
    std::string dump() const;

    SegmentationConfig segmentation() const;
    CutDetectConfig cut_detect() const;
    CaptionConfig caption() const;
    AggregateOptions aggregate() const;

    static std::string env_name(std::string_view key);

private:
    struct Entry {
        std::array<std::optional<Json>, 4> layers;
    };
    Entry& entry(std::string_view key);
    const Entry& entry(std::string_view key) const;
    Json coerce(std::string_view key, const Json& value, std::string_view origin) const;

    std::map<std::string, Entry, std::less<>> entries_;
};

} // namespace codeccap
