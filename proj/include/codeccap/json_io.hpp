#pragma once

// JSON encoders/decoders shared by the on-disk formats. Field order is fixed so
// output is byte-stable.

#include "codeccap/caption_model.hpp"

#include <json.hpp>

#include <string_view>

namespace codeccap::json_io {

using Json = nlohmann::ordered_json;

Json time_value(double seconds);

Json encode(const VideoRef& video);
Json encode(const Segment& segment);
Json encode(const AnchorCaption& anchor);
Json encode(const SpatialRef& ref);
Json encode(const ResidualRecord& record);
Json encode(const SceneNarrative& narrative);

VideoRef decode_video(const Json& j);
Segment decode_segment(const Json& j);
AnchorCaption decode_anchor(const Json& j);
SpatialRef decode_spatial(const Json& j);
ResidualRecord decode_residual(const Json& j);
SceneNarrative decode_scene(const Json& j);

/// Parses text as JSON, mapping syntax errors to ParseError with byte offset.
Json parse(std::string_view bytes);

/// Two-space indented dump with trailing newline.
std::string dump(const Json& j);

// Typed field access; missing or mistyped fields raise ParseError/InputError
// naming the field.
const Json& field(const Json& j, std::string_view name);
double number_field(const Json& j, std::string_view name);
std::size_t index_field(const Json& j, std::string_view name);
std::string string_field(const Json& j, std::string_view name);

} // namespace codeccap::json_io
