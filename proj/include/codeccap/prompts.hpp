#pragma once

#include <string_view>
#include <utility>
#include <vector>

namespace codeccap {

/// Prompt template text by name ("anchor", "residual", ...). The templates are
/// the versioned files under prompts/, embedded at build time. Throws
/// InputError for unknown names.
std::string_view prompt_template(std::string_view name);

/// Template name to versioned file name, e.g. "anchor" -> "anchor_v1.txt".
std::vector<std::pair<std::string_view, std::string_view>> prompt_files();

} // namespace codeccap
