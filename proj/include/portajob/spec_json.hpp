#pragma once

#include "portajob/core.hpp"

#include <filesystem>
#include <string>
#include <string_view>

namespace portajob {

// Job-spec documents mirror the JobSpec field names, with `resources` and
// `attributes` as nested objects. Unknown keys and wrongly typed values throw
// SpecFileError.
JobSpec parse_spec_json(std::string_view text);
JobSpec load_spec_file(const std::filesystem::path& path);

std::string spec_to_json(const JobSpec& spec, int indent = 2);

} // namespace portajob
