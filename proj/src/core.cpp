#include "portajob/core.hpp"

#include "portajob/errors.hpp"

#include <array>
#include <regex>

namespace portajob {

namespace {

void check_positive(std::vector<Violation>& out, const char* field, const std::optional<int>& value) {
    if (value && *value < 1) {
        out.push_back({std::string("resources.") + field, "must be >= 1, got " + std::to_string(*value)});
    }
}

} // namespace

std::vector<Violation> validate_resources(const ResourceSpec& r) {
    std::vector<Violation> out;
    if (r.version != 1) {
        out.push_back({"resources.version", "only version 1 is supported, got " + std::to_string(r.version)});
    }
    check_positive(out, "node_count", r.node_count);
    check_positive(out, "process_count", r.process_count);
    check_positive(out, "processes_per_node", r.processes_per_node);
    check_positive(out, "cpu_cores_per_process", r.cpu_cores_per_process);
    if (r.gpu_cores_per_process && *r.gpu_cores_per_process < 0) {
        out.push_back({"resources.gpu_cores_per_process",
                       "must be >= 0, got " + std::to_string(*r.gpu_cores_per_process)});
    }
    if (r.node_count && r.process_count && r.processes_per_node) {
        const long long product = static_cast<long long>(*r.node_count) * *r.processes_per_node;
        if (product != *r.process_count) {
            out.push_back({"resources.process_count",
                           "node_count x processes_per_node must equal process_count: " +
                               std::to_string(*r.node_count) + "x" + std::to_string(*r.processes_per_node) +
                               "!=" + std::to_string(*r.process_count)});
        }
    }
    return out;
}

std::vector<Violation> validate_spec(const JobSpec& spec) {
    std::vector<Violation> out;
    if (spec.executable.empty()) {
        out.push_back({"executable", "must not be empty"});
    }
    for (const auto& [name, value] : spec.environment) {
        if (name.empty()) {
            out.push_back({"environment", "variable names must not be empty"});
        } else if (name.find('=') != std::string::npos || name.find('\0') != std::string::npos) {
            out.push_back({"environment", "invalid variable name '" + name + "'"});
        }
        if (value.find('\0') != std::string::npos) {
            out.push_back({"environment", "value of '" + name + "' contains NUL"});
        }
    }
    for (const auto& arg : spec.arguments) {
        if (arg.find('\0') != std::string::npos) {
            out.push_back({"arguments", "arguments must not contain NUL"});
            break;
        }
    }
    if (spec.launcher && spec.launcher->empty()) {
        out.push_back({"launcher", "must not be empty when set"});
    }
    auto res = validate_resources(spec.resources);
    out.insert(out.end(), res.begin(), res.end());

    const auto& attrs = spec.attributes;
    if (attrs.duration && *attrs.duration <= 0) {
        out.push_back({"attributes.duration", "must be > 0, got " + std::to_string(*attrs.duration)});
    }
    static const std::regex custom_key(R"(^[a-z0-9_\-]+\.[A-Za-z0-9_.\-]+$)");
    for (const auto& [key, value] : attrs.custom_attributes) {
        if (!std::regex_match(key, custom_key)) {
            out.push_back({"attributes.custom_attributes",
                           "key '" + key + "' does not match <dialect>.<key>"});
        }
    }
    return out;
}

ResourceSpec complete_resources(const ResourceSpec& in) {
    ResourceSpec r = in;
    auto& nodes = r.node_count;
    auto& procs = r.process_count;
    auto& ppn = r.processes_per_node;
    const int known = int(nodes.has_value()) + int(procs.has_value()) + int(ppn.has_value());

    auto divide = [](int total, int by, const char* what) {
        if (total % by != 0) {
            throw InconsistentResources("process_count " + std::to_string(total) + " is not divisible by " + what +
                                        " " + std::to_string(by));
        }
        return total / by;
    };

    if (known == 3) {
        if (static_cast<long long>(*nodes) * *ppn != *procs) {
            throw InconsistentResources("node_count x processes_per_node != process_count: " +
                                        std::to_string(*nodes) + "x" + std::to_string(*ppn) +
                                        "!=" + std::to_string(*procs));
        }
    } else if (known == 2) {
        if (nodes && ppn) {
            procs = *nodes * *ppn;
        } else if (procs && nodes) {
            ppn = divide(*procs, *nodes, "node_count");
        } else {
            nodes = divide(*procs, *ppn, "processes_per_node");
        }
    } else if (!procs && !nodes) {
        nodes = 1;
        if (ppn) {
            procs = *ppn;
        }
    }
    return r;
}

std::string_view to_string(JobState state) {
    switch (state) {
    case JobState::New: return "NEW";
    case JobState::Queued: return "QUEUED";
    case JobState::Active: return "ACTIVE";
    case JobState::Completed: return "COMPLETED";
    case JobState::Failed: return "FAILED";
    case JobState::Canceled: return "CANCELED";
    }
    return "?";
}

std::optional<JobState> parse_job_state(std::string_view text) {
    for (auto s : all_job_states) {
        if (to_string(s) == text) {
            return s;
        }
    }
    return std::nullopt;
}

bool is_legal_transition(JobState from, JobState to) {
    using S = JobState;
    switch (from) {
    case S::New: return to == S::Queued || to == S::Failed;
    case S::Queued: return to == S::Active || to == S::Canceled || to == S::Failed;
    case S::Active: return to == S::Completed || to == S::Failed || to == S::Canceled;
    default: return false;
    }
}

std::vector<JobState> synthesize_path(JobState from, JobState to, bool ran) {
    std::vector<JobState> path;
    if (from == to || is_final(from) || rank(to) < rank(from)) {
        return path;
    }
    JobState cur = from;
    const bool needs_active = to == JobState::Completed || (is_final(to) && ran) || to == JobState::Active;
    const bool direct_fail = to == JobState::Failed && !ran;
    if (cur == JobState::New && !(direct_fail)) {
        cur = JobState::Queued;
        path.push_back(cur);
    }
    if (cur == JobState::Queued && needs_active && to != JobState::Active) {
        cur = JobState::Active;
        path.push_back(cur);
    }
    if (cur != to) {
        path.push_back(to);
    }
    return path;
}

std::string format_hms(std::int64_t seconds) {
    const auto h = seconds / 3600;
    const auto m = (seconds % 3600) / 60;
    const auto s = seconds % 60;
    std::array<char, 32> buf{};
    std::snprintf(buf.data(), buf.size(), "%02lld:%02lld:%02lld", static_cast<long long>(h),
                  static_cast<long long>(m), static_cast<long long>(s));
    return buf.data();
}

std::int64_t ceil_minutes(std::int64_t seconds) {
    return (seconds + 59) / 60;
}

} // namespace portajob
