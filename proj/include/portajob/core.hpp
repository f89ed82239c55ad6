#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace portajob {

struct ResourceSpec {
    int version = 1;
    std::optional<int> node_count;
    std::optional<int> process_count;
    std::optional<int> processes_per_node;
    std::optional<int> cpu_cores_per_process;
    std::optional<int> gpu_cores_per_process;
    bool exclusive_node_use = false;

    bool operator==(const ResourceSpec&) const = default;
};

struct JobAttributes {
    // Wall time in seconds.
    std::optional<std::int64_t> duration;
    std::optional<std::string> queue_name;
    std::optional<std::string> project_name;
    std::optional<std::string> reservation_id;
    // Keys are `<dialect>.<key>`; each executor only looks at its own namespace.
    std::map<std::string, std::string> custom_attributes;

    bool operator==(const JobAttributes&) const = default;
};

struct JobSpec {
    std::string executable;
    std::vector<std::string> arguments;
    std::optional<std::string> directory;
    std::map<std::string, std::string> environment;
    std::optional<std::string> stdin_path;
    std::optional<std::string> stdout_path;
    std::optional<std::string> stderr_path;
    ResourceSpec resources;
    JobAttributes attributes;
    std::optional<std::string> launcher;
    std::optional<std::string> pre_launch;
    std::optional<std::string> post_launch;

    bool operator==(const JobSpec&) const = default;
};

struct Violation {
    std::string field;
    std::string message;

    bool operator==(const Violation&) const = default;
};

// Every invariant violation of the spec; an empty result means the spec is valid.
std::vector<Violation> validate_spec(const JobSpec& spec);
std::vector<Violation> validate_resources(const ResourceSpec& resources);

// Fills in the third of {node_count, process_count, processes_per_node} when
// two are known. Throws InconsistentResources when the values contradict or
// do not divide evenly.
ResourceSpec complete_resources(const ResourceSpec& resources);

enum class JobState { New, Queued, Active, Completed, Failed, Canceled };

inline constexpr JobState all_job_states[] = {JobState::New,       JobState::Queued, JobState::Active,
                                              JobState::Completed, JobState::Failed, JobState::Canceled};

std::string_view to_string(JobState state);
std::optional<JobState> parse_job_state(std::string_view text);

constexpr bool is_final(JobState state) {
    return state == JobState::Completed || state == JobState::Failed || state == JobState::Canceled;
}

constexpr int rank(JobState state) {
    switch (state) {
    case JobState::New: return 0;
    case JobState::Queued: return 1;
    case JobState::Active: return 2;
    default: return 3;
    }
}

bool is_legal_transition(JobState from, JobState to);

// Intermediate states a consumer must see between `from` and `to` so that
// every step is a legal edge. `ran` tells whether the job is known to have
// executed, in which case ACTIVE is synthesized before a final state.
std::vector<JobState> synthesize_path(JobState from, JobState to, bool ran);

using Clock = std::chrono::system_clock;

struct JobStatus {
    JobState state = JobState::New;
    Clock::time_point timestamp = Clock::now();
    std::optional<int> exit_code;
    std::optional<std::string> message;
    std::map<std::string, std::string> metadata;

    JobStatus() = default;
    explicit JobStatus(JobState s, std::optional<int> code = std::nullopt,
                       std::optional<std::string> msg = std::nullopt)
        : state(s), exit_code(code), message(std::move(msg)) {}
};

// Duration rounding helpers used by dialects; all round up.
std::string format_hms(std::int64_t seconds);
std::int64_t ceil_minutes(std::int64_t seconds);

} // namespace portajob
