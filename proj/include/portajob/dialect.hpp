#pragma once

#include "portajob/core.hpp"
#include "portajob/template.hpp"

#include <chrono>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace portajob {

// Scheduler-side state, before mapping onto JobState.
enum class InterimState { Pending, Running, Done, FailedLrm, CanceledLrm, Unknown };

std::string_view to_string(InterimState state);

struct StatusRow {
    std::string native_id;
    std::string code;
    InterimState state = InterimState::Unknown;
    std::optional<std::string> message;
    // Some schedulers report the exit code alongside the state.
    std::optional<int> exit_code;
    // False when the scheduler says it has never heard of the id.
    bool known = true;
};

/// Everything specific to one scheduler's public command-line interface.
struct SchedulerDialect {
    std::string name;
    // Prefix selecting this dialect's entries in custom_attributes.
    std::string attribute_namespace;
    std::string submit_template;
    std::function<std::vector<std::string>(const std::string& script_path)> submit_command;
    // ECMAScript regex; the first capture group is the native id.
    std::string native_id_pattern;
    // Must yield a single command covering every id.
    std::function<std::vector<std::string>(const std::vector<std::string>& native_ids)> status_command;
    // Returns nothing for header or blank lines.
    std::function<std::optional<StatusRow>(std::string_view line)> status_row_parser;
    // Total over the scheduler's documented codes.
    std::map<std::string, InterimState> state_map;
    std::function<std::vector<std::string>(const std::string& native_id)> cancel_command;
    // Matched against cancel output; a match means the job already finished
    // and the failure is absorbed.
    std::string cancel_absorb_pattern;
    std::chrono::milliseconds default_poll_interval{5000};
};

InterimState map_state(const SchedulerDialect& dialect, const std::string& code);

// Trimmed native id from submit output; throws NativeIdParseError carrying the
// whole output when nothing matches.
std::string parse_native_id(std::string_view submit_stdout, const SchedulerDialect& dialect);

SchedulerDialect slurm_dialect();
SchedulerDialect pbs_dialect();
SchedulerDialect lsf_dialect();

// Dialect for any helper honoring the generic command contract:
//   <prefix> submit <script>  -> prints the native id
//   <prefix> status <id>...   -> one line per id: "<id> <code> [message]"
//   <prefix> cancel <id>      -> exit 0 on success
// with codes Q, R, CD, F, CA and U (unknown id). Finished jobs may carry an
// "exit=N" message.
SchedulerDialect contract_dialect(std::string name, std::vector<std::string> command_prefix);

// The built-in simulated scheduler, reached through the contract dialect.
SchedulerDialect mock_dialect();

// Command used to reach the mock scheduler: $PORTAJOB_MOCK_COMMAND, else a
// `portajob-mock` next to the running executable, else `portajob-mock` on PATH.
std::string mock_command();

std::optional<SchedulerDialect> builtin_dialect(const std::string& name);

struct ScriptContextInput {
    std::string job_id;
    JobSpec spec;
    std::string work_directory;
};

// Values available to submit templates; optional fields are absent when unset.
TemplateContext build_script_context(const ScriptContextInput& input, const SchedulerDialect& dialect);

std::string submit_script_path(const std::string& work_directory, const std::string& job_id);

std::string render_submit_script(const ScriptContextInput& input, const SchedulerDialect& dialect);

} // namespace portajob
