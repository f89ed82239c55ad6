#pragma once

#include <chrono>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <sys/types.h>

namespace portajob {

struct SpawnOptions {
    // argv[0] is resolved against PATH (taken from the merged environment)
    // unless it contains a slash.
    std::vector<std::string> argv;
    std::optional<std::string> directory;
    // Merged over the parent environment for the child only.
    std::map<std::string, std::string> environment;
    std::optional<std::string> stdin_path;
    std::optional<std::string> stdout_path;
    std::optional<std::string> stderr_path;
    // Child becomes the leader of a new process group (pgid == pid).
    bool new_process_group = true;
    // Child starts a new session; implies a new process group.
    bool new_session = false;
};

// Forks and execs. Failures that happen in the child before exec (bad
// directory, missing executable, unopenable redirection) are reported back
// and thrown as SpawnError with the OS error text.
pid_t spawn_process(const SpawnOptions& options);

struct ExitInfo {
    int exit_code = 0;
    std::optional<int> signal;
};

ExitInfo decode_wait_status(int status);

// Non-blocking reap of one child; returns nothing while it is still running.
std::optional<ExitInfo> try_reap(pid_t pid);

struct CommandResult {
    int exit_code = 0;
    std::optional<int> signal;
    std::string out;
    std::string err;
    bool timed_out = false;

    bool ok() const { return !timed_out && !signal && exit_code == 0; }
};

// Runs a command to completion, capturing stdout and stderr. The whole
// process group is killed when `timeout` elapses. Throws SpawnError when the
// command cannot be started at all (e.g. not found on PATH).
CommandResult run_command(const std::vector<std::string>& argv,
                          const std::map<std::string, std::string>& environment = {},
                          std::chrono::milliseconds timeout = std::chrono::seconds(60));

std::optional<std::string> find_executable(std::string_view name, std::string_view search_path);

// Single-quoted POSIX shell word.
std::string shell_quote(std::string_view word);
std::string shell_join(const std::vector<std::string>& words);

std::string signal_name(int signal);

// Current environment with `overrides` applied.
std::map<std::string, std::string> merged_environment(const std::map<std::string, std::string>& overrides);

} // namespace portajob
