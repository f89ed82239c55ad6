#pragma once

#include "portajob/job.hpp"
#include "portajob/launchers.hpp"

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace portajob {

struct SemVer {
    int major = 0;
    int minor = 0;
    int patch = 0;

    auto operator<=>(const SemVer&) const = default;

    // Accepts "1", "1.2" and "1.2.3"; throws Error otherwise.
    static SemVer parse(std::string_view text);
    std::string to_string() const;
};

// Comma-separated clauses, each one of: "1.2.3" or "=1.2.3" (exact),
// ">=", ">", "<=", "<" followed by a version, "^1.2" (same major, at least
// 1.2), or "*". An empty constraint matches everything.
bool satisfies(const SemVer& version, std::string_view constraint);

struct ExecutorConfig {
    // Zero selects the executor's default (5 s for batch dialects, 10 ms for
    // local and mock).
    std::chrono::milliseconds poll_interval{0};
    // Generated scripts and sidecar files. Empty selects
    // default_work_directory().
    std::string work_directory;
    std::optional<std::string> launcher_override;
    LaunchMode launch_mode = LaunchMode::Default;
    std::chrono::milliseconds command_timeout = std::chrono::seconds(60);
    // Poll cycles a job may be missing from status output before it is
    // resolved from its sidecar file.
    int missing_tolerance = 2;
    int max_consecutive_failures = 10;
    // Extra environment for scheduler commands.
    std::map<std::string, std::string> command_environment;
};

std::string default_work_directory();

using StatusCallback = std::function<void(Job&, const JobStatus&)>;

/// Binding to one job-execution mechanism.
///
/// submit(), cancel() and attach() may be called concurrently from any thread.
/// Status callbacks run on executor-internal threads (or on the submitting
/// thread for the QUEUED notification); deliveries for one job are
/// serialized and arrive in rank order, deliveries for different jobs may
/// overlap.
class Executor {
public:
    Executor(std::string name, SemVer version, ExecutorConfig config);
    virtual ~Executor();

    Executor(const Executor&) = delete;
    Executor& operator=(const Executor&) = delete;

    const std::string& name() const { return name_; }
    const SemVer& version() const { return version_; }
    const ExecutorConfig& config() const { return config_; }

    // Returns once the job is accepted (native id set, state QUEUED). On
    // rejection the job moves to FAILED and SubmitFailed is thrown. Invalid
    // specs throw InvalidSpec (UnknownLauncher for an unregistered launcher)
    // and leave the job NEW and unbound.
    void submit(const JobPtr& job);
    // Requests cancellation; CANCELED arrives through the normal status path.
    void cancel(const JobPtr& job);
    // Binds `job` to an existing native job. Unknown ids surface as FAILED
    // after the next status sweep.
    void attach(const JobPtr& job, std::string native_id);

    // Replacing the callback only affects later deliveries.
    void set_job_status_callback(StatusCallback callback);

    // One synchronous status sweep over this executor's live jobs.
    virtual void refresh() = 0;

    std::vector<JobPtr> jobs() const;

protected:
    // Must set the native id and deliver QUEUED before returning. Throws
    // SubmitFailed (or SpawnError) on rejection.
    virtual void do_submit(const JobPtr& job) = 0;
    virtual void do_cancel(const JobPtr& job) = 0;
    virtual void do_attach(const JobPtr& job) = 0;

    // Work directory, created on construction.
    const std::string& work_directory() const { return config_.work_directory; }
    std::string effective_launcher(const JobSpec& spec) const;

private:
    struct CallbackHub {
        std::mutex mutex;
        StatusCallback callback;
    };

    void bind(const JobPtr& job);

    const std::string name_;
    const SemVer version_;

protected:
    ExecutorConfig config_;

private:
    std::shared_ptr<CallbackHub> hub_;
    mutable std::mutex jobs_mutex_;
    std::map<std::string, JobPtr> jobs_;
};

using ExecutorFactory = std::function<std::unique_ptr<Executor>(const ExecutorConfig&)>;

struct ExecutorDescriptor {
    std::string name;
    SemVer version;
    ExecutorFactory factory;
    // "built-in" or the manifest path.
    std::string source = "built-in";
};

struct DiscoveryDiagnostic {
    std::string path;
    std::string message;
};

struct DiscoveryResult {
    std::vector<ExecutorDescriptor> descriptors;
    std::vector<DiscoveryDiagnostic> diagnostics;
};

class ExecutorRegistry {
public:
    // Built-ins plus plugins from PORTAJOB_PLUGIN_PATH, scanned on first use.
    static ExecutorRegistry& global();

    // An empty registry; see register_builtin_executors().
    ExecutorRegistry() = default;

    // Replaces an existing descriptor with the same (name, version); returns
    // true when something was replaced.
    bool add(ExecutorDescriptor descriptor);

    // Scans each directory for `*.exdesc` manifests. Files are visited in
    // sorted order within a directory and directories in the given order, so
    // later directories shadow earlier ones for equal (name, version).
    // Launcher manifests are registered with `launchers`.
    DiscoveryResult discover_plugins(const std::vector<std::filesystem::path>& directories,
                                     LauncherRegistry& launchers = LauncherRegistry::global());

    // Highest registered version of `name` satisfying the constraint.
    // Throws UnknownExecutor or NoVersionSatisfies.
    ExecutorDescriptor find(const std::string& name, std::string_view version_constraint = {}) const;

    std::unique_ptr<Executor> get_instance(const std::string& name, std::string_view version_constraint = {},
                                           const ExecutorConfig& config = {}) const;

    // Sorted, de-duplicated executor names.
    std::vector<std::string> names() const;
    std::vector<ExecutorDescriptor> descriptors() const;

private:
    mutable std::mutex mutex_;
    std::vector<ExecutorDescriptor> descriptors_;
};

void register_builtin_executors(ExecutorRegistry& registry);

// Directories listed in PORTAJOB_PLUGIN_PATH (':'-separated).
std::vector<std::filesystem::path> plugin_path_from_env();

std::unique_ptr<Executor> get_instance(const std::string& name, std::string_view version_constraint = {},
                                       const ExecutorConfig& config = {});

struct PluginManifest {
    std::string name;
    SemVer version;
    std::optional<std::string> dialect;
    std::optional<std::string> command;
    // "executor" (default) or "launcher".
    std::string kind = "executor";
};

// Parses `key: value` lines; '#' starts a comment. Throws Error describing
// the first problem.
PluginManifest parse_manifest(std::string_view text);

} // namespace portajob
