#pragma once

#include "portajob/dialect.hpp"
#include "portajob/executor.hpp"
#include "portajob/process.hpp"

#include <atomic>
#include <condition_variable>
#include <filesystem>
#include <map>
#include <thread>

namespace portajob {

// Parses a sidecar exit-code file. Missing files yield nothing; malformed
// content also yields nothing and logs a warning.
std::optional<int> read_exit_code_file(const std::string& path);

struct StatusDelta {
    std::string job_id;
    JobState from = JobState::New;
    JobState to = JobState::New;
};

/// Executor driving a batch scheduler through its command-line tools.
///
/// submit() renders `<work>/<id>.job` and `<work>/<id>.launch`, runs the
/// dialect's submit command on the calling thread and parses the native id.
/// A poller thread issues one status command per cycle covering every live
/// job of this instance.
class BatchExecutor : public Executor {
public:
    static constexpr SemVer executor_version{1, 0, 0};

    BatchExecutor(std::string name, SemVer version, SchedulerDialect dialect, ExecutorConfig config = {});
    ~BatchExecutor() override;

    const SchedulerDialect& dialect() const { return dialect_; }

    // Deterministic for a given (job id, spec, config).
    std::string generate_submit_script(const Job& job) const;

    // One bulk status query and the resulting transitions.
    std::vector<StatusDelta> poll_cycle();

    std::optional<int> read_exit_code(const Job& job) const;

    void refresh() override { poll_cycle(); }

    // Status commands this instance has issued.
    std::uint64_t status_commands_issued() const { return status_commands_.load(); }

protected:
    void do_submit(const JobPtr& job) override;
    void do_cancel(const JobPtr& job) override;
    void do_attach(const JobPtr& job) override;

private:
    struct Tracked {
        JobPtr job;
        int missing_cycles = 0;
        bool cancel_requested = false;
    };

    void poll_loop();
    CommandResult run(const std::vector<std::string>& argv) const;
    JobStatus resolve_finished(const Tracked& t, JobState scheduler_final, std::optional<int> reported_code,
                               std::optional<std::string> message) const;

    SchedulerDialect dialect_;

    std::mutex table_mutex_;
    std::map<std::string, Tracked> live_;

    std::mutex poll_mutex_;
    int consecutive_failures_ = 0;
    std::atomic<std::uint64_t> status_commands_{0};

    std::mutex loop_mutex_;
    std::condition_variable wake_;
    bool stopping_ = false;
    std::thread poller_;
};

// Factory for a manifest-described plugin: `dialect` reuses a built-in
// dialect under the plugin's name, `command` wraps an external helper that
// honors the generic command contract (relative paths resolve against the
// manifest directory).
ExecutorFactory plugin_executor_factory(const PluginManifest& manifest, const std::filesystem::path& manifest_dir);

} // namespace portajob
