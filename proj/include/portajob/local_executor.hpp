#pragma once

#include "portajob/executor.hpp"

#include <condition_variable>
#include <map>
#include <thread>

#include <sys/types.h>

namespace portajob {

/// Runs each job as a child process executing its launcher script.
///
/// The native id is the child's pid; the child leads its own process group,
/// so cancel() terminates everything the payload started. A single reaper
/// thread polls live children every poll_interval (default 10 ms). The exit
/// code written to the sidecar file wins over the OS-reported status.
class LocalExecutor : public Executor {
public:
    static constexpr SemVer executor_version{1, 0, 0};
    static constexpr std::chrono::milliseconds default_poll_interval{10};

    explicit LocalExecutor(ExecutorConfig config = {});
    ~LocalExecutor() override;

    void refresh() override;

protected:
    void do_submit(const JobPtr& job) override;
    void do_cancel(const JobPtr& job) override;
    void do_attach(const JobPtr& job) override;

private:
    struct Child {
        JobPtr job;
        pid_t pid = -1;
        bool cancel_requested = false;
    };

    void reap_loop();
    std::string cancel_marker(const std::string& job_id) const;

    std::mutex mutex_;
    std::condition_variable wake_;
    std::map<std::string, Child> live_;
    bool stopping_ = false;
    std::thread reaper_;
};

} // namespace portajob
