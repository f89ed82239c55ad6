#pragma once

#include "portajob/core.hpp"

#include <chrono>
#include <condition_variable>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace portajob {

class Job;

using StatusListener = std::function<void(Job&, const JobStatus&)>;

// Random UUID-shaped identifier, unique within the process.
std::string generate_job_id();

/// Client-side handle for one job.
///
/// A Job is shared between user code and the executor that manages it, so it
/// is always held through std::shared_ptr and is neither copyable nor movable.
/// All members are thread-safe. Status changes are serialized per job: a
/// listener never observes two deliveries for the same job concurrently, and
/// deliveries arrive in rank order.
class Job {
public:
    explicit Job(JobSpec spec);
    // Restores a job with a known client id, e.g. when re-attaching after a
    // restart. The spec is optional for attached jobs.
    Job(std::string id, std::optional<JobSpec> spec);
    Job();

    Job(const Job&) = delete;
    Job& operator=(const Job&) = delete;

    static std::shared_ptr<Job> create(JobSpec spec) { return std::make_shared<Job>(std::move(spec)); }

    const std::string& id() const { return id_; }
    const std::optional<JobSpec>& spec() const { return spec_; }

    std::optional<std::string> native_id() const;
    JobStatus status() const;
    JobState state() const;
    bool is_bound() const;
    std::optional<std::string> executor_name() const;

    void add_status_listener(StatusListener listener);

    // Applies `next` if the edge from the current state is legal. Returns
    // false when `next` repeats the current state (absorbed). Throws
    // IllegalTransition otherwise, leaving the job untouched.
    bool transition(JobStatus next);

    // Moves the job to `next.state`, first emitting any intermediate states
    // needed to keep every step legal. Returns the number of deliveries.
    // Updates that would lower the rank or leave a final state are dropped.
    int advance(const JobStatus& next, bool ran);

    // Blocks until the job is final and its callbacks have seen the final
    // status. Throws UnboundJob if no executor manages the job, WaitTimeout
    // if `timeout` elapses first.
    JobStatus wait(std::optional<std::chrono::milliseconds> timeout = std::nullopt) const;

    // Executor-side binding. Throws AlreadyBound on a second call.
    void bind(std::string executor_name, StatusListener executor_listener);
    // Throws AlreadyBound if a native id was already assigned.
    void set_native_id(std::string native_id);

private:
    void deliver(const JobStatus& status);
    // Releases waiters once the final status has been delivered.
    void settle(JobState state);

    const std::string id_;
    const std::optional<JobSpec> spec_;

    mutable std::mutex mutex_;
    mutable std::condition_variable changed_;
    // Held across an update and its deliveries.
    std::mutex delivery_mutex_;

    JobStatus status_;
    bool settled_ = false;
    std::optional<std::string> native_id_;
    std::optional<std::string> executor_name_;
    StatusListener executor_listener_;
    std::vector<StatusListener> listeners_;
};

using JobPtr = std::shared_ptr<Job>;

} // namespace portajob
