#include "portajob/job.hpp"

#include "portajob/errors.hpp"
#include "portajob/log.hpp"

#include <cstdio>
#include <random>

namespace portajob {

std::string generate_job_id() {
    thread_local std::mt19937_64 rng{[] {
        std::random_device rd;
        std::seed_seq seq{rd(), rd(), rd(), rd()};
        return std::mt19937_64(seq);
    }()};
    const auto hi = rng();
    const auto lo = rng();
    char buf[40];
    std::snprintf(buf, sizeof buf, "%08x-%04x-%04x-%04x-%012llx", static_cast<unsigned>(hi >> 32),
                  static_cast<unsigned>((hi >> 16) & 0xffff), static_cast<unsigned>(hi & 0xffff),
                  static_cast<unsigned>(lo >> 48), static_cast<unsigned long long>(lo & 0xffffffffffffULL));
    return buf;
}

Job::Job(JobSpec spec) : id_(generate_job_id()), spec_(std::move(spec)) {}

Job::Job(std::string id, std::optional<JobSpec> spec) : id_(std::move(id)), spec_(std::move(spec)) {}

Job::Job() : id_(generate_job_id()) {}

std::optional<std::string> Job::native_id() const {
    std::lock_guard lock(mutex_);
    return native_id_;
}

JobStatus Job::status() const {
    std::lock_guard lock(mutex_);
    return status_;
}

JobState Job::state() const {
    std::lock_guard lock(mutex_);
    return status_.state;
}

bool Job::is_bound() const {
    std::lock_guard lock(mutex_);
    return executor_name_.has_value();
}

std::optional<std::string> Job::executor_name() const {
    std::lock_guard lock(mutex_);
    return executor_name_;
}

void Job::add_status_listener(StatusListener listener) {
    std::lock_guard lock(delivery_mutex_);
    listeners_.push_back(std::move(listener));
}

bool Job::transition(JobStatus next) {
    std::lock_guard delivery(delivery_mutex_);
    {
        std::lock_guard lock(mutex_);
        const auto current = status_.state;
        if (current == next.state) {
            return false;
        }
        if (!is_legal_transition(current, next.state)) {
            throw IllegalTransition("illegal transition " + std::string(to_string(current)) + " -> " +
                                    std::string(to_string(next.state)) + " for job " + id_);
        }
        status_ = next;
    }
    deliver(next);
    settle(next.state);
    return true;
}

int Job::advance(const JobStatus& next, bool ran) {
    std::lock_guard delivery(delivery_mutex_);
    std::vector<JobStatus> steps;
    {
        std::lock_guard lock(mutex_);
        for (auto state : synthesize_path(status_.state, next.state, ran)) {
            if (state == next.state) {
                steps.push_back(next);
            } else {
                JobStatus step(state);
                step.timestamp = next.timestamp;
                steps.push_back(std::move(step));
            }
        }
    }
    for (const auto& step : steps) {
        {
            std::lock_guard lock(mutex_);
            status_ = step;
        }
        deliver(step);
        settle(step.state);
    }
    return static_cast<int>(steps.size());
}

void Job::deliver(const JobStatus& status) {
    auto invoke = [&](const StatusListener& fn) {
        try {
            fn(*this, status);
        } catch (const std::exception& e) {
            log(LogLevel::Error, "status callback for job " + id_ + " threw: " + e.what());
        } catch (...) {
            log(LogLevel::Error, "status callback for job " + id_ + " threw a non-standard exception");
        }
    };
    StatusListener executor_listener;
    {
        std::lock_guard lock(mutex_);
        executor_listener = executor_listener_;
    }
    if (executor_listener) {
        invoke(executor_listener);
    }
    for (const auto& fn : listeners_) {
        invoke(fn);
    }
}

void Job::settle(JobState state) {
    if (!is_final(state)) {
        return;
    }
    {
        std::lock_guard lock(mutex_);
        settled_ = true;
    }
    changed_.notify_all();
}

JobStatus Job::wait(std::optional<std::chrono::milliseconds> timeout) const {
    std::unique_lock lock(mutex_);
    if (!executor_name_) {
        throw UnboundJob("job " + id_ + " is not bound to an executor");
    }
    auto done = [&] { return settled_; };
    if (timeout) {
        if (!changed_.wait_for(lock, *timeout, done)) {
            throw WaitTimeout("timed out waiting for job " + id_ + " in state " +
                              std::string(to_string(status_.state)));
        }
    } else {
        changed_.wait(lock, done);
    }
    return status_;
}

void Job::bind(std::string executor_name, StatusListener executor_listener) {
    std::lock_guard lock(mutex_);
    if (executor_name_) {
        throw AlreadyBound("job " + id_ + " is already bound to executor " + *executor_name_);
    }
    executor_name_ = std::move(executor_name);
    executor_listener_ = std::move(executor_listener);
}

void Job::set_native_id(std::string native_id) {
    std::lock_guard lock(mutex_);
    if (native_id_) {
        throw AlreadyBound("job " + id_ + " already has native id " + *native_id_);
    }
    native_id_ = std::move(native_id);
}

} // namespace portajob
