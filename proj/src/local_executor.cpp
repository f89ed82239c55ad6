#include "portajob/local_executor.hpp"

#include "portajob/batch_executor.hpp"
#include "portajob/errors.hpp"
#include "portajob/process.hpp"

#include <cerrno>
#include <csignal>
#include <fstream>

#include <sys/wait.h>
#include <unistd.h>

namespace portajob {

namespace {

ExecutorConfig with_defaults(ExecutorConfig c) {
    if (c.poll_interval.count() <= 0) {
        c.poll_interval = LocalExecutor::default_poll_interval;
    }
    return c;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::trunc);
    out << content;
    if (!out) {
        throw SubmitFailed("cannot write " + path);
    }
}

std::optional<pid_t> parse_pid(const std::string& text) {
    try {
        std::size_t used = 0;
        const long v = std::stol(text, &used);
        if (used != text.size() || v <= 1) {
            return std::nullopt;
        }
        return static_cast<pid_t>(v);
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

// An exited process that its (adoptive) parent has not reaped yet.
bool is_zombie(pid_t pid) {
    std::ifstream in("/proc/" + std::to_string(pid) + "/stat");
    std::string stat;
    if (!std::getline(in, stat)) {
        return false;
    }
    const auto paren = stat.rfind(')');
    return paren != std::string::npos && paren + 2 < stat.size() && stat[paren + 2] == 'Z';
}

} // namespace

LocalExecutor::LocalExecutor(ExecutorConfig config)
    : Executor("local", executor_version, with_defaults(std::move(config))) {
    reaper_ = std::thread([this] { reap_loop(); });
}

LocalExecutor::~LocalExecutor() {
    {
        std::lock_guard lock(mutex_);
        stopping_ = true;
    }
    wake_.notify_all();
    if (reaper_.joinable()) {
        reaper_.join();
    }
}

std::string LocalExecutor::cancel_marker(const std::string& job_id) const {
    return work_directory() + "/" + job_id + ".cancel";
}

void LocalExecutor::do_submit(const JobPtr& job) {
    const auto& spec = *job->spec();
    const auto launcher = effective_launcher(spec);
    SpawnOptions opts;
    opts.directory = spec.directory;
    opts.environment = spec.environment;
    std::filesystem::remove(sidecar_path(work_directory(), job->id()));
    if (config_.launch_mode == LaunchMode::None) {
        opts.argv = get_launch_command(launcher, spec);
        opts.stdin_path = spec.stdin_path;
        opts.stdout_path = spec.stdout_path;
        opts.stderr_path = spec.stderr_path;
    } else {
        const auto script = launcher_script_path(work_directory(), job->id());
        write_file(script, render_launcher_script(spec, {job->id(), work_directory(), launcher, config_.launch_mode}));
        opts.argv = {"/bin/sh", script};
    }
    const pid_t pid = spawn_process(opts);
    job->set_native_id(std::to_string(pid));
    job->transition(JobStatus(JobState::Queued));
    job->transition(JobStatus(JobState::Active));
    {
        std::lock_guard lock(mutex_);
        live_[job->id()] = Child{job, pid, false};
    }
    wake_.notify_all();
}

void LocalExecutor::do_cancel(const JobPtr& job) {
    pid_t pid = -1;
    {
        std::lock_guard lock(mutex_);
        auto it = live_.find(job->id());
        if (it == live_.end()) {
            return;
        }
        it->second.cancel_requested = true;
        pid = it->second.pid;
    }
    write_file(cancel_marker(job->id()), "");
    if (pid > 1) {
        if (::kill(-pid, SIGTERM) != 0) {
            ::kill(pid, SIGTERM);
        }
    }
    wake_.notify_all();
}

void LocalExecutor::do_attach(const JobPtr& job) {
    const auto pid = parse_pid(*job->native_id()).value_or(-1);
    {
        std::lock_guard lock(mutex_);
        live_[job->id()] = Child{job, pid, false};
    }
    wake_.notify_all();
}

void LocalExecutor::refresh() {
    std::vector<std::pair<Child, JobStatus>> finished;
    std::vector<JobPtr> running;
    {
        std::lock_guard lock(mutex_);
        for (auto it = live_.begin(); it != live_.end();) {
            auto& child = it->second;
            if (child.pid <= 1) {
                finished.emplace_back(child, JobStatus(JobState::Failed, std::nullopt,
                                                       std::string("unknown to scheduler")));
                it = live_.erase(it);
                continue;
            }
            std::optional<ExitInfo> os_status;
            bool gone = false;
            int status = 0;
            const pid_t r = ::waitpid(child.pid, &status, WNOHANG);
            if (r == child.pid) {
                os_status = decode_wait_status(status);
                gone = true;
            } else if (r < 0 && errno == ECHILD) {
                // Not our child (attached from another process).
                gone = (::kill(child.pid, 0) != 0 && errno == ESRCH) || is_zombie(child.pid);
            }
            if (!gone) {
                if (child.job->state() == JobState::New) {
                    running.push_back(child.job);
                }
                ++it;
                continue;
            }
            const bool canceled = child.cancel_requested || std::filesystem::exists(cancel_marker(child.job->id()));
            JobStatus final_status;
            if (canceled) {
                final_status = JobStatus(JobState::Canceled);
            } else if (auto code = read_exit_code_file(sidecar_path(work_directory(), child.job->id()))) {
                final_status = JobStatus(*code == 0 ? JobState::Completed : JobState::Failed, *code);
            } else if (os_status) {
                final_status = JobStatus(os_status->exit_code == 0 ? JobState::Completed : JobState::Failed,
                                         os_status->exit_code);
                if (os_status->signal) {
                    final_status.message = "terminated by " + signal_name(*os_status->signal);
                }
            } else {
                final_status = JobStatus(JobState::Failed, std::nullopt, std::string("exit status unrecoverable"));
            }
            finished.emplace_back(child, std::move(final_status));
            it = live_.erase(it);
        }
    }
    for (const auto& job : running) {
        job->advance(JobStatus(JobState::Active), true);
    }
    for (auto& [child, status] : finished) {
        const bool ran = status.message != std::optional<std::string>("unknown to scheduler");
        child.job->advance(status, ran);
    }
}

void LocalExecutor::reap_loop() {
    std::unique_lock lock(mutex_);
    while (!stopping_) {
        if (live_.empty()) {
            wake_.wait(lock, [&] { return stopping_ || !live_.empty(); });
            continue;
        }
        wake_.wait_for(lock, config_.poll_interval);
        if (stopping_) {
            break;
        }
        lock.unlock();
        refresh();
        lock.lock();
    }
}

} // namespace portajob
