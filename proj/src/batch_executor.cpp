#include "portajob/batch_executor.hpp"

#include "portajob/errors.hpp"
#include "portajob/log.hpp"
#include "portajob/process.hpp"

#include <fstream>
#include <regex>
#include <set>
#include <sstream>

namespace portajob {

namespace {

ExecutorConfig with_defaults(ExecutorConfig c, const SchedulerDialect& d) {
    if (c.poll_interval.count() <= 0) {
        c.poll_interval = d.default_poll_interval;
    }
    return c;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    out << content;
    if (!out) {
        throw SubmitFailed("cannot write " + path);
    }
}

std::string trimmed(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string describe_failure(const CommandResult& r) {
    if (r.timed_out) {
        return "command timed out";
    }
    std::string msg = trimmed(r.err);
    if (msg.empty()) {
        msg = trimmed(r.out);
    }
    if (r.signal) {
        return "killed by " + signal_name(*r.signal) + (msg.empty() ? "" : ": " + msg);
    }
    return "exit code " + std::to_string(r.exit_code) + (msg.empty() ? "" : ": " + msg);
}

} // namespace

std::optional<int> read_exit_code_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        return std::nullopt;
    }
    std::stringstream buf;
    buf << in.rdbuf();
    const auto text = trimmed(buf.str());
    try {
        std::size_t used = 0;
        const int code = std::stoi(text, &used);
        if (used == text.size()) {
            return code;
        }
    } catch (const std::exception&) {
    }
    log(LogLevel::Warning, "malformed exit-code file " + path + ": '" + text + "'");
    return std::nullopt;
}

BatchExecutor::BatchExecutor(std::string name, SemVer version, SchedulerDialect dialect, ExecutorConfig config)
    : Executor(std::move(name), version, with_defaults(std::move(config), dialect)), dialect_(std::move(dialect)) {
    if (config_.launch_mode == LaunchMode::None) {
        throw Error("batch executors always use a launcher script");
    }
    poller_ = std::thread([this] { poll_loop(); });
}

BatchExecutor::~BatchExecutor() {
    {
        std::lock_guard lock(loop_mutex_);
        stopping_ = true;
    }
    wake_.notify_all();
    if (poller_.joinable()) {
        poller_.join();
    }
}

std::string BatchExecutor::generate_submit_script(const Job& job) const {
    if (!job.spec()) {
        throw TemplateError("job " + job.id() + " has no spec");
    }
    return render_submit_script({job.id(), *job.spec(), work_directory()}, dialect_);
}

std::optional<int> BatchExecutor::read_exit_code(const Job& job) const {
    return read_exit_code_file(sidecar_path(work_directory(), job.id()));
}

CommandResult BatchExecutor::run(const std::vector<std::string>& argv) const {
    return run_command(argv, config_.command_environment, config_.command_timeout);
}

void BatchExecutor::do_submit(const JobPtr& job) {
    const auto& spec = *job->spec();
    const auto script = submit_script_path(work_directory(), job->id());
    write_file(launcher_script_path(work_directory(), job->id()),
               render_launcher_script(spec, {job->id(), work_directory(), effective_launcher(spec), config_.launch_mode}));
    write_file(script, generate_submit_script(*job));
    std::filesystem::remove(sidecar_path(work_directory(), job->id()));

    CommandResult result;
    try {
        result = run(dialect_.submit_command(script));
    } catch (const SpawnError& e) {
        throw SubmitFailed(dialect_.name + " submit failed: " + e.what());
    }
    if (!result.ok()) {
        throw SubmitFailed(dialect_.name + " submit failed: " + describe_failure(result));
    }
    job->set_native_id(parse_native_id(result.out, dialect_));
    job->transition(JobStatus(JobState::Queued));
    std::lock_guard lock(table_mutex_);
    live_[job->id()] = Tracked{job};
}

void BatchExecutor::do_attach(const JobPtr& job) {
    std::lock_guard lock(table_mutex_);
    live_[job->id()] = Tracked{job};
}

void BatchExecutor::do_cancel(const JobPtr& job) {
    {
        std::lock_guard lock(table_mutex_);
        if (auto it = live_.find(job->id()); it != live_.end()) {
            it->second.cancel_requested = true;
        }
    }
    auto undo = [&] {
        std::lock_guard lock(table_mutex_);
        if (auto it = live_.find(job->id()); it != live_.end()) {
            it->second.cancel_requested = false;
        }
    };
    CommandResult result;
    try {
        result = run(dialect_.cancel_command(*job->native_id()));
    } catch (const SpawnError& e) {
        undo();
        throw CancelFailed(dialect_.name + " cancel failed: " + e.what());
    }
    if (result.ok()) {
        return;
    }
    if (!result.timed_out && !dialect_.cancel_absorb_pattern.empty() &&
        std::regex_search(result.out + result.err, std::regex(dialect_.cancel_absorb_pattern))) {
        return;
    }
    undo();
    throw CancelFailed(dialect_.name + " cancel failed: " + describe_failure(result));
}

JobStatus BatchExecutor::resolve_finished(const Tracked& t, JobState scheduler_final, std::optional<int> reported_code,
                                          std::optional<std::string> message) const {
    auto code = read_exit_code(*t.job);
    if (!code) {
        code = reported_code;
    }
    if (scheduler_final == JobState::Failed && t.cancel_requested) {
        return JobStatus(JobState::Canceled, code, std::move(message));
    }
    if (code) {
        if (*code == 0) {
            return JobStatus(JobState::Completed, 0);
        }
        return JobStatus(JobState::Failed, code, std::move(message));
    }
    return JobStatus(scheduler_final, std::nullopt, std::move(message));
}

std::vector<StatusDelta> BatchExecutor::poll_cycle() {
    std::lock_guard poll_lock(poll_mutex_);
    std::vector<Tracked> snapshot;
    {
        std::lock_guard lock(table_mutex_);
        for (auto it = live_.begin(); it != live_.end();) {
            if (is_final(it->second.job->state())) {
                it = live_.erase(it);
            } else {
                snapshot.push_back(it->second);
                ++it;
            }
        }
    }
    std::vector<StatusDelta> deltas;
    if (snapshot.empty()) {
        return deltas;
    }

    std::vector<std::string> ids;
    std::set<std::string> seen;
    for (const auto& t : snapshot) {
        const auto id = *t.job->native_id();
        if (seen.insert(id).second) {
            ids.push_back(id);
        }
    }

    auto apply = [&](const Tracked& t, const JobStatus& status, bool ran) {
        const auto before = t.job->state();
        t.job->advance(status, ran);
        const auto after = t.job->state();
        if (after != before) {
            deltas.push_back({t.job->id(), before, after});
        }
        if (is_final(after)) {
            std::lock_guard lock(table_mutex_);
            live_.erase(t.job->id());
        }
    };

    ++status_commands_;
    std::optional<std::string> failure;
    CommandResult result;
    try {
        result = run(dialect_.status_command(ids));
        if (!result.ok()) {
            failure = describe_failure(result);
        }
    } catch (const SpawnError& e) {
        failure = e.what();
    }
    if (failure) {
        ++consecutive_failures_;
        log(LogLevel::Warning, dialect_.name + " status command failed (" + std::to_string(consecutive_failures_) +
                                   " in a row): " + *failure);
        if (consecutive_failures_ >= config_.max_consecutive_failures) {
            consecutive_failures_ = 0;
            for (const auto& t : snapshot) {
                JobStatus s(JobState::Failed, std::nullopt, std::string("scheduler unreachable"));
                s.metadata["detail"] = *failure;
                apply(t, s, false);
            }
        }
        return deltas;
    }
    consecutive_failures_ = 0;

    std::map<std::string, StatusRow> rows;
    std::stringstream lines(result.out);
    std::string line;
    while (std::getline(lines, line)) {
        if (auto row = dialect_.status_row_parser(line)) {
            rows[row->native_id] = *row;
        }
    }

    for (const auto& t : snapshot) {
        const auto native = *t.job->native_id();
        const auto it = rows.find(native);
        if (it == rows.end()) {
            int missing = 0;
            {
                std::lock_guard lock(table_mutex_);
                if (auto e = live_.find(t.job->id()); e != live_.end()) {
                    missing = ++e->second.missing_cycles;
                }
            }
            if (missing < config_.missing_tolerance) {
                continue;
            }
            if (auto code = read_exit_code(*t.job)) {
                apply(t, JobStatus(*code == 0 ? JobState::Completed : JobState::Failed, *code), true);
            } else {
                apply(t, JobStatus(JobState::Failed, std::nullopt, std::string("lost by scheduler")), false);
            }
            continue;
        }
        {
            std::lock_guard lock(table_mutex_);
            if (auto e = live_.find(t.job->id()); e != live_.end()) {
                e->second.missing_cycles = 0;
            }
        }
        const auto& row = it->second;
        if (!row.known) {
            apply(t, JobStatus(JobState::Failed, std::nullopt, std::string("unknown to scheduler")), false);
            continue;
        }
        Tracked current = t;
        {
            std::lock_guard lock(table_mutex_);
            if (auto e = live_.find(t.job->id()); e != live_.end()) {
                current.cancel_requested = e->second.cancel_requested;
            }
        }
        JobStatus status;
        bool ran = true;
        switch (row.state) {
        case InterimState::Pending: status = JobStatus(JobState::Queued); break;
        case InterimState::Running: status = JobStatus(JobState::Active); break;
        case InterimState::Done: status = resolve_finished(current, JobState::Completed, row.exit_code, row.message); break;
        case InterimState::FailedLrm:
            status = resolve_finished(current, JobState::Failed, row.exit_code, row.message);
            break;
        case InterimState::CanceledLrm:
            status = JobStatus(JobState::Canceled);
            ran = false;
            break;
        case InterimState::Unknown:
            log(LogLevel::Debug, dialect_.name + " reported unmapped state '" + row.code + "' for " + native);
            continue;
        }
        status.metadata["scheduler_state"] = row.code;
        apply(current, status, ran);
    }
    return deltas;
}

void BatchExecutor::poll_loop() {
    std::unique_lock lock(loop_mutex_);
    while (!stopping_) {
        wake_.wait_for(lock, config_.poll_interval, [&] { return stopping_; });
        if (stopping_) {
            break;
        }
        lock.unlock();
        try {
            poll_cycle();
        } catch (const std::exception& e) {
            log(LogLevel::Error, dialect_.name + " poll cycle failed: " + e.what());
        }
        lock.lock();
    }
}

ExecutorFactory plugin_executor_factory(const PluginManifest& manifest, const std::filesystem::path& manifest_dir) {
    SchedulerDialect dialect;
    if (manifest.dialect) {
        auto d = builtin_dialect(*manifest.dialect);
        if (!d) {
            throw Error("unknown dialect '" + *manifest.dialect + "'");
        }
        dialect = std::move(*d);
        dialect.name = manifest.name;
    } else {
        std::string command = *manifest.command;
        if (command.find('/') != std::string::npos && std::filesystem::path(command).is_relative()) {
            command = (manifest_dir / command).lexically_normal().string();
        }
        dialect = contract_dialect(manifest.name, {command});
    }
    return [name = manifest.name, version = manifest.version, dialect](const ExecutorConfig& config) {
        return std::make_unique<BatchExecutor>(name, version, dialect, config);
    };
}

} // namespace portajob
