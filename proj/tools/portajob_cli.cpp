#include "portajob/errors.hpp"
#include "portajob/executor.hpp"
#include "portajob/spec_json.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace portajob;

namespace {

// Exit codes.
constexpr int ok = 0;
constexpr int payload_failed = 1;
constexpr int usage_error = 2;
constexpr int scheduler_error = 3;
constexpr int timed_out = 4;

struct CliError {
    int code;
    std::string message;
};

struct Handle {
    std::string job_id;
    std::string executor;
    std::string native_id;
};

std::string resolve_work_dir(const std::string& flag) {
    const auto dir = flag.empty() ? default_work_directory() : flag;
    fs::create_directories(dir);
    return fs::absolute(dir).lexically_normal().string();
}

fs::path handle_path(const std::string& work_dir, const std::string& job_id) {
    return fs::path(work_dir) / (job_id + ".handle");
}

void write_handle(const std::string& work_dir, const Handle& h) {
    const json doc = {{"job_id", h.job_id}, {"executor", h.executor}, {"native_id", h.native_id}};
    const auto path = handle_path(work_dir, h.job_id);
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        out << doc.dump(2) << "\n";
        if (!out) {
            throw CliError{scheduler_error, "cannot write handle file " + path.string()};
        }
    }
    fs::rename(tmp, path);
}

Handle read_handle(const std::string& work_dir, const std::string& job_id) {
    const auto path = handle_path(work_dir, job_id);
    std::ifstream in(path);
    if (job_id.empty() || job_id.find('/') != std::string::npos || !in) {
        throw CliError{usage_error, "unknown job id '" + job_id + "' (no handle in " + work_dir + ")"};
    }
    try {
        const auto doc = json::parse(in);
        return {doc.at("job_id").get<std::string>(), doc.at("executor").get<std::string>(),
                doc.at("native_id").get<std::string>()};
    } catch (const json::exception& e) {
        throw CliError{usage_error, "corrupt handle file " + path.string() + ": " + e.what()};
    }
}

std::unique_ptr<Executor> make_executor(const std::string& name, const std::string& work_dir) {
    if (name.empty()) {
        throw CliError{usage_error, "no executor given (use --executor or PORTAJOB_EXECUTOR)"};
    }
    ExecutorConfig config;
    config.work_directory = work_dir;
    return get_instance(name, {}, config);
}

std::string describe(const JobStatus& s) {
    std::string out(to_string(s.state));
    if (s.exit_code) {
        out += " " + std::to_string(*s.exit_code);
    }
    return out;
}

int exit_for(const JobStatus& s) {
    return s.state == JobState::Completed ? ok : payload_failed;
}

void print_message(const JobStatus& s) {
    if (s.state != JobState::Completed && s.message) {
        std::cerr << "portajob: " << *s.message << "\n";
    }
}

std::optional<std::chrono::milliseconds> to_timeout(double seconds) {
    if (seconds < 0) {
        return std::nullopt;
    }
    return std::chrono::milliseconds(static_cast<std::int64_t>(seconds * 1000));
}

// Re-binds a job recorded in a handle file to a fresh executor instance.
JobPtr reattach(Executor& executor, const Handle& h) {
    auto job = std::make_shared<Job>(h.job_id, std::nullopt);
    executor.attach(job, h.native_id);
    return job;
}

// Polls until the scheduler has reported something for the job.
void settle(Executor& executor, const Job& job, const ExecutorConfig& config) {
    for (int i = 0; i <= config.missing_tolerance + 1 && job.state() == JobState::New; ++i) {
        if (i > 0) {
            std::this_thread::sleep_for(std::chrono::milliseconds(20));
        }
        executor.refresh();
    }
}

JobSpec load_valid_spec(const std::string& file) {
    JobSpec spec;
    try {
        spec = load_spec_file(file);
    } catch (const Error& e) {
        throw CliError{usage_error, e.what()};
    }
    const auto violations = validate_spec(spec);
    if (!violations.empty()) {
        std::ostringstream msg;
        msg << "invalid job spec " << file << ":";
        for (const auto& v : violations) {
            msg << "\n  " << v.field << ": " << v.message;
        }
        throw CliError{usage_error, msg.str()};
    }
    return spec;
}

JobPtr submit_spec(Executor& executor, const std::string& work_dir, JobPtr job) {
    executor.submit(job);
    write_handle(work_dir, {job->id(), executor.name(), *job->native_id()});
    return job;
}

void stream_file(const std::string& path, std::ostream& out) {
    std::ifstream in(path, std::ios::binary);
    // Inserting an empty streambuf would set failbit on `out`.
    if (in && in.peek() != std::ifstream::traits_type::eof()) {
        out << in.rdbuf();
        out.flush();
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Submit and track jobs through local processes or batch schedulers."};
    app.require_subcommand(1);

    std::string executor_name;
    if (const char* env = std::getenv("PORTAJOB_EXECUTOR")) {
        executor_name = env;
    }
    std::string work_dir_flag;
    std::string spec_file;
    std::string job_id;
    std::string native_id;
    double timeout_s = -1;

    auto add_common = [&](CLI::App* cmd, bool with_executor) {
        if (with_executor) {
            cmd->add_option("--executor", executor_name, "Executor name (default: $PORTAJOB_EXECUTOR)");
        }
        cmd->add_option("--work-dir", work_dir_flag, "Directory for scripts, sidecars and handles");
    };

    auto* submit = app.add_subcommand("submit", "Submit a job spec and print '<job_id> <native_id>'");
    submit->add_option("spec_file", spec_file, "JSON job spec")->required();
    add_common(submit, true);

    auto* status = app.add_subcommand("status", "Print '<state> [exit_code]' for a submitted job");
    status->add_option("job_id", job_id)->required();
    add_common(status, false);

    auto* wait = app.add_subcommand("wait", "Block until the job is final; exit 0 iff COMPLETED");
    wait->add_option("job_id", job_id)->required();
    wait->add_option("--timeout", timeout_s, "Seconds to wait before giving up (exit 4)");
    add_common(wait, false);

    auto* cancel = app.add_subcommand("cancel", "Request cancellation of a job");
    cancel->add_option("job_id", job_id)->required();
    add_common(cancel, false);

    auto* attach = app.add_subcommand("attach", "Create a handle for an externally submitted job");
    attach->add_option("native_id", native_id)->required();
    add_common(attach, true);

    auto* run = app.add_subcommand("run", "Submit, wait and print the job's output");
    run->add_option("spec_file", spec_file, "JSON job spec")->required();
    run->add_option("--timeout", timeout_s, "Seconds to wait before giving up (exit 4)");
    add_common(run, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return usage_error;
    }

    try {
        const auto work_dir = resolve_work_dir(work_dir_flag);

        if (*submit) {
            const auto spec = load_valid_spec(spec_file);
            auto executor = make_executor(executor_name, work_dir);
            auto job = submit_spec(*executor, work_dir, Job::create(spec));
            std::cout << job->id() << " " << *job->native_id() << "\n";
            return ok;
        }
        if (*attach) {
            auto executor = make_executor(executor_name, work_dir);
            auto job = std::make_shared<Job>();
            executor->attach(job, native_id);
            write_handle(work_dir, {job->id(), executor->name(), native_id});
            std::cout << job->id() << " " << native_id << "\n";
            return ok;
        }
        if (*status || *wait || *cancel) {
            const auto handle = read_handle(work_dir, job_id);
            auto executor = make_executor(handle.executor, work_dir);
            auto job = reattach(*executor, handle);
            if (*status) {
                settle(*executor, *job, executor->config());
                std::cout << describe(job->status()) << "\n";
                return ok;
            }
            if (*cancel) {
                settle(*executor, *job, executor->config());
                executor->cancel(job);
                return ok;
            }
            const auto final_status = job->wait(to_timeout(timeout_s));
            std::cout << describe(final_status) << "\n";
            print_message(final_status);
            return exit_for(final_status);
        }
        if (*run) {
            auto spec = load_valid_spec(spec_file);
            const auto id = generate_job_id();
            // Capture the streams so they can be replayed whichever executor ran the job.
            const bool capture_out = !spec.stdout_path;
            const bool capture_err = !spec.stderr_path;
            if (capture_out) {
                spec.stdout_path = work_dir + "/" + id + ".out";
            }
            if (capture_err) {
                spec.stderr_path = work_dir + "/" + id + ".err";
            }
            auto executor = make_executor(executor_name, work_dir);
            auto job = submit_spec(*executor, work_dir, std::make_shared<Job>(id, spec));
            const auto final_status = job->wait(to_timeout(timeout_s));
            if (capture_out) {
                stream_file(*spec.stdout_path, std::cout);
            }
            if (capture_err) {
                stream_file(*spec.stderr_path, std::cerr);
            }
            if (final_status.state != JobState::Completed) {
                std::cerr << "portajob: job " << describe(final_status) << "\n";
                print_message(final_status);
            }
            return exit_for(final_status);
        }
    } catch (const CliError& e) {
        std::cerr << "portajob: " << e.message << "\n";
        return e.code;
    } catch (const InvalidSpec& e) {
        std::cerr << "portajob: " << e.what() << "\n";
        return usage_error;
    } catch (const UnknownExecutor& e) {
        std::cerr << "portajob: " << e.what() << "\n";
        return usage_error;
    } catch (const NoVersionSatisfies& e) {
        std::cerr << "portajob: " << e.what() << "\n";
        return usage_error;
    } catch (const UnknownLauncher& e) {
        std::cerr << "portajob: " << e.what() << "\n";
        return usage_error;
    } catch (const WaitTimeout& e) {
        std::cerr << "portajob: " << e.what() << "\n";
        return timed_out;
    } catch (const TerminalState& e) {
        std::cerr << "portajob: " << e.what() << "\n";
        return payload_failed;
    } catch (const std::exception& e) {
        std::cerr << "portajob: " << e.what() << "\n";
        return scheduler_error;
    }
    return usage_error;
}
