#include "portajob/process.hpp"

#include "portajob/errors.hpp"

#include <cerrno>
#include <csignal>
#include <cstring>
#include <thread>

#include <fcntl.h>
#include <poll.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

extern char** environ;

namespace portajob {

namespace {

enum class ChildStage : int { Chdir = 1, Stdin, Stdout, Stderr, Exec, Session };

struct ChildFailure {
    ChildStage stage;
    int error;
};

// Everything the child needs, prepared before fork so the child only makes
// async-signal-safe calls.
struct Prepared {
    std::string exe;
    std::vector<std::string> argv_storage;
    std::vector<std::string> env_storage;
    std::vector<char*> argv;
    std::vector<char*> envp;
    const char* directory = nullptr;
    const char* stdin_path = nullptr;
    const char* stdout_path = nullptr;
    const char* stderr_path = nullptr;
    bool merge_streams = false;
    int stdout_fd = -1;
    int stderr_fd = -1;
    bool new_pgroup = true;
    bool new_session = false;
};

Prepared prepare(const SpawnOptions& o) {
    if (o.argv.empty() || o.argv.front().empty()) {
        throw SpawnError("empty command");
    }
    Prepared p;
    auto env = merged_environment(o.environment);
    const auto& name = o.argv.front();
    if (name.find('/') != std::string::npos) {
        p.exe = name;
    } else {
        const auto it = env.find("PATH");
        const std::string search = it != env.end() ? it->second : "/usr/bin:/bin";
        auto found = find_executable(name, search);
        if (!found) {
            throw SpawnError("command not found: " + name);
        }
        p.exe = *found;
    }
    p.argv_storage = o.argv;
    for (auto& a : p.argv_storage) {
        p.argv.push_back(a.data());
    }
    p.argv.push_back(nullptr);
    for (const auto& [k, v] : env) {
        p.env_storage.push_back(k + "=" + v);
    }
    for (auto& e : p.env_storage) {
        p.envp.push_back(e.data());
    }
    p.envp.push_back(nullptr);
    return p;
}

[[noreturn]] void child_fail(int err_fd, ChildStage stage) {
    ChildFailure f{stage, errno};
    [[maybe_unused]] auto n = ::write(err_fd, &f, sizeof f);
    ::_exit(127);
}

void redirect(int err_fd, const char* path, int target, int flags, ChildStage stage) {
    const int fd = ::open(path, flags, 0666);
    if (fd < 0) {
        child_fail(err_fd, stage);
    }
    if (fd != target) {
        ::dup2(fd, target);
        ::close(fd);
    }
}

[[noreturn]] void run_child(const Prepared& p, int err_fd) {
    if (p.new_session) {
        if (::setsid() < 0) {
            child_fail(err_fd, ChildStage::Session);
        }
    } else if (p.new_pgroup) {
        ::setpgid(0, 0);
    }
    sigset_t none;
    sigemptyset(&none);
    ::sigprocmask(SIG_SETMASK, &none, nullptr);
    ::signal(SIGPIPE, SIG_DFL);

    if (p.directory && ::chdir(p.directory) != 0) {
        child_fail(err_fd, ChildStage::Chdir);
    }
    redirect(err_fd, p.stdin_path ? p.stdin_path : "/dev/null", 0, O_RDONLY, ChildStage::Stdin);
    if (p.stdout_fd >= 0) {
        ::dup2(p.stdout_fd, 1);
    } else if (p.stdout_path) {
        redirect(err_fd, p.stdout_path, 1, O_WRONLY | O_CREAT | O_TRUNC, ChildStage::Stdout);
    }
    if (p.stderr_fd >= 0) {
        ::dup2(p.stderr_fd, 2);
    } else if (p.merge_streams) {
        ::dup2(1, 2);
    } else if (p.stderr_path) {
        redirect(err_fd, p.stderr_path, 2, O_WRONLY | O_CREAT | O_TRUNC, ChildStage::Stderr);
    }
    if (err_fd > 3) {
        ::close_range(3, err_fd - 1, 0);
    }
    ::close_range(err_fd + 1, ~0U, 0);

    ::execve(p.exe.c_str(), p.argv.data(), p.envp.data());
    child_fail(err_fd, ChildStage::Exec);
}

std::string describe_failure(const ChildFailure& f, const Prepared& p) {
    const std::string why = std::strerror(f.error);
    switch (f.stage) {
    case ChildStage::Chdir: return std::string("cannot change directory to '") + p.directory + "': " + why;
    case ChildStage::Stdin: return std::string("cannot open stdin '") + p.stdin_path + "': " + why;
    case ChildStage::Stdout: return std::string("cannot open stdout '") + p.stdout_path + "': " + why;
    case ChildStage::Stderr: return std::string("cannot open stderr '") + p.stderr_path + "': " + why;
    case ChildStage::Exec: return "cannot execute '" + p.exe + "': " + why;
    case ChildStage::Session: return "cannot create session: " + why;
    }
    return why;
}

pid_t fork_prepared(const Prepared& p) {
    int err_pipe[2];
    if (::pipe2(err_pipe, O_CLOEXEC) != 0) {
        throw SpawnError(std::string("pipe: ") + std::strerror(errno));
    }
    const pid_t pid = ::fork();
    if (pid < 0) {
        const int e = errno;
        ::close(err_pipe[0]);
        ::close(err_pipe[1]);
        throw SpawnError(std::string("fork: ") + std::strerror(e));
    }
    if (pid == 0) {
        ::close(err_pipe[0]);
        run_child(p, err_pipe[1]);
    }
    ::close(err_pipe[1]);
    ChildFailure failure{};
    ssize_t n;
    do {
        n = ::read(err_pipe[0], &failure, sizeof failure);
    } while (n < 0 && errno == EINTR);
    ::close(err_pipe[0]);
    if (n == static_cast<ssize_t>(sizeof failure)) {
        int status;
        while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
        }
        throw SpawnError(describe_failure(failure, p));
    }
    return pid;
}

} // namespace

pid_t spawn_process(const SpawnOptions& o) {
    auto p = prepare(o);
    if (o.directory) {
        p.directory = o.directory->c_str();
    }
    if (o.stdin_path) {
        p.stdin_path = o.stdin_path->c_str();
    }
    if (o.stdout_path) {
        p.stdout_path = o.stdout_path->c_str();
    }
    if (o.stderr_path) {
        if (o.stdout_path && *o.stdout_path == *o.stderr_path) {
            p.merge_streams = true;
        } else {
            p.stderr_path = o.stderr_path->c_str();
        }
    }
    p.new_pgroup = o.new_process_group;
    p.new_session = o.new_session;
    return fork_prepared(p);
}

ExitInfo decode_wait_status(int status) {
    ExitInfo info;
    if (WIFEXITED(status)) {
        info.exit_code = WEXITSTATUS(status);
    } else if (WIFSIGNALED(status)) {
        info.signal = WTERMSIG(status);
        info.exit_code = 128 + WTERMSIG(status);
    }
    return info;
}

std::optional<ExitInfo> try_reap(pid_t pid) {
    int status = 0;
    pid_t r;
    do {
        r = ::waitpid(pid, &status, WNOHANG);
    } while (r < 0 && errno == EINTR);
    if (r == pid) {
        return decode_wait_status(status);
    }
    if (r < 0 && errno == ECHILD) {
        return ExitInfo{-1, std::nullopt};
    }
    return std::nullopt;
}

CommandResult run_command(const std::vector<std::string>& argv, const std::map<std::string, std::string>& environment,
                          std::chrono::milliseconds timeout) {
    auto p = prepare(SpawnOptions{argv, std::nullopt, environment, {}, {}, {}, true, false});
    int out_pipe[2];
    int err_pipe[2];
    if (::pipe2(out_pipe, O_CLOEXEC) != 0) {
        throw SpawnError(std::string("pipe: ") + std::strerror(errno));
    }
    if (::pipe2(err_pipe, O_CLOEXEC) != 0) {
        ::close(out_pipe[0]);
        ::close(out_pipe[1]);
        throw SpawnError(std::string("pipe: ") + std::strerror(errno));
    }
    p.stdout_fd = out_pipe[1];
    p.stderr_fd = err_pipe[1];
    pid_t pid;
    try {
        pid = fork_prepared(p);
    } catch (...) {
        for (int fd : {out_pipe[0], out_pipe[1], err_pipe[0], err_pipe[1]}) {
            ::close(fd);
        }
        throw;
    }
    ::close(out_pipe[1]);
    ::close(err_pipe[1]);

    CommandResult result;
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    pollfd fds[2] = {{out_pipe[0], POLLIN, 0}, {err_pipe[0], POLLIN, 0}};
    std::string* sinks[2] = {&result.out, &result.err};
    int open_count = 2;
    char buf[4096];
    while (open_count > 0) {
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) {
            result.timed_out = true;
            break;
        }
        const int rc = ::poll(fds, 2, static_cast<int>(left.count()));
        if (rc < 0) {
            if (errno == EINTR) {
                continue;
            }
            break;
        }
        for (int i = 0; i < 2; ++i) {
            if (fds[i].fd < 0 || !(fds[i].revents & (POLLIN | POLLHUP | POLLERR))) {
                continue;
            }
            const auto n = ::read(fds[i].fd, buf, sizeof buf);
            if (n > 0) {
                sinks[i]->append(buf, static_cast<std::size_t>(n));
            } else if (n == 0 || errno != EINTR) {
                ::close(fds[i].fd);
                fds[i].fd = -1;
                --open_count;
            }
        }
    }
    for (auto& f : fds) {
        if (f.fd >= 0) {
            ::close(f.fd);
        }
    }

    int status = 0;
    if (result.timed_out) {
        ::kill(-pid, SIGKILL);
        ::kill(pid, SIGKILL);
        while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
        }
    } else {
        // Output closed; the command may still be exiting.
        for (;;) {
            const pid_t r = ::waitpid(pid, &status, WNOHANG);
            if (r == pid || (r < 0 && errno != EINTR)) {
                break;
            }
            if (std::chrono::steady_clock::now() >= deadline) {
                result.timed_out = true;
                ::kill(-pid, SIGKILL);
                ::kill(pid, SIGKILL);
                while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
                }
                break;
            }
            std::this_thread::sleep_for(std::chrono::microseconds(200));
        }
    }
    const auto info = decode_wait_status(status);
    result.exit_code = info.exit_code;
    result.signal = info.signal;
    return result;
}

std::optional<std::string> find_executable(std::string_view name, std::string_view search_path) {
    std::size_t start = 0;
    while (start <= search_path.size()) {
        auto end = search_path.find(':', start);
        if (end == std::string_view::npos) {
            end = search_path.size();
        }
        std::string dir(search_path.substr(start, end - start));
        if (dir.empty()) {
            dir = ".";
        }
        std::string candidate = dir + "/" + std::string(name);
        struct stat st{};
        if (::stat(candidate.c_str(), &st) == 0 && S_ISREG(st.st_mode) && ::access(candidate.c_str(), X_OK) == 0) {
            return candidate;
        }
        start = end + 1;
    }
    return std::nullopt;
}

std::string shell_quote(std::string_view word) {
    if (!word.empty() && word.find_first_not_of("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"
                                                "_-./=:,+@%") == std::string_view::npos) {
        return std::string(word);
    }
    std::string out = "'";
    for (char c : word) {
        if (c == '\'') {
            out += "'\\''";
        } else {
            out += c;
        }
    }
    out += "'";
    return out;
}

std::string shell_join(const std::vector<std::string>& words) {
    std::string out;
    for (const auto& w : words) {
        if (!out.empty()) {
            out += ' ';
        }
        out += shell_quote(w);
    }
    return out;
}

std::string signal_name(int signal) {
    switch (signal) {
    case SIGHUP: return "SIGHUP";
    case SIGINT: return "SIGINT";
    case SIGQUIT: return "SIGQUIT";
    case SIGABRT: return "SIGABRT";
    case SIGKILL: return "SIGKILL";
    case SIGSEGV: return "SIGSEGV";
    case SIGPIPE: return "SIGPIPE";
    case SIGALRM: return "SIGALRM";
    case SIGTERM: return "SIGTERM";
    case SIGUSR1: return "SIGUSR1";
    case SIGUSR2: return "SIGUSR2";
    default: {
        const char* d = ::strsignal(signal);
        return d ? std::string(d) : "signal " + std::to_string(signal);
    }
    }
}

std::map<std::string, std::string> merged_environment(const std::map<std::string, std::string>& overrides) {
    std::map<std::string, std::string> env;
    for (char** e = environ; e && *e; ++e) {
        std::string_view entry(*e);
        const auto eq = entry.find('=');
        if (eq == std::string_view::npos) {
            continue;
        }
        env.emplace(std::string(entry.substr(0, eq)), std::string(entry.substr(eq + 1)));
    }
    for (const auto& [k, v] : overrides) {
        env[k] = v;
    }
    return env;
}

} // namespace portajob
