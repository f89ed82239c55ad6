#include "portajob/mock_lrm.hpp"

#include "portajob/process.hpp"

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <csignal>
#include <cstring>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>

#include <fcntl.h>
#include <sys/file.h>
#include <sys/wait.h>
#include <unistd.h>

namespace portajob::mock {

namespace fs = std::filesystem;

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_atomically(const fs::path& p, const std::string& content) {
    const auto tmp = p.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
        out << content;
        if (!out) {
            throw MockError("cannot write " + tmp);
        }
    }
    fs::rename(tmp, p);
}

std::string unquote(const std::string& v) {
    if (v.size() >= 2 && v.front() == '"' && v.back() == '"') {
        return v.substr(1, v.size() - 2);
    }
    return v;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true") {
        return true;
    }
    if (v == "false") {
        return false;
    }
    throw MockError("config: " + key + " must be true or false");
}

std::int64_t parse_i64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const auto n = std::stoll(v, &used);
        if (used == v.size() && n >= 0) {
            return n;
        }
    } catch (const std::exception&) {
    }
    throw MockError("config: " + key + " must be a non-negative integer, got '" + v + "'");
}

bool is_finished(const std::string& code) {
    return code == "CD" || code == "F" || code == "CA";
}

std::string sanitize(std::string s) {
    std::replace_if(s.begin(), s.end(), [](char c) { return c == '\t' || c == '\n' || c == '\r'; }, ' ');
    return s;
}

std::optional<int> parse_id(const std::string& s) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(s, &used);
        if (used == s.size() && v > 0) {
            return v;
        }
    } catch (const std::exception&) {
    }
    return std::nullopt;
}

} // namespace

std::int64_t now_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
}

MockConfig parse_config(std::string_view text) {
    MockConfig c;
    std::stringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        if (auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw MockError("config: expected 'key = value' in '" + line + "'");
        }
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        if (key == "schedule_delay_ms") {
            const auto v = unquote(value);
            if (const auto dots = v.find(".."); dots != std::string::npos) {
                c.schedule_delay_min_ms = parse_i64(key, v.substr(0, dots));
                c.schedule_delay_max_ms = parse_i64(key, v.substr(dots + 2));
                if (c.schedule_delay_max_ms < c.schedule_delay_min_ms) {
                    throw MockError("config: schedule_delay_ms range is reversed");
                }
            } else {
                c.schedule_delay_min_ms = c.schedule_delay_max_ms = parse_i64(key, v);
            }
        } else if (key == "status_latency_ms") {
            c.status_latency_ms = parse_i64(key, value);
        } else if (key == "reject_queues") {
            if (value.size() < 2 || value.front() != '[' || value.back() != ']') {
                throw MockError("config: reject_queues must be an array of strings");
            }
            std::stringstream items(value.substr(1, value.size() - 2));
            std::string item;
            while (std::getline(items, item, ',')) {
                item = unquote(trim(item));
                if (!item.empty()) {
                    c.reject_queues.push_back(item);
                }
            }
        } else if (key == "drop_after_done") {
            c.drop_after_done = parse_bool(key, value);
        } else if (key == "fail_submit") {
            c.fail_submit = parse_bool(key, value);
        } else {
            throw MockError("config: unknown key '" + key + "'");
        }
    }
    return c;
}

std::string format_config(const MockConfig& c) {
    std::ostringstream out;
    if (c.schedule_delay_min_ms == c.schedule_delay_max_ms) {
        out << "schedule_delay_ms = " << c.schedule_delay_min_ms << "\n";
    } else {
        out << "schedule_delay_ms = \"" << c.schedule_delay_min_ms << ".." << c.schedule_delay_max_ms << "\"\n";
    }
    out << "status_latency_ms = " << c.status_latency_ms << "\n";
    out << "reject_queues = [";
    for (std::size_t i = 0; i < c.reject_queues.size(); ++i) {
        out << (i ? ", " : "") << '"' << c.reject_queues[i] << '"';
    }
    out << "]\n";
    out << "drop_after_done = " << (c.drop_after_done ? "true" : "false") << "\n";
    out << "fail_submit = " << (c.fail_submit ? "true" : "false") << "\n";
    return out.str();
}

class Spool::Lock {
public:
    explicit Lock(const fs::path& dir) {
        const auto path = (dir / "lock").string();
        fd_ = ::open(path.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
        if (fd_ < 0) {
            throw MockError("cannot open " + path + ": " + std::strerror(errno));
        }
        while (::flock(fd_, LOCK_EX) != 0) {
            if (errno != EINTR) {
                ::close(fd_);
                throw MockError("cannot lock " + path + ": " + std::strerror(errno));
            }
        }
    }
    ~Lock() {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
    Lock(const Lock&) = delete;
    Lock& operator=(const Lock&) = delete;

private:
    int fd_ = -1;
};

Spool::Spool(fs::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(dir_ / "jobs", ec);
    if (ec) {
        throw MockError("cannot create spool " + dir_.string() + ": " + ec.message());
    }
}

MockConfig Spool::config() const {
    const auto path = dir_ / "mock.toml";
    if (!fs::exists(path)) {
        return {};
    }
    return parse_config(read_file(path));
}

void Spool::set_config(const MockConfig& config) {
    Lock lock(dir_);
    write_atomically(dir_ / "mock.toml", format_config(config));
}

Spool::State Spool::load() const {
    State s;
    std::ifstream in(dir_ / "jobs.db");
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> f;
        std::size_t start = 0;
        for (int i = 0; i < 10; ++i) {
            const auto tab = line.find('\t', start);
            if (tab == std::string::npos) {
                f.push_back(line.substr(start));
                start = line.size() + 1;
                break;
            }
            f.push_back(line.substr(start, tab - start));
            start = tab + 1;
        }
        if (f.size() == 2 && f[0] == "next_id") {
            s.next_id = std::stoi(f[1]);
            continue;
        }
        if (f.size() < 10) {
            continue;
        }
        f.push_back(start <= line.size() ? line.substr(start) : std::string());
        MockJob j;
        j.id = std::stoi(f[0]);
        j.code = f[1];
        j.submit_ms = std::stoll(f[2]);
        j.due_ms = std::stoll(f[3]);
        j.start_ms = std::stoll(f[4]);
        j.end_ms = std::stoll(f[5]);
        if (f[6] != "-") {
            j.exit_code = std::stoi(f[6]);
        }
        j.pgid = std::stoi(f[7]);
        j.queue = f[8] == "-" ? "" : f[8];
        j.script = f[9];
        j.message = f[10];
        s.jobs.push_back(std::move(j));
    }
    return s;
}

void Spool::store(const State& s) const {
    std::ostringstream out;
    out << "next_id\t" << s.next_id << "\n";
    for (const auto& j : s.jobs) {
        out << j.id << '\t' << j.code << '\t' << j.submit_ms << '\t' << j.due_ms << '\t' << j.start_ms << '\t'
            << j.end_ms << '\t' << (j.exit_code ? std::to_string(*j.exit_code) : "-") << '\t' << j.pgid << '\t'
            << (j.queue.empty() ? "-" : sanitize(j.queue)) << '\t' << sanitize(j.script) << '\t'
            << sanitize(j.message) << "\n";
    }
    write_atomically(dir_ / "jobs.db", out.str());
}

void Spool::bump(const char* counter) const {
    const auto path = dir_ / "counters";
    Counters c;
    {
        std::ifstream in(path);
        std::string line;
        while (std::getline(in, line)) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                continue;
            }
            const auto key = line.substr(0, eq);
            const auto value = std::stoull(line.substr(eq + 1));
            if (key == "submit") {
                c.submit = value;
            } else if (key == "status") {
                c.status = value;
            } else if (key == "cancel") {
                c.cancel = value;
            }
        }
    }
    const std::string which = counter;
    if (which == "submit") {
        ++c.submit;
    } else if (which == "status") {
        ++c.status;
    } else if (which == "cancel") {
        ++c.cancel;
    }
    std::ostringstream out;
    out << "submit=" << c.submit << "\nstatus=" << c.status << "\ncancel=" << c.cancel << "\n";
    write_atomically(path, out.str());
}

Counters Spool::counters() const {
    Lock lock(dir_);
    Counters c;
    std::ifstream in(dir_ / "counters");
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            continue;
        }
        const auto key = line.substr(0, eq);
        const auto value = std::stoull(line.substr(eq + 1));
        if (key == "submit") {
            c.submit = value;
        } else if (key == "status") {
            c.status = value;
        } else if (key == "cancel") {
            c.cancel = value;
        }
    }
    return c;
}

void Spool::advance(State& state, const MockConfig&, std::int64_t now) const {
    for (auto& j : state.jobs) {
        if (j.code == "Q" && now >= j.due_ms) {
            const auto exit_file = (dir_ / "jobs" / (std::to_string(j.id) + ".exit")).string();
            const auto out_file = (dir_ / "jobs" / (std::to_string(j.id) + ".out")).string();
            SpawnOptions opts;
            opts.argv = {"/bin/sh", "-c", "( /bin/sh \"$1\"; echo $? > \"$2\" ) &", "portajob-mock-job", j.script,
                         exit_file};
            opts.stdout_path = out_file;
            opts.stderr_path = out_file;
            opts.new_session = true;
            try {
                const pid_t pid = spawn_process(opts);
                int status;
                while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
                }
                j.pgid = pid;
                j.code = "R";
                j.start_ms = now;
            } catch (const std::exception& e) {
                j.code = "F";
                j.end_ms = now;
                j.message = std::string("cannot start job: ") + e.what();
            }
        } else if (j.code == "R") {
            const auto exit_file = dir_ / "jobs" / (std::to_string(j.id) + ".exit");
            const auto text = trim(read_file(exit_file));
            std::optional<int> code;
            if (!text.empty()) {
                try {
                    code = std::stoi(text);
                } catch (const std::exception&) {
                }
            }
            if (code) {
                j.exit_code = code;
                j.code = *code == 0 ? "CD" : "F";
                j.end_ms = now;
                j.message = "exit=" + std::to_string(*code);
            } else if (j.pgid > 1 && ::kill(-j.pgid, 0) != 0 && errno == ESRCH) {
                // Exited between the check above and now, or died without a trace.
                const auto again = trim(read_file(exit_file));
                if (!again.empty()) {
                    continue;
                }
                j.code = "F";
                j.end_ms = now;
                j.message = "job process vanished";
            }
        }
    }
}

std::string Spool::submit(const std::string& script_path, std::int64_t now) {
    Lock lock(dir_);
    bump("submit");
    const auto cfg = config();
    if (cfg.fail_submit) {
        throw MockError("submission refused: scheduler configured with fail_submit");
    }
    std::ifstream script(script_path);
    if (!script) {
        throw MockError("cannot read script " + script_path);
    }
    std::string queue;
    std::string line;
    while (std::getline(script, line)) {
        static const std::string directive = "#PJ --queue=";
        if (line.rfind(directive, 0) == 0) {
            queue = trim(line.substr(directive.size()));
        }
    }
    if (!queue.empty() &&
        std::find(cfg.reject_queues.begin(), cfg.reject_queues.end(), queue) != cfg.reject_queues.end()) {
        throw MockError("queue '" + queue + "' does not accept jobs");
    }
    auto state = load();
    advance(state, cfg, now);
    MockJob j;
    j.id = state.next_id++;
    j.script = fs::absolute(script_path).string();
    j.queue = queue;
    j.submit_ms = now;
    std::int64_t delay = cfg.schedule_delay_min_ms;
    if (cfg.schedule_delay_max_ms > cfg.schedule_delay_min_ms) {
        std::random_device rd;
        std::mt19937_64 rng(rd());
        delay = std::uniform_int_distribution<std::int64_t>(cfg.schedule_delay_min_ms, cfg.schedule_delay_max_ms)(rng);
    }
    j.due_ms = now + delay;
    state.jobs.push_back(j);
    store(state);
    return std::to_string(j.id);
}

std::vector<std::string> Spool::status(const std::vector<std::string>& ids, std::int64_t now) {
    Lock lock(dir_);
    bump("status");
    const auto cfg = config();
    auto state = load();
    advance(state, cfg, now);
    store(state);
    std::vector<std::string> lines;
    for (const auto& id : ids) {
        const auto num = parse_id(id);
        auto it = num ? std::find_if(state.jobs.begin(), state.jobs.end(), [&](const MockJob& j) { return j.id == *num; })
                      : state.jobs.end();
        if (it == state.jobs.end()) {
            lines.push_back(id + " U unknown");
            continue;
        }
        if (cfg.drop_after_done && is_finished(it->code)) {
            continue;
        }
        lines.push_back(std::to_string(it->id) + " " + it->code + (it->message.empty() ? "" : " " + it->message));
    }
    return lines;
}

void Spool::cancel(const std::string& id, std::int64_t now) {
    Lock lock(dir_);
    bump("cancel");
    const auto cfg = config();
    auto state = load();
    advance(state, cfg, now);
    const auto num = parse_id(id);
    auto it = num ? std::find_if(state.jobs.begin(), state.jobs.end(), [&](const MockJob& j) { return j.id == *num; })
                  : state.jobs.end();
    if (it == state.jobs.end()) {
        store(state);
        throw MockError("unknown job id " + id);
    }
    if (is_finished(it->code)) {
        store(state);
        throw MockError("job " + id + " already completed");
    }
    if (it->code == "R" && it->pgid > 1) {
        ::kill(-it->pgid, SIGTERM);
    }
    it->code = "CA";
    it->end_ms = now;
    it->message = "canceled";
    store(state);
}

void Spool::tick(std::int64_t now) {
    Lock lock(dir_);
    const auto cfg = config();
    auto state = load();
    advance(state, cfg, now);
    store(state);
}

std::vector<MockJob> Spool::jobs() const {
    Lock lock(dir_);
    return load().jobs;
}

std::optional<MockJob> Spool::job(int id) const {
    for (auto& j : jobs()) {
        if (j.id == id) {
            return j;
        }
    }
    return std::nullopt;
}

void Spool::remove_job(int id) {
    Lock lock(dir_);
    auto state = load();
    std::erase_if(state.jobs, [&](const MockJob& j) { return j.id == id; });
    store(state);
}

namespace {

volatile std::sig_atomic_t stop_requested = 0;

void on_stop(int) {
    stop_requested = 1;
}

int usage() {
    std::cerr << "usage: portajob-mock [--spool DIR] <command> [args]\n"
                 "commands:\n"
                 "  submit|msub SCRIPT      queue a job script, print its id\n"
                 "  status|mstat ID...      print '<id> <code> [message]' per id\n"
                 "  cancel|mdel ID          cancel a queued or running job\n"
                 "  tick                    advance the scheduler once\n"
                 "  run [SECONDS]           advance every 10 ms until stopped\n"
                 "  config [KEY=VALUE...]   show or update mock.toml\n"
                 "  counters                print invocation counters\n";
    return 2;
}

} // namespace

int run_cli(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    std::string command;
    const std::string self = fs::path(argv[0]).filename().string();
    if (self == "msub" || self == "mstat" || self == "mdel") {
        command = self;
    }
    std::optional<std::string> spool_dir;
    std::vector<std::string> rest;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--spool" && i + 1 < args.size()) {
            spool_dir = args[++i];
        } else if (args[i].rfind("--spool=", 0) == 0) {
            spool_dir = args[i].substr(8);
        } else if (args[i] == "-h" || args[i] == "--help") {
            usage();
            return 0;
        } else if (command.empty()) {
            command = args[i];
        } else {
            rest.push_back(args[i]);
        }
    }
    if (command.empty()) {
        return usage();
    }
    if (!spool_dir) {
        if (const char* env = std::getenv("PORTAJOB_MOCK_SPOOL"); env && *env) {
            spool_dir = env;
        } else {
            std::cerr << "portajob-mock: no spool directory (use --spool or PORTAJOB_MOCK_SPOOL)\n";
            return 2;
        }
    }
    try {
        Spool spool(*spool_dir);
        if (command == "submit" || command == "msub") {
            if (rest.size() != 1) {
                return usage();
            }
            std::cout << spool.submit(rest[0]) << "\n";
        } else if (command == "status" || command == "mstat") {
            if (rest.empty()) {
                return usage();
            }
            const auto lines = spool.status(rest);
            const auto latency = spool.config().status_latency_ms;
            if (latency > 0) {
                std::this_thread::sleep_for(std::chrono::milliseconds(latency));
            }
            for (const auto& l : lines) {
                std::cout << l << "\n";
            }
        } else if (command == "cancel" || command == "mdel") {
            if (rest.size() != 1) {
                return usage();
            }
            spool.cancel(rest[0]);
        } else if (command == "tick") {
            spool.tick();
        } else if (command == "run") {
            std::signal(SIGTERM, on_stop);
            std::signal(SIGINT, on_stop);
            const double seconds = rest.empty() ? 0.0 : std::stod(rest[0]);
            const auto until = std::chrono::steady_clock::now() + std::chrono::duration<double>(seconds);
            while (!stop_requested && (seconds <= 0 || std::chrono::steady_clock::now() < until)) {
                spool.tick();
                std::this_thread::sleep_for(std::chrono::milliseconds(10));
            }
        } else if (command == "config") {
            if (rest.empty()) {
                std::cout << format_config(spool.config());
            } else {
                std::string text = format_config(spool.config());
                for (const auto& kv : rest) {
                    text += kv + "\n";
                }
                spool.set_config(parse_config(text));
            }
        } else if (command == "counters") {
            const auto c = spool.counters();
            std::cout << "submit=" << c.submit << "\nstatus=" << c.status << "\ncancel=" << c.cancel << "\n";
        } else {
            return usage();
        }
    } catch (const std::exception& e) {
        std::cerr << "portajob-mock: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

} // namespace portajob::mock
