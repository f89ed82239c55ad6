#include "portajob/harness.hpp"

#include "portajob/batch_executor.hpp"
#include "portajob/dialect.hpp"
#include "portajob/errors.hpp"
#include "portajob/local_executor.hpp"
#include "portajob/mock_lrm.hpp"
#include "portajob/process.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <numeric>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include <sys/wait.h>
#include <unistd.h>

namespace portajob::harness {

namespace fs = std::filesystem;
using json = nlohmann::json;
using steady = std::chrono::steady_clock;

namespace {

double seconds_since(steady::time_point start) {
    return std::chrono::duration<double>(steady::now() - start).count();
}

std::string iso_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string hostname() {
    char buf[256] = {};
    if (::gethostname(buf, sizeof buf - 1) != 0) {
        return "unknown";
    }
    return buf;
}

const std::regex& timestamp_pattern() {
    static const std::regex re(R"(\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}(\.\d+)?Z)");
    return re;
}

const std::regex& version_pattern() {
    static const std::regex re(R"(\d+\.\d+\.\d+)");
    return re;
}

JobSpec shell_job(const std::string& script) {
    JobSpec spec;
    spec.executable = "/bin/sh";
    spec.arguments = {"-c", script};
    return spec;
}

std::string describe(const JobStatus& s) {
    std::string out(to_string(s.state));
    if (s.exit_code) {
        out += " " + std::to_string(*s.exit_code);
    }
    if (s.message) {
        out += " (" + *s.message + ")";
    }
    return out;
}

bool wait_for_state(const Job& job, JobState wanted, std::chrono::milliseconds timeout) {
    const auto deadline = steady::now() + timeout;
    while (steady::now() < deadline) {
        const auto s = job.state();
        if (s == wanted) {
            return true;
        }
        if (is_final(s)) {
            return false;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    return false;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

struct Outcome {
    bool passed = false;
    bool applicable = true;
    std::string output;
};

Outcome expect_final(const JobStatus& s, JobState state, std::optional<int> code) {
    const bool ok = s.state == state && (!code || s.exit_code == code);
    std::string want(to_string(state));
    if (code) {
        want += " " + std::to_string(*code);
    }
    return {ok, true, ok ? describe(s) : "expected " + want + ", got " + describe(s)};
}

class Suite {
public:
    Suite(const std::string& executor_name, const ConformanceOptions& options, const ExecutorRegistry& registry)
        : name_(executor_name), options_(options), registry_(registry), config_(options.config) {
        if (config_.work_directory.empty()) {
            config_.work_directory = default_work_directory();
        }
        if (options_.mock_spool) {
            config_.command_environment["PORTAJOB_MOCK_SPOOL"] = options_.mock_spool->string();
        }
        descriptor_ = registry_.find(name_, options_.version_constraint);
    }

    const ExecutorDescriptor& descriptor() const { return descriptor_; }

    std::unique_ptr<Executor> instance() const { return descriptor_.factory(config_); }

    Outcome run(const std::string& test, Executor& ex) {
        if (test == "submit-complete") {
            return run_to_end(ex, shell_job("exit 0"), JobState::Completed, 0);
        }
        if (test == "submit-fail") {
            return run_to_end(ex, shell_job("exit 3"), JobState::Failed, 3);
        }
        if (test == "cancel-queued") {
            return cancel_queued(ex);
        }
        if (test == "cancel-active") {
            return cancel_active(ex);
        }
        if (test == "attach-running") {
            return attach_check(ex, true);
        }
        if (test == "attach-finished") {
            return attach_check(ex, false);
        }
        if (test == "env-propagation") {
            auto spec = shell_job("test \"$PORTAJOB_CONFORMANCE_VALUE\" = 'forty two'");
            spec.environment["PORTAJOB_CONFORMANCE_VALUE"] = "forty two";
            return run_to_end(ex, spec, JobState::Completed, 0);
        }
        if (test == "redirection") {
            return redirection(ex);
        }
        if (test == "bulk-invariant") {
            return bulk_invariant(ex);
        }
        return {false, true, "no such check"};
    }

private:
    JobStatus submit_and_wait(Executor& ex, const JobPtr& job) const {
        ex.submit(job);
        return job->wait(options_.job_timeout);
    }

    Outcome run_to_end(Executor& ex, JobSpec spec, JobState state, std::optional<int> code) const {
        auto job = Job::create(std::move(spec));
        return expect_final(submit_and_wait(ex, job), state, code);
    }

    Outcome cancel_queued(Executor& ex) const {
        std::optional<mock::Spool> spool;
        std::optional<mock::MockConfig> saved;
        if (options_.mock_spool) {
            spool.emplace(*options_.mock_spool);
            saved = spool->config();
            auto held = *saved;
            held.schedule_delay_min_ms = held.schedule_delay_max_ms = 3'600'000;
            spool->set_config(held);
        }
        struct Restore {
            std::optional<mock::Spool>& spool;
            std::optional<mock::MockConfig>& saved;
            ~Restore() {
                if (spool && saved) {
                    spool->set_config(*saved);
                }
            }
        } restore{spool, saved};

        auto job = Job::create(shell_job("sleep 30"));
        ex.submit(job);
        std::string note;
        if (spool) {
            ex.refresh();
            if (job->state() != JobState::Queued) {
                note = "job left the queue before cancel: " + describe(job->status()) + "\n";
            }
        }
        ex.cancel(job);
        const auto s = job->wait(options_.job_timeout);
        auto out = expect_final(s, JobState::Canceled, std::nullopt);
        out.output = note + out.output;
        out.passed = out.passed && note.empty();
        return out;
    }

    Outcome cancel_active(Executor& ex) const {
        auto job = Job::create(shell_job("sleep 30"));
        const auto start = steady::now();
        ex.submit(job);
        if (!wait_for_state(*job, JobState::Active, options_.job_timeout)) {
            return {false, true, "job never became ACTIVE: " + describe(job->status())};
        }
        ex.cancel(job);
        const auto s = job->wait(options_.job_timeout);
        auto out = expect_final(s, JobState::Canceled, std::nullopt);
        if (out.passed && seconds_since(start) > 20) {
            out = {false, true, "cancellation only took effect after the payload finished"};
        }
        return out;
    }

    Outcome attach_check(Executor& ex, bool while_running) const {
        auto job = Job::create(shell_job(while_running ? "sleep 0.5; exit 0" : "exit 0"));
        ex.submit(job);
        if (while_running) {
            if (!wait_for_state(*job, JobState::Active, options_.job_timeout)) {
                return {false, true, "job never became ACTIVE: " + describe(job->status())};
            }
        } else {
            job->wait(options_.job_timeout);
        }
        // A second, independent instance stands in for a restarted client.
        std::vector<JobState> seen;
        std::mutex seen_mutex;
        auto other = instance();
        other->set_job_status_callback([&](Job&, const JobStatus& s) {
            std::lock_guard lock(seen_mutex);
            seen.push_back(s.state);
        });
        auto attached = std::make_shared<Job>(job->id(), std::nullopt);
        other->attach(attached, *job->native_id());
        auto out = expect_final(attached->wait(options_.job_timeout), JobState::Completed, 0);
        std::lock_guard lock(seen_mutex);
        if (out.passed && (seen.empty() || seen.back() != JobState::Completed)) {
            out = {false, true, "callback did not observe the final state"};
        }
        return out;
    }

    Outcome redirection(Executor& ex) const {
        const auto id = generate_job_id();
        const auto out_path = config_.work_directory + "/" + id + ".conformance.out";
        const auto err_path = config_.work_directory + "/" + id + ".conformance.err";
        auto spec = shell_job("echo hello; echo problem >&2");
        spec.stdout_path = out_path;
        spec.stderr_path = err_path;
        auto job = std::make_shared<Job>(id, spec);
        auto out = expect_final(submit_and_wait(ex, job), JobState::Completed, 0);
        const auto got_out = read_text(out_path);
        const auto got_err = read_text(err_path);
        if (out.passed && (got_out != "hello\n" || got_err != "problem\n")) {
            out = {false, true, "stdout='" + got_out + "' stderr='" + got_err + "'"};
        }
        std::error_code ec;
        fs::remove(out_path, ec);
        fs::remove(err_path, ec);
        return out;
    }

    Outcome bulk_invariant(Executor& ex) const {
        auto* batch = dynamic_cast<BatchExecutor*>(&ex);
        if (!options_.mock_spool || !batch) {
            return {true, false, "status invocations are not observable for this executor"};
        }
        constexpr int n = 10;
        mock::Spool spool(*options_.mock_spool);
        const auto before = spool.counters().status;
        const auto cycles_before = batch->status_commands_issued();
        std::vector<JobPtr> jobs;
        for (int i = 0; i < n; ++i) {
            jobs.push_back(Job::create(shell_job("sleep 0.2")));
            ex.submit(jobs.back());
        }
        for (const auto& j : jobs) {
            const auto s = j->wait(options_.job_timeout);
            if (s.state != JobState::Completed) {
                return {false, true, "bulk job ended " + describe(s)};
            }
        }
        const auto calls = spool.counters().status - before;
        const auto cycles = batch->status_commands_issued() - cycles_before;
        std::ostringstream msg;
        msg << calls << " status invocations over " << cycles << " poll cycles for " << n << " jobs";
        return {cycles > 0 && calls <= cycles, true, msg.str()};
    }

    std::string name_;
    ConformanceOptions options_;
    const ExecutorRegistry& registry_;
    ExecutorConfig config_;
    ExecutorDescriptor descriptor_;
};

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    if (auto it = j.find(key); it != j.end() && !it->is_null()) {
        return it->get<T>();
    }
    return fallback;
}

std::vector<std::string> builtin_executor_names() {
    ExecutorRegistry r;
    register_builtin_executors(r);
    return r.names();
}

} // namespace

const std::vector<std::string>& conformance_test_names() {
    static const std::vector<std::string> names = {
        "submit-complete", "submit-fail",    "cancel-queued", "cancel-active", "attach-running",
        "attach-finished", "env-propagation", "redirection",  "bulk-invariant",
    };
    return names;
}

ConformanceReport run_conformance(const std::string& executor_name, const ConformanceOptions& options,
                                  const ExecutorRegistry& registry) {
    Suite suite(executor_name, options, registry);
    ConformanceReport report;
    report.site = options.site;
    report.executor = suite.descriptor().name;
    report.version = suite.descriptor().version.to_string();
    report.timestamp = iso_now();

    const std::map<std::string, std::string> env = {
        {"hostname", hostname()},
        {"work_directory", options.config.work_directory.empty() ? default_work_directory()
                                                                 : options.config.work_directory},
        {"executor_source", suite.descriptor().source},
    };

    std::unique_ptr<Executor> executor;
    std::string setup_error;
    try {
        executor = suite.instance();
    } catch (const std::exception& e) {
        setup_error = e.what();
    }
    for (const auto& name : conformance_test_names()) {
        TestRecord rec;
        rec.name = name;
        rec.environment = env;
        const auto start = steady::now();
        if (!executor) {
            rec.output = "executor could not be created: " + setup_error;
        } else {
            try {
                const auto out = suite.run(name, *executor);
                rec.passed = out.passed;
                rec.applicable = out.applicable;
                rec.output = out.output;
            } catch (const std::exception& e) {
                rec.output = e.what();
            }
        }
        rec.duration_s = seconds_since(start);
        report.tests.push_back(std::move(rec));
    }
    return report;
}

std::string report_to_json(const ConformanceReport& r, int indent) {
    json tests = json::array();
    for (const auto& t : r.tests) {
        json rec = {{"name", t.name}, {"passed", t.passed}, {"applicable", t.applicable}, {"duration_s", t.duration_s}};
        if (!r.minimal) {
            rec["output"] = t.output;
            rec["environment"] = t.environment;
        }
        tests.push_back(std::move(rec));
    }
    const json doc = {
        {"site", r.site ? json(*r.site) : json(nullptr)},
        {"executor", r.executor ? json(*r.executor) : json(nullptr)},
        {"version", r.version},
        {"timestamp", r.timestamp},
        {"tests", std::move(tests)},
        {"minimal", r.minimal},
    };
    return doc.dump(indent);
}

ConformanceReport report_from_json(std::string_view text) {
    const auto doc = json::parse(text);
    ConformanceReport r;
    if (!doc.at("site").is_null()) {
        r.site = doc.at("site").get<std::string>();
    }
    if (!doc.at("executor").is_null()) {
        r.executor = doc.at("executor").get<std::string>();
    }
    r.version = doc.at("version").get<std::string>();
    r.timestamp = doc.at("timestamp").get<std::string>();
    r.minimal = doc.at("minimal").get<bool>();
    for (const auto& t : doc.at("tests")) {
        TestRecord rec;
        rec.name = t.at("name").get<std::string>();
        rec.passed = t.at("passed").get<bool>();
        rec.applicable = get_or(t, "applicable", true);
        rec.duration_s = t.at("duration_s").get<double>();
        rec.output = get_or(t, "output", std::string());
        rec.environment = get_or(t, "environment", std::map<std::string, std::string>());
        r.tests.push_back(std::move(rec));
    }
    return r;
}

ConformanceReport strip_report(const ConformanceReport& report, const std::vector<std::string>& known_executors) {
    const auto& names = conformance_test_names();
    ConformanceReport out;
    out.minimal = true;
    if (report.executor &&
        std::find(known_executors.begin(), known_executors.end(), *report.executor) != known_executors.end()) {
        out.executor = report.executor;
    }
    if (std::regex_match(report.version, version_pattern())) {
        out.version = report.version;
    }
    if (std::regex_match(report.timestamp, timestamp_pattern())) {
        out.timestamp = report.timestamp;
    }
    for (const auto& t : report.tests) {
        TestRecord rec;
        if (std::find(names.begin(), names.end(), t.name) != names.end()) {
            rec.name = t.name;
        }
        rec.passed = t.passed;
        rec.applicable = t.applicable;
        rec.duration_s = t.duration_s;
        out.tests.push_back(std::move(rec));
    }
    return out;
}

ConformanceReport strip_report(const ConformanceReport& report) {
    auto known = ExecutorRegistry::global().names();
    for (const auto& n : builtin_executor_names()) {
        if (std::find(known.begin(), known.end(), n) == known.end()) {
            known.push_back(n);
        }
    }
    return strip_report(report, known);
}

std::vector<std::string> minimal_report_violations(std::string_view report_json,
                                                   const std::vector<std::string>& known_executors) {
    static const std::set<std::string> allowed_keys = {"site",  "executor", "version", "timestamp", "tests",
                                                       "minimal", "name",   "passed",  "applicable", "duration_s"};
    const auto& names = conformance_test_names();
    std::vector<std::string> bad;
    const auto doc = json::parse(report_json);

    auto check_string = [&](const std::string& key, const std::string& value) {
        if (value.empty()) {
            return;
        }
        bool ok = false;
        if (key == "executor") {
            ok = std::find(known_executors.begin(), known_executors.end(), value) != known_executors.end();
        } else if (key == "name") {
            ok = std::find(names.begin(), names.end(), value) != names.end();
        } else if (key == "version") {
            ok = std::regex_match(value, version_pattern());
        } else if (key == "timestamp") {
            ok = std::regex_match(value, timestamp_pattern());
        }
        if (!ok) {
            bad.push_back(value);
        }
    };

    std::function<void(const json&, const std::string&)> walk = [&](const json& node, const std::string& key) {
        if (node.is_object()) {
            for (const auto& [k, v] : node.items()) {
                if (!allowed_keys.count(k)) {
                    bad.push_back(k);
                }
                walk(v, k);
            }
        } else if (node.is_array()) {
            for (const auto& v : node) {
                walk(v, key);
            }
        } else if (node.is_string()) {
            check_string(key, node.get<std::string>());
        }
    };
    walk(doc, "");
    return bad;
}

std::pair<fs::path, fs::path> write_reports(const ConformanceReport& report, const fs::path& dir,
                                            const std::string& stem) {
    fs::create_directories(dir);
    const auto full = dir / (stem + ".json");
    const auto minimal = dir / (stem + ".minimal.json");
    std::ofstream(full) << report_to_json(report) << "\n";
    std::ofstream(minimal) << report_to_json(strip_report(report)) << "\n";
    return {full, minimal};
}

double BenchmarkRecord::per_job_s() const {
    if (samples_s.empty()) {
        return 0;
    }
    if (scenario == "qstat-latency") {
        return median(samples_s);
    }
    return n_jobs > 0 ? total_s / n_jobs : 0;
}

namespace {

BenchmarkRecord run_library_loop(int n_jobs, ExecutorConfig config, std::string scenario, std::string mode) {
    BenchmarkRecord rec{std::move(scenario), n_jobs, std::move(mode), {}, 0};
    if (n_jobs <= 0) {
        return rec;
    }
    if (config.work_directory.empty()) {
        config.work_directory = default_work_directory();
    }
    LocalExecutor ex(config);
    JobSpec spec;
    spec.executable = "/bin/true";
    for (int i = 0; i < n_jobs; ++i) {
        const auto start = steady::now();
        auto job = Job::create(spec);
        ex.submit(job);
        const auto s = job->wait(std::chrono::seconds(30));
        rec.samples_s.push_back(seconds_since(start));
        if (s.state != JobState::Completed) {
            throw Error("benchmark job ended " + describe(s));
        }
        std::error_code ec;
        fs::remove(launcher_script_path(config.work_directory, job->id()), ec);
        fs::remove(sidecar_path(config.work_directory, job->id()), ec);
    }
    rec.total_s = std::accumulate(rec.samples_s.begin(), rec.samples_s.end(), 0.0);
    return rec;
}

} // namespace

BenchmarkRecord bench_local(int n_jobs, LocalMethod method, const ExecutorConfig& config) {
    if (method == LocalMethod::Library) {
        return run_library_loop(n_jobs, config, "local", "library");
    }
    BenchmarkRecord rec{"local", n_jobs, "direct", {}, 0};
    SpawnOptions opts;
    opts.argv = {"/bin/true"};
    for (int i = 0; i < n_jobs; ++i) {
        const auto start = steady::now();
        const pid_t pid = spawn_process(opts);
        int status = 0;
        while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
        }
        rec.samples_s.push_back(seconds_since(start));
    }
    rec.total_s = std::accumulate(rec.samples_s.begin(), rec.samples_s.end(), 0.0);
    return rec;
}

BenchmarkRecord bench_launcher(int n_jobs, LaunchMode mode, const ExecutorConfig& config) {
    auto c = config;
    c.launch_mode = mode;
    std::string name = mode == LaunchMode::Default ? "default" : mode == LaunchMode::MinimalWrapper ? "minimal" : "none";
    return run_library_loop(n_jobs, c, "launcher-script", std::move(name));
}

BenchmarkRecord bench_qstat_latency(int n_jobs, const fs::path& spool, int samples, const ExecutorConfig& config) {
    BenchmarkRecord rec{"qstat-latency", n_jobs, "status", {}, 0};
    if (n_jobs <= 0) {
        return rec;
    }
    auto c = config;
    if (c.work_directory.empty()) {
        c.work_directory = default_work_directory();
    }
    c.command_environment["PORTAJOB_MOCK_SPOOL"] = spool.string();
    BatchExecutor ex("mock", BatchExecutor::executor_version, mock_dialect(), c);

    std::vector<JobPtr> jobs;
    for (int i = 0; i < n_jobs; ++i) {
        jobs.push_back(Job::create(shell_job("sleep 300")));
        ex.submit(jobs.back());
    }
    for (const auto& j : jobs) {
        if (!wait_for_state(*j, JobState::Active, std::chrono::seconds(30))) {
            throw Error("benchmark job never started: " + describe(j->status()));
        }
    }

    const std::vector<std::string> argv = {mock_command(), "status", *jobs.front()->native_id()};
    const std::map<std::string, std::string> env = {{"PORTAJOB_MOCK_SPOOL", spool.string()}};
    const auto start = steady::now();
    for (int i = 0; i < samples; ++i) {
        const auto t0 = steady::now();
        const auto r = run_command(argv, env, std::chrono::seconds(30));
        rec.samples_s.push_back(seconds_since(t0));
        if (!r.ok()) {
            throw Error("status command failed: " + r.err);
        }
    }
    rec.total_s = seconds_since(start);

    for (const auto& j : jobs) {
        try {
            ex.cancel(j);
        } catch (const Error&) {
        }
    }
    for (const auto& j : jobs) {
        try {
            j->wait(std::chrono::seconds(30));
        } catch (const Error&) {
        }
    }
    return rec;
}

std::string csv_header() {
    return "scenario,n_jobs,mode,total_s,per_job_s";
}

std::string to_csv_row(const BenchmarkRecord& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%d,%s,%.6f,%.6f", r.scenario.c_str(), r.n_jobs, r.mode.c_str(), r.total_s,
                  r.per_job_s());
    return buf;
}

double quantile(std::vector<double> values, double q) {
    if (values.empty()) {
        return 0;
    }
    std::sort(values.begin(), values.end());
    const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    return values[lo] + (values[hi] - values[lo]) * (pos - static_cast<double>(lo));
}

double median(std::vector<double> values) {
    return quantile(std::move(values), 0.5);
}

double r_squared(const std::vector<double>& x, const std::vector<double>& y) {
    const auto n = static_cast<double>(x.size());
    if (x.size() != y.size() || x.size() < 2) {
        return 0;
    }
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0 || syy == 0) {
        return syy == 0 ? 1.0 : 0.0;
    }
    return (sxy * sxy) / (sxx * syy);
}

} // namespace portajob::harness
