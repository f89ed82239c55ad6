#pragma once

#include "portajob/executor.hpp"

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace portajob::harness {

struct TestRecord {
    std::string name;
    bool passed = false;
    // False when the check cannot be observed with this executor.
    bool applicable = true;
    double duration_s = 0;
    std::string output;
    std::map<std::string, std::string> environment;

    bool operator==(const TestRecord&) const = default;
};

struct ConformanceReport {
    std::optional<std::string> site;
    std::optional<std::string> executor;
    std::string version;
    // ISO 8601, UTC.
    std::string timestamp;
    std::vector<TestRecord> tests;
    bool minimal = false;

    bool operator==(const ConformanceReport&) const = default;
};

// Names of the fixed suite, in execution order.
const std::vector<std::string>& conformance_test_names();

struct ConformanceOptions {
    std::optional<std::string> site;
    ExecutorConfig config;
    std::string version_constraint;
    // Spool of the mock scheduler behind the executor, if any. Enables the
    // bulk-invariant check and a truly queued job for cancel-queued.
    std::optional<std::filesystem::path> mock_spool;
    // Upper bound on each wait inside a check.
    std::chrono::milliseconds job_timeout = std::chrono::seconds(30);
};

// Runs every check of the suite against fresh instances of the named
// executor. Individual failures are recorded, never thrown. Throws
// UnknownExecutor or NoVersionSatisfies when the executor is unavailable.
ConformanceReport run_conformance(const std::string& executor_name, const ConformanceOptions& options = {},
                                  const ExecutorRegistry& registry = ExecutorRegistry::global());

std::string report_to_json(const ConformanceReport& report, int indent = 2);
ConformanceReport report_from_json(std::string_view text);

// Keeps numbers, booleans, the timestamp, the version and enumerated
// identifiers: suite test names and executor names from `known_executors`.
// Everything else is dropped. Idempotent.
ConformanceReport strip_report(const ConformanceReport& report, const std::vector<std::string>& known_executors);
ConformanceReport strip_report(const ConformanceReport& report);

// Every string in a serialized minimal report that is not an allowed key,
// a known executor name, a suite test name, a version or a timestamp.
std::vector<std::string> minimal_report_violations(std::string_view report_json,
                                                   const std::vector<std::string>& known_executors);

// Writes `<dir>/<stem>.json` (full) and `<dir>/<stem>.minimal.json`; returns
// the two paths.
std::pair<std::filesystem::path, std::filesystem::path> write_reports(const ConformanceReport& report,
                                                                      const std::filesystem::path& dir,
                                                                      const std::string& stem);

struct BenchmarkRecord {
    // "local", "launcher-script" or "qstat-latency".
    std::string scenario;
    int n_jobs = 0;
    // local: "library" or "direct"; launcher-script: "default", "minimal" or
    // "none"; qstat-latency: "status".
    std::string mode;
    // Per-job wall times, or per-call latencies for qstat-latency.
    std::vector<double> samples_s;
    double total_s = 0;

    // Mean per job; for qstat-latency the median call latency. Zero when
    // there are no samples.
    double per_job_s() const;
};

enum class LocalMethod { Library, DirectSpawn };

// Runs n no-op jobs one after another, either through a local executor
// (submit + wait) or by spawning and reaping /bin/true directly.
BenchmarkRecord bench_local(int n_jobs, LocalMethod method, const ExecutorConfig& config = {});

// Like bench_local through the library, with the given launcher-script mode.
BenchmarkRecord bench_launcher(int n_jobs, LaunchMode mode, const ExecutorConfig& config = {});

// Keeps n_jobs long-running jobs under a mock executor (its poller active)
// and times `samples` standalone status commands for one of them. The spool
// must be private to the benchmark; its configuration is left untouched.
BenchmarkRecord bench_qstat_latency(int n_jobs, const std::filesystem::path& spool, int samples = 20,
                                    const ExecutorConfig& config = {});

std::string csv_header();
std::string to_csv_row(const BenchmarkRecord& record);

// Small statistics helpers used by the acceptance checks.
double median(std::vector<double> values);
// Linear-interpolated quantile, q in [0, 1].
double quantile(std::vector<double> values, double q);
// Coefficient of determination of the least-squares line through (x, y).
double r_squared(const std::vector<double>& x, const std::vector<double>& y);

} // namespace portajob::harness
