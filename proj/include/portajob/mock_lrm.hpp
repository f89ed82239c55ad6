#pragma once

#include "portajob/errors.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace portajob::mock {

// Rejections and other failures reported to the caller of a mock command.
class MockError : public Error {
public:
    using Error::Error;
};

struct MockConfig {
    // Start delay drawn uniformly from [min, max].
    std::int64_t schedule_delay_min_ms = 0;
    std::int64_t schedule_delay_max_ms = 0;
    // Artificial delay added to every status call.
    std::int64_t status_latency_ms = 0;
    std::vector<std::string> reject_queues;
    bool drop_after_done = false;
    bool fail_submit = false;
};

// `mock.toml` in the spool directory: `key = value` lines where value is an
// integer, a boolean, a quoted string or an array of quoted strings.
// schedule_delay_ms accepts an integer or a "min..max" string.
MockConfig parse_config(std::string_view text);
std::string format_config(const MockConfig& config);

struct MockJob {
    int id = 0;
    // Q, R, CD, F or CA.
    std::string code = "Q";
    std::string script;
    std::string queue;
    std::int64_t submit_ms = 0;
    std::int64_t due_ms = 0;
    std::int64_t start_ms = -1;
    std::int64_t end_ms = -1;
    std::optional<int> exit_code;
    // Process group of the running job script.
    int pgid = 0;
    std::string message;
};

struct Counters {
    std::uint64_t submit = 0;
    std::uint64_t status = 0;
    std::uint64_t cancel = 0;
};

std::int64_t now_ms();

/// A spool directory holding the whole scheduler state.
///
/// Every operation takes an exclusive lock on `<spool>/lock`, advances the
/// scheduler to `now` (lazy tick) and persists the result, so concurrent
/// processes see a consistent queue without a daemon.
class Spool {
public:
    explicit Spool(std::filesystem::path dir);

    const std::filesystem::path& dir() const { return dir_; }

    MockConfig config() const;
    void set_config(const MockConfig& config);

    // Records the script as Q and returns its id. Throws MockError when
    // configured to fail or when the script asks for a rejected queue.
    std::string submit(const std::string& script_path, std::int64_t now = now_ms());

    // One line per id: "<id> <code> [message]". Unknown ids read
    // "<id> U unknown"; with drop_after_done finished jobs are omitted.
    // The configured latency is not applied here; see status_latency().
    std::vector<std::string> status(const std::vector<std::string>& ids, std::int64_t now = now_ms());

    // Q or R becomes CA (an R job's process group is terminated). Throws
    // MockError "already completed" for finished jobs.
    void cancel(const std::string& id, std::int64_t now = now_ms());

    // Starts due jobs and collects finished ones.
    void tick(std::int64_t now = now_ms());

    Counters counters() const;
    std::vector<MockJob> jobs() const;
    std::optional<MockJob> job(int id) const;

    // Forgets a job entirely, as if the scheduler had purged it.
    void remove_job(int id);

private:
    struct State {
        int next_id = 1;
        std::vector<MockJob> jobs;
    };

    class Lock;

    State load() const;
    void store(const State& state) const;
    void advance(State& state, const MockConfig& config, std::int64_t now) const;
    void bump(const char* counter) const;

    std::filesystem::path dir_;
};

// Entry point of the `portajob-mock` binary. Subcommands: submit|msub,
// status|mstat, cancel|mdel, tick, run, config, counters. The spool comes
// from --spool or PORTAJOB_MOCK_SPOOL. When invoked through a link named
// msub, mstat or mdel the subcommand is implied.
int run_cli(int argc, char** argv);

} // namespace portajob::mock
