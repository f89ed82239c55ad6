// Acceptance checks. Each criterion prints one PASS or FAIL line; the exit
// status is non-zero if any of them failed.

#include "portajob/batch_executor.hpp"
#include "portajob/errors.hpp"
#include "portajob/harness.hpp"
#include "portajob/local_executor.hpp"
#include "portajob/mock_lrm.hpp"
#include "portajob/process.hpp"

#include "support.hpp"

#include <algorithm>
#include <cstdio>
#include <functional>
#include <iostream>
#include <thread>

using namespace portajob;
using namespace portajob::harness;
using namespace portajob::testing;

namespace {

using steady = std::chrono::steady_clock;

double seconds_since(steady::time_point start) {
    return std::chrono::duration<double>(steady::now() - start).count();
}

struct Outcome {
    bool passed = false;
    std::string detail;
};

void require(bool condition, const std::string& what) {
    if (!condition) {
        throw std::runtime_error(what);
    }
}

std::string fmt_ms(double seconds) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f ms", seconds * 1000);
    return buf;
}

ExecutorConfig work_config(const TempDir& work) {
    ExecutorConfig c;
    c.work_directory = work.str();
    return c;
}

// 1. Library overhead over direct spawning stays small and total time is linear in n.
Outcome local_overhead() {
    TempDir work;
    const auto start = steady::now();
    std::vector<double> xs, totals;
    double worst = 0;
    std::string detail;
    for (int n : {1, 10, 100}) {
        const auto direct = bench_local(n, LocalMethod::DirectSpawn, work_config(work));
        const auto library = bench_local(n, LocalMethod::Library, work_config(work));
        const double overhead = library.per_job_s() - direct.per_job_s();
        worst = std::max(worst, overhead);
        xs.push_back(n);
        totals.push_back(library.total_s);
        detail += "n=" + std::to_string(n) + " overhead " + fmt_ms(overhead) + "; ";
    }
    const double r2 = r_squared(xs, totals);
    const double elapsed = seconds_since(start);
    detail += "R^2 " + std::to_string(r2) + ", " + std::to_string(elapsed) + " s";
    return {worst <= 0.050 && r2 >= 0.98 && elapsed < 120, detail};
}

// 2. Launcher-script cost relative to no script and to the minimal wrapper.
// Each repetition runs a batch per mode, rotating the order so that drift
// over the run does not favour one mode. The interquartile ranges are taken
// over every job of every repetition.
Outcome launcher_overhead() {
    TempDir work;
    const auto start = steady::now();
    constexpr int reps = 7;
    constexpr int n = 20;
    std::vector<LaunchMode> order = {LaunchMode::None, LaunchMode::MinimalWrapper, LaunchMode::Default};
    std::map<LaunchMode, std::vector<double>> samples;
    std::map<LaunchMode, std::vector<double>> per_rep;
    for (int r = 0; r < reps; ++r) {
        for (auto mode : order) {
            const auto rec = bench_launcher(n, mode, work_config(work));
            samples[mode].insert(samples[mode].end(), rec.samples_s.begin(), rec.samples_s.end());
            per_rep[mode].push_back(rec.per_job_s());
        }
        std::rotate(order.begin(), order.begin() + 1, order.end());
    }
    const double def = median(per_rep[LaunchMode::Default]);
    const double none = median(per_rep[LaunchMode::None]);
    const auto& minimal = samples[LaunchMode::MinimalWrapper];
    const auto& full = samples[LaunchMode::Default];
    const double min_q1 = quantile(minimal, 0.25);
    const double min_q3 = quantile(minimal, 0.75);
    const double def_q1 = quantile(full, 0.25);
    const double def_q3 = quantile(full, 0.75);
    const bool overlap = def_q1 <= min_q3 && min_q1 <= def_q3;
    const double elapsed = seconds_since(start);
    const std::string detail = "default-none " + fmt_ms(def - none) + "; IQR default [" + fmt_ms(def_q1) + ", " +
                               fmt_ms(def_q3) + "] minimal [" + fmt_ms(min_q1) + ", " + fmt_ms(min_q3) + "] over " +
                               std::to_string(reps) + " repetitions; " + std::to_string(elapsed) + " s";
    return {def - none <= 0.010 && overlap && elapsed < 120, detail};
}

// 3. One status command per poll cycle no matter how many jobs are live.
Outcome bulk_status() {
    TempDir work;
    TempDir spool_root;
    const auto spool = spool_root.path() / "spool";
    const auto start = steady::now();
    auto config = mock_config(work, spool);
    config.poll_interval = std::chrono::hours(1);
    auto ex = make_mock(config);
    std::vector<JobPtr> jobs;
    for (int i = 0; i < 100; ++i) {
        jobs.push_back(Job::create(shell_spec("sleep 60")));
        ex->submit(jobs.back());
    }
    mock::Spool s(spool);
    const auto before = s.counters().status;
    for (int i = 0; i < 10; ++i) {
        ex->poll_cycle();
    }
    const auto issued = s.counters().status - before;
    int active = 0;
    for (const auto& j : jobs) {
        active += j->state() == JobState::Active;
    }
    for (const auto& j : jobs) {
        ex->cancel(j);
    }
    ex->poll_cycle();
    const double elapsed = seconds_since(start);
    return {issued <= 10 && active == 100 && elapsed < 30,
            std::to_string(issued) + " status invocations for 100 jobs (" + std::to_string(active) +
                " active) over 10 cycles; " + std::to_string(elapsed) + " s"};
}

// 4. Standalone status latency does not grow with the number of managed jobs.
Outcome queue_load() {
    const auto start = steady::now();
    std::map<int, double> medians;
    for (int n : {1, 100}) {
        TempDir work;
        TempDir spool_root;
        const auto spool = spool_root.path() / "spool";
        mock::MockConfig c;
        c.status_latency_ms = 50;
        mock::Spool(spool).set_config(c);
        medians[n] = bench_qstat_latency(n, spool, 20, work_config(work)).per_job_s();
    }
    const double elapsed = seconds_since(start);
    return {medians[100] <= 2 * medians[1] && elapsed < 60,
            "median 1 job " + fmt_ms(medians[1]) + ", 100 jobs " + fmt_ms(medians[100]) + "; " +
                std::to_string(elapsed) + " s"};
}

// 5. Randomized state-machine sequences.
Outcome state_machine() {
    const auto start = steady::now();
    const auto stats = run_state_machine_property(10'000, 0x5eed);
    const double elapsed = seconds_since(start);
    const long violations = stats.rank_decreases + stats.exits_from_final + stats.duplicate_deliveries +
                            stats.missed_deliveries + stats.illegal_accepted;
    return {stats.sequences == 10'000 && violations == 0 && elapsed < 10,
            std::to_string(stats.sequences) + " sequences, " + std::to_string(stats.deliveries) + " deliveries, " +
                std::to_string(violations) + " violations; " + std::to_string(elapsed) + " s"};
}

// 6. Mixed 50-job lifecycle on the mock, in process and across a restart.
enum class Kind { Ok, Exit3, CancelQueued, CancelActive };

struct Expected {
    Kind kind;
    JobState state;
    std::optional<int> exit_code;
};

std::vector<Expected> lifecycle_plan() {
    std::vector<Expected> plan;
    for (int i = 0; i < 50; ++i) {
        switch (i % 4) {
        case 0: plan.push_back({Kind::Ok, JobState::Completed, 0}); break;
        case 1: plan.push_back({Kind::Exit3, JobState::Failed, 3}); break;
        case 2: plan.push_back({Kind::CancelQueued, JobState::Canceled, std::nullopt}); break;
        default: plan.push_back({Kind::CancelActive, JobState::Canceled, std::nullopt}); break;
        }
    }
    return plan;
}

struct Lifecycle {
    TempDir work;
    TempDir spool_root;
    fs::path running_spool = spool_root.path() / "running";
    // Jobs here never leave the queue on their own.
    fs::path held_spool = spool_root.path() / "held";
    std::unique_ptr<BatchExecutor> running;
    std::unique_ptr<BatchExecutor> held;
    std::vector<JobPtr> jobs;

    Lifecycle() {
        mock::MockConfig c;
        c.schedule_delay_min_ms = c.schedule_delay_max_ms = 3'600'000;
        mock::Spool(held_spool).set_config(c);
        running = make_mock(mock_config(work, running_spool));
        held = make_mock(mock_config(work, held_spool));
    }

    BatchExecutor& executor_for(Kind k) { return k == Kind::CancelQueued ? *held : *running; }

    void submit_and_cancel(const std::vector<Expected>& plan) {
        for (const auto& e : plan) {
            std::string script = "exit 0";
            if (e.kind == Kind::Exit3) {
                script = "sleep 0.2; exit 3";
            } else if (e.kind == Kind::CancelActive || e.kind == Kind::CancelQueued) {
                script = "sleep 60";
            } else {
                script = "sleep 0.2; exit 0";
            }
            jobs.push_back(Job::create(shell_spec(script)));
            executor_for(e.kind).submit(jobs.back());
        }
        for (std::size_t i = 0; i < plan.size(); ++i) {
            if (plan[i].kind == Kind::CancelQueued) {
                require(jobs[i]->state() == JobState::Queued, "job not queued before cancel");
                executor_for(plan[i].kind).cancel(jobs[i]);
            }
        }
        const auto deadline = steady::now() + std::chrono::seconds(20);
        for (std::size_t i = 0; i < plan.size(); ++i) {
            if (plan[i].kind != Kind::CancelActive) {
                continue;
            }
            while (jobs[i]->state() != JobState::Active && steady::now() < deadline) {
                std::this_thread::sleep_for(std::chrono::milliseconds(5));
            }
            require(jobs[i]->state() == JobState::Active, "job never became active");
            running->cancel(jobs[i]);
        }
    }
};

std::string check_finals(const std::vector<Expected>& plan, const std::vector<JobStatus>& finals) {
    std::string problems;
    for (std::size_t i = 0; i < plan.size(); ++i) {
        if (finals[i].state != plan[i].state || finals[i].exit_code != plan[i].exit_code) {
            problems += "job " + std::to_string(i) + " ended " + std::string(to_string(finals[i].state)) + "; ";
        }
    }
    return problems;
}

Outcome mock_lifecycle() {
    const auto start = steady::now();
    const auto plan = lifecycle_plan();

    std::vector<JobStatus> in_process;
    {
        Lifecycle run;
        run.submit_and_cancel(plan);
        for (auto& j : run.jobs) {
            in_process.push_back(j->wait(std::chrono::seconds(30)));
        }
    }
    const auto problems = check_finals(plan, in_process);

    // Restart variant: the submitting executors go away before the jobs end
    // and fresh processes pick the jobs up from their handle files.
    std::vector<JobStatus> restarted(plan.size());
    std::string restart_problems;
    {
        Lifecycle run;
        run.submit_and_cancel(plan);
        std::vector<std::string> ids;
        for (std::size_t i = 0; i < plan.size(); ++i) {
            const auto& j = run.jobs[i];
            write_file(run.work / (j->id() + ".handle"), "{\"job_id\": \"" + j->id() +
                                                              "\", \"executor\": \"mock\", \"native_id\": \"" +
                                                              *j->native_id() + "\"}\n");
            ids.push_back(j->id());
        }
        run.running.reset();
        run.held.reset();
        std::vector<std::thread> waiters;
        for (std::size_t i = 0; i < plan.size(); ++i) {
            waiters.emplace_back([&, i] {
                const auto spool = plan[i].kind == Kind::CancelQueued ? run.held_spool : run.running_spool;
                const auto r = run_command({PORTAJOB_CLI_BIN, "wait", "--timeout", "30", "--work-dir", run.work.str(),
                                            ids[i]},
                                           {{"PORTAJOB_MOCK_SPOOL", spool.string()}});
                std::stringstream out(r.out);
                std::string state;
                std::optional<int> code;
                int c = 0;
                out >> state;
                if (out >> c) {
                    code = c;
                }
                restarted[i].state = state == "COMPLETED" ? JobState::Completed
                                     : state == "FAILED"  ? JobState::Failed
                                     : state == "CANCELED" ? JobState::Canceled
                                                           : JobState::New;
                restarted[i].exit_code = code;
            });
        }
        for (auto& t : waiters) {
            t.join();
        }
    }
    restart_problems = check_finals(plan, restarted);
    bool identical = true;
    for (std::size_t i = 0; i < plan.size(); ++i) {
        identical = identical && restarted[i].state == in_process[i].state &&
                    restarted[i].exit_code == in_process[i].exit_code;
    }
    const double elapsed = seconds_since(start);
    std::string detail = "50 jobs in process: " + (problems.empty() ? std::string("all correct") : problems) +
                         " after restart: " + (restart_problems.empty() ? std::string("all correct") : restart_problems) +
                         (identical ? " identical finals; " : " finals differ; ") + std::to_string(elapsed) + " s";
    return {problems.empty() && restart_problems.empty() && identical && elapsed < 60, detail};
}

// 7. Submit scripts match the checked-in goldens byte for byte.
Outcome goldens() {
    int matched = 0;
    int total = 0;
    std::string mismatches;
    for (const auto& dialect : golden_dialects()) {
        for (const auto& [name, spec] : golden_corpus()) {
            ++total;
            const auto path = golden_path(PORTAJOB_GOLDEN_DIR, dialect, name);
            if (fs::exists(path) && read_file(path) == render_golden(dialect, spec)) {
                ++matched;
            } else {
                mismatches += dialect + "/" + name + " ";
            }
        }
    }
    const auto eigen = golden_corpus().front().second;
    const bool has_512 = render_golden("slurm", eigen).find("#SBATCH --ntasks=512\n") != std::string::npos &&
                         render_golden("pbs", eigen).find("512") != std::string::npos &&
                         render_golden("lsf", eigen).find("#BSUB -n 512\n") != std::string::npos &&
                         render_golden("mock", eigen).find("#PJ --processes=512\n") != std::string::npos;
    return {matched == total && total == 44 && has_512,
            std::to_string(matched) + "/" + std::to_string(total) + " goldens match" +
                (has_512 ? ", 512-process directive present" : ", 512-process directive missing") +
                (mismatches.empty() ? "" : "; mismatched: " + mismatches)};
}

// 8. Payload exit codes survive the launcher script and sidecar file.
Outcome exit_fidelity() {
    const std::vector<int> codes = {0, 1, 3, 127, 255};
    std::string detail;
    bool ok = true;
    TempDir work;
    TempDir spool_root;
    LocalExecutor local(work_config(work));
    auto mock = make_mock(mock_config(work, spool_root.path() / "spool"));
    for (Executor* ex : std::vector<Executor*>{&local, mock.get()}) {
        std::vector<JobPtr> jobs;
        for (int code : codes) {
            jobs.push_back(Job::create(shell_spec("exit " + std::to_string(code))));
            ex->submit(jobs.back());
        }
        detail += ex->name() + ":";
        for (std::size_t i = 0; i < codes.size(); ++i) {
            const auto s = jobs[i]->wait(std::chrono::seconds(30));
            const auto sidecar = read_exit_code_file(sidecar_path(work.str(), jobs[i]->id()));
            const bool good = s.exit_code == codes[i] && sidecar == codes[i] &&
                              s.state == (codes[i] == 0 ? JobState::Completed : JobState::Failed);
            ok = ok && good;
            detail += " " + std::to_string(codes[i]) + (good ? "=ok" : "=BAD");
        }
        detail += "; ";
    }
    return {ok, detail};
}

// 9. A stripped report of a failing run carries no free text.
Outcome minimal_uploads() {
    TempDir work;
    TempDir spool_root;
    const auto spool = spool_root.path() / "spool";
    mock::MockConfig c;
    c.fail_submit = true;
    mock::Spool(spool).set_config(c);
    ConformanceOptions o;
    o.site = "sensitive-site.internal";
    o.config.work_directory = work.str();
    o.mock_spool = spool;
    o.job_timeout = std::chrono::seconds(5);
    const auto report = run_conformance("mock", o);
    int failures = 0;
    std::size_t free_text = 0;
    for (const auto& t : report.tests) {
        failures += t.applicable && !t.passed;
        free_text += t.output.size();
    }
    const auto known = ExecutorRegistry::global().names();
    const auto stripped = strip_report(report, known);
    const auto text = report_to_json(stripped);
    const auto violations = minimal_report_violations(text, known);
    const bool idempotent = strip_report(stripped, known) == stripped &&
                            report_to_json(strip_report(report_from_json(text), known)) == text;
    const bool leaks = text.find("sensitive-site") != std::string::npos ||
                       text.find(work.str()) != std::string::npos;
    return {failures > 0 && free_text > 0 && violations.empty() && idempotent && !leaks,
            std::to_string(failures) + " failing checks, " + std::to_string(free_text) +
                " bytes of output stripped, " + std::to_string(violations.size()) + " whitelist violations, " +
                (idempotent ? "idempotent" : "not idempotent")};
}

// 10. A manifest-described plugin wrapping the mock behaves like the built-in mock.
Outcome plugin_discovery() {
    TempDir plugins;
    write_file(plugins / "sitemock.exdesc",
               "# mock scheduler reached through the generic command contract\n"
               "name: sitemock\nversion: 1.2.0\ncommand: " +
                   std::string(PORTAJOB_MOCK_BIN) + "\n");
    ::setenv("PORTAJOB_PLUGIN_PATH", plugins.str().c_str(), 1);
    ExecutorRegistry registry;
    register_builtin_executors(registry);
    const auto found = registry.discover_plugins(plugin_path_from_env());
    ::setenv("PORTAJOB_PLUGIN_PATH", "", 1);
    const auto desc = registry.find("sitemock");
    require(desc.source == plugins / "sitemock.exdesc", "plugin source is " + desc.source);

    auto conform = [&](const std::string& name) {
        TempDir work;
        TempDir spool_root;
        ConformanceOptions o;
        o.config.work_directory = work.str();
        o.mock_spool = spool_root.path() / "spool";
        return run_conformance(name, o, registry);
    };
    const auto plugin = conform("sitemock");
    const auto builtin = conform("mock");
    bool identical = plugin.tests.size() == builtin.tests.size();
    int passed = 0;
    for (std::size_t i = 0; identical && i < plugin.tests.size(); ++i) {
        identical = plugin.tests[i].name == builtin.tests[i].name &&
                    plugin.tests[i].passed == builtin.tests[i].passed &&
                    plugin.tests[i].applicable == builtin.tests[i].applicable;
        passed += plugin.tests[i].passed && plugin.tests[i].applicable;
    }
    const int total = static_cast<int>(conformance_test_names().size());
    return {found.diagnostics.empty() && identical && passed == total,
            "discovered sitemock " + desc.version.to_string() + "; " + std::to_string(passed) + "/" +
                std::to_string(total) + " checks passed" + (identical ? ", identical to mock" : ", differs from mock")};
}

} // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"local executor overhead", local_overhead},
        {"launcher script overhead", launcher_overhead},
        {"bulk status queries", bulk_status},
        {"status latency under queue load", queue_load},
        {"state machine property", state_machine},
        {"mock lifecycle with restart", mock_lifecycle},
        {"submit script goldens", goldens},
        {"exit code fidelity", exit_fidelity},
        {"minimal report stripping", minimal_uploads},
        {"plugin discovery", plugin_discovery},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        std::cout << (o.passed ? "PASS" : "FAIL") << " " << (i + 1) << " " << criteria[i].first << ": " << o.detail
                  << std::endl;
        failed += !o.passed;
    }
    return failed == 0 ? 0 : 1;
}
