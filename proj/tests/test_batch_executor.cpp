#include "portajob/batch_executor.hpp"
#include "portajob/errors.hpp"
#include "portajob/mock_lrm.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <thread>

using namespace portajob;
using namespace portajob::testing;

namespace {

constexpr auto timeout = std::chrono::seconds(30);

// Config with a poller that never fires on its own, so cycles are explicit.
ExecutorConfig manual(const TempDir& work, const fs::path& spool) {
    auto c = mock_config(work, spool);
    c.poll_interval = std::chrono::hours(1);
    return c;
}

void cycle_until_final(BatchExecutor& ex, const JobPtr& job, int max_cycles = 2000) {
    for (int i = 0; i < max_cycles && !is_final(job->state()); ++i) {
        ex.poll_cycle();
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
}

// A contract helper whose behaviour is a shell snippet.
std::string fake_helper(const TempDir& dir, const std::string& body) {
    const auto path = dir / "helper.sh";
    write_file(path, "#!/bin/sh\ncmd=$1; shift\n" + body + "\n");
    fs::permissions(path, fs::perms::owner_all);
    return path;
}

} // namespace

class Batch : public ::testing::Test {
protected:
    TempDir work;
    TempDir spool_root;
    fs::path spool = spool_root.path() / "spool";
};

TEST_F(Batch, SubmitWritesScriptsAndQueues) {
    auto ex = make_mock(manual(work, spool));
    auto job = Job::create(shell_spec("true"));
    ex->submit(job);
    EXPECT_EQ(job->native_id(), "1");
    EXPECT_EQ(job->state(), JobState::Queued);
    EXPECT_TRUE(fs::exists(submit_script_path(work.str(), job->id())));
    EXPECT_TRUE(fs::exists(launcher_script_path(work.str(), job->id())));
    EXPECT_EQ(read_file(submit_script_path(work.str(), job->id())), ex->generate_submit_script(*job));
}

TEST_F(Batch, RejectedQueueFailsJob) {
    mock::Spool(spool).set_config(mock::parse_config("reject_queues = [\"badq\"]"));
    auto ex = make_mock(manual(work, spool));
    auto spec = shell_spec("true");
    spec.attributes.queue_name = "badq";
    auto job = Job::create(spec);
    try {
        ex->submit(job);
        FAIL();
    } catch (const SubmitFailed& e) {
        EXPECT_NE(std::string(e.what()).find("badq"), std::string::npos);
    }
    EXPECT_EQ(job->state(), JobState::Failed);
    EXPECT_NE(job->status().message->find("does not accept jobs"), std::string::npos);
}

TEST_F(Batch, CompletesWithExitCodes) {
    auto c = mock_config(work, spool);
    auto ex = make_mock(c);
    std::vector<JobPtr> jobs;
    for (int code : {0, 1, 3, 127, 255}) {
        jobs.push_back(Job::create(shell_spec("exit " + std::to_string(code))));
        ex->submit(jobs.back());
    }
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        const auto s = jobs[i]->wait(timeout);
        const int expected = std::vector<int>{0, 1, 3, 127, 255}[i];
        EXPECT_EQ(s.exit_code, expected);
        EXPECT_EQ(s.state, expected == 0 ? JobState::Completed : JobState::Failed);
    }
}

TEST_F(Batch, OneStatusCommandPerCycle) {
    auto ex = make_mock(manual(work, spool));
    std::vector<JobPtr> jobs;
    for (int i = 0; i < 20; ++i) {
        jobs.push_back(Job::create(shell_spec("sleep 60")));
        ex->submit(jobs.back());
    }
    mock::Spool s(spool);
    const auto before = s.counters().status;
    for (int i = 0; i < 5; ++i) {
        ex->poll_cycle();
    }
    EXPECT_EQ(s.counters().status - before, 5u);
    EXPECT_EQ(ex->status_commands_issued(), 5u);
    for (const auto& j : jobs) {
        ex->cancel(j);
    }
    ex->poll_cycle();
    for (const auto& j : jobs) {
        EXPECT_EQ(j->state(), JobState::Canceled);
    }
}

TEST_F(Batch, NoCommandWithoutLiveJobs) {
    auto ex = make_mock(manual(work, spool));
    for (int i = 0; i < 3; ++i) {
        EXPECT_TRUE(ex->poll_cycle().empty());
    }
    EXPECT_EQ(ex->status_commands_issued(), 0u);
    EXPECT_EQ(mock::Spool(spool).counters().status, 0u);
}

TEST_F(Batch, DroppedJobResolvedFromSidecar) {
    auto ex = make_mock(manual(work, spool));
    auto job = Job::create(shell_spec("true"));
    ex->submit(job);
    mock::Spool s(spool);
    // Let the job finish, then have the scheduler stop reporting it.
    for (int i = 0; i < 500 && !read_exit_code_file(sidecar_path(work.str(), job->id())); ++i) {
        s.tick();
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    ASSERT_EQ(ex->read_exit_code(*job), 0);
    mock::MockConfig c;
    c.drop_after_done = true;
    s.set_config(c);
    ex->poll_cycle();
    EXPECT_EQ(job->state(), JobState::Queued);
    ex->poll_cycle();
    EXPECT_EQ(job->state(), JobState::Completed);
    EXPECT_EQ(job->status().exit_code, 0);
}

TEST_F(Batch, PurgedJobIsUnknown) {
    mock::MockConfig c;
    c.schedule_delay_min_ms = c.schedule_delay_max_ms = 3'600'000;
    mock::Spool s(spool);
    s.set_config(c);
    auto ex = make_mock(manual(work, spool));
    auto job = Job::create(shell_spec("true"));
    ex->submit(job);
    s.remove_job(1);
    ex->poll_cycle();
    EXPECT_EQ(job->state(), JobState::Failed);
    EXPECT_EQ(job->status().message, "unknown to scheduler");
}

TEST(ReadExitCode, Cases) {
    TempDir dir;
    EXPECT_EQ(read_exit_code_file(dir / "missing"), std::nullopt);
    write_file(dir / "a", "0\n");
    EXPECT_EQ(read_exit_code_file(dir / "a"), 0);
    write_file(dir / "b", "  255 \n");
    EXPECT_EQ(read_exit_code_file(dir / "b"), 255);
    write_file(dir / "c", "banana");
    EXPECT_EQ(read_exit_code_file(dir / "c"), std::nullopt);
    write_file(dir / "d", "");
    EXPECT_EQ(read_exit_code_file(dir / "d"), std::nullopt);
    write_file(dir / "e", "12abc");
    EXPECT_EQ(read_exit_code_file(dir / "e"), std::nullopt);
}

TEST_F(Batch, CancelQueuedJob) {
    mock::MockConfig c;
    c.schedule_delay_min_ms = c.schedule_delay_max_ms = 3'600'000;
    mock::Spool(spool).set_config(c);
    auto ex = make_mock(mock_config(work, spool));
    auto job = Job::create(shell_spec("true"));
    ex->submit(job);
    ex->cancel(job);
    EXPECT_EQ(job->wait(timeout).state, JobState::Canceled);
}

TEST_F(Batch, CancelRaceWithCompletionIsAbsorbed) {
    auto ex = make_mock(manual(work, spool));
    auto job = Job::create(shell_spec("true"));
    ex->submit(job);
    mock::Spool s(spool);
    for (int i = 0; i < 500 && s.job(1)->code != "CD"; ++i) {
        s.tick();
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    ASSERT_EQ(s.job(1)->code, "CD");
    EXPECT_NO_THROW(ex->cancel(job));
    cycle_until_final(*ex, job);
    EXPECT_EQ(job->state(), JobState::Completed);
}

TEST_F(Batch, CancelOfFinalJobThrowsTerminalState) {
    auto ex = make_mock(mock_config(work, spool));
    auto job = Job::create(shell_spec("true"));
    ex->submit(job);
    job->wait(timeout);
    EXPECT_THROW(ex->cancel(job), TerminalState);
}

TEST_F(Batch, SchedulerDownCancelFails) {
    TempDir dir;
    const auto helper = fake_helper(dir, "case $cmd in submit) echo 5;; cancel) echo 'connection refused' >&2; exit 1;; "
                                         "status) for i in \"$@\"; do echo \"$i Q\"; done;; esac");
    ExecutorConfig c;
    c.work_directory = work.str();
    c.poll_interval = std::chrono::hours(1);
    BatchExecutor ex("fake", {1, 0, 0}, contract_dialect("fake", {helper}), c);
    auto job = Job::create(shell_spec("true"));
    ex.submit(job);
    try {
        ex.cancel(job);
        FAIL();
    } catch (const CancelFailed& e) {
        EXPECT_NE(std::string(e.what()).find("connection refused"), std::string::npos);
    }
    ex.poll_cycle();
    EXPECT_EQ(job->state(), JobState::Queued);
}

TEST_F(Batch, UnreachableSchedulerFailsJobsAfterThreshold) {
    TempDir dir;
    const auto helper = fake_helper(dir, "case $cmd in submit) echo 5;; *) echo 'down' >&2; exit 1;; esac");
    ExecutorConfig c;
    c.work_directory = work.str();
    c.poll_interval = std::chrono::hours(1);
    BatchExecutor ex("fake", {1, 0, 0}, contract_dialect("fake", {helper}), c);
    auto job = Job::create(shell_spec("true"));
    ex.submit(job);
    for (int i = 0; i < 9; ++i) {
        ex.poll_cycle();
        ASSERT_EQ(job->state(), JobState::Queued) << "cycle " << i;
    }
    ex.poll_cycle();
    EXPECT_EQ(job->state(), JobState::Failed);
    EXPECT_EQ(job->status().message, "scheduler unreachable");
    EXPECT_NE(job->status().metadata.at("detail").find("down"), std::string::npos);
}

TEST_F(Batch, UnparseableSubmitOutput) {
    TempDir dir;
    const auto helper = fake_helper(dir, "echo");
    ExecutorConfig c;
    c.work_directory = work.str();
    BatchExecutor ex("fake", {1, 0, 0}, contract_dialect("fake", {helper}), c);
    auto job = Job::create(shell_spec("true"));
    EXPECT_THROW(ex.submit(job), SubmitFailed);
    EXPECT_EQ(job->state(), JobState::Failed);
}

TEST_F(Batch, MissingSubmitCommand) {
    ExecutorConfig c;
    c.work_directory = work.str();
    BatchExecutor ex("fake", {1, 0, 0}, contract_dialect("fake", {"/no/such/helper"}), c);
    auto job = Job::create(shell_spec("true"));
    EXPECT_THROW(ex.submit(job), SubmitFailed);
    EXPECT_EQ(job->state(), JobState::Failed);
}

TEST_F(Batch, CrashRecoveryByAttach) {
    std::vector<std::pair<std::string, std::string>> handles;
    {
        auto ex = make_mock(manual(work, spool));
        for (int i = 0; i < 5; ++i) {
            auto job = Job::create(shell_spec("sleep 0.3; exit " + std::to_string(i)));
            ex->submit(job);
            handles.emplace_back(job->id(), *job->native_id());
        }
    }
    auto ex = make_mock(mock_config(work, spool));
    std::vector<JobPtr> restored;
    for (const auto& [id, native] : handles) {
        restored.push_back(std::make_shared<Job>(id, std::nullopt));
        ex->attach(restored.back(), native);
    }
    for (int i = 0; i < 5; ++i) {
        const auto s = restored[i]->wait(timeout);
        EXPECT_EQ(s.exit_code, i);
        EXPECT_EQ(s.state, i == 0 ? JobState::Completed : JobState::Failed);
    }
}

TEST_F(Batch, AttachUnknownIdFails) {
    auto ex = make_mock(manual(work, spool));
    auto job = std::make_shared<Job>();
    ex->attach(job, "9999");
    ex->poll_cycle();
    EXPECT_EQ(job->state(), JobState::Failed);
    EXPECT_EQ(job->status().message, "unknown to scheduler");
}

TEST_F(Batch, LaunchModeNoneRejected) {
    auto c = mock_config(work, spool);
    c.launch_mode = LaunchMode::None;
    EXPECT_THROW(make_mock(c), Error);
}

TEST_F(Batch, PluginFactoryWithDialect) {
    PluginManifest m;
    m.name = "mysite";
    m.version = {2, 1, 0};
    m.dialect = "slurm";
    ExecutorConfig c;
    c.work_directory = work.str();
    auto ex = plugin_executor_factory(m, work.path())(c);
    EXPECT_EQ(ex->name(), "mysite");
    EXPECT_EQ(ex->version(), (SemVer{2, 1, 0}));
    auto* batch = dynamic_cast<BatchExecutor*>(ex.get());
    ASSERT_NE(batch, nullptr);
    EXPECT_EQ(batch->dialect().submit_command("x")[0], "sbatch");
}
