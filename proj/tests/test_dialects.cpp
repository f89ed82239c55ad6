#include "portajob/errors.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

using namespace portajob;
using namespace portajob::testing;

TEST(NativeId, ContractTrimsWhitespace) {
    EXPECT_EQ(parse_native_id("42\n", mock_dialect()), "42");
    EXPECT_EQ(parse_native_id("  7  \n", mock_dialect()), "7");
}

TEST(NativeId, Slurm) {
    EXPECT_EQ(parse_native_id("Submitted batch job 123\n", slurm_dialect()), "123");
    EXPECT_EQ(parse_native_id("sbatch: warning\nSubmitted batch job 9\n", slurm_dialect()), "9");
}

TEST(NativeId, PbsKeepsServerSuffix) {
    EXPECT_EQ(parse_native_id("1234.pbs01\n", pbs_dialect()), "1234.pbs01");
    EXPECT_EQ(parse_native_id("77\n", pbs_dialect()), "77");
}

TEST(NativeId, Lsf) {
    EXPECT_EQ(parse_native_id("Job <5150> is submitted to queue <normal>.\n", lsf_dialect()), "5150");
}

TEST(NativeId, EmptyOrGarbageThrowsWithOutput) {
    for (const auto& d : {slurm_dialect(), pbs_dialect(), lsf_dialect(), mock_dialect()}) {
        EXPECT_THROW(parse_native_id("", d), NativeIdParseError) << d.name;
        try {
            parse_native_id("error: something odd happened", d);
            if (d.name != "mock") {
                ADD_FAILURE() << d.name << " accepted garbage";
            }
        } catch (const NativeIdParseError& e) {
            EXPECT_NE(std::string(e.what()).find("something odd"), std::string::npos);
        }
    }
}

TEST(StateMap, SlurmCodes) {
    const auto d = slurm_dialect();
    EXPECT_EQ(map_state(d, "PENDING"), InterimState::Pending);
    EXPECT_EQ(map_state(d, "RUNNING"), InterimState::Running);
    EXPECT_EQ(map_state(d, "COMPLETED"), InterimState::Done);
    EXPECT_EQ(map_state(d, "TIMEOUT"), InterimState::FailedLrm);
    EXPECT_EQ(map_state(d, "CANCELLED"), InterimState::CanceledLrm);
    EXPECT_EQ(map_state(d, "MADE_UP"), InterimState::Unknown);
}

TEST(StateMap, EveryDocumentedCodeIsMapped) {
    const std::map<std::string, std::vector<std::string>> documented = {
        {"slurm", {"PENDING", "CONFIGURING", "RUNNING", "COMPLETING", "SUSPENDED", "COMPLETED", "FAILED", "TIMEOUT",
                   "NODE_FAIL", "BOOT_FAIL", "DEADLINE", "OUT_OF_MEMORY", "PREEMPTED", "CANCELLED", "REQUEUED"}},
        {"pbs", {"Q", "H", "W", "T", "M", "R", "E", "B", "S", "U", "F", "X"}},
        {"lsf", {"PEND", "PSUSP", "RUN", "USUSP", "SSUSP", "DONE", "EXIT", "ZOMBI"}},
        {"mock", {"Q", "R", "CD", "F", "CA"}},
    };
    for (const auto& [name, codes] : documented) {
        const auto d = *builtin_dialect(name);
        for (const auto& code : codes) {
            EXPECT_NE(map_state(d, code), InterimState::Unknown) << name << " " << code;
        }
    }
}

TEST(StatusRows, Slurm) {
    const auto d = slurm_dialect();
    const auto row = d.status_row_parser("123 RUNNING");
    ASSERT_TRUE(row);
    EXPECT_EQ(row->native_id, "123");
    EXPECT_EQ(row->state, InterimState::Running);
    EXPECT_FALSE(d.status_row_parser(""));
}

TEST(StatusRows, PbsSkipsHeader) {
    const auto d = pbs_dialect();
    EXPECT_FALSE(d.status_row_parser("Job id            Name             User              Time Use S Queue"));
    EXPECT_FALSE(d.status_row_parser("----------------  ---------------- ----------------  -------- - -----"));
    const auto row = d.status_row_parser("1234.pbs01        portajob-0f1e2d  alice             00:00:01 R workq");
    ASSERT_TRUE(row);
    EXPECT_EQ(row->native_id, "1234.pbs01");
    EXPECT_EQ(row->state, InterimState::Running);
}

TEST(StatusRows, LsfExitCode) {
    const auto row = lsf_dialect().status_row_parser("5150 EXIT 3");
    ASSERT_TRUE(row);
    EXPECT_EQ(row->state, InterimState::FailedLrm);
    EXPECT_EQ(row->exit_code, 3);
}

TEST(StatusRows, ContractMessageAndUnknown) {
    const auto d = contract_dialect("x", {"helper"});
    const auto done = d.status_row_parser("4 CD exit=0");
    ASSERT_TRUE(done);
    EXPECT_EQ(done->state, InterimState::Done);
    EXPECT_EQ(done->exit_code, 0);
    EXPECT_EQ(done->message, "exit=0");
    const auto unknown = d.status_row_parser("9 U unknown");
    ASSERT_TRUE(unknown);
    EXPECT_FALSE(unknown->known);
}

TEST(Commands, StatusIsOneCommandForAllIds) {
    const std::vector<std::string> ids = {"1", "2", "3"};
    EXPECT_EQ(slurm_dialect().status_command(ids).back(), "--jobs=1,2,3");
    const auto contract = contract_dialect("x", {"helper", "--flag"}).status_command(ids);
    EXPECT_EQ(contract, (std::vector<std::string>{"helper", "--flag", "status", "1", "2", "3"}));
}

TEST(Commands, ContractSubmitAndCancel) {
    const auto d = contract_dialect("x", {"helper"});
    EXPECT_EQ(d.submit_command("/w/a.job"), (std::vector<std::string>{"helper", "submit", "/w/a.job"}));
    EXPECT_EQ(d.cancel_command("5"), (std::vector<std::string>{"helper", "cancel", "5"}));
}

TEST(Script, CustomAttributesFilteredByNamespace) {
    JobSpec spec;
    spec.executable = "/bin/true";
    spec.attributes.custom_attributes = {{"slurm.constraint", "gpu"}, {"pbs.place", "scatter"}, {"slurm.", "x"}};
    const auto slurm = render_golden("slurm", spec);
    EXPECT_NE(slurm.find("#SBATCH --constraint=gpu"), std::string::npos);
    EXPECT_EQ(slurm.find("scatter"), std::string::npos);
    const auto pbs = render_golden("pbs", spec);
    EXPECT_NE(pbs.find("scatter"), std::string::npos);
    EXPECT_EQ(pbs.find("constraint"), std::string::npos);
}

TEST(Script, DeterministicAndEndsWithLauncher) {
    for (const auto& [name, spec] : golden_corpus()) {
        for (const auto& dialect : golden_dialects()) {
            const auto a = render_golden(dialect, spec);
            EXPECT_EQ(a, render_golden(dialect, spec)) << dialect << "/" << name;
            EXPECT_NE(a.find("exec /bin/sh /work/portajob/" + std::string(golden_job_id) + ".launch\n"),
                      std::string::npos)
                << a;
        }
    }
}

TEST(Script, DurationFormats) {
    JobSpec spec;
    spec.executable = "/bin/true";
    spec.attributes.duration = 3661;
    EXPECT_NE(render_golden("slurm", spec).find("--time=01:01:01"), std::string::npos);
    EXPECT_NE(render_golden("lsf", spec).find("-W 62"), std::string::npos);
    EXPECT_NE(render_golden("mock", spec).find("--time=3661"), std::string::npos);
}

TEST(Script, EnvironmentIsQuoted) {
    JobSpec spec;
    spec.executable = "/bin/true";
    spec.environment = {{"NAME", "it's me"}};
    EXPECT_NE(render_golden("slurm", spec).find("export NAME='it'\\''s me'"), std::string::npos);
}
