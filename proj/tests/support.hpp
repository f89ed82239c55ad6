#pragma once

#include "portajob/batch_executor.hpp"
#include "portajob/core.hpp"
#include "portajob/dialect.hpp"
#include "portajob/errors.hpp"
#include "portajob/job.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <unistd.h>

namespace portajob::testing {

namespace fs = std::filesystem;

class TempDir {
public:
    TempDir() {
        std::string pattern = (fs::temp_directory_path() / "portajob-test-XXXXXX").string();
        if (!::mkdtemp(pattern.data())) {
            throw std::runtime_error("mkdtemp failed");
        }
        path_ = pattern;
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    std::string str() const { return path_.string(); }
    std::string operator/(const std::string& name) const { return (path_ / name).string(); }

private:
    fs::path path_;
};

inline std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline void write_file(const fs::path& p, const std::string& content) {
    std::ofstream(p, std::ios::binary | std::ios::trunc) << content;
}

inline JobSpec shell_spec(const std::string& script) {
    JobSpec spec;
    spec.executable = "/bin/sh";
    spec.arguments = {"-c", script};
    return spec;
}

inline ExecutorConfig mock_config(const TempDir& work, const fs::path& spool) {
    ExecutorConfig c;
    c.work_directory = work.str();
    c.command_environment["PORTAJOB_MOCK_SPOOL"] = spool.string();
    return c;
}

inline std::unique_ptr<BatchExecutor> make_mock(const ExecutorConfig& config) {
    return std::make_unique<BatchExecutor>("mock", BatchExecutor::executor_version, mock_dialect(), config);
}

// Randomized state-machine property run: each sequence feeds random target
// states to a job through transition() (direct edges, illegal ones must be
// rejected untouched) and advance() (synthesized paths). A listener checks
// rank monotonicity, that nothing leaves a final state, and exactly-once
// delivery of each state change.
struct PropertyStats {
    long sequences = 0;
    long updates = 0;
    long deliveries = 0;
    long rank_decreases = 0;
    long exits_from_final = 0;
    long duplicate_deliveries = 0;
    long missed_deliveries = 0;
    long illegal_accepted = 0;
};

inline PropertyStats run_state_machine_property(int sequences, std::uint64_t seed) {
    PropertyStats stats;
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pick_state(0, 5);
    std::uniform_int_distribution<int> pick_len(1, 12);
    std::bernoulli_distribution use_advance(0.5);
    std::bernoulli_distribution ran_flag(0.5);
    for (int s = 0; s < sequences; ++s) {
        auto job = std::make_shared<Job>(JobSpec{});
        std::vector<JobState> delivered;
        job->add_status_listener([&](Job&, const JobStatus& st) { delivered.push_back(st.state); });
        const int len = pick_len(rng);
        for (int i = 0; i < len; ++i) {
            const auto target = all_job_states[pick_state(rng)];
            const auto before = job->state();
            const auto count_before = delivered.size();
            ++stats.updates;
            if (use_advance(rng)) {
                job->advance(JobStatus(target), ran_flag(rng));
            } else {
                try {
                    const bool applied = job->transition(JobStatus(target));
                    if (applied && !is_legal_transition(before, target)) {
                        ++stats.illegal_accepted;
                    }
                } catch (const IllegalTransition&) {
                    if (job->state() != before || is_legal_transition(before, target)) {
                        ++stats.illegal_accepted;
                    }
                }
            }
            // Every change of state is delivered once; no change, no delivery.
            const auto after = job->state();
            const auto new_deliveries = delivered.size() - count_before;
            if (after != before && new_deliveries == 0) {
                ++stats.missed_deliveries;
            }
            if (after == before && new_deliveries != 0) {
                ++stats.duplicate_deliveries;
            }
            if (!delivered.empty() && delivered.back() != after) {
                ++stats.missed_deliveries;
            }
        }
        JobState prev = JobState::New;
        std::set<JobState> seen;
        for (auto st : delivered) {
            if (rank(st) < rank(prev)) {
                ++stats.rank_decreases;
            }
            if (is_final(prev)) {
                ++stats.exits_from_final;
            }
            if (!seen.insert(st).second) {
                ++stats.duplicate_deliveries;
            }
            prev = st;
        }
        stats.deliveries += static_cast<long>(delivered.size());
        ++stats.sequences;
    }
    return stats;
}

// Fixed inputs for the submit-script goldens.
inline constexpr const char* golden_job_id = "0f1e2d3c-4b5a-4697-8877-665544332211";
inline constexpr const char* golden_work_dir = "/work/portajob";

inline std::vector<std::pair<std::string, JobSpec>> golden_corpus() {
    std::vector<std::pair<std::string, JobSpec>> corpus;

    // The lattice QCD eigenvalue run from the reference example.
    JobSpec eigen;
    eigen.executable = "/opt/cps/bin/NOARCH.x";
    eigen.arguments = {"-qmp-geom", "8", "4", "4", "4", "do_arg.vml", "evo_arg.vml", "eig_arg.vml", "0.00", "Overlap"};
    eigen.stdout_path = "/home/user/run/eig.out";
    eigen.stderr_path = "/home/user/run/eig.err";
    eigen.resources.process_count = 512;
    eigen.launcher = "srun";
    corpus.emplace_back("eigensolver", eigen);

    JobSpec minimal;
    minimal.executable = "/bin/date";
    corpus.emplace_back("minimal", minimal);

    JobSpec walltime = minimal;
    walltime.attributes.duration = 3661;
    walltime.attributes.queue_name = "debug";
    corpus.emplace_back("walltime-queue", walltime);

    JobSpec project;
    project.executable = "hostname";
    project.attributes.project_name = "ABC123";
    project.attributes.duration = 59;
    corpus.emplace_back("project", project);

    JobSpec nodes;
    nodes.executable = "/opt/app/bin/solver";
    nodes.arguments = {"--input", "deck file.in"};
    nodes.resources.node_count = 4;
    nodes.resources.processes_per_node = 16;
    nodes.launcher = "mpirun";
    corpus.emplace_back("nodes-ppn-mpirun", nodes);

    JobSpec exclusive;
    exclusive.executable = "/opt/app/bin/solver";
    exclusive.resources.node_count = 2;
    exclusive.resources.exclusive_node_use = true;
    exclusive.resources.cpu_cores_per_process = 8;
    corpus.emplace_back("exclusive-cores", exclusive);

    JobSpec gpus;
    gpus.executable = "python3";
    gpus.arguments = {"train.py", "--epochs", "10"};
    gpus.resources.process_count = 4;
    gpus.resources.node_count = 1;
    gpus.resources.gpu_cores_per_process = 1;
    gpus.attributes.custom_attributes = {{"slurm.constraint", "gpu"}, {"pbs.place", "scatter"}, {"lsf.R", "rusage[ngpus_physical=4]"}};
    corpus.emplace_back("gpu-custom-attributes", gpus);

    JobSpec env;
    env.executable = "/bin/sh";
    env.arguments = {"-c", "echo \"$GREETING, $NAME\""};
    env.environment = {{"GREETING", "hello"}, {"NAME", "it's me"}};
    env.directory = "/scratch/run 1";
    corpus.emplace_back("environment-directory", env);

    JobSpec streams;
    streams.executable = "/usr/bin/env";
    streams.stdin_path = "/data/in.txt";
    streams.stdout_path = "/data/both.log";
    streams.stderr_path = "/data/both.log";
    corpus.emplace_back("merged-streams", streams);

    JobSpec hooks;
    hooks.executable = "./simulate";
    hooks.pre_launch = "/opt/site/setup.sh";
    hooks.post_launch = "cleanup.sh";
    hooks.resources.process_count = 3;
    hooks.launcher = "multiple";
    corpus.emplace_back("hooks-multiple", hooks);

    JobSpec reservation;
    reservation.executable = "/opt/app/bin/solver";
    reservation.attributes.reservation_id = "maint_window";
    reservation.attributes.duration = 7200;
    reservation.resources.node_count = 8;
    reservation.resources.process_count = 256;
    reservation.launcher = "jsrun";
    corpus.emplace_back("reservation-jsrun", reservation);

    return corpus;
}

inline std::vector<std::string> golden_dialects() {
    return {"slurm", "pbs", "lsf", "mock"};
}

inline std::string golden_path(const std::string& dir, const std::string& dialect, const std::string& name) {
    return dir + "/" + dialect + "/" + name + ".job";
}

inline std::string render_golden(const std::string& dialect_name, const JobSpec& spec) {
    auto dialect = *builtin_dialect(dialect_name);
    return render_submit_script({golden_job_id, spec, golden_work_dir}, dialect);
}

} // namespace portajob::testing
