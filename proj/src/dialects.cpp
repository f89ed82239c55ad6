#include "portajob/dialect.hpp"

#include "portajob/errors.hpp"
#include "portajob/launchers.hpp"
#include "portajob/process.hpp"

#include <cstdlib>
#include <filesystem>
#include <regex>
#include <sstream>

namespace portajob {

namespace {

std::vector<std::string> split_ws(std::string_view line) {
    std::vector<std::string> out;
    std::stringstream in{std::string(line)};
    std::string tok;
    while (in >> tok) {
        out.push_back(tok);
    }
    return out;
}

std::string join(const std::vector<std::string>& items, const std::string& sep) {
    std::string out;
    for (const auto& i : items) {
        if (!out.empty()) {
            out += sep;
        }
        out += i;
    }
    return out;
}

std::optional<int> parse_int(const std::string& s) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(s, &used);
        if (used == s.size()) {
            return v;
        }
    } catch (const std::exception&) {
    }
    return std::nullopt;
}

// ---- submit templates ------------------------------------------------------
// Directive spellings follow each scheduler's public submit documentation.

constexpr const char* script_tail = R"(
{{#environment}}export {{name}}={{value}}
{{/environment}}{{#directory}}cd {{directory}} || exit 1
{{/directory}}exec /bin/sh {{launcher_script}}
)";

constexpr const char* slurm_directives = R"(#!/bin/sh
#SBATCH --job-name={{job_name}}
#SBATCH --output={{script_stdout}}
#SBATCH --error={{script_stderr}}
{{#queue_name}}#SBATCH --partition={{queue_name}}
{{/queue_name}}{{#project_name}}#SBATCH --account={{project_name}}
{{/project_name}}{{#reservation_id}}#SBATCH --reservation={{reservation_id}}
{{/reservation_id}}{{#duration}}#SBATCH --time={{duration_hms}}
{{/duration}}{{#node_count}}#SBATCH --nodes={{node_count}}
{{/node_count}}{{#process_count}}#SBATCH --ntasks={{process_count}}
{{/process_count}}{{#processes_per_node}}#SBATCH --ntasks-per-node={{processes_per_node}}
{{/processes_per_node}}{{#cpu_cores_per_process}}#SBATCH --cpus-per-task={{cpu_cores_per_process}}
{{/cpu_cores_per_process}}{{#gpu_cores_per_process}}#SBATCH --gpus-per-task={{gpu_cores_per_process}}
{{/gpu_cores_per_process}}{{#exclusive}}#SBATCH --exclusive
{{/exclusive}}{{#custom}}#SBATCH --{{key}}={{value}}
{{/custom}})";

constexpr const char* pbs_directives = R"(#!/bin/sh
#PBS -N {{job_name}}
#PBS -o {{script_stdout}}
#PBS -e {{script_stderr}}
{{#queue_name}}#PBS -q {{queue_name}}
{{/queue_name}}{{^queue_name}}{{#reservation_id}}#PBS -q {{reservation_id}}
{{/reservation_id}}{{/queue_name}}{{#project_name}}#PBS -A {{project_name}}
{{/project_name}}{{#duration}}#PBS -l walltime={{duration_hms}}
{{/duration}}{{#node_count}}#PBS -l select={{node_count}}{{#processes_per_node}}:mpiprocs={{processes_per_node}}{{/processes_per_node}}{{#cores_per_node}}:ncpus={{cores_per_node}}{{/cores_per_node}}{{#gpus_per_node}}:ngpus={{gpus_per_node}}{{/gpus_per_node}}
{{/node_count}}{{^node_count}}{{#process_count}}#PBS -l select={{process_count}}:mpiprocs=1{{#cpu_cores_per_process}}:ncpus={{cpu_cores_per_process}}{{/cpu_cores_per_process}}{{#gpu_cores_per_process}}:ngpus={{gpu_cores_per_process}}{{/gpu_cores_per_process}}
{{/process_count}}{{/node_count}}{{#exclusive}}#PBS -l place=scatter:excl
{{/exclusive}}{{#custom}}#PBS -l {{key}}={{value}}
{{/custom}})";

constexpr const char* lsf_directives = R"(#!/bin/sh
#BSUB -J {{job_name}}
#BSUB -o {{script_stdout}}
#BSUB -e {{script_stderr}}
{{#queue_name}}#BSUB -q {{queue_name}}
{{/queue_name}}{{#project_name}}#BSUB -P {{project_name}}
{{/project_name}}{{#reservation_id}}#BSUB -U {{reservation_id}}
{{/reservation_id}}{{#duration}}#BSUB -W {{duration_minutes}}
{{/duration}}{{#node_count}}#BSUB -nnodes {{node_count}}
{{/node_count}}{{#process_count}}#BSUB -n {{process_count}}
{{/process_count}}{{#processes_per_node}}#BSUB -R "span[ptile={{processes_per_node}}]"
{{/processes_per_node}}{{#exclusive}}#BSUB -x
{{/exclusive}}{{#custom}}#BSUB -{{key}} {{value}}
{{/custom}})";

constexpr const char* contract_directives = R"(#!/bin/sh
#PJ --job-name={{job_name}}
#PJ --output={{script_stdout}}
#PJ --error={{script_stderr}}
{{#queue_name}}#PJ --queue={{queue_name}}
{{/queue_name}}{{#project_name}}#PJ --project={{project_name}}
{{/project_name}}{{#reservation_id}}#PJ --reservation={{reservation_id}}
{{/reservation_id}}{{#duration}}#PJ --time={{duration_seconds}}
{{/duration}}{{#node_count}}#PJ --nodes={{node_count}}
{{/node_count}}{{#process_count}}#PJ --processes={{process_count}}
{{/process_count}}{{#processes_per_node}}#PJ --processes-per-node={{processes_per_node}}
{{/processes_per_node}}{{#cpu_cores_per_process}}#PJ --cpus-per-process={{cpu_cores_per_process}}
{{/cpu_cores_per_process}}{{#gpu_cores_per_process}}#PJ --gpus-per-process={{gpu_cores_per_process}}
{{/gpu_cores_per_process}}{{#exclusive}}#PJ --exclusive
{{/exclusive}}{{#custom}}#PJ --{{key}}={{value}}
{{/custom}})";

std::map<std::string, InterimState> slurm_states() {
    using I = InterimState;
    return {
        {"PENDING", I::Pending},       {"CONFIGURING", I::Pending},   {"REQUEUED", I::Pending},
        {"REQUEUE_HOLD", I::Pending},  {"REQUEUE_FED", I::Pending},   {"RESV_DEL_HOLD", I::Pending},
        {"RUNNING", I::Running},       {"COMPLETING", I::Running},    {"SUSPENDED", I::Running},
        {"STOPPED", I::Running},       {"SIGNALING", I::Running},     {"RESIZING", I::Running},
        {"STAGE_OUT", I::Running},     {"COMPLETED", I::Done},        {"FAILED", I::FailedLrm},
        {"TIMEOUT", I::FailedLrm},     {"NODE_FAIL", I::FailedLrm},   {"BOOT_FAIL", I::FailedLrm},
        {"DEADLINE", I::FailedLrm},    {"OUT_OF_MEMORY", I::FailedLrm}, {"PREEMPTED", I::FailedLrm},
        {"SPECIAL_EXIT", I::FailedLrm}, {"REVOKED", I::FailedLrm},    {"CANCELLED", I::CanceledLrm},
    };
}

std::map<std::string, InterimState> pbs_states() {
    using I = InterimState;
    return {
        {"Q", I::Pending}, {"H", I::Pending}, {"W", I::Pending}, {"T", I::Pending}, {"M", I::Pending},
        {"R", I::Running}, {"E", I::Running}, {"B", I::Running}, {"S", I::Running}, {"U", I::Running},
        {"F", I::Done},    {"X", I::Done},
    };
}

std::map<std::string, InterimState> lsf_states() {
    using I = InterimState;
    return {
        {"PEND", I::Pending},  {"PSUSP", I::Pending}, {"WAIT", I::Pending},   {"RUN", I::Running},
        {"USUSP", I::Running}, {"SSUSP", I::Running}, {"PROV", I::Running},   {"DONE", I::Done},
        {"EXIT", I::FailedLrm}, {"ZOMBI", I::FailedLrm},
    };
}

std::map<std::string, InterimState> contract_states() {
    using I = InterimState;
    return {{"Q", I::Pending}, {"R", I::Running}, {"CD", I::Done}, {"F", I::FailedLrm}, {"CA", I::CanceledLrm}};
}

} // namespace

std::string_view to_string(InterimState state) {
    switch (state) {
    case InterimState::Pending: return "PENDING";
    case InterimState::Running: return "RUNNING";
    case InterimState::Done: return "DONE";
    case InterimState::FailedLrm: return "FAILED_LRM";
    case InterimState::CanceledLrm: return "CANCELED_LRM";
    case InterimState::Unknown: return "UNKNOWN";
    }
    return "?";
}

InterimState map_state(const SchedulerDialect& dialect, const std::string& code) {
    const auto it = dialect.state_map.find(code);
    return it == dialect.state_map.end() ? InterimState::Unknown : it->second;
}

std::string parse_native_id(std::string_view submit_stdout, const SchedulerDialect& dialect) {
    const std::regex pattern(dialect.native_id_pattern);
    std::string text(submit_stdout);
    std::smatch m;
    if (!std::regex_search(text, m, pattern) || m.size() < 2 || !m[1].matched) {
        throw NativeIdParseError("cannot find a " + dialect.name + " job id in submit output: '" + text + "'");
    }
    std::string id = m[1].str();
    const auto b = id.find_first_not_of(" \t\r\n");
    const auto e = id.find_last_not_of(" \t\r\n");
    if (b == std::string::npos) {
        throw NativeIdParseError("empty " + dialect.name + " job id in submit output: '" + text + "'");
    }
    return id.substr(b, e - b + 1);
}

SchedulerDialect slurm_dialect() {
    SchedulerDialect d;
    d.name = "slurm";
    d.attribute_namespace = "slurm";
    d.submit_template = std::string(slurm_directives) + script_tail;
    d.submit_command = [](const std::string& script) { return std::vector<std::string>{"sbatch", script}; };
    d.native_id_pattern = R"(Submitted batch job (\d+))";
    d.status_command = [](const std::vector<std::string>& ids) {
        return std::vector<std::string>{"squeue", "--noheader", "--format=%i %T", "--jobs=" + join(ids, ",")};
    };
    d.state_map = slurm_states();
    d.status_row_parser = [states = d.state_map](std::string_view line) -> std::optional<StatusRow> {
        auto tok = split_ws(line);
        if (tok.size() < 2) {
            return std::nullopt;
        }
        StatusRow row;
        row.native_id = tok[0];
        row.code = tok[1];
        auto it = states.find(row.code);
        row.state = it == states.end() ? InterimState::Unknown : it->second;
        return row;
    };
    d.cancel_command = [](const std::string& id) { return std::vector<std::string>{"scancel", id}; };
    d.cancel_absorb_pattern = "already completed|already finished|Invalid job id";
    return d;
}

SchedulerDialect pbs_dialect() {
    SchedulerDialect d;
    d.name = "pbs";
    d.attribute_namespace = "pbs";
    d.submit_template = std::string(pbs_directives) + script_tail;
    d.submit_command = [](const std::string& script) { return std::vector<std::string>{"qsub", script}; };
    d.native_id_pattern = R"(^\s*([0-9]+(?:\.[^\s]+)?)\s*$)";
    d.status_command = [](const std::vector<std::string>& ids) {
        std::vector<std::string> argv{"qstat", "-x"};
        argv.insert(argv.end(), ids.begin(), ids.end());
        return argv;
    };
    d.state_map = pbs_states();
    // Default qstat table: Job id, Name, User, Time Use, S, Queue.
    d.status_row_parser = [states = d.state_map](std::string_view line) -> std::optional<StatusRow> {
        auto tok = split_ws(line);
        if (tok.size() < 6 || tok[0] == "Job" || tok[0].rfind("---", 0) == 0) {
            return std::nullopt;
        }
        StatusRow row;
        row.native_id = tok[0];
        row.code = tok[4];
        auto it = states.find(row.code);
        row.state = it == states.end() ? InterimState::Unknown : it->second;
        return row;
    };
    d.cancel_command = [](const std::string& id) { return std::vector<std::string>{"qdel", id}; };
    d.cancel_absorb_pattern = "finished|Unknown Job Id";
    return d;
}

SchedulerDialect lsf_dialect() {
    SchedulerDialect d;
    d.name = "lsf";
    d.attribute_namespace = "lsf";
    d.submit_template = std::string(lsf_directives) + script_tail;
    // bsub reads #BSUB directives only from a script on stdin.
    d.submit_command = [](const std::string& script) {
        return std::vector<std::string>{"/bin/sh", "-c", "exec bsub < \"$0\"", script};
    };
    d.native_id_pattern = R"(Job <(\d+)> is submitted)";
    d.status_command = [](const std::vector<std::string>& ids) {
        std::vector<std::string> argv{"bjobs", "-noheader", "-o", "jobid stat exit_code"};
        argv.insert(argv.end(), ids.begin(), ids.end());
        return argv;
    };
    d.state_map = lsf_states();
    d.status_row_parser = [states = d.state_map](std::string_view line) -> std::optional<StatusRow> {
        auto tok = split_ws(line);
        if (tok.size() < 2) {
            return std::nullopt;
        }
        StatusRow row;
        row.native_id = tok[0];
        row.code = tok[1];
        auto it = states.find(row.code);
        row.state = it == states.end() ? InterimState::Unknown : it->second;
        if (tok.size() >= 3) {
            row.exit_code = parse_int(tok[2]);
        }
        return row;
    };
    d.cancel_command = [](const std::string& id) { return std::vector<std::string>{"bkill", id}; };
    d.cancel_absorb_pattern = "already finished";
    return d;
}

SchedulerDialect contract_dialect(std::string name, std::vector<std::string> prefix) {
    SchedulerDialect d;
    d.name = name;
    d.attribute_namespace = name;
    d.submit_template = std::string(contract_directives) + script_tail;
    d.submit_command = [prefix](const std::string& script) {
        auto argv = prefix;
        argv.insert(argv.end(), {"submit", script});
        return argv;
    };
    d.native_id_pattern = R"(^\s*(\S+)\s*$)";
    d.status_command = [prefix](const std::vector<std::string>& ids) {
        auto argv = prefix;
        argv.push_back("status");
        argv.insert(argv.end(), ids.begin(), ids.end());
        return argv;
    };
    d.state_map = contract_states();
    d.status_row_parser = [states = d.state_map](std::string_view line) -> std::optional<StatusRow> {
        auto tok = split_ws(line);
        if (tok.size() < 2) {
            return std::nullopt;
        }
        StatusRow row;
        row.native_id = tok[0];
        row.code = tok[1];
        if (row.code == "U") {
            row.known = false;
        }
        auto it = states.find(row.code);
        row.state = it == states.end() ? InterimState::Unknown : it->second;
        if (tok.size() > 2) {
            std::string msg;
            for (std::size_t i = 2; i < tok.size(); ++i) {
                msg += (i > 2 ? " " : "") + tok[i];
                if (tok[i].rfind("exit=", 0) == 0) {
                    row.exit_code = parse_int(tok[i].substr(5));
                }
            }
            row.message = msg;
        }
        return row;
    };
    d.cancel_command = [prefix](const std::string& id) {
        auto argv = prefix;
        argv.insert(argv.end(), {"cancel", id});
        return argv;
    };
    d.cancel_absorb_pattern = "already completed";
    d.default_poll_interval = std::chrono::milliseconds(100);
    return d;
}

std::string mock_command() {
    if (const char* env = std::getenv("PORTAJOB_MOCK_COMMAND"); env && *env) {
        return env;
    }
    std::error_code ec;
    const auto self = std::filesystem::read_symlink("/proc/self/exe", ec);
    if (!ec) {
        const auto sibling = self.parent_path() / "portajob-mock";
        if (std::filesystem::exists(sibling, ec)) {
            return sibling.string();
        }
    }
    return "portajob-mock";
}

SchedulerDialect mock_dialect() {
    auto d = contract_dialect("mock", {mock_command()});
    d.default_poll_interval = std::chrono::milliseconds(10);
    return d;
}

std::optional<SchedulerDialect> builtin_dialect(const std::string& name) {
    if (name == "slurm") {
        return slurm_dialect();
    }
    if (name == "pbs") {
        return pbs_dialect();
    }
    if (name == "lsf") {
        return lsf_dialect();
    }
    if (name == "mock") {
        return mock_dialect();
    }
    return std::nullopt;
}

TemplateContext build_script_context(const ScriptContextInput& in, const SchedulerDialect& dialect) {
    const auto& spec = in.spec;
    const auto r = complete_resources(spec.resources);
    TemplateContext ctx;
    ctx["job_id"] = in.job_id;
    ctx["job_name"] = "portajob-" + in.job_id.substr(0, 8);
    ctx["script_stdout"] = in.work_directory + "/" + in.job_id + ".out";
    ctx["script_stderr"] = in.work_directory + "/" + in.job_id + ".err";
    ctx["launcher_script"] = shell_quote(launcher_script_path(in.work_directory, in.job_id));

    const auto& a = spec.attributes;
    if (a.queue_name) {
        ctx["queue_name"] = *a.queue_name;
    }
    if (a.project_name) {
        ctx["project_name"] = *a.project_name;
    }
    if (a.reservation_id) {
        ctx["reservation_id"] = *a.reservation_id;
    }
    if (a.duration) {
        ctx["duration"] = std::to_string(*a.duration);
        ctx["duration_seconds"] = std::to_string(*a.duration);
        ctx["duration_minutes"] = std::to_string(ceil_minutes(*a.duration));
        ctx["duration_hms"] = format_hms(*a.duration);
    }
    auto put = [&](const char* key, const std::optional<int>& v) {
        if (v) {
            ctx[key] = std::to_string(*v);
        }
    };
    put("node_count", r.node_count);
    put("process_count", r.process_count);
    put("processes_per_node", r.processes_per_node);
    put("cpu_cores_per_process", r.cpu_cores_per_process);
    if (r.gpu_cores_per_process && *r.gpu_cores_per_process > 0) {
        put("gpu_cores_per_process", r.gpu_cores_per_process);
        if (r.processes_per_node) {
            ctx["gpus_per_node"] = std::to_string(*r.processes_per_node * *r.gpu_cores_per_process);
        }
    }
    if (r.processes_per_node && r.cpu_cores_per_process) {
        ctx["cores_per_node"] = std::to_string(*r.processes_per_node * *r.cpu_cores_per_process);
    }
    if (r.exclusive_node_use) {
        ctx["exclusive"] = "1";
    }

    std::vector<TemplateContext> custom;
    const std::string prefix = dialect.attribute_namespace + ".";
    for (const auto& [key, value] : a.custom_attributes) {
        if (key.rfind(prefix, 0) == 0 && key.size() > prefix.size()) {
            custom.push_back({{"key", key.substr(prefix.size())}, {"value", value}});
        }
    }
    ctx["custom"] = TemplateValue::list(std::move(custom));

    std::vector<TemplateContext> env;
    for (const auto& [name, value] : spec.environment) {
        env.push_back({{"name", name}, {"value", shell_quote(value)}});
    }
    ctx["environment"] = TemplateValue::list(std::move(env));
    if (spec.directory) {
        ctx["directory"] = shell_quote(*spec.directory);
    }
    return ctx;
}

std::string submit_script_path(const std::string& work_directory, const std::string& job_id) {
    return work_directory + "/" + job_id + ".job";
}

std::string render_submit_script(const ScriptContextInput& input, const SchedulerDialect& dialect) {
    return render_template(dialect.submit_template, build_script_context(input, dialect));
}

} // namespace portajob
