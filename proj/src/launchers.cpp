#include "portajob/launchers.hpp"

#include "portajob/errors.hpp"
#include "portajob/process.hpp"
#include "portajob/template.hpp"

#include <algorithm>

namespace portajob {

namespace {

// Runs N copies of "$@" concurrently; exits with the first nonzero code in
// launch order, or 0.
constexpr const char* multiple_script =
    "n=$1; shift; i=0; pids=; "
    "while [ \"$i\" -lt \"$n\" ]; do \"$@\" & pids=\"$pids $!\"; i=$((i+1)); done; "
    "rc=0; for p in $pids; do wait \"$p\"; c=$?; if [ \"$rc\" -eq 0 ]; then rc=$c; fi; done; exit \"$rc\"";

std::vector<Launcher> builtin_launchers() {
    std::vector<Launcher> out;
    out.push_back({"single", [](const JobSpec&, const ResourceSpec&) { return std::vector<std::string>{}; }});
    out.push_back({"multiple", [](const JobSpec&, const ResourceSpec& r) {
                       return std::vector<std::string>{"/bin/sh", "-c", multiple_script, "portajob-multiple",
                                                       std::to_string(r.process_count.value_or(1))};
                   }});
    out.push_back({"mpirun", [](const JobSpec&, const ResourceSpec& r) {
                       std::vector<std::string> v{"mpirun"};
                       if (r.process_count) {
                           v.insert(v.end(), {"-n", std::to_string(*r.process_count)});
                       }
                       return v;
                   }});
    out.push_back({"srun", [](const JobSpec&, const ResourceSpec& r) {
                       std::vector<std::string> v{"srun"};
                       if (r.process_count) {
                           v.insert(v.end(), {"-n", std::to_string(*r.process_count)});
                       }
                       if (r.cpu_cores_per_process) {
                           v.push_back("--cpus-per-task=" + std::to_string(*r.cpu_cores_per_process));
                       }
                       return v;
                   }});
    // Flag spellings for jsrun and aprun follow the vendors' public man pages.
    out.push_back({"jsrun", [](const JobSpec&, const ResourceSpec& r) {
                       std::vector<std::string> v{"jsrun"};
                       if (r.process_count) {
                           v.insert(v.end(), {"--nrs", std::to_string(*r.process_count), "--tasks_per_rs", "1"});
                       }
                       if (r.cpu_cores_per_process) {
                           v.insert(v.end(), {"--cpu_per_rs", std::to_string(*r.cpu_cores_per_process)});
                       }
                       if (r.gpu_cores_per_process) {
                           v.insert(v.end(), {"--gpu_per_rs", std::to_string(*r.gpu_cores_per_process)});
                       }
                       return v;
                   }});
    out.push_back({"aprun", [](const JobSpec&, const ResourceSpec& r) {
                       std::vector<std::string> v{"aprun"};
                       if (r.process_count) {
                           v.insert(v.end(), {"-n", std::to_string(*r.process_count)});
                       }
                       if (r.processes_per_node) {
                           v.insert(v.end(), {"-N", std::to_string(*r.processes_per_node)});
                       }
                       if (r.cpu_cores_per_process) {
                           v.insert(v.end(), {"-d", std::to_string(*r.cpu_cores_per_process)});
                       }
                       return v;
                   }});
    return out;
}

constexpr const char* default_script_template = R"(#!/bin/sh
# portajob launcher script ({{launcher}}) for job {{job_id}}
_portajob_ec={{sidecar}}
trap 'echo "$?" > "$_portajob_ec"' EXIT
{{#pre_launch}}. {{pre_launch}} || exit $?
{{/pre_launch}}{{command}}
_portajob_rc=$?
{{#post_launch}}( . {{post_launch}} )
_portajob_post=$?
if [ "$_portajob_rc" -eq 0 ] && [ "$_portajob_post" -ne 0 ]; then
    _portajob_rc=$_portajob_post
fi
{{/post_launch}}exit "$_portajob_rc"
)";

constexpr const char* minimal_script_template = R"(#!/bin/sh
{{command}}
_portajob_rc=$?
echo "$_portajob_rc" > {{sidecar}}
exit "$_portajob_rc"
)";

std::string redirections(const JobSpec& spec) {
    std::string out;
    if (spec.stdin_path) {
        out += " < " + shell_quote(*spec.stdin_path);
    }
    if (spec.stdout_path) {
        out += " > " + shell_quote(*spec.stdout_path);
    }
    if (spec.stderr_path) {
        if (spec.stdout_path && *spec.stdout_path == *spec.stderr_path) {
            out += " 2>&1";
        } else {
            out += " 2> " + shell_quote(*spec.stderr_path);
        }
    }
    return out;
}

// `.` searches PATH for names without a slash.
std::string source_path(const std::string& path) {
    return path.find('/') == std::string::npos ? "./" + path : path;
}

} // namespace

LauncherRegistry& LauncherRegistry::global() {
    static LauncherRegistry registry;
    return registry;
}

LauncherRegistry::LauncherRegistry() : launchers_(builtin_launchers()) {}

void LauncherRegistry::add(Launcher launcher) {
    std::lock_guard lock(mutex_);
    auto it = std::find_if(launchers_.begin(), launchers_.end(),
                           [&](const Launcher& l) { return l.name == launcher.name; });
    if (it != launchers_.end()) {
        *it = std::move(launcher);
    } else {
        launchers_.push_back(std::move(launcher));
    }
}

Launcher LauncherRegistry::get(const std::string& name) const {
    std::lock_guard lock(mutex_);
    for (const auto& l : launchers_) {
        if (l.name == name) {
            return l;
        }
    }
    std::string known;
    for (const auto& l : launchers_) {
        known += (known.empty() ? "" : ", ") + l.name;
    }
    throw UnknownLauncher("unknown launcher '" + name + "'; known launchers: " + known);
}

std::vector<std::string> LauncherRegistry::names() const {
    std::lock_guard lock(mutex_);
    std::vector<std::string> out;
    for (const auto& l : launchers_) {
        out.push_back(l.name);
    }
    return out;
}

std::vector<std::string> get_launch_command(const Launcher& launcher, const JobSpec& spec) {
    const auto resources = complete_resources(spec.resources);
    auto argv = launcher.command_builder(spec, resources);
    argv.push_back(spec.executable);
    argv.insert(argv.end(), spec.arguments.begin(), spec.arguments.end());
    return argv;
}

std::vector<std::string> get_launch_command(const std::string& launcher_name, const JobSpec& spec) {
    return get_launch_command(LauncherRegistry::global().get(launcher_name), spec);
}

std::string_view to_string(LaunchMode mode) {
    switch (mode) {
    case LaunchMode::Default: return "default";
    case LaunchMode::MinimalWrapper: return "minimal-wrapper";
    case LaunchMode::None: return "none";
    }
    return "?";
}

std::string sidecar_path(const std::string& work_directory, const std::string& job_id) {
    return work_directory + "/" + job_id + ".ec";
}

std::string launcher_script_path(const std::string& work_directory, const std::string& job_id) {
    return work_directory + "/" + job_id + ".launch";
}

std::string render_launcher_script(const JobSpec& spec, const LauncherScriptOptions& options) {
    if (options.mode == LaunchMode::None) {
        throw TemplateError("launch mode 'none' has no launcher script");
    }
    const auto argv = get_launch_command(options.launcher, spec);
    TemplateContext ctx;
    ctx["launcher"] = options.launcher;
    ctx["job_id"] = options.job_id;
    ctx["sidecar"] = shell_quote(sidecar_path(options.work_directory, options.job_id));
    ctx["command"] = shell_join(argv) + redirections(spec);
    if (options.mode == LaunchMode::MinimalWrapper) {
        return render_template(minimal_script_template, ctx);
    }
    if (spec.pre_launch) {
        ctx["pre_launch"] = shell_quote(source_path(*spec.pre_launch));
    }
    if (spec.post_launch) {
        ctx["post_launch"] = shell_quote(source_path(*spec.post_launch));
    }
    return render_template(default_script_template, ctx);
}

} // namespace portajob
