#pragma once

#include "portajob/core.hpp"

#include <functional>
#include <mutex>
#include <string>
#include <vector>

namespace portajob {

// Builds the argument-vector prefix placed in front of the payload. The
// resources passed in have already been through complete_resources().
using LaunchPrefixBuilder = std::function<std::vector<std::string>(const JobSpec&, const ResourceSpec&)>;

struct Launcher {
    std::string name;
    LaunchPrefixBuilder command_builder;
    std::string source = "built-in";
};

class LauncherRegistry {
public:
    static LauncherRegistry& global();

    LauncherRegistry();

    void add(Launcher launcher);
    // Throws UnknownLauncher naming the known launchers.
    Launcher get(const std::string& name) const;
    std::vector<std::string> names() const;

private:
    mutable std::mutex mutex_;
    std::vector<Launcher> launchers_;
};

inline constexpr const char* default_launcher_name = "single";

std::vector<std::string> get_launch_command(const Launcher& launcher, const JobSpec& spec);
std::vector<std::string> get_launch_command(const std::string& launcher_name, const JobSpec& spec);

enum class LaunchMode {
    // Hooks, redirection and sidecar capture.
    Default,
    // Runs the payload as a subprocess and records its exit code; nothing else.
    MinimalWrapper,
    // No launcher script; the payload is spawned directly. Only the local
    // executor supports this mode.
    None,
};

std::string_view to_string(LaunchMode mode);

struct LauncherScriptOptions {
    std::string job_id;
    std::string work_directory;
    std::string launcher = default_launcher_name;
    LaunchMode mode = LaunchMode::Default;
};

std::string sidecar_path(const std::string& work_directory, const std::string& job_id);
std::string launcher_script_path(const std::string& work_directory, const std::string& job_id);

// Shell wrapper that runs pre_launch (sourced; a failure aborts), the launch
// command with stream wiring, post_launch (in a subshell; its failure turns a
// zero exit code into a failure but never hides a payload failure), writes the
// exit code to the sidecar file and exits with it.
std::string render_launcher_script(const JobSpec& spec, const LauncherScriptOptions& options);

} // namespace portajob
