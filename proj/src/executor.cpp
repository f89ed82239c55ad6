#include "portajob/executor.hpp"

#include "portajob/batch_executor.hpp"
#include "portajob/errors.hpp"
#include "portajob/log.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>

#include <unistd.h>

namespace portajob {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::string join(const std::vector<std::string>& items, const char* sep = ", ") {
    std::string out;
    for (const auto& i : items) {
        if (!out.empty()) {
            out += sep;
        }
        out += i;
    }
    return out;
}

bool valid_executor_name(const std::string& name) {
    static const std::regex pattern(R"(^[a-z0-9][a-z0-9_.\-]*$)");
    return std::regex_match(name, pattern);
}

} // namespace

SemVer SemVer::parse(std::string_view text) {
    static const std::regex pattern(R"(^\s*(\d+)(?:\.(\d+))?(?:\.(\d+))?\s*$)");
    std::string s(text);
    std::smatch m;
    if (!std::regex_match(s, m, pattern)) {
        throw Error("invalid version '" + s + "'");
    }
    SemVer v;
    v.major = std::stoi(m[1]);
    v.minor = m[2].matched ? std::stoi(m[2]) : 0;
    v.patch = m[3].matched ? std::stoi(m[3]) : 0;
    return v;
}

std::string SemVer::to_string() const {
    return std::to_string(major) + "." + std::to_string(minor) + "." + std::to_string(patch);
}

bool satisfies(const SemVer& version, std::string_view constraint) {
    std::stringstream clauses{std::string(constraint)};
    std::string clause;
    while (std::getline(clauses, clause, ',')) {
        clause = trim(clause);
        if (clause.empty() || clause == "*") {
            continue;
        }
        auto starts = [&](const char* p) { return clause.rfind(p, 0) == 0; };
        bool ok;
        if (starts(">=")) {
            ok = version >= SemVer::parse(clause.substr(2));
        } else if (starts("<=")) {
            ok = version <= SemVer::parse(clause.substr(2));
        } else if (starts(">")) {
            ok = version > SemVer::parse(clause.substr(1));
        } else if (starts("<")) {
            ok = version < SemVer::parse(clause.substr(1));
        } else if (starts("^")) {
            const auto base = SemVer::parse(clause.substr(1));
            ok = version.major == base.major && version >= base;
        } else if (starts("=")) {
            ok = version == SemVer::parse(clause.substr(1));
        } else {
            ok = version == SemVer::parse(clause);
        }
        if (!ok) {
            return false;
        }
    }
    return true;
}

std::string default_work_directory() {
    const char* tmp = std::getenv("TMPDIR");
    std::string base = (tmp && *tmp) ? tmp : "/tmp";
    return base + "/portajob-" + std::to_string(::getuid());
}

Executor::Executor(std::string name, SemVer version, ExecutorConfig config)
    : name_(std::move(name)), version_(version), config_(std::move(config)), hub_(std::make_shared<CallbackHub>()) {
    if (config_.work_directory.empty()) {
        config_.work_directory = default_work_directory();
    }
    std::error_code ec;
    std::filesystem::create_directories(config_.work_directory, ec);
    if (ec) {
        throw Error("cannot create work directory " + config_.work_directory + ": " + ec.message());
    }
    config_.work_directory = std::filesystem::absolute(config_.work_directory).lexically_normal().string();
    if (config_.work_directory.size() > 1 && config_.work_directory.back() == '/') {
        config_.work_directory.pop_back();
    }
}

Executor::~Executor() = default;

std::string Executor::effective_launcher(const JobSpec& spec) const {
    if (config_.launcher_override) {
        return *config_.launcher_override;
    }
    return spec.launcher.value_or(default_launcher_name);
}

void Executor::bind(const JobPtr& job) {
    std::weak_ptr<CallbackHub> weak = hub_;
    job->bind(name_, [weak](Job& j, const JobStatus& s) {
        auto hub = weak.lock();
        if (!hub) {
            return;
        }
        StatusCallback cb;
        {
            std::lock_guard lock(hub->mutex);
            cb = hub->callback;
        }
        if (cb) {
            cb(j, s);
        }
    });
    std::lock_guard lock(jobs_mutex_);
    jobs_[job->id()] = job;
}

void Executor::submit(const JobPtr& job) {
    if (!job) {
        throw InvalidSpec("null job");
    }
    if (job->is_bound()) {
        throw AlreadyBound("job " + job->id() + " is already bound to executor " + job->executor_name().value_or("?"));
    }
    if (job->state() != JobState::New) {
        throw Error("job " + job->id() + " is not NEW");
    }
    if (!job->spec()) {
        throw InvalidSpec("job " + job->id() + " has no spec");
    }
    const auto& spec = *job->spec();
    if (auto violations = validate_spec(spec); !violations.empty()) {
        std::string msg = "invalid job spec:";
        for (const auto& v : violations) {
            msg += " " + v.field + ": " + v.message + ";";
        }
        throw InvalidSpec(msg);
    }
    try {
        complete_resources(spec.resources);
    } catch (const Error& e) {
        throw InvalidSpec(std::string("invalid job spec: ") + e.what());
    }
    LauncherRegistry::global().get(effective_launcher(spec));

    bind(job);
    try {
        do_submit(job);
    } catch (const Error& e) {
        const std::string message = e.what();
        if (job->state() == JobState::New) {
            job->transition(JobStatus(JobState::Failed, std::nullopt, message));
        }
        if (dynamic_cast<const SubmitFailed*>(&e)) {
            throw;
        }
        throw SubmitFailed(message);
    }
}

void Executor::cancel(const JobPtr& job) {
    {
        std::lock_guard lock(jobs_mutex_);
        auto it = jobs_.find(job->id());
        if (it == jobs_.end() || it->second != job) {
            throw NotBound("job " + job->id() + " is not bound to this " + name_ + " executor");
        }
    }
    const auto state = job->state();
    if (is_final(state)) {
        throw TerminalState("job " + job->id() + " is already " + std::string(to_string(state)));
    }
    if (!job->native_id()) {
        throw NotBound("job " + job->id() + " has no native id yet");
    }
    do_cancel(job);
}

void Executor::attach(const JobPtr& job, std::string native_id) {
    if (job->is_bound()) {
        throw AlreadyBound("job " + job->id() + " is already bound to executor " + job->executor_name().value_or("?"));
    }
    if (native_id.empty()) {
        throw Error("empty native id");
    }
    bind(job);
    job->set_native_id(std::move(native_id));
    do_attach(job);
}

void Executor::set_job_status_callback(StatusCallback callback) {
    std::lock_guard lock(hub_->mutex);
    hub_->callback = std::move(callback);
}

std::vector<JobPtr> Executor::jobs() const {
    std::lock_guard lock(jobs_mutex_);
    std::vector<JobPtr> out;
    for (const auto& [_, j] : jobs_) {
        out.push_back(j);
    }
    return out;
}

ExecutorRegistry& ExecutorRegistry::global() {
    static ExecutorRegistry* registry = [] {
        auto* r = new ExecutorRegistry();
        register_builtin_executors(*r);
        const auto result = r->discover_plugins(plugin_path_from_env());
        for (const auto& d : result.diagnostics) {
            log(LogLevel::Warning, "plugin " + d.path + ": " + d.message);
        }
        return r;
    }();
    return *registry;
}

bool ExecutorRegistry::add(ExecutorDescriptor descriptor) {
    std::lock_guard lock(mutex_);
    for (auto& d : descriptors_) {
        if (d.name == descriptor.name && d.version == descriptor.version) {
            d = std::move(descriptor);
            return true;
        }
    }
    descriptors_.push_back(std::move(descriptor));
    return false;
}

PluginManifest parse_manifest(std::string_view text) {
    PluginManifest m;
    bool have_name = false;
    bool have_version = false;
    std::stringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto colon = line.find(':');
        if (colon == std::string::npos) {
            throw Error("line " + std::to_string(lineno) + ": expected 'key: value'");
        }
        const auto key = trim(line.substr(0, colon));
        const auto value = trim(line.substr(colon + 1));
        if (key == "name") {
            m.name = value;
            have_name = true;
        } else if (key == "version") {
            m.version = SemVer::parse(value);
            have_version = true;
        } else if (key == "dialect") {
            m.dialect = value;
        } else if (key == "command") {
            m.command = value;
        } else if (key == "kind") {
            m.kind = value;
        } else {
            throw Error("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        }
    }
    if (!have_name || !valid_executor_name(m.name)) {
        throw Error("missing or invalid name (lowercase, no whitespace)");
    }
    if (!have_version) {
        throw Error("missing version");
    }
    if (m.kind == "launcher") {
        if (!m.command) {
            throw Error("launcher manifests need a command");
        }
    } else if (m.kind == "executor") {
        if (m.dialect.has_value() == m.command.has_value()) {
            throw Error("executor manifests need exactly one of 'dialect' or 'command'");
        }
    } else {
        throw Error("unknown kind '" + m.kind + "'");
    }
    return m;
}

DiscoveryResult ExecutorRegistry::discover_plugins(const std::vector<std::filesystem::path>& directories,
                                                   LauncherRegistry& launchers) {
    namespace fs = std::filesystem;
    DiscoveryResult result;
    std::vector<ExecutorDescriptor> found;
    for (const auto& dir : directories) {
        std::error_code ec;
        if (!fs::is_directory(dir, ec)) {
            result.diagnostics.push_back({dir.string(), "not a directory; skipped"});
            continue;
        }
        std::vector<fs::path> manifests;
        for (const auto& entry : fs::directory_iterator(dir, ec)) {
            if (entry.path().extension() == ".exdesc") {
                manifests.push_back(entry.path());
            }
        }
        std::sort(manifests.begin(), manifests.end());
        for (const auto& path : manifests) {
            std::ifstream file(path);
            std::stringstream buf;
            buf << file.rdbuf();
            PluginManifest manifest;
            ExecutorFactory factory;
            try {
                manifest = parse_manifest(buf.str());
                if (manifest.kind == "launcher") {
                    auto command = *manifest.command;
                    if (command.find('/') != std::string::npos && fs::path(command).is_relative()) {
                        command = (path.parent_path() / command).string();
                    }
                    launchers.add(Launcher{manifest.name,
                                           [command](const JobSpec&, const ResourceSpec&) {
                                               return std::vector<std::string>{command};
                                           },
                                           path.string()});
                    continue;
                }
                factory = plugin_executor_factory(manifest, path.parent_path());
            } catch (const Error& e) {
                result.diagnostics.push_back({path.string(), std::string("invalid manifest: ") + e.what()});
                continue;
            }
            ExecutorDescriptor desc{manifest.name, manifest.version, std::move(factory), path.string()};
            auto same = std::find_if(found.begin(), found.end(), [&](const ExecutorDescriptor& d) {
                return d.name == desc.name && d.version == desc.version;
            });
            if (same != found.end()) {
                result.diagnostics.push_back(
                    {path.string(), "shadows " + desc.name + " " + desc.version.to_string() + " from " + same->source});
                *same = std::move(desc);
            } else {
                found.push_back(std::move(desc));
            }
        }
    }
    std::sort(found.begin(), found.end(), [](const ExecutorDescriptor& a, const ExecutorDescriptor& b) {
        return std::tie(a.name, a.version) < std::tie(b.name, b.version);
    });
    for (const auto& d : found) {
        if (add(d)) {
            result.diagnostics.push_back(
                {d.source, "replaces previously registered " + d.name + " " + d.version.to_string()});
        }
    }
    result.descriptors = std::move(found);
    return result;
}

ExecutorDescriptor ExecutorRegistry::find(const std::string& name, std::string_view version_constraint) const {
    std::lock_guard lock(mutex_);
    const ExecutorDescriptor* best = nullptr;
    bool any = false;
    for (const auto& d : descriptors_) {
        if (d.name != name) {
            continue;
        }
        any = true;
        if (satisfies(d.version, version_constraint) && (!best || d.version > best->version)) {
            best = &d;
        }
    }
    if (!any) {
        std::vector<std::string> known;
        for (const auto& d : descriptors_) {
            known.push_back(d.name);
        }
        std::sort(known.begin(), known.end());
        known.erase(std::unique(known.begin(), known.end()), known.end());
        throw UnknownExecutor("unknown executor '" + name + "'; known executors: " + join(known));
    }
    if (!best) {
        throw NoVersionSatisfies("no version of executor '" + name + "' satisfies '" +
                                 std::string(version_constraint) + "'");
    }
    return *best;
}

std::unique_ptr<Executor> ExecutorRegistry::get_instance(const std::string& name, std::string_view version_constraint,
                                                         const ExecutorConfig& config) const {
    const auto desc = find(name, version_constraint);
    return desc.factory(config);
}

std::vector<std::string> ExecutorRegistry::names() const {
    std::lock_guard lock(mutex_);
    std::vector<std::string> out;
    for (const auto& d : descriptors_) {
        out.push_back(d.name);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

std::vector<ExecutorDescriptor> ExecutorRegistry::descriptors() const {
    std::lock_guard lock(mutex_);
    return descriptors_;
}

std::vector<std::filesystem::path> plugin_path_from_env() {
    std::vector<std::filesystem::path> out;
    const char* env = std::getenv("PORTAJOB_PLUGIN_PATH");
    if (!env) {
        return out;
    }
    std::stringstream in{std::string(env)};
    std::string item;
    while (std::getline(in, item, ':')) {
        if (!item.empty()) {
            out.emplace_back(item);
        }
    }
    return out;
}

std::unique_ptr<Executor> get_instance(const std::string& name, std::string_view version_constraint,
                                       const ExecutorConfig& config) {
    return ExecutorRegistry::global().get_instance(name, version_constraint, config);
}

} // namespace portajob
