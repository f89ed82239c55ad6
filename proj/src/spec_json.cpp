#include "portajob/spec_json.hpp"

#include "portajob/errors.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace portajob {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    if (!obj.is_object()) {
        throw SpecFileError(where + " must be a JSON object");
    }
    for (const auto& [key, _] : obj.items()) {
        if (!allowed.count(key)) {
            throw SpecFileError("unknown key '" + key + "' in " + where);
        }
    }
}

std::string get_string(const json& obj, const std::string& key, const std::string& where) {
    const auto& v = obj.at(key);
    if (!v.is_string()) {
        throw SpecFileError(where + "." + key + " must be a string");
    }
    return v.get<std::string>();
}

void read_opt_string(const json& obj, const char* key, std::optional<std::string>& out, const std::string& where) {
    if (obj.contains(key) && !obj.at(key).is_null()) {
        out = get_string(obj, key, where);
    }
}

template <class Int>
void read_opt_int(const json& obj, const char* key, std::optional<Int>& out, const std::string& where) {
    if (obj.contains(key) && !obj.at(key).is_null()) {
        const auto& v = obj.at(key);
        if (!v.is_number_integer()) {
            throw SpecFileError(where + "." + key + " must be an integer");
        }
        out = v.get<Int>();
    }
}

std::map<std::string, std::string> read_string_map(const json& obj, const char* key, const std::string& where) {
    std::map<std::string, std::string> out;
    if (!obj.contains(key) || obj.at(key).is_null()) {
        return out;
    }
    const auto& m = obj.at(key);
    if (!m.is_object()) {
        throw SpecFileError(where + "." + key + " must be an object of strings");
    }
    for (const auto& [k, v] : m.items()) {
        if (!v.is_string()) {
            throw SpecFileError(where + "." + key + "." + k + " must be a string");
        }
        out.emplace(k, v.get<std::string>());
    }
    return out;
}

ResourceSpec parse_resources(const json& obj) {
    reject_unknown(obj,
                   {"version", "node_count", "process_count", "processes_per_node", "cpu_cores_per_process",
                    "gpu_cores_per_process", "exclusive_node_use"},
                   "resources");
    ResourceSpec r;
    std::optional<int> version;
    read_opt_int(obj, "version", version, "resources");
    r.version = version.value_or(1);
    read_opt_int(obj, "node_count", r.node_count, "resources");
    read_opt_int(obj, "process_count", r.process_count, "resources");
    read_opt_int(obj, "processes_per_node", r.processes_per_node, "resources");
    read_opt_int(obj, "cpu_cores_per_process", r.cpu_cores_per_process, "resources");
    read_opt_int(obj, "gpu_cores_per_process", r.gpu_cores_per_process, "resources");
    if (obj.contains("exclusive_node_use")) {
        if (!obj.at("exclusive_node_use").is_boolean()) {
            throw SpecFileError("resources.exclusive_node_use must be a boolean");
        }
        r.exclusive_node_use = obj.at("exclusive_node_use").get<bool>();
    }
    return r;
}

JobAttributes parse_attributes(const json& obj) {
    reject_unknown(obj, {"duration", "queue_name", "project_name", "reservation_id", "custom_attributes"},
                   "attributes");
    JobAttributes a;
    read_opt_int(obj, "duration", a.duration, "attributes");
    read_opt_string(obj, "queue_name", a.queue_name, "attributes");
    read_opt_string(obj, "project_name", a.project_name, "attributes");
    read_opt_string(obj, "reservation_id", a.reservation_id, "attributes");
    a.custom_attributes = read_string_map(obj, "custom_attributes", "attributes");
    return a;
}

template <class T>
void put_opt(json& obj, const char* key, const std::optional<T>& value) {
    if (value) {
        obj[key] = *value;
    }
}

} // namespace

JobSpec parse_spec_json(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw SpecFileError(std::string("malformed JSON: ") + e.what());
    }
    reject_unknown(doc,
                   {"executable", "arguments", "directory", "environment", "stdin_path", "stdout_path",
                    "stderr_path", "resources", "attributes", "launcher", "pre_launch", "post_launch"},
                   "job spec");
    JobSpec spec;
    if (doc.contains("executable")) {
        spec.executable = get_string(doc, "executable", "spec");
    }
    if (doc.contains("arguments")) {
        const auto& args = doc.at("arguments");
        if (!args.is_array()) {
            throw SpecFileError("spec.arguments must be an array of strings");
        }
        for (const auto& a : args) {
            if (!a.is_string()) {
                throw SpecFileError("spec.arguments must be an array of strings");
            }
            spec.arguments.push_back(a.get<std::string>());
        }
    }
    read_opt_string(doc, "directory", spec.directory, "spec");
    spec.environment = read_string_map(doc, "environment", "spec");
    read_opt_string(doc, "stdin_path", spec.stdin_path, "spec");
    read_opt_string(doc, "stdout_path", spec.stdout_path, "spec");
    read_opt_string(doc, "stderr_path", spec.stderr_path, "spec");
    if (doc.contains("resources")) {
        spec.resources = parse_resources(doc.at("resources"));
    }
    if (doc.contains("attributes")) {
        spec.attributes = parse_attributes(doc.at("attributes"));
    }
    read_opt_string(doc, "launcher", spec.launcher, "spec");
    read_opt_string(doc, "pre_launch", spec.pre_launch, "spec");
    read_opt_string(doc, "post_launch", spec.post_launch, "spec");
    return spec;
}

JobSpec load_spec_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw SpecFileError("cannot read spec file " + path.string());
    }
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_spec_json(buf.str());
}

std::string spec_to_json(const JobSpec& spec, int indent) {
    json doc;
    doc["executable"] = spec.executable;
    doc["arguments"] = spec.arguments;
    put_opt(doc, "directory", spec.directory);
    if (!spec.environment.empty()) {
        doc["environment"] = spec.environment;
    }
    put_opt(doc, "stdin_path", spec.stdin_path);
    put_opt(doc, "stdout_path", spec.stdout_path);
    put_opt(doc, "stderr_path", spec.stderr_path);

    json res;
    const auto& r = spec.resources;
    res["version"] = r.version;
    put_opt(res, "node_count", r.node_count);
    put_opt(res, "process_count", r.process_count);
    put_opt(res, "processes_per_node", r.processes_per_node);
    put_opt(res, "cpu_cores_per_process", r.cpu_cores_per_process);
    put_opt(res, "gpu_cores_per_process", r.gpu_cores_per_process);
    res["exclusive_node_use"] = r.exclusive_node_use;
    doc["resources"] = res;

    json attrs = json::object();
    const auto& a = spec.attributes;
    put_opt(attrs, "duration", a.duration);
    put_opt(attrs, "queue_name", a.queue_name);
    put_opt(attrs, "project_name", a.project_name);
    put_opt(attrs, "reservation_id", a.reservation_id);
    if (!a.custom_attributes.empty()) {
        attrs["custom_attributes"] = a.custom_attributes;
    }
    doc["attributes"] = attrs;

    put_opt(doc, "launcher", spec.launcher);
    put_opt(doc, "pre_launch", spec.pre_launch);
    put_opt(doc, "post_launch", spec.post_launch);
    return doc.dump(indent);
}

} // namespace portajob
