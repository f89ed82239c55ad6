#include "portajob/launchers.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

using namespace portajob;
using namespace portajob::testing;

namespace {

bool updating() {
    const char* v = std::getenv("PORTAJOB_UPDATE_GOLDEN");
    return v && std::string(v) == "1";
}

void check(const std::string& path, const std::string& actual) {
    if (updating()) {
        fs::create_directories(fs::path(path).parent_path());
        write_file(path, actual);
        return;
    }
    ASSERT_TRUE(fs::exists(path)) << "missing golden " << path << "; rerun with PORTAJOB_UPDATE_GOLDEN=1";
    EXPECT_EQ(read_file(path), actual) << path;
}

} // namespace

TEST(Golden, SubmitScripts) {
    int compared = 0;
    for (const auto& dialect : golden_dialects()) {
        for (const auto& [name, spec] : golden_corpus()) {
            check(golden_path(PORTAJOB_GOLDEN_DIR, dialect, name), render_golden(dialect, spec));
            ++compared;
        }
    }
    EXPECT_EQ(compared, 44);
}

TEST(Golden, LauncherScripts) {
    for (const auto& [name, spec] : golden_corpus()) {
        LauncherScriptOptions o;
        o.job_id = golden_job_id;
        o.work_directory = golden_work_dir;
        o.launcher = spec.launcher.value_or(default_launcher_name);
        check(std::string(PORTAJOB_GOLDEN_DIR) + "/launch/" + name + ".launch", render_launcher_script(spec, o));
    }
}
