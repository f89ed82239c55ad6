#include "portajob/batch_executor.hpp"
#include "portajob/local_executor.hpp"

#include <cstdlib>

namespace portajob {

void register_builtin_executors(ExecutorRegistry& registry) {
    registry.add({"local", LocalExecutor::executor_version,
                  [](const ExecutorConfig& c) { return std::make_unique<LocalExecutor>(c); }});
    for (auto make : {&slurm_dialect, &pbs_dialect, &lsf_dialect}) {
        auto dialect = make();
        const auto name = dialect.name;
        registry.add({name, BatchExecutor::executor_version, [dialect](const ExecutorConfig& c) {
                          return std::make_unique<BatchExecutor>(dialect.name, BatchExecutor::executor_version,
                                                                 dialect, c);
                      }});
    }
    registry.add({"mock", BatchExecutor::executor_version, [](const ExecutorConfig& c) {
                      ExecutorConfig config = c;
                      // Without an explicit spool the mock lives under the work directory.
                      const char* env = std::getenv("PORTAJOB_MOCK_SPOOL");
                      if (!config.command_environment.count("PORTAJOB_MOCK_SPOOL") && !(env && *env)) {
                          const auto work = config.work_directory.empty() ? default_work_directory()
                                                                          : config.work_directory;
                          config.command_environment["PORTAJOB_MOCK_SPOOL"] = work + "/mock-spool";
                      }
                      return std::make_unique<BatchExecutor>("mock", BatchExecutor::executor_version,
                                                             mock_dialect(), config);
                  }});
}

} // namespace portajob
