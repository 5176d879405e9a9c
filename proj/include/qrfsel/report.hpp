#pragma once

#include <cstddef>
#include <json.hpp>
#include <string>

#include "qrfsel/baselines.hpp"
#include "qrfsel/dataset.hpp"
#include "qrfsel/forward_selection.hpp"
#include "qrfsel/simulation.hpp"

namespace qrfsel {

inline constexpr int kReportSchemaVersion = 1;

/// Execution details that may differ between otherwise identical runs. Kept
/// under the top-level "runtime" key so that everything else is a pure
/// function of data, configuration and seed.
struct RuntimeInfo {
  std::size_t threads = 1;
  double wall_clock_seconds = 0.0;
};

nlohmann::json selection_report(const SelectionTrace& trace, const Dataset& data, const RuntimeInfo& runtime);
nlohmann::json backward_report(const BackwardResult& result, const BackwardOptions& options, const Dataset& data,
                               const RuntimeInfo& runtime);
nlohmann::json ngr_report(const NgrStepwiseResult& result, const NgrOptions& options, const Dataset& data,
                          const RuntimeInfo& runtime);
nlohmann::json experiment_report(const ExperimentSummary& summary, const RuntimeInfo& runtime);

/// Indented dump with a trailing newline.
std::string dump_report(const nlohmann::json& report);

/// Copy without the "runtime" block, for reproducibility comparisons.
nlohmann::json strip_runtime(nlohmann::json report);

/// Per-replication CSV: replication,data_seed,method_seed,selected,signal,noise.
std::string experiment_csv(const ExperimentSummary& summary);

}  // namespace qrfsel
