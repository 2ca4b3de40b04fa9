#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "stepwise/dataset_io.hpp"
#include "stepwise/label_service.hpp"
#include "stepwise/scoring.hpp"
#include "stepwise/synthetic_task.hpp"

namespace stepwise::collection {

// Synthetic data collection: active-learning selection feeds the label
// service, simulated labelers rate steps against the chain oracle, and the
// selector PRM is retrained after every generation.
struct SimulationConfig {
  std::size_t problems = 40;
  synth::LengthRange lengths;
  double step_error_rate = 0.15;
  double compensating_error_rate = 0.05;
  std::size_t generations = 3;
  std::size_t pool_per_problem = 16;
  std::size_t selected_per_problem = 2;
  std::size_t labelers = 4;
  double labeler_error = 0.05;
  // Extra labelers that err this often; they should fail screening.
  std::size_t careless_labelers = 1;
  double careless_error = 0.5;
  std::size_t qc_items = 30;
  service::ServiceConfig service;
  scoring::ScoringConfig scoring;
  std::size_t feature_dim = 1u << 16;
  std::uint64_t seed = 0;

  void validate() const;
  json to_json() const;
};

struct GenerationSummary {
  std::uint32_t generation = 0;
  std::size_t selected = 0;
  std::size_t labeled = 0;
  std::size_t wrong_answer_selected = 0;
};

struct SimulationResult {
  std::vector<dataset::LabeledSolution> labels;  // completed non-QC tasks, in completion order
  std::vector<GenerationSummary> generations;
  json service_stats;
  std::vector<service::LabelerProfile> labelers;
};

// Runs against a fresh service; with `data_dir`, its event log is kept there.
SimulationResult simulate_collection(const SimulationConfig& cfg,
                                     const std::optional<std::filesystem::path>& data_dir = std::nullopt);

}  // namespace stepwise::collection
