#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "stepwise/core.hpp"

namespace stepwise::service {

// Milliseconds since the Unix epoch.
using Clock = std::function<std::int64_t()>;
Clock system_clock();

class ServiceError : public std::runtime_error {
 public:
  enum class Kind { not_found, unauthorized, stale_lease, contract_violation, conflict, invalid_argument };
  ServiceError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

enum class TaskState { pending, leased, completed, expired };
std::string_view to_string(TaskState s);

struct Lease {
  std::string labeler_id;
  std::int64_t expires_at = 0;

  bool operator==(const Lease&) const = default;
};

struct LabelTask {
  std::string task_id;
  std::uint32_t generation = 0;
  std::uint64_t priority = 0;  // lower is served first
  SolutionRecord solution;
  std::string statement;
  std::string ground_truth_answer;
  TaskState state = TaskState::pending;
  std::optional<Lease> lease;
  bool is_qc = false;
  std::optional<std::set<std::size_t>> gold_first_error_steps;
  std::optional<std::string> qc_item;  // template id for QC instances
  bool injected = false;
  std::vector<StepLabel> labels;
  std::optional<std::string> labeled_by;
  std::optional<bool> qc_pass;

  bool operator==(const LabelTask&) const = default;
};

struct QcItem {
  std::string id;
  std::string statement;
  std::string ground_truth_answer;
  SolutionRecord solution;
  std::set<std::size_t> gold_first_error_steps;  // empty: the solution has no error

  bool operator==(const QcItem&) const = default;
};

enum class LabelerStatus { screening, active, removed };
std::string_view to_string(LabelerStatus s);

struct LabelerProfile {
  std::string labeler_id;
  LabelerStatus status = LabelerStatus::screening;
  std::vector<bool> screening_results;
  std::vector<bool> qc_results;  // continuous QC, oldest first
  std::size_t screening_served = 0;
  std::size_t tasks_completed = 0;
  std::optional<std::string> removal_reason;

  // Running agreement over all continuous QC items; nullopt before any.
  std::optional<double> qc_agreement() const;

  bool operator==(const LabelerProfile&) const = default;
};

enum class EventKind {
  task_created,
  leased,
  step_rated,
  task_completed,
  lease_expired,
  labeler_admitted,
  labeler_removed,
  generation_started
};
std::string_view to_string(EventKind k);
EventKind parse_event_kind(std::string_view text);

struct LabelEvent {
  std::uint64_t sequence_number = 0;
  std::int64_t timestamp = 0;
  EventKind kind = EventKind::task_created;
  json payload;
};

json to_json(const LabelEvent& e);
LabelEvent event_from_json(const json& j);
json to_json(const LabelTask& t);
json to_json(const QcItem& q);
QcItem qc_item_from_json(const json& j);
json to_json(const LabelerProfile& p);

struct ServiceConfig {
  double qc_probability = 0.05;
  std::int64_t lease_ttl_ms = 30LL * 60 * 1000;
  std::size_t screening_size = 30;
  double admission_threshold = 0.75;
  double qc_floor = 0.70;
  std::size_t qc_window = 20;
  std::uint64_t seed = 0;
  // Write a snapshot every this many events; 0 disables.
  std::size_t snapshot_interval = 1000;

  void validate() const;
  json to_json() const;
};

// Pure event-sourced state: apply() is the only mutator.
struct ServiceState {
  std::map<std::string, LabelTask> tasks;
  std::map<std::string, QcItem> qc_items;
  std::map<std::string, LabelerProfile> labelers;
  std::set<std::uint32_t> generations;
  std::set<std::pair<std::uint64_t, std::string>> pending;  // (priority, task id), non-QC only
  std::set<std::pair<std::int64_t, std::string>> lease_expiry;
  std::uint64_t last_sequence = 0;
  std::uint64_t serves = 0;
  std::uint64_t qc_serves = 0;

  void apply(const LabelEvent& e);
  json to_json() const;
  static ServiceState from_json(const json& j);
};

struct TaskInput {
  SolutionRecord solution;
  std::string statement;
  std::string ground_truth_answer;
};

struct GenerationRequest {
  std::vector<TaskInput> tasks;  // in selection order; earlier is higher priority
  std::vector<QcItem> qc_items;
};

struct SubmitResult {
  std::string task_id;
  bool is_qc = false;
  std::optional<bool> qc_pass;
  std::optional<LabelerStatus> labeler_status;  // set when the submission changed it
};

enum class ScreeningDecision { admitted, rejected, not_ready };
enum class QcDecision { keep, remove };

struct GenerationProgress {
  std::uint32_t generation = 0;
  std::size_t total = 0;
  std::size_t pending = 0;
  std::size_t leased = 0;
  std::size_t completed = 0;
};

class LabelService {
 public:
  // With a data directory, loads snapshot + event log and appends new events.
  explicit LabelService(ServiceConfig config, std::optional<std::filesystem::path> data_dir = std::nullopt,
                        Clock clock = system_clock());
  ~LabelService();
  LabelService(const LabelService&) = delete;
  LabelService& operator=(const LabelService&) = delete;

  std::optional<LabelTask> next_task(const std::string& labeler_id);
  SubmitResult submit_labels(const std::string& task_id, const std::string& labeler_id,
                             const std::vector<StepLabel>& ratings);
  ScreeningDecision screen_labeler(const std::string& labeler_id);
  QcDecision continuous_qc_review(const std::string& labeler_id, std::optional<std::size_t> window = std::nullopt);
  std::uint32_t start_generation(const GenerationRequest& request);
  void add_qc_items(const std::vector<QcItem>& items);
  // Manual injection into the open generation (or a new one when none is
  // open); returns the task id.
  std::string inject_task(const TaskInput& input, std::optional<std::uint64_t> priority = std::nullopt);
  void admit_labeler(const std::string& labeler_id);
  void expire_leases();

  std::optional<LabelTask> task(const std::string& task_id) const;
  std::optional<LabelerProfile> labeler(const std::string& labeler_id) const;
  std::vector<GenerationProgress> progress() const;
  bool generation_open() const;
  json stats() const;
  json state_json() const;
  std::vector<LabelEvent> events() const;
  const ServiceConfig& config() const { return config_; }

  void write_snapshot();
  void flush();

 private:
  void emit(EventKind kind, json payload);
  void expire_locked(std::int64_t now);
  void maybe_auto_snapshot();
  bool generation_open_locked() const;
  ScreeningDecision screen_locked(const std::string& labeler_id);
  QcDecision review_locked(const std::string& labeler_id, std::size_t window);
  void write_snapshot_locked();
  void load();

  ServiceConfig config_;
  std::optional<std::filesystem::path> data_dir_;
  Clock clock_;
  mutable std::mutex mu_;
  ServiceState state_;
  std::vector<LabelEvent> log_;
  std::ofstream log_out_;
  std::size_t since_snapshot_ = 0;
};

// Phase-2 contract: nonempty, at most `n_steps` ratings, and either all
// steps rated with no negative or ending exactly at the first negative.
// Returns an error message, or nullopt when the sequence is acceptable.
std::optional<std::string> check_phase2_contract(const std::vector<StepLabel>& ratings, std::size_t n_steps);

// Pass iff the first negative index is in the gold set, or there is no
// negative and the gold set is empty.
bool qc_agrees(const std::vector<StepLabel>& ratings, const std::set<std::size_t>& gold);

}  // namespace stepwise::service
