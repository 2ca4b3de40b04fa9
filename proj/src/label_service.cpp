#include "stepwise/label_service.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "stepwise/rng.hpp"

namespace stepwise::service {

Clock system_clock() {
  return [] {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
  };
}

std::string_view to_string(TaskState s) {
  switch (s) {
    case TaskState::pending: return "pending";
    case TaskState::leased: return "leased";
    case TaskState::completed: return "completed";
    case TaskState::expired: return "expired";
  }
  return "pending";
}

namespace {

TaskState parse_task_state(std::string_view s) {
  for (TaskState t : {TaskState::pending, TaskState::leased, TaskState::completed, TaskState::expired}) {
    if (s == to_string(t)) return t;
  }
  throw std::invalid_argument("unknown task state '" + std::string(s) + "'");
}

LabelerStatus parse_labeler_status(std::string_view s) {
  for (LabelerStatus t : {LabelerStatus::screening, LabelerStatus::active, LabelerStatus::removed}) {
    if (s == to_string(t)) return t;
  }
  throw std::invalid_argument("unknown labeler status '" + std::string(s) + "'");
}

StepLabel label_or_throw(const std::string& s) {
  auto label = parse_step_label(s);
  if (!label) throw std::invalid_argument("unknown rating '" + s + "'");
  return *label;
}

}  // namespace

std::string_view to_string(LabelerStatus s) {
  switch (s) {
    case LabelerStatus::screening: return "screening";
    case LabelerStatus::active: return "active";
    case LabelerStatus::removed: return "removed";
  }
  return "screening";
}

std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::task_created: return "task_created";
    case EventKind::leased: return "leased";
    case EventKind::step_rated: return "step_rated";
    case EventKind::task_completed: return "task_completed";
    case EventKind::lease_expired: return "lease_expired";
    case EventKind::labeler_admitted: return "labeler_admitted";
    case EventKind::labeler_removed: return "labeler_removed";
    case EventKind::generation_started: return "generation_started";
  }
  return "task_created";
}

EventKind parse_event_kind(std::string_view text) {
  for (EventKind k : {EventKind::task_created, EventKind::leased, EventKind::step_rated, EventKind::task_completed,
                      EventKind::lease_expired, EventKind::labeler_admitted, EventKind::labeler_removed,
                      EventKind::generation_started}) {
    if (text == to_string(k)) return k;
  }
  throw std::invalid_argument("unknown event kind '" + std::string(text) + "'");
}

std::optional<double> LabelerProfile::qc_agreement() const {
  if (qc_results.empty()) return std::nullopt;
  const auto passes = std::count(qc_results.begin(), qc_results.end(), true);
  return static_cast<double>(passes) / static_cast<double>(qc_results.size());
}

json to_json(const LabelEvent& e) {
  return {{"seq", e.sequence_number}, {"ts", e.timestamp}, {"kind", to_string(e.kind)}, {"payload", e.payload}};
}

LabelEvent event_from_json(const json& j) {
  return {j.at("seq").get<std::uint64_t>(), j.at("ts").get<std::int64_t>(),
          parse_event_kind(j.at("kind").get<std::string>()), j.at("payload")};
}

json to_json(const LabelTask& t) {
  json j = {{"task_id", t.task_id},   {"generation", t.generation},
            {"priority", t.priority}, {"solution", to_json(t.solution)},
            {"statement", t.statement}, {"ground_truth_answer", t.ground_truth_answer},
            {"state", to_string(t.state)}, {"is_qc", t.is_qc},
            {"injected", t.injected}};
  if (t.lease) j["lease"] = {{"labeler_id", t.lease->labeler_id}, {"expires_at", t.lease->expires_at}};
  if (t.gold_first_error_steps) j["gold_first_error_steps"] = *t.gold_first_error_steps;
  if (t.qc_item) j["qc_item"] = *t.qc_item;
  json labels = json::array();
  for (StepLabel l : t.labels) labels.push_back(to_string(l));
  j["labels"] = labels;
  if (t.labeled_by) j["labeled_by"] = *t.labeled_by;
  if (t.qc_pass) j["qc_pass"] = *t.qc_pass;
  return j;
}

namespace {

LabelTask task_from_json(const json& j) {
  LabelTask t;
  t.task_id = j.at("task_id").get<std::string>();
  t.generation = j.value("generation", 0u);
  t.priority = j.value("priority", std::uint64_t{0});
  t.solution = solution_from_json(j.at("solution"));
  t.statement = j.value("statement", "");
  t.ground_truth_answer = j.value("ground_truth_answer", "");
  t.state = parse_task_state(j.value("state", "pending"));
  t.is_qc = j.value("is_qc", false);
  t.injected = j.value("injected", false);
  if (j.contains("lease")) {
    t.lease = Lease{j["lease"].at("labeler_id").get<std::string>(), j["lease"].at("expires_at").get<std::int64_t>()};
  }
  if (j.contains("gold_first_error_steps")) {
    t.gold_first_error_steps = j["gold_first_error_steps"].get<std::set<std::size_t>>();
  }
  if (j.contains("qc_item")) t.qc_item = j["qc_item"].get<std::string>();
  for (const json& l : j.value("labels", json::array())) t.labels.push_back(label_or_throw(l.get<std::string>()));
  if (j.contains("labeled_by")) t.labeled_by = j["labeled_by"].get<std::string>();
  if (j.contains("qc_pass")) t.qc_pass = j["qc_pass"].get<bool>();
  return t;
}

LabelerProfile profile_from_json(const json& j) {
  LabelerProfile p;
  p.labeler_id = j.at("labeler_id").get<std::string>();
  p.status = parse_labeler_status(j.at("status").get<std::string>());
  p.screening_results = j.value("screening_results", std::vector<bool>{});
  p.qc_results = j.value("qc_results", std::vector<bool>{});
  p.screening_served = j.value("screening_served", std::size_t{0});
  p.tasks_completed = j.value("tasks_completed", std::size_t{0});
  if (j.contains("removal_reason")) p.removal_reason = j["removal_reason"].get<std::string>();
  return p;
}

}  // namespace

json to_json(const QcItem& q) {
  return {{"id", q.id},
          {"statement", q.statement},
          {"ground_truth_answer", q.ground_truth_answer},
          {"solution", to_json(q.solution)},
          {"gold_first_error_steps", q.gold_first_error_steps}};
}

QcItem qc_item_from_json(const json& j) {
  QcItem q;
  q.id = j.at("id").get<std::string>();
  q.statement = j.value("statement", "");
  q.ground_truth_answer = j.value("ground_truth_answer", "");
  q.solution = solution_from_json(j.at("solution"));
  q.gold_first_error_steps = j.value("gold_first_error_steps", std::set<std::size_t>{});
  for (std::size_t s : q.gold_first_error_steps) {
    if (s >= q.solution.steps.size()) {
      throw std::invalid_argument("QC item " + q.id + ": gold step " + std::to_string(s) + " out of range");
    }
  }
  return q;
}

json to_json(const LabelerProfile& p) {
  json j = {{"labeler_id", p.labeler_id},
            {"status", to_string(p.status)},
            {"screening_results", p.screening_results},
            {"qc_results", p.qc_results},
            {"screening_served", p.screening_served},
            {"tasks_completed", p.tasks_completed}};
  if (p.removal_reason) j["removal_reason"] = *p.removal_reason;
  const auto agreement = p.qc_agreement();
  j["qc_agreement"] = agreement ? json(*agreement) : json(nullptr);
  return j;
}

void ServiceConfig::validate() const {
  if (!(qc_probability >= 0.0 && qc_probability <= 1.0)) throw std::invalid_argument("qc_probability must be in [0, 1]");
  if (lease_ttl_ms <= 0) throw std::invalid_argument("lease TTL must be positive");
  if (screening_size == 0) throw std::invalid_argument("screening size must be positive");
  if (!(admission_threshold >= 0.0 && admission_threshold <= 1.0)) {
    throw std::invalid_argument("admission threshold must be in [0, 1]");
  }
  if (!(qc_floor >= 0.0 && qc_floor <= 1.0)) throw std::invalid_argument("QC floor must be in [0, 1]");
  if (qc_window == 0) throw std::invalid_argument("QC window must be positive");
}

json ServiceConfig::to_json() const {
  return {{"qc_probability", qc_probability}, {"lease_ttl_ms", lease_ttl_ms},
          {"screening_size", screening_size}, {"admission_threshold", admission_threshold},
          {"qc_floor", qc_floor},             {"qc_window", qc_window},
          {"seed", seed},                     {"snapshot_interval", snapshot_interval}};
}

namespace {

LabelerProfile& profile_for(ServiceState& s, const std::string& id) {
  auto [it, inserted] = s.labelers.try_emplace(id);
  if (inserted) it->second.labeler_id = id;
  return it->second;
}

LabelTask& task_for(ServiceState& s, const std::string& id) {
  auto it = s.tasks.find(id);
  if (it == s.tasks.end()) throw std::runtime_error("event references unknown task " + id);
  return it->second;
}

void drop_lease(ServiceState& s, LabelTask& t) {
  if (t.lease) s.lease_expiry.erase({t.lease->expires_at, t.task_id});
  t.lease.reset();
}

}  // namespace

void ServiceState::apply(const LabelEvent& e) {
  if (e.sequence_number <= last_sequence) {
    throw std::runtime_error("event sequence " + std::to_string(e.sequence_number) + " is not increasing");
  }
  const json& p = e.payload;
  switch (e.kind) {
    case EventKind::generation_started:
      generations.insert(p.at("generation").get<std::uint32_t>());
      break;
    case EventKind::task_created:
      if (p.contains("qc_item")) {
        QcItem q = qc_item_from_json(p["qc_item"]);
        const std::string id = q.id;
        qc_items[id] = std::move(q);
      } else {
        LabelTask t = task_from_json(p.at("task"));
        if (!t.is_qc) pending.insert({t.priority, t.task_id});
        const std::string id = t.task_id;
        tasks[id] = std::move(t);
      }
      break;
    case EventKind::leased: {
      LabelTask& t = task_for(*this, p.at("task_id").get<std::string>());
      const auto labeler = p.at("labeler_id").get<std::string>();
      pending.erase({t.priority, t.task_id});
      t.state = TaskState::leased;
      t.lease = Lease{labeler, p.at("expires_at").get<std::int64_t>()};
      lease_expiry.insert({t.lease->expires_at, t.task_id});
      LabelerProfile& prof = profile_for(*this, labeler);
      ++serves;
      if (t.is_qc) {
        ++qc_serves;
        if (prof.status == LabelerStatus::screening) ++prof.screening_served;
      }
      break;
    }
    case EventKind::step_rated: {
      LabelTask& t = task_for(*this, p.at("task_id").get<std::string>());
      t.labels.push_back(label_or_throw(p.at("rating").get<std::string>()));
      break;
    }
    case EventKind::task_completed: {
      LabelTask& t = task_for(*this, p.at("task_id").get<std::string>());
      const auto labeler = p.at("labeler_id").get<std::string>();
      drop_lease(*this, t);
      t.state = TaskState::completed;
      t.labeled_by = labeler;
      LabelerProfile& prof = profile_for(*this, labeler);
      ++prof.tasks_completed;
      if (t.is_qc) {
        const bool pass = p.at("qc_pass").get<bool>();
        t.qc_pass = pass;
        if (p.value("screening", false)) {
          prof.screening_results.push_back(pass);
        } else {
          prof.qc_results.push_back(pass);
        }
      }
      break;
    }
    case EventKind::lease_expired: {
      LabelTask& t = task_for(*this, p.at("task_id").get<std::string>());
      drop_lease(*this, t);
      t.labels.clear();
      if (t.is_qc) {
        t.state = TaskState::expired;
      } else {
        t.state = TaskState::pending;
        pending.insert({t.priority, t.task_id});
      }
      break;
    }
    case EventKind::labeler_admitted:
      profile_for(*this, p.at("labeler_id").get<std::string>()).status = LabelerStatus::active;
      break;
    case EventKind::labeler_removed: {
      LabelerProfile& prof = profile_for(*this, p.at("labeler_id").get<std::string>());
      prof.status = LabelerStatus::removed;
      prof.removal_reason = p.value("reason", "");
      break;
    }
  }
  last_sequence = e.sequence_number;
}

json ServiceState::to_json() const {
  json j;
  j["tasks"] = json::array();
  for (const auto& [id, t] : tasks) j["tasks"].push_back(service::to_json(t));
  j["qc_items"] = json::array();
  for (const auto& [id, q] : qc_items) j["qc_items"].push_back(service::to_json(q));
  j["labelers"] = json::array();
  for (const auto& [id, l] : labelers) j["labelers"].push_back(service::to_json(l));
  j["generations"] = generations;
  j["last_sequence"] = last_sequence;
  j["serves"] = serves;
  j["qc_serves"] = qc_serves;
  return j;
}

ServiceState ServiceState::from_json(const json& j) {
  ServiceState s;
  for (const json& t : j.at("tasks")) {
    LabelTask task = task_from_json(t);
    if (task.state == TaskState::pending && !task.is_qc) s.pending.insert({task.priority, task.task_id});
    if (task.lease) s.lease_expiry.insert({task.lease->expires_at, task.task_id});
    const std::string id = task.task_id;
    s.tasks[id] = std::move(task);
  }
  for (const json& q : j.at("qc_items")) {
    QcItem item = qc_item_from_json(q);
    const std::string id = item.id;
    s.qc_items[id] = std::move(item);
  }
  for (const json& l : j.at("labelers")) {
    LabelerProfile p = profile_from_json(l);
    const std::string id = p.labeler_id;
    s.labelers[id] = std::move(p);
  }
  s.generations = j.at("generations").get<std::set<std::uint32_t>>();
  s.last_sequence = j.at("last_sequence").get<std::uint64_t>();
  s.serves = j.value("serves", std::uint64_t{0});
  s.qc_serves = j.value("qc_serves", std::uint64_t{0});
  return s;
}

std::optional<std::string> check_phase2_contract(const std::vector<StepLabel>& ratings, std::size_t n_steps) {
  if (ratings.empty()) return "no ratings submitted";
  if (ratings.size() > n_steps) {
    return std::to_string(ratings.size()) + " ratings for " + std::to_string(n_steps) + " steps";
  }
  const auto neg = std::find(ratings.begin(), ratings.end(), StepLabel::negative);
  if (neg == ratings.end()) {
    if (ratings.size() != n_steps) return "ratings stop before the last step without a negative";
    return std::nullopt;
  }
  if (neg + 1 != ratings.end()) {
    return "ratings continue past the negative at step " + std::to_string(neg - ratings.begin());
  }
  return std::nullopt;
}

bool qc_agrees(const std::vector<StepLabel>& ratings, const std::set<std::size_t>& gold) {
  const auto neg = std::find(ratings.begin(), ratings.end(), StepLabel::negative);
  if (neg == ratings.end()) return gold.empty();
  return gold.count(static_cast<std::size_t>(neg - ratings.begin())) != 0;
}

namespace {

constexpr std::uint64_t kQcCoinTag = 0x71635f636f696eULL;
constexpr std::uint64_t kQcPickTag = 0x71635f7069636bULL;

double unit_from(std::uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

const char* kLogName = "events.jsonl";
const char* kSnapshotName = "snapshot.json";

}  // namespace

LabelService::LabelService(ServiceConfig config, std::optional<std::filesystem::path> data_dir, Clock clock)
    : config_(config), data_dir_(std::move(data_dir)), clock_(std::move(clock)) {
  config_.validate();
  if (!clock_) clock_ = system_clock();
  if (data_dir_) load();
}

LabelService::~LabelService() {
  try {
    flush();
  } catch (...) {
  }
}

void LabelService::load() {
  std::filesystem::create_directories(*data_dir_);
  const auto snap_path = *data_dir_ / kSnapshotName;
  if (std::filesystem::exists(snap_path)) {
    std::ifstream in(snap_path);
    const json snap = json::parse(in);
    state_ = ServiceState::from_json(snap.at("state"));
  }
  const auto log_path = *data_dir_ / kLogName;
  if (std::filesystem::exists(log_path)) {
    std::ifstream in(log_path, std::ios::binary);
    std::string line;
    std::uint64_t good_bytes = 0;
    std::uint64_t prev_seq = 0;
    bool torn = false;
    bool missing_newline = false;
    while (std::getline(in, line)) {
      const bool complete = !in.eof();
      LabelEvent e;
      try {
        e = event_from_json(json::parse(line));
      } catch (const std::exception& ex) {
        if (!complete || in.peek() == EOF) {
          // A crash mid-append leaves a partial final line.
          torn = true;
          break;
        }
        throw std::runtime_error("corrupt event log line after seq " + std::to_string(prev_seq) + ": " + ex.what());
      }
      if (e.sequence_number <= prev_seq) throw std::runtime_error("event log sequence is not increasing");
      prev_seq = e.sequence_number;
      good_bytes += line.size() + (complete ? 1 : 0);
      missing_newline = !complete;
      if (e.sequence_number > state_.last_sequence) state_.apply(e);
      log_.push_back(std::move(e));
    }
    in.close();
    if (torn) std::filesystem::resize_file(log_path, good_bytes);
    log_out_.open(log_path, std::ios::binary | std::ios::app);
    if (missing_newline && !torn) log_out_ << '\n';
  } else {
    log_out_.open(log_path, std::ios::binary | std::ios::app);
  }
  if (!log_out_) throw std::runtime_error("cannot append to " + log_path.string());
}

void LabelService::emit(EventKind kind, json payload) {
  LabelEvent e{state_.last_sequence + 1, clock_(), kind, std::move(payload)};
  state_.apply(e);
  if (log_out_.is_open()) {
    log_out_ << to_json(e).dump() << '\n';
    log_out_.flush();
  }
  log_.push_back(std::move(e));
  ++since_snapshot_;
}

void LabelService::maybe_auto_snapshot() {
  if (data_dir_ && config_.snapshot_interval > 0 && since_snapshot_ >= config_.snapshot_interval) {
    write_snapshot_locked();
  }
}

void LabelService::write_snapshot() {
  std::lock_guard lock(mu_);
  write_snapshot_locked();
}

void LabelService::write_snapshot_locked() {
  if (!data_dir_) return;
  const auto path = *data_dir_ / kSnapshotName;
  const auto tmp = *data_dir_ / (std::string(kSnapshotName) + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << json{{"last_sequence", state_.last_sequence}, {"state", state_.to_json()}}.dump() << '\n';
  }
  std::filesystem::rename(tmp, path);
  since_snapshot_ = 0;
}

void LabelService::flush() {
  std::lock_guard lock(mu_);
  if (log_out_.is_open()) log_out_.flush();
}

void LabelService::expire_locked(std::int64_t now) {
  while (!state_.lease_expiry.empty() && state_.lease_expiry.begin()->first <= now) {
    const std::string id = state_.lease_expiry.begin()->second;
    const auto& lease = state_.tasks.at(id).lease;
    emit(EventKind::lease_expired, {{"task_id", id}, {"labeler_id", lease ? lease->labeler_id : ""}});
  }
}

void LabelService::expire_leases() {
  std::lock_guard lock(mu_);
  expire_locked(clock_());
  maybe_auto_snapshot();
}

std::optional<LabelTask> LabelService::next_task(const std::string& labeler_id) {
  if (labeler_id.empty()) throw ServiceError(ServiceError::Kind::invalid_argument, "labeler id is required");
  std::lock_guard lock(mu_);
  const std::int64_t now = clock_();
  expire_locked(now);

  LabelerStatus status = LabelerStatus::screening;
  std::size_t screening_served = 0;
  if (auto it = state_.labelers.find(labeler_id); it != state_.labelers.end()) {
    status = it->second.status;
    screening_served = it->second.screening_served;
  }
  if (status == LabelerStatus::removed) {
    throw ServiceError(ServiceError::Kind::unauthorized, "labeler " + labeler_id + " has been removed");
  }

  // A labeler holding a live lease gets the same task back.
  for (const auto& [expiry, id] : state_.lease_expiry) {
    const LabelTask& t = state_.tasks.at(id);
    if (t.lease && t.lease->labeler_id == labeler_id) return t;
  }

  auto serve_qc = [&](const QcItem& item) {
    const std::string id = "qc-" + std::to_string(state_.last_sequence + 1);
    LabelTask t;
    t.task_id = id;
    t.priority = 0;
    t.solution = item.solution;
    t.statement = item.statement;
    t.ground_truth_answer = item.ground_truth_answer;
    t.is_qc = true;
    t.gold_first_error_steps = item.gold_first_error_steps;
    t.qc_item = item.id;
    t.generation = state_.generations.empty() ? 0 : *state_.generations.rbegin();
    emit(EventKind::task_created, {{"task", to_json(t)}});
    emit(EventKind::leased, {{"task_id", id}, {"labeler_id", labeler_id}, {"expires_at", now + config_.lease_ttl_ms}});
    maybe_auto_snapshot();
    return std::optional<LabelTask>(state_.tasks.at(id));
  };

  if (status == LabelerStatus::screening) {
    if (state_.qc_items.empty()) return std::nullopt;
    auto it = state_.qc_items.begin();
    std::advance(it, static_cast<std::ptrdiff_t>(screening_served % state_.qc_items.size()));
    return serve_qc(it->second);
  }

  if (state_.pending.empty()) return std::nullopt;
  const std::uint64_t seq = state_.last_sequence + 1;
  if (!state_.qc_items.empty() && unit_from(derive_seed(derive_seed(config_.seed, kQcCoinTag), seq)) <
                                      config_.qc_probability) {
    const std::uint64_t pick = derive_seed(derive_seed(config_.seed, kQcPickTag), seq) % state_.qc_items.size();
    auto it = state_.qc_items.begin();
    std::advance(it, static_cast<std::ptrdiff_t>(pick));
    return serve_qc(it->second);
  }
  const std::string id = state_.pending.begin()->second;
  emit(EventKind::leased, {{"task_id", id}, {"labeler_id", labeler_id}, {"expires_at", now + config_.lease_ttl_ms}});
  maybe_auto_snapshot();
  return state_.tasks.at(id);
}

SubmitResult LabelService::submit_labels(const std::string& task_id, const std::string& labeler_id,
                                         const std::vector<StepLabel>& ratings) {
  std::lock_guard lock(mu_);
  expire_locked(clock_());
  auto it = state_.tasks.find(task_id);
  if (it == state_.tasks.end()) throw ServiceError(ServiceError::Kind::not_found, "unknown task " + task_id);
  if (auto l = state_.labelers.find(labeler_id); l != state_.labelers.end() && l->second.status == LabelerStatus::removed) {
    throw ServiceError(ServiceError::Kind::unauthorized, "labeler " + labeler_id + " has been removed");
  }
  const LabelTask& t = it->second;
  if (t.state != TaskState::leased || !t.lease || t.lease->labeler_id != labeler_id) {
    throw ServiceError(ServiceError::Kind::stale_lease,
                       "labeler " + labeler_id + " does not hold a live lease on " + task_id);
  }
  if (auto err = check_phase2_contract(ratings, t.solution.steps.size())) {
    throw ServiceError(ServiceError::Kind::contract_violation, *err);
  }

  const bool screening = state_.labelers.at(labeler_id).status == LabelerStatus::screening;
  for (std::size_t i = 0; i < ratings.size(); ++i) {
    emit(EventKind::step_rated,
         {{"task_id", task_id}, {"labeler_id", labeler_id}, {"step", i}, {"rating", to_string(ratings[i])}});
  }
  SubmitResult result;
  result.task_id = task_id;
  json done = {{"task_id", task_id}, {"labeler_id", labeler_id}, {"n_ratings", ratings.size()}};
  const bool is_qc = state_.tasks.at(task_id).is_qc;
  if (is_qc) {
    const bool pass = qc_agrees(ratings, *state_.tasks.at(task_id).gold_first_error_steps);
    done["qc_pass"] = pass;
    done["screening"] = screening;
    result.is_qc = true;
    result.qc_pass = pass;
  }
  emit(EventKind::task_completed, std::move(done));

  if (is_qc) {
    const LabelerStatus before = state_.labelers.at(labeler_id).status;
    if (screening) {
      screen_locked(labeler_id);
    } else {
      review_locked(labeler_id, config_.qc_window);
    }
    const LabelerStatus after = state_.labelers.at(labeler_id).status;
    if (after != before) result.labeler_status = after;
  }
  maybe_auto_snapshot();
  return result;
}

ScreeningDecision LabelService::screen_labeler(const std::string& labeler_id) {
  std::lock_guard lock(mu_);
  const auto decision = screen_locked(labeler_id);
  maybe_auto_snapshot();
  return decision;
}

ScreeningDecision LabelService::screen_locked(const std::string& labeler_id) {
  auto it = state_.labelers.find(labeler_id);
  if (it == state_.labelers.end()) throw ServiceError(ServiceError::Kind::not_found, "unknown labeler " + labeler_id);
  const LabelerProfile& p = it->second;
  if (p.status == LabelerStatus::active) return ScreeningDecision::admitted;
  if (p.status == LabelerStatus::removed) return ScreeningDecision::rejected;
  if (p.screening_results.size() < config_.screening_size) return ScreeningDecision::not_ready;
  const auto passes = static_cast<std::size_t>(
      std::count(p.screening_results.begin(), p.screening_results.begin() + config_.screening_size, true));
  const auto total = config_.screening_size;
  // passes / total >= threshold, without trusting the division to round well.
  const bool admit = static_cast<double>(passes) >= config_.admission_threshold * static_cast<double>(total) - 1e-9;
  if (admit) {
    emit(EventKind::labeler_admitted,
         {{"labeler_id", labeler_id}, {"reason", "screening"}, {"passes", passes}, {"total", total}});
    return ScreeningDecision::admitted;
  }
  emit(EventKind::labeler_removed,
       {{"labeler_id", labeler_id}, {"reason", "screening_failed"}, {"passes", passes}, {"total", total}});
  return ScreeningDecision::rejected;
}

QcDecision LabelService::continuous_qc_review(const std::string& labeler_id, std::optional<std::size_t> window) {
  std::lock_guard lock(mu_);
  const auto decision = review_locked(labeler_id, window.value_or(config_.qc_window));
  maybe_auto_snapshot();
  return decision;
}

QcDecision LabelService::review_locked(const std::string& labeler_id, std::size_t window) {
  if (window == 0) throw ServiceError(ServiceError::Kind::invalid_argument, "window must be positive");
  auto it = state_.labelers.find(labeler_id);
  if (it == state_.labelers.end()) throw ServiceError(ServiceError::Kind::not_found, "unknown labeler " + labeler_id);
  const LabelerProfile& p = it->second;
  if (p.status != LabelerStatus::active) return QcDecision::keep;
  if (p.qc_results.size() < window) return QcDecision::keep;
  const auto passes =
      static_cast<std::size_t>(std::count(p.qc_results.end() - static_cast<std::ptrdiff_t>(window), p.qc_results.end(), true));
  if (static_cast<double>(passes) >= config_.qc_floor * static_cast<double>(window) - 1e-9) return QcDecision::keep;
  emit(EventKind::labeler_removed,
       {{"labeler_id", labeler_id}, {"reason", "qc_floor"}, {"passes", passes}, {"window", window}});
  return QcDecision::remove;
}

bool LabelService::generation_open_locked() const {
  return std::any_of(state_.tasks.begin(), state_.tasks.end(),
                     [](const auto& kv) { return !kv.second.is_qc && kv.second.state != TaskState::completed; });
}

bool LabelService::generation_open() const {
  std::lock_guard lock(mu_);
  return generation_open_locked();
}

namespace {

void check_input(const TaskInput& in) {
  if (in.solution.steps.empty()) throw ServiceError(ServiceError::Kind::invalid_argument, "solution has no steps");
  if (in.solution.id.empty()) throw ServiceError(ServiceError::Kind::invalid_argument, "solution id is required");
}

}  // namespace

void LabelService::add_qc_items(const std::vector<QcItem>& items) {
  std::lock_guard lock(mu_);
  std::set<std::string> ids;
  for (const auto& q : items) {
    if (q.id.empty() || q.solution.steps.empty()) {
      throw ServiceError(ServiceError::Kind::invalid_argument, "QC items need an id and steps");
    }
    if (state_.qc_items.count(q.id) != 0 || !ids.insert(q.id).second) {
      throw ServiceError(ServiceError::Kind::invalid_argument, "duplicate QC item " + q.id);
    }
    for (std::size_t s : q.gold_first_error_steps) {
      if (s >= q.solution.steps.size()) {
        throw ServiceError(ServiceError::Kind::invalid_argument, "QC item " + q.id + ": gold step out of range");
      }
    }
  }
  for (const auto& q : items) emit(EventKind::task_created, {{"qc_item", to_json(q)}});
  maybe_auto_snapshot();
}

std::uint32_t LabelService::start_generation(const GenerationRequest& request) {
  {
    std::lock_guard lock(mu_);
    if (generation_open_locked()) {
      throw ServiceError(ServiceError::Kind::conflict, "a generation is still open");
    }
    if (request.tasks.empty() && request.qc_items.empty()) {
      throw ServiceError(ServiceError::Kind::invalid_argument, "generation batch is empty");
    }
    for (const auto& in : request.tasks) check_input(in);
  }
  add_qc_items(request.qc_items);
  std::lock_guard lock(mu_);
  // Re-check: another admin call may have raced in between.
  if (generation_open_locked()) throw ServiceError(ServiceError::Kind::conflict, "a generation is still open");
  const std::uint32_t gen = state_.generations.empty() ? 1 : *state_.generations.rbegin() + 1;
  emit(EventKind::generation_started,
       {{"generation", gen}, {"n_tasks", request.tasks.size()}, {"n_qc_items", request.qc_items.size()}});
  for (std::size_t i = 0; i < request.tasks.size(); ++i) {
    char id[48];
    std::snprintf(id, sizeof(id), "g%u-t%05zu", gen, i);
    LabelTask t;
    t.task_id = id;
    t.generation = gen;
    t.priority = (static_cast<std::uint64_t>(gen) << 32) | i;
    t.solution = request.tasks[i].solution;
    t.statement = request.tasks[i].statement;
    t.ground_truth_answer = request.tasks[i].ground_truth_answer;
    emit(EventKind::task_created, {{"task", to_json(t)}});
  }
  maybe_auto_snapshot();
  return gen;
}

std::string LabelService::inject_task(const TaskInput& input, std::optional<std::uint64_t> priority) {
  check_input(input);
  std::lock_guard lock(mu_);
  if (state_.generations.empty()) throw ServiceError(ServiceError::Kind::conflict, "no generation has been started");
  const std::uint32_t gen = *state_.generations.rbegin();
  const std::string id = "g" + std::to_string(gen) + "-i" + std::to_string(state_.last_sequence + 1);
  LabelTask t;
  t.task_id = id;
  t.generation = gen;
  t.priority = priority.value_or((static_cast<std::uint64_t>(gen) << 32) | 0xffffffffULL);
  t.solution = input.solution;
  t.statement = input.statement;
  t.ground_truth_answer = input.ground_truth_answer;
  t.injected = true;
  emit(EventKind::task_created, {{"task", to_json(t)}});
  maybe_auto_snapshot();
  return id;
}

void LabelService::admit_labeler(const std::string& labeler_id) {
  if (labeler_id.empty()) throw ServiceError(ServiceError::Kind::invalid_argument, "labeler id is required");
  std::lock_guard lock(mu_);
  emit(EventKind::labeler_admitted, {{"labeler_id", labeler_id}, {"reason", "manual"}});
  maybe_auto_snapshot();
}

std::optional<LabelTask> LabelService::task(const std::string& task_id) const {
  std::lock_guard lock(mu_);
  auto it = state_.tasks.find(task_id);
  if (it == state_.tasks.end()) return std::nullopt;
  return it->second;
}

std::optional<LabelerProfile> LabelService::labeler(const std::string& labeler_id) const {
  std::lock_guard lock(mu_);
  auto it = state_.labelers.find(labeler_id);
  if (it == state_.labelers.end()) return std::nullopt;
  return it->second;
}

std::vector<GenerationProgress> LabelService::progress() const {
  std::lock_guard lock(mu_);
  std::map<std::uint32_t, GenerationProgress> by_gen;
  for (std::uint32_t g : state_.generations) by_gen[g].generation = g;
  for (const auto& [id, t] : state_.tasks) {
    if (t.is_qc) continue;
    auto& p = by_gen[t.generation];
    p.generation = t.generation;
    ++p.total;
    if (t.state == TaskState::pending) ++p.pending;
    if (t.state == TaskState::leased) ++p.leased;
    if (t.state == TaskState::completed) ++p.completed;
  }
  std::vector<GenerationProgress> out;
  for (const auto& [g, p] : by_gen) out.push_back(p);
  return out;
}

json LabelService::stats() const {
  const auto gens = progress();
  std::lock_guard lock(mu_);
  json j;
  j["config"] = config_.to_json();
  std::map<std::string, std::size_t> by_state = {{"pending", 0}, {"leased", 0}, {"completed", 0}, {"expired", 0}};
  std::size_t qc_tasks = 0;
  for (const auto& [id, t] : state_.tasks) {
    ++by_state[std::string(to_string(t.state))];
    if (t.is_qc) ++qc_tasks;
  }
  j["tasks"] = by_state;
  j["qc_tasks"] = qc_tasks;
  j["qc_items"] = state_.qc_items.size();
  std::map<std::string, std::size_t> by_status = {{"screening", 0}, {"active", 0}, {"removed", 0}};
  for (const auto& [id, l] : state_.labelers) ++by_status[std::string(to_string(l.status))];
  j["labelers"] = by_status;
  j["generations"] = json::array();
  for (const auto& p : gens) {
    j["generations"].push_back({{"generation", p.generation},
                                {"total", p.total},
                                {"pending", p.pending},
                                {"leased", p.leased},
                                {"completed", p.completed}});
  }
  j["generation_open"] = generation_open_locked();
  j["serves"] = state_.serves;
  j["qc_serves"] = state_.qc_serves;
  j["events"] = state_.last_sequence;
  return j;
}

json LabelService::state_json() const {
  std::lock_guard lock(mu_);
  return state_.to_json();
}

std::vector<LabelEvent> LabelService::events() const {
  std::lock_guard lock(mu_);
  return log_;
}

}  // namespace stepwise::service
