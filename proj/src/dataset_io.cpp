#include "stepwise/dataset_io.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace stepwise::dataset {

namespace {

const json* resolve(const json& root, const std::string& pointer) {
  if (pointer.empty()) return nullptr;
  const json::json_pointer ptr(pointer);
  if (!root.contains(ptr)) return nullptr;
  const json& v = root.at(ptr);
  return v.is_null() ? nullptr : &v;
}

std::string fnv_hex(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

bool truthy(const json* v) { return v != nullptr && v->is_boolean() && v->get<bool>(); }

std::string rating_key(const json& v) { return v.dump(); }

// Throws with a message suitable for a diagnostic.
LabeledSolution parse_mapped(const json& rec, const FieldMapping& m, const RatingMap& ratings,
                             const std::string& fallback_id, Problem& problem_out) {
  const json* problem_text = resolve(rec, m.problem_text);
  if (problem_text == nullptr) throw std::runtime_error("missing problem text at " + m.problem_text);
  const json* steps = resolve(rec, m.steps);
  if (steps == nullptr || !steps->is_array()) throw std::runtime_error("missing step array at " + m.steps);

  std::vector<std::string> texts;
  std::vector<StepLabel> labels;
  for (const json& step : *steps) {
    const json* holder = &step;
    const json* text = nullptr;
    const json* rating = nullptr;
    if (!m.step_completions.empty()) {
      const json* completions = resolve(step, m.step_completions);
      const json* chosen = resolve(step, m.step_chosen_index);
      const json* human = resolve(step, m.step_human_text);
      if (chosen == nullptr && human != nullptr) {
        text = human->is_object() ? resolve(*human, m.step_text) : human;
        if (text == nullptr) throw std::runtime_error("human completion without text");
        texts.push_back(text->get<std::string>());
        auto label = ratings.lookup(json::parse(m.human_rating.empty() ? "1" : m.human_rating));
        if (!label) throw std::runtime_error("human_rating not covered by rating map");
        labels.push_back(*label);
        continue;
      }
      if (completions == nullptr || !completions->is_array() || completions->empty()) {
        throw std::runtime_error("step without completions");
      }
      std::size_t index = chosen != nullptr ? chosen->get<std::size_t>() : 0;
      if (index >= completions->size()) throw std::runtime_error("chosen completion out of range");
      holder = &(*completions)[index];
    }
    text = resolve(*holder, m.step_text);
    rating = resolve(*holder, m.step_rating);
    if (text == nullptr) throw std::runtime_error("step without text");
    texts.push_back(text->get<std::string>());
    if (rating == nullptr) throw std::runtime_error("unknown rating null");
    auto label = ratings.lookup(*rating);
    if (!label) throw std::runtime_error("unknown rating " + rating_key(*rating));
    labels.push_back(*label);
  }
  if (texts.empty()) throw std::runtime_error("record has no steps");

  problem_out = Problem{};
  problem_out.statement = problem_text->get<std::string>();
  const json* pid = resolve(rec, m.problem_id);
  problem_out.id = pid != nullptr ? (pid->is_string() ? pid->get<std::string>() : pid->dump())
                                  : "p-" + fnv_hex(problem_out.statement);
  const json* gt = resolve(rec, m.ground_truth);
  if (gt != nullptr) problem_out.ground_truth_answer = gt->is_string() ? gt->get<std::string>() : gt->dump();

  SolutionSource source;
  const json* gen = resolve(rec, m.generation);
  source.generation = gen != nullptr && gen->is_number_integer() ? gen->get<std::uint32_t>() : 0;
  const json* phase = resolve(rec, m.phase);
  source.phase = phase != nullptr ? phase->get<int>() : m.default_phase;
  const json* generator = resolve(rec, m.generator_id);
  source.generator_id = generator != nullptr ? generator->get<std::string>() : "";

  const json* sid = resolve(rec, m.solution_id);
  std::string id = sid != nullptr ? (sid->is_string() ? sid->get<std::string>() : sid->dump()) : fallback_id;
  std::optional<std::string> truth;
  if (!problem_out.ground_truth_answer.empty()) truth = problem_out.ground_truth_answer;

  LabeledSolution out;
  out.solution = make_solution(std::move(id), problem_out.id, std::move(texts), std::move(source), truth);
  out.step_labels = std::move(labels);
  const json* labeler = resolve(rec, m.labeler);
  out.labeler_id = labeler != nullptr ? labeler->get<std::string>() : "";
  out.is_quality_control = truthy(resolve(rec, m.is_quality_control));
  for (const auto& flag : m.extra_qc_flags) out.is_quality_control = out.is_quality_control || truthy(resolve(rec, flag));
  if (m.finish_reason.empty()) {
    out.completed = true;
  } else {
    const json* reason = resolve(rec, m.finish_reason);
    out.completed = false;
    if (reason != nullptr) {
      for (const auto& v : m.completed_values) out.completed = out.completed || reason->get<std::string>() == v;
    }
  }
  return out;
}

template <class ParseLine>
ImportResult import_lines(std::istream& in, ParseLine&& parse_line) {
  ImportResult result;
  std::set<std::string> seen_problems;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const json rec = json::parse(line);
      Problem problem;
      LabeledSolution s = parse_line(rec, line_no, problem);
      if (!problem.id.empty() && seen_problems.insert(problem.id).second) result.problems.push_back(std::move(problem));
      result.records.push_back(std::move(s));
    } catch (const std::exception& e) {
      std::string what = e.what();
      if (what.rfind("[json.exception", 0) == 0) what = "malformed record: " + what;
      result.diagnostics.push_back({line_no, what + " at line " + std::to_string(line_no)});
    }
  }
  return result;
}

}  // namespace

RatingMap RatingMap::defaults() {
  RatingMap m;
  m.set(-1, StepLabel::negative);
  m.set(0, StepLabel::neutral);
  m.set(1, StepLabel::positive);
  for (StepLabel l : {StepLabel::positive, StepLabel::neutral, StepLabel::negative}) m.set(std::string(to_string(l)), l);
  return m;
}

RatingMap RatingMap::parse(std::string_view spec) {
  RatingMap m;
  std::stringstream ss{std::string(spec)};
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.rfind(':');
    if (colon == std::string::npos) throw std::invalid_argument("rating map entry '" + item + "' lacks ':'");
    const std::string key = trim(item.substr(0, colon));
    auto label = parse_step_label(trim(item.substr(colon + 1)));
    if (!label) throw std::invalid_argument("rating map entry '" + item + "' has an unknown label");
    json value;
    try {
      value = json::parse(key);
    } catch (const json::exception&) {
      value = key;
    }
    m.set(value, *label);
  }
  if (m.table_.empty()) throw std::invalid_argument("empty rating map");
  return m;
}

void RatingMap::set(const json& source_value, StepLabel label) { table_[rating_key(source_value)] = label; }

std::optional<StepLabel> RatingMap::lookup(const json& source_value) const {
  auto it = table_.find(rating_key(source_value));
  if (it == table_.end()) return std::nullopt;
  return it->second;
}

FieldMapping FieldMapping::prm800k() {
  FieldMapping m;
  m.problem_text = "/question/problem";
  m.ground_truth = "/question/ground_truth_answer";
  m.labeler = "/labeler";
  m.is_quality_control = "/is_quality_control_question";
  m.extra_qc_flags = {"/is_initial_screening_question"};
  m.generation = "/generation";
  m.finish_reason = "/label/finish_reason";
  m.completed_values = {"solution", "found_error"};
  m.steps = "/label/steps";
  m.step_completions = "/completions";
  m.step_chosen_index = "/chosen_completion";
  m.step_text = "/text";
  m.step_rating = "/rating";
  m.step_human_text = "/human_completion";
  m.human_rating = "1";
  return m;
}

FieldMapping FieldMapping::from_json(const json& j) {
  FieldMapping m;
  auto get = [&](const char* key, std::string& field) {
    if (j.contains(key)) field = j[key].get<std::string>();
  };
  get("solution_id", m.solution_id);
  get("problem_id", m.problem_id);
  get("problem_text", m.problem_text);
  get("ground_truth", m.ground_truth);
  get("labeler", m.labeler);
  get("is_quality_control", m.is_quality_control);
  get("generation", m.generation);
  get("phase", m.phase);
  get("finish_reason", m.finish_reason);
  get("steps", m.steps);
  get("step_completions", m.step_completions);
  get("step_chosen_index", m.step_chosen_index);
  get("step_text", m.step_text);
  get("step_rating", m.step_rating);
  get("step_human_text", m.step_human_text);
  get("human_rating", m.human_rating);
  get("generator_id", m.generator_id);
  if (j.contains("extra_qc_flags")) m.extra_qc_flags = j["extra_qc_flags"].get<std::vector<std::string>>();
  if (j.contains("completed_values")) m.completed_values = j["completed_values"].get<std::vector<std::string>>();
  m.default_phase = j.value("default_phase", 2);
  if (m.problem_text.empty() || m.steps.empty() || m.step_text.empty() || m.step_rating.empty()) {
    throw std::invalid_argument("field mapping needs problem_text, steps, step_text and step_rating");
  }
  return m;
}

json FieldMapping::to_json() const {
  return {{"solution_id", solution_id},
          {"problem_id", problem_id},
          {"problem_text", problem_text},
          {"ground_truth", ground_truth},
          {"labeler", labeler},
          {"is_quality_control", is_quality_control},
          {"extra_qc_flags", extra_qc_flags},
          {"generation", generation},
          {"phase", phase},
          {"default_phase", default_phase},
          {"finish_reason", finish_reason},
          {"completed_values", completed_values},
          {"steps", steps},
          {"step_completions", step_completions},
          {"step_chosen_index", step_chosen_index},
          {"step_text", step_text},
          {"step_rating", step_rating},
          {"step_human_text", step_human_text},
          {"human_rating", human_rating},
          {"generator_id", generator_id}};
}

json to_json(const LabeledSolution& s) {
  std::vector<std::string> labels;
  labels.reserve(s.step_labels.size());
  for (StepLabel l : s.step_labels) labels.emplace_back(to_string(l));
  return {{"solution", to_json(s.solution)},
          {"step_labels", labels},
          {"labeler_id", s.labeler_id},
          {"is_quality_control", s.is_quality_control},
          {"completed", s.completed}};
}

LabeledSolution labeled_from_json(const json& j, const RatingMap& ratings) {
  LabeledSolution s;
  s.solution = solution_from_json(j.at("solution"));
  for (const json& v : j.at("step_labels")) {
    auto label = ratings.lookup(v);
    if (!label) throw std::runtime_error("unknown rating " + v.dump());
    s.step_labels.push_back(*label);
  }
  if (s.step_labels.size() > s.solution.steps.size()) {
    throw std::runtime_error("more labels than steps in " + s.solution.id);
  }
  s.labeler_id = j.value("labeler_id", "");
  s.is_quality_control = j.value("is_quality_control", false);
  s.completed = j.value("completed", true);
  return s;
}

ImportResult import_canonical(std::istream& in, const RatingMap& ratings) {
  return import_lines(in, [&](const json& rec, std::size_t, Problem&) { return labeled_from_json(rec, ratings); });
}

ImportResult import_mapped(std::istream& in, const FieldMapping& mapping, const RatingMap& ratings,
                           const std::string& source_name) {
  return import_lines(in, [&](const json& rec, std::size_t line_no, Problem& problem) {
    return parse_mapped(rec, mapping, ratings, source_name + ":" + std::to_string(line_no), problem);
  });
}

ImportResult import_labeled(const std::filesystem::path& path, Schema schema, const RatingMap& ratings,
                            const FieldMapping& mapping) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  if (schema == Schema::canonical) return import_canonical(in, ratings);
  return import_mapped(in, mapping, ratings, path.stem().string());
}

void export_labeled(std::ostream& out, const std::vector<LabeledSolution>& data) {
  for (const auto& s : data) out << to_json(s).dump() << '\n';
}

std::vector<LabeledSolution> filter_training(const std::vector<LabeledSolution>& data) {
  std::vector<LabeledSolution> out;
  for (const auto& s : data) {
    if (!s.is_quality_control && s.completed) out.push_back(s);
  }
  return out;
}

std::optional<double> Counts::pct_end_correct() const {
  if (n_solutions == 0) return std::nullopt;
  return 100.0 * static_cast<double>(n_end_correct) / static_cast<double>(n_solutions);
}

std::optional<double> Counts::pct_correct_steps() const {
  if (n_step_labels == 0) return std::nullopt;
  return 100.0 * static_cast<double>(n_correct_steps) / static_cast<double>(n_step_labels);
}

namespace {

json counts_json(const Counts& c) {
  auto pct = [](std::optional<double> v) { return v ? json(*v) : json(nullptr); };
  return {{"n_step_labels", c.n_step_labels},
          {"n_solutions", c.n_solutions},
          {"n_problems", c.n_problems},
          {"pct_end_correct", pct(c.pct_end_correct())},
          {"pct_correct_steps", pct(c.pct_correct_steps())}};
}

}  // namespace

json DatasetStats::to_json() const {
  json j = counts_json(combined);
  j["neutral_counts_correct"] = neutral_counts_correct;
  json phases = json::object();
  for (const auto& [phase, c] : per_phase) phases[std::to_string(phase)] = counts_json(c);
  j["per_phase"] = phases;
  return j;
}

DatasetStats compute_stats(const std::vector<LabeledSolution>& data, bool neutral_counts_correct) {
  DatasetStats stats;
  stats.neutral_counts_correct = neutral_counts_correct;
  std::set<std::string> problems;
  std::map<int, std::set<std::string>> phase_problems;
  auto add = [&](Counts& c, const LabeledSolution& s) {
    ++c.n_solutions;
    if (s.solution.is_correct) {
      ++c.n_graded;
      if (*s.solution.is_correct) ++c.n_end_correct;
    }
    for (StepLabel l : s.step_labels) {
      ++c.n_step_labels;
      if (l == StepLabel::positive || (neutral_counts_correct && l == StepLabel::neutral)) ++c.n_correct_steps;
    }
  };
  for (const auto& s : data) {
    add(stats.combined, s);
    add(stats.per_phase[s.solution.source.phase], s);
    problems.insert(s.solution.problem_id);
    phase_problems[s.solution.source.phase].insert(s.solution.problem_id);
  }
  stats.combined.n_problems = problems.size();
  for (auto& [phase, c] : stats.per_phase) c.n_problems = phase_problems[phase].size();
  return stats;
}

namespace {

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<json> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

template <class T>
void write_jsonl(const std::filesystem::path& path, const std::vector<T>& items) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& item : items) out << to_json(item).dump() << '\n';
}

}  // namespace

std::vector<Problem> read_problems(const std::filesystem::path& path) {
  std::vector<Problem> out;
  std::set<std::string> ids;
  for (const json& j : read_jsonl(path)) {
    out.push_back(problem_from_json(j));
    if (!ids.insert(out.back().id).second) throw std::runtime_error("duplicate problem id " + out.back().id);
  }
  return out;
}

std::vector<SolutionRecord> read_solutions(const std::filesystem::path& path) {
  std::vector<SolutionRecord> out;
  for (const json& j : read_jsonl(path)) out.push_back(solution_from_json(j));
  return out;
}

void write_problems(const std::filesystem::path& path, const std::vector<Problem>& problems) {
  write_jsonl(path, problems);
}

void write_solutions(const std::filesystem::path& path, const std::vector<SolutionRecord>& solutions) {
  write_jsonl(path, solutions);
}

void write_diagnostics(const std::filesystem::path& path, const std::vector<Diagnostic>& diagnostics) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& d : diagnostics) out << json{{"line", d.line}, {"message", d.message}}.dump() << '\n';
}

}  // namespace stepwise::dataset
