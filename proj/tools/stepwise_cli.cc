// stepwise: command-line entry point for the process-supervision workbench.

#include <algorithm>
#include <csignal>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <thread>
#include <unordered_map>

#include <pthread.h>

#include "CLI11.hpp"
#include "stepwise/active_learning.hpp"
#include "stepwise/collection.hpp"
#include "stepwise/dataset_io.hpp"
#include "stepwise/eval_harness.hpp"
#include "stepwise/experiment.hpp"
#include "stepwise/external_scorer.hpp"
#include "stepwise/label_http.hpp"
#include "stepwise/label_service.hpp"
#include "stepwise/reward_models.hpp"
#include "stepwise/scoring.hpp"

namespace fs = std::filesystem;
using namespace stepwise;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitOperational = 1;
constexpr int kExitInput = 2;

class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void require_readable(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
}

void prepare_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create output directory " + dir.string());
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

// Every option of `sub` as resolved after flags, config file and defaults.
json resolved_options(const CLI::App& sub) {
  json j = json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    const auto& names = opt->get_lnames();
    if (names.empty() || names.front() == "help" || names.front() == "config") continue;
    const std::string key = names.front();
    if (opt->count() == 0) {
      j[key] = opt->get_default_str();
      continue;
    }
    const auto values = opt->reduced_results();
    if (opt->get_expected_max() > 1) {
      j[key] = values;
    } else if (opt->get_type_size() == 0) {
      j[key] = true;
    } else {
      j[key] = values.empty() ? std::string() : values.back();
    }
  }
  return j;
}

void write_config(const fs::path& dir, const CLI::App& sub, const json& extra = json::object()) {
  json j = {{"command", sub.get_name()}, {"options", resolved_options(sub)}};
  if (!extra.empty()) j["resolved"] = extra;
  write_json(dir / "config.json", j);
}

scoring::ScoringConfig scoring_config(const std::string& neutral, const std::string& reduction) {
  return {scoring::parse_neutral_policy(neutral), scoring::parse_reduction(reduction)};
}

std::size_t worker_count(std::size_t requested) {
  if (requested > 0) return requested;
  return std::max(1u, std::thread::hardware_concurrency());
}

template <class Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    workers.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < count; i += threads) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// --- import ---------------------------------------------------------------

struct ImportArgs {
  fs::path in, out, mapping;
  std::string schema = "mapped";
  std::string rating_map;
  bool neutral_incorrect = false;
  bool strict = false;
};

int cmd_import(const ImportArgs& a, const CLI::App& sub) {
  require_readable(a.in);
  const auto ratings = a.rating_map.empty() ? dataset::RatingMap::defaults() : dataset::RatingMap::parse(a.rating_map);
  dataset::FieldMapping mapping = dataset::FieldMapping::prm800k();
  if (!a.mapping.empty()) {
    require_readable(a.mapping);
    std::ifstream in(a.mapping);
    mapping = dataset::FieldMapping::from_json(json::parse(in));
  }
  if (a.schema != "mapped" && a.schema != "canonical") throw InputError("--schema must be mapped or canonical");
  const auto schema = a.schema == "canonical" ? dataset::Schema::canonical : dataset::Schema::mapped;
  const auto result = dataset::import_labeled(a.in, schema, ratings, mapping);

  prepare_dir(a.out);
  dataset::write_diagnostics(a.out / "diagnostics.jsonl", result.diagnostics);
  write_config(a.out, sub, {{"mapping", mapping.to_json()}});
  if (result.records.empty() && !result.diagnostics.empty()) {
    std::cerr << "import: no valid records; " << result.diagnostics.size() << " diagnostics written to "
              << (a.out / "diagnostics.jsonl").string() << '\n';
    return kExitInput;
  }
  const auto training = dataset::filter_training(result.records);
  {
    std::ofstream all(a.out / "labeled.jsonl", std::ios::binary);
    dataset::export_labeled(all, result.records);
    std::ofstream train(a.out / "train.jsonl", std::ios::binary);
    dataset::export_labeled(train, training);
  }
  dataset::write_problems(a.out / "problems.jsonl", result.problems);
  json stats = dataset::compute_stats(training, !a.neutral_incorrect).to_json();
  stats["unfiltered"] = dataset::compute_stats(result.records, !a.neutral_incorrect).to_json();
  write_json(a.out / "stats.json", stats);
  std::cout << "imported " << result.records.size() << " records (" << training.size() << " after filtering), "
            << result.diagnostics.size() << " diagnostics\n";
  if (a.strict && !result.diagnostics.empty()) return kExitInput;
  return kExitOk;
}

// --- score ----------------------------------------------------------------

struct ScoreArgs {
  fs::path problems, solutions, model, table, out;
  std::string endpoint;
  std::string kind = "prm";
  std::string neutral = "pos";
  std::string reduction = "product";
  int timeout_ms = 5000;
  int retries = 2;
  std::size_t threads = 1;
};

std::unordered_map<std::string, Problem> problem_index(const fs::path& path) {
  require_readable(path);
  std::unordered_map<std::string, Problem> out;
  for (auto& p : dataset::read_problems(path)) {
    const std::string id = p.id;
    out.emplace(id, std::move(p));
  }
  return out;
}

rm::MicroModel read_model(const fs::path& path) {
  require_readable(path);
  std::ifstream in(path);
  return rm::MicroModel::from_json(json::parse(in));
}

int cmd_score(const ScoreArgs& a, const CLI::App& sub) {
  const int sources = (a.model.empty() ? 0 : 1) + (a.table.empty() ? 0 : 1) + (a.endpoint.empty() ? 0 : 1);
  if (sources != 1) throw InputError("give exactly one of --model, --table, --endpoint");
  if (a.kind != "prm" && a.kind != "orm") throw InputError("--kind must be prm or orm");
  if (a.kind == "orm" && !a.table.empty()) throw InputError("--table holds step probabilities; use it with --kind prm");
  const auto cfg = scoring_config(a.neutral, a.reduction);
  const auto problems = problem_index(a.problems);
  require_readable(a.solutions);
  const auto solutions = dataset::read_solutions(a.solutions);

  rm::ScorerClientOptions client{std::chrono::milliseconds(a.timeout_ms), a.retries};
  std::unique_ptr<rm::ProcessScorer> prm;
  std::unique_ptr<rm::OutcomeScorer> orm;
  if (a.kind == "prm") {
    if (!a.model.empty()) prm = std::make_unique<rm::MicroProcessScorer>(read_model(a.model));
    if (!a.table.empty()) {
      require_readable(a.table);
      prm = std::make_unique<rm::TabularProcessScorer>(rm::TabularProcessScorer::load(a.table));
    }
    if (!a.endpoint.empty()) prm = std::make_unique<rm::HttpProcessScorer>(a.endpoint, client);
  } else {
    if (!a.model.empty()) orm = std::make_unique<rm::MicroOutcomeScorer>(read_model(a.model));
    if (!a.endpoint.empty()) orm = std::make_unique<rm::HttpOutcomeScorer>(a.endpoint, client);
  }

  std::vector<json> lines(solutions.size());
  parallel_for(solutions.size(), worker_count(a.threads), [&](std::size_t i) {
    const SolutionRecord& s = solutions[i];
    auto it = problems.find(s.problem_id);
    if (it == problems.end()) throw InputError("solution " + s.id + " references unknown problem " + s.problem_id);
    json line = {{"solution_id", s.id}, {"problem_id", s.problem_id}};
    if (prm) {
      const auto probs = prm->score(it->second, s);
      validate(probs, s.steps.size());
      const auto scored = scoring::solution_score(s.id, probs, cfg);
      json steps = json::array();
      for (const auto& p : probs) steps.push_back({{"p_positive", p.p_positive}, {"p_neutral", p.p_neutral}, {"p_negative", p.p_negative}});
      line["score"] = scored.score();
      line["steps"] = steps;
      line["step_scores"] = scored.per_step_scores();
    } else {
      line["score"] = scoring::orm_score(orm->score(it->second, s));
    }
    lines[i] = std::move(line);
  });

  prepare_dir(a.out);
  std::ofstream out(a.out / "scores.jsonl", std::ios::binary);
  for (const auto& l : lines) out << l.dump() << '\n';
  write_config(a.out, sub);
  std::cout << "scored " << lines.size() << " solutions\n";
  return kExitOk;
}

// --- select ---------------------------------------------------------------

struct SelectArgs {
  fs::path solutions, scores, out;
  std::string mode = "mixed";
  std::size_t k = 1;
  double fraction = 0.8;
  std::size_t pool_size = 1000;
  std::uint64_t seed = 0;
};

int cmd_select(const SelectArgs& a, const CLI::App& sub) {
  require_readable(a.solutions);
  require_readable(a.scores);
  std::unordered_map<std::string, double> scores;
  {
    std::ifstream in(a.scores);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (trim(line).empty()) continue;
      const json j = json::parse(line);
      scores[j.at("solution_id").get<std::string>()] = j.at("score").get<double>();
    }
  }
  std::vector<active::PoolCandidate> pool;
  for (const auto& s : dataset::read_solutions(a.solutions)) {
    auto it = scores.find(s.id);
    if (it == scores.end()) throw InputError("no score for solution " + s.id);
    if (!s.is_correct) throw InputError("solution " + s.id + " is ungraded");
    pool.push_back({s.id, s.problem_id, it->second, *s.is_correct});
  }
  active::SelectionPolicy policy;
  policy.mode = active::parse_selection_mode(a.mode);
  policy.k_or_n = a.k;
  policy.wrong_answer_fraction = a.fraction;
  policy.pool_size_per_problem = a.pool_size;
  policy.seed = a.seed;
  const auto picked = active::select(pool, policy);

  std::unordered_map<std::string, std::string> problem_of;
  for (const auto& c : pool) problem_of[c.solution_id] = c.problem_id;
  prepare_dir(a.out);
  std::ofstream out(a.out / "selected.jsonl", std::ios::binary);
  for (const auto& p : picked) {
    out << json{{"solution_id", p.solution_id}, {"problem_id", problem_of.at(p.solution_id)}, {"reason", p.reason}}.dump()
        << '\n';
  }
  write_config(a.out, sub, {{"policy", policy.to_json()}});
  std::cout << "selected " << picked.size() << " of " << pool.size() << " candidates\n";
  return kExitOk;
}

// --- train ----------------------------------------------------------------

struct TrainArgs {
  fs::path data, problems, init, out;
  std::string kind = "prm";
  std::string orm_label = "final-answer";
  std::string rating_map;
  std::optional<int> epochs;
  double lr = 0.05;
  double l2 = 1e-6;
  std::size_t batch = 32;
  std::size_t dim = 1u << 16;
  std::uint64_t seed = 0;
  bool no_filter = false;
};

int cmd_train(const TrainArgs& a, const CLI::App& sub) {
  if (a.kind != "prm" && a.kind != "orm") throw InputError("--kind must be prm or orm");
  if (a.orm_label != "final-answer" && a.orm_label != "process") throw InputError("--orm-label must be final-answer or process");
  require_readable(a.data);
  const auto ratings = a.rating_map.empty() ? dataset::RatingMap::defaults() : dataset::RatingMap::parse(a.rating_map);
  const auto imported = dataset::import_labeled(a.data, dataset::Schema::canonical, ratings);
  if (imported.records.empty()) throw InputError("no valid records in " + a.data.string());
  const auto data = a.no_filter ? imported.records : dataset::filter_training(imported.records);

  rm::StatementIndex statements;
  if (!a.problems.empty()) {
    for (const auto& [id, p] : problem_index(a.problems)) statements[id] = p.statement;
  } else {
    for (const auto& p : imported.problems) statements[p.id] = p.statement;
  }

  rm::Hyperparams hp = a.kind == "prm" ? rm::default_prm_hyperparams() : rm::default_orm_hyperparams();
  if (a.epochs) hp.epochs = *a.epochs;
  hp.learning_rate = a.lr;
  hp.l2 = a.l2;
  hp.batch_size = a.batch;
  hp.feature_dim = a.dim;
  hp.seed = a.seed;
  rm::MicroModel init;
  if (!a.init.empty()) init = read_model(a.init);

  rm::TrainReport report;
  rm::MicroModel model;
  if (a.kind == "prm") {
    model = rm::train_prm(data, statements, hp, init, &report);
  } else {
    std::vector<std::pair<SolutionRecord, bool>> pairs;
    for (const auto& d : data) {
      bool label = false;
      if (a.orm_label == "process") {
        label = std::find(d.step_labels.begin(), d.step_labels.end(), StepLabel::negative) == d.step_labels.end();
      } else {
        if (!d.solution.is_correct) throw InputError("solution " + d.solution.id + " is ungraded");
        label = *d.solution.is_correct;
      }
      pairs.emplace_back(d.solution, label);
    }
    model = rm::train_orm(pairs, statements, hp, init, &report);
  }

  prepare_dir(a.out);
  write_json(a.out / "model.json", model.to_json());
  write_json(a.out / "train_report.json", {{"epoch_losses", report.epoch_losses},
                                           {"updates", report.updates},
                                           {"solutions", data.size()},
                                           {"diagnostics", imported.diagnostics.size()}});
  write_config(a.out, sub, {{"hyperparams", hp.to_json()}});
  std::cout << "trained " << a.kind << " on " << data.size() << " solutions, " << report.updates << " updates\n";
  return kExitOk;
}

// --- eval -----------------------------------------------------------------

struct EvalArgs {
  fs::path pool, out;
  std::string methods = "prm,orm,majority";
  std::vector<std::size_t> n = {1, 2, 5, 10};
  std::size_t subsamples = 100;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

eval::CurveOptions curve_options(const EvalArgs& a) {
  eval::CurveOptions o;
  o.m_subsamples = a.subsamples;
  o.seed = a.seed;
  o.threads = worker_count(a.threads);
  return o;
}

eval::EvalPool load_pool(const fs::path& path) {
  require_readable(path);
  return eval::EvalPool::load(path);
}

int cmd_eval_curve(const EvalArgs& a, const CLI::App& sub, bool quintiles) {
  const auto pool = load_pool(a.pool);
  const auto methods = eval::parse_methods(a.methods);
  eval::Report report;
  auto add_curves = [&](const eval::EvalPool& p, const std::string& label) {
    for (eval::Method m : methods) {
      eval::CurveSeries s{std::string(eval::to_string(m)), label, {}};
      for (std::size_t n : a.n) s.points.push_back(eval::best_of_n_accuracy(p, n, m, curve_options(a)));
      report.curves.push_back(std::move(s));
    }
  };
  if (quintiles) {
    const auto buckets = eval::difficulty_quintiles(pool);
    json ids = json::array();
    for (std::size_t b = 0; b < buckets.size(); ++b) {
      add_curves(eval::subset_pool(pool, buckets[b]), "quintile-" + std::to_string(b + 1));
      ids.push_back(buckets[b]);
    }
    report.metadata["quintiles"] = ids;
  } else {
    add_curves(pool, "");
  }
  report.metadata["pool"] = a.pool.string();
  report.metadata["problems"] = pool.problems.size();
  report.metadata["pool_size"] = pool.pool_size();
  prepare_dir(a.out);
  eval::emit_report(report, a.out);
  write_config(a.out, sub);
  for (const auto& c : report.curves) {
    for (const auto& p : c.points) {
      std::cout << c.method << (c.label.empty() ? "" : " " + c.label) << " n=" << p.n << " mean=" << p.mean_accuracy
                << " std=" << p.std_accuracy << '\n';
    }
  }
  return kExitOk;
}

int cmd_eval_ood(const EvalArgs& a, const CLI::App& sub) {
  const auto pool = load_pool(a.pool);
  eval::Report report;
  report.tables.push_back(eval::ood_eval(pool, eval::parse_methods(a.methods)));
  report.metadata["pool"] = a.pool.string();
  prepare_dir(a.out);
  eval::emit_report(report, a.out);
  write_config(a.out, sub);
  for (const auto& w : report.tables.front().warnings) std::cerr << "warning: " << w << '\n';
  for (const auto& row : report.tables.front().rows) {
    std::cout << row.subject;
    for (double acc : row.accuracy) std::cout << ' ' << acc;
    std::cout << " (" << row.n_problems << " problems)\n";
  }
  return kExitOk;
}

// --- experiment -----------------------------------------------------------

struct ExperimentArgs {
  fs::path out;
  experiment::ExperimentConfig cfg;
  std::string kinds = "process_oracle,outcome_oracle,outcome_final_answer";
  std::string neutral = "pos";
  std::string reduction = "product";
  bool active_learning = false;
  std::vector<std::size_t> al_sizes = {2, 4, 8};
  std::size_t al_pool = 50;
};

int cmd_experiment(ExperimentArgs a, const CLI::App& sub) {
  a.cfg.scoring = scoring_config(a.neutral, a.reduction);
  a.cfg.kinds.clear();
  std::stringstream ss(a.kinds);
  std::string k;
  while (std::getline(ss, k, ',')) {
    if (!trim(k).empty()) a.cfg.kinds.push_back(supervision::parse_supervision_kind(trim(k)));
  }
  a.cfg.threads = worker_count(a.cfg.threads);
  a.cfg.validate();
  prepare_dir(a.out);
  write_config(a.out, sub, {{"experiment", a.cfg.to_json()}});
  const eval::Report report = experiment::run_experiment(a.cfg, a.out / "checkpoints");
  eval::emit_report(report, a.out);
  if (a.active_learning) {
    experiment::ActiveLearningConfig al;
    al.base = a.cfg;
    al.pool_per_problem = a.al_pool;
    al.selected_per_problem = a.al_sizes;
    al.eval_n = std::min<std::size_t>(20, a.cfg.test_pool_size);
    const auto result = experiment::run_active_learning(al);
    write_json(a.out / "active_learning.json", {{"config", al.to_json()}, {"result", result.to_json()}});
  }
  for (const auto& [kind, points] : report.metadata["size_curves"].items()) {
    std::cout << kind << ':';
    for (const auto& p : points) std::cout << ' ' << p["samples_per_problem"] << "->" << p["accuracy"];
    std::cout << '\n';
  }
  return kExitOk;
}

// --- simulate-collection --------------------------------------------------

struct SimulateArgs {
  fs::path out;
  collection::SimulationConfig cfg;
  std::string neutral = "pos";
  std::string reduction = "product";
};

int cmd_simulate(SimulateArgs a, const CLI::App& sub) {
  a.cfg.scoring = scoring_config(a.neutral, a.reduction);
  a.cfg.validate();
  prepare_dir(a.out);
  write_config(a.out, sub, {{"simulation", a.cfg.to_json()}});
  const fs::path service_dir = a.out / "service";
  if (fs::exists(service_dir / "events.jsonl")) {
    throw InputError(service_dir.string() + " already holds an event log; choose a fresh --out");
  }
  const auto result = collection::simulate_collection(a.cfg, service_dir);
  {
    std::ofstream out(a.out / "labels.jsonl", std::ios::binary);
    dataset::export_labeled(out, result.labels);
  }
  write_json(a.out / "stats.json", dataset::compute_stats(result.labels).to_json());
  write_json(a.out / "service_stats.json", result.service_stats);
  json gens = json::array();
  for (const auto& g : result.generations) {
    gens.push_back({{"generation", g.generation},
                    {"selected", g.selected},
                    {"labeled", g.labeled},
                    {"wrong_answer_selected", g.wrong_answer_selected}});
  }
  json labelers = json::array();
  for (const auto& l : result.labelers) labelers.push_back(service::to_json(l));
  write_json(a.out / "generations.json", {{"generations", gens}, {"labelers", labelers}});
  std::cout << "collected " << result.labels.size() << " labeled solutions over " << result.generations.size()
            << " generations\n";
  for (const auto& l : result.labelers) std::cout << l.labeler_id << ": " << service::to_string(l.status) << '\n';
  return kExitOk;
}

// --- serve ----------------------------------------------------------------

struct ServeArgs {
  fs::path data, static_dir;
  std::string host = "127.0.0.1";
  int port = 8080;
  service::ServiceConfig cfg;
};

int cmd_serve(ServeArgs a, const CLI::App& sub) {
  a.cfg.validate();
  prepare_dir(a.data);
  write_config(a.data, sub, {{"service", a.cfg.to_json()}});

  // Signals are taken by a dedicated thread so shutdown runs outside a handler.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  service::LabelService svc(a.cfg, a.data);
  service::HttpOptions http;
  http.host = a.host;
  http.port = a.port;
  if (!a.static_dir.empty()) http.static_dir = a.static_dir;
  service::LabelHttpServer server(svc, http);
  int port = 0;
  try {
    port = server.bind();
  } catch (const std::exception& e) {
    std::cerr << "serve: " << e.what() << '\n';
    return kExitOperational;
  }
  std::cout << "listening on " << a.host << ':' << port << std::endl;

  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
  });
  server.serve();
  // serve() also returns if the listener fails; wake the waiter either way.
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  svc.write_snapshot();
  svc.flush();
  std::cout << "stopped; state saved to " << a.data.string() << std::endl;
  return kExitOk;
}

void add_scoring_flags(CLI::App* sub, std::string& neutral, std::string& reduction) {
  sub->add_option("--neutral", neutral, "Neutral steps count as positive or negative")
      ->check(CLI::IsMember({"pos", "neg"}));
  sub->add_option("--reduction", reduction, "Reduce step scores by product or minimum")
      ->check(CLI::IsMember({"product", "min"}));
}

// Expands `--config file.toml` into flags placed after the subcommand path.
// Keys already given on the command line are skipped so flags win.
std::vector<std::string> expand_config(std::vector<std::string> args, const CLI::App& app) {
  auto it = std::find(args.begin(), args.end(), "--config");
  if (it == args.end() || it + 1 == args.end()) return args;
  std::ifstream in(*(it + 1));
  if (!in) throw CLI::FileError::Missing(*(it + 1));
  const auto items = CLI::ConfigTOML().from_config(in);

  std::size_t insert_at = 0;
  const CLI::App* cur = &app;
  while (insert_at < args.size()) {
    const CLI::App* next = cur->get_subcommand_no_throw(args[insert_at]);
    if (next == nullptr) break;
    cur = next;
    ++insert_at;
  }

  auto given = [&](const std::string& name) {
    for (const auto& a : args) {
      if (a == "--" + name || a.rfind("--" + name + "=", 0) == 0) return true;
    }
    return false;
  };
  std::vector<std::string> extra;
  for (const auto& item : items) {
    if (!item.parents.empty() || item.name == "++" || item.name == "--" || given(item.name)) continue;
    const CLI::Option* opt = cur->get_option_no_throw("--" + item.name);
    if (opt == nullptr) throw CLI::ConfigError::Extras(item.name);
    if (opt->get_type_size() == 0) {
      if (!item.inputs.empty() && (item.inputs.front() == "true" || item.inputs.front() == "1")) extra.push_back("--" + item.name);
      continue;
    }
    std::string value;
    for (const auto& v : item.inputs) value += (value.empty() ? "" : ",") + v;
    extra.push_back("--" + item.name);
    extra.push_back(value);
  }
  args.insert(args.begin() + static_cast<std::ptrdiff_t>(insert_at), extra.begin(), extra.end());
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stepwise: process and outcome supervision workbench"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  ImportArgs import_args;
  auto* import_cmd = app.add_subcommand("import", "Import labeled solutions, filter for training and report statistics");
  import_cmd->add_option("--in", import_args.in, "Input JSONL")->required();
  import_cmd->add_option("--out", import_args.out, "Output directory")->required();
  import_cmd->add_option("--schema", import_args.schema, "mapped (field mapping) or canonical");
  import_cmd->add_option("--mapping", import_args.mapping, "Field mapping JSON; default is the PRM800K layout");
  import_cmd->add_option("--rating-map", import_args.rating_map, "e.g. -1:negative,0:neutral,1:positive");
  import_cmd->add_flag("--neutral-incorrect", import_args.neutral_incorrect, "Count neutral steps as incorrect in stats");
  import_cmd->add_flag("--strict", import_args.strict, "Exit 2 when any line produced a diagnostic");

  ScoreArgs score_args;
  auto* score_cmd = app.add_subcommand("score", "Score solutions with a process or outcome reward model");
  score_cmd->add_option("--problems", score_args.problems, "Problems JSONL")->required();
  score_cmd->add_option("--solutions", score_args.solutions, "Solutions JSONL")->required();
  score_cmd->add_option("--out", score_args.out, "Output directory")->required();
  score_cmd->add_option("--kind", score_args.kind, "prm or orm");
  score_cmd->add_option("--model", score_args.model, "Micro model JSON");
  score_cmd->add_option("--table", score_args.table, "Tabular step probabilities JSONL");
  score_cmd->add_option("--endpoint", score_args.endpoint, "External scorer base URL");
  score_cmd->add_option("--scorer-timeout-ms", score_args.timeout_ms, "External scorer timeout")
      ->check(CLI::PositiveNumber);
  score_cmd->add_option("--scorer-retries", score_args.retries, "External scorer retries")->check(CLI::NonNegativeNumber);
  score_cmd->add_option("--threads", score_args.threads, "Worker threads (0: all cores)");
  add_scoring_flags(score_cmd, score_args.neutral, score_args.reduction);

  SelectArgs select_args;
  auto* select_cmd = app.add_subcommand("select", "Choose solutions to label from a scored pool");
  select_cmd->add_option("--solutions", select_args.solutions, "Graded solutions JSONL")->required();
  select_cmd->add_option("--scores", select_args.scores, "scores.jsonl from the score command")->required();
  select_cmd->add_option("--out", select_args.out, "Output directory")->required();
  select_cmd->add_option("--mode", select_args.mode, "uniform, topk_per_problem, topk_global or mixed");
  select_cmd->add_option("--k", select_args.k, "Solutions per problem (or overall for topk_global)")
      ->check(CLI::PositiveNumber);
  select_cmd->add_option("--fraction", select_args.fraction, "Wrong-answer share for mixed selection")
      ->check(CLI::Range(0.0, 1.0));
  select_cmd->add_option("--pool-size", select_args.pool_size, "Candidates considered per problem");
  select_cmd->add_option("--seed", select_args.seed, "Seed for uniform selection");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train a micro PRM or ORM on labeled solutions");
  train_cmd->add_option("--data", train_args.data, "Canonical labeled JSONL")->required();
  train_cmd->add_option("--out", train_args.out, "Output directory")->required();
  train_cmd->add_option("--problems", train_args.problems, "Problems JSONL for statements");
  train_cmd->add_option("--kind", train_args.kind, "prm or orm");
  train_cmd->add_option("--orm-label", train_args.orm_label, "final-answer or process");
  train_cmd->add_option("--rating-map", train_args.rating_map, "Source rating mapping");
  train_cmd->add_option("--init", train_args.init, "Initial model JSON");
  train_cmd->add_option("--epochs", train_args.epochs, "Epochs (default 2 for prm, 1 for orm)");
  train_cmd->add_option("--lr", train_args.lr, "Learning rate");
  train_cmd->add_option("--l2", train_args.l2, "L2 penalty");
  train_cmd->add_option("--batch", train_args.batch, "Batch size")->check(CLI::PositiveNumber);
  train_cmd->add_option("--dim", train_args.dim, "Hashed feature dimension");
  train_cmd->add_option("--seed", train_args.seed, "Batch order seed");
  train_cmd->add_flag("--no-filter", train_args.no_filter, "Keep QC and incomplete records");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Best-of-N curves, difficulty quintiles and OOD tables");
  eval_cmd->require_subcommand(1);
  auto add_eval_flags = [&](CLI::App* c, bool curves) {
    c->add_option("--pool", eval_args.pool, "Evaluation pool JSONL")->required();
    c->add_option("--out", eval_args.out, "Output directory")->required();
    c->add_option("--methods", eval_args.methods, "Comma list of prm, orm, majority, rm_weighted");
    if (curves) {
      c->add_option("--n", eval_args.n, "Comma list of N")->delimiter(',');
      c->add_option("--subsamples", eval_args.subsamples, "Monte-Carlo subsets per problem")->check(CLI::PositiveNumber);
      c->add_option("--seed", eval_args.seed, "Subsampling seed");
      c->add_option("--threads", eval_args.threads, "Worker threads (0: all cores)");
    }
  };
  auto* curve_cmd = eval_cmd->add_subcommand("curve", "Best-of-N accuracy curves");
  add_eval_flags(curve_cmd, true);
  auto* quint_cmd = eval_cmd->add_subcommand("quintiles", "Curves per difficulty quintile");
  add_eval_flags(quint_cmd, true);
  auto* ood_cmd = eval_cmd->add_subcommand("ood", "Best-of-pool accuracy per subject");
  add_eval_flags(ood_cmd, false);

  ExperimentArgs exp_args;
  auto& ec = exp_args.cfg;
  auto* exp_cmd = app.add_subcommand("experiment", "Synthetic outcome vs process supervision comparison");
  exp_cmd->add_option("--out", exp_args.out, "Run directory")->required();
  exp_cmd->add_option("--seed", ec.seed, "Master seed");
  exp_cmd->add_option("--threads", ec.threads, "Worker threads (0: all cores)");
  exp_cmd->add_option("--train-problems", ec.train_problems, "Training problems");
  exp_cmd->add_option("--test-problems", ec.test_problems, "Test problems");
  exp_cmd->add_option("--min-length", ec.lengths.min, "Shortest chain");
  exp_cmd->add_option("--max-length", ec.lengths.max, "Longest chain");
  exp_cmd->add_option("--step-error-rate", ec.step_error_rate, "Per-step error probability");
  exp_cmd->add_option("--compensating-error-rate", ec.compensating_error_rate, "Per-solution canceling-pair probability");
  exp_cmd->add_option("--dataset-sizes", ec.dataset_sizes, "Training samples per problem grid")->delimiter(',');
  exp_cmd->add_option("--test-pool", ec.test_pool_size, "Samples per test problem");
  exp_cmd->add_option("--best-of", ec.best_of, "N values for the curves")->delimiter(',');
  exp_cmd->add_option("--subsamples", ec.m_subsamples, "Monte-Carlo subsets per problem");
  exp_cmd->add_option("--dim", ec.feature_dim, "Hashed feature dimension");
  exp_cmd->add_option("--negative-threshold", ec.negative_threshold, "Oracle negative threshold");
  exp_cmd->add_option("--kinds", exp_args.kinds, "Supervision kinds to train");
  exp_cmd->add_flag("--active-learning", exp_args.active_learning, "Also compare mixed vs uniform selection");
  exp_cmd->add_option("--al-sizes", exp_args.al_sizes, "Selected samples per problem for the comparison")
      ->delimiter(',');
  exp_cmd->add_option("--al-pool", exp_args.al_pool, "Candidate pool per problem for the comparison");
  add_scoring_flags(exp_cmd, exp_args.neutral, exp_args.reduction);

  SimulateArgs sim_args;
  auto& sc = sim_args.cfg;
  auto* sim_cmd = app.add_subcommand("simulate-collection", "Run the labeling loop with simulated labelers");
  sim_cmd->add_option("--out", sim_args.out, "Run directory")->required();
  sim_cmd->add_option("--seed", sc.seed, "Master seed");
  sim_cmd->add_option("--problems", sc.problems, "Problems to label");
  sim_cmd->add_option("--generations", sc.generations, "Generations");
  sim_cmd->add_option("--pool", sc.pool_per_problem, "Candidates sampled per problem per generation");
  sim_cmd->add_option("--k", sc.selected_per_problem, "Solutions selected per problem per generation");
  sim_cmd->add_option("--labelers", sc.labelers, "Careful labelers");
  sim_cmd->add_option("--labeler-error", sc.labeler_error, "Error rate of careful labelers");
  sim_cmd->add_option("--careless-labelers", sc.careless_labelers, "Careless labelers");
  sim_cmd->add_option("--careless-error", sc.careless_error, "Error rate of careless labelers");
  sim_cmd->add_option("--qc-items", sc.qc_items, "Quality-control items");
  sim_cmd->add_option("--qc-prob", sc.service.qc_probability, "Share of serves that are QC items");
  add_scoring_flags(sim_cmd, sim_args.neutral, sim_args.reduction);

  ServeArgs serve_args;
  auto& svc = serve_args.cfg;
  auto* serve_cmd = app.add_subcommand("serve", "Run the label service");
  serve_cmd->add_option("--data", serve_args.data, "State directory (event log and snapshots)")->required();
  serve_cmd->add_option("--host", serve_args.host, "Bind address")->envname("STEPWISE_BIND");
  serve_cmd->add_option("--port", serve_args.port, "Port (0 picks a free one)")->envname("STEPWISE_PORT");
  serve_cmd->add_option("--static", serve_args.static_dir, "Directory of UI assets to serve");
  serve_cmd->add_option("--qc-prob", svc.qc_probability, "Share of serves that are QC items")
      ->envname("STEPWISE_QC_PROB")
      ->check(CLI::Range(0.0, 1.0));
  serve_cmd->add_option("--lease-ttl-ms", svc.lease_ttl_ms, "Lease lifetime")->envname("STEPWISE_LEASE_TTL_MS");
  serve_cmd->add_option("--screening-size", svc.screening_size, "QC items in the admission test");
  serve_cmd->add_option("--admission-threshold", svc.admission_threshold, "Screening pass rate to admit")
      ->envname("STEPWISE_ADMISSION_THRESHOLD");
  serve_cmd->add_option("--qc-floor", svc.qc_floor, "Rolling QC agreement below which labelers are removed")
      ->envname("STEPWISE_QC_FLOOR");
  serve_cmd->add_option("--qc-window", svc.qc_window, "Rolling QC window")->envname("STEPWISE_QC_WINDOW");
  serve_cmd->add_option("--snapshot-interval", svc.snapshot_interval, "Events between snapshots (0: never)");
  serve_cmd->add_option("--seed", svc.seed, "Seed for QC serving");

  std::string config_file;
  for (auto* c : {import_cmd, score_cmd, select_cmd, train_cmd, curve_cmd, quint_cmd, ood_cmd, exp_cmd, sim_cmd, serve_cmd}) {
    c->add_option("--config", config_file, "TOML file of option values; command-line flags take precedence");
  }

  try {
    std::vector<std::string> args = expand_config({argv + 1, argv + argc}, app);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }

  try {
    if (*import_cmd) return cmd_import(import_args, *import_cmd);
    if (*score_cmd) return cmd_score(score_args, *score_cmd);
    if (*select_cmd) return cmd_select(select_args, *select_cmd);
    if (*train_cmd) return cmd_train(train_args, *train_cmd);
    if (*curve_cmd) return cmd_eval_curve(eval_args, *curve_cmd, false);
    if (*quint_cmd) return cmd_eval_curve(eval_args, *quint_cmd, true);
    if (*ood_cmd) return cmd_eval_ood(eval_args, *ood_cmd);
    if (*exp_cmd) return cmd_experiment(exp_args, *exp_cmd);
    if (*sim_cmd) return cmd_simulate(sim_args, *sim_cmd);
    if (*serve_cmd) return cmd_serve(serve_args, *serve_cmd);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const json::exception& e) {
    std::cerr << "error: malformed input: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitOperational;
  }
  return kExitOperational;
}
