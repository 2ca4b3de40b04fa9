#include "stepwise/eval_harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "stepwise/rng.hpp"

namespace stepwise::eval {

std::string_view to_string(Method m) {
  switch (m) {
    case Method::prm: return "prm";
    case Method::orm: return "orm";
    case Method::majority: return "majority";
    case Method::rm_weighted: return "rm_weighted";
  }
  return "prm";
}

Method parse_method(std::string_view text) {
  for (Method m : {Method::prm, Method::orm, Method::majority, Method::rm_weighted}) {
    if (text == to_string(m)) return m;
  }
  throw std::invalid_argument("unknown method '" + std::string(text) + "'");
}

std::vector<Method> parse_methods(std::string_view comma_list) {
  std::vector<Method> out;
  std::stringstream ss{std::string(comma_list)};
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!trim(item).empty()) out.push_back(parse_method(trim(item)));
  }
  if (out.empty()) throw std::invalid_argument("no methods given");
  return out;
}

double ProblemPool::pass_rate() const {
  if (entries.empty()) return 0.0;
  const auto correct = std::count_if(entries.begin(), entries.end(), [](const PoolEntry& e) { return e.correct; });
  return static_cast<double>(correct) / static_cast<double>(entries.size());
}

std::size_t EvalPool::pool_size() const {
  if (problems.empty()) return 0;
  std::size_t m = problems.front().entries.size();
  for (const auto& p : problems) m = std::min(m, p.entries.size());
  return m;
}

EvalPool EvalPool::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  EvalPool pool;
  std::map<std::string, std::size_t> index;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      const auto pid = j.at("problem_id").get<std::string>();
      auto [it, inserted] = index.try_emplace(pid, pool.problems.size());
      if (inserted) {
        ProblemPool p;
        p.problem_id = pid;
        pool.problems.push_back(std::move(p));
      }
      ProblemPool& p = pool.problems[it->second];
      if (j.contains("subject") && !j["subject"].is_null()) p.subject = j["subject"].get<std::string>();
      if (j.contains("level") && !j["level"].is_null()) p.level = j["level"].get<int>();
      PoolEntry e;
      e.solution_id = j.at("solution_id").get<std::string>();
      const auto answer = j.at("final_answer").get<std::string>();
      e.answer = canonicalize(answer);
      if (j.contains("correct")) {
        e.correct = j["correct"].get<bool>();
      } else {
        e.correct = grade_answer(answer, j.at("ground_truth").get<std::string>());
      }
      e.prm_score = j.value("prm_score", 0.0);
      e.orm_score = j.value("orm_score", 0.0);
      p.entries.push_back(std::move(e));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return pool;
}

void EvalPool::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& p : problems) {
    for (const auto& e : p.entries) {
      json j = {{"problem_id", p.problem_id}, {"solution_id", e.solution_id}, {"final_answer", e.answer.render()},
                {"correct", e.correct},       {"prm_score", e.prm_score},      {"orm_score", e.orm_score}};
      if (p.subject) j["subject"] = *p.subject;
      if (p.level) j["level"] = *p.level;
      out << j.dump() << '\n';
    }
  }
}

namespace {

// Per-problem lookup tables so each subset is decided without allocation.
struct Prepared {
  const ProblemPool* problem = nullptr;
  std::vector<std::size_t> rank_prm;
  std::vector<std::size_t> rank_orm;
  std::vector<std::size_t> id_rank;
  std::vector<std::size_t> group;
  std::size_t n_groups = 0;

  explicit Prepared(const ProblemPool& p) : problem(&p) {
    const std::size_t m = p.entries.size();
    std::vector<std::size_t> order(m);
    auto rank_by = [&](auto score_of) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double sa = score_of(p.entries[a]);
        const double sb = score_of(p.entries[b]);
        if (sa != sb) return sa > sb;
        return p.entries[a].solution_id < p.entries[b].solution_id;
      });
      std::vector<std::size_t> rank(m);
      for (std::size_t r = 0; r < m; ++r) rank[order[r]] = r;
      return rank;
    };
    rank_prm = rank_by([](const PoolEntry& e) { return e.prm_score; });
    rank_orm = rank_by([](const PoolEntry& e) { return e.orm_score; });
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return p.entries[a].solution_id < p.entries[b].solution_id; });
    id_rank.assign(m, 0);
    for (std::size_t r = 0; r < m; ++r) id_rank[order[r]] = r;
    std::map<CanonicalAnswer, std::size_t> groups;
    group.assign(m, 0);
    for (std::size_t i = 0; i < m; ++i) {
      auto [it, inserted] = groups.try_emplace(p.entries[i].answer, groups.size());
      group[i] = it->second;
    }
    n_groups = groups.size();
  }
};

struct VoteScratch {
  std::vector<double> weight;
  std::vector<std::size_t> count;
  std::vector<std::size_t> first;
  std::vector<std::size_t> touched;
  std::vector<std::size_t> sorted;
};

std::size_t select_prepared(const Prepared& prep, const std::vector<std::size_t>& subset, Method method,
                            VoteScratch& scratch) {
  if (subset.empty()) throw std::invalid_argument("empty subset");
  if (method == Method::prm || method == Method::orm) {
    const auto& rank = method == Method::prm ? prep.rank_prm : prep.rank_orm;
    std::size_t best = subset.front();
    for (std::size_t i : subset) {
      if (rank[i] < rank[best]) best = i;
    }
    return best;
  }
  scratch.weight.assign(prep.n_groups, 0.0);
  scratch.count.assign(prep.n_groups, 0);
  scratch.first.assign(prep.n_groups, 0);
  scratch.touched.clear();
  scratch.sorted = subset;
  std::sort(scratch.sorted.begin(), scratch.sorted.end(),
            [&](std::size_t a, std::size_t b) { return prep.id_rank[a] < prep.id_rank[b]; });
  for (std::size_t i : scratch.sorted) {
    const std::size_t g = prep.group[i];
    if (scratch.count[g] == 0) {
      scratch.first[g] = i;
      scratch.touched.push_back(g);
    }
    ++scratch.count[g];
    scratch.weight[g] += method == Method::rm_weighted ? prep.problem->entries[i].prm_score : 1.0;
  }
  std::size_t best = scratch.touched.front();
  for (std::size_t g : scratch.touched) {
    if (scratch.weight[g] != scratch.weight[best]) {
      if (scratch.weight[g] > scratch.weight[best]) best = g;
    } else if (scratch.count[g] != scratch.count[best]) {
      if (scratch.count[g] > scratch.count[best]) best = g;
    } else if (prep.id_rank[scratch.first[g]] < prep.id_rank[scratch.first[best]]) {
      best = g;
    }
  }
  return scratch.first[best];
}

std::uint64_t choose_capped(std::uint64_t m, std::uint64_t n, std::uint64_t cap) {
  if (n > m) return 0;
  n = std::min(n, m - n);
  std::uint64_t c = 1;
  for (std::uint64_t i = 1; i <= n; ++i) {
    // c * (m - n + i) / i stays integral at every step.
    const __uint128_t next = static_cast<__uint128_t>(c) * (m - n + i) / i;
    if (next > cap) return cap + 1;
    c = static_cast<std::uint64_t>(next);
  }
  return c;
}

bool next_combination(std::vector<std::size_t>& idx, std::size_t m) {
  const std::size_t k = idx.size();
  for (std::size_t i = k; i-- > 0;) {
    if (idx[i] < m - k + i) {
      ++idx[i];
      for (std::size_t j = i + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
      return true;
    }
  }
  return false;
}

template <class Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> workers;
  for (std::size_t t = 0; t < threads; ++t) {
    workers.emplace_back([&, t] {
      for (std::size_t i = t; i < count; i += threads) fn(i);
    });
  }
  for (auto& w : workers) w.join();
}

}  // namespace

std::size_t select_in_subset(const ProblemPool& problem, const std::vector<std::size_t>& subset, Method method) {
  for (std::size_t i : subset) {
    if (i >= problem.entries.size()) throw std::out_of_range("subset index beyond pool");
  }
  Prepared prep(problem);
  VoteScratch scratch;
  return select_prepared(prep, subset, method, scratch);
}

CurvePoint best_of_n_accuracy(const EvalPool& pool, std::size_t n, Method method, const CurveOptions& options) {
  if (pool.problems.empty()) throw std::invalid_argument("empty evaluation pool");
  if (n == 0) throw std::invalid_argument("n must be positive");
  const std::size_t pool_size = pool.pool_size();
  if (n > pool_size) {
    throw std::invalid_argument("n = " + std::to_string(n) + " exceeds pool size " + std::to_string(pool_size));
  }
  if (options.m_subsamples == 0) throw std::invalid_argument("m_subsamples must be at least 1");

  const std::size_t n_problems = pool.problems.size();
  std::vector<Prepared> prepared;
  prepared.reserve(n_problems);
  for (const auto& p : pool.problems) prepared.emplace_back(p);

  bool exhaustive = true;
  std::uint64_t max_subsets = 0;
  for (const auto& p : pool.problems) {
    const std::uint64_t c = choose_capped(p.entries.size(), n, options.exhaustive_limit);
    if (c > options.exhaustive_limit) exhaustive = false;
    max_subsets = std::max(max_subsets, c);
  }

  CurvePoint point;
  point.n = n;
  const auto P = static_cast<double>(n_problems);
  if (exhaustive) {
    std::vector<double> q(n_problems, 0.0);
    parallel_for(n_problems, options.threads, [&](std::size_t p) {
      const std::size_t m = pool.problems[p].entries.size();
      std::vector<std::size_t> idx(n);
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      VoteScratch scratch;
      std::uint64_t wins = 0;
      std::uint64_t total = 0;
      do {
        wins += pool.problems[p].entries[select_prepared(prepared[p], idx, method, scratch)].correct ? 1 : 0;
        ++total;
      } while (next_combination(idx, m));
      q[p] = static_cast<double>(wins) / static_cast<double>(total);
    });
    double mean = 0.0;
    double var = 0.0;
    for (double v : q) {
      mean += v;
      var += v * (1.0 - v);
    }
    point.mean_accuracy = mean / P;
    point.std_accuracy = std::sqrt(var) / P;
    point.n_subsamples = static_cast<std::size_t>(max_subsets);
    point.exhaustive = true;
    return point;
  }

  const std::size_t m_draws = options.m_subsamples;
  std::vector<std::uint8_t> outcome(n_problems * m_draws, 0);
  parallel_for(n_problems, options.threads, [&](std::size_t p) {
    const std::size_t m = pool.problems[p].entries.size();
    const std::uint64_t stream = derive_seed(options.seed, pool.problems[p].problem_id);
    std::vector<std::size_t> perm(m);
    std::vector<std::size_t> subset(n);
    VoteScratch scratch;
    for (std::size_t d = 0; d < m_draws; ++d) {
      Rng rng(derive_seed(stream, d));
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      for (std::size_t i = 0; i < n; ++i) {
        std::swap(perm[i], perm[i + rng.uniform_index(m - i)]);
        subset[i] = perm[i];
      }
      outcome[p * m_draws + d] = pool.problems[p].entries[select_prepared(prepared[p], subset, method, scratch)].correct;
    }
  });
  std::vector<double> acc(m_draws, 0.0);
  for (std::size_t p = 0; p < n_problems; ++p) {
    for (std::size_t d = 0; d < m_draws; ++d) acc[d] += outcome[p * m_draws + d];
  }
  double mean = 0.0;
  for (double& a : acc) {
    a /= P;
    mean += a;
  }
  mean /= static_cast<double>(m_draws);
  double ss = 0.0;
  for (double a : acc) ss += (a - mean) * (a - mean);
  point.mean_accuracy = mean;
  point.std_accuracy = m_draws > 1 ? std::sqrt(ss / static_cast<double>(m_draws - 1)) : 0.0;
  point.n_subsamples = m_draws;
  return point;
}

std::array<std::vector<std::string>, 5> difficulty_quintiles(const EvalPool& pool) {
  if (pool.problems.size() < 5) throw std::invalid_argument("quintiles need at least 5 problems");
  std::vector<std::pair<double, std::string>> rates;
  for (const auto& p : pool.problems) {
    if (p.entries.empty()) throw std::invalid_argument("problem " + p.problem_id + " has no graded samples");
    rates.emplace_back(p.pass_rate(), p.problem_id);
  }
  std::stable_sort(rates.begin(), rates.end());
  std::array<std::vector<std::string>, 5> out;
  const std::size_t base = rates.size() / 5;
  const std::size_t extra = rates.size() % 5;
  std::size_t at = 0;
  for (std::size_t b = 0; b < 5; ++b) {
    const std::size_t size = base + (b < extra ? 1 : 0);
    for (std::size_t i = 0; i < size; ++i) out[b].push_back(rates[at++].second);
  }
  return out;
}

EvalPool subset_pool(const EvalPool& pool, const std::vector<std::string>& problem_ids) {
  const std::set<std::string> wanted(problem_ids.begin(), problem_ids.end());
  EvalPool out;
  for (const auto& p : pool.problems) {
    if (wanted.count(p.problem_id) != 0) out.problems.push_back(p);
  }
  return out;
}

OodTable ood_eval(const EvalPool& pool, const std::vector<Method>& methods) {
  if (methods.empty()) throw std::invalid_argument("no methods given");
  OodTable table;
  table.methods = methods;
  std::map<std::string, std::vector<const ProblemPool*>> groups;
  for (const auto& p : pool.problems) {
    const std::string subject = p.subject.value_or("unspecified");
    auto& group = groups[subject];
    if (p.entries.empty()) {
      table.warnings.push_back("problem " + p.problem_id + " has no samples; skipped");
      continue;
    }
    group.push_back(&p);
  }
  OodRow aggregate{"Aggregate", std::vector<double>(methods.size(), 0.0), 0};
  std::vector<std::size_t> aggregate_hits(methods.size(), 0);
  VoteScratch scratch;
  for (const auto& [subject, problems] : groups) {
    if (problems.empty()) {
      table.warnings.push_back("subject '" + subject + "' has no problems; omitted");
      continue;
    }
    OodRow row{subject, {}, problems.size()};
    for (std::size_t k = 0; k < methods.size(); ++k) {
      std::size_t hits = 0;
      for (const ProblemPool* p : problems) {
        Prepared prep(*p);
        std::vector<std::size_t> all(p->entries.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        hits += p->entries[select_prepared(prep, all, methods[k], scratch)].correct ? 1 : 0;
      }
      row.accuracy.push_back(static_cast<double>(hits) / static_cast<double>(problems.size()));
      aggregate_hits[k] += hits;
    }
    aggregate.n_problems += problems.size();
    table.rows.push_back(std::move(row));
  }
  if (aggregate.n_problems > 0) {
    for (std::size_t k = 0; k < methods.size(); ++k) {
      aggregate.accuracy[k] = static_cast<double>(aggregate_hits[k]) / static_cast<double>(aggregate.n_problems);
    }
    table.rows.push_back(std::move(aggregate));
  }
  return table;
}

namespace {

json point_json(const CurvePoint& p) {
  return {{"n", p.n}, {"mean", p.mean_accuracy}, {"std", p.std_accuracy}, {"n_subsamples", p.n_subsamples},
          {"exhaustive", p.exhaustive}};
}

std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

json to_json(const Report& report) {
  json j;
  j["curves"] = json::array();
  for (const auto& c : report.curves) {
    json points = json::array();
    for (const auto& p : c.points) points.push_back(point_json(p));
    j["curves"].push_back({{"method", c.method}, {"label", c.label}, {"points", points}});
  }
  j["tables"] = json::array();
  for (const auto& t : report.tables) {
    json methods = json::array();
    for (Method m : t.methods) methods.push_back(to_string(m));
    json rows = json::array();
    for (const auto& r : t.rows) rows.push_back({{"subject", r.subject}, {"accuracy", r.accuracy}, {"n_problems", r.n_problems}});
    j["tables"].push_back({{"methods", methods}, {"rows", rows}, {"warnings", t.warnings}});
  }
  j["metadata"] = report.metadata;
  return j;
}

Report report_from_json(const json& j) {
  Report r;
  for (const json& c : j.at("curves")) {
    CurveSeries s;
    s.method = c.at("method").get<std::string>();
    s.label = c.value("label", "");
    for (const json& p : c.at("points")) {
      s.points.push_back({p.at("n").get<std::size_t>(), p.at("mean").get<double>(), p.at("std").get<double>(),
                          p.at("n_subsamples").get<std::size_t>(), p.value("exhaustive", false)});
    }
    r.curves.push_back(std::move(s));
  }
  for (const json& t : j.at("tables")) {
    OodTable table;
    for (const json& m : t.at("methods")) table.methods.push_back(parse_method(m.get<std::string>()));
    for (const json& row : t.at("rows")) {
      table.rows.push_back({row.at("subject").get<std::string>(), row.at("accuracy").get<std::vector<double>>(),
                            row.at("n_problems").get<std::size_t>()});
    }
    table.warnings = t.value("warnings", std::vector<std::string>{});
    r.tables.push_back(std::move(table));
  }
  r.metadata = j.value("metadata", json::object());
  return r;
}

std::vector<std::filesystem::path> emit_report(const Report& report, const std::filesystem::path& dir) {
  std::size_t n_points = 0;
  for (const auto& c : report.curves) n_points += c.points.size();
  std::size_t n_rows = 0;
  for (const auto& t : report.tables) n_rows += t.rows.size();
  if (n_points == 0 && n_rows == 0) throw std::invalid_argument("refusing to write an empty report");

  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  std::vector<std::filesystem::path> written;
  auto open = [&](const std::string& name) {
    const auto path = dir / name;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    written.push_back(path);
    return out;
  };

  if (n_points > 0) {
    const bool labeled = std::any_of(report.curves.begin(), report.curves.end(),
                                     [](const CurveSeries& c) { return !c.label.empty(); });
    auto out = open("curves.csv");
    out << "n,method,mean,std" << (labeled ? ",label" : "") << '\n';
    for (const auto& c : report.curves) {
      for (const auto& p : c.points) {
        out << p.n << ',' << c.method << ',' << fmt(p.mean_accuracy) << ',' << fmt(p.std_accuracy);
        if (labeled) out << ',' << c.label;
        out << '\n';
      }
    }
  }
  if (n_rows > 0) {
    auto out = open("ood.csv");
    for (const auto& t : report.tables) {
      out << "subject";
      for (Method m : t.methods) out << ',' << to_string(m);
      out << ",n_problems\n";
      for (const auto& r : t.rows) {
        out << r.subject;
        for (double a : r.accuracy) out << ',' << fmt(a);
        out << ',' << r.n_problems << '\n';
      }
    }
  }
  {
    auto out = open("report.json");
    out << to_json(report).dump(2) << '\n';
  }
  return written;
}

}  // namespace stepwise::eval
