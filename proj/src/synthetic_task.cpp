#include "stepwise/synthetic_task.hpp"

#include <sstream>
#include <stdexcept>

#include "stepwise/rng.hpp"

namespace stepwise::synth {

using rm::ArithmeticOp;

namespace {

std::string instruction(const ChainOp& op) {
  const std::string k = std::to_string(op.operand);
  switch (op.op) {
    case ArithmeticOp::add: return "Add " + k + ".";
    case ArithmeticOp::sub: return "Subtract " + k + ".";
    case ArithmeticOp::mul: return "Multiply by " + k + ".";
    case ArithmeticOp::div: return "Divide by " + k + ".";
  }
  return "";
}

ChainOp random_op(Rng& rng, const Rational& current) {
  std::vector<std::int64_t> divisors;
  if (current.is_integer() && current.num() != 0) {
    for (std::int64_t d = 2; d <= 9; ++d) {
      if (current.num() % d == 0) divisors.push_back(d);
    }
  }
  const std::uint64_t n_ops = divisors.empty() ? 3 : 4;
  switch (rng.uniform_index(n_ops)) {
    case 0: return {ArithmeticOp::add, rng.uniform_int(1, 20)};
    case 1: return {ArithmeticOp::sub, rng.uniform_int(1, 20)};
    case 2: return {ArithmeticOp::mul, rng.uniform_int(2, 9)};
    default: return {ArithmeticOp::div, divisors[rng.uniform_index(divisors.size())]};
  }
}

// Nonzero delta in [-3, 3] with value + delta != avoid.
Rational perturb(Rng& rng, const Rational& value, const Rational& avoid) {
  while (true) {
    std::int64_t d = rng.uniform_int(1, 3);
    if (rng.bernoulli(0.5)) d = -d;
    const Rational out = value + Rational(d);
    if (!(out == avoid)) return out;
  }
}

}  // namespace

std::string ChainProblem::statement() const {
  std::ostringstream os;
  os << "Start with " << start_value << ".";
  for (const auto& op : ops) os << ' ' << instruction(op);
  os << " What is the final value?";
  return os.str();
}

Problem ChainProblem::to_problem() const {
  Problem p;
  p.id = id;
  p.statement = statement();
  p.ground_truth_answer = answer().str();
  p.split = split;
  return p;
}

void ChainProblem::validate() const {
  if (ops.empty() || trace.size() != ops.size()) throw std::logic_error("chain " + id + " has an inconsistent trace");
  Rational v(start_value);
  for (std::size_t i = 0; i < ops.size(); ++i) {
    if (ops[i].op == ArithmeticOp::div) {
      if (ops[i].operand == 0 || !v.is_integer() || v.num() % ops[i].operand != 0) {
        throw std::logic_error("chain " + id + " step " + std::to_string(i) + " is not an exact division");
      }
    }
    v = rm::apply(ops[i].op, v, Rational(ops[i].operand));
    if (!(v == trace[i])) throw std::logic_error("chain " + id + " trace mismatch at step " + std::to_string(i));
  }
}

std::vector<ChainProblem> generate_problems(std::size_t count, LengthRange lengths, std::uint64_t seed,
                                            const std::string& id_prefix, Split split) {
  if (lengths.min < 1 || lengths.min > lengths.max) throw std::invalid_argument("invalid chain length range");
  std::vector<ChainProblem> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, i));
    ChainProblem p;
    p.id = id_prefix + "-" + std::to_string(i);
    p.split = split;
    p.start_value = rng.uniform_int(1, 20);
    const auto length = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(lengths.min),
                                                                  static_cast<std::int64_t>(lengths.max)));
    Rational v(p.start_value);
    for (std::size_t k = 0; k < length; ++k) {
      const ChainOp op = random_op(rng, v);
      v = rm::apply(op.op, v, Rational(op.operand));
      p.ops.push_back(op);
      p.trace.push_back(v);
    }
    out.push_back(std::move(p));
  }
  return out;
}

void NoisySolverConfig::validate() const {
  if (!(step_error_rate >= 0.0 && step_error_rate <= 1.0)) throw std::invalid_argument("step_error_rate outside [0,1]");
  if (!(compensating_error_rate >= 0.0 && compensating_error_rate < 1.0)) {
    throw std::invalid_argument("compensating_error_rate outside [0,1)");
  }
  if (step_error_rate + compensating_error_rate > 1.0) {
    throw std::invalid_argument("step_error_rate + compensating_error_rate exceeds 1");
  }
}

SolutionRecord solve_noisy(const ChainProblem& problem, const NoisySolverConfig& cfg, const std::string& solution_id,
                           std::uint32_t generation) {
  cfg.validate();
  Rng rng(cfg.seed);
  const std::size_t n = problem.ops.size();
  std::vector<Rational> stated(n);

  std::size_t first = n;
  std::size_t cancel = n;
  if (n >= 2 && rng.bernoulli(cfg.compensating_error_rate)) {
    first = static_cast<std::size_t>(rng.uniform_index(n - 1));
    cancel = first + 1 + static_cast<std::size_t>(rng.uniform_index(n - 1 - first));
  }
  const bool compensated = first < n;
  Rational previous(problem.start_value);
  std::vector<std::string> steps;
  steps.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Rational operand(problem.ops[i].operand);
    const Rational local = rm::apply(problem.ops[i].op, previous, operand);
    Rational value = local;
    if (compensated) {
      if (i == first) value = perturb(rng, local, problem.trace[i]);
      if (i == cancel) value = problem.trace[i];
    } else if (rng.bernoulli(cfg.step_error_rate)) {
      value = perturb(rng, local, problem.trace[i]);
    }
    steps.push_back(rm::format_arithmetic_claim({previous, problem.ops[i].op, operand, value}));
    previous = value;
  }
  const std::string id = solution_id.empty() ? problem.id + "-sol" : solution_id;
  return make_solution(id, problem.id, std::move(steps), {"noisy-chain-solver", 2, generation},
                       problem.answer().str());
}

std::vector<SolutionRecord> sample_solutions(const ChainProblem& problem, const NoisySolverConfig& cfg, std::size_t n,
                                             std::size_t first_index) {
  std::vector<SolutionRecord> out;
  out.reserve(n);
  for (std::size_t i = first_index; i < first_index + n; ++i) {
    NoisySolverConfig sample_cfg = cfg;
    sample_cfg.seed = derive_seed(derive_seed(cfg.seed, problem.id), i);
    // Zero-padded so lexicographic id order matches sample order.
    std::string index = std::to_string(i);
    if (index.size() < 5) index.insert(0, 5 - index.size(), '0');
    out.push_back(solve_noisy(problem, sample_cfg, problem.id + "-s" + index));
  }
  return out;
}

StepLabelResult label_steps(const SolutionRecord& solution, const ChainProblem& problem) {
  StepLabelResult out;
  Rational previous(problem.start_value);
  for (std::size_t i = 0; i < solution.steps.size(); ++i) {
    if (i >= problem.ops.size()) {
      out.labels.push_back(StepLabel::negative);
      out.diagnostics.push_back("step " + std::to_string(i) + " is beyond the chain length");
      continue;
    }
    const auto claim = rm::parse_arithmetic_claim(solution.steps[i]);
    if (!claim) {
      out.labels.push_back(StepLabel::negative);
      out.diagnostics.push_back("step " + std::to_string(i) + " does not parse: '" + solution.steps[i] + "'");
      previous = problem.trace[i];
      continue;
    }
    Rational expected;
    bool ok = true;
    try {
      expected = rm::apply(problem.ops[i].op, previous, Rational(problem.ops[i].operand));
    } catch (const std::exception&) {
      ok = false;
    }
    out.labels.push_back(ok && claim->result == expected ? StepLabel::positive : StepLabel::negative);
    previous = claim->result;
  }
  return out;
}

double pass_rate(const ChainProblem& problem, const NoisySolverConfig& cfg, std::size_t n_samples, std::uint64_t seed) {
  if (n_samples == 0) throw std::invalid_argument("pass_rate needs at least one sample");
  NoisySolverConfig c = cfg;
  c.seed = seed;
  std::size_t correct = 0;
  for (const auto& s : sample_solutions(problem, c, n_samples)) correct += s.is_correct.value_or(false) ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(n_samples);
}

ChainOracle::ChainOracle(const std::vector<ChainProblem>& problems) {
  for (const auto& p : problems) add(p);
}

void ChainOracle::add(const ChainProblem& problem) { problems_[problem.id] = problem; }

StepProbabilities ChainOracle::score(const Problem& problem, const SolutionRecord& solution) const {
  auto it = problems_.find(solution.problem_id.empty() ? problem.id : solution.problem_id);
  if (it == problems_.end()) throw std::out_of_range("oracle has no chain for problem " + solution.problem_id);
  StepProbabilities out;
  for (StepLabel l : label_steps(solution, it->second).labels) {
    out.push_back(l == StepLabel::positive ? StepProb{1.0, 0.0, 0.0} : StepProb{0.0, 0.0, 1.0});
  }
  return out;
}

}  // namespace stepwise::synth
