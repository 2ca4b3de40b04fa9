#include "stepwise/micro_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "stepwise/rng.hpp"

namespace stepwise::rm {

namespace {

double log_sum_exp(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

ClassProbs softmax(const std::array<double, kNumClasses>& z) {
  const double m = *std::max_element(z.begin(), z.end());
  ClassProbs p{};
  double s = 0.0;
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    p[k] = std::exp(z[k] - m);
    s += p[k];
  }
  for (double& v : p) v /= s;
  return p;
}

double example_loss(const std::array<double, kNumClasses>& z, int target, LossKind kind) {
  const double lse = log_sum_exp(z);
  if (kind == LossKind::softmax || target == 0) return lse - z[static_cast<std::size_t>(target)];
  const std::array<double, 2> rest{z[1], z[2]};
  return lse - log_sum_exp(rest);
}

// dLoss/dlogits for one example.
std::array<double, kNumClasses> logit_gradient(const ClassProbs& p, int target, LossKind kind) {
  std::array<double, kNumClasses> g{};
  if (kind == LossKind::softmax || target == 0) {
    for (std::size_t k = 0; k < kNumClasses; ++k) g[k] = p[k] - (static_cast<int>(k) == target ? 1.0 : 0.0);
    return g;
  }
  const double rest = p[1] + p[2];
  g[0] = p[0];
  for (std::size_t k = 1; k < kNumClasses; ++k) g[k] = rest > 0.0 ? -p[0] * p[k] / rest : 0.0;
  return g;
}

double l2_norm_sq(const MicroModel& m) {
  double s = 0.0;
  for (std::size_t f = 0; f < m.feature_dim(); ++f) {
    for (std::size_t k = 0; k < kNumClasses; ++k) s += m.weight(f, k) * m.weight(f, k);
  }
  return s;
}

void check_examples(std::span<const Example> examples, std::size_t dim, LossKind kind) {
  for (const auto& e : examples) {
    if (e.target < 0 || e.target >= static_cast<int>(kNumClasses)) throw TrainingError("target class out of range");
    if (kind == LossKind::positive_binary && e.target == 1) {
      throw TrainingError("binary loss takes targets 0 (positive) or 2 (negative)");
    }
    for (const auto& x : e.features) {
      if (x.index >= dim) throw TrainingError("feature index beyond model dimension");
      if (!std::isfinite(x.value)) throw TrainingError("non-finite feature value");
    }
  }
}

}  // namespace

json Hyperparams::to_json() const {
  return {{"learning_rate", learning_rate}, {"epochs", epochs},         {"seed", seed},
          {"l2", l2},                       {"batch_size", batch_size}, {"feature_dim", feature_dim}};
}

Hyperparams Hyperparams::from_json(const json& j) {
  Hyperparams hp;
  hp.learning_rate = j.value("learning_rate", hp.learning_rate);
  hp.epochs = j.value("epochs", hp.epochs);
  hp.seed = j.value("seed", hp.seed);
  hp.l2 = j.value("l2", hp.l2);
  hp.batch_size = j.value("batch_size", hp.batch_size);
  hp.feature_dim = j.value("feature_dim", hp.feature_dim);
  return hp;
}

MicroModel::MicroModel(std::size_t feature_dim) : weights_(feature_dim * kNumClasses, 0.0), bias_(kNumClasses, 0.0) {
  if (feature_dim == 0) throw std::invalid_argument("feature_dim must be positive");
}

std::array<double, kNumClasses> MicroModel::logits(const SparseVector& x) const {
  std::array<double, kNumClasses> z{bias_[0], bias_[1], bias_[2]};
  for (const auto& e : x) {
    const double* w = &weights_[static_cast<std::size_t>(e.index) * kNumClasses];
    for (std::size_t k = 0; k < kNumClasses; ++k) z[k] += w[k] * e.value;
  }
  return z;
}

ClassProbs MicroModel::predict(const SparseVector& x) const { return softmax(logits(x)); }

void MicroModel::randomize(std::uint64_t seed, double scale) {
  Rng rng(seed);
  for (double& w : weights_) w = (2.0 * rng.uniform01() - 1.0) * scale;
  for (double& b : bias_) b = (2.0 * rng.uniform01() - 1.0) * scale;
}

MicroModel MicroModel::permuted(const std::array<int, kNumClasses>& perm) const {
  MicroModel out(feature_dim());
  for (std::size_t f = 0; f < feature_dim(); ++f) {
    for (std::size_t k = 0; k < kNumClasses; ++k) out.weight(f, k) = weight(f, static_cast<std::size_t>(perm[k]));
  }
  for (std::size_t k = 0; k < kNumClasses; ++k) out.bias(k) = bias(static_cast<std::size_t>(perm[k]));
  return out;
}

bool MicroModel::all_finite() const {
  auto finite = [](double v) { return std::isfinite(v); };
  return std::all_of(weights_.begin(), weights_.end(), finite) && std::all_of(bias_.begin(), bias_.end(), finite);
}

json MicroModel::to_json() const {
  // Sparse rows keep saved models small; zero rows are omitted.
  json rows = json::array();
  for (std::size_t f = 0; f < feature_dim(); ++f) {
    if (weight(f, 0) == 0.0 && weight(f, 1) == 0.0 && weight(f, 2) == 0.0) continue;
    rows.push_back({f, weight(f, 0), weight(f, 1), weight(f, 2)});
  }
  return {{"feature_dim", feature_dim()}, {"bias", bias_}, {"rows", rows}};
}

MicroModel MicroModel::from_json(const json& j) {
  MicroModel m(j.at("feature_dim").get<std::size_t>());
  const auto bias = j.at("bias").get<std::vector<double>>();
  if (bias.size() != kNumClasses) throw std::invalid_argument("model bias must have 3 entries");
  m.bias_ = bias;
  for (const json& row : j.at("rows")) {
    const auto f = row.at(0).get<std::size_t>();
    if (f >= m.feature_dim()) throw std::invalid_argument("model row beyond feature_dim");
    for (std::size_t k = 0; k < kNumClasses; ++k) m.weight(f, k) = row.at(k + 1).get<double>();
  }
  return m;
}

double batch_loss(const MicroModel& m, std::span<const Example> batch, LossKind kind, double l2) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  double total = 0.0;
  for (const auto& e : batch) total += example_loss(m.logits(e.features), e.target, kind);
  return total / static_cast<double>(batch.size()) + 0.5 * l2 * l2_norm_sq(m);
}

Gradient batch_gradient(const MicroModel& m, std::span<const Example> batch, LossKind kind, double l2) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  Gradient g;
  g.weights.assign(m.feature_dim() * kNumClasses, 0.0);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (const auto& e : batch) {
    const auto dz = logit_gradient(m.predict(e.features), e.target, kind);
    for (std::size_t k = 0; k < kNumClasses; ++k) g.bias[k] += dz[k] * inv_n;
    for (const auto& x : e.features) {
      for (std::size_t k = 0; k < kNumClasses; ++k) g.weights[x.index * kNumClasses + k] += dz[k] * x.value * inv_n;
    }
  }
  for (std::size_t f = 0; f < m.feature_dim(); ++f) {
    for (std::size_t k = 0; k < kNumClasses; ++k) g.weights[f * kNumClasses + k] += l2 * m.weight(f, k);
  }
  return g;
}

MicroModel train_classifier(std::span<const Example> examples, const Hyperparams& hp, LossKind kind, MicroModel init,
                            TrainReport* report) {
  if (examples.empty()) throw TrainingError("no labeled steps to train on");
  if (hp.epochs < 0) throw TrainingError("negative epoch count");
  if (hp.batch_size == 0) throw TrainingError("batch_size must be positive");
  if (!(hp.learning_rate > 0.0) || !(hp.l2 >= 0.0)) throw TrainingError("learning_rate must be > 0 and l2 >= 0");
  MicroModel model = init.feature_dim() == 0 ? MicroModel(hp.feature_dim) : std::move(init);
  check_examples(examples, model.feature_dim(), kind);

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(hp.seed, "minibatch-order"));

  // W = scale * V lets the l2 shrink cost O(1) per update.
  double scale = 1.0;
  auto fold_scale = [&] {
    if (scale == 1.0) return;
    for (std::size_t f = 0; f < model.feature_dim(); ++f) {
      for (std::size_t k = 0; k < kNumClasses; ++k) model.weight(f, k) *= scale;
    }
    scale = 1.0;
  };
  auto true_logits = [&](const SparseVector& x) {
    std::array<double, kNumClasses> z{model.bias(0), model.bias(1), model.bias(2)};
    for (const auto& e : x) {
      for (std::size_t k = 0; k < kNumClasses; ++k) z[k] += scale * model.weight(e.index, k) * e.value;
    }
    return z;
  };

  std::size_t t = 0;
  std::vector<std::array<double, kNumClasses>> dz;
  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += hp.batch_size) {
      const std::size_t end = std::min(order.size(), start + hp.batch_size);
      const double inv_b = 1.0 / static_cast<double>(end - start);
      dz.clear();
      for (std::size_t i = start; i < end; ++i) {
        const Example& e = examples[order[i]];
        const auto z = true_logits(e.features);
        epoch_loss += example_loss(z, e.target, kind);
        dz.push_back(logit_gradient(softmax(z), e.target, kind));
      }
      ++t;
      const double lr = hp.learning_rate / std::sqrt(static_cast<double>(t));
      const double shrink = 1.0 - lr * hp.l2;
      if (shrink <= 0.0) throw TrainingError("learning_rate * l2 >= 1; weight decay would flip signs");
      scale *= shrink;
      const double step = lr * inv_b / scale;
      for (std::size_t i = start; i < end; ++i) {
        const auto& g = dz[i - start];
        for (std::size_t k = 0; k < kNumClasses; ++k) model.bias(k) -= lr * inv_b * g[k];
        for (const auto& x : examples[order[i]].features) {
          for (std::size_t k = 0; k < kNumClasses; ++k) model.weight(x.index, k) -= step * g[k] * x.value;
        }
      }
      if (scale < 1e-6) fold_scale();
    }
    fold_scale();
    epoch_loss /= static_cast<double>(order.size());
    if (!std::isfinite(epoch_loss) || !model.all_finite()) {
      throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + " (learning_rate " +
                          std::to_string(hp.learning_rate) + ", " + std::to_string(examples.size()) + " examples)");
    }
    if (report != nullptr) report->epoch_losses.push_back(epoch_loss + 0.5 * hp.l2 * l2_norm_sq(model));
  }
  if (report != nullptr) report->updates = t;
  return model;
}

double gradient_check(const MicroModel& m, std::span<const Example> batch, LossKind kind, double l2,
                      std::uint64_t seed, std::size_t coordinates) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  const Gradient analytic = batch_gradient(m, batch, kind, l2);
  std::vector<std::uint32_t> active;
  {
    std::set<std::uint32_t> seen;
    for (const auto& e : batch) {
      for (const auto& x : e.features) seen.insert(x.index);
    }
    active.assign(seen.begin(), seen.end());
  }
  Rng rng(seed);
  constexpr double h = 1e-5;
  MicroModel probe = m;
  double worst = 0.0;
  auto compare = [&](double a, double& param) {
    const double saved = param;
    param = saved + h;
    const double up = batch_loss(probe, batch, kind, l2);
    param = saved - h;
    const double down = batch_loss(probe, batch, kind, l2);
    param = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max(std::abs(a), std::abs(numeric));
    if (denom < 1e-10) return;
    worst = std::max(worst, std::abs(a - numeric) / denom);
  };
  for (std::size_t k = 0; k < kNumClasses; ++k) compare(analytic.bias[k], probe.bias(k));
  for (std::size_t c = 0; c < coordinates; ++c) {
    std::size_t f = 0;
    if (!active.empty() && (c % 4 != 3)) {
      f = active[rng.uniform_index(active.size())];
    } else {
      f = rng.uniform_index(m.feature_dim());
    }
    const std::size_t k = rng.uniform_index(kNumClasses);
    compare(analytic.weights[f * kNumClasses + k], probe.weight(f, k));
  }
  return worst;
}

}  // namespace stepwise::rm
