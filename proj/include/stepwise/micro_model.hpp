#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "stepwise/core.hpp"

namespace stepwise::rm {

inline constexpr std::size_t kNumClasses = 3;
// Class order matches StepLabel: positive, neutral, negative.
using ClassProbs = std::array<double, kNumClasses>;

struct SparseEntry {
  std::uint32_t index = 0;
  double value = 0.0;
};
using SparseVector = std::vector<SparseEntry>;

enum class LossKind {
  // Cross-entropy against one of the three classes.
  softmax,
  // Binary cross-entropy on p_positive; target is 0 (positive) or 2 (other).
  positive_binary,
};

struct Example {
  SparseVector features;
  int target = 0;  // class index
};

struct Hyperparams {
  double learning_rate = 0.05;
  int epochs = 2;
  std::uint64_t seed = 0;
  double l2 = 1e-6;
  std::size_t batch_size = 32;
  std::size_t feature_dim = 1u << 16;

  json to_json() const;
  static Hyperparams from_json(const json& j);
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Linear softmax classifier: logits = W^T x + b, W is feature_dim x 3.
class MicroModel {
 public:
  MicroModel() = default;
  explicit MicroModel(std::size_t feature_dim);

  std::size_t feature_dim() const { return bias_.empty() ? 0 : weights_.size() / kNumClasses; }

  double weight(std::size_t feature, std::size_t cls) const { return weights_[feature * kNumClasses + cls]; }
  double& weight(std::size_t feature, std::size_t cls) { return weights_[feature * kNumClasses + cls]; }
  double bias(std::size_t cls) const { return bias_[cls]; }
  double& bias(std::size_t cls) { return bias_[cls]; }

  std::array<double, kNumClasses> logits(const SparseVector& x) const;
  ClassProbs predict(const SparseVector& x) const;

  // Seeded uniform(-scale, scale) weights and biases.
  void randomize(std::uint64_t seed, double scale);
  // Output class c of the result is class perm[c] of this model.
  MicroModel permuted(const std::array<int, kNumClasses>& perm) const;

  bool all_finite() const;
  bool operator==(const MicroModel&) const = default;

  json to_json() const;
  static MicroModel from_json(const json& j);

 private:
  std::vector<double> weights_;
  std::vector<double> bias_;
};

struct Gradient {
  std::vector<double> weights;  // dense, same layout as the model
  std::array<double, kNumClasses> bias{};
};

// Mean loss over the batch plus (l2 / 2) * ||W||^2.
double batch_loss(const MicroModel& m, std::span<const Example> batch, LossKind kind, double l2);
Gradient batch_gradient(const MicroModel& m, std::span<const Example> batch, LossKind kind, double l2);

struct TrainReport {
  std::vector<double> epoch_losses;
  std::size_t updates = 0;
};

// Mini-batch gradient descent; step size learning_rate / sqrt(t) for the
// t-th update (1-based). Batch order is a seeded shuffle per epoch.
MicroModel train_classifier(std::span<const Example> examples, const Hyperparams& hp, LossKind kind,
                            MicroModel init = {}, TrainReport* report = nullptr);

// Central differences (h = 1e-5) on `coordinates` randomly drawn weights
// (biased toward features active in the batch) plus every bias; returns the
// largest relative error |a - n| / max(|a|, |n|), skipping coordinates where
// both are below 1e-10.
double gradient_check(const MicroModel& m, std::span<const Example> batch, LossKind kind, double l2,
                      std::uint64_t seed, std::size_t coordinates = 64);

}  // namespace stepwise::rm
