#pragma once

#include <chrono>
#include <stdexcept>
#include <string>

#include "stepwise/reward_models.hpp"

namespace stepwise::rm {

struct ScorerClientOptions {
  std::chrono::milliseconds timeout{5000};  // --scorer-timeout-ms
  int retries = 2;                          // --scorer-retries; attempts = retries + 1
};

class ScorerError : public std::runtime_error {
 public:
  enum class Kind { timeout, connection, http_status, malformed_response, length_mismatch, invalid_probabilities };

  ScorerError(Kind kind, std::string message, int attempts, bool retryable)
      : std::runtime_error(std::move(message)), kind_(kind), attempts_(attempts), retryable_(retryable) {}

  Kind kind() const { return kind_; }
  int attempts() const { return attempts_; }
  // Whether a later call could plausibly succeed.
  bool retryable() const { return retryable_; }

 private:
  Kind kind_;
  int attempts_;
  bool retryable_;
};

std::string_view to_string(ScorerError::Kind kind);

// Triples within 1e-6 of summing to one are renormalized; anything further
// off, negative, or non-finite is rejected.
StepProbabilities parse_score_response(const json& body, std::size_t expected_steps);

json score_request_body(const Problem& problem, const SolutionRecord& solution);

// POST <endpoint>/score and /score_outcome, e.g. endpoint "http://127.0.0.1:9000".
class HttpProcessScorer final : public ProcessScorer {
 public:
  explicit HttpProcessScorer(std::string endpoint, ScorerClientOptions options = {});
  StepProbabilities score(const Problem& problem, const SolutionRecord& solution) const override;

 private:
  std::string endpoint_;
  ScorerClientOptions options_;
};

class HttpOutcomeScorer final : public OutcomeScorer {
 public:
  explicit HttpOutcomeScorer(std::string endpoint, ScorerClientOptions options = {});
  double score(const Problem& problem, const SolutionRecord& solution) const override;

 private:
  std::string endpoint_;
  ScorerClientOptions options_;
};

StepProbabilities external_score(const std::string& endpoint, const Problem& problem, const SolutionRecord& solution,
                                 const ScorerClientOptions& options = {});

}  // namespace stepwise::rm
