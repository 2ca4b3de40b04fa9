#include "stepwise/external_scorer.hpp"

#include <cmath>

#include "httplib.h"

namespace stepwise::rm {

namespace {

constexpr double kRenormalizeTolerance = 1e-6;

// Returns the parsed JSON body, retrying transport failures and 5xx.
json post_with_retries(const std::string& endpoint, const std::string& path, const json& body,
                       const ScorerClientOptions& options) {
  httplib::Client client(endpoint);
  const auto secs = options.timeout.count() / 1000;
  const auto usecs = (options.timeout.count() % 1000) * 1000;
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);

  const int attempts = std::max(1, options.retries + 1);
  ScorerError last(ScorerError::Kind::connection, "no attempt made", 0, true);
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    auto res = client.Post(path, body.dump(), "application/json");
    if (!res) {
      const auto err = res.error();
      const bool timed_out = err == httplib::Error::Read || err == httplib::Error::Write ||
                             err == httplib::Error::ConnectionTimeout;
      last = ScorerError(timed_out ? ScorerError::Kind::timeout : ScorerError::Kind::connection,
                         endpoint + path + ": " + httplib::to_string(err), attempt, true);
      continue;
    }
    if (res->status >= 500) {
      last = ScorerError(ScorerError::Kind::http_status, endpoint + path + ": HTTP " + std::to_string(res->status),
                         attempt, true);
      continue;
    }
    if (res->status != 200) {
      throw ScorerError(ScorerError::Kind::http_status, endpoint + path + ": HTTP " + std::to_string(res->status),
                        attempt, false);
    }
    try {
      return json::parse(res->body);
    } catch (const json::exception& e) {
      throw ScorerError(ScorerError::Kind::malformed_response, endpoint + path + ": " + e.what(), attempt, false);
    }
  }
  throw last;
}

}  // namespace

std::string_view to_string(ScorerError::Kind kind) {
  switch (kind) {
    case ScorerError::Kind::timeout: return "timeout";
    case ScorerError::Kind::connection: return "connection";
    case ScorerError::Kind::http_status: return "http_status";
    case ScorerError::Kind::malformed_response: return "malformed_response";
    case ScorerError::Kind::length_mismatch: return "length_mismatch";
    case ScorerError::Kind::invalid_probabilities: return "invalid_probabilities";
  }
  return "connection";
}

json score_request_body(const Problem& problem, const SolutionRecord& solution) {
  return {{"problem", problem.statement}, {"steps", solution.steps}};
}

StepProbabilities parse_score_response(const json& body, std::size_t expected_steps) {
  if (!body.is_object() || !body.contains("steps") || !body["steps"].is_array()) {
    throw ScorerError(ScorerError::Kind::malformed_response, "response lacks a steps array", 1, false);
  }
  const json& steps = body["steps"];
  if (steps.size() != expected_steps) {
    throw ScorerError(ScorerError::Kind::length_mismatch,
                      "scorer returned " + std::to_string(steps.size()) + " triples for " +
                          std::to_string(expected_steps) + " steps",
                      1, false);
  }
  StepProbabilities out;
  out.reserve(steps.size());
  for (std::size_t i = 0; i < steps.size(); ++i) {
    StepProb p;
    try {
      p = {steps[i].at("p_positive").get<double>(), steps[i].at("p_neutral").get<double>(),
           steps[i].at("p_negative").get<double>()};
    } catch (const json::exception& e) {
      throw ScorerError(ScorerError::Kind::malformed_response, "step " + std::to_string(i) + ": " + e.what(), 1, false);
    }
    const double sum = p.p_positive + p.p_neutral + p.p_negative;
    const bool finite = std::isfinite(p.p_positive) && std::isfinite(p.p_neutral) && std::isfinite(p.p_negative);
    if (!finite || p.p_positive < 0 || p.p_neutral < 0 || p.p_negative < 0 ||
        std::abs(sum - 1.0) > kRenormalizeTolerance) {
      throw ScorerError(ScorerError::Kind::invalid_probabilities,
                        "step " + std::to_string(i) + " triple sums to " + std::to_string(sum), 1, false);
    }
    p = {p.p_positive / sum, p.p_neutral / sum, p.p_negative / sum};
    out.push_back(p);
  }
  return out;
}

HttpProcessScorer::HttpProcessScorer(std::string endpoint, ScorerClientOptions options)
    : endpoint_(std::move(endpoint)), options_(options) {}

StepProbabilities HttpProcessScorer::score(const Problem& problem, const SolutionRecord& solution) const {
  return external_score(endpoint_, problem, solution, options_);
}

HttpOutcomeScorer::HttpOutcomeScorer(std::string endpoint, ScorerClientOptions options)
    : endpoint_(std::move(endpoint)), options_(options) {}

double HttpOutcomeScorer::score(const Problem& problem, const SolutionRecord& solution) const {
  const json body = post_with_retries(endpoint_, "/score_outcome", score_request_body(problem, solution), options_);
  if (!body.is_object() || !body.contains("score") || !body["score"].is_number()) {
    throw ScorerError(ScorerError::Kind::malformed_response, "response lacks a numeric score", 1, false);
  }
  const double s = body["score"].get<double>();
  if (!std::isfinite(s) || s < 0.0 || s > 1.0) {
    throw ScorerError(ScorerError::Kind::invalid_probabilities, "outcome score outside [0,1]", 1, false);
  }
  return s;
}

StepProbabilities external_score(const std::string& endpoint, const Problem& problem, const SolutionRecord& solution,
                                 const ScorerClientOptions& options) {
  const json body = post_with_retries(endpoint, "/score", score_request_body(problem, solution), options);
  return parse_score_response(body, solution.steps.size());
}

}  // namespace stepwise::rm
