#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "httplib.h"
#include "stepwise/external_scorer.hpp"
#include "test_util.hpp"

namespace stepwise::rm {
namespace {

enum class Mode { echo, short_reply, bad_sum, near_sum, slow, flaky, garbage, not_found };

// In-process scorer stub on an ephemeral port.
class StubScorer {
 public:
  StubScorer() {
    server_.Post("/score", [this](const httplib::Request& req, httplib::Response& res) {
      ++calls_;
      const json body = json::parse(req.body);
      const std::size_t n = body.at("steps").size();
      json steps = json::array();
      for (std::size_t i = 0; i < n; ++i) steps.push_back({{"p_positive", 0.7}, {"p_neutral", 0.2}, {"p_negative", 0.1}});
      switch (mode_.load()) {
        case Mode::short_reply: steps.erase(steps.size() - 1); break;
        case Mode::bad_sum: steps[0]["p_positive"] = 0.72; break;
        case Mode::near_sum: steps[0]["p_positive"] = 0.7000005; break;
        case Mode::slow: std::this_thread::sleep_for(std::chrono::milliseconds(400)); break;
        case Mode::flaky:
          if (calls_ == 1) {
            res.status = 503;
            return;
          }
          break;
        case Mode::garbage: res.set_content("{oops", "application/json"); return;
        case Mode::not_found: res.status = 404; return;
        case Mode::echo: break;
      }
      res.set_content(json{{"steps", steps}}.dump(), "application/json");
    });
    server_.Post("/score_outcome", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"score":0.83})", "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubScorer() {
    server_.stop();
    thread_.join();
  }

  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_); }
  void set_mode(Mode m) {
    mode_ = m;
    calls_ = 0;
  }
  int calls() const { return calls_; }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<Mode> mode_{Mode::echo};
  std::atomic<int> calls_{0};
};

const Problem kProblem{"p", "Compute.", "1"};
const SolutionRecord kSolution = testing::solution("s", "p", {"a", "b", "c"});

ScorerError::Kind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ScorerError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no ScorerError thrown";
  return ScorerError::Kind::connection;
}

TEST(ExternalScorer, HealthyStubEchoesTriples) {
  StubScorer stub;
  const auto probs = external_score(stub.endpoint(), kProblem, kSolution);
  ASSERT_EQ(probs.size(), 3u);
  for (const auto& p : probs) {
    EXPECT_NEAR(p.p_positive, 0.7, 1e-12);
    EXPECT_NEAR(p.p_neutral, 0.2, 1e-12);
    EXPECT_NEAR(p.p_negative, 0.1, 1e-12);
  }
  EXPECT_DOUBLE_EQ(HttpOutcomeScorer(stub.endpoint()).score(kProblem, kSolution), 0.83);
}

TEST(ExternalScorer, LengthMismatch) {
  StubScorer stub;
  stub.set_mode(Mode::short_reply);
  EXPECT_EQ(kind_of([&] { external_score(stub.endpoint(), kProblem, kSolution); }),
            ScorerError::Kind::length_mismatch);
}

TEST(ExternalScorer, RejectsTripleSummingTo102) {
  StubScorer stub;
  stub.set_mode(Mode::bad_sum);
  EXPECT_EQ(kind_of([&] { external_score(stub.endpoint(), kProblem, kSolution); }),
            ScorerError::Kind::invalid_probabilities);
}

TEST(ExternalScorer, RenormalizesSmallDrift) {
  StubScorer stub;
  stub.set_mode(Mode::near_sum);
  const auto probs = external_score(stub.endpoint(), kProblem, kSolution);
  EXPECT_TRUE(is_valid(probs[0], 1e-12));
}

TEST(ExternalScorer, TimeoutIsRetriedThenReported) {
  StubScorer stub;
  stub.set_mode(Mode::slow);
  ScorerClientOptions options{std::chrono::milliseconds(100), 1};
  try {
    external_score(stub.endpoint(), kProblem, kSolution, options);
    FAIL() << "expected a timeout";
  } catch (const ScorerError& e) {
    EXPECT_EQ(e.kind(), ScorerError::Kind::timeout);
    EXPECT_EQ(e.attempts(), 2);
    EXPECT_TRUE(e.retryable());
  }
}

TEST(ExternalScorer, ServerErrorIsRetried) {
  StubScorer stub;
  stub.set_mode(Mode::flaky);
  EXPECT_EQ(external_score(stub.endpoint(), kProblem, kSolution, {std::chrono::milliseconds(2000), 2}).size(), 3u);
  EXPECT_EQ(stub.calls(), 2);
}

TEST(ExternalScorer, MalformedAndClientErrorsAreNotRetried) {
  StubScorer stub;
  stub.set_mode(Mode::garbage);
  EXPECT_EQ(kind_of([&] { external_score(stub.endpoint(), kProblem, kSolution); }),
            ScorerError::Kind::malformed_response);
  EXPECT_EQ(stub.calls(), 1);
  stub.set_mode(Mode::not_found);
  EXPECT_EQ(kind_of([&] { external_score(stub.endpoint(), kProblem, kSolution); }), ScorerError::Kind::http_status);
  EXPECT_EQ(stub.calls(), 1);
}

TEST(ExternalScorer, ConnectionRefused) {
  int port = 0;
  {
    StubScorer stub;
    port = std::stoi(stub.endpoint().substr(stub.endpoint().rfind(':') + 1));
  }
  EXPECT_EQ(kind_of([&] {
              external_score("http://127.0.0.1:" + std::to_string(port), kProblem, kSolution,
                             {std::chrono::milliseconds(200), 0});
            }),
            ScorerError::Kind::connection);
}

TEST(ParseScoreResponse, Shapes) {
  EXPECT_THROW(parse_score_response(json::array(), 1), ScorerError);
  EXPECT_THROW(parse_score_response({{"steps", {{{"p_positive", 1.0}}}}}, 1), ScorerError);
  EXPECT_THROW(
      parse_score_response({{"steps", {{{"p_positive", 1.1}, {"p_neutral", 0.0}, {"p_negative", -0.1}}}}}, 1),
      ScorerError);
}

}  // namespace
}  // namespace stepwise::rm
