#include <gtest/gtest.h>

#include <thread>

#include "httplib.h"
#include "stepwise/label_http.hpp"
#include "test_util.hpp"

namespace stepwise::service {
namespace {

json task_json(const std::string& id, std::size_t steps) {
  json s = json::array();
  for (std::size_t i = 0; i < steps; ++i) s.push_back("step " + std::to_string(i));
  return {{"statement", "Compute " + id + "."},
          {"ground_truth_answer", "4"},
          {"solution", {{"id", id}, {"problem_id", "p-" + id}, {"steps", s}}}};
}

json qc_json(const std::string& id, std::size_t steps, std::vector<std::size_t> gold) {
  json t = task_json(id, steps);
  t["id"] = id;
  t["gold_first_error_steps"] = gold;
  return t;
}

class HttpFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    ServiceConfig cfg;
    cfg.qc_probability = 0.0;
    service_ = std::make_unique<LabelService>(cfg);
    server_ = std::make_unique<LabelHttpServer>(*service_, HttpOptions{"127.0.0.1", 0, {}});
    port_ = server_->bind();
    thread_ = std::thread([this] { server_->serve(); });
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
    for (int i = 0; i < 100 && !client_->Get("/healthz"); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  void TearDown() override {
    server_->stop();
    thread_.join();
  }

  httplib::Result post(const std::string& path, const json& body) {
    return client_->Post(path, body.dump(), "application/json");
  }

  std::unique_ptr<LabelService> service_;
  std::unique_ptr<LabelHttpServer> server_;
  std::unique_ptr<httplib::Client> client_;
  std::thread thread_;
  int port_ = 0;
};

TEST_F(HttpFixture, Health) {
  const auto res = client_->Get("/healthz");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(json::parse(res->body)["status"], "ok");
}

TEST_F(HttpFixture, FullLabelingRound) {
  auto res = post("/api/admin/generations", {{"tasks", {task_json("a", 3), task_json("b", 2)}}});
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 201);
  EXPECT_EQ(json::parse(res->body)["generation"], 1);
  EXPECT_EQ(post("/api/admin/generations", {{"tasks", {task_json("c", 1)}}})->status, 409);

  EXPECT_EQ(client_->Get("/api/tasks/next")->status, 400);
  EXPECT_EQ(post("/api/admin/labelers/alice/admit", json::object())->status, 200);
  res = client_->Get("/api/tasks/next?labeler=alice");
  ASSERT_EQ(res->status, 200);
  const json view = json::parse(res->body);
  EXPECT_EQ(view["task_id"], "g1-t00000");
  EXPECT_EQ(view["steps"].size(), 3u);
  EXPECT_EQ(view["problem"]["ground_truth_answer"], "4");
  for (const char* hidden : {"gold_first_error_steps", "is_qc", "qc_item", "labels", "reference_solution"}) {
    EXPECT_FALSE(view.contains(hidden)) << hidden;
  }

  const std::string path = "/api/tasks/g1-t00000/labels";
  EXPECT_EQ(post(path, {{"labeler", "alice"}, {"ratings", {"positive", "negative", "positive"}}})->status, 422);
  EXPECT_EQ(post(path, {{"labeler", "alice"}, {"ratings", {"great"}}})->status, 400);
  EXPECT_EQ(post(path, {{"labeler", "bob"}, {"ratings", {"positive", "negative"}}})->status, 409);
  EXPECT_EQ(client_->Post(path, "{not json", "application/json")->status, 400);
  res = post(path, {{"labeler", "alice"}, {"ratings", {"positive", "negative"}}});
  ASSERT_EQ(res->status, 200);
  EXPECT_EQ(json::parse(res->body)["accepted"], true);
  EXPECT_EQ(post(path, {{"labeler", "alice"}, {"ratings", {"positive", "negative"}}})->status, 409);
  EXPECT_EQ(post("/api/tasks/nope/labels", {{"labeler", "alice"}, {"ratings", {"negative"}}})->status, 404);

  res = post("/api/admin/injections", task_json("late", 1));
  ASSERT_EQ(res->status, 201);
  EXPECT_EQ(json::parse(res->body)["task_id"].get<std::string>().rfind("g1-i", 0), 0u);

  res = client_->Get("/api/stats");
  ASSERT_EQ(res->status, 200);
  const json stats = json::parse(res->body);
  EXPECT_EQ(stats["tasks"]["completed"], 1);
  EXPECT_EQ(stats["tasks"]["pending"], 2);
  EXPECT_EQ(stats["generation_open"], true);
  EXPECT_EQ(stats["config"]["qc_probability"], 0.0);
}

TEST_F(HttpFixture, ScreeningThroughHttp) {
  EXPECT_EQ(client_->Get("/api/tasks/next?labeler=new")->status, 204);
  EXPECT_EQ(client_->Get("/api/labelers/new")->status, 404);
  auto res = post("/api/admin/qc_items", {{"qc_items", {qc_json("q", 2, {1})}}});
  ASSERT_EQ(res->status, 201);
  EXPECT_EQ(post("/api/admin/qc_items", {{"qc_items", {qc_json("q", 2, {1})}}})->status, 400);
  post("/api/admin/generations", {{"tasks", {task_json("a", 3)}}});

  for (int i = 0; i < 30; ++i) {
    res = client_->Get("/api/tasks/next?labeler=new");
    ASSERT_EQ(res->status, 200);
    const json view = json::parse(res->body);
    EXPECT_FALSE(view.contains("gold_first_error_steps"));
    const json ratings = i < 8 ? json{"negative"} : json{"positive", "negative"};
    res = post("/api/tasks/" + view["task_id"].get<std::string>() + "/labels", {{"labeler", "new"}, {"ratings", ratings}});
    ASSERT_EQ(res->status, 200);
    EXPECT_EQ(json::parse(res->body)["qc"]["pass"], i >= 8);
  }
  EXPECT_EQ(json::parse(res->body)["labeler_status"], "removed");
  EXPECT_EQ(client_->Get("/api/tasks/next?labeler=new")->status, 403);
  res = client_->Get("/api/labelers/new");
  ASSERT_EQ(res->status, 200);
  EXPECT_EQ(json::parse(res->body)["removal_reason"], "screening_failed");
}

TEST(HttpServer, BusyPortFailsToBind) {
  LabelService svc(ServiceConfig{});
  LabelHttpServer first(svc, {"127.0.0.1", 0, {}});
  const int port = first.bind();
  LabelHttpServer second(svc, {"127.0.0.1", port, {}});
  EXPECT_THROW(second.bind(), std::runtime_error);
  LabelHttpServer unbound(svc, {"127.0.0.1", 0, {}});
  EXPECT_THROW(unbound.serve(), std::logic_error);
  EXPECT_THROW(LabelHttpServer(svc, {"127.0.0.1", 0, std::filesystem::path("/definitely/missing")}), std::runtime_error);
}

TEST(HttpServer, ServesStaticDirectory) {
  testing::TempDir dir;
  testing::write_text(dir / "index.html", "<html>ui</html>");
  LabelService svc(ServiceConfig{});
  LabelHttpServer server(svc, {"127.0.0.1", 0, dir.path()});
  const int port = server.bind();
  std::thread t([&] { server.serve(); });
  httplib::Client client("127.0.0.1", port);
  httplib::Result res;
  for (int i = 0; i < 100 && !(res = client.Get("/index.html")); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(10));
  ASSERT_TRUE(res);
  EXPECT_EQ(res->body, "<html>ui</html>");
  server.stop();
  t.join();
}

}  // namespace
}  // namespace stepwise::service
