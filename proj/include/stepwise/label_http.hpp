#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "stepwise/label_service.hpp"

namespace stepwise::service {

// Labeler-facing view of a task. Carries the problem, the ground-truth
// answer and the steps to rate; never gold labels or a reference solution.
json task_view(const LabelTask& task);

// Request body parsers shared by the HTTP layer and the CLI.
TaskInput task_input_from_json(const json& j);
GenerationRequest generation_request_from_json(const json& j);

struct HttpOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::optional<std::filesystem::path> static_dir;
};

class LabelHttpServer {
 public:
  LabelHttpServer(LabelService& service, HttpOptions options);
  ~LabelHttpServer();
  LabelHttpServer(const LabelHttpServer&) = delete;
  LabelHttpServer& operator=(const LabelHttpServer&) = delete;

  // Binds the socket and returns the bound port; throws when the port is taken.
  int bind();
  // Serves until stop(); bind() must have succeeded.
  void serve();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace stepwise::service
