#pragma once

// Offline chat-completions endpoint. Replays canned responses in order and
// records every request body it receives.

#include <chrono>
#include <deque>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"

namespace stub {

struct Reply {
  int status = 200;
  std::string body;
  double delay_s = 0.0;
};

// A well-formed chat-completions response.
inline std::string completion(const std::string& content, std::optional<std::pair<long, long>> usage = std::nullopt) {
  nlohmann::json j{{"id", "chatcmpl-stub"},
                   {"object", "chat.completion"},
                   {"model", "stub-model"},
                   {"choices", {{{"index", 0},
                                 {"message", {{"role", "assistant"}, {"content", content}}},
                                 {"finish_reason", "stop"}}}}};
  if (usage) {
    j["usage"] = {{"prompt_tokens", usage->first},
                  {"completion_tokens", usage->second},
                  {"total_tokens", usage->first + usage->second}};
  }
  return j.dump();
}

// Fixture file: {"status": 200, "delay_s": 0, "response": {...}}.
inline Reply load_reply(const std::filesystem::path& path) {
  std::ifstream in(path);
  auto j = nlohmann::json::parse(in);
  Reply r;
  r.status = j.value("status", 200);
  r.delay_s = j.value("delay_s", 0.0);
  r.body = j.at("response").dump();
  return r;
}

class Server {
public:
  Server() {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      Reply reply;
      {
        std::lock_guard lock(mu_);
        requests_.push_back(req.body);
        if (!replies_.empty()) {
          reply = replies_.front();
          replies_.pop_front();
        } else {
          reply.status = 500;
          reply.body = R"({"error":"no canned reply left"})";
        }
      }
      if (reply.delay_s > 0) std::this_thread::sleep_for(std::chrono::duration<double>(reply.delay_s));
      res.status = reply.status;
      res.set_content(reply.body, "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~Server() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  void push(Reply reply) {
    std::lock_guard lock(mu_);
    replies_.push_back(std::move(reply));
  }

  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }

  std::vector<std::string> requests() const {
    std::lock_guard lock(mu_);
    return requests_;
  }

private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  mutable std::mutex mu_;
  std::deque<Reply> replies_;
  std::vector<std::string> requests_;
};

}  // namespace stub
