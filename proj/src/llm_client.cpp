#include "skillmoo/llm_client.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>

#include "httplib.h"
#include "json.hpp"
#include "skillmoo/error.hpp"
#include "skillmoo/util.hpp"

using nlohmann::json;

namespace skillmoo {

void ModelConfig::validate() const {
  if (base_url.empty()) throw Error(ErrorKind::Config, "model base_url is not set (SKILLMOO_BASE_URL)");
  if (model_name.empty()) throw Error(ErrorKind::Config, "model name is not set");
  if (price_per_1k_input < 0 || price_per_1k_output < 0) throw Error(ErrorKind::Config, "prices must be nonnegative");
  if (!(request_timeout_s > 0)) throw Error(ErrorKind::Config, "request timeout must be positive");
  if (max_retries < 0 || max_in_flight < 1) throw Error(ErrorKind::Config, "invalid retry or in-flight limits");
}

void ModelConfig::apply_environment() {
  if (base_url.empty()) {
    if (const char* v = std::getenv("SKILLMOO_BASE_URL")) base_url = v;
  }
  if (api_key.empty()) {
    if (const char* v = std::getenv("SKILLMOO_API_KEY")) api_key = v;
  }
}

std::int64_t token_cost_micro_usd(std::int64_t tokens, double price_per_1k) {
  // Prices are quoted to at most six decimals, so this conversion is exact.
  const std::int64_t micro_per_1k = std::llround(price_per_1k * 1e6);
  return (tokens * micro_per_1k + 500) / 1000;
}

void UsageLedger::append(const UsageRecord& record) {
  std::lock_guard lock(mu_);
  records_.push_back(record);
  total_micro_ += record.cost_micro_usd;
}

std::vector<UsageRecord> UsageLedger::records() const {
  std::lock_guard lock(mu_);
  return records_;
}

std::int64_t UsageLedger::total_micro_usd() const {
  std::lock_guard lock(mu_);
  return total_micro_;
}

ChatClient::ChatClient(ModelConfig config) : config_(std::move(config)) { config_.validate(); }

namespace {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;    // /prefix/chat/completions
};

Endpoint split_url(const std::string& base_url) {
  auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorKind::Config, "base_url needs a scheme: " + base_url);
  auto path_start = base_url.find('/', scheme_end + 3);
  Endpoint ep;
  ep.origin = base_url.substr(0, path_start);
  std::string prefix = path_start == std::string::npos ? "" : base_url.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  ep.path = prefix + "/chat/completions";
  return ep;
}

}  // namespace

ChatReply ChatClient::chat(const std::vector<ChatMessage>& messages) {
  if (messages.empty()) throw Error(ErrorKind::InvalidArgument, "chat needs at least one message");

  {
    std::unique_lock lock(slots_mu_);
    slots_cv_.wait(lock, [&] { return in_flight_ < config_.max_in_flight; });
    ++in_flight_;
  }
  struct SlotRelease {
    ChatClient* self;
    ~SlotRelease() {
      {
        std::lock_guard lock(self->slots_mu_);
        --self->in_flight_;
      }
      self->slots_cv_.notify_one();
    }
  } release{this};

  json body{{"model", config_.model_name}, {"messages", json::array()}};
  for (const auto& m : messages) body["messages"].push_back({{"role", m.role}, {"content", m.content}});
  const std::string payload = body.dump();

  auto ep = split_url(config_.base_url);
  httplib::Client http(ep.origin);
  const auto timeout = std::chrono::duration<double>(config_.request_timeout_s);
  const auto timeout_us = std::chrono::duration_cast<std::chrono::microseconds>(timeout);
  http.set_connection_timeout(std::min<std::chrono::microseconds>(timeout_us, std::chrono::seconds(30)));
  http.set_read_timeout(timeout_us);
  http.set_write_timeout(timeout_us);
  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

  httplib::Result res;
  for (int attempt = 0;; ++attempt) {
    const auto attempt_start = std::chrono::steady_clock::now();
    res = http.Post(ep.path, headers, payload, "application/json");
    const double attempt_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - attempt_start).count();
    if (!res) {
      if (res.error() == httplib::Error::ConnectionTimeout || attempt_s >= config_.request_timeout_s * 0.95) {
        throw Error(ErrorKind::Timeout, "no reply from " + config_.base_url + " within " +
                                            std::to_string(config_.request_timeout_s) + " s");
      }
      if (attempt < config_.max_retries) continue;
      throw Error(ErrorKind::EndpointError, "request to " + config_.base_url + " failed: " + httplib::to_string(res.error()));
    }
    bool retryable = res->status == 429 || res->status >= 500;
    if (retryable && attempt < config_.max_retries) continue;
    if (res->status != 200) {
      throw Error(ErrorKind::EndpointError, "HTTP " + std::to_string(res->status) + " from " + config_.base_url + ": " +
                                                res->body.substr(0, 200));
    }
    break;
  }

  json reply;
  try {
    reply = json::parse(res->body);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::EndpointError, std::string("response is not JSON: ") + e.what());
  }
  const auto& choices = reply.value("choices", json::array());
  if (!choices.is_array() || choices.empty() || !choices[0].contains("message") ||
      !choices[0]["message"].value("content", json()).is_string()) {
    throw Error(ErrorKind::EndpointError, "response lacks choices[0].message.content");
  }

  ChatReply out;
  out.text = choices[0]["message"]["content"].get<std::string>();
  UsageRecord& usage = out.usage;
  const auto& u = reply.value("usage", json::object());
  if (u.contains("prompt_tokens") && u.contains("completion_tokens")) {
    usage.input_tokens = u["prompt_tokens"].get<std::int64_t>();
    usage.output_tokens = u["completion_tokens"].get<std::int64_t>();
  } else {
    usage.usage_estimated = true;
    for (const auto& m : messages) usage.input_tokens += static_cast<std::int64_t>(count_tokens(m.content));
    usage.output_tokens = static_cast<std::int64_t>(count_tokens(out.text));
  }
  usage.cost_micro_usd = token_cost_micro_usd(usage.input_tokens, config_.price_per_1k_input) +
                         token_cost_micro_usd(usage.output_tokens, config_.price_per_1k_output);
  usage.latency_s = elapsed();
  ledger_.append(usage);
  return out;
}

}  // namespace skillmoo
