#pragma once

#include <condition_variable>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace skillmoo {

struct ModelConfig {
  std::string base_url;  // e.g. https://api.example.com/v1
  std::string model_name;
  std::string api_key;
  double price_per_1k_input = 0.0;   // USD
  double price_per_1k_output = 0.0;  // USD
  double request_timeout_s = 900.0;
  int max_retries = 2;
  int max_in_flight = 4;

  void validate() const;

  /// Fills base_url and api_key from SKILLMOO_BASE_URL / SKILLMOO_API_KEY
  /// when they are not already set.
  void apply_environment();
};

/// Whole micro-dollars for `tokens` at a per-1k-token price, rounded half up.
std::int64_t token_cost_micro_usd(std::int64_t tokens, double price_per_1k);

struct UsageRecord {
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;
  std::int64_t cost_micro_usd = 0;
  double latency_s = 0.0;
  bool usage_estimated = false;  // response had no usage block

  double cost_usd() const { return static_cast<double>(cost_micro_usd) / 1e6; }
};

/// Append-only, thread-safe record of model calls.
class UsageLedger {
public:
  void append(const UsageRecord& record);
  std::vector<UsageRecord> records() const;
  std::int64_t total_micro_usd() const;
  double total_cost_usd() const { return static_cast<double>(total_micro_usd()) / 1e6; }

private:
  mutable std::mutex mu_;
  std::vector<UsageRecord> records_;
  std::int64_t total_micro_ = 0;
};

struct ChatMessage {
  std::string role;
  std::string content;
};

struct ChatReply {
  std::string text;
  UsageRecord usage;
};

/// Chat-completions client: POST {base_url}/chat/completions.
class ChatClient {
public:
  explicit ChatClient(ModelConfig config);

  ChatReply chat(const std::vector<ChatMessage>& messages);

  const ModelConfig& config() const { return config_; }
  const UsageLedger& ledger() const { return ledger_; }

private:
  ModelConfig config_;
  UsageLedger ledger_;
  std::mutex slots_mu_;
  std::condition_variable slots_cv_;
  int in_flight_ = 0;
};

}  // namespace skillmoo
