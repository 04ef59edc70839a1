#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "topicrag/io.hpp"

namespace topicrag {

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{100};
  double backoff_multiplier = 2.0;
  std::chrono::seconds timeout{30};
};

// POSTs a JSON body to an http:// URL and returns the parsed JSON reply.
// Connection failures, 429 and 5xx replies are retried with exponential
// backoff and finally raised as TransportError. Other non-2xx statuses and
// unparseable bodies raise ProtocolError. A nonempty TOPICRAG_API_KEY is sent
// as a bearer token.
Json post_json(const std::string& url, const Json& body, const RetryPolicy& retry = {});

struct GenerationRequest {
  std::string prompt;
  int max_tokens = 512;
};

// Text generator behind the wire contract
//   request  {"prompt": str, "max_tokens": int}
//   response {"text": str}
// Used for the generator, the relevance filter, the MCQ model and the judge.
class GenerationClient {
 public:
  virtual ~GenerationClient() = default;
  virtual std::string generate(const GenerationRequest& request) = 0;
  virtual std::string id() const = 0;
};

class HttpGenerationClient : public GenerationClient {
 public:
  explicit HttpGenerationClient(std::string url, RetryPolicy retry = {});
  std::string generate(const GenerationRequest& request) override;
  std::string id() const override { return url_; }

 private:
  std::string url_;
  RetryPolicy retry_;
};

class FunctionClient : public GenerationClient {
 public:
  using Fn = std::function<std::string(const GenerationRequest&)>;
  FunctionClient(Fn fn, std::string id = "function") : fn_(std::move(fn)), id_(std::move(id)) {}
  std::string generate(const GenerationRequest& request) override { return fn_(request); }
  std::string id() const override { return id_; }

 private:
  Fn fn_;
  std::string id_;
};

// Replays a fixed list of replies in call order, wrapping around at the end.
class ScriptedClient : public GenerationClient {
 public:
  explicit ScriptedClient(std::vector<std::string> replies, std::string id = "scripted");
  std::string generate(const GenerationRequest& request) override;
  std::string id() const override { return id_; }
  std::size_t calls() const noexcept { return calls_.load(); }

 private:
  std::vector<std::string> replies_;
  std::string id_;
  std::atomic<std::size_t> calls_{0};
};

// Builds a client from a short spec string:
//   http://host:port/path   HTTP client
//   echo                    returns the prompt unchanged
//   constant:<text>         always returns <text>
//   scripted:<file>         JSON array of replies, replayed in order
std::unique_ptr<GenerationClient> make_client(const std::string& spec, const RetryPolicy& retry = {});

}  // namespace topicrag
