#include "topicrag/client.hpp"

#include <cmath>
#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "topicrag/error.hpp"

namespace topicrag {

namespace {

struct ParsedUrl {
  std::string origin;  // scheme://host:port
  std::string path;
};

ParsedUrl split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos || url.compare(0, scheme, "http") != 0) {
    throw ConfigError("unsupported endpoint '" + url + "' (expected http://host:port/path)");
  }
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

}  // namespace

Json post_json(const std::string& url, const Json& body, const RetryPolicy& retry) {
  const ParsedUrl target = split_url(url);
  const std::string payload = body.dump(-1, ' ', false, Json::error_handler_t::replace);
  auto backoff = retry.initial_backoff;
  std::string last_error;
  for (int attempt = 1; attempt <= std::max(1, retry.max_attempts); ++attempt) {
    httplib::Client cli(target.origin);
    cli.set_connection_timeout(retry.timeout);
    cli.set_read_timeout(retry.timeout);
    if (const char* key = std::getenv("TOPICRAG_API_KEY"); key != nullptr && *key != '\0') {
      cli.set_bearer_token_auth(key);
    }
    auto res = cli.Post(target.path, payload, "application/json");
    if (!res) {
      last_error = "request to " + url + " failed: " + httplib::to_string(res.error());
    } else if (res->status == 429 || res->status >= 500) {
      last_error = url + " replied HTTP " + std::to_string(res->status);
    } else if (res->status < 200 || res->status >= 300) {
      throw ProtocolError(url + " replied HTTP " + std::to_string(res->status) + ": " + res->body);
    } else {
      try {
        return Json::parse(res->body);
      } catch (const Json::parse_error& e) {
        throw ProtocolError(url + " returned a non-JSON body: " + e.what());
      }
    }
    if (attempt < retry.max_attempts) {
      std::this_thread::sleep_for(backoff);
      backoff = std::chrono::milliseconds(
          static_cast<long long>(std::llround(static_cast<double>(backoff.count()) * retry.backoff_multiplier)));
    }
  }
  throw TransportError(last_error + " (after " + std::to_string(retry.max_attempts) + " attempts)");
}

HttpGenerationClient::HttpGenerationClient(std::string url, RetryPolicy retry)
    : url_(std::move(url)), retry_(retry) {
  split_url(url_);
}

std::string HttpGenerationClient::generate(const GenerationRequest& request) {
  const Json reply = post_json(url_, {{"prompt", request.prompt}, {"max_tokens", request.max_tokens}}, retry_);
  if (!reply.is_object() || !reply.contains("text") || !reply["text"].is_string()) {
    throw ProtocolError("generator reply lacks a string \"text\" field: " + reply.dump());
  }
  return reply["text"].get<std::string>();
}

ScriptedClient::ScriptedClient(std::vector<std::string> replies, std::string id)
    : replies_(std::move(replies)), id_(std::move(id)) {
  if (replies_.empty()) throw ConfigError("scripted client needs at least one reply");
}

std::string ScriptedClient::generate(const GenerationRequest&) {
  const std::size_t n = calls_.fetch_add(1);
  return replies_[n % replies_.size()];
}

std::unique_ptr<GenerationClient> make_client(const std::string& spec, const RetryPolicy& retry) {
  if (spec.rfind("http://", 0) == 0 || spec.rfind("https://", 0) == 0) {
    return std::make_unique<HttpGenerationClient>(spec, retry);
  }
  if (spec == "echo") {
    return std::make_unique<FunctionClient>([](const GenerationRequest& r) { return r.prompt; }, "echo");
  }
  if (spec.rfind("constant:", 0) == 0) {
    std::string text = spec.substr(9);
    return std::make_unique<FunctionClient>([text](const GenerationRequest&) { return text; }, spec);
  }
  if (spec.rfind("scripted:", 0) == 0) {
    const Json doc = Json::parse(read_file(spec.substr(9)));
    return std::make_unique<ScriptedClient>(doc.get<std::vector<std::string>>(), spec);
  }
  throw ConfigError("unknown client spec '" + spec + "'");
}

}  // namespace topicrag
