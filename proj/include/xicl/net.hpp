#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>

#include <httplib.h>
#include <json.hpp>

#include "xicl/aligner.hpp"
#include "xicl/embedding.hpp"
#include "xicl/errors.hpp"
#include "xicl/inference.hpp"
#include "xicl/util.hpp"

namespace xicl {

struct HttpResult {
  int status = 0;
  std::string body;
};

/// Minimal transport seam so tests can count or fail requests.
class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  virtual HttpResult post_json(const std::string& path,
                               const std::string& body) = 0;
  std::int64_t request_count() const { return requests_.load(); }

 protected:
  std::atomic<std::int64_t> requests_{0};
};

class HttplibTransport final : public HttpTransport {
 public:
  HttplibTransport(std::string host, int port, int timeout_ms = 5000)
      : host_(std::move(host)), port_(port), timeout_ms_(timeout_ms) {}

  HttpResult post_json(const std::string& path,
                       const std::string& body) override {
    ++requests_;
    httplib::Client client(host_, port_);
    client.set_connection_timeout(0, timeout_ms_ * 1000);
    client.set_read_timeout(timeout_ms_ / 1000, (timeout_ms_ % 1000) * 1000);
    auto res = client.Post(path, body, "application/json");
    if (!res)
      throw TransportError("POST " + path + " to " + host_ + ":" +
                           std::to_string(port_) + " failed: " +
                           httplib::to_string(res.error()));
    return {res->status, res->body};
  }

 private:
  std::string host_;
  int port_;
  int timeout_ms_;
};

/// Transport that refuses to talk; offline runs use it so that any cache
/// miss fails loudly instead of reaching the network.
class DisabledTransport final : public HttpTransport {
 public:
  HttpResult post_json(const std::string& path, const std::string&) override {
    ++requests_;
    throw TransportError("network disabled (offline mode), cannot POST " +
                         path);
  }
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds backoff{25};
};

/// POSTs with retries; throws TransportError carrying the attempt count
/// once they are exhausted, ProtocolError on non-2xx or non-JSON replies.
inline nlohmann::json post_json_with_retry(HttpTransport& transport,
                                           const std::string& path,
                                           const nlohmann::json& request,
                                           const RetryPolicy& policy) {
  const std::string body = request.dump();
  std::string last_error;
  for (int attempt = 1; attempt <= policy.max_attempts; ++attempt) {
    try {
      HttpResult res = transport.post_json(path, body);
      if (res.status < 200 || res.status >= 300)
        throw ProtocolError("POST " + path + " returned status " +
                            std::to_string(res.status));
      try {
        return nlohmann::json::parse(res.body);
      } catch (const nlohmann::json::exception& e) {
        throw ProtocolError("POST " + path +
                            " returned invalid JSON: " + e.what());
      }
    } catch (const TransportError& e) {
      last_error = e.what();
      if (attempt < policy.max_attempts)
        std::this_thread::sleep_for(policy.backoff * attempt);
    }
  }
  throw TransportError("POST " + path + " failed after " +
                           std::to_string(policy.max_attempts) +
                           " attempts: " + last_error,
                       policy.max_attempts);
}

/// Request-digest to response cache backing offline replay. Entries are
/// written through to the backing file as they arrive; loading tolerates
/// any line order. Thread-safe.
class ReplayCache {
 public:
  ReplayCache() = default;

  static std::shared_ptr<ReplayCache> open(const std::filesystem::path& path) {
    auto cache = std::make_shared<ReplayCache>();
    cache->path_ = path;
    if (std::filesystem::exists(path)) {
      std::ifstream in(path);
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        cache->entries_[j.at("digest").get<std::string>()] = j.at("response");
      }
    }
    return cache;
  }

  static std::string digest(std::string_view kind,
                            const nlohmann::json& request) {
    // json::dump() emits object keys sorted, so the digest is canonical.
    std::string payload = std::string(kind) + "\n" + request.dump();
    return to_hex(fnv1a64(payload)) + to_hex(fnv1a64(payload, 0x9ae16a3b2f90404fULL));
  }

  std::optional<nlohmann::json> lookup(const std::string& digest) const {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(digest);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  void insert(std::string_view kind, const std::string& digest,
              const nlohmann::json& response) {
    std::lock_guard lock(mutex_);
    if (!entries_.emplace(digest, response).second) return;
    if (path_.empty()) return;
    std::ofstream out(path_, std::ios::app);
    nlohmann::ordered_json line;
    line["kind"] = std::string(kind);
    line["digest"] = digest;
    line["response"] = response;
    out << line.dump() << '\n';
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
  }

 private:
  mutable std::mutex mutex_;
  std::map<std::string, nlohmann::json> entries_;
  std::filesystem::path path_;
};

namespace detail {

// Cache-first request path shared by the three endpoint clients.
inline nlohmann::json cached_post(HttpTransport* transport,
                                  const std::shared_ptr<ReplayCache>& cache,
                                  const std::string& path,
                                  const nlohmann::json& request,
                                  const RetryPolicy& policy,
                                  std::string_view kind) {
  std::string digest;
  if (cache) {
    digest = ReplayCache::digest(kind, request);
    if (auto hit = cache->lookup(digest)) return *hit;
  }
  if (!transport)
    throw TransportError("offline cache miss for " + path +
                         " request (digest " + digest + ")");
  auto response = post_json_with_retry(*transport, path, request, policy);
  if (cache) cache->insert(kind, digest, response);
  return response;
}

}  // namespace detail

/// Embedding endpoint client: POST /embed {"texts": [...]} ->
/// {"vectors": [[...]]}.
class HttpEmbedder final : public EmbeddingProvider {
 public:
  HttpEmbedder(std::shared_ptr<HttpTransport> transport, RetryPolicy policy,
               std::shared_ptr<ReplayCache> cache = nullptr,
               std::string fingerprint = "embed-endpoint/v1")
      : transport_(std::move(transport)),
        policy_(policy),
        cache_(std::move(cache)),
        fingerprint_(std::move(fingerprint)) {}

  std::vector<Vector> embed(const std::vector<std::string>& texts) override {
    if (texts.empty()) return {};
    nlohmann::json request = {{"texts", texts}};
    auto response = detail::cached_post(transport_.get(), cache_, "/embed",
                                        request, policy_, "embed");
    if (!response.contains("vectors"))
      throw ProtocolError("embed response missing 'vectors'");
    std::vector<Vector> out;
    for (const auto& vj : response.at("vectors")) {
      Vector v;
      v.reserve(vj.size());
      for (const auto& c : vj) v.push_back(c.get<float>());
      out.push_back(std::move(v));
    }
    if (out.size() != texts.size())
      throw ProtocolError("embed response has " + std::to_string(out.size()) +
                          " vectors for " + std::to_string(texts.size()) +
                          " texts");
    return out;
  }

  std::string fingerprint() const override { return fingerprint_; }

 private:
  std::shared_ptr<HttpTransport> transport_;
  RetryPolicy policy_;
  std::shared_ptr<ReplayCache> cache_;
  std::string fingerprint_;
};

/// Scorer endpoint client: POST /score {"prompt": ..., "candidates": [...]}
/// -> {"log_probs": [...], "model": ...}.
class HttpScorer final : public ScorerClient {
 public:
  HttpScorer(std::shared_ptr<HttpTransport> transport, RetryPolicy policy,
             std::shared_ptr<ReplayCache> cache = nullptr)
      : transport_(std::move(transport)),
        policy_(policy),
        cache_(std::move(cache)) {}

  ScoreResponse score(const ScoreRequest& request) override {
    request.validate();
    auto response =
        detail::cached_post(transport_.get(), cache_, "/score",
                            request.to_json(), policy_, "score");
    if (!response.contains("log_probs"))
      throw ProtocolError("score response missing 'log_probs'");
    ScoreResponse out;
    for (const auto& lp : response.at("log_probs"))
      out.log_probs.push_back(lp.get<double>());
    out.scorer_fingerprint = response.value("model", std::string("unknown"));
    validate_response(request, out);
    return out;
  }

  std::string fingerprint() const override { return "score-endpoint/v1"; }

 private:
  std::shared_ptr<HttpTransport> transport_;
  RetryPolicy policy_;
  std::shared_ptr<ReplayCache> cache_;
};

/// Span-fill endpoint client: POST /spanfill {"text": ..., "mask_token":
/// ...} -> {"span": ...}.
class HttpSpanFill final : public SpanFillClient {
 public:
  HttpSpanFill(std::shared_ptr<HttpTransport> transport, RetryPolicy policy,
               std::shared_ptr<ReplayCache> cache = nullptr)
      : transport_(std::move(transport)),
        policy_(policy),
        cache_(std::move(cache)) {}

  std::string fill(const std::string& text,
                   const std::string& mask_token) override {
    nlohmann::json request = {{"text", text}, {"mask_token", mask_token}};
    auto response = detail::cached_post(transport_.get(), cache_, "/spanfill",
                                        request, policy_, "spanfill");
    if (!response.contains("span"))
      throw ProtocolError("spanfill response missing 'span'");
    return response.at("span").get<std::string>();
  }

  std::string fingerprint() const override { return "spanfill-endpoint/v1"; }

 private:
  std::shared_ptr<HttpTransport> transport_;
  RetryPolicy policy_;
  std::shared_ptr<ReplayCache> cache_;
};

}  // namespace xicl
