#include <algorithm>
#include <cmath>
#include <regex>
#include <thread>

#include "apohf/service.hpp"

// After Eigen: resolv.h, pulled in here, defines a macro named _res.
#include <httplib.h>

namespace apohf {

namespace {

struct Endpoint {
  std::string origin;
  std::string path;
};

Endpoint split_url(const std::string& url) {
  static const std::regex pattern(R"((https?://[^/]+)(/.*)?)");
  std::smatch m;
  if (!std::regex_match(url, m, pattern)) throw EmbeddingError("invalid embedding url: " + url);
  return {m[1].str(), m[2].matched ? m[2].str() : std::string("/")};
}

std::vector<Vector> parse_embeddings(const std::string& body, std::size_t expected) {
  const nlohmann::json j = nlohmann::json::parse(body);
  const nlohmann::json& rows = j.at("embeddings");
  if (!rows.is_array() || rows.size() != expected) {
    throw EmbeddingError("expected " + std::to_string(expected) + " embeddings");
  }
  std::vector<Vector> out;
  out.reserve(expected);
  for (const auto& row : rows) {
    if (!row.is_array() || row.empty()) throw EmbeddingError("embedding must be a non-empty array");
    Vector v(static_cast<Eigen::Index>(row.size()));
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (!row[i].is_number()) throw EmbeddingError("embedding entries must be numbers");
      v(static_cast<Eigen::Index>(i)) = row[i].get<double>();
      if (!std::isfinite(v(static_cast<Eigen::Index>(i)))) {
        throw EmbeddingError("non-finite embedding entry");
      }
    }
    if (!out.empty() && v.size() != out.front().size()) {
      throw EmbeddingError("inconsistent embedding dimensions: " +
                           std::to_string(out.front().size()) + " vs " +
                           std::to_string(v.size()));
    }
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace

std::vector<Vector> fetch_embeddings(const EmbeddingClientConfig& config,
                                     const std::vector<std::string>& texts) {
  if (texts.empty()) return {};
  if (config.max_attempts < 1) throw EmbeddingError("max_attempts must be >= 1");
  const Endpoint ep = split_url(config.url);
  httplib::Client client(ep.origin);
  client.set_connection_timeout(config.timeout);
  client.set_read_timeout(config.timeout);
  const std::string body = nlohmann::json{{"texts", texts}}.dump();

  auto backoff = config.initial_backoff;
  std::string last_error;
  for (int attempt = 1; attempt <= config.max_attempts; ++attempt) {
    auto res = client.Post(ep.path, body, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
    } else if (res->status >= 500) {
      last_error = "server error " + std::to_string(res->status);
    } else if (res->status != 200) {
      throw EmbeddingError("embedding request rejected with status " +
                           std::to_string(res->status));
    } else {
      try {
        return parse_embeddings(res->body, texts.size());
      } catch (const nlohmann::json::exception& e) {
        throw EmbeddingError(std::string("malformed embedding response: ") + e.what());
      }
    }
    if (attempt < config.max_attempts) {
      std::this_thread::sleep_for(backoff);
      backoff = std::min(config.max_backoff,
                         std::chrono::milliseconds(static_cast<long long>(
                             static_cast<double>(backoff.count()) * config.backoff_factor)));
    }
  }
  throw EmbeddingError("embedding request failed after " + std::to_string(config.max_attempts) +
                       " attempts: " + last_error);
}

}  // namespace apohf
