#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "uq/core.hpp"

namespace uq {

/// Which request shape an endpoint speaks.
enum class ApiKind { completions, chat, nli };

NLOHMANN_JSON_SERIALIZE_ENUM(ApiKind, {{ApiKind::completions, "completions"},
                                       {ApiKind::chat, "chat"},
                                       {ApiKind::nli, "nli"}})

struct EndpointConfig {
  std::string base_url;
  std::string model_name;
  /// Name of the environment variable holding the API key; empty for none.
  std::string api_key_env;
  int max_in_flight = 4;
  std::chrono::milliseconds timeout{60000};
  int max_retries = 3;
  ApiKind api = ApiKind::completions;
  std::chrono::milliseconds backoff_base{500};
  /// Also forward stop sequences to the server. Truncation is always applied
  /// client-side on decoded text regardless.
  bool server_side_stop = false;

  void validate() const;
  bool operator==(const EndpointConfig&) const = default;
};

void to_json(json& j, const EndpointConfig& v);
void from_json(const json& j, EndpointConfig& v);

struct CacheKey {
  std::string digest;

  /// Hash over the model, request path, canonical request body and ordinal.
  static CacheKey of(std::string_view model_name, std::string_view path,
                     const json& body, int ordinal);
  bool operator==(const CacheKey&) const = default;
};

/// Append-only JSONL store of raw response bodies, indexed in memory.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path file);

  /// Process-wide instance for a file, so each file has a single writer.
  static std::shared_ptr<ResponseCache> open(const std::filesystem::path& file);

  std::optional<std::string> get(const CacheKey& key) const;
  /// Returns false (and writes nothing) when the key is already present.
  bool put(const CacheKey& key, const std::string& response);
  std::size_t size() const;
  const std::filesystem::path& file() const { return file_; }

 private:
  std::filesystem::path file_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, std::string> index_;
};

struct HttpResponse {
  int status = 0;
  std::string body;
};

/// Raised by transports for connection-level failures (always retryable).
class TransportFailure : public Error {
 public:
  using Error::Error;
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResponse post(const std::string& path, const std::string& body,
                            const std::map<std::string, std::string>& headers) = 0;
};

std::unique_ptr<Transport> make_http_transport(const EndpointConfig& config);

struct NliProbs {
  double entail = 0.0;
  double neutral = 0.0;
  double contradict = 0.0;
};

struct GatewayStats {
  std::uint64_t network_calls = 0;
  std::uint64_t cache_hits = 0;
  std::uint64_t retries = 0;
  int max_in_flight_observed = 0;
};

/// The single path to model services. Thread-safe; share one instance per
/// endpoint across workers.
class Gateway {
 public:
  Gateway(EndpointConfig config, std::shared_ptr<ResponseCache> cache,
          std::unique_ptr<Transport> transport = nullptr);

  /// Uses <cache_dir>/<model>.jsonl as the response cache.
  static std::shared_ptr<Gateway> open(const EndpointConfig& config,
                                       const std::filesystem::path& cache_dir);

  /// One completion. `ordinal` distinguishes repeated unbiased draws.
  Sample generate(const std::string& prompt, const GenerationParams& params, int ordinal = 0);

  /// n unbiased samples in ordinal order; each ordinal is cached separately.
  std::vector<Sample> sample_n(const std::string& prompt, const GenerationParams& params, int n);

  /// Natural-log probability of each option continuing the prompt.
  std::vector<double> option_logprobs(const std::string& prompt,
                                      const std::vector<std::string>& options);

  NliProbs nli(const std::string& premise, const std::string& hypothesis);

  GatewayStats stats() const;
  const EndpointConfig& config() const { return config_; }

 private:
  std::string request(const std::string& path, const json& body, int ordinal);
  std::string fetch(const std::string& path, const json& body, int ordinal);

  EndpointConfig config_;
  std::shared_ptr<ResponseCache> cache_;
  std::unique_ptr<Transport> transport_;

  mutable std::mutex mu_;
  std::condition_variable slot_cv_;
  int in_flight_ = 0;
  GatewayStats stats_;
  std::unordered_map<std::string, std::shared_future<std::string>> pending_;
};

/// Cuts `text` at the earliest occurrence of any stop sequence.
/// Returns the cut position, or npos when none occurs.
std::size_t find_stop(std::string_view text, const std::vector<std::string>& stops);

/// Filesystem-safe form of a model name for cache file names.
std::string cache_file_stem(std::string_view model_name);

}  // namespace uq
