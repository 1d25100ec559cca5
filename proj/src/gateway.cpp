#include "uq/gateway.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "uq/hash.hpp"

namespace uq {

namespace {

constexpr const char* kCompletionsPath = "/v1/completions";
constexpr const char* kChatPath = "/v1/chat/completions";
constexpr const char* kNliPath = "/v1/nli";

bool retryable(int status) { return status == 429 || status >= 500; }

std::string snippet(const std::string& body) {
  return body.size() > 200 ? body.substr(0, 200) + "..." : body;
}

struct TokenDetail {
  std::vector<std::string> tokens;
  std::vector<std::optional<double>> logprobs;
  std::vector<std::int64_t> offsets;  // empty when the endpoint omits them
};

std::optional<TokenDetail> token_detail(const json& choice) {
  auto lp = choice.find("logprobs");
  if (lp == choice.end() || lp->is_null()) return std::nullopt;
  TokenDetail d;
  if (lp->contains("content") && (*lp)["content"].is_array()) {  // chat shape
    for (const auto& t : (*lp)["content"]) {
      d.tokens.push_back(t.value("token", std::string{}));
      d.logprobs.push_back(t.contains("logprob") && t["logprob"].is_number()
                               ? std::optional<double>(t["logprob"].get<double>())
                               : std::nullopt);
    }
    return d;
  }
  if (!lp->contains("tokens") || !lp->contains("token_logprobs")) return std::nullopt;
  for (const auto& t : (*lp)["tokens"]) d.tokens.push_back(t.get<std::string>());
  for (const auto& v : (*lp)["token_logprobs"])
    d.logprobs.push_back(v.is_number() ? std::optional<double>(v.get<double>()) : std::nullopt);
  if (lp->contains("text_offset") && (*lp)["text_offset"].is_array())
    for (const auto& o : (*lp)["text_offset"]) d.offsets.push_back(o.get<std::int64_t>());
  if (d.tokens.size() != d.logprobs.size()) return std::nullopt;
  return d;
}

const json& first_choice(const json& response) {
  auto it = response.find("choices");
  if (it == response.end() || !it->is_array() || it->empty())
    throw GatewayError("endpoint returned an empty choice list");
  return it->front();
}

json parse_body(const std::string& raw) {
  try {
    return json::parse(raw);
  } catch (const json::exception& e) {
    throw GatewayError(std::string("malformed endpoint response: ") + e.what());
  }
}

}  // namespace

// ---- config ----------------------------------------------------------------

void EndpointConfig::validate() const {
  if (base_url.empty()) throw Error("endpoint base_url is empty");
  if (max_in_flight < 1) throw Error("max_in_flight must be >= 1");
  if (max_retries < 0) throw Error("max_retries must be >= 0");
}

void to_json(json& j, const EndpointConfig& v) {
  j = json{{"base_url", v.base_url},
           {"model_name", v.model_name},
           {"api_key_env", v.api_key_env},
           {"max_in_flight", v.max_in_flight},
           {"timeout_ms", v.timeout.count()},
           {"max_retries", v.max_retries},
           {"api", v.api},
           {"backoff_ms", v.backoff_base.count()},
           {"server_side_stop", v.server_side_stop}};
}

void from_json(const json& j, EndpointConfig& v) {
  v.base_url = j.at("base_url").get<std::string>();
  v.model_name = j.value("model_name", std::string{});
  v.api_key_env = j.value("api_key_env", std::string{});
  v.max_in_flight = j.value("max_in_flight", 4);
  v.timeout = std::chrono::milliseconds(j.value("timeout_ms", std::int64_t{60000}));
  v.max_retries = j.value("max_retries", 3);
  v.api = j.value("api", ApiKind::completions);
  v.backoff_base = std::chrono::milliseconds(j.value("backoff_ms", std::int64_t{500}));
  v.server_side_stop = j.value("server_side_stop", false);
}

// ---- cache -----------------------------------------------------------------

CacheKey CacheKey::of(std::string_view model_name, std::string_view path, const json& body,
                      int ordinal) {
  std::string material;
  material.append(model_name).push_back('\0');
  material.append(path).push_back('\0');
  material.append(body.dump()).push_back('\0');
  material.append(std::to_string(ordinal));
  return CacheKey{sha256_hex(material)};
}

ResponseCache::ResponseCache(std::filesystem::path file) : file_(std::move(file)) {
  if (!std::filesystem::exists(file_)) return;
  std::ifstream in(file_, std::ios::binary);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      auto row = json::parse(line);
      index_.try_emplace(row.at("key").get<std::string>(), row.at("response").get<std::string>());
    } catch (const json::exception&) {
      // A torn trailing line from an interrupted run.
      spdlog::warn("cache {}: skipping unreadable line {}", file_.string(), lineno);
    }
  }
}

std::shared_ptr<ResponseCache> ResponseCache::open(const std::filesystem::path& file) {
  static std::mutex registry_mu;
  static std::map<std::string, std::weak_ptr<ResponseCache>> registry;
  std::filesystem::create_directories(file.parent_path().empty() ? "." : file.parent_path());
  const std::string id = std::filesystem::weakly_canonical(file).string();
  std::lock_guard lock(registry_mu);
  if (auto existing = registry[id].lock()) return existing;
  auto cache = std::make_shared<ResponseCache>(file);
  registry[id] = cache;
  return cache;
}

std::optional<std::string> ResponseCache::get(const CacheKey& key) const {
  std::lock_guard lock(mu_);
  auto it = index_.find(key.digest);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

bool ResponseCache::put(const CacheKey& key, const std::string& response) {
  std::lock_guard lock(mu_);
  if (index_.contains(key.digest)) return false;
  if (file_.has_parent_path()) std::filesystem::create_directories(file_.parent_path());
  std::ofstream out(file_, std::ios::binary | std::ios::app);
  if (!out) throw Error("cannot append to cache " + file_.string());
  out << json{{"key", key.digest}, {"response", response}}.dump() << '\n';
  out.flush();
  index_.emplace(key.digest, response);
  return true;
}

std::size_t ResponseCache::size() const {
  std::lock_guard lock(mu_);
  return index_.size();
}

std::string cache_file_stem(std::string_view model_name) {
  std::string out;
  for (char c : model_name) {
    bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_';
    out.push_back(ok ? c : '_');
  }
  return out.empty() ? "default" : out;
}

// ---- gateway ---------------------------------------------------------------

Gateway::Gateway(EndpointConfig config, std::shared_ptr<ResponseCache> cache,
                 std::unique_ptr<Transport> transport)
    : config_(std::move(config)), cache_(std::move(cache)), transport_(std::move(transport)) {
  config_.validate();
  if (!cache_) throw Error("gateway requires a response cache");
  if (!transport_) transport_ = make_http_transport(config_);
}

std::shared_ptr<Gateway> Gateway::open(const EndpointConfig& config,
                                       const std::filesystem::path& cache_dir) {
  auto file = cache_dir / (cache_file_stem(config.model_name) + ".jsonl");
  return std::make_shared<Gateway>(config, ResponseCache::open(file));
}

GatewayStats Gateway::stats() const {
  std::lock_guard lock(mu_);
  return stats_;
}

std::string Gateway::request(const std::string& path, const json& body, int ordinal) {
  const CacheKey key = CacheKey::of(config_.model_name, path, body, ordinal);
  if (auto hit = cache_->get(key)) {
    std::lock_guard lock(mu_);
    ++stats_.cache_hits;
    return *hit;
  }

  std::promise<std::string> promise;
  {
    std::unique_lock lock(mu_);
    if (auto it = pending_.find(key.digest); it != pending_.end()) {
      auto fut = it->second;
      lock.unlock();
      return fut.get();
    }
    if (auto hit = cache_->get(key)) {
      ++stats_.cache_hits;
      return *hit;
    }
    pending_.emplace(key.digest, promise.get_future().share());
  }

  try {
    std::string response = fetch(path, body, ordinal);
    cache_->put(key, response);
    promise.set_value(response);
    std::lock_guard lock(mu_);
    pending_.erase(key.digest);
    return response;
  } catch (...) {
    promise.set_exception(std::current_exception());
    std::lock_guard lock(mu_);
    pending_.erase(key.digest);
    throw;
  }
}

std::string Gateway::fetch(const std::string& path, const json& body, int ordinal) {
  std::map<std::string, std::string> headers{{"Content-Type", "application/json"},
                                             {"X-Request-Ordinal", std::to_string(ordinal)}};
  if (!config_.api_key_env.empty()) {
    if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key)
      headers["Authorization"] = std::string("Bearer ") + key;
  }
  const std::string payload = body.dump();

  std::string last_error;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) {
      auto delay = config_.backoff_base * (1LL << std::min(attempt - 1, 20));
      std::this_thread::sleep_for(delay);
      std::lock_guard lock(mu_);
      ++stats_.retries;
    }
    {
      std::unique_lock lock(mu_);
      slot_cv_.wait(lock, [&] { return in_flight_ < config_.max_in_flight; });
      ++in_flight_;
      ++stats_.network_calls;
      stats_.max_in_flight_observed = std::max(stats_.max_in_flight_observed, in_flight_);
    }
    auto release = [&] {
      {
        std::lock_guard lock(mu_);
        --in_flight_;
      }
      slot_cv_.notify_one();
    };

    HttpResponse resp;
    try {
      resp = transport_->post(path, payload, headers);
    } catch (const TransportFailure& e) {
      release();
      last_error = e.what();
      continue;
    } catch (...) {
      release();
      throw;
    }
    release();

    if (resp.status >= 200 && resp.status < 300) {
      parse_body(resp.body);  // reject garbage before it reaches the cache
      return resp.body;
    }
    last_error = "HTTP " + std::to_string(resp.status) + ": " + snippet(resp.body);
    if (!retryable(resp.status)) throw GatewayError(path + ": " + last_error);
  }
  throw GatewayError(path + ": giving up after " + std::to_string(config_.max_retries) +
                     " retries: " + last_error);
}

std::size_t find_stop(std::string_view text, const std::vector<std::string>& stops) {
  std::size_t best = std::string_view::npos;
  for (const auto& s : stops) {
    if (s.empty()) continue;
    best = std::min(best, text.find(s));
  }
  return best;
}

Sample Gateway::generate(const std::string& prompt, const GenerationParams& params, int ordinal) {
  params.validate();
  if (params.n != 1) throw Error("generate expects n = 1");
  if (config_.api == ApiKind::nli) throw UnsupportedCapability("NLI endpoints cannot generate");

  const bool greedy = params.mode == DecodeMode::greedy;
  json body{{"model", config_.model_name},
            {"max_tokens", params.max_tokens},
            {"temperature", greedy ? 0.0 : 1.0},
            {"top_p", 1.0},
            {"n", 1}};
  if (params.seed) body["seed"] = *params.seed;
  if (config_.server_side_stop && !params.stop_sequences.empty())
    body["stop"] = params.stop_sequences;
  std::string path;
  if (config_.api == ApiKind::chat) {
    body["messages"] = json::array({json{{"role", "user"}, {"content", prompt}}});
    path = kChatPath;
  } else {
    body["prompt"] = prompt;
    path = kCompletionsPath;
  }

  const json response = parse_body(request(path, body, greedy ? 0 : ordinal));
  const json& choice = first_choice(response);
  std::string raw;
  if (choice.contains("text") && choice["text"].is_string()) {
    raw = choice["text"].get<std::string>();
  } else if (choice.contains("message") && choice["message"].contains("content") &&
             choice["message"]["content"].is_string()) {
    raw = choice["message"]["content"].get<std::string>();
  }
  const std::string server_finish = choice.value("finish_reason", std::string{});

  Sample out;
  std::size_t keep = raw.size();
  if (std::size_t cut = find_stop(raw, params.stop_sequences); cut != std::string::npos) {
    keep = cut;
    out.finish_reason = FinishReason::stop_token;
  } else {
    out.finish_reason = server_finish == "length" ? FinishReason::length : FinishReason::stop_token;
  }
  out.text = raw.substr(0, keep);

  if (auto detail = token_detail(choice)) {
    std::size_t pos = 0;
    double sum = 0.0;
    bool complete = true;
    std::int64_t count = 0;
    for (std::size_t i = 0; i < detail->tokens.size() && pos < keep; ++i) {
      ++count;
      pos += detail->tokens[i].size();
      if (detail->logprobs[i]) sum += *detail->logprobs[i];
      else complete = false;
    }
    out.token_count = count;
    if (complete) out.cumulative_logprob = sum;
  } else if (response.contains("usage") && response["usage"].contains("completion_tokens")) {
    // Endpoint-reported count; an upper bound when the text was cut client-side.
    out.token_count = response["usage"]["completion_tokens"].get<std::int64_t>();
  }
  if (out.text.empty() && out.finish_reason != FinishReason::stop_token)
    out.finish_reason = FinishReason::stop_token;
  return out;
}

std::vector<Sample> Gateway::sample_n(const std::string& prompt, const GenerationParams& params,
                                      int n) {
  if (params.mode != DecodeMode::unbiased) throw Error("sample_n requires unbiased mode");
  if (n < 1) throw Error("sample_n requires n >= 1");
  GenerationParams single = params;
  single.n = 1;
  std::vector<std::future<Sample>> futures;
  futures.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    futures.push_back(std::async(std::launch::async,
                                 [this, &prompt, single, i] { return generate(prompt, single, i); }));
  std::vector<Sample> out;
  out.reserve(futures.size());
  std::optional<std::string> failure;
  for (int i = 0; i < n; ++i) {
    try {
      out.push_back(futures[static_cast<std::size_t>(i)].get());
    } catch (const std::exception& e) {
      if (!failure) failure = "sample ordinal " + std::to_string(i) + ": " + e.what();
    }
  }
  if (failure) throw GatewayError(*failure);
  return out;
}

std::vector<double> Gateway::option_logprobs(const std::string& prompt,
                                             const std::vector<std::string>& options) {
  if (options.empty()) throw Error("option_logprobs requires at least one option");
  if (config_.api != ApiKind::completions)
    throw UnsupportedCapability("option logprobs require a completions endpoint with echo");

  std::vector<double> out;
  for (const auto& option : options) {
    if (option.empty()) throw Error("option tokenizes to zero tokens");
    const std::string full = prompt + option;
    json body{{"model", config_.model_name}, {"prompt", full}, {"max_tokens", 1},
              {"temperature", 0.0},          {"logprobs", 1},  {"echo", true}};
    const json response = parse_body(request(kCompletionsPath, body, 0));
    const json& choice = first_choice(response);
    auto detail = token_detail(choice);
    if (!detail) throw UnsupportedCapability("endpoint returned no per-token logprobs");

    const auto begin = static_cast<std::int64_t>(prompt.size());
    const auto end = static_cast<std::int64_t>(full.size());
    std::int64_t pos = 0;
    double sum = 0.0;
    int used = 0;
    for (std::size_t i = 0; i < detail->tokens.size(); ++i) {
      std::int64_t start = detail->offsets.empty() ? pos : detail->offsets[i];
      std::int64_t stop = start + static_cast<std::int64_t>(detail->tokens[i].size());
      pos = stop;
      if (start >= end || stop <= begin) continue;
      if (!detail->logprobs[i]) throw UnsupportedCapability("option token has no logprob");
      sum += *detail->logprobs[i];
      ++used;
    }
    if (used == 0) throw Error("option '" + option + "' tokenizes to zero tokens");
    out.push_back(sum);
  }
  return out;
}

NliProbs Gateway::nli(const std::string& premise, const std::string& hypothesis) {
  if (config_.api != ApiKind::nli) throw UnsupportedCapability("endpoint is not an NLI classifier");
  json body{{"model", config_.model_name}, {"premise", premise}, {"hypothesis", hypothesis}};
  const json response = parse_body(request(kNliPath, body, 0));
  NliProbs p;
  try {
    p.entail = response.at("entail").get<double>();
    p.neutral = response.at("neutral").get<double>();
    p.contradict = response.at("contradict").get<double>();
  } catch (const json::exception& e) {
    throw GatewayError(std::string("malformed NLI response: ") + e.what());
  }
  if (!std::isfinite(p.entail) || !std::isfinite(p.neutral) || !std::isfinite(p.contradict))
    throw GatewayError("NLI response has non-finite probabilities");
  return p;
}

}  // namespace uq
