#include <doctest.h>

#include <set>

#include "testkit.hpp"

using namespace uq;
using testkit::ScriptedEndpoint;
using testkit::TempDir;

namespace {

GenerationParams unbiased(std::vector<std::string> stops = {}) {
  GenerationParams p;
  p.mode = DecodeMode::unbiased;
  p.max_tokens = 16;
  p.stop_sequences = std::move(stops);
  return p;
}

GenerationParams greedy() {
  GenerationParams p = unbiased();
  p.mode = DecodeMode::greedy;
  return p;
}

}  // namespace

TEST_CASE("cache key covers model, path, body and ordinal") {
  const json body{{"prompt", "x"}};
  const auto k = CacheKey::of("m", "/v1/completions", body, 0);
  CHECK(k == CacheKey::of("m", "/v1/completions", body, 0));
  CHECK_FALSE(k == CacheKey::of("m2", "/v1/completions", body, 0));
  CHECK_FALSE(k == CacheKey::of("m", "/v1/chat/completions", body, 0));
  CHECK_FALSE(k == CacheKey::of("m", "/v1/completions", json{{"prompt", "y"}}, 0));
  CHECK_FALSE(k == CacheKey::of("m", "/v1/completions", body, 1));
}

TEST_CASE("response cache persists and never overwrites") {
  TempDir dir;
  const auto file = dir.path() / "c.jsonl";
  {
    ResponseCache c(file);
    CHECK(c.put(CacheKey{"k"}, "first"));
    CHECK_FALSE(c.put(CacheKey{"k"}, "second"));
  }
  ResponseCache again(file);
  CHECK(again.size() == 1);
  CHECK(again.get(CacheKey{"k"}) == std::optional<std::string>("first"));
}

TEST_CASE("stop sequences are applied client-side") {
  CHECK(find_stop("abc\nQ:", {"\n"}) == 3);
  CHECK(find_stop("abc", {"\n", ""}) == std::string::npos);
  CHECK(find_stop("a.b\nc", {"\n", "."}) == 1);

  ScriptedEndpoint ep;
  ep.complete("prompt", " Paris\nQuestion: more", std::nullopt, "length");
  TempDir dir;
  auto gw = Gateway::open(ep.endpoint("m"), dir.path());
  const Sample s = gw->generate("prompt", unbiased({"\n"}), 0);
  CHECK(s.text == " Paris");
  CHECK(s.finish_reason == FinishReason::stop_token);
  const Sample raw = gw->generate("prompt", unbiased(), 1);
  CHECK(raw.finish_reason == FinishReason::length);
  // Stops are not forwarded unless asked.
  for (const auto& c : ep.calls()) CHECK_FALSE(c.body.contains("stop"));
}

TEST_CASE("greedy uses temperature 0 and ordinal 0; unbiased temperature 1") {
  ScriptedEndpoint ep;
  ep.complete("p", "x");
  TempDir dir;
  auto gw = Gateway::open(ep.endpoint("m"), dir.path());
  gw->generate("p", greedy(), 7);
  gw->generate("p", unbiased(), 3);
  auto calls = ep.calls();
  REQUIRE(calls.size() == 2);
  CHECK(calls[0].body["temperature"].get<double>() == 0.0);
  CHECK(calls[0].ordinal == 0);
  CHECK(calls[1].body["temperature"].get<double>() == 1.0);
  CHECK(calls[1].ordinal == 3);
}

TEST_CASE("sample_n caches per ordinal and resumes") {
  ScriptedEndpoint ep;
  ep.complete_with([](const std::string&, int ordinal) { return "s" + std::to_string(ordinal); });
  TempDir dir;
  auto gw = Gateway::open(ep.endpoint("m"), dir.path());
  auto three = gw->sample_n("p", unbiased(), 3);
  CHECK(ep.call_count() == 3);
  auto five = gw->sample_n("p", unbiased(), 5);
  CHECK(ep.call_count() == 5);
  REQUIRE(five.size() == 5);
  for (int i = 0; i < 5; ++i) CHECK(five[static_cast<std::size_t>(i)].text == "s" + std::to_string(i));
  CHECK(std::vector<Sample>(five.begin(), five.begin() + 3) == three);
  CHECK(gw->stats().cache_hits == 3);

  // A fresh gateway over the same cache directory makes no calls.
  auto again = Gateway::open(ep.endpoint("m"), dir.path());
  CHECK(again->sample_n("p", unbiased(), 5) == five);
  CHECK(ep.call_count() == 5);
  CHECK(again->stats().network_calls == 0);
}

TEST_CASE("in-flight requests never exceed max_in_flight") {
  ScriptedEndpoint ep;
  ep.set_latency(std::chrono::milliseconds(20));
  ep.complete_with([](const std::string&, int ordinal) { return std::to_string(ordinal); });
  TempDir dir;
  auto gw = Gateway::open(ep.endpoint("m", ApiKind::completions, 3), dir.path());
  gw->sample_n("p", unbiased(), 12);
  CHECK(ep.max_concurrency() <= 3);
  CHECK(gw->stats().max_in_flight_observed <= 3);
  CHECK(ep.max_concurrency() >= 2);
}

TEST_CASE("retries on 5xx and 429, fails fast on other 4xx") {
  ScriptedEndpoint ep;
  ep.complete("p", "ok");
  TempDir dir;
  auto gw = Gateway::open(ep.endpoint("m"), dir.path());

  ep.fail_next(503, 2);
  CHECK(gw->generate("p", greedy()).text == "ok");
  CHECK(gw->stats().retries == 2);

  ep.fail_next(429, 1);
  CHECK(gw->generate("p", unbiased(), 1).text == "ok");

  ep.fail_next(401, 1);
  ep.reset_log();
  CHECK_THROWS_AS(gw->generate("p", unbiased(), 2), GatewayError);
  CHECK(ep.call_count() == 1);

  ep.fail_next(500, 10);
  CHECK_THROWS_AS(gw->generate("p", unbiased(), 3), GatewayError);
  ep.fail_next(500, 0);
}

TEST_CASE("failed requests are not cached") {
  ScriptedEndpoint ep;
  ep.complete("p", "ok");
  TempDir dir;
  auto gw = Gateway::open(ep.endpoint("m"), dir.path());
  ep.fail_next(400, 1);
  CHECK_THROWS_AS(gw->generate("p", greedy()), GatewayError);
  CHECK(gw->generate("p", greedy()).text == "ok");
}

TEST_CASE("chat endpoints use the messages shape") {
  ScriptedEndpoint ep;
  ep.complete("hello", "True");
  TempDir dir;
  auto gw = Gateway::open(ep.endpoint("m", ApiKind::chat), dir.path());
  CHECK(gw->generate("hello", greedy()).text == "True");
  CHECK(ep.calls().front().path == "/v1/chat/completions");
  CHECK_THROWS_AS(gw->option_logprobs("x", {" (A)"}), UnsupportedCapability);
}

TEST_CASE("option logprobs from echoed prompts") {
  ScriptedEndpoint ep;
  ep.options("Pick", {{" (A)", -0.1}, {" (B)", -3.0}});
  ep.options_without_logprobs("Bare");
  TempDir dir;
  auto gw = Gateway::open(ep.endpoint("m"), dir.path());
  const auto lp = gw->option_logprobs("Pick:", {" (A)", " (B)"});
  REQUIRE(lp.size() == 2);
  CHECK(lp[0] == doctest::Approx(-0.1));
  CHECK(lp[1] == doctest::Approx(-3.0));
  for (const auto& c : ep.calls()) CHECK(c.echo);
  CHECK_THROWS_AS(gw->option_logprobs("Bare:", {" (A)"}), UnsupportedCapability);
}

TEST_CASE("NLI endpoint") {
  ScriptedEndpoint ep;
  ep.nli([](const std::string& p, const std::string& h) -> std::optional<NliProbs> {
    return p == h ? NliProbs{0.9, 0.05, 0.05} : NliProbs{0.1, 0.2, 0.7};
  });
  TempDir dir;
  auto gw = Gateway::open(ep.endpoint("nli", ApiKind::nli), dir.path());
  CHECK(gw->nli("a", "a").entail == doctest::Approx(0.9));
  CHECK(gw->nli("a", "b").contradict == doctest::Approx(0.7));
  CHECK_THROWS_AS(gw->generate("a", greedy()), UnsupportedCapability);
}

TEST_CASE("cache file names are filesystem safe") {
  const auto stem = cache_file_stem("org/model:7b");
  CHECK(stem.find('/') == std::string::npos);
  CHECK(stem.find(':') == std::string::npos);
  CHECK(cache_file_stem("org/model:7b") == stem);
}
