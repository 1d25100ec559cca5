#include <doctest.h>

#include "testkit.hpp"

using namespace uq;

TEST_CASE("trim and split") {
  CHECK(trim("  a b \t\n") == "a b");
  CHECK(trim(" \n ") == "");
  CHECK(split_whitespace("  a  b\tc\n") == std::vector<std::string>{"a", "b", "c"});
  CHECK(to_lower("AbC") == "abc");
}

TEST_CASE("empirical distribution groups trim-equal texts, keeps case") {
  std::vector<std::string> t{"Paris", " Paris ", "paris", "Lyon"};
  auto d = empirical_distribution(t);
  REQUIRE(d.size() == 3);
  CHECK(d[0].text == "Paris");
  CHECK(d[0].count == 2);
  CHECK(d[0].probability == doctest::Approx(0.5));
  CHECK(d[1].text == "paris");
  CHECK(d[2].count == 1);
  CHECK_THROWS_AS(empirical_distribution(std::span<const std::string>{}), Error);
}

TEST_CASE("instance validation per task") {
  PromptInstance p{"x", TaskKind::RCQA, std::nullopt, {}, "q?", {"a"}, std::nullopt, ""};
  CHECK_THROWS_AS(p.validate(), Error);
  p.context = "ctx";
  CHECK_NOTHROW(p.validate());
  p.task = TaskKind::KBQA;
  p.question.reset();
  CHECK_THROWS_AS(p.validate(), Error);
}

TEST_CASE("sample and params validation") {
  Sample s{"", 0, std::nullopt, FinishReason::length};
  CHECK_THROWS_AS(s.validate(), Error);
  s.finish_reason = FinishReason::stop_token;
  CHECK_NOTHROW(s.validate());
  GenerationParams g;
  g.mode = DecodeMode::greedy;
  g.n = 3;
  CHECK_THROWS_AS(g.validate(), Error);
  g.n = 1;
  CHECK_NOTHROW(g.validate());
}

TEST_CASE("drawn prediction must be among samples") {
  SampleSet set;
  set.prompt_id = "p";
  set.samples = {Sample{"a", 1, std::nullopt, FinishReason::stop_token}};
  set.prediction = Sample{"b", 1, std::nullopt, FinishReason::stop_token};
  set.prediction_source = PredictionSource::drawn_sample;
  CHECK_THROWS_AS(set.validate(), Error);
  set.prediction_source = PredictionSource::greedy;
  CHECK_NOTHROW(set.validate());
}

TEST_CASE("truncation keeps prefix and recomputes J") {
  ClusterPartition p{"p", {0, 1, 0, 2}, 3};
  auto t = p.truncated(3);
  CHECK(t.assignments == std::vector<int>{0, 1, 0});
  CHECK(t.J == 2);
  CHECK(p.truncated(1).J == 1);
  CHECK_THROWS_AS(p.truncated(5), Error);
  CHECK(p.cluster_sizes() == std::vector<int>{2, 1, 1});
  ClusterPartition bad{"p", {0, 2}, 3};
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("JSON round trips") {
  PromptInstance p{"id", TaskKind::RCQA, "ctx", {{"q1", "a1"}}, "q", {"r"}, true, "prompt"};
  CHECK(json(p).get<PromptInstance>() == p);

  SampleSet set;
  set.prompt_id = "id";
  set.samples = {Sample{"x", 2, -1.5, FinishReason::length}};
  set.prediction = set.samples[0];
  set.generation_params.n = 1;
  CHECK(json(set).get<SampleSet>() == set);

  EvalRecord r{"id", {{"E", 0.25}, {"PAdequate", std::nullopt}}, true, CorrectnessSource::rouge_l};
  const json j = r;
  CHECK(j["scores"]["PAdequate"].is_null());
  CHECK(j.get<EvalRecord>() == r);

  VerdictList v{"id", {{VerdictValue::Dismissed, "True or False"}}};
  CHECK(json(v).get<VerdictList>() == v);
}

TEST_CASE("jsonl write and read") {
  testkit::TempDir dir;
  std::vector<Verdict> rows{{VerdictValue::Adequate, "True"}, {VerdictValue::Inadequate, "False"}};
  save_jsonl(dir.path() / "v.jsonl", rows);
  CHECK(load_jsonl<Verdict>(dir.path() / "v.jsonl") == rows);
  CHECK_THROWS_AS(read_text(dir.path() / "missing"), Error);
}
