#include <doctest.h>

#include <cmath>

#include "uq/eval.hpp"
#include "uq/rng.hpp"

#include "testkit.hpp"

using namespace uq;
using namespace uq::eval;

namespace {

EvalRecord rec(std::string id, bool correct, std::map<std::string, std::optional<double>> scores) {
  return EvalRecord{std::move(id), std::move(scores), correct, CorrectnessSource::exact_match};
}

SampleSet set_of(const std::string& id, std::vector<std::string> texts) {
  SampleSet s;
  s.prompt_id = id;
  for (auto& t : texts) s.samples.push_back(Sample{t, 1, std::nullopt, FinishReason::stop_token});
  s.prediction = s.samples.front();
  s.generation_params.n = static_cast<int>(s.samples.size());
  return s;
}

}  // namespace

TEST_CASE("AUROC hand example, with ties, and orientation") {
  std::vector<double> pos{0.9, 0.4}, neg{0.6, 0.2};
  CHECK(*auroc_from_scores(pos, neg) == doctest::Approx(0.75));
  CHECK(*roc_trapezoid_area(pos, neg) == doctest::Approx(0.75));
  std::vector<double> tp{0.5, 0.5}, tn{0.5};
  CHECK(*auroc_from_scores(tp, tn) == doctest::Approx(0.5));
  CHECK_FALSE(auroc_from_scores(pos, {}).has_value());

  std::vector<EvalRecord> rs{rec("a", true, {{"SE", 0.1}}), rec("b", false, {{"SE", 1.2}}),
                             rec("c", true, {{"SE", std::nullopt}})};
  CHECK(*auroc(rs, "SE") == doctest::Approx(1.0));
  CHECK(confidence(rs[0], "SE") == std::optional<double>(-0.1));
  CHECK_FALSE(confidence(rs[2], "SE").has_value());
  CHECK_FALSE(confidence(rs[0], "ProbAR").has_value());
}

TEST_CASE("precision-coverage curve groups ties") {
  std::vector<EvalRecord> rs{rec("a", true, {{"ProbAR", 0.9}}), rec("b", false, {{"ProbAR", 0.6}}),
                             rec("c", true, {{"ProbAR", 0.4}})};
  auto c = precision_coverage_curve(rs, "ProbAR");
  REQUIRE(c.size() == 3);
  CHECK(c[0].coverage == doctest::Approx(1.0 / 3));
  CHECK(c[0].precision == 1.0);
  CHECK(c[1].coverage == doctest::Approx(2.0 / 3));
  CHECK(c[1].precision == 0.5);
  CHECK(c[2].coverage == 1.0);
  CHECK(c[2].precision == doctest::Approx(2.0 / 3));

  rs[2].scores["ProbAR"] = 0.6;
  auto tied = precision_coverage_curve(rs, "ProbAR");
  REQUIRE(tied.size() == 2);
  CHECK(tied[1].coverage == 1.0);
  CHECK_THROWS_AS(precision_coverage_curve(std::span<const EvalRecord>{}, "ProbAR"), Error);
}

TEST_CASE("bootstrap is seeded and respects subset limits") {
  std::vector<EvalRecord> rs;
  SeededRng rng(4);
  for (int i = 0; i < 30; ++i) rs.push_back(rec("p" + std::to_string(i), i % 3 != 0, {{"ProbAR", rng.uniform_real()}}));
  auto a = bootstrap_auroc(rs, "ProbAR", 10, 25, 99);
  auto b = bootstrap_auroc(rs, "ProbAR", 10, 25, 99);
  CHECK(a.values == b.values);
  CHECK(a.values.size() == 25);
  REQUIRE(a.mean.has_value());
  double sum = 0;
  int n = 0;
  for (const auto& v : a.values)
    if (v) {
      sum += *v;
      ++n;
    }
  CHECK(*a.mean == doctest::Approx(sum / n));
  CHECK(n + a.undefined == 25);
  CHECK_THROWS_AS(bootstrap_auroc(rs, "ProbAR", 31, 5, 1), Error);
  CHECK_NOTHROW(bootstrap_auroc(rs, "ProbAR", 31, 5, 1, true));
  auto full = bootstrap_auroc(rs, "ProbAR", 30, 3, 1);
  for (const auto& v : full.values) CHECK(*v == doctest::Approx(*auroc(rs, "ProbAR")));
  CHECK(*full.stddev == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("classifier metrics") {
  std::vector<bool> pred{true, true, true, true, false, false, false, false, false, true};
  std::vector<bool> gold{true, true, true, false, true, true, false, false, false, true};
  auto m = classifier_metrics(pred, gold);
  CHECK(m.tp == 4);
  CHECK(m.fp == 1);
  CHECK(m.fn == 2);
  CHECK(m.tn == 3);
  CHECK(m.precision == doctest::Approx(0.8));
  CHECK(m.recall == doctest::Approx(4.0 / 6));
  CHECK(m.accuracy == doctest::Approx(0.7));
  CHECK_THROWS_AS(classifier_metrics({true}, {}), Error);
}

TEST_CASE("ProbAR-aware decoding picks only adequate samples, abstains otherwise") {
  auto s = set_of("p", {"a", "b", "c"});
  std::vector<Verdict> v{{VerdictValue::Inadequate, ""}, {VerdictValue::Adequate, ""}, {VerdictValue::Dismissed, ""}};
  for (std::uint64_t seed = 0; seed < 20; ++seed) CHECK(probar_aware_decode(s, v, seed)->text == "b");
  std::vector<Verdict> none{{VerdictValue::Inadequate, ""}, {VerdictValue::Dismissed, ""}, {VerdictValue::Dismissed, ""}};
  CHECK_FALSE(probar_aware_decode(s, none, 1).has_value());
  CHECK_THROWS_AS(probar_aware_decode(s, std::span<const Verdict>(v).first(2), 1), Error);
}

TEST_CASE("report is deterministic and CSVs are written") {
  std::vector<EvalRecord> rs;
  for (int i = 0; i < 12; ++i)
    rs.push_back(rec("p" + std::to_string(i), i % 2 == 0, {{"E", 0.1 * i}, {"ProbAR", i % 3 / 3.0}}));
  ReportOptions o{{"E", "ProbAR"}, {{5, 4}, {50, 4}}, false, 17};
  const json a = build_report(rs, o), b = build_report(rs, o);
  CHECK(a.dump() == b.dump());
  CHECK(a["records"] == 12);
  CHECK(a["quantifiers"]["E"]["bootstrap"][1].contains("skipped"));
  CHECK(a["quantifiers"]["E"]["auroc"].get<double>() == doctest::Approx(*auroc(rs, "E")));
  testkit::TempDir dir;
  export_csv(a, dir.path());
  CHECK(std::filesystem::exists(dir.path() / "E.csv"));
  CHECK(std::filesystem::exists(dir.path() / "ProbAR_bootstrap_5.csv"));
  CHECK(read_text(dir.path() / "E.csv").starts_with("threshold,coverage,precision\n"));
  CHECK(quantifier_names(rs) == std::vector<std::string>{"E", "ProbAR"});
}
