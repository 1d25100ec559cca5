#include "uq/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "uq/estimators.hpp"
#include "uq/rng.hpp"

namespace uq::eval {

namespace {

struct Scored {
  double score;
  bool correct;
};

std::vector<Scored> scored(std::span<const EvalRecord> records, std::string_view quantifier) {
  std::vector<Scored> out;
  out.reserve(records.size());
  for (const auto& r : records)
    if (auto s = confidence(r, quantifier)) out.push_back({*s, r.correct});
  return out;
}

void split(const std::vector<Scored>& s, std::vector<double>& pos, std::vector<double>& neg) {
  for (const auto& x : s) (x.correct ? pos : neg).push_back(x.score);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

void to_json(json& j, const CurvePoint& v) {
  j = json{{"coverage", v.coverage}, {"precision", v.precision}, {"threshold", v.threshold}};
}

void to_json(json& j, const ClassifierReport& v) {
  j = json{{"recall", v.recall}, {"precision", v.precision}, {"accuracy", v.accuracy}, {"f1", v.f1},
           {"tp", v.tp},         {"fp", v.fp},               {"tn", v.tn},             {"fn", v.fn}};
}

std::optional<double> confidence(const EvalRecord& record, std::string_view quantifier) {
  auto it = record.scores.find(std::string(quantifier));
  if (it == record.scores.end() || !it->second) return std::nullopt;
  const double v = *it->second;
  if (!std::isfinite(v)) throw Error("record '" + record.prompt_id + "' has a non-finite " +
                                     std::string(quantifier) + " score");
  return higher_is_confident(quantifier) ? v : -v;
}

std::optional<double> auroc_from_scores(std::span<const double> correct, std::span<const double> incorrect) {
  if (correct.empty() || incorrect.empty()) return std::nullopt;
  struct Item {
    double score;
    bool pos;
  };
  std::vector<Item> all;
  all.reserve(correct.size() + incorrect.size());
  for (double s : correct) all.push_back({s, true});
  for (double s : incorrect) all.push_back({s, false});
  std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.score < b.score; });
  // Midranks are multiples of 0.5, so doubling keeps the sum integral.
  long double twice_rank_sum = 0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) ++j;
    const long double twice_mid = static_cast<long double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (all[k].pos) twice_rank_sum += twice_mid;
    i = j;
  }
  const long double n1 = static_cast<long double>(correct.size());
  const long double n0 = static_cast<long double>(incorrect.size());
  const long double u = twice_rank_sum / 2 - n1 * (n1 + 1) / 2;
  return static_cast<double>(u / (n1 * n0));
}

std::optional<double> roc_trapezoid_area(std::span<const double> correct, std::span<const double> incorrect) {
  if (correct.empty() || incorrect.empty()) return std::nullopt;
  std::vector<double> pos(correct.begin(), correct.end()), neg(incorrect.begin(), incorrect.end());
  std::sort(pos.begin(), pos.end(), std::greater<>());
  std::sort(neg.begin(), neg.end(), std::greater<>());
  std::size_t ip = 0, in = 0;
  long double area = 0;  // accumulated in units of one (pos, neg) cell
  while (ip < pos.size() || in < neg.size()) {
    double t = -INFINITY;
    if (ip < pos.size()) t = pos[ip];
    if (in < neg.size()) t = std::max(t, neg[in]);
    std::size_t dp = 0, dn = 0;
    while (ip < pos.size() && pos[ip] == t) ++ip, ++dp;
    while (in < neg.size() && neg[in] == t) ++in, ++dn;
    // Step from (fp_prev, tp_prev) to (fp_prev + dn, tp_prev + dp).
    const long double tp_prev = static_cast<long double>(ip - dp);
    area += static_cast<long double>(dn) * (tp_prev + static_cast<long double>(dp) / 2);
  }
  return static_cast<double>(area / (static_cast<long double>(pos.size()) * static_cast<long double>(neg.size())));
}

std::optional<double> auroc(std::span<const EvalRecord> records, std::string_view quantifier) {
  std::vector<double> pos, neg;
  split(scored(records, quantifier), pos, neg);
  return auroc_from_scores(pos, neg);
}

std::vector<CurvePoint> precision_coverage_curve(std::span<const EvalRecord> records,
                                                 std::string_view quantifier) {
  if (records.empty()) throw Error("precision-coverage curve needs at least one record");
  auto s = scored(records, quantifier);
  std::sort(s.begin(), s.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });
  std::vector<CurvePoint> out;
  const double total = static_cast<double>(s.size());
  std::size_t accepted = 0, hits = 0;
  for (std::size_t i = 0; i < s.size();) {
    const double t = s[i].score;
    while (i < s.size() && s[i].score == t) {
      ++accepted;
      if (s[i].correct) ++hits;
      ++i;
    }
    out.push_back({static_cast<double>(accepted) / total,
                   static_cast<double>(hits) / static_cast<double>(accepted), t});
  }
  return out;
}

void to_json(json& j, const BootstrapResult& v) {
  json values = json::array();
  for (const auto& x : v.values) values.push_back(opt(x));
  j = json{{"subset_size", v.subset_size}, {"repetitions", v.repetitions},
           {"with_replacement", v.with_replacement}, {"mean", opt(v.mean)},
           {"stddev", opt(v.stddev)}, {"undefined", v.undefined}, {"values", std::move(values)}};
}

BootstrapResult bootstrap_auroc(std::span<const EvalRecord> records, std::string_view quantifier,
                                std::size_t subset_size, int repetitions, std::uint64_t seed,
                                bool with_replacement) {
  const auto s = scored(records, quantifier);
  if (subset_size == 0) throw Error("bootstrap subset size must be positive");
  if (!with_replacement && subset_size > s.size())
    throw Error("bootstrap subset size " + std::to_string(subset_size) + " exceeds the " +
                std::to_string(s.size()) + " records scored by " + std::string(quantifier));
  if (s.empty()) throw Error("no records scored by " + std::string(quantifier));
  if (repetitions < 1) throw Error("bootstrap repetitions must be positive");

  BootstrapResult out;
  out.subset_size = subset_size;
  out.repetitions = repetitions;
  out.with_replacement = with_replacement;
  std::vector<double> defined;
  for (int r = 0; r < repetitions; ++r) {
    SeededRng rng(sub_seed(seed, "bootstrap/" + std::to_string(r)));
    std::vector<std::size_t> pick;
    if (with_replacement) {
      for (std::size_t i = 0; i < subset_size; ++i) pick.push_back(rng.uniform_index(s.size()));
    } else {
      pick = rng.choose(s.size(), subset_size);
    }
    std::vector<double> pos, neg;
    for (std::size_t i : pick) (s[i].correct ? pos : neg).push_back(s[i].score);
    auto a = auroc_from_scores(pos, neg);
    out.values.push_back(a);
    if (a) defined.push_back(*a);
    else ++out.undefined;
  }
  if (!defined.empty()) {
    const double n = static_cast<double>(defined.size());
    const double mean = std::accumulate(defined.begin(), defined.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : defined) ss += (v - mean) * (v - mean);
    out.mean = mean;
    out.stddev = defined.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  }
  return out;
}

ClassifierReport classifier_metrics(const std::vector<bool>& predicted, const std::vector<bool>& gold) {
  if (predicted.size() != gold.size())
    throw Error("classifier_metrics: " + std::to_string(predicted.size()) + " predictions for " +
                std::to_string(gold.size()) + " gold labels");
  ClassifierReport r;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (predicted[i] && gold[i]) ++r.tp;
    else if (predicted[i] && !gold[i]) ++r.fp;
    else if (!predicted[i] && gold[i]) ++r.fn;
    else ++r.tn;
  }
  auto ratio = [](int a, int b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); };
  r.precision = ratio(r.tp, r.tp + r.fp);
  r.recall = ratio(r.tp, r.tp + r.fn);
  r.accuracy = ratio(r.tp + r.tn, r.tp + r.tn + r.fp + r.fn);
  r.f1 = r.precision + r.recall == 0.0 ? 0.0 : 2.0 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

std::optional<Sample> probar_aware_decode(const SampleSet& sample_set, std::span<const Verdict> verdicts,
                                          std::uint64_t seed) {
  if (verdicts.size() != sample_set.samples.size())
    throw Error("'" + sample_set.prompt_id + "': " + std::to_string(verdicts.size()) + " verdicts for " +
                std::to_string(sample_set.samples.size()) + " samples");
  std::vector<std::size_t> adequate;
  for (std::size_t i = 0; i < verdicts.size(); ++i)
    if (verdicts[i].value == VerdictValue::Adequate) adequate.push_back(i);
  if (adequate.empty()) return std::nullopt;
  SeededRng rng(seed);
  return sample_set.samples[adequate[rng.uniform_index(adequate.size())]];
}

void to_json(json& j, const DecodePrecision& v) {
  json runs = json::array();
  for (const auto& x : v.per_run) runs.push_back(opt(x));
  j = json{{"mean", opt(v.mean)}, {"per_run", std::move(runs)}, {"null_runs", v.null_runs}};
}

DecodePrecision decode_precision(std::span<const PromptInstance> instances, std::span<const SampleSet> sample_sets,
                                 std::span<const VerdictList> verdicts, const CorrectnessFn& correct, int runs,
                                 std::uint64_t seed) {
  if (instances.size() != sample_sets.size() || instances.size() != verdicts.size())
    throw Error("decode_precision: instances, sample sets and verdicts are not aligned");
  if (runs < 1) throw Error("decode_precision needs at least one run");
  DecodePrecision out;
  // Extended precision so that equal per-run precisions average back to
  // exactly the same double.
  long double sum = 0.0L;
  int defined = 0;
  for (int r = 0; r < runs; ++r) {
    const std::uint64_t run_seed = sub_seed(seed, "run/" + std::to_string(r));
    int decoded = 0, hits = 0;
    for (std::size_t p = 0; p < instances.size(); ++p) {
      auto pick = probar_aware_decode(sample_sets[p], verdicts[p].verdicts, sub_seed(run_seed, instances[p].id));
      if (!pick) continue;
      ++decoded;
      if (correct(instances[p], pick->text)) ++hits;
    }
    if (decoded == 0) {
      out.per_run.push_back(std::nullopt);
      ++out.null_runs;
      continue;
    }
    const double precision = static_cast<double>(hits) / static_cast<double>(decoded);
    out.per_run.push_back(precision);
    sum += precision;
    ++defined;
  }
  if (defined > 0) out.mean = static_cast<double>(sum / defined);
  return out;
}

void to_json(json& j, const BootstrapSpec& v) {
  j = json{{"subset_size", v.subset_size}, {"repetitions", v.repetitions}};
}

void from_json(const json& j, BootstrapSpec& v) {
  v.subset_size = j.at("subset_size").get<std::size_t>();
  v.repetitions = j.at("repetitions").get<int>();
}

std::vector<std::string> quantifier_names(std::span<const EvalRecord> records) {
  std::vector<std::string> out;
  for (const auto& r : records)
    for (const auto& [name, _] : r.scores)
      if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
  return out;
}

json build_report(std::span<const EvalRecord> records, const ReportOptions& options) {
  const auto names = options.quantifiers.empty() ? quantifier_names(records) : options.quantifiers;
  json quantifiers = json::object();
  std::size_t n_correct = 0;
  for (const auto& r : records) n_correct += r.correct ? 1 : 0;
  for (const auto& q : names) {
    const auto s = scored(records, q);
    json entry;
    entry["auroc"] = opt(auroc(records, q));
    entry["scored"] = s.size();
    entry["absent"] = records.size() - s.size();
    json curve = json::array();
    if (!s.empty())
      for (const auto& p : precision_coverage_curve(records, q)) curve.push_back(p);
    entry["curve"] = std::move(curve);
    json boots = json::array();
    for (const auto& b : options.bootstrap) {
      if (!options.with_replacement && b.subset_size > s.size()) {
        boots.push_back({{"subset_size", b.subset_size},
                         {"repetitions", b.repetitions},
                         {"skipped", "only " + std::to_string(s.size()) + " records carry a score"}});
        continue;
      }
      if (s.empty()) continue;
      boots.push_back(bootstrap_auroc(records, q, b.subset_size, b.repetitions,
                                      sub_seed(options.seed, q + "/" + std::to_string(b.subset_size)),
                                      options.with_replacement));
    }
    entry["bootstrap"] = std::move(boots);
    quantifiers[q] = std::move(entry);
  }
  return json{{"records", records.size()},
              {"correct", n_correct},
              {"accuracy", records.empty() ? json(nullptr)
                                           : json(static_cast<double>(n_correct) / static_cast<double>(records.size()))},
              {"quantifiers", std::move(quantifiers)}};
}

void export_csv(const json& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [q, entry] : report.at("quantifiers").items()) {
    std::string curve = "threshold,coverage,precision\n";
    for (const auto& p : entry.at("curve"))
      curve += fmt(p.at("threshold").get<double>()) + "," + fmt(p.at("coverage").get<double>()) + "," +
               fmt(p.at("precision").get<double>()) + "\n";
    write_text_atomic(dir / (q + ".csv"), curve);
    for (const auto& b : entry.at("bootstrap")) {
      if (!b.contains("values")) continue;
      std::string rows = "repetition,auroc\n";
      std::size_t i = 0;
      for (const auto& v : b.at("values")) rows += std::to_string(i++) + "," + (v.is_null() ? "" : fmt(v.get<double>())) + "\n";
      write_text_atomic(dir / (q + "_bootstrap_" + std::to_string(b.at("subset_size").get<std::size_t>()) + ".csv"),
                        rows);
    }
  }
}

}  // namespace uq::eval
