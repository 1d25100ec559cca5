// uq: command-line front end for the uncertainty-quantification pipeline.
#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <iostream>

#include "uq/clustering.hpp"
#include "uq/estimators.hpp"
#include "uq/eval.hpp"
#include "uq/pipeline.hpp"
#include "uq/rng.hpp"

namespace fs = std::filesystem;
using namespace uq;

namespace {

judges::JudgeSpec load_spec(const std::string& path) {
  return json::parse(read_text(path)).get<judges::JudgeSpec>();
}

EndpointConfig load_endpoint(const std::string& path) { return json::parse(read_text(path)).get<EndpointConfig>(); }

template <typename T>
std::vector<T> by_order(const std::vector<T>& rows, std::span<const SampleSet> samples, const char* what) {
  std::map<std::string, const T*> index;
  for (const auto& r : rows) index[r.prompt_id] = &r;
  std::vector<T> out;
  for (const auto& s : samples) {
    auto it = index.find(s.prompt_id);
    if (it == index.end()) throw Error(std::string("no ") + what + " for prompt '" + s.prompt_id + "'");
    out.push_back(*it->second);
  }
  return out;
}

std::vector<PromptInstance> instances_for(const std::string& path, std::span<const SampleSet> samples) {
  const auto all = load_jsonl<PromptInstance>(path);
  std::map<std::string, const PromptInstance*> index;
  for (const auto& i : all) index[i.id] = &i;
  std::vector<PromptInstance> out;
  for (const auto& s : samples) {
    auto it = index.find(s.prompt_id);
    if (it == index.end()) throw Error("no instance for prompt '" + s.prompt_id + "'");
    out.push_back(*it->second);
  }
  return out;
}

void apply_in_flight(EndpointConfig& e, int v) {
  if (v > 0) e.max_in_flight = v;
}

void apply_in_flight(judges::JudgeSpec& s, int v) {
  if (v <= 0) return;
  if (s.endpoint) s.endpoint->max_in_flight = v;
  if (s.declarative_endpoint) s.declarative_endpoint->max_in_flight = v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Per-prompt reliability estimation and selective-prediction evaluation"};
  app.require_subcommand(1);
  int max_in_flight = 0;
  bool verbose = false;
  app.add_option("--max-in-flight", max_in_flight, "Override max_in_flight on every endpoint")
      ->check(CLI::PositiveNumber);
  app.add_flag("-v,--verbose", verbose, "Log stage progress");

  // run
  auto* run = app.add_subcommand("run", "Run the staged pipeline from a config file");
  std::string config_path;
  run->add_option("--config", config_path, "Run config JSON")->required()->check(CLI::ExistingFile);

  // tasks build
  auto* tasks_cmd = app.add_subcommand("tasks", "Dataset ingestion");
  tasks_cmd->require_subcommand(1);
  auto* build = tasks_cmd->add_subcommand("build", "Build PromptInstance JSONL from a dataset");
  pipeline::DatasetSpec dataset;
  std::string split = "test", filter = "ambiguous", build_out, templates_dir;
  std::uint64_t seed = 0;
  build->add_option("--dataset", dataset.name, "abgcoqa | ambigqa | provo")->required();
  build->add_option("--path", dataset.path, "Dataset file or directory")->required();
  build->add_option("--split", split, "train | dev | test");
  build->add_option("--filter", filter, "ambiguous | unambiguous | both");
  build->add_option("--n", dataset.n, "Provo contexts to draw");
  build->add_flag("--corrupt", dataset.corrupt, "Append context-corrupted copies");
  build->add_option("--seed", seed, "Master seed")->required();
  build->add_option("--templates", templates_dir, "Template override directory");
  build->add_option("--out", build_out, "Output JSONL")->required();

  // sample
  auto* sample = app.add_subcommand("sample", "Draw samples and predictions");
  std::string sample_in, sample_endpoint, sample_out, prediction = "greedy", cache_dir;
  int n = 10, max_tokens = 150;
  std::vector<std::string> stops;
  sample->add_option("--in", sample_in, "PromptInstance JSONL")->required()->check(CLI::ExistingFile);
  sample->add_option("--endpoint", sample_endpoint, "Generator EndpointConfig JSON")->required()->check(CLI::ExistingFile);
  sample->add_option("--n", n, "Samples per prompt")->check(CLI::PositiveNumber);
  sample->add_option("--max-tokens", max_tokens, "Token budget")->check(CLI::PositiveNumber);
  sample->add_option("--stop", stops, "Stop sequence (repeatable)");
  sample->add_option("--prediction", prediction, "greedy | drawn_sample");
  sample->add_option("--seed", seed, "Master seed")->required();
  sample->add_option("--cache-dir", cache_dir, "Response cache directory")->required();
  sample->add_option("--out", sample_out, "SampleSet JSONL")->required();

  // judge
  auto* judge = app.add_subcommand("judge", "Adequacy verdicts for every sample");
  std::string judge_instances, judge_samples, judge_spec, judge_out;
  judge->add_option("--instances", judge_instances, "PromptInstance JSONL")->required()->check(CLI::ExistingFile);
  judge->add_option("--samples", judge_samples, "SampleSet JSONL")->required()->check(CLI::ExistingFile);
  judge->add_option("--judge", judge_spec, "Adequacy JudgeSpec JSON")->required()->check(CLI::ExistingFile);
  judge->add_option("--cache-dir", cache_dir, "Response cache directory")->required();
  judge->add_option("--out", judge_out, "VerdictList JSONL")->required();

  // cluster
  auto* clus = app.add_subcommand("cluster", "Semantic clustering of every SampleSet");
  std::string cl_in, cl_instances, cl_spec, cl_out;
  clus->add_option("--in", cl_in, "SampleSet JSONL")->required()->check(CLI::ExistingFile);
  clus->add_option("--instances", cl_instances, "PromptInstance JSONL")->required()->check(CLI::ExistingFile);
  clus->add_option("--judge", cl_spec, "Equivalence JudgeSpec JSON")->required()->check(CLI::ExistingFile);
  clus->add_option("--cache-dir", cache_dir, "Response cache directory")->required();
  clus->add_option("--out", cl_out, "ClusterPartition JSONL")->required();

  // score
  auto* score = app.add_subcommand("score", "Quantifier scores from samples, clusters and verdicts");
  std::string sc_samples, sc_clusters, sc_verdicts, sc_out;
  score->add_option("--samples", sc_samples, "SampleSet JSONL")->required()->check(CLI::ExistingFile);
  score->add_option("--clusters", sc_clusters, "ClusterPartition JSONL")->check(CLI::ExistingFile);
  score->add_option("--verdicts", sc_verdicts, "VerdictList JSONL")->check(CLI::ExistingFile);
  score->add_option("--out", sc_out, "QuantifierResult JSONL")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "AUROC, curves and bootstrap summaries from EvalRecords");
  std::string ev_records, ev_report, ev_csv;
  std::vector<std::size_t> boot_sizes;
  int boot_reps = 50;
  bool with_replacement = false;
  ev->add_option("--records", ev_records, "EvalRecord JSONL")->required()->check(CLI::ExistingFile);
  ev->add_option("--report", ev_report, "Report JSON")->required();
  ev->add_option("--csv-dir", ev_csv, "Directory for curve CSVs");
  ev->add_option("--bootstrap", boot_sizes, "Bootstrap subset size (repeatable)");
  ev->add_option("--repetitions", boot_reps, "Bootstrap repetitions")->check(CLI::PositiveNumber);
  ev->add_flag("--with-replacement", with_replacement, "Bootstrap with replacement");
  ev->add_option("--seed", seed, "Master seed");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Sample-size ablation over a completed run");
  std::vector<int> sizes;
  std::string ablate_out;
  ablate->add_option("--config", config_path, "Run config JSON")->required()->check(CLI::ExistingFile);
  ablate->add_option("--sizes", sizes, "Sample sizes")->required();
  ablate->add_option("--out", ablate_out, "Ablation report JSON (default: <outdir>/ablation.json)");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(verbose ? spdlog::level::info : spdlog::level::warn);

  try {
    if (*run) {
      auto cfg = pipeline::load_config(config_path);
      if (max_in_flight > 0) pipeline::override_max_in_flight(cfg, max_in_flight);
      const auto summary = pipeline::run(cfg);
      auto list = [](const std::vector<std::string>& v) {
        std::string out;
        for (const auto& s : v) out += " " + s;
        return out;
      };
      std::cout << "stages run:" << list(summary.stages_run) << "\n"
                << "stages skipped:" << list(summary.stages_skipped) << "\n"
                << "network calls: " << summary.network_calls << "\n";
    } else if (*build) {
      dataset.split = tasks::parse_split(split);
      dataset.filter = tasks::parse_filter(filter);
      const auto templates = templates_dir.empty() ? TemplateRegistry::builtin()
                                                   : TemplateRegistry::with_overrides(templates_dir);
      const auto instances = pipeline::build_instances(dataset, seed, templates);
      save_jsonl(build_out, instances);
      std::cout << instances.size() << " instances\n";
    } else if (*sample) {
      auto endpoint = load_endpoint(sample_endpoint);
      apply_in_flight(endpoint, max_in_flight);
      GenerationParams params;
      params.mode = DecodeMode::unbiased;
      params.n = n;
      params.max_tokens = max_tokens;
      params.stop_sequences = stops;
      const auto source = json(prediction).get<PredictionSource>();
      if (json(source).get<std::string>() != prediction) throw Error("unknown prediction mode '" + prediction + "'");
      const auto instances = load_jsonl<PromptInstance>(sample_in);
      auto gw = Gateway::open(endpoint, cache_dir);
      save_jsonl(sample_out, pipeline::sample_all(instances, *gw, params, source, seed));
    } else if (*judge) {
      auto spec = load_spec(judge_spec);
      apply_in_flight(spec, max_in_flight);
      spec.validate();
      const auto samples = load_jsonl<SampleSet>(judge_samples);
      const auto instances = instances_for(judge_instances, samples);
      save_jsonl(judge_out, pipeline::judge_all(instances, samples, spec, judges::open_endpoints(spec, cache_dir),
                                                TemplateRegistry::builtin()));
    } else if (*clus) {
      auto spec = load_spec(cl_spec);
      apply_in_flight(spec, max_in_flight);
      spec.validate();
      if (!spec.endpoint) throw Error("equivalence judge needs an endpoint");
      const auto samples = load_jsonl<SampleSet>(cl_in);
      const auto instances = instances_for(cl_instances, samples);
      auto gw = Gateway::open(*spec.endpoint, cache_dir);
      save_jsonl(cl_out, pipeline::cluster_all(instances, samples, spec, *gw, TemplateRegistry::builtin()));
    } else if (*score) {
      const auto samples = load_jsonl<SampleSet>(sc_samples);
      std::vector<ClusterPartition> clusters;
      std::vector<VerdictList> verdicts;
      if (!sc_clusters.empty()) clusters = by_order(load_jsonl<ClusterPartition>(sc_clusters), samples, "partition");
      if (!sc_verdicts.empty()) verdicts = by_order(load_jsonl<VerdictList>(sc_verdicts), samples, "verdicts");
      std::vector<std::string> names{"E", "NormE"};
      if (!clusters.empty()) names.insert(names.end(), {"SE", "NormSE"});
      if (!verdicts.empty()) names.push_back("ProbAR");
      std::vector<QuantifierResult> out;
      for (std::size_t i = 0; i < samples.size(); ++i) {
        auto s = pipeline::score_offline(samples[i], clusters.empty() ? nullptr : &clusters[i],
                                         verdicts.empty() ? nullptr : &verdicts[i], names);
        out.insert(out.end(), s.begin(), s.end());
      }
      save_jsonl(sc_out, out);
    } else if (*ev) {
      const auto records = load_jsonl<EvalRecord>(ev_records);
      eval::ReportOptions opts;
      for (auto s : boot_sizes) opts.bootstrap.push_back({s, boot_reps});
      opts.with_replacement = with_replacement;
      opts.seed = sub_seed(seed, "bootstrap");
      const json report = eval::build_report(records, opts);
      write_text_atomic(ev_report, report.dump(2) + "\n");
      if (!ev_csv.empty()) eval::export_csv(report, ev_csv);
    } else if (*ablate) {
      auto cfg = pipeline::load_config(config_path);
      const auto rows = pipeline::ablate_sample_size(cfg, sizes);
      const fs::path dest = ablate_out.empty() ? cfg.output_dir / "ablation.json" : fs::path(ablate_out);
      write_text_atomic(dest, pipeline::ablation_report(rows).dump(2) + "\n");
      for (const auto& r : rows) {
        std::cout << "k=" << r.k;
        for (const auto& [q, a] : r.auroc) std::cout << " " << q << "=" << (a ? std::to_string(*a) : "null");
        std::cout << "\n";
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "uq: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
