#include "uq/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <set>
#include <thread>

#include <spdlog/spdlog.h>

#include "uq/clustering.hpp"
#include "uq/hash.hpp"
#include "uq/rng.hpp"

namespace uq::pipeline {

namespace fs = std::filesystem;

namespace {

constexpr const char* kOptionA = " (A)";
constexpr const char* kOptionB = " (B)";

json endpoint_identity(const std::optional<EndpointConfig>& e) {
  if (!e) return nullptr;
  return json{{"model_name", e->model_name}, {"api", e->api}, {"server_side_stop", e->server_side_stop}};
}

std::set<TaskKind> task_set(std::span<const PromptInstance> instances) {
  std::set<TaskKind> out;
  for (const auto& i : instances) out.insert(i.task);
  return out;
}

json template_identity(const TemplateRegistry& templates, const std::string& id) {
  if (id.empty()) return nullptr;
  return json{{"id", id}, {"checksum", templates.get(id).checksum}};
}

json judge_identity(const judges::JudgeSpec& spec, const TemplateRegistry& templates,
                    const std::set<TaskKind>& tasks) {
  json used = json::array();
  bool declarative = false;
  for (TaskKind t : tasks) {
    std::string id;
    try {
      id = judges::resolved_template(spec, t);
    } catch (const Error&) {
      continue;
    }
    used.push_back(template_identity(templates, id));
    if (!id.empty() && templates.get(id).text.find("<SENTENCE>") != std::string::npos) declarative = true;
    if (id.empty() && spec.kind == judges::JudgeKind::adequacy_rcqa_nli) declarative = true;
  }
  return json{{"kind", spec.kind},
              {"templates", std::move(used)},
              {"declarative", declarative ? template_identity(templates, "declarative") : json(nullptr)},
              {"example", spec.example ? json(*spec.example) : json(nullptr)},
              {"max_tokens", spec.max_tokens},
              {"endpoint", endpoint_identity(spec.endpoint)},
              {"declarative_endpoint", endpoint_identity(spec.declarative_endpoint)}};
}

std::string fingerprint(const json& material) { return sha256_hex(material.dump()); }

std::string dataset_checksum(const DatasetSpec& d) {
  fs::path p = d.path;
  if (d.name == "abgcoqa" && fs::is_directory(p)) {
    p /= d.split == tasks::Split::train ? "coqa_abg_train.json"
         : d.split == tasks::Split::dev ? "coqa_abg_val.json"
                                        : "coqa_abg_test.json";
  }
  return sha256_hex(read_text(p));
}

std::string join(std::span<const Sample> samples, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (i) out += sep;
    out += trim(samples[i].text);
  }
  return out;
}

bool wants(std::span<const std::string> quantifiers, std::string_view name) {
  return std::find(quantifiers.begin(), quantifiers.end(), name) != quantifiers.end();
}

std::string split_name(tasks::Split s) {
  return s == tasks::Split::train ? "train" : s == tasks::Split::dev ? "dev" : "test";
}

std::string filter_name(tasks::AmbiguityFilter f) {
  return f == tasks::AmbiguityFilter::ambiguous ? "ambiguous"
         : f == tasks::AmbiguityFilter::unambiguous ? "unambiguous"
                                                    : "both";
}

/// Endpoints are shared per configuration so one rate limiter governs each.
class GatewayPool {
 public:
  explicit GatewayPool(fs::path cache_dir) : cache_dir_(std::move(cache_dir)) {}

  std::shared_ptr<Gateway> get(const EndpointConfig& config) {
    std::lock_guard lock(mu_);
    const std::string key = json(config).dump();
    auto it = pool_.find(key);
    if (it != pool_.end()) return it->second;
    auto gw = Gateway::open(config, cache_dir_);
    pool_.emplace(key, gw);
    return gw;
  }

  judges::JudgeEndpoints endpoints(const judges::JudgeSpec& spec) {
    judges::JudgeEndpoints out;
    if (spec.endpoint) out.main = get(*spec.endpoint);
    if (spec.declarative_endpoint) out.declarative = get(*spec.declarative_endpoint);
    else if (spec.endpoint && spec.endpoint->api != ApiKind::nli) out.declarative = out.main;
    return out;
  }

  std::uint64_t network_calls() const {
    std::lock_guard lock(mu_);
    std::uint64_t total = 0;
    for (const auto& [_, gw] : pool_) total += gw->stats().network_calls;
    return total;
  }

 private:
  fs::path cache_dir_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Gateway>> pool_;
};

class Manifest {
 public:
  explicit Manifest(fs::path file) : file_(std::move(file)) {
    if (fs::exists(file_)) {
      try {
        doc_ = json::parse(read_text(file_));
      } catch (const json::exception&) {
        spdlog::warn("ignoring unreadable manifest {}", file_.string());
        doc_ = json::object();
      }
    }
    if (!doc_.is_object()) doc_ = json::object();
    if (!doc_.contains("stages") || !doc_["stages"].is_object()) doc_["stages"] = json::object();
  }

  bool fresh(const std::string& stage, const std::string& fp, const std::vector<fs::path>& outputs) const {
    const json& stages = doc_["stages"];
    auto it = stages.find(stage);
    if (it == stages.end() || it->value("fingerprint", std::string{}) != fp) return false;
    return std::all_of(outputs.begin(), outputs.end(), [](const fs::path& p) { return fs::exists(p); });
  }

  void mark(const std::string& stage, const std::string& fp, const std::vector<fs::path>& outputs) {
    json files = json::array();
    for (const auto& p : outputs) files.push_back(p.filename().string());
    doc_["stages"][stage] = json{{"fingerprint", fp}, {"outputs", std::move(files)}, {"complete", true}};
  }

  void invalidate(const std::string& stage) { doc_["stages"].erase(stage); }

  json& doc() { return doc_; }
  void save() const { write_text_atomic(file_, doc_.dump(2) + "\n"); }

 private:
  fs::path file_;
  json doc_;
};

struct CorrectnessRow {
  std::string prompt_id;
  std::vector<bool> correct;  // one entry per prediction run
  CorrectnessSource source = CorrectnessSource::llm_judge;
};

void to_json(json& j, const CorrectnessRow& v) {
  j = json{{"prompt_id", v.prompt_id}, {"correct", v.correct}, {"correctness_source", v.source}};
}

void from_json(const json& j, CorrectnessRow& v) {
  v.prompt_id = j.at("prompt_id").get<std::string>();
  v.correct = j.at("correct").get<std::vector<bool>>();
  v.source = j.at("correctness_source").get<CorrectnessSource>();
}

fs::path resolve(const fs::path& base, const fs::path& p) {
  if (p.empty() || p.is_absolute()) return p;
  return base / p;
}

template <typename T>
std::vector<T> load_aligned(const fs::path& file, std::span<const PromptInstance> instances) {
  auto rows = load_jsonl<T>(file);
  if (rows.size() != instances.size())
    throw Error(file.string() + " holds " + std::to_string(rows.size()) + " rows for " +
                std::to_string(instances.size()) + " instances");
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (rows[i].prompt_id != instances[i].id)
      throw Error(file.string() + ": row " + std::to_string(i) + " is '" + rows[i].prompt_id + "', expected '" +
                  instances[i].id + "'");
  return rows;
}

std::string prediction_text(const SampleSet& s, PredictionSource source, std::uint64_t seed, int run) {
  if (source == PredictionSource::greedy || run == 0) return s.prediction.text;
  return s.samples[drawn_index(seed, s.prompt_id, run, s.samples.size())].text;
}

}  // namespace

// ---- config ------------------------------------------------------------------

void RunConfig::validate() const {
  static const std::set<std::string> datasets{"abgcoqa", "ambigqa", "provo", "instances"};
  if (!datasets.count(dataset.name)) throw Error("config: unknown dataset '" + dataset.name + "'");
  if (dataset.path.empty()) throw Error("config: dataset.path is required");
  generator.validate();
  if (generator.api == ApiKind::nli) throw Error("config: the generator cannot be an NLI endpoint");
  generation.validate();
  if (generation.mode != DecodeMode::unbiased) throw Error("config: generation.mode must be unbiased");
  if (prediction_runs < 1) throw Error("config: prediction_runs must be positive");
  if (prediction == PredictionSource::greedy && prediction_runs != 1)
    throw Error("config: prediction_runs applies to drawn_sample predictions only");
  if (output_dir.empty()) throw Error("config: output_dir is required");
  if (cache_dir.empty()) throw Error("config: cache_dir is required");

  const auto templates = templates_for(*this);
  if (!judges::is_adequacy(adequacy.kind)) throw Error("config: adequacy judge has kind " + judges::to_string(adequacy.kind));
  if (equivalence.kind != judges::JudgeKind::equivalence_nli_entail)
    throw Error("config: equivalence judge has kind " + judges::to_string(equivalence.kind));
  if (!judges::is_correctness(correctness.kind))
    throw Error("config: correctness judge has kind " + judges::to_string(correctness.kind));
  adequacy.validate(templates);
  equivalence.validate(templates);
  correctness.validate(templates);

  for (const auto& q : quantifiers) parse_quantifier(q);
  if (wants(quantifiers, "PAdequate"))
    for (const char* id : {"padequate_rcqa", "padequate_kbqa", "padequate_nwp"})
      if (!templates.contains(id)) throw Error(std::string("config: unknown template '") + id + "'");
  if (eval.decode_runs < 1) throw Error("config: eval.decode_runs must be positive");
  for (const auto& b : eval.bootstrap)
    if (b.subset_size == 0 || b.repetitions < 1) throw Error("config: bootstrap entries need positive sizes");
  for (int k : eval.ablation_sizes)
    if (k < 1) throw Error("config: ablation sizes must be positive");
}

void to_json(json& j, const RunConfig& v) {
  j = json{{"dataset",
            {{"name", v.dataset.name},
             {"path", v.dataset.path.string()},
             {"split", split_name(v.dataset.split)},
             {"filter", filter_name(v.dataset.filter)},
             {"n", v.dataset.n},
             {"corrupt", v.dataset.corrupt}}},
           {"generator", v.generator},
           {"generation", v.generation},
           {"prediction", v.prediction},
           {"prediction_runs", v.prediction_runs},
           {"adequacy", v.adequacy},
           {"equivalence", v.equivalence},
           {"correctness", v.correctness},
           {"quantifiers", v.quantifiers},
           {"eval",
            {{"bootstrap", v.eval.bootstrap},
             {"with_replacement", v.eval.with_replacement},
             {"decode_runs", v.eval.decode_runs},
             {"ablation_sizes", v.eval.ablation_sizes}}},
           {"seed", v.seed},
           {"output_dir", v.output_dir.string()},
           {"cache_dir", v.cache_dir.string()}};
  j["templates_dir"] = v.templates_dir ? json(v.templates_dir->string()) : json(nullptr);
}

void from_json(const json& j, RunConfig& v) {
  if (!j.contains("seed") || j["seed"].is_null()) throw Error("config: seed is required");
  v.seed = j["seed"].get<std::uint64_t>();

  const json& d = j.at("dataset");
  v.dataset.name = d.at("name").get<std::string>();
  v.dataset.path = d.at("path").get<std::string>();
  v.dataset.split = tasks::parse_split(d.value("split", std::string("test")));
  v.dataset.filter = tasks::parse_filter(d.value("filter", std::string("ambiguous")));
  v.dataset.n = d.value("n", std::size_t{100});
  v.dataset.corrupt = d.value("corrupt", false);

  v.generator = j.at("generator").get<EndpointConfig>();
  v.generation = GenerationParams{};
  v.generation.n = 10;
  if (auto it = j.find("generation"); it != j.end()) {
    json g = *it;
    if (!g.contains("mode")) g["mode"] = "unbiased";
    if (!g.contains("n")) g["n"] = 10;
    v.generation = g.get<GenerationParams>();
  }
  v.prediction = j.value("prediction", PredictionSource::greedy);
  v.prediction_runs = j.value("prediction_runs", 1);
  v.adequacy = j.at("adequacy").get<judges::JudgeSpec>();
  v.equivalence = j.at("equivalence").get<judges::JudgeSpec>();
  v.correctness = j.at("correctness").get<judges::JudgeSpec>();

  v.quantifiers.clear();
  if (auto it = j.find("quantifiers"); it != j.end()) v.quantifiers = it->get<std::vector<std::string>>();
  else
    for (Quantifier q : all_quantifiers()) v.quantifiers.push_back(to_string(q));

  v.eval = EvalOptions{};
  if (auto it = j.find("eval"); it != j.end()) {
    v.eval.bootstrap = it->value("bootstrap", std::vector<eval::BootstrapSpec>{});
    v.eval.with_replacement = it->value("with_replacement", false);
    v.eval.decode_runs = it->value("decode_runs", 10);
    v.eval.ablation_sizes = it->value("ablation_sizes", std::vector<int>{});
  }
  v.output_dir = j.at("output_dir").get<std::string>();
  v.cache_dir = j.at("cache_dir").get<std::string>();
  v.templates_dir.reset();
  if (auto it = j.find("templates_dir"); it != j.end() && !it->is_null())
    v.templates_dir = fs::path(it->get<std::string>());
}

RunConfig load_config(const fs::path& path) {
  RunConfig c;
  try {
    c = json::parse(read_text(path)).get<RunConfig>();
  } catch (const json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
  const fs::path base = path.parent_path();
  c.dataset.path = resolve(base, c.dataset.path);
  c.output_dir = resolve(base, c.output_dir);
  c.cache_dir = resolve(base, c.cache_dir);
  if (c.templates_dir) c.templates_dir = resolve(base, *c.templates_dir);
  return c;
}

void override_max_in_flight(RunConfig& c, int max_in_flight) {
  if (max_in_flight < 1) throw Error("--max-in-flight must be at least 1");
  c.generator.max_in_flight = max_in_flight;
  for (auto* spec : {&c.adequacy, &c.equivalence, &c.correctness}) {
    if (spec->endpoint) spec->endpoint->max_in_flight = max_in_flight;
    if (spec->declarative_endpoint) spec->declarative_endpoint->max_in_flight = max_in_flight;
  }
}

TemplateRegistry templates_for(const RunConfig& config) {
  return config.templates_dir ? TemplateRegistry::with_overrides(*config.templates_dir)
                              : TemplateRegistry::builtin();
}

// ---- execution helpers ------------------------------------------------------------

void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& fn,
                  const std::function<std::string(std::size_t)>& label) {
  if (count == 0) return;
  const std::size_t n_threads = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, workers)));
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex mu;
  std::size_t failed_index = 0;
  std::exception_ptr failure;

  auto worker = [&] {
    for (;;) {
      if (failed.load()) return;
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure || i < failed_index) {
          failure = std::current_exception();
          failed_index = i;
        }
        failed.store(true);
      }
    }
  };
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> threads;
    threads.reserve(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) threads.emplace_back(worker);
  }
  if (failure) {
    try {
      std::rethrow_exception(failure);
    } catch (const std::exception& e) {
      throw Error(label(failed_index) + ": " + e.what());
    }
  }
}

std::vector<PromptInstance> build_instances(const DatasetSpec& d, std::uint64_t seed,
                                            const TemplateRegistry& templates) {
  std::vector<PromptInstance> out;
  if (d.name == "abgcoqa") out = tasks::load_abgcoqa(d.path, d.split, d.filter);
  else if (d.name == "ambigqa") out = tasks::load_ambigqa(d.path);
  else if (d.name == "provo") out = tasks::load_provo(d.path, d.n, sub_seed(seed, "provo"));
  else if (d.name == "instances") out = load_jsonl<PromptInstance>(d.path);
  else throw Error("unknown dataset '" + d.name + "'");

  tasks::attach_prompts(out, templates);
  if (d.corrupt) {
    auto corrupted = tasks::corrupt_contexts(out, sub_seed(seed, "corrupt"), templates);
    out.insert(out.end(), corrupted.begin(), corrupted.end());
  }
  std::set<std::string> ids;
  for (const auto& i : out)
    if (!ids.insert(i.id).second) throw Error("duplicate instance id '" + i.id + "'");
  return out;
}

std::size_t drawn_index(std::uint64_t seed, const std::string& prompt_id, int run, std::size_t n) {
  SeededRng rng(sub_seed(sub_seed(seed, "prediction/run/" + std::to_string(run)), prompt_id));
  return rng.uniform_index(n);
}

std::vector<SampleSet> sample_all(std::span<const PromptInstance> instances, Gateway& gateway,
                                  const GenerationParams& params, PredictionSource prediction,
                                  std::uint64_t seed) {
  std::vector<SampleSet> out(instances.size());
  GenerationParams greedy = params;
  greedy.mode = DecodeMode::greedy;
  greedy.n = 1;
  GenerationParams single = params;
  single.n = 1;

  parallel_for(
      instances.size(), gateway.config().max_in_flight,
      [&](std::size_t i) {
        const auto& inst = instances[i];
        SampleSet s;
        s.prompt_id = inst.id;
        s.generation_params = params;
        s.prediction_source = prediction;
        if (inst.task == TaskKind::NWP) {
          for (int o = 0; o < params.n; ++o)
            s.samples.push_back(tasks::sample_next_word(gateway, inst.prompt_text, single, o));
          if (prediction == PredictionSource::greedy)
            s.prediction = tasks::sample_next_word(gateway, inst.prompt_text, greedy, 0);
        } else {
          s.samples = gateway.sample_n(inst.prompt_text, params, params.n);
          if (prediction == PredictionSource::greedy) s.prediction = gateway.generate(inst.prompt_text, greedy, 0);
        }
        if (prediction == PredictionSource::drawn_sample)
          s.prediction = s.samples[drawn_index(seed, inst.id, 0, s.samples.size())];
        s.validate();
        out[i] = std::move(s);
      },
      [&](std::size_t i) { return "prompt '" + instances[i].id + "'"; });
  return out;
}

std::vector<VerdictList> judge_all(std::span<const PromptInstance> instances, std::span<const SampleSet> samples,
                                   const judges::JudgeSpec& spec, const judges::JudgeEndpoints& endpoints,
                                   const TemplateRegistry& templates) {
  std::vector<VerdictList> out(instances.size());
  std::vector<std::pair<std::size_t, std::size_t>> jobs;
  for (std::size_t p = 0; p < instances.size(); ++p) {
    out[p].prompt_id = instances[p].id;
    out[p].verdicts.resize(samples[p].samples.size());
    for (std::size_t s = 0; s < samples[p].samples.size(); ++s) jobs.emplace_back(p, s);
  }
  const int workers = endpoints.main ? endpoints.main->config().max_in_flight : 1;
  parallel_for(
      jobs.size(), workers,
      [&](std::size_t j) {
        const auto [p, s] = jobs[j];
        out[p].verdicts[s] = judges::judge_adequacy(judges::judge_context(instances[p]), samples[p].samples[s].text,
                                                    spec, endpoints, templates);
      },
      [&](std::size_t j) {
        return "prompt '" + instances[jobs[j].first].id + "' sample " + std::to_string(jobs[j].second);
      });
  return out;
}

std::vector<ClusterPartition> cluster_all(std::span<const PromptInstance> instances,
                                          std::span<const SampleSet> samples, const judges::JudgeSpec& spec,
                                          Gateway& gateway, const TemplateRegistry& templates) {
  std::vector<ClusterPartition> out(instances.size());
  parallel_for(
      instances.size(), gateway.config().max_in_flight,
      [&](std::size_t i) {
        const std::string prefix = judges::equivalence_prefix(instances[i]);
        EntailmentFn fn = [&](const std::string& a, const std::string& b) {
          return judges::entails(prefix + " " + a, prefix + " " + b, spec, gateway, templates);
        };
        out[i] = cluster(samples[i], fn);
      },
      [&](std::size_t i) { return "prompt '" + instances[i].id + "'"; });
  return out;
}

std::vector<QuantifierResult> score_offline(const SampleSet& samples, const ClusterPartition* partition,
                                            const VerdictList* verdicts, std::span<const std::string> quantifiers) {
  std::vector<QuantifierResult> out;
  if (wants(quantifiers, "E") || wants(quantifiers, "NormE")) {
    auto e = mc_entropy(samples);
    if (wants(quantifiers, "E")) out.push_back(e);
    if (wants(quantifiers, "NormE")) out.push_back(normalized(e));
  }
  if (partition && (wants(quantifiers, "SE") || wants(quantifiers, "NormSE"))) {
    if (partition->assignments.size() != samples.samples.size())
      throw Error("partition for '" + samples.prompt_id + "' does not cover the samples");
    auto se = semantic_entropy(*partition);
    if (wants(quantifiers, "SE")) out.push_back(se);
    if (wants(quantifiers, "NormSE")) out.push_back(normalized(se));
  }
  if (verdicts && wants(quantifiers, "ProbAR")) {
    if (verdicts->verdicts.size() != samples.samples.size())
      throw Error("verdicts for '" + samples.prompt_id + "' do not cover the samples");
    try {
      out.push_back(probar(*verdicts));
    } catch (const InstanceInvalid& e) {
      spdlog::warn("{}; ProbAR left absent", e.what());
    }
  }
  return out;
}

std::optional<double> p_adequate_score(const PromptInstance& instance, const SampleSet& samples,
                                       const std::string& prediction, Gateway& generator,
                                       const TemplateRegistry& templates) {
  std::string prompt;
  const std::string responses = join(samples.samples, ", ");
  switch (instance.task) {
    case TaskKind::RCQA:
      prompt = render(templates.get("padequate_rcqa").text, {{"PASSAGE", instance.context.value_or("")},
                                                             {"QUESTION", instance.question.value_or("")},
                                                             {"SAMPLED_RESPONSES", responses},
                                                             {"ANSWER", prediction}});
      break;
    case TaskKind::KBQA:
      prompt = render(templates.get("padequate_kbqa").text, {{"QUESTION", instance.question.value_or("")},
                                                             {"SAMPLED_RESPONSES", responses},
                                                             {"ANSWER", prediction}});
      break;
    case TaskKind::NWP:
      prompt = render(templates.get("padequate_nwp").text, {{"CONTEXT", instance.context.value_or("")},
                                                            {"CONTINUATIONS", responses},
                                                            {"GREEDY", prediction}});
      break;
  }
  try {
    const auto lp = generator.option_logprobs(prompt, {kOptionA, kOptionB});
    return p_adequate(lp.at(0), lp.at(1));
  } catch (const UnsupportedCapability& e) {
    spdlog::warn("P(Adequate) absent for '{}': {}", instance.id, e.what());
    return std::nullopt;
  }
}

EvalRecord make_record(const std::string& prompt_id, std::span<const QuantifierResult> scores,
                       std::span<const std::string> quantifiers, bool correct, CorrectnessSource source) {
  EvalRecord r;
  r.prompt_id = prompt_id;
  r.correct = correct;
  r.correctness_source = source;
  for (const auto& q : quantifiers) r.scores[q] = std::nullopt;
  for (const auto& s : scores) {
    const std::string name = to_string(s.name);
    if (r.scores.count(name)) r.scores[name] = s.value;
  }
  return r;
}

// ---- run -------------------------------------------------------------------------

RunSummary run(const RunConfig& cfg) {
  cfg.validate();
  const TemplateRegistry templates = templates_for(cfg);
  const fs::path out = cfg.output_dir;
  fs::create_directories(out);
  fs::create_directories(cfg.cache_dir);
  Manifest manifest(out / "manifest.json");
  GatewayPool pool(cfg.cache_dir);
  RunSummary summary;
  const int runs = cfg.prediction == PredictionSource::drawn_sample ? cfg.prediction_runs : 1;

  manifest.doc()["tool_version"] = kToolVersion;
  manifest.doc()["config_checksum"] = sha256_hex(json(cfg).dump());
  manifest.doc()["template_checksums"] = templates.checksums();
  const std::string data_sum = dataset_checksum(cfg.dataset);
  manifest.doc()["dataset_checksums"] = json{{cfg.dataset.path.string(), data_sum}};

  auto stage = [&](const std::string& name, const std::string& fp, const std::vector<fs::path>& outputs,
                   const std::function<void()>& compute, const std::function<void()>& load) {
    if (manifest.fresh(name, fp, outputs)) {
      spdlog::info("stage {}: up to date", name);
      summary.stages_skipped.push_back(name);
      load();
      return;
    }
    spdlog::info("stage {}: running", name);
    manifest.invalidate(name);
    manifest.save();
    try {
      compute();
    } catch (const std::exception& e) {
      throw Error("stage " + name + ": " + e.what());
    }
    manifest.mark(name, fp, outputs);
    manifest.save();
    summary.stages_run.push_back(name);
  };

  // build
  std::vector<PromptInstance> instances;
  const std::string fp_build = fingerprint({{"stage", "build"},
                                            {"dataset", json(cfg)["dataset"]},
                                            {"dataset_checksum", data_sum},
                                            {"seed", cfg.seed},
                                            {"kbqa", template_identity(templates, "kbqa_10shot")}});
  stage(
      "build", fp_build, {out / "instances.jsonl"},
      [&] {
        instances = build_instances(cfg.dataset, cfg.seed, templates);
        save_jsonl(out / "instances.jsonl", instances);
      },
      [&] { instances = load_jsonl<PromptInstance>(out / "instances.jsonl"); });
  const auto tasks_present = task_set(instances);

  // sample
  std::vector<SampleSet> samples;
  const std::string fp_sample = fingerprint({{"stage", "sample"},
                                             {"build", fp_build},
                                             {"generator", endpoint_identity(cfg.generator)},
                                             {"generation", cfg.generation},
                                             {"prediction", cfg.prediction},
                                             {"seed", cfg.seed}});
  stage(
      "sample", fp_sample, {out / "samples.jsonl"},
      [&] {
        samples = sample_all(instances, *pool.get(cfg.generator), cfg.generation, cfg.prediction, cfg.seed);
        save_jsonl(out / "samples.jsonl", samples);
      },
      [&] { samples = load_aligned<SampleSet>(out / "samples.jsonl", instances); });

  // judge
  std::vector<VerdictList> verdicts;
  const std::string fp_judge = fingerprint(
      {{"stage", "judge"}, {"sample", fp_sample}, {"adequacy", judge_identity(cfg.adequacy, templates, tasks_present)}});
  stage(
      "judge", fp_judge, {out / "verdicts.jsonl"},
      [&] {
        verdicts = judge_all(instances, samples, cfg.adequacy, pool.endpoints(cfg.adequacy), templates);
        save_jsonl(out / "verdicts.jsonl", verdicts);
      },
      [&] { verdicts = load_aligned<VerdictList>(out / "verdicts.jsonl", instances); });

  // correct
  std::vector<CorrectnessRow> correctness;
  const std::string fp_correct =
      fingerprint({{"stage", "correct"},
                   {"sample", fp_sample},
                   {"runs", runs},
                   {"correctness", judge_identity(cfg.correctness, templates, tasks_present)}});
  stage(
      "correct", fp_correct, {out / "correctness.jsonl"},
      [&] {
        correctness.assign(instances.size(), {});
        auto eps = pool.endpoints(cfg.correctness);
        const CorrectnessSource source = judges::correctness_source(cfg.correctness.kind);
        parallel_for(
            instances.size(), eps.main ? eps.main->config().max_in_flight : 1,
            [&](std::size_t i) {
              CorrectnessRow row{instances[i].id, {}, source};
              for (int r = 0; r < runs; ++r)
                row.correct.push_back(judges::judge_correctness(
                    instances[i], prediction_text(samples[i], cfg.prediction, cfg.seed, r), cfg.correctness,
                    eps.main.get(), templates));
              correctness[i] = std::move(row);
            },
            [&](std::size_t i) { return "prompt '" + instances[i].id + "'"; });
        save_jsonl(out / "correctness.jsonl", correctness);
      },
      [&] { correctness = load_aligned<CorrectnessRow>(out / "correctness.jsonl", instances); });

  // cluster
  std::vector<ClusterPartition> clusters;
  const bool need_clusters = wants(cfg.quantifiers, "SE") || wants(cfg.quantifiers, "NormSE");
  const std::string fp_cluster = fingerprint({{"stage", "cluster"},
                                              {"sample", fp_sample},
                                              {"enabled", need_clusters},
                                              {"equivalence", judge_identity(cfg.equivalence, templates, tasks_present)}});
  stage(
      "cluster", fp_cluster, {out / "clusters.jsonl"},
      [&] {
        if (need_clusters)
          clusters = cluster_all(instances, samples, cfg.equivalence, *pool.get(*cfg.equivalence.endpoint), templates);
        save_jsonl(out / "clusters.jsonl", clusters);
      },
      [&] {
        if (need_clusters) clusters = load_aligned<ClusterPartition>(out / "clusters.jsonl", instances);
      });

  // score
  std::vector<std::vector<EvalRecord>> records(static_cast<std::size_t>(runs));
  std::vector<fs::path> record_files{out / "scores.jsonl", out / "records.jsonl"};
  for (int r = 1; r < runs; ++r) record_files.push_back(out / ("records_run" + std::to_string(r) + ".jsonl"));
  const bool want_pa = wants(cfg.quantifiers, "PAdequate");
  json pa_templates = json::array();
  if (want_pa)
    for (const char* id : {"padequate_rcqa", "padequate_kbqa", "padequate_nwp"})
      pa_templates.push_back(template_identity(templates, id));
  const std::string fp_score = fingerprint({{"stage", "score"},
                                            {"sample", fp_sample},
                                            {"judge", fp_judge},
                                            {"cluster", fp_cluster},
                                            {"correct", fp_correct},
                                            {"quantifiers", cfg.quantifiers},
                                            {"padequate", pa_templates},
                                            {"generator", endpoint_identity(cfg.generator)}});
  stage(
      "score", fp_score, record_files,
      [&] {
        std::vector<std::vector<QuantifierResult>> scores(instances.size());
        std::vector<std::vector<std::optional<double>>> pa(instances.size());
        std::shared_ptr<Gateway> gen = want_pa ? pool.get(cfg.generator) : nullptr;
        parallel_for(
            instances.size(), cfg.generator.max_in_flight,
            [&](std::size_t i) {
              scores[i] = score_offline(samples[i], need_clusters ? &clusters[i] : nullptr, &verdicts[i],
                                        cfg.quantifiers);
              if (want_pa)
                for (int r = 0; r < runs; ++r)
                  pa[i].push_back(p_adequate_score(instances[i], samples[i],
                                                   prediction_text(samples[i], cfg.prediction, cfg.seed, r), *gen,
                                                   templates));
            },
            [&](std::size_t i) { return "prompt '" + instances[i].id + "'"; });

        std::vector<QuantifierResult> flat;
        for (std::size_t i = 0; i < instances.size(); ++i) {
          for (const auto& s : scores[i]) flat.push_back(s);
          if (want_pa && pa[i][0]) flat.push_back({instances[i].id, Quantifier::PAdequate, *pa[i][0], {}, {}});
        }
        save_jsonl(out / "scores.jsonl", flat);

        for (int r = 0; r < runs; ++r) {
          auto& rec = records[static_cast<std::size_t>(r)];
          for (std::size_t i = 0; i < instances.size(); ++i) {
            auto row_scores = scores[i];
            if (want_pa && pa[i][static_cast<std::size_t>(r)])
              row_scores.push_back({instances[i].id, Quantifier::PAdequate, *pa[i][static_cast<std::size_t>(r)], {}, {}});
            rec.push_back(make_record(instances[i].id, row_scores, cfg.quantifiers,
                                      correctness[i].correct.at(static_cast<std::size_t>(r)), correctness[i].source));
          }
          save_jsonl(record_files[static_cast<std::size_t>(r) + 1], rec);
        }
      },
      [&] {
        for (int r = 0; r < runs; ++r)
          records[static_cast<std::size_t>(r)] =
              load_aligned<EvalRecord>(record_files[static_cast<std::size_t>(r) + 1], instances);
      });

  // eval
  const std::string fp_eval = fingerprint({{"stage", "eval"},
                                           {"score", fp_score},
                                           {"judge", fp_judge},
                                           {"correctness", judge_identity(cfg.correctness, templates, tasks_present)},
                                           {"eval", json(cfg)["eval"]},
                                           {"seed", cfg.seed}});
  stage(
      "eval", fp_eval, {out / "report.json"},
      [&] {
        eval::ReportOptions opts{cfg.quantifiers, cfg.eval.bootstrap, cfg.eval.with_replacement,
                                 sub_seed(cfg.seed, "bootstrap")};
        json report = eval::build_report(records[0], opts);
        report["prediction"] = cfg.prediction;
        std::vector<std::string> invalid;
        for (const auto& r : records[0]) {
          auto it = r.scores.find("ProbAR");
          if (it != r.scores.end() && !it->second) invalid.push_back(r.prompt_id);
        }
        report["probar_invalid"] = invalid;
        if (runs > 1) {
          json per = json::object();
          for (const auto& q : cfg.quantifiers) {
            json values = json::array();
            double sum = 0;
            int defined = 0;
            for (const auto& rec : records) {
              auto a = eval::auroc(rec, q);
              values.push_back(a ? json(*a) : json(nullptr));
              if (a) sum += *a, ++defined;
            }
            per[q] = {{"mean_auroc", defined ? json(sum / defined) : json(nullptr)}, {"per_run", values}};
          }
          report["prediction_runs"] = per;
        }
        auto eps = pool.endpoints(cfg.correctness);
        eval::CorrectnessFn correct = [&](const PromptInstance& inst, const std::string& text) {
          return judges::judge_correctness(inst, text, cfg.correctness, eps.main.get(), templates);
        };
        report["decode_precision"] = eval::decode_precision(instances, samples, verdicts, correct,
                                                            cfg.eval.decode_runs, sub_seed(cfg.seed, "decode"));
        write_text_atomic(out / "report.json", report.dump(2) + "\n");
        fs::remove_all(out / "curves");
        eval::export_csv(report, out / "curves");
        summary.report = std::move(report);
      },
      [&] { summary.report = json::parse(read_text(out / "report.json")); });

  // ablate
  if (!cfg.eval.ablation_sizes.empty()) {
    const std::string fp_ablate =
        fingerprint({{"stage", "ablate"}, {"score", fp_score}, {"sizes", cfg.eval.ablation_sizes}});
    stage(
        "ablate", fp_ablate, {out / "ablation.json"},
        [&] {
          const auto rows = ablate_sample_size(cfg, cfg.eval.ablation_sizes);
          write_text_atomic(out / "ablation.json", ablation_report(rows).dump(2) + "\n");
        },
        [] {});
  }

  summary.network_calls = pool.network_calls();
  return summary;
}

std::vector<AblationRow> ablate_sample_size(const RunConfig& cfg, std::span<const int> sizes) {
  const fs::path out = cfg.output_dir;
  for (const char* f : {"instances.jsonl", "samples.jsonl", "verdicts.jsonl", "correctness.jsonl", "records.jsonl"})
    if (!fs::exists(out / f))
      throw Error("ablation needs a completed run in " + out.string() + " (missing " + f + ")");
  const auto instances = load_jsonl<PromptInstance>(out / "instances.jsonl");
  const auto samples = load_aligned<SampleSet>(out / "samples.jsonl", instances);
  const auto verdicts = load_aligned<VerdictList>(out / "verdicts.jsonl", instances);
  const auto correctness = load_aligned<CorrectnessRow>(out / "correctness.jsonl", instances);
  const auto stored = load_aligned<EvalRecord>(out / "records.jsonl", instances);
  const bool need_clusters = wants(cfg.quantifiers, "SE") || wants(cfg.quantifiers, "NormSE");
  std::vector<ClusterPartition> clusters;
  if (need_clusters) clusters = load_aligned<ClusterPartition>(out / "clusters.jsonl", instances);

  std::vector<AblationRow> rows;
  for (int k : sizes) {
    if (k < 1) throw Error("ablation size must be positive");
    AblationRow row;
    row.k = k;
    for (std::size_t i = 0; i < instances.size(); ++i) {
      const std::size_t n = samples[i].samples.size();
      if (static_cast<std::size_t>(k) > n)
        throw Error("ablation size " + std::to_string(k) + " exceeds the " + std::to_string(n) +
                    " cached samples of '" + instances[i].id + "'");
      const auto ks = static_cast<std::size_t>(k);
      const SampleSet s = samples[i].truncated(ks);
      VerdictList v = verdicts[i];
      v.verdicts.resize(ks);
      std::optional<ClusterPartition> c;
      if (need_clusters) c = clusters[i].truncated(ks);
      auto scores = score_offline(s, c ? &*c : nullptr, &v, cfg.quantifiers);
      if (ks == n)
        if (auto it = stored[i].scores.find("PAdequate"); it != stored[i].scores.end() && it->second)
          scores.push_back({instances[i].id, Quantifier::PAdequate, *it->second, {}, {}});
      std::vector<std::string> names = cfg.quantifiers;
      if (ks != n) std::erase(names, std::string("PAdequate"));
      row.records.push_back(make_record(instances[i].id, scores, names, correctness[i].correct.at(0),
                                        correctness[i].source));
    }
    for (const auto& q : cfg.quantifiers) {
      if (q == "PAdequate" && std::any_of(samples.begin(), samples.end(),
                                          [&](const SampleSet& s) { return s.samples.size() != static_cast<std::size_t>(k); }))
        continue;
      row.auroc[q] = eval::auroc(row.records, q);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

json ablation_report(std::span<const AblationRow> rows) {
  json out = json::array();
  for (const auto& r : rows) {
    json auroc = json::object();
    for (const auto& [q, v] : r.auroc) auroc[q] = v ? json(*v) : json(nullptr);
    out.push_back({{"k", r.k}, {"auroc", std::move(auroc)}, {"records", r.records}});
  }
  return json{{"ablation", std::move(out)}};
}

}  // namespace uq::pipeline
