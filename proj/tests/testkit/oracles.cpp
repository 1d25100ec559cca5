#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "testkit.hpp"

namespace uq::testkit {

std::optional<long double> brute_force_auroc(std::span<const double> correct, std::span<const double> incorrect) {
  if (correct.empty() || incorrect.empty()) return std::nullopt;
  long double wins = 0;
  for (double c : correct)
    for (double w : incorrect) {
      if (c > w) wins += 1;
      else if (c == w) wins += 0.5L;
    }
  return wins / (static_cast<long double>(correct.size()) * static_cast<long double>(incorrect.size()));
}

std::optional<long double> brute_force_auroc(std::span<const EvalRecord> records, const std::string& quantifier) {
  const bool flip = quantifier == "E" || quantifier == "SE";
  std::vector<double> pos, neg;
  for (const auto& r : records) {
    auto it = r.scores.find(quantifier);
    if (it == r.scores.end() || !it->second) continue;
    const double s = flip ? -*it->second : *it->second;
    (r.correct ? pos : neg).push_back(s);
  }
  return brute_force_auroc(pos, neg);
}

long double brute_force_entropy(std::span<const int> counts) {
  long double n = 0;
  for (int c : counts) n += c;
  long double h = 0;
  for (int c : counts) {
    const long double p = c / n;
    h -= p * std::log(p);
  }
  return h;
}

std::vector<int> brute_force_counts(std::span<const std::string> texts) {
  std::vector<std::string> seen;
  std::vector<int> counts;
  for (const auto& raw : texts) {
    std::size_t b = raw.find_first_not_of(" \t\n\r\v\f");
    std::size_t e = raw.find_last_not_of(" \t\n\r\v\f");
    const std::string t = b == std::string::npos ? std::string{} : raw.substr(b, e - b + 1);
    std::size_t k = 0;
    while (k < seen.size() && seen[k] != t) ++k;
    if (k == seen.size()) {
      seen.push_back(t);
      counts.push_back(0);
    }
    ++counts[k];
  }
  return counts;
}

long double brute_force_normalized(long double entropy, int support) {
  if (support == 1) return 1.0L;
  long double c = 1.0L - entropy / std::log(static_cast<long double>(support));
  if (c < 0) c = 0;
  if (c > 1) c = 1;
  return c;
}

std::optional<long double> brute_force_probar(std::span<const Verdict> verdicts) {
  long double a = 0, judged = 0;
  for (const auto& v : verdicts) {
    if (v.value == VerdictValue::Dismissed) continue;
    judged += 1;
    if (v.value == VerdictValue::Adequate) a += 1;
  }
  if (judged == 0) return std::nullopt;
  return a / judged;
}

long double brute_force_p_adequate(long double a, long double b) { return std::exp(a) / (std::exp(a) + std::exp(b)); }

std::vector<int> union_find_classes(std::span<const int> labels) {
  const std::size_t n = labels.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  std::function<std::size_t(std::size_t)> find = [&](std::size_t x) {
    return parent[x] == x ? x : parent[x] = find(parent[x]);
  };
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (labels[i] == labels[j]) parent[find(j)] = find(i);
  std::map<std::size_t, int> ids;
  std::vector<int> out;
  for (std::size_t i = 0; i < n; ++i) {
    auto [it, _] = ids.try_emplace(find(i), static_cast<int>(ids.size()));
    out.push_back(it->second);
  }
  return out;
}

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  std::random_device rd;
  path_ = std::filesystem::temp_directory_path() /
          (tag + "-" + std::to_string(rd()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

}  // namespace uq::testkit
