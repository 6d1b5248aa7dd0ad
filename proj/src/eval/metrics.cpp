#include <algorithm>
#include <numeric>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "alliance/error.hpp"
#include "alliance/eval.hpp"

namespace alliance {

namespace {

double percent(std::size_t part, std::size_t whole) {
  return whole == 0 ? 0.0 : 100.0 * static_cast<double>(part) / static_cast<double>(whole);
}

std::set<std::string> intersect(const std::set<std::string>& a, const std::set<std::string>& b) {
  std::set<std::string> out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::inserter(out, out.end()));
  return out;
}

}  // namespace

PassAtK pass_at_k_estimator(int n, int c, int k) {
  if (n < 1 || c < 0 || c > n || k < 1 || k > n) {
    throw Error(ErrorKind::Precondition, fmt::format("pass@k needs 0 <= c <= n and 1 <= k <= n (n={}, c={}, k={})", n, c, k));
  }
  PassAtK out{k, PassAtKMethod::Estimator, 1.0};
  if (n - c < k) return out;
  // C(n-c, k) / C(n, k) = prod_{i=n-c+1}^{n} (1 - k / i)
  double miss = 1.0;
  for (int i = n - c + 1; i <= n; ++i) miss *= 1.0 - static_cast<double>(k) / i;
  out.value = 1.0 - miss;
  return out;
}

PassAtK pass_at_k_empirical(std::span<const VerdictStatus> verdicts, int k) {
  if (k < 1 || static_cast<std::size_t>(k) != verdicts.size()) {
    throw Error(ErrorKind::Precondition,
                fmt::format("empirical pass@{} needs exactly {} verdicts, got {}", k, k, verdicts.size()));
  }
  bool any = std::any_of(verdicts.begin(), verdicts.end(), [](VerdictStatus s) { return s == VerdictStatus::Pass; });
  return {k, PassAtKMethod::Empirical, any ? 1.0 : 0.0};
}

double dataset_percent(std::span<const double> task_values) {
  if (task_values.empty()) return 0.0;
  return 100.0 * std::accumulate(task_values.begin(), task_values.end(), 0.0) / static_cast<double>(task_values.size());
}

std::set<std::string> pass_set(const std::map<std::string, std::vector<VerdictStatus>>& tasks, int k) {
  std::set<std::string> out;
  for (const auto& [task, verdicts] : tasks) {
    std::size_t n = std::min<std::size_t>(verdicts.size(), static_cast<std::size_t>(k));
    if (std::any_of(verdicts.begin(), verdicts.begin() + static_cast<long>(n),
                    [](VerdictStatus s) { return s == VerdictStatus::Pass; })) {
      out.insert(task);
    }
  }
  return out;
}

double ContainmentSplit::cpass_percent() const { return percent(cpass.size(), total.size()); }
double ContainmentSplit::bpass_percent() const { return percent(bpass.size(), cpass.size()); }

IntersectionReport intersection_report(const VerdictTable& runs,
                                       const std::map<std::string, ContainmentResult>& containment, int k,
                                       const ContainmentOptions& opts) {
  IntersectionReport r;
  r.k = k;
  if (runs.empty()) return r;
  std::set<std::string> reference;
  for (const auto& [task, _] : runs.begin()->second) reference.insert(task);
  for (const auto& [cond, tasks] : runs) {
    std::set<std::string> mine;
    for (const auto& [task, _] : tasks) mine.insert(task);
    if (mine != reference) {
      std::vector<std::string> diff;
      std::set_symmetric_difference(mine.begin(), mine.end(), reference.begin(), reference.end(),
                                    std::back_inserter(diff));
      throw Error(ErrorKind::Precondition, fmt::format("conditions {} and {} cover different tasks: {}",
                                                       runs.begin()->first, cond, fmt::join(diff, ", ")));
    }
    r.pass_sets[cond] = pass_set(tasks, k);
  }

  std::vector<std::string> names;
  for (const auto& [cond, _] : r.pass_sets) names.push_back(cond);
  for (std::size_t a = 0; a < names.size(); ++a) {
    for (std::size_t b = a + 1; b < names.size(); ++b) {
      auto ab = intersect(r.pass_sets[names[a]], r.pass_sets[names[b]]);
      r.intersections.push_back({{names[a], names[b]}, ab});
      for (std::size_t c = b + 1; c < names.size(); ++c) {
        r.intersections.push_back({{names[a], names[b], names[c]}, intersect(ab, r.pass_sets[names[c]])});
      }
    }
  }

  if (r.pass_sets.contains(opts.trivial_condition)) r.excluded_trivial = r.pass_sets[opts.trivial_condition];
  const auto* ctx = r.pass_sets.contains(opts.context_condition) ? &r.pass_sets[opts.context_condition] : nullptr;
  const auto* both = r.pass_sets.contains(opts.combined_condition) ? &r.pass_sets[opts.combined_condition] : nullptr;
  for (Containment cls : {Containment::FullyContained, Containment::NotIncluded}) {
    ContainmentSplit split;
    split.containment = cls;
    for (const auto& [task, c] : containment) {
      if (c.vacuous || c.value != cls || r.excluded_trivial.contains(task) || !reference.contains(task)) continue;
      split.total.insert(task);
      if (ctx && ctx->contains(task)) {
        split.cpass.insert(task);
        if (both && both->contains(task)) split.bpass.insert(task);
      }
    }
    r.containment.push_back(std::move(split));
  }
  return r;
}

const IntersectionEntry* find_intersection(const IntersectionReport& r, std::vector<std::string> conditions) {
  std::sort(conditions.begin(), conditions.end());
  for (const auto& e : r.intersections) {
    auto sorted = e.conditions;
    std::sort(sorted.begin(), sorted.end());
    if (sorted == conditions) return &e;
  }
  return nullptr;
}

CountClass classify_count(std::size_t predicted, std::size_t actual) {
  if (predicted > actual) return CountClass::Higher;
  if (predicted == actual) return CountClass::Equal;
  return CountClass::Lower;
}

double CountComparisonReport::higher_percent() const { return percent(higher, total()); }
double CountComparisonReport::equal_percent() const { return percent(equal, total()); }
double CountComparisonReport::lower_percent() const { return percent(lower, total()); }

CountComparisonReport api_count_comparison(std::span<const CountInput> tasks) {
  CountComparisonReport r;
  for (const auto& t : tasks) {
    if (!t.actual || *t.actual == 0) {
      ++r.excluded;
      continue;
    }
    switch (classify_count(t.predicted, *t.actual)) {
      case CountClass::Higher:
        ++r.higher;
        break;
      case CountClass::Equal:
        ++r.equal;
        break;
      case CountClass::Lower:
        ++r.lower;
        break;
    }
  }
  return r;
}

RecallReport recall_metrics(std::span<const RecallInput> tasks) {
  RecallReport r;
  double recall = 0, brecall = 0, crecall = 0;
  for (const auto& t : tasks) {
    if (t.oracle.empty()) {
      ++r.excluded;
      continue;
    }
    std::size_t hit = 0, chit = 0;
    for (const auto& id : t.oracle) {
      bool retrieved = t.retrieved.contains(id);
      hit += retrieved;
      chit += retrieved || t.in_context.contains(id);
    }
    double n = static_cast<double>(t.oracle.size());
    recall += hit / n;
    crecall += chit / n;
    ++r.tasks;
    if (t.passed && t.oracle_passed) {
      brecall += hit / n;
      ++r.both_pass_tasks;
    }
  }
  if (r.tasks > 0) {
    r.recall = recall / static_cast<double>(r.tasks);
    r.crecall = crecall / static_cast<double>(r.tasks);
  }
  if (r.both_pass_tasks > 0) r.brecall = brecall / static_cast<double>(r.both_pass_tasks);
  return r;
}

LengthSummary summarize_lengths(std::vector<double> values) {
  LengthSummary s;
  s.count = values.size();
  if (values.empty()) return s;
  std::sort(values.begin(), values.end());
  s.min = values.front();
  s.max = values.back();
  std::size_t m = values.size() / 2;
  s.median = values.size() % 2 == 1 ? values[m] : (values[m - 1] + values[m]) / 2.0;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  return s;
}

LengthReport prompt_length_analysis(const std::map<std::string, std::size_t>& prompt_tokens,
                                    const std::set<std::string>& api_pass, const std::set<std::string>& conapi_pass) {
  LengthReport r;
  std::vector<double> both, api_only;
  for (const auto& task : api_pass) {
    auto it = prompt_tokens.find(task);
    bool in_both = conapi_pass.contains(task);
    (in_both ? r.both_tasks : r.api_only_tasks).insert(task);
    if (it == prompt_tokens.end()) continue;
    (in_both ? both : api_only).push_back(static_cast<double>(it->second));
  }
  r.both_pass = summarize_lengths(std::move(both));
  r.api_only_pass = summarize_lengths(std::move(api_only));
  return r;
}

}  // namespace alliance
