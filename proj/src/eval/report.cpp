#include <algorithm>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "alliance/eval.hpp"

namespace alliance {

namespace {

std::string pad(std::string_view s, std::size_t width) {
  std::string out(s);
  if (out.size() < width) out.append(width - out.size(), ' ');
  return out;
}

std::string summary_line(std::string_view name, const LengthSummary& s) {
  if (s.empty()) return fmt::format("{}: empty\n", name);
  return fmt::format("{}: n={} min={:.0f} median={:.1f} mean={:.1f} max={:.0f}\n", name, s.count, s.min, s.median,
                     s.mean, s.max);
}

}  // namespace

std::string format_count_percent(double v) { return v < 10.0 ? fmt::format("{:.1f}", v) : fmt::format("{:.2f}", v); }

std::string format_fraction(std::size_t part, std::size_t whole) {
  double p = whole == 0 ? 0.0 : 100.0 * static_cast<double>(part) / static_cast<double>(whole);
  return fmt::format("{} ({:.1f}%)", part, p);
}

std::string render_containment_row(const ContainmentSplit& s) {
  return fmt::format("{} / {}", format_fraction(s.cpass.size(), s.total.size()),
                     format_fraction(s.bpass.size(), s.cpass.size()));
}

std::string render_count_row(const CountComparisonReport& r) {
  return fmt::format("{} / {} / {}", format_count_percent(r.higher_percent()), format_count_percent(r.equal_percent()),
                     format_count_percent(r.lower_percent()));
}

std::string render_recall_row(const RecallReport& r) {
  return fmt::format("{:.2f} / {:.2f} / {:.2f}", 100.0 * r.recall, 100.0 * r.brecall, 100.0 * r.crecall);
}

std::string render_pass_at_k_table(std::span<const PassAtKRow> rows, std::span<const int> ks) {
  std::size_t name_w = 10;
  for (const auto& r : rows) name_w = std::max(name_w, r.name.size());
  std::map<int, double> best_est, best_emp;
  for (const auto& r : rows) {
    for (int k : ks) {
      if (r.estimator.contains(k)) best_est[k] = std::max(best_est[k], r.estimator.at(k));
      if (r.empirical.contains(k)) best_emp[k] = std::max(best_emp[k], r.empirical.at(k));
    }
  }
  auto cell = [](const std::map<int, double>& m, const std::map<int, double>& best, int k) {
    if (!m.contains(k)) return std::string("-");
    std::string v = fmt::format("{:.2f}", m.at(k));
    if (fmt::format("{:.2f}", best.at(k)) == v) v += '*';
    return v;
  };
  std::string out = pad("Condition", name_w);
  for (int k : ks) out += fmt::format("  {:>9}", fmt::format("Pass@{}", k));
  for (int k : ks) out += fmt::format("  {:>10}", fmt::format("any@{}", k));
  out += '\n';
  for (const auto& r : rows) {
    out += pad(r.name, name_w);
    for (int k : ks) out += fmt::format("  {:>9}", cell(r.estimator, best_est, k));
    for (int k : ks) out += fmt::format("  {:>10}", cell(r.empirical, best_emp, k));
    out += '\n';
  }
  return out;
}

std::string render_intersection(const IntersectionReport& r) {
  std::string out = fmt::format("Pass sets at Pass@{}\n", r.k);
  for (const auto& [cond, tasks] : r.pass_sets) {
    out += fmt::format("  {}: {} [{}]\n", cond, tasks.size(), fmt::join(tasks, ", "));
  }
  const IntersectionEntry* triple = find_intersection(r, {"Context", "API", "ConAPI"});
  if (triple != nullptr) {
    out += fmt::format("Context & API & ConAPI: {} [{}]\n", triple->tasks.size(), fmt::join(triple->tasks, ", "));
  }
  for (const auto& pair : std::vector<std::vector<std::string>>{{"Context", "API"}, {"Context", "ConAPI"}, {"API", "ConAPI"}}) {
    if (const IntersectionEntry* e = find_intersection(r, pair)) {
      out += fmt::format("{} & {}: {} [{}]\n", pair[0], pair[1], e->tasks.size(), fmt::join(e->tasks, ", "));
    }
  }
  out += fmt::format("Excluded (passed by Pure): {}\n", r.excluded_trivial.size());
  out += fmt::format("{:<18}{:>8}  {:<14}  {}\n", "Containment", "Total", "CPass", "BPass");
  for (const auto& s : r.containment) {
    out += fmt::format("{:<18}{:>8}  {:<14}  {}\n", to_string(s.containment), s.total.size(),
                       format_fraction(s.cpass.size(), s.total.size()), format_fraction(s.bpass.size(), s.cpass.size()));
  }
  return out;
}

std::string render_length_report(const LengthReport& r) {
  return summary_line("both pass", r.both_pass) + summary_line("API only", r.api_only_pass);
}

}  // namespace alliance
