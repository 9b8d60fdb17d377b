#include "cvs/cost_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "cvs/error.hpp"

namespace cvs {

void AnnotationRates::validate() const {
  if (!(t_class >= 0) || !(t_seg >= 0)) throw ConfigError("annotation rates must be non-negative");
}

AnnotationRates rates_for(std::string_view dataset) {
  if (dataset == "cifar100") return {8.5, 29.52};
  return {3.5, 29.52};
}

double annotation_cost(Method method, std::int64_t n_class_labeled, std::int64_t n_seg_labeled,
                       const AnnotationRates& rates) {
  if (n_class_labeled < 0 || n_seg_labeled < 0) throw ValidationError("annotation counts must be non-negative");
  rates.validate();
  const double class_cost = static_cast<double>(n_class_labeled) * rates.t_class;
  if (!uses_segmentation(method)) return class_cost;
  return class_cost + static_cast<double>(n_seg_labeled) * rates.t_seg;
}

std::vector<CostPoint> emit_cost_curve(const std::vector<EvalReport>& reports, const AnnotationRates& rates) {
  std::vector<CostPoint> points;
  for (const auto& r : reports) {
    if (!r.ok) continue;
    if (!r.n_class_labeled || !r.n_seg_labeled)
      throw ValidationError("report " + r.method + "/m=" + r.m + "/seed=" + std::to_string(r.seed) +
                            " lacks labelling counts");
    CostPoint p;
    p.method = r.method;
    p.n_class_labeled = *r.n_class_labeled;
    p.n_seg_labeled = *r.n_seg_labeled;
    p.total_seconds = annotation_cost(method_from_string(r.method), p.n_class_labeled, p.n_seg_labeled, rates);
    p.accuracy = r.top1;
    p.compute_marker = r.compute_marker;
    points.push_back(std::move(p));
  }
  std::stable_sort(points.begin(), points.end(),
                   [](const CostPoint& a, const CostPoint& b) { return a.total_seconds < b.total_seconds; });
  return points;
}

std::string format_cost_rows(const std::vector<CostPoint>& points) {
  std::string out;
  char buf[128];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "\t%.17g\t%.17g\t%.17g\n", p.total_seconds, p.accuracy, p.compute_marker);
    out += p.method + buf;
  }
  return out;
}

std::vector<CostRow> parse_cost_rows(const std::string& text) {
  std::vector<CostRow> rows;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) f.push_back(field);
    if (f.size() != 4) throw ValidationError("cost row " + std::to_string(lineno) + ": expected 4 fields");
    try {
      rows.push_back({f[0], std::stod(f[1]), std::stod(f[2]), std::stod(f[3])});
    } catch (const std::logic_error&) {
      throw ValidationError("cost row " + std::to_string(lineno) + ": bad number");
    }
  }
  return rows;
}

}  // namespace cvs
