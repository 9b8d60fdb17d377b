#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "cvs/evaluation.hpp"
#include "cvs/network.hpp"

namespace cvs {

/// Human annotation seconds per image.
struct AnnotationRates {
  double t_class = 0.0;  // class label
  double t_seg = 0.0;    // manual segmentation

  void validate() const;
};

/// Measured rates: CIFAR-10 3.5 s / 29.52 s; CIFAR-100 8.5 s per class label, with the CIFAR-10
/// segmentation time since its masks come from CIFAR-10 models. Other datasets use the CIFAR-10
/// rates.
AnnotationRates rates_for(std::string_view dataset);

/// Classification-only methods pay n_class * t_class; segmentation-based methods add
/// n_seg * t_seg.
double annotation_cost(Method method, std::int64_t n_class_labeled, std::int64_t n_seg_labeled,
                       const AnnotationRates& rates);

struct CostPoint {
  std::string method;
  std::int64_t n_class_labeled = 0;
  std::int64_t n_seg_labeled = 0;
  double total_seconds = 0.0;
  double accuracy = 0.0;
  double compute_marker = 0.0;

  bool operator==(const CostPoint&) const = default;
};

/// One point per successful report, sorted by total_seconds (stable). Reports without labelling
/// counts raise ValidationError naming the report.
std::vector<CostPoint> emit_cost_curve(const std::vector<EvalReport>& reports, const AnnotationRates& rates);

/// Rows `method<TAB>seconds<TAB>accuracy<TAB>compute_marker`, no header.
std::string format_cost_rows(const std::vector<CostPoint>& points);

struct CostRow {
  std::string method;
  double seconds = 0.0;
  double accuracy = 0.0;
  double compute_marker = 0.0;

  bool operator==(const CostRow&) const = default;
};

std::vector<CostRow> parse_cost_rows(const std::string& text);

}  // namespace cvs
