#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cvs/datasets.hpp"
#include "cvs/network.hpp"

namespace cvs {

enum class TransformKind {
  rotate,           // uniform angle in [-max_degrees, max_degrees]
  rotate_exact,     // quarter_turns * 90 degrees counter-clockwise, lossless
  shift_zoom,       // translation up to max_shift * size, isotropic zoom in [zoom_min, zoom_max]
  gaussian_noise,   // additive N(0, sigma^2) per pixel
  color_distort,    // brightness, contrast and saturation jitter
  horizontal_flip,  // applied with probability prob
  crop_resize,      // random crop of area fraction in [scale_min, scale_max], resized back
};

std::string_view to_string(TransformKind kind);
TransformKind transform_kind_from_string(std::string_view name);

struct Transform {
  TransformKind kind = TransformKind::horizontal_flip;
  double max_degrees = 15.0;
  int quarter_turns = 1;
  double max_shift = 0.1;
  double zoom_min = 0.9;
  double zoom_max = 1.1;
  double sigma = 0.05;
  double strength = 0.4;
  double prob = 0.5;
  double scale_min = 0.6;
  double scale_max = 1.0;

  /// Geometric transforms move pixels and are mirrored on the mask; photometric ones touch the
  /// image only.
  bool geometric() const;
  /// Throws ConfigError when a parameter is outside its declared range.
  void validate() const;

  static Transform rotate(double max_degrees = 15.0);
  static Transform rotate_exact(int quarter_turns);
  static Transform shift_zoom(double max_shift = 0.1, double zoom_min = 0.9, double zoom_max = 1.1);
  static Transform gaussian_noise(double sigma = 0.05);
  static Transform color_distort(double strength = 0.4);
  static Transform horizontal_flip(double prob = 0.5);
  static Transform crop_resize(double scale_min = 0.6, double scale_max = 1.0);

  bool operator==(const Transform&) const = default;
};

struct AugmentationPolicy {
  std::vector<Transform> transforms;

  bool empty() const { return transforms.empty(); }
  void validate() const;
  bool operator==(const AugmentationPolicy&) const = default;
};

/// Applies the policy in order. Output pixels are clamped to [0,1]; masks are resampled with
/// nearest-neighbour lookups so their values stay class ids. The label is never changed.
LabeledSample augment(const LabeledSample& sample, const AugmentationPolicy& policy, std::uint64_t seed);

/// Training-time policy for a dataset family (`mnist`, `cifar10`, `cifar100`, `hrf`, anything
/// else) and method.
AugmentationPolicy default_policy(std::string_view dataset, Method method);

void to_json(nlohmann::json& j, const Transform& t);
void from_json(const nlohmann::json& j, Transform& t);
void to_json(nlohmann::json& j, const AugmentationPolicy& p);
void from_json(const nlohmann::json& j, AugmentationPolicy& p);

}  // namespace cvs
