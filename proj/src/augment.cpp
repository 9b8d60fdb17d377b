#include "cvs/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <set>

#include "cvs/error.hpp"
#include "cvs/rng.hpp"

namespace cvs {

namespace {

constexpr std::array<std::pair<TransformKind, std::string_view>, 7> kKindNames{{
    {TransformKind::rotate, "rotate"},
    {TransformKind::rotate_exact, "rotate_exact"},
    {TransformKind::shift_zoom, "shift_zoom"},
    {TransformKind::gaussian_noise, "gaussian_noise"},
    {TransformKind::color_distort, "color_distort"},
    {TransformKind::horizontal_flip, "horizontal_flip"},
    {TransformKind::crop_resize, "crop_resize"},
}};

// Maps an output pixel centre to the source coordinate it samples.
struct Affine {
  double a = 1, b = 0, c = 0;  // sx = a*x + b*y + c
  double d = 0, e = 1, f = 0;  // sy = d*x + e*y + f
};

float sample_bilinear(const Image& img, double sy, double sx, int ch) {
  if (sy < -1.0 || sx < -1.0 || sy > img.height || sx > img.width) return 0.0f;
  const int y0 = static_cast<int>(std::floor(sy));
  const int x0 = static_cast<int>(std::floor(sx));
  const double wy = sy - y0;
  const double wx = sx - x0;
  auto px = [&](int y, int x) -> double {
    if (y < 0 || x < 0 || y >= img.height || x >= img.width) return 0.0;
    return img.at(y, x, ch);
  };
  const double top = px(y0, x0) * (1 - wx) + px(y0, x0 + 1) * wx;
  const double bot = px(y0 + 1, x0) * (1 - wx) + px(y0 + 1, x0 + 1) * wx;
  return static_cast<float>(top * (1 - wy) + bot * wy);
}

void warp(LabeledSample& s, const Affine& m) {
  const int h = s.image.height;
  const int w = s.image.width;
  Image out(h, w, s.image.channels);
  std::optional<SegMask> mask;
  if (s.mask) mask = SegMask(h, w, s.mask->num_classes);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double sx = m.a * x + m.b * y + m.c;
      const double sy = m.d * x + m.e * y + m.f;
      for (int c = 0; c < out.channels; ++c) out.at(y, x, c) = sample_bilinear(s.image, sy, sx, c);
      if (mask) {
        const long ny = std::lround(sy);
        const long nx = std::lround(sx);
        if (ny >= 0 && nx >= 0 && ny < h && nx < w) mask->at(y, x) = s.mask->at(static_cast<int>(ny), static_cast<int>(nx));
      }
    }
  s.image = std::move(out);
  s.mask = std::move(mask);
}

// Rotation by `radians` and isotropic scale about the image centre, then a translation (pixels).
Affine centred(double radians, double scale, double ty, double tx, int h, int w) {
  const double cy = (h - 1) / 2.0;
  const double cx = (w - 1) / 2.0;
  const double cs = std::cos(radians) / scale;
  const double sn = std::sin(radians) / scale;
  // Inverse map: source = R(-theta)/scale * (out - centre - t) + centre.
  Affine m;
  m.a = cs;
  m.b = -sn;
  m.d = sn;
  m.e = cs;
  const double ox = -cx - tx;
  const double oy = -cy - ty;
  m.c = cs * ox - sn * oy + cx;
  m.f = sn * ox + cs * oy + cy;
  return m;
}

void flip(LabeledSample& s) {
  const int w = s.image.width;
  Image out = s.image;
  for (int y = 0; y < s.image.height; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < s.image.channels; ++c) out.at(y, x, c) = s.image.at(y, w - 1 - x, c);
  s.image = std::move(out);
  if (s.mask) {
    SegMask m = *s.mask;
    for (int y = 0; y < m.height; ++y)
      for (int x = 0; x < w; ++x) m.at(y, x) = s.mask->at(y, w - 1 - x);
    s.mask = std::move(m);
  }
}

// One counter-clockwise quarter turn: out(y, x) = in(x, n - 1 - y).
void quarter_turn(LabeledSample& s) {
  const int n = s.image.height;
  if (s.image.width != n) throw ShapeError("exact rotation needs a square image");
  Image out = s.image;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      for (int c = 0; c < s.image.channels; ++c) out.at(y, x, c) = s.image.at(x, n - 1 - y, c);
  s.image = std::move(out);
  if (s.mask) {
    SegMask m = *s.mask;
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) m.at(y, x) = s.mask->at(x, n - 1 - y);
    s.mask = std::move(m);
  }
}

void color_distort(Image& img, double strength, Rng& rng) {
  const double brightness = uniform(rng, 1 - strength, 1 + strength);
  const double contrast = uniform(rng, 1 - strength, 1 + strength);
  const double saturation = uniform(rng, 1 - strength, 1 + strength);
  for (auto& v : img.pixels) v = static_cast<float>(std::clamp(v * brightness, 0.0, 1.0));

  double mean = 0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      if (img.channels == 3)
        mean += 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
      else
        mean += img.at(y, x, 0);
    }
  mean /= static_cast<double>(img.height) * img.width;
  for (auto& v : img.pixels) v = static_cast<float>(std::clamp(mean + (v - mean) * contrast, 0.0, 1.0));

  if (img.channels != 3) return;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double gray = 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = static_cast<float>(std::clamp(gray + (img.at(y, x, c) - gray) * saturation, 0.0, 1.0));
    }
}

void apply(LabeledSample& s, const Transform& t, Rng& rng) {
  const int h = s.image.height;
  const int w = s.image.width;
  switch (t.kind) {
    case TransformKind::rotate: {
      const double deg = uniform(rng, -t.max_degrees, t.max_degrees);
      warp(s, centred(deg * std::numbers::pi / 180.0, 1.0, 0, 0, h, w));
      break;
    }
    case TransformKind::rotate_exact: {
      const int turns = ((t.quarter_turns % 4) + 4) % 4;
      for (int i = 0; i < turns; ++i) quarter_turn(s);
      break;
    }
    case TransformKind::shift_zoom: {
      const double ty = uniform(rng, -t.max_shift, t.max_shift) * h;
      const double tx = uniform(rng, -t.max_shift, t.max_shift) * w;
      const double zoom = uniform(rng, t.zoom_min, t.zoom_max);
      warp(s, centred(0.0, zoom, ty, tx, h, w));
      break;
    }
    case TransformKind::gaussian_noise:
      for (auto& v : s.image.pixels) v = static_cast<float>(std::clamp(v + t.sigma * standard_normal(rng), 0.0, 1.0));
      break;
    case TransformKind::color_distort:
      color_distort(s.image, t.strength, rng);
      break;
    case TransformKind::horizontal_flip:
      if (uniform01(rng) < t.prob) flip(s);
      break;
    case TransformKind::crop_resize: {
      const double area = uniform(rng, t.scale_min, t.scale_max);
      const double aspect = std::exp(uniform(rng, std::log(3.0 / 4.0), std::log(4.0 / 3.0)));
      const double ch = std::min(1.0, std::sqrt(area / aspect)) * h;
      const double cw = std::min(1.0, std::sqrt(area * aspect)) * w;
      const double y0 = uniform(rng, 0.0, h - ch);
      const double x0 = uniform(rng, 0.0, w - cw);
      Affine m;
      m.a = cw / w;
      m.c = x0 + 0.5 * cw / w - 0.5;
      m.e = ch / h;
      m.f = y0 + 0.5 * ch / h - 0.5;
      m.b = m.d = 0;
      warp(s, m);
      break;
    }
  }
}

void require(bool ok, const Transform& t, const char* what) {
  if (!ok) throw ConfigError(std::string(to_string(t.kind)) + ": " + what);
}

}  // namespace

std::string_view to_string(TransformKind kind) {
  for (const auto& [k, name] : kKindNames)
    if (k == kind) return name;
  return "unknown";
}

TransformKind transform_kind_from_string(std::string_view name) {
  for (const auto& [k, n] : kKindNames)
    if (n == name) return k;
  throw ConfigError("unknown transform '" + std::string(name) + "'");
}

bool Transform::geometric() const {
  return kind != TransformKind::gaussian_noise && kind != TransformKind::color_distort;
}

void Transform::validate() const {
  switch (kind) {
    case TransformKind::rotate:
      require(max_degrees >= 0 && max_degrees <= 180, *this, "max_degrees must be in [0, 180]");
      break;
    case TransformKind::rotate_exact:
      break;
    case TransformKind::shift_zoom:
      require(max_shift >= 0 && max_shift <= 0.5, *this, "max_shift must be in [0, 0.5]");
      require(zoom_min > 0 && zoom_min <= zoom_max && zoom_max <= 4, *this, "zoom range must satisfy 0 < min <= max <= 4");
      break;
    case TransformKind::gaussian_noise:
      require(sigma >= 0 && sigma <= 1, *this, "sigma must be in [0, 1]");
      break;
    case TransformKind::color_distort:
      require(strength >= 0 && strength <= 1, *this, "strength must be in [0, 1]");
      break;
    case TransformKind::horizontal_flip:
      require(prob >= 0 && prob <= 1, *this, "prob must be in [0, 1]");
      break;
    case TransformKind::crop_resize:
      require(scale_min > 0 && scale_min <= scale_max && scale_max <= 1, *this,
              "scale range must satisfy 0 < min <= max <= 1");
      break;
  }
}

Transform Transform::rotate(double max_degrees) {
  Transform t;
  t.kind = TransformKind::rotate;
  t.max_degrees = max_degrees;
  return t;
}

Transform Transform::rotate_exact(int quarter_turns) {
  Transform t;
  t.kind = TransformKind::rotate_exact;
  t.quarter_turns = quarter_turns;
  return t;
}

Transform Transform::shift_zoom(double max_shift, double zoom_min, double zoom_max) {
  Transform t;
  t.kind = TransformKind::shift_zoom;
  t.max_shift = max_shift;
  t.zoom_min = zoom_min;
  t.zoom_max = zoom_max;
  return t;
}

Transform Transform::gaussian_noise(double sigma) {
  Transform t;
  t.kind = TransformKind::gaussian_noise;
  t.sigma = sigma;
  return t;
}

Transform Transform::color_distort(double strength) {
  Transform t;
  t.kind = TransformKind::color_distort;
  t.strength = strength;
  return t;
}

Transform Transform::horizontal_flip(double prob) {
  Transform t;
  t.kind = TransformKind::horizontal_flip;
  t.prob = prob;
  return t;
}

Transform Transform::crop_resize(double scale_min, double scale_max) {
  Transform t;
  t.kind = TransformKind::crop_resize;
  t.scale_min = scale_min;
  t.scale_max = scale_max;
  return t;
}

void AugmentationPolicy::validate() const {
  for (const auto& t : transforms) t.validate();
}

LabeledSample augment(const LabeledSample& sample, const AugmentationPolicy& policy, std::uint64_t seed) {
  policy.validate();
  LabeledSample out = sample;
  if (policy.empty()) return out;
  Rng rng(seed);
  for (const auto& t : policy.transforms) apply(out, t, rng);
  for (auto& v : out.image.pixels) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

AugmentationPolicy default_policy(std::string_view dataset, Method method) {
  AugmentationPolicy p;
  if (dataset == "hrf") {
    p.transforms = {Transform::horizontal_flip(), Transform::rotate()};
    return p;
  }
  if (method == Method::classification || method == Method::multitask) {
    p.transforms = {Transform::crop_resize(), Transform::horizontal_flip()};
    return p;
  }
  if (dataset == "mnist") {
    p.transforms = {Transform::rotate(), Transform::shift_zoom(), Transform::gaussian_noise()};
  } else if (dataset == "cifar100") {
    p.transforms = {Transform::color_distort(), Transform::shift_zoom(), Transform::horizontal_flip()};
  } else {
    p.transforms = {Transform::rotate(), Transform::color_distort(), Transform::horizontal_flip()};
  }
  return p;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::string_view> fields_of(TransformKind kind) {
  switch (kind) {
    case TransformKind::rotate: return {"max_degrees"};
    case TransformKind::rotate_exact: return {"quarter_turns"};
    case TransformKind::shift_zoom: return {"max_shift", "zoom_min", "zoom_max"};
    case TransformKind::gaussian_noise: return {"sigma"};
    case TransformKind::color_distort: return {"strength"};
    case TransformKind::horizontal_flip: return {"prob"};
    case TransformKind::crop_resize: return {"scale_min", "scale_max"};
  }
  return {};
}

}  // namespace

void to_json(nlohmann::json& j, const Transform& t) {
  j = nlohmann::json{{"kind", std::string(to_string(t.kind))}};
  for (auto f : fields_of(t.kind)) {
    if (f == "max_degrees") j[f] = t.max_degrees;
    if (f == "quarter_turns") j[f] = t.quarter_turns;
    if (f == "max_shift") j[f] = t.max_shift;
    if (f == "zoom_min") j[f] = t.zoom_min;
    if (f == "zoom_max") j[f] = t.zoom_max;
    if (f == "sigma") j[f] = t.sigma;
    if (f == "strength") j[f] = t.strength;
    if (f == "prob") j[f] = t.prob;
    if (f == "scale_min") j[f] = t.scale_min;
    if (f == "scale_max") j[f] = t.scale_max;
  }
}

void from_json(const nlohmann::json& j, Transform& t) {
  if (!j.is_object() || !j.contains("kind")) throw ConfigError("transform needs a 'kind'");
  t = Transform{};
  t.kind = transform_kind_from_string(j.at("kind").get<std::string>());
  const auto allowed = fields_of(t.kind);
  for (const auto& [key, value] : j.items()) {
    if (key == "kind") continue;
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ConfigError("unknown key '" + key + "' for transform " + std::string(to_string(t.kind)));
    if (key == "max_degrees") t.max_degrees = value.get<double>();
    if (key == "quarter_turns") t.quarter_turns = value.get<int>();
    if (key == "max_shift") t.max_shift = value.get<double>();
    if (key == "zoom_min") t.zoom_min = value.get<double>();
    if (key == "zoom_max") t.zoom_max = value.get<double>();
    if (key == "sigma") t.sigma = value.get<double>();
    if (key == "strength") t.strength = value.get<double>();
    if (key == "prob") t.prob = value.get<double>();
    if (key == "scale_min") t.scale_min = value.get<double>();
    if (key == "scale_max") t.scale_max = value.get<double>();
  }
  t.validate();
}

void to_json(nlohmann::json& j, const AugmentationPolicy& p) { j = p.transforms; }

void from_json(const nlohmann::json& j, AugmentationPolicy& p) {
  if (!j.is_array()) throw ConfigError("augmentation policy must be a list of transforms");
  p.transforms = j.get<std::vector<Transform>>();
}

}  // namespace cvs
