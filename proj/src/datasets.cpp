#include "cvs/datasets.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cvs/error.hpp"
#include "cvs/image_io.hpp"
#include "cvs/rng.hpp"

namespace cvs {

namespace fs = std::filesystem;

namespace {

std::string padded(std::size_t i, int width = 6) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%0*zu", width, i);
  return buf;
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off) {
  if (off + 4 > b.size()) throw LoadError("truncated IDX header");
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

fs::path find_file(const fs::path& root, const std::vector<std::string>& names) {
  for (const auto& n : names) {
    if (fs::exists(root / n)) return root / n;
    if (fs::exists(root / (n + ".gz"))) return root / (n + ".gz");
  }
  throw LoadError("none of the expected files (" + names.front() + ", ...) exist under '" + root.string() + "'");
}

std::vector<LabeledSample> load_mnist(const DatasetSpec& spec) {
  const std::string prefix = spec.split == "test" ? "t10k" : "train";
  const auto images = read_maybe_gzip(find_file(spec.data_root, {prefix + "-images-idx3-ubyte", prefix + "-images.idx3-ubyte"}));
  const auto labels = read_maybe_gzip(find_file(spec.data_root, {prefix + "-labels-idx1-ubyte", prefix + "-labels.idx1-ubyte"}));
  if (read_be32(images, 0) != 0x803 || read_be32(labels, 0) != 0x801) throw LoadError("bad IDX magic in MNIST files");
  const std::size_t n = read_be32(images, 4);
  const int rows = static_cast<int>(read_be32(images, 8));
  const int cols = static_cast<int>(read_be32(images, 12));
  if (read_be32(labels, 4) != n) throw LoadError("MNIST image and label counts differ");
  const std::size_t px = static_cast<std::size_t>(rows) * cols;
  if (images.size() < 16 + n * px || labels.size() < 8 + n) throw LoadError("truncated MNIST files");
  std::vector<LabeledSample> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& s = out[i];
    s.id = spec.name + "-" + spec.split + "-" + padded(i);
    s.image = Image(rows, cols, 1);
    for (std::size_t j = 0; j < px; ++j) s.image.pixels[j] = images[16 + i * px + j] / 255.0f;
    s.label = labels[8 + i] + 1;
  }
  return out;
}

std::vector<LabeledSample> load_cifar(const DatasetSpec& spec, bool hundred) {
  std::vector<fs::path> files;
  if (hundred) {
    files.push_back(find_file(spec.data_root, {spec.split == "test" ? "test.bin" : "train.bin"}));
  } else if (spec.split == "test") {
    files.push_back(find_file(spec.data_root, {"test_batch.bin"}));
  } else {
    for (int b = 1; b <= 5; ++b) files.push_back(find_file(spec.data_root, {"data_batch_" + std::to_string(b) + ".bin"}));
  }
  const std::size_t label_bytes = hundred ? 2 : 1;
  const std::size_t record = label_bytes + 3072;
  std::vector<LabeledSample> out;
  for (const auto& f : files) {
    const auto bytes = read_maybe_gzip(f);
    if (bytes.size() % record != 0) throw LoadError("'" + f.string() + "' is not a CIFAR binary batch");
    for (std::size_t off = 0; off < bytes.size(); off += record) {
      LabeledSample s;
      s.id = spec.name + "-" + spec.split + "-" + padded(out.size());
      s.label = bytes[off + label_bytes - 1] + 1;
      s.image = Image(32, 32, 3);
      for (int c = 0; c < 3; ++c)
        for (int p = 0; p < 1024; ++p) s.image.pixels[static_cast<std::size_t>(p) * 3 + c] = bytes[off + label_bytes + c * 1024 + p] / 255.0f;
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<LabeledSample> load_manifest_samples(const DatasetSpec& spec, int num_classes) {
  std::vector<LabeledSample> out;
  for (const auto& rec : read_manifest(spec.source)) {
    LabeledSample s;
    s.id = rec.id;
    s.image = read_image(rec.image_path);
    s.label = rec.label;
    if (rec.mask_path) s.mask = read_mask(*rec.mask_path, num_classes > 0 ? num_classes : kMaxClasses);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

Dataset::Dataset(DatasetSpec spec, std::vector<LabeledSample> samples) : spec_(std::move(spec)), samples_(std::move(samples)) {
  const std::string where = spec_.name.empty() ? std::string("dataset") : spec_.name;
  if (samples_.empty()) throw ValidationError(where + ": no samples");
  if (spec_.size != 0 && spec_.size != samples_.size())
    throw ValidationError(where + ": expected " + std::to_string(spec_.size) + " samples, found " +
                          std::to_string(samples_.size()));
  spec_.size = samples_.size();

  if (spec_.num_classes == 0) {
    for (const auto& s : samples_) spec_.num_classes = std::max(spec_.num_classes, s.label);
  }
  if (spec_.num_classes < 1 || spec_.num_classes > kMaxClasses)
    throw ValidationError(where + ": class count must be in 1.." + std::to_string(kMaxClasses));
  if (spec_.image_shape.height == 0) {
    const Image& first = samples_.front().image;
    spec_.image_shape = {first.height, first.width, first.channels};
  }
  const auto [h, w, c] = spec_.image_shape;
  if (h < 1 || w < 1 || c < 1) throw ValidationError(where + ": image shape must be positive");

  std::sort(samples_.begin(), samples_.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    auto& s = samples_[i];
    if (s.label < 1 || s.label > spec_.num_classes)
      throw ValidationError(where + ": sample '" + s.id + "' has label " + std::to_string(s.label) + " outside 1.." +
                            std::to_string(spec_.num_classes));
    if (s.image.height != h || s.image.width != w || s.image.channels != c)
      throw ValidationError(where + ": sample '" + s.id + "' does not match image shape");
    if (s.mask) {
      if (s.mask->height != h || s.mask->width != w)
        throw ValidationError(where + ": mask of '" + s.id + "' does not match the image resolution");
      s.mask->num_classes = spec_.num_classes;
      try {
        s.mask->validate();
      } catch (const ValidationError& e) {
        throw ValidationError(where + ": mask of '" + s.id + "': " + e.what());
      }
    }
    if (!index_.emplace(s.id, i).second) throw ValidationError(where + ": duplicate sample id '" + s.id + "'");
  }
}

const LabeledSample& Dataset::by_id(const std::string& id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) throw ValidationError("unknown sample id '" + id + "'");
  return samples_[it->second];
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(static_cast<std::size_t>(spec_.num_classes) + 1, 0);
  for (const auto& s : samples_) ++counts[s.label];
  return counts;
}

std::vector<LabeledSample> Dataset::select(const std::vector<std::string>& ids) const {
  std::vector<LabeledSample> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(by_id(id));
  return out;
}

// ---------------------------------------------------------------------------

bool is_builtin_dataset(std::string_view id) {
  return id == "mnist" || id == "cifar10" || id == "cifar100" || id == "synthetic-shapes";
}

DatasetSpec builtin_spec(std::string_view id, std::string_view split, const fs::path& data_root) {
  if (split != "train" && split != "test") throw ConfigError("split must be 'train' or 'test'");
  DatasetSpec spec;
  spec.name = std::string(id);
  spec.source = std::string(id);
  spec.split = std::string(split);
  spec.data_root = data_root;
  if (id == "mnist") {
    spec.num_classes = 10;
    spec.image_shape = {28, 28, 1};
  } else if (id == "cifar10") {
    spec.num_classes = 10;
    spec.image_shape = {32, 32, 3};
  } else if (id == "cifar100") {
    spec.num_classes = 100;
    spec.image_shape = {32, 32, 3};
  } else if (id == "synthetic-shapes") {
    spec.num_classes = 3;
    spec.image_shape = {32, 32, 3};
    spec.size = split == "train" ? 300 : 100;
    spec.seed = split == "train" ? 1 : 2;
  } else {
    throw ConfigError("unknown built-in dataset '" + std::string(id) + "'");
  }
  return spec;
}

Dataset load_dataset(const DatasetSpec& spec) {
  std::vector<LabeledSample> samples;
  if (spec.source == "synthetic-shapes") {
    if (spec.size == 0) throw ConfigError("synthetic-shapes needs an explicit size");
    return Dataset(spec, generate_synthetic_shapes(spec.size, spec.seed, spec.num_classes > 0 ? spec.num_classes : 3,
                                                   spec.split)
                             .samples());
  }
  if (spec.source == "mnist") {
    samples = load_mnist(spec);
  } else if (spec.source == "cifar10" || spec.source == "cifar100") {
    samples = load_cifar(spec, spec.source == "cifar100");
  } else {
    if (spec.source.empty() || !fs::exists(spec.source))
      throw LoadError("dataset source '" + spec.source + "' does not exist");
    samples = load_manifest_samples(spec, spec.num_classes);
  }
  if (spec.size != 0 && samples.size() > spec.size) samples.resize(spec.size);
  return Dataset(spec, std::move(samples));
}

// ---------------------------------------------------------------------------
// Synthetic shapes

namespace {

bool inside_shape(int cls, double dy, double dx, double r) {
  switch (cls) {
    case 1:  // disk
      return dy * dy + dx * dx <= r * r;
    case 2:  // square of comparable area
      return std::abs(dy) <= 0.85 * r && std::abs(dx) <= 0.85 * r;
    case 3:  // upward triangle, apex at the top
      return dy >= -r && dy <= r && std::abs(dx) <= (dy + r) / 2.0;
    case 4:  // plus sign
      return (std::abs(dy) <= r && std::abs(dx) <= 0.3 * r) || (std::abs(dx) <= r && std::abs(dy) <= 0.3 * r);
    case 5: {  // ring
      const double d2 = dy * dy + dx * dx;
      return d2 <= r * r && d2 >= 0.36 * r * r;
    }
    default:
      return false;
  }
}

}  // namespace

Dataset generate_synthetic_shapes(std::size_t count, std::uint64_t seed, int num_classes, std::string_view split) {
  if (num_classes < 1 || num_classes > 5) throw ConfigError("synthetic-shapes supports 1 to 5 classes");
  if (count == 0) throw ConfigError("synthetic-shapes needs at least one sample");
  constexpr int kSize = 32;
  std::vector<LabeledSample> samples(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = make_rng(seed, "synthetic-shapes", i);
    LabeledSample& s = samples[i];
    s.label = static_cast<int>(i % num_classes) + 1;
    s.id = "shapes-" + std::string(split) + "-" + padded(i);
    s.image = Image(kSize, kSize, 3);
    s.mask = SegMask(kSize, kSize, num_classes);

    std::array<double, 3> bg{}, fg{};
    for (auto& v : bg) v = uniform(rng, 0.0, 0.35);
    for (auto& v : fg) v = uniform(rng, 0.55, 1.0);
    const double r = uniform(rng, 7.0, 12.0);
    const double cy = uniform(rng, r, kSize - 1 - r);
    const double cx = uniform(rng, r, kSize - 1 - r);
    for (int y = 0; y < kSize; ++y)
      for (int x = 0; x < kSize; ++x) {
        const bool fore = inside_shape(s.label, y - cy, x - cx, r);
        if (fore) s.mask->at(y, x) = static_cast<std::uint8_t>(s.label);
        const auto& base = fore ? fg : bg;
        for (int c = 0; c < 3; ++c)
          s.image.at(y, x, c) = static_cast<float>(std::clamp(base[c] + 0.05 * standard_normal(rng), 0.0, 1.0));
      }
  }
  DatasetSpec spec;
  spec.name = "synthetic-shapes";
  spec.source = "synthetic-shapes";
  spec.split = std::string(split);
  spec.num_classes = num_classes;
  spec.image_shape = {kSize, kSize, 3};
  spec.seed = seed;
  return Dataset(spec, std::move(samples));
}

// ---------------------------------------------------------------------------
// Manifests

std::vector<ManifestRecord> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open manifest '" + path.string() + "'");
  const fs::path base = path.parent_path();
  std::vector<ManifestRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (fields.size() != 4) throw LoadError(where + ": expected 4 tab-separated fields");
    ManifestRecord rec;
    rec.id = fields[0];
    if (rec.id.empty()) throw LoadError(where + ": empty id");
    rec.image_path = fs::path(fields[1]).is_absolute() ? fs::path(fields[1]) : base / fields[1];
    const auto& lab = fields[2];
    const auto [ptr, ec] = std::from_chars(lab.data(), lab.data() + lab.size(), rec.label);
    if (ec != std::errc{} || ptr != lab.data() + lab.size())
      throw LoadError(where + ": label '" + lab + "' is not an integer");
    if (fields[3] != "-") rec.mask_path = fs::path(fields[3]).is_absolute() ? fs::path(fields[3]) : base / fields[3];
    out.push_back(std::move(rec));
  }
  if (out.empty()) throw ValidationError("manifest '" + path.string() + "' has no records");
  return out;
}

void write_manifest(const fs::path& path, const std::vector<ManifestRecord>& records) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path base = fs::absolute(path).parent_path();
  auto rel = [&](const fs::path& p) {
    const fs::path abs = fs::absolute(p);
    const fs::path r = abs.lexically_relative(base);
    return (!r.empty() && *r.begin() != "..") ? r.generic_string() : abs.generic_string();
  };
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw Error("cannot write manifest '" + path.string() + "'");
    for (const auto& r : records)
      out << r.id << '\t' << rel(r.image_path) << '\t' << r.label << '\t' << (r.mask_path ? rel(*r.mask_path) : "-")
          << '\n';
  }
  fs::rename(tmp, path);
}

std::vector<ManifestRecord> export_samples(const std::vector<LabeledSample>& samples, const fs::path& dir) {
  std::vector<ManifestRecord> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    ManifestRecord r;
    r.id = s.id;
    r.label = s.label;
    r.image_path = dir / "images" / (s.id + ".png");
    write_png(r.image_path, s.image);
    if (s.mask) {
      r.mask_path = dir / "masks" / (s.id + ".png");
      write_mask(*r.mask_path, *s.mask);
    }
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::string> sample_per_class(const Dataset& dataset, const SubsetSpec& subset) {
  std::vector<std::string> ids;
  if (!subset.per_class) {
    for (const auto& s : dataset) ids.push_back(s.id);
    return ids;
  }
  const int m = *subset.per_class;
  if (m < 1) throw ConfigError("samples per class must be at least 1");
  const int p = dataset.num_classes();
  std::vector<std::vector<std::string>> by_class(static_cast<std::size_t>(p) + 1);
  for (const auto& s : dataset) by_class[s.label].push_back(s.id);
  for (int c = 1; c <= p; ++c)
    if (static_cast<int>(by_class[c].size()) < m)
      throw ValidationError("class " + std::to_string(c) + " has only " + std::to_string(by_class[c].size()) +
                            " samples, fewer than the requested " + std::to_string(m) + " per class");
  for (int c = 1; c <= p; ++c) {
    auto& pool = by_class[c];
    Rng rng = make_rng(subset.seed, "subset", static_cast<std::uint64_t>(c));
    shuffle(pool.begin(), pool.end(), rng);
    ids.insert(ids.end(), pool.begin(), pool.begin() + m);
  }
  return ids;
}

Dataset adapt_dataset(const Dataset& dataset, int height, int width, int channels) {
  const ImageShape target{height, width, channels};
  if (dataset.image_shape() == target) return dataset;
  std::vector<LabeledSample> out;
  out.reserve(dataset.size());
  for (const auto& s : dataset) {
    LabeledSample t = s;
    t.image = replicate_channels(resize_bilinear(s.image, height, width), channels);
    if (s.mask) t.mask = resize_nearest(*s.mask, height, width);
    out.push_back(std::move(t));
  }
  DatasetSpec spec = dataset.spec();
  spec.image_shape = target;
  return Dataset(spec, std::move(out));
}

}  // namespace cvs
