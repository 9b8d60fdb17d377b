#include "cvs/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "cvs/error.hpp"

namespace cvs {

namespace fs = std::filesystem;

namespace {

constexpr char kArchiveMagic[8] = {'C', 'V', 'S', 'T', 'E', 'N', '0', '1'};

template <typename U>
void put(std::string& out, U v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename U>
U take(const std::string& in, std::size_t& off, const fs::path& path) {
  if (off + sizeof(U) > in.size()) throw LoadError("truncated tensor archive '" + path.string() + "'");
  U v;
  std::memcpy(&v, in.data() + off, sizeof v);
  off += sizeof v;
  return v;
}

}  // namespace

void write_file_atomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw Error("short write to '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_tensor_archive(const fs::path& path, const std::map<std::string, Tensor<float>>& tensors) {
  std::string out(kArchiveMagic, sizeof kArchiveMagic);
  put<std::uint64_t>(out, tensors.size());
  for (const auto& [name, t] : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) put<std::int32_t>(out, d);
    out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(float));
  }
  write_file_atomic(path, out);
}

std::map<std::string, Tensor<float>> read_tensor_archive(const fs::path& path) {
  const std::string in = read_text_file(path);
  if (in.size() < sizeof kArchiveMagic || std::memcmp(in.data(), kArchiveMagic, sizeof kArchiveMagic) != 0)
    throw LoadError("'" + path.string() + "' is not a tensor archive");
  std::size_t off = sizeof kArchiveMagic;
  const auto count = take<std::uint64_t>(in, off, path);
  std::map<std::string, Tensor<float>> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = take<std::uint32_t>(in, off, path);
    if (off + len > in.size()) throw LoadError("truncated tensor archive '" + path.string() + "'");
    std::string name = in.substr(off, len);
    off += len;
    const auto rank = take<std::uint32_t>(in, off, path);
    std::vector<int> shape(rank);
    for (auto& d : shape) {
      d = take<std::int32_t>(in, off, path);
      if (d < 0) throw LoadError("negative dimension in '" + path.string() + "'");
    }
    const std::size_t n = Tensor<float>::count(shape);
    if (off + n * sizeof(float) > in.size()) throw LoadError("truncated tensor archive '" + path.string() + "'");
    std::vector<float> data(n);
    std::memcpy(data.data(), in.data() + off, n * sizeof(float));
    off += n * sizeof(float);
    out.emplace(std::move(name), Tensor<float>(std::move(shape), std::move(data)));
  }
  return out;
}

bool checkpoint_exists(const fs::path& dir) { return fs::exists(dir / "meta.json") && fs::exists(dir / "params.bin"); }

void save_checkpoint(const fs::path& dir, const Checkpoint& ck) {
  fs::create_directories(dir);
  write_file_atomic(dir / "graph.json", nlohmann::json(ck.network).dump(1) + "\n");
  write_tensor_archive(dir / "params.bin", ck.params.tensors);
  write_tensor_archive(dir / "optimizer.bin", ck.velocity);
  nlohmann::json meta{{"format", kCheckpointFormat},
                      {"epoch", ck.params.epoch},
                      {"config_hash", ck.params.config_hash},
                      {"best_metric", ck.best_metric},
                      {"train_config", ck.train_config}};
  // meta.json goes last: its presence marks a complete checkpoint.
  write_file_atomic(dir / "meta.json", meta.dump(1) + "\n");
}

Checkpoint load_checkpoint(const fs::path& dir) {
  if (!checkpoint_exists(dir)) throw LoadError("no checkpoint in '" + dir.string() + "'");
  Checkpoint ck;
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_text_file(dir / "meta.json"));
    if (meta.at("format").get<std::string>() != kCheckpointFormat)
      throw LoadError("unsupported checkpoint format '" + meta.at("format").get<std::string>() + "'");
    ck.network = nlohmann::json::parse(read_text_file(dir / "graph.json")).get<NetworkSpec>();
    ck.params.epoch = meta.at("epoch").get<int>();
    ck.params.config_hash = meta.at("config_hash").get<std::string>();
    ck.best_metric = meta.at("best_metric").get<double>();
    ck.train_config = meta.value("train_config", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("corrupt checkpoint metadata in '" + dir.string() + "': " + e.what());
  }
  ck.params.tensors = read_tensor_archive(dir / "params.bin");
  if (fs::exists(dir / "optimizer.bin")) ck.velocity = read_tensor_archive(dir / "optimizer.bin");
  return ck;
}

}  // namespace cvs
