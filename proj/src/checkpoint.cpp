#include "geoecon/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "geoecon/error.hpp"

namespace geoecon {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are written in native order; big-endian hosts need a swap");

const Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, t] : params)
    if (n == name) return t;
  throw NotFoundError("checkpoint has no parameter '" + name + "'");
}

void save_checkpoint(const fs::path& dir, const Checkpoint& ckpt) {
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "geoecon-ckpt";
  manifest["version"] = 1;
  manifest["meta"] = ckpt.meta;
  manifest["params"] = nlohmann::json::array();
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    const auto& [name, t] = ckpt.params[i];
    const std::string file = std::to_string(i) + "_" + name + ".bin";
    std::ofstream out(dir / file, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / file).string());
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!out) throw IoError("short write to " + (dir / file).string());
    manifest["params"].push_back(
        {{"name", name}, {"shape", t.shape()}, {"dtype", "f64le"}, {"file", file}});
  }
  const fs::path tmp = dir / "manifest.json.tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << manifest.dump(2) << "\n";
    if (!out) throw IoError("cannot write " + tmp.string());
  }
  fs::rename(tmp, dir / "manifest.json");
}

Checkpoint load_checkpoint(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw NotFoundError("no checkpoint manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "geoecon-ckpt" || manifest.value("version", 0) != 1)
    throw FormatError("unsupported checkpoint format in " + dir.string());

  Checkpoint ckpt;
  ckpt.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& p : manifest.at("params")) {
    if (p.at("dtype") != "f64le") throw FormatError("unsupported dtype " + p.at("dtype").dump());
    const auto shape = p.at("shape").get<Shape>();
    const fs::path file = dir / p.at("file").get<std::string>();
    std::ifstream blob(file, std::ios::binary);
    if (!blob) throw FormatError("missing parameter blob " + file.string());
    std::vector<double> data(shape_numel(shape));
    blob.read(reinterpret_cast<char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (blob.gcount() != static_cast<std::streamsize>(data.size() * sizeof(double)) ||
        blob.peek() != std::char_traits<char>::eof())
      throw FormatError("parameter blob size mismatch: " + file.string());
    ckpt.params.emplace_back(p.at("name").get<std::string>(), Tensor(shape, std::move(data)));
  }
  return ckpt;
}

}  // namespace geoecon
