#include "csdp/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <vector>

#include <json.hpp>

#include "csdp/error.hpp"

namespace csdp {

using nlohmann::json;

namespace {

json read_manifest(std::ifstream& in, const std::filesystem::path& path) {
  std::uint32_t len = 0;
  char lenbuf[4];
  require(static_cast<bool>(in.read(lenbuf, 4)), "checkpoint ", path.string(),
          ": truncated header");
  std::memcpy(&len, lenbuf, 4);
  std::string text(len, '\0');
  require(static_cast<bool>(in.read(text.data(), len)), "checkpoint ", path.string(),
          ": truncated manifest");
  json m = json::parse(text, nullptr, false);
  require(!m.is_discarded(), "checkpoint ", path.string(), ": manifest is not JSON");
  require(m.value("magic", "") == kCheckpointMagic, "checkpoint ", path.string(),
          ": bad magic");
  return m;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamGroup& params,
                     std::uint64_t seed) {
  json manifest;
  manifest["magic"] = kCheckpointMagic;
  manifest["version"] = kCheckpointVersion;
  manifest["seed"] = seed;
  json plist = json::array();
  std::uint64_t offset = 0;
  for (const Param* p : params) {
    json e;
    e["name"] = p->name;
    e["shape"] = p->value.shape();
    e["offset"] = offset;
    plist.push_back(std::move(e));
    offset += static_cast<std::uint64_t>(p->value.numel());
  }
  manifest["params"] = std::move(plist);
  std::string text = manifest.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), "cannot write checkpoint ", path.string());
  std::uint32_t len = static_cast<std::uint32_t>(text.size());
  char lenbuf[4];
  std::memcpy(lenbuf, &len, 4);
  out.write(lenbuf, 4);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const Param* p : params)
    out.write(reinterpret_cast<const char*>(p->value.array().data()),
              static_cast<std::streamsize>(p->value.numel() * sizeof(double)));
  out.flush();
  require(out.good(), "short write on checkpoint ", path.string());
}

std::uint64_t load_checkpoint(const std::filesystem::path& path,
                              const ParamGroup& params) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open checkpoint ", path.string());
  json m = read_manifest(in, path);

  std::map<std::string, const json*> by_name;
  for (const json& e : m.at("params")) by_name[e.at("name").get<std::string>()] = &e;
  require(by_name.size() == m.at("params").size(), "checkpoint ", path.string(),
          ": duplicate param names");
  require(by_name.size() == params.size(), "checkpoint ", path.string(), ": holds ",
          by_name.size(), " params, model has ", params.size());

  std::vector<double> blob;
  {
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    require(bytes.size() % sizeof(double) == 0, "checkpoint ", path.string(),
            ": blob length not a multiple of 8");
    blob.resize(bytes.size() / sizeof(double));
    std::memcpy(blob.data(), bytes.data(), bytes.size());
  }

  for (Param* p : params) {
    auto it = by_name.find(p->name);
    require(it != by_name.end(), "checkpoint ", path.string(), ": missing param '",
            p->name, "'");
    const json& e = *it->second;
    Shape shape = e.at("shape").get<Shape>();
    require(shape == p->value.shape(), "checkpoint ", path.string(), ": param '",
            p->name, "' has shape ", shape_str(shape), ", model expects ",
            shape_str(p->value.shape()));
    std::uint64_t off = e.at("offset").get<std::uint64_t>();
    std::uint64_t n = static_cast<std::uint64_t>(p->value.numel());
    require(off + n <= blob.size(), "checkpoint ", path.string(), ": param '", p->name,
            "' extends past blob end");
    std::memcpy(p->value.array().data(), blob.data() + off, n * sizeof(double));
  }
  return m.value("seed", std::uint64_t{0});
}

std::uint64_t checkpoint_seed(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open checkpoint ", path.string());
  json m = read_manifest(in, path);
  return m.value("seed", std::uint64_t{0});
}

}  // namespace csdp
