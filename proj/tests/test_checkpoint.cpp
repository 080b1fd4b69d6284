#include "csdp/checkpoint.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <vector>

#include "csdp/error.hpp"
#include "csdp/rng.hpp"
#include "support.hpp"

using namespace csdp;
using namespace csdp::test;

namespace {

std::vector<Param> sample_params(std::uint64_t seed) {
  auto rng = make_rng(seed);
  std::vector<Param> out;
  Tensor a = Tensor::zeros({3, 4});
  for (Index i = 0; i < a.numel(); ++i) a[i] = draw_gaussian(rng);
  out.emplace_back("block.w", std::move(a));
  Tensor b = Tensor::zeros({4});
  for (Index i = 0; i < b.numel(); ++i) b[i] = draw_gaussian(rng);
  out.emplace_back("block.b", std::move(b));
  out.emplace_back("gain", Tensor::scalar(2.5));
  return out;
}

ParamGroup group_of(std::vector<Param>& params) {
  ParamGroup g;
  for (auto& p : params) g.push_back(&p);
  return g;
}

}  // namespace

TEST_CASE("checkpoint round trip restores values and seed bit for bit") {
  auto dir = temp_dir("ckpt");
  auto params = sample_params(1);
  save_checkpoint(dir / "a.ckpt", group_of(params), 0xdeadbeefcafe1234ULL);

  auto fresh = sample_params(2);  // same layout, different values
  std::uint64_t seed = load_checkpoint(dir / "a.ckpt", group_of(fresh));
  CHECK(seed == 0xdeadbeefcafe1234ULL);
  for (size_t i = 0; i < params.size(); ++i)
    CHECK((fresh[i].value.array() == params[i].value.array()).all());
  CHECK(checkpoint_seed(dir / "a.ckpt") == 0xdeadbeefcafe1234ULL);
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint manifest is json with the declared fields") {
  auto dir = temp_dir("ckpt_manifest");
  auto params = sample_params(3);
  save_checkpoint(dir / "a.ckpt", group_of(params), 7);

  std::ifstream in(dir / "a.ckpt", std::ios::binary);
  std::uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 4);
  std::string manifest(len, '\0');
  in.read(manifest.data(), len);
  auto j = nlohmann::json::parse(manifest);
  CHECK(j["magic"] == kCheckpointMagic);
  CHECK(j["version"] == kCheckpointVersion);
  CHECK(j["seed"] == 7);
  REQUIRE(j["params"].size() == 3);
  CHECK(j["params"][0]["name"] == "block.w");
  CHECK(j["params"][0]["shape"] == nlohmann::json({3, 4}));
  CHECK(j["params"][0]["offset"] == 0);
  CHECK(j["params"][1]["offset"] == 12);
  CHECK(j["params"][2]["offset"] == 16);
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint refuses mismatched layouts") {
  auto dir = temp_dir("ckpt_mismatch");
  auto params = sample_params(4);
  save_checkpoint(dir / "a.ckpt", group_of(params), 7);

  SUBCASE("renamed param") {
    auto other = sample_params(5);
    other[1].name = "block.bias";
    CHECK_THROWS_WITH_AS(load_checkpoint(dir / "a.ckpt", group_of(other)),
                         doctest::Contains("block.b"), Error);
  }
  SUBCASE("reshaped param") {
    std::vector<Param> other;
    other.emplace_back("block.w", Tensor::zeros({4, 3}));
    other.emplace_back("block.b", Tensor::zeros({4}));
    other.emplace_back("gain", Tensor::scalar(0.0));
    CHECK_THROWS_AS(load_checkpoint(dir / "a.ckpt", group_of(other)), Error);
  }
  SUBCASE("missing param") {
    std::vector<Param> other;
    other.emplace_back("block.w", Tensor::zeros({3, 4}));
    CHECK_THROWS_AS(load_checkpoint(dir / "a.ckpt", group_of(other)), Error);
  }
  SUBCASE("extra param") {
    auto other = sample_params(6);
    other.emplace_back("extra", Tensor::scalar(0.0));
    CHECK_THROWS_AS(load_checkpoint(dir / "a.ckpt", group_of(other)), Error);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint rejects corrupt files") {
  auto dir = temp_dir("ckpt_corrupt");
  auto params = sample_params(7);

  SUBCASE("wrong magic") {
    save_checkpoint(dir / "a.ckpt", group_of(params), 7);
    std::fstream f(dir / "a.ckpt",
                   std::ios::binary | std::ios::in | std::ios::out);
    f.seekg(4);
    std::string manifest(64, '\0');
    f.read(manifest.data(), 64);
    auto at = manifest.find("CSDP1");
    REQUIRE(at != std::string::npos);
    f.seekp(4 + static_cast<std::streamoff>(at));
    f.write("XSDP1", 5);
    f.close();
    CHECK_THROWS_AS(checkpoint_seed(dir / "a.ckpt"), Error);
    CHECK_THROWS_AS(load_checkpoint(dir / "a.ckpt", group_of(params)), Error);
  }
  SUBCASE("truncated blob") {
    save_checkpoint(dir / "a.ckpt", group_of(params), 7);
    auto size = std::filesystem::file_size(dir / "a.ckpt");
    std::filesystem::resize_file(dir / "a.ckpt", size - 8);
    CHECK_THROWS_AS(load_checkpoint(dir / "a.ckpt", group_of(params)), Error);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_checkpoint(dir / "nope.ckpt", group_of(params)),
                    Error);
    CHECK_THROWS_AS(checkpoint_seed(dir / "nope.ckpt"), Error);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint bytes are deterministic") {
  auto dir = temp_dir("ckpt_det");
  auto params = sample_params(8);
  save_checkpoint(dir / "a.ckpt", group_of(params), 9);
  save_checkpoint(dir / "b.ckpt", group_of(params), 9);
  std::ifstream fa(dir / "a.ckpt", std::ios::binary);
  std::ifstream fb(dir / "b.ckpt", std::ios::binary);
  std::string a((std::istreambuf_iterator<char>(fa)), {});
  std::string b((std::istreambuf_iterator<char>(fb)), {});
  CHECK(a == b);
  CHECK(!a.empty());
  std::filesystem::remove_all(dir);
}
