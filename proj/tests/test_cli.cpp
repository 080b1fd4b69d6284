// Drives the csdp binary as a subprocess and checks artifacts, exit codes,
// configuration precedence, and stage skipping.

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <doctest.h>
#include <json.hpp>

#include "csdp/data.hpp"
#include "csdp/rng.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace csdp;

namespace {

constexpr double kPi = 3.14159265358979323846;

fs::path scratch_root() {
  static fs::path root = [] {
    fs::path p = fs::temp_directory_path() / "csdp_cli_scratch";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

fs::path fresh_dir(const std::string& name) {
  fs::path p = scratch_root() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

int count_lines(const std::string& s) {
  int n = 0;
  for (char c : s)
    if (c == '\n') ++n;
  return n;
}

struct RunResult {
  int code = -1;
  std::string out, err;
};

RunResult run_cli(const std::string& args, const std::string& env = "") {
  static int counter = 0;
  fs::path so = scratch_root() / ("stdout" + std::to_string(counter) + ".txt");
  fs::path se = scratch_root() / ("stderr" + std::to_string(counter) + ".txt");
  ++counter;
  std::string cmd = env + (env.empty() ? "" : " ") + CSDP_BIN + " " + args +
                    " > " + so.string() + " 2> " + se.string();
  int raw = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = slurp(so);
  r.err = slurp(se);
  return r;
}

// 12 train + 4 test series, two separable sinusoid classes, one channel.
Dataset cli_dataset(std::uint64_t seed, bool hide_test_labels = false) {
  Dataset d;
  d.classes = 2;
  const Index len = 40;
  int sid = 0;
  for (int cls = 0; cls < 2; ++cls) {
    for (int k = 0; k < 8; ++k) {
      auto rng = make_rng(derive_seed(seed, static_cast<std::uint64_t>(cls),
                                      static_cast<std::uint64_t>(k)));
      Matrix m(1, len);
      for (Index t = 0; t < len; ++t) {
        double phase = 0.37 * k;
        m(0, t) = (1.0 + cls) * std::sin((cls + 1) * 2.0 * kPi *
                                             static_cast<double>(t) /
                                             static_cast<double>(len) +
                                         phase) +
                  0.05 * draw_gaussian(rng);
      }
      bool is_test = k >= 6;
      TimeSeries s;
      s.values = m;
      s.series_id = sid++;
      d.series.push_back(s);
      d.labels.push_back(is_test && hide_test_labels ? -1 : cls);
      d.split.push_back(is_test ? Split::test : Split::train);
      d.label_mask.push_back(is_test && hide_test_labels ? 0 : 1);
    }
  }
  return d;
}

// Shared CSV fixture; written once per process.
fs::path fixture_csv() {
  static fs::path p = [] {
    fs::path path = scratch_root() / "toy.csv";
    serialize_long_csv(cli_dataset(11), path);
    return path;
  }();
  return p;
}

fs::path fixture_csv_hidden_test() {
  static fs::path p = [] {
    fs::path path = scratch_root() / "toy_hidden.csv";
    serialize_long_csv(cli_dataset(11, true), path);
    return path;
  }();
  return p;
}

std::string common(const fs::path& out) {
  return "--data " + fixture_csv().string() + " --out " + out.string() +
         " --d-target 6 --ssm-state 3 --gin-layers 1 --topk 3 --seed 5";
}

}  // namespace

TEST_CASE("pretrain writes checkpoint, trace, and manifest; rerun skips") {
  fs::path out = fresh_dir("pre");
  RunResult r = run_cli("pretrain " + common(out) + " --epochs 0");
  CAPTURE(r.err);
  CHECK(r.code == 0);
  CHECK(fs::exists(out / "temcl.ckpt"));
  CHECK(slurp(out / "pretrain_loss.csv") == "epoch,loss\n");

  json m = json::parse(slurp(out / "manifest_pretrain.json"));
  CHECK(m["command"] == "pretrain");
  CHECK(m["seed"] == 5);
  CHECK(m["config"]["d_target"] == 6);
  CHECK(m["config"]["mode"] == "full");
  CHECK(m["inputs"]["data"] == fixture_csv().string());
  CHECK(m.contains("tool_version"));
  CHECK(m["timestamps"].contains("started"));

  std::string bytes = slurp(out / "temcl.ckpt");
  RunResult again = run_cli("pretrain " + common(out) + " --epochs 0");
  CHECK(again.code == 0);
  CHECK(again.out.find("skipping") != std::string::npos);
  CHECK(slurp(out / "temcl.ckpt") == bytes);

  // A different epoch count invalidates the stage hash.
  RunResult more = run_cli("pretrain " + common(out) + " --epochs 2");
  CHECK(more.code == 0);
  CHECK(more.out.find("wrote") != std::string::npos);
  std::string trace = slurp(out / "pretrain_loss.csv");
  CHECK(count_lines(trace) == 3);  // header + 2 epochs
}

TEST_CASE("pretrain rejects bad inputs") {
  fs::path out = fresh_dir("pre_bad");
  CHECK(run_cli("pretrain --data /does/not/exist.csv --out " + out.string())
            .code == 2);
  CHECK(run_cli("pretrain " + common(out) + " --epochs -3").code == 2);
}

TEST_CASE("simmatrix requires an encoder unless raw, and records its meta") {
  fs::path out = fresh_dir("sim");
  RunResult no_ckpt = run_cli("simmatrix " + common(out));
  CHECK(no_ckpt.code == 2);
  CHECK(no_ckpt.err.find("pretrain") != std::string::npos);

  REQUIRE(run_cli("pretrain " + common(out) + " --epochs 0").code == 0);
  RunResult r = run_cli("simmatrix " + common(out) +
                        " --alpha 1.5 --radius 2");
  CAPTURE(r.err);
  CHECK(r.code == 0);
  CHECK(fs::exists(out / "distances.bin"));
  CHECK(fs::exists(out / "heatmap.csv"));

  json meta = json::parse(slurp(out / "distances.bin.json"));
  CHECK(meta["kind"] == "distance");
  CHECK(meta["n"] == 16);
  CHECK(meta["alpha"] == 1.5);
  CHECK(meta["topk"] == 3);
  CHECK(meta["radius"] == 2);

  SUBCASE("heatmap diagonal is exactly zero") {
    std::istringstream in(slurp(out / "heatmap.csv"));
    std::string line;
    int row = 0;
    while (std::getline(in, line)) {
      std::istringstream cells(line);
      std::string cell;
      for (int col = 0; std::getline(cells, cell, ','); ++col)
        if (col == row) CHECK(cell == "0");
      ++row;
    }
    CHECK(row == 16);
  }

  SUBCASE("rerun skips; --force recomputes; --raw measures something else") {
    RunResult again = run_cli("simmatrix " + common(out) +
                              " --alpha 1.5 --radius 2");
    CHECK(again.code == 0);
    CHECK(again.out.find("skipping") != std::string::npos);

    RunResult forced = run_cli("simmatrix " + common(out) +
                               " --alpha 1.5 --radius 2 --force");
    CHECK(forced.code == 0);
    CHECK(forced.out.find("wrote") != std::string::npos);

    std::string encoded = slurp(out / "distances.bin");
    fs::path out2 = fresh_dir("sim_raw");
    RunResult raw = run_cli("simmatrix " + common(out2) +
                            " --alpha 1.5 --radius 2 --raw");
    CHECK(raw.code == 0);
    CHECK(slurp(out2 / "distances.bin") != encoded);
  }
}

TEST_CASE("train needs its prerequisite artifacts per mode") {
  fs::path out = fresh_dir("train_pre");
  REQUIRE(run_cli("pretrain " + common(out) + " --epochs 0").code == 0);

  RunResult full = run_cli("train " + common(out) + " --epochs 2");
  CHECK(full.code == 2);
  CHECK(full.err.find("simmatrix") != std::string::npos);

  RunResult dp = run_cli("train " + common(out) +
                         " --mode only_dpmamba --epochs 2 --lr 0.02");
  CAPTURE(dp.err);
  CHECK(dp.code == 0);
  CHECK(fs::exists(out / "model.ckpt"));

  RunResult knn = run_cli("train " + common(out) +
                          " --mode only_contrastfastdtw --epochs 2");
  CHECK(knn.code == 2);
  CHECK(knn.err.find("ablate") != std::string::npos);
}

TEST_CASE("train produces bit-identical metrics for a fixed seed") {
  fs::path out = fresh_dir("train_fix");
  REQUIRE(run_cli("pretrain " + common(out) + " --epochs 1").code == 0);
  REQUIRE(run_cli("simmatrix " + common(out)).code == 0);

  std::string args = "train " + common(out) + " --epochs 4 --lr 0.02";
  RunResult first = run_cli(args);
  CAPTURE(first.err);
  CHECK(first.code == 0);
  CHECK(fs::exists(out / "model.ckpt"));
  CHECK(fs::exists(out / "timing.json"));
  std::string metrics = slurp(out / "metrics.jsonl");
  std::string summary = slurp(out / "summary.json");
  std::string model = slurp(out / "model.ckpt");
  CHECK(count_lines(metrics) == 4);

  json s = json::parse(summary);
  CHECK(s["mode"] == "full");
  CHECK(s["epochs"] == 4);
  CHECK(s["seed"] == 5);
  CHECK(s.contains("test_accuracy"));
  CHECK(json::parse(slurp(out / "timing.json")).contains("wall_time_sec"));

  RunResult skip = run_cli(args);
  CHECK(skip.code == 0);
  CHECK(skip.out.find("skipping") != std::string::npos);

  RunResult redo = run_cli(args + " --force");
  CHECK(redo.code == 0);
  CHECK(slurp(out / "metrics.jsonl") == metrics);
  CHECK(slurp(out / "summary.json") == summary);
  CHECK(slurp(out / "model.ckpt") == model);
}

TEST_CASE("eval prints summary JSON and insists on test labels") {
  fs::path out = fresh_dir("eval");
  REQUIRE(run_cli("pretrain " + common(out) + " --epochs 0").code == 0);
  REQUIRE(run_cli("simmatrix " + common(out)).code == 0);
  REQUIRE(run_cli("train " + common(out) + " --epochs 4 --lr 0.02").code == 0);

  RunResult r = run_cli("eval " + common(out));
  CAPTURE(r.err);
  CHECK(r.code == 0);
  json s = json::parse(r.out);
  CHECK(s["mode"] == "full");
  CHECK(s["seed"] == 5);
  double acc = s["test_accuracy"].get<double>();
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
  Index total = 0;
  for (const auto& row : s["per_class"]) total += row["total"].get<Index>();
  CHECK(total == 4);

  RunResult hidden = run_cli("eval --data " + fixture_csv_hidden_test().string() +
                             " --out " + out.string() +
                             " --d-target 6 --ssm-state 3 --gin-layers 1"
                             " --topk 3 --seed 5");
  CHECK(hidden.code == 2);
  CHECK(hidden.err.find("test") != std::string::npos);

  RunResult no_model = run_cli("eval " + common(fresh_dir("eval_empty")));
  CHECK(no_model.code == 2);
  CHECK(no_model.err.find("train") != std::string::npos);
}

TEST_CASE("config file fills in what flags leave unset") {
  fs::path out = fresh_dir("cfg");
  REQUIRE(run_cli("pretrain " + common(out) + " --epochs 0").code == 0);

  fs::path cfg = scratch_root() / "cfg.json";
  {
    std::ofstream f(cfg);
    f << R"({"epochs": 3, "lr": 0.02, "mode": "only_dpmamba"})" << "\n";
  }
  std::string base = common(out) + " --config " + cfg.string();
  RunResult from_cfg = run_cli("train " + base);
  CAPTURE(from_cfg.err);
  CHECK(from_cfg.code == 0);
  CHECK(count_lines(slurp(out / "metrics.jsonl")) == 3);
  CHECK(json::parse(slurp(out / "summary.json"))["mode"] == "only_dpmamba");

  // An explicit flag wins over the config file.
  RunResult flag_wins = run_cli("train " + base + " --epochs 2 --force");
  CHECK(flag_wins.code == 0);
  CHECK(count_lines(slurp(out / "metrics.jsonl")) == 2);

  fs::path bad = scratch_root() / "bad_cfg.json";
  {
    std::ofstream f(bad);
    f << R"({"epochz": 3})" << "\n";
  }
  RunResult unknown = run_cli("train " + common(out) + " --config " + bad.string());
  CHECK(unknown.code == 2);
  CHECK(unknown.err.find("epochz") != std::string::npos);

  fs::path mangled = scratch_root() / "mangled.json";
  {
    std::ofstream f(mangled);
    f << "{not json";
  }
  CHECK(run_cli("train " + common(out) + " --config " + mangled.string()).code == 2);
}

TEST_CASE("CSDP_OUT_DIR supplies the default output directory") {
  fs::path out = fresh_dir("envdir");
  RunResult r = run_cli("pretrain --data " + fixture_csv().string() +
                            " --d-target 6 --seed 5 --epochs 0",
                        "CSDP_OUT_DIR=" + out.string());
  CAPTURE(r.err);
  CHECK(r.code == 0);
  CHECK(fs::exists(out / "temcl.ckpt"));
  CHECK(fs::exists(out / "manifest_pretrain.json"));
}

TEST_CASE("numeric divergence exits with its own code") {
  fs::path out = fresh_dir("diverge");
  REQUIRE(run_cli("pretrain " + common(out) + " --epochs 0").code == 0);
  RunResult r = run_cli("train " + common(out) +
                        " --mode only_dpmamba --epochs 4 --lr 1e300");
  CHECK(r.code == 3);
  CHECK(r.err.find("epoch") != std::string::npos);
}

TEST_CASE("gradcheck battery passes on a fresh process") {
  fs::path out = fresh_dir("gc");
  RunResult r = run_cli("gradcheck --out " + out.string() + " --seed 9");
  CAPTURE(r.out);
  CHECK(r.code == 0);
  int ok = 0;
  size_t pos = 0;
  while ((pos = r.out.find("[ok]", pos)) != std::string::npos) {
    ++ok;
    pos += 4;
  }
  CHECK(ok == 6);
  CHECK(r.out.find("[FAIL]") == std::string::npos);
  CHECK(fs::exists(out / "manifest_gradcheck.json"));
}

TEST_CASE("argument errors exit 2, help exits 0") {
  CHECK(run_cli("train --no-such-flag").code == 2);
  CHECK(run_cli("nosuchcommand").code == 2);
  CHECK(run_cli("").code == 2);
  CHECK(run_cli("--help").code == 0);
  CHECK(run_cli("train --help").code == 0);
}

TEST_CASE("ablate and sweep emit their tables") {
  fs::path out = fresh_dir("tables");
  std::string args = common(out) +
                     " --epochs 3 --pretrain-epochs 0 --lr 0.02 --radius 1";
  RunResult ab = run_cli("ablate " + args);
  CAPTURE(ab.err);
  CHECK(ab.code == 0);
  std::string table = slurp(out / "ablation.csv");
  CHECK(count_lines(table) == 5);
  CHECK(table.rfind("mode,final_loss,train_accuracy,test_accuracy\nfull,", 0) == 0);
  CHECK(table.find("\nonly_dpmamba,") != std::string::npos);
  CHECK(table.find("\nonly_kangin,") != std::string::npos);
  CHECK(table.find("\nonly_contrastfastdtw,") != std::string::npos);

  RunResult sw = run_cli("sweep " + args + " --fractions 0.5 1.0");
  CAPTURE(sw.err);
  CHECK(sw.code == 0);
  std::string sweep = slurp(out / "sweep.csv");
  CHECK(count_lines(sweep) == 3);
  CHECK(sweep.rfind("fraction,labeled_count,", 0) == 0);

  CHECK(run_cli("sweep " + args + " --fractions 1.5").code == 2);
}

TEST_CASE("a .ts train/test pair flows through the whole pipeline") {
  Dataset d = cli_dataset(23);
  Dataset train_half, test_half;
  train_half.classes = test_half.classes = d.classes;
  for (Index i = 0; i < d.size(); ++i) {
    Dataset& dst = d.split[static_cast<size_t>(i)] == Split::train ? train_half
                                                                   : test_half;
    TimeSeries s = d.series[static_cast<size_t>(i)];
    s.series_id = static_cast<int>(dst.series.size());
    dst.series.push_back(s);
    dst.labels.push_back(d.labels[static_cast<size_t>(i)]);
    dst.split.push_back(d.split[static_cast<size_t>(i)]);
    dst.label_mask.push_back(1);
  }
  fs::path train_ts = scratch_root() / "pair_train.ts";
  fs::path test_ts = scratch_root() / "pair_test.ts";
  test::write_ts(train_half, train_ts, "pair");
  test::write_ts(test_half, test_ts, "pair");

  fs::path out = fresh_dir("tspair");
  std::string io = "--data " + train_ts.string() + " --test-data " +
                   test_ts.string() + " --out " + out.string() +
                   " --d-target 6 --ssm-state 3 --gin-layers 1 --topk 3 --seed 5";
  REQUIRE(run_cli("pretrain " + io + " --epochs 0").code == 0);
  REQUIRE(run_cli("simmatrix " + io).code == 0);
  REQUIRE(run_cli("train " + io + " --epochs 4 --lr 0.02").code == 0);
  RunResult ev = run_cli("eval " + io);
  CAPTURE(ev.err);
  CHECK(ev.code == 0);
  json s = json::parse(ev.out);
  Index total = 0;
  for (const auto& row : s["per_class"]) total += row["total"].get<Index>();
  CHECK(total == 4);

  // CSV input refuses a second file; the split column already covers it.
  RunResult mixed = run_cli("pretrain --data " + fixture_csv().string() +
                            " --test-data " + test_ts.string() + " --out " +
                            fresh_dir("mixed").string() + " --epochs 0");
  CHECK(mixed.code == 2);
}
