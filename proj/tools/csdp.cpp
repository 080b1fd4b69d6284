// csdp: pipeline driver. Subcommands cover the full flow — contrastive
// pretraining, DTW similarity matrix, training, evaluation, ablations,
// label-fraction sweeps, and a gradient-check battery.
//
// Exit codes: 0 success, 2 parse/config/input error, 3 numeric divergence,
// 4 gradient check failure.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "csdp/checkpoint.hpp"
#include "csdp/data.hpp"
#include "csdp/dpmamba.hpp"
#include "csdp/error.hpp"
#include "csdp/kangin.hpp"
#include "csdp/optim.hpp"
#include "csdp/rng.hpp"
#include "csdp/simgraph.hpp"
#include "csdp/tape.hpp"
#include "csdp/temcl.hpp"
#include "csdp/tensor.hpp"
#include "csdp/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace csdp;

namespace {

constexpr const char* kToolVersion = "0.1.0";

struct Flags {
  TrainConfig c;  // flag storage; CLI11 writes straight into the fields
  std::string mode_s = "full";
  std::string order_s = "masked";
  std::string data, test_data, config, out, encoder, model, matrix;
  std::vector<double> fractions{0.05, 0.1, 1.0};
  bool zscore = true;
  bool force = false;
  bool raw = false;
};

// ---- option registration ----

void add_io_flags(CLI::App* sub, Flags& f, bool with_test = true) {
  sub->add_option("--data", f.data, "training data (.ts or long-form .csv)");
  if (with_test)
    sub->add_option("--test-data", f.test_data,
                    "test split as a second .ts file (only with .ts --data)");
  sub->add_option("--config", f.config, "JSON config file (flags override it)");
  sub->add_option("--out", f.out,
                  "output directory (default $CSDP_OUT_DIR, else ./csdp_out)");
  sub->add_flag("--zscore,!--no-zscore", f.zscore,
                "z-score normalize each series per channel (default on)");
  sub->add_flag("--force", f.force, "recompute even when outputs are up to date");
}

void add_config_flags(CLI::App* sub, Flags& f) {
  sub->add_option("--epochs", f.c.epochs, "training epochs");
  sub->add_option("--batch", f.c.batch, "batch size (0 = min(N, 64))");
  sub->add_option("--lr", f.c.lr, "Adam learning rate");
  sub->add_option("--pretrain-epochs", f.c.pretrain_epochs,
                  "contrastive pretraining epochs");
  sub->add_option("--margin", f.c.margin, "contrastive margin");
  sub->add_option("--sigma-scale", f.c.sigma_scale,
                  "noise scale for negative views");
  sub->add_option("--alpha", f.c.alpha, "similarity decay strength");
  sub->add_option("--topk", f.c.topk, "neighbors kept per row");
  sub->add_option("--radius", f.c.radius, "fastdtw refinement radius");
  sub->add_option("--d-target", f.c.d_target, "representation channels");
  sub->add_option("--ssm-state", f.c.ssm_state, "state dimension per pathway");
  sub->add_option("--gin-layers", f.c.gin_layers, "GIN layer count (1..3)");
  sub->add_option("--seed", f.c.seed, "RNG seed; fixed seed => bit-identical run");
  sub->add_option("--label-fraction", f.c.label_fraction,
                  "visible label fraction in (0, 1]");
  sub->add_option("--mode", f.mode_s,
                  "full | only_dpmamba | only_kangin | only_contrastfastdtw");
  sub->add_option("--workers", f.c.workers, "worker threads for the DTW matrix");
  sub->add_flag("--ssm-dense-a", f.c.ssm_dense_a, "learn a dense transition");
  sub->add_flag("--split-paths", f.c.split_paths,
                "separate parameters for the reverse pathway");
  sub->add_flag("--gin-unweighted", f.c.gin_unweighted,
                "aggregate with unit edge weights");
  sub->add_flag("--alg2-convention", f.c.alg2_convention,
                "swap pull/push roles in the contrastive loss");
  sub->add_option("--graph-order", f.order_s,
                  "masked | raw (scale before or after the -1 mask)");
}

// ---- config file: defaults < JSON < flags ----

void apply_config_file(const CLI::App* sub, Flags& f, TrainConfig& cfg) {
  std::ifstream in(f.config);
  require(in.good(), "cannot open config file: ", f.config);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail("config file ", f.config, ": ", e.what());
  }
  require(j.is_object(), "config file ", f.config, ": expected a JSON object");

  auto given = [&](const char* flag) {
    const CLI::Option* o = sub->get_option_no_throw(flag);
    return o != nullptr && o->count() > 0;
  };
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "epochs") {
        if (!given("--epochs")) cfg.epochs = v.get<int>();
      } else if (k == "batch") {
        if (!given("--batch")) cfg.batch = v.get<Index>();
      } else if (k == "lr") {
        if (!given("--lr")) cfg.lr = v.get<double>();
      } else if (k == "pretrain_epochs") {
        if (!given("--pretrain-epochs")) cfg.pretrain_epochs = v.get<int>();
      } else if (k == "margin") {
        if (!given("--margin")) cfg.margin = v.get<double>();
      } else if (k == "sigma_scale") {
        if (!given("--sigma-scale")) cfg.sigma_scale = v.get<double>();
      } else if (k == "alpha") {
        if (!given("--alpha")) cfg.alpha = v.get<double>();
      } else if (k == "topk") {
        if (!given("--topk")) cfg.topk = v.get<Index>();
      } else if (k == "radius") {
        if (!given("--radius")) cfg.radius = v.get<Index>();
      } else if (k == "d_target") {
        if (!given("--d-target")) cfg.d_target = v.get<Index>();
      } else if (k == "ssm_state") {
        if (!given("--ssm-state")) cfg.ssm_state = v.get<Index>();
      } else if (k == "gin_layers") {
        if (!given("--gin-layers")) cfg.gin_layers = v.get<Index>();
      } else if (k == "seed") {
        if (!given("--seed")) cfg.seed = v.get<std::uint64_t>();
      } else if (k == "label_fraction") {
        if (!given("--label-fraction")) cfg.label_fraction = v.get<double>();
      } else if (k == "mode") {
        if (!given("--mode")) cfg.mode = parse_train_mode(v.get<std::string>());
      } else if (k == "workers") {
        if (!given("--workers")) cfg.workers = v.get<int>();
      } else if (k == "ssm_dense_a") {
        if (!given("--ssm-dense-a")) cfg.ssm_dense_a = v.get<bool>();
      } else if (k == "split_paths") {
        if (!given("--split-paths")) cfg.split_paths = v.get<bool>();
      } else if (k == "gin_unweighted") {
        if (!given("--gin-unweighted")) cfg.gin_unweighted = v.get<bool>();
      } else if (k == "alg2_convention") {
        if (!given("--alg2-convention")) cfg.alg2_convention = v.get<bool>();
      } else if (k == "graph_order") {
        if (!given("--graph-order"))
          cfg.graph_order = parse_graph_order(v.get<std::string>());
      } else {
        fail("config file ", f.config, ": unknown key '", k, "'");
      }
    }
  } catch (const json::exception& e) {
    fail("config file ", f.config, ": ", e.what());
  }
}

TrainConfig resolve_config(const CLI::App* sub, Flags& f) {
  TrainConfig cfg = f.c;
  cfg.mode = parse_train_mode(f.mode_s);
  cfg.graph_order = parse_graph_order(f.order_s);
  if (!f.config.empty()) apply_config_file(sub, f, cfg);
  return cfg;
}

fs::path resolve_out_dir(const Flags& f) {
  if (!f.out.empty()) return f.out;
  if (const char* env = std::getenv("CSDP_OUT_DIR"); env != nullptr && *env != '\0')
    return env;
  return "csdp_out";
}

// ---- run manifest ----

json config_json(const TrainConfig& cfg) {
  return json{{"epochs", cfg.epochs},
              {"batch", cfg.batch},
              {"lr", cfg.lr},
              {"pretrain_epochs", cfg.pretrain_epochs},
              {"margin", cfg.margin},
              {"sigma_scale", cfg.sigma_scale},
              {"alpha", cfg.alpha},
              {"topk", cfg.topk},
              {"radius", cfg.radius},
              {"d_target", cfg.d_target},
              {"ssm_state", cfg.ssm_state},
              {"gin_layers", cfg.gin_layers},
              {"seed", cfg.seed},
              {"label_fraction", cfg.label_fraction},
              {"mode", mode_name(cfg.mode)},
              {"workers", cfg.workers},
              {"ssm_dense_a", cfg.ssm_dense_a},
              {"split_paths", cfg.split_paths},
              {"gin_unweighted", cfg.gin_unweighted},
              {"alg2_convention", cfg.alg2_convention},
              {"graph_order", cfg.graph_order == GraphOrder::masked ? "masked" : "raw"}};
}

std::string utc_now() {
  std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_manifest(const fs::path& out_dir, const std::string& command,
                    const TrainConfig& cfg, const json& inputs) {
  json m{{"command", command},
         {"tool_version", kToolVersion},
         {"seed", cfg.seed},
         {"config", config_json(cfg)},
         {"inputs", inputs},
         {"out_dir", out_dir.string()},
         {"timestamps", json{{"started", utc_now()}}}};
  fs::path p = out_dir / ("manifest_" + command + ".json");
  std::ofstream out(p);
  require(out.good(), "cannot write manifest: ", p.string());
  out << m.dump(2) << "\n";
}

json input_record(const Flags& f) {
  json j = json::object();
  if (!f.data.empty()) j["data"] = f.data;
  if (!f.test_data.empty()) j["test_data"] = f.test_data;
  if (!f.config.empty()) j["config"] = f.config;
  if (!f.data.empty()) j["zscore"] = f.zscore;
  return j;
}

// ---- content hashing for stage skipping ----

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

std::uint64_t fnv1a(std::uint64_t h, const char* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(p[i]);
    h *= kFnvPrime;
  }
  return h;
}

std::uint64_t hash_text(std::uint64_t h, const std::string& s) {
  return fnv1a(h, s.data(), s.size());
}

std::uint64_t hash_file(std::uint64_t h, const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  require(in.good(), "cannot open input file: ", p.string());
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
    h = fnv1a(h, buf, static_cast<std::size_t>(in.gcount()));
  return h;
}

std::string hash_hex(std::uint64_t h) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

bool stage_done(const fs::path& marker, std::uint64_t h,
                const std::vector<fs::path>& artifacts, bool force) {
  if (force) return false;
  std::ifstream in(marker);
  if (!in.good()) return false;
  std::string recorded;
  in >> recorded;
  if (recorded != hash_hex(h)) return false;
  for (const auto& a : artifacts)
    if (!fs::exists(a)) return false;
  return true;
}

void mark_stage(const fs::path& marker, std::uint64_t h) {
  std::ofstream out(marker);
  require(out.good(), "cannot write stage marker: ", marker.string());
  out << hash_hex(h) << "\n";
}

// ---- data loading ----

Dataset load_data(const Flags& f) {
  require(!f.data.empty(), "--data is required");
  fs::path p = f.data;
  require(fs::exists(p), "data file not found: ", p.string());
  Dataset d;
  if (p.extension() == ".ts") {
    d = parse_ts(p, Split::train);
    if (!f.test_data.empty()) {
      fs::path tp = f.test_data;
      require(fs::exists(tp), "test data file not found: ", tp.string());
      Dataset td = parse_ts(tp, Split::test);
      require(td.channels() == d.channels(), "channel mismatch: train has ",
              d.channels(), ", test has ", td.channels());
      for (Index i = 0; i < td.size(); ++i) {
        d.series.push_back(td.series[static_cast<size_t>(i)]);
        d.labels.push_back(td.labels[static_cast<size_t>(i)]);
        d.split.push_back(Split::test);
        d.label_mask.push_back(td.label_mask[static_cast<size_t>(i)]);
      }
      d.classes = std::max(d.classes, td.classes);
      for (Index i = 0; i < d.size(); ++i)
        d.series[static_cast<size_t>(i)].series_id = static_cast<int>(i);
    }
  } else {
    require(f.test_data.empty(),
            "--test-data only combines with a .ts training file; "
            "long CSV carries its own split column");
    d = parse_long_csv(p);
  }
  if (f.zscore) d = zscore_normalize(d);
  validate(d);
  return d;
}

EncoderParams load_encoder(const fs::path& ckpt, Index in_channels,
                           const TrainConfig& cfg) {
  require(fs::exists(ckpt), "encoder checkpoint not found: ", ckpt.string(),
          " (run `csdp pretrain` first)");
  EncoderParams enc = make_encoder(in_channels, cfg.d_target, cfg.seed);
  ParamGroup g = enc.group();
  load_checkpoint(ckpt, g);
  return enc;
}

ParamGroup full_group(ModelParams& m) {
  ParamGroup all;
  for (auto& p : m.encoder.params) all.push_back(&p);
  for (Param* p : m.group()) all.push_back(p);
  return all;
}

bool needs_graph(TrainMode mode) {
  return mode == TrainMode::full || mode == TrainMode::only_kangin;
}

bool needs_encoder(TrainMode mode) {
  return mode == TrainMode::full || mode == TrainMode::only_dpmamba;
}

SimilarityGraph load_graph(const fs::path& matrix_path, Index n,
                           const TrainConfig& cfg) {
  require(fs::exists(matrix_path), "distance matrix not found: ",
          matrix_path.string(), " (run `csdp simmatrix` first)");
  auto [dist, meta] = load_matrix(matrix_path);
  require(meta.kind == "distance", "expected a distance matrix at ",
          matrix_path.string(), ", got kind '", meta.kind, "'");
  require(meta.n == n, "matrix covers ", meta.n, " series but the dataset has ", n);
  return graph_from_distances(dist, cfg);
}

// ---- subcommands ----

int cmd_pretrain(const CLI::App* sub, Flags& f) {
  TrainConfig cfg = resolve_config(sub, f);
  // On this subcommand --epochs means contrastive epochs.
  int epochs = sub->count("--epochs") ? cfg.epochs : cfg.pretrain_epochs;
  require(epochs >= 0, "epoch count cannot be negative, got ", epochs);
  fs::path out = resolve_out_dir(f);
  fs::create_directories(out);
  write_manifest(out, "pretrain", cfg, input_record(f));

  std::uint64_t h = hash_file(kFnvOffset, f.data);
  if (!f.test_data.empty()) h = hash_file(h, f.test_data);
  json subset{{"d_target", cfg.d_target}, {"epochs", epochs},
              {"lr", cfg.lr},           {"margin", cfg.margin},
              {"sigma_scale", cfg.sigma_scale},
              {"alg2_convention", cfg.alg2_convention},
              {"seed", cfg.seed},       {"zscore", f.zscore}};
  h = hash_text(h, subset.dump());

  fs::path ckpt = out / "temcl.ckpt";
  fs::path trace = out / "pretrain_loss.csv";
  fs::path marker = out / "pretrain.hash";
  if (stage_done(marker, h, {ckpt, trace}, f.force)) {
    std::cout << "pretrain: " << ckpt.string()
              << " is up to date, skipping (pass --force to recompute)\n";
    return 0;
  }

  Dataset d = load_data(f);
  Index n_train = static_cast<Index>(d.train_indices().size());
  require(n_train >= 1, "dataset has no training series");

  PretrainConfig pc;
  pc.d_target = cfg.d_target;
  pc.epochs = epochs;
  pc.batch = std::max<Index>(1, std::min<Index>(8, n_train));
  pc.lr = cfg.lr;
  pc.margin = cfg.margin;
  pc.sigma_scale = cfg.sigma_scale;
  pc.alg2_convention = cfg.alg2_convention;
  PretrainResult res = pretrain(d, pc, cfg.seed);

  ParamGroup g = res.encoder.group();
  save_checkpoint(ckpt, g, cfg.seed);
  {
    std::ofstream csv(trace);
    require(csv.good(), "cannot write loss trace: ", trace.string());
    csv << "epoch,loss\n";
    char buf[40];
    for (size_t i = 0; i < res.loss_trace.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", res.loss_trace[i]);
      csv << i << "," << buf << "\n";
    }
  }
  mark_stage(marker, h);
  std::cout << "pretrain: wrote " << ckpt.string() << " (" << epochs
            << " epochs over " << n_train << " series)\n";
  return 0;
}

int cmd_simmatrix(const CLI::App* sub, Flags& f) {
  TrainConfig cfg = resolve_config(sub, f);
  fs::path out = resolve_out_dir(f);
  fs::create_directories(out);
  fs::path enc_ckpt = f.encoder.empty() ? out / "temcl.ckpt" : fs::path(f.encoder);
  json inputs = input_record(f);
  if (!f.raw) inputs["encoder"] = enc_ckpt.string();
  write_manifest(out, "simmatrix", cfg, inputs);

  if (!f.raw)
    require(fs::exists(enc_ckpt), "encoder checkpoint not found: ",
            enc_ckpt.string(), " (run `csdp pretrain` first, or pass --raw)");

  std::uint64_t h = hash_file(kFnvOffset, f.data);
  if (!f.test_data.empty()) h = hash_file(h, f.test_data);
  if (!f.raw) h = hash_file(h, enc_ckpt);
  json subset{{"alpha", cfg.alpha},   {"topk", cfg.topk},
              {"radius", cfg.radius}, {"d_target", cfg.d_target},
              {"seed", cfg.seed},     {"raw", f.raw},
              {"zscore", f.zscore}};
  h = hash_text(h, subset.dump());

  fs::path blob = out / "distances.bin";
  fs::path sidecar = out / "distances.bin.json";
  fs::path heatmap = out / "heatmap.csv";
  fs::path marker = out / "simmatrix.hash";
  if (stage_done(marker, h, {blob, sidecar, heatmap}, f.force)) {
    std::cout << "simmatrix: " << blob.string()
              << " is up to date, skipping (pass --force to recompute)\n";
    return 0;
  }

  Dataset d = load_data(f);
  std::vector<Matrix> reps;
  if (f.raw) {
    reps.reserve(d.series.size());
    for (const auto& s : d.series) reps.push_back(s.values);
  } else {
    EncoderParams enc = load_encoder(enc_ckpt, d.channels(), cfg);
    reps = encode_dataset(enc, d);
  }
  Matrix dist = distance_matrix(reps, d.classes, cfg);

  MatrixMeta meta;
  meta.kind = "distance";
  meta.n = d.size();
  meta.alpha = cfg.alpha;
  meta.topk = cfg.topk;
  meta.radius = cfg.radius;
  save_matrix(blob, dist, meta);
  export_heatmap(dist, heatmap);
  mark_stage(marker, h);
  std::cout << "simmatrix: wrote " << blob.string() << " and "
            << heatmap.string() << " (" << d.size() << " series"
            << (f.raw ? ", raw series" : "") << ")\n";
  return 0;
}

int cmd_train(const CLI::App* sub, Flags& f) {
  TrainConfig cfg = resolve_config(sub, f);
  require(cfg.mode != TrainMode::only_contrastfastdtw,
          "mode only_contrastfastdtw has no trainable model; use `csdp ablate`");
  fs::path out = resolve_out_dir(f);
  fs::create_directories(out);
  fs::path enc_ckpt = f.encoder.empty() ? out / "temcl.ckpt" : fs::path(f.encoder);
  fs::path matrix = f.matrix.empty() ? out / "distances.bin" : fs::path(f.matrix);
  json inputs = input_record(f);
  if (needs_encoder(cfg.mode)) inputs["encoder"] = enc_ckpt.string();
  if (needs_graph(cfg.mode)) inputs["matrix"] = matrix.string();
  write_manifest(out, "train", cfg, inputs);

  if (needs_encoder(cfg.mode))
    require(fs::exists(enc_ckpt), "encoder checkpoint not found: ",
            enc_ckpt.string(), " (run `csdp pretrain` first)");
  if (needs_graph(cfg.mode))
    require(fs::exists(matrix), "distance matrix not found: ", matrix.string(),
            " (run `csdp simmatrix` first)");

  std::uint64_t h = hash_file(kFnvOffset, f.data);
  if (!f.test_data.empty()) h = hash_file(h, f.test_data);
  if (needs_encoder(cfg.mode)) h = hash_file(h, enc_ckpt);
  if (needs_graph(cfg.mode)) {
    h = hash_file(h, matrix);
    h = hash_file(h, matrix.string() + ".json");
  }
  json subset = config_json(cfg);
  subset.erase("workers");  // thread count never changes the outputs
  subset["zscore"] = f.zscore;
  h = hash_text(h, subset.dump());

  fs::path model_ckpt = out / "model.ckpt";
  fs::path metrics = out / "metrics.jsonl";
  fs::path summary = out / "summary.json";
  fs::path timing = out / "timing.json";
  fs::path marker = out / "train.hash";
  if (stage_done(marker, h, {model_ckpt, metrics, summary, timing}, f.force)) {
    std::cout << "train: " << model_ckpt.string()
              << " is up to date, skipping (pass --force to recompute)\n";
    return 0;
  }

  Dataset d = load_data(f);
  validate(cfg, d.size());
  EncoderParams enc = needs_encoder(cfg.mode)
                          ? load_encoder(enc_ckpt, d.channels(), cfg)
                          : make_encoder(d.channels(), cfg.d_target, cfg.seed);
  SimilarityGraph g;
  if (needs_graph(cfg.mode)) g = load_graph(matrix, d.size(), cfg);

  TrainResult r = train(d, g, enc, cfg);
  ParamGroup all = full_group(r.model);
  save_checkpoint(model_ckpt, all, cfg.seed);
  write_metrics_jsonl(r.metrics, metrics);
  write_summary_json(r.metrics, cfg.mode, summary);
  write_timing_json(r.metrics.wall_time_sec, timing);
  mark_stage(marker, h);
  std::cout << "train: wrote " << model_ckpt.string() << " (mode "
            << mode_name(cfg.mode) << ", final loss "
            << r.metrics.final_loss() << ", train accuracy "
            << r.metrics.train_accuracy << ")\n";
  return 0;
}

int cmd_eval(const CLI::App* sub, Flags& f) {
  TrainConfig cfg = resolve_config(sub, f);
  require(cfg.mode != TrainMode::only_contrastfastdtw,
          "mode only_contrastfastdtw has no saved model; use `csdp ablate`");
  fs::path out = resolve_out_dir(f);
  fs::create_directories(out);
  fs::path model_ckpt = f.model.empty() ? out / "model.ckpt" : fs::path(f.model);
  fs::path matrix = f.matrix.empty() ? out / "distances.bin" : fs::path(f.matrix);
  json inputs = input_record(f);
  inputs["model"] = model_ckpt.string();
  if (needs_graph(cfg.mode)) inputs["matrix"] = matrix.string();
  write_manifest(out, "eval", cfg, inputs);

  require(fs::exists(model_ckpt), "model checkpoint not found: ",
          model_ckpt.string(), " (run `csdp train` first)");

  Dataset d = load_data(f);
  EncoderParams enc = make_encoder(d.channels(), cfg.d_target, cfg.seed);
  ModelParams m = make_model(d, enc, cfg);
  ParamGroup all = full_group(m);
  load_checkpoint(model_ckpt, all);

  SimilarityGraph g;
  if (needs_graph(cfg.mode)) g = load_graph(matrix, d.size(), cfg);

  Metrics met = evaluate(m, d, g);
  met.seed = cfg.seed;
  std::cout << summary_json_text(met, cfg.mode) << "\n";
  return 0;
}

int cmd_ablate(const CLI::App* sub, Flags& f) {
  TrainConfig cfg = resolve_config(sub, f);
  fs::path out = resolve_out_dir(f);
  fs::create_directories(out);
  write_manifest(out, "ablate", cfg, input_record(f));

  std::uint64_t h = hash_file(kFnvOffset, f.data);
  if (!f.test_data.empty()) h = hash_file(h, f.test_data);
  json subset = config_json(cfg);
  subset.erase("workers");
  subset.erase("mode");  // ablation always runs all four variants
  subset["zscore"] = f.zscore;
  h = hash_text(h, subset.dump());

  fs::path table = out / "ablation.csv";
  fs::path marker = out / "ablate.hash";
  if (stage_done(marker, h, {table}, f.force)) {
    std::cout << "ablate: " << table.string()
              << " is up to date, skipping (pass --force to recompute)\n";
    return 0;
  }

  Dataset d = load_data(f);
  validate(cfg, d.size());
  std::vector<AblateRow> rows = ablate(d, cfg);
  write_ablation_csv(rows, table);
  mark_stage(marker, h);
  std::cout << "ablate: wrote " << table.string() << " (" << rows.size()
            << " variants)\n";
  return 0;
}

int cmd_sweep(const CLI::App* sub, Flags& f) {
  TrainConfig cfg = resolve_config(sub, f);
  fs::path out = resolve_out_dir(f);
  fs::create_directories(out);
  write_manifest(out, "sweep", cfg, input_record(f));

  std::uint64_t h = hash_file(kFnvOffset, f.data);
  if (!f.test_data.empty()) h = hash_file(h, f.test_data);
  json subset = config_json(cfg);
  subset.erase("workers");
  subset["zscore"] = f.zscore;
  subset["fractions"] = f.fractions;
  h = hash_text(h, subset.dump());

  fs::path table = out / "sweep.csv";
  fs::path marker = out / "sweep.hash";
  if (stage_done(marker, h, {table}, f.force)) {
    std::cout << "sweep: " << table.string()
              << " is up to date, skipping (pass --force to recompute)\n";
    return 0;
  }

  Dataset d = load_data(f);
  validate(cfg, d.size());
  std::vector<SweepRow> rows = label_fraction_sweep(d, f.fractions, cfg);
  write_sweep_csv(rows, table);
  mark_stage(marker, h);
  std::cout << "sweep: wrote " << table.string() << " (" << rows.size()
            << " fractions)\n";
  return 0;
}

// ---- gradient check battery ----

Tensor gaussian_tensor(Shape shape, double scale, std::uint64_t seed) {
  Tensor t = Tensor::zeros(shape);
  auto rng = make_rng(seed);
  for (Index i = 0; i < t.numel(); ++i) t[i] = scale * draw_gaussian(rng);
  return t;
}

Matrix gaussian_matrix(Index r, Index c, double scale, std::uint64_t seed) {
  Matrix m(r, c);
  auto rng = make_rng(seed);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = scale * draw_gaussian(rng);
  return m;
}

int cmd_gradcheck(const CLI::App* sub, Flags& f) {
  TrainConfig cfg = resolve_config(sub, f);
  fs::path out = resolve_out_dir(f);
  fs::create_directories(out);
  write_manifest(out, "gradcheck", cfg, input_record(f));
  std::uint64_t seed = cfg.seed;

  struct Row {
    std::string name;
    double err;
    double tol;
  };
  std::vector<Row> rows;

  // Contrastive loss, pull branch (y = 1): smooth everywhere but d = 0.
  {
    Param z1("z1", gaussian_tensor({3, 2}, 1.0, derive_seed(seed, 101)));
    Param z2("z2", gaussian_tensor({3, 2}, 1.0, derive_seed(seed, 102)));
    ParamGroup g{&z1, &z2};
    double err = grad_check(
        [](Tape&, const std::vector<Var>& vs) {
          return contrastive_loss(vs[0], vs[1], 1, 1.0);
        },
        g);
    rows.push_back({"contrastive_pull", err, 1e-7});
  }
  // Push branch (y = 0) with the hinge active: representations kept close
  // together against a wide margin so the finite differences stay smooth.
  {
    Param z1("z1", gaussian_tensor({3, 2}, 0.1, derive_seed(seed, 103)));
    Param z2("z2", gaussian_tensor({3, 2}, 0.1, derive_seed(seed, 104)));
    ParamGroup g{&z1, &z2};
    double err = grad_check(
        [](Tape&, const std::vector<Var>& vs) {
          return contrastive_loss(vs[0], vs[1], 0, 2.0);
        },
        g);
    rows.push_back({"contrastive_push", err, 1e-7});
  }
  // Convolutional encoder, directional probes (element-wise would be slow).
  {
    EncoderParams enc = make_encoder(2, 5, derive_seed(seed, 105));
    Matrix x1 = gaussian_matrix(2, 40, 1.0, derive_seed(seed, 106));
    Matrix x2 = gaussian_matrix(2, 40, 1.0, derive_seed(seed, 107));
    ParamGroup g = enc.group();
    double err = grad_check_directional(
        [&](Tape& t, const std::vector<Var>& vs) {
          EncoderVars ev;
          ev.vars = vs;
          Var za = encode_on_tape(t, ev, x1);
          Var zb = encode_on_tape(t, ev, x2);
          return contrastive_loss(za, zb, 1, 1.0);
        },
        g, 1e-6, 4, derive_seed(seed, 108));
    rows.push_back({"encoder", err, 1e-4});
  }
  // Dual-pathway SSM encoder through a classification loss, both transition
  // parameterizations.
  for (bool dense : {false, true}) {
    SSMConfig sc;
    sc.d_model = 4;
    sc.state_dim = 3;
    sc.dense_a = dense;
    SSMParams p = make_ssm(sc, derive_seed(seed, dense ? 110 : 109));
    Matrix rep1 = gaussian_matrix(4, 7, 1.0, derive_seed(seed, 111));
    Matrix rep2 = gaussian_matrix(4, 7, 1.0, derive_seed(seed, 112));
    Matrix w = gaussian_matrix(4, 2, 0.5, derive_seed(seed, 113));
    ParamGroup g = p.group();
    double err = grad_check(
        [&](Tape& t, const std::vector<Var>& vs) {
          SSMVars v;
          v.cfg = sc;
          v.vars = vs;
          Var h = stack_rows({dpmamba_encode_on_tape(t, v, rep1),
                              dpmamba_encode_on_tape(t, v, rep2)});
          Var logp = log_softmax(matmul(h, t.constant(Tensor::from_matrix(w))));
          return nll_gather(logp, {0, 1}, {0, 1});
        },
        g);
    rows.push_back({dense ? "dpmamba_dense" : "dpmamba_diag", err, 1e-4});
  }
  // KAN-GIN stack over a small weighted graph through the NLL head.
  {
    KanGinConfig kc;
    kc.d_model = 4;
    kc.classes = 3;
    kc.gin_layers = 2;
    KanGinParams p = make_kangin(kc, derive_seed(seed, 114));
    Matrix h = gaussian_matrix(5, 4, 1.0, derive_seed(seed, 115));
    Matrix kept(5, 5);
    kept.setZero();
    kept(0, 1) = 1;
    kept(1, 0) = 1;
    kept(2, 3) = 2;
    kept(3, 2) = 2;
    kept(4, 0) = 1;
    SimilarityGraph sg = row_normalize(kept, 1.0, 5, 1);
    auto adj = graph_neighbor_lists(sg, false);
    ParamGroup g = p.group();
    double err = grad_check(
        [&](Tape& t, const std::vector<Var>& vs) {
          KanGinVars v;
          v.cfg = kc;
          v.vars = vs;
          Var in = t.constant(Tensor::from_matrix(h));
          return nll_gather(kangin_forward_on_tape(v, in, adj), {0, 2, 4},
                            {0, 2, 1});
        },
        g);
    rows.push_back({"kangin", err, 1e-4});
  }

  int passed = 0;
  for (const auto& r : rows) {
    bool ok = r.err < r.tol;
    passed += ok ? 1 : 0;
    char line[160];
    std::snprintf(line, sizeof(line), "[%s] %s: max_rel_err=%.3g (tol %.1g)",
                  ok ? "ok" : "FAIL", r.name.c_str(), r.err, r.tol);
    std::cout << line << "\n";
  }
  std::cout << "gradcheck: " << passed << "/" << rows.size()
            << " within tolerance\n";
  return passed == static_cast<int>(rows.size()) ? 0 : 4;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"contrastive-similarity dual-pathway pipeline"};
  app.require_subcommand(1);
  Flags f;

  CLI::App* pre = app.add_subcommand(
      "pretrain", "contrastive encoder pretraining -> temcl.ckpt + loss CSV");
  add_io_flags(pre, f);
  add_config_flags(pre, f);

  CLI::App* sim = app.add_subcommand(
      "simmatrix", "pairwise DTW distance matrix -> blob + sidecar + heatmap");
  add_io_flags(sim, f);
  add_config_flags(sim, f);
  sim->add_option("--encoder", f.encoder,
                  "encoder checkpoint (default <out>/temcl.ckpt)");
  sim->add_flag("--raw", f.raw, "measure raw series instead of representations");

  CLI::App* trn = app.add_subcommand(
      "train", "train a classifier -> model.ckpt + metrics + summary");
  add_io_flags(trn, f);
  add_config_flags(trn, f);
  trn->add_option("--encoder", f.encoder,
                  "encoder checkpoint (default <out>/temcl.ckpt)");
  trn->add_option("--matrix", f.matrix,
                  "distance matrix blob (default <out>/distances.bin)");

  CLI::App* evl = app.add_subcommand(
      "eval", "evaluate a saved model on the test split; prints summary JSON");
  add_io_flags(evl, f);
  add_config_flags(evl, f);
  evl->add_option("--model", f.model,
                  "model checkpoint (default <out>/model.ckpt)");
  evl->add_option("--matrix", f.matrix,
                  "distance matrix blob (default <out>/distances.bin)");

  CLI::App* abl = app.add_subcommand(
      "ablate", "train every pathway variant -> ablation.csv");
  add_io_flags(abl, f);
  add_config_flags(abl, f);

  CLI::App* swp = app.add_subcommand(
      "sweep", "label-fraction sweep -> sweep.csv");
  add_io_flags(swp, f);
  add_config_flags(swp, f);
  swp->add_option("--fractions", f.fractions,
                  "label fractions in (0, 1] (default 0.05 0.1 1.0)");

  CLI::App* gck = app.add_subcommand(
      "gradcheck", "finite-difference battery over every differentiable block");
  gck->add_option("--config", f.config, "JSON config file (flags override it)");
  gck->add_option("--out", f.out,
                  "output directory (default $CSDP_OUT_DIR, else ./csdp_out)");
  gck->add_option("--seed", f.c.seed, "battery seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (pre->parsed()) return cmd_pretrain(pre, f);
    if (sim->parsed()) return cmd_simmatrix(sim, f);
    if (trn->parsed()) return cmd_train(trn, f);
    if (evl->parsed()) return cmd_eval(evl, f);
    if (abl->parsed()) return cmd_ablate(abl, f);
    if (swp->parsed()) return cmd_sweep(swp, f);
    if (gck->parsed()) return cmd_gradcheck(gck, f);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;  // unreachable with require_subcommand(1)
}
