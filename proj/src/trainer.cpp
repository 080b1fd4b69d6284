#include "csdp/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <thread>

#include "csdp/dtw.hpp"
#include "csdp/error.hpp"
#include "csdp/rng.hpp"

namespace csdp {
namespace {

constexpr std::uint64_t kTagModel = 0x7d01;
constexpr std::uint64_t kTagBatch = 0x7d02;
constexpr std::uint64_t kTagSplit = 0x7d03;
constexpr std::uint64_t kTagCluster = 0x7d04;

Tensor uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i)
    t[i] = (2.0 * draw_unit(rng) - 1.0) * bound;
  return t;
}

/// First min(m, pool) entries of a fresh shuffle, or m draws with replacement
/// when the pool is smaller than m.
std::vector<Index> sample_pool(const std::vector<Index>& pool, Index m,
                               std::mt19937_64& rng) {
  if (static_cast<Index>(pool.size()) >= m) {
    std::vector<Index> order = pool;
    deterministic_shuffle(order, rng);
    order.resize(static_cast<size_t>(m));
    return order;
  }
  std::vector<Index> out;
  out.reserve(static_cast<size_t>(m));
  for (Index i = 0; i < m; ++i)
    out.push_back(pool[draw_below(rng, pool.size())]);
  return out;
}

Matrix log_softmax_rows(Matrix logits) {
  for (Index i = 0; i < logits.rows(); ++i) {
    double mx = logits.row(i).maxCoeff();
    logits.row(i).array() -= mx;
    logits.row(i).array() -=
        std::log(logits.row(i).array().exp().sum());
  }
  return logits;
}

void fill_accuracy(Metrics& out, const std::vector<int>& preds,
                   const Dataset& d) {
  Index train_total = 0, train_hit = 0, test_total = 0, test_hit = 0;
  bool all_test_labeled = true;
  out.per_class_correct.assign(static_cast<size_t>(d.classes), 0);
  out.per_class_total.assign(static_cast<size_t>(d.classes), 0);
  for (Index i = 0; i < d.size(); ++i) {
    int label = d.labels[static_cast<size_t>(i)];
    bool hit = preds[static_cast<size_t>(i)] == label;
    if (d.split[static_cast<size_t>(i)] == Split::train) {
      if (label >= 0) {
        ++train_total;
        train_hit += hit;
      }
    } else if (label < 0) {
      all_test_labeled = false;
    } else {
      ++test_total;
      test_hit += hit;
      ++out.per_class_total[static_cast<size_t>(label)];
      out.per_class_correct[static_cast<size_t>(label)] += hit;
    }
  }
  out.train_accuracy =
      train_total > 0 ? static_cast<double>(train_hit) / train_total : 0.0;
  out.test_evaluated = all_test_labeled && test_total > 0;
  if (out.test_evaluated) {
    out.test_accuracy = static_cast<double>(test_hit) / test_total;
  } else {
    out.test_accuracy = 0.0;
    out.per_class_correct.assign(static_cast<size_t>(d.classes), 0);
    out.per_class_total.assign(static_cast<size_t>(d.classes), 0);
  }
}

/// One optimizer step over a batch. `rows` index into `nodes` (repeats allowed
/// when sampling drew with replacement); only those positions enter the loss.
double train_step(ModelParams& model, const ParamGroup& group, OptimState& st,
                  const std::vector<Index>& nodes,
                  const std::vector<Index>& rows,
                  const std::vector<int>& labels,
                  const std::vector<Matrix>& reps, const Matrix& raw_feats,
                  const SimilarityGraph& g, const TrainConfig& cfg) {
  Tape t;
  TapeBinding binding;
  Var logp = [&]() -> Var {
    if (cfg.mode == TrainMode::only_kangin) {
      Matrix sub(static_cast<Index>(nodes.size()), raw_feats.cols());
      for (size_t i = 0; i < nodes.size(); ++i)
        sub.row(static_cast<Index>(i)) = raw_feats.row(nodes[i]);
      Var w = binding.bind(t, model.embed[0]);
      Var b = binding.bind(t, model.embed[1]);
      Var feats = add_rowvec(matmul(t.constant(Tensor::from_matrix(sub)), w), b);
      KanGinVars kv = bind_kangin(t, model.gin, binding);
      auto adj = graph_neighbor_lists(batch_subgraph(g, nodes),
                                      model.gin.cfg.unweighted);
      return kangin_forward_on_tape(kv, feats, adj);
    }
    SSMVars sv = bind_ssm(t, model.ssm, binding);
    std::vector<Var> per_node;
    per_node.reserve(nodes.size());
    for (Index node : nodes)
      per_node.push_back(
          dpmamba_encode_on_tape(t, sv, reps[static_cast<size_t>(node)]));
    Var feats = stack_rows(per_node);
    if (cfg.mode == TrainMode::only_dpmamba) {
      Var w = binding.bind(t, model.head[0]);
      Var b = binding.bind(t, model.head[1]);
      return log_softmax(add_rowvec(matmul(feats, w), b));
    }
    KanGinVars kv = bind_kangin(t, model.gin, binding);
    auto adj = graph_neighbor_lists(batch_subgraph(g, nodes),
                                    model.gin.cfg.unweighted);
    return kangin_forward_on_tape(kv, feats, adj);
  }();
  Var loss = nll_gather(logp, rows, labels);
  double value = t.value(loss).value();
  t.backward(loss);
  binding.collect(t);
  adam_step(group, st);
  return value;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_cell(double v) {
  return std::isnan(v) ? std::string() : fmt_double(v);
}

nlohmann::json summary_json(const Metrics& m, TrainMode mode) {
  nlohmann::json j;
  j["mode"] = mode_name(mode);
  j["seed"] = m.seed;
  j["epochs"] = m.epoch_loss.size();
  if (!m.epoch_loss.empty()) j["final_loss"] = m.epoch_loss.back();
  j["train_accuracy"] = m.train_accuracy;
  if (m.test_evaluated) {
    j["test_accuracy"] = m.test_accuracy;
    auto acc = m.per_class_accuracy();
    nlohmann::json per_class = nlohmann::json::array();
    for (size_t c = 0; c < acc.size(); ++c)
      per_class.push_back({{"class", c},
                           {"correct", m.per_class_correct[c]},
                           {"total", m.per_class_total[c]},
                           {"accuracy", acc[c]}});
    j["per_class"] = per_class;
  }
  return j;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), "cannot write ", path.string());
  return out;
}

}  // namespace

TrainMode parse_train_mode(const std::string& name) {
  if (name == "full") return TrainMode::full;
  if (name == "only_dpmamba") return TrainMode::only_dpmamba;
  if (name == "only_kangin") return TrainMode::only_kangin;
  if (name == "only_contrastfastdtw") return TrainMode::only_contrastfastdtw;
  fail("unknown mode '", name,
       "' (full | only_dpmamba | only_kangin | only_contrastfastdtw)");
}

std::string mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::full: return "full";
    case TrainMode::only_dpmamba: return "only_dpmamba";
    case TrainMode::only_kangin: return "only_kangin";
    case TrainMode::only_contrastfastdtw: return "only_contrastfastdtw";
  }
  fail("bad mode value");
}

Index effective_batch(const TrainConfig& cfg, Index n) {
  Index b = cfg.batch > 0 ? cfg.batch : std::min<Index>(n, 64);
  // the default must stay usable when a semi-supervised run needs an even B
  if (cfg.batch == 0 && cfg.label_fraction < 1.0 && b > 1 && b % 2 == 1) --b;
  return b;
}

void validate(const TrainConfig& cfg, Index dataset_size) {
  require(dataset_size >= 1, "empty dataset");
  require(cfg.epochs >= 0, "epochs must be >= 0");
  require(cfg.batch >= 0, "batch must be >= 0 (0 means min(N, 64))");
  require(cfg.lr > 0.0, "lr must be positive");
  require(cfg.pretrain_epochs >= 0, "pretrain_epochs must be >= 0");
  require(cfg.margin > 0.0, "margin must be positive");
  require(cfg.sigma_scale > 0.0, "sigma_scale must be positive");
  require(cfg.alpha >= 0.0, "alpha must be >= 0");
  require(cfg.topk >= 1, "topk must be >= 1");
  require(cfg.radius >= 0, "radius must be >= 0");
  require(cfg.d_target >= 1, "d_target must be >= 1");
  require(cfg.ssm_state >= 1, "ssm_state must be >= 1");
  require(cfg.gin_layers >= 1 && cfg.gin_layers <= 3,
          "gin_layers must be 1..3");
  require(cfg.label_fraction > 0.0 && cfg.label_fraction <= 1.0,
          "label_fraction must lie in (0, 1]");
  require(cfg.workers >= 1, "workers must be >= 1");
  if (cfg.label_fraction < 1.0)
    require(effective_batch(cfg, dataset_size) % 2 == 0,
            "batch must be even when label_fraction < 1 (B/2 + B/2 halves)");
}

double Metrics::final_loss() const {
  return epoch_loss.empty() ? std::numeric_limits<double>::quiet_NaN()
                            : epoch_loss.back();
}

std::vector<double> Metrics::per_class_accuracy() const {
  std::vector<double> acc(per_class_total.size(), 0.0);
  for (size_t c = 0; c < acc.size(); ++c)
    if (per_class_total[c] > 0)
      acc[c] = static_cast<double>(per_class_correct[c]) / per_class_total[c];
  return acc;
}

ParamGroup ModelParams::group() {
  ParamGroup g;
  auto append = [&g](ParamGroup part) {
    g.insert(g.end(), part.begin(), part.end());
  };
  switch (mode) {
    case TrainMode::full:
      append(ssm.group());
      append(gin.group());
      break;
    case TrainMode::only_dpmamba:
      append(ssm.group());
      for (auto& p : head) g.push_back(&p);
      break;
    case TrainMode::only_kangin:
      for (auto& p : embed) g.push_back(&p);
      append(gin.group());
      break;
    case TrainMode::only_contrastfastdtw:
      break;
  }
  return g;
}

ModelParams make_model(const Dataset& d, const EncoderParams& enc,
                       const TrainConfig& cfg) {
  require(cfg.mode != TrainMode::only_contrastfastdtw,
          "only_contrastfastdtw has no trainable parameters");
  ModelParams m;
  m.mode = cfg.mode;
  m.encoder = enc;
  const Index dm = cfg.d_target;
  if (cfg.mode == TrainMode::full || cfg.mode == TrainMode::only_dpmamba) {
    require(enc.d_target == dm, "encoder emits ", enc.d_target,
            "-dim representations but d_target is ", dm);
    SSMConfig sc;
    sc.d_model = dm;
    sc.state_dim = cfg.ssm_state;
    sc.dense_a = cfg.ssm_dense_a;
    sc.split_paths = cfg.split_paths;
    m.ssm = make_ssm(sc, derive_seed(cfg.seed, kTagModel, 1));
  }
  if (cfg.mode == TrainMode::full || cfg.mode == TrainMode::only_kangin) {
    KanGinConfig kc;
    kc.d_model = dm;
    kc.classes = d.classes;
    kc.gin_layers = cfg.gin_layers;
    kc.unweighted = cfg.gin_unweighted;
    m.gin = make_kangin(kc, derive_seed(cfg.seed, kTagModel, 2));
  }
  if (cfg.mode == TrainMode::only_dpmamba) {
    auto rng = make_rng(derive_seed(cfg.seed, kTagModel, 3));
    double bound = 1.0 / std::sqrt(static_cast<double>(dm));
    m.head.emplace_back(
        "head.w",
        uniform_tensor({dm, static_cast<Index>(d.classes)}, bound, rng));
    m.head.emplace_back("head.b",
                        Tensor::zeros({static_cast<Index>(d.classes)}));
  }
  if (cfg.mode == TrainMode::only_kangin) {
    const Index in = 2 * d.channels();
    require(in >= 1, "dataset has no channels");
    auto rng = make_rng(derive_seed(cfg.seed, kTagModel, 4));
    double bound = 1.0 / std::sqrt(static_cast<double>(in));
    m.embed.emplace_back("embed.w", uniform_tensor({in, dm}, bound, rng));
    m.embed.emplace_back("embed.b", Tensor::zeros({dm}));
  }
  return m;
}

Matrix meanstd_features(const Dataset& d) {
  validate(d);
  const Index n = d.size(), c = d.channels();
  Matrix out(n, 2 * c);
  for (Index i = 0; i < n; ++i) {
    const Matrix& v = d.series[static_cast<size_t>(i)].values;
    for (Index ch = 0; ch < c; ++ch) {
      double mean = v.row(ch).mean();
      double var = (v.row(ch).array() - mean).square().mean();
      out(i, ch) = mean;
      out(i, c + ch) = std::sqrt(var);
    }
  }
  return out;
}

Matrix model_logprobs(const ModelParams& m, const Dataset& d,
                      const SimilarityGraph& g) {
  validate(d);
  auto check_graph = [&] {
    require(g.weights.rows() == d.size() && g.weights.cols() == d.size(),
            "graph covers ", g.weights.rows(), " nodes, dataset has ",
            d.size());
  };
  switch (m.mode) {
    case TrainMode::full: {
      check_graph();
      Matrix feats = encode_nodes(m.ssm, encode_dataset(m.encoder, d));
      return kangin_logprobs(m.gin, feats,
                             graph_neighbor_lists(g, m.gin.cfg.unweighted));
    }
    case TrainMode::only_dpmamba: {
      Matrix feats = encode_nodes(m.ssm, encode_dataset(m.encoder, d));
      Matrix logits = feats * m.head[0].value.mat();
      logits.rowwise() += m.head[1].value.vec().transpose();
      return log_softmax_rows(std::move(logits));
    }
    case TrainMode::only_kangin: {
      check_graph();
      Matrix feats = meanstd_features(d) * m.embed[0].value.mat();
      feats.rowwise() += m.embed[1].value.vec().transpose();
      return kangin_logprobs(m.gin, feats,
                             graph_neighbor_lists(g, m.gin.cfg.unweighted));
    }
    case TrainMode::only_contrastfastdtw:
      break;
  }
  fail("only_contrastfastdtw has no parametric predictor");
}

TrainResult train(const Dataset& d, const SimilarityGraph& g,
                  const EncoderParams& enc, const TrainConfig& cfg) {
  auto t0 = std::chrono::steady_clock::now();
  validate(d);
  validate(cfg, d.size());
  require(cfg.mode != TrainMode::only_contrastfastdtw,
          "mode only_contrastfastdtw has nothing to train; use ablate");

  std::vector<Index> labeled, unlabeled;
  for (Index i : d.train_indices()) {
    bool visible = d.label_mask[static_cast<size_t>(i)] &&
                   d.labels[static_cast<size_t>(i)] >= 0;
    (visible ? labeled : unlabeled).push_back(i);
  }
  require(!labeled.empty(), "no labeled nodes in scope");
  const bool semi = cfg.label_fraction < 1.0;
  if (semi)
    require(!unlabeled.empty(),
            "label_fraction < 1 but the train split has no unlabeled nodes");

  const bool uses_graph = cfg.mode != TrainMode::only_dpmamba;
  if (uses_graph)
    require(g.weights.rows() == d.size() && g.weights.cols() == d.size(),
            "graph must cover all ", d.size(), " nodes");

  std::vector<Matrix> reps;
  Matrix raw_feats;
  if (cfg.mode == TrainMode::only_kangin)
    raw_feats = meanstd_features(d);
  else
    reps = encode_dataset(enc, d);

  ModelParams model = make_model(d, enc, cfg);
  ParamGroup group = model.group();
  OptimState st = make_optim_state(group, cfg.lr);

  const Index batch = effective_batch(cfg, d.size());
  const Index train_total =
      static_cast<Index>(labeled.size() + unlabeled.size());

  Metrics metrics;
  metrics.seed = cfg.seed;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto rng = make_rng(
        derive_seed(cfg.seed, kTagBatch, static_cast<std::uint64_t>(epoch)));
    std::vector<std::vector<Index>> batches;
    if (!semi) {
      std::vector<Index> order = labeled;
      deterministic_shuffle(order, rng);
      const Index size = std::min<Index>(batch, order.size());
      for (size_t at = 0; at < order.size(); at += static_cast<size_t>(size))
        batches.emplace_back(
            order.begin() + static_cast<std::ptrdiff_t>(at),
            order.begin() +
                static_cast<std::ptrdiff_t>(
                    std::min(at + static_cast<size_t>(size), order.size())));
    } else {
      const Index iters = (train_total + batch - 1) / batch;
      for (Index it = 0; it < iters; ++it) {
        std::vector<Index> sampled = sample_pool(labeled, batch / 2, rng);
        std::vector<Index> extra = sample_pool(unlabeled, batch / 2, rng);
        sampled.insert(sampled.end(), extra.begin(), extra.end());
        batches.push_back(std::move(sampled));
      }
    }

    double sum = 0.0;
    for (const auto& sampled : batches) {
      // collapse duplicates for the subgraph; the loss keeps multiplicity
      std::vector<Index> nodes;
      std::vector<Index> rows;
      std::vector<int> labels;
      for (Index node : sampled) {
        size_t pos = 0;
        while (pos < nodes.size() && nodes[pos] != node) ++pos;
        if (pos == nodes.size()) nodes.push_back(node);
        if (d.label_mask[static_cast<size_t>(node)] &&
            d.labels[static_cast<size_t>(node)] >= 0) {
          rows.push_back(static_cast<Index>(pos));
          labels.push_back(d.labels[static_cast<size_t>(node)]);
        }
      }
      double loss = train_step(model, group, st, nodes, rows, labels, reps,
                               raw_feats, g, cfg);
      if (!std::isfinite(loss)) fail_numeric("non-finite loss at epoch ", epoch);
      sum += loss;
    }
    double mean_loss = sum / static_cast<double>(batches.size());
    metrics.epoch_loss.push_back(mean_loss);
    plateau_update(st, mean_loss);
  }

  fill_accuracy(metrics, predict_classes(model_logprobs(model, d, g)), d);
  metrics.wall_time_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return {std::move(model), std::move(metrics)};
}

Metrics evaluate(const ModelParams& m, const Dataset& d,
                 const SimilarityGraph& g) {
  auto t0 = std::chrono::steady_clock::now();
  validate(d);
  const std::vector<Index> test = d.test_indices();
  require(!test.empty(), "no test nodes to evaluate");
  for (Index i : test)
    require(d.labels[static_cast<size_t>(i)] >= 0,
            "evaluate needs labels on every test node; series ",
            d.series[static_cast<size_t>(i)].series_id, " has none");
  Metrics out;
  fill_accuracy(out, predict_classes(model_logprobs(m, d, g)), d);
  out.wall_time_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return out;
}

Matrix distance_matrix(const std::vector<Matrix>& reps, int k,
                       const TrainConfig& cfg) {
  ClusterAssignment clusters = cluster_representations(
      reps, k, derive_seed(cfg.seed, kTagCluster));
  if (cfg.workers <= 1)
    return contrast_fastdtw_matrix(reps, clusters, cfg.radius);

  // same matrix, pair list fanned out over a small pool; every cell is
  // written by exactly one worker so the result is schedule-independent
  const Index n = static_cast<Index>(reps.size());
  std::vector<Matrix> seqs;
  seqs.reserve(reps.size());
  for (const Matrix& r : reps) seqs.push_back(r.transpose());
  std::vector<std::pair<Index, Index>> pairs;
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j)
      if (clusters.cluster[static_cast<size_t>(i)] ==
          clusters.cluster[static_cast<size_t>(j)])
        pairs.emplace_back(i, j);

  Matrix out = Matrix::Constant(n, n, -1.0);
  out.diagonal().setZero();
  std::atomic<size_t> next{0};
  auto work = [&] {
    for (;;) {
      size_t at = next.fetch_add(1);
      if (at >= pairs.size()) break;
      auto [i, j] = pairs[at];
      double cost = fastdtw(seqs[static_cast<size_t>(i)],
                            seqs[static_cast<size_t>(j)], cfg.radius)
                        .cost;
      out(i, j) = cost;
      out(j, i) = cost;
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < cfg.workers; ++w) pool.emplace_back(work);
  work();
  for (auto& th : pool) th.join();
  return out;
}

SimilarityGraph graph_from_distances(const Matrix& dist,
                                     const TrainConfig& cfg) {
  Matrix scaled = scale_adjacency(dist, cfg.alpha, cfg.graph_order);
  return row_normalize(topk_sparsify(scaled, cfg.topk), cfg.alpha, cfg.topk,
                       cfg.radius);
}

Pipeline build_pipeline(const Dataset& d, const TrainConfig& cfg,
                        const EncoderParams* pretrained) {
  validate(d);
  validate(cfg, d.size());
  Pipeline p;
  if (pretrained) {
    require(pretrained->d_target == cfg.d_target &&
                pretrained->in_channels == d.channels(),
            "pretrained encoder does not fit this dataset/config");
    p.encoder = *pretrained;
  } else {
    PretrainConfig pc;
    pc.d_target = cfg.d_target;
    pc.epochs = cfg.pretrain_epochs;
    pc.batch = std::max<Index>(
        1, std::min<Index>(8, static_cast<Index>(d.train_indices().size())));
    pc.lr = cfg.lr;
    pc.margin = cfg.margin;
    pc.sigma_scale = cfg.sigma_scale;
    pc.alg2_convention = cfg.alg2_convention;
    p.encoder = pretrain(d, pc, cfg.seed).encoder;
  }
  p.reps = encode_dataset(p.encoder, d);
  p.distances = distance_matrix(p.reps, d.classes, cfg);
  p.graph = graph_from_distances(p.distances, cfg);
  return p;
}

Metrics knn_evaluate(const Dataset& d, const Matrix& distances) {
  auto t0 = std::chrono::steady_clock::now();
  validate(d);
  require(distances.rows() == d.size() && distances.cols() == d.size(),
          "distance matrix is ", distances.rows(), "x", distances.cols(),
          " for ", d.size(), " series");
  std::vector<Index> candidates;
  for (Index i : d.train_indices())
    if (d.label_mask[static_cast<size_t>(i)] &&
        d.labels[static_cast<size_t>(i)] >= 0)
      candidates.push_back(i);
  require(!candidates.empty(), "no labeled nodes in scope");

  std::vector<int> preds(static_cast<size_t>(d.size()), -1);
  for (Index i = 0; i < d.size(); ++i) {
    Index best = -1;
    double best_dist = std::numeric_limits<double>::infinity();
    for (Index j : candidates) {
      if (j == i) continue;
      double v = distances(i, j);
      if (v < 0.0) continue;  // sentinel: treated as infinitely far
      if (v < best_dist) {
        best_dist = v;
        best = j;
      }
    }
    if (best < 0) {
      best = candidates[0];
      if (best == i && candidates.size() > 1) best = candidates[1];
    }
    preds[static_cast<size_t>(i)] = d.labels[static_cast<size_t>(best)];
  }
  Metrics out;
  fill_accuracy(out, preds, d);
  out.wall_time_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return out;
}

std::vector<AblateRow> ablate(const Dataset& d, const TrainConfig& cfg) {
  validate(d);
  validate(cfg, d.size());
  Dataset work = d;
  if (cfg.label_fraction < 1.0)
    split_semisupervised(work, cfg.label_fraction,
                         derive_seed(cfg.seed, kTagSplit));
  Pipeline pipe = build_pipeline(work, cfg);
  std::vector<AblateRow> rows;
  for (TrainMode m : {TrainMode::full, TrainMode::only_dpmamba,
                      TrainMode::only_kangin, TrainMode::only_contrastfastdtw}) {
    TrainConfig local = cfg;
    local.mode = m;
    AblateRow row;
    row.mode = m;
    row.metrics = m == TrainMode::only_contrastfastdtw
                      ? knn_evaluate(work, pipe.distances)
                      : train(work, pipe.graph, pipe.encoder, local).metrics;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<SweepRow> label_fraction_sweep(
    const Dataset& d, const std::vector<double>& fractions,
    const TrainConfig& cfg) {
  validate(d);
  validate(cfg, d.size());
  require(!fractions.empty(), "no fractions given");
  for (double f : fractions)
    require(f > 0.0 && f <= 1.0, "fractions must lie in (0, 1], got ", f);

  Pipeline pipe = build_pipeline(d, cfg);  // label-free, shared across runs
  std::vector<SweepRow> rows;
  for (double f : fractions) {
    Dataset work = d;
    TrainConfig local = cfg;
    local.label_fraction = f;
    validate(local, d.size());
    SweepRow row;
    row.fraction = f;
    if (f < 1.0) {
      SemiSplit split =
          split_semisupervised(work, f, derive_seed(cfg.seed, kTagSplit));
      row.labeled_count = static_cast<Index>(split.labeled_indices.size());
    } else {
      for (Index i : work.train_indices())
        row.labeled_count += work.label_mask[static_cast<size_t>(i)] &&
                             work.labels[static_cast<size_t>(i)] >= 0;
    }
    row.metrics = train(work, pipe.graph, pipe.encoder, local).metrics;
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_metrics_jsonl(const Metrics& m, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  for (size_t e = 0; e < m.epoch_loss.size(); ++e) {
    nlohmann::json j{{"epoch", e}, {"loss", m.epoch_loss[e]}};
    out << j.dump() << "\n";
  }
}

std::string summary_json_text(const Metrics& m, TrainMode mode) {
  return summary_json(m, mode).dump(2);
}

void write_summary_json(const Metrics& m, TrainMode mode,
                        const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  out << summary_json(m, mode).dump(2) << "\n";
}

void write_ablation_csv(const std::vector<AblateRow>& rows,
                        const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  out << "mode,final_loss,train_accuracy,test_accuracy\n";
  for (const auto& row : rows) {
    const Metrics& m = row.metrics;
    out << mode_name(row.mode) << "," << csv_cell(m.final_loss()) << ","
        << fmt_double(m.train_accuracy) << ","
        << (m.test_evaluated ? fmt_double(m.test_accuracy) : std::string())
        << "\n";
  }
}

void write_sweep_csv(const std::vector<SweepRow>& rows,
                     const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  out << "fraction,labeled_count,final_loss,train_accuracy,test_accuracy\n";
  for (const auto& row : rows) {
    const Metrics& m = row.metrics;
    out << fmt_double(row.fraction) << "," << row.labeled_count << ","
        << csv_cell(m.final_loss()) << "," << fmt_double(m.train_accuracy)
        << ","
        << (m.test_evaluated ? fmt_double(m.test_accuracy) : std::string())
        << "\n";
  }
}

void write_timing_json(double seconds, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  nlohmann::json j{{"wall_time_sec", seconds}};
  out << j.dump(2) << "\n";
}

}  // namespace csdp
