#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "csdp/data.hpp"
#include "csdp/dpmamba.hpp"
#include "csdp/kangin.hpp"
#include "csdp/optim.hpp"
#include "csdp/simgraph.hpp"
#include "csdp/temcl.hpp"

namespace csdp {

enum class TrainMode { full, only_dpmamba, only_kangin, only_contrastfastdtw };
TrainMode parse_train_mode(const std::string& name);
std::string mode_name(TrainMode m);

struct TrainConfig {
  int epochs = 1000;
  Index batch = 0;  // 0 -> min(N, 64)
  double lr = 1e-3;
  int pretrain_epochs = 500;
  double margin = 1.0;
  double sigma_scale = 0.2;
  double alpha = 1.0;
  Index topk = 5;
  Index radius = 1;
  Index d_target = 64;
  Index ssm_state = 16;
  Index gin_layers = 2;
  std::uint64_t seed = 0;
  double label_fraction = 1.0;
  TrainMode mode = TrainMode::full;
  int workers = 1;  // pairwise distance construction only
  // architecture / convention switches
  bool ssm_dense_a = false;
  bool split_paths = false;
  bool gin_unweighted = false;
  bool alg2_convention = false;
  GraphOrder graph_order = GraphOrder::masked;
};

/// Range checks; requires an even batch when label_fraction < 1 (the batch
/// splits into B/2 labeled + B/2 unlabeled halves).
void validate(const TrainConfig& cfg, Index dataset_size);
Index effective_batch(const TrainConfig& cfg, Index n);

struct Metrics {
  std::vector<double> epoch_loss;  // mean train loss per epoch
  double train_accuracy = 0.0;
  bool test_evaluated = false;
  double test_accuracy = 0.0;
  std::vector<Index> per_class_correct;  // over test nodes
  std::vector<Index> per_class_total;
  double wall_time_sec = 0.0;  // reported via write_timing_json only
  std::uint64_t seed = 0;

  double final_loss() const;  // NaN when no epochs ran
  std::vector<double> per_class_accuracy() const;  // 0 for absent classes
};

/// Everything needed to predict except the graph: the frozen encoder plus the
/// trainable components the mode uses.
struct ModelParams {
  TrainMode mode = TrainMode::full;
  EncoderParams encoder;  // frozen; never in group()
  SSMParams ssm;          // full, only_dpmamba
  KanGinParams gin;       // full, only_kangin
  std::vector<Param> head;   // only_dpmamba linear classifier
  std::vector<Param> embed;  // only_kangin input embedding
  ParamGroup group();
};

ModelParams make_model(const Dataset& d, const EncoderParams& enc,
                       const TrainConfig& cfg);

/// Per series, per channel: mean then population std over time, concatenated
/// as [means..., stds...] -> {N, 2C}. Node features for only_kangin.
Matrix meanstd_features(const Dataset& d);

/// Full-graph forward pass -> {N, classes} log-probabilities.
Matrix model_logprobs(const ModelParams& m, const Dataset& d,
                      const SimilarityGraph& g);

struct TrainResult {
  ModelParams model;
  Metrics metrics;
};

/// Batched training over the train split; the unlabeled half participates in
/// batch graphs but never in the loss. `g` is ignored for only_dpmamba.
TrainResult train(const Dataset& d, const SimilarityGraph& g,
                  const EncoderParams& enc, const TrainConfig& cfg);

/// Single full-graph pass; requires every test node labeled.
Metrics evaluate(const ModelParams& m, const Dataset& d,
                 const SimilarityGraph& g);

/// Shared upstream artifacts for the harnesses and the CLI.
struct Pipeline {
  EncoderParams encoder;
  std::vector<Matrix> reps;  // frozen, one (d_target, T') per series
  Matrix distances;          // sentinel-carrying pairwise matrix
  SimilarityGraph graph;
};

/// Cluster (k-means, k = class count) then pairwise FastDTW; honors
/// cfg.workers, result identical for any worker count.
Matrix distance_matrix(const std::vector<Matrix>& reps, int k,
                       const TrainConfig& cfg);
SimilarityGraph graph_from_distances(const Matrix& dist,
                                     const TrainConfig& cfg);
/// Pretrain (or adopt `pretrained`), encode, cluster, build matrix + graph.
Pipeline build_pipeline(const Dataset& d, const TrainConfig& cfg,
                        const EncoderParams* pretrained = nullptr);

/// 1-nearest-neighbor over a sentinel distance matrix: each node takes the
/// label of the closest visible-labeled train node (itself excluded; sentinels
/// count as infinitely far; a node with no reachable candidate falls back to
/// the lowest-index candidate). Train accuracy is leave-one-out.
Metrics knn_evaluate(const Dataset& d, const Matrix& distances);

struct AblateRow {
  TrainMode mode = TrainMode::full;
  Metrics metrics;
};
/// One shared pipeline, then every mode trained and evaluated on it.
std::vector<AblateRow> ablate(const Dataset& d, const TrainConfig& cfg);

struct SweepRow {
  double fraction = 1.0;
  Index labeled_count = 0;
  Metrics metrics;
};
/// One shared pipeline; per fraction, a fresh semi-supervised split of the
/// train labels followed by a train/evaluate cycle.
std::vector<SweepRow> label_fraction_sweep(const Dataset& d,
                                           const std::vector<double>& fractions,
                                           const TrainConfig& cfg);

// ---- emitters; wall time never appears in these files ----
std::string summary_json_text(const Metrics& m, TrainMode mode);
void write_metrics_jsonl(const Metrics& m, const std::filesystem::path& path);
void write_summary_json(const Metrics& m, TrainMode mode,
                        const std::filesystem::path& path);
void write_ablation_csv(const std::vector<AblateRow>& rows,
                        const std::filesystem::path& path);
void write_sweep_csv(const std::vector<SweepRow>& rows,
                     const std::filesystem::path& path);
void write_timing_json(double seconds, const std::filesystem::path& path);

}  // namespace csdp
