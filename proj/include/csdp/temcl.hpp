#pragma once

#include <filesystem>
#include <vector>

#include "csdp/data.hpp"
#include "csdp/optim.hpp"
#include "csdp/tape.hpp"

namespace csdp {

/// Three-block convolutional encoder over (channels, time): per block
/// conv(k) -> relu -> maxpool(2,2), channel widths (32, 64, d_target),
/// kernel sizes (8, 5, 3). Output is a (d_target, T') representation.
struct EncoderParams {
  Index in_channels = 1;
  Index d_target = 64;
  std::vector<Param> params;  // w1,b1,w2,b2,w3,b3

  Param& w(int block) { return params[static_cast<size_t>(2 * block)]; }
  Param& b(int block) { return params[static_cast<size_t>(2 * block + 1)]; }
  const Param& w(int block) const { return params[static_cast<size_t>(2 * block)]; }
  const Param& b(int block) const { return params[static_cast<size_t>(2 * block + 1)]; }
  ParamGroup group();
};

inline constexpr Index kEncoderKernels[3] = {8, 5, 3};
inline constexpr Index kEncoderWidth1 = 32;
inline constexpr Index kEncoderWidth2 = 64;

/// Shortest input the conv/pool chain can reduce to one output step.
inline constexpr Index kMinEncodeLength = 31;

/// Uniform(-1/sqrt(fan_in)) weights, zero biases.
EncoderParams make_encoder(Index in_channels, Index d_target, std::uint64_t seed);

/// Output length of the conv/pool chain for input length t; errors when the
/// chain bottoms out (t < kMinEncodeLength).
Index rep_length(Index t);

/// Bound tape vars for one encoder.
struct EncoderVars {
  std::vector<Var> vars;  // same order as EncoderParams::params
};
EncoderVars bind_encoder(Tape& t, EncoderParams& p, TapeBinding& binding);

/// Forward pass on the tape. `valid_len` handles right-zero-padded inputs:
/// output columns past rep_length(valid_len) are forced to zero and the
/// valid prefix is bit-identical to encoding the unpadded series.
Var encode_on_tape(Tape& t, const EncoderVars& e, const Matrix& x,
                   Index valid_len = -1);

/// Forward-only convenience wrapper.
Matrix encode(const EncoderParams& p, const Matrix& x, Index valid_len = -1);

/// Frozen encoder applied to every series (train and test alike).
std::vector<Matrix> encode_dataset(const EncoderParams& p, const Dataset& d);

// ---- contrastive view generation ----

struct CropPair {
  Matrix a, b;
  Index t1 = 0, t2 = 0;
  int y = 0;
};

/// x + Normal(0, sigma^2) elementwise.
Matrix gen_negative_noise(const Matrix& x, double sigma, std::uint64_t seed);

/// x + per-channel Normal(0, (scale * std_c)^2); constant channels fall back
/// to the absolute scale so the views never coincide.
Matrix gen_negative_noise_scaled(const Matrix& x, double scale, std::uint64_t seed);

/// Two non-overlapping windows of length crop_len (default floor(T/2)), y=0.
CropPair gen_negative_crop(const Matrix& x, std::uint64_t seed, Index crop_len = -1);

/// Two windows of length crop_len (default floor(T/2)) overlapping by at
/// least half a window, y=1.
CropPair gen_positive_pair(const Matrix& x, std::uint64_t seed, Index crop_len = -1);

// ---- loss ----

/// Margin contrastive loss between flattened representations:
/// y*d^2 + (1-y)*max(0, margin-d)^2. With alg2_convention the roles of y
/// and (1-y) swap.
Var contrastive_loss(Var zi, Var zj, int y, double margin,
                     bool alg2_convention = false);
double contrastive_loss_value(const Matrix& zi, const Matrix& zj, int y, double margin,
                              bool alg2_convention = false);

// ---- pretraining ----

struct PretrainConfig {
  Index d_target = 64;
  int epochs = 500;
  Index batch = 8;
  double lr = 1e-3;
  double margin = 1.0;
  double sigma_scale = 0.2;
  bool alg2_convention = false;
  std::filesystem::path checkpoint;  // empty: no checkpoint reuse or saving
};

struct PretrainResult {
  EncoderParams encoder;
  std::vector<double> loss_trace;  // per-epoch mean contrastive loss
  bool loaded_from_checkpoint = false;
};

/// Contrastive pretraining over the train split: per anchor one positive
/// pair and two negative pairs (noisy copy, non-overlapping crops). When the
/// configured checkpoint already exists it is loaded and training skipped.
PretrainResult pretrain(const Dataset& d, const PretrainConfig& cfg,
                        std::uint64_t seed);

}  // namespace csdp
