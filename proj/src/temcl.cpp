#include "csdp/temcl.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "csdp/checkpoint.hpp"
#include "csdp/error.hpp"
#include "csdp/rng.hpp"

namespace csdp {

namespace {

// seed-stream tags (see derive_seed)
constexpr std::uint64_t kTagInit = 0x11;
constexpr std::uint64_t kTagOrder = 0x22;
constexpr std::uint64_t kTagPos = 0x33;
constexpr std::uint64_t kTagNoise = 0x44;
constexpr std::uint64_t kTagCrop = 0x55;

Tensor uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i)
    t[i] = bound * (2.0 * draw_unit(rng) - 1.0);
  return t;
}

}  // namespace

ParamGroup EncoderParams::group() {
  ParamGroup g;
  for (auto& p : params) g.push_back(&p);
  return g;
}

EncoderParams make_encoder(Index in_channels, Index d_target, std::uint64_t seed) {
  require(in_channels >= 1, "encoder needs at least one input channel, got ",
          in_channels);
  require(d_target >= 1, "encoder output width must be positive, got ", d_target);
  auto rng = make_rng(derive_seed(seed, kTagInit));
  const Index widths[3] = {kEncoderWidth1, kEncoderWidth2, d_target};
  EncoderParams e;
  e.in_channels = in_channels;
  e.d_target = d_target;
  Index cin = in_channels;
  for (int blk = 0; blk < 3; ++blk) {
    Index cout = widths[blk];
    Index k = kEncoderKernels[blk];
    double bound = 1.0 / std::sqrt(static_cast<double>(cin * k));
    std::string tag = std::to_string(blk + 1);
    e.params.emplace_back("enc.w" + tag,
                          uniform_tensor({cout, cin, k}, bound, rng));
    e.params.emplace_back("enc.b" + tag, Tensor::zeros({cout}));
    cin = cout;
  }
  return e;
}

Index rep_length(Index t) {
  Index v = t;
  for (Index k : kEncoderKernels) {
    v = v - k + 1;  // valid conv
    v = v / 2;      // pool(2,2)
    require(v >= 1, "series length ", t,
            " is too short for the encoder (needs at least ", kMinEncodeLength,
            " steps)");
  }
  return v;
}

EncoderVars bind_encoder(Tape& t, EncoderParams& p, TapeBinding& binding) {
  EncoderVars e;
  for (auto& param : p.params) e.vars.push_back(binding.bind(t, param));
  return e;
}

Var encode_on_tape(Tape& t, const EncoderVars& e, const Matrix& x,
                   Index valid_len) {
  require(e.vars.size() == 6, "encoder binding holds ", e.vars.size(),
          " vars, expected 6");
  const Index total = x.cols();
  if (valid_len < 0) valid_len = total;
  require(valid_len >= 1 && valid_len <= total, "valid_len ", valid_len,
          " outside series length ", total);
  rep_length(valid_len);  // rejects inputs the chain cannot reduce

  Var h = t.constant(Tensor::from_matrix(x));
  Index valid = valid_len;
  Index len = total;
  for (int blk = 0; blk < 3; ++blk) {
    Index k = kEncoderKernels[blk];
    h = conv1d(h, e.vars[static_cast<size_t>(2 * blk)],
               e.vars[static_cast<size_t>(2 * blk + 1)]);
    len = len - k + 1;
    valid = valid - k + 1;
    // padding columns carry conv/bias garbage; zero them before they can
    // leak through relu or win a pool window
    if (valid < len) h = mask_cols_from(h, valid);
    h = relu(h);
    h = maxpool1d(h, 2, 2);
    len = len / 2;
    valid = valid / 2;
    if (valid < len) h = mask_cols_from(h, valid);
  }
  return h;
}

Matrix encode(const EncoderParams& p, const Matrix& x, Index valid_len) {
  Tape t;
  t.set_grad_enabled(false);
  EncoderVars e;
  for (const auto& param : p.params) e.vars.push_back(t.leaf(param.value));
  Var h = encode_on_tape(t, e, x, valid_len);
  return t.value(h).mat();
}

std::vector<Matrix> encode_dataset(const EncoderParams& p, const Dataset& d) {
  std::vector<Matrix> reps;
  reps.reserve(d.series.size());
  for (const auto& s : d.series) reps.push_back(encode(p, s.values));
  return reps;
}

Matrix gen_negative_noise(const Matrix& x, double sigma, std::uint64_t seed) {
  require(sigma > 0.0, "noise sigma must be positive, got ", sigma);
  auto rng = make_rng(seed);
  Matrix out = x;
  for (Index c = 0; c < out.rows(); ++c)
    for (Index t = 0; t < out.cols(); ++t) out(c, t) += sigma * draw_gaussian(rng);
  return out;
}

Matrix gen_negative_noise_scaled(const Matrix& x, double scale, std::uint64_t seed) {
  require(scale > 0.0, "noise scale must be positive, got ", scale);
  auto rng = make_rng(seed);
  Matrix out = x;
  for (Index c = 0; c < out.rows(); ++c) {
    double mean = x.row(c).mean();
    double var = (x.row(c).array() - mean).square().mean();
    double sd = std::sqrt(var);
    double sigma = sd > 1e-12 ? scale * sd : scale;  // constant channel fallback
    for (Index t = 0; t < out.cols(); ++t) out(c, t) += sigma * draw_gaussian(rng);
  }
  return out;
}

CropPair gen_negative_crop(const Matrix& x, std::uint64_t seed, Index crop_len) {
  const Index total = x.cols();
  Index len = crop_len < 0 ? total / 2 : crop_len;
  require(len >= 1, "crop length must be positive, got ", len);
  require(2 * len <= total, "series of length ", total,
          " cannot hold two disjoint windows of length ", len);
  auto rng = make_rng(seed);
  // a start is feasible iff a disjoint second window fits before or after it
  std::vector<Index> feasible;
  for (Index t1 = 0; t1 + len <= total; ++t1)
    if (t1 >= len || t1 + 2 * len <= total) feasible.push_back(t1);
  Index t1 = feasible[draw_below(rng, feasible.size())];
  std::vector<Index> partners;
  for (Index t2 = 0; t2 + len <= total; ++t2)
    if (t2 + len <= t1 || t2 >= t1 + len) partners.push_back(t2);
  Index t2 = partners[draw_below(rng, partners.size())];
  CropPair pair;
  pair.t1 = t1;
  pair.t2 = t2;
  pair.a = x.middleCols(t1, len);
  pair.b = x.middleCols(t2, len);
  pair.y = 0;
  return pair;
}

CropPair gen_positive_pair(const Matrix& x, std::uint64_t seed, Index crop_len) {
  const Index total = x.cols();
  Index len = crop_len < 0 ? total / 2 : crop_len;
  require(len >= 1, "crop length must be positive, got ", len);
  require(len <= total, "crop length ", len, " exceeds series length ", total);
  auto rng = make_rng(seed);
  Index t1 = static_cast<Index>(draw_below(rng, static_cast<std::uint64_t>(total - len + 1)));
  // second window shifted at most half a window, so overlap >= len/2
  Index lo = std::max<Index>(0, t1 - len / 2);
  Index hi = std::min<Index>(total - len, t1 + len / 2);
  Index t2 = lo + static_cast<Index>(draw_below(rng, static_cast<std::uint64_t>(hi - lo + 1)));
  CropPair pair;
  pair.t1 = t1;
  pair.t2 = t2;
  pair.a = x.middleCols(t1, len);
  pair.b = x.middleCols(t2, len);
  pair.y = 1;
  return pair;
}

namespace {
// keeps the distance gradient finite when two views coincide
constexpr double kDistEps = 1e-12;
}  // namespace

Var contrastive_loss(Var zi, Var zj, int y, double margin,
                     bool alg2_convention) {
  require(y == 0 || y == 1, "pair label must be 0 or 1, got ", y);
  require(margin > 0.0, "margin must be positive, got ", margin);
  bool similar = alg2_convention ? y == 0 : y == 1;
  Var d2 = sum_all(square(sub(zi, zj)));
  if (similar) return d2;
  Var d = sqrt_op(add_scalar(d2, kDistEps));
  return square(relu(add_scalar(mul_scalar(d, -1.0), margin)));
}

double contrastive_loss_value(const Matrix& zi, const Matrix& zj, int y,
                              double margin, bool alg2_convention) {
  require(zi.rows() == zj.rows() && zi.cols() == zj.cols(),
          "representation shapes differ: ", zi.rows(), "x", zi.cols(), " vs ",
          zj.rows(), "x", zj.cols());
  require(y == 0 || y == 1, "pair label must be 0 or 1, got ", y);
  require(margin > 0.0, "margin must be positive, got ", margin);
  bool similar = alg2_convention ? y == 0 : y == 1;
  double d2 = (zi - zj).squaredNorm();
  if (similar) return d2;
  double gap = margin - std::sqrt(d2);
  return gap > 0.0 ? gap * gap : 0.0;
}

PretrainResult pretrain(const Dataset& d, const PretrainConfig& cfg,
                        std::uint64_t seed) {
  validate(d);
  require(cfg.batch >= 1, "batch size must be positive, got ", cfg.batch);
  require(cfg.epochs >= 0, "epoch count cannot be negative, got ", cfg.epochs);
  const std::vector<Index> train = d.train_indices();
  require(!train.empty(), "pretraining needs at least one train series");
  const Index channels = d.series.front().values.rows();
  for (Index idx : train) {
    Index len = d.series[static_cast<size_t>(idx)].values.cols();
    require(len >= kMinEncodeLength, "train series ",
            d.series[static_cast<size_t>(idx)].series_id, " has length ", len,
            " but the encoder needs at least ", kMinEncodeLength);
  }

  PretrainResult res;
  res.encoder = make_encoder(channels, cfg.d_target, seed);
  ParamGroup group = res.encoder.group();

  if (!cfg.checkpoint.empty() && std::filesystem::exists(cfg.checkpoint)) {
    load_checkpoint(cfg.checkpoint, group);
    res.loaded_from_checkpoint = true;
    return res;
  }

  OptimState st = make_optim_state(group, cfg.lr);
  std::vector<Index> anchors = train;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto order_rng = make_rng(derive_seed(seed, kTagOrder, static_cast<std::uint64_t>(epoch)));
    deterministic_shuffle(anchors, order_rng);

    double epoch_sum = 0.0;
    long epoch_pairs = 0;
    for (size_t start = 0; start < anchors.size(); start += static_cast<size_t>(cfg.batch)) {
      size_t stop = std::min(anchors.size(), start + static_cast<size_t>(cfg.batch));
      Tape t;
      t.set_finite_checks(true);
      TapeBinding binding;
      EncoderVars enc = bind_encoder(t, res.encoder, binding);

      std::vector<Var> losses;
      for (size_t i = start; i < stop; ++i) {
        Index idx = anchors[i];
        const Matrix& x = d.series[static_cast<size_t>(idx)].values;
        const Index len = x.cols();
        auto e = static_cast<std::uint64_t>(epoch);
        auto s = static_cast<std::uint64_t>(idx);

        // positive: two heavily overlapping crops
        Index lpos = std::max(len / 2, kMinEncodeLength);
        CropPair pos = gen_positive_pair(x, derive_seed(seed, kTagPos, e, s), lpos);
        losses.push_back(contrastive_loss(encode_on_tape(t, enc, pos.a),
                                          encode_on_tape(t, enc, pos.b), 1,
                                          cfg.margin, cfg.alg2_convention));

        // negative: anchor vs noise-corrupted copy
        Matrix noisy = gen_negative_noise_scaled(x, cfg.sigma_scale,
                                                 derive_seed(seed, kTagNoise, e, s));
        losses.push_back(contrastive_loss(encode_on_tape(t, enc, x),
                                          encode_on_tape(t, enc, noisy), 0,
                                          cfg.margin, cfg.alg2_convention));

        // negative: disjoint crops; series too short for two windows fall
        // back to an independent noise draw
        if (len / 2 >= kMinEncodeLength) {
          CropPair neg = gen_negative_crop(x, derive_seed(seed, kTagCrop, e, s));
          losses.push_back(contrastive_loss(encode_on_tape(t, enc, neg.a),
                                            encode_on_tape(t, enc, neg.b), 0,
                                            cfg.margin, cfg.alg2_convention));
        } else {
          Matrix noisy2 = gen_negative_noise_scaled(x, cfg.sigma_scale,
                                                    derive_seed(seed, kTagCrop, e, s));
          losses.push_back(contrastive_loss(encode_on_tape(t, enc, x),
                                            encode_on_tape(t, enc, noisy2), 0,
                                            cfg.margin, cfg.alg2_convention));
        }
      }

      Var total = losses.front();
      for (size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
      Var loss = mul_scalar(total, 1.0 / static_cast<double>(losses.size()));
      double batch_loss = t.value(loss).value();
      if (!std::isfinite(batch_loss))
        fail_numeric("pretraining diverged at epoch ", epoch,
                     ": batch loss is not finite");
      t.backward(loss);
      binding.collect(t);
      adam_step(group, st);

      epoch_sum += batch_loss * static_cast<double>(losses.size());
      epoch_pairs += static_cast<long>(losses.size());
    }
    res.loss_trace.push_back(epoch_sum / static_cast<double>(epoch_pairs));
  }

  if (!cfg.checkpoint.empty()) save_checkpoint(cfg.checkpoint, group, seed);
  return res;
}

}  // namespace csdp
