#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "popgrid/dataset.hpp"
#include "popgrid/patchkit.hpp"
#include "popgrid/rng.hpp"

namespace popgrid {

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

enum class LossBase { kTen, kE };

LossBase parse_loss_base(std::string_view text);
std::string to_string(LossBase base);

// log(cosh(d)) in the requested base, overflow-free for large |d|.
double log_cosh(double d, LossBase base = LossBase::kTen);

// Sum over the batch of log(cosh(pred_i - truth_i)).
double log_cosh_loss(std::span<const double> pred, std::span<const double> truth,
                     LossBase base = LossBase::kTen);

// d loss / d pred_i = tanh(pred_i - truth_i) / ln(base).
std::vector<double> loss_gradient(std::span<const double> pred, std::span<const double> truth,
                                  LossBase base = LossBase::kTen);

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

// 1x1 fusion (4 -> 3 channels), then 3x3 same-padded conv + ReLU + 2x2 max
// pool per block, global average pool, dropout and a single linear output.
struct ModelConfig {
  std::size_t input_size = 64;
  std::vector<std::size_t> conv_channels{8, 16};
  double dropout = 0.5;

  static constexpr std::size_t kInputChannels = 4;
  static constexpr std::size_t kFusedChannels = 3;

  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(std::string_view text);
};

// Trainable tensors in declaration order (fusion.w, fusion.b, conv0.w,
// conv0.b, ..., head.w, head.b) with congruent Adam moments.
struct ParamSet {
  std::vector<std::string> names;
  std::vector<std::vector<double>> tensors;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;

  std::size_t total_size() const;
  // Same layout, every entry zero, no moments.
  ParamSet zeros_like() const;
};

using Gradients = std::vector<std::vector<double>>;

// Fan-in scaled uniform weights (He bounds), zero biases.
ParamSet init_params(const ModelConfig& config, std::uint64_t seed);

// Contract for anything mapping model inputs to log-count estimates.
class Estimator {
 public:
  virtual ~Estimator() = default;
  virtual std::vector<double> predict(std::span<const PatchTensor> batch) const = 0;
};

// Activations of one sample kept between forward() and backward().
struct NetTrace {
  std::vector<double> input;
  std::vector<double> fused;
  std::vector<std::vector<double>> activated;  // post-ReLU conv output per block
  std::vector<std::vector<double>> pooled;
  std::vector<std::vector<std::uint32_t>> argmax;
  std::vector<double> gap;
  std::vector<double> mask;  // empty when dropout was off
  std::vector<double> dropped;
  double output = 0.0;
};

class ReferenceNet : public Estimator {
 public:
  ReferenceNet(ModelConfig config, ParamSet params);

  const ModelConfig& config() const { return config_; }
  const ParamSet& params() const { return params_; }
  ParamSet& params() { return params_; }

  // Runs the batch and records per-sample activations for backward(). With
  // training set, dropout masks are drawn from dropout_rng (which must then be
  // non-null) in batch order.
  std::vector<double> forward(std::span<const PatchTensor> batch, bool training,
                              Rng* dropout_rng = nullptr);

  // Gradients of log_cosh_loss(last forward outputs, truth) w.r.t. every
  // parameter. Throws a protocol error without a preceding forward().
  Gradients backward(std::span<const double> truth, LossBase base = LossBase::kTen);

  // Same gradient path for an arbitrary upstream d loss / d output.
  Gradients backward_from(std::span<const double> output_grad);

  std::vector<double> predict(std::span<const PatchTensor> batch) const override;

 private:
  ModelConfig config_;
  ParamSet params_;
  std::vector<NetTrace> traces_;
  std::vector<double> last_output_;
};

// ---------------------------------------------------------------------------
// Optimisation
// ---------------------------------------------------------------------------

struct TrainConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 32;
  std::size_t max_steps = 2000;
  std::uint64_t seed = 0;
  bool dropout_enabled = true;
  LossBase loss_base = LossBase::kTen;
  std::size_t eval_every = 100;
  std::size_t patience = 20;

  void validate() const;
};

// One bias-corrected Adam update; increments params.step. Non-finite gradients
// raise a poisoned-update error and leave params untouched.
void adam_step(ParamSet& params, const Gradients& grads, const TrainConfig& config);

using PatchProvider = std::function<PatchTensor(CellId)>;

struct ValidationPoint {
  std::size_t step = 0;
  double loss = 0.0;  // mean per-sample log-cosh over the valid split
};

struct TrainResult {
  ParamSet params;  // best-validation parameters
  std::vector<double> loss_curve;  // per-step training batch loss
  std::vector<ValidationPoint> validation;
  std::size_t best_step = 0;
  bool early_stopped = false;
};

using ValidationCallback = std::function<void(const ValidationPoint&)>;

TrainResult train(const ModelConfig& model, const DatasetManifest& manifest,
                  const PatchProvider& patches, const TrainConfig& config,
                  const ValidationCallback& on_validation = {});

// Mean per-sample log-cosh of an estimator over a set of samples.
double mean_loss(const Estimator& est, std::span<const Sample> samples, const PatchProvider& patches,
                 LossBase base);

std::vector<double> predict_samples(const Estimator& est, std::span<const Sample> samples,
                                    const PatchProvider& patches);

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

class MeanBaseline : public Estimator {
 public:
  explicit MeanBaseline(const DatasetManifest& manifest);
  std::vector<double> predict(std::span<const PatchTensor> batch) const override;
  double value() const { return mean_; }

 private:
  double mean_ = 0.0;
};

std::array<double, 4> band_means(const PatchTensor& patch);

// Ordinary least squares from per-patch band means (+ intercept) to targets.
class BandStatBaseline : public Estimator {
 public:
  BandStatBaseline(const DatasetManifest& manifest, const PatchProvider& patches);
  BandStatBaseline(std::span<const std::array<double, 4>> features, std::span<const double> targets);
  std::vector<double> predict(std::span<const PatchTensor> batch) const override;

  const std::array<double, 5>& coefficients() const { return coef_; }
  bool ridge_fallback() const { return ridge_; }

 private:
  void fit(std::span<const std::array<double, 4>> features, std::span<const double> targets);
  std::array<double, 5> coef_{};
  bool ridge_ = false;
};

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

struct PredictionRow {
  CellId cell;
  Split split = Split::kTrain;
  double target_lg = 0.0;
  double pred_lg = 0.0;
};

std::vector<PredictionRow> predict_table(const Estimator& est, const DatasetManifest& manifest,
                                         const PatchProvider& patches);
void write_predictions(std::span<const PredictionRow> rows, const std::filesystem::path& path);
std::vector<PredictionRow> read_predictions(const std::filesystem::path& path);

void write_checkpoint(const ModelConfig& config, const ParamSet& params,
                      const std::filesystem::path& path);
std::pair<ModelConfig, ParamSet> read_checkpoint(const std::filesystem::path& path);

}  // namespace popgrid
