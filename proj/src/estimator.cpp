#include "popgrid/estimator.hpp"

#include <fmt/format.h>

#include <Eigen/Dense>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "popgrid/error.hpp"
#include "popgrid/parallel.hpp"

namespace popgrid {

namespace {

double log_base_factor(LossBase base) { return base == LossBase::kTen ? std::numbers::ln10 : 1.0; }

void check_lengths(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size() || pred.empty()) {
    throw Error(ErrorCode::kShape,
                fmt::format("loss needs equal non-empty lengths, got {} and {}", pred.size(), truth.size()));
  }
}

std::vector<PatchTensor> make_patches(std::span<const Sample> samples, const PatchProvider& patches) {
  std::vector<PatchTensor> out(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) { out[i] = patches(samples[i].cell); });
  return out;
}

constexpr std::size_t kPredictChunk = 64;

}  // namespace

LossBase parse_loss_base(std::string_view text) {
  if (text == "10") return LossBase::kTen;
  if (text == "e") return LossBase::kE;
  throw Error(ErrorCode::kUsage, fmt::format("loss log base must be 'e' or '10', got '{}'", text));
}

std::string to_string(LossBase base) { return base == LossBase::kTen ? "10" : "e"; }

double log_cosh(double d, LossBase base) {
  const double a = std::fabs(d);
  double natural = 0.0;
  if (a > 20.0) {
    natural = a - std::numbers::ln2 + std::log1p(std::exp(-2.0 * a));
  } else {
    natural = std::log(std::cosh(d));
  }
  return natural / log_base_factor(base);
}

double log_cosh_loss(std::span<const double> pred, std::span<const double> truth, LossBase base) {
  check_lengths(pred, truth);
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) sum += log_cosh(pred[i] - truth[i], base);
  return sum;
}

std::vector<double> loss_gradient(std::span<const double> pred, std::span<const double> truth,
                                  LossBase base) {
  check_lengths(pred, truth);
  std::vector<double> g(pred.size());
  const double f = log_base_factor(base);
  for (std::size_t i = 0; i < pred.size(); ++i) g[i] = std::tanh(pred[i] - truth[i]) / f;
  return g;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::kArgument, "learning rate must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw Error(ErrorCode::kArgument, "Adam betas must lie in (0, 1)");
  }
  if (!(epsilon > 0.0)) throw Error(ErrorCode::kArgument, "Adam epsilon must be positive");
  if (batch_size == 0) throw Error(ErrorCode::kArgument, "batch size must be at least 1");
  if (eval_every == 0) throw Error(ErrorCode::kArgument, "validation interval must be positive");
}

void adam_step(ParamSet& params, const Gradients& grads, const TrainConfig& config) {
  if (grads.size() != params.tensors.size() || params.m.size() != params.tensors.size() ||
      params.v.size() != params.tensors.size()) {
    throw Error(ErrorCode::kShape, "gradient/moment layout does not match the parameters");
  }
  for (std::size_t k = 0; k < grads.size(); ++k) {
    if (grads[k].size() != params.tensors[k].size() || params.m[k].size() != grads[k].size() ||
        params.v[k].size() != grads[k].size()) {
      throw Error(ErrorCode::kShape, fmt::format("tensor {} shape mismatch", k));
    }
    for (std::size_t j = 0; j < grads[k].size(); ++j) {
      if (!std::isfinite(grads[k][j])) {
        throw Error(ErrorCode::kPoisonedUpdate,
                    fmt::format("non-finite gradient in tensor {} entry {} at step {}", k, j,
                                params.step + 1));
      }
    }
  }
  params.step += 1;
  const double t = static_cast<double>(params.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t k = 0; k < grads.size(); ++k) {
    auto& theta = params.tensors[k];
    auto& m = params.m[k];
    auto& v = params.v[k];
    const auto& g = grads[k];
    for (std::size_t j = 0; j < g.size(); ++j) {
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g[j];
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      theta[j] -= config.learning_rate * mhat / (std::sqrt(vhat) + config.epsilon);
    }
  }
}

std::vector<double> predict_samples(const Estimator& est, std::span<const Sample> samples,
                                    const PatchProvider& patches) {
  std::vector<double> out;
  out.reserve(samples.size());
  for (std::size_t lo = 0; lo < samples.size(); lo += kPredictChunk) {
    const auto chunk = samples.subspan(lo, std::min(kPredictChunk, samples.size() - lo));
    const auto batch = make_patches(chunk, patches);
    const auto pred = est.predict(batch);
    out.insert(out.end(), pred.begin(), pred.end());
  }
  return out;
}

double mean_loss(const Estimator& est, std::span<const Sample> samples, const PatchProvider& patches,
                 LossBase base) {
  if (samples.empty()) throw Error(ErrorCode::kEmptySplit, "no samples to score");
  const auto pred = predict_samples(est, samples, patches);
  std::vector<double> truth(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) truth[i] = samples[i].target_lg;
  return log_cosh_loss(pred, truth, base) / static_cast<double>(samples.size());
}

TrainResult train(const ModelConfig& model, const DatasetManifest& manifest,
                  const PatchProvider& patches, const TrainConfig& config,
                  const ValidationCallback& on_validation) {
  model.validate();
  config.validate();
  const auto train_set = manifest.of_split(Split::kTrain);
  const auto valid_set = manifest.of_split(Split::kValid);
  if (train_set.empty() || valid_set.empty()) {
    throw Error(ErrorCode::kEmptySplit, "training needs non-empty train and valid splits");
  }

  ReferenceNet net(model, init_params(model, derive_seed(config.seed, 1)));
  TrainResult result;
  result.params = net.params();
  if (config.max_steps == 0) return result;

  Rng order_rng(derive_seed(config.seed, 2));
  Rng dropout_rng(derive_seed(config.seed, 3));

  double best = mean_loss(net, valid_set, patches, config.loss_base);
  result.validation.push_back({0, best});
  if (on_validation) on_validation(result.validation.back());
  std::size_t stale = 0;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle(std::span<std::size_t>(order), order_rng);
  std::size_t cursor = 0;

  std::vector<Sample> batch(config.batch_size);
  std::vector<double> truth(config.batch_size);
  for (std::size_t step = 1; step <= config.max_steps; ++step) {
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      if (cursor == order.size()) {
        shuffle(std::span<std::size_t>(order), order_rng);
        cursor = 0;
      }
      batch[b] = train_set[order[cursor++]];
      truth[b] = batch[b].target_lg;
    }
    const auto inputs = make_patches(batch, patches);
    const auto pred = net.forward(inputs, config.dropout_enabled, &dropout_rng);
    const double loss = log_cosh_loss(pred, truth, config.loss_base);
    if (!std::isfinite(loss)) {
      throw Error(ErrorCode::kDivergence, fmt::format("training loss diverged at step {}", step));
    }
    adam_step(net.params(), net.backward(truth, config.loss_base), config);
    result.loss_curve.push_back(loss);

    if (step % config.eval_every == 0 || step == config.max_steps) {
      const double vl = mean_loss(net, valid_set, patches, config.loss_base);
      if (!std::isfinite(vl)) {
        throw Error(ErrorCode::kDivergence, fmt::format("validation loss diverged at step {}", step));
      }
      result.validation.push_back({step, vl});
      if (on_validation) on_validation(result.validation.back());
      if (vl < best) {
        best = vl;
        result.params = net.params();
        result.best_step = step;
        stale = 0;
      } else if (++stale >= config.patience) {
        result.early_stopped = true;
        break;
      }
    }
  }
  return result;
}

MeanBaseline::MeanBaseline(const DatasetManifest& manifest) {
  const auto train_set = manifest.of_split(Split::kTrain);
  if (train_set.empty()) throw Error(ErrorCode::kEmptySplit, "mean baseline needs a train split");
  double s = 0.0;
  for (const auto& sample : train_set) s += sample.target_lg;
  mean_ = s / static_cast<double>(train_set.size());
}

std::vector<double> MeanBaseline::predict(std::span<const PatchTensor> batch) const {
  return std::vector<double>(batch.size(), mean_);
}

std::array<double, 4> band_means(const PatchTensor& patch) {
  std::array<double, 4> out{};
  const std::size_t plane = patch.plane();
  for (std::size_t ch = 0; ch < PatchTensor::kChannels; ++ch) {
    double s = 0.0;
    for (std::size_t q = 0; q < plane; ++q) s += patch.values[ch * plane + q];
    out[ch] = s / static_cast<double>(plane);
  }
  return out;
}

BandStatBaseline::BandStatBaseline(const DatasetManifest& manifest, const PatchProvider& patches) {
  const auto train_set = manifest.of_split(Split::kTrain);
  if (train_set.empty()) throw Error(ErrorCode::kEmptySplit, "band-stat baseline needs a train split");
  std::vector<std::array<double, 4>> features(train_set.size());
  std::vector<double> targets(train_set.size());
  parallel_for(train_set.size(), [&](std::size_t i) {
    features[i] = band_means(patches(train_set[i].cell));
  });
  for (std::size_t i = 0; i < train_set.size(); ++i) targets[i] = train_set[i].target_lg;
  fit(features, targets);
}

BandStatBaseline::BandStatBaseline(std::span<const std::array<double, 4>> features,
                                   std::span<const double> targets) {
  fit(features, targets);
}

void BandStatBaseline::fit(std::span<const std::array<double, 4>> features,
                           std::span<const double> targets) {
  if (features.size() != targets.size() || features.empty()) {
    throw Error(ErrorCode::kShape, "band-stat fit needs one target per feature row");
  }
  Eigen::Matrix<double, 5, 5> xtx = Eigen::Matrix<double, 5, 5>::Zero();
  Eigen::Matrix<double, 5, 1> xty = Eigen::Matrix<double, 5, 1>::Zero();
  for (std::size_t i = 0; i < features.size(); ++i) {
    Eigen::Matrix<double, 5, 1> x;
    x << 1.0, features[i][0], features[i][1], features[i][2], features[i][3];
    xtx.noalias() += x * x.transpose();
    xty.noalias() += x * targets[i];
  }
  Eigen::FullPivLU<Eigen::Matrix<double, 5, 5>> lu(xtx);
  lu.setThreshold(1e-12);
  Eigen::Matrix<double, 5, 1> beta;
  if (lu.rank() == 5) {
    beta = xtx.ldlt().solve(xty);
  } else {
    ridge_ = true;
    xtx.diagonal().array() += 1e-8;
    beta = xtx.ldlt().solve(xty);
  }
  for (int k = 0; k < 5; ++k) coef_[static_cast<std::size_t>(k)] = beta(k);
}

std::vector<double> BandStatBaseline::predict(std::span<const PatchTensor> batch) const {
  std::vector<double> out(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto f = band_means(batch[i]);
    out[i] = coef_[0] + coef_[1] * f[0] + coef_[2] * f[1] + coef_[3] * f[2] + coef_[4] * f[3];
  }
  return out;
}

std::vector<PredictionRow> predict_table(const Estimator& est, const DatasetManifest& manifest,
                                         const PatchProvider& patches) {
  const auto pred = predict_samples(est, manifest.samples, patches);
  std::vector<PredictionRow> rows(manifest.samples.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& s = manifest.samples[i];
    rows[i] = {s.cell, s.split, s.target_lg, pred[i]};
  }
  return rows;
}

void write_predictions(std::span<const PredictionRow> rows, const std::filesystem::path& path) {
  std::string out = "row,col,split,target_lg,pred_lg\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{:.9g},{:.9g}\n", r.cell.row, r.cell.col, to_string(r.split),
                       r.target_lg, r.pred_lg);
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, fmt::format("cannot write {}", path.string()));
  f << out;
}

std::vector<PredictionRow> read_predictions(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::kIo, fmt::format("cannot open {}", path.string()));
  std::string line;
  if (!std::getline(f, line) || line != "row,col,split,target_lg,pred_lg") {
    throw Error(ErrorCode::kParse, fmt::format("{}: line 1: unexpected prediction table header",
                                               path.string()));
  }
  std::vector<PredictionRow> rows;
  std::size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field[5];
    for (int k = 0; k < 5; ++k) {
      if (!std::getline(ss, field[k], ',')) {
        throw Error(ErrorCode::kParse, fmt::format("{}: line {}: expected 5 fields", path.string(), line_no));
      }
    }
    try {
      PredictionRow r;
      r.cell = {std::stoul(field[0]), std::stoul(field[1])};
      r.split = parse_split(field[2]);
      r.target_lg = std::stod(field[3]);
      r.pred_lg = std::stod(field[4]);
      rows.push_back(r);
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::kParse, fmt::format("{}: line {}: bad number", path.string(), line_no));
    } catch (const Error& e) {
      throw Error(ErrorCode::kParse, fmt::format("{}: line {}: {}", path.string(), line_no, e.what()));
    }
  }
  return rows;
}

namespace {

constexpr char kCheckpointMagic[4] = {'P', 'G', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename U>
void put_le(std::string& buf, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) buf.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

template <typename U>
U take_le(const std::string& buf, std::size_t& pos) {
  if (pos + sizeof(U) > buf.size()) throw Error(ErrorCode::kFormat, "truncated checkpoint");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    value |= static_cast<U>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
  }
  pos += sizeof(U);
  return value;
}

}  // namespace

void write_checkpoint(const ModelConfig& config, const ParamSet& params,
                      const std::filesystem::path& path) {
  std::string buf(kCheckpointMagic, 4);
  put_le<std::uint32_t>(buf, kCheckpointVersion);
  const std::string json = config.to_json();
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(json.size()));
  buf += json;
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(params.tensors.size()));
  for (const auto& t : params.tensors) {
    put_le<std::uint64_t>(buf, t.size());
    for (double v : t) put_le<std::uint64_t>(buf, std::bit_cast<std::uint64_t>(v));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, fmt::format("cannot write {}", path.string()));
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

std::pair<ModelConfig, ParamSet> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, fmt::format("cannot open {}", path.string()));
  const std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 4 || std::memcmp(buf.data(), kCheckpointMagic, 4) != 0) {
    throw Error(ErrorCode::kFormat, fmt::format("{}: not a PGCK checkpoint", path.string()));
  }
  std::size_t pos = 4;
  const auto version = take_le<std::uint32_t>(buf, pos);
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kFormat, fmt::format("{}: unsupported checkpoint version {}", path.string(), version));
  }
  const auto json_len = take_le<std::uint32_t>(buf, pos);
  if (pos + json_len > buf.size()) throw Error(ErrorCode::kFormat, "truncated checkpoint");
  ModelConfig config = ModelConfig::from_json(std::string_view(buf).substr(pos, json_len));
  pos += json_len;

  ParamSet params = init_params(config, 0);
  const auto count = take_le<std::uint32_t>(buf, pos);
  if (count != params.tensors.size()) {
    throw Error(ErrorCode::kShape, fmt::format("{}: {} tensors, model needs {}", path.string(), count,
                                               params.tensors.size()));
  }
  for (auto& t : params.tensors) {
    const auto n = take_le<std::uint64_t>(buf, pos);
    if (n != t.size()) throw Error(ErrorCode::kShape, fmt::format("{}: tensor size mismatch", path.string()));
    for (double& v : t) v = std::bit_cast<double>(take_le<std::uint64_t>(buf, pos));
  }
  if (pos != buf.size()) throw Error(ErrorCode::kFormat, fmt::format("{}: trailing bytes", path.string()));
  return {config, params};
}

}  // namespace popgrid
