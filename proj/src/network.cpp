#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

#include "popgrid/error.hpp"
#include "popgrid/estimator.hpp"
#include "popgrid/parallel.hpp"

namespace popgrid {

namespace {

// Tensor slots in ParamSet::tensors.
std::size_t conv_w(std::size_t block) { return 2 + 2 * block; }
std::size_t conv_b(std::size_t block) { return 3 + 2 * block; }
std::size_t head_w(const ModelConfig& c) { return 2 + 2 * c.conv_channels.size(); }
std::size_t head_b(const ModelConfig& c) { return head_w(c) + 1; }

std::size_t block_in_channels(const ModelConfig& c, std::size_t block) {
  return block == 0 ? ModelConfig::kFusedChannels : c.conv_channels[block - 1];
}

// Same-padded 3x3 convolution, out = b + w * in.
void conv3x3_forward(const double* in, std::size_t cin, std::size_t H, std::size_t W,
                     const double* w, const double* b, std::size_t cout, double* out) {
  const std::size_t hw = H * W;
  for (std::size_t o = 0; o < cout; ++o) {
    double* dst = out + o * hw;
    std::fill(dst, dst + hw, b[o]);
    for (std::size_t i = 0; i < cin; ++i) {
      const double* src = in + i * hw;
      for (int ky = 0; ky < 3; ++ky) {
        const int dy = ky - 1;
        const std::size_t y_lo = dy < 0 ? 1 : 0;
        const std::size_t y_hi = dy > 0 ? H - 1 : H;
        for (int kx = 0; kx < 3; ++kx) {
          const int dx = kx - 1;
          const double wv = w[((o * cin + i) * 3 + ky) * 3 + kx];
          const std::size_t x_lo = dx < 0 ? 1 : 0;
          const std::size_t x_hi = dx > 0 ? W - 1 : W;
          for (std::size_t y = y_lo; y < y_hi; ++y) {
            double* d = dst + y * W;
            const double* s = src + (y + dy) * W + dx;
            for (std::size_t x = x_lo; x < x_hi; ++x) d[x] += wv * s[x];
          }
        }
      }
    }
  }
}

// Accumulates weight/bias gradients and, when din is non-null, the input gradient.
void conv3x3_backward(const double* in, std::size_t cin, std::size_t H, std::size_t W,
                      const double* w, const double* dz, std::size_t cout, double* dw, double* db,
                      double* din) {
  const std::size_t hw = H * W;
  for (std::size_t o = 0; o < cout; ++o) {
    const double* g = dz + o * hw;
    double bsum = 0.0;
    for (std::size_t p = 0; p < hw; ++p) bsum += g[p];
    db[o] += bsum;
    for (std::size_t i = 0; i < cin; ++i) {
      const double* src = in + i * hw;
      double* dsrc = din ? din + i * hw : nullptr;
      for (int ky = 0; ky < 3; ++ky) {
        const int dy = ky - 1;
        const std::size_t y_lo = dy < 0 ? 1 : 0;
        const std::size_t y_hi = dy > 0 ? H - 1 : H;
        for (int kx = 0; kx < 3; ++kx) {
          const int dx = kx - 1;
          const std::size_t widx = ((o * cin + i) * 3 + ky) * 3 + kx;
          const double wv = w[widx];
          const std::size_t x_lo = dx < 0 ? 1 : 0;
          const std::size_t x_hi = dx > 0 ? W - 1 : W;
          double acc = 0.0;
          for (std::size_t y = y_lo; y < y_hi; ++y) {
            const double* gr = g + y * W;
            const double* s = src + (y + dy) * W + dx;
            for (std::size_t x = x_lo; x < x_hi; ++x) acc += gr[x] * s[x];
            if (dsrc) {
              double* ds = dsrc + (y + dy) * W + dx;
              for (std::size_t x = x_lo; x < x_hi; ++x) ds[x] += wv * gr[x];
            }
          }
          dw[widx] += acc;
        }
      }
    }
  }
}

void run_forward(const ModelConfig& cfg, const ParamSet& p, const PatchTensor& patch,
                 const std::vector<double>& mask, NetTrace& t) {
  const std::size_t S = cfg.input_size;
  if (patch.height != S || patch.width != S || patch.values.size() != PatchTensor::kChannels * S * S) {
    throw Error(ErrorCode::kShape, fmt::format("model expects {}x{}x4 input, got {}x{}", S, S,
                                               patch.height, patch.width));
  }
  const std::size_t hw = S * S;
  t.input = patch.values;

  // 1x1 fusion, linear.
  const auto& fw = p.tensors[0];
  const auto& fb = p.tensors[1];
  t.fused.assign(ModelConfig::kFusedChannels * hw, 0.0);
  for (std::size_t c = 0; c < ModelConfig::kFusedChannels; ++c) {
    double* dst = t.fused.data() + c * hw;
    std::fill(dst, dst + hw, fb[c]);
    for (std::size_t k = 0; k < ModelConfig::kInputChannels; ++k) {
      const double wv = fw[c * ModelConfig::kInputChannels + k];
      const double* src = t.input.data() + k * hw;
      for (std::size_t q = 0; q < hw; ++q) dst[q] += wv * src[q];
    }
  }

  const std::size_t blocks = cfg.conv_channels.size();
  t.activated.resize(blocks);
  t.pooled.resize(blocks);
  t.argmax.resize(blocks);
  std::size_t H = S;
  const double* in = t.fused.data();
  for (std::size_t l = 0; l < blocks; ++l) {
    const std::size_t cin = block_in_channels(cfg, l);
    const std::size_t cout = cfg.conv_channels[l];
    auto& act = t.activated[l];
    act.resize(cout * H * H);
    conv3x3_forward(in, cin, H, H, p.tensors[conv_w(l)].data(), p.tensors[conv_b(l)].data(), cout,
                    act.data());
    for (double& v : act) v = v > 0.0 ? v : 0.0;

    const std::size_t Ho = H / 2;
    auto& pooled = t.pooled[l];
    auto& arg = t.argmax[l];
    pooled.resize(cout * Ho * Ho);
    arg.resize(cout * Ho * Ho);
    for (std::size_t c = 0; c < cout; ++c) {
      const double* a = act.data() + c * H * H;
      for (std::size_t y = 0; y < Ho; ++y) {
        for (std::size_t x = 0; x < Ho; ++x) {
          std::size_t best = (2 * y) * H + 2 * x;
          const std::size_t cand[3] = {best + 1, best + H, best + H + 1};
          for (std::size_t q : cand) {
            if (a[q] > a[best]) best = q;
          }
          pooled[(c * Ho + y) * Ho + x] = a[best];
          arg[(c * Ho + y) * Ho + x] = static_cast<std::uint32_t>(best);
        }
      }
    }
    in = pooled.data();
    H = Ho;
  }

  const std::size_t C = blocks ? cfg.conv_channels.back() : ModelConfig::kFusedChannels;
  const std::size_t plane = H * H;
  t.gap.assign(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (std::size_t q = 0; q < plane; ++q) s += in[c * plane + q];
    t.gap[c] = s / static_cast<double>(plane);
  }
  t.mask = mask;
  t.dropped = t.gap;
  if (!mask.empty()) {
    for (std::size_t c = 0; c < C; ++c) t.dropped[c] *= mask[c];
  }
  const auto& hw_ = p.tensors[head_w(cfg)];
  double y = p.tensors[head_b(cfg)][0];
  for (std::size_t c = 0; c < C; ++c) y += hw_[c] * t.dropped[c];
  t.output = y;
}

void run_backward(const ModelConfig& cfg, const ParamSet& p, const NetTrace& t, double gy,
                  Gradients& g) {
  const std::size_t blocks = cfg.conv_channels.size();
  const std::size_t C = blocks ? cfg.conv_channels.back() : ModelConfig::kFusedChannels;

  auto& ghw = g[head_w(cfg)];
  g[head_b(cfg)][0] += gy;
  const auto& hw_ = p.tensors[head_w(cfg)];
  std::vector<double> dgap(C);
  for (std::size_t c = 0; c < C; ++c) {
    ghw[c] += gy * t.dropped[c];
    dgap[c] = gy * hw_[c] * (t.mask.empty() ? 1.0 : t.mask[c]);
  }

  const std::size_t S = cfg.input_size;
  std::size_t H = S >> blocks;  // spatial side after the last block
  const std::size_t plane = H * H;
  // Gradient w.r.t. the tensor feeding global average pooling.
  std::vector<double> dcur(C * plane);
  for (std::size_t c = 0; c < C; ++c) {
    const double v = dgap[c] / static_cast<double>(plane);
    std::fill(dcur.begin() + static_cast<std::ptrdiff_t>(c * plane),
              dcur.begin() + static_cast<std::ptrdiff_t>((c + 1) * plane), v);
  }

  for (std::size_t l = blocks; l-- > 0;) {
    const std::size_t cin = block_in_channels(cfg, l);
    const std::size_t cout = cfg.conv_channels[l];
    const std::size_t Hi = H * 2;
    const auto& act = t.activated[l];
    const auto& arg = t.argmax[l];
    // Un-pool into the argmax positions, then gate by the ReLU.
    std::vector<double> dz(cout * Hi * Hi, 0.0);
    for (std::size_t c = 0; c < cout; ++c) {
      for (std::size_t q = 0; q < H * H; ++q) {
        const std::size_t src = arg[c * H * H + q];
        dz[c * Hi * Hi + src] += dcur[c * H * H + q];
      }
    }
    for (std::size_t q = 0; q < dz.size(); ++q) {
      if (!(act[q] > 0.0)) dz[q] = 0.0;
    }
    const double* in = l == 0 ? t.fused.data() : t.pooled[l - 1].data();
    std::vector<double> din(cin * Hi * Hi, 0.0);
    conv3x3_backward(in, cin, Hi, Hi, p.tensors[conv_w(l)].data(), dz.data(), cout,
                     g[conv_w(l)].data(), g[conv_b(l)].data(), din.data());
    dcur = std::move(din);
    H = Hi;
  }

  // dcur now holds d loss / d fused.
  const std::size_t hw = S * S;
  auto& gfw = g[0];
  auto& gfb = g[1];
  for (std::size_t c = 0; c < ModelConfig::kFusedChannels; ++c) {
    const double* d = dcur.data() + c * hw;
    double bsum = 0.0;
    for (std::size_t q = 0; q < hw; ++q) bsum += d[q];
    gfb[c] += bsum;
    for (std::size_t k = 0; k < ModelConfig::kInputChannels; ++k) {
      const double* x = t.input.data() + k * hw;
      double acc = 0.0;
      for (std::size_t q = 0; q < hw; ++q) acc += d[q] * x[q];
      gfw[c * ModelConfig::kInputChannels + k] += acc;
    }
  }
}

Gradients zero_grads(const ParamSet& p) {
  Gradients g(p.tensors.size());
  for (std::size_t k = 0; k < g.size(); ++k) g[k].assign(p.tensors[k].size(), 0.0);
  return g;
}

}  // namespace

void ModelConfig::validate() const {
  if (input_size == 0) throw Error(ErrorCode::kArgument, "input size must be positive");
  const std::size_t div = std::size_t{1} << conv_channels.size();
  if (input_size % div != 0) {
    throw Error(ErrorCode::kArgument,
                fmt::format("input size {} must be divisible by 2^{} for {} pooling blocks",
                            input_size, conv_channels.size(), conv_channels.size()));
  }
  for (auto c : conv_channels) {
    if (c == 0) throw Error(ErrorCode::kArgument, "conv block needs at least one channel");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw Error(ErrorCode::kArgument, fmt::format("dropout rate {} outside [0, 1)", dropout));
  }
}

std::string ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["input_size"] = input_size;
  j["conv_channels"] = conv_channels;
  j["fusion"] = {kInputChannels, kFusedChannels};
  j["dropout"] = dropout;
  return j.dump();
}

ModelConfig ModelConfig::from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    ModelConfig c;
    c.input_size = j.at("input_size").get<std::size_t>();
    c.conv_channels = j.at("conv_channels").get<std::vector<std::size_t>>();
    c.dropout = j.at("dropout").get<double>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, fmt::format("model config: {}", e.what()));
  }
}

std::size_t ParamSet::total_size() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet z;
  z.names = names;
  z.tensors.resize(tensors.size());
  for (std::size_t k = 0; k < tensors.size(); ++k) z.tensors[k].assign(tensors[k].size(), 0.0);
  return z;
}

ParamSet init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ParamSet p;
  Rng rng(seed);
  auto add = [&](std::string name, std::size_t size, std::size_t fan_in) {
    std::vector<double> t(size, 0.0);
    if (fan_in > 0) {
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (double& v : t) v = rng.uniform(-bound, bound);
    }
    p.names.push_back(std::move(name));
    p.tensors.push_back(std::move(t));
  };
  const std::size_t fused = ModelConfig::kFusedChannels;
  add("fusion.w", fused * ModelConfig::kInputChannels, ModelConfig::kInputChannels);
  add("fusion.b", fused, 0);
  for (std::size_t l = 0; l < config.conv_channels.size(); ++l) {
    const std::size_t cin = block_in_channels(config, l);
    const std::size_t cout = config.conv_channels[l];
    add(fmt::format("conv{}.w", l), cout * cin * 9, cin * 9);
    add(fmt::format("conv{}.b", l), cout, 0);
  }
  const std::size_t C = config.conv_channels.empty() ? fused : config.conv_channels.back();
  add("head.w", C, C);
  add("head.b", 1, 0);
  for (const auto& t : p.tensors) {
    p.m.emplace_back(t.size(), 0.0);
    p.v.emplace_back(t.size(), 0.0);
  }
  return p;
}

ReferenceNet::ReferenceNet(ModelConfig config, ParamSet params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const ParamSet shape = init_params(config_, 0);
  if (shape.tensors.size() != params_.tensors.size()) {
    throw Error(ErrorCode::kShape, fmt::format("model needs {} parameter tensors, got {}",
                                               shape.tensors.size(), params_.tensors.size()));
  }
  for (std::size_t k = 0; k < shape.tensors.size(); ++k) {
    if (shape.tensors[k].size() != params_.tensors[k].size()) {
      throw Error(ErrorCode::kShape, fmt::format("tensor {} has {} entries, expected {}",
                                                 shape.names[k], params_.tensors[k].size(),
                                                 shape.tensors[k].size()));
    }
  }
  if (params_.names.empty()) params_.names = shape.names;
  if (params_.m.size() != params_.tensors.size()) params_.m = shape.m;
  if (params_.v.size() != params_.tensors.size()) params_.v = shape.v;
}

std::vector<double> ReferenceNet::forward(std::span<const PatchTensor> batch, bool training,
                                          Rng* dropout_rng) {
  traces_.clear();
  last_output_.clear();
  const std::size_t C =
      config_.conv_channels.empty() ? ModelConfig::kFusedChannels : config_.conv_channels.back();

  std::vector<std::vector<double>> masks(batch.size());
  if (training && config_.dropout > 0.0) {
    if (!dropout_rng) throw Error(ErrorCode::kProtocol, "training forward needs a dropout stream");
    const double keep = 1.0 - config_.dropout;
    for (auto& m : masks) {
      m.resize(C);
      for (auto& v : m) v = dropout_rng->uniform() < keep ? 1.0 / keep : 0.0;
    }
  }

  std::vector<NetTrace> traces(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) {
    run_forward(config_, params_, batch[i], masks[i], traces[i]);
  });
  std::vector<double> out(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) out[i] = traces[i].output;
  traces_ = std::move(traces);
  last_output_ = out;
  return out;
}

Gradients ReferenceNet::backward(std::span<const double> truth, LossBase base) {
  if (traces_.empty()) throw Error(ErrorCode::kProtocol, "backward() called without forward()");
  return backward_from(loss_gradient(last_output_, truth, base));
}

Gradients ReferenceNet::backward_from(std::span<const double> output_grad) {
  if (traces_.empty()) throw Error(ErrorCode::kProtocol, "backward() called without forward()");
  if (output_grad.size() != traces_.size()) {
    throw Error(ErrorCode::kShape, fmt::format("{} output gradients for a batch of {}",
                                               output_grad.size(), traces_.size()));
  }
  std::vector<Gradients> per_sample(traces_.size());
  parallel_for(traces_.size(), [&](std::size_t i) {
    per_sample[i] = zero_grads(params_);
    run_backward(config_, params_, traces_[i], output_grad[i], per_sample[i]);
  });
  // Fixed summation order keeps the result independent of the worker count.
  Gradients total = zero_grads(params_);
  for (const auto& g : per_sample) {
    for (std::size_t k = 0; k < g.size(); ++k) {
      for (std::size_t j = 0; j < g[k].size(); ++j) total[k][j] += g[k][j];
    }
  }
  return total;
}

std::vector<double> ReferenceNet::predict(std::span<const PatchTensor> batch) const {
  std::vector<double> out(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) {
    NetTrace t;
    run_forward(config_, params_, batch[i], {}, t);
    out[i] = t.output;
  });
  return out;
}

}  // namespace popgrid
