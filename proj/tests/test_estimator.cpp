#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <numbers>
#include <random>

#include "popgrid/error.hpp"
#include "popgrid/estimator.hpp"
#include "popgrid/evalkit.hpp"
#include "popgrid/synthgen.hpp"
#include "test_util.hpp"

using namespace popgrid;
using testutil::TempDir;

namespace {

PatchTensor random_patch(std::size_t size, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PatchTensor p;
  p.height = p.width = size;
  p.values.resize(4 * size * size);
  for (auto& v : p.values) v = u(gen);
  return p;
}

ParamSet zeroed(const ModelConfig& cfg) { return init_params(cfg, 1).zeros_like(); }

}  // namespace

TEST_CASE("loss values and invariants") {
  const std::vector<double> a{1.0, -2.0, 0.5};
  CHECK(log_cosh_loss(a, a) == 0.0);
  const double d50[1] = {50.0}, z[1] = {0.0};
  CHECK(std::fabs(log_cosh_loss(d50, z) - (50.0 - std::numbers::ln2) / std::numbers::ln10) <= 1e-12);
  CHECK(std::isfinite(log_cosh(1e6)));
  CHECK_THROWS_CODE(log_cosh_loss(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}), ErrorCode::kShape);

  std::mt19937_64 gen(31);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int k = 0; k < 200; ++k) {
    std::vector<double> p(8), t(8), ps(8), ts(8);
    const double c = n(gen);
    for (std::size_t i = 0; i < 8; ++i) {
      p[i] = n(gen);
      t[i] = n(gen);
      ps[i] = p[i] + c;
      ts[i] = t[i] + c;
    }
    const double l10 = log_cosh_loss(p, t);
    CHECK(l10 >= 0.0);
    CHECK(log_cosh_loss(ps, ts) == doctest::Approx(l10).epsilon(1e-9));
    CHECK(log_cosh_loss(p, t, LossBase::kE) == doctest::Approx(l10 * std::numbers::ln10).epsilon(1e-12));
    for (double g : loss_gradient(p, t)) {
      CHECK(g > -1.0 / std::numbers::ln10);
      CHECK(g < 1.0 / std::numbers::ln10);
    }
    // Odd symmetry: swapping pred and truth negates the gradient.
    const auto g1 = loss_gradient(p, t), g2 = loss_gradient(t, p);
    for (std::size_t i = 0; i < 8; ++i) CHECK(g1[i] == -g2[i]);
  }
  CHECK(loss_gradient(std::vector<double>{0.0}, std::vector<double>{0.0})[0] == 0.0);
  CHECK(loss_gradient(std::vector<double>{100.0}, std::vector<double>{0.0})[0] ==
        doctest::Approx(1.0 / std::numbers::ln10).epsilon(1e-15));
  CHECK(parse_loss_base("e") == LossBase::kE);
  CHECK_THROWS_CODE(parse_loss_base("2"), ErrorCode::kUsage);
}

TEST_CASE("both loss bases share the minimiser on fixed data") {
  // Scan a scalar offset c; the argmin of either base is the same grid point.
  const std::vector<double> t{0.1, 0.9, 2.3, 3.1, 0.0};
  std::size_t best10 = 0, beste = 0;
  double l10 = 1e300, le = 1e300;
  for (std::size_t k = 0; k <= 400; ++k) {
    const double c = -1.0 + 0.01 * static_cast<double>(k);
    std::vector<double> p(t.size(), c);
    const double a = log_cosh_loss(p, t, LossBase::kTen), b = log_cosh_loss(p, t, LossBase::kE);
    if (a < l10) l10 = a, best10 = k;
    if (b < le) le = b, beste = k;
  }
  CHECK(best10 == beste);
}

TEST_CASE("forward: zero weights, hand-computed affine net, duplicates") {
  std::mt19937_64 gen(32);
  ModelConfig cfg;
  cfg.input_size = 8;
  cfg.conv_channels = {2};
  const auto patch = random_patch(8, gen);
  std::vector<PatchTensor> batch{patch, patch};
  CHECK(ReferenceNet(cfg, zeroed(cfg)).predict(batch) == std::vector<double>{0.0, 0.0});

  ReferenceNet net(cfg, init_params(cfg, 5));
  const auto out = net.predict(batch);
  CHECK(out[0] == out[1]);

  // 1x1 input, no conv blocks: output = head.b + sum_k head.w[k] (fusion.w[k] . x + fusion.b[k]).
  ModelConfig tiny;
  tiny.input_size = 1;
  tiny.conv_channels = {};
  ParamSet ps = init_params(tiny, 6);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& t : ps.tensors) {
    for (auto& v : t) v = u(gen);
  }
  REQUIRE(ps.tensors.size() == 4);
  const auto x = random_patch(1, gen);
  double expect = ps.tensors[3][0];
  for (std::size_t k = 0; k < 3; ++k) {
    double f = ps.tensors[1][k];
    for (std::size_t c = 0; c < 4; ++c) f += ps.tensors[0][k * 4 + c] * x.values[c];
    expect += ps.tensors[2][k] * f;
  }
  const std::vector<PatchTensor> one{x};
  CHECK(ReferenceNet(tiny, ps).predict(one)[0] == doctest::Approx(expect).epsilon(1e-14));

  CHECK_THROWS_CODE(net.predict(std::vector<PatchTensor>{random_patch(4, gen)}), ErrorCode::kShape);
}

TEST_CASE("backward protocol and zero-input gradients") {
  std::mt19937_64 gen(33);
  ModelConfig cfg;
  cfg.input_size = 8;
  cfg.conv_channels = {2};
  ReferenceNet net(cfg, init_params(cfg, 7));
  CHECK_THROWS_CODE(net.backward(std::vector<double>{1.0}), ErrorCode::kProtocol);
  CHECK_THROWS_CODE(net.forward(std::vector<PatchTensor>{random_patch(8, gen)}, true, nullptr), ErrorCode::kProtocol);

  PatchTensor zero;
  zero.height = zero.width = 8;
  zero.values.assign(4 * 64, 0.0);
  net.forward(std::vector<PatchTensor>{zero}, false);
  const auto g = net.backward(std::vector<double>{1.0});
  for (double v : g[0]) CHECK(v == 0.0);  // fusion weights see only zeros
  CHECK(g.back()[0] != 0.0);              // output bias always receives the loss gradient
}

TEST_CASE("finite-difference gradient check with dropout mask") {
  std::mt19937_64 gen(34);
  ModelConfig cfg;
  cfg.input_size = 8;
  cfg.conv_channels = {2};
  cfg.dropout = 0.5;
  ParamSet params = init_params(cfg, 8);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (auto& t : params.tensors) {
    for (auto& v : t) v += u(gen);
  }
  const std::vector<PatchTensor> batch{random_patch(8, gen), random_patch(8, gen)};
  const std::vector<double> truth{0.5, 1.5};

  ReferenceNet net(cfg, params);
  Rng mask_rng(99);
  net.forward(batch, true, &mask_rng);
  const auto g = net.backward(truth);

  // Replays the same mask by re-seeding the dropout stream for every probe.
  auto loss = [&](const ParamSet& ps) {
    ReferenceNet probe(cfg, ps);
    Rng r(99);
    return log_cosh_loss(probe.forward(batch, true, &r), truth);
  };
  double worst = 0.0;
  const double h = 1e-6;
  for (std::size_t k = 0; k < params.tensors.size(); ++k) {
    for (std::size_t j = 0; j < params.tensors[k].size(); ++j) {
      ParamSet plus = params, minus = params;
      plus.tensors[k][j] += h;
      minus.tensors[k][j] -= h;
      const double fd = (loss(plus) - loss(minus)) / (2 * h);
      worst = std::max(worst, std::fabs(fd - g[k][j]) / std::max({std::fabs(fd), std::fabs(g[k][j]), 1e-8}));
    }
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("adam recurrence") {
  auto scalar = [](double x) {
    ParamSet p;
    p.names = {"x"};
    p.tensors = {{x}};
    p.m = {{0.0}};
    p.v = {{0.0}};
    return p;
  };
  ParamSet p = scalar(1.0);
  TrainConfig cfg;
  adam_step(p, {{0.0}}, cfg);
  CHECK(p.tensors[0][0] == 1.0);
  CHECK(p.step == 1);

  ParamSet q = scalar(1.0);
  adam_step(q, {{1.0}}, cfg);
  // m_hat = v_hat = 1, so the step is lr / (1 + eps).
  CHECK(q.tensors[0][0] == doctest::Approx(1.0 - 1e-4 / (1.0 + 1e-8)).epsilon(1e-15));
  const double m1 = 0.1, v1 = 0.001;
  CHECK(q.m[0][0] == doctest::Approx(m1));
  CHECK(q.v[0][0] == doctest::Approx(v1));

  // Gradient descent on theta^2.
  ParamSet s = scalar(1.0);
  cfg.learning_rate = 1e-2;
  double prev = 1.0;
  int increases = 0;
  for (int i = 0; i < 100; ++i) {
    adam_step(s, {{2.0 * s.tensors[0][0]}}, cfg);
    increases += std::fabs(s.tensors[0][0]) > prev;
    prev = std::fabs(s.tensors[0][0]);
  }
  CHECK(std::fabs(s.tensors[0][0]) < 1.0);
  CHECK(increases == 0);

  ParamSet bad = scalar(1.0);
  CHECK_THROWS_CODE(adam_step(bad, {{std::nan("")}}, cfg), ErrorCode::kPoisonedUpdate);
  CHECK(bad.tensors[0][0] == 1.0);
  CHECK(bad.step == 0);
  CHECK_THROWS_CODE(adam_step(bad, {{1.0}, {1.0}}, cfg), ErrorCode::kShape);
}

TEST_CASE("train config validation") {
  TrainConfig t;
  t.beta1 = 1.0;
  CHECK_THROWS_CODE(t.validate(), ErrorCode::kArgument);
  t = {};
  t.batch_size = 0;
  CHECK_THROWS_CODE(t.validate(), ErrorCode::kArgument);
  t = {};
  t.learning_rate = 0.0;
  CHECK_THROWS_CODE(t.validate(), ErrorCode::kArgument);
}

namespace {

struct SmallScene {
  Scene scene;
  DatasetManifest manifest;
  ModelConfig model;
  std::unique_ptr<PatchSource> source;

  explicit SmallScene(double rho = 0.0) {
    SceneSpec s;
    s.n_rows = 16;
    s.n_cols = 16;
    s.pixels_per_cell = 4;
    s.confound_fraction = rho;
    scene = generate_scene(s);
    manifest = build_manifest(combine_ambient(scene.day, scene.night), 2, {});
    model.input_size = 8;
    model.conv_channels = {4};
    source = std::make_unique<PatchSource>(scene.imagery, s.cell_size, NeighborSpec{}, model.input_size);
  }
  PatchProvider provider() const { return std::cref(*source); }
};

}  // namespace

TEST_CASE("training: zero steps, determinism, progress, thread independence") {
  SmallScene s;
  TrainConfig cfg;
  cfg.max_steps = 0;
  cfg.seed = 4;
  const auto none = train(s.model, s.manifest, s.provider(), cfg);
  CHECK(none.loss_curve.empty());
  CHECK(none.params.tensors == init_params(s.model, derive_seed(4, 1)).tensors);

  cfg.max_steps = 600;
  cfg.learning_rate = 3e-3;
  cfg.eval_every = 50;
  const auto a = train(s.model, s.manifest, s.provider(), cfg);
  const auto b = train(s.model, s.manifest, s.provider(), cfg);
  CHECK(a.loss_curve == b.loss_curve);
  CHECK(a.params.tensors == b.params.tensors);
  REQUIRE(a.validation.size() >= 2);
  double best = a.validation.front().loss;
  for (const auto& v : a.validation) best = std::min(best, v.loss);
  CHECK(best <= 0.5 * a.validation.front().loss);

  ::setenv("POPGRID_THREADS", "3", 1);
  const auto c = train(s.model, s.manifest, s.provider(), cfg);
  ::setenv("POPGRID_THREADS", "1", 1);
  const auto d = train(s.model, s.manifest, s.provider(), cfg);
  ::unsetenv("POPGRID_THREADS");
  CHECK(c.loss_curve == a.loss_curve);
  CHECK(d.params.tensors == a.params.tensors);

  // Predicting the training split fits better than the test split.
  const ReferenceNet net(s.model, a.params);
  const auto rows = predict_table(net, s.manifest, s.provider());
  std::vector<double> tt, tp, et, ep;
  for (const auto& r : rows) {
    (r.split == Split::kTrain ? tt : et).push_back(r.target_lg);
    (r.split == Split::kTrain ? tp : ep).push_back(r.pred_lg);
  }
  CHECK(r_squared(tt, tp) > 0.5);
  CHECK(r_squared(tt, tp) > r_squared(et, ep));
  const auto again = predict_table(net, s.manifest, s.provider());
  REQUIRE(again.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(again[i].pred_lg == rows[i].pred_lg);
}

TEST_CASE("training with an empty split fails") {
  SmallScene s;
  DatasetManifest m = s.manifest;
  for (auto& x : m.samples) x.split = Split::kTrain;
  CHECK_THROWS_CODE(train(s.model, m, s.provider(), TrainConfig{}), ErrorCode::kEmptySplit);
}

TEST_CASE("baselines") {
  SmallScene s;
  const MeanBaseline mean(s.manifest);
  double train_mean = 0.0;
  const auto tr = s.manifest.of_split(Split::kTrain);
  for (const auto& x : tr) train_mean += x.target_lg;
  train_mean /= static_cast<double>(tr.size());
  CHECK(mean.value() == doctest::Approx(train_mean).epsilon(1e-14));

  // CoE is exactly zero when the prediction is the truth mean.
  std::vector<double> truth{1.0, 2.0, 4.0, 5.0};
  std::vector<double> flat(4, 3.0);
  CHECK(coe(truth, flat) == 0.0);
  CHECK_FALSE(evaluate(truth, flat).metrics.r_squared.has_value());

  // Exact affine scene: targets are an affine function of band means.
  std::mt19937_64 gen(35);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::array<double, 4>> feats(50);
  std::vector<double> targets(50);
  for (std::size_t i = 0; i < 50; ++i) {
    for (auto& f : feats[i]) f = u(gen);
    targets[i] = 0.5 + 1.0 * feats[i][0] - 2.0 * feats[i][1] + 0.25 * feats[i][2] + 3.0 * feats[i][3];
  }
  const BandStatBaseline fit(feats, targets);
  CHECK_FALSE(fit.ridge_fallback());
  std::vector<PatchTensor> patches;
  for (const auto& f : feats) {
    PatchTensor p;
    p.height = p.width = 1;
    p.values.assign(f.begin(), f.end());
    patches.push_back(p);
  }
  const auto pred = fit.predict(patches);
  CHECK(r_squared(targets, pred) >= 1.0 - 1e-9);
  CHECK(fit.coefficients()[0] == doctest::Approx(0.5).epsilon(1e-9));

  // Identical features make the normal equations singular.
  std::vector<std::array<double, 4>> same(10, {0.2, 0.2, 0.2, 0.2});
  std::vector<double> y(10);
  for (std::size_t i = 0; i < 10; ++i) y[i] = static_cast<double>(i);
  const BandStatBaseline ridge(same, y);
  CHECK(ridge.ridge_fallback());
}

TEST_CASE("checkpoint and prediction files round trip") {
  TempDir dir("estimator");
  ModelConfig cfg;
  cfg.input_size = 16;
  cfg.conv_channels = {3, 5};
  ParamSet p = init_params(cfg, 12);
  p.step = 17;
  write_checkpoint(cfg, p, dir / "c.pgck");
  const auto [c2, p2] = read_checkpoint(dir / "c.pgck");
  CHECK(c2.input_size == 16);
  CHECK(c2.conv_channels == cfg.conv_channels);
  CHECK(p2.tensors == p.tensors);
  CHECK(p2.names == p.names);
  auto bytes = testutil::slurp(dir / "c.pgck");
  bytes[0] = 'X';
  testutil::spit(dir / "bad.pgck", bytes);
  CHECK_THROWS_CODE(read_checkpoint(dir / "bad.pgck"), ErrorCode::kFormat);

  const std::vector<PredictionRow> rows{{{0, 1}, Split::kTest, 2.5, 2.123456789012},
                                        {{3, 2}, Split::kTrain, 0.0, -0.25}};
  write_predictions(rows, dir / "p.csv");
  const auto text = testutil::slurp(dir / "p.csv");
  CHECK(text.rfind("row,col,split,target_lg,pred_lg\n", 0) == 0);
  CHECK(text.find("0,1,test,2.5,2.12345679\n") != std::string::npos);
  const auto back = read_predictions(dir / "p.csv");
  REQUIRE(back.size() == 2);
  CHECK(back[1].cell == CellId{3, 2});
  CHECK(back[1].pred_lg == -0.25);
  testutil::spit(dir / "bad.csv", "row,col,split,target_lg,pred_lg\n1,2,test,x,1\n");
  CHECK_THROWS_CODE(read_predictions(dir / "bad.csv"), ErrorCode::kParse);
}
