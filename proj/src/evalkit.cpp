#include "popgrid/evalkit.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <boost/math/special_functions/beta.hpp>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

#include "popgrid/error.hpp"

namespace popgrid {

namespace {

void check_pair(std::span<const double> truth, std::span<const double> pred, std::size_t min_m) {
  if (truth.size() != pred.size()) {
    throw Error(ErrorCode::kShape,
                fmt::format("truth has {} values, pred has {}", truth.size(), pred.size()));
  }
  if (truth.size() < min_m) {
    throw Error(ErrorCode::kArgument, fmt::format("need at least {} pairs, got {}", min_m, truth.size()));
  }
}

double mean(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

double max_abs(std::span<const double> x) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::fabs(v));
  return m;
}

// Sum of squared deviations, treated as zero below the rounding floor of the
// data so that exactly-constant inputs are recognised despite round-off.
double centered_ss(std::span<const double> x, double mu, double scale) {
  double s = 0.0;
  for (double v : x) s += (v - mu) * (v - mu);
  const double floor = 1e-12 * std::max(1.0, scale);
  return s <= static_cast<double>(x.size()) * floor * floor ? 0.0 : s;
}

nlohmann::ordered_json opt(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

}  // namespace

double coe(std::span<const double> truth, std::span<const double> pred) {
  check_pair(truth, pred, 2);
  const double mu = mean(truth);
  const double sst = centered_ss(truth, mu, max_abs(truth));
  if (sst == 0.0) throw Error(ErrorCode::kUndefinedMetric, "CoE undefined: truth has zero variance");
  double sse = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) sse += (truth[i] - pred[i]) * (truth[i] - pred[i]);
  return 1.0 - sse / sst;
}

R2Definition parse_r2_definition(std::string_view name) {
  if (name == "pearson") return R2Definition::kSquaredPearson;
  if (name == "identity") return R2Definition::kIdentityLine;
  throw Error(ErrorCode::kUsage, fmt::format("unknown r2 definition '{}' (pearson | identity)", name));
}

const char* to_string(R2Definition def) {
  return def == R2Definition::kSquaredPearson ? "pearson" : "identity";
}

double r_squared(std::span<const double> truth, std::span<const double> pred, R2Definition def) {
  if (def == R2Definition::kIdentityLine) return coe(truth, pred);
  check_pair(truth, pred, 2);
  const double mt = mean(truth);
  const double mp = mean(pred);
  const double stt = centered_ss(truth, mt, max_abs(truth));
  const double spp = centered_ss(pred, mp, max_abs(pred));
  if (stt == 0.0 || spp == 0.0) {
    throw Error(ErrorCode::kUndefinedMetric, "R^2 undefined: zero variance input");
  }
  double stp = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) stp += (truth[i] - mt) * (pred[i] - mp);
  return std::min(1.0, stp * stp / (stt * spp));
}

double mioa(std::span<const double> truth, std::span<const double> pred) {
  check_pair(truth, pred, 1);
  const double mu = mean(truth);
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    num += std::fabs(truth[i] - pred[i]);
    den += std::fabs(pred[i] - mu) + std::fabs(truth[i] - mu);
  }
  if (den == 0.0) return 1.0;
  return std::clamp(1.0 - num / den, 0.0, 1.0);
}

double student_t_p(double t, double dof) {
  if (!(dof > 0.0)) throw Error(ErrorCode::kArgument, "degrees of freedom must be positive");
  if (std::isinf(t)) return 0.0;
  if (std::isnan(t)) throw Error(ErrorCode::kDomain, "t statistic is NaN");
  if (t == 0.0) return 1.0;
  const double x = dof / (dof + t * t);
  return std::clamp(boost::math::ibeta(dof / 2.0, 0.5, x), 0.0, 1.0);
}

std::optional<PearsonResult> pearson(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y, 3);
  const double mx = mean(x);
  const double my = mean(y);
  const double sxx = centered_ss(x, mx, max_abs(x));
  const double syy = centered_ss(y, my, max_abs(y));
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  double sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) sxy += (x[i] - mx) * (y[i] - my);
  PearsonResult out;
  out.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  const double dof = static_cast<double>(x.size() - 2);
  const double one_minus = 1.0 - out.r * out.r;
  out.p_value = one_minus <= 0.0 ? 0.0 : student_t_p(out.r * std::sqrt(dof / one_minus), dof);
  return out;
}

BiasReport bias_fit(std::span<const double> truth, std::span<const double> pred) {
  check_pair(truth, pred, 3);
  const std::size_t m = truth.size();
  std::vector<double> resid(m);
  for (std::size_t i = 0; i < m; ++i) resid[i] = pred[i] - truth[i];

  const double mt = mean(truth);
  const double me = mean(resid);
  const double stt = centered_ss(truth, mt, max_abs(truth));
  if (stt == 0.0) throw Error(ErrorCode::kUndefinedMetric, "bias fit undefined: truth has zero variance");
  const double scale = std::max(max_abs(truth), max_abs(pred));
  const double see = centered_ss(resid, me, scale);
  double ste = 0.0;
  for (std::size_t i = 0; i < m; ++i) ste += (truth[i] - mt) * (resid[i] - me);

  BiasReport out;
  out.m = m;
  if (see == 0.0) {
    // Constant residual: a pure offset. Slope is zero and r is undefined.
    out.beta = 0.0;
    out.alpha = me;
    return out;
  }
  out.beta = ste / stt;
  out.alpha = me - out.beta * mt;
  const auto pr = pearson(resid, truth);
  if (pr) {
    out.pearson_r = pr->r;
    out.p_value = pr->p_value;
  }
  return out;
}

Evaluation evaluate(std::span<const double> truth, std::span<const double> pred, R2Definition def) {
  check_pair(truth, pred, 1);
  Evaluation e;
  e.metrics.m = truth.size();
  e.metrics.mean_truth = mean(truth);
  e.metrics.mioa = mioa(truth, pred);
  try {
    e.metrics.r_squared = r_squared(truth, pred, def);
  } catch (const Error&) {
  }
  try {
    e.metrics.coe = coe(truth, pred);
  } catch (const Error&) {
  }
  try {
    e.bias = bias_fit(truth, pred);
  } catch (const Error&) {
  }
  return e;
}

Evaluation evaluate_all(std::span<const PredictionRow> rows, std::optional<Split> split,
                        R2Definition def) {
  std::vector<double> truth;
  std::vector<double> pred;
  for (const auto& r : rows) {
    if (split && r.split != *split) continue;
    truth.push_back(r.target_lg);
    pred.push_back(r.pred_lg);
  }
  if (truth.empty()) {
    throw Error(ErrorCode::kEmptySplit,
                fmt::format("no rows in split '{}'", split ? to_string(*split) : std::string("all")));
  }
  return evaluate(truth, pred, def);
}

std::string report_json(const Evaluation& eval) {
  nlohmann::ordered_json j;
  j["m"] = eval.metrics.m;
  j["r_squared"] = opt(eval.metrics.r_squared);
  j["coe"] = opt(eval.metrics.coe);
  j["mioa"] = eval.metrics.mioa;
  j["mean_truth"] = eval.metrics.mean_truth;
  nlohmann::ordered_json b;
  if (eval.bias) {
    b["alpha"] = eval.bias->alpha;
    b["beta"] = eval.bias->beta;
    b["pearson_r"] = opt(eval.bias->pearson_r);
    b["p_value"] = opt(eval.bias->p_value);
  } else {
    b["alpha"] = nullptr;
    b["beta"] = nullptr;
    b["pearson_r"] = nullptr;
    b["p_value"] = nullptr;
  }
  j["bias"] = b;
  return j.dump(2);
}

void write_scatter_csvs(std::span<const PredictionRow> rows, std::optional<Split> split,
                        const std::filesystem::path& pred_csv,
                        const std::filesystem::path& residual_csv) {
  std::string a = "truth_lg,pred_lg\n";
  std::string b = "truth_lg,residual_lg\n";
  for (const auto& r : rows) {
    if (split && r.split != *split) continue;
    a += fmt::format("{:.9g},{:.9g}\n", r.target_lg, r.pred_lg);
    b += fmt::format("{:.9g},{:.9g}\n", r.target_lg, r.pred_lg - r.target_lg);
  }
  for (const auto& [path, text] : {std::pair{pred_csv, a}, std::pair{residual_csv, b}}) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorCode::kIo, fmt::format("cannot write {}", path.string()));
    f << text;
  }
}

}  // namespace popgrid
