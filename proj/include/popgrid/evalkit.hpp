#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "popgrid/dataset.hpp"
#include "popgrid/estimator.hpp"

namespace popgrid {

// Nash-Sutcliffe coefficient of efficiency: 1 - SSE / SST about mean(truth).
// Range (-inf, 1]. Throws kUndefinedMetric when truth has zero variance.
double coe(std::span<const double> truth, std::span<const double> pred);

// kSquaredPearson: squared Pearson correlation between truth and pred.
// kIdentityLine: coefficient of determination of the 1:1 line, which is
// numerically the same quantity as coe().
enum class R2Definition { kSquaredPearson, kIdentityLine };

R2Definition parse_r2_definition(std::string_view name);  // "pearson" | "identity"
const char* to_string(R2Definition def);

double r_squared(std::span<const double> truth, std::span<const double> pred,
                 R2Definition def = R2Definition::kSquaredPearson);

// Modified index of agreement (absolute-error form), in [0, 1]. A zero
// denominator (every value equal to the truth mean) scores 1.
double mioa(std::span<const double> truth, std::span<const double> pred);

// Two-sided p-value of Student's t with `dof` degrees of freedom, computed as
// the regularized incomplete beta I_{dof/(dof+t^2)}(dof/2, 1/2).
double student_t_p(double t, double dof);

struct PearsonResult {
  double r = 0.0;
  double p_value = 1.0;
};
// Pearson correlation with its two-sided t-test; nullopt when either input has
// zero variance.
std::optional<PearsonResult> pearson(std::span<const double> x, std::span<const double> y);

// Residual e = pred - truth regressed on truth: e = alpha + beta * truth.
struct BiasReport {
  double alpha = 0.0;
  double beta = 0.0;
  std::optional<double> pearson_r;  // corr(e, truth); nullopt if e is constant
  std::optional<double> p_value;
  std::size_t m = 0;
};

BiasReport bias_fit(std::span<const double> truth, std::span<const double> pred);

struct MetricsReport {
  std::size_t m = 0;
  std::optional<double> r_squared;
  std::optional<double> coe;
  double mioa = 0.0;
  double mean_truth = 0.0;
};

struct Evaluation {
  MetricsReport metrics;
  std::optional<BiasReport> bias;
};

Evaluation evaluate(std::span<const double> truth, std::span<const double> pred,
                    R2Definition def = R2Definition::kSquaredPearson);

// Evaluates the rows of one split (or all rows when split is nullopt).
Evaluation evaluate_all(std::span<const PredictionRow> rows, std::optional<Split> split,
                        R2Definition def = R2Definition::kSquaredPearson);

std::string report_json(const Evaluation& eval);

// truth_lg,pred_lg and truth_lg,residual_lg pair files.
void write_scatter_csvs(std::span<const PredictionRow> rows, std::optional<Split> split,
                        const std::filesystem::path& pred_csv,
                        const std::filesystem::path& residual_csv);

}  // namespace popgrid
