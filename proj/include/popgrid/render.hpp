#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "popgrid/dataset.hpp"
#include "popgrid/estimator.hpp"
#include "popgrid/raster.hpp"

namespace popgrid {

enum class ScatterKind { kPredVsTruth, kResidualVsTruth };

ScatterKind parse_scatter_kind(std::string_view text);

using PairList = std::vector<std::pair<double, double>>;

// Reads a two-column CSV with a header line (truth_lg,pred_lg or
// truth_lg,residual_lg).
PairList read_pairs_csv(const std::filesystem::path& path);

// Scatterplot with axes, a 1:1 line (pred_vs_truth) or a zero line plus the
// fitted residual trend (residual_vs_truth), annotated with metrics computed
// from the pairs themselves. Byte-deterministic.
std::string render_scatter_svg(const PairList& pairs, ScatterKind kind, std::string_view title = {});

enum class HeatValue { kTruth, kPred, kResidual };

HeatValue parse_heat_value(std::string_view text);

// Colour ramps. Log-count values use a sequential ramp over [0, 6]; residuals
// use a diverging ramp over [-3, 3] with blue for underestimation. Nodata is
// grey (#bfbfbf).
std::array<unsigned char, 3> log_ramp(double value);
std::array<unsigned char, 3> residual_ramp(double value);
inline constexpr std::array<unsigned char, 3> kNodataColor{191, 191, 191};

// A row-major lattice of optional values for heatmap rendering.
struct HeatGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
  std::vector<bool> valid;
};

HeatGrid heat_from_predictions(std::span<const PredictionRow> rows, HeatValue value);
HeatGrid heat_from_grid(const GeoGrid& counts);  // log-transformed counts

std::string render_heatmap_svg(const HeatGrid& grid, HeatValue value, std::string_view title = {});
std::string render_heatmap_pgm(const HeatGrid& grid, HeatValue value);

std::string render_histogram_svg(std::span<const HistogramBin> bins, double bin_width,
                                 std::string_view title = {});

void write_text(const std::filesystem::path& path, std::string_view text);

}  // namespace popgrid
