#include "popgrid/render.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "popgrid/error.hpp"
#include "popgrid/evalkit.hpp"

namespace popgrid {

namespace {

constexpr double kWidth = 480.0;
constexpr double kHeight = 480.0;
constexpr double kLeft = 60.0;
constexpr double kRight = 460.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 430.0;

struct Range {
  double lo;
  double hi;
};

Range padded(double lo, double hi) {
  if (!(hi - lo > 1e-12)) {
    lo -= 1.0;
    hi += 1.0;
  }
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

double map_x(double x, Range r) { return kLeft + (x - r.lo) / (r.hi - r.lo) * (kRight - kLeft); }
double map_y(double y, Range r) { return kBottom - (y - r.lo) / (r.hi - r.lo) * (kBottom - kTop); }

std::string fmt_opt(const std::optional<double>& v, const char* spec = "{:.3f}") {
  return v ? fmt::format(fmt::runtime(spec), *v) : std::string("n/a");
}

void axes(std::string& svg, Range xr, Range yr, std::string_view xlabel, std::string_view ylabel) {
  svg += fmt::format(
      "<line class=\"axis\" x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"#000\"/>\n",
      kLeft, kBottom, kRight, kBottom);
  svg += fmt::format(
      "<line class=\"axis\" x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"#000\"/>\n",
      kLeft, kTop, kLeft, kBottom);
  for (int k = 0; k <= 4; ++k) {
    const double xv = xr.lo + (xr.hi - xr.lo) * k / 4.0;
    const double yv = yr.lo + (yr.hi - yr.lo) * k / 4.0;
    svg += fmt::format("<text class=\"tick\" x=\"{:.2f}\" y=\"{:.2f}\" font-size=\"10\" "
                       "text-anchor=\"middle\">{:.2f}</text>\n",
                       map_x(xv, xr), kBottom + 14.0, xv);
    svg += fmt::format("<text class=\"tick\" x=\"{:.2f}\" y=\"{:.2f}\" font-size=\"10\" "
                       "text-anchor=\"end\">{:.2f}</text>\n",
                       kLeft - 4.0, map_y(yv, yr) + 3.0, yv);
  }
  svg += fmt::format("<text class=\"label\" x=\"{:.2f}\" y=\"{:.2f}\" font-size=\"12\" "
                     "text-anchor=\"middle\">{}</text>\n",
                     (kLeft + kRight) / 2.0, kHeight - 12.0, xlabel);
  svg += fmt::format("<text class=\"label\" x=\"14\" y=\"{:.2f}\" font-size=\"12\" text-anchor=\"middle\" "
                     "transform=\"rotate(-90 14 {:.2f})\">{}</text>\n",
                     (kTop + kBottom) / 2.0, (kTop + kBottom) / 2.0, ylabel);
}

std::array<unsigned char, 3> interpolate(std::span<const std::array<double, 3>> stops, double t) {
  t = std::clamp(t, 0.0, 1.0);
  const double pos = t * static_cast<double>(stops.size() - 1);
  const auto k = std::min(static_cast<std::size_t>(pos), stops.size() - 2);
  const double f = pos - static_cast<double>(k);
  std::array<unsigned char, 3> out{};
  for (std::size_t c = 0; c < 3; ++c) {
    out[c] = static_cast<unsigned char>(std::lround((1.0 - f) * stops[k][c] + f * stops[k + 1][c]));
  }
  return out;
}

std::string xml_escape(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char ch : text) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

std::string hex(std::array<unsigned char, 3> c) { return fmt::format("#{:02x}{:02x}{:02x}", c[0], c[1], c[2]); }

}  // namespace

ScatterKind parse_scatter_kind(std::string_view text) {
  if (text == "pred_vs_truth") return ScatterKind::kPredVsTruth;
  if (text == "residual_vs_truth") return ScatterKind::kResidualVsTruth;
  throw Error(ErrorCode::kUsage,
              fmt::format("unknown scatter kind '{}' (pred_vs_truth or residual_vs_truth)", text));
}

HeatValue parse_heat_value(std::string_view text) {
  if (text == "truth_lg") return HeatValue::kTruth;
  if (text == "pred_lg") return HeatValue::kPred;
  if (text == "residual") return HeatValue::kResidual;
  throw Error(ErrorCode::kUsage,
              fmt::format("unknown heatmap value '{}' (truth_lg, pred_lg or residual)", text));
}

PairList read_pairs_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::kIo, fmt::format("cannot open {}", path.string()));
  std::string line;
  std::getline(f, line);  // header
  PairList out;
  std::size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw Error(ErrorCode::kParse, fmt::format("{}: line {}: expected two fields", path.string(), line_no));
    }
    try {
      out.emplace_back(std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1)));
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::kParse, fmt::format("{}: line {}: bad number", path.string(), line_no));
    }
  }
  return out;
}

std::string render_scatter_svg(const PairList& pairs, ScatterKind kind, std::string_view title) {
  if (pairs.empty()) throw Error(ErrorCode::kEmptySplit, "scatter plot needs at least one pair");

  std::vector<double> truth(pairs.size());
  std::vector<double> pred(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    truth[i] = pairs[i].first;
    pred[i] = kind == ScatterKind::kPredVsTruth ? pairs[i].second : pairs[i].first + pairs[i].second;
  }
  const Evaluation eval = evaluate(truth, pred);

  double xlo = pairs[0].first, xhi = xlo, ylo = pairs[0].second, yhi = ylo;
  for (const auto& [x, y] : pairs) {
    xlo = std::min(xlo, x);
    xhi = std::max(xhi, x);
    ylo = std::min(ylo, y);
    yhi = std::max(yhi, y);
  }
  Range xr{};
  Range yr{};
  if (kind == ScatterKind::kPredVsTruth) {
    xr = yr = padded(std::min(xlo, ylo), std::max(xhi, yhi));
  } else {
    xr = padded(xlo, xhi);
    yr = padded(std::min(ylo, 0.0), std::max(yhi, 0.0));
  }

  std::string svg;
  svg += fmt::format("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0f}\" height=\"{:.0f}\" "
                     "viewBox=\"0 0 {:.0f} {:.0f}\">\n",
                     kWidth, kHeight, kWidth, kHeight);
  svg += "<rect x=\"0\" y=\"0\" width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  if (!title.empty()) {
    svg += fmt::format("<text class=\"title\" x=\"{:.2f}\" y=\"18\" font-size=\"13\" "
                       "text-anchor=\"middle\">{}</text>\n",
                       kWidth / 2.0, xml_escape(title));
  }
  axes(svg, xr, yr, "truth_lg", kind == ScatterKind::kPredVsTruth ? "pred_lg" : "residual_lg");

  if (kind == ScatterKind::kPredVsTruth) {
    svg += fmt::format("<line class=\"ref\" x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" "
                       "stroke=\"#d62728\" stroke-dasharray=\"4 3\"/>\n",
                       map_x(xr.lo, xr), map_y(xr.lo, yr), map_x(xr.hi, xr), map_y(xr.hi, yr));
  } else {
    svg += fmt::format("<line class=\"zero\" x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" "
                       "stroke=\"#7f7f7f\" stroke-dasharray=\"4 3\"/>\n",
                       kLeft, map_y(0.0, yr), kRight, map_y(0.0, yr));
    if (eval.bias) {
      const double a = eval.bias->alpha;
      const double b = eval.bias->beta;
      svg += fmt::format("<line class=\"fit\" x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" "
                         "stroke=\"#d62728\"/>\n",
                         map_x(xr.lo, xr), map_y(a + b * xr.lo, yr), map_x(xr.hi, xr),
                         map_y(a + b * xr.hi, yr));
    }
  }

  for (const auto& [x, y] : pairs) {
    svg += fmt::format("<circle class=\"pt\" cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"2\" fill=\"#1f77b4\" "
                       "fill-opacity=\"0.5\"/>\n",
                       map_x(x, xr), map_y(y, yr));
  }

  std::string note;
  if (kind == ScatterKind::kPredVsTruth) {
    note = fmt::format("m={} R2={} CoE={} MIoA={:.3f}", eval.metrics.m, fmt_opt(eval.metrics.r_squared),
                       fmt_opt(eval.metrics.coe), eval.metrics.mioa);
  } else if (eval.bias) {
    note = fmt::format("m={} alpha={:.3f} beta={:.3f} r={} p={}", eval.metrics.m, eval.bias->alpha,
                       eval.bias->beta, fmt_opt(eval.bias->pearson_r),
                       fmt_opt(eval.bias->p_value, "{:.2e}"));
  } else {
    note = fmt::format("m={} alpha=n/a beta=n/a r=n/a p=n/a", eval.metrics.m);
  }
  svg += fmt::format("<text class=\"annotation\" x=\"{:.2f}\" y=\"{:.2f}\" font-size=\"11\">{}</text>\n",
                     kLeft + 6.0, kTop + 12.0, note);
  svg += "</svg>\n";
  return svg;
}

std::array<unsigned char, 3> log_ramp(double value) {
  static constexpr std::array<std::array<double, 3>, 5> kStops{{
      {255, 255, 178}, {254, 204, 92}, {253, 141, 60}, {240, 59, 32}, {189, 0, 38}}};
  return interpolate(kStops, value / 6.0);
}

std::array<unsigned char, 3> residual_ramp(double value) {
  static constexpr std::array<std::array<double, 3>, 3> kStops{{{33, 102, 172}, {247, 247, 247}, {178, 24, 43}}};
  return interpolate(kStops, (value + 3.0) / 6.0);
}

HeatGrid heat_from_predictions(std::span<const PredictionRow> rows, HeatValue value) {
  HeatGrid g;
  for (const auto& r : rows) {
    g.rows = std::max(g.rows, r.cell.row + 1);
    g.cols = std::max(g.cols, r.cell.col + 1);
  }
  g.values.assign(g.rows * g.cols, 0.0);
  g.valid.assign(g.rows * g.cols, false);
  for (const auto& r : rows) {
    const std::size_t i = r.cell.row * g.cols + r.cell.col;
    switch (value) {
      case HeatValue::kTruth: g.values[i] = r.target_lg; break;
      case HeatValue::kPred: g.values[i] = r.pred_lg; break;
      case HeatValue::kResidual: g.values[i] = r.pred_lg - r.target_lg; break;
    }
    g.valid[i] = true;
  }
  return g;
}

HeatGrid heat_from_grid(const GeoGrid& counts) {
  const auto& h = counts.header();
  HeatGrid g{h.n_rows, h.n_cols, std::vector<double>(h.cell_count(), 0.0),
             std::vector<bool>(h.cell_count(), false)};
  for (std::size_t i = 0; i < h.cell_count(); ++i) {
    const double v = counts.values()[i];
    if (counts.is_nodata(v)) continue;
    g.values[i] = v >= 1.0 ? std::log10(v) : 0.0;
    g.valid[i] = true;
  }
  return g;
}

std::string render_heatmap_svg(const HeatGrid& grid, HeatValue value, std::string_view title) {
  if (grid.rows == 0 || grid.cols == 0) throw Error(ErrorCode::kDimension, "heatmap needs at least one cell");
  const double cell = std::clamp(std::floor(640.0 / static_cast<double>(std::max(grid.rows, grid.cols))), 2.0, 16.0);
  const double top = title.empty() ? 0.0 : 24.0;
  const double w = cell * static_cast<double>(grid.cols);
  const double h = top + cell * static_cast<double>(grid.rows);
  std::string svg = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0f}\" height=\"{:.0f}\" viewBox=\"0 0 {:.0f} {:.0f}\" "
      "shape-rendering=\"crispEdges\">\n",
      w, h, w, h);
  if (!title.empty()) {
    svg += fmt::format("<text class=\"title\" x=\"4\" y=\"16\" font-size=\"12\">{}</text>\n", xml_escape(title));
  }
  for (std::size_t r = 0; r < grid.rows; ++r) {
    for (std::size_t c = 0; c < grid.cols; ++c) {
      const std::size_t i = r * grid.cols + c;
      const auto color = !grid.valid[i]                ? kNodataColor
                         : value == HeatValue::kResidual ? residual_ramp(grid.values[i])
                                                         : log_ramp(grid.values[i]);
      svg += fmt::format("<rect data-row=\"{}\" data-col=\"{}\" x=\"{:.0f}\" y=\"{:.0f}\" width=\"{:.0f}\" "
                         "height=\"{:.0f}\" fill=\"{}\"/>\n",
                         r, c, cell * static_cast<double>(c), top + cell * static_cast<double>(r), cell, cell,
                         hex(color));
    }
  }
  svg += "</svg>\n";
  return svg;
}

std::string render_heatmap_pgm(const HeatGrid& grid, HeatValue value) {
  std::string out = fmt::format("P2\n{} {}\n255\n", grid.cols, grid.rows);
  for (std::size_t r = 0; r < grid.rows; ++r) {
    for (std::size_t c = 0; c < grid.cols; ++c) {
      const std::size_t i = r * grid.cols + c;
      long level = 0;
      if (grid.valid[i]) {
        const double t = value == HeatValue::kResidual ? (grid.values[i] + 3.0) / 6.0 : grid.values[i] / 6.0;
        level = std::lround(255.0 * std::clamp(t, 0.0, 1.0));
      }
      out += fmt::format("{}{}", c ? " " : "", level);
    }
    out += '\n';
  }
  return out;
}

std::string render_histogram_svg(std::span<const HistogramBin> bins, double bin_width, std::string_view title) {
  std::string svg = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0f}\" height=\"{:.0f}\" viewBox=\"0 0 {:.0f} {:.0f}\">\n",
      kWidth, kHeight, kWidth, kHeight);
  svg += "<rect x=\"0\" y=\"0\" width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  if (!title.empty()) {
    svg += fmt::format("<text class=\"title\" x=\"{:.2f}\" y=\"18\" font-size=\"13\" text-anchor=\"middle\">{}</text>\n",
                       kWidth / 2.0, xml_escape(title));
  }
  if (bins.empty()) {
    svg += "</svg>\n";
    return svg;
  }
  std::size_t peak = 0;
  for (const auto& b : bins) peak = std::max(peak, b.count);
  const Range xr{bins.front().start, bins.back().start + bin_width};
  const Range yr{0.0, static_cast<double>(std::max<std::size_t>(peak, 1))};
  axes(svg, xr, yr, "target_lg", "count");
  for (const auto& b : bins) {
    const double x0 = map_x(b.start, xr);
    const double x1 = map_x(b.start + bin_width, xr);
    const double y = map_y(static_cast<double>(b.count), yr);
    svg += fmt::format("<rect class=\"bar\" x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" "
                       "fill=\"#4c72b0\" stroke=\"#ffffff\"/>\n",
                       x0, y, x1 - x0, kBottom - y);
  }
  svg += "</svg>\n";
  return svg;
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, fmt::format("cannot write {}", path.string()));
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw Error(ErrorCode::kIo, fmt::format("write failed for {}", path.string()));
}

}  // namespace popgrid
