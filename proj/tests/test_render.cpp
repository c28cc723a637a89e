#include <doctest.h>

#include <cmath>
#include <regex>

#include "popgrid/error.hpp"
#include "popgrid/render.hpp"
#include "popgrid/synthgen.hpp"
#include "test_util.hpp"

using namespace popgrid;

namespace {

const std::filesystem::path kFixtures = POPGRID_FIXTURES;

double attr(const std::string& svg, const std::string& element_class, const std::string& name) {
  const std::regex re("class=\"" + element_class + "\"[^>]*?" + name + "=\"([-0-9.]+)\"");
  std::smatch m;
  REQUIRE(std::regex_search(svg, m, re));
  return std::stod(m[1]);
}

std::size_t count(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

}  // namespace

TEST_CASE("a single perfect point sits on the reference line") {
  const auto svg = render_scatter_svg({{2.0, 2.0}}, ScatterKind::kPredVsTruth);
  const double cx = attr(svg, "pt", "cx");
  const double cy = attr(svg, "pt", "cy");
  const double x1 = attr(svg, "ref", "x1"), y1 = attr(svg, "ref", "y1");
  const double x2 = attr(svg, "ref", "x2"), y2 = attr(svg, "ref", "y2");
  const double on_line = y1 + (y2 - y1) * (cx - x1) / (x2 - x1);
  CHECK(cy == doctest::Approx(on_line).epsilon(1e-9));
  CHECK(svg.find("R2=n/a") != std::string::npos);
}

TEST_CASE("residual plot annotates the fitted slope") {
  const auto pairs = read_pairs_csv(kFixtures / "resid_pairs.csv");
  const auto svg = render_scatter_svg(pairs, ScatterKind::kResidualVsTruth, "fixture");
  CHECK(svg.find("beta=-0.200") != std::string::npos);
  CHECK(svg.find("class=\"fit\"") != std::string::npos);
  CHECK(count(svg, "class=\"pt\"") == pairs.size());
}

TEST_CASE("rendering is byte-deterministic") {
  const auto pairs = read_pairs_csv(kFixtures / "resid_pairs.csv");
  CHECK(render_scatter_svg(pairs, ScatterKind::kPredVsTruth, "t") ==
        render_scatter_svg(pairs, ScatterKind::kPredVsTruth, "t"));
  const auto rows = read_predictions(kFixtures / "eval_predictions.csv");
  const auto heat = heat_from_predictions(rows, HeatValue::kResidual);
  CHECK(render_heatmap_svg(heat, HeatValue::kResidual) == render_heatmap_svg(heat, HeatValue::kResidual));
  CHECK(render_heatmap_pgm(heat, HeatValue::kResidual) == render_heatmap_pgm(heat, HeatValue::kResidual));
}

TEST_CASE("titles are XML-escaped") {
  const auto svg = render_scatter_svg({{1.0, 1.0}, {2.0, 2.5}}, ScatterKind::kPredVsTruth, "a<b & \"c\"");
  CHECK(svg.find("a&lt;b &amp; &quot;c&quot;") != std::string::npos);
  CHECK(svg.find("a<b") == std::string::npos);
}

TEST_CASE("heatmaps of degenerate grids") {
  SUBCASE("constant grid renders one colour") {
    GridHeader h;
    h.n_rows = 3;
    h.n_cols = 4;
    const auto svg = render_heatmap_svg(heat_from_grid(GeoGrid(h, std::vector<double>(12, 100.0))), HeatValue::kTruth);
    CHECK(count(svg, "<rect ") == 12);
    CHECK(count(svg, "fill=\"" + [] {
            const auto c = log_ramp(2.0);
            char buf[8];
            std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c[0], c[1], c[2]);
            return std::string(buf);
          }() + "\"") == 12);
  }
  SUBCASE("1x1 grid") {
    GridHeader h;
    h.n_rows = 1;
    h.n_cols = 1;
    const auto heat = heat_from_grid(GeoGrid(h, std::vector<double>{5.0}));
    CHECK(count(render_heatmap_svg(heat, HeatValue::kTruth), "<rect ") == 1);
    CHECK(render_heatmap_pgm(heat, HeatValue::kTruth) == "P2\n1 1\n255\n30\n");
  }
  SUBCASE("nodata is grey") {
    GridHeader h;
    h.n_rows = 1;
    h.n_cols = 2;
    const auto svg = render_heatmap_svg(heat_from_grid(GeoGrid(h, std::vector<double>{-9999.0, 10.0})), HeatValue::kTruth);
    CHECK(svg.find("fill=\"#bfbfbf\"") != std::string::npos);
  }
}

TEST_CASE("render input errors") {
  CHECK_THROWS_CODE(parse_heat_value("count"), ErrorCode::kUsage);
  CHECK_THROWS_CODE(parse_scatter_kind("hexbin"), ErrorCode::kUsage);
  CHECK_THROWS_CODE(render_scatter_svg({}, ScatterKind::kPredVsTruth), ErrorCode::kEmptySplit);
  CHECK_THROWS_CODE(render_heatmap_svg(HeatGrid{}, HeatValue::kTruth), ErrorCode::kDimension);
  testutil::TempDir dir("render_err");
  testutil::spit(dir / "bad.csv", "truth_lg,pred_lg\n1.0;2.0\n");
  CHECK_THROWS_CODE(read_pairs_csv(dir / "bad.csv"), ErrorCode::kParse);
  CHECK_THROWS_CODE(read_pairs_csv(dir / "missing.csv"), ErrorCode::kIo);
}

TEST_CASE("underestimated confounded cells render blue on the residual ramp") {
  SceneSpec spec;
  spec.n_rows = 24;
  spec.n_cols = 24;
  spec.pixels_per_cell = 4;
  spec.confound_fraction = 0.5;
  const auto scene = generate_scene(spec);
  std::vector<PredictionRow> rows;
  const auto& h = scene.truth.ambient.header();
  for (std::size_t r = 0; r < h.n_rows; ++r) {
    for (std::size_t c = 0; c < h.n_cols; ++c) {
      const double base = scene.truth.base_count.at(r, c);
      rows.push_back({{r, c}, Split::kTest, log_transform(scene.truth.ambient.at(r, c)),
                      log_transform(base >= 1.0 ? base : 0.0)});
    }
  }
  const auto heat = heat_from_predictions(rows, HeatValue::kResidual);
  REQUIRE_FALSE(scene.truth.confounded.empty());
  for (const auto& cell : scene.truth.confounded) {
    const auto rgb = residual_ramp(heat.values[cell.row * heat.cols + cell.col]);
    CHECK(rgb[2] > rgb[0]);
  }
}

TEST_CASE("residual ramp is blue below zero, neutral at zero and red above") {
  const auto lo = residual_ramp(-2.0);
  const auto mid = residual_ramp(0.0);
  const auto hi = residual_ramp(2.0);
  CHECK(lo[2] > lo[0]);
  CHECK(hi[0] > hi[2]);
  CHECK(mid[0] == mid[2]);
  CHECK(log_ramp(-1.0) == log_ramp(0.0));
  CHECK(log_ramp(9.0) == log_ramp(6.0));
}

TEST_CASE("histogram draws one bar per bin") {
  const std::vector<HistogramBin> bins{{0.0, 3}, {0.25, 0}, {0.5, 7}};
  const auto svg = render_histogram_svg(bins, 0.25, "targets");
  CHECK(count(svg, "class=\"bar\"") == 3);
}
