#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "popgrid/error.hpp"
#include "popgrid/raster.hpp"
#include "popgrid/synthgen.hpp"
#include "test_util.hpp"

using namespace popgrid;

namespace {

SceneSpec small(std::uint64_t seed) {
  SceneSpec s;
  s.n_rows = 32;
  s.n_cols = 32;
  s.pixels_per_cell = 4;
  s.seed = seed;
  return s;
}

bool is_confounded(const Scene& s, std::size_t r, std::size_t c) {
  const auto& cc = s.truth.confounded;
  return std::any_of(cc.begin(), cc.end(), [&](const CellId& id) { return id.row == r && id.col == c; });
}

}  // namespace

TEST_CASE("scene files are byte-identical for equal seeds") {
  testutil::TempDir a("synth_a");
  testutil::TempDir b("synth_b");
  auto spec = small(99);
  spec.confound_fraction = 0.15;
  write_scene(generate_scene(spec), a.path());
  write_scene(generate_scene(spec), b.path());
  for (const char* f : {"imagery.bgrd", "day.asc", "night.asc", "scene_truth.json"}) {
    CHECK_MESSAGE(testutil::slurp(a / f) == testutil::slurp(b / f), f);
  }
  spec.seed = 100;
  testutil::TempDir c("synth_c");
  write_scene(generate_scene(spec), c.path());
  CHECK(testutil::slurp(a / "day.asc") != testutil::slurp(c / "day.asc"));
}

TEST_CASE("default scale leaves about 30% of cells empty for every seed") {
  for (std::uint64_t seed = 1; seed <= 12; ++seed) {
    SceneSpec spec;
    spec.seed = seed;
    spec.pixels_per_cell = 4;
    const auto st = scene_stats(generate_scene(spec));
    CHECK_MESSAGE(std::fabs(st.zero_fraction - 0.30) <= 0.05, "seed " << seed << ": " << st.zero_fraction);
  }
}

TEST_CASE("combine_ambient of the written grids recovers the intended ambient") {
  auto spec = small(5);
  spec.confound_fraction = 0.3;
  const auto s = generate_scene(spec);
  const auto got = combine_ambient(s.day, s.night);
  CHECK(got.values() == s.truth.ambient.values());
  testutil::TempDir dir("synth_rt");
  write_scene(s, dir.path());
  const auto reread = combine_ambient(read_ascii_grid(dir / "day.asc"), read_ascii_grid(dir / "night.asc"));
  CHECK(reread.values() == s.truth.ambient.values());
}

TEST_CASE("confounded cells carry exactly multiplier times the base count") {
  auto spec = small(21);
  spec.confound_fraction = 0.15;
  const auto s = generate_scene(spec);
  const std::size_t top = spec.n_rows * spec.n_cols / 4;
  CHECK(s.truth.confounded.size() == static_cast<std::size_t>(std::llround(0.15 * static_cast<double>(top))));
  const auto& h = s.truth.ambient.header();
  for (std::size_t r = 0; r < h.n_rows; ++r) {
    for (std::size_t c = 0; c < h.n_cols; ++c) {
      const double base = s.truth.base_count.at(r, c);
      const double amb = s.truth.ambient.at(r, c);
      if (is_confounded(s, r, c)) {
        CHECK(amb == 5.0 * base);
      } else {
        CHECK(amb == (base >= 1.0 ? base : 0.0));
      }
    }
  }
}

TEST_CASE("confounding leaves the imagery untouched") {
  auto spec = small(8);
  const auto clean = generate_scene(spec);
  spec.confound_fraction = 0.15;
  const auto mixed = generate_scene(spec);
  for (std::size_t b = 0; b < kBandCount; ++b) CHECK(clean.imagery.band(b) == mixed.imagery.band(b));
  CHECK(clean.truth.base_count.values() == mixed.truth.base_count.values());
  CHECK(clean.truth.confounded.empty());
  CHECK(scene_stats(clean).confound_count == 0);
}

TEST_CASE("spatial autocorrelation grows with correlation length") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    double prev = -1.0;
    for (double len : {0.0, 1.0, 3.0, 6.0}) {
      auto spec = small(seed);
      spec.correlation_length = len;
      const double mi = morans_i(generate_scene(spec).truth.density);
      CHECK_MESSAGE(mi > prev, "seed " << seed << " len " << len << ": " << mi);
      prev = mi;
    }
  }
}

TEST_CASE("without noise or confounding, counts are a monotone function of pixel brightness") {
  auto spec = small(17);
  spec.pixel_noise_sd = 0.0;
  const auto s = generate_scene(spec);
  const auto& h = s.truth.ambient.header();
  std::vector<std::pair<float, double>> pairs;  // (NIR of the cell, ambient)
  for (std::size_t r = 0; r < h.n_rows; ++r) {
    for (std::size_t c = 0; c < h.n_cols; ++c) {
      pairs.emplace_back(s.imagery.at(3, r * 4, c * 4), s.truth.ambient.at(r, c));
      CHECK(s.imagery.at(0, r * 4 + 3, c * 4 + 2) == s.imagery.at(0, r * 4, c * 4));
    }
  }
  std::sort(pairs.begin(), pairs.end());
  for (std::size_t i = 1; i < pairs.size(); ++i) {
    // NIR falls with density, so counts must not rise along increasing NIR.
    if (pairs[i].second > pairs[i - 1].second) FAIL("count rises with NIR at " << i);
  }
}

TEST_CASE("zero population scale yields a flat scene") {
  auto spec = small(3);
  spec.pop_scale = 0.0;
  const auto s = generate_scene(spec);
  CHECK(s.truth.flat);
  for (double v : s.truth.ambient.values()) CHECK(v == 0.0);
  CHECK(scene_stats(s).zero_fraction == 1.0);
}

TEST_CASE("log targets are flatter than raw counts") {
  SceneSpec spec;
  spec.pixels_per_cell = 4;
  const auto st = scene_stats(generate_scene(spec));
  CHECK(st.log_bin_variance < st.count_bin_variance);
}

TEST_CASE("imagery brightness tracks density") {
  const auto s = generate_scene(small(4));
  const auto& h = s.truth.density.header();
  double lo = 1e9, hi = -1e9;
  std::size_t lo_i = 0, hi_i = 0;
  for (std::size_t i = 0; i < h.cell_count(); ++i) {
    const double d = s.truth.density.values()[i];
    if (d < lo) lo = d, lo_i = i;
    if (d > hi) hi = d, hi_i = i;
  }
  const auto red = [&](std::size_t i) {
    return s.imagery.at(0, (i / h.n_cols) * 4 + 1, (i % h.n_cols) * 4 + 1);
  };
  const auto nir = [&](std::size_t i) {
    return s.imagery.at(3, (i / h.n_cols) * 4 + 1, (i % h.n_cols) * 4 + 1);
  };
  CHECK(red(hi_i) > red(lo_i));
  CHECK(nir(hi_i) < nir(lo_i));
}

TEST_CASE("invalid specs are rejected") {
  auto spec = small(1);
  spec.pixels_per_cell = 3;
  CHECK_THROWS_CODE(generate_scene(spec), ErrorCode::kArgument);
  spec = small(1);
  spec.confound_fraction = 1.5;
  CHECK_THROWS_CODE(generate_scene(spec), ErrorCode::kArgument);
  spec = small(1);
  spec.confound_multiplier = 0.5;
  CHECK_THROWS_CODE(generate_scene(spec), ErrorCode::kArgument);
  spec = small(1);
  spec.n_rows = 0;
  CHECK_THROWS_CODE(generate_scene(spec), ErrorCode::kArgument);
}

TEST_CASE("confounded cells round-trip through the truth file") {
  auto spec = small(13);
  spec.confound_fraction = 0.5;
  const auto s = generate_scene(spec);
  testutil::TempDir dir("synth_truth");
  write_scene(s, dir.path());
  const auto cells = read_confounded_cells(dir / "scene_truth.json");
  REQUIRE(cells.size() == s.truth.confounded.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    CHECK(cells[i].row == s.truth.confounded[i].row);
    CHECK(cells[i].col == s.truth.confounded[i].col);
  }
}
