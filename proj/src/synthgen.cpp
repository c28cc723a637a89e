#include "popgrid/synthgen.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>

#include "popgrid/error.hpp"
#include "popgrid/rng.hpp"

namespace popgrid {

namespace {

// Independent sub-streams of the scene seed.
enum StreamSalt : std::uint64_t { kBlobs = 11, kPixels = 12, kConfound = 13, kJitter = 14 };

// Contrast applied to the smoothed blob field; sharpens urban cores so that
// most cells are sparse and the count distribution is heavy-tailed.
constexpr double kContrast = 3.0;

std::vector<double> smooth_blobs(std::size_t rows, std::size_t cols, double sigma, Rng& rng) {
  std::vector<double> amp(rows * cols);
  for (double& a : amp) a = -std::log(1.0 - rng.uniform());  // Exp(1) blob weights
  if (sigma <= 0.0) return amp;

  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
    kernel[static_cast<std::size_t>(k + radius)] = std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma));
  }
  // Separable pass with in-bounds weight renormalisation so edges stay unbiased.
  auto pass = [&](const std::vector<double>& in, bool along_rows) {
    std::vector<double> out(in.size());
    const auto R = static_cast<std::ptrdiff_t>(rows);
    const auto C = static_cast<std::ptrdiff_t>(cols);
    for (std::ptrdiff_t r = 0; r < R; ++r) {
      for (std::ptrdiff_t c = 0; c < C; ++c) {
        double s = 0.0;
        double w = 0.0;
        for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
          const std::ptrdiff_t rr = along_rows ? r : r + k;
          const std::ptrdiff_t cc = along_rows ? c + k : c;
          if (rr < 0 || rr >= R || cc < 0 || cc >= C) continue;
          const double kw = kernel[static_cast<std::size_t>(k + radius)];
          s += kw * in[static_cast<std::size_t>(rr * C + cc)];
          w += kw;
        }
        out[static_cast<std::size_t>(r * C + c)] = s / w;
      }
    }
    return out;
  };
  return pass(pass(amp, true), false);
}

double quantile_threshold_top(std::vector<double> values, std::size_t top) {
  std::sort(values.begin(), values.end(), std::greater<>());
  return values[top - 1];
}

}  // namespace

void SceneSpec::validate() const {
  if (n_rows == 0 || n_cols == 0) throw Error(ErrorCode::kArgument, "scene needs at least one cell");
  if (pixels_per_cell < 4) {
    throw Error(ErrorCode::kArgument, fmt::format("pixels per cell must be >= 4, got {}", pixels_per_cell));
  }
  if (!(correlation_length >= 0.0)) throw Error(ErrorCode::kArgument, "correlation length must be >= 0");
  if (!(pop_scale >= 0.0) || !std::isfinite(pop_scale)) {
    throw Error(ErrorCode::kArgument, "population scale must be finite and >= 0");
  }
  if (!(confound_fraction >= 0.0 && confound_fraction <= 1.0)) {
    throw Error(ErrorCode::kArgument, "confound fraction must lie in [0, 1]");
  }
  if (!(confound_multiplier >= 1.0) || !std::isfinite(confound_multiplier * confound_fraction)) {
    throw Error(ErrorCode::kArgument, "confound multiplier must be finite and >= 1");
  }
  if (!(pixel_noise_sd >= 0.0)) throw Error(ErrorCode::kArgument, "pixel noise sd must be >= 0");
  if (!(day_night_jitter >= 0.0 && day_night_jitter <= 1.0)) {
    throw Error(ErrorCode::kArgument, "day/night jitter must lie in [0, 1]");
  }
  if (2.0 * pop_scale * confound_multiplier >= 1e6) {
    throw Error(ErrorCode::kArgument, "counts must stay below 5e5 to serialize exactly");
  }
  if (!(cell_size > 0.0)) throw Error(ErrorCode::kArgument, "cell size must be positive");
}

double built_up_fraction(double density) { return std::sqrt(std::clamp(density, 0.0, 1.0)); }

std::array<double, 4> band_signature(double b) {
  return {0.08 + 0.22 * b, 0.10 + 0.16 * b, 0.06 + 0.20 * b, 0.42 - 0.30 * b};
}

Scene generate_scene(const SceneSpec& spec) {
  spec.validate();
  const std::size_t rows = spec.n_rows;
  const std::size_t cols = spec.n_cols;
  const std::size_t n = rows * cols;

  GridHeader cells;
  cells.n_rows = rows;
  cells.n_cols = cols;
  cells.cell_size = spec.cell_size;
  cells.origin_lat = spec.origin_lat;
  cells.origin_lon = spec.origin_lon;
  cells.nodata_value = -9999.0;

  // (1) latent density
  Rng blob_rng(derive_seed(spec.seed, kBlobs));
  auto field = smooth_blobs(rows, cols, spec.correlation_length, blob_rng);
  // Rank-normalise so the marginal of the field is uniform for every seed;
  // the share of sub-one-person cells then depends on pop_scale alone.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return field[a] < field[b]; });
  std::vector<double> density(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double g = n > 1 ? static_cast<double>(k) / static_cast<double>(n - 1) : 0.5;
    density[order[k]] = std::pow(g, kContrast);
  }

  // (2) imagery: constant built-up fraction per cell plus pixel noise
  const std::size_t ppc = spec.pixels_per_cell;
  GridHeader px = cells;
  px.n_rows = rows * ppc;
  px.n_cols = cols * ppc;
  px.cell_size = spec.cell_size / static_cast<double>(ppc);
  BandStack imagery(px);
  Rng pixel_rng(derive_seed(spec.seed, kPixels));
  for (std::size_t y = 0; y < px.n_rows; ++y) {
    for (std::size_t x = 0; x < px.n_cols; ++x) {
      const auto sig = band_signature(built_up_fraction(density[(y / ppc) * cols + x / ppc]));
      for (std::size_t b = 0; b < kBandCount; ++b) {
        double v = sig[b];
        if (spec.pixel_noise_sd > 0.0) v += spec.pixel_noise_sd * pixel_rng.normal();
        imagery.at(b, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }

  // (3) base population on a half-person lattice
  std::vector<double> base(n);
  for (std::size_t i = 0; i < n; ++i) {
    base[i] = std::round(2.0 * spec.pop_scale * density[i] * density[i]) / 2.0;
  }

  // (4) confound: invisible multiplier on a subset of the densest quartile
  std::vector<double> count = base;
  std::vector<CellId> confounded;
  const std::size_t top = n / 4;
  if (top > 0 && spec.confound_fraction > 0.0) {
    const double thr = quantile_threshold_top(density, top);
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < n && candidates.size() < top; ++i) {
      if (density[i] > thr) candidates.push_back(i);
    }
    for (std::size_t i = 0; i < n && candidates.size() < top; ++i) {
      if (density[i] == thr) candidates.push_back(i);
    }
    Rng confound_rng(derive_seed(spec.seed, kConfound));
    shuffle(std::span<std::size_t>(candidates), confound_rng);
    const auto k = static_cast<std::size_t>(std::llround(spec.confound_fraction * static_cast<double>(top)));
    candidates.resize(std::min(k, candidates.size()));
    std::sort(candidates.begin(), candidates.end());
    for (std::size_t i : candidates) {
      count[i] = std::round(2.0 * base[i] * spec.confound_multiplier) / 2.0;
      confounded.push_back({i / cols, i % cols});
    }
  }

  // (5) day/night split of 2*count into two integers; their mean is count exactly
  std::vector<double> day(n);
  std::vector<double> night(n);
  std::vector<double> ambient(n);
  Rng jitter_rng(derive_seed(spec.seed, kJitter));
  for (std::size_t i = 0; i < n; ++i) {
    const double total = 2.0 * count[i];
    const double u = jitter_rng.uniform(-1.0, 1.0);
    const double d = std::clamp(std::round(count[i] * (1.0 + spec.day_night_jitter * u)), 0.0, total);
    day[i] = d;
    night[i] = total - d;
    ambient[i] = count[i] >= 1.0 ? count[i] : 0.0;
  }

  Scene scene{std::move(imagery), GeoGrid(cells, std::move(day)), GeoGrid(cells, std::move(night)),
              SceneTruth{spec, GeoGrid(cells, std::move(density)), GeoGrid(cells, std::move(base)),
                         GeoGrid(cells, std::move(ambient)), std::move(confounded),
                         spec.pop_scale == 0.0}};
  return scene;
}

void write_scene(const Scene& scene, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_bandstack(scene.imagery, dir / "imagery.bgrd");
  write_ascii_grid(scene.day, dir / "day.asc");
  write_ascii_grid(scene.night, dir / "night.asc");

  const auto& t = scene.truth;
  const auto& s = t.spec;
  nlohmann::ordered_json j;
  j["spec"] = {{"n_rows", s.n_rows},
               {"n_cols", s.n_cols},
               {"pixels_per_cell", s.pixels_per_cell},
               {"seed", s.seed},
               {"correlation_length", s.correlation_length},
               {"pop_scale", s.pop_scale},
               {"confound_fraction", s.confound_fraction},
               {"confound_multiplier", s.confound_multiplier},
               {"pixel_noise_sd", s.pixel_noise_sd},
               {"day_night_jitter", s.day_night_jitter},
               {"cell_size", s.cell_size}};
  j["flat_scene"] = t.flat;
  auto& conf = j["confounded"] = nlohmann::ordered_json::array();
  for (const auto& c : t.confounded) conf.push_back({c.row, c.col});
  j["density"] = t.density.values();
  j["base_count"] = t.base_count.values();
  j["ambient"] = t.ambient.values();
  std::ofstream f(dir / "scene_truth.json");
  if (!f) throw Error(ErrorCode::kIo, fmt::format("cannot write {}", (dir / "scene_truth.json").string()));
  f << j.dump() << '\n';
}

std::vector<CellId> read_confounded_cells(const std::filesystem::path& truth_json) {
  std::ifstream f(truth_json);
  if (!f) throw Error(ErrorCode::kIo, fmt::format("cannot open {}", truth_json.string()));
  try {
    const auto j = nlohmann::json::parse(f);
    std::vector<CellId> out;
    for (const auto& c : j.at("confounded")) out.push_back({c.at(0).get<std::size_t>(), c.at(1).get<std::size_t>()});
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, fmt::format("{}: {}", truth_json.string(), e.what()));
  }
}

namespace {

double bin_count_variance(const std::vector<double>& x, std::size_t bins) {
  const auto [lo_it, hi_it] = std::minmax_element(x.begin(), x.end());
  const double lo = *lo_it;
  const double width = (*hi_it - lo) / static_cast<double>(bins);
  std::vector<double> counts(bins, 0.0);
  for (double v : x) {
    std::size_t k = width > 0.0 ? static_cast<std::size_t>((v - lo) / width) : 0;
    counts[std::min(k, bins - 1)] += 1.0;
  }
  const double mu = static_cast<double>(x.size()) / static_cast<double>(bins);
  double var = 0.0;
  for (double c : counts) var += (c - mu) * (c - mu);
  return var / static_cast<double>(bins);
}

}  // namespace

SceneStats scene_stats(const Scene& scene) {
  const auto& amb = scene.truth.ambient.values();
  SceneStats st;
  std::vector<double> logs(amb.size());
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < amb.size(); ++i) {
    if (amb[i] == 0.0) ++zeros;
    logs[i] = log_transform(amb[i]);
  }
  st.zero_fraction = static_cast<double>(zeros) / static_cast<double>(amb.size());
  st.histogram = target_histogram(logs, 0.25);
  st.confound_count = scene.truth.confounded.size();
  st.log_bin_variance = bin_count_variance(logs, 20);
  st.count_bin_variance = bin_count_variance(amb, 20);
  return st;
}

double morans_i(const GeoGrid& grid) {
  const auto& h = grid.header();
  const auto& v = grid.values();
  const double mu = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double den = 0.0;
  for (double x : v) den += (x - mu) * (x - mu);
  if (den == 0.0) return 0.0;
  double num = 0.0;
  double weights = 0.0;
  for (std::size_t r = 0; r < h.n_rows; ++r) {
    for (std::size_t c = 0; c < h.n_cols; ++c) {
      const double a = grid.at(r, c) - mu;
      if (c + 1 < h.n_cols) {
        num += 2.0 * a * (grid.at(r, c + 1) - mu);
        weights += 2.0;
      }
      if (r + 1 < h.n_rows) {
        num += 2.0 * a * (grid.at(r + 1, c) - mu);
        weights += 2.0;
      }
    }
  }
  if (weights == 0.0) return 0.0;
  return static_cast<double>(v.size()) / weights * num / den;
}

}  // namespace popgrid
