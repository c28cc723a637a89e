#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "popgrid/dataset.hpp"
#include "popgrid/raster.hpp"

namespace popgrid {

struct SceneSpec {
  std::size_t n_rows = 48;
  std::size_t n_cols = 48;
  std::size_t pixels_per_cell = 8;
  std::uint64_t seed = 7;
  double correlation_length = 3.0;  // cells
  double pop_scale = 1000.0;        // count of the densest cell (~30% of cells below one person)
  double confound_fraction = 0.0;   // share of top-quartile cells that are confounded
  double confound_multiplier = 5.0;
  double pixel_noise_sd = 0.02;  // reflectance units
  double day_night_jitter = 0.2;
  double cell_size = 30.0;  // arc-seconds
  double origin_lat = 34.0;
  double origin_lon = -84.5;

  void validate() const;
};

struct SceneTruth {
  SceneSpec spec;
  GeoGrid density;     // latent D in [0, 1]
  GeoGrid base_count;  // count implied by the imagery, pop_scale * D^2 on a half-person lattice
  GeoGrid ambient;     // intended combine_ambient output
  std::vector<CellId> confounded;
  bool flat = false;  // pop_scale == 0
};

struct Scene {
  BandStack imagery;
  GeoGrid day;
  GeoGrid night;
  SceneTruth truth;
};

// Built-up fraction a pixel of a cell with density D shows in the imagery.
double built_up_fraction(double density);

// Band reflectances (R, G, B, NIR) of a noiseless pixel with built-up fraction b.
std::array<double, 4> band_signature(double built_up);

Scene generate_scene(const SceneSpec& spec);

// Writes imagery.bgrd, day.asc, night.asc and scene_truth.json into dir.
void write_scene(const Scene& scene, const std::filesystem::path& dir);

std::vector<CellId> read_confounded_cells(const std::filesystem::path& truth_json);

struct SceneStats {
  double zero_fraction = 0.0;  // ambient cells with count 0
  std::vector<HistogramBin> histogram;  // of log targets, bin width 0.25
  std::size_t confound_count = 0;
  // Variance of the bin counts of a 20-bin histogram spanning each variable's
  // range; lower means flatter.
  double log_bin_variance = 0.0;
  double count_bin_variance = 0.0;
};

SceneStats scene_stats(const Scene& scene);

// Lag-1 Moran's I with rook adjacency.
double morans_i(const GeoGrid& grid);

}  // namespace popgrid
