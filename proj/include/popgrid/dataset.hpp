#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "popgrid/patchkit.hpp"
#include "popgrid/raster.hpp"

namespace popgrid {

enum class Split { kTrain, kValid, kTest };

std::string to_string(Split split);
Split parse_split(std::string_view text);

// log10 of a count, with zero population mapped to the 0 sentinel. Counts in
// (0, 1) cannot come out of combine_ambient and are rejected.
double log_transform(double count);

struct InverseLog {
  double count = 0.0;
  bool ambiguous = false;  // lg == 0 may stand for a count of 0 or 1
  bool clamped = false;    // negative input was clamped to 0
};
InverseLog inverse_log_transform(double lg);

struct SplitCounts {
  std::size_t train = 0;
  std::size_t valid = 0;
  std::size_t test = 0;
};

// Floor-partitioned 60/20/20 sizes; the remainder goes to train.
SplitCounts split_counts(std::size_t total);

struct Sample {
  CellId cell;
  double target_lg = 0.0;
  double count = 0.0;  // raw ambient count, keeps the 0/1 sentinel recoverable
  Split split = Split::kTrain;
};

struct DatasetManifest {
  std::vector<Sample> samples;
  std::uint64_t seed = 0;
  std::array<double, 3> fractions{0.6, 0.2, 0.2};
  EdgePolicy edge_policy = EdgePolicy::kZeroPad;
  std::size_t n_used = 1;
  double cell_size = 0.0;  // arc-seconds of the population lattice; 0 if unknown

  std::vector<Sample> of_split(Split split) const;
};

// Seeded permutation of `cells`; the first 60% become train, the next 20%
// valid, the rest test. Returned in the input order with split tags set.
std::vector<Split> split_dataset(std::span<const CellId> cells, std::uint64_t seed);

// Builds the full manifest from an ambient population grid. With the skip
// edge policy, cells whose neighbourhood leaves the lattice are dropped first.
DatasetManifest build_manifest(const GeoGrid& ambient, std::uint64_t seed, const NeighborSpec& spec);

struct HistogramBin {
  double start = 0.0;
  std::size_t count = 0;
  friend bool operator==(const HistogramBin&, const HistogramBin&) = default;
};

// Half-open bins [k*w, (k+1)*w) from the lowest occupied bin to the highest.
std::vector<HistogramBin> target_histogram(std::span<const double> targets, double bin_width);

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

}  // namespace popgrid
