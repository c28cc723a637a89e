#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <vector>

namespace popgrid {

// Lattice description shared by population grids and imagery stacks.
// cell_size is in arc-seconds; the origin is the upper-left corner in degrees.
struct GridHeader {
  std::size_t n_rows = 1;
  std::size_t n_cols = 1;
  double cell_size = 30.0;
  double origin_lat = 0.0;
  double origin_lon = 0.0;
  double nodata_value = -9999.0;

  std::size_t cell_count() const { return n_rows * n_cols; }
  void validate() const;
};

// Field-for-field identity. Geographic fields are compared with a 1e-9 relative
// tolerance so that a header survives a text round trip through degrees.
bool coregistered(const GridHeader& a, const GridHeader& b);

struct CellId {
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const CellId&, const CellId&) = default;
  friend auto operator<=>(const CellId&, const CellId&) = default;
};

class GeoGrid {
 public:
  GeoGrid() = default;
  GeoGrid(GridHeader header, std::vector<double> values);
  // All cells set to fill.
  GeoGrid(GridHeader header, double fill);

  const GridHeader& header() const { return header_; }
  const std::vector<double>& values() const { return values_; }

  double at(std::size_t row, std::size_t col) const {
    return values_[row * header_.n_cols + col];
  }
  double& at(std::size_t row, std::size_t col) {
    return values_[row * header_.n_cols + col];
  }
  bool is_nodata(double v) const { return v == header_.nodata_value; }
  // Value with nodata mapped to zero population.
  double population(std::size_t row, std::size_t col) const {
    const double v = at(row, col);
    return is_nodata(v) ? 0.0 : v;
  }

 private:
  GridHeader header_;
  std::vector<double> values_;
};

enum class Band : std::size_t { kRed = 0, kGreen = 1, kBlue = 2, kNir = 3 };
inline constexpr std::size_t kBandCount = 4;

// Four co-registered reflectance bands (R, G, B, NIR). header.cell_size is the
// pixel size in arc-seconds. Values are stored as f32, matching the BGRD file
// layout, so that serialization is lossless.
class BandStack {
 public:
  BandStack() = default;
  explicit BandStack(GridHeader header);
  BandStack(GridHeader header, std::array<std::vector<float>, kBandCount> bands);

  const GridHeader& header() const { return header_; }
  const std::vector<float>& band(std::size_t b) const { return bands_[b]; }
  std::vector<float>& band(std::size_t b) { return bands_[b]; }

  float at(std::size_t b, std::size_t row, std::size_t col) const {
    return bands_[b][row * header_.n_cols + col];
  }
  float& at(std::size_t b, std::size_t row, std::size_t col) {
    return bands_[b][row * header_.n_cols + col];
  }

 private:
  GridHeader header_;
  std::array<std::vector<float>, kBandCount> bands_;
};

GeoGrid read_ascii_grid(const std::filesystem::path& path);
void write_ascii_grid(const GeoGrid& grid, const std::filesystem::path& path);

BandStack read_bandstack(const std::filesystem::path& path);
void write_bandstack(const BandStack& stack, const std::filesystem::path& path);

enum class AggregateMode { kSum, kMean };

GeoGrid aggregate_blocks(const GeoGrid& grid, std::size_t factor,
                         AggregateMode mode);

// 24-hour ambient count: the day/night average where it reaches one person,
// zero otherwise. Nodata inputs count as zero.
GeoGrid combine_ambient(const GeoGrid& day, const GeoGrid& night);

}  // namespace popgrid
