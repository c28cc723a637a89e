#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "popgrid/raster.hpp"

namespace popgrid {

enum class EdgePolicy { kZeroPad, kClamp, kSkip };

EdgePolicy parse_edge_policy(std::string_view text);
std::string to_string(EdgePolicy policy);

struct NeighborSpec {
  std::size_t n = 1;
  EdgePolicy edge_policy = EdgePolicy::kZeroPad;
  // Permits odd sizes outside {1, 3, 5, 7, 9, 11}.
  bool allow_any_size = false;

  void validate() const;
};

// Channel-major (R, G, B, NIR) image tensor centred on one population cell.
struct PatchTensor {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;
  CellId cell;
  std::size_t n_used = 1;

  static constexpr std::size_t kChannels = kBandCount;

  std::size_t plane() const { return height * width; }
  double at(std::size_t ch, std::size_t y, std::size_t x) const {
    return values[(ch * height + y) * width + x];
  }
  double& at(std::size_t ch, std::size_t y, std::size_t x) {
    return values[(ch * height + y) * width + x];
  }
};

// Number of imagery pixels along one side of a population cell. Throws an
// alignment error unless cell_size is an integral multiple of the pixel size.
std::size_t pixels_per_cell(const BandStack& stack, double cell_size);

// Population-cell lattice dimensions covered by the stack.
std::pair<std::size_t, std::size_t> cell_lattice(const BandStack& stack, double cell_size);

PatchTensor extract_patch(const BandStack& stack, CellId cell, double cell_size);

// The n x n block arrangement of per-cell patches centred on `cell`: the
// north-west neighbour occupies the top-left block, the centre cell the middle.
PatchTensor assemble_neighborhood(const BandStack& stack, CellId cell, const NeighborSpec& spec,
                                  double cell_size);

// Corner-aligned bilinear resampling of every channel to out_size x out_size.
PatchTensor resize_bilinear(const PatchTensor& patch, std::size_t out_size);

// Share of the model input occupied by the centre patch, 1/n^2.
double info_proportion(std::size_t n);

// True when the n x n neighbourhood of `cell` falls entirely inside the lattice.
bool neighborhood_in_bounds(std::size_t rows, std::size_t cols, CellId cell, std::size_t n);

// Assembles and resizes model inputs on demand for one stack and neighbourhood.
class PatchSource {
 public:
  PatchSource(const BandStack& stack, double cell_size, NeighborSpec spec, std::size_t input_size);

  PatchTensor operator()(CellId cell) const;

  std::size_t input_size() const { return input_size_; }
  const NeighborSpec& spec() const { return spec_; }
  std::size_t lattice_rows() const { return rows_; }
  std::size_t lattice_cols() const { return cols_; }

 private:
  const BandStack* stack_;
  double cell_size_;
  NeighborSpec spec_;
  std::size_t input_size_;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
};

std::string patch_dump_name(CellId cell, std::size_t n);
// Writes a patch as a BGRD file (header cell size = stack pixel size).
void write_patch(const PatchTensor& patch, const GridHeader& stack_header, const std::string& path);

}  // namespace popgrid
