#include "popgrid/patchkit.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "popgrid/error.hpp"

namespace popgrid {

EdgePolicy parse_edge_policy(std::string_view text) {
  if (text == "zero_pad" || text == "zero-pad") return EdgePolicy::kZeroPad;
  if (text == "clamp") return EdgePolicy::kClamp;
  if (text == "skip") return EdgePolicy::kSkip;
  throw Error(ErrorCode::kUsage,
              fmt::format("unknown edge policy '{}' (expected zero_pad, clamp or skip)", text));
}

std::string to_string(EdgePolicy policy) {
  switch (policy) {
    case EdgePolicy::kZeroPad: return "zero_pad";
    case EdgePolicy::kClamp: return "clamp";
    case EdgePolicy::kSkip: return "skip";
  }
  return "zero_pad";
}

void NeighborSpec::validate() const {
  if (n == 0 || n % 2 == 0) {
    throw Error(ErrorCode::kArgument, fmt::format("neighbourhood size must be odd, got {}", n));
  }
  if (!allow_any_size && n > 11) {
    throw Error(ErrorCode::kArgument,
                fmt::format("neighbourhood size {} outside {{1,3,5,7,9,11}}", n));
  }
}

std::size_t pixels_per_cell(const BandStack& stack, double cell_size) {
  const double ratio = cell_size / stack.header().cell_size;
  const double k = std::round(ratio);
  if (!(k >= 1.0) || std::fabs(ratio - k) > 1e-9 * k) {
    throw Error(ErrorCode::kAlignment,
                fmt::format("cell size {}\" is not an integral multiple of pixel size {}\"",
                            cell_size, stack.header().cell_size));
  }
  return static_cast<std::size_t>(k);
}

std::pair<std::size_t, std::size_t> cell_lattice(const BandStack& stack, double cell_size) {
  const std::size_t ppc = pixels_per_cell(stack, cell_size);
  const auto& h = stack.header();
  if (h.n_rows % ppc != 0 || h.n_cols % ppc != 0) {
    throw Error(ErrorCode::kAlignment,
                fmt::format("stack {}x{} pixels is not a whole number of {}-pixel cells", h.n_rows,
                            h.n_cols, ppc));
  }
  return {h.n_rows / ppc, h.n_cols / ppc};
}

bool neighborhood_in_bounds(std::size_t rows, std::size_t cols, CellId cell, std::size_t n) {
  const std::size_t half = n / 2;
  return cell.row >= half && cell.col >= half && cell.row + half < rows && cell.col + half < cols;
}

PatchTensor extract_patch(const BandStack& stack, CellId cell, double cell_size) {
  return assemble_neighborhood(stack, cell, NeighborSpec{1, EdgePolicy::kZeroPad, false},
                               cell_size);
}

PatchTensor assemble_neighborhood(const BandStack& stack, CellId cell, const NeighborSpec& spec,
                                  double cell_size) {
  spec.validate();
  const std::size_t ppc = pixels_per_cell(stack, cell_size);
  const auto [rows, cols] = cell_lattice(stack, cell_size);
  if (cell.row >= rows || cell.col >= cols) {
    throw Error(ErrorCode::kBounds, fmt::format("cell ({}, {}) outside {}x{} lattice", cell.row,
                                                cell.col, rows, cols));
  }
  const bool inside = neighborhood_in_bounds(rows, cols, cell, spec.n);
  if (!inside && spec.edge_policy == EdgePolicy::kSkip) {
    throw Error(ErrorCode::kEdgeSkip,
                fmt::format("cell ({}, {}) neighbourhood n={} crosses the raster edge", cell.row,
                            cell.col, spec.n));
  }

  const std::size_t side = spec.n * ppc;
  PatchTensor patch;
  patch.height = side;
  patch.width = side;
  patch.cell = cell;
  patch.n_used = spec.n;
  patch.values.assign(PatchTensor::kChannels * side * side, 0.0);

  const auto& h = stack.header();
  const auto H = static_cast<std::ptrdiff_t>(h.n_rows);
  const auto W = static_cast<std::ptrdiff_t>(h.n_cols);
  const auto y0 = (static_cast<std::ptrdiff_t>(cell.row) - static_cast<std::ptrdiff_t>(spec.n / 2)) *
                  static_cast<std::ptrdiff_t>(ppc);
  const auto x0 = (static_cast<std::ptrdiff_t>(cell.col) - static_cast<std::ptrdiff_t>(spec.n / 2)) *
                  static_cast<std::ptrdiff_t>(ppc);

  for (std::size_t ch = 0; ch < PatchTensor::kChannels; ++ch) {
    const auto& band = stack.band(ch);
    for (std::size_t y = 0; y < side; ++y) {
      std::ptrdiff_t gy = y0 + static_cast<std::ptrdiff_t>(y);
      const bool row_out = gy < 0 || gy >= H;
      if (row_out && spec.edge_policy == EdgePolicy::kZeroPad) continue;
      gy = std::clamp<std::ptrdiff_t>(gy, 0, H - 1);
      for (std::size_t x = 0; x < side; ++x) {
        std::ptrdiff_t gx = x0 + static_cast<std::ptrdiff_t>(x);
        const bool col_out = gx < 0 || gx >= W;
        if (col_out && spec.edge_policy == EdgePolicy::kZeroPad) continue;
        gx = std::clamp<std::ptrdiff_t>(gx, 0, W - 1);
        patch.at(ch, y, x) = band[static_cast<std::size_t>(gy * W + gx)];
      }
    }
  }
  return patch;
}

namespace {

struct Tap {
  std::size_t lo;
  std::size_t hi;
  double frac;
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = 0.0;
    if (out == 1) {
      src = 0.5 * static_cast<double>(in - 1);
    } else {
      src = static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
    }
    auto lo = static_cast<std::size_t>(std::floor(src));
    lo = std::min(lo, in - 1);
    const std::size_t hi = std::min(lo + 1, in - 1);
    taps[i] = {lo, hi, src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace

PatchTensor resize_bilinear(const PatchTensor& patch, std::size_t out_size) {
  if (out_size == 0) throw Error(ErrorCode::kArgument, "resize target size must be positive");
  if (patch.height != patch.width) {
    throw Error(ErrorCode::kShape, fmt::format("resize needs a square patch, got {}x{}",
                                               patch.height, patch.width));
  }
  if (patch.height == out_size) return patch;

  const auto taps = bilinear_taps(patch.height, out_size);
  PatchTensor out;
  out.height = out_size;
  out.width = out_size;
  out.cell = patch.cell;
  out.n_used = patch.n_used;
  out.values.resize(PatchTensor::kChannels * out_size * out_size);
  for (std::size_t ch = 0; ch < PatchTensor::kChannels; ++ch) {
    for (std::size_t y = 0; y < out_size; ++y) {
      const Tap& ty = taps[y];
      for (std::size_t x = 0; x < out_size; ++x) {
        const Tap& tx = taps[x];
        const double top = (1.0 - tx.frac) * patch.at(ch, ty.lo, tx.lo) + tx.frac * patch.at(ch, ty.lo, tx.hi);
        const double bot = (1.0 - tx.frac) * patch.at(ch, ty.hi, tx.lo) + tx.frac * patch.at(ch, ty.hi, tx.hi);
        out.at(ch, y, x) = (1.0 - ty.frac) * top + ty.frac * bot;
      }
    }
  }
  return out;
}

double info_proportion(std::size_t n) {
  if (n == 0 || n % 2 == 0) {
    throw Error(ErrorCode::kArgument, fmt::format("neighbourhood size must be odd, got {}", n));
  }
  const double side = static_cast<double>(n);
  return 1.0 / (side * side);
}

PatchSource::PatchSource(const BandStack& stack, double cell_size, NeighborSpec spec,
                         std::size_t input_size)
    : stack_(&stack), cell_size_(cell_size), spec_(spec), input_size_(input_size) {
  spec_.validate();
  if (input_size_ == 0) throw Error(ErrorCode::kArgument, "input size must be positive");
  std::tie(rows_, cols_) = cell_lattice(stack, cell_size);
}

PatchTensor PatchSource::operator()(CellId cell) const {
  return resize_bilinear(assemble_neighborhood(*stack_, cell, spec_, cell_size_), input_size_);
}

std::string patch_dump_name(CellId cell, std::size_t n) {
  return fmt::format("patch_r{}_c{}_n{}.bgrd", cell.row, cell.col, n);
}

void write_patch(const PatchTensor& patch, const GridHeader& stack_header, const std::string& path) {
  GridHeader h = stack_header;
  h.n_rows = patch.height;
  h.n_cols = patch.width;
  BandStack out(h);
  for (std::size_t ch = 0; ch < PatchTensor::kChannels; ++ch) {
    auto& band = out.band(ch);
    for (std::size_t i = 0; i < patch.plane(); ++i) {
      band[i] = static_cast<float>(patch.values[ch * patch.plane() + i]);
    }
  }
  write_bandstack(out, path);
}

}  // namespace popgrid
