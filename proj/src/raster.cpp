#include "popgrid/raster.hpp"

#include <fmt/format.h>

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include "popgrid/error.hpp"

namespace popgrid {

namespace {

constexpr double kArcsecPerDegree = 3600.0;
constexpr char kBgrdMagic[4] = {'B', 'G', 'R', 'D'};
constexpr std::uint32_t kBgrdVersion = 1;

bool close_rel(double a, double b) {
  if (a == b) return true;
  const double scale = std::max({std::fabs(a), std::fabs(b), 1.0});
  return std::fabs(a - b) <= 1e-9 * scale;
}

bool parse_double(std::string_view token, double& out) {
  const char* first = token.data();
  const char* last = token.data() + token.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

// Little-endian primitive IO for BGRD, independent of host byte order.
template <typename U>
void put_le(std::string& buf, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    buf.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
  }
}

template <typename U>
U get_le(const unsigned char* p) {
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    value |= static_cast<U>(p[i]) << (8 * i);
  }
  return value;
}

}  // namespace

void GridHeader::validate() const {
  if (n_rows == 0 || n_cols == 0) {
    throw Error(ErrorCode::kDimension,
                fmt::format("grid must have at least one cell, got {}x{}", n_rows, n_cols));
  }
  if (!(cell_size > 0.0) || !std::isfinite(cell_size)) {
    throw Error(ErrorCode::kArgument, fmt::format("cell size must be positive, got {}", cell_size));
  }
}

bool coregistered(const GridHeader& a, const GridHeader& b) {
  return a.n_rows == b.n_rows && a.n_cols == b.n_cols && close_rel(a.cell_size, b.cell_size) &&
         close_rel(a.origin_lat, b.origin_lat) && close_rel(a.origin_lon, b.origin_lon) &&
         (a.nodata_value == b.nodata_value ||
          (std::isnan(a.nodata_value) && std::isnan(b.nodata_value)));
}

GeoGrid::GeoGrid(GridHeader header, std::vector<double> values)
    : header_(header), values_(std::move(values)) {
  header_.validate();
  if (values_.size() != header_.cell_count()) {
    throw Error(ErrorCode::kDimension,
                fmt::format("grid {}x{} needs {} values, got {}", header_.n_rows, header_.n_cols,
                            header_.cell_count(), values_.size()));
  }
}

GeoGrid::GeoGrid(GridHeader header, double fill)
    : GeoGrid(header, std::vector<double>(header.n_rows * header.n_cols, fill)) {}

BandStack::BandStack(GridHeader header) : header_(header) {
  header_.validate();
  for (auto& b : bands_) b.assign(header_.cell_count(), 0.0f);
}

BandStack::BandStack(GridHeader header, std::array<std::vector<float>, kBandCount> bands)
    : header_(header), bands_(std::move(bands)) {
  header_.validate();
  for (std::size_t b = 0; b < kBandCount; ++b) {
    if (bands_[b].size() != header_.cell_count()) {
      throw Error(ErrorCode::kDimension,
                  fmt::format("band {} has {} values, expected {}", b, bands_[b].size(),
                              header_.cell_count()));
    }
    for (float v : bands_[b]) {
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::kDomain, fmt::format("band {} contains a non-finite value", b));
      }
    }
  }
}

GeoGrid read_ascii_grid(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, fmt::format("cannot open {}", path.string()));

  static constexpr std::string_view kKeys[] = {"ncols",     "nrows",    "xllcorner",
                                               "yllcorner", "cellsize", "nodata_value"};
  double fields[6] = {};
  std::string line;
  std::size_t line_no = 0;
  for (std::size_t k = 0; k < 6; ++k) {
    if (!std::getline(in, line)) {
      throw Error(ErrorCode::kParse,
                  fmt::format("{}: line {}: missing header key '{}'", path.string(), line_no + 1,
                              kKeys[k]));
    }
    ++line_no;
    auto tokens = split_ws(line);
    if (tokens.size() != 2 || lower(tokens[0]) != kKeys[k] || !parse_double(tokens[1], fields[k])) {
      throw Error(ErrorCode::kParse, fmt::format("{}: line {}: malformed header, expected '{} <value>'",
                                                 path.string(), line_no, kKeys[k]));
    }
  }
  for (int k = 0; k < 2; ++k) {
    if (fields[k] < 1 || fields[k] != std::floor(fields[k])) {
      throw Error(ErrorCode::kParse, fmt::format("{}: line {}: {} must be a positive integer",
                                                 path.string(), k + 1, kKeys[k]));
    }
  }

  GridHeader header;
  header.n_cols = static_cast<std::size_t>(fields[0]);
  header.n_rows = static_cast<std::size_t>(fields[1]);
  const double cell_deg = fields[4];
  header.cell_size = cell_deg * kArcsecPerDegree;
  header.origin_lon = fields[2];
  header.origin_lat = fields[3] + static_cast<double>(header.n_rows) * cell_deg;
  header.nodata_value = fields[5];
  header.validate();

  std::vector<double> values;
  values.reserve(header.cell_count());
  std::size_t data_rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto tokens = split_ws(line);
    if (tokens.empty()) continue;
    if (data_rows == header.n_rows) {
      throw Error(ErrorCode::kDimension,
                  fmt::format("{}: line {}: more than {} data rows", path.string(), line_no,
                              header.n_rows));
    }
    if (tokens.size() != header.n_cols) {
      throw Error(ErrorCode::kDimension,
                  fmt::format("{}: line {}: expected {} values, found {}", path.string(), line_no,
                              header.n_cols, tokens.size()));
    }
    for (auto tok : tokens) {
      double v = 0.0;
      if (!parse_double(tok, v)) {
        throw Error(ErrorCode::kParse,
                    fmt::format("{}: line {}: bad value '{}'", path.string(), line_no, tok));
      }
      values.push_back(v);
    }
    ++data_rows;
  }
  if (data_rows != header.n_rows) {
    throw Error(ErrorCode::kDimension, fmt::format("{}: expected {} data rows, found {}",
                                                   path.string(), header.n_rows, data_rows));
  }
  return GeoGrid(header, std::move(values));
}

void write_ascii_grid(const GeoGrid& grid, const std::filesystem::path& path) {
  const auto& h = grid.header();
  const double cell_deg = h.cell_size / kArcsecPerDegree;
  const double yll = h.origin_lat - static_cast<double>(h.n_rows) * cell_deg;
  const std::string nodata_text = fmt::format("{}", h.nodata_value);

  std::string out;
  out += fmt::format("ncols {}\n", h.n_cols);
  out += fmt::format("nrows {}\n", h.n_rows);
  out += fmt::format("xllcorner {}\n", h.origin_lon);
  out += fmt::format("yllcorner {}\n", yll);
  out += fmt::format("cellsize {}\n", cell_deg);
  out += fmt::format("NODATA_value {}\n", nodata_text);
  for (std::size_t r = 0; r < h.n_rows; ++r) {
    for (std::size_t c = 0; c < h.n_cols; ++c) {
      if (c) out += ' ';
      const double v = grid.at(r, c);
      if (grid.is_nodata(v)) {
        out += nodata_text;
      } else {
        out += fmt::format("{:.6g}", v);
      }
    }
    out += '\n';
  }

  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, fmt::format("cannot write {}", path.string()));
  f << out;
  if (!f) throw Error(ErrorCode::kIo, fmt::format("write failed for {}", path.string()));
}

BandStack read_bandstack(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, fmt::format("cannot open {}", path.string()));
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  constexpr std::size_t kHeaderBytes = 4 + 4 * 4 + 3 * 8;
  if (buf.size() < 4 || std::memcmp(buf.data(), kBgrdMagic, 4) != 0) {
    throw Error(ErrorCode::kFormat, fmt::format("{}: bad magic, not a BGRD file", path.string()));
  }
  if (buf.size() < kHeaderBytes) {
    throw Error(ErrorCode::kFormat, fmt::format("{}: truncated BGRD header", path.string()));
  }
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data()) + 4;
  const auto version = get_le<std::uint32_t>(p);
  const auto n_rows = get_le<std::uint32_t>(p + 4);
  const auto n_cols = get_le<std::uint32_t>(p + 8);
  const auto n_bands = get_le<std::uint32_t>(p + 12);
  if (version != kBgrdVersion) {
    throw Error(ErrorCode::kFormat, fmt::format("{}: unsupported BGRD version {}", path.string(), version));
  }
  if (n_bands != kBandCount) {
    throw Error(ErrorCode::kUnsupported,
                fmt::format("{}: stack has {} bands, only 4 (R,G,B,NIR) supported", path.string(), n_bands));
  }
  GridHeader header;
  header.n_rows = n_rows;
  header.n_cols = n_cols;
  header.cell_size = std::bit_cast<double>(get_le<std::uint64_t>(p + 16));
  header.origin_lat = std::bit_cast<double>(get_le<std::uint64_t>(p + 24));
  header.origin_lon = std::bit_cast<double>(get_le<std::uint64_t>(p + 32));
  header.validate();

  const std::size_t n = header.cell_count();
  if (buf.size() != kHeaderBytes + kBandCount * n * 4) {
    throw Error(ErrorCode::kDimension,
                fmt::format("{}: payload is {} bytes, expected {}", path.string(),
                            buf.size() - kHeaderBytes, kBandCount * n * 4));
  }
  std::array<std::vector<float>, kBandCount> bands;
  const auto* data = reinterpret_cast<const unsigned char*>(buf.data()) + kHeaderBytes;
  for (std::size_t b = 0; b < kBandCount; ++b) {
    bands[b].resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      bands[b][i] = std::bit_cast<float>(get_le<std::uint32_t>(data + (b * n + i) * 4));
    }
  }
  return BandStack(header, std::move(bands));
}

void write_bandstack(const BandStack& stack, const std::filesystem::path& path) {
  const auto& h = stack.header();
  std::string buf(kBgrdMagic, 4);
  put_le<std::uint32_t>(buf, kBgrdVersion);
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(h.n_rows));
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(h.n_cols));
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(kBandCount));
  put_le<std::uint64_t>(buf, std::bit_cast<std::uint64_t>(h.cell_size));
  put_le<std::uint64_t>(buf, std::bit_cast<std::uint64_t>(h.origin_lat));
  put_le<std::uint64_t>(buf, std::bit_cast<std::uint64_t>(h.origin_lon));
  buf.reserve(buf.size() + kBandCount * h.cell_count() * 4);
  for (std::size_t b = 0; b < kBandCount; ++b) {
    for (float v : stack.band(b)) put_le<std::uint32_t>(buf, std::bit_cast<std::uint32_t>(v));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, fmt::format("cannot write {}", path.string()));
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw Error(ErrorCode::kIo, fmt::format("write failed for {}", path.string()));
}

GeoGrid aggregate_blocks(const GeoGrid& grid, std::size_t factor, AggregateMode mode) {
  const auto& h = grid.header();
  if (factor == 0) throw Error(ErrorCode::kArgument, "aggregation factor must be positive");
  if (h.n_rows % factor != 0 || h.n_cols % factor != 0) {
    throw Error(ErrorCode::kDimension,
                fmt::format("factor {} does not divide grid {}x{}", factor, h.n_rows, h.n_cols));
  }
  GridHeader out_h = h;
  out_h.n_rows = h.n_rows / factor;
  out_h.n_cols = h.n_cols / factor;
  out_h.cell_size = h.cell_size * static_cast<double>(factor);

  std::vector<double> out(out_h.cell_count());
  for (std::size_t r = 0; r < out_h.n_rows; ++r) {
    for (std::size_t c = 0; c < out_h.n_cols; ++c) {
      double sum = 0.0;
      std::size_t valid = 0;
      for (std::size_t i = 0; i < factor; ++i) {
        for (std::size_t j = 0; j < factor; ++j) {
          const double v = grid.at(r * factor + i, c * factor + j);
          if (grid.is_nodata(v)) continue;
          sum += v;
          ++valid;
        }
      }
      double& dst = out[r * out_h.n_cols + c];
      if (mode == AggregateMode::kSum) {
        dst = sum;
      } else {
        dst = valid ? sum / static_cast<double>(valid) : h.nodata_value;
      }
    }
  }
  return GeoGrid(out_h, std::move(out));
}

GeoGrid combine_ambient(const GeoGrid& day, const GeoGrid& night) {
  if (!coregistered(day.header(), night.header())) {
    throw Error(ErrorCode::kCoregistration, "day and night grids are not co-registered");
  }
  const auto& h = day.header();
  std::vector<double> out(h.cell_count());
  for (std::size_t r = 0; r < h.n_rows; ++r) {
    for (std::size_t c = 0; c < h.n_cols; ++c) {
      const double a = (day.population(r, c) + night.population(r, c)) / 2.0;
      out[r * h.n_cols + c] = a >= 1.0 ? a : 0.0;
    }
  }
  return GeoGrid(h, std::move(out));
}

}  // namespace popgrid
