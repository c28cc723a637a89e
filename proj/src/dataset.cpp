#include "popgrid/dataset.hpp"

#include <fmt/format.h>

#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "popgrid/error.hpp"
#include "popgrid/rng.hpp"

namespace popgrid {

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kValid: return "valid";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::kTrain;
  if (text == "valid") return Split::kValid;
  if (text == "test") return Split::kTest;
  throw Error(ErrorCode::kParse, fmt::format("unknown split '{}'", text));
}

double log_transform(double count) {
  if (count == 0.0) return 0.0;
  if (!(count >= 1.0) || !std::isfinite(count)) {
    throw Error(ErrorCode::kDomain,
                fmt::format("population {} is neither 0 nor >= 1; ambient combine was skipped?", count));
  }
  return std::log10(count);
}

InverseLog inverse_log_transform(double lg) {
  InverseLog out;
  if (lg < 0.0) {
    out.clamped = true;
    lg = 0.0;
  }
  out.ambiguous = lg == 0.0;
  out.count = std::pow(10.0, lg);
  return out;
}

SplitCounts split_counts(std::size_t total) {
  SplitCounts c;
  c.valid = total / 5;  // floor(0.2 * total)
  c.test = total / 5;
  c.train = total - c.valid - c.test;
  return c;
}

std::vector<Sample> DatasetManifest::of_split(Split split) const {
  std::vector<Sample> out;
  for (const auto& s : samples) {
    if (s.split == split) out.push_back(s);
  }
  return out;
}

std::vector<Split> split_dataset(std::span<const CellId> cells, std::uint64_t seed) {
  std::vector<std::size_t> order(cells.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  shuffle(std::span<std::size_t>(order), rng);

  const SplitCounts counts = split_counts(cells.size());
  std::vector<Split> tags(cells.size(), Split::kTrain);
  for (std::size_t k = 0; k < order.size(); ++k) {
    Split s = Split::kTrain;
    if (k >= counts.train + counts.valid) {
      s = Split::kTest;
    } else if (k >= counts.train) {
      s = Split::kValid;
    }
    tags[order[k]] = s;
  }
  return tags;
}

DatasetManifest build_manifest(const GeoGrid& ambient, std::uint64_t seed, const NeighborSpec& spec) {
  spec.validate();
  const auto& h = ambient.header();
  DatasetManifest m;
  m.seed = seed;
  m.edge_policy = spec.edge_policy;
  m.n_used = spec.n;
  m.cell_size = h.cell_size;

  std::vector<CellId> cells;
  for (std::size_t r = 0; r < h.n_rows; ++r) {
    for (std::size_t c = 0; c < h.n_cols; ++c) {
      if (spec.edge_policy == EdgePolicy::kSkip &&
          !neighborhood_in_bounds(h.n_rows, h.n_cols, {r, c}, spec.n)) {
        continue;
      }
      cells.push_back({r, c});
    }
  }
  if (cells.empty()) {
    throw Error(ErrorCode::kEmptySplit, "no cells survive the edge policy");
  }
  const auto tags = split_dataset(cells, seed);
  m.samples.reserve(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const double count = ambient.population(cells[i].row, cells[i].col);
    m.samples.push_back({cells[i], log_transform(count), count, tags[i]});
  }
  return m;
}

std::vector<HistogramBin> target_histogram(std::span<const double> targets, double bin_width) {
  if (!(bin_width > 0.0)) throw Error(ErrorCode::kArgument, "histogram bin width must be positive");
  if (targets.empty()) return {};
  std::map<long long, std::size_t> counts;
  for (double t : targets) {
    counts[static_cast<long long>(std::floor(t / bin_width))]++;
  }
  std::vector<HistogramBin> bins;
  const long long first = counts.begin()->first;
  const long long last = counts.rbegin()->first;
  for (long long k = first; k <= last; ++k) {
    auto it = counts.find(k);
    bins.push_back({static_cast<double>(k) * bin_width, it == counts.end() ? 0 : it->second});
  }
  return bins;
}

void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["seed"] = m.seed;
  j["n"] = m.n_used;
  j["edge_policy"] = to_string(m.edge_policy);
  j["fractions"] = m.fractions;
  if (m.cell_size > 0.0) j["cell_size"] = m.cell_size;
  auto& samples = j["samples"] = nlohmann::ordered_json::array();
  for (const auto& s : m.samples) {
    samples.push_back({{"row", s.cell.row},
                       {"col", s.cell.col},
                       {"target_lg", s.target_lg},
                       {"split", to_string(s.split)},
                       {"count", s.count}});
  }
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::kIo, fmt::format("cannot write {}", path.string()));
  f << j.dump(1) << '\n';
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::kIo, fmt::format("cannot open {}", path.string()));
  DatasetManifest m;
  try {
    const auto j = nlohmann::json::parse(f);
    m.seed = j.at("seed").get<std::uint64_t>();
    m.n_used = j.at("n").get<std::size_t>();
    m.edge_policy = parse_edge_policy(j.at("edge_policy").get<std::string>());
    m.fractions = j.at("fractions").get<std::array<double, 3>>();
    m.cell_size = j.value("cell_size", 0.0);
    std::set<CellId> seen;
    for (const auto& s : j.at("samples")) {
      Sample sample;
      sample.cell = {s.at("row").get<std::size_t>(), s.at("col").get<std::size_t>()};
      sample.target_lg = s.at("target_lg").get<double>();
      sample.split = parse_split(s.at("split").get<std::string>());
      sample.count = s.value("count", std::pow(10.0, sample.target_lg));
      if (!seen.insert(sample.cell).second) {
        throw Error(ErrorCode::kFormat, fmt::format("{}: cell ({}, {}) listed twice", path.string(),
                                                    sample.cell.row, sample.cell.col));
      }
      m.samples.push_back(sample);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, fmt::format("{}: {}", path.string(), e.what()));
  }
  return m;
}

}  // namespace popgrid
