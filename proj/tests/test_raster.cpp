#include <doctest.h>

#include <cmath>
#include <random>

#include "popgrid/error.hpp"
#include "popgrid/raster.hpp"
#include "test_util.hpp"

using namespace popgrid;
using testutil::TempDir;

namespace {

GridHeader header(std::size_t rows, std::size_t cols, double cell = 30.0) {
  return {rows, cols, cell, 34.0, -84.5, -9999.0};
}

}  // namespace

TEST_CASE("ascii grid parses a 2x2 file row-major") {
  TempDir dir("raster");
  testutil::spit(dir / "g.asc",
                 "ncols 2\nnrows 2\nxllcorner -84.5\nyllcorner 33.9833333333333\ncellsize 0.00833333333333333\n"
                 "NODATA_value -9999\n1 2\n3 4\n");
  const auto g = read_ascii_grid(dir / "g.asc");
  CHECK(g.values() == std::vector<double>{1, 2, 3, 4});
  CHECK(g.header().n_rows == 2);
  CHECK(g.header().cell_size == doctest::Approx(30.0));
  CHECK(g.header().origin_lat == doctest::Approx(34.0));
}

TEST_CASE("ascii grid rejects short rows and malformed headers") {
  TempDir dir("raster");
  testutil::spit(dir / "short.asc",
                 "ncols 3\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 2\n3 4\n");
  CHECK_THROWS_CODE(read_ascii_grid(dir / "short.asc"), ErrorCode::kDimension);

  testutil::spit(dir / "bad.asc", "ncols 2\nnrows x\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 2\n");
  try {
    read_ascii_grid(dir / "bad.asc");
    FAIL("expected a parse error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kParse);
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_CODE(read_ascii_grid(dir / "missing.asc"), ErrorCode::kIo);
}

TEST_CASE("ascii grid writes nodata and single cells verbatim") {
  TempDir dir("raster");
  write_ascii_grid(GeoGrid(header(1, 1), std::vector<double>{0.0}), dir / "one.asc");
  const auto text = testutil::slurp(dir / "one.asc");
  CHECK(text.substr(text.rfind('\n', text.size() - 2) + 1) == "0\n");

  write_ascii_grid(GeoGrid(header(1, 2), std::vector<double>{-9999.0, 5.0}), dir / "nd.asc");
  CHECK(testutil::slurp(dir / "nd.asc").find("-9999 5\n") != std::string::npos);
  const auto back = read_ascii_grid(dir / "nd.asc");
  CHECK(back.is_nodata(back.at(0, 0)));
  CHECK(back.population(0, 0) == 0.0);
}

TEST_CASE("ascii round trip over 100 random grids") {
  TempDir dir("raster");
  std::mt19937_64 gen(1);
  std::uniform_int_distribution<int> dim(1, 50);
  std::uniform_int_distribution<int> count(0, 200000);
  for (int k = 0; k < 100; ++k) {
    GridHeader h = header(static_cast<std::size_t>(dim(gen)), static_cast<std::size_t>(dim(gen)), 3.0 * (k % 7 + 1));
    std::vector<double> v(h.cell_count());
    for (auto& x : v) x = count(gen) / 2.0;  // half-integers print exactly
    const GeoGrid g(h, v);
    write_ascii_grid(g, dir / "rt.asc");
    const auto back = read_ascii_grid(dir / "rt.asc");
    CHECK(coregistered(back.header(), g.header()));
    CHECK(back.values() == g.values());
  }
}

TEST_CASE("ascii round trip of arbitrary reals holds to six significant digits") {
  TempDir dir("raster");
  std::mt19937_64 gen(2);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> v(2500);
  for (auto& x : v) x = unit(gen);
  write_ascii_grid(GeoGrid(header(50, 50), v), dir / "r.asc");
  auto back = read_ascii_grid(dir / "r.asc");
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::fabs(back.values()[i] - v[i]) <= 1e-6);

  std::uniform_real_distribution<double> wide(0.0, 1e5);
  for (auto& x : v) x = wide(gen);
  write_ascii_grid(GeoGrid(header(50, 50), v), dir / "w.asc");
  back = read_ascii_grid(dir / "w.asc");
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::fabs(back.values()[i] - v[i]) <= 5e-6 * v[i]);
}

TEST_CASE("bandstack round trips losslessly") {
  TempDir dir("raster");
  BandStack one(header(1, 1, 3.0));
  for (std::size_t b = 0; b < 4; ++b) one.at(b, 0, 0) = 0.1f * static_cast<float>(b + 1);
  write_bandstack(one, dir / "one.bgrd");
  const auto back = read_bandstack(dir / "one.bgrd");
  for (std::size_t b = 0; b < 4; ++b) CHECK(back.at(b, 0, 0) == 0.1f * static_cast<float>(b + 1));

  std::mt19937_64 gen(3);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  BandStack big(header(128, 128, 3.0));
  for (std::size_t b = 0; b < 4; ++b) {
    for (auto& x : big.band(b)) x = u(gen);
  }
  write_bandstack(big, dir / "a.bgrd");
  write_bandstack(read_bandstack(dir / "a.bgrd"), dir / "b.bgrd");
  CHECK(testutil::slurp(dir / "a.bgrd") == testutil::slurp(dir / "b.bgrd"));
  CHECK(testutil::slurp(dir / "a.bgrd").size() == 4 + 16 + 24 + 4 * 128 * 128 * 4);
}

TEST_CASE("bandstack rejects bad magic and band counts") {
  TempDir dir("raster");
  write_bandstack(BandStack(header(2, 2, 3.0)), dir / "s.bgrd");
  auto bytes = testutil::slurp(dir / "s.bgrd");
  auto bad = bytes;
  bad.replace(0, 4, "XXXX");
  testutil::spit(dir / "magic.bgrd", bad);
  CHECK_THROWS_CODE(read_bandstack(dir / "magic.bgrd"), ErrorCode::kFormat);
  auto three = bytes;
  three[16] = 3;  // n_bands field
  testutil::spit(dir / "three.bgrd", three);
  CHECK_THROWS_CODE(read_bandstack(dir / "three.bgrd"), ErrorCode::kUnsupported);
  testutil::spit(dir / "trunc.bgrd", bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS(read_bandstack(dir / "trunc.bgrd"));
}

TEST_CASE("bandstack rejects non-finite values") {
  std::array<std::vector<float>, 4> bands;
  for (auto& b : bands) b.assign(1, 0.5f);
  bands[2][0] = std::nanf("");
  CHECK_THROWS_CODE(BandStack(header(1, 1), bands), ErrorCode::kDomain);
}

TEST_CASE("aggregate_blocks basic cases") {
  const GeoGrid g(header(2, 2), std::vector<double>{1, 2, 3, 4});
  const auto s = aggregate_blocks(g, 2, AggregateMode::kSum);
  CHECK(s.values() == std::vector<double>{10});
  CHECK(s.header().cell_size == 60.0);
  CHECK(aggregate_blocks(g, 2, AggregateMode::kMean).values() == std::vector<double>{2.5});
  for (auto mode : {AggregateMode::kSum, AggregateMode::kMean}) {
    const auto id = aggregate_blocks(g, 1, mode);
    CHECK(id.values() == g.values());
    CHECK(coregistered(id.header(), g.header()));
  }
  CHECK_THROWS_CODE(aggregate_blocks(GeoGrid(header(3, 4), 0.0), 2, AggregateMode::kSum), ErrorCode::kDimension);
}

TEST_CASE("aggregate_blocks nodata handling") {
  const GeoGrid g(header(2, 4), std::vector<double>{-9999, 2, -9999, -9999, 4, 6, -9999, -9999});
  const auto s = aggregate_blocks(g, 2, AggregateMode::kSum);
  CHECK(s.values() == std::vector<double>{12, 0});
  const auto m = aggregate_blocks(g, 2, AggregateMode::kMean);
  CHECK(m.values()[0] == 4.0);
  CHECK(m.is_nodata(m.values()[1]));
}

TEST_CASE("aggregate_blocks matches a nested-loop oracle") {
  std::mt19937_64 gen(4);
  std::uniform_int_distribution<int> val(0, 50);
  std::uniform_int_distribution<int> coin(0, 5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> v(400);
    for (auto& x : v) x = coin(gen) == 0 ? -9999.0 : val(gen);
    const GeoGrid g(header(20, 20), v);
    const auto s = aggregate_blocks(g, 4, AggregateMode::kSum);
    const auto m = aggregate_blocks(g, 4, AggregateMode::kMean);
    for (std::size_t R = 0; R < 5; ++R) {
      for (std::size_t C = 0; C < 5; ++C) {
        double sum = 0.0;
        int valid = 0;
        for (std::size_t r = 4 * R; r < 4 * R + 4; ++r) {
          for (std::size_t c = 4 * C; c < 4 * C + 4; ++c) {
            if (v[r * 20 + c] != -9999.0) {
              sum += v[r * 20 + c];
              ++valid;
            }
          }
        }
        CHECK(s.at(R, C) == sum);
        if (valid > 0) {
          CHECK(m.at(R, C) == doctest::Approx(sum / valid).epsilon(1e-15));
        } else {
          CHECK(m.is_nodata(m.at(R, C)));
        }
      }
    }
  }
}

TEST_CASE("aggregate_blocks conserves mass and composes") {
  std::mt19937_64 gen(5);
  std::uniform_int_distribution<int> val(0, 1000);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> v(100 * 100);
    double total = 0.0;
    for (auto& x : v) total += (x = val(gen));
    const GeoGrid g(header(100, 100, 3.0), v);
    const auto ten = aggregate_blocks(g, 10, AggregateMode::kSum);
    const auto two_five = aggregate_blocks(aggregate_blocks(g, 2, AggregateMode::kSum), 5, AggregateMode::kSum);
    CHECK(ten.values() == two_five.values());
    CHECK(ten.header().cell_size == doctest::Approx(30.0));
    double out = 0.0;
    for (double x : ten.values()) out += x;
    CHECK(out == total);
  }
}

TEST_CASE("combine_ambient follows the averaging rule") {
  auto one = [](double d, double n) {
    return combine_ambient(GeoGrid(header(1, 1), std::vector<double>{d}), GeoGrid(header(1, 1), std::vector<double>{n}))
        .values()[0];
  };
  CHECK(one(10, 20) == 15);
  CHECK(one(0.8, 0.8) == 0);
  CHECK(one(1, 1) == 1);
  CHECK(one(-9999, 4) == 2);
  CHECK(one(1.5, 0) == 0);  // average 0.75
  CHECK_THROWS_CODE(combine_ambient(GeoGrid(header(1, 1), 1.0), GeoGrid(header(1, 2), 1.0)),
                    ErrorCode::kCoregistration);
  GridHeader shifted = header(1, 1);
  shifted.origin_lon += 0.5;
  CHECK_THROWS_CODE(combine_ambient(GeoGrid(header(1, 1), 1.0), GeoGrid(shifted, 1.0)), ErrorCode::kCoregistration);
}

TEST_CASE("combine_ambient never yields values in (0, 1)") {
  std::mt19937_64 gen(6);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  std::vector<double> d(1000), n(1000);
  for (auto& x : d) x = u(gen);
  for (auto& x : n) x = u(gen);
  const auto a = combine_ambient(GeoGrid(header(10, 100), d), GeoGrid(header(10, 100), n));
  for (double x : a.values()) CHECK((x == 0.0 || x >= 1.0));
}

TEST_CASE("grid header validation") {
  CHECK_THROWS_CODE(GeoGrid(header(0, 3), 0.0), ErrorCode::kDimension);
  CHECK_THROWS_CODE(GeoGrid(header(2, 2, 0.0), 0.0), ErrorCode::kArgument);
  CHECK_THROWS_CODE(GeoGrid(header(2, 2), std::vector<double>{1, 2, 3}), ErrorCode::kDimension);
}
