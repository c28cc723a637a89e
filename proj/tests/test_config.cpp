#include <doctest.h>

#include <string>

#include "popgrid/config.hpp"
#include "popgrid/error.hpp"
#include "test_util.hpp"

using namespace popgrid;

namespace {

std::string parse_error(std::string_view text) {
  try {
    parse_config(text);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kParse);
    return e.what();
  }
  FAIL("expected a parse error");
  return {};
}

}  // namespace

TEST_CASE("config values and tables") {
  const auto j = parse_config(R"(# run settings
seed = 7
lr = 1e-3   # trailing comment
name = "scene \"a\"\tb"
dropout_enabled = false
n = [1, 3, 5,]
nested = [[1, 2], []]
big = 1_000

[train]
max-steps = 500
neg = -0.25
)");
  CHECK(j["seed"] == 7);
  CHECK(j["seed"].is_number_integer());
  CHECK(j["lr"].get<double>() == doctest::Approx(1e-3));
  CHECK(j["name"] == "scene \"a\"\tb");
  CHECK(j["dropout_enabled"] == false);
  CHECK(j["n"] == nlohmann::json::array({1, 3, 5}));
  CHECK(j["nested"][0] == nlohmann::json::array({1, 2}));
  CHECK(j["nested"][1].empty());
  CHECK(j["big"] == 1000);
  CHECK(j["train"]["max-steps"] == 500);
  CHECK(j["train"]["neg"].get<double>() == -0.25);
  CHECK_FALSE(j["train"].contains("seed"));
}

TEST_CASE("empty and comment-only configs") {
  CHECK(parse_config("").empty());
  CHECK(parse_config("\n   # nothing\n\t\n").empty());
}

TEST_CASE("config errors name the line") {
  CHECK(parse_error("a = 1\na = 2\n").find("line 2") != std::string::npos);
  CHECK(parse_error("[t]\nx = 1\n[t]\n").find("line 3") != std::string::npos);
  CHECK(parse_error("a = \"open\n").find("line 1") != std::string::npos);
  CHECK(parse_error("\n\nkey value\n").find("line 3") != std::string::npos);
  CHECK(parse_error("x = 1 2\n").find("trailing") != std::string::npos);
  CHECK(parse_error("x = [1, 2\n").find("line 1") != std::string::npos);
  CHECK(parse_error("x = 1.2.3\n").find("invalid value") != std::string::npos);
  CHECK(parse_error("[bad name]\n").find("line 1") != std::string::npos);
  CHECK(parse_error("x = \"\\q\"\n").find("escape") != std::string::npos);
}

TEST_CASE("load_config reports missing files as I/O errors") {
  testutil::TempDir dir("config");
  CHECK_THROWS_CODE(load_config(dir / "absent.toml"), ErrorCode::kIo);
  testutil::spit(dir / "run.toml", "seed = 3\n[sweep]\nn = [1, 3]\n");
  const auto j = load_config(dir / "run.toml");
  CHECK(j["sweep"]["n"].size() == 2);
}
