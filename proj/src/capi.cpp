#include "popgrid/popgrid.h"

#include <exception>
#include <new>
#include <string>

#include <nlohmann/json.hpp>

#include "popgrid/dataset.hpp"
#include "popgrid/error.hpp"
#include "popgrid/estimator.hpp"
#include "popgrid/evalkit.hpp"
#include "popgrid/patchkit.hpp"
#include "popgrid/pipeline.hpp"
#include "popgrid/raster.hpp"

struct pg_grid {
  popgrid::GeoGrid grid;
};

struct pg_stack {
  popgrid::BandStack stack;
};

namespace {

thread_local std::string last_error;

template <typename Fn>
pg_status guarded(Fn&& fn) {
  try {
    last_error.clear();
    fn();
    return PG_OK;
  } catch (const popgrid::Error& e) {
    last_error = e.what();
    return static_cast<pg_status>(e.code());
  } catch (const nlohmann::json::exception& e) {
    last_error = e.what();
    return PG_ERR_USAGE;
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return PG_ERR_INTERNAL;
  } catch (const std::filesystem::filesystem_error& e) {
    last_error = e.what();
    return PG_ERR_IO;
  } catch (const std::exception& e) {
    last_error = e.what();
    return PG_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (p == nullptr) throw popgrid::Error(popgrid::ErrorCode::kArgument, std::string(what) + " is null");
}

pg_grid_header to_c(const popgrid::GridHeader& h) {
  return {h.n_rows, h.n_cols, h.cell_size, h.origin_lat, h.origin_lon, h.nodata_value};
}

}  // namespace

extern "C" {

const char* pg_version(void) { return popgrid::kToolVersion; }

const char* pg_last_error(void) { return last_error.c_str(); }

const char* pg_status_string(pg_status status) {
  if (status == PG_OK) return "ok";
  return popgrid::to_string(static_cast<popgrid::ErrorCode>(status));
}

pg_status pg_run_stage(const char* stage, const char* options_json) {
  return guarded([&] {
    require(stage, "stage");
    nlohmann::json opts = nlohmann::json::object();
    if (options_json != nullptr && *options_json != '\0') opts = nlohmann::json::parse(options_json);
    popgrid::run_stage(stage, opts);
  });
}

pg_status pg_grid_create(const pg_grid_header* header, const double* values, pg_grid** out) {
  return guarded([&] {
    require(header, "header");
    require(out, "out");
    popgrid::GridHeader h{header->n_rows,     header->n_cols,     header->cell_size,
                          header->origin_lat, header->origin_lon, header->nodata_value};
    h.validate();
    std::vector<double> v(h.cell_count(), 0.0);
    if (values != nullptr) v.assign(values, values + h.cell_count());
    *out = new pg_grid{popgrid::GeoGrid(h, std::move(v))};
  });
}

pg_status pg_grid_read_ascii(const char* path, pg_grid** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new pg_grid{popgrid::read_ascii_grid(path)};
  });
}

pg_status pg_grid_write_ascii(const pg_grid* grid, const char* path) {
  return guarded([&] {
    require(grid, "grid");
    require(path, "path");
    popgrid::write_ascii_grid(grid->grid, path);
  });
}

void pg_grid_free(pg_grid* grid) { delete grid; }

pg_status pg_grid_header_get(const pg_grid* grid, pg_grid_header* out) {
  return guarded([&] {
    require(grid, "grid");
    require(out, "out");
    *out = to_c(grid->grid.header());
  });
}

const double* pg_grid_values(const pg_grid* grid) { return grid ? grid->grid.values().data() : nullptr; }

pg_status pg_grid_aggregate(const pg_grid* grid, size_t factor, int mode, pg_grid** out) {
  return guarded([&] {
    require(grid, "grid");
    require(out, "out");
    if (mode != 0 && mode != 1) throw popgrid::Error(popgrid::ErrorCode::kArgument, "mode must be 0 or 1");
    const auto m = mode == 0 ? popgrid::AggregateMode::kSum : popgrid::AggregateMode::kMean;
    *out = new pg_grid{popgrid::aggregate_blocks(grid->grid, factor, m)};
  });
}

pg_status pg_grid_combine_ambient(const pg_grid* day, const pg_grid* night, pg_grid** out) {
  return guarded([&] {
    require(day, "day");
    require(night, "night");
    require(out, "out");
    *out = new pg_grid{popgrid::combine_ambient(day->grid, night->grid)};
  });
}

pg_status pg_stack_read(const char* path, pg_stack** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new pg_stack{popgrid::read_bandstack(path)};
  });
}

pg_status pg_stack_write(const pg_stack* stack, const char* path) {
  return guarded([&] {
    require(stack, "stack");
    require(path, "path");
    popgrid::write_bandstack(stack->stack, path);
  });
}

void pg_stack_free(pg_stack* stack) { delete stack; }

pg_status pg_stack_header_get(const pg_stack* stack, pg_grid_header* out) {
  return guarded([&] {
    require(stack, "stack");
    require(out, "out");
    *out = to_c(stack->stack.header());
  });
}

double pg_info_proportion(size_t n) { return popgrid::info_proportion(n); }

pg_status pg_log_transform(double count, double* out) {
  return guarded([&] {
    require(out, "out");
    *out = popgrid::log_transform(count);
  });
}

pg_status pg_split_counts(size_t total, size_t* train, size_t* valid, size_t* test) {
  return guarded([&] {
    require(train, "train");
    require(valid, "valid");
    require(test, "test");
    const auto c = popgrid::split_counts(total);
    *train = c.train;
    *valid = c.valid;
    *test = c.test;
  });
}

pg_status pg_log_cosh_loss(const double* pred, const double* truth, size_t len, int base, double* out) {
  return guarded([&] {
    require(pred, "pred");
    require(truth, "truth");
    require(out, "out");
    if (base != 10 && base != 0) throw popgrid::Error(popgrid::ErrorCode::kArgument, "base must be 10 or 0");
    *out = popgrid::log_cosh_loss({pred, len}, {truth, len},
                                  base == 10 ? popgrid::LossBase::kTen : popgrid::LossBase::kE);
  });
}

double pg_student_t_p(double t, double dof) {
  try {
    return popgrid::student_t_p(t, dof);
  } catch (const std::exception& e) {
    last_error = e.what();
    return -1.0;
  }
}

pg_status pg_evaluate(const double* truth, const double* pred, size_t len, pg_metrics* out) {
  return guarded([&] {
    require(truth, "truth");
    require(pred, "pred");
    require(out, "out");
    const auto e = popgrid::evaluate({truth, len}, {pred, len});
    pg_metrics m{};
    m.m = e.metrics.m;
    m.has_r_squared = e.metrics.r_squared.has_value();
    m.r_squared = e.metrics.r_squared.value_or(0.0);
    m.has_coe = e.metrics.coe.has_value();
    m.coe = e.metrics.coe.value_or(0.0);
    m.mioa = e.metrics.mioa;
    m.has_bias = e.bias.has_value();
    if (e.bias) {
      m.alpha = e.bias->alpha;
      m.beta = e.bias->beta;
      m.has_pearson = e.bias->pearson_r.has_value();
      m.pearson_r = e.bias->pearson_r.value_or(0.0);
      m.p_value = e.bias->p_value.value_or(1.0);
    }
    *out = m;
  });
}

}  // extern "C"
