#include "popgrid/pipeline.hpp"

#include <fmt/format.h>
#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

#include "popgrid/config.hpp"
#include "popgrid/dataset.hpp"
#include "popgrid/error.hpp"
#include "popgrid/estimator.hpp"
#include "popgrid/evalkit.hpp"
#include "popgrid/patchkit.hpp"
#include "popgrid/raster.hpp"
#include "popgrid/render.hpp"
#include "popgrid/synthgen.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace popgrid {

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Merged view over command-line flags, the config file and defaults. Every
// lookup is echoed into `effective` for the run manifest.
class Options {
 public:
  Options(std::string stage, const json& flags) : stage_(std::move(stage)), flags_(flags) {
    if (!flags_.is_object()) throw Error(ErrorCode::kUsage, "stage options must be a JSON object");
    if (flags_.contains("config")) {
      config_path_ = flags_.at("config").get<std::string>();
      const json cfg = load_config(config_path_);
      for (const auto& [k, v] : cfg.items()) {
        if (v.is_object()) {
          if (k == stage_) table_ = v;
        } else {
          top_[k] = v;
        }
      }
      effective_["config"] = config_path_.string();
    }
  }

  const json* find(const std::string& key) const {
    for (const json* src : {&flags_, &table_, &top_}) {
      if (src->is_object()) {
        auto it = src->find(key);
        if (it != src->end()) return &*it;
      }
    }
    return nullptr;
  }

  bool has(const std::string& key) const { return find(key) != nullptr; }

  template <typename T>
  T get(const std::string& key, T fallback) {
    const json* v = find(key);
    T out = v ? convert<T>(key, *v) : std::move(fallback);
    effective_[key] = out;
    return out;
  }

  template <typename T>
  T require(const std::string& key) {
    const json* v = find(key);
    if (!v) throw Error(ErrorCode::kUsage, fmt::format("{}: missing required option '{}'", stage_, key));
    T out = convert<T>(key, *v);
    effective_[key] = out;
    return out;
  }

  fs::path input(const std::string& key) {
    fs::path p = require<std::string>(key);
    if (!fs::exists(p)) {
      throw Error(ErrorCode::kIo, fmt::format("{}: input '{}' not found: {}", stage_, key, p.string()));
    }
    inputs_[key] = p;
    return p;
  }

  fs::path out_dir() {
    fs::path p = require<std::string>("out");
    fs::create_directories(p);
    return p;
  }

  // Integer list from "1,3,5", a single integer, or an array.
  std::vector<std::size_t> sizes(const std::string& key, std::vector<std::size_t> fallback) {
    const json* v = find(key);
    std::vector<std::size_t> out = std::move(fallback);
    if (v) {
      out.clear();
      if (v->is_array()) {
        for (const auto& e : *v) out.push_back(convert<std::size_t>(key, e));
      } else if (v->is_number_integer()) {
        out.push_back(convert<std::size_t>(key, *v));
      } else if (v->is_string()) {
        std::stringstream ss(v->get<std::string>());
        std::string tok;
        while (std::getline(ss, tok, ',')) {
          try {
            std::size_t used = 0;
            const long long x = std::stoll(tok, &used);
            if (used != tok.size() || x < 0) throw std::invalid_argument(tok);
            out.push_back(static_cast<std::size_t>(x));
          } catch (const std::exception&) {
            throw Error(ErrorCode::kUsage, fmt::format("{}: bad integer '{}' in '{}'", stage_, tok, key));
          }
        }
      } else {
        throw Error(ErrorCode::kUsage, fmt::format("{}: option '{}' must be an integer list", stage_, key));
      }
      if (out.empty()) throw Error(ErrorCode::kUsage, fmt::format("{}: '{}' is empty", stage_, key));
    }
    effective_[key] = out;
    return out;
  }

  const std::string& stage() const { return stage_; }
  const json& effective() const { return effective_; }
  const std::map<std::string, fs::path>& inputs() const { return inputs_; }
  const fs::path& config_path() const { return config_path_; }

 private:
  template <typename T>
  T convert(const std::string& key, const json& v) const {
    try {
      if constexpr (std::is_same_v<T, std::string>) {
        if (v.is_string()) return v.get<std::string>();
        if (v.is_number_integer()) return std::to_string(v.get<long long>());
        return v.dump();
      } else if constexpr (std::is_same_v<T, bool>) {
        if (v.is_string()) {
          const auto s = v.get<std::string>();
          if (s == "true" || s == "1") return true;
          if (s == "false" || s == "0") return false;
          throw Error(ErrorCode::kUsage, fmt::format("{}: '{}' must be true or false", stage_, key));
        }
        return v.get<bool>();
      } else if constexpr (std::is_integral_v<T>) {
        if (v.is_string()) {
          const auto s = v.get<std::string>();
          std::size_t used = 0;
          const long long x = std::stoll(s, &used);
          if (used != s.size() || (x < 0 && std::is_unsigned_v<T>)) throw std::invalid_argument(s);
          return static_cast<T>(x);
        }
        if (v.is_number_integer() && v.get<long long>() < 0 && std::is_unsigned_v<T>) {
          throw Error(ErrorCode::kUsage, fmt::format("{}: '{}' must be non-negative", stage_, key));
        }
        if (!v.is_number_integer()) throw std::invalid_argument("not an integer");
        return v.get<T>();
      } else {
        if (v.is_string()) {
          const auto s = v.get<std::string>();
          std::size_t used = 0;
          const double x = std::stod(s, &used);
          if (used != s.size()) throw std::invalid_argument(s);
          return static_cast<T>(x);
        }
        return v.get<T>();
      }
    } catch (const Error&) {
      throw;
    } catch (const std::exception&) {
      throw Error(ErrorCode::kUsage, fmt::format("{}: option '{}' has the wrong type ({})", stage_, key, v.dump()));
    }
  }

  std::string stage_;
  json flags_;
  json table_ = json::object();
  json top_ = json::object();
  json effective_ = json::object();
  std::map<std::string, fs::path> inputs_;
  fs::path config_path_;
};

void write_run_manifest(const Options& opt, const fs::path& out_dir, const std::vector<fs::path>& outputs,
                        const std::string& started) {
  ordered_json j;
  j["tool"] = "popgrid";
  j["version"] = kToolVersion;
  j["stage"] = opt.stage();
  j["config"] = opt.effective();
  auto& in = j["inputs"] = ordered_json::object();
  for (const auto& [k, p] : opt.inputs()) {
    in[k] = {{"path", p.string()}, {"sha256", fs::is_regular_file(p) ? file_sha256(p) : ""}};
  }
  if (!opt.config_path().empty()) {
    in["config"] = {{"path", opt.config_path().string()}, {"sha256", file_sha256(opt.config_path())}};
  }
  auto& out = j["outputs"] = ordered_json::object();
  std::vector<fs::path> sorted = outputs;
  std::sort(sorted.begin(), sorted.end());
  for (const auto& p : sorted) out[fs::relative(p, out_dir).generic_string()] = file_sha256(p);
  j["started_utc"] = started;
  j["finished_utc"] = utc_now();
  std::ofstream f(out_dir / (opt.stage() + ".run.json"));
  if (!f) throw Error(ErrorCode::kIo, fmt::format("cannot write run manifest in {}", out_dir.string()));
  f << j.dump(2) << '\n';
}

ModelConfig model_options(Options& opt) {
  ModelConfig m;
  m.input_size = opt.get<std::size_t>("input_size", m.input_size);
  m.conv_channels = opt.sizes("conv_channels", m.conv_channels);
  m.dropout = opt.get<double>("dropout", m.dropout);
  m.validate();
  return m;
}

TrainConfig train_options(Options& opt, std::uint64_t seed) {
  TrainConfig t;
  t.learning_rate = opt.get<double>("lr", t.learning_rate);
  t.batch_size = opt.get<std::size_t>("batch_size", t.batch_size);
  t.max_steps = opt.get<std::size_t>("max_steps", t.max_steps);
  t.dropout_enabled = opt.get<bool>("dropout_enabled", t.dropout_enabled);
  t.loss_base = parse_loss_base(opt.get<std::string>("loss_log_base", to_string(t.loss_base)));
  t.eval_every = opt.get<std::size_t>("eval_every", t.eval_every);
  t.patience = opt.get<std::size_t>("patience", t.patience);
  t.seed = seed;
  t.validate();
  return t;
}

NeighborSpec neighbor_options(Options& opt, std::size_t n) {
  NeighborSpec spec;
  spec.n = n;
  spec.edge_policy = parse_edge_policy(opt.get<std::string>("edge_policy", to_string(spec.edge_policy)));
  spec.allow_any_size = opt.get<bool>("allow_any_n", false);
  spec.validate();
  return spec;
}

// Imagery must cover the population lattice exactly and share its origin.
void check_alignment(const BandStack& stack, const GridHeader& grid) {
  const auto [rows, cols] = cell_lattice(stack, grid.cell_size);
  const auto& s = stack.header();
  const double tol = 1e-9 * std::max({1.0, std::fabs(grid.origin_lat), std::fabs(grid.origin_lon)});
  if (rows != grid.n_rows || cols != grid.n_cols || std::fabs(s.origin_lat - grid.origin_lat) > tol ||
      std::fabs(s.origin_lon - grid.origin_lon) > tol) {
    throw Error(ErrorCode::kAlignment,
                fmt::format("imagery covers a {}x{} cell lattice at ({}, {}) but the grid is {}x{} at ({}, {})",
                            rows, cols, s.origin_lat, s.origin_lon, grid.n_rows, grid.n_cols,
                            grid.origin_lat, grid.origin_lon));
  }
}

void write_loss_curves(const TrainResult& r, const fs::path& dir, std::vector<fs::path>& outputs) {
  std::string loss = "step,loss\n";
  for (std::size_t i = 0; i < r.loss_curve.size(); ++i) loss += fmt::format("{},{:.9g}\n", i + 1, r.loss_curve[i]);
  write_text(dir / "loss_curve.csv", loss);
  std::string val = "step,valid_loss\n";
  for (const auto& p : r.validation) val += fmt::format("{},{:.9g}\n", p.step, p.loss);
  write_text(dir / "validation_curve.csv", val);
  outputs.push_back(dir / "loss_curve.csv");
  outputs.push_back(dir / "validation_curve.csv");
}

std::string train_summary(const TrainResult& r, const TrainConfig& t) {
  ordered_json j;
  j["steps_run"] = r.loss_curve.size();
  j["best_step"] = r.best_step;
  j["early_stopped"] = r.early_stopped;
  j["best_valid_loss"] = r.validation.empty() ? json(nullptr) : json(std::min_element(
      r.validation.begin(), r.validation.end(),
      [](const auto& a, const auto& b) { return a.loss < b.loss; })->loss);
  j["learning_rate"] = t.learning_rate;
  j["batch_size"] = t.batch_size;
  j["loss_log_base"] = to_string(t.loss_base);
  j["seed"] = t.seed;
  return j.dump(2) + "\n";
}

ValidationCallback progress(std::string label) {
  return [label = std::move(label)](const ValidationPoint& p) {
    std::cerr << fmt::format("[{}] step {} valid_loss {:.6f}\n", label, p.step, p.loss);
  };
}

void write_metrics(const Evaluation& e, const fs::path& path) { write_text(path, report_json(e) + "\n"); }

std::optional<Split> split_option(Options& opt) {
  const auto text = opt.get<std::string>("split", "test");
  if (text == "all") return std::nullopt;
  try {
    return parse_split(text);
  } catch (const Error&) {
    throw Error(ErrorCode::kUsage, fmt::format("split must be train, valid, test or all, got '{}'", text));
  }
}

R2Definition r2_option(Options& opt) { return parse_r2_definition(opt.get<std::string>("r2_definition", "pearson")); }

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

void stage_synth(Options& opt, std::vector<fs::path>& outputs, fs::path& out) {
  SceneSpec s;
  s.n_rows = opt.get<std::size_t>("rows", s.n_rows);
  s.n_cols = opt.get<std::size_t>("cols", s.n_cols);
  s.pixels_per_cell = opt.get<std::size_t>("ppc", s.pixels_per_cell);
  s.seed = opt.get<std::uint64_t>("seed", s.seed);
  s.correlation_length = opt.get<double>("corr_len", s.correlation_length);
  s.pop_scale = opt.get<double>("pop_scale", s.pop_scale);
  s.confound_fraction = opt.get<double>("confound_fraction", s.confound_fraction);
  s.confound_multiplier = opt.get<double>("confound_multiplier", s.confound_multiplier);
  s.pixel_noise_sd = opt.get<double>("noise", s.pixel_noise_sd);
  s.day_night_jitter = opt.get<double>("jitter", s.day_night_jitter);
  s.cell_size = opt.get<double>("cell_size", s.cell_size);
  out = opt.out_dir();
  const Scene scene = generate_scene(s);
  write_scene(scene, out);
  for (const char* name : {"imagery.bgrd", "day.asc", "night.asc", "scene_truth.json"}) outputs.push_back(out / name);
}

void stage_ingest(Options& opt, std::vector<fs::path>& outputs, fs::path& out) {
  const auto day_path = opt.input("day");
  const auto night_path = opt.input("night");
  const auto factor = opt.get<std::size_t>("aggregate", 1);
  std::optional<fs::path> imagery;
  if (opt.has("imagery")) imagery = opt.input("imagery");
  out = opt.out_dir();

  GeoGrid day = read_ascii_grid(day_path);
  GeoGrid night = read_ascii_grid(night_path);
  if (factor > 1) {
    day = aggregate_blocks(day, factor, AggregateMode::kSum);
    night = aggregate_blocks(night, factor, AggregateMode::kSum);
  }
  const GeoGrid ambient = combine_ambient(day, night);
  if (imagery) check_alignment(read_bandstack(*imagery), ambient.header());
  write_ascii_grid(ambient, out / "ambient.asc");
  outputs.push_back(out / "ambient.asc");
}

void stage_patchify(Options& opt, std::vector<fs::path>& outputs, fs::path& out) {
  const auto stack = read_bandstack(opt.input("imagery"));
  const auto grid = read_ascii_grid(opt.input("grid"));
  const auto spec = neighbor_options(opt, opt.get<std::size_t>("n", 1));
  const auto limit = opt.get<std::size_t>("limit", 0);
  const auto input_size = opt.get<std::size_t>("input_size", 0);
  out = opt.out_dir();
  check_alignment(stack, grid.header());
  const auto& h = grid.header();
  const fs::path dir = out / "patches";
  fs::create_directories(dir);
  std::size_t written = 0;
  for (std::size_t r = 0; r < h.n_rows; ++r) {
    for (std::size_t c = 0; c < h.n_cols; ++c) {
      if (limit != 0 && written == limit) return;
      if (spec.edge_policy == EdgePolicy::kSkip && !neighborhood_in_bounds(h.n_rows, h.n_cols, {r, c}, spec.n)) {
        continue;
      }
      PatchTensor p = assemble_neighborhood(stack, {r, c}, spec, h.cell_size);
      if (input_size != 0) p = resize_bilinear(p, input_size);
      const fs::path path = dir / patch_dump_name({r, c}, spec.n);
      write_patch(p, stack.header(), path.string());
      outputs.push_back(path);
      ++written;
    }
  }
}

void stage_split(Options& opt, std::vector<fs::path>& outputs, fs::path& out) {
  const auto grid = read_ascii_grid(opt.input("grid"));
  const auto seed = opt.get<std::uint64_t>("seed", 0);
  const auto spec = neighbor_options(opt, opt.get<std::size_t>("n", 1));
  out = opt.out_dir();
  const auto manifest = build_manifest(grid, seed, spec);
  write_manifest(manifest, out / "manifest.json");

  std::vector<double> targets;
  for (const auto& s : manifest.samples) targets.push_back(s.target_lg);
  constexpr double kWidth = 0.25;
  const auto bins = target_histogram(targets, kWidth);
  std::string csv = "bin_start,count\n";
  for (const auto& b : bins) csv += fmt::format("{},{}\n", b.start, b.count);
  write_text(out / "target_histogram.csv", csv);
  write_text(out / "target_histogram.svg", render_histogram_svg(bins, kWidth, "log10 population per cell"));
  for (const char* name : {"manifest.json", "target_histogram.csv", "target_histogram.svg"}) {
    outputs.push_back(out / name);
  }
}

void stage_train(Options& opt, std::vector<fs::path>& outputs, fs::path& out) {
  const auto stack = read_bandstack(opt.input("imagery"));
  const auto manifest = read_manifest(opt.input("manifest"));
  const auto model = model_options(opt);
  const auto cfg = train_options(opt, opt.get<std::uint64_t>("seed", 0));
  out = opt.out_dir();
  if (!(manifest.cell_size > 0.0)) throw Error(ErrorCode::kFormat, "manifest lacks the lattice cell_size");
  NeighborSpec spec{manifest.n_used, manifest.edge_policy, true};
  PatchSource source(stack, manifest.cell_size, spec, model.input_size);
  const auto result = train(model, manifest, std::cref(source), cfg, progress("train"));
  write_checkpoint(model, result.params, out / "checkpoint.pgck");
  outputs.push_back(out / "checkpoint.pgck");
  write_loss_curves(result, out, outputs);
  write_text(out / "train_summary.json", train_summary(result, cfg));
  outputs.push_back(out / "train_summary.json");
}

void stage_predict(Options& opt, std::vector<fs::path>& outputs, fs::path& out) {
  const auto stack = read_bandstack(opt.input("imagery"));
  const auto manifest = read_manifest(opt.input("manifest"));
  const auto baseline = opt.get<std::string>("baseline", "");
  std::optional<fs::path> ckpt;
  if (baseline.empty()) ckpt = opt.input("checkpoint");
  out = opt.out_dir();
  if (!(manifest.cell_size > 0.0)) throw Error(ErrorCode::kFormat, "manifest lacks the lattice cell_size");
  NeighborSpec spec{manifest.n_used, manifest.edge_policy, true};

  std::unique_ptr<Estimator> est;
  std::size_t input_size = 0;
  if (ckpt) {
    auto [model, params] = read_checkpoint(*ckpt);
    input_size = model.input_size;
    est = std::make_unique<ReferenceNet>(model, std::move(params));
  } else {
    input_size = opt.get<std::size_t>("input_size", ModelConfig{}.input_size);
  }
  PatchSource source(stack, manifest.cell_size, spec, input_size);
  if (!ckpt) {
    if (baseline == "mean") {
      est = std::make_unique<MeanBaseline>(manifest);
    } else if (baseline == "bandstat") {
      est = std::make_unique<BandStatBaseline>(manifest, std::cref(source));
    } else {
      throw Error(ErrorCode::kUsage, fmt::format("baseline must be mean or bandstat, got '{}'", baseline));
    }
  }
  const auto rows = predict_table(*est, manifest, std::cref(source));
  write_predictions(rows, out / "predictions.csv");
  outputs.push_back(out / "predictions.csv");
}

void stage_evaluate(Options& opt, std::vector<fs::path>& outputs, fs::path& out) {
  const auto rows = read_predictions(opt.input("predictions"));
  const auto split = split_option(opt);
  const auto r2_def = r2_option(opt);
  out = opt.out_dir();
  write_metrics(evaluate_all(rows, split, r2_def), out / "metrics.json");
  write_scatter_csvs(rows, split, out / "scatter_pred.csv", out / "scatter_resid.csv");
  for (const char* name : {"metrics.json", "scatter_pred.csv", "scatter_resid.csv"}) outputs.push_back(out / name);
}

void stage_render(Options& opt, std::vector<fs::path>& outputs, fs::path& out) {
  const auto input = opt.input("input");
  const auto kind = opt.require<std::string>("kind");
  const fs::path target = opt.require<std::string>("out");
  const auto title = opt.get<std::string>("title", "");
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  out = target.has_parent_path() ? target.parent_path() : fs::path(".");

  std::string body;
  if (kind == "pred_vs_truth" || kind == "residual_vs_truth") {
    body = render_scatter_svg(read_pairs_csv(input), parse_scatter_kind(kind), title);
  } else if (kind == "heatmap") {
    const bool is_grid = input.extension() == ".asc";
    const auto value = parse_heat_value(opt.get<std::string>("value", is_grid ? "truth_lg" : "residual"));
    HeatGrid grid;
    if (is_grid) {
      if (value != HeatValue::kTruth) {
        throw Error(ErrorCode::kUsage, "a population grid can only be rendered as truth_lg");
      }
      grid = heat_from_grid(read_ascii_grid(input));
    } else {
      grid = heat_from_predictions(read_predictions(input), value);
    }
    body = target.extension() == ".pgm" ? render_heatmap_pgm(grid, value) : render_heatmap_svg(grid, value, title);
  } else if (kind == "histogram") {
    const auto width = opt.get<double>("bin_width", 0.25);
    const auto m = read_manifest(input);
    std::vector<double> t;
    for (const auto& s : m.samples) t.push_back(s.target_lg);
    body = render_histogram_svg(target_histogram(t, width), width, title);
  } else {
    throw Error(ErrorCode::kUsage,
                fmt::format("render kind must be pred_vs_truth, residual_vs_truth, heatmap or histogram, got '{}'",
                            kind));
  }
  write_text(target, body);
  outputs.push_back(target);
}

void stage_sweep(Options& opt, std::vector<fs::path>& outputs, fs::path& out) {
  const auto stack = read_bandstack(opt.input("imagery"));
  const auto grid = read_ascii_grid(opt.input("grid"));
  const auto sizes_raw = opt.sizes("n", {1, 3, 5, 7, 9, 11});
  const auto seed = opt.get<std::uint64_t>("seed", 0);
  const auto model = model_options(opt);
  const auto base_cfg = train_options(opt, seed);
  const auto split = split_option(opt);
  const auto r2_def = r2_option(opt);
  out = opt.out_dir();
  check_alignment(stack, grid.header());

  std::vector<std::size_t> sizes = sizes_raw;
  std::sort(sizes.begin(), sizes.end());
  if (std::adjacent_find(sizes.begin(), sizes.end()) != sizes.end()) {
    throw Error(ErrorCode::kUsage, "sweep sizes must be distinct");
  }
  std::vector<NeighborSpec> specs;
  for (auto n : sizes) specs.push_back(neighbor_options(opt, n));

  ordered_json rows = ordered_json::array();
  std::string csv = "n,info_proportion,m,r_squared,coe,mioa,alpha,beta,pearson_r,p_value\n";
  auto num = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  auto cell = [](const std::optional<double>& v) { return v ? fmt::format("{:.9g}", *v) : std::string(); };

  for (const auto& spec : specs) {
    const std::size_t n = spec.n;
    const fs::path dir = out / fmt::format("n{}", n);
    fs::create_directories(dir);
    const auto manifest = build_manifest(grid, seed, spec);
    write_manifest(manifest, dir / "manifest.json");
    outputs.push_back(dir / "manifest.json");

    PatchSource source(stack, manifest.cell_size, spec, model.input_size);
    TrainConfig cfg = base_cfg;
    cfg.seed = seed ^ static_cast<std::uint64_t>(n);
    const auto result = train(model, manifest, std::cref(source), cfg, progress(fmt::format("sweep n={}", n)));
    write_checkpoint(model, result.params, dir / "checkpoint.pgck");
    outputs.push_back(dir / "checkpoint.pgck");
    write_loss_curves(result, dir, outputs);
    write_text(dir / "train_summary.json", train_summary(result, cfg));
    outputs.push_back(dir / "train_summary.json");

    const ReferenceNet net(model, result.params);
    const auto table = predict_table(net, manifest, std::cref(source));
    write_predictions(table, dir / "predictions.csv");
    const auto eval = evaluate_all(table, split, r2_def);
    write_metrics(eval, dir / "metrics.json");
    write_scatter_csvs(table, split, dir / "scatter_pred.csv", dir / "scatter_resid.csv");
    write_text(dir / "scatter_pred.svg", render_scatter_svg(read_pairs_csv(dir / "scatter_pred.csv"),
                                                            ScatterKind::kPredVsTruth, fmt::format("nbr({})", n)));
    write_text(dir / "scatter_resid.svg",
               render_scatter_svg(read_pairs_csv(dir / "scatter_resid.csv"), ScatterKind::kResidualVsTruth,
                                  fmt::format("nbr({}) residuals", n)));
    write_text(dir / "heatmap_residual.svg",
               render_heatmap_svg(heat_from_predictions(table, HeatValue::kResidual), HeatValue::kResidual,
                                  fmt::format("nbr({}) residual", n)));
    for (const char* name : {"predictions.csv", "metrics.json", "scatter_pred.csv", "scatter_resid.csv",
                             "scatter_pred.svg", "scatter_resid.svg", "heatmap_residual.svg"}) {
      outputs.push_back(dir / name);
    }

    const auto& m = eval.metrics;
    const std::optional<BiasReport>& b = eval.bias;
    ordered_json row;
    row["n"] = n;
    row["info_proportion"] = info_proportion(n);
    row["m"] = m.m;
    row["r_squared"] = num(m.r_squared);
    row["coe"] = num(m.coe);
    row["mioa"] = m.mioa;
    row["alpha"] = b ? json(b->alpha) : json(nullptr);
    row["beta"] = b ? json(b->beta) : json(nullptr);
    row["pearson_r"] = b ? num(b->pearson_r) : json(nullptr);
    row["p_value"] = b ? num(b->p_value) : json(nullptr);
    rows.push_back(row);
    csv += fmt::format("{},{:.9g},{},{},{},{:.9g},{},{},{},{}\n", n, info_proportion(n), m.m, cell(m.r_squared),
                       cell(m.coe), m.mioa, b ? cell(b->alpha) : "", b ? cell(b->beta) : "",
                       b ? cell(b->pearson_r) : "", b ? cell(b->p_value) : "");
  }

  ordered_json cmp;
  cmp["split"] = split ? to_string(*split) : "all";
  cmp["rows"] = rows;
  write_text(out / "comparison.json", cmp.dump(2) + "\n");
  write_text(out / "comparison.csv", csv);
  outputs.push_back(out / "comparison.json");
  outputs.push_back(out / "comparison.csv");
}

using StageFn = void (*)(Options&, std::vector<fs::path>&, fs::path&);

const std::map<std::string, StageFn, std::less<>>& stage_table() {
  static const std::map<std::string, StageFn, std::less<>> table{
      {"synth", stage_synth},       {"ingest", stage_ingest},     {"patchify", stage_patchify},
      {"split", stage_split},       {"train", stage_train},       {"predict", stage_predict},
      {"evaluate", stage_evaluate}, {"sweep", stage_sweep},       {"render", stage_render},
  };
  return table;
}

}  // namespace

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"synth",   "ingest",   "patchify", "split", "train",
                                              "predict", "evaluate", "sweep",    "render"};
  return names;
}

void run_stage(std::string_view stage, const json& flags) {
  const auto& table = stage_table();
  auto it = table.find(stage);
  if (it == table.end()) throw Error(ErrorCode::kUsage, fmt::format("unknown stage '{}'", stage));
  const std::string started = utc_now();
  Options opt(std::string(stage), flags);
  std::vector<fs::path> outputs;
  fs::path out;
  it->second(opt, outputs, out);
  write_run_manifest(opt, out, outputs, started);
}

std::string file_sha256(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, fmt::format("cannot open {} for hashing", path.string()));
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::kInternal, "SHA-256 context setup failed");
  }
  std::vector<char> buf(1 << 16);
  while (f) {
    f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (f.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(f.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

}  // namespace popgrid
