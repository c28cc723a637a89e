// Command-line front end. Parses flags with CLI11, forwards the explicitly
// given ones to pg_run_stage and maps the returned status to an exit code.
#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "popgrid/popgrid.h"

namespace {

enum Exit { kOk = 0, kStageFailure = 1, kUsage = 2, kIo = 3, kInputData = 4 };

int exit_code(pg_status s) {
  switch (s) {
    case PG_OK: return kOk;
    case PG_ERR_USAGE: return kUsage;
    case PG_ERR_IO: return kIo;
    case PG_ERR_PARSE:
    case PG_ERR_FORMAT:
    case PG_ERR_DIMENSION:
    case PG_ERR_UNSUPPORTED:
    case PG_ERR_COREGISTRATION:
    case PG_ERR_ALIGNMENT: return kInputData;
    default: return kStageFailure;
  }
}

struct Flag {
  const char* name;  // dashed spelling without the leading "--"
  const char* help;
  bool is_switch = false;
};

const std::vector<Flag> kCommon{
    {"config", "TOML config file"},
    {"out", "output directory (output file for render)"},
};

const std::vector<Flag> kNeighbor{
    {"n", "neighbourhood size (odd)"},
    {"edge-policy", "zero_pad | clamp | skip"},
    {"allow-any-n", "accept odd sizes outside 1..11", true},
};

const std::vector<Flag> kModel{
    {"input-size", "model input side in pixels"},
    {"conv-channels", "comma-separated channels per conv block"},
    {"dropout", "dropout rate before the output layer"},
};

const std::vector<Flag> kTrain{
    {"seed", "random seed"},
    {"lr", "Adam learning rate"},
    {"batch-size", "mini-batch size"},
    {"max-steps", "optimiser step budget"},
    {"loss-log-base", "e | 10"},
    {"eval-every", "steps between validation passes"},
    {"patience", "validation passes without improvement before stopping"},
    {"dropout-enabled", "true | false"},
};

std::map<std::string, std::vector<Flag>> stage_flags() {
  auto cat = [](std::initializer_list<std::vector<Flag>> parts) {
    std::vector<Flag> out;
    for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
    return out;
  };
  return {
      {"synth",
       cat({kCommon,
            {{"rows", "population rows"},
             {"cols", "population columns"},
             {"ppc", "imagery pixels per cell side"},
             {"seed", "random seed"},
             {"corr-len", "density correlation length in cells"},
             {"pop-scale", "count of the densest cell"},
             {"confound-fraction", "share of top-quartile cells with hidden extra population"},
             {"confound-multiplier", "population multiplier of confounded cells"},
             {"noise", "pixel noise sd"},
             {"jitter", "day/night split jitter"},
             {"cell-size", "cell size in arc-seconds"}}})},
      {"ingest",
       cat({kCommon,
            {{"day", "daytime population grid (.asc)"},
             {"night", "night-time population grid (.asc)"},
             {"imagery", "band stack to check alignment against"},
             {"aggregate", "block-sum factor applied before combining"}}})},
      {"patchify",
       cat({kCommon, kNeighbor,
            {{"imagery", "band stack (.bgrd)"},
             {"grid", "population grid (.asc)"},
             {"input-size", "resize patches to this side; 0 keeps native size"},
             {"limit", "maximum number of patches to write"}}})},
      {"split", cat({kCommon, kNeighbor, {{"grid", "ambient grid (.asc)"}, {"seed", "split seed"}}})},
      {"train", cat({kCommon, kModel, kTrain, {{"imagery", "band stack"}, {"manifest", "dataset manifest"}}})},
      {"predict",
       cat({kCommon,
            {{"imagery", "band stack"},
             {"manifest", "dataset manifest"},
             {"checkpoint", "trained checkpoint"},
             {"baseline", "mean | bandstat instead of a checkpoint"},
             {"input-size", "model input side for baselines"}}})},
      {"evaluate",
       cat({kCommon, {{"predictions", "predictions.csv"}, {"split", "train | valid | test | all"},
             {"r2-definition", "pearson | identity"}}})},
      {"sweep",
       cat({kCommon, kNeighbor, kModel, kTrain,
            {{"imagery", "band stack"},
             {"grid", "ambient grid"},
             {"split", "split to score (default test)"},
             {"r2-definition", "pearson | identity"}}})},
      {"render",
       cat({kCommon,
            {{"input", "pairs CSV, predictions.csv, .asc grid or manifest"},
             {"kind", "pred_vs_truth | residual_vs_truth | heatmap | histogram"},
             {"value", "truth_lg | pred_lg | residual (heatmap)"},
             {"title", "plot title"},
             {"bin-width", "histogram bin width"}}})},
  };
}

std::string snake(std::string s) {
  std::replace(s.begin(), s.end(), '-', '_');
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Estimate gridded population from multispectral imagery"};
  app.set_version_flag("--version", pg_version());
  app.require_subcommand(1);

  struct Bound {
    CLI::App* sub;
    std::vector<std::pair<std::string, CLI::Option*>> options;
    std::vector<std::pair<std::string, CLI::Option*>> switches;
  };
  std::map<std::string, Bound> bound;
  std::map<std::string, std::string> values;

  for (const auto& [stage, flags] : stage_flags()) {
    Bound b{app.add_subcommand(stage), {}, {}};
    std::vector<std::string> seen;
    for (const auto& f : flags) {
      if (std::find(seen.begin(), seen.end(), f.name) != seen.end()) continue;
      seen.emplace_back(f.name);
      const std::string key = snake(f.name);
      const std::string spelled = std::string("--") + f.name;
      if (f.is_switch) {
        b.switches.emplace_back(key, b.sub->add_flag(spelled, f.help));
      } else {
        b.options.emplace_back(key, b.sub->add_option(spelled, values[stage + "." + key], f.help));
      }
    }
    bound.emplace(stage, std::move(b));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  for (const auto& [stage, b] : bound) {
    if (!b.sub->parsed()) continue;
    nlohmann::json opts = nlohmann::json::object();
    for (const auto& [key, opt] : b.options) {
      if (opt->count() > 0) opts[key] = values[stage + "." + key];
    }
    for (const auto& [key, opt] : b.switches) {
      if (opt->count() > 0) opts[key] = true;
    }
    const pg_status s = pg_run_stage(stage.c_str(), opts.dump().c_str());
    if (s != PG_OK) {
      std::fprintf(stderr, "popgrid %s: %s: %s\n", stage.c_str(), pg_status_string(s), pg_last_error());
    }
    return exit_code(s);
  }
  return kUsage;
}
