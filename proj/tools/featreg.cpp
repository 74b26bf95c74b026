// featreg command line: register, evaluate, sweep, synth, export.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "featreg/fvol.hpp"
#include "featreg/metrics.hpp"
#include "featreg/pipeline.hpp"
#include "featreg/synth.hpp"

namespace fs = std::filesystem;
using namespace featreg;

namespace {

struct ConfigOptions {
  std::string config_file;
  std::map<std::string, std::string> flags;
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "key=value config file; flags override it");
    for (const auto& [key, help] : config_keys())
      options[key] = app->add_option("--" + key, flags[key], help)->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  }

  PipelineConfig resolve() const {
    std::map<std::string, std::string> values;
    if (!config_file.empty()) values = read_config_file(config_file);
    for (const auto& [key, opt] : options)
      if (opt->count() > 0) values[key] = flags.at(key);
    return PipelineConfig::from_map(values);
  }
};

std::vector<Index> parse_d_values(const std::string& text) {
  std::vector<Index> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (const auto dash = item.find('-'); dash != std::string::npos && dash > 0) {
      const Index lo = std::stoll(item.substr(0, dash)), hi = std::stoll(item.substr(dash + 1));
      for (Index d = lo; d <= hi; ++d) out.push_back(d);
    } else {
      out.push_back(std::stoll(item));
    }
  }
  return out;
}

int run_synth(const SynthParams& p, const fs::path& out) {
  const SynthPair pair = make_synthetic_pair(p);
  fs::create_directories(out);
  write_fvol(pair.fixed, out / "fixed.fvol");
  write_fvol(pair.moving, out / "moving.fvol");
  write_fvol(pair.fixed_mask, out / "fixed_mask.fvol");
  write_fvol(pair.moving_mask, out / "moving_mask.fvol");
  write_fvol(to_volume(pair.truth), out / "truth_field.fvol");
  return kExitOk;
}

int run_export(const fs::path& in, const fs::path& stem) {
  const AnyVolume v = read_fvol(in);
  std::visit([&](const auto& vol) { export_raw(vol, stem); }, v);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"featreg: training-free deformable registration of feature volumes"};
  app.require_subcommand(1);

  auto* reg = app.add_subcommand("register", "two-stage registration of one fixed/moving pair");
  ConfigOptions reg_opts;
  reg_opts.attach(reg);

  auto* sweep = app.add_subcommand("sweep", "register once per PCA dimension and tabulate");
  ConfigOptions sweep_opts;
  sweep_opts.attach(sweep);
  std::string d_values;
  int jobs = 1;
  sweep->add_option("--d-values", d_values, "comma list, ranges allowed (e.g. 1-8,12,16)")->required();
  sweep->add_option("--jobs", jobs, "concurrent registrations")->check(CLI::PositiveNumber);

  auto* eval = app.add_subcommand("evaluate", "metrics for already-warped masks");
  std::string fixed_mask, warped_mask, field, moving_mask, eval_out;
  int lesion_label = kLesionLabel;
  eval->add_option("--fixed-mask", fixed_mask)->required();
  eval->add_option("--warped-mask", warped_mask)->required();
  eval->add_option("--field", field, "dense displacement FVOL for Jacobian statistics");
  eval->add_option("--moving-mask", moving_mask, "original moving mask for the lesion volume error");
  eval->add_option("--lesion-label", lesion_label)->check(CLI::Range(1, 255));
  eval->add_option("--out", eval_out, "report path (.csv or .json)")->required();

  auto* synth = app.add_subcommand("synth", "write a synthetic phantom pair with known ground truth");
  SynthParams sp;
  std::string mode = "warp", shift = "4,-2,2", synth_out;
  synth->add_option("--size", sp.size)->check(CLI::Range(8, 1024));
  synth->add_option("--channels", sp.channels)->check(CLI::PositiveNumber);
  synth->add_option("--seed", sp.seed);
  synth->add_option("--mode", mode)->check(CLI::IsMember({"warp", "translate", "identical"}));
  synth->add_option("--max-disp", sp.max_displacement);
  synth->add_option("--shift", shift, "translate mode shift x,y,z");
  synth->add_option("--blobs", sp.blobs)->check(CLI::PositiveNumber);
  synth->add_option("--out", synth_out)->required();

  auto* exp = app.add_subcommand("export", "write any FVOL as raw little-endian data plus a text sidecar");
  std::string export_in, export_stem;
  exp->add_option("--in", export_in)->required();
  exp->add_option("--out", export_stem, "output stem; writes <stem>.raw and <stem>.txt")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*reg) return cmd_register(reg_opts.resolve(), std::cerr);
    if (*sweep) return cmd_sweep(sweep_opts.resolve(), parse_d_values(d_values), jobs, std::cerr);
    if (*eval) return cmd_evaluate(fixed_mask, warped_mask, field, moving_mask, lesion_label, eval_out, std::cerr);
    if (*synth) {
      sp.mode = mode == "warp" ? SynthMode::Warp : (mode == "translate" ? SynthMode::Translate : SynthMode::Identical);
      std::stringstream ss(shift);
      std::string item;
      for (int i = 0; i < 3 && std::getline(ss, item, ','); ++i) sp.shift(i) = std::stoi(item);
      return run_synth(sp, synth_out);
    }
    if (*exp) return run_export(export_in, export_stem);
  } catch (const Error& e) {
    std::cerr << "featreg: " << e.what() << "\n";
    return e.code() == ErrorCode::NumericFailure ? kExitNumeric : kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "featreg: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
