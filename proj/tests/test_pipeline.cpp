#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "featreg/error.hpp"
#include "featreg/fvol.hpp"
#include "featreg/pipeline.hpp"
#include "featreg/synth.hpp"

using namespace featreg;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "featreg_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::size_t line_count(const std::string& s) { return std::size_t(std::count(s.begin(), s.end(), '\n')); }

PipelineConfig write_pair(const fs::path& dir, SynthParams sp) {
  const SynthPair pair = make_synthetic_pair(sp);
  write_fvol(pair.fixed, dir / "fixed.fvol");
  write_fvol(pair.moving, dir / "moving.fvol");
  write_fvol(pair.fixed_mask, dir / "fixed_mask.fvol");
  write_fvol(pair.moving_mask, dir / "moving_mask.fvol");
  PipelineConfig cfg;
  cfg.fixed = dir / "fixed.fvol";
  cfg.moving = dir / "moving.fvol";
  cfg.fixed_mask = dir / "fixed_mask.fvol";
  cfg.moving_mask = dir / "moving_mask.fvol";
  cfg.output = dir / "out";
  cfg.pca_dim = std::min<Index>(cfg.pca_dim, sp.channels);
  cfg.adam.iterations = 30;
  return cfg;
}

SynthParams small(SynthMode mode, Index channels = 2) {
  SynthParams sp;
  sp.size = 24;
  sp.channels = channels;
  sp.blobs = 60;
  sp.mode = mode;
  sp.max_displacement = 2.0;
  return sp;
}

}  // namespace

TEST_CASE("config text parsing, overrides and echo") {
  const auto m = parse_config_text("# comment\nlambda = 0.5  # trailing\n\nd=8\nlambda=3\ncoupling = 0,0.5,1\n");
  CHECK(m.at("lambda") == "3");
  const PipelineConfig c = PipelineConfig::from_map(m);
  CHECK(c.lambda == 3.0);
  CHECK(c.pca_dim == 8);
  CHECK(c.coupling == std::vector<double>{0.0, 0.5, 1.0});
  CHECK(c.discrete().coupling == std::vector<double>{0.0, 1.5, 3.0});
  CHECK(PipelineConfig::from_map(c.echo()).echo() == c.echo());
  CHECK(c.echo().at("lambda") == "3");
  CHECK(PipelineConfig{}.echo().at("coupling") == "0,0.03,0.1");
  CHECK(config_keys().size() == c.echo().size());

  CHECK_THROWS_AS(parse_config_text("nonsense_key = 1\n"), Error);
  CHECK_THROWS_AS(parse_config_text("no equals sign\n"), Error);
  CHECK_THROWS_AS(PipelineConfig::from_map({{"d", "zero"}}), Error);
  CHECK_THROWS_AS(PipelineConfig::from_map({{"search_radius", "5"}, {"quantization", "2"}}), Error);
  CHECK_THROWS_AS(PipelineConfig::from_map({{"coupling", "1,0.5"}}), Error);
}

TEST_CASE("joint normalisation") {
  FeatureVolume a({2, 2, 1}, 1), b({2, 2, 1}, 1);
  a.data() = {1, 2, 3, 4};
  b.data() = {5, 6, 7, 8};
  const double s = normalize_jointly(a, b);
  CHECK(s > 0);
  double mean = 0, ms = 0;
  for (float x : a.data()) mean += x, ms += x * x;
  for (float x : b.data()) mean += x, ms += x * x;
  CHECK(std::abs(mean / 8) < 1e-6);
  CHECK(ms / 8 == doctest::Approx(1.0));
  CHECK(a(1, 0, 0) - a(0, 0, 0) == doctest::Approx(b(1, 0, 0) - b(0, 0, 0)));

  FeatureVolume c({2, 1, 1}, 1, Eigen::Vector3d::Ones(), 3.0f), d = c;
  CHECK(normalize_jointly(c, d) == 1.0);
}

TEST_CASE("self registration is the identity") {
  const auto dir = fresh_dir("self");
  PipelineConfig cfg = write_pair(dir, small(SynthMode::Identical));
  const RegisterResult r = register_pair(cfg);
  CHECK(r.field.max_abs() < 0.1f);
  for (const auto& row : r.report.labels) CHECK(row.dsc == 1.0);
  REQUIRE(r.report.lesion_error.has_value());
  CHECK(*r.report.lesion_error == 0.0);
  CHECK(r.report.energy_final.value() <= r.report.energy_init.value());
}

TEST_CASE("registration lowers the feature mismatch on a warped phantom") {
  const auto dir = fresh_dir("warp");
  PipelineConfig cfg = write_pair(dir, small(SynthMode::Warp, 3));
  cfg.pca_dim = 2;
  const RegisterResult r = register_pair(cfg);
  CHECK(*r.report.energy_final < 0.5 * *r.report.energy_init);
  CHECK(r.report.config.at("d") == "2");
  CHECK(r.report.config.count("pca_explained_variance") == 1);
  CHECK(r.report.jacobian->interior_voxels == 22 * 22 * 22);
}

TEST_CASE("register writes the full output set and is deterministic") {
  const auto dir = fresh_dir("det");
  PipelineConfig cfg = write_pair(dir, small(SynthMode::Warp));
  cfg.record_timing = false;
  cfg.dump_fields = true;
  std::ostringstream err;
  REQUIRE(cmd_register(cfg, err) == kExitOk);
  for (const char* f : {"field.fvol", "warped.fvol", "warped_mask.fvol", "stage1_field.fvol", "report.csv", "report.json"})
    CHECK(fs::exists(cfg.output / f));
  const FeatureVolume field = read_feature_volume(cfg.output / "field.fvol");
  CHECK(field.channels() == 3);
  CHECK(field.meta()["warp_convention"] == "pullback");
  const FeatureVolume s1 = read_feature_volume(cfg.output / "stage1_field.fvol");
  CHECK(s1.dims() == Dims{6, 6, 6});

  std::map<std::string, std::string> first;
  for (const char* f : {"field.fvol", "warped.fvol", "warped_mask.fvol", "report.csv", "report.json"})
    first[f] = slurp(cfg.output / f);
  REQUIRE(cmd_register(cfg, err) == kExitOk);
  for (const auto& [f, bytes] : first) CHECK(slurp(cfg.output / f) == bytes);
}

TEST_CASE("missing inputs fail with a usage exit code and no outputs") {
  const auto dir = fresh_dir("missing");
  PipelineConfig cfg = write_pair(dir, small(SynthMode::Identical));
  cfg.moving = dir / "does_not_exist.fvol";
  std::ostringstream err;
  CHECK(cmd_register(cfg, err) == kExitUsage);
  CHECK_FALSE(err.str().empty());
  CHECK_FALSE(fs::exists(cfg.output / "field.fvol"));
  CHECK_FALSE(fs::exists(cfg.output / "report.csv"));
}

TEST_CASE("sweep writes one row per dimension") {
  const auto dir = fresh_dir("sweep");
  PipelineConfig cfg = write_pair(dir, small(SynthMode::Warp, 3));
  cfg.adam.iterations = 5;
  std::ostringstream err;
  REQUIRE(cmd_sweep(cfg, {1, 2, 3}, 1, err) == kExitOk);
  const std::string csv = slurp(cfg.output / "sweep.csv");
  std::istringstream is(csv);
  std::string header;
  std::getline(is, header);
  CHECK(header.rfind("d,pair_id,", 0) == 0);
  CHECK(header.find("peak_memory_mb") != std::string::npos);
  CHECK(header.find("status") != std::string::npos);
  std::string line;
  std::vector<std::string> rows;
  while (std::getline(is, line)) rows.push_back(line);
  // three labels per run: background excluded, tissue and lesion, so two rows per d
  CHECK(rows.size() == 3 * 2);
  for (const auto& row : rows) {
    CHECK(row.find(",ok") != std::string::npos);
    std::vector<std::string> cells;
    std::stringstream ss(row);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    REQUIRE(cells.size() >= 3);
    CHECK(std::stod(cells[cells.size() - 2]) > 0.0);  // peak memory
    CHECK(std::stod(cells[cells.size() - 3]) > 0.0);  // seconds
  }
  CHECK(fs::exists(cfg.output / "d_2" / "report.csv"));
  CHECK(cmd_sweep(cfg, {4}, 1, err) != kExitOk);  // d above the channel count
}

TEST_CASE("evaluate reproduces the register metrics") {
  const auto dir = fresh_dir("eval");
  PipelineConfig cfg = write_pair(dir, small(SynthMode::Warp));
  cfg.record_timing = false;
  std::ostringstream err;
  REQUIRE(cmd_register(cfg, err) == kExitOk);
  REQUIRE(cmd_evaluate(cfg.fixed_mask, cfg.output / "warped_mask.fvol", cfg.output / "field.fvol", cfg.moving_mask, 2,
                       dir / "eval.json", err) == kExitOk);
  const auto eval = nlohmann::json::parse(slurp(dir / "eval.json"));
  const auto reg = nlohmann::json::parse(slurp(cfg.output / "report.json"));
  REQUIRE(eval["rows"].size() == reg["rows"].size());
  for (std::size_t i = 0; i < eval["rows"].size(); ++i) {
    CHECK(eval["rows"][i]["dsc"] == reg["rows"][i]["dsc"]);
    CHECK(eval["rows"][i]["v_eps"] == reg["rows"][i]["v_eps"]);
    CHECK(eval["rows"][i]["jac_min"] == reg["rows"][i]["jac_min"]);
  }
  REQUIRE(cmd_evaluate(cfg.fixed_mask, cfg.fixed_mask, "", "", 2, dir / "self.csv", err) == kExitOk);
  const std::string csv = slurp(dir / "self.csv");
  CHECK(csv.find(",1.0000,") != std::string::npos);
  CHECK(cmd_evaluate(cfg.fixed_mask, dir / "nope.fvol", "", "", 2, dir / "x.csv", err) == kExitUsage);
}

TEST_CASE("slice stacks from an external encoder run end to end") {
  const auto dir = fresh_dir("stack");
  SynthParams sp = small(SynthMode::Warp, 6);
  const SynthPair pair = make_synthetic_pair(sp);
  // stub encoder: 2x2 patch tokens on every second slice
  const auto encode = [](const FeatureVolume& v) {
    const Dims d = v.dims();
    FeatureVolume s({d.x / 2, d.y / 2, (d.z + 1) / 2}, v.channels(), Eigen::Vector3d(2, 2, 1));
    for (Index k = 0; k < s.dims().z; ++k)
      for (Index y = 0; y < s.dims().y; ++y)
        for (Index x = 0; x < s.dims().x; ++x)
          for (Index c = 0; c < v.channels(); ++c)
            s(x, y, k, c) = 0.25f * (v(2 * x, 2 * y, 2 * k, c) + v(2 * x + 1, 2 * y, 2 * k, c) +
                                     v(2 * x, 2 * y + 1, 2 * k, c) + v(2 * x + 1, 2 * y + 1, 2 * k, c));
    s.meta()["encoder"] = "stub";
    s.meta()["patch_grid"] = {d.x / 2, d.y / 2};
    s.meta()["slice_stride"] = 2;
    s.meta()["z_total"] = d.z;
    s.meta()["volume_shape"] = {d.x, d.y, d.z};
    return s;
  };
  write_fvol(encode(pair.fixed), dir / "fixed.fvol");
  write_fvol(encode(pair.moving), dir / "moving.fvol");
  write_fvol(pair.fixed_mask, dir / "fixed_mask.fvol");
  write_fvol(pair.moving_mask, dir / "moving_mask.fvol");
  PipelineConfig cfg;
  cfg.fixed = dir / "fixed.fvol";
  cfg.moving = dir / "moving.fvol";
  cfg.fixed_mask = dir / "fixed_mask.fvol";
  cfg.moving_mask = dir / "moving_mask.fvol";
  cfg.output = dir / "out";
  cfg.pca_dim = 4;
  cfg.adam.iterations = 20;
  cfg.record_timing = false;

  const PreparedPair prep = prepare_features(cfg, pair.fixed_mask.dims());
  CHECK(prep.fixed.dims() == pair.fixed.dims());
  CHECK(prep.fixed.channels() == 4);
  REQUIRE(prep.projection.has_value());
  CHECK(prep.projection->samples == 2 * 12 * 12 * 12);

  std::ostringstream err;
  REQUIRE(cmd_register(cfg, err) == kExitOk);
  const LabelMask warped = read_label_mask(cfg.output / "warped_mask.fvol");
  CHECK(warped.dims() == pair.fixed_mask.dims());
  const auto report = nlohmann::json::parse(slurp(cfg.output / "report.json"));
  CHECK(report["rows"].size() == 2);
}

#ifdef FEATREG_CLI
TEST_CASE("command line front end") {
  const auto dir = fresh_dir("cli");
  const std::string cli = FEATREG_CLI;
  const auto run = [&](const std::string& args) {
    const int status = std::system((cli + " " + args + " > " + (dir / "log.txt").string() + " 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  };
  REQUIRE(run("synth --size 16 --channels 2 --blobs 30 --mode identical --out " + dir.string()) == 0);
  for (const char* f : {"fixed.fvol", "moving.fvol", "fixed_mask.fvol", "moving_mask.fvol", "truth_field.fvol"})
    CHECK(fs::exists(dir / f));

  {
    std::ofstream cfg(dir / "run.cfg");
    cfg << "fixed = " << (dir / "fixed.fvol").string() << "\n"
        << "moving = " << (dir / "moving.fvol").string() << "\n"
        << "fixed_mask = " << (dir / "fixed_mask.fvol").string() << "\n"
        << "moving_mask = " << (dir / "moving_mask.fvol").string() << "\n"
        << "output = " << (dir / "out").string() << "\n"
        << "d = 2\nadam_iters = 5\nlambda = 9\n";
  }
  REQUIRE(run("register --config " + (dir / "run.cfg").string() + " --lambda 1.5 --pair_id cli") == 0);
  const auto report = nlohmann::json::parse(slurp(dir / "out" / "report.json"));
  CHECK(report["config"]["lambda"] == "1.5");
  CHECK(report["pair_id"] == "cli");

  CHECK(run("register --config " + (dir / "run.cfg").string() + " --moving " + (dir / "none.fvol").string() +
            " --output " + (dir / "bad").string()) == 2);
  CHECK_FALSE(fs::exists(dir / "bad" / "report.csv"));
  CHECK(run("register --no-such-flag 1") == 2);
  CHECK(run("") != 0);

  REQUIRE(run("export --in " + (dir / "fixed_mask.fvol").string() + " --out " + (dir / "mask").string()) == 0);
  CHECK(fs::file_size(dir / "mask.raw") == 16 * 16 * 16);
  CHECK(fs::exists(dir / "mask.txt"));

  REQUIRE(run("evaluate --fixed-mask " + (dir / "fixed_mask.fvol").string() + " --warped-mask " +
              (dir / "out" / "warped_mask.fvol").string() + " --out " + (dir / "eval.csv").string()) == 0);
  CHECK(slurp(dir / "eval.csv").find(",1.0000,") != std::string::npos);
}
#endif
