// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <Eigen/QR>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "featreg/discrete.hpp"
#include "featreg/error.hpp"
#include "featreg/feature_prep.hpp"
#include "featreg/fvol.hpp"
#include "featreg/metrics.hpp"
#include "featreg/parallel.hpp"
#include "featreg/pipeline.hpp"
#include "featreg/refine.hpp"
#include "featreg/synth.hpp"
#include "oracles.hpp"

using namespace featreg;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(const char* name, bool ok, const std::string& detail) {
  std::printf("%s %-26s %s\n", ok ? "PASS" : "FAIL", name, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

template <typename... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "featreg_acceptance" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

PipelineConfig stage_pair(const fs::path& dir, const SynthPair& pair) {
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
  cfg.pca_dim = pair.fixed.channels();
  return cfg;
}

double mse(const FeatureVolume& a, const FeatureVolume& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.data().size(); ++i) s += double(a.data()[i] - b.data()[i]) * (a.data()[i] - b.data()[i]);
  return s / double(a.data().size());
}

void self_registration() {
  SynthParams sp;
  sp.size = 48;
  sp.mode = SynthMode::Identical;
  const auto t0 = std::chrono::steady_clock::now();
  const PipelineConfig cfg = stage_pair(fresh_dir("self"), make_synthetic_pair(sp));
  const RegisterResult r = register_pair(cfg);
  const double secs = seconds_since(t0);
  double min_dsc = 1.0;
  for (const auto& row : r.report.labels) min_dsc = std::min(min_dsc, row.dsc);
  const double v_eps = r.report.lesion_error.value_or(-1.0);
  const double umax = r.field.max_abs();
  const bool ok = !r.report.labels.empty() && min_dsc == 1.0 && umax < 0.1 && v_eps == 0.0 && secs < 30.0;
  report("self-registration", ok,
         fmt("48^3: min DSC=%.4f (==1), max|u|=%.2e (<0.1), V_eps=%.4f (==0), %.2fs (<30s, 1 thread)", min_dsc,
             umax, v_eps, secs));
}

void synthetic_recovery() {
  SynthParams sp;
  sp.size = 64;
  sp.mode = SynthMode::Warp;
  sp.max_displacement = 6.0;
  const auto t0 = std::chrono::steady_clock::now();
  const SynthPair pair = make_synthetic_pair(sp);
  PipelineConfig cfg = stage_pair(fresh_dir("recovery"), pair);
  cfg.search_radius = 6;
  const RegisterResult r = register_pair(cfg);
  const double secs = seconds_since(t0);
  const double before = mse(pair.fixed, pair.moving);
  const double after = mse(pair.fixed, warp(pair.moving, r.field));
  double epe = 0;
  for (Index i = 0; i < r.field.voxels(); ++i) epe += (r.field.at(i) - pair.truth.at(i)).cast<double>().norm();
  epe /= double(r.field.voxels());
  const bool ok = after <= 0.2 * before && epe < 1.0 && secs < 120.0;
  report("synthetic-recovery", ok,
         fmt("64^3, peak 6 vox: MSE ratio=%.4f (<=0.2), mean EPE=%.3f vox (<1.0), %.2fs (<120s)", after / before, epe,
             secs));
}

void translation_oracle() {
  SynthParams sp;
  sp.size = 48;
  sp.seed = 4;
  sp.mode = SynthMode::Translate;
  sp.shift = {4, -2, 2};
  SynthPair pair = make_synthetic_pair(sp);
  normalize_jointly(pair.fixed, pair.moving);
  DiscreteParams dp;
  dp.radius = 6;
  dp.quantization = 2;
  const DisplacementField<float> field = discrete_register(pair.fixed, pair.moving, dp);
  const CandidateSet cands = CandidateSet::make(6, 2);
  const Eigen::Vector3f shift = sp.shift.cast<float>();
  const Index g = dp.grid_spacing, n = field.dims().x;
  // interior: the block displaced by any candidate stays inside the volume
  const Index lo = (dp.radius + g - 1) / g, hi = (sp.size - dp.radius) / g - 1;
  int total = 0, stage1_hits = 0, oracle_hits = 0, agree = 0;
  for (Index z = lo; z <= hi; ++z)
    for (Index y = lo; y <= hi; ++y)
      for (Index x = lo; x <= hi; ++x) {
        ++total;
        double best = 1e300;
        Eigen::Vector3i arg = Eigen::Vector3i::Zero();
        for (const auto& v : cands.displacements) {
          const double c = oracle::block_cost(pair.fixed, pair.moving, g, x, y, z, v.x(), v.y(), v.z());
          if (c < best) best = c, arg = v;
        }
        const bool s1 = field(x, y, z) == shift;
        stage1_hits += s1;
        oracle_hits += arg.cast<float>() == shift;
        agree += field(x, y, z) == arg.cast<float>();
      }
  const bool ok = total > 0 && stage1_hits * 100 >= 95 * total && oracle_hits == total;
  report("translation-oracle", ok,
         fmt("shift (4,-2,2), q=2, r=6, grid %ld^3, interior [%ld,%ld]^3: stage-1 exact %d/%d (>=95%%), "
             "exhaustive argmin exact %d/%d, agreement %d/%d",
             long(n), long(lo), long(hi), stage1_hits, total, oracle_hits, total, agree, total));
}

void gradient_check() {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> frac(0.15, 0.85), lam(0.0, 4.0);
  const Dims d{6, 6, 6};
  double worst = 0;
  int bad = 0;
  for (int inst = 0; inst < 100; ++inst) {
    const FeatureVolume f = oracle::random_volume(d, 2, rng), m = oracle::smooth_volume(d, 2, rng);
    EnergyConfig cfg;
    cfg.lambda = lam(rng);
    DisplacementField<double> u(d);
    std::uniform_int_distribution<int> cell(0, 4);
    for (Index z = 0; z < 6; ++z)
      for (Index y = 0; y < 6; ++y)
        for (Index x = 0; x < 6; ++x) {
          const Index here[3] = {x, y, z};
          for (int a = 0; a < 3; ++a) u(x, y, z)[a] = double(cell(rng)) + frac(rng) - double(here[a]);
        }
    const DisplacementField<double> g = energy_gradient(f, m, u, cfg);
    const double h = 1e-3;
    double err = 0;
    for (Index i = 0; i < u.flat().size(); ++i) {
      const double keep = u.flat()[i];
      u.flat()[i] = keep + h;
      const double ep = energy(f, m, u, cfg);
      u.flat()[i] = keep - h;
      const double em = energy(f, m, u, cfg);
      u.flat()[i] = keep;
      err = std::max(err, std::abs((ep - em) / (2 * h) - g.flat()[i]));
    }
    const double rel = err / g.flat().cwiseAbs().maxCoeff();
    worst = std::max(worst, rel);
    bad += !(rel < 1e-4);
  }
  report("gradient-fd", bad == 0,
         fmt("100 instances 6^3x2, h=1e-3: worst relative error %.2e (<1e-4 each), failing %d", worst, bad));
}

void pca_oracle() {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> nd(0.0, 1.0);
  double worst_ev = 0, worst_rec = 0, worst_frame_ratio = 0;
  for (int trial = 0; trial < 5; ++trial) {
    // two volumes of 100 tokens each: 200 x 32 joint matrix
    FeatureVolume a({10, 10, 1}, 32), b({10, 10, 1}, 32);
    Eigen::MatrixXd mix(32, 32);
    for (Index i = 0; i < mix.size(); ++i) mix.data()[i] = nd(rng) * std::pow(0.9, double(i % 32));
    for (FeatureVolume* v : {&a, &b})
      for (Index r = 0; r < 100; ++r) {
        Eigen::VectorXd z(32);
        for (auto& e : z) e = nd(rng);
        const Eigen::VectorXd x = mix * z;
        for (Index c = 0; c < 32; ++c) v->data()[std::size_t(r * 32 + c)] = float(x[c] + 0.3 * c);
      }
    const PcaProjection p = fit_joint_pca(a, b, 8);

    std::vector<double> rows(a.data().begin(), a.data().end());
    rows.insert(rows.end(), b.data().begin(), b.data().end());
    const auto ev = oracle::jacobi_eigenvalues(oracle::covariance(rows, 200, 32), 32);
    for (int i = 0; i < 8; ++i)
      worst_ev = std::max(worst_ev, std::abs(p.explained_variance[i] - ev[std::size_t(i)]) / ev[std::size_t(i)]);

    Eigen::MatrixXd X(200, 32);
    for (Index r = 0; r < 200; ++r)
      for (Index c = 0; c < 32; ++c) X(r, c) = rows[std::size_t(r * 32 + c)];
    X.rowwise() -= X.colwise().mean();
    const double rec = (X - X * p.basis * p.basis.transpose()).squaredNorm();
    double discarded = 0;
    for (std::size_t i = 8; i < 32; ++i) discarded += ev[i] * 200.0;
    worst_rec = std::max(worst_rec, std::abs(rec - discarded) / discarded);

    const double best = (X * p.basis).squaredNorm();
    for (int f = 0; f < 1000 / 5; ++f) {
      Eigen::MatrixXd G(32, 8);
      for (Index i = 0; i < G.size(); ++i) G.data()[i] = nd(rng);
      const Eigen::MatrixXd Q = Eigen::HouseholderQR<Eigen::MatrixXd>(G).householderQ() * Eigen::MatrixXd::Identity(32, 8);
      worst_frame_ratio = std::max(worst_frame_ratio, (X * Q).squaredNorm() / best);
    }
  }
  const bool ok = worst_ev < 1e-6 && worst_rec < 1e-6 && worst_frame_ratio <= 1.0 + 1e-9;
  report("pca-oracle", ok,
         fmt("5 x (200x32, d=8): eigenvalue rel err %.2e (<1e-6), reconstruction rel err %.2e (<1e-6), "
             "best of 1000 random frames / PCA = %.4f (<=1)",
             worst_ev, worst_rec, worst_frame_ratio));
}

void slice_interpolation() {
  std::mt19937_64 rng(5);
  std::normal_distribution<float> nd(0.0f, 1.0f);
  const auto make = [&](Index stride) {
    SliceFeatureStack s;
    s.width = 4;
    s.height = 3;
    s.z_total = 9;
    s.stride = stride;
    for (Index z = 0; z < 9; z += stride) {
      TokenGrid t(12, 8);
      for (Index i = 0; i < t.size(); ++i) t.data()[i] = nd(rng);
      s.slices.push_back({z, t});
    }
    return s;
  };
  const SliceFeatureStack s2 = make(2), s1 = make(1);
  const FeatureVolume v2 = interpolate_skipped_slices(s2), v1 = interpolate_skipped_slices(s1);
  double mid_err = 0;
  for (std::size_t k = 0; k + 1 < s2.slices.size(); ++k)
    for (Index t = 0; t < 12; ++t)
      for (Index c = 0; c < 8; ++c) {
        const double avg = 0.5 * (double(s2.slices[k].tokens(t, c)) + double(s2.slices[k + 1].tokens(t, c)));
        mid_err = std::max(mid_err, std::abs(v2(t % 4, t / 4, 2 * Index(k) + 1, c) - avg));
      }
  bool identity = v1.dims() == Dims{4, 3, 9};
  for (const auto& sl : s1.slices)
    for (Index t = 0; t < 12; ++t)
      for (Index c = 0; c < 8; ++c) identity = identity && v1(t % 4, t / 4, sl.z, c) == sl.tokens(t, c);
  report("slice-interpolation", mid_err <= 1e-6 && identity,
         fmt("k=2 midpoint max deviation %.2e (<=1e-6), k=1 identity %s", mid_err, identity ? "exact" : "broken"));
}

void metric_arithmetic() {
  LabelMask a({4, 4, 1}, 1), b({4, 4, 1}, 1);
  for (Index i = 0; i < 8; ++i) a.data()[std::size_t(i)] = 1;
  for (Index i = 4; i < 12; ++i) b.data()[std::size_t(i)] = 1;
  const double dsc = dice(a, b, 1);

  LabelMask moving({10, 10, 1}, 1, Eigen::Vector3d::Ones(), 2), warped({10, 10, 1}, 1);
  std::fill(warped.data().begin(), warped.data().begin() + 75, 2);
  const double v = lesion_volume_error(warped, moving, 2);

  DisplacementField<float> u({5, 5, 5});
  for (Index z = 0; z < 5; ++z)
    for (Index y = 0; y < 5; ++y)
      for (Index x = 0; x < 5; ++x) u(x, y, z) = Eigen::Vector3f(0.1f * x, 0.1f * y, 0.1f * z);
  const double jac = jacobian_stats(u).min_det;
  const bool ok = std::abs(dsc - 0.5) <= 1e-12 && std::abs(v - 0.25) <= 1e-12 && std::abs(jac - 1.331) <= 1e-6;
  report("metric-arithmetic", ok, fmt("dice=%.6f (0.5), V_eps=%.6f (0.25), det J=%.7f (1.331 +-1e-6)", dsc, v, jac));
}

void determinism() {
  SynthParams sp;
  sp.size = 32;
  sp.channels = 3;
  sp.seed = 9;
  sp.max_displacement = 3.0;
  PipelineConfig cfg = stage_pair(fresh_dir("determinism"), make_synthetic_pair(sp));
  cfg.pca_dim = 2;
  cfg.record_timing = false;
  std::ostringstream err;
  const char* files[] = {"field.fvol", "warped.fvol", "warped_mask.fvol", "report.csv", "report.json"};
  std::vector<std::string> first;
  bool ok = cmd_register(cfg, err) == kExitOk;
  for (const char* f : files) first.push_back(slurp(cfg.output / f));
  ok = ok && cmd_register(cfg, err) == kExitOk;
  int same = 0;
  for (std::size_t i = 0; i < std::size(files); ++i) same += !first[i].empty() && slurp(cfg.output / files[i]) == first[i];
  ok = ok && same == int(std::size(files));
  report("determinism", ok,
         fmt("two cmd_register runs, timing column off: %d/%zu output files byte-identical%s", same, std::size(files),
             err.str().empty() ? "" : (" / " + err.str()).c_str()));
}

void fvol_round_trip() {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<float> val(-1e3f, 1e3f);
  std::uniform_int_distribution<int> dim(1, 7), byte(0, 255);
  const auto dir = fresh_dir("fvol");
  int exact = 0, law = 0, trials = 50;
  for (int t = 0; t < trials; ++t) {
    const Dims d{dim(rng), dim(rng), dim(rng)};
    FeatureVolume f(d, dim(rng), Eigen::Vector3d(0.7, 1.0, 2.5));
    for (auto& x : f.data()) x = val(rng);
    f.meta()["encoder"] = "stub";
    LabelMask m(d, 1);
    for (auto& x : m.data()) x = std::uint8_t(byte(rng));
    write_fvol(f, dir / "f.fvol");
    write_fvol(m, dir / "m.fvol");
    const FeatureVolume fb = read_feature_volume(dir / "f.fvol");
    const LabelMask mb = read_label_mask(dir / "m.fvol");
    exact += fb == f && std::memcmp(fb.data().data(), f.data().data(), f.data().size() * 4) == 0 && mb == m;
    law += fs::file_size(dir / "f.fvol") == 8 + fvol_header(f).size() + f.data().size() * 4 &&
           fs::file_size(dir / "m.fvol") == 8 + fvol_header(m).size() + m.data().size();
  }
  FeatureVolume small({2, 2, 1}, 1);
  write_fvol(small, dir / "s.fvol");
  const bool small_law = fs::file_size(dir / "s.fvol") == 8 + fvol_header(small).size() + 16;
  report("fvol-round-trip", exact == trials && law == trials && small_law,
         fmt("%d/%d f32+u8 pairs bit-exact, size law 8+H+payload held %d/%d, [2,2,1,1] f32 payload 16 B %s", exact,
             trials, law, trials, small_law ? "ok" : "wrong"));
}

}  // namespace

int main() {
  set_worker_count(1);
  const std::pair<const char*, void (*)()> criteria[] = {
      {"self-registration", self_registration},   {"synthetic-recovery", synthetic_recovery},
      {"translation-oracle", translation_oracle}, {"gradient-fd", gradient_check},
      {"pca-oracle", pca_oracle},                 {"slice-interpolation", slice_interpolation},
      {"metric-arithmetic", metric_arithmetic},   {"determinism", determinism},
      {"fvol-round-trip", fvol_round_trip},
  };
  for (const auto& [name, run] : criteria) {
    try {
      run();
    } catch (const std::exception& e) {
      report(name, false, std::string("threw: ") + e.what());
    }
  }
  std::printf("%s: %d criteria failed\n", failures ? "ACCEPTANCE FAILED" : "ACCEPTANCE PASSED", failures);
  return failures ? 1 : 0;
}
