#include "featreg/synth.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <random>

namespace featreg {
namespace {

struct Blob {
  Eigen::Vector3d centre;
  double inv_two_sigma2;
  std::vector<double> amplitude;  // per channel
};

struct Phantom {
  std::vector<Blob> blobs;
  Eigen::Vector3d lesion_centre;
  double lesion_radius;
  double tissue_threshold;

  void intensity(const Eigen::Vector3d& p, float* out, Index C) const {
    for (Index c = 0; c < C; ++c) out[c] = 0.0f;
    for (const auto& b : blobs) {
      const double g = std::exp(-(p - b.centre).squaredNorm() * b.inv_two_sigma2);
      for (Index c = 0; c < C; ++c) out[c] += static_cast<float>(b.amplitude[static_cast<std::size_t>(c)] * g);
    }
  }

  std::uint8_t label(const Eigen::Vector3d& p, float channel0) const {
    if ((p - lesion_centre).norm() <= lesion_radius) return kLesionLabel;
    return channel0 > tissue_threshold ? kTissueLabel : 0;
  }
};

struct SineWarp {
  // u_a(x) = sum_k amp[a][k] * sin(dot(freq[a][k], x) + phase[a][k])
  std::array<std::vector<Eigen::Vector3d>, 3> freq;
  std::array<std::vector<double>, 3> amp, phase;
  double scale = 1.0;

  Eigen::Vector3d operator()(const Eigen::Vector3d& x) const {
    Eigen::Vector3d u;
    for (int a = 0; a < 3; ++a) {
      double s = 0.0;
      for (std::size_t k = 0; k < freq[a].size(); ++k) s += amp[a][k] * std::sin(freq[a][k].dot(x) + phase[a][k]);
      u(a) = scale * s;
    }
    return u;
  }
};

}  // namespace

SynthPair make_synthetic_pair(const SynthParams& p) {
  if (p.size < 8) throw Error(ErrorCode::InvalidArgument, "synthetic volumes need size >= 8");
  if (p.channels < 1) throw Error(ErrorCode::InvalidArgument, "channels must be >= 1");
  std::mt19937_64 rng(p.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double n = double(p.size);
  const Index C = p.channels;

  Phantom ph;
  for (int i = 0; i < p.blobs; ++i) {
    Blob b;
    b.centre = Eigen::Vector3d(unit(rng), unit(rng), unit(rng)) * (n - 1);
    const double sigma = n * (0.04 + 0.06 * unit(rng));
    b.inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
    for (Index c = 0; c < C; ++c) b.amplitude.push_back(c == 0 ? 0.4 + 0.6 * unit(rng) : unit(rng) - 0.3);
    ph.blobs.push_back(std::move(b));
  }
  ph.lesion_centre = ph.blobs.front().centre;
  ph.lesion_radius = 0.06 * n;
  ph.tissue_threshold = 0.35;

  const Dims dims{p.size, p.size, p.size};
  SynthPair out;
  out.moving = FeatureVolume(dims, C);
  out.moving_mask = LabelMask(dims, 1);
  for (Index z = 0; z < p.size; ++z)
    for (Index y = 0; y < p.size; ++y)
      for (Index x = 0; x < p.size; ++x) {
        const Eigen::Vector3d q{double(x), double(y), double(z)};
        float* v = out.moving.data().data() + out.moving.linear(x, y, z) * C;
        ph.intensity(q, v, C);
        out.moving_mask(x, y, z) = ph.label(q, v[0]);
      }

  switch (p.mode) {
    case SynthMode::Identical:
      out.fixed = out.moving;
      out.fixed_mask = out.moving_mask;
      out.truth = DisplacementField<float>(dims);
      break;
    case SynthMode::Translate:
      out.fixed = circular_shift(out.moving, Eigen::Vector3i(-p.shift));
      out.fixed_mask = circular_shift(out.moving_mask, Eigen::Vector3i(-p.shift));
      out.truth = DisplacementField<float>(dims, p.shift.cast<float>());
      break;
    case SynthMode::Warp: {
      SineWarp w;
      const double base = 2.0 * std::numbers::pi / n;
      for (int a = 0; a < 3; ++a)
        for (int k = 0; k < 3; ++k) {
          Eigen::Vector3d f(unit(rng) - 0.5, unit(rng) - 0.5, unit(rng) - 0.5);
          w.freq[a].push_back(f.normalized() * base * (0.5 + 0.5 * unit(rng)));
          w.amp[a].push_back(0.5 + 0.5 * unit(rng));
          w.phase[a].push_back(2.0 * std::numbers::pi * unit(rng));
        }
      double peak = 0.0;
      for (Index z = 0; z < p.size; ++z)
        for (Index y = 0; y < p.size; ++y)
          for (Index x = 0; x < p.size; ++x) peak = std::max(peak, w(Eigen::Vector3d(double(x), double(y), double(z))).norm());
      w.scale = peak > 0.0 ? p.max_displacement / peak : 0.0;

      out.fixed = FeatureVolume(dims, C);
      out.fixed_mask = LabelMask(dims, 1);
      out.truth = DisplacementField<float>(dims);
      for (Index z = 0; z < p.size; ++z)
        for (Index y = 0; y < p.size; ++y)
          for (Index x = 0; x < p.size; ++x) {
            const Eigen::Vector3d q{double(x), double(y), double(z)};
            const Eigen::Vector3d u = w(q);
            out.truth(x, y, z) = u.cast<float>();
            float* v = out.fixed.data().data() + out.fixed.linear(x, y, z) * C;
            ph.intensity(q + u, v, C);
            out.fixed_mask(x, y, z) = ph.label(q + u, v[0]);
          }
      break;
    }
  }
  for (auto* v : {&out.fixed, &out.moving}) v->meta()["encoder"] = "synthetic";
  return out;
}

}  // namespace featreg
