#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "featreg/discrete.hpp"
#include "featreg/feature_prep.hpp"
#include "featreg/metrics.hpp"
#include "featreg/refine.hpp"

namespace featreg {

enum ExitCode : int { kExitOk = 0, kExitNumeric = 1, kExitUsage = 2 };

/// Every tunable of a registration run. Parsed from flat key=value text with
/// later sources overriding earlier ones; echo() reproduces the effective
/// values in a stable order.
struct PipelineConfig {
  std::filesystem::path fixed;
  std::filesystem::path moving;
  std::filesystem::path fixed_mask;
  std::filesystem::path moving_mask;
  std::filesystem::path output;
  std::string pair_id = "pair";

  Index pca_dim = 16;
  Index slice_stride = 1;
  bool skip_pca = false;
  bool normalize = true;  ///< joint centring and unit mean-square rescaling of the features
  Index target_x = 0;  ///< 0: take from the stack header or masks
  Index target_y = 0;

  double lambda = 2.0;
  Index grid_spacing = 4;
  Index search_radius = 6;
  Index quantization = 2;
  std::vector<double> coupling = {0.0, 0.03, 0.1};  ///< stage-1 coupling weights, multiples of lambda

  Index refine_grid_spacing = 2;
  AdamParams adam;

  std::uint64_t seed = 0;
  int lesion_label = 2;
  bool dump_fields = false;
  bool record_timing = true;
  int threads = 0;

  static PipelineConfig from_map(const std::map<std::string, std::string>& values);
  std::map<std::string, std::string> echo() const;

  DiscreteParams discrete() const;
  EnergyConfig energy() const;
};

/// Known keys with their help text, in echo order.
const std::vector<std::pair<std::string, std::string>>& config_keys();

/// Parse `key = value` lines; '#' starts a comment. Unknown keys are errors.
std::map<std::string, std::string> parse_config_text(const std::string& text);
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);

/// Subtract the joint per-channel mean of both volumes and divide both by one
/// shared scalar so the mean squared centred value per channel is 1. Returns
/// the scalar (1 when the volumes are constant).
double normalize_jointly(FeatureVolume& a, FeatureVolume& b);

struct PreparedPair {
  FeatureVolume fixed;
  FeatureVolume moving;
  std::optional<PcaProjection> projection;
};

/// Load the two inputs and turn them into registration-ready dense volumes:
/// slice stacks are interpolated, jointly reduced and upsampled; dense volumes
/// are jointly reduced unless skip_pca is set.
PreparedPair prepare_features(const PipelineConfig& cfg, const std::optional<Dims>& mask_dims);

struct RegisterResult {
  DisplacementField<float> stage1;  ///< control-grid field
  DisplacementField<float> field;   ///< dense final field
  FeatureVolume warped;
  std::optional<LabelMask> warped_mask;
  RegistrationReport report;
};

/// Full pipeline without touching the output directory.
RegisterResult register_pair(const PipelineConfig& cfg);

/// Labels (non-zero) present in either mask, ascending.
std::vector<int> present_labels(const LabelMask& a, const LabelMask& b);

/// Metrics-only evaluation.
RegistrationReport evaluate_masks(const LabelMask& fixed, const LabelMask& warped,
                                  const DisplacementField<float>* field, const LabelMask* moving, int lesion_label);

/// CLI-facing commands: return an exit code and report failures on `err`.
int cmd_register(const PipelineConfig& cfg, std::ostream& err);
int cmd_sweep(const PipelineConfig& cfg, const std::vector<Index>& d_values, int jobs, std::ostream& err);
int cmd_evaluate(const std::filesystem::path& fixed_mask, const std::filesystem::path& warped_mask,
                 const std::filesystem::path& field, const std::filesystem::path& moving_mask, int lesion_label,
                 const std::filesystem::path& out, std::ostream& err);

/// Peak resident set size of this process in MiB (0 when unavailable).
double peak_memory_mb();

}  // namespace featreg
