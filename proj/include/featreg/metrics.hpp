#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "featreg/volume.hpp"

namespace featreg {

/// 2|A n B| / (|A| + |B|) over voxels equal to `label`; 1 when both are empty.
double dice(const LabelMask& a, const LabelMask& b, std::uint8_t label);

/// |count(warped) - count(moving)| / count(moving) for voxels equal to `label`.
double lesion_volume_error(const LabelMask& warped, const LabelMask& moving, std::uint8_t label);

struct JacobianStats {
  double min_det = 1.0;
  double fold_fraction = 0.0;  ///< share of interior voxels with det <= 0
  Index interior_voxels = 0;
};

/// det(I + du/dx) from central differences over interior voxels.
JacobianStats jacobian_stats(const DisplacementField<float>& field);

/// det(I + du/dx) at one interior voxel.
double jacobian_determinant(const DisplacementField<float>& field, Index x, Index y, Index z);

struct LabelRow {
  int label = 0;
  double dsc = 0.0;
};

struct RegistrationReport {
  std::string pair_id = "pair";
  std::vector<LabelRow> labels;
  std::optional<double> lesion_error;
  std::optional<double> energy_init;
  std::optional<double> energy_final;
  std::optional<JacobianStats> jacobian;
  std::optional<double> seconds;
  std::map<std::string, std::string> config;

  /// Throws InvariantViolation when a metric is outside its range.
  void validate() const;
};

enum class ReportFormat { Csv, Json };

inline constexpr const char* kReportColumns[] = {"pair_id", "label", "dsc", "v_eps", "energy_init",
                                                 "energy_final", "jac_min", "jac_fold_pct", "seconds"};

/// One row per label (or a single label-less row when there are none).
std::vector<std::vector<std::string>> report_rows(const RegistrationReport& report);
std::string csv_header();
std::string format_csv(const RegistrationReport& report, bool with_header = true);
std::string format_json(const RegistrationReport& report);
void write_report(const RegistrationReport& report, const std::filesystem::path& path, ReportFormat format);

/// Headerless little-endian payload at `<stem>.raw` plus a `<stem>.txt`
/// sidecar listing dims, channels, dtype and spacing.
void export_raw(const FeatureVolume& vol, const std::filesystem::path& stem);
void export_raw(const LabelMask& mask, const std::filesystem::path& stem);

}  // namespace featreg
