#include "featreg/metrics.hpp"

#include <Eigen/LU>
#include <cmath>
#include <cstdio>
#include <fstream>


namespace featreg {
namespace {

void check_same(const LabelMask& a, const LabelMask& b) {
  if (!a.same_grid(b) || a.channels() != b.channels())
    throw Error(ErrorCode::DimensionMismatch, "masks " + to_string(a.dims()) + " and " + to_string(b.dims()));
}

Index count_label(const LabelMask& m, std::uint8_t label) {
  Index n = 0;
  for (auto v : m.data()) n += v == label;
  return n;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6e", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  os << text;
  if (!os) throw Error(ErrorCode::IoFailure, "short write to " + path.string());
}

template <typename T>
void export_impl(const Volume<T>& vol, const std::filesystem::path& stem, const char* dtype) {
  if (!vol.all_finite()) throw Error(ErrorCode::InvariantViolation, "non-finite value in exported volume");
  auto raw = stem;
  raw += ".raw";
  auto side = stem;
  side += ".txt";
  std::ofstream os(raw, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorCode::IoFailure, "cannot open " + raw.string());
  // payload layout matches FVOL (little-endian hosts only)
  os.write(reinterpret_cast<const char*>(vol.data().data()), static_cast<std::streamsize>(vol.data().size() * sizeof(T)));
  if (!os) throw Error(ErrorCode::IoFailure, "short write to " + raw.string());
  const auto& d = vol.dims();
  const auto& s = vol.spacing();
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "dims %td %td %td\nchannels %td\ndtype %s\nspacing %.17g %.17g %.17g\norder zyxc\nendian little\n",
                d.x, d.y, d.z, vol.channels(), dtype, s.x(), s.y(), s.z());
  write_text(side, buf);
}

}  // namespace

double dice(const LabelMask& a, const LabelMask& b, std::uint8_t label) {
  check_same(a, b);
  Index na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    const bool ia = a.data()[i] == label, ib = b.data()[i] == label;
    na += ia;
    nb += ib;
    both += ia && ib;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * double(both) / double(na + nb);
}

double lesion_volume_error(const LabelMask& warped, const LabelMask& moving, std::uint8_t label) {
  const Index mov = count_label(moving, label);
  if (mov == 0) throw Error(ErrorCode::EmptyMovingLesion, "moving mask has no voxels with label " + std::to_string(label));
  const Index war = count_label(warped, label);
  return std::abs(double(war - mov)) / double(mov);
}

double jacobian_determinant(const DisplacementField<float>& f, Index x, Index y, Index z) {
  Eigen::Matrix3d J;
  J.col(0) = 0.5 * (f(x + 1, y, z) - f(x - 1, y, z)).cast<double>();
  J.col(1) = 0.5 * (f(x, y + 1, z) - f(x, y - 1, z)).cast<double>();
  J.col(2) = 0.5 * (f(x, y, z + 1) - f(x, y, z - 1)).cast<double>();
  J += Eigen::Matrix3d::Identity();
  return J.determinant();
}

JacobianStats jacobian_stats(const DisplacementField<float>& field) {
  const Dims& d = field.dims();
  if (d.x < 3 || d.y < 3 || d.z < 3)
    throw Error(ErrorCode::FieldTooSmall, "field " + to_string(d) + " needs >= 3 voxels per axis");
  JacobianStats s;
  s.min_det = std::numeric_limits<double>::infinity();
  Index folded = 0;
  for (Index z = 1; z + 1 < d.z; ++z)
    for (Index y = 1; y + 1 < d.y; ++y)
      for (Index x = 1; x + 1 < d.x; ++x) {
        const double det = jacobian_determinant(field, x, y, z);
        s.min_det = std::min(s.min_det, det);
        folded += det <= 0.0;
        ++s.interior_voxels;
      }
  s.fold_fraction = double(folded) / double(s.interior_voxels);
  return s;
}

void RegistrationReport::validate() const {
  const auto bad = [](const std::string& what) { return Error(ErrorCode::InvariantViolation, "report: " + what); };
  for (const auto& r : labels)
    if (!(r.dsc >= 0.0 && r.dsc <= 1.0)) throw bad("dsc outside [0,1]");
  if (lesion_error && !(*lesion_error >= 0.0)) throw bad("v_eps negative");
  if (jacobian && !(jacobian->fold_fraction >= 0.0 && jacobian->fold_fraction <= 1.0)) throw bad("fold fraction outside [0,1]");
}

std::vector<std::vector<std::string>> report_rows(const RegistrationReport& r) {
  const auto opt = [](const std::optional<double>& v, auto fmt) { return v ? fmt(*v) : std::string(); };
  const std::string v_eps = opt(r.lesion_error, [](double v) { return fixed(v, 4); });
  const std::string e0 = opt(r.energy_init, sci);
  const std::string e1 = opt(r.energy_final, sci);
  const std::string jmin = r.jacobian ? fixed(r.jacobian->min_det, 6) : "";
  const std::string jpct = r.jacobian ? fixed(100.0 * r.jacobian->fold_fraction, 4) : "";
  const std::string secs = opt(r.seconds, [](double v) { return fixed(v, 3); });
  std::vector<std::vector<std::string>> rows;
  if (r.labels.empty()) rows.push_back({r.pair_id, "", "", v_eps, e0, e1, jmin, jpct, secs});
  for (const auto& l : r.labels)
    rows.push_back({r.pair_id, std::to_string(l.label), fixed(l.dsc, 4), v_eps, e0, e1, jmin, jpct, secs});
  return rows;
}

std::string csv_header() {
  std::string h;
  for (const char* c : kReportColumns) h += (h.empty() ? "" : ",") + std::string(c);
  return h + "\n";
}

std::string format_csv(const RegistrationReport& report, bool with_header) {
  report.validate();
  std::string out = with_header ? csv_header() : "";
  for (const auto& row : report_rows(report)) {
    for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + row[i];
    out += "\n";
  }
  return out;
}

std::string format_json(const RegistrationReport& report) {
  report.validate();
  using nlohmann::ordered_json;
  ordered_json rows = ordered_json::array();
  for (const auto& row : report_rows(report)) {
    ordered_json obj;
    for (std::size_t i = 0; i < row.size(); ++i) {
      const std::string key = kReportColumns[i];
      if (key == "pair_id") obj[key] = row[i];
      else if (row[i].empty()) obj[key] = nullptr;
      else if (key == "label") obj[key] = std::stoi(row[i]);
      else obj[key] = std::stod(row[i]);
    }
    rows.push_back(std::move(obj));
  }
  ordered_json doc;
  doc["pair_id"] = report.pair_id;
  doc["rows"] = std::move(rows);
  ordered_json cfg = ordered_json::object();
  for (const auto& [k, v] : report.config) cfg[k] = v;
  doc["config"] = std::move(cfg);
  return doc.dump(2) + "\n";
}

void write_report(const RegistrationReport& report, const std::filesystem::path& path, ReportFormat format) {
  write_text(path, format == ReportFormat::Csv ? format_csv(report) : format_json(report));
}

void export_raw(const FeatureVolume& vol, const std::filesystem::path& stem) { export_impl(vol, stem, "f32"); }
void export_raw(const LabelMask& mask, const std::filesystem::path& stem) { export_impl(mask, stem, "u8"); }

}  // namespace featreg
