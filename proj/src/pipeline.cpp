#include "featreg/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <fstream>
#include <future>
#include <ostream>
#include <set>
#include <sstream>

#include "featreg/fvol.hpp"
#include "featreg/parallel.hpp"

namespace featreg {
namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string join(const std::vector<double>& v) {
  std::string out;
  for (double x : v) out += (out.empty() ? "" : ",") + format_double(x);
  return out;
}

std::vector<double> parse_list(const std::string& key, const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const std::string t = trim(item);
      out.push_back(std::stod(t, &used));
      if (used != t.size()) throw std::invalid_argument(t);
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidArgument, "config key '" + key + "': bad list entry '" + item + "'");
    }
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size() && std::isfinite(d)) return d;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::InvalidArgument, "config key '" + key + "': expected a number, got '" + v + "'");
}

long long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long i = std::stoll(v, &used);
    if (used == v.size()) return i;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::InvalidArgument, "config key '" + key + "': expected an integer, got '" + v + "'");
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw Error(ErrorCode::InvalidArgument, "config key '" + key + "': expected a boolean, got '" + v + "'");
}

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::InvalidArgument, what);
}

bool is_stack(const FeatureVolume& v) {
  return v.meta().contains("slice_stride") || v.meta().contains("z_total");
}

std::optional<Dims> header_volume_shape(const FeatureVolume& v) {
  if (!v.meta().contains("volume_shape")) return std::nullopt;
  const auto& s = v.meta()["volume_shape"];
  if (!s.is_array() || s.size() != 3) throw Error(ErrorCode::BadHeader, "volume_shape must be [X,Y,Z]");
  return Dims{s[0].get<Index>(), s[1].get<Index>(), s[2].get<Index>()};
}

void check_finite(const DisplacementField<float>& f, const char* what) {
  for (float v : f.data())
    if (!std::isfinite(v)) throw Error(ErrorCode::NumericFailure, std::string("non-finite value in ") + what);
}

}  // namespace

const std::vector<std::pair<std::string, std::string>>& config_keys() {
  static const std::vector<std::pair<std::string, std::string>> keys = {
      {"fixed", "fixed (reference) FVOL: slice stack or dense volume"},
      {"moving", "moving FVOL, same kind and channel count as fixed"},
      {"fixed_mask", "optional u8 label FVOL for the fixed volume"},
      {"moving_mask", "optional u8 label FVOL for the moving volume"},
      {"output", "output directory"},
      {"pair_id", "identifier written to every report row"},
      {"d", "PCA dimension"},
      {"k", "slice stride used when a stack header lacks slice_stride"},
      {"skip_pca", "register the inputs as they are (raw mode)"},
      {"normalize", "jointly centre and rescale features before registration"},
      {"target_x", "in-plane upsampling target (0: from header or masks)"},
      {"target_y", "in-plane upsampling target (0: from header or masks)"},
      {"lambda", "diffusion regulariser weight"},
      {"grid_spacing", "stage-1 control grid spacing in voxels"},
      {"search_radius", "stage-1 displacement search radius in voxels"},
      {"quantization", "stage-1 candidate step in voxels"},
      {"coupling", "stage-1 coupling weights per iteration, multiples of lambda"},
      {"refine_grid_spacing", "stage-2 control grid spacing in voxels"},
      {"adam_lr", "stage-2 Adam learning rate (voxels)"},
      {"adam_iters", "stage-2 Adam iterations"},
      {"adam_beta1", "Adam first-moment decay"},
      {"adam_beta2", "Adam second-moment decay"},
      {"adam_eps", "Adam epsilon"},
      {"seed", "seed echoed into reports"},
      {"lesion_label", "label used for the lesion volume error"},
      {"dump_fields", "also write the stage-1 control-grid field"},
      {"record_timing", "record wall-clock seconds in reports"},
      {"threads", "worker cap (0: FEATREG_THREADS or all cores)"},
  };
  return keys;
}

namespace {

void check_known_key(const std::string& key) {
  const auto& keys = config_keys();
  if (std::none_of(keys.begin(), keys.end(), [&](const auto& e) { return e.first == key; }))
    throw Error(ErrorCode::InvalidArgument, "unknown config key '" + key + "'");
}

}  // namespace

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorCode::InvalidArgument, "config line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    check_known_key(key);
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

std::map<std::string, std::string> read_config_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::IoFailure, "cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str());
}

PipelineConfig PipelineConfig::from_map(const std::map<std::string, std::string>& values) {
  for (const auto& entry : values) check_known_key(entry.first);
  PipelineConfig c;
  const auto get = [&](const char* k) -> const std::string* {
    const auto it = values.find(k);
    return it == values.end() ? nullptr : &it->second;
  };
  if (auto v = get("fixed")) c.fixed = *v;
  if (auto v = get("moving")) c.moving = *v;
  if (auto v = get("fixed_mask")) c.fixed_mask = *v;
  if (auto v = get("moving_mask")) c.moving_mask = *v;
  if (auto v = get("output")) c.output = *v;
  if (auto v = get("pair_id")) c.pair_id = *v;
  if (auto v = get("d")) c.pca_dim = parse_int("d", *v);
  if (auto v = get("k")) c.slice_stride = parse_int("k", *v);
  if (auto v = get("skip_pca")) c.skip_pca = parse_bool("skip_pca", *v);
  if (auto v = get("normalize")) c.normalize = parse_bool("normalize", *v);
  if (auto v = get("target_x")) c.target_x = parse_int("target_x", *v);
  if (auto v = get("target_y")) c.target_y = parse_int("target_y", *v);
  if (auto v = get("lambda")) c.lambda = parse_double("lambda", *v);
  if (auto v = get("grid_spacing")) c.grid_spacing = parse_int("grid_spacing", *v);
  if (auto v = get("search_radius")) c.search_radius = parse_int("search_radius", *v);
  if (auto v = get("quantization")) c.quantization = parse_int("quantization", *v);
  if (auto v = get("coupling")) c.coupling = parse_list("coupling", *v);
  if (auto v = get("refine_grid_spacing")) c.refine_grid_spacing = parse_int("refine_grid_spacing", *v);
  if (auto v = get("adam_lr")) c.adam.learning_rate = parse_double("adam_lr", *v);
  if (auto v = get("adam_iters")) c.adam.iterations = static_cast<int>(parse_int("adam_iters", *v));
  if (auto v = get("adam_beta1")) c.adam.beta1 = parse_double("adam_beta1", *v);
  if (auto v = get("adam_beta2")) c.adam.beta2 = parse_double("adam_beta2", *v);
  if (auto v = get("adam_eps")) c.adam.epsilon = parse_double("adam_eps", *v);
  if (auto v = get("seed")) c.seed = static_cast<std::uint64_t>(parse_int("seed", *v));
  if (auto v = get("lesion_label")) c.lesion_label = static_cast<int>(parse_int("lesion_label", *v));
  if (auto v = get("dump_fields")) c.dump_fields = parse_bool("dump_fields", *v);
  if (auto v = get("record_timing")) c.record_timing = parse_bool("record_timing", *v);
  if (auto v = get("threads")) c.threads = static_cast<int>(parse_int("threads", *v));

  require(c.pca_dim >= 1, "d must be >= 1");
  require(c.slice_stride >= 1, "k must be >= 1");
  require(c.target_x >= 0 && c.target_y >= 0, "target_x/target_y must be >= 0");
  require(c.lambda >= 0.0, "lambda must be >= 0");
  require(c.grid_spacing >= 1, "grid_spacing must be >= 1");
  require(c.quantization >= 1 && c.search_radius >= 0 && c.search_radius % c.quantization == 0,
          "search_radius must be a nonnegative multiple of quantization");
  require(!c.coupling.empty(), "coupling needs at least one weight");
  for (std::size_t i = 0; i < c.coupling.size(); ++i)
    require(c.coupling[i] >= 0.0 && (i == 0 || c.coupling[i] >= c.coupling[i - 1]),
            "coupling weights must be nonnegative and non-decreasing");
  require(c.refine_grid_spacing >= 1, "refine_grid_spacing must be >= 1");
  c.adam.validate();
  require(c.lesion_label >= 1 && c.lesion_label <= 255, "lesion_label must be in [1,255]");
  require(c.threads >= 0, "threads must be >= 0");
  return c;
}

std::map<std::string, std::string> PipelineConfig::echo() const {
  return {
      {"fixed", fixed.string()},
      {"moving", moving.string()},
      {"fixed_mask", fixed_mask.string()},
      {"moving_mask", moving_mask.string()},
      {"output", output.string()},
      {"pair_id", pair_id},
      {"d", std::to_string(pca_dim)},
      {"k", std::to_string(slice_stride)},
      {"skip_pca", skip_pca ? "1" : "0"},
      {"normalize", normalize ? "1" : "0"},
      {"target_x", std::to_string(target_x)},
      {"target_y", std::to_string(target_y)},
      {"lambda", format_double(lambda)},
      {"grid_spacing", std::to_string(grid_spacing)},
      {"search_radius", std::to_string(search_radius)},
      {"quantization", std::to_string(quantization)},
      {"coupling", join(coupling)},
      {"refine_grid_spacing", std::to_string(refine_grid_spacing)},
      {"adam_lr", format_double(adam.learning_rate)},
      {"adam_iters", std::to_string(adam.iterations)},
      {"adam_beta1", format_double(adam.beta1)},
      {"adam_beta2", format_double(adam.beta2)},
      {"adam_eps", format_double(adam.epsilon)},
      {"seed", std::to_string(seed)},
      {"lesion_label", std::to_string(lesion_label)},
      {"dump_fields", dump_fields ? "1" : "0"},
      {"record_timing", record_timing ? "1" : "0"},
      {"threads", std::to_string(threads)},
  };
}

DiscreteParams PipelineConfig::discrete() const {
  DiscreteParams p;
  p.grid_spacing = grid_spacing;
  p.radius = search_radius;
  p.quantization = quantization;
  p.coupling.clear();
  for (double w : coupling) p.coupling.push_back(w * lambda);
  return p;
}

EnergyConfig PipelineConfig::energy() const { return {lambda, refine_grid_spacing}; }

double normalize_jointly(FeatureVolume& a, FeatureVolume& b) {
  if (a.channels() != b.channels()) throw Error(ErrorCode::DimensionMismatch, "channel counts differ");
  const Index C = a.channels();
  const double n = double(a.voxels() + b.voxels());
  const Eigen::RowVectorXd mean =
      (a.tokens().cast<double>().colwise().sum() + b.tokens().cast<double>().colwise().sum()) / n;
  double ss = 0.0;
  for (auto* v : {&a, &b}) ss += (v->tokens().cast<double>().rowwise() - mean).squaredNorm();
  const double rms = std::sqrt(ss / (n * double(C)));
  const double scale = rms > 0.0 ? 1.0 / rms : 1.0;
  for (auto* v : {&a, &b}) {
    const Index Z = v->dims().z, per = v->dims().x * v->dims().y;
    parallel_for(Z, [&](Index z) {
      auto rows = v->tokens().middleRows(z * per, per);
      rows = ((rows.cast<double>().rowwise() - mean) * scale).cast<float>();
    });
  }
  return rms > 0.0 ? rms : 1.0;
}

PreparedPair prepare_features(const PipelineConfig& cfg, const std::optional<Dims>& mask_dims) {
  FeatureVolume fixed = read_feature_volume(cfg.fixed);
  FeatureVolume moving = read_feature_volume(cfg.moving);
  if (fixed.channels() != moving.channels())
    throw Error(ErrorCode::DimensionMismatch, "fixed has " + std::to_string(fixed.channels()) + " channels, moving " +
                                                  std::to_string(moving.channels()));
  if (is_stack(fixed) != is_stack(moving))
    throw Error(ErrorCode::DimensionMismatch, "fixed and moving must both be slice stacks or both dense volumes");

  PreparedPair out;
  if (is_stack(fixed)) {
    for (auto* v : {&fixed, &moving})
      if (!v->meta().contains("slice_stride")) v->meta()["slice_stride"] = cfg.slice_stride;
    const SliceFeatureStack ref = stack_from_volume(fixed);
    const SliceFeatureStack mov = stack_from_volume(moving);
    if (ref.width != mov.width || ref.height != mov.height || ref.z_total != mov.z_total)
      throw Error(ErrorCode::DimensionMismatch, "fixed and moving stacks describe different grids");
    FeatureVolume ref_grid = interpolate_skipped_slices(ref);
    FeatureVolume mov_grid = interpolate_skipped_slices(mov);
    if (!cfg.skip_pca) {
      out.projection = fit_joint_pca(ref, mov, cfg.pca_dim);
      ref_grid = apply_pca(ref_grid, *out.projection);
      mov_grid = apply_pca(mov_grid, *out.projection);
    }
    std::optional<Dims> shape = header_volume_shape(fixed);
    if (!shape && mask_dims) shape = mask_dims;
    Index tx = cfg.target_x ? cfg.target_x : (shape ? shape->x : ref.width);
    Index ty = cfg.target_y ? cfg.target_y : (shape ? shape->y : ref.height);
    if (shape && shape->z != ref.z_total)
      throw Error(ErrorCode::DimensionMismatch, "stack has " + std::to_string(ref.z_total) + " slices, volume " +
                                                    to_string(*shape));
    out.fixed = upsample_to_volume(ref_grid, tx, ty);
    out.moving = upsample_to_volume(mov_grid, tx, ty);
    if (shape) {
      const Eigen::Vector3d sp = ref.spacing;
      out.fixed.set_spacing(sp);
      out.moving.set_spacing(sp);
    }
  } else {
    if (!fixed.same_grid(moving))
      throw Error(ErrorCode::DimensionMismatch, "fixed " + to_string(fixed.dims()) + " vs moving " + to_string(moving.dims()));
    if (cfg.skip_pca) {
      out.fixed = std::move(fixed);
      out.moving = std::move(moving);
    } else {
      out.projection = fit_joint_pca(fixed, moving, cfg.pca_dim);
      out.fixed = apply_pca(fixed, *out.projection);
      out.moving = apply_pca(moving, *out.projection);
    }
  }
  if (cfg.normalize) normalize_jointly(out.fixed, out.moving);
  if (mask_dims && !(*mask_dims == out.fixed.dims()))
    throw Error(ErrorCode::DimensionMismatch, "masks " + to_string(*mask_dims) + " do not match features " +
                                                  to_string(out.fixed.dims()));
  return out;
}

std::vector<int> present_labels(const LabelMask& a, const LabelMask& b) {
  std::set<int> s;
  for (auto v : a.data()) if (v) s.insert(v);
  for (auto v : b.data()) if (v) s.insert(v);
  return {s.begin(), s.end()};
}

RegistrationReport evaluate_masks(const LabelMask& fixed, const LabelMask& warped, const DisplacementField<float>* field,
                                  const LabelMask* moving, int lesion_label) {
  RegistrationReport r;
  for (int label : present_labels(fixed, warped))
    r.labels.push_back({label, dice(fixed, warped, static_cast<std::uint8_t>(label))});
  if (moving) {
    if (!moving->same_grid(warped)) throw Error(ErrorCode::DimensionMismatch, "moving and warped masks differ in dims");
    const auto lesion = static_cast<std::uint8_t>(lesion_label);
    if (std::find(moving->data().begin(), moving->data().end(), lesion) != moving->data().end())
      r.lesion_error = lesion_volume_error(warped, *moving, lesion);
  }
  if (field) {
    if (!(field->dims() == fixed.dims())) throw Error(ErrorCode::DimensionMismatch, "field and masks differ in dims");
    const Dims& d = field->dims();
    if (d.x >= 3 && d.y >= 3 && d.z >= 3) r.jacobian = jacobian_stats(*field);
  }
  return r;
}

RegisterResult register_pair(const PipelineConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& [p, what] : {std::pair{cfg.fixed, "fixed"}, std::pair{cfg.moving, "moving"}})
    if (p.empty() || !fs::is_regular_file(p))
      throw Error(ErrorCode::IoFailure, std::string(what) + " input '" + p.string() + "' does not exist");
  for (const auto& p : {cfg.fixed_mask, cfg.moving_mask})
    if (!p.empty() && !fs::is_regular_file(p)) throw Error(ErrorCode::IoFailure, "mask '" + p.string() + "' does not exist");
  if (cfg.threads > 0) set_worker_count(cfg.threads);

  std::optional<LabelMask> fixed_mask, moving_mask;
  if (!cfg.fixed_mask.empty()) fixed_mask = read_label_mask(cfg.fixed_mask);
  if (!cfg.moving_mask.empty()) moving_mask = read_label_mask(cfg.moving_mask);
  if (fixed_mask && moving_mask && !fixed_mask->same_grid(*moving_mask))
    throw Error(ErrorCode::DimensionMismatch, "fixed and moving masks differ in dims");
  std::optional<Dims> mask_dims;
  if (fixed_mask) mask_dims = fixed_mask->dims();
  else if (moving_mask) mask_dims = moving_mask->dims();

  PreparedPair prep = prepare_features(cfg, mask_dims);
  if (!prep.fixed.all_finite() || !prep.moving.all_finite())
    throw Error(ErrorCode::NumericFailure, "non-finite feature values after preparation");
  const Dims dims = prep.fixed.dims();

  RegisterResult res;
  res.stage1 = discrete_register(prep.fixed, prep.moving, cfg.discrete());
  check_finite(res.stage1, "stage-1 field");
  const DisplacementField<float> init = upsample_field(res.stage1, dims);
  const EnergyConfig ecfg = cfg.energy();
  RefineTrace trace;
  res.field = adam_refine(prep.fixed, prep.moving, init, ecfg, cfg.adam, &trace);
  check_finite(res.field, "refined field");
  res.warped = warp(prep.moving, res.field);

  RegistrationReport& rep = res.report;
  if (fixed_mask && moving_mask) {
    res.warped_mask = warp(*moving_mask, res.field);
    rep = evaluate_masks(*fixed_mask, *res.warped_mask, &res.field, &*moving_mask, cfg.lesion_label);
  } else if (dims.x >= 3 && dims.y >= 3 && dims.z >= 3) {
    rep.jacobian = jacobian_stats(res.field);
  }
  rep.pair_id = cfg.pair_id;
  rep.energy_init = energy(prep.fixed, prep.moving, DisplacementField<float>(dims), ecfg);
  rep.energy_final = trace.best_energy;
  rep.config = cfg.echo();
  if (prep.projection) {
    rep.config["pca_explained_variance"] = prep.projection->record()["explained_variance"].dump();
    res.warped.meta()["pca"] = prep.projection->record();
  }
  if (cfg.record_timing)
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!std::isfinite(*rep.energy_init) || !std::isfinite(*rep.energy_final))
    throw Error(ErrorCode::NumericFailure, "non-finite energy");
  rep.validate();
  return res;
}

namespace {

int exit_code_for(const Error& e) {
  return e.code() == ErrorCode::NumericFailure ? kExitNumeric : kExitUsage;
}

void write_outputs(const PipelineConfig& cfg, const RegisterResult& res) {
  fs::create_directories(cfg.output);
  auto field_vol = to_volume(res.field, res.warped.spacing());
  field_vol.meta()["pair_id"] = cfg.pair_id;
  write_fvol(field_vol, cfg.output / "field.fvol");
  write_fvol(res.warped, cfg.output / "warped.fvol");
  if (res.warped_mask) write_fvol(*res.warped_mask, cfg.output / "warped_mask.fvol");
  if (cfg.dump_fields) {
    auto s1 = to_volume(res.stage1);
    s1.meta()["grid_spacing"] = cfg.grid_spacing;
    s1.meta()["volume_shape"] = {res.field.dims().x, res.field.dims().y, res.field.dims().z};
    write_fvol(s1, cfg.output / "stage1_field.fvol");
  }
  write_report(res.report, cfg.output / "report.csv", ReportFormat::Csv);
  write_report(res.report, cfg.output / "report.json", ReportFormat::Json);
}

}  // namespace

int cmd_register(const PipelineConfig& cfg, std::ostream& err) {
  try {
    if (cfg.output.empty()) throw Error(ErrorCode::InvalidArgument, "no output directory given");
    const RegisterResult res = register_pair(cfg);
    write_outputs(cfg, res);
    return kExitOk;
  } catch (const Error& e) {
    err << "featreg register: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "featreg register: " << e.what() << "\n";
    return kExitUsage;
  }
}

double peak_memory_mb() {
  std::ifstream is("/proc/self/status");
  std::string line;
  while (std::getline(is, line))
    if (line.rfind("VmHWM:", 0) == 0) return std::stod(line.substr(6)) / 1024.0;  // kB
  return 0.0;
}

int cmd_sweep(const PipelineConfig& base, const std::vector<Index>& d_values, int jobs, std::ostream& err) {
  if (d_values.empty()) {
    err << "featreg sweep: no d values given\n";
    return kExitUsage;
  }
  if (base.output.empty()) {
    err << "featreg sweep: no output directory given\n";
    return kExitUsage;
  }
  struct Outcome {
    int code = kExitOk;
    std::string message;
    std::optional<RegistrationReport> report;
    double memory_mb = 0.0;
  };
  const auto run_one = [&](Index d) {
    Outcome o;
    PipelineConfig cfg = base;
    cfg.pca_dim = d;
    cfg.output = base.output / ("d_" + std::to_string(d));
    cfg.pair_id = base.pair_id;
    try {
      RegisterResult res = register_pair(cfg);
      write_outputs(cfg, res);
      o.report = std::move(res.report);
    } catch (const Error& e) {
      o.code = exit_code_for(e);
      o.message = e.what();
    } catch (const std::exception& e) {
      o.code = kExitUsage;
      o.message = e.what();
    }
    o.memory_mb = peak_memory_mb();
    return o;
  };

  std::vector<Outcome> outcomes(d_values.size());
  if (jobs <= 1) {
    for (std::size_t i = 0; i < d_values.size(); ++i) outcomes[i] = run_one(d_values[i]);
  } else {
    for (std::size_t start = 0; start < d_values.size(); start += static_cast<std::size_t>(jobs)) {
      std::vector<std::future<Outcome>> batch;
      for (std::size_t i = start; i < std::min(d_values.size(), start + static_cast<std::size_t>(jobs)); ++i)
        batch.push_back(std::async(std::launch::async, run_one, d_values[i]));
      for (std::size_t i = 0; i < batch.size(); ++i) outcomes[start + i] = batch[i].get();
    }
  }

  int worst = kExitOk;
  std::string table = "d," + csv_header().substr(0, csv_header().size() - 1) + ",peak_memory_mb,status\n";
  char mem[32];
  for (std::size_t i = 0; i < d_values.size(); ++i) {
    const Outcome& o = outcomes[i];
    worst = std::max(worst, o.code);
    std::snprintf(mem, sizeof mem, "%.3f", o.memory_mb);
    if (o.report) {
      for (const auto& row : report_rows(*o.report)) {
        table += std::to_string(d_values[i]);
        for (const auto& cell : row) table += "," + cell;
        table += std::string(",") + mem + ",ok\n";
      }
    } else {
      err << "featreg sweep: d=" << d_values[i] << ": " << o.message << "\n";
      table += std::to_string(d_values[i]) + "," + base.pair_id + ",,,,,,,,," + mem + ",exit_" + std::to_string(o.code) + "\n";
    }
  }
  try {
    fs::create_directories(base.output);
    std::ofstream os(base.output / "sweep.csv", std::ios::binary | std::ios::trunc);
    os << table;
    if (!os) throw Error(ErrorCode::IoFailure, "cannot write sweep.csv");
  } catch (const std::exception& e) {
    err << "featreg sweep: " << e.what() << "\n";
    return kExitUsage;
  }
  return worst;
}

int cmd_evaluate(const fs::path& fixed_mask, const fs::path& warped_mask, const fs::path& field_path,
                 const fs::path& moving_mask, int lesion_label, const fs::path& out, std::ostream& err) {
  try {
    const LabelMask fixed = read_label_mask(fixed_mask);
    const LabelMask warped = read_label_mask(warped_mask);
    if (!fixed.same_grid(warped))
      throw Error(ErrorCode::DimensionMismatch, "fixed " + to_string(fixed.dims()) + " vs warped " + to_string(warped.dims()));
    std::optional<DisplacementField<float>> field;
    if (!field_path.empty()) field = field_from_volume(read_feature_volume(field_path));
    std::optional<LabelMask> moving;
    if (!moving_mask.empty()) moving = read_label_mask(moving_mask);
    RegistrationReport r = evaluate_masks(fixed, warped, field ? &*field : nullptr, moving ? &*moving : nullptr, lesion_label);
    r.pair_id = fixed_mask.stem().string();
    const auto ext = out.extension().string();
    write_report(r, out, ext == ".json" ? ReportFormat::Json : ReportFormat::Csv);
    return kExitOk;
  } catch (const Error& e) {
    err << "featreg evaluate: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "featreg evaluate: " << e.what() << "\n";
    return kExitUsage;
  }
}

}  // namespace featreg
