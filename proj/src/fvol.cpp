#include "featreg/fvol.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace featreg {
namespace {

using nlohmann::json;

constexpr std::size_t kPrefixBytes = 8;

template <typename T>
constexpr const char* dtype_name() {
  if constexpr (std::is_same_v<T, float>) return "f32";
  else return "u8";
}

template <typename T>
json header_json(const Volume<T>& vol) {
  json h = vol.meta().is_object() ? vol.meta() : json::object();
  const Dims& d = vol.dims();
  h["shape"] = {d.x, d.y, d.z, vol.channels()};
  h["dtype"] = dtype_name<T>();
  h["spacing"] = {vol.spacing().x(), vol.spacing().y(), vol.spacing().z()};
  return h;
}

void put_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32_le(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}

template <typename T>
void append_payload(std::string& out, const std::vector<T>& data) {
  const std::size_t offset = out.size();
  out.resize(offset + data.size() * sizeof(T));
  std::memcpy(out.data() + offset, data.data(), data.size() * sizeof(T));
  if constexpr (sizeof(T) > 1 && std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < data.size(); ++i)
      std::reverse(out.begin() + offset + i * sizeof(T), out.begin() + offset + (i + 1) * sizeof(T));
  }
}

template <typename T>
void write_impl(const Volume<T>& vol, const std::filesystem::path& path) {
  if (static_cast<Index>(vol.data().size()) != vol.voxels() * vol.channels())
    throw Error(ErrorCode::InvariantViolation, "data length does not match shape");
  if (!vol.all_finite())
    throw Error(ErrorCode::InvariantViolation, "non-finite value in " + path.string());
  const std::string header = header_json(vol).dump();
  std::string bytes(kFvolMagic, 4);
  put_u32_le(bytes, static_cast<std::uint32_t>(header.size()));
  bytes += header;
  append_payload(bytes, vol.data());

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error(ErrorCode::IoFailure, "short write to " + path.string());
}

template <typename T>
Volume<T> decode(const json& h, const unsigned char* payload, std::size_t payload_bytes,
                 const std::string& name) {
  const auto& shape = h.at("shape");
  const Dims dims{shape[0].get<Index>(), shape[1].get<Index>(), shape[2].get<Index>()};
  const Index channels = shape[3].get<Index>();
  const auto& sp = h.at("spacing");
  const Eigen::Vector3d spacing(sp[0].get<double>(), sp[1].get<double>(), sp[2].get<double>());
  const std::size_t expected = static_cast<std::size_t>(dims.voxels() * channels) * sizeof(T);
  if (payload_bytes != expected)
    throw Error(ErrorCode::TruncatedPayload, name + ": payload has " + std::to_string(payload_bytes) +
                                                 " bytes, shape requires " + std::to_string(expected));
  Volume<T> vol(dims, channels, spacing);
  std::memcpy(vol.data().data(), payload, expected);
  if constexpr (sizeof(T) > 1 && std::endian::native == std::endian::big) {
    auto* raw = reinterpret_cast<unsigned char*>(vol.data().data());
    for (std::size_t i = 0; i < vol.data().size(); ++i) std::reverse(raw + i * sizeof(T), raw + (i + 1) * sizeof(T));
  }
  if (!vol.all_finite()) throw Error(ErrorCode::InvariantViolation, name + ": non-finite payload value");
  json meta = h;
  meta.erase("shape");
  meta.erase("dtype");
  meta.erase("spacing");
  vol.meta() = std::move(meta);
  return vol;
}

}  // namespace

AnyVolume read_fvol(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const std::string name = path.string();
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kFvolMagic, 4) != 0)
    throw Error(ErrorCode::BadMagic, name + " is not an FVOL file");
  if (bytes.size() < kPrefixBytes) throw Error(ErrorCode::BadHeader, name + ": missing header length");
  const std::size_t header_len = get_u32_le(bytes.data() + 4);
  if (bytes.size() < kPrefixBytes + header_len)
    throw Error(ErrorCode::BadHeader, name + ": header length exceeds file size");

  json h;
  try {
    h = json::parse(bytes.begin() + kPrefixBytes, bytes.begin() + static_cast<std::ptrdiff_t>(kPrefixBytes + header_len));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadHeader, name + ": " + e.what());
  }
  const auto bad = [&](const std::string& why) { return Error(ErrorCode::BadHeader, name + ": " + why); };
  if (!h.is_object()) throw bad("header is not a JSON object");
  for (const char* key : {"shape", "dtype", "spacing"})
    if (!h.contains(key)) throw bad(std::string("missing required key '") + key + "'");
  const auto& shape = h["shape"];
  if (!shape.is_array() || shape.size() != 4 ||
      !std::all_of(shape.begin(), shape.end(), [](const json& v) { return v.is_number_integer() && v.get<Index>() >= 1; }))
    throw bad("shape must be four positive integers");
  const auto& sp = h["spacing"];
  if (!sp.is_array() || sp.size() != 3 ||
      !std::all_of(sp.begin(), sp.end(), [](const json& v) { return v.is_number() && v.get<double>() > 0.0; }))
    throw bad("spacing must be three positive numbers");
  if (!h["dtype"].is_string()) throw bad("dtype must be a string");

  const unsigned char* payload = bytes.data() + kPrefixBytes + header_len;
  const std::size_t payload_bytes = bytes.size() - kPrefixBytes - header_len;
  const std::string dtype = h["dtype"].get<std::string>();
  if (dtype == "f32") return decode<float>(h, payload, payload_bytes, name);
  if (dtype == "u8") return decode<std::uint8_t>(h, payload, payload_bytes, name);
  throw bad("unsupported dtype '" + dtype + "'");
}

FeatureVolume read_feature_volume(const std::filesystem::path& path) {
  auto v = read_fvol(path);
  if (auto* f = std::get_if<FeatureVolume>(&v)) return std::move(*f);
  throw Error(ErrorCode::BadHeader, path.string() + ": expected dtype f32");
}

LabelMask read_label_mask(const std::filesystem::path& path) {
  auto v = read_fvol(path);
  if (auto* m = std::get_if<LabelMask>(&v)) return std::move(*m);
  throw Error(ErrorCode::BadHeader, path.string() + ": expected dtype u8");
}

void write_fvol(const FeatureVolume& vol, const std::filesystem::path& path) { write_impl(vol, path); }
void write_fvol(const LabelMask& vol, const std::filesystem::path& path) { write_impl(vol, path); }

std::string fvol_header(const FeatureVolume& vol) { return header_json(vol).dump(); }
std::string fvol_header(const LabelMask& vol) { return header_json(vol).dump(); }

}  // namespace featreg
