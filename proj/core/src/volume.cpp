#include "cacdec/volume.hpp"

#include <algorithm>
#include <bit>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace cacdec {

static_assert(std::endian::native == std::endian::little,
              "container payloads are little-endian");

size_t BinaryMask::count() const {
  size_t n = 0;
  for (uint8_t v : data_) n += (v != 0);
  return n;
}

Volume BinaryMask::to_volume() const {
  Volume v(nx_, ny_, nz_, spacing_, origin_);
  for (size_t i = 0; i < data_.size(); ++i) v.data()[i] = data_[i] ? 1.0f : 0.0f;
  return v;
}

namespace {

struct Sidecar {
  std::array<int, 3> dims;
  Vec3 spacing, origin;
  std::string dtype;
  fs::path raw_path;
};

Sidecar read_sidecar(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open volume sidecar: " + path);
  json j;
  in >> j;
  Sidecar s;
  auto d = j.at("dims");
  s.dims = {d.at(0).get<int>(), d.at(1).get<int>(), d.at(2).get<int>()};
  auto sp = j.at("spacing_mm");
  s.spacing = {sp.at(0).get<double>(), sp.at(1).get<double>(), sp.at(2).get<double>()};
  if (j.contains("origin_mm")) {
    auto o = j.at("origin_mm");
    s.origin = {o.at(0).get<double>(), o.at(1).get<double>(), o.at(2).get<double>()};
  }
  s.dtype = j.at("dtype").get<std::string>();
  if (j.value("byte_order", "little") != "little")
    throw std::runtime_error("unsupported byte order in " + path);
  std::string raw = j.value("raw", "");
  if (raw.empty()) {
    fs::path p(path);
    raw = p.stem().string() + ".raw";
  }
  s.raw_path = fs::path(path).parent_path() / raw;
  if (s.dims[0] < 1 || s.dims[1] < 1 || s.dims[2] < 1)
    throw std::runtime_error("volume dims must be >= 1: " + path);
  if (s.spacing.x <= 0 || s.spacing.y <= 0 || s.spacing.z <= 0)
    throw std::runtime_error("volume spacing must be positive: " + path);
  return s;
}

template <typename T>
std::vector<T> read_payload(const fs::path& raw, size_t count) {
  std::ifstream in(raw, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open volume payload: " + raw.string());
  in.seekg(0, std::ios::end);
  size_t bytes = static_cast<size_t>(in.tellg());
  if (bytes != count * sizeof(T))
    throw std::runtime_error("payload size mismatch for " + raw.string() + ": header expects " +
                             std::to_string(count * sizeof(T)) + " bytes, file has " +
                             std::to_string(bytes));
  in.seekg(0);
  std::vector<T> buf(count);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw std::runtime_error("short read on " + raw.string());
  return buf;
}

template <typename T>
void write_payload(const fs::path& raw, const std::vector<T>& buf) {
  std::ofstream out(raw, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write volume payload: " + raw.string());
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(T)));
  if (!out) throw std::runtime_error("short write on " + raw.string());
}

void write_sidecar(const std::string& path, const Volume& v, const std::string& dtype,
                   const std::string& raw_name) {
  json j;
  j["dims"] = {v.nx(), v.ny(), v.nz()};
  j["spacing_mm"] = {v.spacing().x, v.spacing().y, v.spacing().z};
  j["origin_mm"] = {v.origin().x, v.origin().y, v.origin().z};
  j["dtype"] = dtype;
  j["byte_order"] = "little";
  j["raw"] = raw_name;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write volume sidecar: " + path);
  out << j.dump(2) << "\n";
}

std::string raw_name_for(const std::string& path) {
  return fs::path(path).stem().string() + ".raw";
}

}  // namespace

Volume read_volume(const std::string& path) {
  Sidecar s = read_sidecar(path);
  if (s.dtype != "int16")
    throw std::runtime_error("expected int16 volume, got dtype '" + s.dtype + "' in " + path);
  auto buf = read_payload<int16_t>(s.raw_path,
                                   static_cast<size_t>(s.dims[0]) * s.dims[1] * s.dims[2]);
  Volume v(s.dims[0], s.dims[1], s.dims[2], s.spacing, s.origin);
  std::transform(buf.begin(), buf.end(), v.data().begin(),
                 [](int16_t x) { return static_cast<float>(x); });
  return v;
}

void write_volume(const std::string& path, const Volume& v) {
  std::vector<int16_t> buf(v.size());
  for (size_t i = 0; i < v.size(); ++i) {
    float x = std::round(v.data()[i]);
    x = std::min(std::max(x, -32768.0f), 32767.0f);
    buf[i] = static_cast<int16_t>(x);
  }
  std::string raw = raw_name_for(path);
  write_sidecar(path, v, "int16", raw);
  write_payload(fs::path(path).parent_path() / raw, buf);
}

Volume read_float_volume(const std::string& path) {
  Sidecar s = read_sidecar(path);
  if (s.dtype != "float32")
    throw std::runtime_error("expected float32 volume, got dtype '" + s.dtype + "' in " + path);
  auto buf = read_payload<float>(s.raw_path,
                                 static_cast<size_t>(s.dims[0]) * s.dims[1] * s.dims[2]);
  Volume v(s.dims[0], s.dims[1], s.dims[2], s.spacing, s.origin);
  v.data() = std::move(buf);
  return v;
}

void write_float_volume(const std::string& path, const Volume& v) {
  std::string raw = raw_name_for(path);
  write_sidecar(path, v, "float32", raw);
  write_payload(fs::path(path).parent_path() / raw, v.data());
}

BinaryMask read_mask(const std::string& path) {
  Volume v = read_volume(path);
  BinaryMask m(v.nx(), v.ny(), v.nz(), v.spacing(), v.origin());
  for (size_t i = 0; i < v.size(); ++i) m.data()[i] = v.data()[i] > 0.5f ? 1 : 0;
  return m;
}

void write_mask(const std::string& path, const BinaryMask& m) {
  Volume v(m.nx(), m.ny(), m.nz(), m.spacing(), m.origin());
  for (size_t i = 0; i < m.size(); ++i) v.data()[i] = m.data()[i] ? 1.0f : 0.0f;
  write_volume(path, v);
}

namespace {

int output_dim(int n, double sp_in, double sp_out) {
  // Preserve the edge-to-edge extent; the epsilon keeps identity resampling exact.
  double extent = n * sp_in;
  return std::max(1, static_cast<int>(std::ceil(extent / sp_out - 1e-9)));
}

inline float sample_linear(const Volume& v, double fx, double fy, double fz) {
  int nx = v.nx(), ny = v.ny(), nz = v.nz();
  auto clampi = [](int i, int n) { return std::min(std::max(i, 0), n - 1); };
  int x0 = static_cast<int>(std::floor(fx));
  int y0 = static_cast<int>(std::floor(fy));
  int z0 = static_cast<int>(std::floor(fz));
  double tx = fx - x0, ty = fy - y0, tz = fz - z0;
  int x1 = clampi(x0 + 1, nx), y1 = clampi(y0 + 1, ny), z1 = clampi(z0 + 1, nz);
  x0 = clampi(x0, nx);
  y0 = clampi(y0, ny);
  z0 = clampi(z0, nz);
  double c00 = v.at(x0, y0, z0) * (1 - tx) + v.at(x1, y0, z0) * tx;
  double c10 = v.at(x0, y1, z0) * (1 - tx) + v.at(x1, y1, z0) * tx;
  double c01 = v.at(x0, y0, z1) * (1 - tx) + v.at(x1, y0, z1) * tx;
  double c11 = v.at(x0, y1, z1) * (1 - tx) + v.at(x1, y1, z1) * tx;
  double c0 = c00 * (1 - ty) + c10 * ty;
  double c1 = c01 * (1 - ty) + c11 * ty;
  return static_cast<float>(c0 * (1 - tz) + c1 * tz);
}

inline float sample_nearest(const Volume& v, double fx, double fy, double fz) {
  auto clampi = [](int i, int n) { return std::min(std::max(i, 0), n - 1); };
  int x = clampi(static_cast<int>(std::lround(fx)), v.nx());
  int y = clampi(static_cast<int>(std::lround(fy)), v.ny());
  int z = clampi(static_cast<int>(std::lround(fz)), v.nz());
  return v.at(x, y, z);
}

}  // namespace

Volume resample(const Volume& v, Vec3 sp, Interp interp) {
  if (sp.x <= 0 || sp.y <= 0 || sp.z <= 0)
    throw std::invalid_argument("resample: target spacing must be positive");
  int nx = output_dim(v.nx(), v.spacing().x, sp.x);
  int ny = output_dim(v.ny(), v.spacing().y, sp.y);
  int nz = output_dim(v.nz(), v.spacing().z, sp.z);
  // Keep the leading cell edge fixed: output voxel 0 is centered half an
  // output voxel into the region that started half an input voxel before origin.
  Vec3 origin{v.origin().x - v.spacing().x / 2 + sp.x / 2,
              v.origin().y - v.spacing().y / 2 + sp.y / 2,
              v.origin().z - v.spacing().z / 2 + sp.z / 2};
  Volume out(nx, ny, nz, sp, origin);
#pragma omp parallel for schedule(static)
  for (int z = 0; z < nz; ++z) {
    for (int y = 0; y < ny; ++y) {
      for (int x = 0; x < nx; ++x) {
        Vec3 p = out.position(x, y, z);
        Vec3 f = v.to_voxel(p);
        out.at(x, y, z) = interp == Interp::Linear ? sample_linear(v, f.x, f.y, f.z)
                                                   : sample_nearest(v, f.x, f.y, f.z);
      }
    }
  }
  return out;
}

BinaryMask resample_mask(const BinaryMask& m, Vec3 sp) {
  Volume v = m.to_volume();
  Volume r = resample(v, sp, Interp::Nearest);
  BinaryMask out(r.nx(), r.ny(), r.nz(), r.spacing(), r.origin());
  for (size_t i = 0; i < r.size(); ++i) out.data()[i] = r.data()[i] > 0.5f ? 1 : 0;
  return out;
}

Volume resample_to_grid(const Volume& v, const Volume& ref, Interp interp) {
  Volume out(ref.nx(), ref.ny(), ref.nz(), ref.spacing(), ref.origin());
#pragma omp parallel for schedule(static)
  for (int z = 0; z < out.nz(); ++z) {
    for (int y = 0; y < out.ny(); ++y) {
      for (int x = 0; x < out.nx(); ++x) {
        Vec3 f = v.to_voxel(out.position(x, y, z));
        out.at(x, y, z) = interp == Interp::Linear ? sample_linear(v, f.x, f.y, f.z)
                                                   : sample_nearest(v, f.x, f.y, f.z);
      }
    }
  }
  return out;
}

BinaryMask resample_mask_to_grid(const BinaryMask& m, const Volume& ref) {
  Volume r = resample_to_grid(m.to_volume(), ref, Interp::Nearest);
  BinaryMask out(r.nx(), r.ny(), r.nz(), r.spacing(), r.origin());
  for (size_t i = 0; i < r.size(); ++i) out.data()[i] = r.data()[i] > 0.5f ? 1 : 0;
  return out;
}

NormalizedSlice normalize_slice(const Volume& v, int slice_index, Vec3 center, int side,
                                HuWindow window) {
  if (slice_index < 0 || slice_index >= v.nz())
    throw std::out_of_range("normalize_slice: slice index " + std::to_string(slice_index) +
                            " out of range [0," + std::to_string(v.nz()) + ")");
  if (side <= 0) throw std::invalid_argument("normalize_slice: side must be positive");
  NormalizedSlice s;
  s.side = side;
  s.slice_index = slice_index;
  s.window = window;
  s.x0 = static_cast<int>(std::lround(center.x)) - side / 2;
  s.y0 = static_cast<int>(std::lround(center.y)) - side / 2;
  s.data.resize(static_cast<size_t>(side) * side);
  const float pad = static_cast<float>(window.normalize(0.0));  // 0 HU padding
  for (int y = 0; y < side; ++y) {
    int vy = s.y0 + y;
    for (int x = 0; x < side; ++x) {
      int vx = s.x0 + x;
      float val = pad;
      if (vx >= 0 && vx < v.nx() && vy >= 0 && vy < v.ny())
        val = static_cast<float>(window.normalize(v.at(vx, vy, slice_index)));
      s.at(x, y) = val;
    }
  }
  return s;
}

Vec3 center_of_mass(const BinaryMask& m) {
  double sx = 0, sy = 0, sz = 0;
  size_t n = 0;
  for (int z = 0; z < m.nz(); ++z)
    for (int y = 0; y < m.ny(); ++y)
      for (int x = 0; x < m.nx(); ++x)
        if (m.at(x, y, z)) {
          sx += x;
          sy += y;
          sz += z;
          ++n;
        }
  if (n == 0) throw std::invalid_argument("center_of_mass: empty mask");
  return {sx / n, sy / n, sz / n};
}

}  // namespace cacdec
