// 3D volume data model, container I/O, resampling and slice normalization.
//
// The on-disk container is a two-file format: a JSON sidecar
// {dims, spacing_mm, origin_mm, dtype, byte_order, raw} next to a raw
// little-endian payload in x-fastest order. Scan volumes are stored as
// int16 HU; auxiliary maps (calcium maps, phantom truth) use float32.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace cacdec {

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

inline bool operator==(const Vec3& a, const Vec3& b) {
  return a.x == b.x && a.y == b.y && a.z == b.z;
}

// Scalar field on a regular anisotropic grid. Values are Hounsfield units
// for scan volumes; derived maps reuse the carrier with other units.
class Volume {
 public:
  Volume() = default;
  Volume(int nx, int ny, int nz, Vec3 spacing, Vec3 origin = {}, float fill = 0.0f)
      : nx_(nx), ny_(ny), nz_(nz), spacing_(spacing), origin_(origin),
        data_(static_cast<size_t>(nx) * ny * nz, fill) {
    if (nx < 1 || ny < 1 || nz < 1)
      throw std::invalid_argument("Volume: dims must be >= 1");
    if (spacing.x <= 0 || spacing.y <= 0 || spacing.z <= 0)
      throw std::invalid_argument("Volume: spacing must be positive");
  }

  int nx() const { return nx_; }
  int ny() const { return ny_; }
  int nz() const { return nz_; }
  size_t size() const { return data_.size(); }
  const Vec3& spacing() const { return spacing_; }
  const Vec3& origin() const { return origin_; }
  void set_origin(const Vec3& o) { origin_ = o; }

  double voxel_volume_mm3() const { return spacing_.x * spacing_.y * spacing_.z; }

  size_t index(int x, int y, int z) const {
    return static_cast<size_t>(z) * ny_ * nx_ + static_cast<size_t>(y) * nx_ + x;
  }
  float& at(int x, int y, int z) { return data_[index(x, y, z)]; }
  float at(int x, int y, int z) const { return data_[index(x, y, z)]; }
  bool in_bounds(int x, int y, int z) const {
    return x >= 0 && x < nx_ && y >= 0 && y < ny_ && z >= 0 && z < nz_;
  }

  std::vector<float>& data() { return data_; }
  const std::vector<float>& data() const { return data_; }

  // Physical position of a voxel center.
  Vec3 position(int x, int y, int z) const {
    return {origin_.x + x * spacing_.x, origin_.y + y * spacing_.y,
            origin_.z + z * spacing_.z};
  }
  // Continuous voxel coordinate of a physical point.
  Vec3 to_voxel(const Vec3& p) const {
    return {(p.x - origin_.x) / spacing_.x, (p.y - origin_.y) / spacing_.y,
            (p.z - origin_.z) / spacing_.z};
  }

  bool same_grid(const Volume& o) const {
    return nx_ == o.nx_ && ny_ == o.ny_ && nz_ == o.nz_ &&
           spacing_ == o.spacing_ && origin_ == o.origin_;
  }

 private:
  int nx_ = 0, ny_ = 0, nz_ = 0;
  Vec3 spacing_{1, 1, 1};
  Vec3 origin_{};
  std::vector<float> data_;
};

// Binary mask on the same grid family as Volume. Values are {0,1}.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int nx, int ny, int nz, Vec3 spacing, Vec3 origin = {})
      : nx_(nx), ny_(ny), nz_(nz), spacing_(spacing), origin_(origin),
        data_(static_cast<size_t>(nx) * ny * nz, 0) {}

  int nx() const { return nx_; }
  int ny() const { return ny_; }
  int nz() const { return nz_; }
  size_t size() const { return data_.size(); }
  const Vec3& spacing() const { return spacing_; }
  const Vec3& origin() const { return origin_; }

  size_t index(int x, int y, int z) const {
    return static_cast<size_t>(z) * ny_ * nx_ + static_cast<size_t>(y) * nx_ + x;
  }
  uint8_t& at(int x, int y, int z) { return data_[index(x, y, z)]; }
  uint8_t at(int x, int y, int z) const { return data_[index(x, y, z)]; }
  bool in_bounds(int x, int y, int z) const {
    return x >= 0 && x < nx_ && y >= 0 && y < ny_ && z >= 0 && z < nz_;
  }

  std::vector<uint8_t>& data() { return data_; }
  const std::vector<uint8_t>& data() const { return data_; }

  size_t count() const;

  bool grid_compatible(const Volume& v) const {
    return nx_ == v.nx() && ny_ == v.ny() && nz_ == v.nz() &&
           spacing_ == v.spacing() && origin_ == v.origin();
  }
  bool same_grid(const BinaryMask& o) const {
    return nx_ == o.nx_ && ny_ == o.ny_ && nz_ == o.nz_ &&
           spacing_ == o.spacing_ && origin_ == o.origin_;
  }

  Volume to_volume() const;

 private:
  int nx_ = 0, ny_ = 0, nz_ = 0;
  Vec3 spacing_{1, 1, 1};
  Vec3 origin_{};
  std::vector<uint8_t> data_;
};

// HU window used for all network inputs. The clipped window maps linearly
// onto [0,1], so 1 normalized unit corresponds to 1000 HU of attenuation.
struct HuWindow {
  double lo = -50.0;
  double hi = 950.0;
  double width() const { return hi - lo; }
  double normalize(double hu) const {
    double c = std::min(std::max(hu, lo), hi);
    return (c - lo) / width();
  }
  double denormalize(double v) const { return v * width() + lo; }
  // Attenuation differences scale by the window width alone.
  double delta_to_hu(double dv) const { return dv * width(); }
};

// Axial crop, clipped to the HU window and scaled to [0,1].
struct NormalizedSlice {
  int side = 0;
  int slice_index = 0;
  int x0 = 0, y0 = 0;  // crop window origin in volume voxel coords
  HuWindow window;
  std::vector<float> data;  // side*side, row-major (y, x)

  float at(int x, int y) const { return data[static_cast<size_t>(y) * side + x]; }
  float& at(int x, int y) { return data[static_cast<size_t>(y) * side + x]; }
};

// --- container I/O ---------------------------------------------------------

// Reads an int16 HU volume. `path` is the JSON sidecar.
Volume read_volume(const std::string& path);
// Writes HU values as int16 (round-to-nearest, clamped to the int16 range).
void write_volume(const std::string& path, const Volume& v);

// float32 variant used for calcium maps and phantom truth payloads.
Volume read_float_volume(const std::string& path);
void write_float_volume(const std::string& path, const Volume& v);

BinaryMask read_mask(const std::string& path);
void write_mask(const std::string& path, const BinaryMask& m);

// --- operations ------------------------------------------------------------

enum class Interp { Linear, Nearest };

// Resamples to the target spacing, preserving the physical extent to within
// one target voxel. Linear is intended for images, nearest for label-like data.
Volume resample(const Volume& v, Vec3 target_spacing, Interp interp);
BinaryMask resample_mask(const BinaryMask& m, Vec3 target_spacing);

// Resamples v onto exactly the grid of `reference` (dims, spacing, origin).
Volume resample_to_grid(const Volume& v, const Volume& reference, Interp interp);
BinaryMask resample_mask_to_grid(const BinaryMask& m, const Volume& reference);

// side x side crop of an axial slice centered on `center` (voxel coords),
// padded with 0 HU where the crop exceeds bounds, clipped and scaled to [0,1].
NormalizedSlice normalize_slice(const Volume& v, int slice_index, Vec3 center,
                                int side, HuWindow window = {});

// Arithmetic mean of foreground voxel coordinates. Throws on an empty mask.
Vec3 center_of_mass(const BinaryMask& m);

}  // namespace cacdec
