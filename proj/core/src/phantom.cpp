#include "cacdec/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace cacdec::phantom {

namespace {

double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  Vec3 ab{b.x - a.x, b.y - a.y, b.z - a.z};
  Vec3 ap{p.x - a.x, p.y - a.y, p.z - a.z};
  double len2 = ab.x * ab.x + ab.y * ab.y + ab.z * ab.z;
  double t = len2 > 0 ? (ap.x * ab.x + ap.y * ab.y + ap.z * ab.z) / len2 : 0;
  t = std::clamp(t, 0.0, 1.0);
  Vec3 q{a.x + t * ab.x - p.x, a.y + t * ab.y - p.y, a.z + t * ab.z - p.z};
  return std::sqrt(q.x * q.x + q.y * q.y + q.z * q.z);
}

double point_polyline_distance(const Vec3& p, const std::vector<Vec3>& path) {
  double best = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i + 1 < path.size(); ++i)
    best = std::min(best, point_segment_distance(p, path[i], path[i + 1]));
  return best;
}

// 1D mass-conserving Gaussian scatter along one axis of a local box.
// Each source cell distributes its value with unit-sum weights (renormalized
// where the kernel is truncated by the box), so the box sum is unchanged.
void blur_axis(std::vector<float>& buf, int nx, int ny, int nz, int axis, double sigma_vox) {
  if (sigma_vox <= 0) return;
  int radius = std::max(1, static_cast<int>(std::ceil(4.0 * sigma_vox)));
  std::vector<double> kernel(2 * radius + 1);
  for (int k = -radius; k <= radius; ++k)
    kernel[k + radius] = std::exp(-0.5 * (k / sigma_vox) * (k / sigma_vox));

  int dims[3] = {nx, ny, nz};
  int n = dims[axis];
  size_t stride[3] = {1, static_cast<size_t>(nx), static_cast<size_t>(nx) * ny};
  size_t s = stride[axis];
  int u_dim = axis == 0 ? ny : nx;
  int v_dim = axis == 2 ? ny : nz;
  size_t u_stride = axis == 0 ? stride[1] : stride[0];
  size_t v_stride = axis == 2 ? stride[1] : stride[2];

  std::vector<float> line(n);
  for (int v = 0; v < v_dim; ++v) {
    for (int u = 0; u < u_dim; ++u) {
      size_t base = u * u_stride + v * v_stride;
      for (int i = 0; i < n; ++i) line[i] = buf[base + i * s];
      for (int i = 0; i < n; ++i) buf[base + i * s] = 0;
      for (int i = 0; i < n; ++i) {
        if (line[i] == 0) continue;
        int lo = std::max(-radius, -i), hi = std::min(radius, n - 1 - i);
        double wsum = 0;
        for (int k = lo; k <= hi; ++k) wsum += kernel[k + radius];
        double scale = line[i] / wsum;
        for (int k = lo; k <= hi; ++k)
          buf[base + (i + k) * s] += static_cast<float>(scale * kernel[k + radius]);
      }
    }
  }
}

uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t x = a * 0x9e3779b97f4a7c15ULL + b + 0x7f4a7c15ULL;
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

}  // namespace

void PhantomSpec::validate() const {
  if (dims[0] < 1 || dims[1] < 1 || dims[2] < 1)
    throw std::invalid_argument("phantom: dims must be >= 1");
  if (spacing_mm.x <= 0 || spacing_mm.y <= 0 || spacing_mm.z <= 0)
    throw std::invalid_argument("phantom: spacing must be positive");
  auto check_ell = [](const Ellipsoid& e, const char* what) {
    if (e.radii_mm.x <= 0 || e.radii_mm.y <= 0 || e.radii_mm.z <= 0)
      throw std::invalid_argument(std::string("phantom: degenerate ellipsoid: ") + what);
  };
  check_ell(body, "body");
  check_ell(heart, "heart");
  for (const auto& l : lungs) check_ell(l, "lung");
  for (const auto& b : bones) check_ell(b, "bone");
  for (const auto& a : arteries) {
    if (a.radius_mm <= 0) throw std::invalid_argument("phantom: artery radius must be > 0");
    if (a.blur_sigma_mm < 0) throw std::invalid_argument("phantom: blur sigma must be >= 0");
    if (a.path_mm.size() < 2) throw std::invalid_argument("phantom: artery path needs >= 2 points");
  }
  Vec3 extent{dims[0] * spacing_mm.x, dims[1] * spacing_mm.y, dims[2] * spacing_mm.z};
  for (const auto& l : lesions) {
    if (l.radius_mm <= 0) throw std::invalid_argument("phantom: lesion radius must be > 0");
    if (l.artery < 0 || l.artery >= static_cast<int>(arteries.size()))
      throw std::invalid_argument("phantom: lesion references unknown artery");
    if (l.center_mm.x - l.radius_mm < -spacing_mm.x || l.center_mm.x + l.radius_mm > extent.x ||
        l.center_mm.y - l.radius_mm < -spacing_mm.y || l.center_mm.y + l.radius_mm > extent.y ||
        l.center_mm.z - l.radius_mm < -spacing_mm.z || l.center_mm.z + l.radius_mm > extent.z)
      throw std::invalid_argument("phantom: lesion extends outside the grid");
    double d = point_polyline_distance(l.center_mm, arteries[l.artery].path_mm);
    if (d > arteries[l.artery].radius_mm + 1e-6)
      throw std::invalid_argument("phantom: lesion center is not on its artery path");
  }
  if (noise_sigma_hu < 0) throw std::invalid_argument("phantom: noise sigma must be >= 0");
}

std::pair<Volume, PhantomTruth> generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  const int nx = spec.dims[0], ny = spec.dims[1], nz = spec.dims[2];
  Volume vol(nx, ny, nz, spec.spacing_mm);

  PhantomTruth truth;
  truth.truth_cac_map = Volume(nx, ny, nz, spec.spacing_mm);
  truth.labels.assign(vol.size(), 0);
  truth.heart_mask = BinaryMask(nx, ny, nz, spec.spacing_mm);
  truth.slice_has_cac.assign(nz, 0);

  // Background anatomy, painted by priority: air, body, lungs, heart, bone.
  for (int z = 0; z < nz; ++z) {
    for (int y = 0; y < ny; ++y) {
      for (int x = 0; x < nx; ++x) {
        Vec3 p = vol.position(x, y, z);
        double hu = spec.tissue.air;
        if (spec.body.contains(p)) hu = spec.tissue.body;
        for (const auto& l : spec.lungs)
          if (l.contains(p)) hu = spec.tissue.lung;
        if (spec.heart.contains(p)) {
          hu = spec.tissue.heart;
          truth.heart_mask.at(x, y, z) = 1;
        }
        for (const auto& b : spec.bones)
          if (b.contains(p)) hu = spec.tissue.bone;
        vol.at(x, y, z) = static_cast<float>(hu);
      }
    }
  }

  // Lesion attenuation field: per lesion, paint a local box, blur it with the
  // artery's motion sigma, and accumulate. The dominant contributor per voxel
  // defines the halo label used for per-lesion attribution downstream.
  std::vector<float> max_contrib(vol.size(), 0.0f);
  const double voxvol = vol.voxel_volume_mm3();
  for (size_t li = 0; li < spec.lesions.size(); ++li) {
    const LesionSpec& les = spec.lesions[li];
    const ArterySpec& art = spec.arteries[les.artery];
    double sigma = art.blur_sigma_mm;
    Vec3 sig_vox{sigma / spec.spacing_mm.x, sigma / spec.spacing_mm.y,
                 sigma / spec.spacing_mm.z};
    Vec3 cv = vol.to_voxel(les.center_mm);
    int pad_x = static_cast<int>(std::ceil(les.radius_mm / spec.spacing_mm.x + 4 * sig_vox.x)) + 1;
    int pad_y = static_cast<int>(std::ceil(les.radius_mm / spec.spacing_mm.y + 4 * sig_vox.y)) + 1;
    int pad_z = static_cast<int>(std::ceil(les.radius_mm / spec.spacing_mm.z + 4 * sig_vox.z)) + 1;
    int x0 = std::max(0, static_cast<int>(std::floor(cv.x)) - pad_x);
    int y0 = std::max(0, static_cast<int>(std::floor(cv.y)) - pad_y);
    int z0 = std::max(0, static_cast<int>(std::floor(cv.z)) - pad_z);
    int x1 = std::min(nx - 1, static_cast<int>(std::ceil(cv.x)) + pad_x);
    int y1 = std::min(ny - 1, static_cast<int>(std::ceil(cv.y)) + pad_y);
    int z1 = std::min(nz - 1, static_cast<int>(std::ceil(cv.z)) + pad_z);
    int bnx = x1 - x0 + 1, bny = y1 - y0 + 1, bnz = z1 - z0 + 1;
    std::vector<float> box(static_cast<size_t>(bnx) * bny * bnz, 0.0f);

    double painted = 0;
    for (int z = z0; z <= z1; ++z) {
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          Vec3 p = vol.position(x, y, z);
          Vec3 d{p.x - les.center_mm.x, p.y - les.center_mm.y, p.z - les.center_mm.z};
          bool inside = les.shape == LesionShape::Sphere
                            ? (d.x * d.x + d.y * d.y + d.z * d.z <=
                               les.radius_mm * les.radius_mm)
                            : (std::abs(d.x) <= les.radius_mm &&
                               std::abs(d.y) <= les.radius_mm &&
                               std::abs(d.z) <= les.radius_mm);
          if (inside) {
            box[static_cast<size_t>(z - z0) * bny * bnx + static_cast<size_t>(y - y0) * bnx +
                (x - x0)] = static_cast<float>(les.excess_hu);
            painted += les.excess_hu;
          }
        }
      }
    }
    blur_axis(box, bnx, bny, bnz, 0, sig_vox.x);
    blur_axis(box, bnx, bny, bnz, 1, sig_vox.y);
    blur_axis(box, bnx, bny, bnz, 2, sig_vox.z);

    double rendered = 0;
    for (int z = z0; z <= z1; ++z) {
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          float c = box[static_cast<size_t>(z - z0) * bny * bnx +
                        static_cast<size_t>(y - y0) * bnx + (x - x0)];
          if (c == 0) continue;
          size_t idx = vol.index(x, y, z);
          truth.truth_cac_map.data()[idx] += c;
          rendered += c;
          if (c > max_contrib[idx]) {
            max_contrib[idx] = c;
            truth.labels[idx] = static_cast<uint16_t>(li + 1);
          }
        }
      }
    }

    LesionTruth lt;
    lt.id = static_cast<int>(li);
    lt.artery = art.name;
    lt.true_mass = painted * voxvol;
    lt.rendered_mass = rendered * voxvol;
    truth.lesions.push_back(lt);
    truth.total_true_mass += lt.true_mass;
  }

  for (int z = 0; z < nz; ++z) {
    bool any = false;
    for (int y = 0; y < ny && !any; ++y)
      for (int x = 0; x < nx && !any; ++x)
        if (truth.truth_cac_map.at(x, y, z) > spec.flag_threshold_hu) any = true;
    truth.slice_has_cac[z] = any ? 1 : 0;
  }

  for (size_t i = 0; i < vol.size(); ++i) vol.data()[i] += truth.truth_cac_map.data()[i];

  if (spec.noise_sigma_hu > 0) {
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<float> noise(0.0f, static_cast<float>(spec.noise_sigma_hu));
    for (auto& v : vol.data()) v += noise(rng);
  }

  return {std::move(vol), std::move(truth)};
}

std::pair<std::pair<Volume, PhantomTruth>, std::pair<Volume, PhantomTruth>>
generate_pair(const PhantomSpec& spec, uint64_t pair_seed) {
  std::mt19937_64 rng(mix_seed(pair_seed, 0xCACu));
  auto make_scan = [&](int scan_idx) {
    PhantomSpec s = spec;
    std::uniform_real_distribution<double> jit(-spec.blur_jitter_frac, spec.blur_jitter_frac);
    for (auto& a : s.arteries) a.blur_sigma_mm = std::max(0.0, a.blur_sigma_mm * (1.0 + jit(rng)));
    s.seed = mix_seed(pair_seed, 17 + scan_idx);
    return generate_phantom(s);
  };
  auto scan1 = make_scan(1);
  auto scan2 = make_scan(2);
  return {std::move(scan1), std::move(scan2)};
}

std::pair<Volume, PhantomTruth> degrade(const Volume& v, const PhantomTruth& truth, int factor) {
  if (factor < 1) throw std::invalid_argument("degrade: factor must be >= 1");
  if (factor == 1) return {v, truth};

  auto block_average = [factor](const Volume& src) {
    Volume out(src.nx(), src.ny(), src.nz(), src.spacing(), src.origin());
    int bx = (src.nx() + factor - 1) / factor;
    int by = (src.ny() + factor - 1) / factor;
    int bz = (src.nz() + factor - 1) / factor;
    for (int zb = 0; zb < bz; ++zb) {
      for (int yb = 0; yb < by; ++yb) {
        for (int xb = 0; xb < bx; ++xb) {
          double sum = 0;
          int n = 0;
          for (int z = zb * factor; z < std::min((zb + 1) * factor, src.nz()); ++z)
            for (int y = yb * factor; y < std::min((yb + 1) * factor, src.ny()); ++y)
              for (int x = xb * factor; x < std::min((xb + 1) * factor, src.nx()); ++x) {
                sum += src.at(x, y, z);
                ++n;
              }
          float mean = static_cast<float>(sum / n);
          for (int z = zb * factor; z < std::min((zb + 1) * factor, src.nz()); ++z)
            for (int y = yb * factor; y < std::min((yb + 1) * factor, src.ny()); ++y)
              for (int x = xb * factor; x < std::min((xb + 1) * factor, src.nx()); ++x)
                out.at(x, y, z) = mean;
        }
      }
    }
    return out;
  };

  Volume dvol = block_average(v);
  PhantomTruth dtruth = truth;
  dtruth.truth_cac_map = block_average(truth.truth_cac_map);

  const double voxvol = v.voxel_volume_mm3();
  double flag_thresh = 10.0;  // recompute flags against the degraded map
  for (auto& lt : dtruth.lesions) lt.rendered_mass = 0;
  for (size_t i = 0; i < dtruth.labels.size(); ++i) {
    uint16_t lab = dtruth.labels[i];
    if (lab > 0 && lab <= dtruth.lesions.size())
      dtruth.lesions[lab - 1].rendered_mass += dtruth.truth_cac_map.data()[i] * voxvol;
  }
  for (int z = 0; z < dvol.nz(); ++z) {
    bool any = false;
    for (int y = 0; y < dvol.ny() && !any; ++y)
      for (int x = 0; x < dvol.nx() && !any; ++x)
        if (dtruth.truth_cac_map.at(x, y, z) > flag_thresh) any = true;
    dtruth.slice_has_cac[z] = any ? 1 : 0;
  }
  return {std::move(dvol), std::move(dtruth)};
}

// --- randomized families -----------------------------------------------------

namespace {

std::vector<Vec3> artery_path(const Ellipsoid& heart, double phi0_deg, double phi1_deg,
                              double theta0_deg, double theta1_deg, double scale) {
  constexpr int kPoints = 9;
  std::vector<Vec3> path;
  const double d2r = std::numbers::pi / 180.0;
  for (int i = 0; i < kPoints; ++i) {
    double t = static_cast<double>(i) / (kPoints - 1);
    double phi = (phi0_deg + t * (phi1_deg - phi0_deg)) * d2r;
    double theta = (theta0_deg + t * (theta1_deg - theta0_deg)) * d2r;
    path.push_back({heart.center_mm.x + scale * heart.radii_mm.x * std::sin(theta) * std::cos(phi),
                    heart.center_mm.y + scale * heart.radii_mm.y * std::sin(theta) * std::sin(phi),
                    heart.center_mm.z + scale * heart.radii_mm.z * std::cos(theta)});
  }
  return path;
}

Vec3 polyline_point(const std::vector<Vec3>& path, double t) {
  double total = 0;
  std::vector<double> seglen(path.size() - 1);
  for (size_t i = 0; i + 1 < path.size(); ++i) {
    Vec3 d{path[i + 1].x - path[i].x, path[i + 1].y - path[i].y, path[i + 1].z - path[i].z};
    seglen[i] = std::sqrt(d.x * d.x + d.y * d.y + d.z * d.z);
    total += seglen[i];
  }
  double target = std::clamp(t, 0.0, 1.0) * total;
  for (size_t i = 0; i + 1 < path.size(); ++i) {
    if (target <= seglen[i] || i + 2 == path.size()) {
      double u = seglen[i] > 0 ? std::min(1.0, target / seglen[i]) : 0.0;
      return {path[i].x + u * (path[i + 1].x - path[i].x),
              path[i].y + u * (path[i + 1].y - path[i].y),
              path[i].z + u * (path[i + 1].z - path[i].z)};
    }
    target -= seglen[i];
  }
  return path.back();
}

}  // namespace

PhantomSpec make_random_spec(const FamilyParams& fam, uint64_t subject_seed) {
  std::mt19937_64 rng(mix_seed(fam.seed, subject_seed));
  auto uni = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };

  PhantomSpec spec;
  spec.dims = fam.dims;
  spec.spacing_mm = fam.spacing_mm;
  spec.seed = mix_seed(subject_seed, 0xBADF00Du);
  spec.noise_sigma_hu = uni(fam.noise_sigma_hu_min, fam.noise_sigma_hu_max);
  spec.blur_jitter_frac = fam.blur_jitter_frac;
  spec.flag_threshold_hu = fam.flag_threshold_hu;

  Vec3 extent{fam.dims[0] * fam.spacing_mm.x, fam.dims[1] * fam.spacing_mm.y,
              fam.dims[2] * fam.spacing_mm.z};
  Vec3 c{extent.x / 2, extent.y / 2, extent.z / 2};

  spec.body = {{c.x + uni(-3, 3), c.y + uni(-3, 3), c.z},
               {0.46 * extent.x * uni(0.95, 1.05), 0.37 * extent.y * uni(0.95, 1.05),
                0.95 * extent.z}};
  double lung_dx = 0.25 * extent.x;
  spec.lungs = {
      Ellipsoid{{c.x - lung_dx + uni(-2, 2), c.y - 0.03 * extent.y, c.z},
                {0.16 * extent.x * uni(0.9, 1.1), 0.22 * extent.y * uni(0.9, 1.1),
                 0.75 * extent.z}},
      Ellipsoid{{c.x + lung_dx + uni(-2, 2), c.y - 0.03 * extent.y, c.z},
                {0.16 * extent.x * uni(0.9, 1.1), 0.22 * extent.y * uni(0.9, 1.1),
                 0.75 * extent.z}}};
  spec.heart = {{c.x + 0.02 * extent.x + uni(-4, 4), c.y + 0.05 * extent.y + uni(-4, 4),
                 c.z + uni(-4, 4)},
                {0.20 * extent.x * uni(0.88, 1.12), 0.17 * extent.y * uni(0.88, 1.12),
                 0.34 * extent.z * uni(0.88, 1.12)}};
  // Spine behind, sternum in front; both well outside the heart.
  spec.bones = {
      Ellipsoid{{c.x, c.y + 0.33 * extent.y, c.z}, {0.07 * extent.x, 0.07 * extent.y, 0.95 * extent.z}},
      Ellipsoid{{c.x, c.y - 0.33 * extent.y, c.z}, {0.09 * extent.x, 0.03 * extent.y, 0.70 * extent.z}}};

  const double lad_sigma = uni(fam.lad_sigma_mm_min, fam.lad_sigma_mm_max);
  // Keep lesions comfortably inside the heart so blur halos stay in the mask.
  const double path_scale = 0.62;
  spec.arteries = {
      ArterySpec{"LAD", artery_path(spec.heart, -115, -70, 35, 120, path_scale), 1.6, lad_sigma},
      ArterySpec{"RCA", artery_path(spec.heart, -175, -120, 30, 110, path_scale), 1.6,
                 lad_sigma * fam.rca_sigma_scale},
      ArterySpec{"LCX", artery_path(spec.heart, -55, 10, 35, 105, path_scale), 1.6,
                 lad_sigma * fam.lcx_sigma_scale}};

  bool negative = uni(0, 1) < fam.negative_fraction;
  if (!negative) {
    int n = std::uniform_int_distribution<int>(fam.lesion_count_min, fam.lesion_count_max)(rng);
    for (int i = 0; i < n; ++i) {
      LesionSpec les;
      les.artery = std::uniform_int_distribution<int>(0, 2)(rng);
      les.center_mm = polyline_point(spec.arteries[les.artery].path_mm, uni(0.12, 0.88));
      les.radius_mm = uni(fam.lesion_radius_mm_min, fam.lesion_radius_mm_max);
      les.excess_hu = uni(0, 1) < fam.subthreshold_fraction
                          ? uni(15.0, 60.0)
                          : uni(fam.lesion_excess_hu_min, fam.lesion_excess_hu_max);
      bool overlaps = false;
      for (const auto& other : spec.lesions) {
        Vec3 d{other.center_mm.x - les.center_mm.x, other.center_mm.y - les.center_mm.y,
               other.center_mm.z - les.center_mm.z};
        double dist = std::sqrt(d.x * d.x + d.y * d.y + d.z * d.z);
        if (dist < other.radius_mm + les.radius_mm + 6.0) overlaps = true;
      }
      if (!overlaps) spec.lesions.push_back(les);
    }
  }
  return spec;
}

// --- JSON --------------------------------------------------------------------

namespace {

json vec3_to_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }
Vec3 vec3_from_json(const json& j) { return {j.at(0), j.at(1), j.at(2)}; }

json ellipsoid_to_json(const Ellipsoid& e) {
  return {{"center_mm", vec3_to_json(e.center_mm)}, {"radii_mm", vec3_to_json(e.radii_mm)}};
}
Ellipsoid ellipsoid_from_json(const json& j) {
  return {vec3_from_json(j.at("center_mm")), vec3_from_json(j.at("radii_mm"))};
}

json spec_to_json(const PhantomSpec& s) {
  json j;
  j["dims"] = {s.dims[0], s.dims[1], s.dims[2]};
  j["spacing_mm"] = vec3_to_json(s.spacing_mm);
  j["body"] = ellipsoid_to_json(s.body);
  j["heart"] = ellipsoid_to_json(s.heart);
  j["lungs"] = json::array();
  for (const auto& l : s.lungs) j["lungs"].push_back(ellipsoid_to_json(l));
  j["bones"] = json::array();
  for (const auto& b : s.bones) j["bones"].push_back(ellipsoid_to_json(b));
  j["tissue_hu"] = {{"air", s.tissue.air},
                    {"body", s.tissue.body},
                    {"lung", s.tissue.lung},
                    {"heart", s.tissue.heart},
                    {"bone", s.tissue.bone}};
  j["arteries"] = json::array();
  for (const auto& a : s.arteries) {
    json ja;
    ja["name"] = a.name;
    ja["radius_mm"] = a.radius_mm;
    ja["blur_sigma_mm"] = a.blur_sigma_mm;
    ja["path_mm"] = json::array();
    for (const auto& p : a.path_mm) ja["path_mm"].push_back(vec3_to_json(p));
    j["arteries"].push_back(ja);
  }
  j["lesions"] = json::array();
  for (const auto& l : s.lesions) {
    j["lesions"].push_back({{"artery", l.artery},
                            {"center_mm", vec3_to_json(l.center_mm)},
                            {"radius_mm", l.radius_mm},
                            {"excess_hu", l.excess_hu},
                            {"shape", l.shape == LesionShape::Sphere ? "sphere" : "cube"}});
  }
  j["noise_sigma_hu"] = s.noise_sigma_hu;
  j["blur_jitter_frac"] = s.blur_jitter_frac;
  j["flag_threshold_hu"] = s.flag_threshold_hu;
  j["seed"] = s.seed;
  return j;
}

PhantomSpec spec_from_json(const json& j) {
  PhantomSpec s;
  auto d = j.at("dims");
  s.dims = {d.at(0).get<int>(), d.at(1).get<int>(), d.at(2).get<int>()};
  s.spacing_mm = vec3_from_json(j.at("spacing_mm"));
  s.body = ellipsoid_from_json(j.at("body"));
  s.heart = ellipsoid_from_json(j.at("heart"));
  for (const auto& l : j.value("lungs", json::array())) s.lungs.push_back(ellipsoid_from_json(l));
  for (const auto& b : j.value("bones", json::array())) s.bones.push_back(ellipsoid_from_json(b));
  if (j.contains("tissue_hu")) {
    const auto& t = j["tissue_hu"];
    s.tissue.air = t.value("air", s.tissue.air);
    s.tissue.body = t.value("body", s.tissue.body);
    s.tissue.lung = t.value("lung", s.tissue.lung);
    s.tissue.heart = t.value("heart", s.tissue.heart);
    s.tissue.bone = t.value("bone", s.tissue.bone);
  }
  for (const auto& ja : j.value("arteries", json::array())) {
    ArterySpec a;
    a.name = ja.at("name");
    a.radius_mm = ja.value("radius_mm", a.radius_mm);
    a.blur_sigma_mm = ja.value("blur_sigma_mm", a.blur_sigma_mm);
    for (const auto& p : ja.at("path_mm")) a.path_mm.push_back(vec3_from_json(p));
    s.arteries.push_back(a);
  }
  for (const auto& jl : j.value("lesions", json::array())) {
    LesionSpec l;
    l.artery = jl.at("artery");
    l.center_mm = vec3_from_json(jl.at("center_mm"));
    l.radius_mm = jl.at("radius_mm");
    l.excess_hu = jl.at("excess_hu");
    l.shape = jl.value("shape", "sphere") == std::string("cube") ? LesionShape::Cube
                                                                 : LesionShape::Sphere;
    s.lesions.push_back(l);
  }
  s.noise_sigma_hu = j.value("noise_sigma_hu", s.noise_sigma_hu);
  s.blur_jitter_frac = j.value("blur_jitter_frac", s.blur_jitter_frac);
  s.flag_threshold_hu = j.value("flag_threshold_hu", s.flag_threshold_hu);
  s.seed = j.value("seed", s.seed);
  return s;
}

json family_to_json(const FamilyParams& f) {
  json j;
  j["dims"] = {f.dims[0], f.dims[1], f.dims[2]};
  j["spacing_mm"] = vec3_to_json(f.spacing_mm);
  j["noise_sigma_hu_min"] = f.noise_sigma_hu_min;
  j["noise_sigma_hu_max"] = f.noise_sigma_hu_max;
  j["lesion_count_min"] = f.lesion_count_min;
  j["lesion_count_max"] = f.lesion_count_max;
  j["lesion_radius_mm_min"] = f.lesion_radius_mm_min;
  j["lesion_radius_mm_max"] = f.lesion_radius_mm_max;
  j["lesion_excess_hu_min"] = f.lesion_excess_hu_min;
  j["lesion_excess_hu_max"] = f.lesion_excess_hu_max;
  j["subthreshold_fraction"] = f.subthreshold_fraction;
  j["lad_sigma_mm_min"] = f.lad_sigma_mm_min;
  j["lad_sigma_mm_max"] = f.lad_sigma_mm_max;
  j["rca_sigma_scale"] = f.rca_sigma_scale;
  j["lcx_sigma_scale"] = f.lcx_sigma_scale;
  j["blur_jitter_frac"] = f.blur_jitter_frac;
  j["negative_fraction"] = f.negative_fraction;
  j["flag_threshold_hu"] = f.flag_threshold_hu;
  j["seed"] = f.seed;
  return j;
}

FamilyParams family_from_json(const json& j) {
  FamilyParams f;
  if (j.contains("dims")) {
    auto d = j.at("dims");
    f.dims = {d.at(0).get<int>(), d.at(1).get<int>(), d.at(2).get<int>()};
  }
  if (j.contains("spacing_mm")) f.spacing_mm = vec3_from_json(j.at("spacing_mm"));
  f.noise_sigma_hu_min = j.value("noise_sigma_hu_min", f.noise_sigma_hu_min);
  f.noise_sigma_hu_max = j.value("noise_sigma_hu_max", f.noise_sigma_hu_max);
  f.lesion_count_min = j.value("lesion_count_min", f.lesion_count_min);
  f.lesion_count_max = j.value("lesion_count_max", f.lesion_count_max);
  f.lesion_radius_mm_min = j.value("lesion_radius_mm_min", f.lesion_radius_mm_min);
  f.lesion_radius_mm_max = j.value("lesion_radius_mm_max", f.lesion_radius_mm_max);
  f.lesion_excess_hu_min = j.value("lesion_excess_hu_min", f.lesion_excess_hu_min);
  f.lesion_excess_hu_max = j.value("lesion_excess_hu_max", f.lesion_excess_hu_max);
  f.subthreshold_fraction = j.value("subthreshold_fraction", f.subthreshold_fraction);
  f.lad_sigma_mm_min = j.value("lad_sigma_mm_min", f.lad_sigma_mm_min);
  f.lad_sigma_mm_max = j.value("lad_sigma_mm_max", f.lad_sigma_mm_max);
  f.rca_sigma_scale = j.value("rca_sigma_scale", f.rca_sigma_scale);
  f.lcx_sigma_scale = j.value("lcx_sigma_scale", f.lcx_sigma_scale);
  f.blur_jitter_frac = j.value("blur_jitter_frac", f.blur_jitter_frac);
  f.negative_fraction = j.value("negative_fraction", f.negative_fraction);
  f.flag_threshold_hu = j.value("flag_threshold_hu", f.flag_threshold_hu);
  f.seed = j.value("seed", f.seed);
  return f;
}

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  json j;
  in >> j;
  return j;
}

void dump_json(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

}  // namespace

PhantomSpec spec_from_json_file(const std::string& path, uint64_t subject_seed, bool* was_family) {
  json j = load_json(path);
  if (j.contains("randomize")) {
    if (was_family) *was_family = true;
    return make_random_spec(family_from_json(j["randomize"]), subject_seed);
  }
  if (was_family) *was_family = false;
  return spec_from_json(j);
}

FamilyParams family_from_json_file(const std::string& path) {
  json j = load_json(path);
  return family_from_json(j.contains("randomize") ? j["randomize"] : j);
}

void write_spec_json(const std::string& path, const PhantomSpec& spec) {
  dump_json(path, spec_to_json(spec));
}

void write_family_json(const std::string& path, const FamilyParams& family) {
  json j;
  j["randomize"] = family_to_json(family);
  dump_json(path, j);
}

void write_truth(const std::string& dir, const std::string& stem, const PhantomTruth& t) {
  fs::path d(dir);
  write_float_volume((d / (stem + "_truthmap.json")).string(), t.truth_cac_map);
  write_mask((d / (stem + "_heart.json")).string(), t.heart_mask);
  {
    Volume lab(t.truth_cac_map.nx(), t.truth_cac_map.ny(), t.truth_cac_map.nz(),
               t.truth_cac_map.spacing(), t.truth_cac_map.origin());
    for (size_t i = 0; i < t.labels.size(); ++i) lab.data()[i] = t.labels[i];
    write_volume((d / (stem + "_labels.json")).string(), lab);
  }
  json j;
  j["slice_has_cac"] = t.slice_has_cac;
  j["total_true_mass"] = t.total_true_mass;
  j["lesions"] = json::array();
  for (const auto& l : t.lesions)
    j["lesions"].push_back({{"id", l.id},
                            {"artery", l.artery},
                            {"true_mass", l.true_mass},
                            {"rendered_mass", l.rendered_mass}});
  j["files"] = {{"truth_map", stem + "_truthmap.json"},
                {"heart_mask", stem + "_heart.json"},
                {"labels", stem + "_labels.json"}};
  dump_json((d / (stem + "_truth.json")).string(), j);
}

PhantomTruth read_truth(const std::string& dir, const std::string& stem) {
  fs::path d(dir);
  json j = load_json((d / (stem + "_truth.json")).string());
  PhantomTruth t;
  t.truth_cac_map = read_float_volume((d / (stem + "_truthmap.json")).string());
  t.heart_mask = read_mask((d / (stem + "_heart.json")).string());
  Volume lab = read_volume((d / (stem + "_labels.json")).string());
  t.labels.resize(lab.size());
  for (size_t i = 0; i < lab.size(); ++i) t.labels[i] = static_cast<uint16_t>(lab.data()[i]);
  t.slice_has_cac = j.at("slice_has_cac").get<std::vector<uint8_t>>();
  t.total_true_mass = j.at("total_true_mass");
  for (const auto& jl : j.at("lesions")) {
    LesionTruth lt;
    lt.id = jl.at("id");
    lt.artery = jl.at("artery");
    lt.true_mass = jl.at("true_mass");
    lt.rendered_mass = jl.at("rendered_mass");
    t.lesions.push_back(lt);
  }
  return t;
}

}  // namespace cacdec::phantom
