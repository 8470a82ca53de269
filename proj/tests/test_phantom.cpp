#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "cacdec/phantom.hpp"

using namespace cacdec;
using namespace cacdec::phantom;
namespace fs = std::filesystem;

namespace {

PhantomSpec base_spec() {
  FamilyParams fam;
  fam.dims = {48, 48, 32};
  fam.noise_sigma_hu_min = fam.noise_sigma_hu_max = 12.0;
  return make_random_spec(fam, 42);
}

double map_mass(const PhantomTruth& t) {
  double s = 0;
  for (float v : t.truth_cac_map.data()) s += v;
  return s * t.truth_cac_map.voxel_volume_mm3();
}

}  // namespace

TEST_CASE("zero lesions give an empty truth map and all-false flags") {
  PhantomSpec spec = base_spec();
  spec.lesions.clear();
  auto [vol, truth] = generate_phantom(spec);
  for (float v : truth.truth_cac_map.data()) CHECK(v == 0.0f);
  for (uint8_t f : truth.slice_has_cac) CHECK(f == 0);
  CHECK(truth.total_true_mass == 0.0);
}

TEST_CASE("generation is deterministic given the seed") {
  PhantomSpec spec = base_spec();
  auto [v1, t1] = generate_phantom(spec);
  auto [v2, t2] = generate_phantom(spec);
  CHECK(v1.data() == v2.data());
  CHECK(t1.truth_cac_map.data() == t2.truth_cac_map.data());
  CHECK(t1.labels == t2.labels);
}

TEST_CASE("unblurred cubic lesion has true mass k * a * voxel_volume") {
  PhantomSpec spec = base_spec();
  spec.lesions.clear();
  for (auto& a : spec.arteries) a.blur_sigma_mm = 0.0;
  spec.noise_sigma_hu = 0.0;
  LesionSpec les;
  les.artery = 0;
  les.center_mm = spec.arteries[0].path_mm[4];
  les.radius_mm = 3.1;  // half-width; cube is painted on voxel centers
  les.excess_hu = 250.0;
  les.shape = LesionShape::Cube;
  spec.lesions.push_back(les);
  auto [vol, truth] = generate_phantom(spec);

  // Count painted voxels independently.
  size_t k = 0;
  for (float v : truth.truth_cac_map.data()) {
    if (v != 0.0f) {
      CHECK(v == doctest::Approx(250.0));
      ++k;
    }
  }
  REQUIRE(k > 0);
  double voxvol = vol.voxel_volume_mm3();
  CHECK(truth.lesions[0].true_mass == doctest::Approx(k * 250.0 * voxvol).epsilon(1e-9));
  CHECK(truth.total_true_mass == doctest::Approx(map_mass(truth)).epsilon(1e-6));
}

TEST_CASE("truth map mass equals recorded total mass under blur") {
  PhantomSpec spec = base_spec();
  REQUIRE(!spec.lesions.empty());
  for (auto& a : spec.arteries) a.blur_sigma_mm = 3.0;
  auto [vol, truth] = generate_phantom(spec);
  CHECK(map_mass(truth) == doctest::Approx(truth.total_true_mass).epsilon(1e-4));
  for (float v : truth.truth_cac_map.data()) CHECK(v >= 0.0f);
}

TEST_CASE("per-slice flags match the threshold rule") {
  PhantomSpec spec = base_spec();
  auto [vol, truth] = generate_phantom(spec);
  for (int z = 0; z < vol.nz(); ++z) {
    bool any = false;
    for (int y = 0; y < vol.ny() && !any; ++y)
      for (int x = 0; x < vol.nx() && !any; ++x)
        if (truth.truth_cac_map.at(x, y, z) > spec.flag_threshold_hu) any = true;
    CHECK(static_cast<bool>(truth.slice_has_cac[z]) == any);
  }
}

TEST_CASE("heart mask contains all planted lesion voxels") {
  for (uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL, 5ULL}) {
    FamilyParams fam;
    fam.dims = {48, 48, 32};
    PhantomSpec spec = make_random_spec(fam, seed);
    auto [vol, truth] = generate_phantom(spec);
    for (const auto& les : spec.lesions) {
      Vec3 cv = vol.to_voxel(les.center_mm);
      int r = static_cast<int>(std::ceil(les.radius_mm / spec.spacing_mm.x)) + 1;
      for (int dz = -r; dz <= r; ++dz)
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx) {
            int x = static_cast<int>(std::lround(cv.x)) + dx;
            int y = static_cast<int>(std::lround(cv.y)) + dy;
            int z = static_cast<int>(std::lround(cv.z)) + dz;
            if (!vol.in_bounds(x, y, z)) continue;
            Vec3 p = vol.position(x, y, z);
            Vec3 d{p.x - les.center_mm.x, p.y - les.center_mm.y, p.z - les.center_mm.z};
            if (d.x * d.x + d.y * d.y + d.z * d.z <= les.radius_mm * les.radius_mm)
              CHECK(truth.heart_mask.at(x, y, z) == 1);
          }
    }
  }
}

TEST_CASE("pair with zero jitter and zero noise is two identical volumes") {
  PhantomSpec spec = base_spec();
  spec.noise_sigma_hu = 0.0;
  spec.blur_jitter_frac = 0.0;
  auto [scan1, scan2] = generate_pair(spec, 99);
  CHECK(scan1.first.data() == scan2.first.data());
  CHECK(scan1.second.truth_cac_map.data() == scan2.second.truth_cac_map.data());
}

TEST_CASE("pair scans share planted lesion masses") {
  PhantomSpec spec = base_spec();
  spec.blur_jitter_frac = 0.4;
  auto [scan1, scan2] = generate_pair(spec, 7);
  REQUIRE(scan1.second.lesions.size() == scan2.second.lesions.size());
  CHECK(scan1.second.total_true_mass ==
        doctest::Approx(scan2.second.total_true_mass).epsilon(1e-12));
  for (size_t i = 0; i < scan1.second.lesions.size(); ++i)
    CHECK(scan1.second.lesions[i].true_mass ==
          doctest::Approx(scan2.second.lesions[i].true_mass).epsilon(1e-12));
}

TEST_CASE("thresholded lesion-voxel count is monotone nonincreasing in motion sigma") {
  // Counted over the lesion voxels themselves (the unblurred support); the
  // 130 HU isocontour of the blurred field can transiently expand outside it.
  PhantomSpec spec = base_spec();
  REQUIRE(!spec.lesions.empty());
  PhantomSpec s0 = spec;
  for (auto& a : s0.arteries) a.blur_sigma_mm = 0.0;
  auto [v0, t0] = generate_phantom(s0);
  size_t prev = std::numeric_limits<size_t>::max();
  for (double sigma : {0.0, 1.0, 2.0, 4.0, 6.0}) {
    PhantomSpec s = spec;
    for (auto& a : s.arteries) a.blur_sigma_mm = sigma;
    auto [vol, truth] = generate_phantom(s);
    size_t n = 0;
    for (size_t i = 0; i < truth.truth_cac_map.data().size(); ++i)
      if (t0.truth_cac_map.data()[i] > 0 && truth.truth_cac_map.data()[i] >= 130.0f) ++n;
    CHECK(n <= prev);
    prev = n;
  }
}

TEST_CASE("large RCA motion sigma drops the fraction of RCA truth voxels above 130 HU") {
  PhantomSpec spec = base_spec();
  spec.lesions.clear();
  LesionSpec les;
  les.artery = 1;  // RCA
  les.center_mm = spec.arteries[1].path_mm[4];
  les.radius_mm = 4.0;
  les.excess_hu = 300.0;
  spec.lesions.push_back(les);

  auto fraction_above = [&](double sigma) {
    PhantomSpec s = spec;
    s.arteries[1].blur_sigma_mm = sigma;
    auto [vol, truth] = generate_phantom(s);
    size_t above = 0, support = 0;
    for (float v : truth.truth_cac_map.data()) {
      if (v > 0.0f) ++support;
      if (v >= 130.0f) ++above;
    }
    REQUIRE(support > 0);
    return static_cast<double>(above) / support;
  };
  CHECK(fraction_above(6.0) < fraction_above(0.0));
}

TEST_CASE("degrade with factor 1 is the identity") {
  PhantomSpec spec = base_spec();
  auto [vol, truth] = generate_phantom(spec);
  auto [dvol, dtruth] = degrade(vol, truth, 1);
  CHECK(dvol.data() == vol.data());
  CHECK(dtruth.truth_cac_map.data() == truth.truth_cac_map.data());
  CHECK_THROWS_AS(degrade(vol, truth, 0), std::invalid_argument);
}

TEST_CASE("degrade leaves a constant volume unchanged") {
  PhantomSpec spec = base_spec();
  spec.lesions.clear();
  auto [vol, truth] = generate_phantom(spec);
  Volume cvol(vol.nx(), vol.ny(), vol.nz(), vol.spacing(), vol.origin(), 77.0f);
  auto [dvol, dtruth] = degrade(cvol, truth, 2);
  for (float v : dvol.data()) CHECK(v == doctest::Approx(77.0f));
}

TEST_CASE("degrade reduces the peak and conserves truth mass") {
  PhantomSpec spec = base_spec();
  spec.lesions.clear();
  spec.noise_sigma_hu = 0.0;
  for (auto& a : spec.arteries) a.blur_sigma_mm = 0.0;
  LesionSpec les;
  les.artery = 0;
  les.center_mm = spec.arteries[0].path_mm[4];
  les.radius_mm = 1.0;  // roughly a single bright voxel at 2.5 mm spacing
  les.excess_hu = 400.0;
  spec.lesions.push_back(les);
  auto [vol, truth] = generate_phantom(spec);
  double mass0 = map_mass(truth);
  float peak0 = *std::max_element(truth.truth_cac_map.data().begin(),
                                  truth.truth_cac_map.data().end());
  auto [dvol, dtruth] = degrade(vol, truth, 2);
  double mass1 = map_mass(dtruth);
  float peak1 = *std::max_element(dtruth.truth_cac_map.data().begin(),
                                  dtruth.truth_cac_map.data().end());
  CHECK(peak1 < peak0);
  CHECK(std::abs(mass1 - mass0) / mass0 < 0.005);
}

TEST_CASE("mass conservation holds across blur and downsampling combinations") {
  PhantomSpec spec = base_spec();
  REQUIRE(!spec.lesions.empty());
  for (double sigma : {0.0, 1.5, 4.0}) {
    for (int factor : {1, 2, 3}) {
      PhantomSpec s = spec;
      for (auto& a : s.arteries) a.blur_sigma_mm = sigma;
      auto [vol, truth] = generate_phantom(s);
      auto [dvol, dtruth] = degrade(vol, truth, factor);
      CHECK(std::abs(map_mass(dtruth) - truth.total_true_mass) / truth.total_true_mass <
            0.005);
    }
  }
}

TEST_CASE("spec JSON and truth sidecars round-trip") {
  PhantomSpec spec = base_spec();
  auto dir = fs::temp_directory_path() / "cacdec_phantom_tests";
  fs::create_directories(dir);
  write_spec_json((dir / "spec.json").string(), spec);
  PhantomSpec r = spec_from_json_file((dir / "spec.json").string(), 0);
  CHECK(r.dims == spec.dims);
  CHECK(r.lesions.size() == spec.lesions.size());
  CHECK(r.seed == spec.seed);
  auto [vol1, truth1] = generate_phantom(spec);
  auto [vol2, truth2] = generate_phantom(r);
  CHECK(vol1.data() == vol2.data());

  write_truth(dir.string(), "t0", truth1);
  PhantomTruth rt = read_truth(dir.string(), "t0");
  CHECK(rt.slice_has_cac == truth1.slice_has_cac);
  CHECK(rt.labels == truth1.labels);
  CHECK(rt.total_true_mass == doctest::Approx(truth1.total_true_mass));
  CHECK(rt.truth_cac_map.data() == truth1.truth_cac_map.data());
}

TEST_CASE("validation rejects degenerate specs") {
  PhantomSpec spec = base_spec();
  spec.heart.radii_mm.x = 0;
  CHECK_THROWS_AS(generate_phantom(spec), std::invalid_argument);

  PhantomSpec spec2 = base_spec();
  REQUIRE(!spec2.lesions.empty());
  spec2.lesions[0].center_mm = {-500, 0, 0};
  CHECK_THROWS_AS(generate_phantom(spec2), std::invalid_argument);
}
