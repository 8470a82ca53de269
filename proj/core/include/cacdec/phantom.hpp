// Synthetic paired cardiac CT phantoms with voxel-exact calcium ground truth.
//
// A phantom is simple ellipsoid anatomy (body, lungs, heart, bone) plus
// calcium lesions planted on coronary artery polylines. Lesions are rendered
// as an additive attenuation field, blurred per artery to simulate cardiac
// motion, and the scan is finished with additive Gaussian noise. The pre-noise
// blurred lesion field is kept as the truth calcium map; blurring distributes
// each source voxel's mass with unit-sum weights, so the total truth mass is
// conserved exactly.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cacdec/volume.hpp"

namespace cacdec::phantom {

struct Ellipsoid {
  Vec3 center_mm;
  Vec3 radii_mm;
  bool contains(const Vec3& p) const {
    double dx = (p.x - center_mm.x) / radii_mm.x;
    double dy = (p.y - center_mm.y) / radii_mm.y;
    double dz = (p.z - center_mm.z) / radii_mm.z;
    return dx * dx + dy * dy + dz * dz <= 1.0;
  }
};

struct ArterySpec {
  std::string name;  // LAD, RCA or LCX
  std::vector<Vec3> path_mm;
  double radius_mm = 1.5;
  double blur_sigma_mm = 1.0;  // motion blur of this artery's lesions
};

enum class LesionShape { Sphere, Cube };

struct LesionSpec {
  int artery = 0;  // index into PhantomSpec::arteries
  Vec3 center_mm;
  double radius_mm = 3.0;   // half-width for cubes
  double excess_hu = 300.0; // attenuation added on top of the local background
  LesionShape shape = LesionShape::Sphere;
};

struct TissueHu {
  double air = -1000, body = 40, lung = -800, heart = 30, bone = 700;
};

struct PhantomSpec {
  std::array<int, 3> dims{64, 64, 40};
  Vec3 spacing_mm{2.5, 2.5, 2.5};
  Ellipsoid body, heart;
  std::vector<Ellipsoid> lungs;
  std::vector<Ellipsoid> bones;
  TissueHu tissue;
  std::vector<ArterySpec> arteries;
  std::vector<LesionSpec> lesions;
  double noise_sigma_hu = 15.0;
  double blur_jitter_frac = 0.0;  // per-scan blur sigma jitter for pairs
  double flag_threshold_hu = 10.0;
  uint64_t seed = 1;

  void validate() const;  // throws on degenerate geometry or out-of-grid lesions
};

struct LesionTruth {
  int id = 0;
  std::string artery;
  double true_mass = 0;      // pre-blur: sum of painted excess x voxel volume
  double rendered_mass = 0;  // post-blur mass inside this lesion's halo region
};

struct PhantomTruth {
  Volume truth_cac_map;              // HU excess attributable to CAC, post-blur pre-noise
  std::vector<uint16_t> labels;      // per voxel: 0 = none, else lesion id + 1 (halo)
  BinaryMask heart_mask;
  std::vector<uint8_t> slice_has_cac;  // per axial slice
  std::vector<LesionTruth> lesions;
  double total_true_mass = 0;
};

// Deterministic rendering of one scan from a concrete spec.
std::pair<Volume, PhantomTruth> generate_phantom(const PhantomSpec& spec);

// Two realizations of the same anatomy: independent noise, per-scan motion
// blur jittered within spec.blur_jitter_frac. The planted (pre-blur) lesion
// masses are identical between the two scans.
std::pair<std::pair<Volume, PhantomTruth>, std::pair<Volume, PhantomTruth>>
generate_pair(const PhantomSpec& spec, uint64_t pair_seed);

// Partial-volume degradation: block-average downsampling by an integer
// factor, then replication back to the original grid. Conserves the total
// truth mass exactly; reduces peak values.
std::pair<Volume, PhantomTruth> degrade(const Volume& v, const PhantomTruth& truth,
                                        int downsample_factor);

// --- randomized phantom families --------------------------------------------

// Ranges from which concrete specs are materialized; this is what the CLI's
// spec JSON usually carries, so that every generated pair is a new "subject".
struct FamilyParams {
  std::array<int, 3> dims{64, 64, 40};
  Vec3 spacing_mm{2.5, 2.5, 2.5};
  double noise_sigma_hu_min = 10.0, noise_sigma_hu_max = 18.0;
  int lesion_count_min = 1, lesion_count_max = 4;
  double lesion_radius_mm_min = 2.2, lesion_radius_mm_max = 5.0;
  double lesion_excess_hu_min = 120.0, lesion_excess_hu_max = 550.0;
  double subthreshold_fraction = 0.0;  // fraction of lesions pushed near the flag threshold
  double lad_sigma_mm_min = 0.6, lad_sigma_mm_max = 1.6;
  double rca_sigma_scale = 2.5;  // RCA suffers most motion
  double lcx_sigma_scale = 1.4;
  double blur_jitter_frac = 0.35;
  double negative_fraction = 0.0;  // fraction of subjects with no lesions at all
  double flag_threshold_hu = 10.0;
  uint64_t seed = 1;
};

PhantomSpec make_random_spec(const FamilyParams& family, uint64_t subject_seed);

// Serialization. A spec file is either a concrete PhantomSpec or a
// {"randomize": {...}} family description.
PhantomSpec spec_from_json_file(const std::string& path, uint64_t subject_seed,
                                bool* was_family = nullptr);
FamilyParams family_from_json_file(const std::string& path);
void write_spec_json(const std::string& path, const PhantomSpec& spec);
void write_family_json(const std::string& path, const FamilyParams& family);

// Truth sidecar I/O (map as float32 container; the rest as JSON + mask container).
void write_truth(const std::string& dir, const std::string& stem, const PhantomTruth& t);
PhantomTruth read_truth(const std::string& dir, const std::string& stem);

}  // namespace cacdec::phantom
