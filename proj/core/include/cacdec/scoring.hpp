// Calcium quantification: CAC-map masking, lesion extraction, pseudo-mass,
// adjusted and conventional Agatston scores, and risk categories.

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cacdec/volume.hpp"

namespace cacdec::scoring {

struct Lesion {
  std::vector<size_t> voxels;          // linear indices into the scan grid
  std::vector<float> attenuation_hu;   // parallel to voxels
  std::string artery;                  // empty if unattributed
};

struct LesionSet {
  int nx = 0, ny = 0, nz = 0;
  Vec3 spacing;
  std::vector<Lesion> lesions;
};

enum class RiskCategory { I = 1, II = 2, III = 3, IV = 4 };
std::string to_string(RiskCategory c);
RiskCategory risk_category_from_string(const std::string& s);

// Table bins: I 0-10, II 11-100, III 101-400, IV >= 400.
RiskCategory risk_category(double agatston);

struct ArteryScores {
  double pseudo_mass = 0;
  double adjusted_agatston = 0;
  double conventional_agatston = 0;
};

struct ScoreRecord {
  double pseudo_mass = 0;
  double adjusted_agatston = 0;
  double conventional_agatston = 0;
  RiskCategory risk = RiskCategory::I;
  std::map<std::string, ArteryScores> arteries;  // present when labels were supplied
};

std::string score_record_to_json(const ScoreRecord& r);
ScoreRecord score_record_from_json(const std::string& text);

// Zeroes map voxels whose subtraction would push the synthetic healthy image
// below floor_hu (default -10 HU); those are noise in the map.
Volume mask_cac_map(const Volume& map_hu, const Volume& image_hu, double floor_hu = -10.0);

// Connected components of map voxels with attenuation > 0.
LesionSet extract_lesions_from_map(const Volume& map_hu, int connectivity = 26,
                                   int min_voxels = 1);

// Clinical path: components of image voxels >= threshold inside an optional
// search region; lesion attenuation is the raw image HU.
LesionSet extract_lesions_clinical(const Volume& image_hu, const BinaryMask* region,
                                   double threshold_hu = 130.0, int connectivity = 26,
                                   int min_voxels = 3);

// Sum over lesion voxels of attenuation times voxel volume (HU*mm^3).
double pseudo_mass(const LesionSet& ls);

// Density weight from the maximum HU of a lesion's slice cross-section.
// Adjusted bins: 1 <200, 2 [200,300), 3 [300,400), 4 >=400.
// Conventional bins additionally map <130 to 0.
int adjusted_density_weight(double max_hu);
int conventional_density_weight(double max_hu);

// Per-slice area (mm^2) x density weight, summed over slices and lesions.
double adjusted_agatston(const LesionSet& ls);
double conventional_agatston(const LesionSet& ls);

// Attribute each lesion to the majority artery among halo labels.
void attribute_arteries(LesionSet& ls, const std::vector<uint16_t>& halo_labels,
                        const std::vector<std::string>& lesion_arteries);

struct ScoringOptions {
  bool apply_mask = true;
  double mask_floor_hu = -10.0;
  int connectivity = 26;
  int map_min_voxels = 1;
  int clinical_min_voxels = 3;
  double clinical_threshold_hu = 130.0;
  // Pseudo-mass / density source for map lesions: the map's own attenuation
  // (default) or the raw image value at map-positive voxels.
  bool attenuation_from_image = false;
};

// Full record for one scan: map path plus the 130 HU clinical baseline.
// `map_hu` and `image_hu` must share a grid; pass labels for per-artery rows.
ScoreRecord score_scan(const Volume& map_hu, const Volume& image_hu,
                       const BinaryMask* clinical_region = nullptr,
                       const std::vector<uint16_t>* halo_labels = nullptr,
                       const std::vector<std::string>* lesion_arteries = nullptr,
                       const ScoringOptions& opt = {});

}  // namespace cacdec::scoring
