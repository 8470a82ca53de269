#include "cacdec/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "cacdec/cc.hpp"

using nlohmann::json;

namespace cacdec::scoring {

std::string to_string(RiskCategory c) {
  switch (c) {
    case RiskCategory::I: return "I";
    case RiskCategory::II: return "II";
    case RiskCategory::III: return "III";
    case RiskCategory::IV: return "IV";
  }
  return "I";
}

RiskCategory risk_category_from_string(const std::string& s) {
  if (s == "I") return RiskCategory::I;
  if (s == "II") return RiskCategory::II;
  if (s == "III") return RiskCategory::III;
  if (s == "IV") return RiskCategory::IV;
  throw std::invalid_argument("unknown risk category: " + s);
}

RiskCategory risk_category(double a) {
  if (a < 0) throw std::invalid_argument("risk_category: negative score");
  if (a >= 400.0) return RiskCategory::IV;
  if (a > 100.0) return RiskCategory::III;
  if (a > 10.0) return RiskCategory::II;
  return RiskCategory::I;
}

Volume mask_cac_map(const Volume& map_hu, const Volume& image_hu, double floor_hu) {
  if (!map_hu.same_grid(image_hu))
    throw std::invalid_argument("mask_cac_map: map and image grids differ");
  Volume out = map_hu;
  for (size_t i = 0; i < out.size(); ++i) {
    double synthetic = image_hu.data()[i] - out.data()[i];
    if (synthetic < floor_hu) out.data()[i] = 0.0f;
  }
  return out;
}

namespace {

LesionSet components_to_lesions(const Volume& grid, const std::vector<uint8_t>& fg,
                                const Volume& attenuation, int connectivity, int min_voxels) {
  ComponentLabels cc =
      connected_components(fg, grid.nx(), grid.ny(), grid.nz(), connectivity);
  std::vector<Lesion> lesions(cc.count);
  for (size_t i = 0; i < fg.size(); ++i) {
    if (cc.labels[i] > 0) {
      Lesion& l = lesions[cc.labels[i] - 1];
      l.voxels.push_back(i);
      l.attenuation_hu.push_back(attenuation.data()[i]);
    }
  }
  LesionSet out;
  out.nx = grid.nx();
  out.ny = grid.ny();
  out.nz = grid.nz();
  out.spacing = grid.spacing();
  for (auto& l : lesions)
    if (static_cast<int>(l.voxels.size()) >= min_voxels) out.lesions.push_back(std::move(l));
  return out;
}

}  // namespace

LesionSet extract_lesions_from_map(const Volume& map_hu, int connectivity, int min_voxels) {
  std::vector<uint8_t> fg(map_hu.size(), 0);
  for (size_t i = 0; i < map_hu.size(); ++i) fg[i] = map_hu.data()[i] > 0.0f ? 1 : 0;
  return components_to_lesions(map_hu, fg, map_hu, connectivity, min_voxels);
}

LesionSet extract_lesions_clinical(const Volume& image_hu, const BinaryMask* region,
                                   double threshold_hu, int connectivity, int min_voxels) {
  if (region && !region->grid_compatible(image_hu))
    throw std::invalid_argument("extract_lesions_clinical: region grid mismatch");
  std::vector<uint8_t> fg(image_hu.size(), 0);
  for (size_t i = 0; i < image_hu.size(); ++i)
    fg[i] = image_hu.data()[i] >= threshold_hu && (!region || region->data()[i]) ? 1 : 0;
  return components_to_lesions(image_hu, fg, image_hu, connectivity, min_voxels);
}

double pseudo_mass(const LesionSet& ls) {
  const double voxvol = ls.spacing.x * ls.spacing.y * ls.spacing.z;
  double sum = 0;
  for (const auto& l : ls.lesions)
    for (float a : l.attenuation_hu) sum += a;
  return sum * voxvol;
}

int adjusted_density_weight(double max_hu) {
  if (max_hu >= 400.0) return 4;
  if (max_hu >= 300.0) return 3;
  if (max_hu >= 200.0) return 2;
  return 1;
}

int conventional_density_weight(double max_hu) {
  if (max_hu < 130.0) return 0;
  return adjusted_density_weight(max_hu);
}

namespace {

template <typename WeightFn>
double agatston_sum(const LesionSet& ls, WeightFn weight) {
  const double area_per_voxel = ls.spacing.x * ls.spacing.y;
  const size_t plane = static_cast<size_t>(ls.nx) * ls.ny;
  double total = 0;
  for (const auto& l : ls.lesions) {
    // Group the lesion's voxels by axial slice.
    std::map<int, std::pair<int, double>> per_slice;  // z -> (count, max hu)
    for (size_t k = 0; k < l.voxels.size(); ++k) {
      int z = static_cast<int>(l.voxels[k] / plane);
      auto& e = per_slice[z];
      e.first += 1;
      e.second = std::max(e.second, static_cast<double>(l.attenuation_hu[k]));
    }
    for (const auto& [z, e] : per_slice)
      total += e.first * area_per_voxel * weight(e.second);
  }
  return total;
}

}  // namespace

double adjusted_agatston(const LesionSet& ls) {
  return agatston_sum(ls, adjusted_density_weight);
}

double conventional_agatston(const LesionSet& ls) {
  return agatston_sum(ls, conventional_density_weight);
}

void attribute_arteries(LesionSet& ls, const std::vector<uint16_t>& halo,
                        const std::vector<std::string>& lesion_arteries) {
  for (auto& l : ls.lesions) {
    std::map<std::string, int> votes;
    for (size_t idx : l.voxels) {
      if (idx < halo.size() && halo[idx] > 0 && halo[idx] <= lesion_arteries.size())
        votes[lesion_arteries[halo[idx] - 1]] += 1;
    }
    if (!votes.empty())
      l.artery = std::max_element(votes.begin(), votes.end(), [](const auto& a, const auto& b) {
                   return a.second < b.second;
                 })->first;
  }
}

ScoreRecord score_scan(const Volume& map_hu, const Volume& image_hu,
                       const BinaryMask* clinical_region,
                       const std::vector<uint16_t>* halo_labels,
                       const std::vector<std::string>* lesion_arteries,
                       const ScoringOptions& opt) {
  if (!map_hu.same_grid(image_hu))
    throw std::invalid_argument("score_scan: map and image grids differ");

  Volume masked = opt.apply_mask ? mask_cac_map(map_hu, image_hu, opt.mask_floor_hu) : map_hu;
  if (opt.attenuation_from_image) {
    for (size_t i = 0; i < masked.size(); ++i)
      if (masked.data()[i] > 0.0f) masked.data()[i] = image_hu.data()[i];
  }
  LesionSet map_lesions =
      extract_lesions_from_map(masked, opt.connectivity, opt.map_min_voxels);
  LesionSet clinical = extract_lesions_clinical(image_hu, clinical_region,
                                                opt.clinical_threshold_hu, opt.connectivity,
                                                opt.clinical_min_voxels);
  if (halo_labels && lesion_arteries) {
    attribute_arteries(map_lesions, *halo_labels, *lesion_arteries);
    attribute_arteries(clinical, *halo_labels, *lesion_arteries);
  }

  ScoreRecord rec;
  rec.pseudo_mass = pseudo_mass(map_lesions);
  rec.adjusted_agatston = adjusted_agatston(map_lesions);
  rec.conventional_agatston = conventional_agatston(clinical);
  rec.risk = risk_category(rec.adjusted_agatston);

  if (halo_labels && lesion_arteries) {
    auto accumulate = [&](const LesionSet& set, bool clinical_path) {
      const double voxvol = set.spacing.x * set.spacing.y * set.spacing.z;
      for (const auto& l : set.lesions) {
        if (l.artery.empty()) continue;
        LesionSet single;
        single.nx = set.nx;
        single.ny = set.ny;
        single.nz = set.nz;
        single.spacing = set.spacing;
        single.lesions.push_back(l);
        ArteryScores& as = rec.arteries[l.artery];
        if (clinical_path) {
          as.conventional_agatston += conventional_agatston(single);
        } else {
          double m = 0;
          for (float a : l.attenuation_hu) m += a;
          as.pseudo_mass += m * voxvol;
          as.adjusted_agatston += adjusted_agatston(single);
        }
      }
    };
    accumulate(map_lesions, false);
    accumulate(clinical, true);
  }
  return rec;
}

std::string score_record_to_json(const ScoreRecord& r) {
  json j;
  j["pseudo_mass"] = r.pseudo_mass;
  j["adjusted_agatston"] = r.adjusted_agatston;
  j["conventional_agatston"] = r.conventional_agatston;
  j["risk_category"] = to_string(r.risk);
  if (!r.arteries.empty()) {
    json ja;
    for (const auto& [name, s] : r.arteries) {
      ja[name] = {{"pseudo_mass", s.pseudo_mass},
                  {"adjusted_agatston", s.adjusted_agatston},
                  {"conventional_agatston", s.conventional_agatston}};
    }
    j["arteries"] = ja;
  }
  return j.dump(2);
}

ScoreRecord score_record_from_json(const std::string& text) {
  json j = json::parse(text);
  ScoreRecord r;
  r.pseudo_mass = j.at("pseudo_mass");
  r.adjusted_agatston = j.at("adjusted_agatston");
  r.conventional_agatston = j.at("conventional_agatston");
  r.risk = risk_category_from_string(j.at("risk_category"));
  if (j.contains("arteries")) {
    for (auto& [name, s] : j["arteries"].items()) {
      ArteryScores as;
      as.pseudo_mass = s.at("pseudo_mass");
      as.adjusted_agatston = s.at("adjusted_agatston");
      as.conventional_agatston = s.at("conventional_agatston");
      r.arteries[name] = as;
    }
  }
  return r;
}

}  // namespace cacdec::scoring
