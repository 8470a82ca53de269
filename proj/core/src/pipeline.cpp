#include "cacdec/pipeline.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cacdec/checkpoint.hpp"
#include "cacdec/svgplot.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace cacdec::pipeline {

json PipelineConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["use_heart_seg"] = use_heart_seg;
  j["use_slice_classifier"] = use_slice_classifier;
  j["heartseg_ckpt"] = heartseg_ckpt;
  j["classifier_ckpt"] = classifier_ckpt;
  j["cyclegan_ckpt"] = cyclegan_ckpt;
  j["seg_spacing_mm"] = {seg_spacing_mm.x, seg_spacing_mm.y, seg_spacing_mm.z};
  j["score_spacing_mm"] = {score_spacing_mm.x, score_spacing_mm.y, score_spacing_mm.z};
  j["crop_side"] = crop_side;
  j["fov_fraction"] = fov_fraction;
  j["detection_min_hu"] = detection_min_hu;
  j["scoring"] = {{"apply_mask", scoring.apply_mask},
                  {"mask_floor_hu", scoring.mask_floor_hu},
                  {"connectivity", scoring.connectivity},
                  {"map_min_voxels", scoring.map_min_voxels},
                  {"clinical_min_voxels", scoring.clinical_min_voxels},
                  {"clinical_threshold_hu", scoring.clinical_threshold_hu},
                  {"attenuation_from_image", scoring.attenuation_from_image}};
  j["cache_dir"] = cache_dir;
  return j;
}

PipelineConfig PipelineConfig::from_json(const json& j) {
  PipelineConfig c;
  c.seed = j.value("seed", c.seed);
  c.use_heart_seg = j.value("use_heart_seg", c.use_heart_seg);
  c.use_slice_classifier = j.value("use_slice_classifier", c.use_slice_classifier);
  c.heartseg_ckpt = j.value("heartseg_ckpt", c.heartseg_ckpt);
  c.classifier_ckpt = j.value("classifier_ckpt", c.classifier_ckpt);
  c.cyclegan_ckpt = j.value("cyclegan_ckpt", c.cyclegan_ckpt);
  if (j.contains("seg_spacing_mm")) {
    auto s = j["seg_spacing_mm"];
    c.seg_spacing_mm = {s.at(0), s.at(1), s.at(2)};
  }
  if (j.contains("score_spacing_mm")) {
    auto s = j["score_spacing_mm"];
    c.score_spacing_mm = {s.at(0), s.at(1), s.at(2)};
  }
  c.crop_side = j.value("crop_side", c.crop_side);
  c.fov_fraction = j.value("fov_fraction", c.fov_fraction);
  c.detection_min_hu = j.value("detection_min_hu", c.detection_min_hu);
  if (j.contains("scoring")) {
    auto s = j["scoring"];
    c.scoring.apply_mask = s.value("apply_mask", c.scoring.apply_mask);
    c.scoring.mask_floor_hu = s.value("mask_floor_hu", c.scoring.mask_floor_hu);
    c.scoring.connectivity = s.value("connectivity", c.scoring.connectivity);
    c.scoring.map_min_voxels = s.value("map_min_voxels", c.scoring.map_min_voxels);
    c.scoring.clinical_min_voxels =
        s.value("clinical_min_voxels", c.scoring.clinical_min_voxels);
    c.scoring.clinical_threshold_hu =
        s.value("clinical_threshold_hu", c.scoring.clinical_threshold_hu);
    c.scoring.attenuation_from_image =
        s.value("attenuation_from_image", c.scoring.attenuation_from_image);
  }
  c.cache_dir = j.value("cache_dir", c.cache_dir);
  if (c.cache_dir.empty()) {
    if (const char* env = std::getenv("CACDEC_CACHE_DIR")) c.cache_dir = env;
  }
  return c;
}

PipelineConfig PipelineConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open pipeline config: " + path);
  json j;
  in >> j;
  return from_json(j);
}

ScanSet ScanSet::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scan set: " + path);
  json j;
  in >> j;
  ScanSet s;
  for (const auto& js : j.value("scans", json::array())) {
    ScanInput si;
    si.id = js.at("id");
    si.volume_path = js.at("volume");
    si.truth_dir = js.value("truth_dir", "");
    si.truth_stem = js.value("truth_stem", "");
    s.scans.push_back(si);
  }
  for (const auto& jp : j.value("pairs", json::array())) {
    PairInput p;
    p.subject = jp.at("subject");
    p.scan1 = jp.at("scan1");
    p.scan2 = jp.at("scan2");
    s.pairs.push_back(p);
  }
  return s;
}

void ScanSet::save(const std::string& path) const {
  json j;
  j["scans"] = json::array();
  for (const auto& s : scans) {
    json js;
    js["id"] = s.id;
    js["volume"] = s.volume_path;
    if (!s.truth_dir.empty()) js["truth_dir"] = s.truth_dir;
    if (!s.truth_stem.empty()) js["truth_stem"] = s.truth_stem;
    j["scans"].push_back(js);
  }
  j["pairs"] = json::array();
  for (const auto& p : pairs)
    j["pairs"].push_back({{"subject", p.subject}, {"scan1", p.scan1}, {"scan2", p.scan2}});
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write scan set: " + path);
  out << j.dump(2) << "\n";
}

Models Models::load(const PipelineConfig& cfg) {
  Models m;
  if (cfg.use_heart_seg) {
    if (cfg.heartseg_ckpt.empty())
      throw std::runtime_error("pipeline: heart segmentation enabled but no checkpoint given");
    m.heart = std::make_unique<heartseg::HeartSegModel>(
        heartseg::HeartSegModel::load(cfg.heartseg_ckpt));
  }
  if (cfg.use_slice_classifier) {
    if (cfg.classifier_ckpt.empty())
      throw std::runtime_error("pipeline: slice classifier enabled but no checkpoint given");
    m.classifier = std::make_unique<cacslice::SliceClassifier>(
        cacslice::SliceClassifier::load(cfg.classifier_ckpt));
    if (m.classifier->config().side != cfg.crop_side)
      throw std::runtime_error("pipeline: classifier was trained at side " +
                               std::to_string(m.classifier->config().side) +
                               ", config crop_side is " + std::to_string(cfg.crop_side));
  }
  if (cfg.cyclegan_ckpt.empty())
    throw std::runtime_error("pipeline: no cyclegan checkpoint given");
  m.gan = std::make_unique<calgan::CycleGan>(calgan::CycleGan::load(cfg.cyclegan_ckpt));
  if (m.gan->cfg.side != cfg.crop_side)
    throw std::runtime_error("pipeline: cyclegan was trained at side " +
                             std::to_string(m.gan->cfg.side) + ", config crop_side is " +
                             std::to_string(cfg.crop_side));
  return m;
}

namespace {

BinaryMask fov_mask(const Volume& v, double fraction) {
  // Standardized field of view: the central box in-plane, all slices.
  BinaryMask m(v.nx(), v.ny(), v.nz(), v.spacing(), v.origin());
  int x0 = static_cast<int>(v.nx() * (1 - fraction) / 2);
  int x1 = v.nx() - x0;
  int y0 = static_cast<int>(v.ny() * (1 - fraction) / 2);
  int y1 = v.ny() - y0;
  for (int z = 0; z < v.nz(); ++z)
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) m.at(x, y, z) = 1;
  return m;
}

}  // namespace

ScanArtifacts process_scan(const PipelineConfig& cfg, Models& models, const Volume& scan,
                           const phantom::PhantomTruth* truth) {
  ScanArtifacts art;
  HuWindow window;

  // Region of interest at the segmentation working resolution.
  Volume seg_vol = resample(scan, cfg.seg_spacing_mm, Interp::Linear);
  if (cfg.use_heart_seg) {
    art.heart_mask = heartseg::segment_heart(*models.heart, seg_vol);
  } else {
    art.heart_mask = fov_mask(seg_vol, cfg.fov_fraction);
  }
  if (art.heart_mask.count() == 0)
    throw std::runtime_error("pipeline: empty heart mask");
  Vec3 com_vox = center_of_mass(art.heart_mask);
  Vec3 com_mm{art.heart_mask.origin().x + com_vox.x * art.heart_mask.spacing().x,
              art.heart_mask.origin().y + com_vox.y * art.heart_mask.spacing().y,
              art.heart_mask.origin().z + com_vox.z * art.heart_mask.spacing().z};

  // Scoring resolution.
  Volume score_vol = resample(scan, cfg.score_spacing_mm, Interp::Linear);
  BinaryMask score_mask = resample_mask_to_grid(art.heart_mask, score_vol);
  Vec3 center = score_vol.to_voxel(com_mm);

  for (int z = 0; z < score_vol.nz(); ++z) {
    bool any = false;
    for (int y = 0; y < score_vol.ny() && !any; ++y)
      for (int x = 0; x < score_vol.nx() && !any; ++x)
        if (score_mask.at(x, y, z)) any = true;
    if (any) art.heart_slices.push_back(z);
  }

  std::vector<NormalizedSlice> slices;
  for (int z : art.heart_slices)
    slices.push_back(normalize_slice(score_vol, z, {center.x, center.y, double(z)},
                                     cfg.crop_side, window));

  if (cfg.use_slice_classifier && !slices.empty()) {
    art.flags = cacslice::classify_slices(*models.classifier, slices);
  } else {
    art.flags.assign(slices.size(), true);  // ablation CL-: analyse every heart slice
  }

  // Decompose flagged slices and assemble the map at the scoring resolution.
  std::vector<const std::vector<float>*> flagged;
  std::vector<size_t> flagged_idx;
  for (size_t i = 0; i < slices.size(); ++i) {
    if (art.flags[i]) {
      flagged.push_back(&slices[i].data);
      flagged_idx.push_back(i);
    }
  }
  art.slices_processed = static_cast<int>(flagged.size());
  Volume map_score(score_vol.nx(), score_vol.ny(), score_vol.nz(), score_vol.spacing(),
                   score_vol.origin());
  if (!flagged.empty()) {
    auto maps = calgan::predict_maps(*models.gan->g_r, flagged, cfg.crop_side);
    for (size_t k = 0; k < flagged_idx.size(); ++k) {
      const NormalizedSlice& s = slices[flagged_idx[k]];
      for (int y = 0; y < s.side; ++y) {
        int vy = s.y0 + y;
        if (vy < 0 || vy >= map_score.ny()) continue;
        for (int x = 0; x < s.side; ++x) {
          int vx = s.x0 + x;
          if (vx < 0 || vx >= map_score.nx()) continue;
          map_score.at(vx, vy, s.slice_index) = static_cast<float>(
              window.delta_to_hu(maps[k][static_cast<size_t>(y) * s.side + x]));
        }
      }
    }
  }

  // Noise masking at the scoring grid, then back to the original grid.
  Volume masked_score = scoring::mask_cac_map(map_score, score_vol, cfg.scoring.mask_floor_hu);
  art.map_hu = resample_to_grid(masked_score, scan, Interp::Linear);
  for (auto& v : art.map_hu.data())
    if (v < 0) v = 0;  // trilinear cannot produce negatives, but keep the contract tight

  BinaryMask region = resample_mask_to_grid(art.heart_mask, scan);
  const std::vector<uint16_t>* labels = nullptr;
  std::vector<std::string> lesion_arteries;
  if (truth) {
    labels = &truth->labels;
    for (const auto& l : truth->lesions) lesion_arteries.push_back(l.artery);
  }
  art.record = scoring::score_scan(art.map_hu, scan, &region, labels,
                                   truth ? &lesion_arteries : nullptr, cfg.scoring);

  float peak = 0;
  for (float v : art.map_hu.data()) peak = std::max(peak, v);
  art.detected = peak >= cfg.detection_min_hu;
  art.baseline_detected = art.record.conventional_agatston > 0;
  return art;
}

namespace {

std::string now_string() {
  auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

json scan_result_to_json(const ScanResult& r) {
  json j;
  j["id"] = r.id;
  j["ok"] = r.ok;
  if (!r.error.empty()) j["error"] = r.error;
  j["mask"] = r.mask_path;
  j["flags"] = r.flags_path;
  j["map"] = r.map_path;
  j["record_path"] = r.record_path;
  if (r.ok) j["record"] = json::parse(scoring::score_record_to_json(r.record));
  j["detected"] = r.detected;
  j["baseline_detected"] = r.baseline_detected;
  j["has_truth"] = r.has_truth;
  j["truth_positive"] = r.truth_positive;
  j["slices_processed"] = r.slices_processed;
  return j;
}

ScanResult scan_result_from_json(const json& j) {
  ScanResult r;
  r.id = j.at("id");
  r.ok = j.at("ok");
  r.error = j.value("error", "");
  r.mask_path = j.value("mask", "");
  r.flags_path = j.value("flags", "");
  r.map_path = j.value("map", "");
  r.record_path = j.value("record_path", "");
  if (r.ok && j.contains("record"))
    r.record = scoring::score_record_from_json(j["record"].dump());
  r.detected = j.value("detected", false);
  r.baseline_detected = j.value("baseline_detected", false);
  r.has_truth = j.value("has_truth", false);
  r.truth_positive = j.value("truth_positive", false);
  r.slices_processed = j.value("slices_processed", 0);
  return r;
}

}  // namespace

void RunManifest::save(const std::string& path) const {
  json j;
  j["config_hash"] = config_hash;
  j["config"] = config;
  j["created"] = created;
  j["pairs"] = json::array();
  for (const auto& p : pairs)
    j["pairs"].push_back({{"subject", p.subject}, {"scan1", p.scan1}, {"scan2", p.scan2}});
  j["scans"] = json::array();
  for (const auto& s : scans) j["scans"].push_back(scan_result_to_json(s));
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest: " + path);
  out << j.dump(2) << "\n";
}

RunManifest RunManifest::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path);
  json j;
  in >> j;
  RunManifest m;
  m.config_hash = j.at("config_hash");
  m.config = j.at("config");
  m.created = j.value("created", "");
  for (const auto& jp : j.value("pairs", json::array())) {
    PairInput p;
    p.subject = jp.at("subject");
    p.scan1 = jp.at("scan1");
    p.scan2 = jp.at("scan2");
    m.pairs.push_back(p);
  }
  for (const auto& js : j.value("scans", json::array()))
    m.scans.push_back(scan_result_from_json(js));
  return m;
}

RunManifest run_pipeline(const PipelineConfig& cfg, const ScanSet& set,
                         const std::string& out_dir) {
  Models models = Models::load(cfg);
  fs::path out = cfg.cache_dir.empty() ? fs::path(out_dir) : fs::path(cfg.cache_dir);
  fs::create_directories(out);

  RunManifest manifest;
  manifest.config = cfg.to_json();
  manifest.config_hash = ckpt::hash_json(manifest.config);
  manifest.created = now_string();
  manifest.pairs = set.pairs;

  for (const auto& input : set.scans) {
    ScanResult res;
    res.id = input.id;
    try {
      Volume scan = read_volume(input.volume_path);
      std::optional<phantom::PhantomTruth> truth;
      if (!input.truth_stem.empty())
        truth = phantom::read_truth(
            input.truth_dir.empty() ? fs::path(input.volume_path).parent_path().string()
                                    : input.truth_dir,
            input.truth_stem);
      ScanArtifacts art =
          process_scan(cfg, models, scan, truth.has_value() ? &*truth : nullptr);

      fs::path sdir = out / input.id;
      fs::create_directories(sdir);
      res.mask_path = (sdir / "mask.json").string();
      write_mask(res.mask_path, art.heart_mask);
      res.flags_path = (sdir / "flags.json").string();
      {
        json jf;
        for (size_t i = 0; i < art.heart_slices.size(); ++i)
          jf[std::to_string(art.heart_slices[i])] = static_cast<bool>(art.flags[i]);
        std::ofstream fo(res.flags_path, std::ios::trunc);
        fo << jf.dump(2) << "\n";
      }
      res.map_path = (sdir / "map.json").string();
      write_float_volume(res.map_path, art.map_hu);
      res.record_path = (sdir / "record.json").string();
      svgplot::write_text_file(res.record_path,
                               scoring::score_record_to_json(art.record) + "\n");
      res.record = art.record;
      res.detected = art.detected;
      res.baseline_detected = art.baseline_detected;
      res.slices_processed = art.slices_processed;
      if (truth) {
        res.has_truth = true;
        for (uint8_t f : truth->slice_has_cac)
          if (f) res.truth_positive = true;
      }
      res.ok = true;
    } catch (const std::exception& e) {
      res.ok = false;
      res.error = e.what();  // failure isolation: a bad scan must not kill the run
    }
    manifest.scans.push_back(std::move(res));
  }
  manifest.save((out / "manifest.json").string());
  return manifest;
}

// ---- reporting -------------------------------------------------------------------

namespace {

json delta_to_json(const stats::DeltaRSummary& d) {
  return {{"mean", d.mean}, {"median", d.median}, {"n", d.n}};
}

json icc_to_json(const std::optional<stats::IccResult>& r) {
  if (!r) return nullptr;
  return {{"icc", r->icc}, {"ci_low", r->ci_low}, {"ci_high", r->ci_high}};
}

json detection_to_json(const stats::DetectionMetrics& m) {
  json j;
  j["tp"] = m.tp;
  j["fp"] = m.fp;
  j["tn"] = m.tn;
  j["fn"] = m.fn;
  j["accuracy"] = m.accuracy ? json(*m.accuracy) : json(nullptr);
  j["sensitivity"] = m.sensitivity ? json(*m.sensitivity) : json(nullptr);
  j["fpr"] = m.fpr ? json(*m.fpr) : json(nullptr);
  j["f1"] = m.f1 ? json(*m.f1) : json(nullptr);
  return j;
}

struct PairedScores {
  std::vector<std::pair<double, double>> pseudo_mass, adjusted, conventional;
  std::vector<std::pair<int, int>> cats_proposed_scaled, cats_baseline;
  double scale = 1.0;
};

PairedScores collect_pairs(const RunManifest& m) {
  std::map<std::string, const ScanResult*> by_id;
  for (const auto& s : m.scans)
    if (s.ok) by_id[s.id] = &s;

  PairedScores out;
  double sum_adj = 0, sum_conv = 0;
  size_t n_ok = 0;
  for (const auto& s : m.scans) {
    if (!s.ok) continue;
    sum_adj += s.record.adjusted_agatston;
    sum_conv += s.record.conventional_agatston;
    ++n_ok;
  }
  out.scale = (n_ok > 0 && sum_adj > 0) ? sum_conv / sum_adj : 1.0;

  for (const auto& p : m.pairs) {
    auto i1 = by_id.find(p.scan1), i2 = by_id.find(p.scan2);
    if (i1 == by_id.end() || i2 == by_id.end()) continue;
    const auto& r1 = i1->second->record;
    const auto& r2 = i2->second->record;
    out.pseudo_mass.push_back({r1.pseudo_mass, r2.pseudo_mass});
    out.adjusted.push_back({r1.adjusted_agatston, r2.adjusted_agatston});
    out.conventional.push_back({r1.conventional_agatston, r2.conventional_agatston});
    out.cats_proposed_scaled.push_back(
        {static_cast<int>(scoring::risk_category(r1.adjusted_agatston * out.scale)) - 1,
         static_cast<int>(scoring::risk_category(r2.adjusted_agatston * out.scale)) - 1});
    out.cats_baseline.push_back(
        {static_cast<int>(scoring::risk_category(r1.conventional_agatston)) - 1,
         static_cast<int>(scoring::risk_category(r2.conventional_agatston)) - 1});
  }
  return out;
}

json score_table(const std::vector<std::pair<double, double>>& pairs) {
  json j;
  j["n_pairs"] = pairs.size();
  if (pairs.empty()) return j;
  j["delta_r_all"] = delta_to_json(stats::delta_r(pairs, false));
  j["delta_r_pos"] = delta_to_json(stats::delta_r(pairs, true));
  if (pairs.size() >= 3) {
    j["icc_all"] = icc_to_json(stats::icc_absolute_agreement(pairs));
    std::vector<std::pair<double, double>> pos;
    for (const auto& p : pairs)
      if (p.first > 0 && p.second > 0) pos.push_back(p);
    j["icc_pos"] = pos.size() >= 3 ? icc_to_json(stats::icc_absolute_agreement(pos))
                                   : json(nullptr);
  }
  return j;
}

json kappa_to_json(const stats::KappaResult& k) {
  return {{"kappa", k.kappa}, {"ci_low", k.ci_low}, {"ci_high", k.ci_high}};
}

double category_accuracy(const std::vector<std::pair<int, int>>& cats) {
  if (cats.empty()) return 0;
  size_t same = 0;
  for (auto [a, b] : cats) same += a == b;
  return static_cast<double>(same) / cats.size();
}

}  // namespace

json report(const RunManifest& manifest) {
  json rep;
  rep["config_hash"] = manifest.config_hash;
  size_t ok = 0;
  for (const auto& s : manifest.scans) ok += s.ok;
  rep["n_scans"] = manifest.scans.size();
  rep["n_scans_ok"] = ok;
  json errors = json::array();
  for (const auto& s : manifest.scans)
    if (!s.ok) errors.push_back({{"id", s.id}, {"error", s.error}});
  rep["errors"] = errors;

  // Per-scan detection vs truth flags, proposed and the 130 HU baseline.
  std::vector<stats::DetectionRow> det_prop, det_base;
  for (const auto& s : manifest.scans) {
    if (!s.ok || !s.has_truth) continue;
    det_prop.push_back({s.detected, s.truth_positive});
    det_base.push_back({s.baseline_detected, s.truth_positive});
  }
  json det;
  det["n_scans"] = det_prop.size();
  if (!det_prop.empty()) {
    det["proposed"] = detection_to_json(stats::detection_metrics(det_prop));
    det["baseline"] = detection_to_json(stats::detection_metrics(det_base));
  }
  rep["detection"] = det;

  PairedScores ps = collect_pairs(manifest);
  rep["n_pairs"] = ps.pseudo_mass.size();
  json scores;
  scores["pseudo_mass"] = score_table(ps.pseudo_mass);
  scores["adjusted_agatston"] = score_table(ps.adjusted);
  scores["conventional_agatston"] = score_table(ps.conventional);
  rep["scores"] = scores;

  json risk;
  risk["scale_factor"] = ps.scale;
  if (!ps.cats_proposed_scaled.empty()) {
    risk["proposed_kappa"] = kappa_to_json(stats::weighted_kappa(ps.cats_proposed_scaled));
    risk["baseline_kappa"] = kappa_to_json(stats::weighted_kappa(ps.cats_baseline));
    risk["proposed_accuracy"] = category_accuracy(ps.cats_proposed_scaled);
    risk["baseline_accuracy"] = category_accuracy(ps.cats_baseline);
  }
  rep["risk_categories"] = risk;
  return rep;
}

void write_report_bundle(const RunManifest& manifest, const std::string& json_path,
                         const std::string& plot_dir) {
  json rep = report(manifest);
  svgplot::write_text_file(json_path, rep.dump(2) + "\n");
  if (plot_dir.empty()) return;
  fs::create_directories(plot_dir);
  PairedScores ps = collect_pairs(manifest);

  auto emit = [&](const std::vector<std::pair<double, double>>& pairs, double scale,
                  const std::string& name, const std::string& title) {
    if (pairs.size() < 3) return;
    std::vector<std::pair<double, double>> scaled;
    for (auto [a, b] : pairs) scaled.push_back({a * scale, b * scale});
    stats::BlandAltman ba = stats::bland_altman(scaled);
    std::ostringstream csv;
    csv << "mean,diff,loa_low,loa_high\n";
    for (const auto& r : ba.rows) {
      char buf[128];
      snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g,%.9g\n", r.mean, r.diff, r.loa_low,
               r.loa_high);
      csv << buf;
    }
    svgplot::write_text_file((fs::path(plot_dir) / (name + ".csv")).string(), csv.str());
    svgplot::write_text_file((fs::path(plot_dir) / (name + ".svg")).string(),
                             svgplot::bland_altman_svg(ba, title));
  };
  emit(ps.adjusted, ps.scale, "ba_adjusted_proposed",
       "Bland-Altman: adjusted Agatston (proposed, scaled)");
  emit(ps.conventional, 1.0, "ba_conventional_baseline",
       "Bland-Altman: conventional Agatston (130 HU baseline)");
  emit(ps.pseudo_mass, 1.0, "ba_pseudo_mass_proposed", "Bland-Altman: CAC pseudo-mass");
}

void write_pairs_csv(const RunManifest& manifest, const std::string& path) {
  std::map<std::string, const ScanResult*> by_id;
  for (const auto& s : manifest.scans)
    if (s.ok) by_id[s.id] = &s;
  std::ostringstream csv;
  csv << "subject,score_type,scan1,scan2,category1,category2\n";
  for (const auto& p : manifest.pairs) {
    auto i1 = by_id.find(p.scan1), i2 = by_id.find(p.scan2);
    if (i1 == by_id.end() || i2 == by_id.end()) continue;
    const auto& r1 = i1->second->record;
    const auto& r2 = i2->second->record;
    auto row = [&](const char* type, double a, double b, scoring::RiskCategory c1,
                   scoring::RiskCategory c2) {
      char buf[256];
      snprintf(buf, sizeof(buf), "%s,%s,%.9g,%.9g,%s,%s\n", p.subject.c_str(), type, a, b,
               scoring::to_string(c1).c_str(), scoring::to_string(c2).c_str());
      csv << buf;
    };
    row("pseudo_mass", r1.pseudo_mass, r2.pseudo_mass, r1.risk, r2.risk);
    row("adjusted_agatston", r1.adjusted_agatston, r2.adjusted_agatston, r1.risk, r2.risk);
    row("conventional_agatston", r1.conventional_agatston, r2.conventional_agatston,
        scoring::risk_category(r1.conventional_agatston),
        scoring::risk_category(r2.conventional_agatston));
  }
  svgplot::write_text_file(path, csv.str());
}

std::vector<PairsCsvRow> read_pairs_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open pairs csv: " + path);
  std::vector<PairsCsvRow> rows;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line.rfind("subject,", 0) == 0) continue;  // header
    }
    std::stringstream ss(line);
    std::string field;
    PairsCsvRow r;
    std::getline(ss, r.subject, ',');
    std::getline(ss, r.score_type, ',');
    std::getline(ss, field, ',');
    r.scan1 = std::stod(field);
    std::getline(ss, field, ',');
    r.scan2 = std::stod(field);
    std::getline(ss, r.category1, ',');
    std::getline(ss, r.category2, ',');
    rows.push_back(std::move(r));
  }
  return rows;
}

json evaluate_pairs(const std::vector<PairsCsvRow>& rows, const std::string& plot_dir) {
  std::map<std::string, std::vector<const PairsCsvRow*>> by_type;
  for (const auto& r : rows) by_type[r.score_type].push_back(&r);

  json rep;
  for (const auto& [type, list] : by_type) {
    std::vector<std::pair<double, double>> pairs;
    std::vector<std::pair<int, int>> cats;
    for (const auto* r : list) {
      pairs.push_back({r->scan1, r->scan2});
      if (!r->category1.empty() && !r->category2.empty()) {
        cats.push_back(
            {static_cast<int>(scoring::risk_category_from_string(r->category1)) - 1,
             static_cast<int>(scoring::risk_category_from_string(r->category2)) - 1});
      }
    }
    json jt = score_table(pairs);
    if (!cats.empty()) jt["kappa"] = kappa_to_json(stats::weighted_kappa(cats));
    if (pairs.size() >= 3 && !plot_dir.empty()) {
      fs::create_directories(plot_dir);
      stats::BlandAltman ba = stats::bland_altman(pairs);
      svgplot::write_text_file((fs::path(plot_dir) / ("ba_" + type + ".svg")).string(),
                               svgplot::bland_altman_svg(ba, "Bland-Altman: " + type));
      std::ostringstream csv;
      csv << "mean,diff,loa_low,loa_high\n";
      for (const auto& r : ba.rows) {
        char buf[128];
        snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g,%.9g\n", r.mean, r.diff, r.loa_low,
                 r.loa_high);
        csv << buf;
      }
      svgplot::write_text_file((fs::path(plot_dir) / ("ba_" + type + ".csv")).string(),
                               csv.str());
    }
    rep[type] = jt;
  }
  return rep;
}

}  // namespace cacdec::pipeline
