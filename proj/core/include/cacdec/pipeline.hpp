// End-to-end orchestration: heart segmentation -> slice classification ->
// decomposition -> map masking -> scoring, plus run manifests and reports.

#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cacdec/cacslice.hpp"
#include "cacdec/calgan.hpp"
#include "cacdec/heartseg.hpp"
#include "cacdec/phantom.hpp"
#include "cacdec/scoring.hpp"
#include "cacdec/stats.hpp"
#include "cacdec/volume.hpp"

namespace cacdec::pipeline {

struct PipelineConfig {
  uint64_t seed = 1;
  bool use_heart_seg = true;        // ablation switch HS +/-
  bool use_slice_classifier = true; // ablation switch CL +/-
  std::string heartseg_ckpt;
  std::string classifier_ckpt;
  std::string cyclegan_ckpt;
  Vec3 seg_spacing_mm{1.5, 1.5, 3.0};
  Vec3 score_spacing_mm{1.0, 1.0, 1.5};
  int crop_side = 224;
  double fov_fraction = 0.7;     // standardized field of view when HS is off
  double detection_min_hu = 10;  // per-scan CAC detection floor on the masked map
  scoring::ScoringOptions scoring;
  std::string cache_dir;  // defaults to $CACDEC_CACHE_DIR

  nlohmann::json to_json() const;
  static PipelineConfig from_json(const nlohmann::json& j);
  static PipelineConfig from_file(const std::string& path);
};

struct ScanInput {
  std::string id;
  std::string volume_path;
  std::string truth_dir;   // optional phantom truth sidecars
  std::string truth_stem;
};

struct PairInput {
  std::string subject;
  std::string scan1, scan2;  // ScanInput ids
};

// scans.json: {"scans":[{id, volume, truth_dir?, truth_stem?}...],
//              "pairs":[{subject, scan1, scan2}...]}
struct ScanSet {
  std::vector<ScanInput> scans;
  std::vector<PairInput> pairs;
  static ScanSet from_file(const std::string& path);
  void save(const std::string& path) const;
};

struct ScanResult {
  std::string id;
  bool ok = false;
  std::string error;
  std::string mask_path, flags_path, map_path, record_path;
  scoring::ScoreRecord record;
  bool detected = false;        // proposed path, masked map above the detection floor
  bool baseline_detected = false;
  bool has_truth = false;
  bool truth_positive = false;
  int slices_processed = 0;
};

struct RunManifest {
  std::string config_hash;
  nlohmann::json config;
  std::vector<PairInput> pairs;
  std::vector<ScanResult> scans;
  std::string created;  // informational; excluded from determinism checks

  void save(const std::string& path) const;
  static RunManifest load(const std::string& path);
};

// Loaded models for repeated use.
struct Models {
  std::unique_ptr<heartseg::HeartSegModel> heart;
  std::unique_ptr<cacslice::SliceClassifier> classifier;
  std::unique_ptr<calgan::CycleGan> gan;
  static Models load(const PipelineConfig& cfg);
};

struct ScanArtifacts {
  BinaryMask heart_mask;          // at the segmentation working grid
  std::vector<int> heart_slices;  // scoring-grid slice indices intersecting the mask
  std::vector<bool> flags;        // parallel to heart_slices
  Volume map_hu;                  // masked calcium map on the original grid
  scoring::ScoreRecord record;
  bool detected = false;
  bool baseline_detected = false;
  int slices_processed = 0;
};

// The full per-scan pipeline. `truth` supplies artery labels (and nothing
// else); the baseline search region always comes from the predicted mask or
// the standardized field of view.
ScanArtifacts process_scan(const PipelineConfig& cfg, Models& models, const Volume& scan,
                           const phantom::PhantomTruth* truth);

// Batch run with per-scan failure isolation; artifacts land in out_dir (or
// the cache dir when set).
RunManifest run_pipeline(const PipelineConfig& cfg, const ScanSet& set,
                         const std::string& out_dir);

// Statistics tables and Bland-Altman plots for a completed run. Pure function
// of the manifest: regenerating from the same manifest gives identical bytes.
nlohmann::json report(const RunManifest& manifest);
void write_report_bundle(const RunManifest& manifest, const std::string& json_path,
                         const std::string& plot_dir);

// pairs.csv rows: subject,score_type,scan1,scan2,category1,category2
void write_pairs_csv(const RunManifest& manifest, const std::string& path);

struct PairsCsvRow {
  std::string subject, score_type;
  double scan1 = 0, scan2 = 0;
  std::string category1, category2;
};
std::vector<PairsCsvRow> read_pairs_csv(const std::string& path);

// Stats report for externally supplied pair tables (the `evaluate` command).
nlohmann::json evaluate_pairs(const std::vector<PairsCsvRow>& rows, const std::string& plot_dir);

}  // namespace cacdec::pipeline
