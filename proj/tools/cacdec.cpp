// cacdec command line: phantom generation, training, inference and evaluation.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "cacdec/cacslice.hpp"
#include "cacdec/calgan.hpp"
#include "cacdec/heartseg.hpp"
#include "cacdec/phantom.hpp"
#include "cacdec/pipeline.hpp"
#include "cacdec/scoring.hpp"
#include "cacdec/svgplot.hpp"
#include "cacdec/volume.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cacdec;

namespace {

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  json j;
  in >> j;
  return j;
}

void dump_json_file(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

// ---- phantom ------------------------------------------------------------------

int cmd_phantom_generate(const std::string& spec_path, const std::string& out_dir, int pairs,
                         uint64_t seed, int degrade_factor) {
  fs::create_directories(out_dir);
  pipeline::ScanSet set;
  std::ofstream lesions_csv(fs::path(out_dir) / "lesions.csv", std::ios::trunc);
  lesions_csv << "subject,scan,lesion_id,artery,true_mass,rendered_mass\n";

  for (int i = 0; i < pairs; ++i) {
    uint64_t subject_seed = seed + static_cast<uint64_t>(i);
    phantom::PhantomSpec spec = phantom::spec_from_json_file(spec_path, subject_seed);
    auto [scan1, scan2] = phantom::generate_pair(spec, subject_seed);
    if (degrade_factor > 1) {
      scan1 = phantom::degrade(scan1.first, scan1.second, degrade_factor);
      scan2 = phantom::degrade(scan2.first, scan2.second, degrade_factor);
    }
    char subject[32];
    snprintf(subject, sizeof(subject), "p%04d", i);
    for (int s = 0; s < 2; ++s) {
      const auto& [vol, truth] = s == 0 ? scan1 : scan2;
      std::string id = std::string(subject) + (s == 0 ? "_a" : "_b");
      write_volume((fs::path(out_dir) / (id + ".json")).string(), vol);
      phantom::write_truth(out_dir, id, truth);
      pipeline::ScanInput si;
      si.id = id;
      si.volume_path = (fs::path(out_dir) / (id + ".json")).string();
      si.truth_dir = out_dir;
      si.truth_stem = id;
      set.scans.push_back(si);
      for (const auto& l : truth.lesions) {
        char row[256];
        snprintf(row, sizeof(row), "%s,%s,%d,%s,%.9g,%.9g\n", subject, id.c_str(), l.id,
                 l.artery.c_str(), l.true_mass, l.rendered_mass);
        lesions_csv << row;
      }
    }
    set.pairs.push_back({subject, std::string(subject) + "_a", std::string(subject) + "_b"});
  }
  set.save((fs::path(out_dir) / "scans.json").string());
  std::printf("wrote %d phantom pairs to %s\n", pairs, out_dir.c_str());
  return 0;
}

int cmd_phantom_slices(const std::string& scans_path, const std::string& out_dir,
                       int side, int margin, double flag_threshold, int pos_bins) {
  pipeline::ScanSet set = pipeline::ScanSet::from_file(scans_path);
  fs::create_directories(out_dir);
  const int src_side = side + 2 * margin;
  HuWindow window;

  json manifest;
  manifest["side"] = src_side;
  manifest["crop_side"] = side;
  manifest["slices"] = json::array();

  for (const auto& scan : set.scans) {
    if (scan.truth_stem.empty()) continue;
    Volume vol = read_volume(scan.volume_path);
    phantom::PhantomTruth truth = phantom::read_truth(scan.truth_dir, scan.truth_stem);
    Vec3 com = center_of_mass(truth.heart_mask);

    int zmin = vol.nz(), zmax = -1;
    for (int z = 0; z < vol.nz(); ++z) {
      bool any = false;
      for (int y = 0; y < vol.ny() && !any; ++y)
        for (int x = 0; x < vol.nx() && !any; ++x)
          if (truth.heart_mask.at(x, y, z)) any = true;
      if (any) {
        zmin = std::min(zmin, z);
        zmax = std::max(zmax, z);
      }
    }
    if (zmax < zmin) continue;

    for (int z = zmin; z <= zmax; ++z) {
      NormalizedSlice s = normalize_slice(vol, z, com, src_side, window);
      bool cac = false;
      double peak = 0;
      Volume t(src_side, src_side, 1, {1, 1, 1});
      for (int y = 0; y < src_side; ++y)
        for (int x = 0; x < src_side; ++x) {
          int vx = s.x0 + x, vy = s.y0 + y;
          float m = 0;
          if (vx >= 0 && vx < vol.nx() && vy >= 0 && vy < vol.ny())
            m = truth.truth_cac_map.at(vx, vy, z);
          t.at(x, y, 0) = m;
          peak = std::max(peak, static_cast<double>(m));
        }
      cac = peak > flag_threshold;
      double rel = zmax > zmin ? static_cast<double>(z - zmin) / (zmax - zmin) : 0.0;
      int bin = std::min(pos_bins - 1, static_cast<int>(rel * pos_bins));

      char name[64];
      snprintf(name, sizeof(name), "s_%s_z%03d.json", scan.id.c_str(), z);
      char tname[64];
      snprintf(tname, sizeof(tname), "t_%s_z%03d.json", scan.id.c_str(), z);
      Volume sv(src_side, src_side, 1, {1, 1, 1});
      for (int k = 0; k < src_side * src_side; ++k) sv.data()[k] = s.data[k];
      write_float_volume((fs::path(out_dir) / name).string(), sv);
      write_float_volume((fs::path(out_dir) / tname).string(), t);
      manifest["slices"].push_back({{"file", name},
                                    {"truth", tname},
                                    {"cac", cac},
                                    {"pos_bin", bin},
                                    {"scan", scan.id},
                                    {"slice", z}});
    }
  }
  dump_json_file((fs::path(out_dir) / "manifest.json").string(), manifest);
  std::printf("wrote %zu slices to %s\n", manifest["slices"].size(), out_dir.c_str());
  return 0;
}

// ---- training -----------------------------------------------------------------

int cmd_train_heartseg(const std::string& config_path, std::optional<uint64_t> seed) {
  json cfg_json = load_json_file(config_path);
  heartseg::HeartSegConfig cfg = heartseg::HeartSegConfig::from_json(cfg_json.value("model", json::object()));
  if (seed) cfg.seed = *seed;
  std::string out = cfg_json.at("out");

  std::vector<heartseg::TrainCase> cases;
  if (cfg_json.contains("scans")) {
    pipeline::ScanSet set = pipeline::ScanSet::from_file(cfg_json["scans"]);
    size_t max_cases = cfg_json.value("max_cases", set.scans.size());
    for (const auto& scan : set.scans) {
      if (cases.size() >= max_cases) break;
      if (scan.truth_stem.empty()) continue;
      Volume vol = read_volume(scan.volume_path);
      phantom::PhantomTruth truth = phantom::read_truth(scan.truth_dir, scan.truth_stem);
      heartseg::TrainCase c;
      c.image = resample(vol, cfg.working_spacing, Interp::Linear);
      c.mask = resample_mask_to_grid(truth.heart_mask, c.image);
      cases.push_back(std::move(c));
    }
  }
  for (const auto& jc : cfg_json.value("cases", json::array())) {
    heartseg::TrainCase c;
    Volume vol = read_volume(jc.at("volume"));
    c.image = resample(vol, cfg.working_spacing, Interp::Linear);
    c.mask = resample_mask_to_grid(read_mask(jc.at("mask")), c.image);
    cases.push_back(std::move(c));
  }

  heartseg::HeartSegModel model(cfg, cfg.seed);
  heartseg::TrainLog log = heartseg::train_heartseg(model, cases, cfg);
  fs::create_directories(fs::path(out).parent_path().empty() ? "." : fs::path(out).parent_path().string());
  model.save(out, cfg.iterations);
  std::printf("trained heartseg on %zu cases, final loss %.4f, saved %s\n", cases.size(),
              log.loss_curve.empty() ? 0.0 : log.loss_curve.back().second, out.c_str());
  return 0;
}

std::vector<float> center_crop(const Volume& sv, int side) {
  int src = sv.nx();
  int off = (src - side) / 2;
  std::vector<float> out(static_cast<size_t>(side) * side);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x)
      out[static_cast<size_t>(y) * side + x] = sv.at(x + off, y + off, 0);
  return out;
}

int cmd_train_classifier(const std::string& config_path, std::optional<uint64_t> seed) {
  json cfg_json = load_json_file(config_path);
  cacslice::ClassifierConfig cfg =
      cacslice::ClassifierConfig::from_json(cfg_json.value("model", json::object()));
  if (seed) cfg.seed = *seed;
  std::string out = cfg_json.at("out");
  std::string manifest_path = cfg_json.at("manifest");
  json manifest = load_json_file(manifest_path);
  fs::path slice_dir = fs::path(manifest_path).parent_path();

  std::vector<cacslice::LabeledSlice> slices;
  for (const auto& js : manifest.at("slices")) {
    Volume sv = read_float_volume((slice_dir / js.at("file").get<std::string>()).string());
    if (sv.nx() < cfg.side)
      throw std::runtime_error("stored slices are smaller than the classifier side");
    cacslice::LabeledSlice ls;
    ls.data = center_crop(sv, cfg.side);
    ls.cac = js.at("cac");
    slices.push_back(std::move(ls));
  }
  cacslice::SliceClassifier model(cfg, cfg.seed);
  cacslice::TrainLog log = cacslice::train_classifier(model, slices, cfg);
  model.save(out, cfg.iterations);
  std::printf("trained classifier on %zu slices, final loss %.4f, saved %s\n", slices.size(),
              log.loss_curve.empty() ? 0.0 : log.loss_curve.back().second, out.c_str());
  return 0;
}

int cmd_train_cyclegan(const std::string& config_path, const std::string& data_path,
                       const std::string& out_dir, std::optional<uint64_t> seed) {
  json cfg_json = load_json_file(config_path);
  calgan::GanConfig cfg = calgan::GanConfig::from_json(
      cfg_json.contains("model") ? cfg_json["model"] : cfg_json);
  if (seed) cfg.seed = *seed;

  json manifest = load_json_file(data_path);
  fs::path slice_dir = fs::path(data_path).parent_path();
  int src_side = manifest.at("side");
  std::vector<calgan::GanSlice> slices;
  for (const auto& js : manifest.at("slices")) {
    Volume sv = read_float_volume((slice_dir / js.at("file").get<std::string>()).string());
    calgan::GanSlice gs;
    gs.side = src_side;
    gs.cac = js.at("cac");
    gs.pos_bin = js.at("pos_bin");
    gs.data = sv.data();
    slices.push_back(std::move(gs));
  }
  calgan::CycleGan model = calgan::CycleGan::create(cfg);
  calgan::GanTrainLog log = calgan::train_cyclegan(model, slices, out_dir);
  fs::create_directories(out_dir);
  model.save((fs::path(out_dir) / "cyclegan.json").string(), cfg.iterations);
  if (!log.entries.empty()) {
    const auto& e = log.entries.back();
    std::printf("trained cyclegan for %lld iterations: d=%.4f adv=%.4f cyc=%.4f id=%.4f sp=%.4f\n",
                static_cast<long long>(cfg.iterations), e.d_loss, e.g_adv, e.cycle, e.identity,
                e.sparsity);
  }
  std::ofstream curve(fs::path(out_dir) / "loss_curve.csv", std::ios::trunc);
  curve << "iteration,d_loss,g_adv,cycle,identity,sparsity\n";
  for (const auto& e : log.entries) {
    char buf[160];
    snprintf(buf, sizeof(buf), "%lld,%.6g,%.6g,%.6g,%.6g,%.6g\n",
             static_cast<long long>(e.iteration), e.d_loss, e.g_adv, e.cycle, e.identity,
             e.sparsity);
    curve << buf;
  }
  return 0;
}

// ---- inference ------------------------------------------------------------------

int cmd_segment(const std::string& model_path, const std::string& in_path,
                const std::string& out_path, const std::string& prob_path) {
  heartseg::HeartSegModel model = heartseg::HeartSegModel::load(model_path);
  Volume vol = read_volume(in_path);
  Volume work = resample(vol, model.config().working_spacing, Interp::Linear);
  if (!prob_path.empty()) {
    Volume prob = heart_probability(model, work);
    write_float_volume(prob_path, prob);
  }
  BinaryMask mask = heartseg::segment_heart(model, work);
  write_mask(out_path, mask);
  std::printf("segmented %s: %zu heart voxels\n", in_path.c_str(), mask.count());
  return 0;
}

int cmd_classify(const std::string& model_path, const std::string& in_path,
                 const std::string& heart_path, const std::string& out_path) {
  cacslice::SliceClassifier model = cacslice::SliceClassifier::load(model_path);
  Volume vol = read_volume(in_path);
  BinaryMask mask = resample_mask_to_grid(read_mask(heart_path), vol);
  Vec3 com = center_of_mass(mask);
  json flags;
  std::vector<NormalizedSlice> slices;
  std::vector<int> zs;
  for (int z = 0; z < vol.nz(); ++z) {
    bool any = false;
    for (int y = 0; y < vol.ny() && !any; ++y)
      for (int x = 0; x < vol.nx() && !any; ++x)
        if (mask.at(x, y, z)) any = true;
    if (!any) continue;
    slices.push_back(normalize_slice(vol, z, com, model.config().side));
    zs.push_back(z);
  }
  std::vector<bool> fl = cacslice::classify_slices(model, slices);
  for (size_t i = 0; i < zs.size(); ++i) flags[std::to_string(zs[i])] = static_cast<bool>(fl[i]);
  dump_json_file(out_path, flags);
  std::printf("classified %zu heart slices\n", zs.size());
  return 0;
}

int cmd_decompose(const std::string& model_path, const std::string& in_path,
                  const std::string& heart_path, const std::string& flags_path,
                  const std::string& out_path) {
  calgan::CycleGan model = calgan::CycleGan::load(model_path);
  Volume vol = read_volume(in_path);
  BinaryMask mask = resample_mask_to_grid(read_mask(heart_path), vol);
  Vec3 com = center_of_mass(mask);
  HuWindow window;

  std::optional<json> flags;
  if (!flags_path.empty()) flags = load_json_file(flags_path);

  Volume map(vol.nx(), vol.ny(), vol.nz(), vol.spacing(), vol.origin());
  std::vector<NormalizedSlice> slices;
  for (int z = 0; z < vol.nz(); ++z) {
    bool any = false;
    for (int y = 0; y < vol.ny() && !any; ++y)
      for (int x = 0; x < vol.nx() && !any; ++x)
        if (mask.at(x, y, z)) any = true;
    if (!any) continue;
    if (flags) {
      auto it = flags->find(std::to_string(z));
      if (it == flags->end() || !it->get<bool>()) continue;
    }
    slices.push_back(normalize_slice(vol, z, com, model.cfg.side, window));
  }
  std::vector<const std::vector<float>*> data;
  for (const auto& s : slices) data.push_back(&s.data);
  auto maps = calgan::predict_maps(*model.g_r, data, model.cfg.side);
  for (size_t k = 0; k < slices.size(); ++k) {
    const NormalizedSlice& s = slices[k];
    for (int y = 0; y < s.side; ++y) {
      int vy = s.y0 + y;
      if (vy < 0 || vy >= map.ny()) continue;
      for (int x = 0; x < s.side; ++x) {
        int vx = s.x0 + x;
        if (vx < 0 || vx >= map.nx()) continue;
        map.at(vx, vy, s.slice_index) =
            static_cast<float>(window.delta_to_hu(maps[k][static_cast<size_t>(y) * s.side + x]));
      }
    }
  }
  write_float_volume(out_path, map);
  std::printf("decomposed %zu slices\n", slices.size());
  return 0;
}

int cmd_score(const std::string& map_path, const std::string& image_path,
              const std::string& out_path, const std::string& heart_path,
              const std::string& truth_dir, const std::string& truth_stem, bool no_mask,
              bool attenuation_from_image) {
  Volume map = read_float_volume(map_path);
  Volume image = read_volume(image_path);
  std::optional<BinaryMask> region;
  if (!heart_path.empty()) region = resample_mask_to_grid(read_mask(heart_path), image);
  std::optional<phantom::PhantomTruth> truth;
  std::vector<std::string> arteries;
  if (!truth_stem.empty()) {
    truth = phantom::read_truth(truth_dir.empty() ? "." : truth_dir, truth_stem);
    for (const auto& l : truth->lesions) arteries.push_back(l.artery);
  }
  scoring::ScoringOptions opt;
  opt.apply_mask = !no_mask;
  opt.attenuation_from_image = attenuation_from_image;
  scoring::ScoreRecord rec = scoring::score_scan(
      map, image, region ? &*region : nullptr, truth ? &truth->labels : nullptr,
      truth ? &arteries : nullptr, opt);
  svgplot::write_text_file(out_path, scoring::score_record_to_json(rec) + "\n");
  std::printf("pseudo_mass=%.3f adjusted=%.3f conventional=%.3f risk=%s\n", rec.pseudo_mass,
              rec.adjusted_agatston, rec.conventional_agatston,
              scoring::to_string(rec.risk).c_str());
  return 0;
}

int cmd_evaluate(const std::string& pairs_path, const std::string& out_path,
                 const std::string& plot_dir) {
  auto rows = pipeline::read_pairs_csv(pairs_path);
  json rep = pipeline::evaluate_pairs(rows, plot_dir);
  dump_json_file(out_path, rep);
  std::printf("evaluated %zu pair rows\n", rows.size());
  return 0;
}

int cmd_pipeline(const std::string& config_path, const std::string& scans_path,
                 const std::string& out_dir, std::optional<uint64_t> seed) {
  pipeline::PipelineConfig cfg = pipeline::PipelineConfig::from_file(config_path);
  if (seed) cfg.seed = *seed;
  pipeline::ScanSet set = pipeline::ScanSet::from_file(scans_path);
  pipeline::RunManifest manifest = pipeline::run_pipeline(cfg, set, out_dir);
  size_t ok = 0;
  for (const auto& s : manifest.scans) ok += s.ok;
  std::printf("pipeline processed %zu/%zu scans ok; manifest at %s\n", ok,
              manifest.scans.size(),
              (fs::path(cfg.cache_dir.empty() ? out_dir : cfg.cache_dir) / "manifest.json")
                  .string()
                  .c_str());
  return 0;
}

int cmd_report(const std::string& manifest_path, const std::string& out_path,
               const std::string& plot_dir, const std::string& pairs_csv) {
  pipeline::RunManifest manifest = pipeline::RunManifest::load(manifest_path);
  pipeline::write_report_bundle(manifest, out_path, plot_dir);
  if (!pairs_csv.empty()) pipeline::write_pairs_csv(manifest, pairs_csv);
  std::printf("report written to %s\n", out_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Threshold-free coronary calcium scoring pipeline"};
  app.require_subcommand(1);

  std::optional<uint64_t> seed;
  app.add_option("--seed", seed, "global seed override")->expected(1);

  // phantom
  auto* phantom_cmd = app.add_subcommand("phantom", "synthetic phantom tooling");
  phantom_cmd->require_subcommand(1);
  std::string ph_spec, ph_out = "phantoms";
  int ph_pairs = 10, ph_degrade = 1;
  uint64_t ph_seed = 1;
  auto* ph_gen = phantom_cmd->add_subcommand("generate", "generate phantom scan pairs");
  ph_gen->add_option("--spec", ph_spec, "phantom spec or family JSON")->required();
  ph_gen->add_option("--out", ph_out, "output directory");
  ph_gen->add_option("--pairs", ph_pairs, "number of scan pairs");
  ph_gen->add_option("--seed", ph_seed, "base subject seed");
  ph_gen->add_option("--degrade", ph_degrade, "partial-volume downsample factor");

  std::string sl_scans, sl_out = "slices";
  int sl_side = 64, sl_margin = 4, sl_bins = 3;
  double sl_thresh = 10.0;
  auto* ph_slices = phantom_cmd->add_subcommand("slices", "export training slices");
  ph_slices->add_option("--scans", sl_scans, "scans.json from phantom generate")->required();
  ph_slices->add_option("--out", sl_out, "output directory");
  ph_slices->add_option("--side", sl_side, "network crop side");
  ph_slices->add_option("--margin", sl_margin, "extra border for crop jitter");
  ph_slices->add_option("--flag-threshold", sl_thresh, "per-slice CAC flag threshold (HU)");
  ph_slices->add_option("--bins", sl_bins, "relative slice position bins");

  std::string ms_out = "family.json";
  uint64_t ms_seed = 1;
  auto* ph_spec_cmd = phantom_cmd->add_subcommand("make-spec", "write a desk-scale family spec");
  ph_spec_cmd->add_option("--out", ms_out, "output JSON");
  ph_spec_cmd->add_option("--seed", ms_seed, "family seed");

  // training
  std::string ths_cfg;
  auto* ths = app.add_subcommand("train-heartseg", "train the heart segmentation CNN");
  ths->add_option("--config", ths_cfg, "training config JSON")->required();

  std::string tcl_cfg;
  auto* tcl = app.add_subcommand("train-classifier", "train the CAC slice classifier");
  tcl->add_option("--config", tcl_cfg, "training config JSON")->required();

  std::string tg_cfg, tg_data, tg_out = "ckpts";
  auto* tg = app.add_subcommand("train-cyclegan", "train the decomposition CycleGAN");
  tg->add_option("--config", tg_cfg, "GAN config JSON")->required();
  tg->add_option("--data", tg_data, "slice manifest JSON")->required();
  tg->add_option("--out", tg_out, "checkpoint directory");

  // inference
  std::string sg_model, sg_in, sg_out, sg_prob;
  auto* sg = app.add_subcommand("segment", "heart segmentation");
  sg->add_option("--model", sg_model)->required();
  sg->add_option("--in", sg_in)->required();
  sg->add_option("--out", sg_out)->required();
  sg->add_option("--prob", sg_prob, "also write the probability map");

  std::string cl_model, cl_in, cl_heart, cl_out;
  auto* cl = app.add_subcommand("classify", "per-slice CAC classification");
  cl->add_option("--model", cl_model)->required();
  cl->add_option("--in", cl_in)->required();
  cl->add_option("--heart", cl_heart)->required();
  cl->add_option("--out", cl_out)->required();

  std::string dc_model, dc_in, dc_heart, dc_flags, dc_out;
  auto* dc = app.add_subcommand("decompose", "predict the calcium map");
  dc->add_option("--model", dc_model)->required();
  dc->add_option("--in", dc_in)->required();
  dc->add_option("--heart", dc_heart)->required();
  dc->add_option("--flags", dc_flags, "flags.json; all heart slices when omitted");
  dc->add_option("--out", dc_out)->required();

  std::string sc_map, sc_image, sc_out, sc_heart, sc_truth_dir, sc_truth_stem;
  bool sc_no_mask = false, sc_atten_image = false;
  auto* sc = app.add_subcommand("score", "quantify a calcium map");
  sc->add_option("--map", sc_map)->required();
  sc->add_option("--image", sc_image)->required();
  sc->add_option("--out", sc_out)->required();
  sc->add_option("--heart", sc_heart, "search region for the 130 HU baseline");
  sc->add_option("--truth-dir", sc_truth_dir, "phantom truth directory (artery labels)");
  sc->add_option("--truth-stem", sc_truth_stem, "phantom truth stem");
  sc->add_flag("--no-mask", sc_no_mask, "skip the synthetic-image noise masking");
  sc->add_flag("--attenuation-from-image", sc_atten_image,
               "use raw image HU instead of map HU for map lesions");

  std::string ev_pairs, ev_out, ev_plots;
  auto* ev = app.add_subcommand("evaluate", "reproducibility statistics from pairs.csv");
  ev->add_option("--pairs", ev_pairs)->required();
  ev->add_option("--out", ev_out)->required();
  ev->add_option("--plots", ev_plots, "Bland-Altman output directory");

  std::string pl_cfg, pl_scans, pl_out = "run";
  auto* pl = app.add_subcommand("pipeline", "end-to-end run over a scan set");
  pl->add_option("--config", pl_cfg)->required();
  pl->add_option("--scans", pl_scans)->required();
  pl->add_option("--out", pl_out);

  std::string rp_manifest, rp_out, rp_plots, rp_pairs;
  auto* rp = app.add_subcommand("report", "statistics report from a run manifest");
  rp->add_option("--manifest", rp_manifest)->required();
  rp->add_option("--out", rp_out)->required();
  rp->add_option("--plots", rp_plots, "Bland-Altman output directory");
  rp->add_option("--pairs-csv", rp_pairs, "also write pairs.csv");

  CLI11_PARSE(app, argc, argv);

  try {
    if (ph_gen->parsed())
      return cmd_phantom_generate(ph_spec, ph_out, ph_pairs, seed.value_or(ph_seed),
                                  ph_degrade);
    if (ph_slices->parsed())
      return cmd_phantom_slices(sl_scans, sl_out, sl_side, sl_margin, sl_thresh, sl_bins);
    if (ph_spec_cmd->parsed()) {
      phantom::FamilyParams fam;
      fam.seed = seed.value_or(ms_seed);
      phantom::write_family_json(ms_out, fam);
      std::printf("wrote %s\n", ms_out.c_str());
      return 0;
    }
    if (ths->parsed()) return cmd_train_heartseg(ths_cfg, seed);
    if (tcl->parsed()) return cmd_train_classifier(tcl_cfg, seed);
    if (tg->parsed()) return cmd_train_cyclegan(tg_cfg, tg_data, tg_out, seed);
    if (sg->parsed()) return cmd_segment(sg_model, sg_in, sg_out, sg_prob);
    if (cl->parsed()) return cmd_classify(cl_model, cl_in, cl_heart, cl_out);
    if (dc->parsed()) return cmd_decompose(dc_model, dc_in, dc_heart, dc_flags, dc_out);
    if (sc->parsed())
      return cmd_score(sc_map, sc_image, sc_out, sc_heart, sc_truth_dir, sc_truth_stem,
                       sc_no_mask, sc_atten_image);
    if (ev->parsed()) return cmd_evaluate(ev_pairs, ev_out, ev_plots);
    if (pl->parsed()) return cmd_pipeline(pl_cfg, pl_scans, pl_out, seed);
    if (rp->parsed()) return cmd_report(rp_manifest, rp_out, rp_plots, rp_pairs);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
