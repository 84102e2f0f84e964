#include "icbir/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>

#include <json.hpp>

#include "icbir/parallel.hpp"
#include "icbir/rng.hpp"

namespace icbir {

namespace fs = std::filesystem;
using nlohmann::json;

std::string manifest_relative(const std::string& manifest_path,
                              const std::string& record_path) {
  fs::path p(record_path);
  if (p.is_absolute()) return record_path;
  return (fs::path(manifest_path).parent_path() / p).string();
}

std::vector<Volume> load_split(const std::string& manifest_path,
                               const std::string& split, std::size_t s) {
  const std::vector<ManifestRecord> records = read_manifest(manifest_path);
  std::vector<Volume> volumes;
  for (const ManifestRecord& rec : records) {
    if (rec.split != split) continue;
    Volume raw = read_volume(manifest_relative(manifest_path, rec.path));
    Volume canonical = resample_to_canonical(raw, s);
    canonical.id = rec.id;
    canonical.label = rec.label;
    volumes.push_back(std::move(canonical));
  }
  if (volumes.empty()) {
    raise(ErrorCode::Input,
          "manifest '" + manifest_path + "' has no records with split '" + split + "'");
  }
  return volumes;
}

// ---- gen-synthetic -----------------------------------------------------------

GenSyntheticResult cmd_gen_synthetic(const GenSyntheticArgs& args, std::ostream& log) {
  if (args.classes != 2) {
    raise(ErrorCode::Config,
          "gen-synthetic: the phantom family defines exactly 2 classes");
  }
  if (args.train_per_class + args.test_per_class == 0) {
    raise(ErrorCode::Config, "gen-synthetic: count and test-count are both 0");
  }
  if (args.out_dir.empty()) {
    raise(ErrorCode::Config, "gen-synthetic: output directory required");
  }
  std::error_code ec;
  if (fs::exists(args.out_dir) && !fs::is_directory(args.out_dir)) {
    raise(ErrorCode::Io, "gen-synthetic: '" + args.out_dir + "' is not a directory");
  }
  if (fs::is_directory(args.out_dir) && !fs::is_empty(args.out_dir, ec) && !args.force) {
    raise(ErrorCode::State, "gen-synthetic: '" + args.out_dir +
                                "' is not empty; pass --force to write into it");
  }
  fs::create_directories(fs::path(args.out_dir) / "masks", ec);
  if (ec) {
    raise(ErrorCode::Io, "gen-synthetic: cannot create '" + args.out_dir + "'");
  }

  GenSyntheticResult result;
  std::size_t ordinal = 0;
  const auto emit = [&](const char* split, std::size_t per_class) {
    for (int cls = 1; cls <= 2; ++cls) {
      for (std::size_t i = 0; i < per_class; ++i, ++ordinal) {
        char id[48];
        std::snprintf(id, sizeof(id), "%s-c%d-%04zu", split, cls, i);
        PhantomSpec spec;
        spec.seed = mix64(args.seed ^ mix64(1000 + ordinal));
        spec.class_id = cls;
        spec.noise_sigma = args.noise_sigma;
        spec.jitter = args.jitter;
        spec.anomaly_scale = args.anomaly_scale;
        spec.grid = args.grid;
        Phantom phantom = generate_phantom(spec);
        phantom.volume.id = id;
        phantom.volume.label = cls;
        const std::string vol_rel = std::string(id) + ".svol";
        const std::string mask_rel = "masks/" + std::string(id) + "-mask.svol";
        write_volume(phantom.volume, (fs::path(args.out_dir) / vol_rel).string());
        write_volume(mask_to_volume(phantom.mask, std::string(id) + "-mask"),
                     (fs::path(args.out_dir) / mask_rel).string());
        result.records.push_back({vol_rel, id, cls, split, mask_rel});
      }
    }
  };
  emit("train", args.train_per_class);
  emit("test", args.test_per_class);

  result.manifest_path = (fs::path(args.out_dir) / "manifest.jsonl").string();
  write_manifest(result.records, result.manifest_path);
  log << "wrote " << result.records.size() << " volumes (grid " << args.grid
      << ", sigma " << args.noise_sigma << ", jitter " << args.jitter
      << ") with masks under '" << args.out_dir << "'\n";
  log << "manifest: " << result.manifest_path << "\n";
  return result;
}

// ---- train --------------------------------------------------------------------

TrainResult cmd_train(const TrainArgs& args, std::ostream& log) {
  RunConfig config = args.config;
  config.validate();
  if (args.checkpoint_path.empty()) {
    raise(ErrorCode::Config, "train: checkpoint output path required");
  }
  std::vector<Volume> volumes = load_split(args.manifest_path, "train", config.s);
  const int k = static_cast<int>(config.n_classes());
  for (const Volume& v : volumes) {
    if (v.label < 1 || v.label > k) {
      raise(ErrorCode::Input, "train: volume '" + v.id + "' has label " +
                                  std::to_string(v.label) + " but the config names " +
                                  std::to_string(k) + " classes");
    }
  }

  VaeConfig vae_cfg;
  vae_cfg.s = config.s;
  vae_cfg.h = config.h;
  vae_cfg.l = config.l;
  vae_cfg.beta = config.beta;
  vae_cfg.gamma = config.gamma;
  VaeModel model = VaeModel::init(vae_cfg, config.seed);

  SliceDataset dataset = SliceDataset::from_volumes(volumes);
  volumes.clear();
  volumes.shrink_to_fit();
  log << "training on " << dataset.refs.size() << " slices ("
      << dataset.refs.size() / (3 * config.s) << " volumes), batch " << config.batch
      << ", lr " << config.lr << ", beta " << config.beta << ", gamma " << config.gamma
      << "\n";

  PrototypeBank bank = init_prototypes(model, dataset, config.class_names);

  TrainConfig tc;
  tc.epochs = config.epochs;
  tc.batch = config.batch;
  tc.lr = config.lr;
  tc.seed = config.seed;
  tc.temperature = config.temperature;
  tc.progress = [&](std::size_t epoch, const EpochStats& s) {
    char line[192];
    std::snprintf(line, sizeof(line),
                  "epoch %3zu/%zu  D %.6f  KL %.6f  C %.6f  total %.6f",
                  epoch, config.epochs, s.recon, s.kl, s.ce, s.total);
    log << line << std::endl;
  };
  std::vector<EpochStats> curve = train(model, bank, dataset, tc);

  Checkpoint cp;
  cp.model = std::move(model);
  cp.bank = std::move(bank);
  cp.config = config;
  cp.loss_curve = curve;
  write_checkpoint(cp, args.checkpoint_path);
  log << "checkpoint: " << args.checkpoint_path << " (fingerprint " << cp.fingerprint
      << ")\n";
  return {args.checkpoint_path, cp.fingerprint, std::move(curve)};
}

// ---- shared inference knobs -----------------------------------------------------

BlockParams InferenceKnobs::resolve_blocks(const RunConfig& base) const {
  BlockParams p;
  p.n = block_n != 0 ? block_n : base.block_n;
  p.m = block_m != 0 ? block_m : base.block_m;
  return p;
}

DetectionConfig InferenceKnobs::resolve_detection(const RunConfig& base) const {
  DetectionConfig d;
  d.xi = xi.empty() ? base.xi : xi;
  d.r = r != 0 ? r : base.r;
  d.normal_class = base.normal_class;
  return d;
}

float InferenceKnobs::resolve_temperature(const RunConfig& base) const {
  return temperature > 0.0f ? temperature : base.temperature;
}

// ---- index --------------------------------------------------------------------

IndexResult cmd_index(const IndexArgs& args, std::ostream& log) {
  Checkpoint cp = read_checkpoint(args.checkpoint_path);
  std::vector<Volume> volumes = load_split(args.manifest_path, args.split, cp.config.s);
  BlockParams params;
  params.n = args.block_n != 0 ? args.block_n : cp.config.block_n;
  params.m = args.block_m != 0 ? args.block_m : cp.config.block_m;
  params.validate(cp.config.s);
  GalleryIndex index = index_gallery(cp.model, volumes, params, cp.fingerprint,
                                     resolve_thread_count(args.threads));
  index.run_config_json = cp.config.to_json();
  write_index(index, args.index_path);
  log << "indexed " << index.entries.size() << " volumes (split '" << args.split
      << "', n=" << params.n << ", m=" << params.m << ") -> " << args.index_path
      << "\n";
  return {args.index_path, index.entries.size(), cp.fingerprint};
}

// ---- query --------------------------------------------------------------------

QueryCmdResult cmd_query(const QueryArgs& args, std::ostream& log) {
  Checkpoint cp = read_checkpoint(args.checkpoint_path);
  GalleryIndex index = read_index(args.index_path);
  require_fingerprint_match(cp.fingerprint, index.checkpoint_fingerprint,
                            "index '" + args.index_path + "'");
  Volume volume = resample_to_canonical(read_volume(args.volume_path), cp.config.s);
  const VolumeCodes codes = encode_volume_codes(cp.model, volume);
  QueryCmdResult out{query(index, codes, args.k, resolve_thread_count(args.threads))};
  if (out.result.truncated) {
    log << "note: k=" << args.k << " exceeds the gallery ("
        << index.entries.size() << " entries); returning all of it\n";
  }
  log << "rank  score     id                 label\n";
  int rank = 1;
  for (const RankedMatch& m : out.result.matches) {
    const bool named =
        m.label >= 1 && static_cast<std::size_t>(m.label) <= cp.bank.class_names.size();
    char line[192];
    std::snprintf(line, sizeof(line), "%4d  %.6f  %-18s %d%s%s", rank++, m.score,
                  m.id.c_str(), m.label, named ? " " : "",
                  named ? cp.bank.class_names[m.label - 1].c_str() : "");
    log << line << "\n";
  }
  return out;
}

// ---- detect -------------------------------------------------------------------

DetectResult cmd_detect(const DetectArgs& args, std::ostream& log) {
  Checkpoint cp = read_checkpoint(args.checkpoint_path);
  const BlockParams params = args.knobs.resolve_blocks(cp.config);
  const DetectionConfig detection = args.knobs.resolve_detection(cp.config);
  const float temperature = args.knobs.resolve_temperature(cp.config);
  params.validate(cp.config.s);
  detection.validate(cp.bank.n_classes);

  Volume volume = resample_to_canonical(read_volume(args.volume_path), cp.config.s);
  const VolumeCodes codes = encode_volume_codes(cp.model, volume);

  DetectResult result;
  log << "volume '" << volume.id << "': " << params.block_count(cp.config.s)
      << " blocks per section (n=" << params.n << ", m=" << params.m << ")\n";
  for (Orientation orientation : kOrientations) {
    const std::size_t o = static_cast<std::size_t>(axis_of(orientation));
    const std::vector<int> predictions =
        block_predictions(cp.bank, codes, orientation, params, temperature);
    const SectionDetection section =
        detect_section(predictions, cp.bank.n_classes, detection);
    result.section_labels[o] = section_label(section, detection);
    char head[32];
    std::snprintf(head, sizeof(head), "%-9s votes:", to_string(orientation));
    log << head;
    for (std::size_t c = 1; c <= cp.bank.n_classes; ++c) {
      char cell[96];
      std::snprintf(cell, sizeof(cell), "  %s %zu/%zu (%.3f)",
                    cp.bank.class_names[c - 1].c_str(), section.votes[c - 1],
                    section.blocks, section.fractions[c - 1]);
      log << cell;
    }
    log << "  detected:";
    if (section.detected.empty()) {
      log << " none";
    } else {
      for (int d : section.detected) log << " " << cp.bank.class_names[d - 1];
    }
    log << "\n";
    result.sections[o] = std::move(section);
  }
  result.label = detect_volume(result.sections, detection, cp.bank.n_classes);
  log << "label: " << result.label << " ("
      << cp.bank.class_names[static_cast<std::size_t>(result.label - 1)] << ")\n";
  return result;
}

// ---- probmap ------------------------------------------------------------------

ProbmapResult cmd_probmap(const ProbmapArgs& args, std::ostream& log) {
  Checkpoint cp = read_checkpoint(args.checkpoint_path);
  const float temperature = args.knobs.resolve_temperature(cp.config);
  const float threshold = args.threshold < 0.0f ? cp.config.highlight : args.threshold;
  const int k = static_cast<int>(cp.bank.n_classes);
  if (args.target_class < 0 || args.target_class > k) {
    raise(ErrorCode::Parameter,
          "probmap: class must be 0 (all non-normal) or in 1.." + std::to_string(k));
  }
  Volume volume = resample_to_canonical(read_volume(args.volume_path), cp.config.s);

  ProbmapResult out;
  out.map = probability_map_for(cp.model, cp.bank, volume, temperature, args.mode);
  out.map.highlight_threshold = threshold;

  std::error_code ec;
  fs::create_directories(args.out_dir, ec);
  if (ec) raise(ErrorCode::Io, "probmap: cannot create '" + args.out_dir + "'");

  std::vector<Volume> maps = map_to_volumes(out.map);
  for (Volume& mv : maps) {
    char name[48];
    std::snprintf(name, sizeof(name), "probmap-class%d.svol", mv.label);
    const std::string path = (fs::path(args.out_dir) / name).string();
    write_volume(mv, path);
    out.map_paths.push_back(path);
  }
  log << "probability volumes: " << out.map_paths.size() << " classes under '"
      << args.out_dir << "'\n";

  json provenance;
  provenance["checkpoint_fingerprint"] = cp.fingerprint;
  provenance["run_config"] = json::parse(cp.config.to_json());
  provenance["temperature"] = temperature;

  std::vector<int> targets;
  if (args.target_class == 0) {
    for (int c = 1; c <= k; ++c) {
      if (c != cp.config.normal_class) targets.push_back(c);
    }
  } else {
    targets.push_back(args.target_class);
  }
  for (int cls : targets) {
    const std::string sub =
        (fs::path(args.out_dir) / ("overlay-class" + std::to_string(cls))).string();
    OverlayStats stats = export_overlay(out.map, volume, cls, threshold, sub,
                                        args.render, provenance.dump());
    log << cp.bank.class_names[static_cast<std::size_t>(cls - 1)] << ": "
        << stats.highlighted << " voxels >= " << threshold;
    if (stats.centroid) {
      char c[96];
      std::snprintf(c, sizeof(c), ", centroid (%.1f, %.1f, %.1f)",
                    (*stats.centroid)[0], (*stats.centroid)[1], (*stats.centroid)[2]);
      log << c;
    }
    log << ", overlays under '" << sub << "'\n";
    out.overlays.push_back(std::move(stats));
  }
  return out;
}

// ---- eval ---------------------------------------------------------------------

EvalResult cmd_eval(const EvalArgs& args, std::ostream& log) {
  Checkpoint cp = read_checkpoint(args.checkpoint_path);
  GalleryIndex index = read_index(args.index_path);
  require_fingerprint_match(cp.fingerprint, index.checkpoint_fingerprint,
                            "index '" + args.index_path + "'");
  const BlockParams params = args.knobs.resolve_blocks(cp.config);
  const DetectionConfig detection = args.knobs.resolve_detection(cp.config);
  const float temperature = args.knobs.resolve_temperature(cp.config);
  params.validate(cp.config.s);

  std::vector<Volume> volumes = load_split(args.manifest_path, args.split, cp.config.s);
  EvalResult out;
  out.report = evaluate_run(cp.model, cp.bank, index, volumes, detection, params,
                            temperature, resolve_thread_count(args.threads));

  json extra;
  extra["checkpoint_fingerprint"] = cp.fingerprint;
  extra["split"] = args.split;
  extra["run_config"] = json::parse(cp.config.to_json());
  extra["detection"] = {{"xi", detection.xi},
                        {"r", detection.r},
                        {"block_n", params.n},
                        {"block_m", params.m},
                        {"temperature", temperature}};
  const std::string report_text = report_to_json(out.report, extra.dump());
  if (!args.report_path.empty()) {
    std::ofstream file(args.report_path, std::ios::trunc);
    if (!file) raise(ErrorCode::Io, "eval: cannot create '" + args.report_path + "'");
    file << report_text;
    if (!file.good()) {
      raise(ErrorCode::Io, "eval: short write to '" + args.report_path + "'");
    }
    log << "report: " << args.report_path << "\n";
  }
  if (!args.tsv_path.empty()) {
    std::ofstream file(args.tsv_path, std::ios::trunc);
    if (!file) raise(ErrorCode::Io, "eval: cannot create '" + args.tsv_path + "'");
    file << report_to_tsv(out.report);
    log << "summary: " << args.tsv_path << "\n";
  }
  log << report_to_tsv(out.report);
  if (out.report.leakage_warning) {
    log << "warning: test volumes also appear in the gallery; retrieval rows measure "
           "self-matching, not generalization\n";
  }
  out.report_path = args.report_path;
  return out;
}

}  // namespace icbir
