#include "icbir/metrics.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include <json.hpp>

#include "icbir/parallel.hpp"

namespace icbir {

using nlohmann::json;

ConfusionMatrix ConfusionMatrix::make(std::size_t n_classes) {
  if (n_classes < 1) raise(ErrorCode::Config, "confusion matrix needs >= 1 class");
  ConfusionMatrix cm;
  cm.n_classes = n_classes;
  cm.counts.assign(n_classes * n_classes, 0);
  return cm;
}

void ConfusionMatrix::accumulate(int true_class, int predicted_class) {
  const int k = static_cast<int>(n_classes);
  if (true_class < 1 || true_class > k || predicted_class < 1 || predicted_class > k) {
    raise(ErrorCode::Input,
          "confusion matrix: label out of range 1.." + std::to_string(k) + " (true=" +
              std::to_string(true_class) + ", predicted=" +
              std::to_string(predicted_class) + ")");
  }
  counts[static_cast<std::size_t>(true_class - 1) * n_classes +
         static_cast<std::size_t>(predicted_class - 1)]++;
}

std::size_t ConfusionMatrix::at(std::size_t true_class,
                                std::size_t predicted_class) const {
  if (true_class < 1 || true_class > n_classes || predicted_class < 1 ||
      predicted_class > n_classes) {
    raise(ErrorCode::Input, "confusion matrix: index out of range");
  }
  return counts[(true_class - 1) * n_classes + (predicted_class - 1)];
}

std::size_t ConfusionMatrix::total() const {
  std::size_t sum = 0;
  for (std::size_t c : counts) sum += c;
  return sum;
}

namespace {

double safe_ratio(double numerator, double denominator) {
  return denominator == 0.0 ? 0.0 : numerator / denominator;
}

}  // namespace

MetricsSummary compute_metrics(const ConfusionMatrix& cm) {
  if (cm.n_classes == 0 || cm.total() == 0) {
    raise(ErrorCode::Input, "compute_metrics: empty confusion matrix");
  }
  MetricsSummary summary;
  summary.per_class.resize(cm.n_classes);
  std::size_t trace = 0;
  for (std::size_t c = 1; c <= cm.n_classes; ++c) {
    std::size_t tp = cm.at(c, c);
    std::size_t row = 0, col = 0;  // row = all true c, col = all predicted c
    for (std::size_t o = 1; o <= cm.n_classes; ++o) {
      row += cm.at(c, o);
      col += cm.at(o, c);
    }
    ClassMetrics& m = summary.per_class[c - 1];
    m.precision = safe_ratio(static_cast<double>(tp), static_cast<double>(col));
    m.recall = safe_ratio(static_cast<double>(tp), static_cast<double>(row));
    m.f1 = safe_ratio(2.0 * m.precision * m.recall, m.precision + m.recall);
    summary.macro_precision += m.precision;
    summary.macro_recall += m.recall;
    summary.macro_f1 += m.f1;
    trace += tp;
  }
  const double k = static_cast<double>(cm.n_classes);
  summary.macro_precision /= k;
  summary.macro_recall /= k;
  summary.macro_f1 /= k;
  summary.accuracy =
      static_cast<double>(trace) / static_cast<double>(cm.total());
  return summary;
}

int section_label(const SectionDetection& section, const DetectionConfig& config) {
  int best = config.normal_class;
  double best_fraction = -1.0;
  for (int d : section.detected) {
    const double fraction = section.fractions[static_cast<std::size_t>(d - 1)];
    if (fraction > best_fraction) {  // strict: first (lowest) index wins ties
      best_fraction = fraction;
      best = d;
    }
  }
  return best;
}

EvalReport evaluate_run(const VaeModel& model, const PrototypeBank& bank,
                        const GalleryIndex& index,
                        const std::vector<Volume>& test_volumes,
                        const DetectionConfig& detection, BlockParams params,
                        float temperature, int threads) {
  if (test_volumes.empty()) raise(ErrorCode::Input, "evaluate_run: no test volumes");
  if (index.entries.empty()) raise(ErrorCode::Input, "evaluate_run: empty gallery");
  detection.validate(bank.n_classes);
  const int k = static_cast<int>(bank.n_classes);
  for (const Volume& v : test_volumes) {
    if (v.label < 1 || v.label > k) {
      raise(ErrorCode::Input, "evaluate_run: volume '" + v.id + "' has label " +
                                  std::to_string(v.label) + ", expected 1.." +
                                  std::to_string(k));
    }
  }

  std::vector<VolumeOutcome> outcomes(test_volumes.size());
  const int workers = resolve_thread_count(threads);
  parallel_for(test_volumes.size(), workers, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const Volume& volume = test_volumes[i];
      const VolumeCodes codes = encode_volume_codes(model, volume);
      std::array<SectionDetection, 3> sections;
      VolumeOutcome& out = outcomes[i];
      out.id = volume.id;
      out.true_label = volume.label;
      for (Orientation orientation : kOrientations) {
        const std::size_t o = static_cast<std::size_t>(axis_of(orientation));
        const std::vector<int> predictions =
            block_predictions(bank, codes, orientation, params, temperature);
        sections[o] = detect_section(predictions, bank.n_classes, detection);
        out.orientation_pred[o] = section_label(sections[o], detection);
      }
      out.ensemble_pred = detect_volume(sections, detection, bank.n_classes);
      const QueryResult top = query(index, codes, 1, 1);
      out.retrieval_pred = top.matches.front().label;
      out.retrieval_top_id = top.matches.front().id;
    }
  });

  EvalReport report;
  report.class_names = bank.class_names;
  for (EvalBlock* block : {&report.per_orientation[0], &report.per_orientation[1],
                           &report.per_orientation[2], &report.ensemble,
                           &report.retrieval}) {
    block->confusion = ConfusionMatrix::make(bank.n_classes);
  }
  for (const VolumeOutcome& out : outcomes) {
    for (std::size_t o = 0; o < 3; ++o) {
      report.per_orientation[o].confusion.accumulate(out.true_label,
                                                     out.orientation_pred[o]);
    }
    report.ensemble.confusion.accumulate(out.true_label, out.ensemble_pred);
    report.retrieval.confusion.accumulate(out.true_label, out.retrieval_pred);
  }
  for (std::size_t o = 0; o < 3; ++o) {
    report.per_orientation[o].metrics =
        compute_metrics(report.per_orientation[o].confusion);
  }
  report.ensemble.metrics = compute_metrics(report.ensemble.confusion);
  report.retrieval.metrics = compute_metrics(report.retrieval.confusion);

  std::set<std::string> gallery_ids;
  for (const GalleryEntry& entry : index.entries) gallery_ids.insert(entry.id);
  for (const VolumeOutcome& out : outcomes) {
    if (gallery_ids.count(out.id)) {
      report.leakage_warning = true;
      break;
    }
  }

  std::sort(outcomes.begin(), outcomes.end(),
            [](const VolumeOutcome& a, const VolumeOutcome& b) { return a.id < b.id; });
  report.volumes = std::move(outcomes);
  return report;
}

namespace {

json confusion_to_json(const ConfusionMatrix& cm) {
  json rows = json::array();
  for (std::size_t t = 1; t <= cm.n_classes; ++t) {
    json row = json::array();
    for (std::size_t p = 1; p <= cm.n_classes; ++p) row.push_back(cm.at(t, p));
    rows.push_back(std::move(row));
  }
  return rows;
}

ConfusionMatrix confusion_from_json(const json& rows) {
  if (!rows.is_array() || rows.empty()) {
    raise(ErrorCode::Format, "report: confusion matrix must be a non-empty array");
  }
  ConfusionMatrix cm = ConfusionMatrix::make(rows.size());
  for (std::size_t t = 0; t < cm.n_classes; ++t) {
    const json& row = rows[t];
    if (!row.is_array() || row.size() != cm.n_classes) {
      raise(ErrorCode::Format, "report: confusion matrix is not square");
    }
    for (std::size_t p = 0; p < cm.n_classes; ++p) {
      cm.counts[t * cm.n_classes + p] = row[p].get<std::size_t>();
    }
  }
  return cm;
}

json block_to_json(const EvalBlock& block) {
  json per_class = json::array();
  for (const ClassMetrics& m : block.metrics.per_class) {
    per_class.push_back(
        {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}});
  }
  return json{{"confusion", confusion_to_json(block.confusion)},
              {"per_class", std::move(per_class)},
              {"macro",
               {{"precision", block.metrics.macro_precision},
                {"recall", block.metrics.macro_recall},
                {"f1", block.metrics.macro_f1}}},
              {"accuracy", block.metrics.accuracy}};
}

EvalBlock block_from_json(const json& j) {
  EvalBlock block;
  block.confusion = confusion_from_json(j.at("confusion"));
  for (const json& m : j.at("per_class")) {
    block.metrics.per_class.push_back({m.at("precision").get<double>(),
                                       m.at("recall").get<double>(),
                                       m.at("f1").get<double>()});
  }
  block.metrics.macro_precision = j.at("macro").at("precision").get<double>();
  block.metrics.macro_recall = j.at("macro").at("recall").get<double>();
  block.metrics.macro_f1 = j.at("macro").at("f1").get<double>();
  block.metrics.accuracy = j.at("accuracy").get<double>();
  return block;
}

}  // namespace

std::string report_to_json(const EvalReport& report,
                           const std::string& extra_meta_json) {
  json meta;
  meta["class_names"] = report.class_names;
  meta["n_volumes"] = report.volumes.size();
  meta["leakage_warning"] = report.leakage_warning;
  json volumes = json::array();
  for (const VolumeOutcome& v : report.volumes) {
    volumes.push_back({{"id", v.id},
                       {"true_label", v.true_label},
                       {"axial", v.orientation_pred[0]},
                       {"coronal", v.orientation_pred[1]},
                       {"sagittal", v.orientation_pred[2]},
                       {"ensemble", v.ensemble_pred},
                       {"retrieval", v.retrieval_pred},
                       {"retrieval_top_id", v.retrieval_top_id}});
  }
  meta["volumes"] = std::move(volumes);
  if (!extra_meta_json.empty()) {
    json extra = json::parse(extra_meta_json);
    for (auto it = extra.begin(); it != extra.end(); ++it) meta[it.key()] = it.value();
  }
  json root;
  root["meta"] = std::move(meta);
  root["per_orientation"] = {
      {"axial", block_to_json(report.per_orientation[0])},
      {"coronal", block_to_json(report.per_orientation[1])},
      {"sagittal", block_to_json(report.per_orientation[2])}};
  root["ensemble"] = block_to_json(report.ensemble);
  root["retrieval"] = block_to_json(report.retrieval);
  return root.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    raise(ErrorCode::Format, std::string("report: invalid JSON: ") + e.what());
  }
  try {
    EvalReport report;
    const json& meta = root.at("meta");
    report.class_names = meta.at("class_names").get<std::vector<std::string>>();
    report.leakage_warning = meta.at("leakage_warning").get<bool>();
    for (const json& v : meta.at("volumes")) {
      VolumeOutcome out;
      out.id = v.at("id").get<std::string>();
      out.true_label = v.at("true_label").get<int>();
      out.orientation_pred = {v.at("axial").get<int>(), v.at("coronal").get<int>(),
                              v.at("sagittal").get<int>()};
      out.ensemble_pred = v.at("ensemble").get<int>();
      out.retrieval_pred = v.at("retrieval").get<int>();
      out.retrieval_top_id = v.at("retrieval_top_id").get<std::string>();
      report.volumes.push_back(std::move(out));
    }
    const json& po = root.at("per_orientation");
    report.per_orientation[0] = block_from_json(po.at("axial"));
    report.per_orientation[1] = block_from_json(po.at("coronal"));
    report.per_orientation[2] = block_from_json(po.at("sagittal"));
    report.ensemble = block_from_json(root.at("ensemble"));
    report.retrieval = block_from_json(root.at("retrieval"));
    return report;
  } catch (const json::exception& e) {
    raise(ErrorCode::Format, std::string("report: missing or mistyped field: ") +
                                 e.what());
  }
}

std::string report_to_tsv(const EvalReport& report) {
  std::ostringstream out;
  out << "section\tprecision\trecall\tf1\n";
  const auto row = [&](const char* name, const MetricsSummary& m) {
    out << name << '\t' << m.macro_precision << '\t' << m.macro_recall << '\t'
        << m.macro_f1 << '\n';
  };
  out.precision(6);
  out.setf(std::ios::fixed);
  row("coronal", report.per_orientation[1].metrics);
  row("sagittal", report.per_orientation[2].metrics);
  row("axial", report.per_orientation[0].metrics);
  row("ensemble", report.ensemble.metrics);
  row("retrieval", report.retrieval.metrics);
  return out.str();
}

}  // namespace icbir
