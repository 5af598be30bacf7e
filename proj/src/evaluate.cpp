#include "sos/evaluate.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "sos/errors.hpp"
#include "sos/image.hpp"

namespace sos {

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : counts_(classes, std::vector<std::size_t>(classes, 0)) {}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted) {
  if (truth >= classes() || predicted >= classes()) throw UsageError("confusion matrix: class out of range");
  ++counts_[truth][predicted];
}

std::size_t ConfusionMatrix::total() const {
  std::size_t t = 0;
  for (const auto& row : counts_)
    for (auto v : row) t += v;
  return t;
}

std::size_t ConfusionMatrix::trace() const {
  std::size_t t = 0;
  for (std::size_t i = 0; i < classes(); ++i) t += counts_[i][i];
  return t;
}

std::size_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::size_t t = 0;
  for (auto v : counts_[truth]) t += v;
  return t;
}

std::size_t ConfusionMatrix::column_sum(std::size_t predicted) const {
  std::size_t t = 0;
  for (const auto& row : counts_) t += row[predicted];
  return t;
}

namespace {

double ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

}  // namespace

ClassMetrics class_metrics(const ConfusionMatrix& cm, std::size_t cls) {
  const double tp = static_cast<double>(cm.at(cls, cls));
  const double fn = static_cast<double>(cm.row_sum(cls)) - tp;
  const double fp = static_cast<double>(cm.column_sum(cls)) - tp;
  const double tn = static_cast<double>(cm.total()) - tp - fn - fp;
  ClassMetrics m;
  m.precision = ratio(tp, tp + fp);
  m.recall = ratio(tp, tp + fn);
  m.specificity = ratio(tn, tn + fp);
  m.f1 = ratio(2.0 * m.precision * m.recall, m.precision + m.recall);
  return m;
}

double total_accuracy(const ConfusionMatrix& cm) {
  return ratio(static_cast<double>(cm.trace()), static_cast<double>(cm.total()));
}

MetricsReport evaluate(const SosModel& model, const std::vector<PreparedSlide>& slides, const EvalOptions& options) {
  if (slides.empty()) throw UsageError("evaluate: empty split");
  const std::size_t n = model.config.num_classes;
  MetricsReport report;
  report.name = to_string(model.config.variant);
  report.confusion = ConfusionMatrix(n);
  std::size_t lowres = 0;
  InferOptions infer;
  infer.forced_threshold = options.forced_threshold;
  for (const auto& slide : slides) {
    const auto result = sos_infer(model, slide, infer);
    report.confusion.add(slide.label, result.label);
    if (result.decision.pathway == Pathway::LowRes) ++lowres;
    report.inference_seconds += std::chrono::duration<double>(result.elapsed).count();
    report.decisions.push_back({slide.slide_id, slide.label, result.label, result.decision.pathway,
                                result.decision.confidence, result.chosen_patches});
  }
  report.total_accuracy = total_accuracy(report.confusion);
  for (std::size_t c = 0; c < n; ++c) report.per_class.push_back(class_metrics(report.confusion, c));
  report.lowres_fraction = static_cast<double>(lowres) / static_cast<double>(slides.size());
  report.threshold = options.forced_threshold.value_or(model.threshold());
  report.relative_size = relative_size(model, reference_model(model.config));
  return report;
}

double subset_accuracy(const MetricsReport& report, const std::vector<std::size_t>& classes) {
  std::size_t hit = 0, total = 0;
  for (const auto& d : report.decisions) {
    if (std::find(classes.begin(), classes.end(), d.truth) == classes.end()) continue;
    ++total;
    hit += d.truth == d.predicted ? 1 : 0;
  }
  return ratio(static_cast<double>(hit), static_cast<double>(total));
}

double relative_size(std::size_t model_parameters, std::size_t reference_parameters) {
  if (reference_parameters == 0) throw UsageError("relative_size: reference has no parameters");
  return static_cast<double>(model_parameters) / static_cast<double>(reference_parameters);
}

double relative_size(const SosModel& model, const SosModel& reference) {
  return relative_size(model.parameter_count(), reference.parameter_count());
}

SosModel reference_model(const ModelConfig& config) {
  ModelConfig image = config;
  image.variant = Variant::ImageLevel;
  return make_model(image, 0);
}

std::vector<BenchmarkRow> benchmark(const std::vector<BenchmarkEntry>& entries, const std::vector<PreparedSlide>& slides,
                                    std::size_t repetitions, std::size_t baseline) {
  if (repetitions < 3) throw UsageError("benchmark: at least 3 repetitions are required");
  if (entries.empty() || baseline >= entries.size()) throw UsageError("benchmark: baseline index out of range");
  if (slides.empty()) throw UsageError("benchmark: empty split");

  auto run_once = [&](const BenchmarkEntry& entry) {
    InferOptions options;
    options.forced_threshold = entry.forced_threshold;
    std::size_t checksum = 0;
    const auto start = std::chrono::steady_clock::now();
    for (const auto& slide : slides) checksum += sos_infer(*entry.model, slide, options).label;
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return std::pair{seconds, checksum};
  };

  std::vector<BenchmarkRow> rows;
  for (const auto& entry : entries) {
    BenchmarkRow row;
    row.name = entry.name;
    run_once(entry);
    for (std::size_t r = 0; r < repetitions; ++r) row.samples.push_back(run_once(entry).first);
    auto sorted = row.samples;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t mid = sorted.size() / 2;
    row.inference_seconds = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
    rows.push_back(std::move(row));
  }
  for (auto& row : rows) row.speed_boost = rows[baseline].inference_seconds / row.inference_seconds;
  return rows;
}

std::vector<AblationRow> ablate(const std::vector<AblationCell>& cells, const std::vector<PreparedSlide>& train_slides,
                                const std::vector<PreparedSlide>& test_slides, std::size_t num_classes) {
  std::vector<AblationRow> rows;
  for (const auto& cell : cells) {
    TrainOptions options;
    options.num_classes = num_classes;
    auto trained = train(cell.config, train_slides, options);
    auto report = evaluate(trained.model, test_slides);
    report.name = cell.name;
    rows.push_back({cell, std::move(report)});
  }
  return rows;
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, '\t')) fields.push_back(field);
  return fields;
}

bool parse_switch(const std::string& text) {
  if (text == "on" || text == "1" || text == "true") return true;
  if (text == "off" || text == "0" || text == "false") return false;
  throw UsageError("grid: expected on/off, got '" + text + "'");
}

}  // namespace

std::vector<AblationCell> read_grid(const std::filesystem::path& path, const TrainConfig& base) {
  std::ifstream in(path);
  if (!in) throw DataError(DataErrorKind::MissingFile, "missing grid file " + path.string());
  std::vector<std::string> columns;
  std::vector<AblationCell> cells;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto fields = split_tabs(line);
    if (columns.empty()) {
      columns = fields;
      continue;
    }
    if (fields.size() != columns.size()) throw DataError(DataErrorKind::Malformed, path.string() + ": ragged row");
    AblationCell cell{"", base};
    auto& c = cell.config;
    for (std::size_t i = 0; i < columns.size(); ++i) {
      const auto& key = columns[i];
      const auto& value = fields[i];
      if (key == "name") cell.name = value;
      else if (key == "k") c.top_k = std::stoull(value);
      else if (key == "fusion") c.fusion = parse_fusion_mode(value);
      else if (key == "l2") c.loss.enable_l2 = parse_switch(value);
      else if (key == "l3") c.loss.enable_l3 = parse_switch(value);
      else if (key == "seed") c.seed = std::stoull(value);
      else if (key == "epochs") c.epochs = std::stoull(value);
      else if (key == "variant") c.variant = parse_variant(value);
      else if (key == "lr") c.learning_rate = std::stod(value);
      else if (key == "batch") c.batch_size = std::stoull(value);
      else if (key == "d") c.feature_width = std::stoull(value);
      else throw DataError(DataErrorKind::Malformed, path.string() + ": unknown grid column '" + key + "'");
    }
    if (cell.name.empty()) cell.name = "cell" + std::to_string(cells.size());
    validate(c);
    cells.push_back(std::move(cell));
  }
  if (cells.empty()) throw UsageError("grid: no cells in " + path.string());
  return cells;
}

namespace {

void write_echo(std::ostream& out, const ConfigEcho& echo) {
  for (const auto& [key, value] : echo) out << "# " << key << "=" << value << "\n";
}

}  // namespace

void write_metrics_report(std::ostream& out, const MetricsReport& report, const std::vector<std::string>& class_names,
                          const ConfigEcho& echo) {
  write_echo(out, echo);
  out << std::setprecision(6) << std::fixed;
  out << "metric\tvalue\n";
  out << "TA\t" << report.total_accuracy << "\n";
  out << "LP\t" << report.lowres_fraction << "\n";
  out << "CT\t" << report.threshold << "\n";
  out << "RS\t" << report.relative_size << "\n";
  out << "IT\t" << report.inference_seconds << "\n";
  out << "\nclass\tPR\tRE\tSP\tF1\n";
  for (std::size_t c = 0; c < report.per_class.size(); ++c) {
    const auto& m = report.per_class[c];
    out << (c < class_names.size() ? class_names[c] : std::to_string(c)) << "\t" << m.precision << "\t" << m.recall
        << "\t" << m.specificity << "\t" << m.f1 << "\n";
  }
  out << "\ntruth\\predicted";
  for (std::size_t c = 0; c < report.confusion.classes(); ++c) out << "\t" << (c < class_names.size() ? class_names[c] : std::to_string(c));
  out << "\n";
  for (std::size_t t = 0; t < report.confusion.classes(); ++t) {
    out << (t < class_names.size() ? class_names[t] : std::to_string(t));
    for (std::size_t p = 0; p < report.confusion.classes(); ++p) out << "\t" << report.confusion.at(t, p);
    out << "\n";
  }
  out.unsetf(std::ios::floatfield);
}

void write_decision_log(std::ostream& out, const MetricsReport& report) {
  out << "slide_id\ttruth\tpredicted\tpathway\tconfidence\tpatches\n";
  out << std::setprecision(6) << std::fixed;
  for (const auto& d : report.decisions) {
    out << d.slide_id << "\t" << d.truth << "\t" << d.predicted << "\t" << to_string(d.pathway) << "\t" << d.confidence
        << "\t";
    for (std::size_t i = 0; i < d.patches.size(); ++i) out << (i ? "," : "") << d.patches[i];
    out << "\n";
  }
  out.unsetf(std::ios::floatfield);
}

void write_benchmark_report(std::ostream& out, const std::vector<BenchmarkRow>& rows, const ConfigEcho& echo) {
  write_echo(out, echo);
  out << "model\tIT_seconds\tSB\tsamples\n";
  out << std::setprecision(6) << std::fixed;
  for (const auto& row : rows) {
    out << row.name << "\t" << row.inference_seconds << "\t" << row.speed_boost << "\t";
    for (std::size_t i = 0; i < row.samples.size(); ++i) out << (i ? "," : "") << row.samples[i];
    out << "\n";
  }
  out.unsetf(std::ios::floatfield);
}

void write_ablation_report(std::ostream& out, const std::vector<AblationRow>& rows,
                           const std::vector<std::string>& class_names, const ConfigEcho& echo) {
  write_echo(out, echo);
  out << "name\tvariant\tk\tfusion\tl2\tl3\tseed\tepochs\tTA\tLP\tCT\tRS";
  for (const auto& name : class_names) out << "\tF1_" << name;
  out << "\n" << std::setprecision(6) << std::fixed;
  for (const auto& row : rows) {
    const auto& c = row.cell.config;
    out << row.cell.name << "\t" << to_string(c.variant) << "\t" << c.top_k << "\t" << to_string(c.fusion) << "\t"
        << (c.loss.enable_l2 ? "on" : "off") << "\t" << (c.loss.enable_l3 ? "on" : "off") << "\t" << c.seed << "\t"
        << c.epochs << "\t" << row.report.total_accuracy << "\t" << row.report.lowres_fraction << "\t"
        << row.report.threshold << "\t" << row.report.relative_size;
    for (const auto& m : row.report.per_class) out << "\t" << m.f1;
    out << "\n";
  }
  out.unsetf(std::ios::floatfield);
}

}  // namespace sos
