#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sos/nets.hpp"
#include "sos/protocol.hpp"
#include "sos/slide.hpp"
#include "sos/train.hpp"

namespace sos {

// counts[truth][predicted]
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes);

  void add(std::size_t truth, std::size_t predicted);
  std::size_t classes() const { return counts_.size(); }
  std::size_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth][predicted]; }
  std::size_t total() const;
  std::size_t trace() const;
  std::size_t row_sum(std::size_t truth) const;
  std::size_t column_sum(std::size_t predicted) const;

 private:
  std::vector<std::vector<std::size_t>> counts_;
};

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double specificity = 0.0;
  double f1 = 0.0;
};

// Zero denominators give 0.
ClassMetrics class_metrics(const ConfusionMatrix& cm, std::size_t cls);
double total_accuracy(const ConfusionMatrix& cm);

struct SlideDecision {
  std::string slide_id;
  std::size_t truth = 0;
  std::size_t predicted = 0;
  Pathway pathway = Pathway::LowRes;
  double confidence = 0.0;
  std::vector<std::size_t> patches;
};

struct MetricsReport {
  std::string name;
  ConfusionMatrix confusion{0};
  double total_accuracy = 0.0;
  std::vector<ClassMetrics> per_class;
  double lowres_fraction = 0.0;  // LP
  double threshold = 0.0;        // CT
  double relative_size = 0.0;    // RS against the ImageLevel model
  double inference_seconds = 0.0;
  std::vector<SlideDecision> decisions;
};

struct EvalOptions {
  std::optional<double> forced_threshold;
};

// Runs sos_infer over the split. Throws UsageError on an empty split.
MetricsReport evaluate(const SosModel& model, const std::vector<PreparedSlide>& slides,
                       const EvalOptions& options = {});

// Accuracy restricted to slides whose truth is in classes.
double subset_accuracy(const MetricsReport& report, const std::vector<std::size_t>& classes);

// parameter_count(model) / parameter_count(reference); UsageError when the
// reference has no parameters.
double relative_size(const SosModel& model, const SosModel& reference);
double relative_size(std::size_t model_parameters, std::size_t reference_parameters);

// The ImageLevel model a variant is sized against.
SosModel reference_model(const ModelConfig& config);

struct BenchmarkEntry {
  std::string name;
  const SosModel* model = nullptr;
  std::optional<double> forced_threshold;
};

struct BenchmarkRow {
  std::string name;
  double inference_seconds = 0.0;  // IT: median total wall time over the split
  double speed_boost = 0.0;        // SB against the baseline row
  std::vector<double> samples;
};

// One discarded warm-up pass, then `repetitions` timed passes per model on
// the calling thread. baseline indexes the entry SB is measured against.
std::vector<BenchmarkRow> benchmark(const std::vector<BenchmarkEntry>& entries, const std::vector<PreparedSlide>& slides,
                                    std::size_t repetitions, std::size_t baseline);

// One row of an ablation grid.
struct AblationCell {
  std::string name;
  TrainConfig config;
};

struct AblationRow {
  AblationCell cell;
  MetricsReport report;
};

// Each cell trains on train_slides and evaluates on test_slides.
std::vector<AblationRow> ablate(const std::vector<AblationCell>& cells, const std::vector<PreparedSlide>& train_slides,
                                const std::vector<PreparedSlide>& test_slides, std::size_t num_classes);

// Grid file: tab separated with a header naming any of
// name, k, fusion, l2, l3, seed, epochs, variant, lr, batch, d.
std::vector<AblationCell> read_grid(const std::filesystem::path& path, const TrainConfig& base);

using ConfigEcho = std::vector<std::pair<std::string, std::string>>;

// Tab-separated tables; each starts with "# key=value ..." comment lines.
void write_metrics_report(std::ostream& out, const MetricsReport& report, const std::vector<std::string>& class_names,
                          const ConfigEcho& echo);
void write_decision_log(std::ostream& out, const MetricsReport& report);
void write_benchmark_report(std::ostream& out, const std::vector<BenchmarkRow>& rows, const ConfigEcho& echo);
void write_ablation_report(std::ostream& out, const std::vector<AblationRow>& rows,
                           const std::vector<std::string>& class_names, const ConfigEcho& echo);

}  // namespace sos
