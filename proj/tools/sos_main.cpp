#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "sos/checkpoint.hpp"
#include "sos/dataset.hpp"
#include "sos/errors.hpp"
#include "sos/evaluate.hpp"
#include "sos/train.hpp"

namespace fs = std::filesystem;
using namespace sos;

namespace {

ClassCounts parse_counts(const std::string& text) {
  ClassCounts counts{};
  std::istringstream is(text);
  std::string item;
  std::size_t i = 0;
  while (std::getline(is, item, ',')) {
    if (i >= counts.size()) throw UsageError("expected " + std::to_string(kNumClasses) + " comma-separated counts");
    counts[i++] = std::stoull(item);
  }
  if (i != counts.size()) throw UsageError("expected " + std::to_string(kNumClasses) + " comma-separated counts");
  return counts;
}

std::string join(const ClassCounts& c) {
  std::ostringstream os;
  for (std::size_t i = 0; i < c.size(); ++i) os << (i ? "," : "") << c[i];
  return os.str();
}

struct Dataset {
  DatasetManifest manifest;
  fs::path root;
};

Dataset open_dataset(const fs::path& dir) {
  return {load_manifest(dir / "manifest.tsv"), dir};
}

ConfigEcho data_echo(const Dataset& data) {
  return {{"data", data.root.string()},
          {"data_seed", std::to_string(data.manifest.seed)},
          {"fullres", std::to_string(data.manifest.full_side)},
          {"factor", std::to_string(data.manifest.factor)}};
}

void write_file(const fs::path& path, const std::function<void(std::ostream&)>& body) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError(DataErrorKind::MissingFile, "cannot write " + path.string());
  body(out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Confidence-gated multi-scale slide classifier"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Render a synthetic slide dataset");
  std::string gen_out;
  std::uint64_t gen_seed = 0;
  std::string train_counts = join(default_train_counts());
  std::string test_counts = join(default_test_counts());
  SynthConfig synth;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--train-counts", train_counts, "Per-class train counts a,b,c,d")->capture_default_str();
  gen->add_option("--test-counts", test_counts, "Per-class test counts a,b,c,d")->capture_default_str();
  gen->add_option("--fullres", synth.full_side, "Full-resolution side length")->capture_default_str();
  gen->add_option("--factor", synth.factor, "Downscale factor")->capture_default_str();

  // train
  auto* trn = app.add_subcommand("train", "Train one model variant");
  std::string data_dir, run_out, variant = "sos", fusion = "gru", optimizer = "adam";
  TrainConfig tc;
  bool no_l2 = false, no_l3 = false;
  trn->add_option("--data", data_dir, "Dataset directory")->required();
  trn->add_option("--variant", variant, "sos|image|patch|multiscale|rdms")->capture_default_str();
  trn->add_option("--epochs", tc.epochs)->capture_default_str();
  trn->add_option("--lr", tc.learning_rate)->capture_default_str();
  trn->add_option("--batch", tc.batch_size)->capture_default_str();
  trn->add_option("--k", tc.top_k, "Patches per high-res pass")->capture_default_str();
  trn->add_option("--d", tc.feature_width, "Feature width")->capture_default_str();
  trn->add_option("--fusion", fusion, "gru|avg|max")->capture_default_str();
  trn->add_option("--optimizer", optimizer, "adam|sgd")->capture_default_str();
  trn->add_flag("--no-l2", no_l2, "Drop the paradoxical term");
  trn->add_flag("--no-l3", no_l3, "Drop the hesitation and hubristic terms");
  trn->add_option("--seed", tc.seed)->capture_default_str();
  trn->add_option("--out", run_out, "Run directory")->required();

  // eval
  auto* evl = app.add_subcommand("eval", "Evaluate a trained run on the test split");
  std::string eval_run, eval_report, eval_decisions;
  std::optional<double> eval_force;
  evl->add_option("--run", eval_run, "Run directory")->required();
  evl->add_option("--data", data_dir, "Dataset directory")->required();
  evl->add_option("--report", eval_report, "Metrics report path")->required();
  evl->add_option("--decisions", eval_decisions, "Per-slide decision log path");
  evl->add_option("--force-threshold", eval_force, "Replace the learned threshold");

  // bench
  auto* bch = app.add_subcommand("bench", "Single-thread inference timing");
  std::vector<std::string> bench_runs;
  std::size_t reps = 5;
  std::string bench_report;
  bch->add_option("--runs", bench_runs, "Run directories")->required();
  bch->add_option("--data", data_dir, "Dataset directory")->required();
  bch->add_option("--reps", reps, "Timed repetitions (>= 3)")->capture_default_str();
  bch->add_option("--report", bench_report, "Write the table here instead of stdout");

  // ablate
  auto* abl = app.add_subcommand("ablate", "Train and evaluate every cell of a grid");
  std::string grid_path, ablate_out;
  abl->add_option("--data", data_dir, "Dataset directory")->required();
  abl->add_option("--grid", grid_path, "Grid file")->required();
  abl->add_option("--out", ablate_out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      synth.train_counts = parse_counts(train_counts);
      synth.test_counts = parse_counts(test_counts);
      auto manifest = generate_synthetic_dataset(synth, gen_seed, gen_out);
      std::cout << "wrote " << manifest.entries.size() << " slides to " << gen_out << "\n";
    } else if (trn->parsed()) {
      tc.variant = parse_variant(variant);
      tc.fusion = parse_fusion_mode(fusion);
      tc.optimizer = parse_optimizer_kind(optimizer);
      tc.loss.enable_l2 = !no_l2;
      tc.loss.enable_l3 = !no_l3;
      auto data = open_dataset(data_dir);
      auto slides = load_split(data.manifest, data.root, "train", false);
      TrainOptions options;
      options.run_dir = run_out;
      options.num_classes = data.manifest.classes.size();
      auto result = train(tc, slides, options);
      for (const auto& e : result.log) {
        std::cout << "epoch " << e.epoch << "  l_total " << e.mean.l_total << "  l_ce1 " << e.mean.l_ce1 << "  l_ce2 "
                  << e.mean.l_ce2 << "  c " << e.threshold << "\n";
      }
    } else if (evl->parsed()) {
      auto data = open_dataset(data_dir);
      auto model = load_run_model(eval_run);
      auto slides = load_split(data.manifest, data.root, "test", false);
      EvalOptions options;
      options.forced_threshold = eval_force;
      auto report = evaluate(model, slides, options);
      auto echo = describe(read_run(eval_run).config);
      echo.insert(echo.begin(), {"run", eval_run});
      for (const auto& kv : data_echo(data)) echo.push_back(kv);
      write_file(eval_report, [&](std::ostream& out) { write_metrics_report(out, report, data.manifest.classes, echo); });
      if (!eval_decisions.empty()) {
        write_file(eval_decisions, [&](std::ostream& out) { write_decision_log(out, report); });
      }
      std::cout << "TA " << report.total_accuracy << "  LP " << report.lowres_fraction << "  CT " << report.threshold
                << "\n";
    } else if (bch->parsed()) {
      auto data = open_dataset(data_dir);
      auto slides = load_split(data.manifest, data.root, "test", false);
      std::vector<SosModel> models;
      for (const auto& run : bench_runs) models.push_back(load_run_model(run));
      std::vector<BenchmarkEntry> entries;
      std::size_t baseline = 0;
      for (std::size_t i = 0; i < models.size(); ++i) {
        entries.push_back({bench_runs[i], &models[i], std::nullopt});
        if (models[i].config.variant == Variant::MultiScale) baseline = i;
      }
      auto rows = benchmark(entries, slides, reps, baseline);
      auto echo = data_echo(data);
      echo.push_back({"reps", std::to_string(reps)});
      echo.push_back({"baseline", bench_runs[baseline]});
      if (bench_report.empty()) {
        write_benchmark_report(std::cout, rows, echo);
      } else {
        write_file(bench_report, [&](std::ostream& out) { write_benchmark_report(out, rows, echo); });
      }
    } else if (abl->parsed()) {
      auto data = open_dataset(data_dir);
      auto cells = read_grid(grid_path, TrainConfig{});
      auto train_slides = load_split(data.manifest, data.root, "train", false);
      auto test_slides = load_split(data.manifest, data.root, "test", false);
      auto rows = ablate(cells, train_slides, test_slides, data.manifest.classes.size());
      auto echo = data_echo(data);
      echo.push_back({"grid", grid_path});
      write_file(fs::path(ablate_out) / "ablation.tsv",
                 [&](std::ostream& out) { write_ablation_report(out, rows, data.manifest.classes, echo); });
      write_ablation_report(std::cout, rows, data.manifest.classes, echo);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
