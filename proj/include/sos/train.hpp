#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sos/losses.hpp"
#include "sos/nets.hpp"
#include "sos/optim.hpp"
#include "sos/slide.hpp"

namespace sos {

struct TrainConfig {
  Variant variant = Variant::Sos;
  std::size_t epochs = 20;
  double learning_rate = 1e-3;
  std::size_t batch_size = 4;
  std::size_t top_k = 4;
  std::size_t feature_width = 32;
  FusionMode fusion = FusionMode::Gru;
  LossConfig loss;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::Adam;
};

// Throws UsageError on a non-positive rate, B = 0 or K = 0.
void validate(const TrainConfig& config);

// Key/value echo written to config.tsv and report headers.
std::vector<std::pair<std::string, std::string>> describe(const TrainConfig& config);

ModelConfig model_config(const TrainConfig& config, std::size_t num_classes, std::size_t num_patches);

// Epoch means of the per-batch loss terms, weighted by batch size.
struct EpochLog {
  std::size_t epoch = 0;
  LossBreakdown mean;  // total is left undefined
  double threshold = 0.0;
  double policy_highres = 0.0;  // RDMS: fraction of sampled a = 1
  std::size_t reward_clamps = 0;
  double seconds = 0.0;
};

struct TrainResult {
  SosModel model;
  std::vector<EpochLog> log;
};

struct TrainOptions {
  // When set: config.tsv, log.tsv and epoch_<k>.bin are written here.
  std::optional<std::filesystem::path> run_dir;
  std::size_t num_classes = 4;
};

// Trains config.variant on the slides. SOS computes both pathways and the
// full objective every batch; ImageLevel trains the low-res classifier;
// PatchLevel and MultiScale train the high-res classifier; RDMS samples a
// pathway per slide from its policy. Throws NumericError on a non-finite loss.
TrainResult train(const TrainConfig& config, const std::vector<PreparedSlide>& slides, const TrainOptions& options = {});

// a * (l_ce2 - l_ce1) / l_ce1 with l_ce1 clamped at 1e-12; sets *clamped
// when the clamp was needed.
double rdms_reward(int action, double l_ce1, double l_ce2, bool* clamped = nullptr);

// -R * log pi(a | s), differentiable in pi.
Tensor rdms_surrogate(const Tensor& pi, int action, double reward);

void write_epoch_log(const std::filesystem::path& path, const std::vector<EpochLog>& log);

struct RunInfo {
  TrainConfig config;
  ModelConfig model;
  std::size_t last_epoch = 0;
};

// Reads config.tsv and finds the newest epoch_<k>.bin of a run directory.
RunInfo read_run(const std::filesystem::path& run_dir);
// Rebuilds the model described by the run and loads its newest checkpoint.
SosModel load_run_model(const std::filesystem::path& run_dir);

}  // namespace sos
