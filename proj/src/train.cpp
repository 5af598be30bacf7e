#include "sos/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "sos/checkpoint.hpp"
#include "sos/errors.hpp"
#include "sos/ops.hpp"
#include "sos/protocol.hpp"

namespace sos {

namespace fs = std::filesystem;

void validate(const TrainConfig& config) {
  if (!(config.learning_rate > 0.0)) throw UsageError("learning rate must be positive");
  if (config.batch_size < 1) throw UsageError("batch size must be at least 1");
  if (config.top_k < 1) throw UsageError("K must be at least 1");
  if (config.feature_width < 1) throw UsageError("feature width must be at least 1");
  if (!(config.loss.epsilon > 0.0) || config.loss.lambda_hesitation < 0.0 || config.loss.lambda_hubristic < 0.0) {
    throw UsageError("loss weights must be non-negative and epsilon positive");
  }
}

namespace {

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

std::vector<std::pair<std::string, std::string>> describe(const TrainConfig& config) {
  return {{"variant", to_string(config.variant)},
          {"epochs", std::to_string(config.epochs)},
          {"lr", format_double(config.learning_rate)},
          {"batch", std::to_string(config.batch_size)},
          {"k", std::to_string(config.top_k)},
          {"d", std::to_string(config.feature_width)},
          {"fusion", to_string(config.fusion)},
          {"lambda_hesitation", format_double(config.loss.lambda_hesitation)},
          {"lambda_hubristic", format_double(config.loss.lambda_hubristic)},
          {"epsilon", format_double(config.loss.epsilon)},
          {"l2", config.loss.enable_l2 ? "on" : "off"},
          {"l3", config.loss.enable_l3 ? "on" : "off"},
          {"seed", std::to_string(config.seed)},
          {"optimizer", to_string(config.optimizer)}};
}

ModelConfig model_config(const TrainConfig& config, std::size_t num_classes, std::size_t num_patches) {
  ModelConfig m;
  m.variant = config.variant;
  m.num_classes = num_classes;
  m.num_patches = num_patches;
  m.top_k = config.top_k;
  m.fusion = config.fusion;
  m.extractor.channels = {8, 16, config.feature_width};
  return m;
}

double rdms_reward(int action, double l_ce1, double l_ce2, bool* clamped) {
  const bool clamp = l_ce1 < 1e-12;
  if (clamped) *clamped = clamp;
  return static_cast<double>(action) * (l_ce2 - l_ce1) / (clamp ? 1e-12 : l_ce1);
}

Tensor rdms_surrogate(const Tensor& pi, int action, double reward) {
  return ops::scale(ops::log_clamped(ops::pick(pi, static_cast<std::size_t>(action)), 1e-12), -reward);
}

namespace {

struct BatchResult {
  Tensor total;
  LossBreakdown breakdown;
  std::size_t highres_actions = 0;
  std::size_t clamps = 0;
};

BatchResult sos_batch(const SosModel& model, const TrainConfig& config, std::span<const PreparedSlide* const> batch) {
  std::vector<Tensor> lowres, highres;
  std::vector<std::size_t> labels;
  const Variant variant = config.variant;
  for (const auto* slide : batch) {
    auto lrn = lrn_forward(model, slide->lowres);
    if (lrn.distribution.defined()) lowres.push_back(lrn.distribution);
    if (variant != Variant::ImageLevel) highres.push_back(hrn_forward(model, lrn.features, *slide->patches).distribution);
    labels.push_back(slide->label);
  }

  BatchResult out;
  auto& b = out.breakdown;
  b.batch_size = batch.size();
  b.lambda_hesitation = config.loss.lambda_hesitation;
  b.lambda_hubristic = config.loss.lambda_hubristic;
  b.epsilon = config.loss.epsilon;
  switch (variant) {
    case Variant::Sos:
      b = loss_total(lowres, highres, labels, ops::sigmoid(model.threshold_logit), config.loss);
      out.total = b.total;
      break;
    case Variant::ImageLevel:
      out.total = loss_cross_entropy(lowres, labels);
      b.l_ce1 = b.l1 = b.l_total = out.total.item();
      break;
    case Variant::PatchLevel:
    case Variant::MultiScale:
      out.total = loss_cross_entropy(highres, labels);
      b.l_ce2 = b.l1 = b.l_total = out.total.item();
      break;
    case Variant::Rdms: break;
  }
  return out;
}

BatchResult rdms_batch(const SosModel& model, const TrainConfig& config, std::span<const PreparedSlide* const> batch,
                       std::mt19937_64& rng) {
  BatchResult out;
  auto& b = out.breakdown;
  b.batch_size = batch.size();
  b.lambda_hesitation = config.loss.lambda_hesitation;
  b.lambda_hubristic = config.loss.lambda_hubristic;
  b.epsilon = config.loss.epsilon;
  Tensor total;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (const auto* slide : batch) {
    const std::size_t label[] = {slide->label};
    Tensor pi = policy_distribution(model, slide->lowres);
    const int action = unit(rng) < pi[1] ? 1 : 0;

    auto lrn = lrn_forward(model, slide->lowres);
    Tensor ce1 = loss_cross_entropy(std::span<const Tensor>(&lrn.distribution, 1), label);
    Tensor ce2;
    {
      // The pathway that was not chosen only contributes to the reward.
      std::optional<NoGradGuard> frozen;
      if (action == 0) frozen.emplace();
      auto hrn = hrn_forward(model, lrn.features, *slide->patches);
      ce2 = loss_cross_entropy(std::span<const Tensor>(&hrn.distribution, 1), label);
    }
    bool clamped = false;
    const double reward = rdms_reward(action, ce1.item(), ce2.item(), &clamped);
    out.clamps += clamped ? 1 : 0;
    out.highres_actions += static_cast<std::size_t>(action);

    Tensor episode = ops::add(action == 1 ? ce2 : ce1, rdms_surrogate(pi, action, reward));
    total = total.defined() ? ops::add(total, episode) : episode;
    b.l_ce1 += ce1.item();
    b.l_ce2 += ce2.item();
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.total = ops::scale(total, inv);
  b.l_ce1 *= inv;
  b.l_ce2 *= inv;
  b.l1 = b.l_ce1 + b.l_ce2;
  b.l_total = out.total.item();
  return out;
}

void accumulate(LossBreakdown& sum, const LossBreakdown& b, double weight) {
  sum.l_ce1 += weight * b.l_ce1;
  sum.l_ce2 += weight * b.l_ce2;
  sum.l1 += weight * b.l1;
  sum.l2 += weight * b.l2;
  sum.l_he += weight * b.l_he;
  sum.l_hu += weight * b.l_hu;
  sum.l3 += weight * b.l3;
  sum.l_total += weight * b.l_total;
}

void write_config(const fs::path& path, const TrainConfig& config, const ModelConfig& model) {
  std::ofstream out(path);
  for (const auto& [key, value] : describe(config)) out << key << "\t" << value << "\n";
  out << "classes\t" << model.num_classes << "\n";
  out << "patches\t" << model.num_patches << "\n";
  if (!out) throw DataError(DataErrorKind::MissingFile, "cannot write " + path.string());
}

}  // namespace

void write_epoch_log(const fs::path& path, const std::vector<EpochLog>& log) {
  std::ofstream out(path);
  out << "epoch\tl_ce1\tl_ce2\tl1\tl2\tl_he\tl_hu\tl3\tl_total\tlambda_hesitation\tlambda_hubristic\tepsilon\tbatch_size"
         "\tthreshold\tpolicy_highres\treward_clamps\tseconds\n";
  out << std::setprecision(10);
  for (const auto& e : log) {
    const auto& m = e.mean;
    out << e.epoch << "\t" << m.l_ce1 << "\t" << m.l_ce2 << "\t" << m.l1 << "\t" << m.l2 << "\t" << m.l_he << "\t"
        << m.l_hu << "\t" << m.l3 << "\t" << m.l_total << "\t" << m.lambda_hesitation << "\t" << m.lambda_hubristic
        << "\t" << m.epsilon << "\t" << m.batch_size << "\t" << e.threshold << "\t" << e.policy_highres << "\t"
        << e.reward_clamps << "\t" << e.seconds << "\n";
  }
  if (!out) throw DataError(DataErrorKind::MissingFile, "cannot write " + path.string());
}

TrainResult train(const TrainConfig& config, const std::vector<PreparedSlide>& slides, const TrainOptions& options) {
  validate(config);
  if (slides.empty()) throw UsageError("train: no training slides");
  const std::size_t patches = slides.front().patch_count();
  for (const auto& s : slides) {
    if (s.patch_count() != patches) throw UsageError("train: slides disagree on the patch grid");
    if (s.label >= options.num_classes) throw UsageError("train: label out of range in slide " + s.slide_id);
  }

  const ModelConfig mc = model_config(config, options.num_classes, patches);
  TrainResult result{make_model(mc, config.seed), {}};
  SosModel& model = result.model;

  if (options.run_dir) {
    fs::create_directories(*options.run_dir);
    write_config(*options.run_dir / "config.tsv", config, mc);
    write_checkpoint(*options.run_dir / "epoch_0.bin", model);
  }

  OptimizerConfig oc;
  oc.kind = config.optimizer;
  oc.learning_rate = config.learning_rate;
  Optimizer optimizer(model.parameters(), oc);

  std::seed_seq shuffle_seed{config.seed, std::uint64_t{1}};
  std::mt19937_64 shuffle_rng(shuffle_seed);
  std::seed_seq policy_seed{config.seed, std::uint64_t{2}};
  std::mt19937_64 policy_rng(policy_seed);

  std::vector<std::size_t> order(slides.size());
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochLog entry;
    entry.epoch = epoch;
    std::size_t highres_actions = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      std::vector<const PreparedSlide*> batch;
      for (std::size_t i = begin; i < end; ++i) batch.push_back(&slides[order[i]]);

      BatchResult br = config.variant == Variant::Rdms ? rdms_batch(model, config, batch, policy_rng)
                                                       : sos_batch(model, config, batch);
      if (!std::isfinite(br.breakdown.l_total)) {
        std::ostringstream os;
        os << "non-finite loss at epoch " << epoch << ", batch starting at " << begin << " (l_ce1 "
           << br.breakdown.l_ce1 << ", l_ce2 " << br.breakdown.l_ce2 << ")";
        throw NumericError(os.str());
      }
      optimizer.zero_grad();
      if (br.total.has_record()) br.total.backward();
      optimizer.step();

      accumulate(entry.mean, br.breakdown, static_cast<double>(batch.size()));
      highres_actions += br.highres_actions;
      entry.reward_clamps += br.clamps;
    }
    const double n = static_cast<double>(slides.size());
    for (double* v : {&entry.mean.l_ce1, &entry.mean.l_ce2, &entry.mean.l1, &entry.mean.l2, &entry.mean.l_he,
                      &entry.mean.l_hu, &entry.mean.l3, &entry.mean.l_total})
      *v /= n;
    entry.mean.lambda_hesitation = config.loss.lambda_hesitation;
    entry.mean.lambda_hubristic = config.loss.lambda_hubristic;
    entry.mean.epsilon = config.loss.epsilon;
    entry.mean.batch_size = config.batch_size;
    entry.threshold = model.threshold();
    entry.policy_highres = static_cast<double>(highres_actions) / n;
    entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(entry);

    if (options.run_dir) {
      write_checkpoint(*options.run_dir / ("epoch_" + std::to_string(epoch) + ".bin"), model);
      write_epoch_log(*options.run_dir / "log.tsv", result.log);
    }
  }
  optimizer.zero_grad();
  return result;
}

RunInfo read_run(const fs::path& run_dir) {
  const fs::path path = run_dir / "config.tsv";
  std::ifstream in(path);
  if (!in) throw DataError(DataErrorKind::MissingFile, "missing run config " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos) continue;
    kv[line.substr(0, tab)] = line.substr(tab + 1);
  }
  auto get = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw DataError(DataErrorKind::Malformed, path.string() + ": missing key " + key);
    return it->second;
  };
  RunInfo info;
  try {
    auto& c = info.config;
    c.variant = parse_variant(get("variant"));
    c.epochs = std::stoull(get("epochs"));
    c.learning_rate = std::stod(get("lr"));
    c.batch_size = std::stoull(get("batch"));
    c.top_k = std::stoull(get("k"));
    c.feature_width = std::stoull(get("d"));
    c.fusion = parse_fusion_mode(get("fusion"));
    c.loss.lambda_hesitation = std::stod(get("lambda_hesitation"));
    c.loss.lambda_hubristic = std::stod(get("lambda_hubristic"));
    c.loss.epsilon = std::stod(get("epsilon"));
    c.loss.enable_l2 = get("l2") == "on";
    c.loss.enable_l3 = get("l3") == "on";
    c.seed = std::stoull(get("seed"));
    c.optimizer = parse_optimizer_kind(get("optimizer"));
    info.model = model_config(c, std::stoull(get("classes")), std::stoull(get("patches")));
  } catch (const DataError&) {
    throw;
  } catch (const std::exception& e) {
    throw DataError(DataErrorKind::Malformed, path.string() + ": " + e.what());
  }

  bool found = false;
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    const auto name = entry.path().filename().string();
    if (name.rfind("epoch_", 0) != 0 || entry.path().extension() != ".bin") continue;
    try {
      const auto k = std::stoull(name.substr(6, name.size() - 10));
      if (!found || k > info.last_epoch) info.last_epoch = k;
      found = true;
    } catch (const std::exception&) {
    }
  }
  if (!found) throw DataError(DataErrorKind::MissingFile, "no checkpoint in " + run_dir.string());
  return info;
}

SosModel load_run_model(const fs::path& run_dir) {
  const RunInfo info = read_run(run_dir);
  SosModel model = make_model(info.model, info.config.seed);
  load_checkpoint(run_dir / ("epoch_" + std::to_string(info.last_epoch) + ".bin"), model);
  return model;
}

}  // namespace sos
