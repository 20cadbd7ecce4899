#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rgpb/data.hpp"
#include "rgpb/lm_core.hpp"
#include "rgpb/losses.hpp"
#include "rgpb/metrics.hpp"

namespace rgpb {

struct InitSpec {
  enum class Kind { kRandom, kWarm };
  Kind kind = Kind::kRandom;
  double scale = 0.3;                 // kRandom: N(0, scale^2) entries
  std::filesystem::path checkpoint;   // kWarm, read when `model` is empty
  std::optional<ToyLM> model;         // kWarm, already in memory
};

struct TrainConfig {
  Schedule schedule;
  double learning_rate = 0.5;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  std::size_t eval_every = 1;
  InitSpec init;
  std::size_t embed_dim = 8;
  std::size_t hidden_dim = 32;

  void validate() const;
};

/// A non-finite loss or gradient (or a loss evaluated outside its domain)
/// stops training; the position is kept for the run log.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, std::size_t epoch, std::size_t batch)
      : std::runtime_error(what), epoch_(epoch), batch_(batch) {}
  std::size_t epoch() const noexcept { return epoch_; }
  std::size_t batch() const noexcept { return batch_; }

 private:
  std::size_t epoch_;
  std::size_t batch_;
};

struct EpochRecord {
  std::size_t epoch = 0;  // training epochs completed
  std::size_t stage = 0;
  double train_loss = 0.0;  // mean batch loss of that epoch, NaN at epoch 0
  MetricRecord metrics;
};

struct StageBoundary {
  std::size_t epoch = 0;  // epochs completed when the stage starts
  std::size_t stage = 0;
  LossSpec loss;
};

struct RunLog {
  TrainConfig config;
  std::vector<EpochRecord> records;
  std::vector<StageBoundary> boundaries;
  /// Reference checksum after each epoch trained with a frozen-copy reference.
  std::vector<std::pair<std::size_t, std::uint64_t>> reference_checksums;
  std::vector<std::string> warnings;
  ToyLM initial_model;
  ToyLM final_model;
  double wall_seconds = 0.0;
};

/// Builds the starting model named by config.init.
ToyLM initial_model(const TrainConfig& config, std::size_t vocab_size);

/// Mini-batch SGD over shuffled batches, theta <- theta - lr * grad.
RunLog train(const TrainConfig& config, const PairDataset& dataset);

/// Header, one row per record, and a "# stage ..." marker line after the
/// row of the epoch where each later stage begins.
std::string metrics_csv(const RunLog& log);

/// Config echo, seed, version string, wall time and final metrics.
std::string run_manifest_json(const RunLog& log, std::string_view extra_key = {},
                              std::string_view extra_json = {});

inline constexpr std::string_view kVersion = "rgpb-lab 0.1.0";

// ---------------------------------------------------------------------------

struct MethodRun {
  std::string name;
  Schedule schedule;
};

struct MethodOutcome {
  std::string name;
  double perplexity = 0.0;
  double agility = 0.0;
  double mean_pos_prob = 0.0;  // mean P(y+|x+)
};

struct PairwiseOrdering {
  std::string first;
  std::string second;
  bool first_lower_perplexity = false;
  bool first_higher_agility = false;
};

struct Comparison {
  std::vector<MethodOutcome> outcomes;

  const MethodOutcome& get(std::string_view name) const;
  std::vector<PairwiseOrdering> orderings() const;
};

/// Trains every run from the same initial model and seed (shared config,
/// schedule replaced per run) and reports final metrics.
Comparison compare_methods(const PairDataset& dataset, std::span<const MethodRun> runs,
                           const TrainConfig& shared);

/// Per-method median of each metric across comparisons of the same runs.
Comparison median_comparison(std::span<const Comparison> comparisons);

struct BetaSweepRow {
  double beta = 0.0;
  double perplexity = 0.0;
  double mean_pos_prob = 0.0;
  double agility = 0.0;
};

/// One run per beta; beta replaces the coefficient of every non-MLE stage.
std::vector<BetaSweepRow> beta_sweep(const PairDataset& dataset, const Schedule& base,
                                     std::span<const double> betas, const TrainConfig& config);

double median(std::vector<double> values);

// ---------------------------------------------------------------------------
// Seeded experiment protocols: synthesize data, optionally warm-start with
// MLE, train every run from that start, repeat per seed, take medians.

/// Which responses the MLE warm start is fitted on. kBothResponses treats
/// each negative pair as an extra positive one.
enum class WarmData { kBothResponses, kPositiveResponses };

struct WarmStart {
  WarmData data = WarmData::kBothResponses;
  std::size_t epochs = 100;
  double learning_rate = 0.3;
};

/// Pairs whose positive side is what the warm start should fit.
PairDataset warm_start_dataset(const PairDataset& dataset, WarmData data);

/// MLE from config's random init; the result is meant for InitSpec::model.
ToyLM warm_start_model(const PairDataset& dataset, const TrainConfig& config, const WarmStart& warm);

struct ExperimentProtocol {
  std::string name;
  SynthSpec data;       // seed replaced per run
  TrainConfig config;   // seed replaced per run; schedule comes from each MethodRun
  std::optional<WarmStart> warm_start;
  std::vector<MethodRun> runs;
};

struct ProtocolResult {
  std::vector<std::uint64_t> seeds;
  std::vector<Comparison> per_seed;
  Comparison median;
};

ProtocolResult run_protocol(const ExperimentProtocol& protocol, std::span<const std::uint64_t> seeds);

/// Shared context, perturbed contexts: MLE, DPO, UL, ExMATE from random init.
ExperimentProtocol low_eps_protocol();
/// Shared context, diverging responses: the same four methods briefly
/// fine-tuned from an MLE warm start on both responses.
ExperimentProtocol high_eps_protocol();
/// Two-stage recipes on the high_eps data: sft+dpo, exmate+dpo, sft,
/// sft+exmate, ten epochs per stage. DPO uses beta 0.1 and a frozen copy of
/// the stage-start model.
ExperimentProtocol recipe_protocol();
/// "low_eps", "high_eps", "recipe".
std::optional<ExperimentProtocol> protocol_by_name(std::string_view name);

inline constexpr std::uint64_t kDefaultSeeds[] = {1, 2, 3};

/// Named ordering checks over a median comparison. Each one needs certain
/// run names to be present.
struct OrderingAssertion {
  std::string_view name;
  std::string_view description;
  bool (*holds)(const Comparison&);
};

std::span<const OrderingAssertion> ordering_assertions();
const OrderingAssertion* find_assertion(std::string_view name);

// ---------------------------------------------------------------------------

struct BetaSweepProtocol {
  SynthSpec data;
  TrainConfig config;
  std::optional<WarmStart> warm_start;
  std::vector<Method> methods;
  std::vector<double> betas;
  std::size_t epochs = 10;
};

struct BetaSweepResult {
  Method method = Method::kExmate;
  std::vector<std::vector<BetaSweepRow>> per_seed;
  std::vector<BetaSweepRow> median;  // per beta
  double rho_agility = 0.0;          // Spearman vs beta, on the medians
  double rho_pos_prob = 0.0;
};

std::vector<BetaSweepResult> run_beta_sweep(const BetaSweepProtocol& protocol,
                                            std::span<const std::uint64_t> seeds);

/// ExMATE and DPO over beta in {0.05, 0.1, 0.5, 1, 5} on high_eps data, ten
/// epochs from an MLE warm start on positive responses.
BetaSweepProtocol default_beta_sweep_protocol();

}  // namespace rgpb
