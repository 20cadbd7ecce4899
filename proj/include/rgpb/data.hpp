#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rgpb/lm_core.hpp"

namespace rgpb {

/// kLowEps: shared response, contexts differ by a few tokens.
/// kHighEps: shared context, responses diverge after a common prefix.
enum class Regime { kLowEps, kHighEps };

std::string_view to_string(Regime regime);
std::optional<Regime> parse_regime(std::string_view text);

struct SynthSpec {
  Regime regime = Regime::kLowEps;
  std::size_t vocab_size = 16;
  std::size_t n_pairs = 64;
  std::pair<std::size_t, std::size_t> seq_len_range{3, 5};  // inclusive, for x and y
  double context_perturb_rate = 0.1;                        // kLowEps
  double response_overlap_rate = 0.5;                       // kHighEps
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument for out-of-range fields or an infeasible
  /// overlap (no room left for the responses to diverge).
  void validate() const;
};

struct PairDataset {
  std::vector<PreferencePair> pairs;
  Vocab vocab;
  std::string provenance;

  /// Nonempty and every pair valid against the vocab.
  void validate() const;
};

/// Same seed, same dataset, bit for bit.
PairDataset synth(const SynthSpec& spec);

/// Mean |P(y+|x+) - P(y-|x-)| over the dataset, averaged over `n_models`
/// random models (d = 8, d_h = 32, parameters N(0, scale^2)) drawn from
/// `seed`. The gap between the regimes shrinks as `scale` grows: with the
/// default specs it is above 10x at 0.05 and 0.1 but only 4-9x at 0.2.
double random_model_information_difference(const PairDataset& dataset, std::size_t n_models,
                                           std::uint64_t seed, double scale = 0.05);

/// One JSON object per line with keys x_pos, y_pos, x_neg, y_neg. Values are
/// arrays of token strings (looked up in `vocab`) or integer ids.
PairDataset parse_jsonl(std::string_view text, const Vocab& vocab, std::string provenance = "<memory>");
PairDataset load_jsonl(const std::filesystem::path& path, const Vocab& vocab);

/// Integer-id JSONL, one pair per line.
std::string to_jsonl(const PairDataset& dataset);
void save_jsonl(const PairDataset& dataset, const std::filesystem::path& path);

/// One token per line; id = line index.
Vocab load_vocab(const std::filesystem::path& path);
std::string to_vocab_text(const Vocab& vocab);
void save_vocab(const Vocab& vocab, const std::filesystem::path& path);

}  // namespace rgpb
