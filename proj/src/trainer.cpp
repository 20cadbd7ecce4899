#include "rgpb/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>

#include <json.hpp>

#include "rgpb/errors.hpp"
#include "rgpb/io.hpp"
#include "rgpb/loss_gradient.hpp"
#include "rgpb/rng.hpp"

namespace rgpb {

namespace {

using json = nlohmann::json;

double mean_positive_probability(const ToyLM& model, std::span<const PreferencePair> pairs) {
  double total = 0.0;
  for (const PreferencePair& p : pairs) total += std::exp(seq_logprob(model, p.x_pos, p.y_pos).total);
  return total / static_cast<double>(pairs.size());
}

json loss_json(const LossSpec& loss) {
  return json{{"method", to_string(loss.method)},
              {"beta", loss.beta},
              {"ref_policy", to_string(loss.ref_policy)}};
}

json config_json(const TrainConfig& c) {
  json stages = json::array();
  for (const Stage& s : c.schedule.stages) {
    json st = loss_json(s.loss);
    st["epochs"] = s.epochs;
    stages.push_back(st);
  }
  json init{{"kind", c.init.kind == InitSpec::Kind::kRandom ? "random" : "warm"}};
  if (c.init.kind == InitSpec::Kind::kRandom) {
    init["scale"] = c.init.scale;
  } else if (c.init.model) {
    init["checkpoint"] = "<memory>";
    init["checksum"] = c.init.model->checksum();
  } else {
    init["checkpoint"] = c.init.checkpoint.string();
  }
  return json{{"schedule", stages},          {"learning_rate", c.learning_rate},
              {"batch_size", c.batch_size},  {"seed", c.seed},
              {"eval_every", c.eval_every},  {"init", init},
              {"embed_dim", c.embed_dim},    {"hidden_dim", c.hidden_dim}};
}

json metrics_json(const MetricRecord& m) {
  return json{{"perplexity", m.perplexity},
              {"agility", m.agility},
              {"info_diff", m.mean_info_diff},
              {"grad_diff", m.grad_diff_per_step},
              {"n_pairs", m.n_pairs}};
}

}  // namespace

void TrainConfig::validate() const {
  schedule.validate();
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("learning_rate must be finite and non-negative");
  }
  if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  if (eval_every == 0) throw std::invalid_argument("eval_every must be >= 1");
  if (embed_dim == 0 || hidden_dim == 0) throw std::invalid_argument("model dimensions must be positive");
  if (init.kind == InitSpec::Kind::kRandom && !(init.scale >= 0.0)) {
    throw std::invalid_argument("init scale must be non-negative");
  }
}

ToyLM initial_model(const TrainConfig& config, std::size_t vocab_size) {
  if (config.init.kind == InitSpec::Kind::kWarm) {
    ToyLM model = config.init.model ? *config.init.model : load_checkpoint(config.init.checkpoint);
    if (model.vocab_size() != vocab_size) {
      throw std::invalid_argument("warm checkpoint vocab size " + std::to_string(model.vocab_size()) +
                                  " does not match dataset vocab size " + std::to_string(vocab_size));
    }
    model.check_state();
    return model;
  }
  Rng rng(sub_seed(config.seed, "init"));
  return ToyLM::random(vocab_size, config.embed_dim, config.hidden_dim, config.init.scale, rng);
}

RunLog train(const TrainConfig& config, const PairDataset& dataset) {
  config.validate();
  dataset.validate();
  const auto started = std::chrono::steady_clock::now();

  RunLog log;
  log.config = config;
  for (const Stage& s : config.schedule.stages) {
    for (auto& w : s.loss.validate()) log.warnings.push_back(std::move(w));
  }

  ToyLM model = initial_model(config, dataset.vocab.size());
  log.initial_model = model;
  log.records.push_back({0, 0, std::numeric_limits<double>::quiet_NaN(), evaluate(model, dataset.pairs)});

  Rng shuffle_rng(sub_seed(config.seed, "shuffle"));
  std::vector<PreferencePair> order = dataset.pairs;
  std::optional<ToyLM> reference;

  const std::size_t total = config.schedule.total_epochs();
  std::size_t current_stage = static_cast<std::size_t>(-1);
  for (std::size_t epoch = 0; epoch < total; ++epoch) {
    const std::size_t stage = config.schedule.stage_index(epoch);
    const LossSpec& loss = config.schedule.stages[stage].loss;
    if (stage != current_stage) {
      if (epoch > 0) log.boundaries.push_back({epoch, stage, loss});
      current_stage = stage;
      if (loss.uses_reference()) {
        reference = model;
      } else {
        reference.reset();
      }
    }

    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t len = std::min(config.batch_size, order.size() - start);
      const std::span<const PreferencePair> batch(order.data() + start, len);
      LossAndGradient lg;
      try {
        lg = batch_loss_and_gradient(model, loss, batch, reference ? &*reference : nullptr);
      } catch (const DomainError& e) {
        throw TrainingDiverged(std::string("loss undefined: ") + e.what(), epoch, n_batches);
      } catch (const StateError& e) {
        throw TrainingDiverged(std::string("model state: ") + e.what(), epoch, n_batches);
      }
      if (!std::isfinite(lg.loss) || !lg.gradient.all_finite()) {
        throw TrainingDiverged("non-finite loss or gradient at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(n_batches),
                               epoch, n_batches);
      }
      auto params = model.blocks();
      auto grads = lg.gradient.blocks();
      for (std::size_t b = 0; b < params.size(); ++b) {
        auto p = params[b]->values();
        auto g = grads[b]->values();
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= config.learning_rate * g[i];
      }
      loss_sum += lg.loss;
      ++n_batches;
    }

    if (reference) log.reference_checksums.emplace_back(epoch + 1, reference->checksum());
    if ((epoch + 1) % config.eval_every == 0 || epoch + 1 == total) {
      log.records.push_back({epoch + 1, stage, loss_sum / static_cast<double>(n_batches),
                             evaluate(model, dataset.pairs)});
    }
  }

  log.final_model = std::move(model);
  log.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return log;
}

std::string metrics_csv(const RunLog& log) {
  std::string out = metrics_csv_header();
  std::size_t next_boundary = 0;
  for (const EpochRecord& rec : log.records) {
    while (next_boundary < log.boundaries.size() && log.boundaries[next_boundary].epoch < rec.epoch) {
      const StageBoundary& b = log.boundaries[next_boundary++];
      out += "# stage " + std::to_string(b.stage) + " begins at epoch " + std::to_string(b.epoch) + ": " +
             std::string(to_string(b.loss.method)) + " beta=" + format_double(b.loss.beta) +
             " ref_policy=" + std::string(to_string(b.loss.ref_policy)) + "\n";
    }
    out += metrics_csv_row(rec.epoch, rec.metrics);
  }
  return out;
}

std::string run_manifest_json(const RunLog& log, std::string_view extra_key, std::string_view extra_json) {
  json m;
  m["version"] = kVersion;
  m["seed"] = log.config.seed;
  m["config"] = config_json(log.config);
  m["wall_time_seconds"] = log.wall_seconds;
  m["warnings"] = log.warnings;
  if (!log.records.empty()) {
    m["final_epoch"] = log.records.back().epoch;
    m["final_metrics"] = metrics_json(log.records.back().metrics);
  }
  if (!extra_key.empty()) m[std::string(extra_key)] = json::parse(extra_json);
  return m.dump(2) + "\n";
}

// ---------------------------------------------------------------------------

const MethodOutcome& Comparison::get(std::string_view name) const {
  for (const MethodOutcome& o : outcomes) {
    if (o.name == name) return o;
  }
  throw std::out_of_range("no outcome named '" + std::string(name) + "'");
}

std::vector<PairwiseOrdering> Comparison::orderings() const {
  std::vector<PairwiseOrdering> out;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    for (std::size_t j = 0; j < outcomes.size(); ++j) {
      if (i == j) continue;
      out.push_back({outcomes[i].name, outcomes[j].name,
                     outcomes[i].perplexity < outcomes[j].perplexity,
                     outcomes[i].agility > outcomes[j].agility});
    }
  }
  return out;
}

Comparison compare_methods(const PairDataset& dataset, std::span<const MethodRun> runs,
                           const TrainConfig& shared) {
  if (runs.size() < 2) throw std::invalid_argument("compare_methods needs at least two runs");
  Comparison result;
  for (const MethodRun& run : runs) {
    TrainConfig config = shared;
    config.schedule = run.schedule;
    const RunLog log = train(config, dataset);
    const MetricRecord& last = log.records.back().metrics;
    result.outcomes.push_back({run.name, last.perplexity, last.agility,
                               mean_positive_probability(log.final_model, dataset.pairs)});
  }
  return result;
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of nothing");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

Comparison median_comparison(std::span<const Comparison> comparisons) {
  if (comparisons.empty()) throw std::invalid_argument("median_comparison: nothing to aggregate");
  Comparison out;
  for (const MethodOutcome& first : comparisons.front().outcomes) {
    std::vector<double> ppl, agi, pos;
    for (const Comparison& c : comparisons) {
      const MethodOutcome& o = c.get(first.name);
      ppl.push_back(o.perplexity);
      agi.push_back(o.agility);
      pos.push_back(o.mean_pos_prob);
    }
    out.outcomes.push_back({first.name, median(ppl), median(agi), median(pos)});
  }
  return out;
}

std::vector<BetaSweepRow> beta_sweep(const PairDataset& dataset, const Schedule& base,
                                     std::span<const double> betas, const TrainConfig& config) {
  std::vector<BetaSweepRow> rows;
  for (double beta : betas) {
    if (!(beta > 0.0)) throw std::invalid_argument("beta_sweep: betas must be positive");
    TrainConfig c = config;
    c.schedule = base;
    for (Stage& s : c.schedule.stages) {
      if (s.loss.method != Method::kMle) s.loss.beta = beta;
    }
    const RunLog log = train(c, dataset);
    const MetricRecord& last = log.records.back().metrics;
    rows.push_back({beta, last.perplexity, mean_positive_probability(log.final_model, dataset.pairs),
                    last.agility});
  }
  return rows;
}

// ---------------------------------------------------------------------------

PairDataset warm_start_dataset(const PairDataset& dataset, WarmData data) {
  PairDataset out;
  out.vocab = dataset.vocab;
  out.provenance = dataset.provenance + " (warm start)";
  for (const PreferencePair& p : dataset.pairs) {
    out.pairs.push_back(p);
    if (data == WarmData::kBothResponses) out.pairs.push_back({p.x_neg, p.y_neg, p.x_pos, p.y_pos});
  }
  return out;
}

ToyLM warm_start_model(const PairDataset& dataset, const TrainConfig& config, const WarmStart& warm) {
  TrainConfig c = config;
  c.init.kind = InitSpec::Kind::kRandom;
  c.init.model.reset();
  c.schedule = Schedule::single({Method::kMle, 1.0}, warm.epochs);
  c.learning_rate = warm.learning_rate;
  c.eval_every = warm.epochs;
  return train(c, warm_start_dataset(dataset, warm.data)).final_model;
}

namespace {

TrainConfig seeded_config(const TrainConfig& base, const std::optional<WarmStart>& warm,
                          const PairDataset& dataset, std::uint64_t seed) {
  TrainConfig config = base;
  config.seed = seed;
  if (warm) {
    config.init.kind = InitSpec::Kind::kWarm;
    config.init.model = warm_start_model(dataset, config, *warm);
  }
  return config;
}

LossSpec with_beta(Method method, double beta, RefPolicy ref = RefPolicy::kUnit) {
  return LossSpec{method, beta, ref};
}

SynthSpec protocol_data(Regime regime) {
  SynthSpec s;
  s.regime = regime;
  return s;
}

}  // namespace

ProtocolResult run_protocol(const ExperimentProtocol& protocol, std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw std::invalid_argument("run_protocol needs at least one seed");
  ProtocolResult result;
  for (std::uint64_t seed : seeds) {
    SynthSpec data = protocol.data;
    data.seed = seed;
    const PairDataset dataset = synth(data);
    const TrainConfig config = seeded_config(protocol.config, protocol.warm_start, dataset, seed);
    result.seeds.push_back(seed);
    result.per_seed.push_back(compare_methods(dataset, protocol.runs, config));
  }
  result.median = median_comparison(result.per_seed);
  return result;
}

ExperimentProtocol low_eps_protocol() {
  ExperimentProtocol p;
  p.name = "low_eps";
  p.data = protocol_data(Regime::kLowEps);
  p.config.learning_rate = 1.0;
  p.config.eval_every = 10;
  const double beta = 0.5;
  const std::size_t epochs = 100;
  p.runs = {{"mle", Schedule::single(with_beta(Method::kMle, 1.0), epochs)},
            {"dpo", Schedule::single(with_beta(Method::kDpo, beta), epochs)},
            {"ul", Schedule::single(with_beta(Method::kUl, beta), epochs)},
            {"exmate", Schedule::single(with_beta(Method::kExmate, beta), epochs)}};
  return p;
}

ExperimentProtocol high_eps_protocol() {
  ExperimentProtocol p;
  p.name = "high_eps";
  p.data = protocol_data(Regime::kHighEps);
  p.config.learning_rate = 0.1;
  p.warm_start = WarmStart{WarmData::kBothResponses, 100, 0.3};
  const std::size_t epochs = 10;
  p.runs = {{"mle", Schedule::single(with_beta(Method::kMle, 1.0), epochs)},
            {"dpo", Schedule::single(with_beta(Method::kDpo, 1.0), epochs)},
            {"ul", Schedule::single(with_beta(Method::kUl, 1.0), epochs)},
            {"exmate", Schedule::single(with_beta(Method::kExmate, 1.0), epochs)}};
  return p;
}

ExperimentProtocol recipe_protocol() {
  ExperimentProtocol p = high_eps_protocol();
  p.name = "recipe";
  const std::size_t n = 10;
  const LossSpec sft = with_beta(Method::kMle, 1.0);
  const LossSpec exmate = with_beta(Method::kExmate, 1.0);
  const LossSpec dpo = with_beta(Method::kDpo, 0.1, RefPolicy::kFrozenCopy);
  p.runs = {{"sft+dpo", Schedule{{{sft, n}, {dpo, n}}}},
            {"exmate+dpo", Schedule{{{exmate, n}, {dpo, n}}}},
            {"sft", Schedule::single(sft, 2 * n)},
            {"sft+exmate", Schedule{{{sft, n}, {exmate, n}}}}};
  return p;
}

std::optional<ExperimentProtocol> protocol_by_name(std::string_view name) {
  if (name == "low_eps") return low_eps_protocol();
  if (name == "high_eps") return high_eps_protocol();
  if (name == "recipe") return recipe_protocol();
  return std::nullopt;
}

namespace {

double max_abs_agility_except(const Comparison& c, std::string_view name) {
  double best = 0.0;
  for (const MethodOutcome& o : c.outcomes) {
    if (o.name != name) best = std::max(best, std::abs(o.agility));
  }
  return best;
}

bool strictly_extreme(const Comparison& c, std::string_view name, double MethodOutcome::*field, bool greatest) {
  const double v = c.get(name).*field;
  for (const MethodOutcome& o : c.outcomes) {
    if (o.name == name) continue;
    if (greatest ? !(v > o.*field) : !(v < o.*field)) return false;
  }
  return true;
}

const OrderingAssertion kAssertions[] = {
    {"dpo_agility_near_zero", "|agility(dpo)| < 0.01 * max |agility| of the other runs",
     [](const Comparison& c) { return std::abs(c.get("dpo").agility) < 0.01 * max_abs_agility_except(c, "dpo"); }},
    {"dpo_perplexity_not_below_mle", "perplexity(dpo) >= perplexity(mle)",
     [](const Comparison& c) { return c.get("dpo").perplexity >= c.get("mle").perplexity; }},
    {"exmate_perplexity_not_above_mle", "perplexity(exmate) <= perplexity(mle)",
     [](const Comparison& c) { return c.get("exmate").perplexity <= c.get("mle").perplexity; }},
    {"exmate_agility_positive", "agility(exmate) > 0",
     [](const Comparison& c) { return c.get("exmate").agility > 0.0; }},
    {"dpo_agility_greatest", "agility(dpo) strictly above every other run",
     [](const Comparison& c) { return strictly_extreme(c, "dpo", &MethodOutcome::agility, true); }},
    {"dpo_perplexity_worst", "perplexity(dpo) strictly above every other run",
     [](const Comparison& c) { return strictly_extreme(c, "dpo", &MethodOutcome::perplexity, true); }},
    {"exmate_perplexity_best", "perplexity(exmate) strictly below every other run",
     [](const Comparison& c) { return strictly_extreme(c, "exmate", &MethodOutcome::perplexity, false); }},
    {"exmate_dominates_mle", "exmate has perplexity <= and agility >= mle",
     [](const Comparison& c) {
       const auto& e = c.get("exmate");
       const auto& m = c.get("mle");
       return e.perplexity <= m.perplexity && e.agility >= m.agility;
     }},
    {"exmate_dpo_perplexity_not_above_sft_dpo", "perplexity(exmate+dpo) <= perplexity(sft+dpo)",
     [](const Comparison& c) { return c.get("exmate+dpo").perplexity <= c.get("sft+dpo").perplexity; }},
    {"exmate_dpo_agility_not_below_sft_dpo", "agility(exmate+dpo) >= agility(sft+dpo)",
     [](const Comparison& c) { return c.get("exmate+dpo").agility >= c.get("sft+dpo").agility; }},
    {"sft_exmate_improves_sft", "sft+exmate has lower perplexity and higher agility than sft",
     [](const Comparison& c) {
       const auto& e = c.get("sft+exmate");
       const auto& s = c.get("sft");
       return e.perplexity < s.perplexity && e.agility > s.agility;
     }},
};

}  // namespace

std::span<const OrderingAssertion> ordering_assertions() { return kAssertions; }

const OrderingAssertion* find_assertion(std::string_view name) {
  for (const OrderingAssertion& a : kAssertions) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

std::vector<BetaSweepResult> run_beta_sweep(const BetaSweepProtocol& protocol,
                                            std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw std::invalid_argument("run_beta_sweep needs at least one seed");
  if (protocol.betas.empty()) throw std::invalid_argument("run_beta_sweep needs at least one beta");
  std::vector<BetaSweepResult> results;
  for (Method m : protocol.methods) results.push_back({m, {}, {}, 0.0, 0.0});

  for (std::uint64_t seed : seeds) {
    SynthSpec data = protocol.data;
    data.seed = seed;
    const PairDataset dataset = synth(data);
    TrainConfig config = seeded_config(protocol.config, protocol.warm_start, dataset, seed);
    config.eval_every = protocol.epochs;
    for (BetaSweepResult& r : results) {
      r.per_seed.push_back(
          beta_sweep(dataset, Schedule::single({r.method, 1.0}, protocol.epochs), protocol.betas, config));
    }
  }

  for (BetaSweepResult& r : results) {
    std::vector<double> agility, pos;
    for (std::size_t i = 0; i < protocol.betas.size(); ++i) {
      std::vector<double> ppl, agi, pp;
      for (const auto& rows : r.per_seed) {
        ppl.push_back(rows[i].perplexity);
        agi.push_back(rows[i].agility);
        pp.push_back(rows[i].mean_pos_prob);
      }
      r.median.push_back({protocol.betas[i], median(ppl), median(pp), median(agi)});
      agility.push_back(r.median.back().agility);
      pos.push_back(r.median.back().mean_pos_prob);
    }
    if (protocol.betas.size() >= 2) {
      r.rho_agility = spearman(protocol.betas, agility);
      r.rho_pos_prob = spearman(protocol.betas, pos);
    }
  }
  return results;
}

BetaSweepProtocol default_beta_sweep_protocol() {
  BetaSweepProtocol p;
  p.data = protocol_data(Regime::kHighEps);
  p.config.learning_rate = 1.0;
  p.warm_start = WarmStart{WarmData::kPositiveResponses, 100, 0.3};
  p.methods = {Method::kExmate, Method::kDpo};
  p.betas = {0.05, 0.1, 0.5, 1.0, 5.0};
  p.epochs = 10;
  return p;
}

}  // namespace rgpb
