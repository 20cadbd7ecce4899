// rgpb: gradient checks, loss landscapes, synthetic data, training and
// method comparisons for the toy language model.
//
// Exit codes: 0 success, 1 checked failure (verification, assertion,
// divergence), 2 usage error.

#include <algorithm>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rgpb/data.hpp"
#include "rgpb/errors.hpp"
#include "rgpb/grad_theory.hpp"
#include "rgpb/io.hpp"
#include "rgpb/landscape.hpp"
#include "rgpb/lm_core.hpp"
#include "rgpb/losses.hpp"
#include "rgpb/metrics.hpp"
#include "rgpb/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace rgpb;

namespace {

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Config files: flat key=value lines, '#' comments. Each key becomes --key=value
// for the subcommand unless the command line sets it too.

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::vector<std::pair<std::string, std::string>> read_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError(path.string() + ":" + std::to_string(n) + ": expected key=value");
    }
    std::string key = trim(line.substr(0, eq));
    if (key.empty() || key == "config") {
      throw UsageError(path.string() + ":" + std::to_string(n) + ": bad key '" + key + "'");
    }
    out.emplace_back(std::move(key), trim(line.substr(eq + 1)));
  }
  return out;
}

bool names_flag(const std::string& arg, const std::string& key) {
  const std::string flag = "--" + key;
  return arg == flag || arg.rfind(flag + "=", 0) == 0;
}

std::vector<std::string> expand_config(std::vector<std::string> args) {
  if (args.empty() || args[0].rfind("-", 0) == 0) return args;  // no subcommand yet
  fs::path config;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) config = args[i].substr(9);
  }
  if (config.empty()) return args;
  std::vector<std::string> injected;
  for (const auto& [key, value] : read_config(config)) {
    const bool overridden =
        std::any_of(args.begin() + 1, args.end(), [&](const std::string& a) { return names_flag(a, key); });
    if (!overridden) injected.push_back("--" + key + "=" + value);
  }
  args.insert(args.begin() + 1, injected.begin(), injected.end());
  return args;
}

// ---------------------------------------------------------------------------
// Manifests echo every option of the subcommand after defaults, config and
// flags are resolved.

json resolved_options(const CLI::App& sub) {
  json out = json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string& name = opt->get_lnames().front();
    if (name == "help" || name == "config") continue;
    if (opt->count() > 0) {
      const auto& results = opt->results();
      std::string joined;
      for (std::size_t i = 0; i < results.size(); ++i) joined += (i ? "," : "") + results[i];
      out[name] = joined;
    } else {
      out[name] = opt->get_default_str();
    }
  }
  return out;
}

void write_manifest(const fs::path& dir, const CLI::App& sub, json extra = json::object()) {
  json m{{"version", kVersion}, {"command", sub.get_name()}, {"config", resolved_options(sub)}};
  for (auto& [k, v] : extra.items()) m[k] = v;
  write_file_atomic(dir / "manifest.json", m.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

Method method_or_usage(const std::string& text) {
  const auto m = parse_method(text);
  if (!m) throw UsageError("unknown method '" + text + "'");
  return *m;
}

std::vector<Method> methods_from(const std::string& text, std::vector<Method> all) {
  if (text == "all") return all;
  return {method_or_usage(text)};
}

void require_positive_beta(double beta) {
  if (!(beta > 0.0) || !std::isfinite(beta)) throw UsageError("--beta must be positive");
}

PairDataset load_dataset(const fs::path& data, const fs::path& vocab_flag) {
  fs::path jsonl = data;
  fs::path vocab = vocab_flag;
  if (fs::is_directory(data)) {
    jsonl = data / "data.jsonl";
    if (vocab.empty()) vocab = data / "vocab.txt";
  } else if (vocab.empty()) {
    vocab = data.parent_path() / "vocab.txt";
  }
  if (!fs::exists(jsonl)) throw UsageError("no dataset at " + jsonl.string());
  if (!fs::exists(vocab)) throw UsageError("no vocab file at " + vocab.string() + " (use --vocab)");
  return load_jsonl(jsonl, load_vocab(vocab));
}

json metrics_json(const MetricRecord& m) {
  return json{{"perplexity", m.perplexity},
              {"agility", m.agility},
              {"info_diff", m.mean_info_diff},
              {"grad_diff", m.grad_diff_per_step},
              {"n_pairs", m.n_pairs}};
}

// "mle:10,dpo:5" or "exmate@0.5:10,dpo@0.1:5"; stages without @beta use
// `beta`. DPO stages use `ref`.
Schedule parse_schedule(const std::string& text, double beta, RefPolicy ref) {
  Schedule out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    const auto colon = item.rfind(':');
    if (colon == std::string::npos) throw UsageError("schedule stage '" + item + "' needs method:epochs");
    std::string head = item.substr(0, colon);
    double stage_beta = beta;
    if (const auto at = head.find('@'); at != std::string::npos) {
      try {
        stage_beta = std::stod(head.substr(at + 1));
      } catch (const std::exception&) {
        throw UsageError("bad beta in schedule stage '" + item + "'");
      }
      head = head.substr(0, at);
    }
    std::size_t epochs = 0;
    try {
      epochs = std::stoul(item.substr(colon + 1));
    } catch (const std::exception&) {
      throw UsageError("bad epoch count in schedule stage '" + item + "'");
    }
    const Method m = method_or_usage(head);
    if (m != Method::kMle) require_positive_beta(stage_beta);
    out.stages.push_back({LossSpec{m, stage_beta, m == Method::kDpo ? ref : RefPolicy::kUnit}, epochs});
  }
  if (out.stages.empty()) throw UsageError("empty schedule");
  return out;
}

std::string fmt(double v) { return format_double(v); }

// ---------------------------------------------------------------------------

struct VerifyArgs {
  std::string method = "all";
  std::string check = "all";
  double beta = 1.0;
  std::size_t trials = 100;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_verify_grad(const CLI::App& sub, const VerifyArgs& a) {
  require_positive_beta(a.beta);
  if (a.trials == 0) throw UsageError("--trials must be positive");
  const auto methods = methods_from(a.method, {Method::kMle, Method::kDpo, Method::kUl, Method::kExmate});
  std::string lines;
  bool all_pass = true;
  for (Method m : methods) {
    std::vector<GradReport> reports;
    if (a.check == "all" || a.check == "exactness") {
      reports.push_back(verify_exactness_regime(m, a.beta, a.trials, a.seed));
    }
    if (a.check == "all" || a.check == "finite-differences") {
      reports.push_back(verify_against_finite_differences(m, a.beta, a.trials, a.seed));
    }
    if (a.check == "all" || a.check == "param-form") {
      reports.push_back(verify_param_form(m, a.beta, a.trials, a.seed));
    }
    json line{{"method", to_string(m)}, {"beta", a.beta}, {"seed", a.seed}, {"checks", json::array()}};
    bool pass = true;
    for (const GradReport& r : reports) {
      line["checks"].push_back(json::parse(r.to_json()));
      pass = pass && r.pass;
    }
    line["pass"] = pass;
    all_pass = all_pass && pass;
    lines += line.dump() + "\n";
  }
  std::cout << lines;
  if (!a.out.empty()) {
    write_file_atomic(fs::path(a.out) / "grad_report.jsonl", lines);
    write_manifest(a.out, sub, {{"pass", all_pass}});
  }
  return all_pass ? kOk : kFailed;
}

// ---------------------------------------------------------------------------

struct LandscapeArgs {
  int figure = 1;
  std::string method = "all";
  double beta = 1.0;
  double fixed = 0.1;
  std::size_t points = 0;  // 0: 100 for figure 1, 200 for figure 2
  std::string out;
};

int cmd_landscape(const CLI::App& sub, const LandscapeArgs& a) {
  require_positive_beta(a.beta);
  const fs::path out(a.out);
  const auto methods = methods_from(a.method, {Method::kDpo, Method::kUl, Method::kExmate});
  json summary = json::array();
  if (a.figure == 1) {
    for (Method m : methods) {
      for (SweepVariable v : {SweepVariable::kFPlus, SweepVariable::kFMinus}) {
        SweepSpec spec;
        spec.method = m;
        spec.beta = a.beta;
        spec.variable = v;
        spec.f_plus = a.fixed;
        spec.f_minus = a.fixed;
        spec.grid.n_points = a.points ? a.points : 100;
        try {
          spec.validate();
        } catch (const std::invalid_argument& e) {
          throw UsageError(e.what());
        }
        const LossSurface s = loss_surface(spec);
        const std::string name = loss_surface_file_name(spec);
        write_file_atomic(out / name, loss_surface_csv(s));
        std::cout << name << ": " << to_string(s.direction) << " in " << to_string(v) << ", " << s.clipped
                  << " clipped\n";
        summary.push_back({{"file", name},
                           {"method", to_string(m)},
                           {"variable", to_string(v)},
                           {"direction", to_string(s.direction)},
                           {"clipped", s.clipped}});
      }
    }
  } else {
    const std::size_t n = a.points ? a.points : 200;
    for (Method m : methods) {
      const GradientSurface g = gradient_surface(m, a.beta, default_u_grid(n), default_epsilon_grid(n));
      const std::string name = gradient_surface_file_name(m, a.beta);
      write_file_atomic(out / name, gradient_surface_csv(g));
      const SignCounts c = sign_counts(g);
      std::cout << name << ": positive " << fmt(c.positive_fraction()) << ", negative "
                << fmt(c.negative_fraction()) << " of " << c.valid() << " valid cells\n";
      json crossings = json::array();
      for (const ZeroCrossing& z : zero_crossings(m, a.beta)) {
        std::cout << "  " << z.description << ": found " << fmt(z.location) << ", predicted "
                  << fmt(z.predicted) << (z.in_domain ? "" : " (outside (0,1))") << "\n";
        crossings.push_back({{"description", z.description},
                             {"location", z.location},
                             {"predicted", z.predicted},
                             {"error", z.error()},
                             {"in_domain", z.in_domain}});
      }
      summary.push_back({{"file", name},
                         {"method", to_string(m)},
                         {"positive_fraction", c.positive_fraction()},
                         {"negative_fraction", c.negative_fraction()},
                         {"valid_cells", c.valid()},
                         {"crossings", crossings}});
    }
  }
  write_manifest(out, sub, {{"surfaces", summary}});
  return kOk;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string regime = "low_eps";
  std::size_t n = 64;
  std::size_t vocab = 16;
  std::size_t min_len = 3;
  std::size_t max_len = 5;
  double perturb = 0.1;
  double overlap = 0.5;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_synth(const CLI::App& sub, const SynthArgs& a) {
  SynthSpec spec;
  const auto regime = parse_regime(a.regime);
  if (!regime) throw UsageError("unknown regime '" + a.regime + "'");
  spec.regime = *regime;
  spec.n_pairs = a.n;
  spec.vocab_size = a.vocab;
  spec.seq_len_range = {a.min_len, a.max_len};
  spec.context_perturb_rate = a.perturb;
  spec.response_overlap_rate = a.overlap;
  spec.seed = a.seed;
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const PairDataset d = synth(spec);
  const fs::path out(a.out);
  save_jsonl(d, out / "data.jsonl");
  save_vocab(d.vocab, out / "vocab.txt");
  const double eps = random_model_information_difference(d, 5, a.seed);
  std::cout << d.pairs.size() << " pairs, mean information difference under random models " << fmt(eps)
            << "\n";
  write_manifest(out, sub, {{"n_pairs", d.pairs.size()}, {"random_model_information_difference", eps}});
  return kOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string vocab;
  std::string loss = "mle";
  std::string schedule;
  double beta = 1.0;
  std::string ref = "unit";
  std::size_t epochs = 50;
  double lr = 0.5;
  std::size_t batch = 16;
  std::uint64_t seed = 0;
  std::size_t eval_every = 1;
  std::string init = "random";
  double init_scale = 0.3;
  std::string checkpoint;
  std::size_t embed_dim = 8;
  std::size_t hidden_dim = 32;
  std::string out;
};

int cmd_train(const CLI::App& sub, const TrainArgs& a) {
  const auto ref = parse_ref_policy(a.ref);
  if (!ref) throw UsageError("unknown reference policy '" + a.ref + "'");
  TrainConfig config;
  if (a.schedule.empty()) {
    const Method m = method_or_usage(a.loss);
    if (m != Method::kMle) require_positive_beta(a.beta);
    config.schedule = Schedule::single({m, a.beta, m == Method::kDpo ? *ref : RefPolicy::kUnit}, a.epochs);
  } else {
    config.schedule = parse_schedule(a.schedule, a.beta, *ref);
  }
  if (!(a.lr > 0.0)) throw UsageError("--lr must be positive");
  config.learning_rate = a.lr;
  config.batch_size = a.batch;
  config.seed = a.seed;
  config.eval_every = a.eval_every;
  config.embed_dim = a.embed_dim;
  config.hidden_dim = a.hidden_dim;
  if (a.init == "warm") {
    if (a.checkpoint.empty()) throw UsageError("--init warm needs --checkpoint");
    config.init.kind = InitSpec::Kind::kWarm;
    config.init.checkpoint = a.checkpoint;
  } else {
    config.init.scale = a.init_scale;
  }
  try {
    config.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const PairDataset dataset = load_dataset(a.data, a.vocab);
  const fs::path out(a.out);
  try {
    const RunLog log = train(config, dataset);
    write_file_atomic(out / "metrics.csv", metrics_csv(log));
    save_checkpoint(log.final_model, out / "model.ckpt");
    json run = json::parse(run_manifest_json(log));
    write_manifest(out, sub, {{"run", run}, {"status", "ok"}});
    const MetricRecord& first = log.records.front().metrics;
    const MetricRecord& last = log.records.back().metrics;
    std::cout << "perplexity " << fmt(first.perplexity) << " -> " << fmt(last.perplexity) << ", agility "
              << fmt(first.agility) << " -> " << fmt(last.agility) << "\n";
    for (const std::string& w : log.warnings) std::cerr << "warning: " << w << "\n";
    return kOk;
  } catch (const TrainingDiverged& e) {
    write_manifest(out, sub,
                   {{"status", "diverged"}, {"error", e.what()}, {"epoch", e.epoch()}, {"batch", e.batch()}});
    std::cerr << "training diverged at epoch " << e.epoch() << ", batch " << e.batch() << ": " << e.what()
              << "\n";
    return kFailed;
  }
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string vocab;
  std::string out;
};

int cmd_eval(const CLI::App& sub, const EvalArgs& a) {
  const PairDataset dataset = load_dataset(a.data, a.vocab);
  const ToyLM model = load_checkpoint(a.checkpoint);
  if (model.vocab_size() != dataset.vocab.size()) throw UsageError("checkpoint and dataset vocab sizes differ");
  const json m = metrics_json(evaluate(model, dataset.pairs));
  std::cout << m.dump() << "\n";
  if (!a.out.empty()) {
    write_file_atomic(fs::path(a.out) / "metrics.json", m.dump(2) + "\n");
    write_manifest(a.out, sub, {{"metrics", m}});
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct CompareArgs {
  std::string regime = "low_eps";
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<std::string> asserts;
  std::string out;
};

std::string comparison_rows(const std::string& seed, const Comparison& c) {
  std::string out;
  for (const MethodOutcome& o : c.outcomes) {
    out += seed + "," + o.name + "," + fmt(o.perplexity) + "," + fmt(o.agility) + "," + fmt(o.mean_pos_prob) +
           "\n";
  }
  return out;
}

int cmd_compare(const CLI::App& sub, const CompareArgs& a) {
  const auto protocol = protocol_by_name(a.regime);
  if (!protocol) throw UsageError("unknown regime '" + a.regime + "' (low_eps, high_eps, recipe)");
  if (a.seeds.empty()) throw UsageError("--seeds must not be empty");
  std::vector<const OrderingAssertion*> checks;
  for (const std::string& name : a.asserts) {
    const OrderingAssertion* check = find_assertion(name);
    if (!check) throw UsageError("unknown assertion '" + name + "'");
    checks.push_back(check);
  }

  const ProtocolResult r = run_protocol(*protocol, a.seeds);
  std::string csv = "seed,name,perplexity,agility,mean_pos_prob\n";
  for (std::size_t i = 0; i < r.seeds.size(); ++i) csv += comparison_rows(std::to_string(r.seeds[i]), r.per_seed[i]);
  csv += comparison_rows("median", r.median);
  const fs::path out(a.out);
  write_file_atomic(out / "comparison.csv", csv);

  for (const MethodOutcome& o : r.median.outcomes) {
    std::cout << o.name << ": perplexity " << fmt(o.perplexity) << ", agility " << fmt(o.agility) << "\n";
  }
  json results = json::array();
  bool all = true;
  for (const OrderingAssertion* check : checks) {
    bool holds = false;
    try {
      holds = check->holds(r.median);
    } catch (const std::out_of_range&) {
      throw UsageError("assertion '" + std::string(check->name) + "' does not apply to regime " + a.regime);
    }
    all = all && holds;
    std::cout << (holds ? "PASS " : "FAIL ") << check->name << ": " << check->description << "\n";
    results.push_back({{"name", check->name}, {"holds", holds}});
  }
  write_manifest(out, sub, {{"assertions", results}});
  return all ? kOk : kFailed;
}

// ---------------------------------------------------------------------------

struct BetaSweepArgs {
  std::vector<std::string> methods{"exmate", "dpo"};
  std::vector<double> betas{0.05, 0.1, 0.5, 1.0, 5.0};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::size_t epochs = 10;
  std::string out;
};

int cmd_beta_sweep(const CLI::App& sub, const BetaSweepArgs& a) {
  BetaSweepProtocol p = default_beta_sweep_protocol();
  p.methods.clear();
  for (const std::string& m : a.methods) p.methods.push_back(method_or_usage(m));
  for (double b : a.betas) require_positive_beta(b);
  if (a.betas.empty() || a.seeds.empty() || p.methods.empty()) {
    throw UsageError("--methods, --betas and --seeds must not be empty");
  }
  p.betas = a.betas;
  p.epochs = a.epochs;

  const auto results = run_beta_sweep(p, a.seeds);
  std::string csv = "method,seed,beta,perplexity,mean_pos_prob,agility\n";
  json summary = json::array();
  for (const BetaSweepResult& r : results) {
    const std::string name(to_string(r.method));
    auto rows = [&](const std::string& seed, const std::vector<BetaSweepRow>& table) {
      for (const BetaSweepRow& row : table) {
        csv += name + "," + seed + "," + fmt(row.beta) + "," + fmt(row.perplexity) + "," +
               fmt(row.mean_pos_prob) + "," + fmt(row.agility) + "\n";
      }
    };
    for (std::size_t i = 0; i < a.seeds.size(); ++i) rows(std::to_string(a.seeds[i]), r.per_seed[i]);
    rows("median", r.median);
    std::cout << name << ": spearman(beta, agility) " << fmt(r.rho_agility) << ", spearman(beta, P(y+|x+)) "
              << fmt(r.rho_pos_prob) << "\n";
    summary.push_back({{"method", name}, {"rho_agility", r.rho_agility}, {"rho_pos_prob", r.rho_pos_prob}});
  }
  const fs::path out(a.out);
  write_file_atomic(out / "beta_sweep.csv", csv);
  write_manifest(out, sub, {{"rank_correlations", summary}});
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Preference-loss gradient lab on a toy language model"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  std::string config_path;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key=value file; command-line flags take precedence");
  };

  VerifyArgs verify;
  auto* s_verify = app.add_subcommand("verify-grad", "Check engine gradients against closed forms and finite differences");
  s_verify->add_option("--method", verify.method, "all, mle, dpo, ul or exmate")
      ->check(CLI::IsMember({"all", "mle", "dpo", "ul", "exmate"}));
  s_verify->add_option("--check", verify.check, "all, exactness, finite-differences or param-form")
      ->check(CLI::IsMember({"all", "exactness", "finite-differences", "param-form"}));
  s_verify->add_option("--beta", verify.beta, "loss coefficient (> 0)");
  s_verify->add_option("--trials", verify.trials, "random instances per check");
  s_verify->add_option("--seed", verify.seed, "root seed");
  s_verify->add_option("--out", verify.out, "directory for grad_report.jsonl and manifest.json");
  add_config(s_verify);

  LandscapeArgs land;
  auto* s_land = app.add_subcommand("landscape", "Write loss and gradient-coefficient surfaces as CSV");
  s_land->add_option("--figure", land.figure, "1: loss vs f+ and f-; 2: same-token coefficient over (u, epsilon)")
      ->check(CLI::IsMember({1, 2}));
  s_land->add_option("--method", land.method, "all, dpo, ul or exmate")
      ->check(CLI::IsMember({"all", "dpo", "ul", "exmate"}));
  s_land->add_option("--beta", land.beta, "loss coefficient (> 0)");
  s_land->add_option("--fixed", land.fixed, "figure 1: value of the probability not swept");
  s_land->add_option("--points", land.points, "grid points per axis (0: 100 for figure 1, 200 for figure 2)");
  s_land->add_option("--out", land.out, "output directory")->required();
  add_config(s_land);

  SynthArgs syn;
  auto* s_synth = app.add_subcommand("synth", "Generate a synthetic preference dataset");
  s_synth->add_option("--regime", syn.regime, "low_eps or high_eps");
  s_synth->add_option("--n", syn.n, "number of pairs");
  s_synth->add_option("--vocab", syn.vocab, "vocabulary size (>= 4)");
  s_synth->add_option("--min-len", syn.min_len, "shortest sequence");
  s_synth->add_option("--max-len", syn.max_len, "longest sequence");
  s_synth->add_option("--perturb", syn.perturb, "low_eps: fraction of context tokens resampled");
  s_synth->add_option("--overlap", syn.overlap, "high_eps: fraction of response tokens shared as a prefix");
  s_synth->add_option("--seed", syn.seed, "root seed");
  s_synth->add_option("--out", syn.out, "output directory (data.jsonl, vocab.txt)")->required();
  add_config(s_synth);

  TrainArgs tr;
  auto* s_train = app.add_subcommand("train", "Train the toy model with SGD");
  s_train->add_option("--data", tr.data, "dataset directory or JSONL file")->required();
  s_train->add_option("--vocab", tr.vocab, "vocab file (default: vocab.txt next to the data)");
  s_train->add_option("--loss", tr.loss, "mle, dpo, ul or exmate (ignored with --schedule)");
  s_train->add_option("--schedule", tr.schedule, "stages like mle:10,dpo@0.5:10");
  s_train->add_option("--beta", tr.beta, "loss coefficient (> 0)");
  s_train->add_option("--ref", tr.ref, "DPO reference: unit or frozen_copy");
  s_train->add_option("--epochs", tr.epochs, "epochs for a single-loss run");
  s_train->add_option("--lr", tr.lr, "learning rate");
  s_train->add_option("--batch", tr.batch, "batch size");
  s_train->add_option("--seed", tr.seed, "root seed");
  s_train->add_option("--eval-every", tr.eval_every, "epochs between metric rows");
  s_train->add_option("--init", tr.init, "random or warm")->check(CLI::IsMember({"random", "warm"}));
  s_train->add_option("--init-scale", tr.init_scale, "std of random initial parameters");
  s_train->add_option("--checkpoint", tr.checkpoint, "warm-start checkpoint");
  s_train->add_option("--embed-dim", tr.embed_dim, "embedding width");
  s_train->add_option("--hidden-dim", tr.hidden_dim, "hidden width");
  s_train->add_option("--out", tr.out, "output directory (metrics.csv, model.ckpt)")->required();
  add_config(s_train);

  EvalArgs ev;
  auto* s_eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  s_eval->add_option("--checkpoint", ev.checkpoint, "model checkpoint")->required();
  s_eval->add_option("--data", ev.data, "dataset directory or JSONL file")->required();
  s_eval->add_option("--vocab", ev.vocab, "vocab file (default: vocab.txt next to the data)");
  s_eval->add_option("--out", ev.out, "directory for metrics.json and manifest.json");
  add_config(s_eval);

  CompareArgs cmp;
  auto* s_cmp = app.add_subcommand("compare", "Train several methods per seed and compare medians");
  s_cmp->add_option("--regime", cmp.regime, "low_eps, high_eps or recipe");
  s_cmp->add_option("--seeds", cmp.seeds, "comma-separated seeds")->delimiter(',');
  std::string assert_help = "comma-separated ordering checks:";
  for (const OrderingAssertion& o : ordering_assertions()) assert_help += "\n  " + std::string(o.name);
  s_cmp->add_option("--assert", cmp.asserts, assert_help)->delimiter(',');
  s_cmp->add_option("--out", cmp.out, "output directory")->required();
  add_config(s_cmp);

  BetaSweepArgs bs;
  auto* s_bs = app.add_subcommand("beta-sweep", "Train over a list of betas per seed");
  s_bs->add_option("--methods", bs.methods, "comma-separated methods")->delimiter(',');
  s_bs->add_option("--betas", bs.betas, "comma-separated betas (> 0)")->delimiter(',');
  s_bs->add_option("--seeds", bs.seeds, "comma-separated seeds")->delimiter(',');
  s_bs->add_option("--epochs", bs.epochs, "epochs after the warm start");
  s_bs->add_option("--out", bs.out, "output directory")->required();
  add_config(s_bs);

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = expand_config(std::move(args));
    std::reverse(args.begin(), args.end());
    app.parse(std::move(args));
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (*s_verify) return cmd_verify_grad(*s_verify, verify);
    if (*s_land) return cmd_landscape(*s_land, land);
    if (*s_synth) return cmd_synth(*s_synth, syn);
    if (*s_train) return cmd_train(*s_train, tr);
    if (*s_eval) return cmd_eval(*s_eval, ev);
    if (*s_cmp) return cmd_compare(*s_cmp, cmp);
    if (*s_bs) return cmd_beta_sweep(*s_bs, bs);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailed;
  }
  return kUsage;
}
