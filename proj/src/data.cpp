#include "rgpb/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "rgpb/io.hpp"
#include "rgpb/metrics.hpp"
#include "rgpb/rng.hpp"

namespace rgpb {

namespace {

using json = nlohmann::json;

std::size_t ceil_fraction(double rate, std::size_t n) {
  // Tolerate representation error such as 0.1 * 10 = 1.0000000000000002.
  return static_cast<std::size_t>(std::ceil(rate * static_cast<double>(n) - 1e-9));
}

TokenSeq random_seq(std::size_t len, std::size_t vocab_size, Rng& rng) {
  std::uniform_int_distribution<TokenId> token(0, static_cast<TokenId>(vocab_size - 1));
  TokenSeq seq;
  seq.ids.resize(len);
  for (auto& id : seq.ids) id = token(rng);
  return seq;
}

TokenId different_token(TokenId avoid, std::size_t vocab_size, Rng& rng) {
  std::uniform_int_distribution<TokenId> token(0, static_cast<TokenId>(vocab_size - 2));
  const TokenId t = token(rng);
  return t >= avoid ? t + 1 : t;
}

TokenSeq parse_seq(const json& value, const Vocab& vocab, const std::string& key, std::size_t line) {
  auto where = [&] { return "line " + std::to_string(line) + ", key '" + key + "'"; };
  if (!value.is_array()) throw std::invalid_argument(where() + ": expected an array");
  TokenSeq seq;
  seq.ids.reserve(value.size());
  for (const json& item : value) {
    if (item.is_string()) {
      const auto id = vocab.find(item.get<std::string>());
      if (!id) throw std::invalid_argument(where() + ": unknown token '" + item.get<std::string>() + "'");
      seq.ids.push_back(*id);
    } else if (item.is_number_integer()) {
      const auto raw = item.get<long long>();
      if (raw < 0 || static_cast<unsigned long long>(raw) >= vocab.size()) {
        throw std::invalid_argument(where() + ": token id " + std::to_string(raw) + " outside vocab");
      }
      seq.ids.push_back(static_cast<TokenId>(raw));
    } else {
      throw std::invalid_argument(where() + ": tokens must be strings or integers");
    }
  }
  return seq;
}

json ids_to_json(const TokenSeq& seq) { return json(seq.ids); }

}  // namespace

std::string_view to_string(Regime regime) {
  return regime == Regime::kLowEps ? "low_eps" : "high_eps";
}

std::optional<Regime> parse_regime(std::string_view text) {
  if (text == "low_eps" || text == "LOW_EPS") return Regime::kLowEps;
  if (text == "high_eps" || text == "HIGH_EPS") return Regime::kHighEps;
  return std::nullopt;
}

void SynthSpec::validate() const {
  if (vocab_size < 4) throw std::invalid_argument("synth: vocab_size must be >= 4");
  if (n_pairs == 0) throw std::invalid_argument("synth: n_pairs must be positive");
  const auto [lo, hi] = seq_len_range;
  if (lo < 1 || hi < lo) throw std::invalid_argument("synth: seq_len_range must satisfy 1 <= min <= max");
  auto in_unit = [](double r) { return std::isfinite(r) && r >= 0.0 && r <= 1.0; };
  if (!in_unit(context_perturb_rate)) throw std::invalid_argument("synth: context_perturb_rate outside [0,1]");
  if (!in_unit(response_overlap_rate)) throw std::invalid_argument("synth: response_overlap_rate outside [0,1]");
  if (regime == Regime::kHighEps) {
    for (std::size_t len = lo; len <= hi; ++len) {
      if (ceil_fraction(response_overlap_rate, len) >= len) {
        throw std::invalid_argument("synth: response_overlap_rate " + format_double(response_overlap_rate) +
                                    " leaves no diverging token for responses of length " +
                                    std::to_string(len));
      }
    }
  }
}

void PairDataset::validate() const {
  if (pairs.empty()) throw std::invalid_argument("empty dataset");
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    try {
      pairs[i].validate(vocab.size());
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("pair " + std::to_string(i) + ": " + e.what());
    }
  }
}

PairDataset synth(const SynthSpec& spec) {
  spec.validate();
  Rng rng(sub_seed(spec.seed, "synth"));
  std::uniform_int_distribution<std::size_t> length(spec.seq_len_range.first, spec.seq_len_range.second);

  PairDataset out;
  out.vocab = Vocab::synthetic(spec.vocab_size);
  out.provenance = "synth:regime=" + std::string(to_string(spec.regime)) +
                   ",seed=" + std::to_string(spec.seed);
  out.pairs.reserve(spec.n_pairs);

  auto perturb = [&](const TokenSeq& x) {
    TokenSeq out_x = x;
    const std::size_t n_replace = ceil_fraction(spec.context_perturb_rate, x.size());
    std::vector<std::size_t> positions(x.size());
    std::iota(positions.begin(), positions.end(), 0);
    std::shuffle(positions.begin(), positions.end(), rng);
    for (std::size_t k = 0; k < n_replace; ++k) {
      auto& id = out_x.ids[positions[k]];
      id = different_token(id, spec.vocab_size, rng);
    }
    return out_x;
  };

  while (out.pairs.size() < spec.n_pairs) {
    const TokenSeq x = random_seq(length(rng), spec.vocab_size, rng);
    if (spec.regime == Regime::kLowEps) {
      // Two near-identical contexts with their own responses; each pair uses
      // the other's context as its negative context.
      const TokenSeq x_sib = perturb(x);
      const TokenSeq y = random_seq(length(rng), spec.vocab_size, rng);
      const TokenSeq y_sib = random_seq(length(rng), spec.vocab_size, rng);
      out.pairs.push_back({x, y, x_sib, y});
      if (out.pairs.size() < spec.n_pairs) out.pairs.push_back({x_sib, y_sib, x, y_sib});
    } else {
      PreferencePair pair;
      pair.x_pos = x;
      const std::size_t len = length(rng);
      const std::size_t shared = ceil_fraction(spec.response_overlap_rate, len);
      pair.x_neg = pair.x_pos;
      pair.y_pos = random_seq(len, spec.vocab_size, rng);
      pair.y_neg = pair.y_pos;
      for (std::size_t t = shared; t < len; ++t) {
        pair.y_neg.ids[t] = different_token(pair.y_pos[t], spec.vocab_size, rng);
      }
      out.pairs.push_back(std::move(pair));
    }
  }
  return out;
}

PairDataset parse_jsonl(std::string_view text, const Vocab& vocab, std::string provenance) {
  PairDataset out;
  out.vocab = vocab;
  out.provenance = std::move(provenance);
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::invalid_argument("line " + std::to_string(line_no) + ": malformed JSON: " + e.what());
    }
    if (!obj.is_object()) throw std::invalid_argument("line " + std::to_string(line_no) + ": expected an object");
    auto field = [&](const char* key) {
      if (!obj.contains(key)) {
        throw std::invalid_argument("line " + std::to_string(line_no) + ": missing key '" + key + "'");
      }
      return parse_seq(obj.at(key), vocab, key, line_no);
    };
    PreferencePair pair{field("x_pos"), field("y_pos"), field("x_neg"), field("y_neg")};
    if (pair.y_pos.empty() || pair.y_neg.empty()) {
      throw std::invalid_argument("line " + std::to_string(line_no) + ": empty y");
    }
    out.pairs.push_back(std::move(pair));
  }
  if (out.pairs.empty()) throw std::invalid_argument("empty dataset");
  return out;
}

PairDataset load_jsonl(const std::filesystem::path& path, const Vocab& vocab) {
  return parse_jsonl(read_file(path), vocab, path.string());
}

std::string to_jsonl(const PairDataset& dataset) {
  std::string out;
  for (const PreferencePair& p : dataset.pairs) {
    json obj;
    obj["x_pos"] = ids_to_json(p.x_pos);
    obj["y_pos"] = ids_to_json(p.y_pos);
    obj["x_neg"] = ids_to_json(p.x_neg);
    obj["y_neg"] = ids_to_json(p.y_neg);
    out += obj.dump();
    out += '\n';
  }
  return out;
}

void save_jsonl(const PairDataset& dataset, const std::filesystem::path& path) {
  write_file_atomic(path, to_jsonl(dataset));
}

Vocab load_vocab(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocab(std::move(tokens));
}

std::string to_vocab_text(const Vocab& vocab) {
  std::string out;
  for (const auto& t : vocab.tokens()) {
    out += t;
    out += '\n';
  }
  return out;
}

void save_vocab(const Vocab& vocab, const std::filesystem::path& path) {
  write_file_atomic(path, to_vocab_text(vocab));
}

double random_model_information_difference(const PairDataset& dataset, std::size_t n_models,
                                           std::uint64_t seed, double scale) {
  if (n_models == 0) throw std::invalid_argument("need at least one model");
  dataset.validate();
  Rng rng(sub_seed(seed, "reference-models"));
  double total = 0.0;
  for (std::size_t m = 0; m < n_models; ++m) {
    const ToyLM model = ToyLM::random(dataset.vocab.size(), 8, 32, scale, rng);
    double sum = 0.0;
    for (const PreferencePair& p : dataset.pairs) sum += information_difference(model, p);
    total += sum / static_cast<double>(dataset.pairs.size());
  }
  return total / static_cast<double>(n_models);
}

}  // namespace rgpb
