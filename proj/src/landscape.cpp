#include "rgpb/landscape.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>

#include "rgpb/grad_theory.hpp"
#include "rgpb/io.hpp"

namespace rgpb {

namespace {

double clamp_probability(double p, bool& clipped) {
  const double lo = kDomainMargin;
  const double hi = 1.0 - kDomainMargin;
  if (p < lo) {
    clipped = true;
    return lo;
  }
  if (p > hi) {
    clipped = true;
    return hi;
  }
  return p;
}

// "1", "0.5", "0.05" -> "1", "0.5", "0.05"; keeps file names free of odd characters.
std::string beta_tag(double beta) {
  std::string s = format_double(beta);
  for (char& c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-')) c = '_';
  }
  return s;
}

// UL / ExMATE other-token factor with P+(z) = P-(z) = pz, as a function of q = P-(y-).
double other_factor(Method method, double beta, double q, double pz) {
  AnalysisPoint point;
  point.u = 0.5;
  point.epsilon = 0.0;
  point.beta = beta;
  point.p_plus = {0.0, 0.0, pz};
  point.p_minus = {0.0, q, pz};
  point.y_pos = 0;
  point.y_neg = 1;
  return logit_factors_diff_token(method, point).factor_other[2];
}

}  // namespace

std::string_view to_string(SweepVariable variable) {
  switch (variable) {
    case SweepVariable::kFPlus:
      return "f_plus";
    case SweepVariable::kFMinus:
      return "f_minus";
    case SweepVariable::kU:
      return "u";
    case SweepVariable::kEpsilon:
      return "epsilon";
  }
  return "?";
}

std::optional<SweepVariable> parse_sweep_variable(std::string_view text) {
  for (SweepVariable v : {SweepVariable::kFPlus, SweepVariable::kFMinus, SweepVariable::kU, SweepVariable::kEpsilon}) {
    if (text == to_string(v)) return v;
  }
  return std::nullopt;
}

std::string_view to_string(Monotone direction) {
  switch (direction) {
    case Monotone::kIncreasing:
      return "increasing";
    case Monotone::kDecreasing:
      return "decreasing";
    case Monotone::kConstant:
      return "constant";
    case Monotone::kMixed:
      return "mixed";
  }
  return "?";
}

void Grid::validate() const {
  if (!std::isfinite(lo) || !std::isfinite(hi) || !(lo < hi)) {
    throw std::invalid_argument("grid needs finite lo < hi");
  }
  if (n_points < 2) throw std::invalid_argument("grid needs at least 2 points");
}

std::vector<double> Grid::points() const {
  validate();
  std::vector<double> out(n_points);
  const double step = (hi - lo) / static_cast<double>(n_points - 1);
  for (std::size_t i = 0; i < n_points; ++i) out[i] = lo + step * static_cast<double>(i);
  out.back() = hi;
  return out;
}

void SweepSpec::validate() const {
  if (!std::isfinite(beta) || !(beta > 0.0)) throw std::invalid_argument("beta must be positive");
  grid.validate();
  const double lo_bound = variable == SweepVariable::kEpsilon ? -1.0 : 0.0;
  if (grid.lo < lo_bound || grid.hi > 1.0) {
    throw std::invalid_argument("grid for " + std::string(to_string(variable)) + " must lie within [" +
                                format_double(lo_bound) + ", 1]");
  }
  for (double p : {f_plus, f_minus, u}) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("fixed probabilities must lie in [0, 1]");
  }
  if (!(epsilon >= -1.0 && epsilon <= 1.0)) throw std::invalid_argument("fixed epsilon must lie in [-1, 1]");
}

LossSurface loss_surface(const SweepSpec& spec) {
  spec.validate();
  LossSurface out;
  out.spec = spec;
  std::vector<double> losses;
  for (double x : spec.grid.points()) {
    bool clipped = false;
    double p_pos = 0.0;
    double p_neg = 0.0;
    double value = x;
    switch (spec.variable) {
      case SweepVariable::kFPlus:
        value = p_pos = clamp_probability(x, clipped);
        p_neg = clamp_probability(spec.f_minus, clipped);
        break;
      case SweepVariable::kFMinus:
        p_pos = clamp_probability(spec.f_plus, clipped);
        value = p_neg = clamp_probability(x, clipped);
        break;
      case SweepVariable::kU:
        value = p_pos = clamp_probability(x, clipped);
        p_neg = clamp_probability(p_pos + spec.epsilon, clipped);
        break;
      case SweepVariable::kEpsilon:
        p_pos = clamp_probability(spec.u, clipped);
        p_neg = clamp_probability(p_pos + x, clipped);
        value = p_neg - p_pos;
        break;
    }
    const double loss = single_step_loss(spec.method, p_pos, p_neg, spec.beta);
    out.points.push_back({value, loss, clipped});
    if (clipped) ++out.clipped;
    losses.push_back(loss);
  }
  out.direction = monotone_direction(losses);
  return out;
}

Monotone monotone_direction(const std::vector<double>& values, double slack) {
  bool up = false;
  bool down = false;
  for (std::size_t i = 1; i < values.size(); ++i) {
    const double d = values[i] - values[i - 1];
    if (d > slack) up = true;
    if (d < -slack) down = true;
  }
  if (up && down) return Monotone::kMixed;
  if (up) return Monotone::kIncreasing;
  if (down) return Monotone::kDecreasing;
  return Monotone::kConstant;
}

GradientSurface gradient_surface(Method method, double beta, const Grid& u_grid, const Grid& eps_grid) {
  if (!std::isfinite(beta) || !(beta > 0.0)) throw std::invalid_argument("beta must be positive");
  const auto us = u_grid.points();
  const auto es = eps_grid.points();
  GradientSurface out;
  out.method = method;
  out.beta = beta;
  out.n_u = us.size();
  out.n_epsilon = es.size();
  out.cells.reserve(us.size() * es.size());
  for (double u : us) {
    for (double e : es) {
      CoeffCell cell{u, e, 0.0, false};
      const double f_neg = u + e;
      if (u > 0.0 && u < 1.0 && f_neg > 0.0 && f_neg < 1.0) {
        cell.valid = true;
        cell.coeff = same_token_coeff(method, u, e, beta);
      }
      out.cells.push_back(cell);
    }
  }
  return out;
}

Grid default_u_grid(std::size_t n) { return Grid{kDomainMargin, 1.0 - kDomainMargin, n}; }

Grid default_epsilon_grid(std::size_t n) { return Grid{-1.0 + kDomainMargin, 1.0 - kDomainMargin, n}; }

double SignCounts::positive_fraction() const {
  return valid() ? static_cast<double>(positive) / static_cast<double>(valid()) : 0.0;
}

double SignCounts::negative_fraction() const {
  return valid() ? static_cast<double>(negative) / static_cast<double>(valid()) : 0.0;
}

SignCounts sign_counts(const GradientSurface& surface) {
  SignCounts c;
  for (const CoeffCell& cell : surface.cells) {
    if (!cell.valid) {
      ++c.invalid;
    } else if (cell.coeff > 0.0) {
      ++c.positive;
    } else if (cell.coeff < 0.0) {
      ++c.negative;
    } else {
      ++c.zero;
    }
  }
  return c;
}

double bisect(const std::function<double(double)>& f, double lo, double hi, double tol) {
  double flo = f(lo);
  const double fhi = f(hi);
  if (flo == 0.0) return lo;
  if (fhi == 0.0) return hi;
  if ((flo > 0.0) == (fhi > 0.0)) {
    throw std::invalid_argument("bisect: no sign change on [" + format_double(lo) + ", " + format_double(hi) + "]");
  }
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const double fm = f(mid);
    if (fm == 0.0) return mid;
    if ((fm > 0.0) == (flo > 0.0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

double ZeroCrossing::error() const { return std::abs(location - predicted); }

std::vector<ZeroCrossing> zero_crossings(Method method, double beta) {
  if (!std::isfinite(beta) || !(beta > 0.0)) throw std::invalid_argument("beta must be positive");
  std::vector<ZeroCrossing> out;
  const double lo = 1e-6;
  const double hi = 1.0 - 1e-6;
  switch (method) {
    case Method::kMle:
      break;
    case Method::kDpo:
      for (double u : {0.1, 0.5, 0.9}) {
        const double x = bisect([&](double e) { return same_token_coeff(Method::kDpo, u, e, beta); }, -u + lo,
                                1.0 - u - lo);
        out.push_back({"same-token coefficient changes sign in epsilon at u=" + format_double(u), x, 0.0, true});
      }
      break;
    case Method::kUl: {
      const double predicted = 1.0 / (1.0 + beta);
      const double x = bisect([&](double q) { return other_factor(Method::kUl, beta, q, 0.1); }, lo, hi);
      out.push_back({"other-token factor changes sign at P-(y-)", x, predicted, true});
      const double y = bisect([&](double u) { return same_token_coeff(Method::kUl, u, 0.0, beta); }, lo, hi);
      out.push_back({"same-token coefficient changes sign in u at epsilon=0", y, predicted, true});
      break;
    }
    case Method::kExmate: {
      const double predicted = 1.0 / beta;
      const bool inside = predicted < 1.0;
      // The other-token factor is linear in q, so it can be followed past 1.
      const double q_hi = std::max(hi, 2.0 * predicted);
      const double x = bisect(
          [&](double q) { return -0.1 + beta * q * 0.1; }, lo, q_hi);
      out.push_back({"other-token factor changes sign at P-(y-)", x, predicted, inside});
      const double y = bisect([&](double u) { return same_token_coeff_unchecked(Method::kExmate, u, 0.0, beta); },
                              lo, q_hi);
      out.push_back({"same-token coefficient changes sign in u", y, predicted, inside});
      break;
    }
  }
  return out;
}

std::string loss_surface_csv(const LossSurface& surface) {
  std::string out = "variable,value,loss\n";
  const std::string name(to_string(surface.spec.variable));
  for (const LossPoint& p : surface.points) {
    out += name + "," + format_double(p.value) + "," + format_double(p.loss) + "\n";
  }
  return out;
}

std::string gradient_surface_csv(const GradientSurface& surface) {
  std::string out = "u,epsilon,coeff,valid\n";
  for (const CoeffCell& c : surface.cells) {
    out += format_double(c.u) + "," + format_double(c.epsilon) + "," + format_double(c.coeff) + "," +
           (c.valid ? "1" : "0") + "\n";
  }
  return out;
}

std::string loss_surface_file_name(const SweepSpec& spec) {
  return "loss_" + std::string(to_string(spec.method)) + "_beta" + beta_tag(spec.beta) + "_" +
         std::string(to_string(spec.variable)) + ".csv";
}

std::string gradient_surface_file_name(Method method, double beta) {
  return "coeff_" + std::string(to_string(method)) + "_beta" + beta_tag(beta) + ".csv";
}

}  // namespace rgpb
