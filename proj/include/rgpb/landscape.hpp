#pragma once
// Loss and gradient-coefficient sweeps over single-step probabilities with a
// unit reference, plus the sign changes the closed forms predict.

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rgpb/losses.hpp"

namespace rgpb {

/// Margin kept from 0 and 1 when a grid point would leave the loss domain.
inline constexpr double kDomainMargin = 1e-4;

enum class SweepVariable { kFPlus, kFMinus, kU, kEpsilon };

std::string_view to_string(SweepVariable variable);
/// Accepts "f_plus", "f_minus", "u", "epsilon".
std::optional<SweepVariable> parse_sweep_variable(std::string_view text);

struct Grid {
  double lo = kDomainMargin;
  double hi = 1.0 - kDomainMargin;
  std::size_t n_points = 100;

  /// Throws std::invalid_argument unless lo < hi and n_points >= 2.
  void validate() const;
  /// Evenly spaced, both ends included.
  std::vector<double> points() const;
};

struct SweepSpec {
  Method method = Method::kDpo;
  double beta = 1.0;
  SweepVariable variable = SweepVariable::kFPlus;
  // Values held fixed for whichever quantities are not swept.
  double f_plus = 0.1;
  double f_minus = 0.1;
  double u = 0.5;
  double epsilon = 0.0;
  Grid grid;

  /// Throws std::invalid_argument for beta <= 0, a bad grid, a grid outside
  /// [0, 1] ([-1, 1] for epsilon) or fixed values outside their range.
  void validate() const;
};

enum class Monotone { kIncreasing, kDecreasing, kConstant, kMixed };
std::string_view to_string(Monotone direction);

struct LossPoint {
  double value = 0.0;  // the swept variable after clipping
  double loss = 0.0;
  bool clipped = false;
};

struct LossSurface {
  SweepSpec spec;
  std::vector<LossPoint> points;
  Monotone direction = Monotone::kMixed;
  std::size_t clipped = 0;
};

/// Points that would put f+ or f- outside [kDomainMargin, 1 - kDomainMargin]
/// are moved to the nearest boundary and flagged.
LossSurface loss_surface(const SweepSpec& spec);

/// Direction of a sequence with `slack` tolerance on each difference.
Monotone monotone_direction(const std::vector<double>& values, double slack = 1e-12);

struct CoeffCell {
  double u = 0.0;
  double epsilon = 0.0;
  double coeff = 0.0;  // 0 when invalid
  bool valid = false;  // u and u + epsilon in (0, 1)
};

struct GradientSurface {
  Method method = Method::kDpo;
  double beta = 1.0;
  std::size_t n_u = 0;
  std::size_t n_epsilon = 0;
  std::vector<CoeffCell> cells;  // u-major: cells[i * n_epsilon + j]

  const CoeffCell& at(std::size_t i, std::size_t j) const { return cells[i * n_epsilon + j]; }
};

/// same_token_coeff over the grid; cells outside the domain are flagged.
GradientSurface gradient_surface(Method method, double beta, const Grid& u_grid, const Grid& eps_grid);

/// Default grids: u in (0, 1) and epsilon in (-1, 1), 200 points each, kept
/// kDomainMargin away from the ends.
Grid default_u_grid(std::size_t n = 200);
Grid default_epsilon_grid(std::size_t n = 200);

struct SignCounts {
  std::size_t positive = 0;
  std::size_t negative = 0;
  std::size_t zero = 0;
  std::size_t invalid = 0;

  std::size_t valid() const { return positive + negative + zero; }
  double positive_fraction() const;
  double negative_fraction() const;
};

SignCounts sign_counts(const GradientSurface& surface);

/// Bisection for a sign change of f on [lo, hi]; stops when the bracket is
/// narrower than tol. Throws std::invalid_argument if f(lo), f(hi) share a sign.
double bisect(const std::function<double(double)>& f, double lo, double hi, double tol = 1e-10);

struct ZeroCrossing {
  std::string description;
  double location = 0.0;   // found by bisection
  double predicted = 0.0;  // closed form
  bool in_domain = true;   // predicted point inside (0, 1)

  double error() const;
};

/// Sign changes of the factors and coefficients for one method:
///   DPO     same-token coefficient in epsilon at u = 0.1, 0.5, 0.9 (at 0)
///   UL      other-token factor in P-(y-) with P+(z) = P-(z) (at 1/(1+beta));
///           same-token coefficient in u at epsilon = 0 (at 1/(1+beta))
///   ExMATE  other-token factor in P-(y-) (at 1/beta); same-token
///           coefficient in u (at 1/beta, which may exceed 1)
/// MLE has none.
std::vector<ZeroCrossing> zero_crossings(Method method, double beta);

// CSV output.
std::string loss_surface_csv(const LossSurface& surface);          // variable,value,loss
std::string gradient_surface_csv(const GradientSurface& surface);  // u,epsilon,coeff,valid
std::string loss_surface_file_name(const SweepSpec& spec);
std::string gradient_surface_file_name(Method method, double beta);

}  // namespace rgpb
