#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rgpb {

/// Thrown when a loss or closed form is evaluated outside its domain.
/// `step` is the offending timestep (0-based) when one applies.
class DomainError : public std::domain_error {
 public:
  static constexpr std::size_t kNoStep = static_cast<std::size_t>(-1);

  explicit DomainError(const std::string& what, std::size_t step = kNoStep)
      : std::domain_error(what), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Model state is unusable (non-finite parameters, shape mismatch).
class StateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rgpb
