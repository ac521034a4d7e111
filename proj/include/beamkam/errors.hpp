#pragma once

#include <stdexcept>
#include <string>

namespace beamkam {

/** @brief Bad input: malformed config, violated precondition on user data. */
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/** @brief A numerical hypothesis failed (smallness, invertibility, divergence). */
struct NumericalError : std::runtime_error {
  NumericalError(std::string stage, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage(std::move(stage)) {}
  std::string stage;
};

/** @brief The parameter left the admissible set; not a malfunction. */
struct ExclusionError : std::runtime_error {
  ExclusionError(int step, const std::string& what)
      : std::runtime_error(what), step(step) {}
  int step;
};

} // namespace beamkam
