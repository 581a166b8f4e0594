#pragma once

#include <stdexcept>
#include <string>

namespace swgee {

/// Failure categories surfaced by the library. Each maps to one class of
/// precondition or numerical problem so callers can branch without string
/// matching.
enum class errc {
  schema,                  // malformed input file contents
  integrity,               // inconsistent values (duplicates, y > n, ...)
  input,                   // empty/unreadable input, bad configuration value
  invalid_spec,            // ModelSpec/SimConfig invariant violated
  infeasible_parameters,   // correlation parameters give a non-PD covariance
  variance_degeneracy,     // mean at {0,1} makes the binomial variance vanish
  undefined_limit,         // limiting correlation undefined (alpha0 = 0)
  unidentified_parameter,  // data cannot identify a requested parameter
  leverage_degeneracy,     // (I - H) singular for some cluster
  non_convergence,         // iteration diverged or oscillated
  oracle_scale,            // individual-level expansion above the size guard
  degrees_of_freedom,      // too few clusters for t-based intervals
  feasibility,             // conditional-linear sampler left [0,1]
  degenerate_design,       // singular bread matrix in efficiency calculations
  numerical_conditioning,  // result lost symmetry/PSD beyond tolerance
};

inline const char* errc_name(errc c) {
  switch (c) {
    case errc::schema: return "schema";
    case errc::integrity: return "integrity";
    case errc::input: return "input";
    case errc::invalid_spec: return "invalid-spec";
    case errc::infeasible_parameters: return "infeasible-parameters";
    case errc::variance_degeneracy: return "variance-degeneracy";
    case errc::undefined_limit: return "undefined-limit";
    case errc::unidentified_parameter: return "unidentified-parameter";
    case errc::leverage_degeneracy: return "leverage-degeneracy";
    case errc::non_convergence: return "non-convergence";
    case errc::oracle_scale: return "oracle-scale";
    case errc::degrees_of_freedom: return "degrees-of-freedom";
    case errc::feasibility: return "feasibility";
    case errc::degenerate_design: return "degenerate-design";
    case errc::numerical_conditioning: return "numerical-conditioning";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what),
        code_(code) {}

  errc code() const noexcept { return code_; }

 private:
  errc code_;
};

}  // namespace swgee
