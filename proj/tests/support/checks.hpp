#pragma once

#include <exception>

#include <gtest/gtest.h>

#include "swgee/errors.hpp"

namespace checks {

/// Runs the callable and reports whether it threw a library error with the
/// expected category, with readable diagnostics either way.
template <class Fn>
::testing::AssertionResult throws_code(Fn fn, swgee::errc want) {
  try {
    fn();
  } catch (const swgee::Error& e) {
    if (e.code() == want) return ::testing::AssertionSuccess();
    return ::testing::AssertionFailure()
           << "threw " << swgee::errc_name(e.code()) << ": " << e.what()
           << " (wanted " << swgee::errc_name(want) << ")";
  } catch (const std::exception& e) {
    return ::testing::AssertionFailure()
           << "threw a non-library exception: " << e.what();
  }
  return ::testing::AssertionFailure() << "did not throw";
}

}  // namespace checks
