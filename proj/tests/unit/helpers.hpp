#pragma once

#include "doctest.h"
#include "loadcast/datastore.hpp"
#include "loadcast/error.hpp"

namespace testing {

template <class Fn>
loadcast::ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const loadcast::Error& e) {
    return e.code();
  }
  FAIL("no error raised");
  return loadcast::ErrorCode::StateError;
}

/// Noise-free, weather-independent scenario for fast training tests.
inline loadcast::SyntheticConfig quiet_config(int days) {
  loadcast::SyntheticConfig c;
  c.n_days = days;
  c.noise_sigma_weekday = 0.0;
  c.noise_sigma_weekend = 0.0;
  c.temp_sensitivity = 0.0;
  c.weekly_weekend_factor = 1.0;
  c.rare_event_count = 0;
  return c;
}

}  // namespace testing
