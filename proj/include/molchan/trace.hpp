#ifndef MOLCHAN_TRACE_HPP
#define MOLCHAN_TRACE_HPP

#include "molchan/model.hpp"

#include <vector>

namespace molchan {

/// trial_id used for traces that aggregate several trials.
inline constexpr int kAggregateTrialId = -1;

/// One recorded (or simulated) sensor response to a single spray.
struct Trace {
  std::vector<double> times;  // s, strictly increasing, >= 0
  std::vector<double> values; // observation units
  SystemConfig config;
  int trial_id = 0;

  std::size_t size() const { return times.size(); }

  /// Throws std::invalid_argument on length mismatch, non-monotone or
  /// negative times, or non-finite values.
  void validate() const;

  friend bool operator==(const Trace&, const Trace&) = default;
};

} // namespace molchan

#endif
