#include "molchan/trace.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace molchan {

void Trace::validate() const {
  if (times.size() != values.size()) {
    throw std::invalid_argument("trace: " + std::to_string(times.size()) + " times but " +
                                std::to_string(values.size()) + " values");
  }
  for (std::size_t k = 0; k < times.size(); ++k) {
    if (!std::isfinite(times[k]) || times[k] < 0.0) {
      throw std::invalid_argument("trace: time at index " + std::to_string(k) +
                                  " is negative or not finite");
    }
    if (k > 0 && !(times[k] > times[k - 1])) {
      throw std::invalid_argument("trace: times not strictly increasing at index " +
                                  std::to_string(k));
    }
    if (!std::isfinite(values[k])) {
      throw std::invalid_argument("trace: value at index " + std::to_string(k) + " is not finite");
    }
  }
}

} // namespace molchan
