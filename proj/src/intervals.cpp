#include <algorithm>

#include "imotion/error.hpp"
#include "imotion/generator.hpp"

namespace imotion {

std::vector<LengthInterval> fit_intervals(std::span<const int> lengths, const IntervalOptions& opts) {
  if (opts.p_min < 1 || opts.d_overlap < 0 || opts.d_min <= opts.d_overlap) {
    throw InvalidArgument("interval options need d_min > d_overlap >= 0 and p_min >= 1");
  }
  if (lengths.size() < static_cast<std::size_t>(opts.p_min)) {
    throw InsufficientData(std::to_string(lengths.size()) + " lengths, need at least " +
                           std::to_string(opts.p_min));
  }
  const auto [lo, hi] = std::minmax_element(lengths.begin(), lengths.end());
  const int t_min = *lo, t_max = *hi;
  auto population = [&](int left, int right) {
    return static_cast<int>(std::count_if(lengths.begin(), lengths.end(),
                                          [&](int t) { return left <= t && t <= right; }));
  };

  std::vector<LengthInterval> out;
  int t_left = t_min;
  int t_right = t_left;
  int p = 0;
  do {
    t_right = t_left + opts.d_min - opts.d_overlap;
    p = population(t_left, t_right);
    while (p < opts.p_min && t_right < t_max) {
      ++t_right;
      p = population(t_left, t_right);
    }
    if (p < opts.p_min) break;  // tail interval, repaired below
    out.push_back({t_left, t_right});
    t_left = std::max(t_right - opts.d_overlap, t_left + 1);
  } while (t_right < t_max);

  if (p < opts.p_min) {
    // Widen leftward; terminates because [t_min, t_max] holds every length.
    while (p < opts.p_min && t_left > 0) {
      --t_left;
      p = population(t_left, t_right);
    }
    out.push_back({t_left, t_right});
  }
  return out;
}

}  // namespace imotion
