#include <string>

#include "compop/error.hpp"
#include "compop/numerics.hpp"

namespace compop {

std::int64_t smallest_n_satisfying(const std::function<bool(std::int64_t)>& predicate,
                                   std::int64_t lower, std::int64_t ceiling) {
  if (lower > ceiling) throw ValidationError("smallest_n_satisfying: lower bound exceeds ceiling");
  if (predicate(lower)) return lower;

  // Geometric expansion to bracket the threshold, then bisection.
  std::int64_t bad = lower;
  std::int64_t step = 1;
  std::int64_t good = -1;
  while (good < 0) {
    const std::int64_t probe = bad + step > ceiling ? ceiling : bad + step;
    if (predicate(probe)) {
      good = probe;
    } else {
      if (probe == ceiling)
        throw NumericError("no sample size up to " + std::to_string(ceiling) + " satisfies the criterion");
      bad = probe;
      step *= 2;
    }
  }
  while (good - bad > 1) {
    const std::int64_t mid = bad + (good - bad) / 2;
    if (predicate(mid)) good = mid;
    else bad = mid;
  }
  return good;
}

}  // namespace compop
