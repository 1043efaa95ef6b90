#ifndef FINEVL_GRADCHECK_H_
#define FINEVL_GRADCHECK_H_

#include <cstdint>
#include <string>
#include <vector>

namespace finevl {

inline constexpr double kGradCheckTolerance = 1e-4;

struct GradCheckRow {
  std::string name;        // itc, ritc, ritm, mlm, rlm, total
  std::string dimensions;  // human-readable problem size
  double max_rel_error = 0.0;  // worst over all points
  bool passed = false;
  size_t points = 1;
};

// Checks each loss kernel, and their unweighted sum over shared inputs,
// against central differences at a random non-degenerate point drawn from
// `seed`.
std::vector<GradCheckRow> RunLossGradChecks(uint64_t seed, double h = 1e-5,
                                            double tolerance = kGradCheckTolerance);

// Runs every kernel check, their sum, and the composite toy-model loss at
// `points` random points derived from `seed`; one row per check with the
// worst error seen. Rows: itc, ritc, ritm, mlm, rlm, total, toy_model.
std::vector<GradCheckRow> RunGradCheckSuite(size_t points, uint64_t seed, double h = 1e-5,
                                            double tolerance = kGradCheckTolerance);

}  // namespace finevl

#endif  // FINEVL_GRADCHECK_H_
