#pragma once

#include <utility>
#include <vector>

#include "namelink/mat.hpp"

namespace namelink {

// Minimum total cost over maximum-cardinality (min(rows, cols) pairs)
// injective assignments. Entries must be finite; negative costs are fine.
// Returns 0 for an empty matrix.
double assignment_min_total(const Mat& cost);

// Maximum-cardinality min-cost assignment as (row, col) pairs sorted by row.
// Among all optimal assignments, returns the lexicographically smallest pair
// list, so results are reproducible regardless of input ordering quirks.
std::vector<std::pair<int, int>> min_weight_matching(const Mat& cost);

}  // namespace namelink
