#include "namelink/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "namelink/error.hpp"

namespace namelink {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// O(n^3) shortest-augmenting-path assignment on a square matrix accessed
// through row/col index maps, so callers can solve sub-problems without
// copying. Dummy rows/cols (index -1) cost 0 against everything, which pads
// a rectangular problem to square while forcing maximum cardinality.
double solve_square(const Mat& cost, const std::vector<int>& row_ids,
                    const std::vector<int>& col_ids) {
    const int n = static_cast<int>(std::max(row_ids.size(), col_ids.size()));
    if (n == 0) return 0.0;
    auto at = [&](int i, int j) -> double {
        const int r = i < static_cast<int>(row_ids.size()) ? row_ids[i] : -1;
        const int c = j < static_cast<int>(col_ids.size()) ? col_ids[j] : -1;
        return (r < 0 || c < 0) ? 0.0 : cost(r, c);
    };

    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, kInf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            int j1 = 0;
            double delta = kInf;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    double total = 0.0;
    for (int j = 1; j <= n; ++j)
        if (p[j]) total += at(p[j] - 1, j - 1);
    return total;
}

void check_finite(const Mat& cost) {
    if (!cost.all_finite()) throw NumericError("cost matrix has non-finite entries");
}

}  // namespace

double assignment_min_total(const Mat& cost) {
    if (cost.rows == 0 || cost.cols == 0) return 0.0;
    check_finite(cost);
    std::vector<int> rows(cost.rows), cols(cost.cols);
    for (int i = 0; i < cost.rows; ++i) rows[i] = i;
    for (int j = 0; j < cost.cols; ++j) cols[j] = j;
    return solve_square(cost, rows, cols);
}

std::vector<std::pair<int, int>> min_weight_matching(const Mat& cost) {
    std::vector<std::pair<int, int>> result;
    const int k = std::min(cost.rows, cost.cols);
    if (k == 0) return result;
    check_finite(cost);

    double scale = 1.0;
    for (double v : cost.a) scale = std::max(scale, std::abs(v));
    const double eps = 1e-9 * scale;

    // Lexicographic refinement: fix pairs one slot at a time, accepting the
    // smallest (row, col) whose optimal completion still meets the target.
    std::vector<int> cols_left(cost.cols);
    for (int j = 0; j < cost.cols; ++j) cols_left[j] = j;

    std::vector<int> rows_all(cost.rows);
    for (int i = 0; i < cost.rows; ++i) rows_all[i] = i;
    double target = solve_square(cost, rows_all, cols_left);

    int row_start = 0;
    for (int slot = 0; slot < k; ++slot) {
        const int remaining = k - slot;
        bool fixed = false;
        for (int r = row_start; r <= cost.rows - remaining && !fixed; ++r) {
            // Rows below r are left unmatched once r leads this slot.
            std::vector<int> rows_after;
            for (int i = r + 1; i < cost.rows; ++i) rows_after.push_back(i);
            for (std::size_t ci = 0; ci < cols_left.size(); ++ci) {
                const int c = cols_left[ci];
                std::vector<int> cols_after;
                for (std::size_t cj = 0; cj < cols_left.size(); ++cj)
                    if (cj != ci) cols_after.push_back(cols_left[cj]);
                const double completion = solve_square(cost, rows_after, cols_after);
                if (cost(r, c) + completion <= target + eps) {
                    result.emplace_back(r, c);
                    cols_left = std::move(cols_after);
                    row_start = r + 1;
                    target = completion;
                    fixed = true;
                    break;
                }
            }
        }
        if (!fixed) throw NumericError("assignment refinement failed to fix a pair");
    }
    return result;
}

}  // namespace namelink
