#pragma once

#include <algorithm>
#include <filesystem>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "namelink/datamodel.hpp"
#include "namelink/mat.hpp"
#include "namelink/rng.hpp"

namespace testutil {

using namelink::BoundingBox;
using namelink::Detection;
using namelink::Example;
using namelink::Mat;

// Exhaustive assignment oracle: minimum total cost over all
// maximum-cardinality injective assignments, and the lexicographically
// smallest optimal pair list. Usable for min(rows, cols) <= ~6.
struct BruteForceResult {
    double total = 0.0;
    std::vector<std::pair<int, int>> pairs;
};

inline void brute_force_rec(const Mat& cost, int next_row, int picked, int k,
                            std::vector<bool>& used_col, double running,
                            std::vector<std::pair<int, int>>& current, BruteForceResult& best,
                            bool& found) {
    if (picked == k) {
        const bool better =
            !found || running < best.total - 1e-12 ||
            (std::abs(running - best.total) <= 1e-12 && current < best.pairs);
        if (better) {
            best.total = running;
            best.pairs = current;
            found = true;
        }
        return;
    }
    if (next_row >= cost.rows) return;
    const int remaining_needed = k - picked;
    if (cost.rows - next_row < remaining_needed) return;
    // Skip this row entirely (allowed when more rows than pairs remain).
    brute_force_rec(cost, next_row + 1, picked, k, used_col, running, current, best, found);
    for (int c = 0; c < cost.cols; ++c) {
        if (used_col[c]) continue;
        used_col[c] = true;
        current.emplace_back(next_row, c);
        brute_force_rec(cost, next_row + 1, picked + 1, k, used_col, running + cost(next_row, c),
                        current, best, found);
        current.pop_back();
        used_col[c] = false;
    }
}

inline BruteForceResult brute_force_matching(const Mat& cost) {
    BruteForceResult best;
    const int k = std::min(cost.rows, cost.cols);
    if (k == 0) return best;
    std::vector<bool> used(cost.cols, false);
    std::vector<std::pair<int, int>> current;
    bool found = false;
    best.total = std::numeric_limits<double>::infinity();
    brute_force_rec(cost, 0, 0, k, used, 0.0, current, best, found);
    return best;
}

inline BoundingBox box(double x1, double y1, double x2, double y2) {
    return BoundingBox{x1, y1, x2, y2};
}

// Small valid detection with d_v-dim features and an optional sharp crop.
inline Detection make_detection(double x1, double y1, double x2, double y2, int d_v,
                                float fill = 0.5f) {
    Detection d;
    d.box = box(x1, y1, x2, y2);
    d.face_box = box(x1 + 0.2 * (x2 - x1), y1 + 0.05 * (y2 - y1), x1 + 0.6 * (x2 - x1),
                     y1 + 0.40 * (y2 - y1));
    d.visual_feature.assign(d_v, fill);
    return d;
}

// Minimal valid example: n referred persons, m detections, one-token
// mentions "[NAME] , [NAME] , ..." and identity links (i, i).
inline Example make_example(const std::string& id, int n, int m, int d_v, bool has_verb = false) {
    Example ex;
    ex.id = id;
    for (int i = 0; i < n; ++i) {
        if (i > 0) ex.caption.tokens.push_back(2);
        namelink::ReferredPerson rp;
        rp.identity_id = "id" + std::to_string(i);
        rp.mentions.push_back(
            namelink::Mention{static_cast<int>(ex.caption.tokens.size()),
                              static_cast<int>(ex.caption.tokens.size()) + 1});
        ex.caption.tokens.push_back(namelink::kNameToken);
        ex.referred.push_back(std::move(rp));
    }
    if (ex.caption.tokens.empty()) ex.caption.tokens.push_back(3);
    ex.caption.has_verb = has_verb;
    for (int j = 0; j < m; ++j) {
        const double x1 = 0.05 + 0.9 * j / std::max(1, m);
        ex.detections.push_back(make_detection(x1, 0.2, x1 + 0.8 / std::max(1, m), 0.8, d_v));
    }
    for (int i = 0; i < std::min(n, m); ++i) ex.gt_links.emplace_back(i, i);
    ex.year = 2015;
    ex.category = "test";
    return ex;
}

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::uint64_t counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("namelink_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
                 std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace testutil
