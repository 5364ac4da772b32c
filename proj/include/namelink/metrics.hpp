#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "namelink/datamodel.hpp"
#include "namelink/inference_types.hpp"

namespace namelink {

struct ConfidenceInterval {
    double p_hat = 0.0;
    int n = 0;
    double z = 1.96;
    double lower = 0.0;
    double upper = 0.0;
};

// Wilson score interval for a binomial proportion. total must be >= 1.
ConfidenceInterval wilson_interval(int correct, int total, double z = 1.96);

struct BinStat {
    int links = 0;
    int correct = 0;

    double accuracy() const { return links == 0 ? 0.0 : static_cast<double>(correct) / links; }
};

// Per-link accuracy with (n, m) bin breakdowns (1, 2, 3, 4+) and named
// subset accuracies. Bin link counts sum to the overall link count.
struct MetricsReport {
    int total_links = 0;
    int correct_links = 0;
    double accuracy = 0.0;
    ConfidenceInterval interval;
    BinStat bins[4][4];  // [n_bin][m_bin], value 4+ capped to index 3
    std::map<std::string, BinStat> subsets;
    int example_count = 0;

    static int bin_index(int value) { return value >= 4 ? 3 : value - 1; }
};

using SubsetPredicate = std::function<bool(const Example&)>;

// Scores predictions against gt_links: a link (p, d) counts as correct only
// when the prediction assigns person p exactly detection d; unassigned
// persons are incorrect. Throws EvalError naming the example when one with
// gt_links has no prediction. The "interactive" subset is always reported;
// extra predicates add further subsets.
MetricsReport evaluate_accuracy(const std::vector<Prediction>& predictions,
                                const std::vector<Example>& examples,
                                const std::map<std::string, SubsetPredicate>& extra_subsets = {});

}  // namespace namelink
