#include "namelink/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "namelink/error.hpp"

namespace namelink {

ConfidenceInterval wilson_interval(int correct, int total, double z) {
    if (total < 1) throw UsageError("wilson_interval requires total >= 1");
    if (correct < 0 || correct > total)
        throw UsageError("wilson_interval requires 0 <= correct <= total");
    ConfidenceInterval ci;
    ci.p_hat = static_cast<double>(correct) / total;
    ci.n = total;
    ci.z = z;
    const double n = static_cast<double>(total);
    const double z2 = z * z;
    const double denom = 1.0 + z2 / n;
    const double center = (ci.p_hat + z2 / (2.0 * n)) / denom;
    const double half =
        (z / denom) * std::sqrt(ci.p_hat * (1.0 - ci.p_hat) / n + z2 / (4.0 * n * n));
    ci.lower = std::max(0.0, center - half);
    ci.upper = std::min(1.0, center + half);
    return ci;
}

MetricsReport evaluate_accuracy(const std::vector<Prediction>& predictions,
                                const std::vector<Example>& examples,
                                const std::map<std::string, SubsetPredicate>& extra_subsets) {
    std::map<std::string, const Prediction*> by_id;
    for (const Prediction& p : predictions) by_id[p.example_id] = &p;

    std::map<std::string, SubsetPredicate> subsets = extra_subsets;
    subsets.emplace("interactive", [](const Example& ex) { return is_interactive(ex); });

    MetricsReport report;
    for (const Example& ex : examples) {
        if (ex.gt_links.empty()) continue;
        auto it = by_id.find(ex.id);
        if (it == by_id.end())
            throw UsageError("evaluation error: no prediction for example " + ex.id);
        const Prediction& pred = *it->second;
        ++report.example_count;

        const int nb = MetricsReport::bin_index(std::max(1, ex.n_referred()));
        const int mb = MetricsReport::bin_index(std::max(1, ex.m_detections()));
        for (const auto& [p, d] : ex.gt_links) {
            const bool correct = pred.assigned_to(p) == d;
            ++report.total_links;
            report.correct_links += correct;
            ++report.bins[nb][mb].links;
            report.bins[nb][mb].correct += correct;
            for (const auto& [name, match] : subsets) {
                if (!match(ex)) continue;
                BinStat& s = report.subsets[name];
                ++s.links;
                s.correct += correct;
            }
        }
    }
    if (report.total_links > 0) {
        report.accuracy = static_cast<double>(report.correct_links) / report.total_links;
        report.interval = wilson_interval(report.correct_links, report.total_links);
    }
    return report;
}

}  // namespace namelink
