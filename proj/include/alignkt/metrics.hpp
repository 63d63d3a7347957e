#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace alignkt {

struct UndefinedMetric : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Probability that a random positive outranks a random negative, ties counted
// as one half. O(n log n): sort, then sweep groups of equal scores.
inline double auc(std::span<const double> preds, std::span<const int> labels) {
    if (preds.size() != labels.size()) throw std::invalid_argument("auc: length mismatch");
    std::vector<std::size_t> order(preds.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return preds[a] < preds[b]; });
    std::uint64_t pos = 0, neg = 0, neg_below = 0, twice_wins = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        std::uint64_t group_pos = 0, group_neg = 0;
        while (j < order.size() && preds[order[j]] == preds[order[i]]) {
            (labels[order[j]] ? group_pos : group_neg) += 1;
            ++j;
        }
        twice_wins += 2 * group_pos * neg_below + group_pos * group_neg;
        neg_below += group_neg;
        pos += group_pos;
        neg += group_neg;
        i = j;
    }
    if (pos == 0 || neg == 0) throw UndefinedMetric("auc: undefined when only one class is present");
    return static_cast<double>(twice_wins) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

inline double accuracy(std::span<const double> preds, std::span<const int> labels, double threshold = 0.5) {
    if (preds.size() != labels.size()) throw std::invalid_argument("accuracy: length mismatch");
    if (preds.empty()) throw UndefinedMetric("accuracy: no predictions");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) hit += ((preds[i] >= threshold) == (labels[i] != 0)) ? 1 : 0;
    return static_cast<double>(hit) / static_cast<double>(preds.size());
}

}  // namespace alignkt
