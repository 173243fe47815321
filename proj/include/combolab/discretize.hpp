#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "combolab/error.hpp"

namespace combolab {

enum class DiscretizeRule { ceil_half, equal_width };

inline const char* to_string(DiscretizeRule r) {
    return r == DiscretizeRule::ceil_half ? "ceil_half" : "equal_width";
}

// Maps a continuous score to one of C ordinal classes. ceil_half takes
// ceil(s - 1/2) clamped to [1, C] (reported 0-based); equal_width splits
// [lo, hi] into C bins, right-closed at hi. Out-of-range scores clamp to the
// edge classes rather than erroring.
struct DiscretizationSpec {
    DiscretizeRule rule = DiscretizeRule::ceil_half;
    std::size_t num_classes = 5;
    double lo = 1.0;  // equal_width only
    double hi = 5.0;

    void validate() const {
        if (num_classes < 2)
            throw ContractError("discretization needs at least 2 classes");
        if (rule == DiscretizeRule::equal_width && !(lo < hi))
            throw ContractError("equal_width range requires lo < hi, got [" +
                                std::to_string(lo) + ", " + std::to_string(hi) + "]");
    }

    // Value each class contributes to the expectation: the 1-based class
    // integer for ceil_half, the bin center for equal_width.
    std::vector<double> class_values() const {
        validate();
        std::vector<double> v(num_classes);
        if (rule == DiscretizeRule::ceil_half) {
            for (std::size_t c = 0; c < num_classes; ++c)
                v[c] = static_cast<double>(c + 1);
        } else {
            const double width = (hi - lo) / static_cast<double>(num_classes);
            for (std::size_t c = 0; c < num_classes; ++c)
                v[c] = lo + (static_cast<double>(c) + 0.5) * width;
        }
        return v;
    }
};

inline int discretize_score(double s, const DiscretizationSpec& spec) {
    spec.validate();
    if (std::isnan(s)) throw DomainError("cannot discretize NaN score");
    const auto c_max = static_cast<long>(spec.num_classes);
    if (spec.rule == DiscretizeRule::ceil_half) {
        long cls = static_cast<long>(std::ceil(s - 0.5));
        cls = std::clamp(cls, 1L, c_max);
        return static_cast<int>(cls - 1);
    }
    const double width = (spec.hi - spec.lo) / static_cast<double>(spec.num_classes);
    long idx = static_cast<long>(std::floor((s - spec.lo) / width));
    return static_cast<int>(std::clamp(idx, 0L, c_max - 1));
}

// Per-class sample counts and the imbalance weights
//   w_c = max(counts) / counts[c].
// The majority class always gets weight 1. A class with zero samples is an
// error: an infinite weight would poison the classification loss.
struct ClassWeights {
    std::vector<std::size_t> counts;
    std::vector<double> weights;

    std::size_t num_classes() const { return counts.size(); }
};

inline ClassWeights class_weights(std::span<const int> labels,
                                  std::size_t num_classes) {
    ClassWeights cw;
    cw.counts.assign(num_classes, 0);
    for (int label : labels) {
        if (label < 0 || static_cast<std::size_t>(label) >= num_classes)
            throw ContractError("label " + std::to_string(label) + " out of [0, " +
                                std::to_string(num_classes) + ")");
        ++cw.counts[static_cast<std::size_t>(label)];
    }
    const std::size_t max_count = *std::max_element(cw.counts.begin(), cw.counts.end());
    cw.weights.resize(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (cw.counts[c] == 0) throw ImbalanceError(c);
        cw.weights[c] =
            static_cast<double>(max_count) / static_cast<double>(cw.counts[c]);
    }
    return cw;
}

// Labels the given scores and derives class weights from them. Callers
// working with train/test splits must pass the training portion only so the
// weights never see held-out labels.
inline std::pair<std::vector<int>, ClassWeights> apply_spec(
    std::span<const double> scores, const DiscretizationSpec& spec) {
    if (scores.empty()) throw ContractError("apply_spec: empty score list");
    std::vector<int> labels(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i)
        labels[i] = discretize_score(scores[i], spec);
    ClassWeights cw = class_weights(labels, spec.num_classes);
    return {std::move(labels), std::move(cw)};
}

// equal_width range from training-fold scores when no range is configured
inline DiscretizationSpec fit_equal_width(std::span<const double> train_scores,
                                          std::size_t num_classes) {
    if (train_scores.empty())
        throw ContractError("fit_equal_width: empty score list");
    DiscretizationSpec spec;
    spec.rule = DiscretizeRule::equal_width;
    spec.num_classes = num_classes;
    auto [lo, hi] = std::minmax_element(train_scores.begin(), train_scores.end());
    spec.lo = *lo;
    spec.hi = *hi;
    spec.validate();
    return spec;
}

}  // namespace combolab
