#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "combolab/error.hpp"
#include "combolab/tape.hpp"
#include "combolab/tensor.hpp"

namespace combolab {

// Which score the expectation loss is measured against. `pred` compares the
// regression head output with the probability-weighted class value (the
// formula reading); `groundtruth` compares the label score with it (the
// prose reading). Default is `pred`.
enum class ExpectationMode { pred, groundtruth };

// Weights and settings of the combined objective
//   total = alpha * L_reg + beta * L_exp + gamma * L_cls
// with the published operating point alpha=2, beta=1, gamma=1.
struct ComboLossParams {
    double alpha = 2.0;
    double beta = 1.0;
    double gamma = 1.0;
    // value contributed by each class index to the expectation; defaults to
    // 1..C when empty (ordinal classes), bin centers for equal-width bins
    std::vector<double> class_values;
    double prob_clamp = 1e-12;
    ExpectationMode exp_mode = ExpectationMode::pred;

    static std::vector<double> default_class_values(std::size_t num_classes) {
        std::vector<double> v(num_classes);
        for (std::size_t i = 0; i < num_classes; ++i)
            v[i] = static_cast<double>(i + 1);
        return v;
    }

    void validate() const {
        if (!(alpha + beta + gamma > 0.0))
            throw ContractError("combo loss weights must satisfy alpha+beta+gamma > 0");
        if (alpha < 0.0 || beta < 0.0 || gamma < 0.0)
            throw ContractError("combo loss weights must be non-negative");
        for (std::size_t i = 1; i < class_values.size(); ++i)
            if (!(class_values[i] > class_values[i - 1]))
                throw ContractError("class_values must be strictly increasing");
    }
};

// Ground truth for one batch: continuous scores, their discretized class
// labels, and the per-class weights used by the classification term.
struct BatchTargets {
    std::vector<double> scores;        // s_i
    std::vector<int> classes;          // c_i, 0-based
    std::vector<double> class_weights; // w_c, one per class

    std::size_t size() const { return scores.size(); }
    std::size_t num_classes() const { return class_weights.size(); }

    void validate() const {
        if (scores.empty())
            throw ContractError("batch targets must be nonempty");
        if (classes.size() != scores.size())
            throw ContractError("batch targets: " + std::to_string(scores.size()) +
                                " scores but " + std::to_string(classes.size()) +
                                " class labels");
        for (int c : classes)
            if (c < 0 || static_cast<std::size_t>(c) >= class_weights.size())
                throw ContractError("class index " + std::to_string(c) +
                                    " out of [0, " +
                                    std::to_string(class_weights.size()) + ")");
        for (double w : class_weights)
            if (!(w > 0.0))
                throw ContractError("class weights must be positive");
    }
};

namespace detail {

inline void require_pred_shape(const Tape& tape, Var pred, std::size_t n,
                               const char* who) {
    const Tensor& t = tape.value(pred);
    if (t.rank() != 1 || t.extent(0) != n)
        throw ContractError(std::string(who) + ": predictions " +
                            shape_str(t.shape()) + " do not match " +
                            std::to_string(n) + " targets");
}

inline Var residual(Tape& tape, Var pred_scores, const BatchTargets& targets,
                    const char* who) {
    targets.validate();
    require_pred_shape(tape, pred_scores, targets.size(), who);
    Var truth = tape.constant(Tensor::from_vector(targets.scores));
    return tape.sub(pred_scores, truth);
}

}  // namespace detail

// L_reg = (1/N) sum |s^_i - s_i|
inline Var l1_regression_loss(Tape& tape, Var pred_scores,
                              const BatchTargets& targets) {
    return tape.reduce_mean(
        tape.abs(detail::residual(tape, pred_scores, targets, "l1_regression_loss")));
}

// (1/N) sum (s^_i - s_i)^2
inline Var mse_loss(Tape& tape, Var pred_scores, const BatchTargets& targets) {
    return tape.reduce_mean(
        tape.square(detail::residual(tape, pred_scores, targets, "mse_loss")));
}

// Classic Huber with threshold delta, mean-reduced:
//   0.5 d^2           if |d| <= delta
//   delta (|d| - 0.5 delta)  otherwise
// Built from |d| via min(a, delta) = a - relu(a - delta), which keeps the
// gradient continuous across the threshold.
inline Var huber_variant_loss(Tape& tape, Var pred_scores,
                              const BatchTargets& targets, double delta) {
    if (!(delta > 0.0)) throw ContractError("huber delta must be positive");
    Var a = tape.abs(detail::residual(tape, pred_scores, targets, "huber_variant_loss"));
    Var excess = tape.relu(tape.sub(a, delta));
    Var capped = tape.sub(a, excess);  // min(|d|, delta)
    Var quad = tape.mul(tape.square(capped), 0.5);
    Var lin = tape.mul(excess, delta);
    return tape.reduce_mean(tape.add(quad, lin));
}

// Smooth L1: 0.5 d^2 / beta inside |d| < beta, |d| - 0.5 beta outside.
// Identical to Huber(beta) scaled by 1/beta.
inline Var smooth_l1_loss(Tape& tape, Var pred_scores,
                          const BatchTargets& targets, double beta = 1.0) {
    if (!(beta > 0.0)) throw ContractError("smooth_l1 beta must be positive");
    return tape.mul(huber_variant_loss(tape, pred_scores, targets, beta), 1.0 / beta);
}

// The classification loss when the softmax output is already on the tape
// (shared inside the combined objective so the expectation path sees
// unclamped probabilities).
inline Var weighted_cross_entropy_from_probs(Tape& tape, Var probs,
                                             const BatchTargets& targets,
                                             double prob_clamp = 1e-12) {
    targets.validate();
    const std::size_t n = targets.size(), c = targets.num_classes();
    Var logp = tape.log(tape.clamp_min(probs, prob_clamp));
    // mask holds w_{c_i} at (i, c_i) and 0 elsewhere
    Tensor mask(Shape{n, c});
    for (std::size_t i = 0; i < n; ++i)
        mask.at(i, static_cast<std::size_t>(targets.classes[i])) =
            targets.class_weights[static_cast<std::size_t>(targets.classes[i])];
    Var picked = tape.reduce_sum(tape.mul(logp, tape.constant(std::move(mask))));
    return tape.mul(picked, -1.0 / static_cast<double>(n));
}

// L_cls = -(1/N) sum_i w_{c_i} log c^_{i,c_i}, with c^ = softmax(logits)
// clamped by prob_clamp before the log. The one-hot indicator selects the
// true-class probability; the weight of that class scales the sample.
inline Var weighted_cross_entropy(Tape& tape, Var logits,
                                  const BatchTargets& targets,
                                  double prob_clamp = 1e-12) {
    targets.validate();
    const Tensor& tl = tape.value(logits);
    const std::size_t n = targets.size(), c = targets.num_classes();
    if (tl.rank() != 2 || tl.extent(0) != n || tl.extent(1) != c)
        throw ContractError("weighted_cross_entropy: logits " +
                            shape_str(tl.shape()) + " do not match N=" +
                            std::to_string(n) + ", C=" + std::to_string(c));
    if (!tl.all_finite())
        throw DomainError("weighted_cross_entropy: logits must be finite");
    Var probs = tape.softmax(logits);
    return weighted_cross_entropy_from_probs(tape, probs, targets, prob_clamp);
}

// E_i = sum_j c^_{i,j} * class_values[j]; rows of `probs` must already be
// normalized (within 1e-9).
inline Var expectation_score(Tape& tape, Var probs,
                             const std::vector<double>& class_values) {
    std::size_t rows = 0;
    {
        // the reference dies before anything is pushed onto the tape
        const Tensor& tp = tape.value(probs);
        if (tp.rank() != 2 || tp.extent(1) != class_values.size())
            throw ContractError("expectation_score: probs " + shape_str(tp.shape()) +
                                " do not match " +
                                std::to_string(class_values.size()) +
                                " class values");
        for (std::size_t i = 0; i < tp.extent(0); ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < tp.extent(1); ++j) sum += tp.at(i, j);
            if (std::fabs(sum - 1.0) > 1e-9)
                throw ContractError("expectation_score: row " + std::to_string(i) +
                                    " sums to " + std::to_string(sum) +
                                    ", not a probability distribution");
        }
        rows = tp.extent(0);
    }
    Var values = tape.constant(
        Tensor(Shape{class_values.size(), 1},
               std::vector<double>(class_values.begin(), class_values.end())));
    return tape.reshape(tape.matmul(probs, values), Shape{rows});
}

// L_exp = (1/N) sum |s^_i - E_i| (mode pred) or (1/N) sum |s_i - E_i|
// (mode groundtruth).
inline Var expectation_loss(Tape& tape, Var pred_scores, Var probs,
                            const BatchTargets& targets,
                            const ComboLossParams& params,
                            ExpectationMode mode = ExpectationMode::pred) {
    targets.validate();
    const std::vector<double>& values =
        params.class_values.empty()
            ? ComboLossParams::default_class_values(targets.num_classes())
            : params.class_values;
    Var expect = expectation_score(tape, probs, values);
    Var anchor;
    if (mode == ExpectationMode::pred) {
        detail::require_pred_shape(tape, pred_scores, targets.size(),
                                   "expectation_loss");
        anchor = pred_scores;
    } else {
        anchor = tape.constant(Tensor::from_vector(targets.scores));
    }
    return tape.reduce_mean(tape.abs(tape.sub(anchor, expect)));
}

struct ComboLossTerms {
    Var total;
    Var reg;
    Var exp;
    Var cls;
};

// total = alpha * L_reg + beta * L_exp + gamma * L_cls
inline ComboLossTerms combo_loss(Tape& tape, Var pred_scores, Var logits,
                                 const BatchTargets& targets,
                                 const ComboLossParams& params) {
    params.validate();
    targets.validate();
    ComboLossTerms terms;
    terms.reg = l1_regression_loss(tape, pred_scores, targets);
    Var probs = tape.softmax(logits);
    terms.exp = expectation_loss(tape, pred_scores, probs, targets, params,
                                 params.exp_mode);
    terms.cls =
        weighted_cross_entropy_from_probs(tape, probs, targets, params.prob_clamp);
    terms.total = tape.add(
        tape.add(tape.mul(terms.reg, params.alpha), tape.mul(terms.exp, params.beta)),
        tape.mul(terms.cls, params.gamma));
    return terms;
}

}  // namespace combolab
