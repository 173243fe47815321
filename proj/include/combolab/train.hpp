#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "combolab/data.hpp"
#include "combolab/discretize.hpp"
#include "combolab/error.hpp"
#include "combolab/losses.hpp"
#include "combolab/model.hpp"
#include "combolab/rng.hpp"

namespace combolab {

// ---------------------------------------------------------------------------
// Optimizer and schedule
// ---------------------------------------------------------------------------

enum class LossKind { mse, l1, smooth_l1, huber, combo };

inline const char* to_string(LossKind k) {
    switch (k) {
        case LossKind::mse: return "mse";
        case LossKind::l1: return "l1";
        case LossKind::smooth_l1: return "smooth_l1";
        case LossKind::huber: return "huber";
        case LossKind::combo: return "combo";
    }
    return "?";
}

inline LossKind loss_kind_from(const std::string& name) {
    for (LossKind k : {LossKind::mse, LossKind::l1, LossKind::smooth_l1,
                       LossKind::huber, LossKind::combo})
        if (name == to_string(k)) return k;
    throw ContractError("unknown loss '" + name +
                        "' (valid: mse, l1, smooth_l1, huber, combo)");
}

struct TrainConfig {
    double lr0 = 0.01;
    int decay_every = 50;       // epochs between learning-rate drops
    double decay_factor = 10.0;
    double momentum = 0.9;
    double weight_decay = 0.001;
    std::size_t batch_size = 64;
    int epochs = 200;
    LossKind loss = LossKind::combo;
    ComboLossParams combo{};
    double smooth_l1_beta = 1.0;
    double huber_delta = 1.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(lr0 > 0.0)) throw ContractError("lr0 must be positive");
        if (momentum < 0.0 || momentum >= 1.0)
            throw ContractError("momentum must lie in [0, 1)");
        if (batch_size < 1) throw ContractError("batch_size must be >= 1");
        if (epochs < 0) throw ContractError("epochs must be >= 0");
        if (decay_every < 1) throw ContractError("decay_every must be >= 1");
        if (!(decay_factor > 0.0)) throw ContractError("decay_factor must be positive");
        if (weight_decay < 0.0) throw ContractError("weight_decay must be >= 0");
    }
};

// lr0 / decay_factor^floor(epoch / decay_every)
inline double lr_at(int epoch, const TrainConfig& cfg) {
    if (epoch < 0) throw ContractError("epoch must be >= 0");
    const int drops = epoch / cfg.decay_every;
    return cfg.lr0 / std::pow(cfg.decay_factor, static_cast<double>(drops));
}

struct SgdState {
    std::vector<Tensor> velocity;  // aligned with Parameters::items
};

// Heavy-ball momentum with L2 decay folded into the gradient:
//   g' = g + wd * theta;  v <- mu * v + g';  theta <- theta - lr * v
inline void sgd_step(Parameters& params, const std::vector<Tensor>& grads,
                     SgdState& state, double lr, double momentum,
                     double weight_decay) {
    if (grads.size() != params.items.size())
        throw ContractError("sgd_step: " + std::to_string(grads.size()) +
                            " gradients for " + std::to_string(params.items.size()) +
                            " parameters");
    if (state.velocity.empty()) {
        state.velocity.reserve(params.items.size());
        for (const auto& it : params.items)
            state.velocity.emplace_back(it.value.shape());
    }
    for (std::size_t p = 0; p < params.items.size(); ++p) {
        Tensor& theta = params.items[p].value;
        const Tensor& g = grads[p];
        Tensor& v = state.velocity[p];
        if (!g.same_shape(theta))
            throw ContractError("sgd_step: gradient shape mismatch for " +
                                params.items[p].name);
        for (std::size_t i = 0; i < theta.numel(); ++i) {
            if (std::isnan(g[i]))
                throw NumericError("NaN gradient in parameter '" +
                                   params.items[p].name + "' at element " +
                                   std::to_string(i));
            const double adjusted = g[i] + weight_decay * theta[i];
            v[i] = momentum * v[i] + adjusted;
            theta[i] -= lr * v[i];
        }
    }
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct Metrics {
    double mae = 0.0;
    double rmse = 0.0;
    double pc = 0.0;
    bool pc_defined = true;
};

struct PearsonResult {
    double value = 0.0;
    bool defined = false;
};

inline PearsonResult pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.empty())
        throw ContractError("pearson: inputs must be nonempty and equally sized");
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return {0.0, false};  // undefined, never NaN
    return {sxy / std::sqrt(sxx * syy), true};
}

inline Metrics compute_metrics(std::span<const double> predicted,
                               std::span<const double> truth) {
    if (predicted.size() != truth.size() || predicted.empty())
        throw ContractError("metrics: inputs must be nonempty and equally sized");
    const double n = static_cast<double>(predicted.size());
    double abs_sum = 0, sq_sum = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const double d = predicted[i] - truth[i];
        abs_sum += std::fabs(d);
        sq_sum += d * d;
    }
    Metrics m;
    m.mae = abs_sum / n;
    m.rmse = std::sqrt(sq_sum / n);
    PearsonResult pc = pearson(predicted, truth);
    m.pc = pc.value;
    m.pc_defined = pc.defined;
    return m;
}

struct MetricsReport {
    double mae = 0.0;
    double rmse = 0.0;
    double pc = 0.0;
    bool pc_defined = true;
    std::vector<Metrics> per_fold;  // filled by cross_validate

    static MetricsReport from(const Metrics& m) {
        MetricsReport r;
        r.mae = m.mae;
        r.rmse = m.rmse;
        r.pc = m.pc;
        r.pc_defined = m.pc_defined;
        return r;
    }
};

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    double loss = 0.0;
    double reg = 0.0;
    double exp = 0.0;
    double cls = 0.0;
};

struct TrainResult {
    Parameters params;
    std::vector<EpochRecord> history;
    Metrics final_train;        // final parameters evaluated on the training data
    ClassWeights class_weights; // weights used by the combo loss (empty otherwise)
    std::vector<double> class_values;
};

// Backbone shaped for this data and discretization: width from the samples,
// classification head from the class count.
inline Backbone fitted_backbone(const Dataset& dataset,
                                const DiscretizationSpec& disc,
                                BackboneConfig cfg) {
    cfg.input_width = dataset.sample_width();
    cfg.num_classes = disc.num_classes;
    return Backbone(std::move(cfg));
}

inline std::vector<double> predict_scores(const Backbone& backbone,
                                          const Parameters& params,
                                          const Dataset& ds) {
    ds.validate();
    std::vector<double> out;
    out.reserve(ds.size());
    const std::size_t chunk = 256;
    for (std::size_t start = 0; start < ds.size(); start += chunk) {
        const std::size_t stop = std::min(ds.size(), start + chunk);
        std::vector<std::size_t> idx(stop - start);
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
        Tape tape;
        auto r = backbone.forward(tape, params, ds.batch(idx));
        const Tensor& scores = tape.value(r.scores);
        for (std::size_t i = 0; i < scores.numel(); ++i) out.push_back(scores[i]);
    }
    return out;
}

inline MetricsReport evaluate(const Backbone& backbone, const Parameters& params,
                              const Dataset& ds) {
    std::vector<double> predicted = predict_scores(backbone, params, ds);
    return MetricsReport::from(compute_metrics(predicted, ds.scores));
}

// Minimizes the configured loss over the dataset with seeded shuffling;
// bitwise deterministic given (dataset, configs, seeds). Class weights for
// the combo loss come from this dataset only, so callers must pass the
// training portion.
inline TrainResult train_model(const Dataset& dataset,
                               const DiscretizationSpec& disc,
                               const BackboneConfig& backbone_cfg,
                               const TrainConfig& cfg) {
    dataset.validate();
    cfg.validate();
    disc.validate();
    // the data fixes the input width and the discretization fixes the
    // classification head, for every loss, so compared runs share one
    // architecture
    Backbone backbone = fitted_backbone(dataset, disc, backbone_cfg);

    TrainResult result;
    result.params = backbone.init_params();

    // discretization is only consulted by the classification terms; an
    // empty class must surface before any step runs
    std::vector<int> labels;
    ComboLossParams combo = cfg.combo;
    if (cfg.loss == LossKind::combo) {
        auto [lab, cw] = apply_spec(dataset.scores, disc);
        labels = std::move(lab);
        result.class_weights = cw;
        if (combo.class_values.empty()) combo.class_values = disc.class_values();
        combo.validate();
        result.class_values = combo.class_values;
    }

    if (cfg.epochs == 0) return result;

    SgdState state;
    Rng shuffle_rng(Rng::mix(cfg.seed, 201));
    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<Tensor> grads(result.params.items.size());

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at(epoch, cfg);
        shuffle_rng.shuffle(order);
        double loss_sum = 0, reg_sum = 0, exp_sum = 0, cls_sum = 0;

        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            std::vector<std::size_t> idx(order.begin() + start, order.begin() + stop);
            const double bsz = static_cast<double>(idx.size());

            Tape tape;
            auto fwd = backbone.forward(tape, result.params, dataset.batch(idx));

            BatchTargets targets;
            targets.scores.reserve(idx.size());
            for (std::size_t i : idx) targets.scores.push_back(dataset.scores[i]);

            Var loss;
            double reg = 0, exp = 0, cls = 0;
            switch (cfg.loss) {
                case LossKind::mse:
                    targets.classes.assign(idx.size(), 0);
                    targets.class_weights = {1.0};
                    loss = mse_loss(tape, fwd.scores, targets);
                    break;
                case LossKind::l1:
                    targets.classes.assign(idx.size(), 0);
                    targets.class_weights = {1.0};
                    loss = l1_regression_loss(tape, fwd.scores, targets);
                    break;
                case LossKind::smooth_l1:
                    targets.classes.assign(idx.size(), 0);
                    targets.class_weights = {1.0};
                    loss = smooth_l1_loss(tape, fwd.scores, targets,
                                          cfg.smooth_l1_beta);
                    break;
                case LossKind::huber:
                    targets.classes.assign(idx.size(), 0);
                    targets.class_weights = {1.0};
                    loss = huber_variant_loss(tape, fwd.scores, targets,
                                              cfg.huber_delta);
                    break;
                case LossKind::combo: {
                    targets.classes.reserve(idx.size());
                    for (std::size_t i : idx) targets.classes.push_back(labels[i]);
                    targets.class_weights = result.class_weights.weights;
                    auto terms =
                        combo_loss(tape, fwd.scores, fwd.logits, targets, combo);
                    loss = terms.total;
                    reg = tape.value(terms.reg).item();
                    exp = tape.value(terms.exp).item();
                    cls = tape.value(terms.cls).item();
                    break;
                }
            }

            const double loss_value = tape.value(loss).item();
            if (!std::isfinite(loss_value))
                throw NumericError("training diverged: loss " +
                                   std::to_string(loss_value) + " at epoch " +
                                   std::to_string(epoch) + ", batch offset " +
                                   std::to_string(start));
            loss_sum += loss_value * bsz;
            reg_sum += reg * bsz;
            exp_sum += exp * bsz;
            cls_sum += cls * bsz;

            tape.backward(loss);
            for (std::size_t p = 0; p < fwd.params.size(); ++p)
                grads[p] = tape.grad(fwd.params[p]);
            try {
                sgd_step(result.params, grads, state, lr, cfg.momentum,
                         cfg.weight_decay);
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + " (loss " +
                                   std::to_string(loss_value) + ", epoch " +
                                   std::to_string(epoch) + ", batch offset " +
                                   std::to_string(start) + ")");
            }
        }

        const double n = static_cast<double>(dataset.size());
        result.history.push_back({epoch, lr, loss_sum / n, reg_sum / n, exp_sum / n,
                                  cls_sum / n});
    }

    std::vector<double> predicted = predict_scores(backbone, result.params, dataset);
    result.final_train = compute_metrics(predicted, dataset.scores);
    return result;
}

// ---------------------------------------------------------------------------
// Parallel job helper: COMBOLAB_THREADS caps fan-out (default sequential).
// Jobs are independent and self-seeded, so results do not depend on the
// interleaving.
// ---------------------------------------------------------------------------

inline std::size_t job_parallelism() {
    if (const char* env = std::getenv("COMBOLAB_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && v > 0) return static_cast<std::size_t>(v);
    }
    return 1;
}

inline void run_jobs(std::size_t count, const std::function<void(std::size_t)>& job) {
    const std::size_t threads = std::min(count, job_parallelism());
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) job(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(count);
    for (std::size_t t = 0; t < threads; ++t)
        pool.emplace_back([&, t] {
            for (std::size_t i = t; i < count; i += threads) {
                try {
                    job(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    for (std::thread& th : pool) th.join();
    for (const std::exception_ptr& e : errors)
        if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Cross validation and the loss-comparison harness
// ---------------------------------------------------------------------------

struct FoldResult {
    Metrics metrics;
    std::vector<EpochRecord> history;
    ClassWeights class_weights;
};

struct CvResult {
    MetricsReport report;               // headline = mean over folds
    std::vector<FoldResult> folds;
    FoldPlan plan;
};

inline CvResult cross_validate(const Dataset& dataset, std::size_t k,
                               const DiscretizationSpec& disc,
                               const BackboneConfig& backbone_cfg,
                               const TrainConfig& cfg,
                               std::uint64_t fold_seed = 0) {
    dataset.validate();
    if (k < 2)
        throw ContractError("cross_validate: k must be >= 2, got " +
                            std::to_string(k));
    if (k > dataset.size())
        throw ContractError("cross_validate: k exceeds the sample count");

    CvResult result;
    result.plan = kfold(dataset.size(), k, fold_seed);
    result.folds.resize(k);

    run_jobs(k, [&](std::size_t fold) {
        auto train_idx = result.plan.complement_indices(fold);
        auto test_idx = result.plan.fold_indices(fold);
        Dataset train_ds = dataset.subset(train_idx);
        Dataset test_ds = dataset.subset(test_idx);
        // class weights are recomputed inside train_model from the
        // training complement only
        TrainResult tr = train_model(train_ds, disc, backbone_cfg, cfg);
        Backbone backbone = fitted_backbone(dataset, disc, backbone_cfg);
        std::vector<double> predicted =
            predict_scores(backbone, tr.params, test_ds);
        FoldResult fr;
        fr.metrics = compute_metrics(predicted, test_ds.scores);
        fr.history = std::move(tr.history);
        fr.class_weights = std::move(tr.class_weights);
        result.folds[fold] = std::move(fr);
    });

    MetricsReport& rep = result.report;
    rep.per_fold.reserve(k);
    double mae = 0, rmse = 0, pc = 0;
    bool pc_defined = true;
    for (const FoldResult& fr : result.folds) {
        rep.per_fold.push_back(fr.metrics);
        mae += fr.metrics.mae;
        rmse += fr.metrics.rmse;
        pc += fr.metrics.pc;
        pc_defined = pc_defined && fr.metrics.pc_defined;
    }
    rep.mae = mae / static_cast<double>(k);
    rep.rmse = rmse / static_cast<double>(k);
    rep.pc = pc / static_cast<double>(k);
    rep.pc_defined = pc_defined;
    return result;
}

struct CompareRow {
    LossKind loss;
    Metrics test;
    double first_epoch_loss = 0.0;
    double final_epoch_loss = 0.0;
};

// Trains every requested loss from the same init on the same 60/40 split
// and evaluates on the held-out side. One row per loss.
inline std::vector<CompareRow> compare_losses(const Dataset& dataset,
                                              const std::vector<LossKind>& losses,
                                              const DiscretizationSpec& disc,
                                              const BackboneConfig& backbone_cfg,
                                              const TrainConfig& cfg,
                                              std::uint64_t split_seed = 0) {
    dataset.validate();
    if (losses.empty()) throw ContractError("compare_losses: no losses given");
    auto [train_idx, test_idx] = split_60_40(dataset.size(), split_seed);
    Dataset train_ds = dataset.subset(train_idx);
    Dataset test_ds = dataset.subset(test_idx);

    std::vector<CompareRow> rows(losses.size());
    run_jobs(losses.size(), [&](std::size_t i) {
        TrainConfig job_cfg = cfg;        // identical seeds: identical init
        job_cfg.loss = losses[i];
        TrainResult tr = train_model(train_ds, disc, backbone_cfg, job_cfg);
        Backbone backbone = fitted_backbone(train_ds, disc, backbone_cfg);
        std::vector<double> predicted = predict_scores(backbone, tr.params, test_ds);
        CompareRow row;
        row.loss = losses[i];
        row.test = compute_metrics(predicted, test_ds.scores);
        if (!tr.history.empty()) {
            row.first_epoch_loss = tr.history.front().loss;
            row.final_epoch_loss = tr.history.back().loss;
        }
        rows[i] = std::move(row);
    });
    return rows;
}

}  // namespace combolab
