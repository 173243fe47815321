#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "combolab/gradcheck.hpp"
#include "combolab/losses.hpp"
#include "combolab/model.hpp"
#include "combolab/rng.hpp"

namespace combolab {

struct ComponentCheck {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t points = 0;  // perturbed coordinates compared
};

namespace detail {

inline Tensor sample_tensor(Shape shape, Rng& rng, double lo = -2.0,
                            double hi = 2.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// magnitudes in [margin, hi]: keeps abs/relu arguments off their kink
inline Tensor sample_nonkink(Shape shape, Rng& rng, double margin = 1e-2,
                             double hi = 2.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) {
        const double v = rng.uniform(margin, hi);
        t[i] = rng.uniform() < 0.5 ? -v : v;
    }
    return t;
}

inline ComponentCheck run_component(const std::string& name, const GraphFn& f,
                                    const Shape& shape, Rng& rng, bool nonkink,
                                    std::size_t min_points = 100) {
    ComponentCheck chk;
    chk.name = name;
    while (chk.points < min_points) {
        Tensor p = nonkink ? sample_nonkink(shape, rng) : sample_tensor(shape, rng);
        chk.max_rel_err = std::max(chk.max_rel_err, grad_check(f, p));
        chk.points += p.numel();
    }
    return chk;
}

}  // namespace detail

// Checks the analytic gradient of every primitive, every loss and the
// combined objective end-to-end through the SE backbone against central
// finite differences, each at >= 100 seeded non-kink points.
inline std::vector<ComponentCheck> gradcheck_suite(std::uint64_t seed) {
    using detail::run_component;
    Rng rng(Rng::mix(seed, 777));
    std::vector<ComponentCheck> out;

    out.push_back(run_component(
        "add/sub/mul",
        [](Tape& t, Var x) {
            return t.reduce_sum(t.mul(t.sub(t.add(x, x), t.mul(x, 0.5)), x));
        },
        Shape{5, 4}, rng, false));
    out.push_back(run_component(
        "abs", [](Tape& t, Var x) { return t.reduce_mean(t.abs(x)); }, Shape{5, 4},
        rng, true));
    out.push_back(run_component(
        "relu", [](Tape& t, Var x) { return t.reduce_mean(t.relu(x)); },
        Shape{5, 4}, rng, true));
    out.push_back(run_component(
        "sigmoid", [](Tape& t, Var x) { return t.reduce_mean(t.sigmoid(x)); },
        Shape{5, 4}, rng, false));
    out.push_back(run_component(
        "log",
        [](Tape& t, Var x) {
            return t.reduce_mean(t.log(t.clamp_min(t.abs(x), 1e-12)));
        },
        Shape{5, 4}, rng, true));
    out.push_back(run_component(
        "matmul",
        [](Tape& t, Var x) {
            Var a = t.slice(x, 0, Shape{4, 5});
            Var b = t.slice(x, 20, Shape{5, 3});
            return t.reduce_sum(t.square(t.matmul(a, b)));
        },
        Shape{35}, rng, false));
    out.push_back(run_component(
        "softmax",
        [](Tape& t, Var x) { return t.reduce_mean(t.square(t.softmax(x))); },
        Shape{5, 5}, rng, false));
    out.push_back(run_component(
        "global_avg_pool",
        [](Tape& t, Var x) {
            return t.reduce_mean(t.square(t.global_avg_pool(x)));
        },
        Shape{4, 3, 3}, rng, false));
    out.push_back(run_component(
        "reduce_mean/sum",
        [](Tape& t, Var x) {
            return t.add(t.reduce_mean(t.square(x)), t.mul(t.reduce_sum(x), 0.25));
        },
        Shape{6, 4}, rng, false));

    // SE pieces: [z(6), w1(2x6), w2(6x2)]
    out.push_back(run_component(
        "se_excite",
        [](Tape& t, Var x) {
            Var z = t.slice(x, 0, Shape{6});
            Var w1 = t.slice(x, 6, Shape{2, 6});
            Var w2 = t.slice(x, 18, Shape{6, 2});
            return t.reduce_mean(t.square(se_excite(t, z, w1, w2)));
        },
        Shape{30}, rng, false));
    out.push_back(run_component(
        "se_block",
        [](Tape& t, Var x) {
            Var u = t.slice(x, 0, Shape{4, 2, 2});
            Var w1 = t.slice(x, 16, Shape{2, 4});
            Var w2 = t.slice(x, 24, Shape{4, 2});
            return t.reduce_mean(t.square(se_block(t, u, w1, w2)));
        },
        Shape{32}, rng, false));

    // losses over [pred(4), logits(4x5)] with fixed targets
    BatchTargets targets;
    targets.scores = {1.3, 2.7, 3.4, 4.2};
    targets.classes = {0, 2, 3, 4};
    targets.class_weights = {1.0, 2.0, 1.25, 1.0, 3.0};
    ComboLossParams combo;
    combo.class_values = {1, 2, 3, 4, 5};

    auto pred_point = [&](Rng& r) {
        // residuals stay off the abs kink and the smooth-l1/huber threshold
        Tensor p(Shape{24});
        for (std::size_t i = 0; i < 4; ++i) {
            double off = r.uniform(0.05, 0.8);
            if (r.uniform() < 0.5) off = -off;
            p[i] = targets.scores[i] + off;
        }
        for (std::size_t i = 4; i < 24; ++i) p[i] = r.uniform(-2.0, 2.0);
        return p;
    };
    auto loss_component = [&](const std::string& name, auto make) {
        ComponentCheck chk;
        chk.name = name;
        while (chk.points < 100) {
            Tensor p = pred_point(rng);
            chk.max_rel_err = std::max(chk.max_rel_err, grad_check(make, p));
            chk.points += p.numel();
        }
        out.push_back(chk);
    };
    loss_component("l1_regression_loss", GraphFn([&](Tape& t, Var x) {
                       return l1_regression_loss(t, t.slice(x, 0, Shape{4}), targets);
                   }));
    loss_component("mse_loss", GraphFn([&](Tape& t, Var x) {
                       return mse_loss(t, t.slice(x, 0, Shape{4}), targets);
                   }));
    loss_component("smooth_l1_loss", GraphFn([&](Tape& t, Var x) {
                       return smooth_l1_loss(t, t.slice(x, 0, Shape{4}), targets, 1.0);
                   }));
    loss_component("huber_variant_loss", GraphFn([&](Tape& t, Var x) {
                       return huber_variant_loss(t, t.slice(x, 0, Shape{4}), targets,
                                                 1.0);
                   }));
    loss_component("weighted_cross_entropy", GraphFn([&](Tape& t, Var x) {
                       return weighted_cross_entropy(t, t.slice(x, 4, Shape{4, 5}),
                                                     targets);
                   }));
    loss_component("expectation_loss", GraphFn([&](Tape& t, Var x) {
                       Var probs = t.softmax(t.slice(x, 4, Shape{4, 5}));
                       return expectation_loss(t, t.slice(x, 0, Shape{4}), probs,
                                               targets, combo);
                   }));
    loss_component("combo_loss", GraphFn([&](Tape& t, Var x) {
                       return combo_loss(t, t.slice(x, 0, Shape{4}),
                                         t.slice(x, 4, Shape{4, 5}), targets, combo)
                           .total;
                   }));

    // the combined objective end-to-end: gradient w.r.t. every backbone
    // parameter, through the SE gate and both heads
    {
        BackboneConfig cfg;
        cfg.input_width = 5;
        cfg.stage_widths = {7, 5};
        cfg.se_after_stage = {true, false};
        cfg.se_reduction = 2;
        cfg.num_classes = 5;
        cfg.seed = Rng::mix(seed, 778);
        Backbone bb(cfg);
        Parameters init = bb.init_params();
        std::vector<Shape> shapes;
        std::size_t total = 0;
        for (const auto& it : init.items) {
            shapes.push_back(it.value.shape());
            total += it.value.numel();
        }
        Rng brng(Rng::mix(seed, 779));
        Tensor batch = detail::sample_tensor(Shape{4, 5}, brng, -1.5, 1.5);
        GraphFn f = [&](Tape& t, Var x) {
            std::vector<Var> vars;
            std::size_t off = 0;
            for (const Shape& s : shapes) {
                vars.push_back(t.slice(x, off, s));
                off += shape_numel(s);
            }
            auto r = bb.forward_with(t, vars, t.leaf(batch));
            return combo_loss(t, r.scores, r.logits, targets, combo).total;
        };
        ComponentCheck chk;
        chk.name = "combo_loss end-to-end";
        while (chk.points < std::max<std::size_t>(100, total)) {
            Tensor p(Shape{total});
            std::size_t off = 0;
            for (const auto& it : init.items) {
                for (std::size_t i = 0; i < it.value.numel(); ++i)
                    p[off + i] = it.value[i] + 0.05 * brng.uniform(-1, 1);
                off += it.value.numel();
            }
            chk.max_rel_err = std::max(chk.max_rel_err, grad_check(f, p));
            chk.points += total;
        }
        out.push_back(chk);
    }

    return out;
}

}  // namespace combolab
