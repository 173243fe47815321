#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <combolab/gradcheck.hpp>
#include <combolab/losses.hpp>
#include <combolab/rng.hpp>

#include "fd_oracle.hpp"

using namespace combolab;

namespace {

BatchTargets simple_targets(std::vector<double> scores, std::vector<int> classes,
                            std::vector<double> weights) {
    BatchTargets t;
    t.scores = std::move(scores);
    t.classes = std::move(classes);
    t.class_weights = std::move(weights);
    return t;
}

BatchTargets random_targets(std::size_t n, std::size_t c, Rng& rng) {
    BatchTargets t;
    for (std::size_t i = 0; i < n; ++i) {
        t.scores.push_back(rng.uniform(1.0, 5.0));
        t.classes.push_back(static_cast<int>(rng.below(c)));
    }
    for (std::size_t j = 0; j < c; ++j) t.class_weights.push_back(rng.uniform(0.5, 3.0));
    return t;
}

double eval_l1(const std::vector<double>& pred, const std::vector<double>& truth) {
    // naive loop oracle
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) sum += std::fabs(pred[i] - truth[i]);
    return sum / static_cast<double>(pred.size());
}

double eval_mse(const std::vector<double>& pred, const std::vector<double>& truth) {
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        sum += (pred[i] - truth[i]) * (pred[i] - truth[i]);
    return sum / static_cast<double>(pred.size());
}

}  // namespace

TEST_CASE("l1 regression loss") {
    Tape tape;
    SUBCASE("mean of unit residuals") {
        auto t = simple_targets({3, 3}, {0, 0}, {1.0});
        Var pred = tape.leaf(Tensor::from_vector({2, 4}));
        CHECK(tape.value(l1_regression_loss(tape, pred, t)).item() == 1.0);
    }
    SUBCASE("zero at perfection") {
        auto t = simple_targets({1.5, 2.5, 4.0}, {0, 0, 0}, {1.0});
        Var pred = tape.leaf(Tensor::from_vector({1.5, 2.5, 4.0}));
        CHECK(tape.value(l1_regression_loss(tape, pred, t)).item() == 0.0);
    }
    SUBCASE("length mismatch rejected") {
        auto t = simple_targets({1, 2}, {0, 0}, {1.0});
        Var pred = tape.leaf(Tensor::from_vector({1, 2, 3}));
        CHECK_THROWS_AS(l1_regression_loss(tape, pred, t), ContractError);
    }
    SUBCASE("random batch matches the loop oracle") {
        Rng rng(3);
        std::vector<double> pred, truth;
        for (int i = 0; i < 16; ++i) {
            pred.push_back(rng.uniform(0, 6));
            truth.push_back(rng.uniform(0, 6));
        }
        auto t = simple_targets(truth, std::vector<int>(16, 0), {1.0});
        Var vp = tape.leaf(Tensor::from_vector(pred));
        double got = tape.value(l1_regression_loss(tape, vp, t)).item();
        CHECK(std::fabs(got - eval_l1(pred, truth)) < 1e-12);
    }
}

TEST_CASE("mse loss") {
    Tape tape;
    auto t = simple_targets({3, 3}, {0, 0}, {1.0});
    Var pred = tape.leaf(Tensor::from_vector({2, 4}));
    CHECK(tape.value(mse_loss(tape, pred, t)).item() == 1.0);

    Var same = tape.leaf(Tensor::from_vector({3, 3}));
    CHECK(tape.value(mse_loss(tape, same, t)).item() == 0.0);

    Rng rng(7);
    std::vector<double> p, s;
    for (int i = 0; i < 16; ++i) {
        p.push_back(rng.uniform(0, 6));
        s.push_back(rng.uniform(0, 6));
    }
    auto rt = simple_targets(s, std::vector<int>(16, 0), {1.0});
    double got = tape.value(mse_loss(tape, tape.leaf(Tensor::from_vector(p)), rt)).item();
    CHECK(std::fabs(got - eval_mse(p, s)) < 1e-12);
}

TEST_CASE("smooth l1 loss") {
    Tape tape;
    auto at = [&](double d, double beta) {
        auto t = simple_targets({0.0}, {0}, {1.0});
        Var pred = tape.leaf(Tensor::from_vector({d}));
        return tape.value(smooth_l1_loss(tape, pred, t, beta)).item();
    };
    CHECK(at(0.5, 1.0) == doctest::Approx(0.125).epsilon(1e-14));  // quadratic branch
    CHECK(at(2.0, 1.0) == doctest::Approx(1.5).epsilon(1e-14));    // linear branch
    CHECK(at(0.0, 1.0) == 0.0);                                    // perfection
    // both branches meet at |d| = beta with value 0.5 * beta
    for (double beta : {0.5, 1.0, 2.0}) {
        CHECK(at(beta, beta) == doctest::Approx(0.5 * beta).epsilon(1e-12));
        CHECK(at(std::nextafter(beta, 10.0), beta) ==
              doctest::Approx(0.5 * beta).epsilon(1e-9));
    }
}

TEST_CASE("huber variant loss") {
    Tape tape;
    auto at = [&](double d, double delta) {
        auto t = simple_targets({0.0}, {0}, {1.0});
        Var pred = tape.leaf(Tensor::from_vector({d}));
        return tape.value(huber_variant_loss(tape, pred, t, delta)).item();
    };
    CHECK(at(3.0, 1.0) == doctest::Approx(2.5).epsilon(1e-14));
    CHECK(at(0.0, 1.0) == 0.0);
    // large delta reduces to the quadratic regime (MSE/2) on small residuals
    for (double d : {0.1, 0.5, 1.5}) {
        CHECK(at(d, 1e6) == doctest::Approx(0.5 * d * d).epsilon(1e-12));
    }
    SUBCASE("gradient is continuous across the threshold") {
        const double delta = 1.0;
        auto t = simple_targets({0.0}, {0}, {1.0});
        auto slope_at = [&](double d) {
            Tape tp;
            Var pred = tp.leaf(Tensor::from_vector({d}));
            tp.backward(huber_variant_loss(tp, pred, t, delta));
            return tp.grad(pred)[0];
        };
        // finite-difference scan across |d| = delta
        double below = slope_at(delta - 1e-7);
        double above = slope_at(delta + 1e-7);
        CHECK(std::fabs(below - above) < 1e-6);
        CHECK(below == doctest::Approx(delta).epsilon(1e-6));
    }
}

TEST_CASE("weighted cross entropy") {
    SUBCASE("uniform softmax two classes gives ln 2") {
        Tape tape;
        auto t = simple_targets({1.0}, {0}, {1.0, 1.0});
        Var logits = tape.leaf(Tensor::matrix(1, 2, {0, 0}));
        double got = tape.value(weighted_cross_entropy(tape, logits, t)).item();
        CHECK(std::fabs(got - std::log(2.0)) < 1e-12);
    }
    SUBCASE("weights scale the loss linearly") {
        Tape tape;
        auto t = simple_targets({1.0}, {0}, {2.0, 1.0});
        Var logits = tape.leaf(Tensor::matrix(1, 2, {0, 0}));
        double got = tape.value(weighted_cross_entropy(tape, logits, t)).item();
        CHECK(std::fabs(got - 2.0 * std::log(2.0)) < 1e-12);
        CHECK(got == doctest::Approx(1.386294).epsilon(1e-6));
    }
    SUBCASE("near-one-hot correct prediction drives loss under 1e-6") {
        Tape tape;
        auto t = simple_targets({1.0}, {1}, {1.0, 1.0});
        Var logits = tape.leaf(Tensor::matrix(1, 2, {-20, 20}));
        CHECK(tape.value(weighted_cross_entropy(tape, logits, t)).item() < 1e-6);
    }
    SUBCASE("class index out of range rejected") {
        Tape tape;
        auto t = simple_targets({1.0}, {2}, {1.0, 1.0});
        Var logits = tape.leaf(Tensor::matrix(1, 2, {0, 0}));
        CHECK_THROWS_AS(weighted_cross_entropy(tape, logits, t), ContractError);
    }
    SUBCASE("scaling all weights by k scales the loss by exactly k") {
        Rng rng(13);
        auto t = random_targets(8, 4, rng);
        Tensor logits(Shape{8, 4});
        for (std::size_t i = 0; i < logits.numel(); ++i) logits[i] = rng.uniform(-3, 3);
        const double k = 3.5;
        auto scaled = t;
        for (double& w : scaled.class_weights) w *= k;
        Tape tape;
        double base = tape.value(weighted_cross_entropy(tape, tape.leaf(logits), t)).item();
        double big = tape.value(weighted_cross_entropy(tape, tape.leaf(logits), scaled)).item();
        CHECK(std::fabs(big - k * base) < 1e-12 * std::max(1.0, std::fabs(big)));
    }
}

TEST_CASE("expectation score") {
    Tape tape;
    const std::vector<double> values{1, 2, 3, 4, 5};
    SUBCASE("symmetric distribution lands on the middle class value") {
        Var probs = tape.leaf(Tensor::matrix(1, 5, {0.1, 0.2, 0.4, 0.2, 0.1}));
        CHECK(std::fabs(tape.value(expectation_score(tape, probs, values))[0] - 3.0) <
              1e-12);
    }
    SUBCASE("one-hot picks the class value") {
        Var probs = tape.leaf(Tensor::matrix(1, 5, {0, 0, 0, 1, 0}));
        CHECK(tape.value(expectation_score(tape, probs, values))[0] == 4.0);
    }
    SUBCASE("two-point average") {
        Var probs = tape.leaf(Tensor::matrix(1, 5, {0.5, 0.5, 0, 0, 0}));
        CHECK(std::fabs(tape.value(expectation_score(tape, probs, values))[0] - 1.5) <
              1e-12);
    }
    SUBCASE("unnormalized rows rejected") {
        Var probs = tape.leaf(Tensor::matrix(1, 5, {0.5, 0.5, 0.5, 0, 0}));
        CHECK_THROWS_AS(expectation_score(tape, probs, values), ContractError);
    }
    SUBCASE("output stays inside [min, max] of the class values") {
        Rng rng(19);
        for (int trial = 0; trial < 30; ++trial) {
            Tensor logits(Shape{4, 5});
            for (std::size_t i = 0; i < logits.numel(); ++i)
                logits[i] = rng.uniform(-10, 10);
            Tape tp;
            Var probs = tp.softmax(tp.leaf(logits));
            const Tensor& e = tp.value(expectation_score(tp, probs, values));
            for (std::size_t i = 0; i < e.numel(); ++i) {
                CHECK(e[i] >= 1.0);
                CHECK(e[i] <= 5.0);
            }
        }
    }
}

TEST_CASE("expectation loss") {
    ComboLossParams params;
    params.class_values = {1, 2, 3, 4, 5};
    SUBCASE("zero when prediction equals expectation") {
        Tape tape;
        auto t = simple_targets({2.0}, {2}, {1, 1, 1, 1, 1});
        Var probs = tape.leaf(Tensor::matrix(1, 5, {0.5, 0.5, 0, 0, 0}));
        Var pred = tape.leaf(Tensor::from_vector({1.5}));
        CHECK(tape.value(expectation_loss(tape, pred, probs, t, params)).item() == 0.0);
    }
    SUBCASE("one-hot example") {
        Tape tape;
        auto t = simple_targets({3.0}, {2}, {1, 1, 1, 1, 1});
        Var probs = tape.leaf(Tensor::matrix(1, 5, {0, 0, 1, 0, 0}));
        Var pred = tape.leaf(Tensor::from_vector({4.0}));
        CHECK(tape.value(expectation_loss(tape, pred, probs, t, params)).item() == 1.0);
    }
    SUBCASE("groundtruth mode with a perfect one-hot is zero") {
        Tape tape;
        auto t = simple_targets({3.0}, {2}, {1, 1, 1, 1, 1});
        Var probs = tape.leaf(Tensor::matrix(1, 5, {0, 0, 1, 0, 0}));
        Var pred = tape.leaf(Tensor::from_vector({-100.0}));  // ignored in this mode
        CHECK(tape.value(expectation_loss(tape, pred, probs, t, params,
                                          ExpectationMode::groundtruth))
                  .item() == 0.0);
    }
}

TEST_CASE("combo loss") {
    SUBCASE("hand-built batch reproduces the weighted sum") {
        // pred 2 vs truth 3: reg = 1; uniform 2-class softmax: cls = ln 2;
        // expectation (values 1,2) = 1.5, |2 - 1.5| = 0.5
        Tape tape;
        auto t = simple_targets({3.0}, {0}, {1.0, 1.0});
        ComboLossParams params;
        params.class_values = {1.0, 2.0};
        Var pred = tape.leaf(Tensor::from_vector({2.0}));
        Var logits = tape.leaf(Tensor::matrix(1, 2, {0, 0}));
        auto terms = combo_loss(tape, pred, logits, t, params);
        CHECK(std::fabs(tape.value(terms.reg).item() - 1.0) < 1e-12);
        CHECK(std::fabs(tape.value(terms.exp).item() - 0.5) < 1e-12);
        CHECK(std::fabs(tape.value(terms.cls).item() - std::log(2.0)) < 1e-12);
        CHECK(std::fabs(tape.value(terms.total).item() - 3.1931471805599453) < 1e-12);
    }
    SUBCASE("total equals the dot product of weights with parts") {
        Rng rng(23);
        for (int trial = 0; trial < 10; ++trial) {
            auto t = random_targets(6, 5, rng);
            ComboLossParams params;
            params.alpha = rng.uniform(0, 3);
            params.beta = rng.uniform(0, 3);
            params.gamma = rng.uniform(0.1, 3);
            params.class_values = {1, 2, 3, 4, 5};
            Tensor pred(Shape{6}), logits(Shape{6, 5});
            for (std::size_t i = 0; i < 6; ++i) pred[i] = rng.uniform(0, 6);
            for (std::size_t i = 0; i < logits.numel(); ++i)
                logits[i] = rng.uniform(-3, 3);
            Tape tape;
            auto terms = combo_loss(tape, tape.leaf(pred), tape.leaf(logits), t, params);
            double expect = params.alpha * tape.value(terms.reg).item() +
                            params.beta * tape.value(terms.exp).item() +
                            params.gamma * tape.value(terms.cls).item();
            CHECK(std::fabs(tape.value(terms.total).item() - expect) < 1e-12);
        }
    }
    SUBCASE("beta = gamma = 0 reduces to alpha * L1") {
        Tape tape;
        auto t = simple_targets({3.0, 1.0}, {2, 0}, {1, 1, 1, 1, 1});
        ComboLossParams params;
        params.alpha = 2.0;
        params.beta = 0.0;
        params.gamma = 0.0;
        params.class_values = {1, 2, 3, 4, 5};
        Var pred = tape.leaf(Tensor::from_vector({2.0, 2.0}));
        Var logits = tape.leaf(Tensor(Shape{2, 5}));
        auto terms = combo_loss(tape, pred, logits, t, params);
        double l1 = tape.value(l1_regression_loss(tape, pred, t)).item();
        CHECK(tape.value(terms.total).item() == doctest::Approx(2.0 * l1).epsilon(1e-14));
    }
    SUBCASE("all-zero combo weights rejected") {
        ComboLossParams params;
        params.alpha = params.beta = params.gamma = 0.0;
        CHECK_THROWS_AS(params.validate(), ContractError);
    }
}

TEST_CASE("combo loss gradient matches central differences on a 4x5 batch") {
    Rng rng(29);
    BatchTargets t;
    ComboLossParams params;
    params.class_values = {1, 2, 3, 4, 5};
    for (int i = 0; i < 4; ++i) {
        t.scores.push_back(rng.uniform(1.2, 4.8));
        t.classes.push_back(static_cast<int>(rng.below(5)));
    }
    t.class_weights = {1.0, 2.0, 1.5, 1.0, 3.0};

    // flatten (pred[4], logits[4x5]) into one point so every input is checked
    GraphFn f = [&](Tape& tape, Var x) {
        Var pred = tape.slice(x, 0, Shape{4});
        Var logits = tape.slice(x, 4, Shape{4, 5});
        return combo_loss(tape, pred, logits, t, params).total;
    };
    double worst = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
        Tensor point(Shape{24});
        for (std::size_t i = 0; i < 4; ++i) {
            // keep |pred - s| and |pred - E| away from the abs kink
            double offset = rng.uniform(0.2, 1.5);
            point[i] = t.scores[i] + (rng.uniform() < 0.5 ? -offset : offset);
        }
        for (std::size_t i = 4; i < 24; ++i) point[i] = rng.uniform(-2, 2);
        worst = std::max(worst, grad_check(f, point));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("loss properties") {
    Rng rng(31);
    SUBCASE("non-negativity for all finite inputs") {
        for (int trial = 0; trial < 20; ++trial) {
            auto t = random_targets(5, 4, rng);
            Tensor pred(Shape{5}), logits(Shape{5, 4});
            for (std::size_t i = 0; i < 5; ++i) pred[i] = rng.uniform(-10, 10);
            for (std::size_t i = 0; i < logits.numel(); ++i)
                logits[i] = rng.uniform(-10, 10);
            ComboLossParams params;
            params.class_values = {1, 2, 3, 4};
            Tape tape;
            Var vp = tape.leaf(pred);
            Var vl = tape.leaf(logits);
            CHECK(tape.value(l1_regression_loss(tape, vp, t)).item() >= 0.0);
            CHECK(tape.value(mse_loss(tape, vp, t)).item() >= 0.0);
            CHECK(tape.value(smooth_l1_loss(tape, vp, t)).item() >= 0.0);
            CHECK(tape.value(huber_variant_loss(tape, vp, t, 1.0)).item() >= 0.0);
            CHECK(tape.value(weighted_cross_entropy(tape, vl, t)).item() >= 0.0);
            auto terms = combo_loss(tape, vp, vl, t, params);
            CHECK(tape.value(terms.total).item() >= 0.0);
        }
    }
    SUBCASE("permutation invariance over the batch axis") {
        auto t = random_targets(8, 4, rng);
        Tensor pred(Shape{8}), logits(Shape{8, 4});
        for (std::size_t i = 0; i < 8; ++i) pred[i] = rng.uniform(0, 6);
        for (std::size_t i = 0; i < logits.numel(); ++i) logits[i] = rng.uniform(-3, 3);

        std::vector<std::size_t> perm{3, 1, 7, 0, 5, 2, 6, 4};
        BatchTargets pt;
        pt.class_weights = t.class_weights;
        Tensor ppred(Shape{8}), plogits(Shape{8, 4});
        for (std::size_t i = 0; i < 8; ++i) {
            pt.scores.push_back(t.scores[perm[i]]);
            pt.classes.push_back(t.classes[perm[i]]);
            ppred[i] = pred[perm[i]];
            for (std::size_t j = 0; j < 4; ++j) plogits.at(i, j) = logits.at(perm[i], j);
        }
        ComboLossParams params;
        params.class_values = {1, 2, 3, 4};
        Tape a, b;
        auto ta = combo_loss(a, a.leaf(pred), a.leaf(logits), t, params);
        auto tb = combo_loss(b, b.leaf(ppred), b.leaf(plogits), pt, params);
        CHECK(std::fabs(a.value(ta.total).item() - b.value(tb.total).item()) < 1e-12);
    }
}
