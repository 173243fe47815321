#include <doctest.h>

#include <cmath>
#include <combolab/gradcheck.hpp>
#include <combolab/losses.hpp>
#include <combolab/model.hpp>
#include <combolab/rng.hpp>
#include <cstdio>
#include <filesystem>

using namespace combolab;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.5, double hi = 1.5) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

std::string temp_path(const char* stem) {
    return (std::filesystem::temp_directory_path() /
            (std::string("combolab_test_") + stem))
        .string();
}

}  // namespace

TEST_CASE("se_squeeze") {
    SUBCASE("constant channels pool to their values") {
        Tape tape;
        Tensor u(Shape{3, 2, 2});
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t i = 0; i < 2; ++i)
                for (std::size_t j = 0; j < 2; ++j) u.at(c, i, j) = double(c) + 0.5;
        const Tensor& z = tape.value(se_squeeze(tape, tape.leaf(u)));
        for (std::size_t c = 0; c < 3; ++c) CHECK(z[c] == double(c) + 0.5);
    }
    SUBCASE("1x1 spatial map is the identity on channels") {
        Tape tape;
        Tensor u(Shape{4, 1, 1}, {3, -1, 2, 0.25});
        const Tensor& z = tape.value(se_squeeze(tape, tape.leaf(u)));
        for (std::size_t c = 0; c < 4; ++c) CHECK(z[c] == u[c]);
    }
    SUBCASE("random input matches the naive loop oracle") {
        Rng rng(61);
        Tensor u = random_tensor(Shape{5, 3, 4}, rng);
        Tape tape;
        const Tensor& z = tape.value(se_squeeze(tape, tape.leaf(u)));
        for (std::size_t c = 0; c < 5; ++c) {
            double sum = 0;
            for (std::size_t i = 0; i < 3; ++i)
                for (std::size_t j = 0; j < 4; ++j) sum += u.at(c, i, j);
            CHECK(std::fabs(z[c] - sum / 12.0) < 1e-12);
        }
    }
}

TEST_CASE("se_excite") {
    SUBCASE("zero weights gate everything at 0.5") {
        Tape tape;
        Var z = tape.leaf(Tensor::from_vector({1, -2, 3, 4}));
        Var w1 = tape.leaf(Tensor(Shape{2, 4}));
        Var w2 = tape.leaf(Tensor(Shape{4, 2}));
        const Tensor& s = tape.value(se_excite(tape, z, w1, w2));
        for (std::size_t c = 0; c < 4; ++c) CHECK(s[c] == 0.5);
    }
    SUBCASE("zero W1 rows give the same 0.5 gate regardless of W2") {
        Rng rng(68);
        Tape tape;
        Var z = tape.leaf(random_tensor(Shape{4}, rng, -4, 4));
        Var w1 = tape.leaf(Tensor(Shape{2, 4}));  // relu(0) = 0 into any W2
        Var w2 = tape.leaf(random_tensor(Shape{4, 2}, rng));
        const Tensor& s = tape.value(se_excite(tape, z, w1, w2));
        for (std::size_t c = 0; c < 4; ++c) CHECK(s[c] == 0.5);
    }
    SUBCASE("shape mismatches rejected") {
        Tape tape;
        Var z = tape.leaf(Tensor(Shape{4}));
        Var bad1 = tape.leaf(Tensor(Shape{2, 3}));
        Var w2 = tape.leaf(Tensor(Shape{4, 2}));
        CHECK_THROWS_AS(se_excite(tape, z, bad1, w2), ShapeError);
        Var w1 = tape.leaf(Tensor(Shape{2, 4}));
        Var bad2 = tape.leaf(Tensor(Shape{3, 2}));
        CHECK_THROWS_AS(se_excite(tape, z, w1, bad2), ShapeError);
    }
    SUBCASE("every gate lies strictly inside (0, 1)") {
        Rng rng(67);
        for (int trial = 0; trial < 20; ++trial) {
            Tape tape;
            Var z = tape.leaf(random_tensor(Shape{6}, rng, -5, 5));
            Var w1 = tape.leaf(random_tensor(Shape{3, 6}, rng));
            Var w2 = tape.leaf(random_tensor(Shape{6, 3}, rng));
            const Tensor& s = tape.value(se_excite(tape, z, w1, w2));
            for (std::size_t c = 0; c < 6; ++c) {
                CHECK(s[c] > 0.0);
                CHECK(s[c] < 1.0);
            }
        }
    }
    SUBCASE("gradient through the block matches central differences") {
        Rng rng(71);
        // flat point = [z(4), w1(2x4), w2(4x2)]
        GraphFn f = [](Tape& t, Var flat) {
            Var z = t.slice(flat, 0, Shape{4});
            Var w1 = t.slice(flat, 4, Shape{2, 4});
            Var w2 = t.slice(flat, 12, Shape{4, 2});
            return t.reduce_mean(t.square(se_excite(t, z, w1, w2)));
        };
        double worst = 0.0;
        for (int trial = 0; trial < 8; ++trial)
            worst = std::max(worst, grad_check(f, random_tensor(Shape{20}, rng)));
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("se_rescale") {
    Rng rng(73);
    Tensor u = random_tensor(Shape{3, 2, 4}, rng);
    SUBCASE("unit gates are the bitwise identity") {
        Tape tape;
        Var out = se_rescale(tape, tape.leaf(u), tape.leaf(Tensor::ones(Shape{3})));
        CHECK(tape.value(out) == u);
    }
    SUBCASE("half gates halve the input") {
        Tape tape;
        Var out =
            se_rescale(tape, tape.leaf(u), tape.leaf(Tensor::full(Shape{3}, 0.5)));
        for (std::size_t i = 0; i < u.numel(); ++i)
            CHECK(tape.value(out)[i] == 0.5 * u[i]);
    }
    SUBCASE("random case matches the loop oracle") {
        Tensor s = random_tensor(Shape{3}, rng, 0.1, 0.9);
        Tape tape;
        Var out = se_rescale(tape, tape.leaf(u), tape.leaf(s));
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t i = 0; i < 2; ++i)
                for (std::size_t j = 0; j < 4; ++j)
                    CHECK(std::fabs(tape.value(out).at(c, i, j) -
                                    s[c] * u.at(c, i, j)) < 1e-12);
    }
    SUBCASE("sigmoid gates never grow a channel") {
        Tape tape;
        Var z = se_squeeze(tape, tape.leaf(u));
        Var w1 = tape.leaf(random_tensor(Shape{2, 3}, rng));
        Var w2 = tape.leaf(random_tensor(Shape{3, 2}, rng));
        Var out = se_rescale(tape, tape.leaf(u), se_excite(tape, z, w1, w2));
        for (std::size_t c = 0; c < 3; ++c) {
            double nin = 0, nout = 0;
            for (std::size_t i = 0; i < 2; ++i)
                for (std::size_t j = 0; j < 4; ++j) {
                    nin += u.at(c, i, j) * u.at(c, i, j);
                    double v = tape.value(out).at(c, i, j);
                    nout += v * v;
                }
            CHECK(nout <= nin);
        }
    }
}

TEST_CASE("backbone forward shapes and init") {
    BackboneConfig cfg;
    cfg.input_width = 8;
    cfg.stage_widths = {12, 6};
    cfg.se_after_stage = {true, false};
    cfg.se_reduction = 4;
    cfg.num_classes = 5;
    cfg.seed = 9;
    Backbone bb(cfg);
    Parameters params = bb.init_params();

    SUBCASE("two-sample batch gives [2] scores and [2x5] logits") {
        Rng rng(79);
        Tape tape;
        auto r = bb.forward(tape, params, random_tensor(Shape{2, 8}, rng));
        CHECK(tape.value(r.scores).shape() == Shape{2});
        CHECK(tape.value(r.logits).shape() == Shape{2, 5});
    }
    SUBCASE("zero input with zeroed heads gives a uniform softmax") {
        Parameters zeroed = params;
        for (auto name : {"head.cls.weight", "head.cls.bias"}) {
            Tensor* t = zeroed.find(name);
            REQUIRE(t != nullptr);
            for (std::size_t i = 0; i < t->numel(); ++i) (*t)[i] = 0.0;
        }
        Tape tape;
        auto r = bb.forward(tape, zeroed, Tensor(Shape{3, 8}));
        Var probs = tape.softmax(r.logits);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 5; ++j)
                CHECK(tape.value(probs).at(i, j) == doctest::Approx(0.2).epsilon(1e-12));
    }
    SUBCASE("deterministic given the seed") {
        Parameters again = Backbone(cfg).init_params();
        REQUIRE(again.items.size() == params.items.size());
        for (std::size_t i = 0; i < params.items.size(); ++i)
            CHECK(again.items[i].value == params.items[i].value);
        BackboneConfig other = cfg;
        other.seed = 10;
        CHECK_FALSE(Backbone(other).init_params().items[0].value ==
                    params.items[0].value);
    }
    SUBCASE("biases start at zero") {
        const Tensor* b = params.find("stage0.bias");
        REQUIRE(b != nullptr);
        for (std::size_t i = 0; i < b->numel(); ++i) CHECK((*b)[i] == 0.0);
    }
    SUBCASE("invalid configs rejected") {
        auto build = [](const BackboneConfig& c) { Backbone b(c); };
        BackboneConfig bad = cfg;
        bad.se_after_stage = {true};
        CHECK_THROWS_AS(build(bad), ContractError);
        bad = cfg;
        bad.num_classes = 1;
        CHECK_THROWS_AS(build(bad), ContractError);
        bad = cfg;
        bad.stage_widths.clear();
        CHECK_THROWS_AS(build(bad), ContractError);
    }
    SUBCASE("batch width mismatch rejected") {
        Tape tape;
        CHECK_THROWS_AS(bb.forward(tape, params, Tensor(Shape{2, 9})), ShapeError);
    }
}

TEST_CASE("both heads read the same trunk") {
    BackboneConfig cfg;
    cfg.input_width = 6;
    cfg.stage_widths = {8, 4};
    cfg.se_after_stage = {false, false};
    cfg.seed = 4;
    Backbone bb(cfg);
    Parameters params = bb.init_params();
    Rng rng(83);
    Tensor batch = random_tensor(Shape{2, 6}, rng);

    Tape base;
    auto r0 = bb.forward(base, params, batch);

    Parameters nudged = params;
    (*nudged.find("stage0.weight"))[3] += 0.25;
    Tape tape;
    auto r1 = bb.forward(tape, nudged, batch);

    bool scores_moved = false, logits_moved = false;
    for (std::size_t i = 0; i < 2; ++i)
        if (tape.value(r1.scores)[i] != base.value(r0.scores)[i]) scores_moved = true;
    for (std::size_t i = 0; i < 10; ++i)
        if (tape.value(r1.logits)[i] != base.value(r0.logits)[i]) logits_moved = true;
    CHECK(scores_moved);
    CHECK(logits_moved);
}

TEST_CASE("combo loss through the backbone matches central differences") {
    BackboneConfig cfg;
    cfg.input_width = 4;
    cfg.stage_widths = {6, 4};
    cfg.se_after_stage = {true, false};
    cfg.se_reduction = 2;
    cfg.num_classes = 3;
    cfg.seed = 21;
    Backbone bb(cfg);
    Parameters init = bb.init_params();

    Rng rng(89);
    Tensor batch = random_tensor(Shape{3, 4}, rng);
    BatchTargets targets;
    targets.scores = {1.4, 2.6, 2.1};
    targets.classes = {0, 2, 1};
    targets.class_weights = {1.0, 2.0, 1.5};
    ComboLossParams cl;
    cl.class_values = {1, 2, 3};

    // all parameters flattened into a single point
    const std::size_t total = init.total_count();
    Tensor flat(Shape{total});
    std::vector<Shape> shapes;
    {
        std::size_t off = 0;
        for (const auto& it : init.items) {
            shapes.push_back(it.value.shape());
            for (std::size_t i = 0; i < it.value.numel(); ++i)
                flat[off + i] = it.value[i];
            off += it.value.numel();
        }
    }
    GraphFn f = [&](Tape& t, Var x) {
        std::vector<Var> vars;
        std::size_t off = 0;
        for (const Shape& s : shapes) {
            vars.push_back(t.slice(x, off, s));
            off += shape_numel(s);
        }
        auto r = bb.forward_with(t, vars, t.leaf(batch));
        return combo_loss(t, r.scores, r.logits, targets, cl).total;
    };
    CHECK(grad_check(f, flat) < 1e-4);
}

TEST_CASE("dual head overhead stays under 0.05% at the default config") {
    BackboneConfig cfg;  // defaults
    cfg.input_width = 128;
    Backbone bb(cfg);
    const auto dual = static_cast<double>(bb.parameter_count(true));
    const auto single = static_cast<double>(bb.parameter_count(false));
    CHECK(dual > single);
    CHECK((dual - single) / single < 0.0005);
}

TEST_CASE("checkpoint round trip") {
    BackboneConfig cfg;
    cfg.input_width = 5;
    cfg.stage_widths = {7, 3};
    cfg.se_after_stage = {false, true};
    cfg.se_reduction = 2;
    cfg.num_classes = 4;
    cfg.seed = 33;
    Backbone bb(cfg);
    Parameters params = bb.init_params();
    const std::string path = temp_path("ckpt.bin");

    save_checkpoint(path, params, cfg);
    Checkpoint ck = load_checkpoint(path);
    CHECK(ck.seed == 33);
    CHECK(ck.config_echo == cfg.to_kv());
    REQUIRE(ck.params.items.size() == params.items.size());
    for (std::size_t i = 0; i < params.items.size(); ++i) {
        CHECK(ck.params.items[i].name == params.items[i].name);
        CHECK(ck.params.items[i].value == params.items[i].value);  // bitwise
    }

    SUBCASE("bad magic rejected") {
        const std::string bad = temp_path("ckpt_bad.bin");
        {
            std::ofstream f(bad, std::ios::binary);
            f << "NOPE this is not a checkpoint";
        }
        CHECK_THROWS_AS(load_checkpoint(bad), FormatError);
        std::filesystem::remove(bad);
    }
    SUBCASE("truncation reported with a byte offset") {
        const std::string cut = temp_path("ckpt_cut.bin");
        std::filesystem::copy_file(path, cut,
                                   std::filesystem::copy_options::overwrite_existing);
        std::filesystem::resize_file(cut, std::filesystem::file_size(cut) / 2);
        try {
            load_checkpoint(cut);
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(e.offset > 0);
        }
        std::filesystem::remove(cut);
    }
    std::filesystem::remove(path);
}
