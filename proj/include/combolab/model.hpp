#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "combolab/binio.hpp"
#include "combolab/error.hpp"
#include "combolab/rng.hpp"
#include "combolab/tape.hpp"
#include "combolab/tensor.hpp"

namespace combolab {

// ---------------------------------------------------------------------------
// Squeeze-and-excitation block
// ---------------------------------------------------------------------------

struct SEBlockConfig {
    std::size_t channels;
    std::size_t reduction = 16;

    // width of the bottleneck FC pair; floor(C/r), at least 1
    std::size_t hidden_width() const {
        if (channels == 0 || reduction == 0)
            throw ContractError("SE block needs positive channels and reduction");
        return std::max<std::size_t>(1, channels / reduction);
    }
};

// z_c = (1/(H*W)) sum_ij u_c(i,j)
inline Var se_squeeze(Tape& tape, Var u) { return tape.global_avg_pool(u); }

// s = sigmoid(W2 . relu(W1 . z)) with W1 [C/r x C], W2 [C x C/r]; no biases.
inline Var se_excite(Tape& tape, Var z, Var w1, Var w2) {
    std::size_t channels = 0;
    {
        const Tensor& tz = tape.value(z);
        const Tensor& t1 = tape.value(w1);
        const Tensor& t2 = tape.value(w2);
        if (tz.rank() != 1)
            throw ShapeError("se_excite: z must be rank-1, got " +
                             shape_str(tz.shape()));
        channels = tz.extent(0);
        if (t1.rank() != 2 || t1.extent(1) != channels)
            throw ShapeError("se_excite: W1 " + shape_str(t1.shape()) +
                             " does not accept z " + shape_str(tz.shape()));
        if (t2.rank() != 2 || t2.extent(0) != channels ||
            t2.extent(1) != t1.extent(0))
            throw ShapeError("se_excite: W2 " + shape_str(t2.shape()) +
                             " does not match W1 " + shape_str(t1.shape()));
    }
    Var col = tape.reshape(z, Shape{channels, 1});
    Var hidden = tape.relu(tape.matmul(w1, col));
    Var gated = tape.sigmoid(tape.matmul(w2, hidden));
    return tape.reshape(gated, Shape{channels});
}

// x~_c = s_c * u_c
inline Var se_rescale(Tape& tape, Var u, Var s) { return tape.scale_channels(u, s); }

// Full block on a [C x H x W] map.
inline Var se_block(Tape& tape, Var u, Var w1, Var w2) {
    Var z = se_squeeze(tape, u);
    Var s = se_excite(tape, z, w1, w2);
    return se_rescale(tape, u, s);
}

// ---------------------------------------------------------------------------
// Backbone: a stack of fully connected stages with optional SE gating,
// feeding a shared trunk feature into a scalar regression head and a C-way
// classification head.
// ---------------------------------------------------------------------------

struct BackboneConfig {
    std::size_t input_width = 16;
    std::vector<std::size_t> stage_widths{256, 512, 16};
    std::vector<bool> se_after_stage{false, true, false};
    std::size_t se_reduction = 16;
    std::size_t num_classes = 5;
    std::uint64_t seed = 0;

    void validate() const {
        if (input_width == 0) throw ContractError("backbone input width must be > 0");
        if (stage_widths.empty())
            throw ContractError("backbone needs at least one stage");
        for (std::size_t w : stage_widths)
            if (w == 0) throw ContractError("stage widths must be > 0");
        if (se_after_stage.size() != stage_widths.size())
            throw ContractError("se_after_stage must have one flag per stage");
        if (se_reduction == 0) throw ContractError("se reduction must be > 0");
        if (num_classes < 2) throw ContractError("need at least 2 classes");
    }

    std::size_t trunk_width() const { return stage_widths.back(); }

    std::string to_kv() const {
        std::ostringstream os;
        os << "backbone.input_width = " << input_width << "\n";
        os << "backbone.stages = ";
        for (std::size_t i = 0; i < stage_widths.size(); ++i)
            os << (i ? "," : "") << stage_widths[i];
        os << "\n";
        os << "backbone.se = ";
        for (std::size_t i = 0; i < se_after_stage.size(); ++i)
            os << (i ? "," : "") << (se_after_stage[i] ? 1 : 0);
        os << "\n";
        os << "backbone.reduction = " << se_reduction << "\n";
        os << "backbone.num_classes = " << num_classes << "\n";
        os << "backbone.seed = " << seed << "\n";
        return os.str();
    }
};

// Named tensors in a fixed order; the order defines both the checkpoint
// layout and the optimizer state alignment.
struct Parameters {
    struct Item {
        std::string name;
        Tensor value;
    };
    std::vector<Item> items;

    Tensor* find(std::string_view name) {
        for (Item& it : items)
            if (it.name == name) return &it.value;
        return nullptr;
    }

    const Tensor* find(std::string_view name) const {
        for (const Item& it : items)
            if (it.name == name) return &it.value;
        return nullptr;
    }

    std::size_t total_count() const {
        std::size_t n = 0;
        for (const Item& it : items) n += it.value.numel();
        return n;
    }
};

struct ForwardResult {
    Var scores;                // [N]
    Var logits;                // [N x C]
    std::vector<Var> params;   // leaf handles, aligned with Parameters::items
};

class Backbone {
public:
    explicit Backbone(BackboneConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

    const BackboneConfig& config() const { return cfg_; }

    Parameters init_params() const {
        Parameters p;
        std::uint64_t stream = 0;
        std::size_t in = cfg_.input_width;
        for (std::size_t s = 0; s < cfg_.stage_widths.size(); ++s) {
            const std::size_t out = cfg_.stage_widths[s];
            // fan-in scaled init for rectifier stages
            p.items.push_back({"stage" + std::to_string(s) + ".weight",
                               gaussian(Shape{in, out}, std::sqrt(2.0 / double(in)),
                                        stream++)});
            p.items.push_back(
                {"stage" + std::to_string(s) + ".bias", Tensor(Shape{out})});
            if (cfg_.se_after_stage[s]) {
                SEBlockConfig se{out, cfg_.se_reduction};
                const std::size_t hidden = se.hidden_width();
                p.items.push_back({"se" + std::to_string(s) + ".w1",
                                   gaussian(Shape{hidden, out},
                                            std::sqrt(2.0 / double(out)), stream++)});
                p.items.push_back({"se" + std::to_string(s) + ".w2",
                                   gaussian(Shape{out, hidden},
                                            std::sqrt(1.0 / double(hidden)),
                                            stream++)});
            }
            in = out;
        }
        const std::size_t trunk = cfg_.trunk_width();
        p.items.push_back({"head.reg.weight",
                           gaussian(Shape{trunk, 1}, std::sqrt(1.0 / double(trunk)),
                                    stream++)});
        p.items.push_back({"head.reg.bias", Tensor(Shape{1})});
        p.items.push_back({"head.cls.weight",
                           gaussian(Shape{trunk, cfg_.num_classes},
                                    std::sqrt(1.0 / double(trunk)), stream++)});
        p.items.push_back({"head.cls.bias", Tensor(Shape{cfg_.num_classes})});
        return p;
    }

    // Registers every parameter as a tape leaf and builds the trunk + dual
    // head. `batch` is [N x input_width]; tensor-shaped samples must be
    // flattened by the caller.
    ForwardResult forward(Tape& tape, const Parameters& params,
                          const Tensor& batch) const {
        if (batch.rank() != 2 || batch.extent(1) != cfg_.input_width)
            throw ShapeError("backbone forward: batch " + shape_str(batch.shape()) +
                             " does not match input width " +
                             std::to_string(cfg_.input_width));
        std::vector<Var> vars;
        vars.reserve(params.items.size());
        for (const Parameters::Item& it : params.items)
            vars.push_back(tape.leaf(it.value));
        return forward_with(tape, vars, tape.leaf(batch));
    }

    // Same network over parameters already on the tape (e.g. slices of one
    // flat tensor during a whole-model gradient check).
    ForwardResult forward_with(Tape& tape, const std::vector<Var>& param_vars,
                               Var batch) const {
        const std::size_t n = tape.value(batch).extent(0);
        ForwardResult r;
        r.params = param_vars;
        Var x = batch;
        std::size_t idx = 0;
        auto next = [&]() {
            if (idx >= param_vars.size())
                throw ContractError("backbone forward: expected more parameter "
                                    "tensors than provided");
            return param_vars[idx++];
        };
        for (std::size_t s = 0; s < cfg_.stage_widths.size(); ++s) {
            Var w = next();
            Var b = next();
            x = tape.relu(tape.add_rowvec(tape.matmul(x, w), b));
            if (cfg_.se_after_stage[s]) {
                Var w1 = next();
                Var w2 = next();
                // batch form of the SE gate; H = W = 1 so squeeze is the
                // feature vector itself
                Var hidden = tape.relu(tape.matmul(x, tape.transpose(w1)));
                Var gate = tape.sigmoid(tape.matmul(hidden, tape.transpose(w2)));
                x = tape.mul(x, gate);
            }
        }
        Var wr = next();
        Var br = next();
        r.scores = tape.reshape(tape.add_rowvec(tape.matmul(x, wr), br), Shape{n});
        Var wc = next();
        Var bc = next();
        r.logits = tape.add_rowvec(tape.matmul(x, wc), bc);
        return r;
    }

    std::size_t parameter_count(bool with_classification_head = true) const {
        std::size_t total = 0;
        std::size_t in = cfg_.input_width;
        for (std::size_t s = 0; s < cfg_.stage_widths.size(); ++s) {
            const std::size_t out = cfg_.stage_widths[s];
            total += in * out + out;
            if (cfg_.se_after_stage[s]) {
                SEBlockConfig se{out, cfg_.se_reduction};
                total += 2 * se.hidden_width() * out;
            }
            in = out;
        }
        total += cfg_.trunk_width() + 1;  // regression head
        if (with_classification_head)
            total += cfg_.trunk_width() * cfg_.num_classes + cfg_.num_classes;
        return total;
    }

private:
    Tensor gaussian(Shape shape, double sd, std::uint64_t stream) const {
        Rng rng(Rng::mix(cfg_.seed, stream));
        Tensor t(std::move(shape));
        for (std::size_t i = 0; i < t.numel(); ++i) t[i] = sd * rng.normal();
        return t;
    }

    BackboneConfig cfg_;
};

// ---------------------------------------------------------------------------
// Checkpoint format: magic 'CLBP', version u32, seed u64, config echo
// (length-prefixed text), tensor count u64, then per tensor the name, the
// shape and the payload as little-endian f64.
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[5] = "CLBP";
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const Parameters& params,
                            const BackboneConfig& cfg) {
    BinWriter w(path);
    w.magic(kCheckpointMagic);
    w.u32(kCheckpointVersion);
    w.u64(cfg.seed);
    w.str(cfg.to_kv());
    w.u64(params.items.size());
    for (const Parameters::Item& it : params.items) {
        w.str(it.name);
        w.u64(it.value.rank());
        for (std::size_t d : it.value.shape()) w.u64(d);
        w.f64s(it.value.data());
    }
    w.close();
}

struct Checkpoint {
    Parameters params;
    std::string config_echo;
    std::uint64_t seed = 0;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    BinReader r(path);
    r.expect_magic(kCheckpointMagic);
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version),
                          r.offset() - 4);
    Checkpoint ck;
    ck.seed = r.u64();
    ck.config_echo = r.str();
    const std::uint64_t count = r.u64();
    for (std::uint64_t i = 0; i < count; ++i) {
        Parameters::Item it;
        it.name = r.str(4096);
        const std::uint64_t rank = r.u64();
        if (rank > 8) throw FormatError("implausible tensor rank", r.offset() - 8);
        Shape shape(rank);
        for (std::uint64_t d = 0; d < rank; ++d)
            shape[d] = static_cast<std::size_t>(r.u64());
        const std::size_t numel = shape_numel(shape);
        it.value = Tensor(std::move(shape), r.f64s(numel));
        ck.params.items.push_back(std::move(it));
    }
    r.expect_eof();
    return ck;
}

}  // namespace combolab
