#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "combolab/data.hpp"
#include "combolab/discretize.hpp"
#include "combolab/error.hpp"
#include "combolab/model.hpp"
#include "combolab/train.hpp"

namespace combolab {

// Flat typed key-value document with dotted section keys:
//   train.lr0 = 0.01        # comment
// Unknown keys are rejected when a RunConfig is built, so typos fail loudly.
class KvConfig {
public:
    static KvConfig parse_text(const std::string& text) {
        KvConfig cfg;
        std::istringstream in(text);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (auto hash = line.find('#'); hash != std::string::npos)
                line.erase(hash);
            const std::string trimmed = trim(line);
            if (trimmed.empty()) continue;
            const auto eq = trimmed.find('=');
            if (eq == std::string::npos)
                throw ParseError("expected `key = value`, got '" + trimmed + "'",
                                 line_no);
            std::string key = trim(trimmed.substr(0, eq));
            std::string value = trim(trimmed.substr(eq + 1));
            if (key.empty()) throw ParseError("empty key", line_no);
            if (cfg.values_.count(key))
                throw ParseError("duplicate key '" + key + "'", line_no);
            cfg.values_[key] = value;
        }
        return cfg;
    }

    static KvConfig parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw Error("cannot open config file " + path);
        std::ostringstream buf;
        buf << in.rdbuf();
        return parse_text(buf.str());
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& dflt) const {
        consumed_.insert(key);
        auto it = values_.find(key);
        return it == values_.end() ? dflt : it->second;
    }

    std::string require_string(const std::string& key) const {
        consumed_.insert(key);
        auto it = values_.find(key);
        if (it == values_.end())
            throw ConfigError("missing required config key '" + key + "'");
        return it->second;
    }

    double get_double(const std::string& key, double dflt) const {
        consumed_.insert(key);
        auto it = values_.find(key);
        if (it == values_.end()) return dflt;
        return parse_double(key, it->second);
    }

    long long get_int(const std::string& key, long long dflt) const {
        consumed_.insert(key);
        auto it = values_.find(key);
        if (it == values_.end()) return dflt;
        return parse_int(key, it->second);
    }

    std::uint64_t get_u64(const std::string& key, std::uint64_t dflt) const {
        const long long v = get_int(key, static_cast<long long>(dflt));
        if (v < 0) throw ConfigError("config key '" + key + "' must be >= 0");
        return static_cast<std::uint64_t>(v);
    }

    std::vector<long long> get_int_list(const std::string& key,
                                        const std::vector<long long>& dflt) const {
        consumed_.insert(key);
        auto it = values_.find(key);
        if (it == values_.end()) return dflt;
        std::vector<long long> out;
        std::string item;
        std::istringstream ss(it->second);
        while (std::getline(ss, item, ','))
            out.push_back(parse_int(key, trim(item)));
        if (out.empty()) throw ConfigError("config key '" + key + "' is empty");
        return out;
    }

    // every key must have been read by a getter
    void require_all_consumed() const {
        std::string unknown;
        for (const auto& [key, value] : values_)
            if (!consumed_.count(key)) unknown += (unknown.empty() ? "" : ", ") + key;
        if (!unknown.empty())
            throw ConfigError("unknown config keys: " + unknown);
    }

private:
    static std::string trim(const std::string& s) {
        const auto first = s.find_first_not_of(" \t\r\n");
        if (first == std::string::npos) return "";
        const auto last = s.find_last_not_of(" \t\r\n");
        return s.substr(first, last - first + 1);
    }

    static double parse_double(const std::string& key, const std::string& text) {
        double v = 0.0;
        auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
        if (ec != std::errc{} || p != text.data() + text.size())
            throw ConfigError("config key '" + key + "' is not a number: '" + text +
                              "'");
        return v;
    }

    static long long parse_int(const std::string& key, const std::string& text) {
        long long v = 0;
        auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
        if (ec != std::errc{} || p != text.data() + text.size())
            throw ConfigError("config key '" + key + "' is not an integer: '" +
                              text + "'");
        return v;
    }

    std::map<std::string, std::string> values_;
    mutable std::set<std::string> consumed_;
};

// "16" or "3x8x8"
inline Shape parse_shape(const std::string& text) {
    Shape shape;
    std::string item;
    std::istringstream ss(text);
    while (std::getline(ss, item, 'x')) {
        long long v = 0;
        auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
        if (ec != std::errc{} || p != item.data() + item.size() || v <= 0)
            throw ConfigError("bad shape '" + text + "'");
        shape.push_back(static_cast<std::size_t>(v));
    }
    if (shape.empty() || shape.size() > 4)
        throw ConfigError("bad shape '" + text + "'");
    return shape;
}

inline std::string shape_to_text(const Shape& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i)
        out += (i ? "x" : "") + std::to_string(s[i]);
    return out;
}

struct DatasetSpec {
    enum class Kind { synth, csv, binary };
    Kind kind = Kind::synth;
    std::string path;        // csv / binary
    std::size_t n = 500;     // synth
    Shape shape{16};         // synth
    double noise_sd = 0.1;   // synth
    std::uint64_t seed = 1;  // synth

    Dataset load() const {
        switch (kind) {
            case Kind::csv: return load_csv(path);
            case Kind::binary: return load_binary(path);
            case Kind::synth: return synth_generate(n, shape, noise_sd, seed);
        }
        throw ContractError("unreachable dataset kind");
    }
};

// Everything one experiment needs; defaults follow the published training
// protocol (lr 0.01 divided by 10 per 50 epochs, momentum 0.9, weight decay
// 0.001, batch 64, 200 epochs).
struct RunConfig {
    DatasetSpec dataset;
    DiscretizationSpec disc;
    BackboneConfig backbone;
    TrainConfig train;
    std::uint64_t split_seed = 0;
    std::string out_dir = "runs/out";

    static RunConfig from_file(const std::string& path) {
        return from_kv(KvConfig::parse_file(path));
    }

    static RunConfig from_kv(const KvConfig& kv) {
        RunConfig rc;

        const std::string kind = kv.get_string("dataset.kind", "synth");
        if (kind == "synth")
            rc.dataset.kind = DatasetSpec::Kind::synth;
        else if (kind == "csv")
            rc.dataset.kind = DatasetSpec::Kind::csv;
        else if (kind == "binary")
            rc.dataset.kind = DatasetSpec::Kind::binary;
        else
            throw ConfigError("dataset.kind must be synth, csv or binary, got '" +
                              kind + "'");
        rc.dataset.path = kv.get_string("dataset.path", "");
        if (rc.dataset.kind != DatasetSpec::Kind::synth && rc.dataset.path.empty())
            throw ConfigError("dataset.path is required for kind " + kind);
        const long long n = kv.get_int("dataset.n", static_cast<long long>(rc.dataset.n));
        if (n < 1) throw ConfigError("dataset.n must be >= 1");
        rc.dataset.n = static_cast<std::size_t>(n);
        rc.dataset.shape = parse_shape(kv.get_string("dataset.shape", "16"));
        rc.dataset.noise_sd = kv.get_double("dataset.noise_sd", 0.1);
        rc.dataset.seed = kv.get_u64("dataset.seed", 1);

        const std::string rule = kv.get_string("discretize.rule", "ceil_half");
        if (rule == "ceil_half")
            rc.disc.rule = DiscretizeRule::ceil_half;
        else if (rule == "equal_width")
            rc.disc.rule = DiscretizeRule::equal_width;
        else
            throw ConfigError("discretize.rule must be ceil_half or equal_width, "
                              "got '" + rule + "'");
        const long long classes =
            kv.get_int("discretize.num_classes", 5);
        if (classes < 2) throw ConfigError("discretize.num_classes must be >= 2");
        rc.disc.num_classes = static_cast<std::size_t>(classes);
        rc.disc.lo = kv.get_double("discretize.lo", 1.0);
        rc.disc.hi = kv.get_double("discretize.hi", 5.0);
        rc.disc.validate();

        rc.backbone.stage_widths.clear();
        for (long long w : kv.get_int_list("backbone.stages", {256, 512, 16})) {
            if (w < 1) throw ConfigError("backbone.stages entries must be >= 1");
            rc.backbone.stage_widths.push_back(static_cast<std::size_t>(w));
        }
        rc.backbone.se_after_stage.clear();
        for (long long f : kv.get_int_list("backbone.se", {0, 1, 0}))
            rc.backbone.se_after_stage.push_back(f != 0);
        if (rc.backbone.se_after_stage.size() != rc.backbone.stage_widths.size())
            throw ConfigError("backbone.se must list one 0/1 flag per stage");
        const long long reduction = kv.get_int("backbone.reduction", 16);
        if (reduction < 1) throw ConfigError("backbone.reduction must be >= 1");
        rc.backbone.se_reduction = static_cast<std::size_t>(reduction);
        rc.backbone.seed = kv.get_u64("backbone.seed", 0);
        rc.backbone.num_classes = rc.disc.num_classes;

        rc.train.lr0 = kv.get_double("train.lr0", 0.01);
        rc.train.decay_every = static_cast<int>(kv.get_int("train.decay_every", 50));
        rc.train.decay_factor = kv.get_double("train.decay_factor", 10.0);
        rc.train.momentum = kv.get_double("train.momentum", 0.9);
        rc.train.weight_decay = kv.get_double("train.weight_decay", 0.001);
        const long long batch = kv.get_int("train.batch_size", 64);
        if (batch < 1) throw ConfigError("train.batch_size must be >= 1");
        rc.train.batch_size = static_cast<std::size_t>(batch);
        rc.train.epochs = static_cast<int>(kv.get_int("train.epochs", 200));
        rc.train.loss = loss_kind_from(kv.get_string("train.loss", "combo"));
        rc.train.smooth_l1_beta = kv.get_double("train.smooth_l1_beta", 1.0);
        rc.train.huber_delta = kv.get_double("train.huber_delta", 1.0);
        rc.train.combo.alpha = kv.get_double("train.combo.alpha", 2.0);
        rc.train.combo.beta = kv.get_double("train.combo.beta", 1.0);
        rc.train.combo.gamma = kv.get_double("train.combo.gamma", 1.0);
        rc.train.combo.prob_clamp = kv.get_double("train.combo.prob_clamp", 1e-12);
        const std::string mode = kv.get_string("train.combo.exp_mode", "pred");
        if (mode == "pred")
            rc.train.combo.exp_mode = ExpectationMode::pred;
        else if (mode == "groundtruth")
            rc.train.combo.exp_mode = ExpectationMode::groundtruth;
        else
            throw ConfigError("train.combo.exp_mode must be pred or groundtruth, "
                              "got '" + mode + "'");
        rc.train.seed = kv.get_u64("train.seed", 0);
        rc.train.validate();

        rc.split_seed = kv.get_u64("split.seed", 0);
        rc.out_dir = kv.get_string("out.dir", "runs/out");

        kv.require_all_consumed();
        return rc;
    }

    // full resolved configuration; parsing this text reproduces the run
    std::string echo() const {
        std::ostringstream os;
        os << "dataset.kind = "
           << (dataset.kind == DatasetSpec::Kind::synth
                   ? "synth"
                   : dataset.kind == DatasetSpec::Kind::csv ? "csv" : "binary")
           << "\n";
        if (!dataset.path.empty()) os << "dataset.path = " << dataset.path << "\n";
        os << "dataset.n = " << dataset.n << "\n";
        os << "dataset.shape = " << shape_to_text(dataset.shape) << "\n";
        os << "dataset.noise_sd = " << fmt(dataset.noise_sd) << "\n";
        os << "dataset.seed = " << dataset.seed << "\n";
        os << "discretize.rule = " << to_string(disc.rule) << "\n";
        os << "discretize.num_classes = " << disc.num_classes << "\n";
        os << "discretize.lo = " << fmt(disc.lo) << "\n";
        os << "discretize.hi = " << fmt(disc.hi) << "\n";
        os << "backbone.stages = ";
        for (std::size_t i = 0; i < backbone.stage_widths.size(); ++i)
            os << (i ? "," : "") << backbone.stage_widths[i];
        os << "\nbackbone.se = ";
        for (std::size_t i = 0; i < backbone.se_after_stage.size(); ++i)
            os << (i ? "," : "") << (backbone.se_after_stage[i] ? 1 : 0);
        os << "\nbackbone.reduction = " << backbone.se_reduction << "\n";
        os << "backbone.seed = " << backbone.seed << "\n";
        os << "train.lr0 = " << fmt(train.lr0) << "\n";
        os << "train.decay_every = " << train.decay_every << "\n";
        os << "train.decay_factor = " << fmt(train.decay_factor) << "\n";
        os << "train.momentum = " << fmt(train.momentum) << "\n";
        os << "train.weight_decay = " << fmt(train.weight_decay) << "\n";
        os << "train.batch_size = " << train.batch_size << "\n";
        os << "train.epochs = " << train.epochs << "\n";
        os << "train.loss = " << to_string(train.loss) << "\n";
        os << "train.smooth_l1_beta = " << fmt(train.smooth_l1_beta) << "\n";
        os << "train.huber_delta = " << fmt(train.huber_delta) << "\n";
        os << "train.combo.alpha = " << fmt(train.combo.alpha) << "\n";
        os << "train.combo.beta = " << fmt(train.combo.beta) << "\n";
        os << "train.combo.gamma = " << fmt(train.combo.gamma) << "\n";
        os << "train.combo.prob_clamp = " << fmt(train.combo.prob_clamp) << "\n";
        os << "train.combo.exp_mode = "
           << (train.combo.exp_mode == ExpectationMode::pred ? "pred"
                                                             : "groundtruth")
           << "\n";
        os << "train.seed = " << train.seed << "\n";
        os << "split.seed = " << split_seed << "\n";
        os << "out.dir = " << out_dir << "\n";
        return os.str();
    }

private:
    static std::string fmt(double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return buf;
    }
};

// Rebuilds the architecture a checkpoint was written with.
inline BackboneConfig backbone_config_from_kv(const std::string& text) {
    KvConfig kv = KvConfig::parse_text(text);
    BackboneConfig cfg;
    const long long width = kv.get_int("backbone.input_width", 0);
    if (width < 1) throw ConfigError("checkpoint echo lacks backbone.input_width");
    cfg.input_width = static_cast<std::size_t>(width);
    cfg.stage_widths.clear();
    for (long long w : kv.get_int_list("backbone.stages", {}))
        cfg.stage_widths.push_back(static_cast<std::size_t>(w));
    cfg.se_after_stage.clear();
    for (long long f : kv.get_int_list("backbone.se", {}))
        cfg.se_after_stage.push_back(f != 0);
    cfg.se_reduction = static_cast<std::size_t>(kv.get_int("backbone.reduction", 16));
    cfg.num_classes = static_cast<std::size_t>(kv.get_int("backbone.num_classes", 5));
    cfg.seed = kv.get_u64("backbone.seed", 0);
    cfg.validate();
    return cfg;
}

}  // namespace combolab
