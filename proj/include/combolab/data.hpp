#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "combolab/binio.hpp"
#include "combolab/error.hpp"
#include "combolab/rng.hpp"
#include "combolab/tensor.hpp"

namespace combolab {

enum class Provenance { csv, binary, synthetic };

// N samples of one shared shape, each with a continuous score and an id.
// Immutable after load by convention; folds and subsets copy.
struct Dataset {
    Shape sample_shape;             // {D} or {C, H, W}
    std::vector<double> features;   // N * prod(sample_shape), row-major
    std::vector<double> scores;     // N
    std::vector<std::string> ids;   // N
    Provenance provenance = Provenance::synthetic;

    std::size_t size() const { return scores.size(); }
    std::size_t sample_width() const { return shape_numel(sample_shape); }

    std::span<const double> sample(std::size_t i) const {
        return {features.data() + i * sample_width(), sample_width()};
    }

    Dataset subset(std::span<const std::size_t> indices) const {
        Dataset out;
        out.sample_shape = sample_shape;
        out.provenance = provenance;
        const std::size_t w = sample_width();
        out.features.reserve(indices.size() * w);
        for (std::size_t i : indices) {
            if (i >= size())
                throw ContractError("subset index " + std::to_string(i) +
                                    " out of range");
            out.features.insert(out.features.end(), features.begin() + i * w,
                                features.begin() + (i + 1) * w);
            out.scores.push_back(scores[i]);
            out.ids.push_back(ids[i]);
        }
        return out;
    }

    // [N x D] batch of the given rows, flattened for the backbone
    Tensor batch(std::span<const std::size_t> indices) const {
        const std::size_t w = sample_width();
        Tensor t(Shape{indices.size(), w});
        std::size_t row = 0;
        for (std::size_t i : indices) {
            for (std::size_t j = 0; j < w; ++j) t.at(row, j) = features[i * w + j];
            ++row;
        }
        return t;
    }

    void validate() const {
        if (scores.empty()) throw ContractError("dataset is empty");
        if (features.size() != scores.size() * sample_width() ||
            ids.size() != scores.size())
            throw ContractError("dataset arrays are inconsistent");
        for (double s : scores)
            if (!std::isfinite(s)) throw DomainError("dataset scores must be finite");
    }
};

// ---------------------------------------------------------------------------
// CSV: header `id,score,f0,f1,...`, one sample per row
// ---------------------------------------------------------------------------

namespace detail {

inline double parse_double(std::string_view field, std::size_t line_no) {
    double v = 0.0;
    const char* begin = field.data();
    const char* end = begin + field.size();
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc{} || ptr != end)
        throw ParseError("non-numeric field '" + std::string(field) + "'", line_no);
    return v;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            fields.push_back(line.substr(start));
            return fields;
        }
        fields.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

}  // namespace detail

inline Dataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    std::string line;
    std::size_t line_no = 0;

    if (!std::getline(in, line)) throw ParseError("empty file", 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto header = detail::split_csv(line);
    if (header.size() < 3 || header[0] != "id" || header[1] != "score")
        throw ParseError("header must be `id,score,f0,...`, got '" + line + "'",
                         line_no);
    const std::size_t width = header.size() - 2;

    Dataset ds;
    ds.provenance = Provenance::csv;
    ds.sample_shape = {width};
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = detail::split_csv(line);
        if (fields.size() != width + 2)
            throw ParseError("expected " + std::to_string(width + 2) +
                                 " fields, got " + std::to_string(fields.size()),
                             line_no);
        ds.ids.emplace_back(fields[0]);
        ds.scores.push_back(detail::parse_double(fields[1], line_no));
        for (std::size_t j = 0; j < width; ++j)
            ds.features.push_back(detail::parse_double(fields[j + 2], line_no));
    }
    if (ds.scores.empty()) throw ParseError("no data rows", line_no);
    ds.validate();
    return ds;
}

inline void save_csv(const std::string& path, const Dataset& ds) {
    ds.validate();
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot open " + path + " for writing");
    const std::size_t w = ds.sample_width();
    out << "id,score";
    for (std::size_t j = 0; j < w; ++j) out << ",f" << j;
    out << "\n";
    char buf[32];
    auto put = [&](double v) {
        // 17 significant digits round-trip doubles exactly
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << buf;
    };
    for (std::size_t i = 0; i < ds.size(); ++i) {
        out << ds.ids[i] << ",";
        put(ds.scores[i]);
        for (std::size_t j = 0; j < w; ++j) {
            out << ",";
            put(ds.features[i * w + j]);
        }
        out << "\n";
    }
    if (!out) throw Error("failed writing " + path);
}

// ---------------------------------------------------------------------------
// Binary: magic 'CLB1', version u32, N u64, ndim u64, dims u64..., then
// scores[N] and features[N * prod(dims)] as little-endian f64. Carries
// tensor-shaped samples for callers bringing pre-extracted feature maps.
// ---------------------------------------------------------------------------

inline constexpr char kDatasetMagic[5] = "CLB1";
inline constexpr std::uint32_t kDatasetVersion = 1;

inline void save_binary(const std::string& path, const Dataset& ds) {
    ds.validate();
    BinWriter w(path);
    w.magic(kDatasetMagic);
    w.u32(kDatasetVersion);
    w.u64(ds.size());
    w.u64(ds.sample_shape.size());
    for (std::size_t d : ds.sample_shape) w.u64(d);
    w.f64s(ds.scores);
    w.f64s(ds.features);
    w.close();
}

inline Dataset load_binary(const std::string& path) {
    BinReader r(path);
    r.expect_magic(kDatasetMagic);
    const std::uint32_t version = r.u32();
    if (version != kDatasetVersion)
        throw FormatError("unsupported dataset version " + std::to_string(version),
                          r.offset() - 4);
    const std::uint64_t n = r.u64();
    if (n == 0) throw FormatError("dataset has zero samples", r.offset() - 8);
    const std::uint64_t ndim = r.u64();
    if (ndim == 0 || ndim > 4)
        throw FormatError("sample rank " + std::to_string(ndim) +
                              " outside [1, 4]",
                          r.offset() - 8);
    Dataset ds;
    ds.provenance = Provenance::binary;
    ds.sample_shape.resize(ndim);
    for (std::uint64_t d = 0; d < ndim; ++d) {
        ds.sample_shape[d] = static_cast<std::size_t>(r.u64());
        if (ds.sample_shape[d] == 0)
            throw FormatError("zero extent in sample shape", r.offset() - 8);
    }
    ds.scores = r.f64s(n);
    ds.features = r.f64s(n * shape_numel(ds.sample_shape));
    r.expect_eof();
    ds.ids.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) ds.ids.push_back("b" + std::to_string(i));
    ds.validate();
    return ds;
}

// ---------------------------------------------------------------------------
// Synthetic data: standard normal features; the score is a clipped affine
// map of one fixed random projection, plus optional observation noise. With
// noise_sd = 0 the score is an exact function of the features, so a model
// can drive the correlation toward 1.
// ---------------------------------------------------------------------------

inline Dataset synth_generate(std::size_t n, Shape sample_shape, double noise_sd,
                              std::uint64_t seed) {
    if (n == 0) throw ContractError("synth_generate: n must be >= 1");
    if (noise_sd < 0.0) throw ContractError("synth_generate: noise_sd must be >= 0");
    const std::size_t width = shape_numel(sample_shape);
    if (width == 0) throw ContractError("synth_generate: empty sample shape");

    Dataset ds;
    ds.provenance = Provenance::synthetic;
    ds.sample_shape = std::move(sample_shape);
    ds.features.reserve(n * width);

    // the projection direction is its own stream so it only depends on seed
    Rng wrng(Rng::mix(seed, 1));
    std::vector<double> proj(width);
    for (double& v : proj) v = wrng.normal();

    Rng xrng(Rng::mix(seed, 2));
    Rng nrng(Rng::mix(seed, 3));
    const double inv_sqrt_w = 1.0 / std::sqrt(static_cast<double>(width));
    for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < width; ++j) {
            const double x = xrng.normal();
            ds.features.push_back(x);
            dot += proj[j] * x;
        }
        // latent ~ N(0,1); scale 0.7 keeps the clip mild (|latent| > 20/7)
        // while still populating the edge score classes
        double score = 3.0 + 0.7 * (dot * inv_sqrt_w);
        score = std::min(5.0, std::max(1.0, score));
        if (noise_sd > 0.0) score += noise_sd * nrng.normal();
        ds.scores.push_back(score);
        ds.ids.push_back("s" + std::to_string(i));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

struct FoldPlan {
    std::size_t k = 0;
    std::vector<std::size_t> assignments;  // fold index per sample
    std::uint64_t seed = 0;

    std::vector<std::size_t> fold_indices(std::size_t fold) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < assignments.size(); ++i)
            if (assignments[i] == fold) out.push_back(i);
        return out;
    }

    std::vector<std::size_t> complement_indices(std::size_t fold) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < assignments.size(); ++i)
            if (assignments[i] != fold) out.push_back(i);
        return out;
    }
};

// Seeded shuffle then round-robin assignment: folds are disjoint, exhaustive
// and differ in size by at most one.
inline FoldPlan kfold(std::size_t n, std::size_t k, std::uint64_t seed) {
    if (k == 0) throw ContractError("kfold: k must be >= 1");
    if (n == 0) throw ContractError("kfold: n must be >= 1");
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    Rng rng(Rng::mix(seed, 101));
    rng.shuffle(perm);
    FoldPlan plan;
    plan.k = k;
    plan.seed = seed;
    plan.assignments.resize(n);
    for (std::size_t pos = 0; pos < n; ++pos)
        plan.assignments[perm[pos]] = pos % k;
    return plan;
}

// |train| = round(0.6 n); both sides sorted, disjoint and exhaustive.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_60_40(
    std::size_t n, std::uint64_t seed) {
    if (n < 2) throw ContractError("split_60_40: need at least 2 samples");
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    Rng rng(Rng::mix(seed, 102));
    rng.shuffle(perm);
    const auto train_n =
        static_cast<std::size_t>(std::llround(0.6 * static_cast<double>(n)));
    std::vector<std::size_t> train(perm.begin(), perm.begin() + train_n);
    std::vector<std::size_t> test(perm.begin() + train_n, perm.end());
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
    return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Augmentation: additive noise and per-feature scale jitter. Scores and
// labels are never touched.
// ---------------------------------------------------------------------------

struct AugmentConfig {
    double noise_sd = 0.0;
    double scale_jitter = 0.0;  // multiplies each feature by 1 + U(-j, j)
};

inline std::vector<double> augment(std::span<const double> sample,
                                   const AugmentConfig& cfg, Rng& rng) {
    if (cfg.noise_sd < 0.0 || cfg.scale_jitter < 0.0)
        throw ContractError("augment: config values must be >= 0");
    std::vector<double> out(sample.begin(), sample.end());
    for (double& v : out) {
        if (cfg.scale_jitter > 0.0)
            v *= 1.0 + rng.uniform(-cfg.scale_jitter, cfg.scale_jitter);
        if (cfg.noise_sd > 0.0) v += cfg.noise_sd * rng.normal();
    }
    return out;
}

}  // namespace combolab
