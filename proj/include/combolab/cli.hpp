#pragma once

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <string>
#include <vector>

#include "combolab/config.hpp"
#include "combolab/data.hpp"
#include "combolab/discretize.hpp"
#include "combolab/error.hpp"
#include "combolab/gradsuite.hpp"
#include "combolab/model.hpp"
#include "combolab/train.hpp"

namespace combolab::cli {

// Exit codes: 0 success, 2 usage/config, 3 data or file format, 4 numeric
// failure (divergence, failed gradient check).
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

inline constexpr const char* kProvenanceBanner =
    "synthetic desk-scale data; metrics are not comparable to published "
    "full-scale benchmark results";

namespace detail {

inline nlohmann::json metrics_json(double mae, double rmse, double pc,
                                   bool pc_defined) {
    nlohmann::json j;
    j["mae"] = mae;
    j["rmse"] = rmse;
    if (pc_defined)
        j["pc"] = pc;
    else
        j["pc"] = "undefined";
    j["pc_defined"] = pc_defined;
    return j;
}

inline nlohmann::json metrics_json(const Metrics& m) {
    return metrics_json(m.mae, m.rmse, m.pc, m.pc_defined);
}

inline nlohmann::json metrics_json(const MetricsReport& r) {
    return metrics_json(r.mae, r.rmse, r.pc, r.pc_defined);
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot open " + path + " for writing");
    out << text;
    if (!out) throw Error("failed writing " + path);
}

inline void write_json(const std::string& path, const nlohmann::json& j) {
    write_text_file(path, j.dump(2) + "\n");
}

inline void write_history_csv(const std::string& path,
                              const std::vector<EpochRecord>& history) {
    std::ostringstream os;
    os << "epoch,lr,loss,reg,exp,cls\n";
    char buf[32];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        os << buf;
    };
    for (const EpochRecord& r : history) {
        os << r.epoch << ",";
        put(r.lr);
        os << ",";
        put(r.loss);
        os << ",";
        put(r.reg);
        os << ",";
        put(r.exp);
        os << ",";
        put(r.cls);
        os << "\n";
    }
    write_text_file(path, os.str());
}

inline std::string out_file(const RunConfig& rc, const std::string& name) {
    return (std::filesystem::path(rc.out_dir) / name).string();
}

inline void prepare_out_dir(const RunConfig& rc) {
    std::filesystem::create_directories(rc.out_dir);
    write_text_file(out_file(rc, "config_echo.txt"), rc.echo());
}

inline nlohmann::json dataset_json(const Dataset& ds) {
    nlohmann::json j;
    j["n"] = ds.size();
    j["sample_shape"] = shape_to_text(ds.sample_shape);
    j["provenance"] = ds.provenance == Provenance::csv
                          ? "csv"
                          : ds.provenance == Provenance::binary ? "binary"
                                                                : "synthetic";
    return j;
}

inline void attach_provenance(nlohmann::json& j, const Dataset& ds) {
    if (ds.provenance == Provenance::synthetic) j["provenance_note"] = kProvenanceBanner;
}

}  // namespace detail

// ---- synth ----------------------------------------------------------------

inline int cmd_synth(std::size_t n, const std::string& shape_text, double noise_sd,
                     std::uint64_t seed, const std::string& out_path) {
    Shape shape = parse_shape(shape_text);
    Dataset ds = synth_generate(n, shape, noise_sd, seed);
    const bool csv = out_path.size() >= 4 &&
                     out_path.substr(out_path.size() - 4) == ".csv";
    if (auto dir = std::filesystem::path(out_path).parent_path(); !dir.empty())
        std::filesystem::create_directories(dir);
    if (csv)
        save_csv(out_path, ds);
    else
        save_binary(out_path, ds);

    double lo = ds.scores[0], hi = ds.scores[0];
    for (double s : ds.scores) {
        lo = std::min(lo, s);
        hi = std::max(hi, s);
    }
    DiscretizationSpec spec;  // ceil_half, 5 classes
    std::vector<std::size_t> hist(spec.num_classes, 0);
    for (double s : ds.scores)
        ++hist[static_cast<std::size_t>(discretize_score(s, spec))];

    std::cout << "wrote " << out_path << " (" << (csv ? "csv" : "binary") << ")\n"
              << "n = " << ds.size() << ", shape = " << shape_to_text(shape)
              << ", score range = [" << lo << ", " << hi << "]\n"
              << "ceil_half class histogram:";
    for (std::size_t c = 0; c < hist.size(); ++c)
        std::cout << " " << (c + 1) << ":" << hist[c];
    std::cout << "\n";
    return kExitOk;
}

// ---- train ----------------------------------------------------------------

inline int cmd_train(const std::string& config_path) {
    RunConfig rc = RunConfig::from_file(config_path);
    detail::prepare_out_dir(rc);
    Dataset ds = rc.dataset.load();

    TrainResult tr = train_model(ds, rc.disc, rc.backbone, rc.train);
    Backbone backbone = fitted_backbone(ds, rc.disc, rc.backbone);
    save_checkpoint(detail::out_file(rc, "checkpoint.bin"), tr.params,
                    backbone.config());
    detail::write_history_csv(detail::out_file(rc, "history.csv"), tr.history);

    nlohmann::json report;
    report["command"] = "train";
    report["dataset"] = detail::dataset_json(ds);
    report["loss"] = to_string(rc.train.loss);
    report["epochs"] = rc.train.epochs;
    report["final_train"] = detail::metrics_json(tr.final_train);
    if (!tr.history.empty()) {
        report["first_epoch_loss"] = tr.history.front().loss;
        report["final_epoch_loss"] = tr.history.back().loss;
    }
    if (!tr.class_weights.weights.empty()) {
        report["class_counts"] = tr.class_weights.counts;
        report["class_weights"] = tr.class_weights.weights;
    }
    detail::attach_provenance(report, ds);
    detail::write_json(detail::out_file(rc, "report.json"), report);

    std::cout << "train: " << ds.size() << " samples, loss " << to_string(rc.train.loss)
              << ", " << rc.train.epochs << " epochs\n";
    if (ds.provenance == Provenance::synthetic)
        std::cout << "note: " << kProvenanceBanner << "\n";
    std::cout << "final train mae " << tr.final_train.mae << ", rmse "
              << tr.final_train.rmse << ", pc "
              << (tr.final_train.pc_defined ? std::to_string(tr.final_train.pc)
                                            : std::string("undefined"))
              << "\n"
              << "outputs in " << rc.out_dir << "\n";
    return kExitOk;
}

// ---- eval -----------------------------------------------------------------

inline int cmd_eval(const std::string& config_path,
                    const std::string& checkpoint_path) {
    RunConfig rc = RunConfig::from_file(config_path);
    detail::prepare_out_dir(rc);
    Dataset ds = rc.dataset.load();

    Checkpoint ck = load_checkpoint(checkpoint_path);
    BackboneConfig arch = backbone_config_from_kv(ck.config_echo);
    if (arch.input_width != ds.sample_width())
        throw ContractError("checkpoint expects input width " +
                            std::to_string(arch.input_width) + " but dataset has " +
                            std::to_string(ds.sample_width()));
    Backbone backbone(arch);
    MetricsReport rep = evaluate(backbone, ck.params, ds);

    nlohmann::json report;
    report["command"] = "eval";
    report["checkpoint"] = checkpoint_path;
    report["dataset"] = detail::dataset_json(ds);
    report["metrics"] = detail::metrics_json(rep);
    detail::attach_provenance(report, ds);
    detail::write_json(detail::out_file(rc, "eval_report.json"), report);

    std::cout << "eval: mae " << rep.mae << ", rmse " << rep.rmse << ", pc "
              << (rep.pc_defined ? std::to_string(rep.pc) : std::string("undefined"))
              << "\n";
    if (ds.provenance == Provenance::synthetic)
        std::cout << "note: " << kProvenanceBanner << "\n";
    return kExitOk;
}

// ---- cv -------------------------------------------------------------------

inline int cmd_cv(const std::string& config_path, std::size_t k) {
    RunConfig rc = RunConfig::from_file(config_path);
    detail::prepare_out_dir(rc);
    Dataset ds = rc.dataset.load();

    CvResult cv = cross_validate(ds, k, rc.disc, rc.backbone, rc.train,
                                 rc.split_seed);
    for (std::size_t fold = 0; fold < cv.folds.size(); ++fold)
        detail::write_history_csv(
            detail::out_file(rc, "history_fold" + std::to_string(fold) + ".csv"),
            cv.folds[fold].history);

    nlohmann::json report;
    report["command"] = "cv";
    report["k"] = k;
    report["dataset"] = detail::dataset_json(ds);
    report["loss"] = to_string(rc.train.loss);
    report["mean"] = detail::metrics_json(cv.report);
    nlohmann::json folds = nlohmann::json::array();
    for (const Metrics& m : cv.report.per_fold) folds.push_back(detail::metrics_json(m));
    report["per_fold"] = folds;
    detail::attach_provenance(report, ds);
    detail::write_json(detail::out_file(rc, "cv_report.json"), report);

    std::cout << "cv: k = " << k << ", mean mae " << cv.report.mae << ", rmse "
              << cv.report.rmse << ", pc "
              << (cv.report.pc_defined ? std::to_string(cv.report.pc)
                                       : std::string("undefined"))
              << "\n";
    if (ds.provenance == Provenance::synthetic)
        std::cout << "note: " << kProvenanceBanner << "\n";
    return kExitOk;
}

// ---- compare --------------------------------------------------------------

inline int cmd_compare(const std::string& config_path,
                       const std::string& losses_text) {
    RunConfig rc = RunConfig::from_file(config_path);
    detail::prepare_out_dir(rc);
    Dataset ds = rc.dataset.load();

    std::vector<LossKind> losses;
    {
        std::istringstream ss(losses_text);
        std::string item;
        while (std::getline(ss, item, ',')) losses.push_back(loss_kind_from(item));
    }
    if (losses.empty()) throw ContractError("no losses requested");

    auto rows = compare_losses(ds, losses, rc.disc, rc.backbone, rc.train,
                               rc.split_seed);

    std::ostringstream table;
    table << "loss        mae       rmse      pc\n";
    nlohmann::json jrows = nlohmann::json::array();
    for (const CompareRow& row : rows) {
        char line[128];
        if (row.test.pc_defined)
            std::snprintf(line, sizeof line, "%-10s  %.6f  %.6f  %.6f\n",
                          to_string(row.loss), row.test.mae, row.test.rmse,
                          row.test.pc);
        else
            std::snprintf(line, sizeof line, "%-10s  %.6f  %.6f  undefined\n",
                          to_string(row.loss), row.test.mae, row.test.rmse);
        table << line;
        nlohmann::json j;
        j["loss"] = to_string(row.loss);
        j["test"] = detail::metrics_json(row.test);
        j["first_epoch_loss"] = row.first_epoch_loss;
        j["final_epoch_loss"] = row.final_epoch_loss;
        jrows.push_back(j);
    }

    nlohmann::json report;
    report["command"] = "compare";
    report["dataset"] = detail::dataset_json(ds);
    report["split"] = "60/40";
    report["rows"] = jrows;
    detail::attach_provenance(report, ds);
    detail::write_json(detail::out_file(rc, "compare_report.json"), report);
    detail::write_text_file(detail::out_file(rc, "compare.txt"), table.str());

    std::cout << table.str();
    if (ds.provenance == Provenance::synthetic)
        std::cout << "note: " << kProvenanceBanner << "\n";
    return kExitOk;
}

// ---- gradcheck ------------------------------------------------------------

inline int cmd_gradcheck(std::uint64_t seed, double tol) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<ComponentCheck> checks = gradcheck_suite(seed);
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    double worst = 0.0;
    bool ok = true;
    for (const ComponentCheck& c : checks) {
        const bool pass = c.max_rel_err < tol;
        ok = ok && pass;
        worst = std::max(worst, c.max_rel_err);
        std::printf("%-24s  %10.3e  (%zu points)  %s\n", c.name.c_str(),
                    c.max_rel_err, c.points, pass ? "ok" : "FAIL");
    }
    std::printf("gradcheck: %zu components, worst %.3e, tol %.1e, %.2fs: %s\n",
                checks.size(), worst, tol, elapsed, ok ? "PASS" : "FAIL");
    return ok ? kExitOk : kExitNumeric;
}

// ---- entry point ----------------------------------------------------------

inline int run(int argc, const char* const* argv) {
    CLI::App app{"score regression with a combined regression/expectation/"
                 "classification objective and an SE-gated backbone"};
    app.require_subcommand(1);

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    std::size_t synth_n = 500;
    std::string synth_shape = "16";
    double synth_noise = 0.1;
    std::uint64_t synth_seed = 1;
    std::string synth_out;
    synth->add_option("--n", synth_n, "sample count")->check(CLI::PositiveNumber);
    synth->add_option("--shape", synth_shape, "sample shape, e.g. 16 or 3x8x8");
    synth->add_option("--noise-sd", synth_noise, "observation noise sd");
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--out", synth_out, "output path (.csv or binary)")
        ->required();

    auto* train = app.add_subcommand("train", "train a model from a config file");
    std::string train_config;
    train->add_option("--config", train_config, "run-config file")->required();

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string eval_config, eval_ckpt;
    eval->add_option("--config", eval_config, "run-config file")->required();
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();

    auto* cv = app.add_subcommand("cv", "k-fold cross validation");
    std::string cv_config;
    std::size_t cv_k = 5;
    cv->add_option("--config", cv_config, "run-config file")->required();
    cv->add_option("--k", cv_k, "fold count");

    auto* compare = app.add_subcommand("compare", "train several losses on one split");
    std::string compare_config;
    std::string compare_losses_text = "l1,mse,smooth_l1,huber,combo";
    compare->add_option("--config", compare_config, "run-config file")->required();
    compare->add_option("--losses", compare_losses_text, "comma-separated losses");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    std::uint64_t gc_seed = 0;
    double gc_tol = 1e-4;
    gradcheck->add_option("--seed", gc_seed, "sampling seed");
    gradcheck->add_option("--tol", gc_tol, "max relative error");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*synth) return cmd_synth(synth_n, synth_shape, synth_noise, synth_seed,
                                     synth_out);
        if (*train) return cmd_train(train_config);
        if (*eval) return cmd_eval(eval_config, eval_ckpt);
        if (*cv) return cmd_cv(cv_config, cv_k);
        if (*compare) return cmd_compare(compare_config, compare_losses_text);
        if (*gradcheck) return cmd_gradcheck(gc_seed, gc_tol);
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ContractError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ParseError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return kExitData;
    } catch (const DomainError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const ImbalanceError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}

// convenience for in-process invocation
inline int run(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("combolab");
    for (const std::string& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace combolab::cli
