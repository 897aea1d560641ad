// xfl - command line front end for the transfer-correlation laboratory.
//
// Subcommands: glm-sweep, make-dataset, corr-check, train, finetune,
// layer-sweep, task-sweep, oracle-init, attribute, plot.
// Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "xfl/runlab.hpp"

namespace {

using namespace xfl;

struct GlobalOpts {
    std::string config_path;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    std::string out_dir = "out";
    std::string scale = "desk";
    bool resume = false;
    std::vector<std::string> overrides; // key=value pairs

    CLI::Option *seed_opt = nullptr;
    CLI::Option *jobs_opt = nullptr;
    CLI::Option *out_opt = nullptr;
    CLI::Option *scale_opt = nullptr;
};

void add_global_options(CLI::App &app, GlobalOpts &g) {
    app.add_option("--config", g.config_path, "config file (key = value lines)");
    g.seed_opt = app.add_option("--seed", g.seed, "master seed");
    g.jobs_opt = app.add_option("--jobs", g.jobs, "worker threads over sweep cells");
    g.out_opt = app.add_option("--out", g.out_dir, "output directory");
    g.scale_opt = app.add_option("--scale", g.scale, "desk or paper profile")
                      ->check(CLI::IsMember({"desk", "paper"}));
    app.add_flag("--resume", g.resume, "skip cells whose partial results exist");
    app.add_option("--set", g.overrides, "override a config key, KEY=VALUE")
        ->type_name("KEY=VALUE");
}

runlab::ExperimentConfig make_experiment_config(runlab::ExperimentKind kind,
                                                const GlobalOpts &g) {
    runlab::ConfigDoc doc = g.config_path.empty()
                                ? runlab::ConfigDoc{}
                                : runlab::ConfigDoc::parse_file(g.config_path);
    for (const auto &kv : g.overrides) {
        auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw config_error("ConfigInvalid", "--set expects KEY=VALUE, got '" + kv + "'");
        doc.set(runlab::ConfigDoc::strip(kv.substr(0, eq)),
                runlab::ConfigDoc::strip(kv.substr(eq + 1)));
    }

    if (doc.has("experiment") && doc.get("experiment", "") != runlab::experiment_name(kind))
        throw config_error("ConfigInvalid", "config says experiment = " +
                                                doc.get("experiment", "") + " but subcommand is " +
                                                runlab::experiment_name(kind));

    runlab::ExperimentConfig cfg;
    cfg.kind = kind;
    cfg.doc = doc;
    cfg.master_seed = g.seed_opt->count()
                          ? g.seed
                          : static_cast<std::uint64_t>(doc.get_int("seed", static_cast<std::int64_t>(g.seed)));
    cfg.jobs = g.jobs_opt->count() ? g.jobs
                                   : static_cast<std::size_t>(doc.get_int("jobs", static_cast<std::int64_t>(g.jobs)));
    cfg.out_dir = g.out_opt->count() ? g.out_dir : doc.get("out", g.out_dir);
    cfg.scale = runlab::ScaleProfile::named(g.scale_opt->count() ? g.scale
                                                                 : doc.get("scale", g.scale));
    cfg.resume = g.resume || doc.get("resume", "false") == "true";
    return cfg;
}

int run_experiment(runlab::ExperimentKind kind, const GlobalOpts &g) {
    auto cfg = make_experiment_config(kind, g);
    runlab::ResultTable table = runlab::run(cfg);
    std::cout << runlab::experiment_name(kind) << ": " << table.rows.size() << " rows -> "
              << cfg.out_dir << "/results.csv (" << runlab::format_number(table.wall_seconds)
              << "s)\n";
    return 0;
}

dataforge::Domain cli_domain(const std::string &spec, const runlab::ScaleProfile &profile,
                             std::uint64_t seed) {
    numkit::RngStream root(seed, 0);
    return runlab::resolve_domain(spec, profile, root.derive("domains"));
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"xfl: controlled study of feature/task correlation in network reuse"};
    app.require_subcommand(1);
    GlobalOpts g;
    add_global_options(app, g);
    app.fallthrough();

    // experiments
    auto *glm = app.add_subcommand("glm-sweep", "feature-correlation sweep on the toy GLM");
    auto *task = app.add_subcommand("task-sweep", "Bob's accuracy vs task correlation");
    auto *layer = app.add_subcommand("layer-sweep", "accuracy vs number of frozen layers");
    auto *oracle = app.add_subcommand("oracle-init", "random vs zeroed first-layer init");

    // dataset plumbing
    auto *mkds = app.add_subcommand("make-dataset", "sample a paired dataset to an XFL1 file");
    double mk_beta = 0.0;
    std::string mk_left = "glyphA", mk_right = "glyphB", mk_out = "dataset.xfl";
    std::size_t mk_n = 10000;
    mkds->add_option("--beta", mk_beta, "task correlation in [0,1]")->required();
    mkds->add_option("--left", mk_left, "left domain: glyphA|glyphB|idx:<imgs>:<labels>");
    mkds->add_option("--right", mk_right, "right domain spec");
    mkds->add_option("--n", mk_n, "sample count");
    mkds->add_option("--out", mk_out, "output XFL1 path")->required();

    auto *corr = app.add_subcommand("corr-check", "print the label-correlation report as JSON");
    std::string corr_in;
    corr->add_option("--in", corr_in, "XFL1 dataset path")->required();

    // training plumbing
    auto *train_cmd = app.add_subcommand("train", "train a network from scratch");
    std::string tr_left = "glyphA", tr_right = "glyphB", tr_data, tr_arch = "fc",
                tr_target = "alice", tr_name = "alice.xfn", tr_init = "standard";
    double tr_beta = 0.0, tr_lr = -1.0;
    std::size_t tr_epochs = 0;
    train_cmd->add_option("--beta", tr_beta, "task correlation");
    train_cmd->add_option("--left", tr_left, "left domain spec");
    train_cmd->add_option("--right", tr_right, "right domain spec");
    train_cmd->add_option("--data", tr_data, "fixed XFL1 dataset (instead of resampling)");
    train_cmd->add_option("--arch", tr_arch, "fc or conv")
        ->check(CLI::IsMember({"fc", "conv"}));
    train_cmd->add_option("--target", tr_target, "alice or bob labels")
        ->check(CLI::IsMember({"alice", "bob"}));
    train_cmd->add_option("--init", tr_init, "standard or zero-right-half")
        ->check(CLI::IsMember({"standard", "zero-right-half"}));
    train_cmd->add_option("--epochs", tr_epochs, "override profile epochs");
    train_cmd->add_option("--lr", tr_lr, "override profile learning rate");
    train_cmd->add_option("--name", tr_name, "checkpoint file name in --out");

    auto *ft = app.add_subcommand("finetune", "fine-tune a checkpoint on Bob's labels");
    std::string ft_ckpt, ft_left = "glyphA", ft_right = "glyphB", ft_data,
                ft_name = "bob.xfn";
    double ft_beta = 0.0;
    std::size_t ft_ell = 0, ft_epochs = 0;
    ft->add_option("--checkpoint", ft_ckpt, "pre-trained XFN1 checkpoint")->required();
    ft->add_option("--beta", ft_beta, "task correlation");
    ft->add_option("--left", ft_left, "left domain spec");
    ft->add_option("--right", ft_right, "right domain spec");
    ft->add_option("--data", ft_data, "fixed XFL1 dataset (instead of resampling)");
    ft->add_option("--ell", ft_ell, "retrain layers ell..m+1 (default: output layer only)");
    ft->add_option("--epochs", ft_epochs, "override profile epochs");
    ft->add_option("--name", ft_name, "checkpoint file name in --out");

    auto *attr = app.add_subcommand("attribute", "integrated-gradients side analysis");
    std::string at_ckpt, at_data, at_target = "alice";
    std::size_t at_samples = 1000, at_steps = 128, at_bins = 30;
    attr->add_option("--checkpoint", at_ckpt, "XFN1 checkpoint");
    attr->add_option("--data", at_data, "XFL1 dataset");
    attr->add_option("--samples", at_samples, "samples to attribute");
    attr->add_option("--steps", at_steps, "integration steps");
    attr->add_option("--bins", at_bins, "histogram bins");
    attr->add_option("--target", at_target, "alice or bob labels")
        ->check(CLI::IsMember({"alice", "bob"}));

    auto *plot = app.add_subcommand("plot", "render a results CSV as an SVG chart");
    std::string pl_in, pl_x, pl_out = "plot.svg";
    std::vector<std::string> pl_y;
    plot->add_option("--in", pl_in, "input CSV")->required();
    plot->add_option("--x", pl_x, "x column")->required();
    plot->add_option("--y", pl_y, "y columns")->required();
    plot->add_option("--out-file", pl_out, "output SVG path");

    try {
        app.parse(argc, argv);

        if (glm->parsed()) return run_experiment(runlab::ExperimentKind::GlmSweep, g);
        if (task->parsed()) return run_experiment(runlab::ExperimentKind::TaskSweep, g);
        if (layer->parsed()) return run_experiment(runlab::ExperimentKind::LayerSweep, g);
        if (oracle->parsed()) return run_experiment(runlab::ExperimentKind::OracleInit, g);

        auto profile = runlab::ScaleProfile::named(g.scale);

        if (mkds->parsed()) {
            auto left = cli_domain(mk_left, profile, g.seed);
            auto right = cli_domain(mk_right, profile, g.seed);
            numkit::RngStream rng = numkit::RngStream(g.seed, 0).derive("make-dataset");
            auto ds = dataforge::sample_concat(mk_beta, left, right, mk_n, rng);
            dataforge::save_dataset(ds, mk_out);
            std::cout << "wrote " << ds.size() << " samples of shape (" << ds.h << "," << ds.w
                      << "," << ds.c << ") to " << mk_out << "\n";
            return 0;
        }

        if (corr->parsed()) {
            auto ds = dataforge::load_dataset(corr_in);
            auto rep = dataforge::estimate_task_correlation(ds);
            std::cout << runlab::correlation_report_json(rep);
            return 0;
        }

        if (train_cmd->parsed()) {
            numkit::RngStream root = numkit::RngStream(g.seed, 0).derive("train");
            nncore::Arch arch = tr_arch == "fc" ? nncore::Arch::FullyConnected
                                                : nncore::Arch::Convolutional;
            nncore::InitScheme init = tr_init == "standard" ? nncore::InitScheme::Standard
                                                            : nncore::InitScheme::ZeroRightHalf;
            nncore::Target target =
                tr_target == "alice" ? nncore::Target::Alice : nncore::Target::Bob;

            nncore::OptimizerConfig opt = profile.alice_optimizer();
            if (tr_epochs > 0) opt.epochs = tr_epochs;
            if (tr_lr > 0) opt.lr = tr_lr;

            std::function<dataforge::PairedDataset(std::size_t)> source;
            nncore::Shape input = profile.input_shape();
            dataforge::Domain left, right;
            dataforge::PairedDataset fixed;
            if (!tr_data.empty()) {
                fixed = dataforge::load_dataset(tr_data);
                input = {0, fixed.h, fixed.w, fixed.c};
                source = [&fixed](std::size_t) { return fixed; };
            } else {
                left = runlab::resolve_domain(tr_left, profile, root.derive("domains"));
                right = runlab::resolve_domain(tr_right, profile, root.derive("domains"));
                source = runlab::detail::resampling_source(tr_beta, left, right,
                                                           profile.n_train,
                                                           root.derive("data"));
            }

            numkit::RngStream init_rng = root.derive("init");
            nncore::Network net =
                nncore::build_network(arch, input, init_rng, init, profile.arch);
            nncore::TrainLog log =
                nncore::train(net, source, target, opt, nullptr, root.derive("sgd"));

            std::filesystem::create_directories(g.out_dir);
            auto ckpt = std::filesystem::path(g.out_dir) / tr_name;
            nncore::save_network(net, ckpt.string());

            runlab::ResultTable table;
            table.columns = {"epoch", "loss", "train_accuracy"};
            for (std::size_t e = 0; e < log.epochs.size(); ++e)
                table.add_row({runlab::Cell::of(e), runlab::Cell::of(log.epochs[e].loss),
                               runlab::Cell::of(log.epochs[e].accuracy)});
            runlab::emit_file(table, runlab::EmitFormat::CSV,
                              (std::filesystem::path(g.out_dir) / "train_log.csv").string());
            std::cout << "trained " << tr_arch << " for " << log.epochs.size()
                      << " epochs; final train accuracy "
                      << runlab::format_number(log.epochs.back().accuracy) << "% -> "
                      << ckpt.string() << "\n";
            return 0;
        }

        if (ft->parsed()) {
            numkit::RngStream root = numkit::RngStream(g.seed, 0).derive("finetune");
            nncore::Network net = nncore::load_network(ft_ckpt);
            nncore::FreezePlan plan{ft_ell == 0 ? net.num_trainable_groups() : ft_ell};

            nncore::OptimizerConfig opt = profile.bob_optimizer();
            if (ft_epochs > 0) opt.epochs = ft_epochs;

            std::function<dataforge::PairedDataset(std::size_t)> source;
            dataforge::Domain left, right;
            dataforge::PairedDataset fixed;
            if (!ft_data.empty()) {
                fixed = dataforge::load_dataset(ft_data);
                source = [&fixed](std::size_t) { return fixed; };
            } else {
                left = runlab::resolve_domain(ft_left, profile, root.derive("domains"));
                right = runlab::resolve_domain(ft_right, profile, root.derive("domains"));
                source = runlab::detail::resampling_source(ft_beta, left, right,
                                                           profile.n_train,
                                                           root.derive("data"));
            }

            nncore::TrainLog log = nncore::train(net, source, nncore::Target::Bob, opt, &plan,
                                                 root.derive("sgd"));
            std::filesystem::create_directories(g.out_dir);
            auto ckpt = std::filesystem::path(g.out_dir) / ft_name;
            nncore::save_network(net, ckpt.string());
            std::cout << "fine-tuned (ell=" << plan.ell << ") for " << log.epochs.size()
                      << " epochs; final train accuracy "
                      << runlab::format_number(log.epochs.back().accuracy) << "% -> "
                      << ckpt.string() << "\n";
            return 0;
        }

        if (attr->parsed()) {
            GlobalOpts ga = g;
            ga.overrides.push_back("attrib.checkpoint=" + at_ckpt);
            ga.overrides.push_back("attrib.dataset=" + at_data);
            ga.overrides.push_back("attrib.samples=" + std::to_string(at_samples));
            ga.overrides.push_back("attrib.steps=" + std::to_string(at_steps));
            ga.overrides.push_back("attrib.bins=" + std::to_string(at_bins));
            ga.overrides.push_back("attrib.target=" + at_target);
            return run_experiment(runlab::ExperimentKind::Attribution, ga);
        }

        if (plot->parsed()) {
            auto raw = runlab::parse_csv_file(pl_in);
            if (raw.empty()) throw data_error("EmptyDataset", pl_in + " has no rows");
            runlab::ResultTable table;
            table.columns = raw[0];
            for (std::size_t r = 1; r < raw.size(); ++r) {
                std::vector<runlab::Cell> row;
                for (const auto &field : raw[r]) {
                    try {
                        std::size_t pos = 0;
                        double v = std::stod(field, &pos);
                        if (pos == field.size()) {
                            row.push_back(runlab::Cell::of(v));
                            continue;
                        }
                    } catch (const std::exception &) {
                    }
                    row.push_back(runlab::Cell::of(field));
                }
                table.add_row(std::move(row));
            }
            runlab::plot_svg(table, pl_x, pl_y, pl_out);
            std::cout << "wrote " << pl_out << "\n";
            return 0;
        }
    } catch (const CLI::ParseError &e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        app.exit(e);
        return 2;
    } catch (const Error &e) {
        std::cerr << "error: " << e.what() << "\n";
        switch (e.kind()) {
        case ErrorKind::Config: return 2;
        case ErrorKind::Data: return 3;
        case ErrorKind::Numeric: return 4;
        }
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
    return 0;
}
