// Command-line front end: synth, train, eval, ablate, infer.
// Exit codes: 0 success, 1 configuration error, 2 runtime error.

#include "dcl/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> refine_iters;
    bool with_oracle = false;
    std::string checkpoint;
    std::string obs;
    std::string model;
};

dcl::RunConfig resolve(const Options& o) {
    dcl::RunConfig cfg = o.config.empty() ? dcl::RunConfig{} : dcl::load_config(o.config);
    if (o.seed) cfg.seed = cfg.net.seed = *o.seed;
    if (o.refine_iters) cfg.refine_iters = *o.refine_iters;
    cfg.validate();
    return cfg;
}

void print_aggregates(const char* label, const dcl::Aggregates& a) {
    std::cout << label << ": AUC " << a.auc_adds << "  <2cm " << a.below_2cm << "%  <10%d " << a.below_10pct_diameter
              << "%  mean ADD " << a.mean_add << " m\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dense correspondence 6D pose estimation on synthetic point clouds"};
    app.require_subcommand(1);
    Options o;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "Config file (key = value lines)");
        sub->add_option("--seed", o.seed, "Override the config seed");
        sub->add_option("--refine-iters", o.refine_iters, "Refinement iterations at inference");
    };
    auto* synth = app.add_subcommand("synth", "Generate the synthetic dataset");
    auto* train = app.add_subcommand("train", "Train a network");
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
    auto* ablate = app.add_subcommand("ablate", "Train and compare ablation variants");
    auto* infer = app.add_subcommand("infer", "Estimate the pose of one observation");
    for (auto* s : {synth, train, eval, ablate, infer}) add_common(s);
    train->add_option("--checkpoint", o.checkpoint, "Resume from this checkpoint");
    eval->add_option("--checkpoint", o.checkpoint, "Checkpoint to evaluate")->required();
    eval->add_flag("--with-oracle", o.with_oracle, "Also solve the pose from decoded correspondences");
    infer->add_option("--checkpoint", o.checkpoint, "Checkpoint to use")->required();
    infer->add_option("--obs", o.obs, "Observed point cloud (PLY, camera frame)")->required();
    infer->add_option("--model", o.model, "Object model (PLY, object frame)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        const dcl::RunConfig cfg = resolve(o);
        if (synth->parsed()) {
            std::cout << dcl::cmd_synth(cfg).string() << '\n';
        } else if (train->parsed()) {
            std::optional<std::filesystem::path> resume;
            if (!o.checkpoint.empty()) resume = o.checkpoint;
            const auto r = dcl::cmd_train(cfg, resume);
            std::cout << "steps " << r.steps << ", best validation ADD(S) " << r.best_val << " m\n"
                      << r.best_checkpoint.string() << '\n';
        } else if (eval->parsed()) {
            const auto r = dcl::cmd_eval(cfg, o.checkpoint, o.with_oracle);
            print_aggregates("unrefined", r.unrefined);
            print_aggregates("refined", r.refined);
            if (r.oracle) print_aggregates("least-squares", *r.oracle);
            std::cout << (cfg.out_dir / "summary.json").string() << '\n';
        } else if (ablate->parsed()) {
            for (const auto& row : dcl::cmd_ablate(cfg)) print_aggregates(row.variant.c_str(), row.regression);
            std::cout << (cfg.out_dir / "ablation_fda.csv").string() << '\n';
        } else if (infer->parsed()) {
            std::cout << dcl::cmd_infer(cfg, o.checkpoint, o.obs, o.model) << '\n';
        }
    } catch (const dcl::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
