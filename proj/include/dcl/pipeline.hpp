#pragma once

// Run configuration and the command implementations behind the CLI:
// dataset generation, training, evaluation, ablation and inference.

#include "dcl/pose_net.hpp"
#include "dcl/synthdata.hpp"

#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dcl {

// Bad or unresolvable configuration; the CLI maps it to exit code 1.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite loss during training.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    NetworkConfig net;
    LossWeights loss;
    AdamOptions adam;

    std::uint64_t seed = 42;
    std::filesystem::path data_dir = "data";
    std::filesystem::path out_dir = "runs/default";

    // training
    std::size_t epochs = 20;
    std::size_t batch_size = 8;
    std::size_t max_steps = 0;        // stop after this many optimizer steps; 0 = no limit
    std::size_t val_count = 100;      // tail of the train split held out for model selection
    bool augment_rotation = true;     // rotate each training sample about its centroid
    bool cosine_lr = false;           // decay lr to lr_floor * lr along a half cosine over the run
    double lr_floor = 0.05;
    std::size_t refine_iters = 2;
    double refine_weight = 1.0;       // weight of the refiner's pose loss during training

    // dataset generation
    std::size_t dataset_count = 2500;
    double split_ratio = 0.8;
    double occlusion_max = 0.3;
    double noise_sigma = 0.002;
    std::size_t dense_points = 4096;
    double translation_range = 0.5;

    // evaluation and ablation
    std::size_t dump_count = 4;       // samples whose reconstructions are written as PLY
    bool ablate_occlusion_study = false;
    double ablate_heavy_occlusion = 0.5;

    DatasetOptions dataset_options() const;
    // Throws ConfigError on inconsistent values.
    void validate() const;
};

// key = value lines; '#' starts a comment. Every key of RunConfig is
// accepted and nothing else.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
std::string format_config(const RunConfig& cfg);
std::vector<std::string> config_keys();

// Observation and model resampled to the network's point counts.
struct NetSample {
    PointCloud obs;
    PointCloud model;
};
NetSample prepare(const Sample& s, const NetworkConfig& net);

// Rotates a sample about its observation centroid by q: obs and gt move
// together, so the result is another exact sample.
Sample rotate_about_centroid(const Sample& s, const Eigen::Matrix3d& q);

struct StepLog {
    std::size_t step = 0;  // 1-based optimizer step
    std::size_t epoch = 0;
    double p2p = 0, c2c = 0, pose = 0, conf = 0, refine = 0, total = 0;
};

struct TrainHooks {
    // After every training forward pass (before the backward pass).
    std::function<void(const ForwardResult&, const Sample&)> on_forward;
    // After every optimizer step.
    std::function<void(const StepLog&)> on_step;
};

struct TrainResult {
    std::vector<StepLog> log;
    std::size_t steps = 0;
    double best_val = 0.0;
    std::filesystem::path last_checkpoint;
    std::filesystem::path best_checkpoint;
};

// Trains on `train`, selecting the best checkpoint by mean ADD(S) on `val`
// (skipped when val is empty). Writes out_dir/train_log.csv, last.ckpt and
// best.ckpt. With `resume`, parameters, optimizer state and the step counter
// come from that checkpoint and the log is appended to.
TrainResult train(const RunConfig& cfg, const std::vector<Sample>& train, const std::vector<Sample>& val,
                  const std::optional<std::filesystem::path>& resume = std::nullopt, const TrainHooks& hooks = {});

PoseNet load_network(const RunConfig& cfg, const std::filesystem::path& checkpoint);

// ADD for asymmetric objects, ADD-S for symmetric ones.
double add_s_metric(const Pose& pred, const Pose& gt, const Points& model, const SymmetrySpec& sym);

struct Aggregates {
    double auc_adds = 0;            // AUC of ADD-S up to 0.1 m, percent
    double below_2cm = 0;           // percent of ADD-S < 2 cm
    double below_10pct_diameter = 0;  // percent of ADD(S) < 0.1 diameter
    double mean_add = 0;            // metres
    double cd_p2p = 0;              // mean Chamfer of decoded vs target clouds, metres (NaN if absent)
    double cd_c2c = 0;
};

// Pose metrics for given predictions; the Chamfer fields are left at 0.
Aggregates aggregate_poses(const std::vector<Sample>& samples, const std::vector<Pose>& preds);

struct SampleEval {
    std::string id;
    std::size_t shape_id = 0;
    double diameter = 0;
    Pose unrefined, refined;
    std::optional<Pose> oracle;
    double cd_p2p = std::numeric_limits<double>::quiet_NaN();
    double cd_c2c = std::numeric_limits<double>::quiet_NaN();
};

struct EvalResult {
    std::vector<SampleEval> samples;
    Aggregates unrefined, refined;
    std::optional<Aggregates> oracle;
};

// Forward pass, K refinement steps and optionally the least-squares solve
// from decoded correspondences for every sample.
EvalResult evaluate(const PoseNet& net, const std::vector<Sample>& samples, std::size_t refine_iters, bool with_oracle);

std::string summary_json(const EvalResult& r);

// ---- commands (write to cfg.out_dir / cfg.data_dir) ---------------------------

std::filesystem::path cmd_synth(const RunConfig& cfg);
TrainResult cmd_train(const RunConfig& cfg, const std::optional<std::filesystem::path>& resume);
EvalResult cmd_eval(const RunConfig& cfg, const std::filesystem::path& checkpoint, bool with_oracle);

struct AblationRow {
    std::string variant;
    Aggregates regression;
    Aggregates least_squares;
    Aggregates refined;
};
std::vector<AblationRow> cmd_ablate(const RunConfig& cfg);

// Single-sample inference; returns {R, t, scores_summary} as JSON text.
std::string cmd_infer(const RunConfig& cfg, const std::filesystem::path& checkpoint, const std::filesystem::path& obs_ply,
                      const std::filesystem::path& model_ply);

// Trains one ablation variant and evaluates it on `test`. Variants: no-fda,
// p2p-only and c2c-only (no confidence), dual-no-confidence, dual.
AblationRow run_variant(const RunConfig& cfg, const std::string& name, const std::vector<Sample>& train,
                        const std::vector<Sample>& val, const std::vector<Sample>& test);

// Splits the training manifest into (train, val) with the last val_count
// samples held out.
std::pair<std::vector<Sample>, std::vector<Sample>> split_validation(std::vector<Sample> samples, std::size_t val_count);

}  // namespace dcl
