#include "dcl/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <malloc.h>
#include <numeric>
#include <sstream>

namespace dcl {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- configuration -------------------------------------------------------------

namespace {

struct Binding {
    std::string key;
    std::function<void(const std::string&)> set;
    std::function<std::string()> get;
};

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
    }
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
        throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

template <class T>
Binding bind_size(const std::string& key, T& ref) {
    return {key, [&ref, key](const std::string& v) { ref = static_cast<T>(parse_uint(key, v)); },
            [&ref] { return std::to_string(ref); }};
}
Binding bind_double(const std::string& key, double& ref) {
    return {key, [&ref, key](const std::string& v) { ref = parse_double(key, v); }, [&ref] { return fmt_double(ref); }};
}
Binding bind_bool(const std::string& key, bool& ref) {
    return {key, [&ref, key](const std::string& v) { ref = parse_bool(key, v); },
            [&ref] { return std::string(ref ? "true" : "false"); }};
}
Binding bind_path(const std::string& key, fs::path& ref) {
    return {key, [&ref](const std::string& v) { ref = v; }, [&ref] { return ref.string(); }};
}

std::vector<Binding> bindings(RunConfig& c) {
    std::vector<Binding> b;
    b.push_back(bind_size("seed", c.seed));
    b.push_back(bind_path("data_dir", c.data_dir));
    b.push_back(bind_path("out_dir", c.out_dir));
    b.push_back(bind_size("n_points_obs", c.net.n_points_obs));
    b.push_back(bind_size("n_points_model", c.net.n_points_model));
    b.push_back(bind_size("encoder_hidden", c.net.encoder_hidden));
    b.push_back(bind_size("encoder_local", c.net.encoder_local));
    b.push_back(bind_size("raw_width", c.net.raw_width));
    b.push_back(bind_size("branch_width", c.net.branch_width));
    b.push_back(bind_size("pooled_width", c.net.pooled_width));
    b.push_back(bind_size("disengage_depth", c.net.disengage_depth));
    b.push_back(bind_size("decoder_depth", c.net.decoder_depth));
    b.push_back(bind_size("embed_depth", c.net.embed_depth));
    b.push_back(bind_size("head_depth", c.net.head_depth));
    b.push_back(bind_bool("use_rgb", c.net.use_rgb));
    b.push_back(bind_bool("center_observation", c.net.center_observation));
    b.push_back({"fda_mode", [&c](const std::string& v) {
                     try {
                         c.net.fda_mode = parse_fda_mode(v);
                     } catch (const std::invalid_argument& e) {
                         throw ConfigError(e.what());
                     }
                 },
                 [&c] { return to_string(c.net.fda_mode); }});
    b.push_back(bind_bool("use_confidence", c.net.use_confidence));
    b.push_back(bind_double("lambda_p2p", c.loss.lambda_p2p));
    b.push_back(bind_double("lambda_c2c", c.loss.lambda_c2c));
    b.push_back(bind_double("lambda_pose", c.loss.lambda_pose));
    b.push_back(bind_double("lambda_conf", c.loss.lambda_conf));
    b.push_back(bind_double("conf_w", c.loss.w));
    b.push_back(bind_double("lr", c.adam.lr));
    b.push_back(bind_double("beta1", c.adam.beta1));
    b.push_back(bind_double("beta2", c.adam.beta2));
    b.push_back(bind_double("adam_eps", c.adam.eps));
    b.push_back(bind_size("epochs", c.epochs));
    b.push_back(bind_size("batch_size", c.batch_size));
    b.push_back(bind_size("max_steps", c.max_steps));
    b.push_back(bind_size("val_count", c.val_count));
    b.push_back(bind_bool("augment_rotation", c.augment_rotation));
    b.push_back(bind_bool("cosine_lr", c.cosine_lr));
    b.push_back(bind_double("lr_floor", c.lr_floor));
    b.push_back(bind_size("refine_iters", c.refine_iters));
    b.push_back(bind_double("refine_weight", c.refine_weight));
    b.push_back(bind_size("dataset_count", c.dataset_count));
    b.push_back(bind_double("split_ratio", c.split_ratio));
    b.push_back(bind_double("occlusion_max", c.occlusion_max));
    b.push_back(bind_double("noise_sigma", c.noise_sigma));
    b.push_back(bind_size("dense_points", c.dense_points));
    b.push_back(bind_double("translation_range", c.translation_range));
    b.push_back(bind_size("dump_count", c.dump_count));
    b.push_back(bind_bool("ablate_occlusion_study", c.ablate_occlusion_study));
    b.push_back(bind_double("ablate_heavy_occlusion", c.ablate_heavy_occlusion));
    return b;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

DatasetOptions RunConfig::dataset_options() const {
    DatasetOptions o;
    o.count = dataset_count;
    o.split_ratio = split_ratio;
    o.seed = seed;
    o.n_obs = net.n_points_obs;
    o.n_model = net.n_points_model;
    o.dense_points = dense_points;
    o.occlusion_max = occlusion_max;
    o.noise_sigma = noise_sigma;
    o.translation_range = translation_range;
    return o;
}

void RunConfig::validate() const {
    try {
        net.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(adam.lr > 0.0)) throw ConfigError("lr must be positive");
    if (!(lr_floor >= 0.0 && lr_floor <= 1.0)) throw ConfigError("lr_floor must lie in [0, 1]");
    if (!(loss.w > 0.0)) throw ConfigError("conf_w must be positive");
    for (double l : {loss.lambda_p2p, loss.lambda_c2c, loss.lambda_pose, loss.lambda_conf, refine_weight})
        if (!(l >= 0.0)) throw ConfigError("loss weights must be non-negative");
    if (!(split_ratio >= 0.0 && split_ratio <= 1.0)) throw ConfigError("split_ratio must lie in [0, 1]");
    if (!(occlusion_max >= 0.0 && occlusion_max < 0.95)) throw ConfigError("occlusion_max must lie in [0, 0.95)");
    if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be non-negative");
    if (dense_points < 8) throw ConfigError("dense_points must be at least 8");
}

std::vector<std::string> config_keys() {
    RunConfig c;
    std::vector<std::string> keys;
    for (const auto& b : bindings(c)) keys.push_back(b.key);
    return keys;
}

RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    auto table = bindings(cfg);
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        const auto it = std::find_if(table.begin(), table.end(), [&](const Binding& b) { return b.key == key; });
        if (it == table.end()) throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        it->set(value);
    }
    cfg.net.seed = cfg.seed;
    cfg.validate();
    return cfg;
}

RunConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string format_config(const RunConfig& cfg) {
    RunConfig copy = cfg;
    std::string out;
    for (const auto& b : bindings(copy)) out += b.key + " = " + b.get() + "\n";
    return out;
}

// ---- samples ---------------------------------------------------------------------

NetSample prepare(const Sample& s, const NetworkConfig& net) {
    if (s.obs.size() < net.n_points_obs)
        throw std::invalid_argument("sample " + s.id + " has fewer observed points than the network expects");
    if (s.model.size() < net.n_points_model)
        throw std::invalid_argument("sample " + s.id + " has fewer model points than the network expects");
    return {subsample(s.obs, net.n_points_obs), subsample(s.model, net.n_points_model)};
}

Sample rotate_about_centroid(const Sample& s, const Eigen::Matrix3d& q) {
    Sample out = s;
    const Eigen::RowVector3d c = s.obs.points.colwise().mean();
    out.obs.points = ((s.obs.points.rowwise() - c) * q.transpose()).rowwise() + c;
    out.gt.R = q * s.gt.R;
    out.gt.t = q * (s.gt.t - c.transpose()) + c.transpose();
    return out;
}

std::pair<std::vector<Sample>, std::vector<Sample>> split_validation(std::vector<Sample> samples, std::size_t val_count) {
    val_count = std::min(val_count, samples.size());
    std::vector<Sample> val(std::make_move_iterator(samples.end() - static_cast<std::ptrdiff_t>(val_count)),
                            std::make_move_iterator(samples.end()));
    samples.resize(samples.size() - val_count);
    return {std::move(samples), std::move(val)};
}

double add_s_metric(const Pose& pred, const Pose& gt, const Points& model, const SymmetrySpec& sym) {
    return sym.symmetric() ? adds_metric(pred, gt, model) : add_metric(pred, gt, model);
}

// ---- training --------------------------------------------------------------------

namespace {

double value_or_zero(const Tensor& t) { return t.defined() ? t.item() : 0.0; }

bool all_finite(const Tensor& t) {
    for (double v : t.data())
        if (!std::isfinite(v)) return false;
    return true;
}

bool finite_outputs(const ForwardResult& fw) {
    if (!all_finite(fw.pred.R) || !all_finite(fw.pred.t)) return false;
    if (fw.scores && !all_finite(fw.scores->s)) return false;
    if (fw.p2p && !all_finite(fw.p2p->decoded_points)) return false;
    return !fw.c2c || all_finite(fw.c2c->decoded_points);
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(mix_seed(seed ^ 0x5eedf00dULL, epoch));
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

void append_log(std::ofstream& out, const StepLog& l) {
    out << l.step << ',' << l.epoch << ',' << fmt_double(l.p2p) << ',' << fmt_double(l.c2c) << ',' << fmt_double(l.pose)
        << ',' << fmt_double(l.conf) << ',' << fmt_double(l.refine) << ',' << fmt_double(l.total) << '\n';
}

CheckpointRecord scalar_record(const std::string& name, double v) { return {name, 1, 1, {v}}; }

void save_training_checkpoint(const fs::path& path, const PoseNet& net, std::size_t step, double best_val) {
    auto records = store_records(net.params(), true);
    records.push_back(scalar_record("train.step", static_cast<double>(step)));
    records.push_back(scalar_record("train.best_val", best_val));
    write_checkpoint(path, records);
}

double mean_val_error(const PoseNet& net, const std::vector<Sample>& val) {
    double total = 0.0;
    for (const auto& s : val) {
        const NetSample ns = prepare(s, net.config());
        const ForwardResult fw = net.forward(ns.obs, ns.model);
        total += add_s_metric(fw.pred.value(), s.gt, s.model.points, s.symmetry);
    }
    return total / static_cast<double>(val.size());
}

}  // namespace

TrainResult train(const RunConfig& cfg, const std::vector<Sample>& train_set, const std::vector<Sample>& val,
                  const std::optional<fs::path>& resume, const TrainHooks& hooks) {
    cfg.validate();
    if (train_set.empty()) throw std::invalid_argument("train: empty training set");
#ifdef __GLIBC__
    // The graph allocates and frees the same large buffers every step; keep
    // them on the heap instead of round-tripping through mmap.
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
    fs::create_directories(cfg.out_dir);
    NetworkConfig netcfg = cfg.net;
    netcfg.seed = cfg.seed;
    PoseNet net(netcfg);

    TrainResult result;
    result.best_val = std::numeric_limits<double>::infinity();
    std::size_t step = 0;
    if (resume) {
        const auto records = read_checkpoint(*resume);
        load_store_records(net.params(), records);
        for (const auto& r : records) {
            if (r.name == "train.step") step = static_cast<std::size_t>(r.values.at(0));
            if (r.name == "train.best_val") result.best_val = r.values.at(0);
        }
    }
    const fs::path log_path = cfg.out_dir / "train_log.csv";
    std::ofstream log(log_path, resume ? std::ios::app : std::ios::trunc);
    if (!log) throw std::runtime_error("cannot write " + log_path.string());
    if (!resume) log << "step,epoch,l_p2p,l_c2c,l_pose,l_conf,l_refine,total\n";
    {
        std::ofstream snap(cfg.out_dir / "config.txt", std::ios::trunc);
        snap << format_config(cfg);
    }

    result.last_checkpoint = cfg.out_dir / "last.ckpt";
    result.best_checkpoint = cfg.out_dir / "best.ckpt";
    const std::size_t batches_per_epoch = (train_set.size() + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_steps = cfg.epochs * batches_per_epoch;
    const std::size_t stop = cfg.max_steps ? std::min(total_steps, cfg.max_steps) : total_steps;
    const bool refine = cfg.refine_iters > 0 && cfg.refine_weight > 0.0 && net.has_refiner();

    while (step < stop) {
        const std::size_t epoch = step / batches_per_epoch;
        const std::size_t batch = step % batches_per_epoch;
        const auto order = epoch_order(train_set.size(), cfg.seed, epoch);
        const std::size_t begin = batch * cfg.batch_size;
        const std::size_t end = std::min(begin + cfg.batch_size, train_set.size());

        std::map<std::size_t, FeatureMap> model_features;  // one encoding per shape per batch
        StepLog entry;
        entry.step = step + 1;
        entry.epoch = epoch;
        Tensor batch_loss;
        std::string batch_ids;
        for (std::size_t k = begin; k < end; ++k) {
            const std::size_t idx = order[k];
            Sample s = train_set[idx];
            if (cfg.augment_rotation) {
                std::mt19937_64 rng(mix_seed(mix_seed(cfg.seed, epoch + 1), idx));
                s = rotate_about_centroid(s, random_rotation(rng));
            }
            batch_ids += (batch_ids.empty() ? "" : " ") + s.id;
            const NetSample ns = prepare(s, net.config());
            auto mf = model_features.find(s.shape_id);
            if (mf == model_features.end()) mf = model_features.emplace(s.shape_id, net.encode_model(ns.model)).first;
            const ForwardResult fw = net.forward(ns.obs, ns.model, mf->second);
            if (hooks.on_forward) hooks.on_forward(fw, s);
            if (!finite_outputs(fw)) {
                append_log(log, entry);
                log.flush();
                throw NumericError("non-finite network output at step " + std::to_string(entry.step) + " (epoch " +
                                   std::to_string(epoch) + ", batch " + std::to_string(batch) + ", sample " + s.id +
                                   "; batch: " + batch_ids + ")");
            }
            const LossParts parts = net.losses(fw, ns.obs.points, ns.model.points, s.gt, s.symmetry, cfg.loss.w);
            Tensor sample_loss = total_loss(parts, cfg.loss);
            entry.p2p += value_or_zero(parts.p2p);
            entry.c2c += value_or_zero(parts.c2c);
            entry.pose += value_or_zero(parts.pose);
            entry.conf += value_or_zero(parts.conf);
            if (refine) {
                const Tensor lr = net.refinement_loss(fw, ns.obs.points, ns.model.points, s.gt, s.symmetry, cfg.refine_iters);
                entry.refine += lr.item();
                sample_loss = add(sample_loss, scale(lr, cfg.refine_weight));
            }
            batch_loss = batch_loss.defined() ? add(batch_loss, sample_loss) : sample_loss;
        }
        const double inv = 1.0 / static_cast<double>(end - begin);
        batch_loss = scale(batch_loss, inv);
        entry.p2p *= inv;
        entry.c2c *= inv;
        entry.pose *= inv;
        entry.conf *= inv;
        entry.refine *= inv;
        entry.total = batch_loss.item();
        if (!std::isfinite(entry.total)) {
            append_log(log, entry);
            log.flush();
            throw NumericError("non-finite loss at step " + std::to_string(entry.step) + " (epoch " +
                               std::to_string(epoch) + ", batch " + std::to_string(batch) + ": " + batch_ids + ")");
        }
        backward(batch_loss);
        AdamOptions opts = cfg.adam;
        if (cfg.cosine_lr) {
            const double frac = static_cast<double>(step) / static_cast<double>(stop);
            opts.lr *= cfg.lr_floor + (1.0 - cfg.lr_floor) * 0.5 * (1.0 + std::cos(M_PI * frac));
        }
        adam_step(net.params(), opts);
        ++step;
        append_log(log, entry);
        result.log.push_back(entry);
        if (hooks.on_step) hooks.on_step(entry);

        const bool epoch_done = step % batches_per_epoch == 0 || step == stop;
        if (epoch_done) {
            if (!val.empty()) {
                const double v = mean_val_error(net, val);
                if (v < result.best_val) {
                    result.best_val = v;
                    save_training_checkpoint(result.best_checkpoint, net, step, v);
                }
            }
            save_training_checkpoint(result.last_checkpoint, net, step, result.best_val);
        }
    }
    if (val.empty() && fs::exists(result.last_checkpoint)) fs::copy_file(result.last_checkpoint, result.best_checkpoint, fs::copy_options::overwrite_existing);
    result.steps = step;
    return result;
}

PoseNet load_network(const RunConfig& cfg, const fs::path& checkpoint) {
    NetworkConfig netcfg = cfg.net;
    netcfg.seed = cfg.seed;
    PoseNet net(netcfg);
    load_store_records(net.params(), read_checkpoint(checkpoint));
    return net;
}

// ---- evaluation ------------------------------------------------------------------

Aggregates aggregate_poses(const std::vector<Sample>& samples, const std::vector<Pose>& preds) {
    if (samples.size() != preds.size()) throw std::invalid_argument("aggregate_poses: size mismatch");
    if (samples.empty()) throw std::invalid_argument("aggregate_poses: no samples");
    std::vector<double> adds, adds_diam;
    double add_sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        const double e_adds = adds_metric(preds[i], s.gt, s.model.points);
        const double e_add = add_metric(preds[i], s.gt, s.model.points);
        adds.push_back(e_adds);
        add_sum += e_add;
        if ((s.symmetry.symmetric() ? e_adds : e_add) < 0.1 * s.diameter) ++hits;
    }
    Aggregates a;
    a.auc_adds = auc(adds, 0.1);
    a.below_2cm = rate_below(adds, 0.02);
    a.below_10pct_diameter = 100.0 * static_cast<double>(hits) / static_cast<double>(samples.size());
    a.mean_add = add_sum / static_cast<double>(samples.size());
    return a;
}

EvalResult evaluate(const PoseNet& net, const std::vector<Sample>& samples, std::size_t refine_iters, bool with_oracle) {
    EvalResult r;
    const auto nan = std::numeric_limits<double>::quiet_NaN();
    double cd_p2p = 0.0, cd_c2c = 0.0;
    std::vector<Pose> un, ref, orc;
    for (const auto& s : samples) {
        const NetSample ns = prepare(s, net.config());
        const ForwardResult fw = net.forward(ns.obs, ns.model);
        SampleEval e;
        e.id = s.id;
        e.shape_id = s.shape_id;
        e.diameter = s.diameter;
        e.unrefined = fw.pred.value();
        e.refined = net.refine(fw, ns.obs.points, refine_iters);
        if (fw.p2p) e.cd_p2p = chamfer(tensor_points(fw.p2p->decoded_points), inverse_transform(s.gt, ns.obs.points));
        if (fw.c2c) e.cd_c2c = chamfer(tensor_points(fw.c2c->decoded_points), transform(s.gt, ns.model.points));
        if (with_oracle && (fw.p2p || fw.c2c)) {
            e.oracle = solve_from_correspondence(fw.p2p ? &*fw.p2p : nullptr, fw.c2c ? &*fw.c2c : nullptr, ns.obs.points,
                                                 ns.model.points, fw.scores);
            orc.push_back(*e.oracle);
        }
        cd_p2p += e.cd_p2p;
        cd_c2c += e.cd_c2c;
        un.push_back(e.unrefined);
        ref.push_back(e.refined);
        r.samples.push_back(std::move(e));
    }
    const double n = static_cast<double>(samples.size());
    r.unrefined = aggregate_poses(samples, un);
    r.refined = aggregate_poses(samples, ref);
    for (Aggregates* a : {&r.unrefined, &r.refined}) {
        a->cd_p2p = cd_p2p / n;
        a->cd_c2c = cd_c2c / n;
    }
    if (with_oracle) {
        if (orc.size() == samples.size()) {
            r.oracle = aggregate_poses(samples, orc);
            r.oracle->cd_p2p = cd_p2p / n;
            r.oracle->cd_c2c = cd_c2c / n;
        } else {
            r.oracle = Aggregates{nan, nan, nan, nan, nan, nan};
        }
    }
    return r;
}

namespace {

json aggregates_json(const Aggregates& a) {
    auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    return {{"auc_adds", num(a.auc_adds)},
            {"below_2cm", num(a.below_2cm)},
            {"below_10pct_diameter", num(a.below_10pct_diameter)},
            {"mean_add", num(a.mean_add)},
            {"cd_p2p", num(a.cd_p2p)},
            {"cd_c2c", num(a.cd_c2c)}};
}

json pose_json(const Pose& p) {
    json R = json::array();
    for (int i = 0; i < 3; ++i) R.push_back({p.R(i, 0), p.R(i, 1), p.R(i, 2)});
    return {{"R", R}, {"t", {p.t[0], p.t[1], p.t[2]}}};
}

std::vector<Sample> load_split(const RunConfig& cfg, const std::string& name) {
    const fs::path manifest = cfg.data_dir / (name + ".jsonl");
    if (!fs::exists(manifest)) throw ConfigError("manifest not found: " + manifest.string() + " (run synth first)");
    return load_manifest(manifest);
}

void write_attention_csv(const fs::path& path, const Tensor& w) {
    std::ofstream out(path, std::ios::trunc);
    const auto& d = w.data();
    for (std::size_t i = 0; i < w.rows(); ++i) {
        for (std::size_t j = 0; j < w.cols(); ++j) out << (j ? "," : "") << fmt_double(d[i * w.cols() + j]);
        out << '\n';
    }
}

void dump_reconstructions(const PoseNet& net, const std::vector<Sample>& samples, std::size_t count, const fs::path& dir) {
    if (count == 0) return;
    fs::create_directories(dir);
    for (std::size_t i = 0; i < std::min(count, samples.size()); ++i) {
        const auto& s = samples[i];
        const NetSample ns = prepare(s, net.config());
        const ForwardResult fw = net.forward(ns.obs, ns.model);
        if (fw.p2p) {
            write_ply(dir / (s.id + "_p2p_object.ply"), PointCloud{tensor_points(fw.p2p->decoded_points), ns.obs.colors, Frame::object});
            write_attention_csv(dir / (s.id + "_p2p_attention.csv"), fw.p2p->attention.weights);
        }
        if (fw.c2c) {
            write_ply(dir / (s.id + "_c2c_camera.ply"), PointCloud{tensor_points(fw.c2c->decoded_points), ns.model.colors, Frame::camera});
            write_attention_csv(dir / (s.id + "_c2c_attention.csv"), fw.c2c->attention.weights);
        }
        write_ply(dir / (s.id + "_obs.ply"), ns.obs);
    }
}

}  // namespace

std::string summary_json(const EvalResult& r) {
    json j;
    j["samples"] = r.samples.size();
    j["unrefined"] = aggregates_json(r.unrefined);
    j["refined"] = aggregates_json(r.refined);
    if (r.oracle) j["oracle"] = aggregates_json(*r.oracle);
    return j.dump(2);
}

// ---- commands --------------------------------------------------------------------

fs::path cmd_synth(const RunConfig& cfg) {
    cfg.validate();
    std::error_code ec;
    fs::create_directories(cfg.data_dir, ec);
    if (ec || !fs::is_directory(cfg.data_dir)) throw ConfigError("cannot create data directory " + cfg.data_dir.string());
    generate_dataset(default_shapes(), cfg.dataset_options(), cfg.data_dir);
    return cfg.data_dir / "train.jsonl";
}

TrainResult cmd_train(const RunConfig& cfg, const std::optional<fs::path>& resume) {
    cfg.validate();
    if (resume && !fs::exists(*resume)) throw ConfigError("checkpoint not found: " + resume->string());
    auto [tr, val] = split_validation(load_split(cfg, "train"), cfg.val_count);
    return train(cfg, tr, val, resume);
}

EvalResult cmd_eval(const RunConfig& cfg, const fs::path& checkpoint, bool with_oracle) {
    cfg.validate();
    if (!fs::exists(checkpoint)) throw ConfigError("checkpoint not found: " + checkpoint.string());
    const auto test = load_split(cfg, "test");
    const PoseNet net = load_network(cfg, checkpoint);
    EvalResult r = evaluate(net, test, cfg.refine_iters, with_oracle);

    fs::create_directories(cfg.out_dir);
    std::ofstream csv(cfg.out_dir / "eval_samples.csv", std::ios::trunc);
    csv << "sample_id,shape_id,diameter,add,adds,add_refined,adds_refined";
    if (with_oracle) csv << ",add_oracle,adds_oracle";
    csv << ",cd_p2p,cd_c2c\n";
    std::vector<MetricRow> rows;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const auto& s = test[i];
        const auto& e = r.samples[i];
        const Points& m = s.model.points;
        const double add_r = add_metric(e.refined, s.gt, m), adds_r = adds_metric(e.refined, s.gt, m);
        csv << e.id << ',' << e.shape_id << ',' << fmt_double(e.diameter) << ',' << fmt_double(add_metric(e.unrefined, s.gt, m))
            << ',' << fmt_double(adds_metric(e.unrefined, s.gt, m)) << ',' << fmt_double(add_r) << ',' << fmt_double(adds_r);
        if (with_oracle) {
            if (e.oracle) csv << ',' << fmt_double(add_metric(*e.oracle, s.gt, m)) << ',' << fmt_double(adds_metric(*e.oracle, s.gt, m));
            else csv << ",,";
        }
        csv << ',' << fmt_double(e.cd_p2p) << ',' << fmt_double(e.cd_c2c) << '\n';
        rows.push_back({e.id, add_r, adds_r, std::max(0.0, 1.0 - adds_r / 0.1) * 100.0 / static_cast<double>(test.size()), adds_r < 0.02});
    }
    write_metrics_csv(cfg.out_dir / "metrics.csv", rows);
    std::ofstream(cfg.out_dir / "summary.json", std::ios::trunc) << summary_json(r) << '\n';
    dump_reconstructions(net, test, cfg.dump_count, cfg.out_dir / "dumps");
    return r;
}

AblationRow run_variant(const RunConfig& base, const std::string& name, const std::vector<Sample>& tr,
                        const std::vector<Sample>& val, const std::vector<Sample>& test) {
    RunConfig cfg = base;
    cfg.out_dir = base.out_dir / name;
    if (name == "no-fda") {
        cfg.net.fda_mode = FdaMode::none;
    } else if (name == "p2p-only") {
        cfg.net.fda_mode = FdaMode::p2p;
        cfg.net.use_confidence = false;
    } else if (name == "c2c-only") {
        cfg.net.fda_mode = FdaMode::c2c;
        cfg.net.use_confidence = false;
    } else if (name == "dual") {
        cfg.net.fda_mode = FdaMode::dual;
    } else if (name == "dual-no-confidence") {
        cfg.net.fda_mode = FdaMode::dual;
        cfg.net.use_confidence = false;
    } else {
        throw ConfigError("unknown ablation variant '" + name + "'");
    }
    const TrainResult t = train(cfg, tr, val);
    const PoseNet net = load_network(cfg, t.best_checkpoint);
    const EvalResult r = evaluate(net, test, cfg.refine_iters, cfg.net.fda_mode != FdaMode::none);
    AblationRow row{name, r.unrefined, r.oracle.value_or(Aggregates{}), r.refined};
    std::ofstream(cfg.out_dir / "summary.json", std::ios::trunc) << summary_json(r) << '\n';
    return row;
}

namespace {

void write_rows(const fs::path& path, const std::string& header, const std::vector<std::string>& lines) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << header << '\n';
    for (const auto& l : lines) out << l << '\n';
}

std::string agg_cols(const Aggregates& a) {
    return fmt_double(a.auc_adds) + ',' + fmt_double(a.below_2cm) + ',' + fmt_double(a.below_10pct_diameter) + ',' +
           fmt_double(a.mean_add) + ',' + fmt_double(a.cd_p2p) + ',' + fmt_double(a.cd_c2c);
}

const char* kAggHeader = "auc_adds,below_2cm,below_10pct_diameter,mean_add,cd_p2p,cd_c2c";

}  // namespace

std::vector<AblationRow> cmd_ablate(const RunConfig& cfg) {
    cfg.validate();
    auto [tr, val] = split_validation(load_split(cfg, "train"), cfg.val_count);
    const auto test = load_split(cfg, "test");
    fs::create_directories(cfg.out_dir);
    std::vector<AblationRow> rows;
    // The module comparison runs without confidence weighting, so its dual row
    // is dual-no-confidence.
    for (const char* v : {"no-fda", "p2p-only", "c2c-only", "dual-no-confidence", "dual"})
        rows.push_back(run_variant(cfg, v, tr, val, test));

    std::vector<std::string> t1;
    for (std::size_t i = 0; i < 4; ++i) t1.push_back(rows[i].variant + ',' + agg_cols(rows[i].regression));
    write_rows(cfg.out_dir / "ablation_fda.csv", std::string("variant,") + kAggHeader, t1);

    const auto& noconf = rows[3];
    const auto& dual = rows[4];
    write_rows(cfg.out_dir / "ablation_confidence.csv", std::string("confidence,estimator,") + kAggHeader,
               {"with,regression," + agg_cols(dual.regression), "with,least_squares," + agg_cols(dual.least_squares),
                "without,regression," + agg_cols(noconf.regression),
                "without,least_squares," + agg_cols(noconf.least_squares)});
    write_rows(cfg.out_dir / "ablation_refinement.csv", std::string("refinement,") + kAggHeader,
               {"without," + agg_cols(dual.regression), "with," + agg_cols(dual.refined)});

    if (cfg.ablate_occlusion_study) {
        // Same protocol on heavier occlusion for the single-module variants.
        RunConfig heavy = cfg;
        heavy.occlusion_max = cfg.ablate_heavy_occlusion;
        heavy.data_dir = cfg.out_dir / "heavy_occlusion_data";
        heavy.out_dir = cfg.out_dir / "heavy_occlusion";
        const fs::path manifest = cmd_synth(heavy);
        auto [htr, hval] = split_validation(load_manifest(manifest), cfg.val_count);
        const auto htest = load_manifest(heavy.data_dir / "test.jsonl");
        std::vector<std::string> lines;
        for (std::size_t i : {1, 2}) lines.push_back(rows[i].variant + ',' + fmt_double(cfg.occlusion_max) + ',' + agg_cols(rows[i].regression));
        for (const char* v : {"p2p-only", "c2c-only"}) {
            const auto r = run_variant(heavy, v, htr, hval, htest);
            lines.push_back(r.variant + ',' + fmt_double(heavy.occlusion_max) + ',' + agg_cols(r.regression));
        }
        write_rows(cfg.out_dir / "ablation_occlusion.csv", std::string("variant,occlusion_max,") + kAggHeader, lines);
    }
    return rows;
}

std::string cmd_infer(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& obs_ply, const fs::path& model_ply) {
    cfg.validate();
    for (const auto& p : {checkpoint, obs_ply, model_ply})
        if (!fs::exists(p)) throw ConfigError("file not found: " + p.string());
    const PoseNet net = load_network(cfg, checkpoint);
    Sample s;
    s.id = obs_ply.stem().string();
    s.obs = read_ply(obs_ply, Frame::camera);
    s.model = read_ply(model_ply, Frame::object);
    const NetSample ns = prepare(s, net.config());
    const ForwardResult fw = net.forward(ns.obs, ns.model);
    const Pose pose = net.refine(fw, ns.obs.points, cfg.refine_iters);
    json j = pose_json(pose);
    if (fw.scores) {
        const auto& d = fw.scores->s.data();
        const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
        j["scores_summary"] = {{"count", d.size()},
                               {"mean", mean},
                               {"min", *std::min_element(d.begin(), d.end())},
                               {"max", *std::max_element(d.begin(), d.end())}};
    } else {
        j["scores_summary"] = nullptr;
    }
    return j.dump(2);
}

}  // namespace dcl
