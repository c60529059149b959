#include "flowchain/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "flowchain/metrics.hpp"
#include "flowchain/mlp.hpp"
#include "flowchain/train.hpp"

namespace flowchain {

using nlohmann::json;
namespace fs = std::filesystem;

const std::vector<std::string>& command_names()
{
    static const std::vector<std::string> names = {"gen",  "train",        "predict",
                                                   "eval", "bench-update", "export-figure-data"};
    return names;
}

json default_config(const std::string& command)
{
    if (command == "gen") {
        return {{"kind", "simfork"},    {"seed", 0},          {"out", "simfork.txt"}, {"trajectories", 1000},
                {"obs_len", 8},         {"horizon", 12},      {"step", 1.0},          {"noise", 0.1},
                {"fork_angle_deg", 45.0}, {"branch_prob", 0.5}, {"length", 20},       {"speed", 1.0},
                {"heading", 0.0},       {"yaw_rate", 0.0},    {"speed_noise", 0.05},  {"yaw_noise", 0.3},
                {"dt", 0.4}};
    }
    if (command == "train") {
        return {{"data", ""},         {"held_out", ""},         {"out", "checkpoint"},
                {"seed", 0},          {"mode", "cif"},          {"social_pooling", false},
                {"epochs", 20},       {"batch_size", 128},      {"learning_rate", 1e-4},
                {"patience", 5},      {"validation_fraction", 0.1}, {"time_limit", 0.0},
                {"obs_len", 8},       {"horizon", 12},          {"cond_dim", 64},
                {"hidden", 128},      {"depth", 3},             {"flow_layers", 3},
                {"init_sigma", 0.1},  {"data_scale", 0.0},      {"max_items", 0}};
    }
    if (command == "predict") {
        return {{"checkpoint", "checkpoint"}, {"data", ""},   {"held_out", ""},    {"out", "predictions"},
                {"samples", 1000},            {"seed", 0},    {"format", "csv"},   {"best_of", 20},
                {"max_windows", 0}};
    }
    if (command == "eval") {
        return {{"checkpoint", "checkpoint"},
                {"data", ""},
                {"held_out", ""},
                {"out", "eval"},
                {"metrics", {"ade", "fde", "logprob", "kde_logprob"}},
                {"samples", 1000},
                {"best_of", 20},
                {"seed", 0},
                {"max_windows", 0},
                {"grid", 32}};
    }
    if (command == "bench-update") {
        return {{"checkpoint", "checkpoint"}, {"data", ""},  {"held_out", ""},         {"out", "bench"},
                {"samples", 100000},          {"repetitions", 20}, {"warmups", 3},     {"predict_repetitions", 0},
                {"scaling", json::array()},   {"seed", 0},   {"window", 0}};
    }
    if (command == "export-figure-data") {
        return {{"checkpoint", "checkpoint"}, {"data", ""},    {"held_out", ""}, {"out", "figures"},
                {"window", 0},                {"steps", json::array()}, {"grid", 200}, {"extent", 6.0},
                {"samples", 2000},            {"seed", 0}};
    }
    throw ConfigError("unknown command '" + command + "'");
}

namespace {

bool compatible(const json& def, const json& value, const std::string& key)
{
    if (key == "data") return value.is_string() || value.is_array();
    if (def.is_boolean()) return value.is_boolean();
    if (def.is_string()) return value.is_string();
    if (def.is_array()) return value.is_array();
    if (def.is_number_integer()) {
        if (value.is_number_integer()) return true;
        return value.is_number_float() && std::floor(value.get<double>()) == value.get<double>();
    }
    if (def.is_number()) return value.is_number();
    return false;
}

void merge_into(json& config, const json& source, const std::string& command, const char* origin)
{
    if (source.is_null()) return;
    if (!source.is_object()) throw ConfigError(std::string(origin) + " must be a JSON object");
    for (const auto& [key, value] : source.items()) {
        if (!config.contains(key)) throw ConfigError("unknown key '" + key + "' for command '" + command + "'");
        if (!compatible(config[key], value, key)) {
            throw ConfigError("key '" + key + "' has the wrong type (" + std::string(value.type_name()) +
                              ", expected " + config[key].type_name() + ")");
        }
        config[key] = config[key].is_number_integer() && value.is_number_float()
                          ? json(static_cast<long long>(value.get<double>()))
                          : value;
    }
}

template <class T>
T get(const json& c, const char* key)
{
    return c.at(key).get<T>();
}

void require_positive(const json& c, const char* key)
{
    if (!(c.at(key).get<double>() > 0.0)) throw ConfigError(std::string(key) + " must be positive");
}

std::vector<fs::path> selected_files(const json& c, bool training)
{
    const auto files = data_files(c.at("data"));
    const std::string held = get<std::string>(c, "held_out");
    if (held.empty()) return files;
    auto [train, test] = leave_one_out_split(files, held);
    return training ? train : test;
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot write '" + path.string() + "'");
    out << text;
}

void ensure_dir(const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw FormatError("cannot create directory '" + dir.string() + "': " + ec.message());
}

std::string fmt(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

}  // namespace

Timing time_runs(int warmups, int reps, const std::function<void()>& fn)
{
    using clock = std::chrono::steady_clock;
    for (int i = 0; i < warmups; ++i) fn();
    Timing t;
    for (int i = 0; i < reps; ++i) {
        const auto start = clock::now();
        fn();
        t.runs_ms.push_back(std::chrono::duration<double, std::milli>(clock::now() - start).count());
    }
    std::vector<double> sorted = t.runs_ms;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    t.median_ms = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    return t;
}

json resolve_config(const std::string& command, const json& file, const json& overrides)
{
    json config = default_config(command);
    merge_into(config, file, command, "config file");
    merge_into(config, overrides, command, "command-line overrides");
    return config;
}

fs::path resolved_config_path(const std::string& command, const json& config)
{
    const fs::path out = config.at("out").get<std::string>();
    if (command == "gen") return fs::path(out.string() + ".resolved.json");
    return out / "resolved_config.json";
}

void write_resolved_config(const std::string& command, const json& config)
{
    const fs::path path = resolved_config_path(command, config);
    if (path.has_parent_path()) ensure_dir(path.parent_path());
    write_text(path, config.dump(2) + "\n");
}

std::vector<fs::path> data_files(const json& data)
{
    std::vector<fs::path> out;
    auto add = [&](const fs::path& p) {
        if (fs::is_directory(p)) {
            std::vector<fs::path> found;
            for (const auto& e : fs::directory_iterator(p)) {
                if (e.is_regular_file() && e.path().extension() == ".txt") found.push_back(e.path());
            }
            std::sort(found.begin(), found.end());
            out.insert(out.end(), found.begin(), found.end());
        } else if (fs::is_regular_file(p)) {
            out.push_back(p);
        } else {
            throw FormatError("data path '" + p.string() + "' does not exist");
        }
    };
    if (data.is_array()) {
        for (const auto& d : data) add(d.get<std::string>());
    } else {
        const std::string s = data.get<std::string>();
        if (s.empty()) throw ConfigError("no data path given (set 'data')");
        add(s);
    }
    if (out.empty()) throw FormatError("no data files found");
    return out;
}

std::vector<Scene> load_scenes(const std::vector<fs::path>& files, int obs_len, int horizon)
{
    std::vector<Scene> scenes;
    for (const auto& f : files) {
        auto s = load_trajnet(f, obs_len, horizon);
        scenes.insert(scenes.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
    }
    return scenes;
}

WorldPrediction predict_scene(const FlowChainModel& model, const Scene& scene, Index samples, Rng& rng)
{
    WorldPrediction p;
    p.anchor = current_position(scene);
    p.cond = encode(model, scene);
    p.prediction = predict(model, p.cond, Vec2::Zero(), samples, rng);
    return p;
}

Matrix world_points(const FlowChainModel& model, const WorldPrediction& p, int step)
{
    Matrix pts = p.prediction.estimate.points(step) * model.config.data_scale;
    pts.rowwise() += p.anchor.transpose();
    return pts;
}

Vector world_log_density(const FlowChainModel& model, const WorldPrediction& p, const Matrix& points, int step,
                         int updates, const Vec2* center)
{
    const double s = model.config.data_scale;
    Matrix local = (points.rowwise() - p.anchor.transpose()) / s;
    const Vec2 c = center ? normalize_point(*center, p.anchor, s) : Vec2::Zero();
    Vector ld = evaluate_log_density(model, p.cond, c, local, step, updates);
    ld.array() -= 2.0 * std::log(s);
    return ld;
}

StepEmd step_emd(const Matrix& samples, const GaussianMixture& truth, int grid)
{
    const GridSpec spec = grid_covering(union_box(sample_extent(samples, 4.0), mixture_extent(truth, 4.0)), grid, grid);
    const DensityGrid gt = rasterize(truth, spec);
    const GaussianFit fit = fit_gaussian(samples);
    StepEmd out;
    out.model = emd(rasterize(samples, spec), gt);
    out.gaussian = emd(rasterize_gaussian(fit.mean, fit.cov, spec), gt);
    return out;
}

// ---------------------------------------------------------------------------

json cmd_gen(const json& c)
{
    const std::string kind = get<std::string>(c, "kind");
    const fs::path out = get<std::string>(c, "out");
    if (out.has_parent_path()) ensure_dir(out.parent_path());
    Rng rng(get<std::uint64_t>(c, "seed"));
    std::size_t rows = 0;
    if (kind == "simfork") {
        SimforkConfig cfg;
        cfg.trajectories = get<int>(c, "trajectories");
        cfg.obs_len = get<int>(c, "obs_len");
        cfg.horizon = get<int>(c, "horizon");
        cfg.step = get<double>(c, "step");
        cfg.noise = get<double>(c, "noise");
        cfg.fork_angle_deg = get<double>(c, "fork_angle_deg");
        cfg.branch_prob = get<double>(c, "branch_prob");
        const SimforkData data = gen_simfork(cfg, rng);
        write_simfork(out, cfg, get<std::uint64_t>(c, "seed"), data);
        rows = data.trajectories.size() * static_cast<std::size_t>(cfg.obs_len + cfg.horizon);
    } else if (kind == "unicycle") {
        UnicycleConfig cfg;
        cfg.trajectories = get<int>(c, "trajectories");
        cfg.length = get<int>(c, "length");
        cfg.speed = get<double>(c, "speed");
        cfg.heading = get<double>(c, "heading");
        cfg.yaw_rate = get<double>(c, "yaw_rate");
        cfg.speed_noise = get<double>(c, "speed_noise");
        cfg.yaw_noise = get<double>(c, "yaw_noise");
        cfg.dt = get<double>(c, "dt");
        const auto trajectories = gen_unicycle(cfg, rng);
        write_unicycle(out, cfg, get<std::uint64_t>(c, "seed"), trajectories);
        rows = trajectories.size() * static_cast<std::size_t>(cfg.length);
    } else {
        throw ConfigError("unknown dataset kind '" + kind + "' (expected simfork or unicycle)");
    }
    write_resolved_config("gen", c);
    return {{"command", "gen"}, {"out", out.string()}, {"sidecar", sidecar_path(out).string()}, {"rows", rows}};
}

json cmd_train(const json& c)
{
    ModelConfig mc;
    mc.mode = parse_mode(get<std::string>(c, "mode"));
    mc.obs_len = get<int>(c, "obs_len");
    mc.horizon = get<int>(c, "horizon");
    mc.cond_dim = get<Index>(c, "cond_dim");
    mc.hidden = get<Index>(c, "hidden");
    mc.depth = get<int>(c, "depth");
    mc.flow_layers = get<int>(c, "flow_layers");
    mc.social_pooling = get<bool>(c, "social_pooling");
    mc.init_sigma = get<double>(c, "init_sigma");
    mc.seed = get<std::uint64_t>(c, "seed");

    TrainConfig tc;
    tc.batch_size = get<int>(c, "batch_size");
    tc.learning_rate = get<double>(c, "learning_rate");
    tc.epochs = get<int>(c, "epochs");
    tc.seed = mc.seed;
    tc.patience = get<int>(c, "patience");
    tc.validation_fraction = get<double>(c, "validation_fraction");
    tc.time_limit = get<double>(c, "time_limit");

    std::vector<Scene> scenes = load_scenes(selected_files(c, true), mc.obs_len, mc.horizon);
    const auto max_items = get<std::size_t>(c, "max_items");
    if (max_items > 0 && scenes.size() > max_items) scenes.resize(max_items);
    if (scenes.empty()) throw ShapeError("training data holds no complete windows");
    const double scale = get<double>(c, "data_scale");
    mc.data_scale = scale > 0.0 ? scale : estimate_data_scale(scenes, mc.obs_len);

    const fs::path out = get<std::string>(c, "out");
    ensure_dir(out);
    tc.log_path = out / "train_log.csv";
    TrainReport report;
    const FlowChainModel model = train(scenes, mc, tc, &report);
    save_checkpoint(model, out);
    write_resolved_config("train", c);
    return {{"command", "train"},
            {"checkpoint", out.string()},
            {"mode", to_string(mc.mode)},
            {"train_items", report.train_items},
            {"validation_items", report.validation_items},
            {"initial_validation_nll", report.initial_validation_nll},
            {"best_validation_nll", report.best_validation_nll},
            {"best_epoch", report.best_epoch},
            {"epochs_run", report.epochs.size()},
            {"data_scale", mc.data_scale}};
}

json cmd_predict(const json& c)
{
    require_positive(c, "samples");
    const FlowChainModel model = load_checkpoint(get<std::string>(c, "checkpoint"));
    auto scenes = load_scenes(selected_files(c, false), model.config.obs_len, model.config.horizon);
    const auto max_windows = get<std::size_t>(c, "max_windows");
    if (max_windows > 0 && scenes.size() > max_windows) scenes.resize(max_windows);
    const auto samples = get<Index>(c, "samples");
    const auto best_of = get<Index>(c, "best_of");
    const std::string format = get<std::string>(c, "format");
    if (format != "csv" && format != "json") throw ConfigError("format must be csv or json");

    const fs::path out = get<std::string>(c, "out");
    ensure_dir(out);
    Rng rng(get<std::uint64_t>(c, "seed"));
    const double log_scale = 2.0 * std::log(model.config.data_scale);
    for (std::size_t w = 0; w < scenes.size(); ++w) {
        const WorldPrediction p = predict_scene(model, scenes[w], samples, rng);
        const std::string tag = "w" + std::to_string(w);
        if (format == "csv") {
            std::ofstream f(out / ("density_" + tag + ".csv"), std::ios::trunc);
            f << "step,sample_id,x,y,log_density\n";
            for (int n = 1; n <= model.horizon(); ++n) {
                const Matrix pts = world_points(model, p, n);
                const Vector& ld = p.prediction.estimate.log_density_at(n);
                for (Index s = 0; s < pts.rows(); ++s) {
                    f << n << "," << s << "," << fmt(pts(s, 0)) << "," << fmt(pts(s, 1)) << ","
                      << fmt(ld(s) - log_scale) << "\n";
                }
            }
        } else {
            json rows = json::array();
            for (int n = 1; n <= model.horizon(); ++n) {
                const Matrix pts = world_points(model, p, n);
                const Vector& ld = p.prediction.estimate.log_density_at(n);
                for (Index s = 0; s < pts.rows(); ++s) {
                    rows.push_back({{"step", n}, {"sample_id", s}, {"x", pts(s, 0)}, {"y", pts(s, 1)},
                                    {"log_density", ld(s) - log_scale}});
                }
            }
            write_text(out / ("density_" + tag + ".json"), rows.dump() + "\n");
        }
        const Index n_best = std::min(best_of, samples);
        std::ofstream f(out / ("best_" + tag + ".csv"), std::ios::trunc);
        f << "sample_id,step,x,y\n";
        for (int n = 1; n <= model.horizon(); ++n) {
            const Matrix pts = world_points(model, p, n);
            for (Index s = 0; s < n_best; ++s) {
                f << s << "," << n << "," << fmt(pts(s, 0)) << "," << fmt(pts(s, 1)) << "\n";
            }
        }
    }
    write_resolved_config("predict", c);
    return {{"command", "predict"}, {"windows", scenes.size()}, {"out", out.string()}};
}

json cmd_eval(const json& c)
{
    static const std::set<std::string> known = {"ade", "fde", "logprob", "kde_logprob", "emd", "gaussian_emd"};
    const auto metrics = c.at("metrics").get<std::vector<std::string>>();
    if (metrics.empty()) throw ConfigError("no metrics requested");
    for (const auto& m : metrics) {
        if (!known.count(m)) {
            throw ConfigError("unknown metric '" + m + "' (known: ade, fde, logprob, kde_logprob, emd, gaussian_emd)");
        }
    }
    auto wants = [&](const char* m) { return std::find(metrics.begin(), metrics.end(), m) != metrics.end(); };
    require_positive(c, "samples");

    const FlowChainModel model = load_checkpoint(get<std::string>(c, "checkpoint"));
    const auto files = selected_files(c, false);
    const bool need_truth = wants("emd") || wants("gaussian_emd");
    const auto samples = get<Index>(c, "samples");
    const auto best_of = get<Index>(c, "best_of");
    const int grid = get<int>(c, "grid");
    const auto max_windows = get<std::size_t>(c, "max_windows");
    const int horizon = model.horizon();

    const fs::path out = get<std::string>(c, "out");
    ensure_dir(out);
    std::ofstream csv(out / "metrics.csv", std::ios::trunc);
    csv << "item_id,step,metric,value\n";
    std::map<std::string, std::vector<std::vector<double>>> values;

    Rng rng(get<std::uint64_t>(c, "seed"));
    std::size_t item = 0;
    for (const auto& file : files) {
        std::optional<SimforkSidecar> truth;
        if (need_truth) {
            truth = read_simfork_sidecar(file);
            if (!truth || truth->density.steps.size() < static_cast<std::size_t>(horizon)) {
                throw ConfigError("EMD needs an analytic ground-truth density, which only Simfork datasets carry ('" +
                                  file.string() + "' has none)");
            }
        }
        for (const Scene& scene : load_trajnet(file, model.config.obs_len, horizon)) {
            if (max_windows > 0 && item >= max_windows) break;
            const WorldPrediction p = predict_scene(model, scene, std::max(samples, best_of), rng);
            const Matrix gt = future_positions(scene, horizon);
            auto record = [&](const std::string& metric, int step, double v) {
                csv << item << "," << step << "," << metric << "," << fmt(v) << "\n";
                auto& per_item = values[metric];
                if (per_item.size() <= item) per_item.resize(item + 1);
                per_item[item].push_back(v);
            };
            if (wants("ade") || wants("fde")) {
                std::vector<Matrix> cands = best_trajectories(p.prediction.estimate, best_of);
                for (Matrix& t : cands) t = (t * model.config.data_scale).rowwise() + p.anchor.transpose();
                const BestOfN b = best_of_n(cands, gt);
                if (wants("ade")) record("ade", 0, b.ade);
                if (wants("fde")) record("fde", 0, b.fde);
            }
            for (int n = 1; n <= horizon; ++n) {
                const Matrix gt_point = gt.row(n - 1);
                Matrix pts = world_points(model, p, n).topRows(samples);
                if (wants("logprob")) record("logprob", n, world_log_density(model, p, gt_point, n)(0));
                if (wants("kde_logprob")) record("kde_logprob", n, kde_log_density(pts, gt_point)(0));
                if (need_truth) {
                    const StepEmd e = step_emd(pts, truth->density.steps[static_cast<std::size_t>(n - 1)], grid);
                    if (wants("emd")) record("emd", n, e.model);
                    if (wants("gaussian_emd")) record("gaussian_emd", n, e.gaussian);
                }
            }
            ++item;
        }
    }
    json summary = {{"command", "eval"}, {"items", item}, {"metrics", json::object()}};
    for (const auto& m : metrics) {
        auto& per_item = values[m];
        per_item.erase(std::remove_if(per_item.begin(), per_item.end(), [](const auto& v) { return v.empty(); }),
                       per_item.end());
        summary["metrics"][m] = per_item.empty() ? json(nullptr) : json(mean_step_metrics(per_item));
    }
    write_text(out / "summary.json", summary.dump(2) + "\n");
    write_resolved_config("eval", c);
    return summary;
}

json cmd_bench_update(const json& c)
{
    const int reps = get<int>(c, "repetitions");
    if (reps < 5) throw ConfigError("repetitions must be at least 5 (got " + std::to_string(reps) + ")");
    int predict_reps = get<int>(c, "predict_repetitions");
    if (predict_reps == 0) predict_reps = reps;
    if (predict_reps < 5) throw ConfigError("predict_repetitions must be at least 5");
    const int warmups = get<int>(c, "warmups");
    require_positive(c, "samples");

    const FlowChainModel model = load_checkpoint(get<std::string>(c, "checkpoint"));
    const auto scenes = load_scenes(selected_files(c, false), model.config.obs_len, model.config.horizon);
    const auto window = get<std::size_t>(c, "window");
    if (window >= scenes.size()) throw ConfigError("window " + std::to_string(window) + " does not exist");
    const Scene& scene = scenes[window];
    const auto samples = get<Index>(c, "samples");
    Rng rng(get<std::uint64_t>(c, "seed"));

    const RowVector cond = encode(model, scene);
    Prediction base;
    const std::uint64_t calls0 = mlp_call_count();
    const Timing predict_t = time_runs(warmups, predict_reps,
                                       [&] { base = predict(model, cond, Vec2::Zero(), samples, rng); });
    const std::uint64_t predict_calls = (mlp_call_count() - calls0) / static_cast<std::uint64_t>(predict_reps + warmups);

    const Vec2 x_new = normalize_point(future_positions(scene, model.horizon()).row(0).transpose(),
                                       current_position(scene), model.config.data_scale);
    Prediction updated;
    const std::uint64_t calls1 = mlp_call_count();
    const Timing update_t = time_runs(warmups, reps, [&] { updated = update(model, base.cache, x_new); });
    const std::uint64_t update_calls = mlp_call_count() - calls1;

    json scaling = json::array();
    std::vector<double> xs, ys;
    for (const auto& s : c.at("scaling")) {
        const auto n = s.get<Index>();
        if (n < 1) throw ConfigError("scaling sample counts must be positive");
        const Timing t = time_runs(1, 5, [&] { predict(model, cond, Vec2::Zero(), n, rng); });
        scaling.push_back({{"samples", n}, {"predict_ms", t.median_ms}});
        xs.push_back(std::log(static_cast<double>(n)));
        ys.push_back(std::log(t.median_ms));
    }
    json report = {{"command", "bench-update"},
                   {"samples", samples},
                   {"horizon", model.horizon()},
                   {"mode", to_string(model.config.mode)},
                   {"predict_ms", predict_t.median_ms},
                   {"update_ms", update_t.median_ms},
                   {"ratio", predict_t.median_ms / update_t.median_ms},
                   {"predict_repetitions", predict_reps},
                   {"update_repetitions", reps},
                   {"predict_mlp_calls", predict_calls},
                   {"update_mlp_calls", update_calls},
                   {"scaling", scaling}};
    if (xs.size() >= 2) {
        const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
        const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / static_cast<double>(ys.size());
        double sxy = 0.0, sxx = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            sxy += (xs[i] - mx) * (ys[i] - my);
            sxx += (xs[i] - mx) * (xs[i] - mx);
        }
        report["scaling_slope"] = sxy / sxx;
    }
    const fs::path out = get<std::string>(c, "out");
    ensure_dir(out);
    write_text(out / "bench.json", report.dump(2) + "\n");
    write_resolved_config("bench-update", c);
    return report;
}

json cmd_export_figure_data(const json& c)
{
    const FlowChainModel model = load_checkpoint(get<std::string>(c, "checkpoint"));
    const auto scenes = load_scenes(selected_files(c, false), model.config.obs_len, model.config.horizon);
    const auto window = get<std::size_t>(c, "window");
    if (window >= scenes.size()) throw ConfigError("window " + std::to_string(window) + " does not exist");
    std::vector<int> steps = c.at("steps").get<std::vector<int>>();
    if (steps.empty()) {
        for (int n = 1; n <= model.horizon(); ++n) steps.push_back(n);
    }
    const int grid = get<int>(c, "grid");
    if (grid < 2) throw ConfigError("grid must be at least 2");
    require_positive(c, "extent");
    Rng rng(get<std::uint64_t>(c, "seed"));
    const WorldPrediction p = predict_scene(model, scenes[window], get<Index>(c, "samples"), rng);

    const fs::path out = get<std::string>(c, "out");
    ensure_dir(out);
    json summary = {{"command", "export-figure-data"}, {"window", window}, {"steps", json::array()}};
    for (int n : steps) {
        if (n < 1 || n > model.horizon()) throw ConfigError("step " + std::to_string(n) + " out of range");
        const GridSpec spec = grid_covering(sample_extent(world_points(model, p, n), get<double>(c, "extent")), grid, grid);
        Matrix centers(static_cast<Index>(grid) * grid, 2);
        for (int r = 0; r < grid; ++r) {
            for (int col = 0; col < grid; ++col) centers.row(r * grid + col) = spec.center(r, col).transpose();
        }
        const Vector ld = world_log_density(model, p, centers, n);
        const fs::path file = out / ("grid_step" + std::to_string(n) + ".csv");
        std::ofstream f(file, std::ios::trunc);
        f << "x,y,log_density\n";
        for (Index i = 0; i < centers.rows(); ++i) {
            f << fmt(centers(i, 0)) << "," << fmt(centers(i, 1)) << "," << fmt(ld(i)) << "\n";
        }
        const double mass = ld.array().exp().sum() * spec.cell * spec.cell;
        summary["steps"].push_back({{"step", n}, {"file", file.string()}, {"cell", spec.cell}, {"mass", mass}});
    }
    write_text(out / "summary.json", summary.dump(2) + "\n");
    write_resolved_config("export-figure-data", c);
    return summary;
}

json run_command(const std::string& command, const json& config)
{
    if (command == "gen") return cmd_gen(config);
    if (command == "train") return cmd_train(config);
    if (command == "predict") return cmd_predict(config);
    if (command == "eval") return cmd_eval(config);
    if (command == "bench-update") return cmd_bench_update(config);
    if (command == "export-figure-data") return cmd_export_figure_data(config);
    throw ConfigError("unknown command '" + command + "'");
}

}  // namespace flowchain
