#include "flowchain/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>

#include <json.hpp>

#include "flowchain/adam.hpp"
#include "flowchain/serialize.hpp"

namespace flowchain {

using nlohmann::json;

void TrainConfig::validate() const
{
    if (batch_size < 1 || epochs < 0 || patience < 0) throw ShapeError("train: batch size and epochs must be positive");
    if (!(learning_rate > 0.0)) throw ShapeError("train: learning rate must be positive");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
        throw ShapeError("train: validation fraction must be in [0, 1)");
    }
}

Batch make_batch(const FlowChainModel& model, std::span<const Scene> scenes)
{
    const ModelConfig& cfg = model.config;
    Batch batch;
    batch.encoder = make_encoder_batch(scenes, cfg.obs_len, cfg.data_scale, cfg.social_pooling);
    const auto n = static_cast<Index>(scenes.size());
    batch.targets.assign(static_cast<std::size_t>(cfg.horizon), Matrix(n, 2));
    for (Index i = 0; i < n; ++i) {
        const Scene& s = scenes[static_cast<std::size_t>(i)];
        const Vec2 x_t = current_position(s);
        const Matrix future = future_positions(s, cfg.horizon);
        for (int k = 0; k < cfg.horizon; ++k) {
            batch.targets[static_cast<std::size_t>(k)].row(i) =
                (future.row(k) - x_t.transpose()) / cfg.data_scale;
        }
    }
    return batch;
}

LossNoise draw_loss_noise(const FlowChainModel& model, Index batch_size, Rng& rng)
{
    const auto steps = static_cast<std::size_t>(model.horizon());
    LossNoise noise(steps, std::vector<Matrix>(steps));
    for (std::size_t n = 0; n < steps; ++n) {
        for (std::size_t m = 0; m <= n; ++m) {
            if (uses_index(model.stages[m])) noise[n][m] = standard_normal(rng, batch_size, kIndexDim);
        }
    }
    return noise;
}

namespace {

void check_loss(double value, int stage)
{
    if (!std::isfinite(value)) throw NumericError("nll_loss: non-finite loss at stage " + std::to_string(stage));
}

}  // namespace

StageLosses nll_loss(const FlowChainModel& model, const Batch& batch, const LossNoise& noise)
{
    Eval ctx(model.params);
    const Matrix cond = encode_batch(ctx, model.encoder, batch.encoder);
    const Matrix center = Matrix::Zero(1, 2);
    StageLosses out;
    for (int n = 1; n <= model.horizon(); ++n) {
        const auto& eps = noise[static_cast<std::size_t>(n - 1)];
        const Matrix ld = chain_log_density(ctx, model, cond, batch.targets[static_cast<std::size_t>(n - 1)], center,
                                            n, 0, std::span<const Matrix>(eps));
        const double loss = -ld.mean();
        check_loss(loss, n);
        out.per_stage.push_back(loss);
        out.total += loss;
    }
    return out;
}

StageLosses nll_loss_and_grad(const FlowChainModel& model, const Batch& batch, const LossNoise& noise,
                              Gradients& grads, std::span<const double> stage_weights)
{
    if (!stage_weights.empty() && stage_weights.size() != static_cast<std::size_t>(model.horizon())) {
        throw ShapeError("nll_loss_and_grad: expected " + std::to_string(model.horizon()) + " stage weights, got " +
                         std::to_string(stage_weights.size()));
    }
    grads = Gradients(model.params.size());
    const Index n_items = batch.size();

    Tape enc_tape(model.params);
    const Var cond_var = encode_batch(enc_tape, model.encoder, batch.encoder);
    const Matrix cond_value = cond_var.value();
    Matrix cond_adjoint = Matrix::Zero(cond_value.rows(), cond_value.cols());

    StageLosses out;
    for (int n = 1; n <= model.horizon(); ++n) {
        const ParamRange own = model.stage_params[static_cast<std::size_t>(n - 1)];
        Tape tape(model.params);
        tape.set_frozen([&model, own](ParamId id) {
            return !own.contains(id) && id != model.log_sigma;
        });
        const Var cond = tape.variable(cond_value);
        const Var targets = tape.constant(batch.targets[static_cast<std::size_t>(n - 1)]);
        const Var center = tape.constant(Matrix::Zero(1, 2));
        const auto& eps_m = noise[static_cast<std::size_t>(n - 1)];
        std::vector<Var> eps(eps_m.size());
        for (std::size_t m = 0; m < static_cast<std::size_t>(n); ++m) {
            if (eps_m[m].size() > 0) eps[m] = tape.constant(eps_m[m]);
        }
        const Var ld = chain_log_density(tape, model, cond, targets, center, n, 0, std::span<const Var>(eps));
        const Var loss = scale(sum(ld), -1.0 / static_cast<double>(n_items));
        const double value = loss.value()(0, 0);
        check_loss(value, n);
        out.per_stage.push_back(value);
        out.total += value;
        const Var watch[1] = {cond};
        const double w = stage_weights.empty() ? 1.0 : stage_weights[static_cast<std::size_t>(n - 1)];
        Gradients g = tape.backward(loss, Matrix::Constant(1, 1, w), watch);
        cond_adjoint += g.watched[0];
        grads.accumulate(g);
    }
    grads.accumulate(enc_tape.backward(cond_var, cond_adjoint));
    return out;
}

double validation_nll(const FlowChainModel& model, std::span<const Scene> scenes, int batch_size,
                      std::uint64_t seed)
{
    if (scenes.empty()) return std::numeric_limits<double>::quiet_NaN();
    Rng rng(seed ^ 0x5bd1e995ULL);
    double total = 0.0;
    for (std::size_t b = 0; b < scenes.size(); b += static_cast<std::size_t>(batch_size)) {
        const std::size_t e = std::min(scenes.size(), b + static_cast<std::size_t>(batch_size));
        const Batch batch = make_batch(model, scenes.subspan(b, e - b));
        const LossNoise noise = draw_loss_noise(model, batch.size(), rng);
        total += nll_loss(model, batch, noise).total * static_cast<double>(e - b);
    }
    return total / static_cast<double>(scenes.size());
}

FlowChainModel train(const std::vector<Scene>& scenes, const ModelConfig& model_config, const TrainConfig& config,
                     TrainReport* report)
{
    config.validate();
    if (scenes.empty()) throw ShapeError("train: empty dataset");
    FlowChainModel model = make_model(model_config);
    using clock = std::chrono::steady_clock;
    const auto start = clock::now();

    Rng rng(config.seed);
    std::vector<std::size_t> order(scenes.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t n_val = static_cast<std::size_t>(std::floor(config.validation_fraction * static_cast<double>(scenes.size())));
    if (config.validation_fraction > 0.0 && n_val == 0 && scenes.size() >= 2) n_val = 1;
    std::vector<Scene> val, tr;
    for (std::size_t i = 0; i < order.size(); ++i) (i < n_val ? val : tr).push_back(scenes[order[i]]);

    TrainReport local;
    TrainReport& rep = report ? *report : local;
    rep = TrainReport{};
    rep.train_items = tr.size();
    rep.validation_items = val.size();
    const std::span<const Scene> val_span(val);
    const std::span<const Scene> selection = val.empty() ? std::span<const Scene>(tr) : val_span;
    rep.initial_validation_nll = validation_nll(model, selection, config.batch_size, config.seed);
    rep.best_validation_nll = rep.initial_validation_nll;

    std::ofstream log;
    if (!config.log_path.empty()) {
        log.open(config.log_path, std::ios::trunc);
        if (!log) throw FormatError("cannot open training log '" + config.log_path.string() + "'");
        log << "epoch,train_nll,validation_nll,wall_time\n";
        log << "0,," << rep.initial_validation_nll << ",0\n";
    }

    AdamState adam(model.params, config.learning_rate);
    ParameterSet best = model.params;
    int stale = 0;
    std::vector<std::size_t> idx(tr.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<Scene> chunk;
    bool out_of_time = false;
    for (int epoch = 1; epoch <= config.epochs && !out_of_time; ++epoch) {
        std::shuffle(idx.begin(), idx.end(), rng);
        double sum = 0.0;
        std::size_t seen = 0;
        std::size_t batches = 0;
        for (std::size_t b = 0; b < idx.size(); b += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t e = std::min(idx.size(), b + static_cast<std::size_t>(config.batch_size));
            chunk.clear();
            for (std::size_t k = b; k < e; ++k) chunk.push_back(tr[idx[k]]);
            const Batch batch = make_batch(model, chunk);
            const LossNoise noise = draw_loss_noise(model, batch.size(), rng);
            Gradients grads;
            const StageLosses loss = nll_loss_and_grad(model, batch, noise, grads);
            if (!(loss.total < config.divergence_threshold)) {
                std::string stages;
                for (std::size_t s = 0; s < loss.per_stage.size(); ++s) {
                    stages += (s ? ", " : "") + std::to_string(loss.per_stage[s]);
                }
                throw NumericError("train: diverged at epoch " + std::to_string(epoch) + " (batch NLL " +
                                   std::to_string(loss.total) + "; per-stage " + stages + ")");
            }
            adam_step(adam, model.params, grads);
            sum += loss.total * static_cast<double>(e - b);
            seen += e - b;
            ++batches;
            if (config.time_limit > 0.0 &&
                std::chrono::duration<double>(clock::now() - start).count() > config.time_limit) {
                out_of_time = true;
                break;
            }
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.batches = batches;
        rec.train_nll = seen ? sum / static_cast<double>(seen) : 0.0;
        rec.validation_nll = validation_nll(model, selection, config.batch_size, config.seed);
        rec.wall_time = std::chrono::duration<double>(clock::now() - start).count();
        rep.epochs.push_back(rec);
        if (log) {
            log << rec.epoch << "," << rec.train_nll << "," << rec.validation_nll << "," << rec.wall_time << "\n";
            log.flush();
        }
        if (config.verbose) {
            std::cerr << "epoch " << epoch << " train " << rec.train_nll << " val " << rec.validation_nll << " ("
                      << rec.wall_time << " s)\n";
        }
        if (rec.validation_nll < rep.best_validation_nll) {
            rep.best_validation_nll = rec.validation_nll;
            rep.best_epoch = epoch;
            best = model.params;
            stale = 0;
        } else if (config.patience > 0 && ++stale >= config.patience) {
            break;
        }
    }
    model.params = std::move(best);
    return model;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const FlowChainModel& model, const std::filesystem::path& dir)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw FormatError("cannot create checkpoint directory '" + dir.string() + "': " + ec.message());
    save_parameters(model.params, dir / "params.bin");
    const ModelConfig& c = model.config;
    const Vec2 sigma = model.sigma();
    const json manifest = {{"version", kCheckpointVersion},
                           {"mode", to_string(c.mode)},
                           {"T_o", c.obs_len},
                           {"T_f", c.horizon},
                           {"stages", model.horizon()},
                           {"sigma", {sigma.x(), sigma.y()}},
                           {"cond_dim", c.cond_dim},
                           {"hidden", c.hidden},
                           {"depth", c.depth},
                           {"flow_layers", c.flow_layers},
                           {"social_pooling", c.social_pooling},
                           {"data_scale", c.data_scale},
                           {"seed", c.seed}};
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    if (!out) throw FormatError("cannot write manifest in '" + dir.string() + "'");
    out << manifest.dump(2) << "\n";
}

FlowChainModel load_checkpoint(const std::filesystem::path& dir)
{
    const auto manifest_path = dir / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw FormatError("no manifest at '" + manifest_path.string() + "'");
    ModelConfig c;
    try {
        const json m = json::parse(in);
        const int version = m.at("version").get<int>();
        if (version != kCheckpointVersion) {
            throw FormatError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                              std::to_string(kCheckpointVersion) + ")");
        }
        c.mode = parse_mode(m.at("mode").get<std::string>());
        c.obs_len = m.at("T_o").get<int>();
        c.horizon = m.at("T_f").get<int>();
        const int stages = m.at("stages").get<int>();
        if (stages != c.horizon) {
            throw FormatError("manifest T_f (" + std::to_string(c.horizon) + ") does not match stage count (" +
                              std::to_string(stages) + ")");
        }
        c.cond_dim = m.at("cond_dim").get<Index>();
        c.hidden = m.at("hidden").get<Index>();
        c.depth = m.at("depth").get<int>();
        c.flow_layers = m.at("flow_layers").get<int>();
        c.social_pooling = m.at("social_pooling").get<bool>();
        c.data_scale = m.at("data_scale").get<double>();
        c.seed = m.at("seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw FormatError("corrupt manifest '" + manifest_path.string() + "': " + e.what());
    } catch (const ShapeError& e) {
        throw FormatError("corrupt manifest '" + manifest_path.string() + "': " + e.what());
    }
    FlowChainModel model = make_model(c);
    load_parameters(model.params, dir / "params.bin");
    return model;
}

}  // namespace flowchain
