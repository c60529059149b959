#include <doctest.h>

#include <fstream>
#include <numbers>

#include <json.hpp>

#include "flowchain/adam.hpp"
#include "flowchain/data.hpp"
#include "flowchain/train.hpp"
#include "helpers.hpp"

using namespace flowchain;

namespace {

std::vector<Scene> simfork_scenes(int count, std::uint64_t seed)
{
    SimforkConfig cfg;
    cfg.trajectories = count;
    Rng rng(seed);
    const SimforkData data = gen_simfork(cfg, rng);
    std::vector<Scene> out;
    for (const Matrix& t : data.trajectories) out.push_back(single_agent_scene(t, cfg.obs_len));
    return out;
}

ModelConfig tiny_config(FlowMode mode)
{
    ModelConfig cfg;
    cfg.mode = mode;
    cfg.cond_dim = 16;
    cfg.hidden = 16;
    cfg.depth = 2;
    cfg.flow_layers = 2;
    cfg.seed = 11;
    return cfg;
}

std::vector<double> flat(const ParameterSet& p)
{
    std::vector<double> out;
    for (std::size_t i = 0; i < p.size(); ++i) out.insert(out.end(), p[i].data(), p[i].data() + p[i].size());
    return out;
}

}  // namespace

TEST_CASE("identity chain with ground truth at x_t and unit sigma costs log(2 pi) per stage")
{
    ModelConfig cfg = tiny_config(FlowMode::cif);
    cfg.init_sigma = 1.0;
    const FlowChainModel m = make_model(cfg);
    const std::vector<Scene> scenes = {single_agent_scene(Matrix::Constant(20, 2, 2.5), 8),
                                       single_agent_scene(Matrix::Constant(20, 2, -1.0), 8)};
    const Batch batch = make_batch(m, scenes);
    Rng rng(1);
    const LossNoise noise = draw_loss_noise(m, batch.size(), rng);
    const StageLosses loss = nll_loss(m, batch, noise);
    const double expected = std::log(2.0 * std::numbers::pi);
    REQUIRE(loss.per_stage.size() == 12);
    for (double l : loss.per_stage) CHECK(std::abs(l - expected) < 1e-12);
    CHECK(std::abs(loss.total - 12.0 * expected) < 1e-11);

    Gradients g;
    const StageLosses same = nll_loss_and_grad(m, batch, noise, g);
    CHECK(std::abs(same.total - loss.total) < 1e-12);
}

TEST_CASE("gradients match finite differences of the own-stage objective")
{
    for (FlowMode mode : {FlowMode::cif, FlowMode::bijective, FlowMode::maf}) {
        CAPTURE(to_string(mode));
        ModelConfig cfg = tiny_config(mode);
        cfg.horizon = 4;
        cfg.data_scale = 4.0;
        cfg.init_sigma = 0.5;
        FlowChainModel m = make_model(cfg);
        Rng rng(21);
        randomize_flows(m, rng, 0.3);
        const std::vector<Scene> scenes = simfork_scenes(6, 22);
        std::vector<Scene> cut;
        for (const Scene& s : scenes) {
            Scene c = s;
            c.agents[0].positions.conservativeResize(12, 2);
            c.agents[0].frames.resize(12);
            cut.push_back(c);
        }
        const Batch batch = make_batch(m, cut);
        const LossNoise noise = draw_loss_noise(m, batch.size(), rng);
        Gradients grads;
        nll_loss_and_grad(m, batch, noise, grads);

        struct Pick {
            ParamId id;
            Index entry;
            int stage;  // 0 for shared parameters
        };
        std::vector<Pick> picks;
        std::uniform_int_distribution<int> stage_of(1, cfg.horizon);
        auto random_entry = [&](ParamId id) {
            return std::uniform_int_distribution<Index>(0, m.params[id].size() - 1)(rng);
        };
        for (int k = 0; k < 5; ++k) {
            const int s = stage_of(rng);
            const ParamRange r = m.stage_params[static_cast<std::size_t>(s - 1)];
            const auto id = std::uniform_int_distribution<ParamId>(r.begin, r.end - 1)(rng);
            picks.push_back({id, random_entry(id), s});
        }
        for (int k = 0; k < 3; ++k) {
            const auto id = std::uniform_int_distribution<ParamId>(m.encoder_params.begin, m.encoder_params.end - 1)(rng);
            picks.push_back({id, random_entry(id), 0});
        }
        picks.push_back({m.log_sigma, 0, 0});
        picks.push_back({m.log_sigma, 1, 0});
        REQUIRE(picks.size() == 10);

        for (const Pick& p : picks) {
            CAPTURE(m.params.name(p.id));
            auto objective = [&] {
                const StageLosses l = nll_loss(m, batch, noise);
                return p.stage == 0 ? l.total : l.per_stage[static_cast<std::size_t>(p.stage - 1)];
            };
            double& x = m.params[p.id].data()[p.entry];
            const double fd = testing::central_diff(objective, x, 1e-5);
            const Matrix& g = grads.params[p.id];
            const double analytic = g.size() ? g.data()[p.entry] : 0.0;
            CHECK(testing::rel_err(analytic, fd, 1e-6) < 1e-3);
        }
    }
}

TEST_CASE("zeroing one stage's loss leaves the other stages' flow gradients unchanged")
{
    ModelConfig cfg = tiny_config(FlowMode::cif);
    cfg.data_scale = 4.0;
    FlowChainModel m = make_model(cfg);
    Rng rng(31);
    randomize_flows(m, rng, 0.3);
    const Batch batch = make_batch(m, simfork_scenes(8, 32));
    const LossNoise noise = draw_loss_noise(m, batch.size(), rng);
    Gradients full;
    nll_loss_and_grad(m, batch, noise, full);
    for (int n : {1, 6, 12}) {
        std::vector<double> w(12, 1.0);
        w[static_cast<std::size_t>(n - 1)] = 0.0;
        Gradients part;
        nll_loss_and_grad(m, batch, noise, part, w);
        for (int s = 1; s <= 12; ++s) {
            const ParamRange r = m.stage_params[static_cast<std::size_t>(s - 1)];
            for (ParamId id = r.begin; id < r.end; ++id) {
                if (s == n) {
                    CHECK((part.params[id].size() == 0 || part.params[id].isZero(0.0)));
                } else {
                    CHECK(part.params[id] == full.params[id]);
                }
            }
        }
        CHECK((part.params[m.log_sigma] - full.params[m.log_sigma]).norm() > 0.0);
    }
    CHECK_THROWS_AS(nll_loss_and_grad(m, batch, noise, full, std::vector<double>(3, 1.0)), ShapeError);
}

TEST_CASE("200 Adam steps on 500 Simfork trajectories cut the NLL by at least 20%")
{
    const std::vector<Scene> scenes = simfork_scenes(500, 41);
    ModelConfig cfg = tiny_config(FlowMode::cif);
    cfg.data_scale = estimate_data_scale(scenes, cfg.obs_len);
    FlowChainModel m = make_model(cfg);
    const double before = validation_nll(m, scenes, 128, 42);

    AdamState adam(m.params, 1e-3);
    Rng rng(43);
    std::uniform_int_distribution<std::size_t> pick(0, scenes.size() - 1);
    std::vector<Scene> chunk(128);
    for (int step = 0; step < 200; ++step) {
        for (Scene& s : chunk) s = scenes[pick(rng)];
        const Batch batch = make_batch(m, chunk);
        const LossNoise noise = draw_loss_noise(m, batch.size(), rng);
        Gradients g;
        nll_loss_and_grad(m, batch, noise, g);
        adam_step(adam, m.params, g);
    }
    const double after = validation_nll(m, scenes, 128, 42);
    MESSAGE("total NLL " << before << " -> " << after);
    CHECK(after < 0.8 * before);
}

TEST_CASE("a single trajectory can be overfit")
{
    const std::vector<Scene> one = {simfork_scenes(1, 51)[0]};
    ModelConfig cfg = tiny_config(FlowMode::bijective);
    FlowChainModel m = make_model(cfg);
    const Batch batch = make_batch(m, one);
    auto per_step = [&] {
        const RowVector c = encode(m, one[0]);
        Vector out(12);
        for (int n = 1; n <= 12; ++n) {
            const Vec2 gt(batch.targets[static_cast<std::size_t>(n - 1)](0, 0),
                          batch.targets[static_cast<std::size_t>(n - 1)](0, 1));
            out(n - 1) = evaluate_log_density(m, c, Vec2::Zero(), gt, n);
        }
        return out;
    };
    const Vector before = per_step();
    AdamState adam(m.params, 1e-3);
    Rng rng(52);
    for (int step = 0; step < 2000; ++step) {
        Gradients g;
        nll_loss_and_grad(m, batch, draw_loss_noise(m, 1, rng), g);
        adam_step(adam, m.params, g);
    }
    const Vector gain = per_step() - before;
    MESSAGE("smallest per-step gain " << gain.minCoeff() << " nats");
    CHECK(gain.minCoeff() >= 5.0);
}

TEST_CASE("an epoch over 128k items runs k batches")
{
    const std::vector<Scene> scenes = simfork_scenes(384, 61);
    TrainConfig tc;
    tc.epochs = 2;
    tc.validation_fraction = 0.0;
    tc.seed = 3;
    TrainReport rep;
    train(scenes, tiny_config(FlowMode::bijective), tc, &rep);
    REQUIRE(rep.epochs.size() == 2);
    CHECK(rep.epochs[0].batches == 3);
    CHECK(rep.epochs[1].batches == 3);
    CHECK(rep.train_items == 384);

    tc.batch_size = 100;
    train(scenes, tiny_config(FlowMode::bijective), tc, &rep);
    CHECK(rep.epochs[0].batches == 4);
}

TEST_CASE("training is bit-reproducible for a fixed seed")
{
    const std::vector<Scene> scenes = simfork_scenes(150, 71);
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 32;
    tc.learning_rate = 1e-3;
    tc.seed = 9;
    const FlowChainModel a = train(scenes, tiny_config(FlowMode::cif), tc);
    const FlowChainModel b = train(scenes, tiny_config(FlowMode::cif), tc);
    CHECK(flat(a.params) == flat(b.params));
    tc.seed = 10;
    const FlowChainModel c = train(scenes, tiny_config(FlowMode::cif), tc);
    CHECK(flat(a.params) != flat(c.params));
}

TEST_CASE("the returned model is the best-validation one")
{
    const std::vector<Scene> scenes = simfork_scenes(200, 81);
    TrainConfig tc;
    tc.epochs = 5;
    tc.batch_size = 32;
    tc.learning_rate = 3e-3;
    tc.patience = 0;
    tc.validation_fraction = 0.0;
    tc.seed = 4;
    ModelConfig mc = tiny_config(FlowMode::bijective);
    mc.data_scale = estimate_data_scale(scenes, mc.obs_len);
    TrainReport rep;
    const FlowChainModel m = train(scenes, mc, tc, &rep);
    const double returned = validation_nll(m, scenes, tc.batch_size, tc.seed);
    CHECK(returned == rep.best_validation_nll);
    CHECK(returned <= rep.epochs.back().validation_nll);
    for (const EpochRecord& r : rep.epochs) CHECK(returned <= r.validation_nll);
    CHECK(rep.best_validation_nll < rep.initial_validation_nll);
}

TEST_CASE("divergence aborts with the stage losses")
{
    TrainConfig tc;
    tc.epochs = 1;
    tc.divergence_threshold = 1.0;
    tc.validation_fraction = 0.0;
    try {
        train(simfork_scenes(20, 91), tiny_config(FlowMode::bijective), tc);
        FAIL("expected divergence");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("per-stage") != std::string::npos);
    }
    CHECK_THROWS_AS(train({}, tiny_config(FlowMode::cif), TrainConfig{}), ShapeError);
}

TEST_CASE("checkpoints round-trip bit-exactly")
{
    for (FlowMode mode : {FlowMode::cif, FlowMode::bijective, FlowMode::maf}) {
        ModelConfig cfg = tiny_config(mode);
        cfg.data_scale = 0.7;
        cfg.social_pooling = mode == FlowMode::maf;
        FlowChainModel m = make_model(cfg);
        Rng init(101);
        randomize_flows(m, init, 0.3);
        const auto dir = testing::scratch_dir("ckpt_" + to_string(mode));
        save_checkpoint(m, dir);
        const FlowChainModel back = load_checkpoint(dir);
        CHECK(back.config.mode == mode);
        CHECK(back.config.social_pooling == cfg.social_pooling);
        CHECK(back.config.data_scale == cfg.data_scale);
        CHECK(flat(back.params) == flat(m.params));

        const Scene s = simfork_scenes(1, 102)[0];
        Rng r1(7), r2(7);
        const Prediction a = predict(m, encode(m, s), Vec2::Zero(), 50, r1);
        const Prediction b = predict(back, encode(back, s), Vec2::Zero(), 50, r2);
        for (int n = 1; n <= 12; ++n) {
            CHECK(a.estimate.points(n) == b.estimate.points(n));
            CHECK(a.estimate.log_density_at(n) == b.estimate.log_density_at(n));
        }
    }
}

TEST_CASE("damaged checkpoints are rejected")
{
    const FlowChainModel m = make_model(tiny_config(FlowMode::cif));
    auto fresh = [&](const std::string& name) {
        const auto dir = testing::scratch_dir(name);
        save_checkpoint(m, dir);
        return dir;
    };
    auto rewrite_manifest = [](const std::filesystem::path& dir, const std::string& key, const nlohmann::json& v) {
        std::ifstream in(dir / "manifest.json");
        nlohmann::json j = nlohmann::json::parse(in);
        in.close();
        j[key] = v;
        std::ofstream(dir / "manifest.json") << j.dump();
    };

    const auto truncated = fresh("ckpt_truncated");
    const auto size = std::filesystem::file_size(truncated / "params.bin");
    std::filesystem::resize_file(truncated / "params.bin", size / 2);
    CHECK_THROWS_AS(load_checkpoint(truncated), FormatError);

    const auto stages = fresh("ckpt_stages");
    rewrite_manifest(stages, "stages", 11);
    CHECK_THROWS_AS(load_checkpoint(stages), FormatError);

    const auto version = fresh("ckpt_version");
    rewrite_manifest(version, "version", kCheckpointVersion + 1);
    CHECK_THROWS_AS(load_checkpoint(version), FormatError);

    const auto mode = fresh("ckpt_mode");
    rewrite_manifest(mode, "mode", "glow");
    CHECK_THROWS_AS(load_checkpoint(mode), FormatError);

    const auto shape = fresh("ckpt_shape");
    rewrite_manifest(shape, "hidden", 17);
    CHECK_THROWS_AS(load_checkpoint(shape), FormatError);

    CHECK_THROWS_AS(load_checkpoint(testing::scratch_dir("ckpt_empty")), FormatError);
}
