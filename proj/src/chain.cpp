#include "flowchain/chain.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>

namespace flowchain {

namespace {

constexpr Index kChunk = 512;

std::uint64_t splitmix64(std::uint64_t& state)
{
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Standard normal pair from a counter-based stream (Box-Muller).
void normal_pair(std::uint64_t& state, double& a, double& b)
{
    const double u1 = (static_cast<double>(splitmix64(state) >> 11) + 0.5) * 0x1.0p-53;
    const double u2 = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    a = r * std::cos(2.0 * std::numbers::pi * u2);
    b = r * std::sin(2.0 * std::numbers::pi * u2);
}

/// Row-wise log N(p; mean, diag sigma^2).
Vector gaussian_rows(const Matrix& p, const Vec2& mean, const Vec2& sigma)
{
    const Eigen::ArrayXd dx = (p.col(0).array() - mean.x()) / sigma.x();
    const Eigen::ArrayXd dy = (p.col(1).array() - mean.y()) / sigma.y();
    const double norm = -std::log(sigma.x()) - std::log(sigma.y()) - std::log(2.0 * std::numbers::pi);
    return (norm - 0.5 * (dx.square() + dy.square())).matrix();
}

Matrix center_row(const Vec2& c)
{
    Matrix m(1, 2);
    m << c.x(), c.y();
    return m;
}

void check_stage(const Flowed<Matrix>& r, int stage, const char* what)
{
    if (!all_finite(r.points) || !all_finite(r.log_det)) {
        throw NumericError(std::string(what) + ": stage " + std::to_string(stage) + " produced non-finite values");
    }
}

Stage make_stage(ParameterSet& params, const ModelConfig& cfg, int n)
{
    const std::string prefix = "stage" + std::to_string(n);
    switch (cfg.mode) {
    case FlowMode::bijective:
        return make_bijective_flow(params, prefix, LayerKind::coupling, cfg.flow_layers, {cfg.cond_dim}, cfg.hidden,
                                   cfg.depth);
    case FlowMode::maf:
        return make_cif(params, prefix, LayerKind::maf, cfg.flow_layers, cfg.cond_dim, cfg.hidden, cfg.depth);
    case FlowMode::cif:
        break;
    }
    return make_cif(params, prefix, LayerKind::coupling, cfg.flow_layers, cfg.cond_dim, cfg.hidden, cfg.depth);
}

void init_stage(ParameterSet& params, const Stage& stage, Rng& rng, double gain)
{
    if (const auto* cif = std::get_if<CifLayer>(&stage)) init_cif(params, *cif, rng, gain);
    else init_flow(params, std::get<BijectiveFlow>(stage), rng, gain);
}

}  // namespace

std::string to_string(FlowMode mode)
{
    switch (mode) {
    case FlowMode::cif: return "cif";
    case FlowMode::bijective: return "bijective";
    case FlowMode::maf: return "maf";
    }
    return "cif";
}

FlowMode parse_mode(const std::string& name)
{
    if (name == "cif") return FlowMode::cif;
    if (name == "bijective") return FlowMode::bijective;
    if (name == "maf") return FlowMode::maf;
    throw ShapeError("unknown mode '" + name + "' (expected cif, bijective or maf)");
}

Vec2 FlowChainModel::sigma() const
{
    const Matrix& ls = params[log_sigma];
    return Vec2(std::exp(ls(0, 0)), std::exp(ls(0, 1)));
}

FlowChainModel make_model(const ModelConfig& config)
{
    if (config.horizon < 1 || config.obs_len < 2 || config.cond_dim < 1 || config.hidden < 1 || config.depth < 1 ||
        config.flow_layers < 1) {
        throw ShapeError("invalid model configuration");
    }
    if (!(config.init_sigma > 0.0) || !(config.data_scale > 0.0)) {
        throw ShapeError("init_sigma and data_scale must be positive");
    }
    FlowChainModel model;
    model.config = config;
    model.encoder_params.begin = model.params.size();
    model.encoder = make_encoder(model.params, config.cond_dim, config.social_pooling);
    model.encoder_params.end = model.params.size();
    model.log_sigma = model.params.add("sigma.log", Matrix::Constant(1, 2, std::log(config.init_sigma)));
    for (int n = 1; n <= config.horizon; ++n) {
        ParamRange range;
        range.begin = model.params.size();
        model.stages.push_back(make_stage(model.params, config, n));
        range.end = model.params.size();
        model.stage_params.push_back(range);
    }
    Rng rng(config.seed);
    init_encoder(model.params, model.encoder, rng);
    for (const Stage& s : model.stages) init_stage(model.params, s, rng, 0.0);
    return model;
}

void randomize_flows(FlowChainModel& model, Rng& rng, double output_gain)
{
    for (const Stage& s : model.stages) init_stage(model.params, s, rng, output_gain);
}

const Matrix& DensityEstimate::points(int step) const
{
    if (step < 1 || step > horizon()) throw ShapeError("step " + std::to_string(step) + " out of range");
    return (*positions)[static_cast<std::size_t>(step - 1)];
}

const Vector& DensityEstimate::log_density_at(int step) const
{
    if (step < first_step || step > horizon()) {
        throw ShapeError("no density for step " + std::to_string(step) + " (valid steps " +
                         std::to_string(first_step) + ".." + std::to_string(horizon()) + ")");
    }
    return log_density[static_cast<std::size_t>(step - first_step)];
}

Prediction predict(const FlowChainModel& model, const RowVector& cond, const Vec2& x_t, Index samples, Rng& rng)
{
    if (samples < 1) throw ShapeError("predict: sample count must be >= 1");
    if (cond.size() != model.config.cond_dim) throw ShapeError("predict: condition has wrong dimension");
    const Vec2 sigma = model.sigma();
    if (!sigma.allFinite() || !(sigma.minCoeff() > 0.0)) throw NumericError("predict: sigma is not finite positive");
    const auto steps = static_cast<std::size_t>(model.horizon());

    auto positions = std::make_shared<std::vector<Matrix>>(steps, Matrix(samples, 2));
    auto change = std::make_shared<std::vector<Vector>>(steps, Vector(samples));
    Matrix draws(samples, 2);

    Eval ctx(model.params);
    const Matrix c = cond;
    const Matrix none;
    for (Index b = 0; b < samples; b += kChunk) {
        const Index m = std::min(kChunk, samples - b);
        Matrix x = standard_normal(rng, m, 2);
        x.col(0) = x.col(0) * sigma.x() + Vector::Constant(m, x_t.x());
        x.col(1) = x.col(1) * sigma.y() + Vector::Constant(m, x_t.y());
        draws.middleRows(b, m) = x;
        for (std::size_t n = 0; n < steps; ++n) {
            const Stage& stage = model.stages[n];
            const Matrix eps = uses_index(stage) ? standard_normal(rng, m, kIndexDim) : none;
            Flowed<Matrix> r = stage_forward(ctx, stage, x, c, eps);
            check_stage(r, static_cast<int>(n + 1), "predict");
            (*positions)[n].middleRows(b, m) = r.points;
            (*change)[n].segment(b, m) = -r.log_det.col(0);
            x = std::move(r.points);
        }
    }

    Prediction out;
    out.estimate.first_step = 1;
    out.estimate.anchor = x_t;
    out.estimate.cond = cond;
    Vector acc = gaussian_rows(draws, x_t, sigma);
    out.estimate.log_density.reserve(steps);
    for (std::size_t n = 0; n < steps; ++n) {
        acc += (*change)[n];
        out.estimate.log_density.push_back(acc);
    }
    out.estimate.positions = positions;
    out.cache.positions = positions;
    out.cache.density_change = change;
    out.cache.base_draws = std::move(draws);
    out.cache.sigma = sigma;
    out.cache.anchor = x_t;
    out.cache.updates = 0;
    return out;
}

Prediction update(const FlowChainModel& model, const MotionTrendCache& cache, const Vec2& x_new)
{
    const int k = cache.updates;
    const int steps = static_cast<int>(cache.positions->size());
    if (k + 1 >= steps) {
        throw ShapeError("update: horizon exhausted after " + std::to_string(k) +
                         " updates; run predict from the new observation instead");
    }
    if (!x_new.allFinite()) throw NumericError("update: new position is not finite");
    (void)model;

    Prediction out;
    out.cache = cache;
    out.cache.updates = k + 1;
    out.cache.anchor = x_new;

    const std::vector<Vector>& change = *cache.density_change;
    Vector acc = gaussian_rows((*cache.positions)[static_cast<std::size_t>(k)], x_new, cache.sigma);
    out.estimate.first_step = k + 2;
    out.estimate.positions = cache.positions;
    out.estimate.anchor = x_new;
    out.estimate.log_density.reserve(static_cast<std::size_t>(steps - k - 1));
    for (int n = k + 2; n <= steps; ++n) {
        acc += change[static_cast<std::size_t>(n - 1)];
        out.estimate.log_density.push_back(acc);
    }
    return out;
}

Vector evaluate_log_density(const FlowChainModel& model, const RowVector& cond, const Vec2& x_t,
                            const Matrix& points, int step, int updates)
{
    if (points.cols() != 2) throw ShapeError("evaluate_log_density: points must have 2 columns");
    if (cond.size() != model.config.cond_dim) throw ShapeError("evaluate_log_density: condition has wrong dimension");
    if (step < 1 || step > model.horizon()) throw ShapeError("step " + std::to_string(step) + " out of range");
    Eval ctx(model.params);
    const Matrix c = cond;
    const Matrix center = center_row(x_t);
    const auto steps = static_cast<std::size_t>(model.horizon());
    Vector out(points.rows());
    for (Index b = 0; b < points.rows(); b += kChunk) {
        const Index m = std::min(kChunk, points.rows() - b);
        const Matrix chunk = points.middleRows(b, m);
        std::vector<Matrix> eps(steps);
        for (std::size_t n = 0; n < steps; ++n) {
            if (uses_index(model.stages[n])) eps[n].resize(m, kIndexDim);
        }
        for (Index i = 0; i < m; ++i) {
            std::uint64_t state = model.config.seed ^ (0xd1b54a32d192ed03ULL * static_cast<std::uint64_t>(step));
            state ^= std::bit_cast<std::uint64_t>(chunk(i, 0)) + 0x632be59bd9b4e019ULL;
            splitmix64(state);
            state ^= std::bit_cast<std::uint64_t>(chunk(i, 1));
            for (std::size_t n = 0; n < steps; ++n) {
                if (eps[n].size() > 0) normal_pair(state, eps[n](i, 0), eps[n](i, 1));
            }
        }
        const Vector ld =
            chain_log_density(ctx, model, c, chunk, center, step, updates, std::span<const Matrix>(eps)).col(0);
        if (!ld.allFinite()) throw NumericError("evaluate_log_density: non-finite inversion at step " +
                                                std::to_string(step));
        out.segment(b, m) = ld;
    }
    return out;
}

double evaluate_log_density(const FlowChainModel& model, const RowVector& cond, const Vec2& x_t, const Vec2& point,
                            int step, int updates)
{
    return evaluate_log_density(model, cond, x_t, center_row(point), step, updates)(0);
}

std::vector<DensityPoint> density_map(const DensityEstimate& estimate, int step)
{
    const Matrix& p = estimate.points(step);
    const Vector& ld = estimate.log_density_at(step);
    std::vector<DensityPoint> out(static_cast<std::size_t>(p.rows()));
    for (Index s = 0; s < p.rows(); ++s) {
        out[static_cast<std::size_t>(s)] = {Vec2(p(s, 0), p(s, 1)), std::exp(ld(s))};
    }
    return out;
}

std::vector<Matrix> best_trajectories(const DensityEstimate& estimate, Index count)
{
    if (count < 0 || count > estimate.samples()) {
        throw ShapeError("best_trajectories: requested " + std::to_string(count) + " of " +
                         std::to_string(estimate.samples()) + " samples");
    }
    const int steps = estimate.horizon();
    std::vector<Matrix> out(static_cast<std::size_t>(count), Matrix(steps, 2));
    for (int n = 0; n < steps; ++n) {
        const Matrix& p = (*estimate.positions)[static_cast<std::size_t>(n)];
        for (Index s = 0; s < count; ++s) out[static_cast<std::size_t>(s)].row(n) = p.row(s);
    }
    return out;
}

Vec2 normalize_point(const Vec2& world, const Vec2& anchor, double data_scale)
{
    return (world - anchor) / data_scale;
}

Vec2 world_point(const Vec2& model, const Vec2& anchor, double data_scale)
{
    return model * data_scale + anchor;
}

double to_world_log_density(double model_log_density, double data_scale)
{
    return model_log_density - 2.0 * std::log(data_scale);
}

RowVector encode(const FlowChainModel& model, const Scene& scene)
{
    return encode(model.params, model.encoder, scene, model.config.obs_len, model.config.data_scale);
}

}  // namespace flowchain
