#include <doctest.h>

#include <numbers>

#include "flowchain/flows.hpp"
#include "helpers.hpp"

using namespace flowchain;
using testing::rel_err;

namespace {

constexpr Index kCond = 3;

RowVector random_cond(Rng& rng) { return testing::uniform_matrix(rng, 1, kCond); }

Vec2 random_point(Rng& rng, double half_width)
{
    std::uniform_real_distribution<double> u(-half_width, half_width);
    return {u(rng), u(rng)};
}

// Raw network output that the soft clamp maps to `value`.
double unclamped(double value) { return kScaleClamp * std::atanh(value / kScaleClamp); }

Vector std_normal_logpdf(const Matrix& z)
{
    return (-0.5 * z.rowwise().squaredNorm()).array() - std::log(2.0 * std::numbers::pi);
}

// log|det| of the 2x2 central-difference jacobian of map at x.
double numeric_logdet(const std::function<Vec2(const Vec2&)>& map, const Vec2& x, double h = 1e-5)
{
    Eigen::Matrix2d j;
    for (int k = 0; k < 2; ++k) {
        Vec2 up = x, down = x;
        up(k) += h;
        down(k) -= h;
        j.col(k) = (map(up) - map(down)) / (2.0 * h);
    }
    return std::log(std::abs(j.determinant()));
}

// Zeroes the first-layer weight rows that read the index variable, so the
// inner flow ignores u.
void ignore_index(ParameterSet& params, const BijectiveFlow& flow)
{
    auto cut = [&](const Mlp& mlp) {
        Matrix& w = params[mlp.weights[0]];
        w.bottomRows(kIndexDim).setZero();
    };
    for (const FlowLayer& layer : flow.layers) {
        if (const auto* c = std::get_if<CouplingLayer>(&layer)) {
            cut(c->scale);
            cut(c->shift);
        } else {
            const auto& m = std::get<MafLayer>(layer);
            cut(m.scale_first);
            cut(m.shift_first);
            cut(m.scale_second);
            cut(m.shift_second);
        }
    }
}

struct RandomCif {
    ParameterSet params;
    CifLayer layer;
};

RandomCif random_cif(std::uint64_t seed, LayerKind kind, double gain)
{
    RandomCif r;
    r.layer = make_cif(r.params, "cif", kind, 3, kCond, 16, 2);
    Rng rng(seed);
    init_cif(r.params, r.layer, rng, gain);
    return r;
}

}  // namespace

TEST_CASE("coupling with zero networks is the identity")
{
    ParameterSet params;
    const CouplingLayer layer = make_coupling(params, "c", 0, {kCond}, 8, 2);
    Rng rng(1);
    const Vec2 x = random_point(rng, 5.0);
    const RowVector c = random_cond(rng);
    const TransformResult f = coupling_forward(params, layer, x, c);
    const TransformResult b = coupling_inverse(params, layer, x, c);
    CHECK(f.point == x);
    CHECK(f.log_det == 0.0);
    CHECK(b.point == x);
    CHECK(b.log_det == 0.0);
}

TEST_CASE("coupling with constant scale ln 2 doubles the moved coordinate")
{
    ParameterSet params;
    const CouplingLayer layer = make_coupling(params, "c", 0, {kCond}, 8, 2);
    params[layer.scale.biases.back()](0, 0) = unclamped(std::log(2.0));
    Rng rng(2);
    const Vec2 x(0.7, -1.3);
    const TransformResult f = coupling_forward(params, layer, x, random_cond(rng));
    CHECK(f.point.x() == x.x());
    CHECK(f.point.y() == doctest::Approx(2.0 * x.y()).epsilon(1e-12));
    CHECK(f.log_det == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("maf with zero networks is the identity and constant scale closes form")
{
    ParameterSet params;
    const MafLayer layer = make_maf(params, "m", 0, {kCond}, 8, 2);
    Rng rng(3);
    const Vec2 x(1.5, -0.25);
    const RowVector c = random_cond(rng);
    CHECK(maf_forward(params, layer, x, c).point == x);
    CHECK(maf_forward(params, layer, x, c).log_det == 0.0);

    params[layer.scale_second.biases.back()](0, 0) = unclamped(std::log(2.0));
    const TransformResult f = maf_forward(params, layer, x, c);
    CHECK(f.point.x() == x.x());
    CHECK(f.point.y() == doctest::Approx(2.0 * x.y()).epsilon(1e-12));
    CHECK(f.log_det == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("bijective layers: roundtrip, antisymmetry and jacobian oracle")
{
    for (LayerKind kind : {LayerKind::coupling, LayerKind::maf}) {
        for (int trial = 0; trial < 10; ++trial) {
            ParameterSet params;
            const BijectiveFlow flow = make_bijective_flow(params, "f", kind, 3, {kCond}, 16, 3);
            Rng rng(100 + static_cast<std::uint64_t>(trial));
            init_flow(params, flow, rng, 0.5);
            const RowVector c = random_cond(rng);
            for (int p = 0; p < 10; ++p) {
                const Vec2 x = random_point(rng, p < 5 ? 3.0 : 100.0);
                const TransformResult f = flow_forward(params, flow, x, c);
                const TransformResult b = flow_inverse(params, flow, f.point, c);
                CHECK((b.point - x).lpNorm<Eigen::Infinity>() < 1e-9);
                CHECK(std::abs(f.log_det + b.log_det) < 1e-9);
                if (p < 5) {
                    const double fd = numeric_logdet(
                        [&](const Vec2& v) { return flow_forward(params, flow, v, c).point; }, x);
                    CHECK(rel_err(f.log_det, fd, 1e-3) < 1e-4);
                }
            }
        }
    }
}

TEST_CASE("single coupling and maf layers agree with their numerical jacobians")
{
    ParameterSet params;
    const CouplingLayer cl = make_coupling(params, "c", 1, {kCond}, 16, 3);
    const MafLayer ml = make_maf(params, "m", 1, {kCond}, 16, 3);
    Rng rng(9);
    for (const Mlp* m : {&cl.scale, &cl.shift, &ml.scale_first, &ml.shift_first, &ml.scale_second, &ml.shift_second})
        init_mlp(params, *m, rng, 1.0);
    const RowVector c = random_cond(rng);
    for (int p = 0; p < 20; ++p) {
        const Vec2 x = random_point(rng, 2.0);
        const double cf = numeric_logdet([&](const Vec2& v) { return coupling_forward(params, cl, v, c).point; }, x);
        const double mf = numeric_logdet([&](const Vec2& v) { return maf_forward(params, ml, v, c).point; }, x);
        CHECK(rel_err(coupling_forward(params, cl, x, c).log_det, cf, 1e-3) < 1e-4);
        CHECK(rel_err(maf_forward(params, ml, x, c).log_det, mf, 1e-3) < 1e-4);
        const Vec2 y = maf_forward(params, ml, x, c).point;
        CHECK((maf_inverse(params, ml, y, c).point - x).lpNorm<Eigen::Infinity>() < 1e-9);
    }
}

TEST_CASE("degenerate cif reproduces the inner bijection")
{
    for (LayerKind kind : {LayerKind::coupling, LayerKind::maf}) {
        ParameterSet params;
        const CifLayer layer = make_cif(params, "cif", kind, 3, kCond, 16, 2);
        Rng rng(17);
        init_flow(params, layer.inner, rng, 0.5);
        ignore_index(params, layer.inner);
        // prior and posterior stay at zero output: standard normal
        const RowVector c = random_cond(rng);
        for (int p = 0; p < 5; ++p) {
            const Vec2 z = random_point(rng, 2.0);
            Eval ev(params);
            const Matrix blocks[2] = {Matrix(c), Matrix::Zero(1, kIndexDim)};
            const Flowed<Matrix> ref = flow_forward(ev, layer.inner, to_row(z), std::span<const Matrix>(blocks));

            const TransformResult s = cif_sample(params, layer, z, c, rng);
            CHECK((s.point - Vec2(ref.points(0, 0), ref.points(0, 1))).norm() < 1e-12);
            CHECK(std::abs(s.log_det - ref.log_det(0, 0)) < 1e-12);

            const TransformResult inv = cif_inverse_logdensity(params, layer, s.point, c, rng);
            CHECK((inv.point - z).norm() < 1e-9);
            CHECK(std::abs(inv.log_det + ref.log_det(0, 0)) < 1e-12);
        }
    }
}

TEST_CASE("cif sampling is deterministic under a fixed seed")
{
    auto r = random_cif(5, LayerKind::coupling, 0.5);
    Rng a(77), b(77);
    const RowVector c = RowVector::Constant(kCond, 0.2);
    const TransformResult x = cif_sample(r.params, r.layer, Vec2(0.3, 0.1), c, a);
    const TransformResult y = cif_sample(r.params, r.layer, Vec2(0.3, 0.1), c, b);
    CHECK(x.point == y.point);
    CHECK(x.log_det == y.log_det);
}

TEST_CASE("cif shared-index roundtrip recovers z")
{
    auto r = random_cif(6, LayerKind::coupling, 0.8);
    Rng rng(8);
    Eval ev(r.params);
    const Matrix c = random_cond(rng);
    const Matrix z = testing::uniform_matrix(rng, 50, 2, -3, 3);
    const Matrix u = standard_normal(rng, 50, kIndexDim);
    const Flowed<Matrix> y = cif_forward_with_index(ev, r.layer, z, c, u);
    const Flowed<Matrix> back = cif_inverse_with_index(ev, r.layer, y.points, c, u);
    CHECK((back.points - z).lpNorm<Eigen::Infinity>() < 1e-9);
}

TEST_CASE("cif marginal density: importance sampling against quadrature over the index")
{
    auto r = random_cif(31, LayerKind::coupling, 0.4);
    Rng rng(32);
    const RowVector c = random_cond(rng);
    const Vec2 x(0.4, -0.6);

    // Quadrature oracle: p(x) = integral over u of N(z(x,u)) p(u | z) |dz/dx| du.
    Eval ev(r.params);
    const int n = 401;
    const double lo = -8.0, hi = 8.0, du = (hi - lo) / (n - 1);
    Matrix u(static_cast<Index>(n) * n, 2);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) u.row(i * n + j) << lo + i * du, lo + j * du;
    }
    const Matrix xs = to_row(x).replicate(u.rows(), 1);
    const Matrix cm = c;
    const Matrix blocks[2] = {cm, u};
    const Flowed<Matrix> inner = flow_inverse(ev, r.layer.inner, xs, std::span<const Matrix>(blocks));
    const IndexGaussian<Matrix> prior = index_gaussian(ev, r.layer.prior, inner.points, cm);
    const Vector log_integrand = std_normal_logpdf(inner.points) + inner.log_det.col(0) +
                                 diag_gaussian_logpdf(u, prior.mean, prior.log_std).col(0);
    const double peak = log_integrand.maxCoeff();
    // trapezoid weights vanish at the (negligible) border; interior sum suffices
    const double quad = std::exp(peak) * (log_integrand.array() - peak).exp().sum() * du * du;

    Rng big(1), small(2);
    const double iw_big = std::exp(cif_log_density_iw(r.params, r.layer, x, c, std_normal_logpdf, 1000000, big));
    const double iw_small = std::exp(cif_log_density_iw(r.params, r.layer, x, c, std_normal_logpdf, 10000, small));
    MESSAGE("quadrature " << quad << ", iw 1e6 " << iw_big << ", iw 1e4 " << iw_small);
    CHECK(rel_err(iw_big, quad) < 0.01);
    CHECK(rel_err(iw_small, iw_big) < 0.02);

    // Single-sample bound: mean over 1e3 draws <= exact + 3 standard errors.
    Rng draws(3);
    Vector bound(1000);
    for (Index k = 0; k < bound.size(); ++k) {
        const TransformResult t = cif_inverse_logdensity(r.params, r.layer, x, c, draws);
        bound(k) = std_normal_logpdf(to_row(t.point))(0) + t.log_det;
    }
    const double mean = bound.mean();
    const double se = std::sqrt((bound.array() - mean).square().sum() / (bound.size() - 1) / bound.size());
    CHECK(mean <= std::log(iw_big) + 3.0 * se);
}
