#include <doctest.h>

#include <numbers>

#include "../common/lp_oracle.hpp"
#include "flowchain/metrics.hpp"
#include "helpers.hpp"

using namespace flowchain;
using testing::rel_err;

namespace {

DensityGrid random_grid(Rng& rng, int side, double sparsity)
{
    GridSpec spec;
    spec.width = spec.height = side;
    spec.cell = 0.5;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    DensityGrid g{spec, Matrix::Zero(side, side)};
    for (Index i = 0; i < g.mass.size(); ++i) g.mass.data()[i] = u(rng) < sparsity ? 0.0 : u(rng);
    g.mass(0, 0) += 0.1;
    g.mass /= g.mass.sum();
    return g;
}

double brute_emd(const DensityGrid& a, const DensityGrid& b)
{
    const Index cells = a.mass.size();
    Eigen::MatrixXd cost(cells, cells);
    const int w = a.spec.width;
    for (Index i = 0; i < cells; ++i) {
        for (Index j = 0; j < cells; ++j) {
            const Vec2 d = a.spec.center(static_cast<int>(i / w), static_cast<int>(i % w)) -
                           a.spec.center(static_cast<int>(j / w), static_cast<int>(j % w));
            cost(i, j) = d.norm();
        }
    }
    const Eigen::VectorXd sa = Eigen::Map<const Eigen::VectorXd>(a.mass.data(), cells);
    const Eigen::VectorXd sb = Eigen::Map<const Eigen::VectorXd>(b.mass.data(), cells);
    return oracle::transport_lp(sa, sb, cost);
}

Matrix offset(const Matrix& t, double dx, double dy)
{
    Matrix out = t;
    out.col(0).array() += dx;
    out.col(1).array() += dy;
    return out;
}

}  // namespace

TEST_CASE("ade and fde")
{
    Rng rng(1);
    const Matrix gt = testing::uniform_matrix(rng, 12, 2);
    CHECK(ade(gt, gt) == 0.0);
    CHECK(fde(gt, gt) == 0.0);
    CHECK(ade(offset(gt, 3, 4), gt) == doctest::Approx(5.0));
    CHECK(fde(offset(gt, 3, 4), gt) == doctest::Approx(5.0));

    const Matrix pred = testing::uniform_matrix(rng, 12, 2);
    double direct = 0.0;
    for (Index i = 0; i < 12; ++i) direct += std::hypot(pred(i, 0) - gt(i, 0), pred(i, 1) - gt(i, 1));
    CHECK(ade(pred, gt) == doctest::Approx(direct / 12.0).epsilon(1e-14));
    CHECK(fde(pred, gt) == doctest::Approx(std::hypot(pred(11, 0) - gt(11, 0), pred(11, 1) - gt(11, 1))));
    CHECK_THROWS_AS(ade(pred.topRows(11), gt), ShapeError);
}

TEST_CASE("best of n")
{
    Rng rng(2);
    const Matrix gt = testing::uniform_matrix(rng, 12, 2);
    std::vector<Matrix> cands;
    for (int i = 0; i < 5; ++i) cands.push_back(testing::uniform_matrix(rng, 12, 2));
    const BestOfN one = best_of_n({cands[0]}, gt);
    CHECK(one.ade == ade(cands[0], gt));
    CHECK(one.fde == fde(cands[0], gt));
    double prev_ade = one.ade, prev_fde = one.fde;
    for (std::size_t n = 2; n <= cands.size(); ++n) {
        const BestOfN b = best_of_n(std::vector<Matrix>(cands.begin(), cands.begin() + static_cast<long>(n)), gt);
        CHECK(b.ade <= prev_ade);
        CHECK(b.fde <= prev_fde);
        prev_ade = b.ade;
        prev_fde = b.fde;
    }
    cands.push_back(gt);
    CHECK(best_of_n(cands, gt).ade == 0.0);
    CHECK_THROWS_AS(best_of_n({}, gt), ShapeError);
}

TEST_CASE("rasterizing a point at a cell center fills that cell")
{
    GridSpec spec;
    spec.origin = Vec2(-1.0, 2.0);
    spec.cell = 0.25;
    spec.width = 8;
    spec.height = 6;
    const Vec2 c = spec.center(4, 3);
    Matrix p(1, 2);
    p << c.x(), c.y();
    const DensityGrid g = rasterize(p, spec);
    CHECK(g.mass(4, 3) == 1.0);
    CHECK(g.mass.sum() == 1.0);

    // Translating the points and the grid by whole cells leaves the masses unchanged.
    Rng rng(3);
    const Matrix pts = testing::uniform_matrix(rng, 500, 2, 0.0, 1.5).rowwise() + spec.origin.transpose();
    GridSpec moved = spec;
    moved.origin += Vec2(3 * spec.cell, -2 * spec.cell);
    const Matrix pts_moved = pts.rowwise() + Eigen::RowVector2d(3 * spec.cell, -2 * spec.cell);
    CHECK((rasterize(pts, spec).mass - rasterize(pts_moved, moved).mass).lpNorm<Eigen::Infinity>() < 1e-12);

    Matrix far(1, 2);
    far << 100.0, 100.0;
    CHECK_THROWS_AS(rasterize(far, spec), ShapeError);
}

TEST_CASE("rasterized unit Gaussian on a 6 sigma grid")
{
    GaussianMixture g;
    g.means = {Vec2(0.3, -0.2)};
    g.weights = {1.0};
    g.stddev = 1.0;
    const GridSpec spec = grid_covering(mixture_extent(g, 6.0), 40, 40);
    const DensityGrid d = rasterize(g, spec);
    CHECK(d.mass.sum() == doctest::Approx(1.0).epsilon(1e-12));
    // Midpoint quadrature of the pdf as an independent route to the cell masses.
    double covered = 0.0;
    double worst = 0.0;
    const int sub = 20;
    const double h = spec.cell / sub;
    for (int r = 0; r < 40; ++r) {
        for (int c = 0; c < 40; ++c) {
            const Vec2 lo = spec.center(r, c) - Vec2::Constant(spec.cell / 2);
            double m = 0.0;
            for (int i = 0; i < sub; ++i)
                for (int j = 0; j < sub; ++j) m += std::exp(g.log_pdf(lo + Vec2((j + 0.5) * h, (i + 0.5) * h))) * h * h;
            covered += m;
            worst = std::max(worst, std::abs(m - d.mass(r, c)));
        }
    }
    CHECK(covered == doctest::Approx(1.0).epsilon(0.01));
    CHECK(worst < 1e-4);

    GridSpec tiny = spec;
    tiny.width = tiny.height = 4;
    CHECK_THROWS_AS(rasterize(g, tiny), ShapeError);
}

TEST_CASE("emd basics")
{
    Rng rng(4);
    const DensityGrid a = random_grid(rng, 6, 0.3);
    CHECK(emd(a, a) == doctest::Approx(0.0));

    GridSpec spec;
    spec.width = spec.height = 10;
    spec.cell = 0.5;
    DensityGrid p{spec, Matrix::Zero(10, 10)}, q{spec, Matrix::Zero(10, 10)};
    p.mass(1, 2) = 1.0;
    q.mass(7, 6) = 1.0;
    CHECK(emd(p, q) == doctest::Approx((spec.center(1, 2) - spec.center(7, 6)).norm()).epsilon(1e-12));

    DensityGrid heavy = q;
    heavy.mass(0, 0) = 0.5;
    CHECK_THROWS_AS(emd(p, heavy), ShapeError);
    DensityGrid other = q;
    other.spec.cell = 0.4;
    CHECK_THROWS_AS(emd(p, other), ShapeError);
}

TEST_CASE("emd equals the brute-force transportation LP on random 6x6 grids")
{
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        const DensityGrid a = random_grid(rng, 6, trial % 3 == 0 ? 0.6 : 0.0);
        const DensityGrid b = random_grid(rng, 6, trial % 2 == 0 ? 0.5 : 0.0);
        CHECK(std::abs(emd(a, b) - brute_emd(a, b)) < 1e-6);
    }
}

TEST_CASE("transport on an explicit instance matches the LP and its plan is feasible")
{
    Rng rng(6);
    Vector supply = testing::uniform_matrix(rng, 5, 1, 0.1, 1.0).col(0);
    Vector demand = testing::uniform_matrix(rng, 7, 1, 0.1, 1.0).col(0);
    demand *= supply.sum() / demand.sum();
    const Matrix cost = testing::uniform_matrix(rng, 5, 7, 0.0, 3.0);
    Matrix flow;
    const double v = transport(supply, demand, cost, &flow);
    CHECK(v == doctest::Approx(oracle::transport_lp(supply, demand, cost)).epsilon(1e-9));
    CHECK((flow.rowwise().sum() - supply).lpNorm<Eigen::Infinity>() < 1e-12);
    CHECK((flow.colwise().sum().transpose() - demand).lpNorm<Eigen::Infinity>() < 1e-12);
    CHECK(flow.minCoeff() >= 0.0);
    CHECK((flow.array() * cost.array()).sum() == doctest::Approx(v).epsilon(1e-12));
}

TEST_CASE("emd is symmetric and satisfies the triangle inequality")
{
    Rng rng(7);
    for (int trial = 0; trial < 5; ++trial) {
        const DensityGrid a = random_grid(rng, 5, 0.2);
        const DensityGrid b = random_grid(rng, 5, 0.2);
        const DensityGrid c = random_grid(rng, 5, 0.2);
        CHECK(std::abs(emd(a, b) - emd(b, a)) < 1e-6);
        CHECK(emd(a, c) <= emd(a, b) + emd(b, c) + 1e-6);
    }
}

TEST_CASE("kde matches the direct kernel sum")
{
    Rng rng(8);
    const Matrix samples = testing::uniform_matrix(rng, 300, 2, -2.0, 2.0);
    const Matrix queries = testing::uniform_matrix(rng, 20, 2, -3.0, 3.0);
    const Vector ld = kde_log_density(samples, queries);

    Vec2 sd;
    for (int k = 0; k < 2; ++k) {
        const double mean = samples.col(k).mean();
        sd(k) = std::sqrt((samples.col(k).array() - mean).square().sum() / (samples.rows() - 1));
    }
    const Vec2 h = sd * std::pow(300.0, -1.0 / 6.0);
    CHECK((scott_bandwidth(samples) - h).norm() < 1e-14);
    for (Index q = 0; q < queries.rows(); ++q) {
        double total = 0.0;
        for (Index s = 0; s < samples.rows(); ++s) {
            const double dx = (queries(q, 0) - samples(s, 0)) / h.x();
            const double dy = (queries(q, 1) - samples(s, 1)) / h.y();
            total += std::exp(-0.5 * (dx * dx + dy * dy)) / (2.0 * std::numbers::pi * h.x() * h.y());
        }
        CHECK(rel_err(ld(q), std::log(total / 300.0), 1e-300) < 1e-12);
    }
}

TEST_CASE("kde at a point where the samples coincide")
{
    Matrix samples = Matrix::Zero(1000, 2);
    samples.rowwise() += Eigen::RowVector2d(0.5, 0.5);
    samples.row(999) << 10.5, -9.5;
    const Vec2 h = scott_bandwidth(samples);
    const double expected = std::log(999.0 / 1000.0) - std::log(2.0 * std::numbers::pi * h.x() * h.y());
    CHECK(kde_log_density(samples, Vec2(0.5, 0.5)) == doctest::Approx(expected).epsilon(1e-12));
    CHECK_THROWS_AS(kde_log_density(Matrix(Matrix::Zero(10, 2)), Vec2(0.0, 0.0)), ShapeError);
    CHECK_THROWS_AS(kde_log_density(Matrix(Matrix::Zero(1, 2)), Vec2(0.0, 0.0)), ShapeError);
}

TEST_CASE("kde integrates to one on a wide grid")
{
    Rng rng(9);
    const Matrix samples = standard_normal(rng, 200, 2);
    const GridSpec spec = grid_covering(sample_extent(samples, 8.0), 150, 150);
    Matrix centers(150 * 150, 2);
    for (int r = 0; r < 150; ++r)
        for (int c = 0; c < 150; ++c) centers.row(r * 150 + c) = spec.center(r, c).transpose();
    const double mass = kde_log_density(samples, centers).array().exp().sum() * spec.cell * spec.cell;
    CHECK(mass == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("mean step metrics")
{
    CHECK(mean_step_metrics({{2.5, 2.5, 2.5}, {2.5, 2.5}}) == 2.5);
    CHECK(mean_step_metrics({{4.0}}) == 4.0);
    CHECK(mean_step_metrics({{1.0, 2.0, 6.0}}) == doctest::Approx(3.0));
    CHECK(mean_step_metrics({{1.0, 3.0}, {5.0}}) == doctest::Approx(3.5));
}

TEST_CASE("gaussian fit and two-means inertia")
{
    Rng rng(10);
    Matrix one = standard_normal(rng, 4000, 2) * 0.5;
    const GaussianFit fit = fit_gaussian(one);
    CHECK(fit.mean.norm() < 0.05);
    CHECK(fit.cov(0, 0) == doctest::Approx(0.25).epsilon(0.1));
    const double lp = gaussian_log_pdf(fit, fit.mean);
    CHECK(lp == doctest::Approx(-std::log(2.0 * std::numbers::pi) - 0.5 * std::log(fit.cov.determinant())));
    CHECK(two_means_inertia(one).ratio() < 2.0);

    Matrix two = standard_normal(rng, 4000, 2) * 0.3;
    two.topRows(2000).col(1).array() += 3.0;
    two.bottomRows(2000).col(1).array() -= 3.0;
    CHECK(two_means_inertia(two).ratio() > 10.0);
}
