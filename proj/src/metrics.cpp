#include "flowchain/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace flowchain {

double ade(const Matrix& pred, const Matrix& gt)
{
    if (pred.rows() != gt.rows() || pred.cols() != 2 || gt.cols() != 2 || gt.rows() == 0) {
        throw ShapeError("ade: trajectories must be T x 2 of equal length, got " + shape_string(pred) + " and " +
                         shape_string(gt));
    }
    return (pred - gt).rowwise().norm().mean();
}

double fde(const Matrix& pred, const Matrix& gt)
{
    if (pred.rows() != gt.rows() || pred.cols() != 2 || gt.cols() != 2 || gt.rows() == 0) {
        throw ShapeError("fde: trajectories must be T x 2 of equal length, got " + shape_string(pred) + " and " +
                         shape_string(gt));
    }
    return (pred.row(pred.rows() - 1) - gt.row(gt.rows() - 1)).norm();
}

BestOfN best_of_n(const std::vector<Matrix>& candidates, const Matrix& gt)
{
    if (candidates.empty()) throw ShapeError("best_of_n: empty candidate set");
    BestOfN best{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
    for (const Matrix& c : candidates) {
        best.ade = std::min(best.ade, ade(c, gt));
        best.fde = std::min(best.fde, fde(c, gt));
    }
    return best;
}

// ---------------------------------------------------------------------------
// Grids

Vec2 GridSpec::center(int row, int col) const
{
    return origin + Vec2((col + 0.5) * cell, (row + 0.5) * cell);
}

bool GridSpec::same_geometry(const GridSpec& o) const
{
    return origin == o.origin && cell == o.cell && width == o.width && height == o.height;
}

GridSpec grid_covering(const Box& box, int width, int height)
{
    if (width < 1 || height < 1) throw ShapeError("grid dimensions must be positive");
    const Vec2 size = box.hi - box.lo;
    double cell = std::max(size.x() / width, size.y() / height);
    if (!(cell > 0.0) || !std::isfinite(cell)) cell = 1e-3;
    const Vec2 mid = 0.5 * (box.lo + box.hi);
    GridSpec spec;
    spec.cell = cell;
    spec.width = width;
    spec.height = height;
    spec.origin = mid - 0.5 * Vec2(width * cell, height * cell);
    return spec;
}

Box sample_extent(const Matrix& points, double k)
{
    if (points.rows() == 0) throw ShapeError("sample_extent: no points");
    const Eigen::RowVector2d mean = points.colwise().mean();
    const Eigen::RowVector2d sd = ((points.rowwise() - mean).array().square().colwise().sum() /
                                   static_cast<double>(std::max<Index>(1, points.rows() - 1)))
                                      .sqrt();
    return {(mean - k * sd).transpose(), (mean + k * sd).transpose()};
}

Box mixture_extent(const GaussianMixture& mixture, double k)
{
    if (mixture.means.empty()) throw ShapeError("mixture_extent: empty mixture");
    Box b{mixture.means[0], mixture.means[0]};
    for (const Vec2& m : mixture.means) {
        b.lo = b.lo.cwiseMin(m);
        b.hi = b.hi.cwiseMax(m);
    }
    b.lo.array() -= k * mixture.stddev;
    b.hi.array() += k * mixture.stddev;
    return b;
}

Box union_box(const Box& a, const Box& b) { return {a.lo.cwiseMin(b.lo), a.hi.cwiseMax(b.hi)}; }

namespace {

DensityGrid normalized(const GridSpec& spec, Matrix mass, const char* what)
{
    const double total = mass.sum();
    if (!(total > 0.0) || !std::isfinite(total)) {
        throw ShapeError(std::string(what) + ": no mass falls inside the grid");
    }
    return {spec, mass / total};
}

/// P(a < X < b) for a standard normal X.
double normal_interval(double a, double b)
{
    constexpr double r = 1.0 / std::numbers::sqrt2;
    if (a >= 0.0) return 0.5 * (std::erfc(a * r) - std::erfc(b * r));
    if (b <= 0.0) return 0.5 * (std::erfc(-b * r) - std::erfc(-a * r));
    return 1.0 - 0.5 * (std::erfc(-a * r) + std::erfc(b * r));
}

}  // namespace

DensityGrid rasterize(const Matrix& points, const GridSpec& spec, const Vector& weights)
{
    if (points.cols() != 2) throw ShapeError("rasterize: points must have 2 columns");
    if (weights.size() != 0 && weights.size() != points.rows()) throw ShapeError("rasterize: weight count mismatch");
    Matrix mass = Matrix::Zero(spec.height, spec.width);
    for (Index i = 0; i < points.rows(); ++i) {
        const double w = weights.size() == 0 ? 1.0 : weights(i);
        if (!(w >= 0.0)) throw ShapeError("rasterize: negative or NaN weight");
        const double fc = std::floor((points(i, 0) - spec.origin.x()) / spec.cell);
        const double fr = std::floor((points(i, 1) - spec.origin.y()) / spec.cell);
        if (!(fc >= 0.0 && fc < spec.width && fr >= 0.0 && fr < spec.height)) continue;
        mass(static_cast<Index>(fr), static_cast<Index>(fc)) += w;
    }
    return normalized(spec, std::move(mass), "rasterize");
}

DensityGrid rasterize(const GaussianMixture& mixture, const GridSpec& spec)
{
    Matrix mass = Matrix::Zero(spec.height, spec.width);
    Eigen::VectorXd px(spec.width), py(spec.height);
    for (std::size_t k = 0; k < mixture.means.size(); ++k) {
        const Vec2& mu = mixture.means[k];
        const double s = mixture.stddev;
        for (int c = 0; c < spec.width; ++c) {
            const double lo = spec.origin.x() + c * spec.cell;
            px(c) = normal_interval((lo - mu.x()) / s, (lo + spec.cell - mu.x()) / s);
        }
        for (int r = 0; r < spec.height; ++r) {
            const double lo = spec.origin.y() + r * spec.cell;
            py(r) = normal_interval((lo - mu.y()) / s, (lo + spec.cell - mu.y()) / s);
        }
        mass.noalias() += mixture.weights[k] * (py * px.transpose());
    }
    const double covered = mass.sum();
    if (covered < 0.99) {
        throw ShapeError("rasterize: grid covers only " + std::to_string(covered) + " of the analytic mass");
    }
    mass = (mass.array() < 1e-14 * covered).select(0.0, mass);
    return normalized(spec, std::move(mass), "rasterize");
}

DensityGrid rasterize_gaussian(const Vec2& mean, const Eigen::Matrix2d& cov, const GridSpec& spec, int sub)
{
    const Eigen::Matrix2d inv = cov.inverse();
    const double h = spec.cell / sub;
    Matrix mass = Matrix::Zero(spec.height, spec.width);
    for (int r = 0; r < spec.height; ++r) {
        for (int c = 0; c < spec.width; ++c) {
            double acc = 0.0;
            for (int a = 0; a < sub; ++a) {
                for (int b = 0; b < sub; ++b) {
                    const Vec2 p = spec.origin + Vec2(c * spec.cell + (b + 0.5) * h, r * spec.cell + (a + 0.5) * h);
                    const Vec2 d = p - mean;
                    acc += std::exp(-0.5 * d.dot(inv * d));
                }
            }
            mass(r, c) = acc;
        }
    }
    return normalized(spec, std::move(mass), "rasterize_gaussian");
}

// ---------------------------------------------------------------------------
// Transportation simplex

namespace {

class TransportSimplex {
public:
    TransportSimplex(const Vector& supply, const Vector& demand, const Matrix& cost)
        : m_(static_cast<int>(supply.size())), n_(static_cast<int>(demand.size())), cost_(cost),
          adj_(static_cast<std::size_t>(m_ + n_))
    {
        initial_basis(supply, demand);
    }

    double solve(Matrix* flow)
    {
        const double tol = 1e-12 * std::max(1.0, cost_.cwiseAbs().maxCoeff());
        const long long cells = static_cast<long long>(m_) * n_;
        const long long block = std::max<long long>(32, static_cast<long long>(std::sqrt(static_cast<double>(cells))));
        const long long limit = 100LL * (m_ + n_) + 100000;
        long long cursor = 0;
        for (long long iter = 0;; ++iter) {
            if (iter > limit) throw NumericError("transport: simplex did not converge");
            compute_potentials();
            // Block search: best reduced cost within the first block holding a negative one.
            double best = -tol;
            int bi = -1, bj = -1;
            long long scanned = 0;
            while (scanned < cells) {
                const long long end = std::min(cells, scanned + block);
                for (; scanned < end; ++scanned) {
                    const long long k = (cursor + scanned) % cells;
                    const int i = static_cast<int>(k / n_);
                    const int j = static_cast<int>(k % n_);
                    const double rc = cost_(i, j) - pot_[static_cast<std::size_t>(i)] -
                                      pot_[static_cast<std::size_t>(m_ + j)];
                    if (rc < best) {
                        best = rc;
                        bi = i;
                        bj = j;
                    }
                }
                if (bi >= 0) break;
            }
            if (bi < 0) break;
            cursor = (cursor + scanned) % cells;
            pivot(bi, bj);
        }
        double total = 0.0;
        if (flow) *flow = Matrix::Zero(m_, n_);
        for (std::size_t e = 0; e < ei_.size(); ++e) {
            total += ef_[e] * cost_(ei_[e], ej_[e]);
            if (flow) (*flow)(ei_[e], ej_[e]) += ef_[e];
        }
        return total;
    }

private:
    void add_edge(int i, int j, double f)
    {
        const int id = static_cast<int>(ei_.size());
        ei_.push_back(i);
        ej_.push_back(j);
        ef_.push_back(f);
        adj_[static_cast<std::size_t>(i)].push_back(id);
        adj_[static_cast<std::size_t>(m_ + j)].push_back(id);
    }

    // Least-cost rule. Each basic cell retires one line; the last row and
    // column are retired together, giving m + n - 1 cells forming a tree.
    void initial_basis(const Vector& supply, const Vector& demand)
    {
        std::vector<double> s(supply.data(), supply.data() + m_);
        std::vector<double> d(demand.data(), demand.data() + n_);
        std::vector<int> order(static_cast<std::size_t>(m_) * static_cast<std::size_t>(n_));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return cost_(a / n_, a % n_) < cost_(b / n_, b % n_); });
        std::vector<char> row_on(static_cast<std::size_t>(m_), 1), col_on(static_cast<std::size_t>(n_), 1);
        int rows = m_, cols = n_;
        for (int k : order) {
            const int i = k / n_, j = k % n_;
            auto& si = s[static_cast<std::size_t>(i)];
            auto& dj = d[static_cast<std::size_t>(j)];
            if (!row_on[static_cast<std::size_t>(i)] || !col_on[static_cast<std::size_t>(j)]) continue;
            const bool retire_row = cols == 1 || (rows > 1 && si <= dj);
            if (rows == 1 && cols == 1) {
                add_edge(i, j, std::max(0.0, si));
                break;
            }
            if (retire_row) {
                const double x = std::max(0.0, si);
                add_edge(i, j, x);
                dj = std::max(0.0, dj - x);
                row_on[static_cast<std::size_t>(i)] = 0;
                --rows;
            } else {
                const double x = std::max(0.0, dj);
                add_edge(i, j, x);
                si = std::max(0.0, si - x);
                col_on[static_cast<std::size_t>(j)] = 0;
                --cols;
            }
        }
        if (static_cast<int>(ei_.size()) != m_ + n_ - 1) throw NumericError("transport: invalid initial basis");
    }

    void compute_potentials()
    {
        const auto nodes = static_cast<std::size_t>(m_ + n_);
        pot_.assign(nodes, 0.0);
        parent_.assign(nodes, -1);
        depth_.assign(nodes, -1);
        std::vector<int> queue{0};
        depth_[0] = 0;
        for (std::size_t q = 0; q < queue.size(); ++q) {
            const int node = queue[q];
            for (int e : adj_[static_cast<std::size_t>(node)]) {
                const int i = ei_[static_cast<std::size_t>(e)];
                const int col_node = m_ + ej_[static_cast<std::size_t>(e)];
                const int other = node == i ? col_node : i;
                if (depth_[static_cast<std::size_t>(other)] >= 0) continue;
                depth_[static_cast<std::size_t>(other)] = depth_[static_cast<std::size_t>(node)] + 1;
                parent_[static_cast<std::size_t>(other)] = e;
                const double c = cost_(i, ej_[static_cast<std::size_t>(e)]);
                pot_[static_cast<std::size_t>(other)] = c - pot_[static_cast<std::size_t>(node)];
                queue.push_back(other);
            }
        }
        if (queue.size() != nodes) throw NumericError("transport: basis is not a spanning tree");
    }

    int other_end(int e, int node) const
    {
        const int i = ei_[static_cast<std::size_t>(e)];
        return node == i ? m_ + ej_[static_cast<std::size_t>(e)] : i;
    }

    void pivot(int i, int j)
    {
        // Cycle: entering (i, j), then the tree path from column j back to row i.
        int a = m_ + j, b = i;
        std::vector<int> up_a, up_b;
        while (a != b) {
            if (depth_[static_cast<std::size_t>(a)] >= depth_[static_cast<std::size_t>(b)]) {
                const int e = parent_[static_cast<std::size_t>(a)];
                up_a.push_back(e);
                a = other_end(e, a);
            } else {
                const int e = parent_[static_cast<std::size_t>(b)];
                up_b.push_back(e);
                b = other_end(e, b);
            }
        }
        std::vector<int> path = up_a;
        path.insert(path.end(), up_b.rbegin(), up_b.rend());

        double theta = std::numeric_limits<double>::infinity();
        std::size_t leave = 0;
        for (std::size_t k = 0; k < path.size(); k += 2) {
            const double f = ef_[static_cast<std::size_t>(path[k])];
            if (f < theta) {
                theta = f;
                leave = k;
            }
        }
        for (std::size_t k = 0; k < path.size(); ++k) {
            double& f = ef_[static_cast<std::size_t>(path[k])];
            f = k % 2 == 0 ? std::max(0.0, f - theta) : f + theta;
        }

        const int out = path[leave];
        auto drop = [&](int node) {
            auto& list = adj_[static_cast<std::size_t>(node)];
            list.erase(std::find(list.begin(), list.end(), out));
        };
        drop(ei_[static_cast<std::size_t>(out)]);
        drop(m_ + ej_[static_cast<std::size_t>(out)]);
        ei_[static_cast<std::size_t>(out)] = i;
        ej_[static_cast<std::size_t>(out)] = j;
        ef_[static_cast<std::size_t>(out)] = theta;
        adj_[static_cast<std::size_t>(i)].push_back(out);
        adj_[static_cast<std::size_t>(m_ + j)].push_back(out);
    }

    int m_, n_;
    const Matrix& cost_;
    std::vector<int> ei_, ej_;
    std::vector<double> ef_;
    std::vector<std::vector<int>> adj_;
    std::vector<double> pot_;
    std::vector<int> parent_, depth_;
};

}  // namespace

double transport(const Vector& supply, const Vector& demand, const Matrix& cost, Matrix* flow)
{
    if (cost.rows() != supply.size() || cost.cols() != demand.size()) {
        throw ShapeError("transport: cost must be " + std::to_string(supply.size()) + " x " +
                         std::to_string(demand.size()));
    }
    if ((supply.array() < 0.0).any() || (demand.array() < 0.0).any()) {
        throw ShapeError("transport: negative supply or demand");
    }
    if (std::abs(supply.sum() - demand.sum()) > 1e-6 * std::max(1.0, supply.sum())) {
        throw ShapeError("transport: supply and demand totals differ");
    }
    if (supply.size() == 0 || demand.size() == 0) {
        if (flow) *flow = Matrix::Zero(supply.size(), demand.size());
        return 0.0;
    }
    TransportSimplex solver(supply, demand, cost);
    return solver.solve(flow);
}

double emd(const DensityGrid& a, const DensityGrid& b)
{
    if (!a.spec.same_geometry(b.spec)) throw ShapeError("emd: grids have different geometry");
    const double ta = a.mass.sum(), tb = b.mass.sum();
    if (std::abs(ta - tb) > 1e-6) {
        throw ShapeError("emd: total masses differ (" + std::to_string(ta) + " vs " + std::to_string(tb) + ")");
    }
    // Mass present in both grids at the same cell stays put at zero cost.
    std::vector<int> src, dst;
    std::vector<double> sv, dv;
    for (int r = 0; r < a.spec.height; ++r) {
        for (int c = 0; c < a.spec.width; ++c) {
            const double d = a.mass(r, c) - b.mass(r, c);
            if (d > 0.0) {
                src.push_back(r * a.spec.width + c);
                sv.push_back(d);
            } else if (d < 0.0) {
                dst.push_back(r * a.spec.width + c);
                dv.push_back(-d);
            }
        }
    }
    if (src.empty() || dst.empty()) return 0.0;
    Vector supply = Eigen::Map<Vector>(sv.data(), static_cast<Index>(sv.size()));
    Vector demand = Eigen::Map<Vector>(dv.data(), static_cast<Index>(dv.size()));
    demand *= supply.sum() / demand.sum();
    Matrix cost(supply.size(), demand.size());
    const int w = a.spec.width;
    for (Index i = 0; i < supply.size(); ++i) {
        const int ri = src[static_cast<std::size_t>(i)] / w, ci = src[static_cast<std::size_t>(i)] % w;
        for (Index j = 0; j < demand.size(); ++j) {
            const int rj = dst[static_cast<std::size_t>(j)] / w, cj = dst[static_cast<std::size_t>(j)] % w;
            cost(i, j) = a.spec.cell * std::hypot(static_cast<double>(ri - rj), static_cast<double>(ci - cj));
        }
    }
    return transport(supply, demand, cost);
}

// ---------------------------------------------------------------------------
// Sample-based densities

Vec2 scott_bandwidth(const Matrix& samples)
{
    if (samples.rows() < 2 || samples.cols() != 2) throw ShapeError("kde: need at least 2 two-dimensional samples");
    const auto n = static_cast<double>(samples.rows());
    const Eigen::RowVector2d mean = samples.colwise().mean();
    const Eigen::RowVector2d var = (samples.rowwise() - mean).array().square().colwise().sum() / (n - 1.0);
    if (!(var.minCoeff() > 0.0)) throw ShapeError("kde: degenerate sample set (zero variance)");
    return var.transpose().cwiseSqrt() * std::pow(n, -1.0 / 6.0);
}

Vector kde_log_density(const Matrix& samples, const Matrix& queries)
{
    const Vec2 h = scott_bandwidth(samples);
    if (queries.cols() != 2) throw ShapeError("kde: queries must have 2 columns");
    const auto n = static_cast<double>(samples.rows());
    const double norm = -std::log(2.0 * std::numbers::pi * h.x() * h.y()) - std::log(n);
    Vector out(queries.rows());
    Eigen::ArrayXd terms(samples.rows());
    for (Index q = 0; q < queries.rows(); ++q) {
        const Eigen::ArrayXd dx = (samples.col(0).array() - queries(q, 0)) / h.x();
        const Eigen::ArrayXd dy = (samples.col(1).array() - queries(q, 1)) / h.y();
        terms = -0.5 * (dx.square() + dy.square());
        const double top = terms.maxCoeff();
        out(q) = norm + top + std::log((terms - top).exp().sum());
    }
    return out;
}

double kde_log_density(const Matrix& samples, const Vec2& query)
{
    Matrix q(1, 2);
    q << query.x(), query.y();
    return kde_log_density(samples, q)(0);
}

GaussianFit fit_gaussian(const Matrix& samples)
{
    if (samples.rows() < 2 || samples.cols() != 2) throw ShapeError("fit_gaussian: need at least 2 samples");
    GaussianFit g;
    g.mean = samples.colwise().mean().transpose();
    const Matrix centered = samples.rowwise() - g.mean.transpose();
    g.cov = (centered.transpose() * centered) / static_cast<double>(samples.rows() - 1);
    g.cov += 1e-9 * (1.0 + g.cov.trace()) * Eigen::Matrix2d::Identity();
    return g;
}

double gaussian_log_pdf(const GaussianFit& g, const Vec2& p)
{
    const Vec2 d = p - g.mean;
    return -std::log(2.0 * std::numbers::pi) - 0.5 * std::log(g.cov.determinant()) - 0.5 * d.dot(g.cov.ldlt().solve(d));
}

double mean_step_metrics(const std::vector<std::vector<double>>& per_item_steps)
{
    if (per_item_steps.empty()) return 0.0;
    double total = 0.0;
    for (const auto& steps : per_item_steps) {
        if (steps.empty()) throw ShapeError("mean_step_metrics: item without steps");
        total += std::accumulate(steps.begin(), steps.end(), 0.0) / static_cast<double>(steps.size());
    }
    return total / static_cast<double>(per_item_steps.size());
}

ClusterInertia two_means_inertia(const Matrix& points, int iterations)
{
    if (points.rows() < 2 || points.cols() != 2) throw ShapeError("two_means_inertia: need at least 2 points");
    ClusterInertia out;
    const Eigen::RowVector2d mean = points.colwise().mean();
    out.one = (points.rowwise() - mean).rowwise().squaredNorm().sum();

    Index far = 0;
    (points.rowwise() - mean).rowwise().squaredNorm().maxCoeff(&far);
    Eigen::RowVector2d c0 = points.row(far);
    Index far2 = 0;
    (points.rowwise() - c0).rowwise().squaredNorm().maxCoeff(&far2);
    Eigen::RowVector2d c1 = points.row(far2);
    std::vector<char> assign(static_cast<std::size_t>(points.rows()), 0);
    for (int it = 0; it < iterations; ++it) {
        Eigen::RowVector2d s0 = Eigen::RowVector2d::Zero(), s1 = Eigen::RowVector2d::Zero();
        Index n0 = 0, n1 = 0;
        bool changed = it == 0;
        for (Index i = 0; i < points.rows(); ++i) {
            const char k = (points.row(i) - c1).squaredNorm() < (points.row(i) - c0).squaredNorm() ? 1 : 0;
            changed = changed || k != assign[static_cast<std::size_t>(i)];
            assign[static_cast<std::size_t>(i)] = k;
            if (k) {
                s1 += points.row(i);
                ++n1;
            } else {
                s0 += points.row(i);
                ++n0;
            }
        }
        if (n0 > 0) c0 = s0 / static_cast<double>(n0);
        if (n1 > 0) c1 = s1 / static_cast<double>(n1);
        if (!changed) break;
    }
    for (Index i = 0; i < points.rows(); ++i) {
        out.two += (points.row(i) - (assign[static_cast<std::size_t>(i)] ? c1 : c0)).squaredNorm();
    }
    return out;
}

}  // namespace flowchain
