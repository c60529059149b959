#pragma once

#include <span>
#include <vector>

#include "flowchain/data.hpp"
#include "flowchain/numcore.hpp"

namespace flowchain {

/// Mean / final L2 distance between two T x 2 trajectories.
double ade(const Matrix& pred, const Matrix& gt);
double fde(const Matrix& pred, const Matrix& gt);

struct BestOfN {
    double ade = 0.0;
    double fde = 0.0;
};

/// Minimum ADE and minimum FDE over the candidates, minimized independently.
BestOfN best_of_n(const std::vector<Matrix>& candidates, const Matrix& gt);

// ---------------------------------------------------------------------------
// Grids

struct Box {
    Vec2 lo = Vec2::Zero();
    Vec2 hi = Vec2::Zero();
};

/// Square cells; cell (row r, column c) is centered at origin + ((c + 0.5), (r + 0.5)) * cell.
struct GridSpec {
    Vec2 origin = Vec2::Zero();
    double cell = 1.0;
    int width = 32;
    int height = 32;

    Vec2 center(int row, int col) const;
    bool same_geometry(const GridSpec& other) const;
};

struct DensityGrid {
    GridSpec spec;
    Matrix mass;  // height x width, sums to 1
};

/// A width x height grid of square cells centered on the box, covering it.
GridSpec grid_covering(const Box& box, int width = 32, int height = 32);
/// mean +- k std per coordinate of a sample set.
Box sample_extent(const Matrix& points, double k = 4.0);
/// Component means +- k std.
Box mixture_extent(const GaussianMixture& mixture, double k = 4.0);
Box union_box(const Box& a, const Box& b);

/// Bins points with the given nonnegative weights (uniform when empty) and
/// renormalizes. Points outside the grid are dropped; throws ShapeError when no
/// mass lands inside.
DensityGrid rasterize(const Matrix& points, const GridSpec& spec, const Vector& weights = Vector());

/// Exact per-cell integral of the mixture, renormalized. Throws ShapeError when
/// the grid holds less than 99% of the mass.
DensityGrid rasterize(const GaussianMixture& mixture, const GridSpec& spec);

/// Full-covariance Gaussian, integrated per cell on a sub x sub midpoint lattice.
DensityGrid rasterize_gaussian(const Vec2& mean, const Eigen::Matrix2d& cov, const GridSpec& spec, int sub = 8);

/// Exact 1-Wasserstein distance between two grids with Euclidean ground cost
/// between cell centers (transportation simplex). Throws ShapeError on geometry
/// or total-mass mismatch (> 1e-6).
double emd(const DensityGrid& a, const DensityGrid& b);

/// Transportation problem between explicit supplies and demands with cost matrix
/// (m x n). Returns the optimal cost; `flow` receives the plan when non-null.
double transport(const Vector& supply, const Vector& demand, const Matrix& cost, Matrix* flow = nullptr);

// ---------------------------------------------------------------------------
// Densities from samples

/// Scott bandwidth per coordinate: n^(-1/6) * sample std.
Vec2 scott_bandwidth(const Matrix& samples);

/// Gaussian-kernel KDE log density at each query row. Throws ShapeError for
/// fewer than 2 samples or zero variance in a coordinate.
Vector kde_log_density(const Matrix& samples, const Matrix& queries);
double kde_log_density(const Matrix& samples, const Vec2& query);

struct GaussianFit {
    Vec2 mean = Vec2::Zero();
    Eigen::Matrix2d cov = Eigen::Matrix2d::Identity();
};

/// Sample mean and (unbiased) covariance, with a small ridge for stability.
GaussianFit fit_gaussian(const Matrix& samples);
double gaussian_log_pdf(const GaussianFit& g, const Vec2& p);

/// Mean over steps within each item, then over items.
double mean_step_metrics(const std::vector<std::vector<double>>& per_item_steps);

/// Inertia (sum of squared distances to the assigned centroid) of 1-means and
/// of Lloyd 2-means with farthest-point initialization.
struct ClusterInertia {
    double one = 0.0;
    double two = 0.0;
    double ratio() const { return two > 0.0 ? one / two : std::numeric_limits<double>::infinity(); }
};
ClusterInertia two_means_inertia(const Matrix& points, int iterations = 50);

}  // namespace flowchain
