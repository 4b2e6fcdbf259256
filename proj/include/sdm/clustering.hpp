#pragma once

#include <algorithm>
#include <limits>
#include <random>
#include <vector>

#include "sdm/core.hpp"

namespace sdm {

/// k-means++ seeding over the rows of `points`. Returns J row indices.
inline std::vector<Eigen::Index> kmeanspp_seeds(const MatrixXd& points, std::size_t J, Rng& rng) {
    const Eigen::Index n = points.rows();
    if (n == 0 || J == 0) throw ParameterError("k-means++ needs points and at least one cluster");
    if (static_cast<Eigen::Index>(J) > n) throw ParameterError("more clusters than points");
    std::vector<Eigen::Index> seeds;
    seeds.push_back(std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng));
    VectorXd dist2 = (points.rowwise() - points.row(seeds[0])).rowwise().squaredNorm();
    while (seeds.size() < J) {
        const double total = dist2.sum();
        Eigen::Index pick = 0;
        if (total <= 0.0) {
            // duplicates only: take the first point not already chosen
            for (Eigen::Index i = 0; i < n; ++i)
                if (std::find(seeds.begin(), seeds.end(), i) == seeds.end()) {
                    pick = i;
                    break;
                }
        } else {
            double u = std::uniform_real_distribution<double>(0.0, total)(rng);
            for (pick = 0; pick < n - 1; ++pick) {
                u -= dist2(pick);
                if (u < 0.0) break;
            }
        }
        seeds.push_back(pick);
        dist2 = dist2.cwiseMin((points.rowwise() - points.row(pick)).rowwise().squaredNorm());
    }
    return seeds;
}

struct KMeansResult {
    MatrixXd centers;                   ///< J x m
    std::vector<std::size_t> assignment;
};

/// Lloyd iterations from k-means++ seeds; ties go to the lowest cluster id.
inline KMeansResult kmeans(const MatrixXd& points, std::size_t J, int iterations, Rng& rng) {
    const auto seeds = kmeanspp_seeds(points, J, rng);
    KMeansResult res;
    res.centers.resize(static_cast<Eigen::Index>(J), points.cols());
    for (std::size_t j = 0; j < J; ++j) res.centers.row(static_cast<Eigen::Index>(j)) = points.row(seeds[j]);
    res.assignment.assign(static_cast<std::size_t>(points.rows()), 0);
    for (int it = 0; it <= iterations; ++it) {
        bool changed = false;
        for (Eigen::Index i = 0; i < points.rows(); ++i) {
            std::size_t best = 0;
            double bd = std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < J; ++j) {
                const double dd = (points.row(i) - res.centers.row(static_cast<Eigen::Index>(j))).squaredNorm();
                if (dd < bd) {
                    bd = dd;
                    best = j;
                }
            }
            if (res.assignment[static_cast<std::size_t>(i)] != best || it == 0) changed = true;
            res.assignment[static_cast<std::size_t>(i)] = best;
        }
        if (!changed || it == iterations) break;
        MatrixXd sums = MatrixXd::Zero(static_cast<Eigen::Index>(J), points.cols());
        std::vector<std::size_t> counts(J, 0);
        for (Eigen::Index i = 0; i < points.rows(); ++i) {
            sums.row(static_cast<Eigen::Index>(res.assignment[static_cast<std::size_t>(i)])) += points.row(i);
            ++counts[res.assignment[static_cast<std::size_t>(i)]];
        }
        for (std::size_t j = 0; j < J; ++j)
            if (counts[j] > 0)
                res.centers.row(static_cast<Eigen::Index>(j)) =
                    sums.row(static_cast<Eigen::Index>(j)) / static_cast<double>(counts[j]);
    }
    return res;
}

}  // namespace sdm
