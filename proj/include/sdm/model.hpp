#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "sdm/core.hpp"

namespace sdm {

/// Linear-Gaussian hierarchy
///
///     psi           ~ N(mu, Sigma)                 (latent, dimension d')
///     theta_a | psi ~ N(W_a psi, Sigma_a)          (action parameter, dimension d)
///     R | x, a      ~ N(x' theta_a, sigma^2)
///
/// Construction validates all shapes and that every covariance is symmetric
/// positive definite, then caches the precisions and sampling factors. Instances
/// are immutable afterwards.
class StructuredPrior {
public:
    StructuredPrior(VectorXd latent_mean, MatrixXd latent_cov, std::vector<MatrixXd> mixing,
                    std::vector<MatrixXd> action_covs, double noise_sd)
        : latent_mean_(std::move(latent_mean)),
          latent_cov_(std::move(latent_cov)),
          mixing_(std::move(mixing)),
          action_covs_(std::move(action_covs)),
          noise_sd_(noise_sd) {
        validate();
    }

    std::size_t action_count() const { return mixing_.size(); }
    Eigen::Index dim() const { return dim_; }
    Eigen::Index latent_dim() const { return latent_mean_.size(); }
    double noise_sd() const { return noise_sd_; }

    const VectorXd& latent_mean() const { return latent_mean_; }
    const MatrixXd& latent_cov() const { return latent_cov_; }
    const MatrixXd& latent_precision() const { return latent_precision_; }
    const MatrixXd& latent_factor() const { return latent_factor_; }
    const MatrixXd& mixing(ActionId a) const { return mixing_.at(a); }
    const std::vector<MatrixXd>& mixing() const { return mixing_; }
    const MatrixXd& action_cov(ActionId a) const { return action_covs_.at(a); }
    const std::vector<MatrixXd>& action_covs() const { return action_covs_; }
    const MatrixXd& action_precision(ActionId a) const { return action_precisions_.at(a); }
    const MatrixXd& action_factor(ActionId a) const { return action_factors_.at(a); }

private:
    void validate() {
        if (!(noise_sd_ > 0.0) || !std::isfinite(noise_sd_)) throw ParameterError("noise sd must be positive");
        const Eigen::Index dl = latent_mean_.size();
        if (dl == 0) throw ShapeError("latent dimension must be positive");
        if (latent_cov_.rows() != dl || latent_cov_.cols() != dl)
            throw ShapeError("latent covariance must be d' x d'");
        if (mixing_.empty()) throw ShapeError("at least one action is required");
        if (mixing_.size() != action_covs_.size())
            throw ShapeError("mixing matrices and action covariances disagree on K");
        if (!latent_mean_.allFinite()) throw DataError("latent mean is not finite");
        dim_ = mixing_.front().rows();
        if (dim_ == 0) throw ShapeError("action dimension must be positive");
        if (!is_spd(latent_cov_, kMinCovEigenvalue))
            throw NumericalError("latent covariance is not symmetric positive definite");
        latent_cov_ = symmetrize(latent_cov_);
        latent_precision_ = spd_inverse(latent_cov_, "latent covariance");
        latent_factor_ = sqrt_factor(latent_cov_);

        action_precisions_.reserve(mixing_.size());
        action_factors_.reserve(mixing_.size());
        for (std::size_t a = 0; a < mixing_.size(); ++a) {
            const auto id = static_cast<std::ptrdiff_t>(a);
            if (mixing_[a].rows() != dim_ || mixing_[a].cols() != dl)
                throw ShapeError("mixing matrix of action " + std::to_string(a) + " must be d x d'");
            if (!mixing_[a].allFinite()) throw DataError("mixing matrix of action " + std::to_string(a) + " is not finite");
            if (action_covs_[a].rows() != dim_ || action_covs_[a].cols() != dim_)
                throw ShapeError("covariance of action " + std::to_string(a) + " must be d x d");
            if (!is_spd(action_covs_[a], kMinCovEigenvalue))
                throw NumericalError("covariance of action " + std::to_string(a) + " is not symmetric positive definite",
                                     id);
            action_covs_[a] = symmetrize(action_covs_[a]);
            action_precisions_.push_back(spd_inverse(action_covs_[a], "action covariance", id));
            action_factors_.push_back(sqrt_factor(action_covs_[a]));
        }
    }

    VectorXd latent_mean_;
    MatrixXd latent_cov_;
    std::vector<MatrixXd> mixing_;
    std::vector<MatrixXd> action_covs_;
    double noise_sd_;

    Eigen::Index dim_ = 0;
    MatrixXd latent_precision_;
    MatrixXd latent_factor_;
    std::vector<MatrixXd> action_precisions_;
    std::vector<MatrixXd> action_factors_;
};

/// Independent Gaussian prior per action: theta_a ~ N(mu_a, Sigma_a).
class NonStructuredPrior {
public:
    NonStructuredPrior(std::vector<VectorXd> means, std::vector<MatrixXd> covs, double noise_sd)
        : means_(std::move(means)), covs_(std::move(covs)), noise_sd_(noise_sd) {
        if (!(noise_sd_ > 0.0) || !std::isfinite(noise_sd_)) throw ParameterError("noise sd must be positive");
        if (means_.empty() || means_.size() != covs_.size()) throw ShapeError("means and covariances disagree on K");
        dim_ = means_.front().size();
        precisions_.reserve(means_.size());
        for (std::size_t a = 0; a < means_.size(); ++a) {
            const auto id = static_cast<std::ptrdiff_t>(a);
            if (means_[a].size() != dim_ || covs_[a].rows() != dim_ || covs_[a].cols() != dim_)
                throw ShapeError("shape mismatch for action " + std::to_string(a));
            if (!is_spd(covs_[a], kMinCovEigenvalue))
                throw NumericalError("covariance of action " + std::to_string(a) + " is not symmetric positive definite",
                                     id);
            covs_[a] = symmetrize(covs_[a]);
            precisions_.push_back(spd_inverse(covs_[a], "action covariance", id));
        }
    }

    std::size_t action_count() const { return means_.size(); }
    Eigen::Index dim() const { return dim_; }
    double noise_sd() const { return noise_sd_; }
    const VectorXd& mean(ActionId a) const { return means_.at(a); }
    const MatrixXd& cov(ActionId a) const { return covs_.at(a); }
    const MatrixXd& precision(ActionId a) const { return precisions_.at(a); }

private:
    std::vector<VectorXd> means_;
    std::vector<MatrixXd> covs_;
    double noise_sd_;
    Eigen::Index dim_ = 0;
    std::vector<MatrixXd> precisions_;
};

/// One logged interaction (context, action, reward, logging propensity).
struct Record {
    VectorXd x;
    ActionId a = 0;
    double r = 0.0;
    double p0 = 1.0;
};

struct LoggedDataset {
    std::vector<Record> records;

    std::size_t size() const { return records.size(); }
    bool empty() const { return records.empty(); }

    /// Checks finiteness, action range, propensity range and a common feature dimension.
    void validate(std::size_t action_count, Eigen::Index dim) const {
        for (std::size_t i = 0; i < records.size(); ++i) {
            const Record& rec = records[i];
            const std::string where = "record " + std::to_string(i);
            if (rec.x.size() != dim) throw ShapeError(where + ": feature dimension mismatch");
            if (!rec.x.allFinite()) throw DataError(where + ": non-finite feature");
            if (!std::isfinite(rec.r)) throw DataError(where + ": non-finite reward");
            if (rec.a >= action_count) throw DataError(where + ": action out of range");
            if (!(rec.p0 > 0.0 && rec.p0 <= 1.0)) throw DataError(where + ": propensity outside (0, 1]");
        }
    }

    /// Contexts stacked as rows (n x d).
    MatrixXd context_matrix() const {
        if (records.empty()) return MatrixXd(0, 0);
        MatrixXd m(static_cast<Eigen::Index>(records.size()), records.front().x.size());
        for (std::size_t i = 0; i < records.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = records[i].x.transpose();
        return m;
    }
};

}  // namespace sdm
