#pragma once

#include <Eigen/Dense>
#include <map>
#include <utility>
#include <vector>

namespace marginfer {

/// Posterior moments for a parameter subset at one observed data vector.
/// param_indices names which components of the full theta the entries of
/// means/variances refer to; pair_covs is keyed by the original indices.
struct MomentEstimates {
    std::vector<int> param_indices;
    Eigen::VectorXd means;
    Eigen::VectorXd variances;
    std::map<std::pair<int, int>, double> pair_covs;
};

}  // namespace marginfer
