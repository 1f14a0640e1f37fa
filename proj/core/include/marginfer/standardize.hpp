#pragma once

#include <Eigen/Dense>

#include "marginfer/errors.hpp"

namespace marginfer {

/// Column-wise shift/scale fitted from training rows and inverted on
/// output. Scales are floored so constant columns stay finite.
struct Standardizer {
    Eigen::VectorXd shift;
    Eigen::VectorXd scale;

    static Standardizer fit(const Eigen::MatrixXd& rows) {
        if (rows.rows() < 2) throw ArgumentError("Standardizer::fit needs at least 2 rows");
        Standardizer s;
        s.shift = rows.colwise().mean();
        const Eigen::MatrixXd centered = rows.rowwise() - s.shift.transpose();
        s.scale = (centered.array().square().colwise().sum() /
                   static_cast<double>(rows.rows() - 1))
                      .sqrt()
                      .max(1e-12)
                      .matrix()
                      .transpose();
        return s;
    }

    static Standardizer identity(int dim) {
        Standardizer s;
        s.shift = Eigen::VectorXd::Zero(dim);
        s.scale = Eigen::VectorXd::Ones(dim);
        return s;
    }

    int dim() const { return static_cast<int>(shift.size()); }

    Eigen::MatrixXd transform(const Eigen::MatrixXd& rows) const {
        return (rows.rowwise() - shift.transpose()).array().rowwise() /
               scale.transpose().array();
    }
    Eigen::VectorXd transform_vec(const Eigen::VectorXd& v) const {
        return ((v - shift).array() / scale.array()).matrix();
    }
    Eigen::VectorXd invert_vec(const Eigen::VectorXd& v) const {
        return ((v.array() * scale.array()) + shift.array()).matrix();
    }
};

}  // namespace marginfer
