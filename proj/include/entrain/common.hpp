#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace entrain {

using Vector = Eigen::VectorXd;
// Activations are stored feature-major: one column per sample.
using Matrix = Eigen::MatrixXd;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace entrain
