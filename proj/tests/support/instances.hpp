#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "marginnet/certify.hpp"
#include "marginnet/controller.hpp"
#include "marginnet/plant.hpp"

namespace testing_support {

Eigen::MatrixXd to_matrix(const std::vector<std::vector<double>>& rows);
Eigen::VectorXd to_vector(const std::vector<std::vector<double>>& rows);

/// Observer-based LTI controller and a three-neuron RINN built on it for the
/// rigid cart, taken from the oracle tables.
marginnet::RinnParams oracle_lti_controller();
marginnet::RinnParams oracle_rinn_controller();

struct CertifiedInstance {
  marginnet::RinnParams theta;
  marginnet::Certificate certificate;
};

/// The training initializer on the rigid cart (n_k = 2): a Gaussian draw
/// projected onto the certified set for `margin`. n_phi = 0 gives an LTI
/// controller.
CertifiedInstance random_certified_instance(std::uint64_t seed, int nphi, const marginnet::DiskMargin& margin);

/// Gaussian theta with entries of std `scale`.
marginnet::RinnParams random_theta(const marginnet::ControllerDims& dims, double scale, std::uint64_t seed);

/// Random symmetric positive definite matrix with eigenvalues in [lo, hi].
Eigen::MatrixXd random_spd(int n, double lo, double hi, std::uint64_t seed);

}  // namespace testing_support
