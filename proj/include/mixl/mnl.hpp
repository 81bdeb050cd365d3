#pragma once

#include <Eigen/Dense>

#include "mixl/choice_data.hpp"

namespace mixl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// ln sum_j exp(v_j), computed with a max shift so that entries up to
/// +-1e3 cannot overflow any intermediate. Throws on an empty vector.
double log_sum_exp(const Eigen::Ref<const Vector>& v);

/// Multinomial logit probabilities p_j = exp(v_j - LSE(v)).
Vector choice_probabilities(const Eigen::Ref<const Vector>& v);

/// diag(p) - p p^T, the Hessian of LSE in utility space evaluated at
/// probabilities p. Input must sum to 1 within 1e-8.
Matrix softmax_curvature(const Eigen::Ref<const Vector>& p);

/// Log-likelihood of individual n's observed choice sequence at the given
/// taste parameters; zero for an individual without occasions.
double sequence_log_likelihood(const ChoiceDataset& data, int n,
                               const Eigen::Ref<const Vector>& alpha,
                               const Eigen::Ref<const Vector>& beta);

/// Same with the stacked parameter vector gamma = [alpha; beta].
double sequence_log_likelihood(const ChoiceDataset& data, int n,
                               const Eigen::Ref<const Vector>& gamma);

}  // namespace mixl
