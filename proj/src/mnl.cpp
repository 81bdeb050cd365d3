#include "mixl/mnl.hpp"

#include <cmath>
#include <stdexcept>

namespace mixl {

double log_sum_exp(const Eigen::Ref<const Vector>& v) {
  if (v.size() == 0) throw std::invalid_argument("log_sum_exp: empty vector");
  const double m = v.maxCoeff();
  double s = 0.0;
  for (Eigen::Index j = 0; j < v.size(); ++j) s += std::exp(v[j] - m);
  return m + std::log(s);
}

Vector choice_probabilities(const Eigen::Ref<const Vector>& v) {
  if (v.size() == 0) throw std::invalid_argument("choice_probabilities: empty vector");
  const double m = v.maxCoeff();
  Vector p = (v.array() - m).exp();
  p /= p.sum();
  return p;
}

Matrix softmax_curvature(const Eigen::Ref<const Vector>& p) {
  if (std::abs(p.sum() - 1.0) > 1e-8)
    throw std::invalid_argument("softmax_curvature: input does not sum to 1");
  Matrix h = -p * p.transpose();
  h.diagonal() += p;
  return h;
}

double sequence_log_likelihood(const ChoiceDataset& data, int n,
                               const Eigen::Ref<const Vector>& alpha,
                               const Eigen::Ref<const Vector>& beta) {
  if (alpha.size() != data.num_fixed() || beta.size() != data.num_random())
    throw std::invalid_argument("sequence_log_likelihood: parameter dimension mismatch");
  const int J = data.num_alternatives;
  double ll = 0.0;
  Vector v(J);
  for (int occ = data.occasion_offsets[n]; occ < data.occasion_offsets[n + 1]; ++occ) {
    const int r0 = occ * J;
    v = data.random_attrs.middleRows(r0, J) * beta;
    if (alpha.size() > 0) v += data.fixed_attrs.middleRows(r0, J) * alpha;
    ll += v[data.choices[occ]] - log_sum_exp(v);
  }
  return ll;
}

double sequence_log_likelihood(const ChoiceDataset& data, int n,
                               const Eigen::Ref<const Vector>& gamma) {
  if (gamma.size() != data.num_fixed() + data.num_random())
    throw std::invalid_argument("sequence_log_likelihood: parameter dimension mismatch");
  return sequence_log_likelihood(data, n, gamma.head(data.num_fixed()),
                                 gamma.tail(data.num_random()));
}

}  // namespace mixl
