#pragma once

#include <cstdint>

#include "cellfree/formulations.hpp"
#include "cellfree/network_model.hpp"

namespace cellfree::testing {

/// Small dense network: N = 8, tau_p = 2, 300 m square. Static power follows the N * 0.2 + 0.825 rule.
inline ProblemInstance small_instance(std::uint64_t seed, int M, int K, Precoder pc = Precoder::kMrt, double xi = 2.0) {
  DropParams dp;
  dp.M = M;
  dp.K = K;
  dp.tau_p = 2;
  dp.antennas = 8;
  dp.geometry.side_length = 300;
  const NetworkRealization r = generate_drop(dp, seed, 0);
  return make_instance(r.stats, r.pilots, pc, PowerModel::uniform(M, 2.5, 8 * 0.2 + 0.825),
                       Eigen::VectorXd::Constant(K, xi));
}

/// Default M = K = 20 drop with the 1 km setup.
inline ProblemInstance full_instance(std::uint64_t seed, std::uint64_t drop, Precoder pc = Precoder::kMrt,
                                     double xi = 2.0) {
  DropParams dp;
  const NetworkRealization r = generate_drop(dp, seed, drop);
  return make_instance(r.stats, r.pilots, pc, PowerModel::uniform(dp.M), Eigen::VectorXd::Constant(dp.K, xi));
}

}  // namespace cellfree::testing
