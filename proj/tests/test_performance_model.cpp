#include <gtest/gtest.h>

#include <cmath>

#include "cellfree/network_model.hpp"
#include "cellfree/performance_model.hpp"

using namespace cellfree;

namespace {

// Direct transcription of the closed-form SINR written in powers rho, used as an oracle.
double oracle_sinr(const ChannelStats& s, Precoder pc, int tau_p, const Eigen::MatrixXd& rho,
                   const std::vector<int>& active, const PilotAssignment& p, int k) {
  const double G = pc == Precoder::kMrt ? s.antennas : s.antennas - tau_p;
  double coh = 0.0;
  for (int m : active) coh += std::sqrt(rho(m, k) * s.gamma(m, k));
  double interf = 0.0;
  for (int j = 0; j < s.num_users(); ++j) {
    if (j == k || p.pilot_index[j] != p.pilot_index[k]) continue;
    double t = 0.0;
    for (int m : active) t += std::sqrt(rho(m, j) * s.gamma(m, k));
    interf += t * t;
  }
  double nc = 0.0;
  for (int j = 0; j < s.num_users(); ++j)
    for (int m : active) nc += rho(m, j) * (pc == Precoder::kMrt ? s.beta(m, k) : s.beta(m, k) - s.gamma(m, k));
  return G * coh * coh / (G * interf + nc + s.sigma2_dl);
}

NetworkRealization small_drop(std::uint64_t seed, int M = 6, int K = 4, int tau_p = 2) {
  DropParams dp;
  dp.M = M;
  dp.K = K;
  dp.tau_p = tau_p;
  dp.antennas = 8;
  dp.geometry.side_length = 400;
  return generate_drop(dp, seed, 0);
}

}  // namespace

TEST(Sinr, ZeroPowerGivesZero) {
  const NetworkRealization r = small_drop(1);
  const PrecodingScheme sc = make_scheme(r.stats, Precoder::kMrt, r.pilots.tau_p);
  const Eigen::VectorXd s = sinr(r.stats, sc, Eigen::MatrixXd::Zero(6, 4), all_aps(6), r.pilots);
  EXPECT_TRUE((s.array() == 0.0).all());
}

TEST(Sinr, SingleLinkMrtClosedForm) {
  ChannelStats st;
  st.beta = Eigen::MatrixXd::Constant(1, 1, 2e-10);
  st.gamma = Eigen::MatrixXd::Constant(1, 1, 1.5e-10);
  st.sigma2_dl = 4e-13;
  st.antennas = 20;
  const PilotAssignment p = assign_pilots(1, 1, 0);
  const PrecodingScheme sc = make_scheme(st, Precoder::kMrt, 1);
  const double rho = 0.37;
  const Eigen::VectorXd s = sinr(st, sc, Eigen::MatrixXd::Constant(1, 1, std::sqrt(rho)), {0}, p);
  EXPECT_NEAR(s(0), 20 * 1.5e-10 * rho / (rho * 2e-10 + 4e-13), 1e-12 * s(0));
}

TEST(Sinr, MatchesOracleBothPrecoders) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const NetworkRealization r = small_drop(seed);
    RandomStream rs(seed, 77);
    Eigen::MatrixXd rho(6, 4);
    for (int m = 0; m < 6; ++m)
      for (int k = 0; k < 4; ++k) rho(m, k) = rs.uniform(0.0, 0.25);
    const std::vector<int> active{0, 2, 3, 5};
    for (Precoder pc : {Precoder::kMrt, Precoder::kFzf}) {
      const PrecodingScheme sc = make_scheme(r.stats, pc, r.pilots.tau_p);
      const Eigen::VectorXd s = sinr(r.stats, sc, rho.cwiseSqrt(), active, r.pilots);
      for (int k = 0; k < 4; ++k) {
        const double o = oracle_sinr(r.stats, pc, r.pilots.tau_p, rho, active, r.pilots, k);
        EXPECT_NEAR(s(k), o, 1e-12 * o) << seed << " " << to_string(pc) << " k=" << k;
      }
    }
  }
}

TEST(Sinr, CoPilotFzfUsesEstimationError) {
  // Two co-pilot users at one AP.
  ChannelStats st;
  st.beta.resize(1, 2);
  st.beta << 3e-10, 1e-10;
  st.sigma2_ul = 1e-13;
  st.sigma2_dl = 1e-13;
  st.antennas = 10;
  const PilotAssignment p = assign_pilots(2, 1, 0);
  st.gamma = mmse_variance(st.beta, p, st.sigma2_ul);
  const PrecodingScheme sc = make_scheme(st, Precoder::kFzf, 1);
  Eigen::MatrixXd q(1, 2);
  q << 0.5, 0.7;
  const Eigen::VectorXd s = sinr(st, sc, q, {0}, p);
  const double G = 9.0;
  for (int k = 0; k < 2; ++k) {
    const int j = 1 - k;
    const double num = G * st.gamma(0, k) * q(0, k) * q(0, k);
    const double coh = G * st.gamma(0, k) * q(0, j) * q(0, j);
    const double nc = (st.beta(0, k) - st.gamma(0, k)) * (q(0, 0) * q(0, 0) + q(0, 1) * q(0, 1));
    EXPECT_NEAR(s(k), num / (coh + nc + 1e-13), 1e-12 * s(k));
  }
}

TEST(Sinr, InactiveApsIgnored) {
  const NetworkRealization r = small_drop(3);
  const PrecodingScheme sc = make_scheme(r.stats, Precoder::kMrt, r.pilots.tau_p);
  Eigen::MatrixXd q = Eigen::MatrixXd::Constant(6, 4, 0.2);
  const Eigen::VectorXd a = sinr(r.stats, sc, q, {1, 4}, r.pilots);
  q.row(0).setConstant(0.9);
  q.row(5).setConstant(0.1);
  const Eigen::VectorXd b = sinr(r.stats, sc, q, {1, 4}, r.pilots);
  EXPECT_TRUE((a.array() == b.array()).all());
}

TEST(Sinr, FzfRequiresMoreAntennasThanPilots) {
  ChannelStats st;
  st.beta = st.gamma = Eigen::MatrixXd::Constant(1, 1, 1e-10);
  st.antennas = 5;
  EXPECT_THROW(make_scheme(st, Precoder::kFzf, 5), std::invalid_argument);
  EXPECT_NO_THROW(make_scheme(st, Precoder::kMrt, 5));
}

TEST(Sinr, JointScalingInvariance) {
  const NetworkRealization r = small_drop(4);
  ChannelStats st = r.stats;
  const PrecodingScheme sc = make_scheme(st, Precoder::kMrt, r.pilots.tau_p);
  const Eigen::MatrixXd q = Eigen::MatrixXd::Constant(6, 4, 0.3);
  const Eigen::VectorXd a = sinr(st, sc, q, all_aps(6), r.pilots);
  st.sigma2_dl *= 2.0;
  const Eigen::VectorXd b = sinr(st, sc, q * std::sqrt(2.0), all_aps(6), r.pilots);
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(a(k), b(k), 1e-12 * a(k));
}

// d SINR_k / d q_mk has the sign of sqrt(gamma_mk) D_k - q_mk z_mk c_k, with c_k the coherent
// sum and D_k the denominator. Monotonicity in own power holds exactly where this is positive.
TEST(Sinr, OwnPowerDerivativeSign) {
  int increasing = 0, decreasing = 0;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const NetworkRealization r = small_drop(seed);
    for (Precoder pc : {Precoder::kMrt, Precoder::kFzf}) {
      const PrecodingScheme sc = make_scheme(r.stats, pc, r.pilots.tau_p);
      RandomStream rs(seed, 5);
      Eigen::MatrixXd q(6, 4);
      for (int m = 0; m < 6; ++m)
        for (int k = 0; k < 4; ++k) q(m, k) = rs.uniform(0.0, 1.0);
      const int m = static_cast<int>(rs.index(6)), k = static_cast<int>(rs.index(4));
      const double h = 1e-6;
      Eigen::MatrixXd qp = q, qm = q;
      qp(m, k) += h;
      qm(m, k) -= h;
      const double fd = (sinr(r.stats, sc, qp, all_aps(6), r.pilots)(k) - sinr(r.stats, sc, qm, all_aps(6), r.pilots)(k)) / (2 * h);
      double c = 0.0;
      for (int a = 0; a < 6; ++a) c += std::sqrt(r.stats.gamma(a, k)) * q(a, k);
      const double s = sinr(r.stats, sc, q, all_aps(6), r.pilots)(k);
      const double D = sc.G * c * c / s;
      const double predicted = std::sqrt(r.stats.gamma(m, k)) * D - q(m, k) * sc.z(m, k) * c;
      if (std::abs(predicted) < 1e-6 * std::sqrt(r.stats.gamma(m, k)) * D) continue;
      EXPECT_EQ(fd > 0.0, predicted > 0.0) << seed;
      (predicted > 0.0 ? increasing : decreasing)++;
    }
  }
  EXPECT_GT(increasing, 0);
}

TEST(Sinr, FzfNonCoherentBelowMrt) {
  const NetworkRealization r = small_drop(8);
  const PrecodingScheme mrt = make_scheme(r.stats, Precoder::kMrt, r.pilots.tau_p);
  const PrecodingScheme fzf = make_scheme(r.stats, Precoder::kFzf, r.pilots.tau_p);
  EXPECT_TRUE((fzf.z.array() <= mrt.z.array()).all());
  EXPECT_TRUE((fzf.z.array() >= 0.0).all());
  EXPECT_EQ(mrt.G, 8);
  EXPECT_EQ(fzf.G, 6);
}

TEST(Se, TargetsAndInverse) {
  // 4 * 2^(10/195) - 1 = 3.1447413 by series expansion of the exponent.
  EXPECT_NEAR(SeRequirements::sinr_target(2.0, 200, 5), 3.1447413, 1e-6);
  EXPECT_NEAR(SeRequirements::sinr_target(2.0, 200, 5), std::exp2(400.0 / 195.0) - 1.0, 1e-15);
  Eigen::VectorXd s(3);
  s << 0.0, SeRequirements::sinr_target(2.0, 200, 5), SeRequirements::sinr_target(1.3, 200, 5);
  const Eigen::VectorXd se = spectral_efficiency(s, 200, 5);
  EXPECT_EQ(se(0), 0.0);
  EXPECT_NEAR(se(1), 2.0, 1e-14);
  EXPECT_NEAR(se(2), 1.3, 1e-14);
  EXPECT_EQ(SeRequirements::sinr_target(0.0, 200, 5), 0.0);
  EXPECT_LT(SeRequirements::sinr_target(1.0, 200, 5), SeRequirements::sinr_target(1.1, 200, 5));
}

TEST(Power, HardwareConstant) {
  const PowerModel pm = PowerModel::uniform(20);
  const Eigen::VectorXd phw = pm.hardware_power(Eigen::VectorXd::Constant(20, 2.0));
  EXPECT_NEAR(phw(0), 5.025, 1e-12);
  EXPECT_NEAR(phw.sum(), 100.5, 1e-10);
}

TEST(Power, Breakdown) {
  const PowerModel pm = PowerModel::uniform(3);
  const Eigen::VectorXd phw = pm.hardware_power(Eigen::VectorXd::Constant(1, 2.0));
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(3, 1);
  const PowerBreakdown empty = total_power(q, {}, pm, phw);
  EXPECT_EQ(empty.total, 0.0);
  q(1, 0) = std::sqrt(0.4);
  const PowerBreakdown b = total_power(q, {1}, pm, phw);
  EXPECT_NEAR(b.transmit, 1.0, 1e-15);
  EXPECT_NEAR(b.radiated, 0.4, 1e-15);
  EXPECT_NEAR(b.hardware, 4.825 + 20e6 * 0.25e-9 * 2.0, 1e-15);
  EXPECT_EQ(b.total, b.transmit + b.hardware);
}

TEST(Power, RequirementTolerance) {
  Eigen::VectorXd nu(2), s(2);
  nu << 3.0, 0.0;
  s << 3.0 * (1 - 0.9e-6), 0.0;
  EXPECT_TRUE(meets_requirements(s, nu));
  s(0) = 3.0 * (1 - 1.1e-6);
  EXPECT_FALSE(meets_requirements(s, nu));
}
