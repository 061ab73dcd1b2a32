#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cellfree/network_model.hpp"

namespace cellfree {

enum class Precoder { kMrt, kFzf };

inline const char* to_string(Precoder p) { return p == Precoder::kMrt ? "MRT" : "FZF"; }

inline Precoder parse_precoder(const std::string& s) {
  std::string u;
  for (char c : s) u.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  if (u == "MRT") return Precoder::kMrt;
  if (u == "FZF" || u == "F-ZF") return Precoder::kFzf;
  throw std::invalid_argument("unknown precoder '" + s + "'");
}

/// Array gain and interference coefficients of a precoder.
struct PrecodingScheme {
  Precoder kind = Precoder::kMrt;
  double G = 0.0;      ///< array gain
  Eigen::MatrixXd z;   ///< M x K non-coherent interference coefficients
  Eigen::MatrixXd g;   ///< M x K, G * gamma
};

inline PrecodingScheme make_scheme(const ChannelStats& stats, Precoder kind, int tau_p) {
  PrecodingScheme s;
  s.kind = kind;
  if (kind == Precoder::kMrt) {
    s.G = stats.antennas;
    s.z = stats.beta;
  } else {
    if (stats.antennas <= tau_p)
      throw std::invalid_argument("FZF precoding requires N > tau_p (N=" + std::to_string(stats.antennas) +
                                  ", tau_p=" + std::to_string(tau_p) + ")");
    s.G = stats.antennas - tau_p;
    s.z = (stats.beta - stats.gamma).cwiseMax(0.0);
  }
  s.g = s.G * stats.gamma;
  return s;
}

/// Per-AP power consumption parameters.
struct PowerModel {
  Eigen::VectorXd delta;    ///< amplifier inefficiency, >= 1
  Eigen::VectorXd static_w; ///< P_m, watts
  Eigen::VectorXd p_bt;     ///< watts per bit/s
  Eigen::VectorXd p_max;    ///< per-AP transmit cap, watts
  double bandwidth = 20e6;  ///< Hz

  static PowerModel uniform(int M, double delta = 2.5, double static_w = 4.825, double p_bt = 0.25e-9,
                            double p_max = 1.0, double bandwidth = 20e6) {
    PowerModel pm;
    pm.delta = Eigen::VectorXd::Constant(M, delta);
    pm.static_w = Eigen::VectorXd::Constant(M, static_w);
    pm.p_bt = Eigen::VectorXd::Constant(M, p_bt);
    pm.p_max = Eigen::VectorXd::Constant(M, p_max);
    pm.bandwidth = bandwidth;
    return pm;
  }

  int num_aps() const { return static_cast<int>(delta.size()); }

  /// P_hw,m = P_m + B * P_bt,m * sum_k xi_k.
  Eigen::VectorXd hardware_power(const Eigen::VectorXd& xi) const {
    return static_w + (bandwidth * xi.sum()) * p_bt;
  }
};

/// Per-user spectral-efficiency targets.
struct SeRequirements {
  Eigen::VectorXd xi;  ///< b/s/Hz
  int tau_c = 200;
  int tau_p = 5;

  double prelog() const { return 1.0 - static_cast<double>(tau_p) / tau_c; }

  Eigen::VectorXd nu() const {
    Eigen::VectorXd v(xi.size());
    for (Eigen::Index k = 0; k < xi.size(); ++k) v(k) = sinr_target(xi(k), tau_c, tau_p);
    return v;
  }

  static double sinr_target(double xi, int tau_c, int tau_p) {
    return std::exp2(xi * tau_c / static_cast<double>(tau_c - tau_p)) - 1.0;
  }
};

struct PowerBreakdown {
  double transmit = 0.0;  ///< sum over active APs of Delta_m * sum_k q_mk^2
  double hardware = 0.0;  ///< sum over active APs of P_hw,m
  double total = 0.0;
  double radiated = 0.0;  ///< sum of q_mk^2 without the amplifier factor
};

/// Square-root power allocation and its evaluation.
struct Allocation {
  Eigen::MatrixXd q;       ///< M x K, q_mk = sqrt(rho_mk)
  std::vector<int> active; ///< ascending 0-based AP indices
  Eigen::VectorXd sinr;
  Eigen::VectorXd se;
  PowerBreakdown power;
  bool feasible = false;
};

inline std::vector<int> all_aps(int M) {
  std::vector<int> a(M);
  for (int m = 0; m < M; ++m) a[m] = m;
  return a;
}

/// SINR of every user for allocation q restricted to the active APs.
inline Eigen::VectorXd sinr(const ChannelStats& stats, const PrecodingScheme& scheme, const Eigen::MatrixXd& q,
                            const std::vector<int>& active, const PilotAssignment& pilots) {
  const int K = stats.num_users();
  if (q.rows() != stats.num_aps() || q.cols() != K) throw std::invalid_argument("sinr: q has wrong shape");
  if (scheme.kind == Precoder::kFzf && stats.antennas <= pilots.tau_p)
    throw std::invalid_argument("sinr: FZF requires N > tau_p");

  // c(k, j) = sum_{m in A} sqrt(gamma_mk) q_mj
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(K, K);
  Eigen::VectorXd nc = Eigen::VectorXd::Zero(K);
  for (int m : active) {
    for (int k = 0; k < K; ++k) {
      const double sg = std::sqrt(stats.gamma(m, k));
      for (int j = 0; j < K; ++j) c(k, j) += sg * q(m, j);
      nc(k) += scheme.z(m, k) * q.row(m).squaredNorm();
    }
  }
  Eigen::VectorXd out(K);
  for (int k = 0; k < K; ++k) {
    double interference = 0.0;
    for (int j : pilots.co_pilot[k])
      if (j != k) interference += c(k, j) * c(k, j);
    const double num = scheme.G * c(k, k) * c(k, k);
    const double den = scheme.G * interference + nc(k) + stats.sigma2_dl;
    out(k) = num / den;
  }
  return out;
}

inline Eigen::VectorXd spectral_efficiency(const Eigen::VectorXd& sinr_values, int tau_c, int tau_p) {
  if (tau_p >= tau_c) throw std::invalid_argument("spectral_efficiency: tau_p must be below tau_c");
  const double pre = 1.0 - static_cast<double>(tau_p) / tau_c;
  return (pre * (1.0 + sinr_values.array()).log() / std::log(2.0)).matrix();
}

inline PowerBreakdown total_power(const Eigen::MatrixXd& q, const std::vector<int>& active, const PowerModel& pm,
                                  const Eigen::VectorXd& p_hw) {
  PowerBreakdown b;
  for (int m : active) {
    const double rho = q.row(m).squaredNorm();
    b.transmit += pm.delta(m) * rho;
    b.radiated += rho;
    b.hardware += p_hw(m);
  }
  b.total = b.transmit + b.hardware;
  return b;
}

/// SINR_k >= nu_k (1 - tol) for every user.
inline bool meets_requirements(const Eigen::VectorXd& sinr_values, const Eigen::VectorXd& nu, double tol = 1e-6) {
  for (Eigen::Index k = 0; k < nu.size(); ++k)
    if (nu(k) > 0.0 && !(sinr_values(k) >= nu(k) * (1.0 - tol))) return false;
  return true;
}

/// Largest per-AP cap violation relative to the cap.
inline double cap_violation(const Eigen::MatrixXd& q, const std::vector<int>& active, const PowerModel& pm) {
  double v = 0.0;
  for (int m : active) v = std::max(v, q.row(m).squaredNorm() / pm.p_max(m) - 1.0);
  return v;
}

}  // namespace cellfree
