#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cellfree/rng.hpp"

namespace cellfree {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// Thrown when rejection sampling cannot place an AP within its attempt budget.
class PlacementError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GeometryParams {
  double side_length = 1000.0;   ///< meters
  double min_ap_spacing = 50.0;  ///< meters, wrap-around horizontal distance
  double ap_height = 10.0;       ///< meters above the users
  std::uint64_t max_attempts_per_ap = 1000000;
};

struct Geometry {
  double side_length = 1000.0;
  double min_ap_spacing = 50.0;
  double ap_height = 10.0;
  std::vector<Point2> ap_positions;
  std::vector<Point2> user_positions;

  int num_aps() const { return static_cast<int>(ap_positions.size()); }
  int num_users() const { return static_cast<int>(user_positions.size()); }
};

/// Horizontal distance on the torus of the given side length.
inline double torus_distance(const Point2& a, const Point2& b, double side) {
  double dx = std::abs(a.x - b.x);
  double dy = std::abs(a.y - b.y);
  dx = std::min(dx, side - dx);
  dy = std::min(dy, side - dy);
  return std::hypot(dx, dy);
}

/// Wrap-around distance including the AP height offset.
inline double wrap_distance(const Point2& a, const Point2& b, double side, double ap_height) {
  return std::hypot(torus_distance(a, b, side), ap_height);
}

/**
 * Place M APs by rejection sampling subject to the minimum wrap-around
 * spacing, then K users uniformly. APs and users use separate streams.
 */
inline Geometry generate_layout(int M, int K, const GeometryParams& params, std::uint64_t seed) {
  if (M < 1 || K < 1) throw std::invalid_argument("generate_layout: M and K must be at least 1");
  if (!(params.side_length > 0.0) || params.min_ap_spacing < 0.0 || params.ap_height < 0.0)
    throw std::invalid_argument("generate_layout: invalid geometry parameters");

  Geometry g;
  g.side_length = params.side_length;
  g.min_ap_spacing = params.min_ap_spacing;
  g.ap_height = params.ap_height;
  g.ap_positions.reserve(M);
  g.user_positions.reserve(K);

  const double L = params.side_length;
  auto clamp_coord = [L](double v) { return v < L ? v : std::nextafter(L, 0.0); };

  RandomStream ap_rng(seed, static_cast<std::uint64_t>(Stream::kApPlacement));
  for (int m = 0; m < M; ++m) {
    bool placed = false;
    for (std::uint64_t attempt = 0; attempt < params.max_attempts_per_ap; ++attempt) {
      Point2 p{clamp_coord(ap_rng.uniform() * L), clamp_coord(ap_rng.uniform() * L)};
      bool ok = true;
      for (const auto& other : g.ap_positions) {
        if (torus_distance(p, other, L) < params.min_ap_spacing) {
          ok = false;
          break;
        }
      }
      if (ok) {
        g.ap_positions.push_back(p);
        placed = true;
        break;
      }
    }
    if (!placed) {
      throw PlacementError("could not place AP " + std::to_string(m + 1) + " of " + std::to_string(M) +
                           " with spacing " + std::to_string(params.min_ap_spacing) + " m after " +
                           std::to_string(params.max_attempts_per_ap) + " attempts");
    }
  }

  RandomStream user_rng(seed, static_cast<std::uint64_t>(Stream::kUserPlacement));
  for (int k = 0; k < K; ++k) {
    g.user_positions.push_back({clamp_coord(user_rng.uniform() * L), clamp_coord(user_rng.uniform() * L)});
  }
  return g;
}

struct ShadowParams {
  double variance_db2 = 16.0;       ///< shadow fading variance, dB^2
  double decorrelation_m = 9.0;     ///< distance at which the covariance halves
  double pathloss_intercept_db = -30.5;
  double pathloss_slope_db = 36.7;  ///< per decade of distance
};

/// User-to-user shadow covariance (dB^2) for a single AP.
inline Eigen::MatrixXd shadow_covariance(const Geometry& g, const ShadowParams& sp) {
  const int K = g.num_users();
  Eigen::MatrixXd C(K, K);
  for (int i = 0; i < K; ++i) {
    for (int j = 0; j < K; ++j) {
      const double d = torus_distance(g.user_positions[i], g.user_positions[j], g.side_length);
      C(i, j) = sp.variance_db2 * std::exp2(-d / sp.decorrelation_m);
    }
  }
  return C;
}

/// Lower-triangular factor L with L L^T = C, adding diagonal loading when needed.
inline Eigen::MatrixXd shadow_factor(const Eigen::MatrixXd& C, double variance_db2) {
  Eigen::LLT<Eigen::MatrixXd> llt(C);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  double load = 1e-10 * variance_db2;
  for (int tries = 0; tries < 12; ++tries, load *= 10.0) {
    Eigen::MatrixXd R = C;
    R.diagonal().array() += load;
    llt.compute(R);
    if (llt.info() == Eigen::Success) return llt.matrixL();
  }
  throw std::runtime_error("shadow covariance factorization failed");
}

/// Shadow fading samples in dB, one row per AP (independent across APs).
inline Eigen::MatrixXd sample_shadowing(const Geometry& g, const ShadowParams& sp, std::uint64_t seed) {
  const int M = g.num_aps();
  const int K = g.num_users();
  const Eigen::MatrixXd L = shadow_factor(shadow_covariance(g, sp), sp.variance_db2);
  RandomStream rng(seed, static_cast<std::uint64_t>(Stream::kShadowing));
  Eigen::MatrixXd z(M, K);
  Eigen::VectorXd w(K);
  for (int m = 0; m < M; ++m) {
    for (int k = 0; k < K; ++k) w(k) = rng.normal();
    z.row(m) = (L * w).transpose();
  }
  return z;
}

/// Path loss in dB (negative) at distance d meters with shadowing z dB.
inline double pathloss_db(double d, double z_db, const ShadowParams& sp) {
  return sp.pathloss_intercept_db - sp.pathloss_slope_db * std::log10(d) + z_db;
}

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
inline double dbm_to_watt(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }

/// Large-scale fading coefficients beta (M x K, linear) with correlated shadowing.
inline Eigen::MatrixXd large_scale_fading(const Geometry& g, const ShadowParams& sp, std::uint64_t seed) {
  const int M = g.num_aps();
  const int K = g.num_users();
  const Eigen::MatrixXd z = sp.variance_db2 > 0.0 ? sample_shadowing(g, sp, seed) : Eigen::MatrixXd::Zero(M, K);
  Eigen::MatrixXd beta(M, K);
  for (int m = 0; m < M; ++m) {
    for (int k = 0; k < K; ++k) {
      const double d = wrap_distance(g.ap_positions[m], g.user_positions[k], g.side_length, g.ap_height);
      beta(m, k) = db_to_linear(pathloss_db(d, z(m, k), sp));
    }
  }
  return beta;
}

struct PilotAssignment {
  int tau_p = 1;
  std::vector<int> pilot_index;          ///< 0-based pilot of each user
  std::vector<std::vector<int>> co_pilot;  ///< users sharing the pilot of k, including k, ascending
  std::vector<double> pilot_power;       ///< watts per user

  int num_users() const { return static_cast<int>(pilot_index.size()); }
};

/// Rebuild co-pilot sets from pilot indices.
inline void rebuild_co_pilot_sets(PilotAssignment& p) {
  const int K = p.num_users();
  p.co_pilot.assign(K, {});
  for (int k = 0; k < K; ++k)
    for (int j = 0; j < K; ++j)
      if (p.pilot_index[j] == p.pilot_index[k]) p.co_pilot[k].push_back(j);
}

/// Balanced random pilot assignment: group sizes differ by at most one.
inline PilotAssignment assign_pilots(int K, int tau_p, std::uint64_t seed, double pilot_power = 0.2) {
  if (K < 1 || tau_p < 1) throw std::invalid_argument("assign_pilots: K and tau_p must be at least 1");
  std::vector<int> users(K);
  for (int k = 0; k < K; ++k) users[k] = k;
  RandomStream rng(seed, static_cast<std::uint64_t>(Stream::kPilots));
  rng.shuffle(users);
  PilotAssignment p;
  p.tau_p = tau_p;
  p.pilot_index.assign(K, 0);
  for (int pos = 0; pos < K; ++pos) p.pilot_index[users[pos]] = pos % tau_p;
  p.pilot_power.assign(K, pilot_power);
  rebuild_co_pilot_sets(p);
  return p;
}

/// MMSE channel estimate variance gamma (M x K).
inline Eigen::MatrixXd mmse_variance(const Eigen::MatrixXd& beta, const PilotAssignment& pilots, double sigma2_ul) {
  const int M = static_cast<int>(beta.rows());
  const int K = static_cast<int>(beta.cols());
  if (pilots.num_users() != K) throw std::invalid_argument("mmse_variance: pilot assignment size mismatch");
  const double tp = pilots.tau_p;
  Eigen::MatrixXd gamma(M, K);
  for (int m = 0; m < M; ++m) {
    for (int k = 0; k < K; ++k) {
      double denom = sigma2_ul;
      for (int j : pilots.co_pilot[k]) denom += tp * pilots.pilot_power[j] * beta(m, j);
      gamma(m, k) = tp * pilots.pilot_power[k] * beta(m, k) * beta(m, k) / denom;
    }
  }
  return gamma;
}

struct ChannelStats {
  Eigen::MatrixXd beta;   ///< M x K, linear
  Eigen::MatrixXd gamma;  ///< M x K, linear
  double sigma2_ul = 0.0; ///< watts
  double sigma2_dl = 0.0; ///< watts
  int tau_c = 200;
  int antennas = 20;      ///< N per AP

  int num_aps() const { return static_cast<int>(beta.rows()); }
  int num_users() const { return static_cast<int>(beta.cols()); }
};

/// Parameters for one random network realization.
struct DropParams {
  int M = 20;
  int K = 20;
  int antennas = 20;
  int tau_c = 200;
  int tau_p = 5;
  double pilot_power = 0.2;    ///< watts
  double noise_ul_dbm = -94.0;
  double noise_dl_dbm = -94.0;
  GeometryParams geometry;
  ShadowParams shadow;
};

struct NetworkRealization {
  Geometry geometry;
  PilotAssignment pilots;
  ChannelStats stats;
};

/// Build a full realization; every random component uses its own stream of (seed, drop).
inline NetworkRealization generate_drop(const DropParams& p, std::uint64_t seed, std::uint64_t drop) {
  const std::uint64_t s = derive_seed(seed, drop);
  NetworkRealization r;
  r.geometry = generate_layout(p.M, p.K, p.geometry, s);
  r.stats.beta = large_scale_fading(r.geometry, p.shadow, s);
  r.pilots = assign_pilots(p.K, p.tau_p, s, p.pilot_power);
  r.stats.sigma2_ul = dbm_to_watt(p.noise_ul_dbm);
  r.stats.sigma2_dl = dbm_to_watt(p.noise_dl_dbm);
  r.stats.gamma = mmse_variance(r.stats.beta, r.pilots, r.stats.sigma2_ul);
  r.stats.tau_c = p.tau_c;
  r.stats.antennas = p.antennas;
  return r;
}

}  // namespace cellfree
