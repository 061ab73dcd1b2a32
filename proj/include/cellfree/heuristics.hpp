#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "cellfree/formulations.hpp"

namespace cellfree {

struct IrlsOptions {
  double p_tilde = 1.0;         ///< exponent; p_tilde / 2 = 0.5
  double epsilon = -1.0;        ///< constant damping; negative selects 1e-3 sqrt(max P_max)
  double stop_relative = 1e-4;  ///< stop when |delta| <= stop_relative * first objective
  int max_iterations = 50;
  FormulationOptions formulation;
  soc::SolverOptions solver;
};

struct IrlsResult {
  Eigen::MatrixXd q;                        ///< last successful iterate
  std::vector<double> objective;            ///< sum_m Delta_m ||rho_m||^p per iteration
  std::vector<double> damped_objective;     ///< sum_m Delta_m (||rho_m||^2 + eps^2)^(p/2)
  std::vector<Eigen::VectorXd> weights;     ///< weights used by each iteration's solve
  std::vector<Eigen::VectorXd> row_power;   ///< sum_k rho_mk per iteration, watts
  std::vector<int> support_size;            ///< rows above the readout threshold per iteration
  double epsilon = 0.0;
  int iterations = 0;
  bool converged = false;
  bool failed = false;                      ///< a solve failed; q holds the last good iterate
  soc::SolveStatus last_status = soc::SolveStatus::kOptimal;
  double seconds = 0.0;
};

/// Row power below which an AP counts as off when reading a sparse solution (watts).
inline constexpr double kSupportThreshold = 1e-8;

inline Eigen::VectorXd row_power(const Eigen::MatrixXd& q) { return q.rowwise().squaredNorm(); }

inline std::vector<int> support_of(const Eigen::MatrixXd& q, double threshold = kSupportThreshold) {
  std::vector<int> a;
  const Eigen::VectorXd p = row_power(q);
  for (int m = 0; m < p.size(); ++m)
    if (p(m) > threshold) a.push_back(m);
  return a;
}

/// Reweighted quadratic minimization approximating sum_m Delta_m ||rho_m||^p.
inline IrlsResult irls_sparsify(const ProblemInstance& in, const IrlsOptions& opt = {}) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  const int M = in.num_aps();
  IrlsResult res;
  res.epsilon = opt.epsilon > 0.0 ? opt.epsilon : 1e-3 * std::sqrt(in.power.p_max.maxCoeff());
  const double eps2 = res.epsilon * res.epsilon;
  const double half = opt.p_tilde / 2.0;
  Eigen::VectorXd a = Eigen::VectorXd::Ones(M);
  double first = std::numeric_limits<double>::quiet_NaN();
  for (int n = 1; n <= opt.max_iterations; ++n) {
    const SolvedProgram sp = solve_formulation(in, build_weighted(in, a, opt.formulation), opt.solver);
    res.last_status = sp.solve.status;
    if (!sp.ok()) {
      res.failed = true;
      break;
    }
    res.iterations = n;
    res.q = sp.allocation.q;
    res.weights.push_back(a);
    const Eigen::VectorXd rp = row_power(res.q);
    res.row_power.push_back(rp);
    double obj = 0.0, damped = 0.0;
    int supp = 0;
    for (int m = 0; m < M; ++m) {
      obj += in.power.delta(m) * std::pow(rp(m), half);
      damped += in.power.delta(m) * std::pow(rp(m) + eps2, half);
      if (rp(m) > kSupportThreshold) ++supp;
      a(m) = in.power.delta(m) * half * std::pow(rp(m) + eps2, half - 1.0);
    }
    res.objective.push_back(obj);
    res.damped_objective.push_back(damped);
    res.support_size.push_back(supp);
    if (n == 1) {
      first = obj;
    } else if (std::abs(res.objective[n - 2] - obj) <= opt.stop_relative * first) {
      res.converged = true;
      break;
    }
  }
  res.seconds = std::chrono::duration<double>(clock::now() - start).count();
  return res;
}

struct ThetaOrdering {
  Eigen::VectorXd theta;
  std::vector<int> order;  ///< AP indices sorted by ascending theta, ties by index
};

/// theta_m = N sum_k rho_mk c_mk with c = beta (default) or gamma.
inline ThetaOrdering theta_ordering(const Eigen::MatrixXd& q, const Eigen::MatrixXd& coeff, int antennas) {
  ThetaOrdering t;
  const int M = static_cast<int>(q.rows());
  t.theta.resize(M);
  for (int m = 0; m < M; ++m) t.theta(m) = antennas * (q.row(m).array().square() * coeff.row(m).array()).sum();
  t.order = all_aps(M);
  std::stable_sort(t.order.begin(), t.order.end(), [&](int a, int b) { return t.theta(a) < t.theta(b); });
  return t;
}

struct TurnoffResult {
  Allocation allocation;
  double s_star = 0.0;  ///< sqrt of the incumbent total power
  int solves = 0;
  int improvements = 0;
  std::vector<std::pair<int, int>> range_trace;  ///< (M_low, M_up) before each solve
};

struct TurnoffOptions {
  FormulationOptions formulation;
  soc::SolverOptions solver;
};

/**
 * Bisection over how many of the lowest-ranked APs to switch off. Positions
 * are 1-based in `order`; the candidate set keeps positions m..M.
 */
inline TurnoffResult bisection_turnoff(const ProblemInstance& in, const std::vector<int>& order,
                                       const Allocation& initial, const TurnoffOptions& opt = {}) {
  const int M = static_cast<int>(order.size());
  TurnoffResult res;
  res.allocation = initial;
  res.s_star = std::sqrt(initial.power.total);
  int low = 1, up = M;
  while (up - low > 1) {
    const int mid = (low + up) / 2;
    res.range_trace.push_back({low, up});
    std::vector<int> active(order.begin() + (mid - 1), order.end());
    ++res.solves;
    const SolvedProgram sp = solve_formulation(in, build_fixed_set(in, active, opt.formulation), opt.solver);
    const double s = sp.ok() ? std::sqrt(sp.allocation.power.total) : soc::kInf;
    if (sp.ok() && sp.allocation.feasible && s < res.s_star) {
      low = mid;
      res.s_star = s;
      res.allocation = sp.allocation;
      ++res.improvements;
    } else {
      up = mid;
    }
  }
  return res;
}

/// ceil(log2(M + 1)): the bisection solve bound.
inline int bisection_bound(int M) {
  int b = 0;
  while ((1L << b) < static_cast<long>(M) + 1) ++b;
  return b;
}

enum class ThetaChannel { kBeta, kGamma };

struct HeuristicOptions {
  IrlsOptions irls;
  FormulationOptions formulation;
  soc::SolverOptions solver;
  ThetaChannel theta_channel = ThetaChannel::kBeta;
};

struct HeuristicResult {
  bool ok = false;
  Allocation allocation;
  std::string status = "failed";
  int solves = 0;              ///< all SOC programs solved
  int pre_order_solves = 0;    ///< solves before the ordering is fixed
  int bisection_solves = 0;
  int irls_iterations = 0;
  ThetaOrdering ordering;
  IrlsResult irls;
  double seconds = 0.0;
};

namespace detail {

inline const Eigen::MatrixXd& theta_coeff(const ProblemInstance& in, ThetaChannel ch) {
  return ch == ThetaChannel::kBeta ? in.stats.beta : in.stats.gamma;
}

inline double elapsed_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// IRLS sparsity, theta ordering of its solution, and bisection turn-off.
inline HeuristicResult algorithm1(const ProblemInstance& in, const HeuristicOptions& opt = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  HeuristicResult res;
  IrlsOptions io = opt.irls;
  io.formulation = opt.formulation;
  io.solver = opt.solver;
  res.irls = irls_sparsify(in, io);
  res.irls_iterations = res.irls.iterations;
  res.solves = res.irls.iterations + (res.irls.failed ? 1 : 0);
  if (res.irls.iterations == 0) {
    res.status = "irls_failed";
    res.seconds = detail::elapsed_since(t0);
    return res;
  }
  res.pre_order_solves = res.solves;

  // Incumbent: the better of the fixed-set optimum on the IRLS support and all APs on.
  Allocation incumbent;
  incumbent.power.total = soc::kInf;
  auto consider = [&](const std::vector<int>& aps) {
    if (aps.empty()) return;
    ++res.solves;
    const SolvedProgram sp = solve_formulation(in, build_fixed_set(in, aps, opt.formulation), opt.solver);
    if (sp.ok() && sp.allocation.feasible && sp.allocation.power.total < incumbent.power.total)
      incumbent = sp.allocation;
  };
  const std::vector<int> support = support_of(res.irls.q);
  consider(support);
  if (static_cast<int>(support.size()) != in.num_aps()) consider(all_aps(in.num_aps()));
  if (!std::isfinite(incumbent.power.total)) {
    res.status = "infeasible";
    res.seconds = detail::elapsed_since(t0);
    return res;
  }

  res.ordering = theta_ordering(res.irls.q, detail::theta_coeff(in, opt.theta_channel), in.stats.antennas);
  const TurnoffResult tr = bisection_turnoff(in, res.ordering.order, incumbent, {opt.formulation, opt.solver});
  res.bisection_solves = tr.solves;
  res.solves += tr.solves;
  res.allocation = tr.allocation;
  res.ok = true;
  res.status = res.irls.failed ? "irls_partial" : "ok";
  res.seconds = detail::elapsed_since(t0);
  return res;
}

/// Transmit-only solve once, theta ordering of its solution, and bisection turn-off.
inline HeuristicResult algorithm2(const ProblemInstance& in, const HeuristicOptions& opt = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  HeuristicResult res;
  const SolvedProgram sp = solve_formulation(in, build_transmit_only(in, opt.formulation), opt.solver);
  res.solves = 1;
  res.pre_order_solves = 1;
  if (!sp.ok() || !sp.allocation.feasible) {
    res.status = sp.ok() ? "recheck_failed" : soc::to_string(sp.solve.status);
    res.seconds = detail::elapsed_since(t0);
    return res;
  }
  res.ordering = theta_ordering(sp.allocation.q, detail::theta_coeff(in, opt.theta_channel), in.stats.antennas);
  const TurnoffResult tr = bisection_turnoff(in, res.ordering.order, sp.allocation, {opt.formulation, opt.solver});
  res.bisection_solves = tr.solves;
  res.solves += tr.solves;
  res.allocation = tr.allocation;
  res.ok = true;
  res.status = "ok";
  res.seconds = detail::elapsed_since(t0);
  return res;
}

/// AP selection from the IRLS support, then power minimization on that set.
inline HeuristicResult disjoint_sparsity(const ProblemInstance& in, const HeuristicOptions& opt = {},
                                         const IrlsResult* precomputed = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  HeuristicResult res;
  if (precomputed) {
    res.irls = *precomputed;
  } else {
    IrlsOptions io = opt.irls;
    io.formulation = opt.formulation;
    io.solver = opt.solver;
    res.irls = irls_sparsify(in, io);
    res.solves = res.irls.iterations + (res.irls.failed ? 1 : 0);
  }
  res.irls_iterations = res.irls.iterations;
  std::vector<int> active = res.irls.iterations > 0 ? support_of(res.irls.q) : std::vector<int>{};
  bool fallback = active.empty();
  if (!fallback) {
    ++res.solves;
    const SolvedProgram sp = solve_formulation(in, build_fixed_set(in, active, opt.formulation), opt.solver);
    if (sp.ok() && sp.allocation.feasible) {
      res.allocation = sp.allocation;
      res.ok = true;
      res.status = "ok";
    } else {
      fallback = true;
    }
  }
  if (fallback) {
    ++res.solves;
    const SolvedProgram sp = solve_formulation(in, build_transmit_only(in, opt.formulation), opt.solver);
    if (sp.ok() && sp.allocation.feasible) {
      res.allocation = sp.allocation;
      res.ok = true;
      res.status = "fallback_all_on";
    } else {
      res.status = sp.ok() ? "recheck_failed" : soc::to_string(sp.solve.status);
    }
  }
  res.seconds = detail::elapsed_since(t0);
  return res;
}

}  // namespace cellfree
