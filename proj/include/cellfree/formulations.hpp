#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cellfree/network_model.hpp"
#include "cellfree/performance_model.hpp"
#include "cellfree/soc/program.hpp"
#include "cellfree/soc/solver.hpp"

namespace cellfree {

/// Everything entering the power-minimization programs for one drop.
struct ProblemInstance {
  ChannelStats stats;
  PrecodingScheme scheme;
  PilotAssignment pilots;
  SeRequirements requirements;
  PowerModel power;

  // Cached derived data.
  Eigen::VectorXd nu;      ///< SINR targets
  Eigen::VectorXd p_hw;    ///< effective hardware power per AP, watts
  Eigen::MatrixXd sqrt_g;  ///< sqrt(G gamma_mk)
  Eigen::MatrixXd sqrt_z;  ///< sqrt(z_mk)
  double sigma_dl = 0.0;   ///< sqrt(sigma2_dl)

  int num_aps() const { return stats.num_aps(); }
  int num_users() const { return stats.num_users(); }
  bool any_requirement() const { return (nu.array() > 0.0).any(); }
};

inline ProblemInstance make_instance(const ChannelStats& stats, const PilotAssignment& pilots, Precoder precoder,
                                     const PowerModel& power, const Eigen::VectorXd& xi) {
  const int M = stats.num_aps(), K = stats.num_users();
  if (pilots.num_users() != K || xi.size() != K || power.num_aps() != M || stats.gamma.rows() != M ||
      stats.gamma.cols() != K)
    throw std::invalid_argument("make_instance: inconsistent dimensions");
  if (pilots.tau_p >= stats.tau_c) throw std::invalid_argument("make_instance: tau_p must be below tau_c");
  if ((xi.array() < 0.0).any()) throw std::invalid_argument("make_instance: negative SE requirement");
  ProblemInstance in;
  in.stats = stats;
  in.pilots = pilots;
  in.power = power;
  in.scheme = make_scheme(stats, precoder, pilots.tau_p);
  in.requirements.xi = xi;
  in.requirements.tau_c = stats.tau_c;
  in.requirements.tau_p = pilots.tau_p;
  in.nu = in.requirements.nu();
  in.p_hw = power.hardware_power(xi);
  in.sqrt_g = in.scheme.g.cwiseSqrt();
  in.sqrt_z = in.scheme.z.cwiseMax(0.0).cwiseSqrt();
  in.sigma_dl = std::sqrt(stats.sigma2_dl);
  return in;
}

/// Branch-and-bound box over the AP activity variables.
struct BnbBox {
  std::vector<int> fixed_on;
  std::vector<int> fixed_off;
  std::vector<int> free;
  double lower_bound = -soc::kInf;
  int depth = 0;

  static BnbBox root(int M) {
    BnbBox b;
    b.free = all_aps(M);
    return b;
  }
};

enum class NonCoherentEncoding {
  kFlattened,  ///< sub-norms merged into the SINR cone (equivalent, fewer variables)
  kAuxiliary,  ///< one auxiliary variable and cone per (k, k') pair
};

/// Continuous relaxation used to bound a branch-and-bound box.
enum class Relaxation {
  kSquaredActivity,  ///< alpha_m sqrt(P_hw,m) entries inside the power norm (alpha^2 P_hw)
  kPerspective,      ///< alpha_m P_hw,m + Delta_m ||u_m||^2 / alpha_m, the convex hull per AP
};

struct FormulationOptions {
  NonCoherentEncoding encoding = NonCoherentEncoding::kFlattened;
  Relaxation relaxation = Relaxation::kSquaredActivity;
};

/// A built program together with the variable layout needed to read results.
struct Formulation {
  soc::SocProgram program;
  int M = 0, K = 0;
  Eigen::MatrixXi q_index;       ///< variable of q_mk, or -1 when AP m is absent
  std::vector<int> aps;          ///< APs with q variables, ascending
  std::vector<int> alpha_index;  ///< per AP, -1 unless AP is free in a relaxation
  int s_index = -1;              ///< epigraph of the norm objective
  bool linear_objective = false; ///< objective is total power itself rather than its square root
  double fixed_power = 0.0;      ///< hardware power of always-on APs, kept out of the norm objective
  int t_index = -1;              ///< epigraph of the weighted quadratic objective
  bool structurally_infeasible = false;
  int top_level_cones = 0;
  int auxiliary_cones = 0;

  Eigen::MatrixXd extract_q(const std::vector<double>& x) const {
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(M, K);
    for (int m = 0; m < M; ++m)
      for (int k = 0; k < K; ++k)
        if (q_index(m, k) >= 0) q(m, k) = std::max(0.0, x[q_index(m, k)]);
    return q;
  }

  /// Total power implied by an optimal objective value.
  double power_value(double objective) const {
    return linear_objective ? objective : objective * objective + fixed_power;
  }

  Eigen::VectorXd extract_alpha(const std::vector<double>& x) const {
    Eigen::VectorXd a = Eigen::VectorXd::Zero(M);
    for (int m = 0; m < M; ++m)
      if (alpha_index[m] >= 0) a(m) = std::clamp(x[alpha_index[m]], 0.0, 1.0);
    return a;
  }
};

namespace detail {

/// Adds q variables for the given APs, the SINR cones and per-AP caps.
/// Free APs (alpha variable present) get a cap scaled by alpha.
inline void add_power_core(const ProblemInstance& in, Formulation& f, const FormulationOptions& opt) {
  const int K = in.num_users();
  soc::SocProgram& p = f.program;
  for (int m : f.aps)
    for (int k = 0; k < K; ++k)
      f.q_index(m, k) = p.add_variable("q[" + std::to_string(m) + "," + std::to_string(k) + "]", 0.0, soc::kInf);

  // Auxiliary non-coherent norms t_{k,k'} >= ||sqrt(z_k) o u_{k'}||.
  Eigen::MatrixXi t_index = Eigen::MatrixXi::Constant(K, K, -1);
  if (opt.encoding == NonCoherentEncoding::kAuxiliary) {
    for (int k = 0; k < K; ++k) {
      if (!(in.nu(k) > 0.0)) continue;
      for (int j = 0; j < K; ++j) {
        t_index(k, j) = p.add_variable("t[" + std::to_string(k) + "," + std::to_string(j) + "]", 0.0, soc::kInf);
        std::vector<soc::AffineExpr> lhs;
        for (int m : f.aps) lhs.emplace_back(f.q_index(m, j), in.sqrt_z(m, k));
        p.add_cone(std::move(lhs), soc::AffineExpr(t_index(k, j), 1.0),
                   "noncoherent[" + std::to_string(k) + "," + std::to_string(j) + "]");
        ++f.auxiliary_cones;
      }
    }
  }

  for (int k = 0; k < K; ++k) {
    if (!(in.nu(k) > 0.0)) continue;
    const double sn = std::sqrt(in.nu(k));
    std::vector<soc::AffineExpr> lhs;
    for (int j : in.pilots.co_pilot[k]) {
      if (j == k) continue;
      soc::AffineExpr e;
      for (int m : f.aps) e.add(f.q_index(m, j), sn * in.sqrt_g(m, k));
      lhs.push_back(std::move(e));
    }
    for (int j = 0; j < K; ++j) {
      if (opt.encoding == NonCoherentEncoding::kAuxiliary) {
        lhs.emplace_back(t_index(k, j), sn);
      } else {
        for (int m : f.aps) lhs.emplace_back(f.q_index(m, j), sn * in.sqrt_z(m, k));
      }
    }
    lhs.emplace_back(sn * in.sigma_dl);
    soc::AffineExpr rhs;
    for (int m : f.aps) rhs.add(f.q_index(m, k), in.sqrt_g(m, k));
    p.add_cone(std::move(lhs), std::move(rhs), "sinr[" + std::to_string(k) + "]");
    ++f.top_level_cones;
  }

  for (int m : f.aps) {
    std::vector<soc::AffineExpr> lhs;
    for (int k = 0; k < K; ++k) lhs.emplace_back(f.q_index(m, k), 1.0);
    const double cap = std::sqrt(in.power.p_max(m));
    soc::AffineExpr rhs = f.alpha_index[m] >= 0 ? soc::AffineExpr(f.alpha_index[m], cap) : soc::AffineExpr(cap);
    p.add_cone(std::move(lhs), std::move(rhs), "cap[" + std::to_string(m) + "]");
    ++f.top_level_cones;
  }
}

inline Formulation empty_formulation(const ProblemInstance& in) {
  Formulation f;
  f.M = in.num_aps();
  f.K = in.num_users();
  f.q_index = Eigen::MatrixXi::Constant(f.M, f.K, -1);
  f.alpha_index.assign(f.M, -1);
  return f;
}

/// Norm-epigraph program over `aps`; APs in `free_aps` (subset) get relaxed activity variables.
/// The hardware power of fixed APs is a constant and stays outside the norm: min s^2 + c has the same
/// minimizer as min s^2, and the solver gap then measures the part that depends on q.
inline Formulation build_norm_program(const ProblemInstance& in, const std::vector<int>& aps,
                                      const std::vector<int>& free_aps, const FormulationOptions& opt) {
  Formulation f = empty_formulation(in);
  f.aps = aps;
  std::sort(f.aps.begin(), f.aps.end());
  soc::SocProgram& p = f.program;
  for (int m : free_aps) f.alpha_index[m] = p.add_variable("alpha[" + std::to_string(m) + "]", 0.0, 1.0);
  f.s_index = p.add_variable("s", 0.0, soc::kInf);
  p.set_cost(f.s_index, 1.0);
  add_power_core(in, f, opt);

  std::vector<soc::AffineExpr> r;
  const int K = in.num_users();
  for (int m : f.aps) {
    const double sd = std::sqrt(in.power.delta(m));
    for (int k = 0; k < K; ++k) r.emplace_back(f.q_index(m, k), sd);
  }
  for (int m : f.aps)
    if (f.alpha_index[m] < 0) f.fixed_power += in.p_hw(m);
  for (int m : free_aps) r.emplace_back(f.alpha_index[m], std::sqrt(in.p_hw(m)));
  p.add_cone(std::move(r), soc::AffineExpr(f.s_index, 1.0), "total_power");
  ++f.top_level_cones;
  return f;
}

/// Perspective relaxation: objective is total power (watts), linear in the epigraph variables.
inline Formulation build_perspective_program(const ProblemInstance& in, const std::vector<int>& aps,
                                             const std::vector<int>& free_aps, const FormulationOptions& opt) {
  Formulation f = empty_formulation(in);
  f.aps = aps;
  std::sort(f.aps.begin(), f.aps.end());
  f.linear_objective = true;
  soc::SocProgram& p = f.program;
  const int K = in.num_users();
  for (int m : free_aps) {
    f.alpha_index[m] = p.add_variable("alpha[" + std::to_string(m) + "]", 0.0, 1.0);
    p.set_cost(f.alpha_index[m], in.p_hw(m));
  }
  add_power_core(in, f, opt);
  double fixed_hw = 0.0;
  std::vector<soc::AffineExpr> on_terms;
  for (int m : f.aps) {
    const double w = 2.0 * std::sqrt(in.power.delta(m));
    if (f.alpha_index[m] >= 0) {
      // ||(2 sqrt(Delta) u_m, v_m - alpha_m)|| <= v_m + alpha_m
      const int v = p.add_variable("v[" + std::to_string(m) + "]", 0.0, soc::kInf);
      p.set_cost(v, 1.0);
      std::vector<soc::AffineExpr> lhs;
      for (int k = 0; k < K; ++k) lhs.emplace_back(f.q_index(m, k), w);
      lhs.push_back(soc::AffineExpr(v, 1.0).add(f.alpha_index[m], -1.0));
      p.add_cone(std::move(lhs), soc::AffineExpr(v, 1.0).add(f.alpha_index[m], 1.0),
                 "perspective[" + std::to_string(m) + "]");
      ++f.top_level_cones;
    } else {
      fixed_hw += in.p_hw(m);
      for (int k = 0; k < K; ++k) on_terms.emplace_back(f.q_index(m, k), w);
    }
  }
  if (!on_terms.empty()) {
    const int v = p.add_variable("v_on", 0.0, soc::kInf);
    p.set_cost(v, 1.0);
    on_terms.emplace_back(v, 1.0, -1.0);
    p.add_cone(std::move(on_terms), soc::AffineExpr(v, 1.0, 1.0), "transmit_on");
    ++f.top_level_cones;
  }
  p.set_objective_constant(fixed_hw);
  return f;
}

}  // namespace detail

/// Fixed-active-set total power minimization: min s with ||sqrt(Delta) q_A|| <= s.
inline Formulation build_fixed_set(const ProblemInstance& in, const std::vector<int>& active,
                                   const FormulationOptions& opt = {}) {
  if (active.empty()) throw std::invalid_argument("build_fixed_set: empty active set");
  for (int m : active)
    if (m < 0 || m >= in.num_aps()) throw std::invalid_argument("build_fixed_set: AP index out of range");
  return detail::build_norm_program(in, active, {}, opt);
}

/// Continuous relaxation of the box: free APs carry alpha in [0, 1].
inline Formulation build_relaxation(const ProblemInstance& in, const BnbBox& box, const FormulationOptions& opt = {}) {
  std::vector<int> aps = box.fixed_on;
  aps.insert(aps.end(), box.free.begin(), box.free.end());
  if (aps.empty()) {
    Formulation f = detail::empty_formulation(in);
    f.structurally_infeasible = in.any_requirement();
    return f;
  }
  if (opt.relaxation == Relaxation::kPerspective) return detail::build_perspective_program(in, aps, box.free, opt);
  return detail::build_norm_program(in, aps, box.free, opt);
}

/// Rounded active set of a relaxation solution (ties at 0.5 round up).
inline std::vector<int> rounded_active_set(const BnbBox& box, const Eigen::VectorXd& alpha_star) {
  std::vector<int> a = box.fixed_on;
  for (int m : box.free)
    if (alpha_star(m) >= 0.5) a.push_back(m);
  std::sort(a.begin(), a.end());
  return a;
}

inline Formulation build_rounded(const ProblemInstance& in, const BnbBox& box, const Eigen::VectorXd& alpha_star,
                                 const FormulationOptions& opt = {}) {
  const std::vector<int> a = rounded_active_set(box, alpha_star);
  if (a.empty()) {
    Formulation f = detail::empty_formulation(in);
    f.structurally_infeasible = true;
    return f;
  }
  return build_fixed_set(in, a, opt);
}

/// min sum_m a_m sum_k q_mk^2 over all APs, encoded with a rotated-cone epigraph.
inline Formulation build_weighted(const ProblemInstance& in, const Eigen::VectorXd& weights,
                                  const FormulationOptions& opt = {}) {
  const int M = in.num_aps(), K = in.num_users();
  if (weights.size() != M) throw std::invalid_argument("build_weighted: weight vector size mismatch");
  for (int m = 0; m < M; ++m)
    if (!(weights(m) > 0.0) || !std::isfinite(weights(m)))
      throw std::invalid_argument("build_weighted: weights must be positive and finite");
  Formulation f = detail::empty_formulation(in);
  f.aps = all_aps(M);
  soc::SocProgram& p = f.program;
  f.t_index = p.add_variable("t", 0.0, soc::kInf);
  p.set_cost(f.t_index, 1.0);
  detail::add_power_core(in, f, opt);
  // ||(2 sqrt(a) o q, t - 1)|| <= t + 1  <=>  sum a q^2 <= t
  std::vector<soc::AffineExpr> lhs;
  for (int m = 0; m < M; ++m) {
    const double w = 2.0 * std::sqrt(weights(m));
    for (int k = 0; k < K; ++k) lhs.emplace_back(f.q_index(m, k), w);
  }
  lhs.emplace_back(f.t_index, 1.0, -1.0);
  p.add_cone(std::move(lhs), soc::AffineExpr(f.t_index, 1.0, 1.0), "weighted_objective");
  ++f.top_level_cones;
  return f;
}

/// Transmit power minimization with every AP on.
inline Formulation build_transmit_only(const ProblemInstance& in, const FormulationOptions& opt = {}) {
  return build_fixed_set(in, all_aps(in.num_aps()), opt);
}

/// Result of solving a built formulation.
struct SolvedProgram {
  soc::SolveResult solve;
  Allocation allocation;
  bool ok() const { return solve.status == soc::SolveStatus::kOptimal; }
};

/// Evaluate q on the given active set with the performance model.
inline Allocation evaluate_allocation(const ProblemInstance& in, const Eigen::MatrixXd& q, std::vector<int> active,
                                      double sinr_tol = 1e-6) {
  Allocation a;
  std::sort(active.begin(), active.end());
  a.q = Eigen::MatrixXd::Zero(q.rows(), q.cols());
  for (int m : active) a.q.row(m) = q.row(m);
  a.active = std::move(active);
  a.sinr = sinr(in.stats, in.scheme, a.q, a.active, in.pilots);
  a.se = spectral_efficiency(a.sinr, in.stats.tau_c, in.pilots.tau_p);
  a.power = total_power(a.q, a.active, in.power, in.p_hw);
  a.feasible = meets_requirements(a.sinr, in.nu, sinr_tol) && cap_violation(a.q, a.active, in.power) <= 1e-6 &&
               (!a.active.empty() || !in.any_requirement());
  return a;
}

/// Solve a formulation and read back the allocation on its AP set.
inline SolvedProgram solve_formulation(const ProblemInstance& in, const Formulation& f,
                                       const soc::SolverOptions& opt = {}) {
  SolvedProgram out;
  if (f.structurally_infeasible) {
    out.solve.status = soc::SolveStatus::kInfeasible;
    return out;
  }
  out.solve = soc::solve(f.program, opt);
  if (out.solve.status == soc::SolveStatus::kOptimal)
    out.allocation = evaluate_allocation(in, f.extract_q(out.solve.x), f.aps);
  return out;
}

}  // namespace cellfree
