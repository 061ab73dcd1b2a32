#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <queue>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "cellfree/formulations.hpp"

namespace cellfree {

enum class BnbStatus { kOptimal, kInfeasible, kBudgetExceeded, kFailed };

inline const char* to_string(BnbStatus s) {
  switch (s) {
    case BnbStatus::kOptimal: return "optimal";
    case BnbStatus::kInfeasible: return "infeasible";
    case BnbStatus::kBudgetExceeded: return "budget_exceeded";
    case BnbStatus::kFailed: return "failed";
  }
  return "unknown";
}

struct BnbOptions {
  double gap_tol = 1e-6;       ///< relative optimality gap
  long node_cap = 100000;      ///< maximum number of evaluated boxes
  double time_limit = std::numeric_limits<double>::infinity();  ///< seconds
  double prune_factor = 1e-9;  ///< prune when lb >= incumbent (1 - prune_factor)
  double integrality_tol = 1e-6;
  std::vector<std::vector<int>> initial_active_sets;  ///< extra incumbent candidates, e.g. heuristic outputs
  FormulationOptions formulation;
  soc::SolverOptions solver;
};

struct BnbCounters {
  long boxes_created = 0;
  long boxes_pruned = 0;
  long relaxations_solved = 0;
  long rounded_solved = 0;
  long rounded_cached = 0;
  long lb_monotonicity_violations = 0;  ///< child bound below parent bound beyond solver tolerance
  long solver_failures = 0;
  long max_open = 0;
};

struct BnbResult {
  BnbStatus status = BnbStatus::kFailed;
  Allocation allocation;
  double objective = std::numeric_limits<double>::infinity();  ///< total power, watts
  double lower_bound = -std::numeric_limits<double>::infinity();
  double gap = std::numeric_limits<double>::infinity();  ///< relative
  BnbCounters counters;
  std::vector<double> gap_trajectory;  ///< relative gap after each processed box
  double seconds = 0.0;
};

namespace detail {

inline std::uint64_t ap_mask(const std::vector<int>& aps) {
  std::uint64_t m = 0;
  for (int a : aps) m |= std::uint64_t{1} << a;
  return m;
}

struct OpenBox {
  BnbBox box;
  Eigen::VectorXd alpha;
  long id = 0;
};

struct OpenBoxOrder {
  bool operator()(const OpenBox& a, const OpenBox& b) const {
    if (a.box.lower_bound != b.box.lower_bound) return a.box.lower_bound > b.box.lower_bound;
    return a.id > b.id;
  }
};

}  // namespace detail

/**
 * \brief Global minimization of total power over AP on/off decisions.
 *
 * Best-first branch-and-bound. Each box is bounded below by its continuous
 * relaxation and above by the fixed-set problem on the rounded relaxation.
 */
inline BnbResult solve_exact(const ProblemInstance& in, const BnbOptions& opt = {}) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  const int M = in.num_aps();
  if (M > 63) throw std::invalid_argument("solve_exact: at most 63 APs supported");
  BnbResult res;
  auto elapsed = [&] { return std::chrono::duration<double>(clock::now() - start).count(); };

  if (!in.any_requirement()) {
    res.status = BnbStatus::kOptimal;
    res.allocation = evaluate_allocation(in, Eigen::MatrixXd::Zero(M, in.num_users()), {});
    res.objective = 0.0;
    res.lower_bound = 0.0;
    res.gap = 0.0;
    res.seconds = elapsed();
    return res;
  }

  std::unordered_map<std::uint64_t, double> fixed_cache;
  auto try_fixed_set = [&](const std::vector<int>& aps) {
    const std::uint64_t key = detail::ap_mask(aps);
    if (auto it = fixed_cache.find(key); it != fixed_cache.end()) {
      ++res.counters.rounded_cached;
      return;
    }
    ++res.counters.rounded_solved;
    const SolvedProgram sp = solve_formulation(in, build_fixed_set(in, aps, opt.formulation), opt.solver);
    double value = std::numeric_limits<double>::infinity();
    if (sp.ok()) {
      value = sp.allocation.power.total;
      if (value < res.objective) {
        res.objective = value;
        res.allocation = sp.allocation;
      }
    } else if (sp.solve.status == soc::SolveStatus::kNumericalFailure) {
      ++res.counters.solver_failures;
    }
    fixed_cache.emplace(key, value);
  };

  // Initial incumbent: all APs on, then any supplied candidate sets.
  try_fixed_set(all_aps(M));
  for (std::vector<int> aps : opt.initial_active_sets) {
    std::sort(aps.begin(), aps.end());
    aps.erase(std::unique(aps.begin(), aps.end()), aps.end());
    if (!aps.empty() && aps.front() >= 0 && aps.back() < M) try_fixed_set(aps);
  }
  if (!std::isfinite(res.objective)) {
    res.status = res.counters.solver_failures ? BnbStatus::kFailed : BnbStatus::kInfeasible;
    res.seconds = elapsed();
    return res;
  }

  std::priority_queue<detail::OpenBox, std::vector<detail::OpenBox>, detail::OpenBoxOrder> open;
  long next_id = 0;
  bool budget_hit = false;

  // Bound a box; returns true when it stays open.
  auto evaluate = [&](BnbBox box, double parent_lb, detail::OpenBox& out) {
    ++res.counters.boxes_created;
    const Formulation f = build_relaxation(in, box, opt.formulation);
    if (f.structurally_infeasible) {
      ++res.counters.boxes_pruned;
      return false;
    }
    ++res.counters.relaxations_solved;
    const soc::SolveResult sr = soc::solve(f.program, opt.solver);
    if (sr.status != soc::SolveStatus::kOptimal) {
      if (sr.status == soc::SolveStatus::kNumericalFailure) ++res.counters.solver_failures;
      ++res.counters.boxes_pruned;
      return false;
    }
    const double lb = f.power_value(sr.objective);
    if (std::isfinite(parent_lb) && lb < parent_lb * (1.0 - 1e-5)) ++res.counters.lb_monotonicity_violations;
    box.lower_bound = std::max(lb, std::isfinite(parent_lb) ? parent_lb : lb);
    const Eigen::VectorXd alpha = f.extract_alpha(sr.x);

    bool integral = true;
    for (int m : box.free)
      if (alpha(m) > opt.integrality_tol && alpha(m) < 1.0 - opt.integrality_tol) integral = false;
    const std::vector<int> rounded = rounded_active_set(box, alpha);
    if (!rounded.empty()) try_fixed_set(rounded);
    if (box.free.empty() || integral || box.lower_bound >= res.objective * (1.0 - opt.prune_factor)) {
      ++res.counters.boxes_pruned;
      return false;
    }
    out.box = std::move(box);
    out.alpha = alpha;
    out.id = next_id++;
    return true;
  };

  {
    detail::OpenBox root;
    if (evaluate(BnbBox::root(M), -soc::kInf, root)) open.push(std::move(root));
  }

  auto current_gap = [&] {
    const double lb = open.empty() ? res.objective : std::min(open.top().box.lower_bound, res.objective);
    return std::max(0.0, (res.objective - lb) / res.objective);
  };

  while (!open.empty()) {
    res.counters.max_open = std::max<long>(res.counters.max_open, static_cast<long>(open.size()));
    detail::OpenBox node = open.top();
    if (node.box.lower_bound >= res.objective * (1.0 - opt.prune_factor) ||
        (res.objective - node.box.lower_bound) / res.objective <= opt.gap_tol) {
      // Best-first: every remaining box is at least as bad.
      res.counters.boxes_pruned += static_cast<long>(open.size());
      while (!open.empty()) open.pop();
      break;
    }
    if (res.counters.boxes_created + 2 > opt.node_cap || elapsed() > opt.time_limit) {
      budget_hit = true;
      break;
    }
    open.pop();

    // Most fractional free alpha; ties prefer larger hardware power, then lower index.
    int branch = -1;
    double best = -1.0;
    for (int m : node.box.free) {
      const double frac = 0.5 - std::abs(node.alpha(m) - 0.5);
      if (branch < 0 || frac > best + 1e-12 ||
          (std::abs(frac - best) <= 1e-12 && in.p_hw(m) > in.p_hw(branch))) {
        branch = m;
        best = frac;
      }
    }
    for (int on = 0; on < 2; ++on) {
      BnbBox child = node.box;
      child.depth += 1;
      std::erase(child.free, branch);
      (on ? child.fixed_on : child.fixed_off).push_back(branch);
      std::sort(child.fixed_on.begin(), child.fixed_on.end());
      std::sort(child.fixed_off.begin(), child.fixed_off.end());
      detail::OpenBox ob;
      if (evaluate(std::move(child), node.box.lower_bound, ob)) open.push(std::move(ob));
    }
    res.gap_trajectory.push_back(current_gap());
  }

  res.lower_bound = open.empty() ? res.objective : std::min(open.top().box.lower_bound, res.objective);
  res.gap = std::max(0.0, (res.objective - res.lower_bound) / res.objective);
  res.status = budget_hit ? BnbStatus::kBudgetExceeded : BnbStatus::kOptimal;
  res.gap_trajectory.push_back(res.gap);
  res.seconds = elapsed();
  return res;
}

struct ExhaustiveResult {
  BnbStatus status = BnbStatus::kInfeasible;
  Allocation allocation;
  double objective = std::numeric_limits<double>::infinity();
  long solves = 0;
  long failures = 0;
};

/// Enumerate every nonempty active set (M <= 12).
inline ExhaustiveResult solve_exhaustive(const ProblemInstance& in, const FormulationOptions& fopt = {},
                                         const soc::SolverOptions& sopt = {}) {
  const int M = in.num_aps();
  if (M > 12) throw std::invalid_argument("solve_exhaustive: M must not exceed 12");
  ExhaustiveResult res;
  if (!in.any_requirement()) {
    res.status = BnbStatus::kOptimal;
    res.objective = 0.0;
    res.allocation = evaluate_allocation(in, Eigen::MatrixXd::Zero(M, in.num_users()), {});
    return res;
  }
  for (std::uint32_t mask = 1; mask < (1u << M); ++mask) {
    std::vector<int> aps;
    for (int m = 0; m < M; ++m)
      if (mask & (1u << m)) aps.push_back(m);
    ++res.solves;
    const SolvedProgram sp = solve_formulation(in, build_fixed_set(in, aps, fopt), sopt);
    if (sp.ok()) {
      if (sp.allocation.power.total < res.objective) {
        res.objective = sp.allocation.power.total;
        res.allocation = sp.allocation;
      }
    } else if (sp.solve.status == soc::SolveStatus::kNumericalFailure) {
      ++res.failures;
    }
  }
  if (std::isfinite(res.objective)) res.status = BnbStatus::kOptimal;
  else res.status = res.failures ? BnbStatus::kFailed : BnbStatus::kInfeasible;
  return res;
}

}  // namespace cellfree
