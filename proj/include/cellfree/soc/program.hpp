#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cellfree::soc {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct Term {
  int var = 0;
  double coef = 0.0;
};

/// Sparse affine function sum_i coef_i * x_{var_i} + constant.
struct AffineExpr {
  std::vector<Term> terms;
  double constant = 0.0;

  AffineExpr() = default;
  explicit AffineExpr(double c) : constant(c) {}
  AffineExpr(int var, double coef, double c = 0.0) : terms{{var, coef}}, constant(c) {}

  AffineExpr& add(int var, double coef) {
    if (coef != 0.0) terms.push_back({var, coef});
    return *this;
  }

  double eval(const std::vector<double>& x) const {
    double v = constant;
    for (const auto& t : terms) v += t.coef * x[t.var];
    return v;
  }

  /// Merge duplicate variables and drop zeros.
  void canonicalize() {
    std::sort(terms.begin(), terms.end(), [](const Term& a, const Term& b) { return a.var < b.var; });
    std::vector<Term> out;
    for (const auto& t : terms) {
      if (!out.empty() && out.back().var == t.var)
        out.back().coef += t.coef;
      else
        out.push_back(t);
    }
    std::erase_if(out, [](const Term& t) { return t.coef == 0.0; });
    terms = std::move(out);
  }
};

/// ||(lhs_1, ..., lhs_p)|| <= rhs. An empty lhs means the linear constraint rhs >= 0.
struct Cone {
  std::vector<AffineExpr> lhs;
  AffineExpr rhs;
  std::string label;
};

/**
 * \brief Linear objective over second-order cone and bound constraints.
 *
 * Variables carry optional lower/upper bounds; a variable with equal bounds is
 * treated as fixed and eliminated by the solver.
 */
class SocProgram {
 public:
  int add_variable(std::string name, double lower = -kInf, double upper = kInf) {
    names_.push_back(std::move(name));
    lower_.push_back(lower);
    upper_.push_back(upper);
    cost_.push_back(0.0);
    return static_cast<int>(names_.size()) - 1;
  }

  void set_cost(int var, double c) { cost_.at(var) = c; }
  void set_objective_constant(double c) { objective_constant_ = c; }
  void set_bounds(int var, double lower, double upper) {
    lower_.at(var) = lower;
    upper_.at(var) = upper;
  }

  int add_cone(Cone c) {
    for (auto& e : c.lhs) e.canonicalize();
    c.rhs.canonicalize();
    cones_.push_back(std::move(c));
    return static_cast<int>(cones_.size()) - 1;
  }

  int add_cone(std::vector<AffineExpr> lhs, AffineExpr rhs, std::string label = {}) {
    return add_cone(Cone{std::move(lhs), std::move(rhs), std::move(label)});
  }

  /// expr >= 0.
  int add_linear(AffineExpr expr, std::string label = {}) { return add_cone({}, std::move(expr), std::move(label)); }

  int num_vars() const { return static_cast<int>(names_.size()); }
  int num_cones() const { return static_cast<int>(cones_.size()); }
  const std::vector<Cone>& cones() const { return cones_; }
  const std::vector<double>& cost() const { return cost_; }
  const std::vector<double>& lower() const { return lower_; }
  const std::vector<double>& upper() const { return upper_; }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(int v) const { return names_.at(v); }
  double objective_constant() const { return objective_constant_; }

  /// Throws std::invalid_argument describing the first structural problem.
  void validate() const {
    const int n = num_vars();
    if (n < 1) throw std::invalid_argument("program has no variables");
    for (int j = 0; j < n; ++j) {
      if (!std::isfinite(cost_[j])) throw std::invalid_argument("non-finite cost on " + names_[j]);
      if (std::isnan(lower_[j]) || std::isnan(upper_[j]) || lower_[j] > upper_[j])
        throw std::invalid_argument("invalid bounds on " + names_[j]);
    }
    if (!std::isfinite(objective_constant_)) throw std::invalid_argument("non-finite objective constant");
    auto check = [&](const AffineExpr& e, const std::string& where) {
      if (!std::isfinite(e.constant)) throw std::invalid_argument("non-finite constant in " + where);
      for (const auto& t : e.terms) {
        if (t.var < 0 || t.var >= n) throw std::invalid_argument("variable index out of range in " + where);
        if (!std::isfinite(t.coef)) throw std::invalid_argument("non-finite coefficient in " + where);
      }
    };
    for (int i = 0; i < num_cones(); ++i) {
      const std::string where = "cone " + std::to_string(i) + (cones_[i].label.empty() ? "" : " (" + cones_[i].label + ")");
      for (const auto& e : cones_[i].lhs) check(e, where);
      check(cones_[i].rhs, where);
    }
  }

  double objective_value(const std::vector<double>& x) const {
    double v = objective_constant_;
    for (int j = 0; j < num_vars(); ++j) v += cost_[j] * x[j];
    return v;
  }

  /// Violation of cone i at x: ||lhs|| - rhs (negative when strictly satisfied).
  double cone_violation(int i, const std::vector<double>& x) const {
    const Cone& c = cones_.at(i);
    double ss = 0.0;
    for (const auto& e : c.lhs) {
      const double v = e.eval(x);
      ss += v * v;
    }
    return std::sqrt(ss) - c.rhs.eval(x);
  }

  /// Largest cone violation relative to the size of both sides, max(||lhs||, |rhs|). Cones without
  /// a constant term can shrink to the apex, so those are measured against the largest cone instead.
  double max_relative_violation(const std::vector<double>& x) const {
    std::vector<double> lhs(cones_.size()), rhs(cones_.size());
    double largest = 0.0;
    for (std::size_t i = 0; i < cones_.size(); ++i) {
      double ss = 0.0;
      for (const auto& e : cones_[i].lhs) ss += e.eval(x) * e.eval(x);
      lhs[i] = std::sqrt(ss);
      rhs[i] = cones_[i].rhs.eval(x);
      largest = std::max({largest, lhs[i], std::abs(rhs[i])});
    }
    double v = 0.0;
    for (std::size_t i = 0; i < cones_.size(); ++i) {
      const Cone& c = cones_[i];
      bool homogeneous = c.rhs.constant == 0.0;
      for (const auto& e : c.lhs) homogeneous = homogeneous && e.constant == 0.0;
      const double scale = homogeneous ? largest : std::max(lhs[i], std::abs(rhs[i]));
      if (scale > 0.0) v = std::max(v, (lhs[i] - rhs[i]) / scale);
    }
    return v;
  }

  /// Largest violation over cones and bounds (0 when feasible).
  double max_violation(const std::vector<double>& x) const {
    double v = 0.0;
    for (int i = 0; i < num_cones(); ++i) v = std::max(v, cone_violation(i, x));
    for (int j = 0; j < num_vars(); ++j) {
      v = std::max(v, lower_[j] - x[j]);
      v = std::max(v, x[j] - upper_[j]);
    }
    return v;
  }

 private:
  std::vector<std::string> names_;
  std::vector<double> lower_;
  std::vector<double> upper_;
  std::vector<double> cost_;
  double objective_constant_ = 0.0;
  std::vector<Cone> cones_;
};

}  // namespace cellfree::soc
