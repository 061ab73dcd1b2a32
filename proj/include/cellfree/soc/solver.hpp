#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cellfree/soc/program.hpp"

namespace cellfree::soc {

enum class SolveStatus { kOptimal, kInfeasible, kUnbounded, kNumericalFailure };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::kOptimal: return "optimal";
    case SolveStatus::kInfeasible: return "infeasible";
    case SolveStatus::kUnbounded: return "unbounded";
    case SolveStatus::kNumericalFailure: return "numerical_failure";
  }
  return "unknown";
}

struct SolverOptions {
  double tol = 1e-8;           ///< relative gap and feasibility tolerance
  int max_iterations = 100;
  bool equilibrate = true;     ///< Ruiz scaling of the conic data
  bool retry_on_failure = true;///< one retry with plain row-norm scaling
  bool phase1_on_failure = true;
  double phase1_threshold = 1e-6;
  double inaccurate_cone_tol = 1e-6;  ///< a stalled iterate must meet every cone to this relative accuracy
  bool verbose = false;
};

struct SolveResult {
  SolveStatus status = SolveStatus::kNumericalFailure;
  std::vector<double> x;
  double objective = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
  double seconds = 0.0;
  double max_violation = std::numeric_limits<double>::quiet_NaN();
  double relative_gap = std::numeric_limits<double>::quiet_NaN();
  bool inaccurate = false;  ///< accepted at a looser tolerance after stalling
  bool retried = false;
  bool phase1 = false;
  double phase1_violation = std::numeric_limits<double>::quiet_NaN();

  bool optimal() const { return status == SolveStatus::kOptimal; }
};

namespace detail {

inline constexpr double kRefineTol = 1e-12;

struct SparseRow {
  std::vector<int> idx;
  std::vector<double> val;
};

/// min c'x  s.t.  Gx + s = h,  s in R+^lp x Q^{d_1} x ... x Q^{d_k}.
struct ConicData {
  int n = 0;
  Eigen::VectorXd c;
  std::vector<SparseRow> rows;
  Eigen::VectorXd h;
  int lp = 0;
  std::vector<int> soc_dims;
  std::vector<char> relaxable;  ///< LP rows that come from constraints (not bounds)

  int m() const { return static_cast<int>(rows.size()); }
};

/// Mapping between the original variables and the reduced conic columns.
struct Presolved {
  ConicData data;
  std::vector<int> column;       ///< original var -> reduced column or -1
  std::vector<double> fixed;     ///< value for eliminated variables
  bool unbounded = false;
  bool infeasible = false;
};

inline Presolved presolve(const SocProgram& p) {
  Presolved out;
  const int n0 = p.num_vars();
  std::vector<char> used(n0, 0);
  for (const auto& cone : p.cones()) {
    for (const auto& e : cone.lhs)
      for (const auto& t : e.terms) used[t.var] = 1;
    for (const auto& t : cone.rhs.terms) used[t.var] = 1;
  }
  out.column.assign(n0, -1);
  out.fixed.assign(n0, 0.0);
  int n = 0;
  for (int j = 0; j < n0; ++j) {
    const double l = p.lower()[j], u = p.upper()[j], c = p.cost()[j];
    if (l == u) {
      out.fixed[j] = l;
    } else if (!used[j]) {
      if (c > 0.0) {
        if (!std::isfinite(l)) out.unbounded = true;
        out.fixed[j] = l;
      } else if (c < 0.0) {
        if (!std::isfinite(u)) out.unbounded = true;
        out.fixed[j] = u;
      } else {
        out.fixed[j] = std::clamp(0.0, l, u);
      }
    } else {
      out.column[j] = n++;
    }
  }
  ConicData& d = out.data;
  d.n = n;
  d.c = Eigen::VectorXd::Zero(n);
  for (int j = 0; j < n0; ++j)
    if (out.column[j] >= 0) d.c(out.column[j]) = p.cost()[j];

  std::vector<double> h;
  // Affine expression e -> row entries (sign applied) and constant after substitution.
  auto reduce = [&](const AffineExpr& e, double sign, SparseRow& row) {
    double k = e.constant;
    for (const auto& t : e.terms) {
      const int col = out.column[t.var];
      if (col < 0) {
        k += t.coef * out.fixed[t.var];
      } else {
        row.idx.push_back(col);
        row.val.push_back(sign * t.coef);
      }
    }
    return k;
  };

  for (int j = 0; j < n0; ++j) {
    const int col = out.column[j];
    if (col < 0) continue;
    if (std::isfinite(p.lower()[j])) {
      d.rows.push_back({{col}, {-1.0}});
      h.push_back(-p.lower()[j]);
      d.relaxable.push_back(0);
    }
    if (std::isfinite(p.upper()[j])) {
      d.rows.push_back({{col}, {1.0}});
      h.push_back(p.upper()[j]);
      d.relaxable.push_back(0);
    }
  }
  for (const auto& cone : p.cones()) {
    if (!cone.lhs.empty()) continue;
    SparseRow row;
    const double k = reduce(cone.rhs, -1.0, row);
    if (row.idx.empty() && k < 0.0) out.infeasible = true;
    d.rows.push_back(std::move(row));
    h.push_back(k);
    d.relaxable.push_back(1);
  }
  d.lp = static_cast<int>(d.rows.size());
  for (const auto& cone : p.cones()) {
    if (cone.lhs.empty()) continue;
    SparseRow r0;
    h.push_back(reduce(cone.rhs, -1.0, r0));
    d.rows.push_back(std::move(r0));
    for (const auto& e : cone.lhs) {
      SparseRow r;
      h.push_back(reduce(e, -1.0, r));
      d.rows.push_back(std::move(r));
    }
    d.soc_dims.push_back(static_cast<int>(cone.lhs.size()) + 1);
  }
  d.h = Eigen::Map<Eigen::VectorXd>(h.data(), static_cast<Eigen::Index>(h.size()));
  return out;
}

// ---------------------------------------------------------------------------
// Second-order cone algebra on a single block v = (v0, v1).

/// Largest alpha >= 0 with u + alpha d in the cone (u interior); +inf if unbounded.
inline double soc_step_length(const double* u, const double* d, int q) {
  double A = d[0] * d[0], B = u[0] * d[0], C = u[0] * u[0];
  for (int i = 1; i < q; ++i) {
    A -= d[i] * d[i];
    B -= u[i] * d[i];
    C -= u[i] * u[i];
  }
  C = std::max(C, 0.0);
  const double disc = B * B - A * C;
  if (A < 0.0 || (B < 0.0 && disc >= 0.0)) {
    const double den = -B + std::sqrt(std::max(disc, 0.0));
    if (den <= 0.0) return 0.0;
    return C / den;
  }
  // The linear condition u0 + alpha d0 >= 0 can bind when q == 1.
  if (q == 1 && d[0] < 0.0) return -u[0] / d[0];
  return std::numeric_limits<double>::infinity();
}

/// Jordan product (u'v, u0 v1 + v0 u1).
inline void soc_product(const double* u, const double* v, double* out, int q) {
  double dot = 0.0;
  for (int i = 0; i < q; ++i) dot += u[i] * v[i];
  for (int i = 1; i < q; ++i) out[i] = u[0] * v[i] + v[0] * u[i];
  out[0] = dot;
}

/// x solving lambda o x = d.
inline void soc_division(const double* lam, const double* d, double* out, int q) {
  double det = lam[0] * lam[0], l1d1 = 0.0;
  for (int i = 1; i < q; ++i) {
    det -= lam[i] * lam[i];
    l1d1 += lam[i] * d[i];
  }
  const double x0 = (lam[0] * d[0] - l1d1) / det;
  for (int i = 1; i < q; ++i) out[i] = (d[i] - x0 * lam[i]) / lam[0];
  out[0] = x0;
}

/// Nesterov-Todd scaling of one SOC block: W = eta * B(w), B the hyperbolic boost.
struct SocScaling {
  double eta = 1.0;
  std::vector<double> w;  ///< w'Jw = 1, w0 >= 1

  /// out = B(sign-adjusted w) v, with flip=true using Jw (the inverse boost).
  void boost(const double* v, double* out, int q, bool flip) const {
    const double w0 = w[0];
    const double sgn = flip ? -1.0 : 1.0;
    double w1v1 = 0.0;
    for (int i = 1; i < q; ++i) w1v1 += w[i] * v[i];
    w1v1 *= sgn;
    const double coef = v[0] + w1v1 / (1.0 + w0);
    const double v0 = v[0];
    for (int i = 1; i < q; ++i) out[i] = v[i] + coef * sgn * w[i];
    out[0] = w0 * v0 + w1v1;
  }
};

inline bool soc_nt_scaling(const double* s, const double* z, int q, SocScaling& sc) {
  double sres = s[0] * s[0], zres = z[0] * z[0];
  for (int i = 1; i < q; ++i) {
    sres -= s[i] * s[i];
    zres -= z[i] * z[i];
  }
  if (!(sres > 0.0) || !(zres > 0.0) || s[0] <= 0.0 || z[0] <= 0.0) return false;
  sres = std::sqrt(sres);
  zres = std::sqrt(zres);
  double dot = 0.0;
  for (int i = 0; i < q; ++i) dot += (s[i] / sres) * (z[i] / zres);
  const double gamma = std::sqrt(std::max((1.0 + dot) / 2.0, 0.0));
  if (!(gamma > 0.0)) return false;
  sc.w.resize(q);
  sc.w[0] = (s[0] / sres + z[0] / zres) / (2.0 * gamma);
  for (int i = 1; i < q; ++i) sc.w[i] = (s[i] / sres - z[i] / zres) / (2.0 * gamma);
  // Renormalize so that w'Jw = 1 exactly.
  double w1 = 0.0;
  for (int i = 1; i < q; ++i) w1 += sc.w[i] * sc.w[i];
  sc.w[0] = std::sqrt(1.0 + w1);
  sc.eta = std::sqrt(sres / zres);
  return true;
}

// ---------------------------------------------------------------------------

struct ConeBlock {
  int offset = 0;
  int dim = 0;
  std::vector<int> support;                 ///< sorted global columns touched by the block
  std::vector<std::vector<std::pair<int, double>>> local_rows;  ///< (local col, val) per row
  std::vector<int> gram_i, gram_j;          ///< lower-triangular entries of G1'G1 (global)
  std::vector<double> gram_v;
  bool dense = false;
};

struct IpmOutput {
  SolveStatus status = SolveStatus::kNumericalFailure;
  Eigen::VectorXd x, s, z;
  int iterations = 0;
  double relgap = std::numeric_limits<double>::quiet_NaN();
  bool inaccurate = false;
};

/**
 * Homogeneous self-dual interior-point method with Nesterov-Todd scaling
 * and Mehrotra predictor-corrector steps.
 */
class Ipm {
 public:
  Ipm(const ConicData& d, const SolverOptions& opt) : d_(d), opt_(opt) { setup(); }

  IpmOutput run();

 private:
  void setup();
  Eigen::VectorXd apply_G(const Eigen::VectorXd& x) const;
  Eigen::VectorXd apply_Gt(const Eigen::VectorXd& z) const;
  bool compute_scaling(const Eigen::VectorXd& s, const Eigen::VectorXd& z);
  void apply_W(const Eigen::VectorXd& v, Eigen::VectorXd& out, bool inverse) const;
  void apply_W2(const Eigen::VectorXd& v, Eigen::VectorXd& out, bool inverse) const;
  bool factor();
  void solve_kkt(const Eigen::VectorXd& a, const Eigen::VectorXd& b, Eigen::VectorXd& x, Eigen::VectorXd& z) const;
  void solve_reduced(const Eigen::VectorXd& a, const Eigen::VectorXd& b, Eigen::VectorXd& x, Eigen::VectorXd& z) const;
  double max_step(const Eigen::VectorXd& v, const Eigen::VectorXd& dv) const;
  void product(const Eigen::VectorXd& u, const Eigen::VectorXd& v, Eigen::VectorXd& out) const;
  void division(const Eigen::VectorXd& lam, const Eigen::VectorXd& dv, Eigen::VectorXd& out) const;
  void add_identity(Eigen::VectorXd& v, double a) const;
  double cone_margin(const Eigen::VectorXd& v) const;

  const ConicData& d_;
  const SolverOptions& opt_;
  int n_ = 0, m_ = 0, degree_ = 0;
  std::vector<ConeBlock> blocks_;
  std::vector<std::vector<std::pair<int, double>>> columns_;  ///< transpose of G

  // Scaling state.
  Eigen::VectorXd lp_w_;  ///< sqrt(s/z) for LP rows
  std::vector<SocScaling> soc_w_;
  Eigen::VectorXd lambda_;
  Eigen::MatrixXd H_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  double reg_ = 0.0;
};

inline void Ipm::setup() {
  n_ = d_.n;
  m_ = d_.m();
  degree_ = d_.lp + static_cast<int>(d_.soc_dims.size());
  columns_.assign(n_, {});
  for (int i = 0; i < m_; ++i)
    for (std::size_t t = 0; t < d_.rows[i].idx.size(); ++t) columns_[d_.rows[i].idx[t]].push_back({i, d_.rows[i].val[t]});

  int off = d_.lp;
  std::vector<int> loc(n_, -1);
  for (int q : d_.soc_dims) {
    ConeBlock b;
    b.offset = off;
    b.dim = q;
    for (int r = 0; r < q; ++r)
      for (int c : d_.rows[off + r].idx) b.support.push_back(c);
    std::sort(b.support.begin(), b.support.end());
    b.support.erase(std::unique(b.support.begin(), b.support.end()), b.support.end());
    for (std::size_t t = 0; t < b.support.size(); ++t) loc[b.support[t]] = static_cast<int>(t);
    b.local_rows.resize(q);
    for (int r = 0; r < q; ++r) {
      const auto& row = d_.rows[off + r];
      for (std::size_t t = 0; t < row.idx.size(); ++t) b.local_rows[r].push_back({loc[row.idx[t]], row.val[t]});
    }
    // G1'G1 restricted to the support, lower triangle.
    const int ns = static_cast<int>(b.support.size());
    std::vector<std::vector<std::pair<int, double>>> acc(ns);
    for (int r = 1; r < q; ++r) {
      const auto& lr = b.local_rows[r];
      for (const auto& [ci, vi] : lr)
        for (const auto& [cj, vj] : lr)
          if (b.support[ci] >= b.support[cj]) acc[ci].push_back({cj, vi * vj});
    }
    for (int ci = 0; ci < ns; ++ci) {
      auto& a = acc[ci];
      std::sort(a.begin(), a.end());
      for (std::size_t t = 0; t < a.size();) {
        std::size_t u = t;
        double v = 0.0;
        while (u < a.size() && a[u].first == a[t].first) v += a[u++].second;
        b.gram_i.push_back(b.support[ci]);
        b.gram_j.push_back(b.support[a[t].first]);
        b.gram_v.push_back(v);
        t = u;
      }
    }
    b.dense = ns > 48 && ns * 4 > n_;
    for (int c : b.support) loc[c] = -1;
    blocks_.push_back(std::move(b));
    off += q;
  }
  soc_w_.resize(blocks_.size());
  lp_w_.resize(d_.lp);
  lambda_.resize(m_);
  H_.resize(n_, n_);
}

inline Eigen::VectorXd Ipm::apply_G(const Eigen::VectorXd& x) const {
  Eigen::VectorXd out(m_);
  for (int i = 0; i < m_; ++i) {
    double v = 0.0;
    const auto& r = d_.rows[i];
    for (std::size_t t = 0; t < r.idx.size(); ++t) v += r.val[t] * x(r.idx[t]);
    out(i) = v;
  }
  return out;
}

inline Eigen::VectorXd Ipm::apply_Gt(const Eigen::VectorXd& z) const {
  Eigen::VectorXd out(n_);
  for (int j = 0; j < n_; ++j) {
    double v = 0.0;
    for (const auto& [i, g] : columns_[j]) v += g * z(i);
    out(j) = v;
  }
  return out;
}

inline bool Ipm::compute_scaling(const Eigen::VectorXd& s, const Eigen::VectorXd& z) {
  for (int i = 0; i < d_.lp; ++i) {
    if (!(s(i) > 0.0) || !(z(i) > 0.0)) return false;
    lp_w_(i) = std::sqrt(s(i) / z(i));
    lambda_(i) = std::sqrt(s(i) * z(i));
  }
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const int o = blocks_[b].offset, q = blocks_[b].dim;
    if (!soc_nt_scaling(s.data() + o, z.data() + o, q, soc_w_[b])) return false;
    // lambda = W z
    soc_w_[b].boost(z.data() + o, lambda_.data() + o, q, false);
    for (int i = 0; i < q; ++i) lambda_(o + i) *= soc_w_[b].eta;
  }
  return true;
}

inline void Ipm::apply_W(const Eigen::VectorXd& v, Eigen::VectorXd& out, bool inverse) const {
  out.resize(m_);
  for (int i = 0; i < d_.lp; ++i) out(i) = inverse ? v(i) / lp_w_(i) : v(i) * lp_w_(i);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const int o = blocks_[b].offset, q = blocks_[b].dim;
    soc_w_[b].boost(v.data() + o, out.data() + o, q, inverse);
    const double e = inverse ? 1.0 / soc_w_[b].eta : soc_w_[b].eta;
    for (int i = 0; i < q; ++i) out(o + i) *= e;
  }
}

// W^2 = eta^2 (2ww' - J), W^-2 = eta^-2 (2(Jw)(Jw)' - J).
inline void Ipm::apply_W2(const Eigen::VectorXd& v, Eigen::VectorXd& out, bool inverse) const {
  out.resize(m_);
  for (int i = 0; i < d_.lp; ++i) {
    const double w2 = lp_w_(i) * lp_w_(i);
    out(i) = inverse ? v(i) / w2 : v(i) * w2;
  }
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const int o = blocks_[b].offset, q = blocks_[b].dim;
    const std::vector<double>& w = soc_w_[b].w;
    const double sgn = inverse ? -1.0 : 1.0;
    double wv = w[0] * v(o);
    for (int i = 1; i < q; ++i) wv += sgn * w[i] * v(o + i);
    const double e2 = inverse ? 1.0 / (soc_w_[b].eta * soc_w_[b].eta) : soc_w_[b].eta * soc_w_[b].eta;
    out(o) = e2 * (2.0 * wv * w[0] - v(o));
    for (int i = 1; i < q; ++i) out(o + i) = e2 * (2.0 * wv * sgn * w[i] + v(o + i));
  }
}

inline bool Ipm::factor() {
  H_.setZero();
  // LP rows: (z/s) g g'.
  for (int i = 0; i < d_.lp; ++i) {
    const double wi = 1.0 / (lp_w_(i) * lp_w_(i));
    const auto& r = d_.rows[i];
    for (std::size_t a = 0; a < r.idx.size(); ++a)
      for (std::size_t b = 0; b < r.idx.size(); ++b)
        if (r.idx[a] >= r.idx[b]) H_(r.idx[a], r.idx[b]) += wi * r.val[a] * r.val[b];
  }
  std::vector<Eigen::VectorXd> pos, neg;
  for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
    const ConeBlock& b = blocks_[bi];
    const SocScaling& sc = soc_w_[bi];
    const int ns = static_cast<int>(b.support.size());
    if (ns == 0) continue;
    const double ie2 = 1.0 / (sc.eta * sc.eta);
    // a = Jw
    const double a0 = sc.w[0];
    double c = 0.0;
    for (int r = 1; r < b.dim; ++r) c += sc.w[r] * sc.w[r];
    Eigen::VectorXd g0 = Eigen::VectorXd::Zero(ns), u = Eigen::VectorXd::Zero(ns);
    for (const auto& [cl, v] : b.local_rows[0]) g0(cl) += v;
    for (int r = 1; r < b.dim; ++r) {
      const double a1 = -sc.w[r];
      for (const auto& [cl, v] : b.local_rows[r]) u(cl) += a1 * v;
    }
    const Eigen::VectorXd p = a0 * g0 + u;
    // Collected as (vector, weight) with weight sign giving the update direction.
    Eigen::VectorXd v1, v2, v3;
    double w1, w2, w3;
    if (c >= 1.0) {
      const Eigen::VectorXd rr = g0 + (a0 / c) * u;
      v1 = p;  w1 = ie2;
      v2 = rr; w2 = ie2 * c;
      v3 = u;  w3 = -ie2 / c;
    } else {
      v1 = p;  w1 = 2.0 * ie2;
      v2 = g0; w2 = -ie2;
      v3 = Eigen::VectorXd::Zero(ns); w3 = 0.0;
    }
    if (b.dense) {
      auto scatter = [&](const Eigen::VectorXd& v, double w) {
        if (w == 0.0) return;
        Eigen::VectorXd full = Eigen::VectorXd::Zero(n_);
        const double sw = std::sqrt(std::abs(w));
        for (int t = 0; t < ns; ++t) full(b.support[t]) = sw * v(t);
        (w > 0.0 ? pos : neg).push_back(std::move(full));
      };
      scatter(v1, w1);
      scatter(v2, w2);
      scatter(v3, w3);
    } else {
      for (int t = 0; t < ns; ++t) {
        for (int s = 0; s <= t; ++s) {
          // support is sorted ascending, so support[t] >= support[s]
          H_(b.support[t], b.support[s]) += w1 * v1(t) * v1(s) + w2 * v2(t) * v2(s) + w3 * v3(t) * v3(s);
        }
      }
    }
    for (std::size_t t = 0; t < b.gram_v.size(); ++t) H_(b.gram_i[t], b.gram_j[t]) += ie2 * b.gram_v[t];
  }
  auto flush = [&](std::vector<Eigen::VectorXd>& vs, double sign) {
    if (vs.empty()) return;
    Eigen::MatrixXd V(n_, static_cast<Eigen::Index>(vs.size()));
    for (std::size_t t = 0; t < vs.size(); ++t) V.col(static_cast<Eigen::Index>(t)) = vs[t];
    H_.selfadjointView<Eigen::Lower>().rankUpdate(V, sign);
    vs.clear();
  };
  flush(pos, 1.0);
  flush(neg, -1.0);

  double dmax = 0.0;
  for (int j = 0; j < n_; ++j) dmax = std::max(dmax, std::abs(H_(j, j)));
  if (!(dmax > 0.0) || !std::isfinite(dmax)) dmax = 1.0;
  double reg = 1e-13 * dmax;
  for (int attempt = 0; attempt < 6; ++attempt, reg *= 100.0) {
    Eigen::MatrixXd Hr = H_;
    Hr.diagonal().array() += reg;
    llt_.compute(Hr);
    if (llt_.info() == Eigen::Success) {
      reg_ = reg;
      return true;
    }
  }
  return false;
}

inline void Ipm::solve_reduced(const Eigen::VectorXd& a, const Eigen::VectorXd& b, Eigen::VectorXd& x,
                               Eigen::VectorXd& z) const {
  // H x = a + G' W^{-2} b;  z = W^{-2}(G x - b)
  Eigen::VectorXd t;
  apply_W2(b, t, true);
  x = llt_.solve(a + apply_Gt(t));
  apply_W2(apply_G(x) - b, z, true);
}

inline void Ipm::solve_kkt(const Eigen::VectorXd& a, const Eigen::VectorXd& b, Eigen::VectorXd& x,
                           Eigen::VectorXd& z) const {
  solve_reduced(a, b, x, z);
  const double scale = std::max(1.0, std::max(a.lpNorm<Eigen::Infinity>(), b.lpNorm<Eigen::Infinity>()));
  Eigen::VectorXd t2, dx, dz;
  double prev = std::numeric_limits<double>::infinity();
  for (int it = 0; it < 4; ++it) {
    apply_W2(z, t2, false);
    const Eigen::VectorXd e1 = a - apply_Gt(z);
    const Eigen::VectorXd e2 = b - apply_G(x) + t2;
    const double err = std::max(e1.lpNorm<Eigen::Infinity>(), e2.lpNorm<Eigen::Infinity>());
    if (err <= kRefineTol * scale || err >= 0.5 * prev) break;
    prev = err;
    solve_reduced(e1, e2, dx, dz);
    x += dx;
    z += dz;
  }
}

inline double Ipm::max_step(const Eigen::VectorXd& v, const Eigen::VectorXd& dv) const {
  double alpha = std::numeric_limits<double>::infinity();
  for (int i = 0; i < d_.lp; ++i)
    if (dv(i) < 0.0) alpha = std::min(alpha, -v(i) / dv(i));
  for (const auto& b : blocks_)
    alpha = std::min(alpha, soc_step_length(v.data() + b.offset, dv.data() + b.offset, b.dim));
  return alpha;
}

inline void Ipm::product(const Eigen::VectorXd& u, const Eigen::VectorXd& v, Eigen::VectorXd& out) const {
  out.resize(m_);
  for (int i = 0; i < d_.lp; ++i) out(i) = u(i) * v(i);
  for (const auto& b : blocks_) soc_product(u.data() + b.offset, v.data() + b.offset, out.data() + b.offset, b.dim);
}

inline void Ipm::division(const Eigen::VectorXd& lam, const Eigen::VectorXd& dv, Eigen::VectorXd& out) const {
  out.resize(m_);
  for (int i = 0; i < d_.lp; ++i) out(i) = dv(i) / lam(i);
  for (const auto& b : blocks_) soc_division(lam.data() + b.offset, dv.data() + b.offset, out.data() + b.offset, b.dim);
}

inline void Ipm::add_identity(Eigen::VectorXd& v, double a) const {
  for (int i = 0; i < d_.lp; ++i) v(i) += a;
  for (const auto& b : blocks_) v(b.offset) += a;
}

/// Smallest alpha such that v + alpha e is in the cone (negative when v is interior).
inline double Ipm::cone_margin(const Eigen::VectorXd& v) const {
  double a = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < d_.lp; ++i) a = std::max(a, -v(i));
  for (const auto& b : blocks_) {
    double t = 0.0;
    for (int i = 1; i < b.dim; ++i) t += v(b.offset + i) * v(b.offset + i);
    a = std::max(a, std::sqrt(t) - v(b.offset));
  }
  if (!std::isfinite(a)) a = -1.0;
  return a;
}

inline IpmOutput Ipm::run() {
  IpmOutput out;
  const Eigen::VectorXd& c = d_.c;
  const Eigen::VectorXd& h = d_.h;
  const double tol = opt_.tol;
  const double feastol = opt_.tol;
  const double hnorm = std::max(1.0, h.norm());
  const double cnorm = std::max(1.0, c.norm());

  // Initial point from the W = I system.
  for (int i = 0; i < d_.lp; ++i) lp_w_(i) = 1.0;
  for (auto& sc : soc_w_) {
    sc.eta = 1.0;
    std::fill(sc.w.begin(), sc.w.end(), 0.0);
  }
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    soc_w_[b].w.assign(blocks_[b].dim, 0.0);
    soc_w_[b].w[0] = 1.0;
  }
  if (!factor()) return out;
  Eigen::VectorXd x, s, z, tmp;
  solve_kkt(Eigen::VectorXd::Zero(n_), h, x, tmp);
  s = -tmp;
  solve_kkt(-c, Eigen::VectorXd::Zero(m_), tmp, z);
  {
    const double ap = cone_margin(s);
    if (ap >= -1e-8 * std::max(1.0, s.lpNorm<Eigen::Infinity>())) add_identity(s, 1.0 + ap);
    const double ad = cone_margin(z);
    if (ad >= -1e-8 * std::max(1.0, z.lpNorm<Eigen::Infinity>())) add_identity(z, 1.0 + ad);
  }
  double tau = 1.0, kappa = 1.0;

  Eigen::VectorXd x1, z1, x2, z2, dx, dz, ds, ws, t1, t2, lam_sq, ds_aff_scaled, dz_aff_scaled, corr;
  double best_score = std::numeric_limits<double>::infinity();
  IpmOutput best;

  for (int iter = 0; iter <= opt_.max_iterations; ++iter) {
    const Eigen::VectorXd Gx = apply_G(x);
    const Eigen::VectorXd Gtz = apply_Gt(z);
    const Eigen::VectorXd rx = Gtz + c * tau;
    const Eigen::VectorXd rz = s + Gx - h * tau;
    const double cx = c.dot(x), hz = h.dot(z);
    const double rt = kappa + cx + hz;
    const double sz = s.dot(z);
    const double mu = (sz + kappa * tau) / (degree_ + 1);

    const double pres = rz.norm() / tau / hnorm;
    const double dres = rx.norm() / tau / cnorm;
    const double pcost = cx / tau, dcost = -hz / tau;
    const double gap = sz / (tau * tau);
    double relgap = std::numeric_limits<double>::infinity();
    if (pcost < 0.0)
      relgap = gap / -pcost;
    else if (dcost > 0.0)
      relgap = gap / dcost;
    const double absgap_scaled = gap / std::max(1.0, std::min(std::abs(pcost), std::abs(dcost)));
    // Residual of each cone with a constant term relative to its own size; the SINR cones have
    // constants far below the others. Homogeneous cones may shrink to the apex and are skipped.
    double bres = 0.0;
    for (int b = 0, off = d_.lp; b < static_cast<int>(d_.soc_dims.size()); off += d_.soc_dims[b], ++b) {
      const int q = d_.soc_dims[b];
      const double hb = h.segment(off, q).norm();
      if (hb == 0.0) continue;
      const double size = std::max({s.segment(off, q).norm(), Gx.segment(off, q).norm(), tau * hb});
      bres = std::max(bres, rz.segment(off, q).norm() / size);
    }

    if (opt_.verbose)
      std::printf("%3d pcost %+.6e dcost %+.6e gap %.2e pres %.2e bres %.2e dres %.2e tau %.2e kap %.2e\n", iter,
                  pcost, dcost, gap, pres, bres, dres, tau, kappa);

    out.iterations = iter;
    if (pres < feastol && dres < feastol && bres < feastol && (gap < tol || relgap < tol)) {
      out.status = SolveStatus::kOptimal;
      out.x = x / tau;
      out.s = s / tau;
      out.z = z / tau;
      out.relgap = std::min(relgap, absgap_scaled);
      return out;
    }
    if (hz < 0.0 && Gtz.norm() * hnorm / -hz < feastol) {
      out.status = SolveStatus::kInfeasible;
      out.z = z / -hz;
      return out;
    }
    if (cx < 0.0 && (Gx + s).norm() * cnorm / -cx < feastol) {
      out.status = SolveStatus::kUnbounded;
      out.x = x / -cx;
      return out;
    }
    // Remember the best iterate for an inaccurate-but-close return.
    {
      const double score = std::max({pres / feastol, dres / feastol, bres / feastol, std::min(gap, relgap) / tol});
      if (score < best_score) {
        best_score = score;
        best.x = x / tau;
        best.s = s / tau;
        best.z = z / tau;
        best.relgap = std::min(relgap, absgap_scaled);
        best.iterations = iter;
      }
    }
    if (iter == opt_.max_iterations) break;

    if (!compute_scaling(s, z)) break;
    if (!factor()) break;

    solve_kkt(-c, h, x1, z1);
    // Denominator kappa/tau + ||W z1||^2.
    apply_W(z1, t1, false);
    const double den = kappa / tau + t1.squaredNorm();

    auto direction = [&](double eta, const Eigen::VectorXd& dsv, double dk, Eigen::VectorXd& Dx, Eigen::VectorXd& Dz,
                         Eigen::VectorXd& Ds, double& Dtau, double& Dkap) {
      division(lambda_, dsv, t2);
      apply_W(t2, ws, false);  // W (lambda \ d_s)
      solve_kkt(-eta * rx, -eta * rz - ws, x2, z2);
      Dtau = (eta * rt + dk / tau + c.dot(x2) + h.dot(z2)) / den;
      Dx = x2 + Dtau * x1;
      Dz = z2 + Dtau * z1;
      apply_W2(Dz, t2, false);
      Ds = ws - t2;
      Dkap = (dk - kappa * Dtau) / tau;
    };

    // Predictor.
    product(lambda_, lambda_, lam_sq);
    Eigen::VectorXd dsv = -lam_sq;
    double dtau_a, dkap_a;
    Eigen::VectorXd dxa, dza, dsa;
    direction(1.0, dsv, -kappa * tau, dxa, dza, dsa, dtau_a, dkap_a);
    double amax = std::min(max_step(s, dsa), max_step(z, dza));
    if (dtau_a < 0.0) amax = std::min(amax, -tau / dtau_a);
    if (dkap_a < 0.0) amax = std::min(amax, -kappa / dkap_a);
    const double alpha_aff = std::min(1.0, amax);
    const double sigma = std::pow(1.0 - alpha_aff, 3);

    // Corrector.
    apply_W(dsa, ds_aff_scaled, true);
    apply_W(dza, dz_aff_scaled, false);
    product(ds_aff_scaled, dz_aff_scaled, corr);
    dsv = -lam_sq - corr;
    add_identity(dsv, sigma * mu);
    const double dk = -kappa * tau - dkap_a * dtau_a + sigma * mu;
    double dtau, dkap;
    direction(1.0 - sigma, dsv, dk, dx, dz, ds, dtau, dkap);
    amax = std::min(max_step(s, ds), max_step(z, dz));
    if (dtau < 0.0) amax = std::min(amax, -tau / dtau);
    if (dkap < 0.0) amax = std::min(amax, -kappa / dkap);
    const double alpha = std::min(1.0, 0.99 * amax);
    if (!(alpha > 1e-12) || !std::isfinite(alpha)) break;

    x += alpha * dx;
    s += alpha * ds;
    z += alpha * dz;
    tau += alpha * dtau;
    kappa += alpha * dkap;
    if (!(tau > 0.0) || !(kappa > 0.0) || !x.allFinite() || !s.allFinite() || !z.allFinite()) break;
    // Keep tau in a sane range relative to the iterate.
    const double scale = std::max({x.lpNorm<Eigen::Infinity>(), s.lpNorm<Eigen::Infinity>(),
                                   z.lpNorm<Eigen::Infinity>(), tau, kappa});
    if (scale > 1e12) {
      x /= scale; s /= scale; z /= scale; tau /= scale; kappa /= scale;
    }
  }
  // Accept a stalled iterate when it is close to the requested accuracy.
  if (best_score < 1e3 && best.x.size() == n_) {
    best.status = SolveStatus::kOptimal;
    best.inaccurate = true;
    return best;
  }
  out.status = SolveStatus::kNumericalFailure;
  if (best.x.size() == n_) {
    out.x = best.x;
    out.s = best.s;
    out.z = best.z;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scaling of the conic data: G~ = E G D, h~ = E h / hs, c~ = D c / cs.

struct Scaling {
  Eigen::VectorXd D;  ///< columns
  Eigen::VectorXd E;  ///< rows (uniform within each SOC block)
  double hs = 1.0;
  double cs = 1.0;
};

inline double row_max(const SparseRow& r) {
  double v = 0.0;
  for (double a : r.val) v = std::max(v, std::abs(a));
  return v;
}

/// Ruiz equilibration (iterations > 0) or plain row-norm scaling (iterations == 0).
inline Scaling equilibrate(ConicData& d, int iterations) {
  Scaling sc;
  const int n = d.n, m = d.m();
  sc.D = Eigen::VectorXd::Ones(n);
  sc.E = Eigen::VectorXd::Ones(m);
  auto clampf = [](double v) { return std::clamp(v, 1e-4, 1e4); };
  auto block_rows = [&](auto&& fn) {
    for (int i = 0; i < d.lp; ++i) fn(i, i + 1);
    int off = d.lp;
    for (int q : d.soc_dims) {
      fn(off, off + q);
      off += q;
    }
  };
  auto scale_rows = [&](int a, int b, double f) {
    for (int i = a; i < b; ++i) {
      for (double& v : d.rows[i].val) v *= f;
      d.h(i) *= f;
      sc.E(i) *= f;
    }
  };
  if (iterations == 0) {
    block_rows([&](int a, int b) {
      double nrm = 0.0;
      for (int i = a; i < b; ++i) nrm = std::max(nrm, row_max(d.rows[i]));
      if (nrm > 0.0) scale_rows(a, b, 1.0 / nrm);
    });
  }
  for (int it = 0; it < iterations; ++it) {
    Eigen::VectorXd cn = Eigen::VectorXd::Zero(n);
    for (const auto& r : d.rows)
      for (std::size_t t = 0; t < r.idx.size(); ++t) cn(r.idx[t]) = std::max(cn(r.idx[t]), std::abs(r.val[t]));
    Eigen::VectorXd f(n);
    for (int j = 0; j < n; ++j) f(j) = cn(j) > 0.0 ? clampf(1.0 / std::sqrt(cn(j))) : 1.0;
    for (auto& r : d.rows)
      for (std::size_t t = 0; t < r.idx.size(); ++t) r.val[t] *= f(r.idx[t]);
    sc.D.array() *= f.array();
    d.c.array() *= f.array();
    block_rows([&](int a, int b) {
      double nrm = 0.0;
      for (int i = a; i < b; ++i) nrm = std::max(nrm, row_max(d.rows[i]));
      if (nrm > 0.0) scale_rows(a, b, clampf(1.0 / std::sqrt(nrm)));
    });
  }
  const double cn = d.c.lpNorm<Eigen::Infinity>();
  if (cn > 0.0) {
    sc.cs = cn;
    d.c /= cn;
  }
  const double hn = d.h.lpNorm<Eigen::Infinity>();
  if (hn > 0.0) {
    sc.hs = hn;
    d.h /= hn;
  }
  return sc;
}

inline Eigen::VectorXd unscale_x(const Eigen::VectorXd& xt, const Scaling& sc) {
  return (sc.D.array() * xt.array()).matrix() * sc.hs;
}

/// Minimize t subject to every constraint row block relaxed by t >= 0.
inline ConicData phase1_data(const ConicData& d) {
  ConicData p = d;
  const int t = p.n;
  p.n += 1;
  p.c = Eigen::VectorXd::Zero(p.n);
  p.c(t) = 1.0;
  for (int i = 0; i < p.lp; ++i) {
    if (!d.relaxable[i]) continue;
    const double nrm = std::max(row_max(d.rows[i]), 1e-300);
    p.rows[i].idx.push_back(t);
    p.rows[i].val.push_back(-nrm);
  }
  int off = p.lp;
  for (int q : p.soc_dims) {
    double nrm = 0.0;
    for (int i = off; i < off + q; ++i) nrm = std::max(nrm, row_max(d.rows[i]));
    p.rows[off].idx.push_back(t);
    p.rows[off].val.push_back(-std::max(nrm, 1e-300));
    off += q;
  }
  // t >= 0 as the first LP row.
  p.rows.insert(p.rows.begin(), SparseRow{{t}, {-1.0}});
  Eigen::VectorXd h(p.h.size() + 1);
  h << 0.0, p.h;
  p.h = h;
  p.relaxable.insert(p.relaxable.begin(), 0);
  p.lp += 1;
  return p;
}

}  // namespace detail

/**
 * \brief Solve a second-order cone program.
 *
 * Fixed variables and unused columns are eliminated, the remaining conic
 * data is equilibrated and passed to a homogeneous self-dual interior-point
 * method. A numerical failure triggers one retry with plain row scaling and
 * then a phase-1 feasibility solve that classifies the program as infeasible
 * when the minimal constraint relaxation exceeds phase1_threshold.
 */
inline SolveResult solve(const SocProgram& program, const SolverOptions& options = {}) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  SolveResult res;
  program.validate();
  detail::Presolved pre = detail::presolve(program);

  auto finish = [&](SolveResult& r) {
    r.seconds = std::chrono::duration<double>(clock::now() - start).count();
    return r;
  };
  auto assemble = [&](const Eigen::VectorXd& xr) {
    std::vector<double> x(program.num_vars());
    for (int j = 0; j < program.num_vars(); ++j) x[j] = pre.column[j] >= 0 ? xr(pre.column[j]) : pre.fixed[j];
    return x;
  };

  if (pre.infeasible) {
    res.status = SolveStatus::kInfeasible;
    return finish(res);
  }
  if (pre.unbounded) {
    res.status = SolveStatus::kUnbounded;
    return finish(res);
  }
  if (pre.data.n == 0) {
    res.x = assemble(Eigen::VectorXd());
    res.max_violation = program.max_violation(res.x);
    res.objective = program.objective_value(res.x);
    res.status = res.max_violation <= options.tol ? SolveStatus::kOptimal : SolveStatus::kInfeasible;
    res.relative_gap = 0.0;
    return finish(res);
  }

  auto attempt = [&](int ruiz_iterations, detail::IpmOutput& o) {
    detail::ConicData d = pre.data;
    detail::Scaling sc;
    if (options.equilibrate || ruiz_iterations == 0) sc = detail::equilibrate(d, ruiz_iterations);
    else {
      sc.D = Eigen::VectorXd::Ones(d.n);
      sc.E = Eigen::VectorXd::Ones(d.m());
    }
    detail::Ipm ipm(d, options);
    o = ipm.run();
    if (o.x.size() == d.n) o.x = detail::unscale_x(o.x, sc);
    return o.status;
  };

  // The IPM tolerances are global, so rows with tiny natural scale can be far off in a stalled iterate.
  auto reject_loose = [&](SolveStatus st, detail::IpmOutput& o) {
    if (st == SolveStatus::kOptimal && o.inaccurate &&
        program.max_relative_violation(assemble(o.x)) > options.inaccurate_cone_tol) {
      o.status = SolveStatus::kNumericalFailure;
      return SolveStatus::kNumericalFailure;
    }
    return st;
  };

  detail::IpmOutput o;
  SolveStatus st = reject_loose(attempt(options.equilibrate ? 15 : -1, o), o);
  res.iterations = o.iterations;
  if (st == SolveStatus::kNumericalFailure && options.retry_on_failure) {
    res.retried = true;
    detail::IpmOutput o2;
    st = reject_loose(attempt(0, o2), o2);
    res.iterations += o2.iterations;
    o = std::move(o2);
  }
  if (st == SolveStatus::kNumericalFailure && options.phase1_on_failure) {
    res.phase1 = true;
    detail::ConicData d = pre.data;
    detail::equilibrate(d, 0);
    detail::ConicData p = detail::phase1_data(d);
    detail::Scaling sc = detail::equilibrate(p, 15);
    detail::Ipm ipm(p, options);
    detail::IpmOutput po = ipm.run();
    res.iterations += po.iterations;
    if (po.status == SolveStatus::kOptimal) {
      const Eigen::VectorXd xp = detail::unscale_x(po.x, sc);
      res.phase1_violation = xp(p.n - 1);
      if (res.phase1_violation > options.phase1_threshold) st = SolveStatus::kInfeasible;
    } else if (po.status == SolveStatus::kInfeasible) {
      st = SolveStatus::kInfeasible;
    }
  }

  res.status = st;
  res.inaccurate = o.inaccurate;
  if (st == SolveStatus::kOptimal) {
    res.x = assemble(o.x);
    res.objective = program.objective_value(res.x);
    res.max_violation = program.max_violation(res.x);
    res.relative_gap = o.relgap;
  } else if (o.x.size() == pre.data.n && st == SolveStatus::kNumericalFailure) {
    res.x = assemble(o.x);
    res.max_violation = program.max_violation(res.x);
  }
  return finish(res);
}

}  // namespace cellfree::soc
