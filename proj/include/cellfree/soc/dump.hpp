#pragma once

#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "cellfree/soc/program.hpp"

namespace cellfree::soc {

/*
 * Plain-text conic format, one record per line, tokens separated by spaces.
 *
 *   socp 1
 *   vars <n>
 *   var <index> <name> <lower> <upper> <cost>        (n lines)
 *   constant <objective constant>
 *   cones <count>
 *   cone <label> <p>                                 (p = number of lhs entries, 0 for linear)
 *   rhs <constant> <t> <var> <coef> ... <var> <coef>
 *   lhs <constant> <t> <var> <coef> ...              (p lines)
 *   end
 *
 * Each cone reads ||(lhs_1, ..., lhs_p)|| <= rhs. Names and labels never
 * contain spaces; an empty label is written as "-". Infinite bounds are
 * "inf" and "-inf". Numbers use 17 significant digits so a dump round-trips.
 */

namespace detail {

inline std::string fmt_double(double v) {
  if (v == kInf) return "inf";
  if (v == -kInf) return "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& tok, int line) {
  if (tok == "inf") return kInf;
  if (tok == "-inf") return -kInf;
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (tok.empty() || *end != '\0') throw std::runtime_error("conic dump line " + std::to_string(line) + ": bad number '" + tok + "'");
  return v;
}

inline void write_expr(std::ostream& os, const char* tag, const AffineExpr& e) {
  os << tag << ' ' << fmt_double(e.constant) << ' ' << e.terms.size();
  for (const auto& t : e.terms) os << ' ' << t.var << ' ' << fmt_double(t.coef);
  os << '\n';
}

class LineReader {
 public:
  explicit LineReader(std::istream& is) : is_(is) {}

  std::istringstream next(const std::string& tag) {
    std::string line;
    while (std::getline(is_, line)) {
      ++line_;
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ss(line);
      std::string t;
      ss >> t;
      if (t != tag) fail("expected '" + tag + "', found '" + t + "'");
      return ss;
    }
    fail("unexpected end of input, expected '" + tag + "'");
    return {};
  }

  std::string token(std::istringstream& ss) {
    std::string t;
    if (!(ss >> t)) fail("missing field");
    return t;
  }
  double number(std::istringstream& ss) { return parse_double(token(ss), line_); }
  long integer(std::istringstream& ss) {
    const std::string t = token(ss);
    char* end = nullptr;
    const long v = std::strtol(t.c_str(), &end, 10);
    if (*end != '\0') fail("bad integer '" + t + "'");
    return v;
  }

  AffineExpr expr(const std::string& tag, int n_vars) {
    std::istringstream ss = next(tag);
    AffineExpr e;
    e.constant = number(ss);
    const long nt = integer(ss);
    if (nt < 0) fail("negative term count");
    for (long i = 0; i < nt; ++i) {
      const long v = integer(ss);
      if (v < 0 || v >= n_vars) fail("variable index out of range");
      e.terms.push_back({static_cast<int>(v), number(ss)});
    }
    return e;
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw std::runtime_error("conic dump line " + std::to_string(line_) + ": " + msg);
  }

 private:
  std::istream& is_;
  int line_ = 0;
};

}  // namespace detail

inline void write_program(std::ostream& os, const SocProgram& p) {
  os << "socp 1\n";
  os << "vars " << p.num_vars() << '\n';
  for (int i = 0; i < p.num_vars(); ++i)
    os << "var " << i << ' ' << (p.names()[i].empty() ? "-" : p.names()[i]) << ' ' << detail::fmt_double(p.lower()[i])
       << ' ' << detail::fmt_double(p.upper()[i]) << ' ' << detail::fmt_double(p.cost()[i]) << '\n';
  os << "constant " << detail::fmt_double(p.objective_constant()) << '\n';
  os << "cones " << p.num_cones() << '\n';
  for (const Cone& c : p.cones()) {
    os << "cone " << (c.label.empty() ? "-" : c.label) << ' ' << c.lhs.size() << '\n';
    detail::write_expr(os, "rhs", c.rhs);
    for (const auto& e : c.lhs) detail::write_expr(os, "lhs", e);
  }
  os << "end\n";
}

inline std::string dump_program(const SocProgram& p) {
  std::ostringstream os;
  write_program(os, p);
  return os.str();
}

inline SocProgram read_program(std::istream& is) {
  detail::LineReader r(is);
  SocProgram p;
  {
    auto ss = r.next("socp");
    if (r.integer(ss) != 1) r.fail("unsupported format version");
  }
  long n = 0;
  {
    auto ss = r.next("vars");
    n = r.integer(ss);
    if (n < 0) r.fail("negative variable count");
  }
  for (long i = 0; i < n; ++i) {
    auto ss = r.next("var");
    if (r.integer(ss) != i) r.fail("variables must be listed in order");
    std::string name = r.token(ss);
    if (name == "-") name.clear();
    const double lo = r.number(ss), up = r.number(ss), cost = r.number(ss);
    const int v = p.add_variable(std::move(name), lo, up);
    p.set_cost(v, cost);
  }
  {
    auto ss = r.next("constant");
    p.set_objective_constant(r.number(ss));
  }
  long nc = 0;
  {
    auto ss = r.next("cones");
    nc = r.integer(ss);
    if (nc < 0) r.fail("negative cone count");
  }
  for (long c = 0; c < nc; ++c) {
    auto ss = r.next("cone");
    std::string label = r.token(ss);
    if (label == "-") label.clear();
    const long lhs_count = r.integer(ss);
    if (lhs_count < 0) r.fail("negative cone dimension");
    AffineExpr rhs = r.expr("rhs", static_cast<int>(n));
    std::vector<AffineExpr> lhs;
    for (long i = 0; i < lhs_count; ++i) lhs.push_back(r.expr("lhs", static_cast<int>(n)));
    p.add_cone(std::move(lhs), std::move(rhs), std::move(label));
  }
  r.next("end");
  return p;
}

inline SocProgram parse_program(const std::string& text) {
  std::istringstream is(text);
  return read_program(is);
}

}  // namespace cellfree::soc
