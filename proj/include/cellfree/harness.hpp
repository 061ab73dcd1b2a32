#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "cellfree/bnb.hpp"
#include "cellfree/heuristics.hpp"
#include "cellfree/network_model.hpp"
#include "cellfree/performance_model.hpp"
#include "cellfree/rng.hpp"

namespace cellfree::harness {

enum class Method { kTransmitOnly, kAlgorithm1, kAlgorithm2, kDisjoint, kBnb };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::kTransmitOnly: return "transmit_only";
    case Method::kAlgorithm1: return "alg1";
    case Method::kAlgorithm2: return "alg2";
    case Method::kDisjoint: return "disjoint";
    case Method::kBnb: return "bnb";
  }
  return "unknown";
}

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline Method parse_method(const std::string& s) {
  for (Method m : {Method::kTransmitOnly, Method::kAlgorithm1, Method::kAlgorithm2, Method::kDisjoint, Method::kBnb})
    if (s == to_string(m)) return m;
  throw ConfigError("unknown method '" + s + "'");
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  }
}

inline long to_long(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long l = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return l;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
  }
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("key '" + key + "': expected a boolean, got '" + v + "'");
}

}  // namespace detail

/**
 * \brief Simulation parameters.
 *
 * Read from a flat text file with one `key = value` per line; `#` starts a
 * comment. Every key has a default, see `keys()` for the list.
 */
struct ExperimentConfig {
  int M = 20;
  int K = 20;
  int antennas = 20;
  int tau_c = 200;
  int tau_p = 5;
  std::string se_mode = "fixed";  ///< fixed: every user gets `se`; uniform: per user on [se_min, se_max]
  double se = 2.0;
  double se_min = 1.0;
  double se_max = 2.0;
  double delta = 2.5;
  double antenna_w = 0.2;    ///< hardware power per antenna
  double fronthaul_w = 0.825;
  double p_bt = 0.25;        ///< W per Gbit/s
  double bandwidth = 20e6;
  double p_max = 1.0;
  double pilot_power = 0.2;
  double noise_ul_dbm = -94.0;
  double noise_dl_dbm = -94.0;
  double side_length = 1000.0;
  double min_ap_spacing = 50.0;
  double ap_height = 10.0;
  double shadow_variance_db2 = 16.0;
  double shadow_decorrelation_m = 9.0;
  long drops = 100;
  std::uint64_t seed = 1;
  std::vector<Method> methods{Method::kTransmitOnly, Method::kAlgorithm1, Method::kAlgorithm2, Method::kDisjoint};
  std::vector<Precoder> precoders{Precoder::kMrt};
  double bnb_gap = 1e-6;
  long bnb_node_cap = 100000;
  double bnb_time_limit = 0.0;  ///< seconds; 0 disables
  std::string bnb_relaxation = "squared";  ///< squared | perspective
  bool bnb_seed_heuristics = true;
  double irls_p_tilde = 1.0;
  double irls_epsilon = -1.0;
  double irls_stop = 1e-4;
  int irls_max_iterations = 50;
  std::string theta_channel = "beta";
  double solver_tol = 1e-8;
  int threads = 0;  ///< 0 uses the hardware concurrency
  bool timing = true;  ///< false writes zero wall times so reports are reproducible byte for byte

  static std::vector<std::string> keys() {
    return {"M", "K", "antennas", "tau_c", "tau_p", "se_mode", "se", "se_min", "se_max", "delta", "antenna_w",
            "fronthaul_w", "p_bt", "bandwidth", "p_max", "pilot_power", "noise_ul_dbm", "noise_dl_dbm",
            "side_length", "min_ap_spacing", "ap_height", "shadow_variance_db2", "shadow_decorrelation_m", "drops",
            "seed", "methods", "precoders", "bnb_gap", "bnb_node_cap", "bnb_time_limit", "bnb_relaxation",
            "bnb_seed_heuristics", "irls_p_tilde", "irls_epsilon", "irls_stop", "irls_max_iterations",
            "theta_channel", "solver_tol", "threads", "timing"};
  }

  void set(const std::string& key_in, const std::string& value_in) {
    const std::string key = detail::trim(key_in), v = detail::trim(value_in);
    auto D = [&] { return detail::to_double(key, v); };
    auto I = [&] { return static_cast<int>(detail::to_long(key, v)); };
    if (key == "M") M = I();
    else if (key == "K") K = I();
    else if (key == "antennas" || key == "N") antennas = I();
    else if (key == "tau_c") tau_c = I();
    else if (key == "tau_p") tau_p = I();
    else if (key == "se_mode") se_mode = v;
    else if (key == "se") se = D();
    else if (key == "se_min") se_min = D();
    else if (key == "se_max") se_max = D();
    else if (key == "delta") delta = D();
    else if (key == "antenna_w") antenna_w = D();
    else if (key == "fronthaul_w") fronthaul_w = D();
    else if (key == "p_bt") p_bt = D();
    else if (key == "bandwidth") bandwidth = D();
    else if (key == "p_max") p_max = D();
    else if (key == "pilot_power") pilot_power = D();
    else if (key == "noise_ul_dbm") noise_ul_dbm = D();
    else if (key == "noise_dl_dbm") noise_dl_dbm = D();
    else if (key == "side_length") side_length = D();
    else if (key == "min_ap_spacing") min_ap_spacing = D();
    else if (key == "ap_height") ap_height = D();
    else if (key == "shadow_variance_db2") shadow_variance_db2 = D();
    else if (key == "shadow_decorrelation_m") shadow_decorrelation_m = D();
    else if (key == "drops") drops = detail::to_long(key, v);
    else if (key == "seed") {
      const long s = detail::to_long(key, v);
      if (s < 0) throw ConfigError("key 'seed': must be nonnegative");
      seed = static_cast<std::uint64_t>(s);
    } else if (key == "methods") {
      methods.clear();
      for (const auto& m : detail::split(v, ',')) methods.push_back(parse_method(m));
    } else if (key == "precoders" || key == "precoder") {
      precoders.clear();
      for (const auto& p : detail::split(v, ',')) {
        try {
          precoders.push_back(parse_precoder(p));
        } catch (const std::invalid_argument& e) {
          throw ConfigError(e.what());
        }
      }
    } else if (key == "bnb_gap") bnb_gap = D();
    else if (key == "bnb_node_cap") bnb_node_cap = detail::to_long(key, v);
    else if (key == "bnb_time_limit") bnb_time_limit = D();
    else if (key == "bnb_relaxation") bnb_relaxation = v;
    else if (key == "bnb_seed_heuristics") bnb_seed_heuristics = detail::to_bool(key, v);
    else if (key == "irls_p_tilde") irls_p_tilde = D();
    else if (key == "irls_epsilon") irls_epsilon = D();
    else if (key == "irls_stop") irls_stop = D();
    else if (key == "irls_max_iterations") irls_max_iterations = I();
    else if (key == "theta_channel") theta_channel = v;
    else if (key == "solver_tol") solver_tol = D();
    else if (key == "threads") threads = I();
    else if (key == "timing") timing = detail::to_bool(key, v);
    else throw ConfigError("unknown key '" + key + "'");
  }

  /// Apply a `key=value` string.
  void apply_override(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + kv + "' is not key=value");
    set(kv.substr(0, eq), kv.substr(eq + 1));
  }

  void validate() const {
    auto need = [](bool ok, const std::string& msg) {
      if (!ok) throw ConfigError(msg);
    };
    need(M >= 1 && M <= 63, "M must be in [1, 63]");
    need(K >= 1, "K must be positive");
    need(antennas >= 1, "antennas must be positive");
    need(tau_p >= 1 && tau_c > tau_p, "need 1 <= tau_p < tau_c");
    need(se_mode == "fixed" || se_mode == "uniform", "se_mode must be fixed or uniform");
    need(se >= 0.0 && se_min >= 0.0 && se_max >= se_min, "SE targets must satisfy 0 <= se_min <= se_max, se >= 0");
    need(delta >= 1.0, "delta must be at least 1");
    need(antenna_w >= 0.0 && fronthaul_w >= 0.0 && p_bt >= 0.0, "hardware powers must be nonnegative");
    need(bandwidth > 0.0 && p_max > 0.0 && pilot_power > 0.0, "bandwidth, p_max and pilot_power must be positive");
    need(side_length > 0.0 && min_ap_spacing >= 0.0 && ap_height > 0.0, "geometry must be positive");
    need(shadow_variance_db2 >= 0.0 && shadow_decorrelation_m > 0.0, "shadowing parameters out of range");
    need(drops >= 0, "drops must be nonnegative");
    need(!methods.empty(), "methods must not be empty");
    need(!precoders.empty(), "precoders must not be empty");
    for (Precoder p : precoders)
      need(p != Precoder::kFzf || antennas > tau_p, "FZF needs antennas > tau_p");
    need(bnb_gap >= 0.0 && bnb_node_cap >= 1 && bnb_time_limit >= 0.0, "BnB budget out of range");
    need(bnb_relaxation == "squared" || bnb_relaxation == "perspective", "bnb_relaxation must be squared or perspective");
    need(irls_p_tilde > 0.0 && irls_p_tilde < 2.0, "irls_p_tilde must be in (0, 2)");
    need(irls_stop > 0.0 && irls_max_iterations >= 1, "IRLS stopping parameters out of range");
    need(theta_channel == "beta" || theta_channel == "gamma", "theta_channel must be beta or gamma");
    need(solver_tol > 0.0 && solver_tol < 1e-2, "solver_tol must be in (0, 1e-2)");
    need(threads >= 0, "threads must be nonnegative");
  }

  /// Key-value echo, in `keys()` order.
  std::string to_text() const {
    std::ostringstream os;
    auto join_methods = [&] {
      std::string s;
      for (std::size_t i = 0; i < methods.size(); ++i) s += (i ? "," : "") + std::string(to_string(methods[i]));
      return s;
    };
    auto join_precoders = [&] {
      std::string s;
      for (std::size_t i = 0; i < precoders.size(); ++i) s += (i ? "," : "") + std::string(to_string(precoders[i]));
      return s;
    };
    using detail::fmt;
    os << "M = " << M << "\nK = " << K << "\nantennas = " << antennas << "\ntau_c = " << tau_c
       << "\ntau_p = " << tau_p << "\nse_mode = " << se_mode << "\nse = " << fmt(se) << "\nse_min = " << fmt(se_min)
       << "\nse_max = " << fmt(se_max) << "\ndelta = " << fmt(delta) << "\nantenna_w = " << fmt(antenna_w)
       << "\nfronthaul_w = " << fmt(fronthaul_w) << "\np_bt = " << fmt(p_bt) << "\nbandwidth = " << fmt(bandwidth)
       << "\np_max = " << fmt(p_max) << "\npilot_power = " << fmt(pilot_power)
       << "\nnoise_ul_dbm = " << fmt(noise_ul_dbm) << "\nnoise_dl_dbm = " << fmt(noise_dl_dbm)
       << "\nside_length = " << fmt(side_length) << "\nmin_ap_spacing = " << fmt(min_ap_spacing)
       << "\nap_height = " << fmt(ap_height) << "\nshadow_variance_db2 = " << fmt(shadow_variance_db2)
       << "\nshadow_decorrelation_m = " << fmt(shadow_decorrelation_m) << "\ndrops = " << drops
       << "\nseed = " << seed << "\nmethods = " << join_methods() << "\nprecoders = " << join_precoders()
       << "\nbnb_gap = " << fmt(bnb_gap) << "\nbnb_node_cap = " << bnb_node_cap
       << "\nbnb_time_limit = " << fmt(bnb_time_limit) << "\nbnb_relaxation = " << bnb_relaxation
       << "\nbnb_seed_heuristics = " << (bnb_seed_heuristics ? "true" : "false")
       << "\nirls_p_tilde = " << fmt(irls_p_tilde) << "\nirls_epsilon = " << fmt(irls_epsilon)
       << "\nirls_stop = " << fmt(irls_stop) << "\nirls_max_iterations = " << irls_max_iterations
       << "\ntheta_channel = " << theta_channel << "\nsolver_tol = " << fmt(solver_tol)
       << "\nthreads = " << threads << "\ntiming = " << (timing ? "true" : "false") << '\n';
    return os.str();
  }

  DropParams drop_params() const {
    DropParams p;
    p.M = M;
    p.K = K;
    p.antennas = antennas;
    p.tau_c = tau_c;
    p.tau_p = tau_p;
    p.pilot_power = pilot_power;
    p.noise_ul_dbm = noise_ul_dbm;
    p.noise_dl_dbm = noise_dl_dbm;
    p.geometry.side_length = side_length;
    p.geometry.min_ap_spacing = min_ap_spacing;
    p.geometry.ap_height = ap_height;
    p.shadow.variance_db2 = shadow_variance_db2;
    p.shadow.decorrelation_m = shadow_decorrelation_m;
    return p;
  }

  PowerModel power_model() const {
    return PowerModel::uniform(M, delta, antennas * antenna_w + fronthaul_w, p_bt * 1e-9, p_max, bandwidth);
  }

  /// SE targets of one drop; uniform targets come from a dedicated stream of (seed, drop).
  Eigen::VectorXd requirements(long drop) const {
    if (se_mode == "fixed") return Eigen::VectorXd::Constant(K, se);
    RandomStream rs(seed, static_cast<std::uint64_t>(drop), Stream::kRequirements);
    Eigen::VectorXd xi(K);
    for (int k = 0; k < K; ++k) xi(k) = rs.uniform(se_min, se_max);
    return xi;
  }

  HeuristicOptions heuristic_options() const {
    HeuristicOptions h;
    h.irls.p_tilde = irls_p_tilde;
    h.irls.epsilon = irls_epsilon;
    h.irls.stop_relative = irls_stop;
    h.irls.max_iterations = irls_max_iterations;
    h.solver.tol = solver_tol;
    h.theta_channel = theta_channel == "gamma" ? ThetaChannel::kGamma : ThetaChannel::kBeta;
    return h;
  }

  BnbOptions bnb_options() const {
    BnbOptions b;
    b.gap_tol = bnb_gap;
    b.node_cap = bnb_node_cap;
    if (bnb_time_limit > 0.0) b.time_limit = bnb_time_limit;
    b.formulation.relaxation = bnb_relaxation == "perspective" ? Relaxation::kPerspective : Relaxation::kSquaredActivity;
    b.solver.tol = solver_tol;
    return b;
  }
};

inline ExperimentConfig parse_config(std::istream& is, const std::string& origin = "<config>") {
  ExperimentConfig c;
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(n) + ": expected key = value");
    try {
      c.set(line.substr(0, eq), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path.string());
  return parse_config(f, path.string());
}

/// One method on one drop with one precoder.
struct Record {
  long drop = 0;
  Method method = Method::kTransmitOnly;
  Precoder precoder = Precoder::kMrt;
  double transmit_w = 0.0;
  double hardware_w = 0.0;
  double total_w = 0.0;
  double radiated_w = 0.0;
  int active_aps = 0;
  std::string status;
  long nodes = 0;
  long solves = 0;
  double gap = 0.0;
  bool feasible = false;
  double seconds = 0.0;

  /// Counts toward statistics: a verified allocation.
  bool usable() const { return feasible && (status == "ok" || status == "optimal" || status == "budget_exceeded"); }
  /// A genuine method failure, as opposed to an infeasible drop.
  bool failed() const { return !usable() && status != "infeasible"; }
};

inline bool record_less(const Record& a, const Record& b) {
  return std::make_tuple(a.drop, static_cast<int>(a.precoder), static_cast<int>(a.method)) <
         std::make_tuple(b.drop, static_cast<int>(b.precoder), static_cast<int>(b.method));
}

struct RunReport {
  ExperimentConfig config;
  std::vector<Record> records;
  double seconds = 0.0;

  long failures() const {
    return std::count_if(records.begin(), records.end(), [](const Record& r) { return r.failed(); });
  }
};

/// Independent SINR recheck of an allocation at the 1e-6 relative tolerance.
inline bool recheck(const ProblemInstance& in, const Allocation& a) {
  if (a.active.empty()) return !in.any_requirement();
  if (a.q.rows() != in.num_aps() || a.q.cols() != in.num_users()) return false;
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(a.q.rows(), a.q.cols());
  for (int m : a.active) q.row(m) = a.q.row(m);
  if ((q.array() < 0.0).any()) return false;
  for (int m : a.active)
    if (q.row(m).squaredNorm() > in.power.p_max(m) * (1.0 + 1e-6)) return false;
  return meets_requirements(sinr(in.stats, in.scheme, q, a.active, in.pilots), in.nu, 1e-6);
}

namespace detail {

inline Record make_record(long drop, Method m, Precoder p, const ProblemInstance& in, const Allocation& a,
                          const std::string& status, bool ok) {
  Record r;
  r.drop = drop;
  r.method = m;
  r.precoder = p;
  r.status = status;
  if (ok) {
    const PowerBreakdown pb = total_power(a.q, a.active, in.power, in.p_hw);
    r.transmit_w = pb.transmit;
    r.hardware_w = pb.hardware;
    r.total_w = pb.transmit + pb.hardware;
    r.radiated_w = pb.radiated;
    r.active_aps = static_cast<int>(a.active.size());
    r.feasible = recheck(in, a);
    if (!r.feasible) r.status = "recheck_failed";
  }
  return r;
}

inline bool contains(const std::vector<Method>& v, Method m) { return std::find(v.begin(), v.end(), m) != v.end(); }

}  // namespace detail

/// All requested methods on one drop, for every requested precoder.
inline std::vector<Record> run_drop(const ExperimentConfig& cfg, long drop) {
  using clock = std::chrono::steady_clock;
  std::vector<Record> out;
  const NetworkRealization net = generate_drop(cfg.drop_params(), cfg.seed, static_cast<std::uint64_t>(drop));
  const Eigen::VectorXd xi = cfg.requirements(drop);
  const PowerModel pm = cfg.power_model();
  const HeuristicOptions ho = cfg.heuristic_options();
  auto secs = [&](clock::time_point t0) {
    return cfg.timing ? std::chrono::duration<double>(clock::now() - t0).count() : 0.0;
  };
  for (Precoder pc : cfg.precoders) {
    const ProblemInstance in = make_instance(net.stats, net.pilots, pc, pm, xi);
    std::vector<std::vector<int>> seeds;
    const bool want_seeds = cfg.bnb_seed_heuristics && detail::contains(cfg.methods, Method::kBnb);

    if (detail::contains(cfg.methods, Method::kTransmitOnly)) {
      const auto t0 = clock::now();
      soc::SolverOptions so;
      so.tol = cfg.solver_tol;
      const SolvedProgram sp = solve_formulation(in, build_transmit_only(in), so);
      std::string status = sp.ok() ? "ok" : soc::to_string(sp.solve.status);
      Record r = detail::make_record(drop, Method::kTransmitOnly, pc, in, sp.allocation, status, sp.ok());
      r.solves = 1;
      r.seconds = secs(t0);
      out.push_back(r);
    }

    IrlsResult irls_cache;
    bool have_irls = false;
    // Heuristics also run unrecorded when they only seed the BnB incumbent.
    auto run_heuristic = [&](Method m, const std::function<HeuristicResult()>& fn) {
      const bool recorded = detail::contains(cfg.methods, m);
      if (!recorded && !want_seeds) return;
      const auto t0 = clock::now();
      const HeuristicResult h = fn();
      if (m == Method::kAlgorithm1) {
        irls_cache = h.irls;
        have_irls = h.irls.iterations > 0;
      }
      Record r = detail::make_record(drop, m, pc, in, h.allocation, h.ok ? "ok" : h.status, h.ok);
      r.solves = h.solves;
      r.seconds = secs(t0);
      if (r.usable()) seeds.push_back(h.allocation.active);
      if (recorded) out.push_back(r);
    };
    run_heuristic(Method::kAlgorithm1, [&] { return algorithm1(in, ho); });
    run_heuristic(Method::kAlgorithm2, [&] { return algorithm2(in, ho); });
    run_heuristic(Method::kDisjoint, [&] { return disjoint_sparsity(in, ho, have_irls ? &irls_cache : nullptr); });
    if (detail::contains(cfg.methods, Method::kBnb)) {
      const auto t0 = clock::now();
      BnbOptions bo = cfg.bnb_options();
      if (cfg.bnb_seed_heuristics) bo.initial_active_sets = seeds;
      const BnbResult b = solve_exact(in, bo);
      const bool ok = b.status == BnbStatus::kOptimal || b.status == BnbStatus::kBudgetExceeded;
      Record r = detail::make_record(drop, Method::kBnb, pc, in, b.allocation, to_string(b.status), ok);
      r.nodes = b.counters.boxes_created;
      r.solves = b.counters.relaxations_solved + b.counters.rounded_solved;
      r.gap = std::isfinite(b.gap) ? b.gap : 0.0;
      r.seconds = secs(t0);
      out.push_back(r);
    }
  }
  return out;
}

/// Run every drop; results do not depend on the thread count.
inline RunReport run_experiment(const ExperimentConfig& cfg,
                                const std::function<void(long done, long total)>& progress = {}) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  RunReport rep;
  rep.config = cfg;
  const long n = cfg.drops;
  int workers = cfg.threads > 0 ? cfg.threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  workers = static_cast<int>(std::min<long>(workers, std::max<long>(n, 1)));
  std::atomic<long> next{0};
  std::atomic<long> done{0};
  std::mutex mu;
  std::exception_ptr error;
  auto work = [&] {
    for (;;) {
      const long d = next.fetch_add(1);
      if (d >= n) return;
      std::vector<Record> rs;
      try {
        rs = run_drop(cfg, d);
      } catch (...) {
        std::lock_guard<std::mutex> lk(mu);
        if (!error) error = std::current_exception();
        next = n;
        return;
      }
      std::lock_guard<std::mutex> lk(mu);
      rep.records.insert(rep.records.end(), rs.begin(), rs.end());
      const long k = ++done;
      if (progress) progress(k, n);
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < workers; ++i) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  std::sort(rep.records.begin(), rep.records.end(), record_less);
  rep.seconds = cfg.timing ? std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() : 0.0;
  return rep;
}

// ---------------------------------------------------------------------------
// Statistics

/// Sample quantile with linear interpolation between order statistics.
inline double quantile(std::vector<double> v, double p) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double h = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Right-continuous empirical CDF: fraction of samples <= x.
inline double empirical_cdf(const std::vector<double>& v, double x) {
  if (v.empty()) return 0.0;
  const auto c = std::count_if(v.begin(), v.end(), [&](double s) { return s <= x; });
  return static_cast<double>(c) / static_cast<double>(v.size());
}

struct CdfPoint {
  double value = 0.0;
  double cdf = 0.0;
};

/// Jump points of the empirical CDF; the last point has cdf 1.
inline std::vector<CdfPoint> cdf_points(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::vector<CdfPoint> out;
  const double n = static_cast<double>(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i + 1 < v.size() && v[i + 1] == v[i]) continue;
    out.push_back({v[i], static_cast<double>(i + 1) / n});
  }
  return out;
}

struct MethodSummary {
  Method method = Method::kTransmitOnly;
  Precoder precoder = Precoder::kMrt;
  long records = 0;
  long usable = 0;
  long infeasible = 0;
  long failed = 0;
  long budget_exceeded = 0;
  double mean_transmit_w = 0.0;
  double mean_radiated_w = 0.0;
  double mean_hardware_w = 0.0;
  double mean_total_w = 0.0;
  double mean_active_aps = 0.0;
  double mean_gap = 0.0;
  double max_gap = 0.0;
  double mean_seconds = 0.0;
  double transmit_p5 = 0.0;   ///< value exceeded on 95% of drops
  double transmit_p50 = 0.0;
  double transmit_p95 = 0.0;
  double total_p5 = 0.0;
  double total_p50 = 0.0;
  double total_p95 = 0.0;
  std::vector<double> transmit, total;
};

struct Summary {
  std::vector<MethodSummary> methods;

  const MethodSummary* find(Method m, Precoder p) const {
    for (const auto& s : methods)
      if (s.method == m && s.precoder == p) return &s;
    return nullptr;
  }
};

/// Per method and precoder statistics over usable records; infeasible drops are counted, not averaged.
inline Summary summarize(const std::vector<Record>& records) {
  std::map<std::pair<int, int>, MethodSummary> acc;
  for (const Record& r : records) {
    MethodSummary& s = acc[{static_cast<int>(r.precoder), static_cast<int>(r.method)}];
    s.method = r.method;
    s.precoder = r.precoder;
    ++s.records;
    if (r.status == "infeasible") ++s.infeasible;
    if (r.failed()) ++s.failed;
    if (!r.usable()) continue;
    ++s.usable;
    if (r.status == "budget_exceeded") ++s.budget_exceeded;
    s.mean_transmit_w += r.transmit_w;
    s.mean_radiated_w += r.radiated_w;
    s.mean_hardware_w += r.hardware_w;
    s.mean_total_w += r.total_w;
    s.mean_active_aps += r.active_aps;
    s.mean_gap += r.gap;
    s.max_gap = std::max(s.max_gap, r.gap);
    s.mean_seconds += r.seconds;
    s.transmit.push_back(r.transmit_w);
    s.total.push_back(r.total_w);
  }
  Summary out;
  for (auto& [key, s] : acc) {
    if (s.usable > 0) {
      const double n = static_cast<double>(s.usable);
      s.mean_transmit_w /= n;
      s.mean_radiated_w /= n;
      s.mean_hardware_w /= n;
      s.mean_total_w /= n;
      s.mean_active_aps /= n;
      s.mean_gap /= n;
      s.mean_seconds /= n;
      s.transmit_p5 = quantile(s.transmit, 0.05);
      s.transmit_p50 = quantile(s.transmit, 0.5);
      s.transmit_p95 = quantile(s.transmit, 0.95);
      s.total_p5 = quantile(s.total, 0.05);
      s.total_p50 = quantile(s.total, 0.5);
      s.total_p95 = quantile(s.total, 0.95);
    }
    out.methods.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Output

inline const char* kRecordsHeader =
    "drop,method,precoder,transmit_w,hardware_w,total_w,active_aps,status,nodes,seconds,radiated_w,solves,gap,feasible";

inline std::string records_csv(const std::vector<Record>& records) {
  std::ostringstream os;
  os << kRecordsHeader << '\n';
  using detail::fmt;
  for (const Record& r : records)
    os << r.drop << ',' << to_string(r.method) << ',' << to_string(r.precoder) << ',' << fmt(r.transmit_w) << ','
       << fmt(r.hardware_w) << ',' << fmt(r.total_w) << ',' << r.active_aps << ',' << r.status << ',' << r.nodes
       << ',' << fmt(r.seconds) << ',' << fmt(r.radiated_w) << ',' << r.solves << ',' << fmt(r.gap) << ','
       << (r.feasible ? 1 : 0) << '\n';
  return os.str();
}

inline std::vector<Record> parse_records_csv(std::istream& is, const std::string& origin = "<records>") {
  std::vector<Record> out;
  std::string line;
  int n = 0;
  if (!std::getline(is, line) || detail::trim(line) != kRecordsHeader)
    throw std::runtime_error(origin + ": missing or unexpected header");
  ++n;
  while (std::getline(is, line)) {
    ++n;
    if (detail::trim(line).empty()) continue;
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) f.push_back(detail::trim(cell));
    if (f.size() != 14) throw std::runtime_error(origin + ":" + std::to_string(n) + ": expected 14 fields");
    try {
      Record r;
      r.drop = std::stol(f[0]);
      r.method = parse_method(f[1]);
      r.precoder = parse_precoder(f[2]);
      r.transmit_w = std::stod(f[3]);
      r.hardware_w = std::stod(f[4]);
      r.total_w = std::stod(f[5]);
      r.active_aps = std::stoi(f[6]);
      r.status = f[7];
      r.nodes = std::stol(f[8]);
      r.seconds = std::stod(f[9]);
      r.radiated_w = std::stod(f[10]);
      r.solves = std::stol(f[11]);
      r.gap = std::stod(f[12]);
      r.feasible = f[13] == "1";
      out.push_back(r);
    } catch (const std::exception& e) {
      throw std::runtime_error(origin + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<Record> load_records_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  return parse_records_csv(f, path.string());
}

/// Long-format CDF table: method,precoder,metric,value,cdf.
inline std::string cdf_csv(const Summary& s) {
  std::ostringstream os;
  os << "method,precoder,metric,value,cdf\n";
  for (const auto& m : s.methods) {
    for (const auto& [name, data] : {std::pair{"transmit_w", &m.transmit}, std::pair{"total_w", &m.total}})
      for (const CdfPoint& p : cdf_points(*data))
        os << to_string(m.method) << ',' << to_string(m.precoder) << ',' << name << ',' << detail::fmt(p.value)
           << ',' << detail::fmt(p.cdf) << '\n';
  }
  return os.str();
}

inline std::string summary_csv(const Summary& s) {
  std::ostringstream os;
  os << "method,precoder,records,usable,infeasible,failed,budget_exceeded,mean_transmit_w,mean_radiated_w,"
        "mean_hardware_w,mean_total_w,mean_active_aps,transmit_p5,transmit_p50,transmit_p95,total_p5,total_p50,"
        "total_p95,mean_gap,max_gap,mean_seconds,saving_vs_transmit_only\n";
  using detail::fmt;
  for (const auto& m : s.methods) {
    const MethodSummary* base = s.find(Method::kTransmitOnly, m.precoder);
    const double saving =
        base && base->usable > 0 && m.usable > 0 ? 1.0 - m.mean_total_w / base->mean_total_w : std::nan("");
    os << to_string(m.method) << ',' << to_string(m.precoder) << ',' << m.records << ',' << m.usable << ','
       << m.infeasible << ',' << m.failed << ',' << m.budget_exceeded << ',' << fmt(m.mean_transmit_w) << ','
       << fmt(m.mean_radiated_w) << ',' << fmt(m.mean_hardware_w) << ',' << fmt(m.mean_total_w) << ','
       << fmt(m.mean_active_aps) << ',' << fmt(m.transmit_p5) << ',' << fmt(m.transmit_p50) << ','
       << fmt(m.transmit_p95) << ',' << fmt(m.total_p5) << ',' << fmt(m.total_p50) << ',' << fmt(m.total_p95)
       << ',' << fmt(m.mean_gap) << ',' << fmt(m.max_gap) << ',' << fmt(m.mean_seconds) << ',' << fmt(saving)
       << '\n';
  }
  return os.str();
}

/// Gnuplot script drawing one CDF panel per metric from cdf.csv.
inline std::string gnuplot_script(const Summary& s) {
  std::ostringstream os;
  os << "set datafile separator ','\nset key bottom right\nset ylabel 'CDF'\nset grid\n"
        "set terminal pngcairo size 900,600\n";
  for (const char* metric : {"transmit_w", "total_w"}) {
    os << "set output '" << metric << "_cdf.png'\n";
    os << "set xlabel '" << (std::string(metric) == "total_w" ? "Total power [W]" : "Total transmit power [W]")
       << "'\n";
    os << "plot ";
    bool first = true;
    for (const auto& m : s.methods) {
      if (!first) os << ", \\\n     ";
      first = false;
      os << "'cdf.csv' using ((strcol(1) eq '" << to_string(m.method) << "' && strcol(2) eq '"
         << to_string(m.precoder) << "' && strcol(3) eq '" << metric << "') ? $4 : 1/0):5 with steps title '"
         << to_string(m.method) << ' ' << to_string(m.precoder) << "'";
    }
    if (first) os << "NaN notitle";
    os << '\n';
  }
  return os.str();
}

namespace detail {

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + p.string() + " for writing");
  f << content;
  f.flush();
  if (!f) throw std::runtime_error("write failed for " + p.string());
}

}  // namespace detail

/// Writes config.txt, records.csv, summary.csv, cdf.csv and plot_cdf.gp into `dir`.
inline void emit(const RunReport& rep, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
  const Summary s = summarize(rep.records);
  detail::write_file(dir / "config.txt", rep.config.to_text());
  detail::write_file(dir / "records.csv", records_csv(rep.records));
  detail::write_file(dir / "summary.csv", summary_csv(s));
  detail::write_file(dir / "cdf.csv", cdf_csv(s));
  detail::write_file(dir / "plot_cdf.gp", gnuplot_script(s));
}

struct Comparison {
  Method method;
  Precoder precoder;
  long paired_drops = 0;
  double mean_total_base = 0.0;
  double mean_total_other = 0.0;
  double saving = 0.0;          ///< 1 - mean_other / mean_base
  double mean_paired_saving = 0.0;
};

/// Relative total-power savings of `other` over `base`, paired by (drop, method, precoder).
inline std::vector<Comparison> compare(const std::vector<Record>& base, const std::vector<Record>& other) {
  std::map<std::tuple<int, int, long>, const Record*> idx;
  for (const Record& r : base)
    if (r.usable()) idx[{static_cast<int>(r.precoder), static_cast<int>(r.method), r.drop}] = &r;
  std::map<std::pair<int, int>, Comparison> acc;
  for (const Record& r : other) {
    if (!r.usable()) continue;
    auto it = idx.find({static_cast<int>(r.precoder), static_cast<int>(r.method), r.drop});
    if (it == idx.end()) continue;
    Comparison& c = acc.try_emplace({static_cast<int>(r.precoder), static_cast<int>(r.method)},
                                    Comparison{r.method, r.precoder})
                        .first->second;
    ++c.paired_drops;
    c.mean_total_base += it->second->total_w;
    c.mean_total_other += r.total_w;
    c.mean_paired_saving += 1.0 - r.total_w / it->second->total_w;
  }
  std::vector<Comparison> out;
  for (auto& [k, c] : acc) {
    const double n = static_cast<double>(c.paired_drops);
    c.mean_total_base /= n;
    c.mean_total_other /= n;
    c.mean_paired_saving /= n;
    c.saving = 1.0 - c.mean_total_other / c.mean_total_base;
    out.push_back(c);
  }
  return out;
}

inline std::string comparison_csv(const std::vector<Comparison>& cs) {
  std::ostringstream os;
  os << "method,precoder,paired_drops,mean_total_base_w,mean_total_other_w,saving,mean_paired_saving\n";
  for (const auto& c : cs)
    os << to_string(c.method) << ',' << to_string(c.precoder) << ',' << c.paired_drops << ','
       << detail::fmt(c.mean_total_base) << ',' << detail::fmt(c.mean_total_other) << ',' << detail::fmt(c.saving)
       << ',' << detail::fmt(c.mean_paired_saving) << '\n';
  return os.str();
}

}  // namespace cellfree::harness
