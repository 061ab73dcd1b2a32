#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cellfree/harness.hpp"

using namespace cellfree;
using namespace cellfree::harness;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.M = 6;
  c.K = 3;
  c.antennas = 8;
  c.tau_p = 2;
  c.side_length = 300;
  c.drops = 3;
  c.seed = 11;
  c.methods = {Method::kTransmitOnly, Method::kAlgorithm1, Method::kAlgorithm2, Method::kDisjoint, Method::kBnb};
  c.precoders = {Precoder::kMrt, Precoder::kFzf};
  c.timing = false;
  c.threads = 1;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

Record rec(long drop, Method m, double total, const std::string& status = "ok") {
  Record r;
  r.drop = drop;
  r.method = m;
  r.total_w = total;
  r.transmit_w = total / 10;
  r.hardware_w = total - r.transmit_w;
  r.status = status;
  r.feasible = status != "infeasible";
  return r;
}

}  // namespace

TEST(Config, ParsesKeyValueText) {
  std::istringstream is(
      "# experiment\n"
      "M = 12   # APs\n"
      "  K=4\n"
      "\n"
      "methods = transmit_only, alg2\n"
      "precoders = FZF\n"
      "timing = false\n"
      "se_mode = uniform\n");
  const ExperimentConfig c = parse_config(is);
  EXPECT_EQ(c.M, 12);
  EXPECT_EQ(c.K, 4);
  EXPECT_EQ(c.methods, (std::vector<Method>{Method::kTransmitOnly, Method::kAlgorithm2}));
  EXPECT_EQ(c.precoders, std::vector<Precoder>{Precoder::kFzf});
  EXPECT_FALSE(c.timing);
  EXPECT_EQ(c.se_mode, "uniform");
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, TextRoundTrip) {
  ExperimentConfig c = small_config();
  c.bnb_relaxation = "perspective";
  c.irls_epsilon = 3.5e-4;
  std::istringstream is(c.to_text());
  EXPECT_EQ(parse_config(is).to_text(), c.to_text());
}

TEST(Config, ErrorsNameTheLine) {
  std::istringstream a("M = 4\nbogus = 1\n");
  try {
    parse_config(a, "exp.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("exp.cfg:2"), std::string::npos);
  }
  std::istringstream b("M = four\n");
  EXPECT_THROW(parse_config(b), ConfigError);
  std::istringstream c("just text\n");
  EXPECT_THROW(parse_config(c), ConfigError);
  std::istringstream d("methods = alg3\n");
  EXPECT_THROW(parse_config(d), ConfigError);
}

TEST(Config, ValidationRejectsInconsistentSettings) {
  auto invalid = [](const std::string& kv) {
    ExperimentConfig c;
    c.apply_override(kv);
    EXPECT_THROW(c.validate(), ConfigError) << kv;
  };
  invalid("tau_p=200");
  invalid("M=0");
  invalid("M=64");
  invalid("delta=0.5");
  invalid("drops=-1");
  invalid("se_mode=random");
  invalid("bnb_relaxation=linear");
  invalid("theta_channel=alpha");
  invalid("irls_p_tilde=2");
  ExperimentConfig fzf;
  fzf.apply_override("precoders=FZF");
  fzf.apply_override("antennas=5");
  EXPECT_THROW(fzf.validate(), ConfigError);
  EXPECT_THROW(fzf.apply_override("antennas"), ConfigError);
}

TEST(Config, UniformRequirementsAreReproducible) {
  ExperimentConfig c;
  c.se_mode = "uniform";
  const Eigen::VectorXd a = c.requirements(3), b = c.requirements(3), other = c.requirements(4);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == other);
  EXPECT_GE(a.minCoeff(), c.se_min);
  EXPECT_LE(a.maxCoeff(), c.se_max);
}

TEST(Run, ZeroDropsGivesEmptyReport) {
  ExperimentConfig c = small_config();
  c.drops = 0;
  const RunReport r = run_experiment(c);
  EXPECT_TRUE(r.records.empty());
  EXPECT_EQ(r.failures(), 0);
  EXPECT_TRUE(summarize(r.records).methods.empty());
  EXPECT_EQ(records_csv(r.records), std::string(kRecordsHeader) + "\n");
}

TEST(Run, RecordsCoverEveryDropMethodAndPrecoder) {
  const ExperimentConfig c = small_config();
  const RunReport r = run_experiment(c);
  ASSERT_EQ(r.records.size(), 3u * 5u * 2u);
  EXPECT_TRUE(std::is_sorted(r.records.begin(), r.records.end(), record_less));
  EXPECT_EQ(r.failures(), 0);
  for (const Record& x : r.records) {
    if (!x.usable()) {
      EXPECT_EQ(x.status, "infeasible");
      continue;
    }
    EXPECT_DOUBLE_EQ(x.total_w, x.transmit_w + x.hardware_w);
    EXPECT_NEAR(x.hardware_w, x.active_aps * (8 * 0.2 + 0.825 + 20e6 * 3 * 2.0 * 0.25e-9), 1e-9);
    EXPECT_LE(x.radiated_w * c.delta, x.transmit_w * (1 + 1e-12));
    EXPECT_EQ(x.seconds, 0.0);
  }
  // Within a drop, BnB is never beaten by a heuristic.
  for (const Record& b : r.records) {
    if (b.method != Method::kBnb || !b.usable() || b.status != "optimal") continue;
    for (const Record& h : r.records) {
      if (h.drop == b.drop && h.precoder == b.precoder && h.usable()) {
        EXPECT_GE(h.total_w, b.total_w * (1 - 1e-6)) << to_string(h.method);
      }
    }
  }
}

TEST(Run, DeterministicAcrossThreadCounts) {
  ExperimentConfig c = small_config();
  c.methods = {Method::kTransmitOnly, Method::kAlgorithm2};
  c.drops = 6;
  const RunReport a = run_experiment(c);
  c.threads = 3;
  const RunReport b = run_experiment(c);
  EXPECT_EQ(records_csv(a.records), records_csv(b.records));
}

TEST(Run, EmittedReportsAreByteIdentical) {
  const ExperimentConfig c = small_config();
  const auto base = std::filesystem::temp_directory_path() / ("cellfree_emit_" + std::to_string(::getpid()));
  emit(run_experiment(c), base / "a");
  emit(run_experiment(c), base / "b");
  for (const char* f : {"config.txt", "records.csv", "summary.csv", "cdf.csv", "plot_cdf.gp"}) {
    const std::string x = slurp(base / "a" / f);
    EXPECT_FALSE(x.empty()) << f;
    EXPECT_EQ(x, slurp(base / "b" / f)) << f;
  }
  std::filesystem::remove_all(base);
}

TEST(Run, RecheckCatchesUnderpoweredAllocations) {
  const ExperimentConfig c = small_config();
  const NetworkRealization net = generate_drop(c.drop_params(), c.seed, 0);
  const ProblemInstance in = make_instance(net.stats, net.pilots, Precoder::kMrt, c.power_model(), c.requirements(0));
  const SolvedProgram sp = solve_formulation(in, build_transmit_only(in));
  ASSERT_TRUE(sp.ok());
  EXPECT_TRUE(recheck(in, sp.allocation));
  Allocation low = sp.allocation;
  low.q *= 0.99;
  EXPECT_FALSE(recheck(in, low));
  Allocation neg = sp.allocation;
  neg.q(neg.active.front(), 0) = -neg.q(neg.active.front(), 0);
  EXPECT_FALSE(recheck(in, neg));
  Allocation hot = sp.allocation;
  hot.q.row(0).setConstant(1.0);
  EXPECT_FALSE(recheck(in, hot));
}

TEST(Records, CsvRoundTrip) {
  const RunReport r = run_experiment(small_config());
  const std::string text = records_csv(r.records);
  std::istringstream is(text);
  EXPECT_EQ(records_csv(parse_records_csv(is)), text);
  std::istringstream bad("drop,method\n");
  EXPECT_THROW(parse_records_csv(bad), std::runtime_error);
}

TEST(Stats, QuantileAndCdf) {
  const std::vector<double> v{4, 1, 3, 2};
  EXPECT_DOUBLE_EQ(quantile(v, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile(v, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(quantile(v, 1.0), 4.0);
  EXPECT_DOUBLE_EQ(empirical_cdf(v, 2.5), 0.5);
  EXPECT_DOUBLE_EQ(empirical_cdf(v, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(empirical_cdf(v, 4.0), 1.0);
  const std::vector<CdfPoint> pts = cdf_points({2, 1, 2, 3});
  ASSERT_EQ(pts.size(), 3u);
  EXPECT_DOUBLE_EQ(pts[1].value, 2.0);
  EXPECT_DOUBLE_EQ(pts[1].cdf, 0.75);
  EXPECT_DOUBLE_EQ(pts.back().cdf, 1.0);
  EXPECT_TRUE(std::isnan(quantile({}, 0.5)));
}

TEST(Stats, SummaryCountsButDoesNotAverageInfeasibleDrops) {
  std::vector<Record> rs{rec(0, Method::kTransmitOnly, 100), rec(1, Method::kTransmitOnly, 110),
                         rec(2, Method::kTransmitOnly, 0, "infeasible"), rec(0, Method::kBnb, 50, "budget_exceeded"),
                         rec(1, Method::kBnb, 60, "optimal"), rec(2, Method::kBnb, 0, "failed")};
  rs[5].feasible = false;
  const Summary s = summarize(rs);
  const MethodSummary* t = s.find(Method::kTransmitOnly, Precoder::kMrt);
  ASSERT_NE(t, nullptr);
  EXPECT_EQ(t->records, 3);
  EXPECT_EQ(t->usable, 2);
  EXPECT_EQ(t->infeasible, 1);
  EXPECT_EQ(t->failed, 0);
  EXPECT_DOUBLE_EQ(t->mean_total_w, 105.0);
  const MethodSummary* b = s.find(Method::kBnb, Precoder::kMrt);
  ASSERT_NE(b, nullptr);
  EXPECT_EQ(b->usable, 2);
  EXPECT_EQ(b->budget_exceeded, 1);
  EXPECT_EQ(b->failed, 1);
  EXPECT_DOUBLE_EQ(b->mean_total_w, 55.0);
  EXPECT_NE(summary_csv(s).find(",0.476190476\n"), std::string::npos) << summary_csv(s);
}

TEST(Stats, CompareSavings) {
  const std::vector<Record> base{rec(0, Method::kAlgorithm1, 100), rec(1, Method::kAlgorithm1, 50),
                                 rec(2, Method::kAlgorithm1, 80)};
  const std::vector<Record> other{rec(0, Method::kAlgorithm1, 90), rec(1, Method::kAlgorithm1, 25),
                                  rec(3, Method::kAlgorithm1, 10)};
  const std::vector<Comparison> cs = compare(base, other);
  ASSERT_EQ(cs.size(), 1u);
  EXPECT_EQ(cs[0].paired_drops, 2);
  EXPECT_DOUBLE_EQ(cs[0].mean_total_base, 75.0);
  EXPECT_DOUBLE_EQ(cs[0].mean_total_other, 57.5);
  EXPECT_DOUBLE_EQ(cs[0].mean_paired_saving, (0.1 + 0.5) / 2);
  EXPECT_TRUE(compare(base, {}).empty());
}
