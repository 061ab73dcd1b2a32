// Batch driver: run experiments, summarize record files, compare two runs.
//
//   cellfree run --config exp.cfg --out results/ --drops=50 --methods=transmit_only,alg1
//   cellfree summarize results/records.csv --out results/cdf.csv
//   cellfree compare base/records.csv other/records.csv
//
// Exit codes: 0 success, 2 configuration error, 3 some method failed on some drop,
// 1 anything else (I/O, internal errors).

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "cellfree/harness.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitPartial = 3;

void write_or_print(const std::string& path, const std::string& content) {
  if (path.empty() || path == "-") {
    std::cout << content;
    return;
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << content;
}

}  // namespace

int main(int argc, char** argv) {
  namespace h = cellfree::harness;
  CLI::App app{"Cell-free massive MIMO AP switch-off experiments"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "results";
  std::vector<std::string> sets;
  bool quiet = false;
  CLI::App* run = app.add_subcommand("run", "Run a Monte Carlo experiment");
  run->add_option("-c,--config", config_path, "Key-value configuration file");
  run->add_option("-o,--out", out_dir, "Output directory");
  run->add_option("-s,--set", sets, "Override as key=value (repeatable)");
  run->add_flag("-q,--quiet", quiet, "No progress output");
  run->allow_extras();
  run->footer("Any configuration key can also be given as --key=value.");

  std::string records_path, cdf_out;
  CLI::App* summ = app.add_subcommand("summarize", "Records CSV to CDF and summary tables");
  summ->add_option("records", records_path, "records.csv")->required();
  summ->add_option("-o,--out", cdf_out, "CDF CSV output (default stdout)");
  std::string summary_out;
  summ->add_option("--summary", summary_out, "Also write the per-method summary table here");

  std::string base_path, other_path, cmp_out;
  CLI::App* cmp = app.add_subcommand("compare", "Relative total-power savings of one run over another");
  cmp->add_option("base", base_path, "Baseline records.csv")->required();
  cmp->add_option("other", other_path, "Records to compare")->required();
  cmp->add_option("-o,--out", cmp_out, "Output CSV (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*run) {
      h::ExperimentConfig cfg;
      try {
        if (!config_path.empty()) cfg = h::load_config(config_path);
        for (const auto& kv : sets) cfg.apply_override(kv);
        for (const auto& extra : run->remaining()) {
          if (extra.rfind("--", 0) != 0) throw h::ConfigError("unexpected argument '" + extra + "'");
          cfg.apply_override(extra.substr(2));
        }
        cfg.validate();
      } catch (const h::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
      }
      auto progress = [&](long done, long total) {
        if (!quiet) std::fprintf(stderr, "\rdrop %ld/%ld", done, total);
      };
      const h::RunReport rep = h::run_experiment(cfg, progress);
      if (!quiet && cfg.drops > 0) std::fputc('\n', stderr);
      h::emit(rep, out_dir);
      const h::Summary s = h::summarize(rep.records);
      if (!quiet) std::cout << h::summary_csv(s);
      const long failures = rep.failures();
      if (failures > 0) {
        std::cerr << failures << " method run(s) failed; see status column in " << out_dir << "/records.csv\n";
        return kExitPartial;
      }
      return 0;
    }
    if (*summ) {
      const h::Summary s = h::summarize(h::load_records_csv(records_path));
      write_or_print(cdf_out, h::cdf_csv(s));
      if (!summary_out.empty()) write_or_print(summary_out, h::summary_csv(s));
      return 0;
    }
    if (*cmp) {
      const auto cs = h::compare(h::load_records_csv(base_path), h::load_records_csv(other_path));
      write_or_print(cmp_out, h::comparison_csv(cs));
      return 0;
    }
  } catch (const h::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
