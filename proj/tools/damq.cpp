// damq: train, fine-tune, filter and report on antioxidant optimization runs.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "damq/pipeline.hpp"
#include "damq/reward.hpp"
#include "damq/smiles.hpp"

namespace fs = std::filesystem;
using namespace damq;

namespace {

// Config sources, lowest precedence first: preset, --config file, --mode,
// --set, DAMQ_SEED, then the dedicated flags.
struct ConfigFlags {
  std::string file;
  std::string mode;
  std::vector<std::string> sets;

  void add(CLI::App* app) {
    app->add_option("-c,--config", file, "key = value config file")->check(CLI::ExistingFile);
    app->add_option("--mode", mode, "preset: individual, parallel, general, fine_tune");
    app->add_option("--set", sets, "override one key, e.g. --set lr=0.001 (repeatable)");
  }

  RunConfig build() const {
    std::string text;
    if (!file.empty()) {
      std::ifstream in(file);
      std::stringstream ss;
      ss << in.rdbuf();
      text = ss.str() + "\n";
    }
    if (!mode.empty()) text += "mode = " + mode + "\n";
    for (const auto& s : sets) {
      if (s.find('=') == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      text += s + "\n";
    }
    RunConfig cfg = parse_config(text);
    apply_env_overrides(cfg);
    return cfg;
  }
};

std::string fmt(double v) { return format_double(v); }
std::string fmt(const std::optional<double>& v) { return v ? format_double(*v) : std::string("none"); }

int print_report(const RunReport& r) {
  const RunResult& res = r.result;
  double sum = 0.0;
  int found = 0;
  for (const auto& b : res.best) {
    if (!b.found) continue;
    sum += b.reward;
    ++found;
  }
  std::printf("status: %s\n", r.ok() ? "ok" : "failed");
  if (!r.ok()) std::printf("error: %s\n", res.error.c_str());
  std::printf("episodes: %d of %d\n", res.episodes_completed, r.config.episodes);
  std::printf("molecules: %zu (valid best: %d)\n", res.best.size(), found);
  if (found) std::printf("mean best reward: %s\n", fmt(sum / found).c_str());
  std::printf("params checksum: %016llx\n", static_cast<unsigned long long>(params_checksum(res.params)));
  std::printf("seconds: %.2f\n", r.seconds);
  if (!r.config.output_dir.empty()) std::printf("output: %s\n", r.config.output_dir.c_str());
  return r.ok() ? 0 : 1;
}

int cmd_train(const ConfigFlags& cf, const std::string& dataset, const std::string& out, int episodes, int workers,
              int molecules, int batch, const std::string& seed, const std::string& coordinator,
              const std::string& predictor, const std::string& init) {
  RunConfig cfg = cf.build();
  if (!dataset.empty()) cfg.dataset = dataset;
  if (!out.empty()) cfg.output_dir = out;
  if (episodes >= 0) cfg.episodes = episodes;
  if (workers > 0) cfg.workers = workers;
  if (molecules >= 0) cfg.molecules = molecules;
  if (batch > 0) cfg.modification_batch = batch;
  if (!seed.empty()) apply_setting(cfg, "seed", seed);
  if (!coordinator.empty()) cfg.coordinator = coordinator;
  if (!predictor.empty()) cfg.predictor = predictor;
  if (!init.empty()) cfg.init_checkpoint = init;
  if (cfg.dataset.empty()) throw ConfigError("no dataset: pass --dataset or set dataset in the config");
  return print_report(run_training(cfg));
}

int cmd_finetune(const ConfigFlags& cf, const std::string& run_dir, std::string checkpoint,
                 std::vector<std::string> molecules, bool all, const std::string& out, int episodes,
                 const std::string& seed) {
  RunConfig base;
  if (!run_dir.empty()) {
    // The run's own configuration, with --set on top.
    std::ifstream in(fs::path(run_dir) / kConfigFile);
    if (!in) throw ConfigError("no " + std::string(kConfigFile) + " in " + run_dir);
    std::stringstream ss;
    ss << in.rdbuf();
    RunConfig general = parse_config(ss.str());
    for (const auto& s : cf.sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      apply_setting(general, s.substr(0, eq), s.substr(eq + 1));
    }
    apply_env_overrides(general);
    base = general;
    if (checkpoint.empty()) checkpoint = (fs::path(run_dir) / kCheckpointFile).string();
    if (all) {
      for (const auto& b : read_results_csv((fs::path(run_dir) / kBestFile).string())) {
        molecules.push_back(b.initial_smiles);
      }
    }
  } else {
    base = cf.build();
  }
  if (checkpoint.empty()) throw ConfigError("no checkpoint: pass --run or --checkpoint");
  if (molecules.empty()) throw ConfigError("no molecules: pass --molecule or --all");
  RunConfig cfg = fine_tune_config(base);
  if (episodes >= 0) cfg.episodes = episodes;
  if (!seed.empty()) apply_setting(cfg, "seed", seed);
  const ModelParams start = load_checkpoint(checkpoint);
  int status = 0;
  for (std::size_t i = 0; i < molecules.size(); ++i) {
    RunConfig c = cfg;
    c.output_dir = out.empty() ? std::string() : (fs::path(out) / ("mol_" + std::to_string(i))).string();
    std::printf("== %s\n", molecules[i].c_str());
    const RunReport r = fine_tune(start, parse_smiles(molecules[i]), c);
    if (!r.result.best.empty() && r.result.best[0].found) {
      const auto& b = r.result.best[0];
      std::printf("best: %s reward %s bde %s ip %s\n", b.smiles.c_str(), fmt(b.reward).c_str(), fmt(b.props.bde).c_str(),
                  fmt(b.props.ip).c_str());
    }
    status |= print_report(r);
  }
  return status;
}

int cmd_filter(const std::vector<std::string>& results, const std::string& dataset, const FilterCriteria& crit,
               const std::string& out) {
  std::vector<FilterCandidate> cands;
  std::vector<std::string> known;
  for (const auto& path : results) {
    for (const auto& r : read_results_csv(path)) {
      if (dataset.empty()) known.push_back(r.initial_smiles);
      if (r.found) cands.push_back({r.smiles, r.props});
    }
  }
  if (!dataset.empty()) {
    for (const auto& m : load_dataset(dataset).molecules) known.push_back(write_smiles(m).str());
  }
  const FilterResult f = apply_filter(cands, known, crit);
  std::map<std::string, int> reasons;
  for (const auto& d : f.rejected) {
    for (const auto& r : d.reasons) reasons[r] += 1;
  }
  std::printf("candidates: %zu accepted: %zu rejected: %zu\n", cands.size(), f.accepted.size(), f.rejected.size());
  for (const auto& [r, n] : reasons) std::printf("  %s: %d\n", r.c_str(), n);
  std::string csv = "smiles,bde,ip,valid3d,sa\n";
  for (const auto& a : f.accepted) {
    csv += a.smiles + ',' + (a.props.bde ? fmt(*a.props.bde) : std::string()) + ',' + fmt(a.props.ip) + ',' +
           (a.props.valid3d ? "1" : "0") + ',' + fmt(a.props.sa) + '\n';
  }
  if (out.empty()) {
    std::fputs(csv.c_str(), stdout);
  } else {
    std::ofstream(out, std::ios::binary) << csv;
  }
  return 0;
}

int cmd_report(const std::vector<std::string>& runs, const std::string& out, int bins, const FilterCriteria& crit) {
  const ReportSummary s = write_report(runs, out, crit, bins);
  std::printf("runs: %d molecules: %d\n", s.runs, s.molecules);
  std::printf("OFR (best visited): %s (%ld successes)\n", fmt(s.ofr_best).c_str(), s.successes_best);
  std::printf("OFR (endpoint): %s (%ld successes)\n", fmt(s.ofr_endpoint).c_str(), s.successes_endpoint);
  std::printf("accepted by filter: %d\n", s.accepted);
  for (const auto& f : s.files) std::printf("wrote %s\n", (fs::path(out) / f).string().c_str());
  return 0;
}

int cmd_predict(const std::vector<std::string>& smiles, const std::string& spec, int timeout_ms,
                const std::string& initial, int steps_remaining) {
  auto backend = make_backend(spec, {std::chrono::milliseconds(timeout_ms)});
  std::vector<MolGraph> mols;
  for (const auto& s : smiles) mols.push_back(parse_smiles(s));
  std::vector<const MolGraph*> ptrs;
  for (const auto& m : mols) ptrs.push_back(&m);
  const auto props = predict(ptrs, *backend, nullptr);
  const std::optional<MolGraph> init = initial.empty() ? std::nullopt : std::optional<MolGraph>(parse_smiles(initial));
  std::printf("smiles\tbde\tip\tvalid3d\tsa%s\n", init ? "\treward" : "");
  for (std::size_t i = 0; i < mols.size(); ++i) {
    std::printf("%s\t%s\t%s\t%d\t%s", write_smiles(mols[i]).str().c_str(), fmt(props[i].bde).c_str(),
                fmt(props[i].ip).c_str(), props[i].valid3d ? 1 : 0, fmt(props[i].sa).c_str());
    if (init) std::printf("\t%s", fmt(reward(props[i], *init, mols[i], steps_remaining, RewardConfig{})).c_str());
    std::printf("\n");
  }
  return 0;
}

int cmd_bench(int min_atoms, int molecules, std::uint64_t seed, long requests, int distinct) {
  const FingerprintBench fb = bench_fingerprint(min_atoms, molecules, seed);
  std::printf("fingerprint: %d molecules, mean %.1f atoms, %d single-atom edits\n", fb.molecules, fb.mean_atoms, fb.edits);
  std::printf("  full recompute: %.0f ns/edit\n", fb.full_ns);
  std::printf("  incremental:    %.0f ns/edit\n", fb.incremental_ns);
  std::printf("  ratio: %.2fx\n", fb.ratio());
  const CacheBench cb = bench_cache(requests, distinct, seed);
  std::printf("cache: %ld requests, %ld distinct, %ld backend calls\n", cb.requests, cb.distinct, cb.backend_calls);
  std::printf("  cached: %.1f ms  uncached: %.1f ms\n", cb.cached_ms, cb.uncached_ms);
  return 0;
}

void add_criteria(CLI::App* app, FilterCriteria& crit) {
  app->add_option("--bde-max", crit.bde_max, "accept BDE below this (kcal/mol)")->capture_default_str();
  app->add_option("--ip-min", crit.ip_min, "accept IP above this (kcal/mol)")->capture_default_str();
  app->add_option("--sa-max", crit.sa_max, "accept SA up to this")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributed deep Q-learning for antioxidant molecule optimization"};
  app.require_subcommand(1);

  ConfigFlags train_cfg;
  std::string dataset, out, seed, coordinator, predictor, init;
  int episodes = -1, workers = 0, molecules = -1, batch = 0;
  auto* train = app.add_subcommand("train", "train a model on a dataset");
  train_cfg.add(train);
  train->add_option("-d,--dataset", dataset, "SMILES file, one molecule per line");
  train->add_option("-o,--out", out, "output directory");
  train->add_option("--episodes", episodes);
  train->add_option("--workers", workers);
  train->add_option("--molecules", molecules, "initial molecules taken from the dataset (0 = all)");
  train->add_option("--batch", batch, "molecules per worker");
  train->add_option("--seed", seed);
  train->add_option("--coordinator", coordinator, "host:port; workers connect with 'damq worker'");
  train->add_option("--predictor", predictor, "surrogate, exec:<command> or tcp:<host:port>");
  train->add_option("--init", init, "start from this checkpoint");

  ConfigFlags ft_cfg;
  std::string ft_run, ft_checkpoint, ft_out, ft_seed;
  std::vector<std::string> ft_mols;
  bool ft_all = false;
  int ft_episodes = -1;
  auto* finetune = app.add_subcommand("finetune", "continue a trained model on single molecules");
  ft_cfg.add(finetune);
  finetune->add_option("--run", ft_run, "directory of a finished training run")->check(CLI::ExistingDirectory);
  finetune->add_option("--checkpoint", ft_checkpoint, "model file (default: the run's)");
  finetune->add_option("-m,--molecule", ft_mols, "SMILES to fine-tune on (repeatable)");
  finetune->add_flag("--all", ft_all, "every initial molecule of the run");
  finetune->add_option("-o,--out", ft_out, "output directory; one subdirectory per molecule");
  finetune->add_option("--episodes", ft_episodes);
  finetune->add_option("--seed", ft_seed);

  std::vector<std::string> filter_results;
  std::string filter_dataset, filter_out;
  FilterCriteria filter_crit;
  bool keep_identical = false;
  auto* filter = app.add_subcommand("filter", "keep result molecules that pass the property thresholds");
  filter->add_option("results", filter_results, "best.csv or endpoint.csv files")->required()->check(CLI::ExistingFile);
  filter->add_option("-d,--dataset", filter_dataset, "known molecules (default: the runs' initial molecules)");
  filter->add_option("-o,--out", filter_out, "CSV of accepted molecules (default: stdout)");
  add_criteria(filter, filter_crit);
  filter->add_flag("--keep-identical", keep_identical, "do not reject molecules already in the dataset");

  std::vector<std::string> report_runs;
  std::string report_out = "damq_report";
  int bins = 20;
  FilterCriteria report_crit;
  auto* report = app.add_subcommand("report", "summary tables and plot data for finished runs");
  report->add_option("runs", report_runs, "run directories")->required()->check(CLI::ExistingDirectory);
  report->add_option("-o,--out", report_out)->capture_default_str();
  report->add_option("--bins", bins, "reward histogram bins")->capture_default_str();
  add_criteria(report, report_crit);

  std::vector<std::string> predict_smiles;
  std::string predict_spec = "surrogate", predict_initial;
  int predict_timeout = 30000, predict_k = 0;
  auto* pred = app.add_subcommand("predict", "query BDE, IP, 3D validity and SA");
  pred->add_option("smiles", predict_smiles)->required();
  pred->add_option("--predictor", predict_spec)->capture_default_str();
  pred->add_option("--timeout-ms", predict_timeout)->capture_default_str();
  pred->add_option("--initial", predict_initial, "also print the reward relative to this molecule");
  pred->add_option("--steps-remaining", predict_k, "for the reward")->capture_default_str();

  int bench_atoms = 30, bench_mols = 20, bench_distinct = 2000;
  long bench_requests = 20000;
  std::uint64_t bench_seed = 1;
  auto* bench = app.add_subcommand("bench", "fingerprint and cache microbenchmarks");
  bench->add_option("--min-atoms", bench_atoms)->capture_default_str();
  bench->add_option("--molecules", bench_mols)->capture_default_str();
  bench->add_option("--seed", bench_seed)->capture_default_str();
  bench->add_option("--cache-requests", bench_requests)->capture_default_str();
  bench->add_option("--cache-distinct", bench_distinct)->capture_default_str();

  std::string worker_coord;
  double connect_s = 60.0;
  auto* worker = app.add_subcommand("worker", "join a training run started with --coordinator");
  worker->add_option("--coordinator", worker_coord, "host:port")->required();
  worker->add_option("--connect-timeout", connect_s, "seconds")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      return cmd_train(train_cfg, dataset, out, episodes, workers, molecules, batch, seed, coordinator, predictor, init);
    }
    if (*finetune) return cmd_finetune(ft_cfg, ft_run, ft_checkpoint, ft_mols, ft_all, ft_out, ft_episodes, ft_seed);
    if (*filter) {
      filter_crit.exclude_identical = !keep_identical;
      return cmd_filter(filter_results, filter_dataset, filter_crit, filter_out);
    }
    if (*report) return cmd_report(report_runs, report_out, bins, report_crit);
    if (*pred) return cmd_predict(predict_smiles, predict_spec, predict_timeout, predict_initial, predict_k);
    if (*bench) return cmd_bench(bench_atoms, bench_mols, bench_seed, bench_requests, bench_distinct);
    if (*worker) {
      run_worker(worker_coord, std::chrono::milliseconds(static_cast<long>(connect_s * 1000)));
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "damq: %s\n", e.what());
    return 1;
  }
  return 0;
}
