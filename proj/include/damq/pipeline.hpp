#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "damq/config.hpp"
#include "damq/distrib.hpp"
#include "damq/predictors.hpp"

namespace damq {

// ---------------------------------------------------------------------------
// Datasets

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class EmptyDataset : public DatasetError {
 public:
  using DatasetError::DatasetError;
};

struct DatasetRejection {
  int line = 0;
  std::string smiles;
  std::string reason;
};

struct Dataset {
  std::vector<MolGraph> molecules;  // canonical atom order
  std::vector<int> lines;           // source line of each molecule
  std::vector<DatasetRejection> rejected;
};

// One SMILES per line; '#' starts a comment; blank lines are skipped.
// Unparsable lines throw DatasetError naming the line. Molecules without an
// O-H bond are rejected (strict: NoOhBond is thrown) with their line number.
// Throws EmptyDataset when nothing is left.
Dataset parse_dataset(const std::string& text, const std::string& source = "<input>", bool strict = false);
Dataset load_dataset(const std::string& path, bool strict = false);

// Min and max predicted BDE and IP over the molecules. Returns nothing when
// either range is empty or degenerate.
std::optional<std::pair<Bounds, Bounds>> dataset_bounds(const std::vector<MolGraph>& molecules,
                                                        PredictorBackend& backend, PredictorCache* cache);

// DAMQ_SEED, when set, replaces cfg.seed.
void apply_env_overrides(RunConfig& cfg);

// ---------------------------------------------------------------------------
// Runs

struct RunReport {
  RunConfig config;   // as run: seed and reward bounds resolved
  RunResult result;
  double seconds = 0.0;
  bool ok() const { return result.error.empty(); }
};

// Files written to the output directory.
inline constexpr const char* kMetricsFile = "metrics.csv";
inline constexpr const char* kCheckpointFile = "model.damq";
inline constexpr const char* kBestFile = "best.csv";
inline constexpr const char* kEndpointFile = "endpoint.csv";
inline constexpr const char* kConfigFile = "config.txt";
inline constexpr const char* kSummaryFile = "summary.txt";

// Loads cfg.dataset (first cfg.molecules entries), resolves reward bounds,
// trains, and writes the run artifacts to cfg.output_dir (none when it is
// empty). Artifacts are written even when the run fails part way.
RunReport run_training(RunConfig cfg, const RunOptions& options = {});
// Same on an in-memory dataset.
RunReport run_training(RunConfig cfg, const std::vector<MolGraph>& dataset, const RunOptions& options = {});

// The fine-tune schedule applied on top of a trained run's configuration:
// one molecule, one worker, 200 episodes, epsilon 0.5 decaying by 0.961.
RunConfig fine_tune_config(const RunConfig& base);

// Continues training `start` on one molecule with the fine-tune schedule.
RunReport fine_tune(const ModelParams& start, const MolGraph& molecule, RunConfig cfg, const RunOptions& options = {});

void write_metrics_csv(const std::vector<EpisodeRow>& rows, const std::string& path);
std::string metrics_csv(const std::vector<EpisodeRow>& rows);
void write_results_csv(const std::vector<MoleculeResult>& results, const std::string& path);
std::vector<MoleculeResult> read_results_csv(const std::string& path);

// ---------------------------------------------------------------------------
// Filtering and failure rate

struct FilterCriteria {
  double bde_max = 76.0;  // kcal/mol, exclusive
  double ip_min = 145.0;  // kcal/mol, exclusive
  double sa_max = 3.5;    // inclusive
  bool exclude_identical = true;
};

struct FilterCandidate {
  std::string smiles;  // canonical
  PropertyResult props;
};

struct FilterDecision {
  FilterCandidate candidate;
  std::vector<std::string> reasons;  // "bde_max", "ip_min", "sa_max", "invalid3d", "identical"
};

struct FilterResult {
  std::vector<FilterCandidate> accepted;
  std::vector<FilterDecision> rejected;
};

// `known` holds the canonical SMILES of the dataset molecules.
FilterResult apply_filter(const std::vector<FilterCandidate>& candidates, const std::vector<std::string>& known,
                          const FilterCriteria& criteria = {});

// 1 - successes / attempts. Throws std::invalid_argument when attempts is 0
// or successes is out of range.
double compute_ofr(long successes, long attempts);

// Success: BDE below bde_max and IP above ip_min.
bool optimization_success(const PropertyResult& props, const FilterCriteria& criteria = {});

// ---------------------------------------------------------------------------
// Reports

struct ReportSummary {
  int runs = 0;
  int molecules = 0;
  long successes_best = 0, successes_endpoint = 0;
  double ofr_best = 0.0, ofr_endpoint = 0.0;
  int accepted = 0;
  std::vector<std::string> files;
};

// Reads best.csv/endpoint.csv from each run directory and writes
// reward_histogram.csv, ofr.csv, bde_ip.csv (filter-accepted molecules) and
// similarity_sa.csv to out_dir.
ReportSummary write_report(const std::vector<std::string>& run_dirs, const std::string& out_dir,
                           const FilterCriteria& criteria = {}, int bins = 20);

// ---------------------------------------------------------------------------
// Benchmarks

struct FingerprintBench {
  int molecules = 0;
  int edits = 0;
  double mean_atoms = 0.0;
  double full_ns = 0.0;         // per edit, full recompute
  double incremental_ns = 0.0;  // per edit, incremental update
  double ratio() const { return incremental_ns > 0 ? full_ns / incremental_ns : 0.0; }
};

// Grows random molecules to at least min_atoms heavy atoms, then times
// morgan_fp against incremental_fp over every single-atom-addition edit.
FingerprintBench bench_fingerprint(int min_atoms = 30, int molecules = 20, std::uint64_t seed = 1);

// A random molecule grown from phenol by atom additions and ring closures.
MolGraph grow_molecule(int min_atoms, std::mt19937_64& rng);

struct CacheBench {
  long requests = 0;
  long distinct = 0;
  long backend_calls = 0;
  double cached_ms = 0.0;
  double uncached_ms = 0.0;
};

// Replays a trace of `requests` molecules with repeats through the surrogate
// backend with and without the cache.
CacheBench bench_cache(long requests = 20000, int distinct = 2000, std::uint64_t seed = 1);

}  // namespace damq
