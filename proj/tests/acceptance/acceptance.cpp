// Acceptance checks. Prints one PASS/FAIL line per criterion; with arguments,
// runs only the listed criteria. Exit status is non-zero if any check fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "damq/actions.hpp"
#include "damq/agent.hpp"
#include "damq/fingerprint.hpp"
#include "damq/pipeline.hpp"
#include "damq/predictors.hpp"
#include "damq/random.hpp"
#include "damq/reward.hpp"
#include "damq/smiles.hpp"
#include "oracles.hpp"

using namespace damq;
namespace fs = std::filesystem;

namespace {

// Tolerances and sizes.
constexpr int kFpChains = 1000;
constexpr int kFpChainEdits = 5;
constexpr int kFpMaxAtoms = 40;
constexpr int kFpChecksPerEdit = 40;  // candidate successors compared per chain step
constexpr double kFpSeconds = 60.0;
constexpr int kActionMaxAtoms = 5;
constexpr double kActionSeconds = 300.0;
constexpr int kRoundTripGraphs = 10000;
constexpr int kCorpusSize = 100;
constexpr int kCollisionMaxAtoms = 7;
constexpr int kGradNetworks = 20;
constexpr double kGradRelTol = 1e-4;
constexpr int kDetWorkers = 4, kDetBatch = 2, kDetEpisodes = 20;
constexpr int kLearnMolecules = 32, kLearnEpisodes = 250;
constexpr double kLearnMargin = 0.30;
constexpr double kLearnSeconds = 600.0;
constexpr double kOfrExpected = 0.6133, kOfrTol = 5e-5;
constexpr double kBenchMinRatio = 5.0;
constexpr double kEpsilon100 = 0.90479214711370904, kEpsilonTol = 1e-10;

struct Outcome {
  bool pass = true;
  std::string detail;
};

struct Check {
  Outcome& out;
  void require(bool ok, const std::string& what) {
    if (!ok && out.pass) {
      out.pass = false;
      out.detail = what;
    }
  }
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::vector<MolGraph> corpus() {
  return load_dataset(std::string(DAMQ_DATA_DIR) + "/phenolic_corpus.smi", true).molecules;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// 1. Incremental fingerprints equal full recomputes along random edit chains.
Outcome fingerprint_equivalence() {
  Outcome out;
  Check c{out};
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  long long edits = 0;
  int max_seen = 0;
  for (int chain = 0; chain < kFpChains && out.pass; ++chain) {
    MolGraph mol = oracle::random_molecule(
        rng, {.min_atoms = 2, .max_atoms = kFpMaxAtoms, .extra_bond_prob = 0.25, .require_oh = true});
    for (int step = 0; step < kFpChainEdits && out.pass; ++step) {
      const FeatureCache cache = compute_features(mol);
      const ActionSet set = enumerate_actions(mol);
      std::vector<const Action*> keep;
      for (const auto& a : set) {
        if (a.result.atom_count() <= kFpMaxAtoms) keep.push_back(&a);
      }
      if (keep.empty()) break;
      // The edit taken next is always among those compared.
      std::shuffle(keep.begin(), keep.end(), rng);
      for (std::size_t i = 0; i < keep.size() && i < kFpChecksPerEdit; ++i) {
        const Action& a = *keep[i];
        max_seen = std::max(max_seen, a.result.atom_count());
        const bool same = incremental_fp(mol, cache, a) == morgan_fp(a.result);
        c.require(same, "mismatch: " + write_smiles(mol).str() + " -> " + a.smiles.str());
        ++edits;
      }
      mol = keep[0]->result;
    }
  }
  const double s = elapsed(t0);
  c.require(s < kFpSeconds, fmt("too slow: %.1f s", s));
  if (out.pass) {
    out.detail = std::to_string(kFpChains) + " chains, " + std::to_string(edits) +
                 " edits bit-identical, largest molecule " + std::to_string(max_seen) + " atoms";
  }
  return out;
}

// 2. enumerate_actions equals the brute-force edit generator on every molecule
// with up to five heavy atoms.
Outcome action_oracle() {
  Outcome out;
  Check c{out};
  const auto t0 = std::chrono::steady_clock::now();
  const auto all = oracle::enumerate_molecules(kActionMaxAtoms);
  c.require(all.collisions == 0, "canonical collision during enumeration");
  long compared = 0;
  for (const auto& mol : all.molecules) {
    for (bool protect : {false, true}) {
      if (protect && !has_oh_bond(mol)) continue;
      ActionConfig cfg;
      cfg.protect_oh = protect;
      cfg.allow_no_op = false;
      const ActionSet set = enumerate_actions(mol, cfg);
      const auto expected = oracle::brute_force_successors(mol, protect);
      const std::string where = write_smiles(mol).str() + (protect ? " (protected)" : "");
      c.require(set.size() == expected.size(), "size differs for " + where);
      std::vector<bool> used(expected.size(), false);
      for (const auto& a : set) {
        bool found = false;
        for (std::size_t i = 0; i < expected.size() && !found; ++i) {
          if (!used[i] && oracle::isomorphic(a.result, expected[i])) found = used[i] = true;
        }
        c.require(found, "unmatched successor " + a.smiles.str() + " of " + where);
      }
      ++compared;
    }
  }
  const double s = elapsed(t0);
  c.require(s < kActionSeconds, fmt("too slow: %.1f s", s));
  if (out.pass) {
    out.detail = std::to_string(all.molecules.size()) + " molecules, " + std::to_string(compared) +
                 " action sets set-equal (protection on and off)";
  }
  return out;
}

// 3. parse(write(m)) is isomorphic to m; distinct classes never share a
// canonical string and relabelings always do.
Outcome smiles_round_trip() {
  Outcome out;
  Check c{out};
  std::mt19937_64 rng(303);
  for (int i = 0; i < kRoundTripGraphs && out.pass; ++i) {
    const int max_atoms = 1 + static_cast<int>(uniform_index(rng, 30));
    const MolGraph mol = oracle::random_molecule(
        rng, {.min_atoms = 1, .max_atoms = max_atoms, .extra_bond_prob = 0.05 + 0.3 * uniform01(rng)});
    const CanonicalSmiles text = write_smiles(mol);
    const MolGraph back = parse_smiles(text.str());
    c.require(oracle::isomorphic(mol, back), "round trip changed " + text.str());
    c.require(write_smiles(back) == text, "canonical form not stable for " + text.str());
  }
  const auto mols = corpus();
  c.require(static_cast<int>(mols.size()) == kCorpusSize, "corpus size " + std::to_string(mols.size()));
  for (const auto& m : mols) {
    const MolGraph back = parse_smiles(write_smiles(m).str());
    c.require(oracle::isomorphic(m, back), "corpus round trip changed " + write_smiles(m).str());
  }
  const auto all = oracle::enumerate_molecules(kCollisionMaxAtoms);
  c.require(all.collisions == 0, std::to_string(all.collisions) + " canonical collisions");
  std::set<std::string> keys;
  for (const auto& m : all.molecules) {
    const std::string key = write_smiles(m).str();
    keys.insert(key);
    c.require(write_smiles(oracle::random_relabel(m, rng)).str() == key, "relabeling changed " + key);
  }
  c.require(keys.size() == all.molecules.size(), "classes share a canonical string");
  if (out.pass) {
    out.detail = std::to_string(kRoundTripGraphs) + " random graphs and " + std::to_string(mols.size()) +
                 " corpus molecules round-trip; " + std::to_string(all.molecules.size()) +
                 " classes up to 7 atoms, 0 collisions (" + std::to_string(all.duplicates) + " duplicates re-verified)";
  }
  return out;
}

Features random_features(std::mt19937_64& rng, int input) {
  std::set<std::uint16_t> bits;
  const int n = 3 + static_cast<int>(uniform_index(rng, 30));
  while (static_cast<int>(bits.size()) < n) bits.insert(static_cast<std::uint16_t>(uniform_index(rng, input - 1)));
  return {{bits.begin(), bits.end()}, static_cast<double>(uniform_index(rng, 11))};
}

// ReLU on/off pattern of every hidden unit and the Huber branch of every
// sample, from an independent dense forward pass.
std::vector<bool> kink_pattern(const ModelParams& p, const std::vector<const Transition*>& batch,
                               const std::vector<double>& y) {
  std::vector<bool> out;
  for (std::size_t n = 0; n < batch.size(); ++n) {
    Eigen::VectorXd a = Eigen::VectorXd::Zero(p.input_size());
    for (auto b : batch[n]->result.bits) a(b) = 1.0;
    a(p.input_size() - 1) = batch[n]->result.steps_remaining;
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      Eigen::VectorXd z = p.layers[l].w * a + p.layers[l].b;
      if (l + 1 < p.layers.size()) {
        for (Eigen::Index i = 0; i < z.size(); ++i) out.push_back(z(i) > 0.0);
        a = z.cwiseMax(0.0);
      } else {
        out.push_back(std::abs(z(0) - y[n]) <= 1.0);
      }
    }
  }
  return out;
}

// 4. Analytic gradients agree with central differences.
Outcome gradient_check() {
  Outcome out;
  Check c{out};
  std::mt19937_64 rng(404);
  double worst = 0.0;
  std::string worst_at;
  long coords = 0, kinked = 0;
  for (int net = 0; net < kGradNetworks; ++net) {
    const int input = net % 2 ? 2049 : 65 + static_cast<int>(uniform_index(rng, 200));
    std::vector<int> sizes{input};
    const int hidden = 1 + static_cast<int>(uniform_index(rng, 3));
    for (int h = 0; h < hidden; ++h) sizes.push_back(4 + static_cast<int>(uniform_index(rng, 29)));
    sizes.push_back(1);
    ModelParams p = ModelParams::random(sizes, rng);
    for (auto& layer : p.layers) {
      for (Eigen::Index i = 0; i < layer.b.size(); ++i) layer.b(i) = 0.2 * uniform01(rng) - 0.05;
    }
    std::vector<Transition> ts(1 + uniform_index(rng, 8));
    for (auto& t : ts) {
      t.result = random_features(rng, input);
      t.terminal = true;
    }
    std::vector<const Transition*> batch;
    for (auto& t : ts) batch.push_back(&t);
    // Targets on both sides of the Huber kink.
    std::vector<double> y;
    for (auto* t : batch) y.push_back(q_value(p, t->result) + (uniform01(rng) < 0.5 ? 0.4 : -2.5));
    const auto analytic = loss_and_gradient(p, batch, y).gradient.flatten();
    auto flat = p.flatten();
    // Every coordinate with a nonzero analytic gradient, plus a sample of the rest.
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < flat.size(); ++i) {
      if (analytic[i] != 0.0 || uniform_index(rng, 200) == 0) idx.push_back(i);
    }
    const std::vector<bool> pattern = kink_pattern(p, batch, y);
    for (std::size_t i : idx) {
      // The loss is piecewise quadratic in one coordinate, so central differences
      // are exact away from ReLU and Huber kinks; a wide step keeps roundoff small.
      const double orig = flat[i], h = 1e-4;
      ModelParams q = p;
      flat[i] = orig + h;
      q.assign(flat);
      const double up = loss_and_gradient(q, batch, y).loss;
      bool smooth = kink_pattern(q, batch, y) == pattern;
      flat[i] = orig - h;
      q.assign(flat);
      const double down = loss_and_gradient(q, batch, y).loss;
      smooth = smooth && kink_pattern(q, batch, y) == pattern;
      flat[i] = orig;
      if (!smooth) {
        ++kinked;
        continue;
      }
      const double numeric = (up - down) / (2 * h);
      // Relative error, with an absolute floor for coordinates whose gradient is ~0.
      const double err = std::abs(numeric - analytic[i]) / std::max({std::abs(numeric), std::abs(analytic[i]), 1e-6});
      if (err > worst) {
        worst = err;
        worst_at = fmt("network %.0f: ", net) + fmt("analytic %.6g", analytic[i]) + fmt(" numeric %.6g", numeric);
      }
      ++coords;
    }
  }
  c.require(worst < kGradRelTol, fmt("max relative error %.3g at ", worst) + worst_at);
  // Steps that straddle a kink have no exact central difference; there must be few.
  c.require(kinked * 100 <= coords, std::to_string(kinked) + " coordinates straddle a kink");
  if (out.pass) {
    out.detail = std::to_string(kGradNetworks) + " networks, " + std::to_string(coords) +
                 " coordinates, max relative error " + fmt("%.3g", worst) + " (" + std::to_string(kinked) +
                 " straddling a kink skipped)";
  }
  return out;
}

RunConfig determinism_config() {
  RunConfig cfg = preset(Mode::General);
  // Smaller hidden layers keep the run short on one core; the protocol and
  // schedule are the general preset's.
  apply_setting(cfg, "hidden_layers", "256,64");
  cfg.workers = kDetWorkers;
  cfg.modification_batch = kDetBatch;
  cfg.molecules = kDetWorkers * kDetBatch;
  cfg.episodes = kDetEpisodes;
  cfg.seed = 505;
  cfg.output_dir.clear();
  return cfg;
}

// 5. Workers hold identical parameters after every sync; runs repeat exactly;
// one distributed worker reproduces the sequential simulator.
Outcome distributed_determinism() {
  Outcome out;
  Check c{out};
  const auto all = corpus();
  const std::vector<MolGraph> mols(all.begin(), all.begin() + kDetWorkers * kDetBatch);
  std::string csv[2];
  for (int run = 0; run < 2; ++run) {
    RunConfig cfg = determinism_config();
    cfg.output_dir = (fs::temp_directory_path() / ("damq_acceptance_det" + std::to_string(run))).string();
    fs::remove_all(cfg.output_dir);
    const RunReport r = run_training(cfg, mols);
    c.require(r.ok(), "run failed: " + r.result.error);
    c.require(static_cast<int>(r.result.checksums.size()) == kDetEpisodes, "missing sync checksums");
    for (std::size_t e = 0; e < r.result.checksums.size(); ++e) {
      const auto& row = r.result.checksums[e];
      c.require(static_cast<int>(row.size()) == kDetWorkers, "missing worker checksum");
      for (auto v : row) {
        c.require(v == r.result.broadcast_checksums[e], "worker checksums differ at episode " + std::to_string(e));
      }
    }
    csv[run] = slurp(fs::path(cfg.output_dir) / kMetricsFile);
  }
  c.require(!csv[0].empty() && csv[0] == csv[1], "metrics CSVs differ between identical runs");

  RunConfig one = determinism_config();
  one.workers = 1;
  one.modification_batch = kDetWorkers * kDetBatch;
  std::mt19937_64 prng(one.seed);
  const ModelParams initial = ModelParams::random(one.agent.layer_sizes, prng);
  RunOptions opt;
  opt.keep_trajectory = true;
  // Bounds as run_training would resolve them.
  SurrogateBackend backend;
  if (auto b = dataset_bounds(mols, backend, nullptr)) {
    one.reward.bde_bounds = b->first;
    one.reward.ip_bounds = b->second;
  }
  one.bounds_from_dataset = false;
  const RunResult d = run_distributed(one, mols, initial, opt);
  const RunResult s = run_sequential(one, mols, initial, opt);
  c.require(d.error.empty() && s.error.empty(), "one-worker run failed: " + d.error + s.error);
  c.require(d.trajectory.size() == static_cast<std::size_t>(kDetEpisodes) && s.trajectory.size() == d.trajectory.size(),
            "trajectory length");
  for (std::size_t e = 0; e < std::min(d.trajectory.size(), s.trajectory.size()); ++e) {
    c.require(d.trajectory[e] == s.trajectory[e], "trajectories diverge at episode " + std::to_string(e));
  }
  c.require(d.rows == s.rows, "one-worker metrics differ from sequential");
  if (out.pass) {
    out.detail = std::to_string(kDetWorkers) + " workers x " + std::to_string(kDetBatch) + " molecules, " +
                 std::to_string(kDetEpisodes) + " episodes: checksums equal every episode, metrics byte-identical (" +
                 std::to_string(csv[0].size()) + " bytes), 1-worker trajectory equals sequential";
  }
  return out;
}

struct LearnRun {
  double mean_best = 0.0;
  double mean_final = 0.0;  // reward of the last episode's endpoint
  double seconds = 0.0;
  std::map<std::string, int> best_smiles;
};

LearnRun learning_run(const std::vector<MolGraph>& mols, std::uint64_t seed, bool random_policy) {
  RunConfig cfg = preset(Mode::General);
  apply_setting(cfg, "hidden_layers", "128,32");
  cfg.workers = kLearnMolecules / cfg.modification_batch;
  cfg.molecules = kLearnMolecules;
  cfg.episodes = kLearnEpisodes;
  cfg.seed = seed;
  cfg.output_dir.clear();
  if (random_policy) {
    cfg.epsilon = {1.0, 1.0, 1.0};
    cfg.train_iters = 0;
  }
  const RunReport r = run_training(cfg, mols);
  LearnRun out;
  out.seconds = r.seconds;
  if (!r.ok()) throw std::runtime_error(r.result.error);
  for (const auto& b : r.result.best) {
    out.mean_best += b.found ? b.reward : cfg.reward.invalid_penalty;
    out.best_smiles[b.smiles] += 1;
  }
  out.mean_best /= static_cast<double>(r.result.best.size());
  int n = 0;
  for (const auto& row : r.result.rows) {
    if (row.episode != kLearnEpisodes - 1) continue;
    out.mean_final += row.reward;
    ++n;
  }
  out.mean_final /= n;
  return out;
}

// 6. Trained mean best reward beats the uniform-random policy by the margin.
Outcome learning_signal() {
  Outcome out;
  Check c{out};
  const auto all = corpus();
  const std::vector<MolGraph> mols(all.begin(), all.begin() + kLearnMolecules);
  double total = 0.0;
  std::string detail;
  for (std::uint64_t seed : {601u, 602u}) {
    const LearnRun trained = learning_run(mols, seed, false);
    const LearnRun random = learning_run(mols, seed, true);
    total += trained.seconds + random.seconds;
    const double gap = trained.mean_best - random.mean_best;
    const bool ok = gap >= kLearnMargin * std::abs(random.mean_best);
    c.require(ok, "");
    std::string top_t, top_r;
    int nt = 0, nr = 0;
    for (const auto& [s, k] : trained.best_smiles) {
      if (k > nt) nt = k, top_t = s;
    }
    for (const auto& [s, k] : random.best_smiles) {
      if (k > nr) nr = k, top_r = s;
    }
    detail += "seed " + std::to_string(seed) + ": trained " + fmt("%.4f", trained.mean_best) + " vs random " +
              fmt("%.4f", random.mean_best) + " (gap " + fmt("%+.1f%%", 100.0 * gap / std::abs(random.mean_best)) +
              ", need +" + fmt("%.0f%%", 100 * kLearnMargin) + "); most common best: trained '" + top_t + "' x" +
              std::to_string(nt) + ", random '" + top_r + "' x" + std::to_string(nr) +
              "; last-episode reward trained " + fmt("%.3f", trained.mean_final) + " random " +
              fmt("%.3f", random.mean_final) + "; ";
  }
  c.require(total < kLearnSeconds, fmt("too slow: %.0f s", total));
  out.detail = detail + fmt("%.0f s total", total);
  return out;
}

// 7. Failure-rate arithmetic and exact filter thresholds.
Outcome ofr_arithmetic() {
  Outcome out;
  Check c{out};
  const double ofr = compute_ofr(99, 256);
  c.require(std::abs(ofr - kOfrExpected) <= kOfrTol, fmt("compute_ofr(99,256) = %.6f", ofr));
  c.require(compute_ofr(3, 4) == 0.25 && compute_ofr(9, 9) == 0.0, "small cases");
  auto accepted = [](double bde, double ip, double sa) {
    PropertyResult p;
    p.bde = bde;
    p.ip = ip;
    p.sa = sa;
    return apply_filter({{"CCO", p}}, {}).accepted.size() == 1;
  };
  c.require(!accepted(76.0, 150, 3.0), "BDE 76 accepted");
  c.require(accepted(std::nextafter(76.0, 0.0), 150, 3.0), "BDE just below 76 rejected");
  c.require(!accepted(70, 145.0, 3.0), "IP 145 accepted");
  c.require(accepted(70, std::nextafter(145.0, 200.0), 3.0), "IP just above 145 rejected");
  c.require(accepted(70, 150, 3.5), "SA 3.5 rejected");
  c.require(!accepted(70, 150, std::nextafter(3.5, 4.0)), "SA above 3.5 accepted");
  if (out.pass) out.detail = "compute_ofr(99,256) = " + fmt("%.8f", ofr) + "; thresholds 76/145/3.5 exact";
  return out;
}

// 8. One backend call per distinct molecule; LRU order; cached values equal.
Outcome cache_behavior() {
  Outcome out;
  Check c{out};
  std::mt19937_64 rng(808);
  const auto mols = corpus();
  SurrogateBackend surrogate;
  CountingBackend counting(surrogate);
  PredictorCache unbounded(PredictorCache::kUnbounded);
  std::set<std::string> distinct;
  const int repeats = 20;
  std::vector<int> trace;
  for (int r = 0; r < repeats; ++r) {
    for (int i = 0; i < 60; ++i) trace.push_back(i);
  }
  std::shuffle(trace.begin(), trace.end(), rng);
  for (int i : trace) {
    const MolGraph m = oracle::random_relabel(mols[i], rng);
    distinct.insert(write_smiles(m).str());
    c.require(predict(m, counting, &unbounded) == surrogate_properties(m), "cached value differs");
  }
  c.require(counting.molecules() == static_cast<std::int64_t>(distinct.size()),
            "backend calls " + std::to_string(counting.molecules()) + " != distinct " + std::to_string(distinct.size()));

  // Reference LRU: a list in recency order.
  auto replay = [&](std::size_t capacity, const std::vector<std::string>& keys) {
    PredictorCache cache(capacity);
    std::vector<std::string> model;
    std::int64_t misses = 0;
    for (const auto& k : keys) {
      auto it = std::find(model.begin(), model.end(), k);
      const bool hit = cache.lookup(k).has_value();
      c.require(hit == (it != model.end()), "hit/miss differs from reference on key " + k);
      if (it != model.end()) model.erase(it);
      if (!hit) {
        ++misses;
        cache.insert(k, {});
      }
      model.insert(model.begin(), k);
      if (model.size() > capacity) model.pop_back();
      c.require(cache.keys() == model, "recency order differs from reference");
    }
    return misses;
  };
  // Cyclic scan one larger than the cache: every access misses.
  std::vector<std::string> cyclic;
  for (int r = 0; r < 10; ++r) {
    for (int k = 0; k < 9; ++k) cyclic.push_back("k" + std::to_string(k));
  }
  c.require(replay(8, cyclic) == static_cast<std::int64_t>(cyclic.size()), "cyclic scan hit a stale entry");
  // A hot key interleaved with a scan stays resident.
  std::vector<std::string> hot;
  for (int k = 0; k < 200; ++k) {
    hot.push_back("hot");
    hot.push_back("s" + std::to_string(k));
  }
  c.require(replay(2, hot) == 201, "hot key was evicted");
  std::vector<std::string> random_keys;
  for (int k = 0; k < 5000; ++k) random_keys.push_back("r" + std::to_string(uniform_index(rng, 12)));
  replay(7, random_keys);

  // Values with a small cache against no cache.
  PredictorCache small(5);
  for (int k = 0; k < 500; ++k) {
    const MolGraph& m = mols[uniform_index(rng, mols.size())];
    c.require(predict(m, surrogate, &small) == predict(m, surrogate, nullptr), "small-cache value differs");
  }
  if (out.pass) {
    out.detail = std::to_string(trace.size()) + " requests, " + std::to_string(distinct.size()) +
                 " distinct, " + std::to_string(counting.molecules()) + " backend calls; LRU order matches reference";
  }
  return out;
}

// 9. Incremental fingerprint speedup and the epsilon schedule.
Outcome performance() {
  Outcome out;
  Check c{out};
  const FingerprintBench b = bench_fingerprint(30, 20, 1);
  c.require(b.mean_atoms >= 30.0, "benchmark molecules too small");
  c.require(b.ratio() >= kBenchMinRatio, fmt("speedup %.2fx", b.ratio()));
  const double eps = EpsilonSchedule{1.0, 0.999}.at(100);
  c.require(std::abs(eps - kEpsilon100) <= kEpsilonTol, fmt("epsilon(100) = %.17g", eps));
  out.detail = fmt("incremental %.2fx faster", b.ratio()) + fmt(" (full %.0f ns", b.full_ns) +
               fmt(", incremental %.0f ns per edit", b.incremental_ns) + fmt(", %.1f atoms)", b.mean_atoms) +
               fmt("; epsilon(100) = %.12f", eps);
  return out;
}

// 10. The enthalpy identities.
Outcome dft_utilities() {
  Outcome out;
  Check c{out};
  c.require(dft_bde(0.0, 0.0) == -312.44, "BDE constant");
  c.require(dft_ip(0.0, 0.0) == -55.61, "IP constant");
  std::mt19937_64 rng(1010);
  double worst = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double hm = -1e6 * uniform01(rng), h1 = hm + 1000.0 * uniform01(rng) - 200.0;
    for (const auto& [f, k] : {std::pair{&dft_bde, -312.44}, std::pair{&dft_ip, -55.61}}) {
      // Exact sum in extended precision. A double evaluation rounds twice, half
      // an ulp each of the partial sum and the result.
      const long double ref = static_cast<long double>(h1) + static_cast<long double>(k) - static_cast<long double>(hm);
      const double big = std::max(std::abs(h1 + k), std::abs(static_cast<double>(ref)));
      const double ulp = std::nextafter(big, INFINITY) - big;
      worst = std::max(worst, static_cast<double>(std::abs(static_cast<long double>(f(h1, hm)) - ref)) / ulp);
    }
  }
  c.require(worst <= 1.0, fmt("error %.1f ulp", worst));
  c.require(std::abs(dft_bde(100.0, -250.0) - 37.56) < 1e-12, "BDE example");
  c.require(std::abs(dft_ip(-700.0, -890.0) - 134.39) < 1e-12, "IP example");
  if (out.pass) out.detail = "constants -312.44 and -55.61 exact; 100000 random pairs within " + fmt("%.1f ulp", worst);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"fingerprint equivalence", fingerprint_equivalence},
      {"action-oracle equivalence", action_oracle},
      {"SMILES round trip", smiles_round_trip},
      {"gradient check", gradient_check},
      {"distributed determinism", distributed_determinism},
      {"learning signal", learning_signal},
      {"OFR arithmetic", ofr_arithmetic},
      {"cache behavior", cache_behavior},
      {"performance", performance},
      {"DFT utilities", dft_utilities},
  };
  std::vector<int> which;
  for (int i = 1; i < argc; ++i) which.push_back(std::atoi(argv[i]));
  if (which.empty()) {
    for (int i = 1; i <= static_cast<int>(criteria.size()); ++i) which.push_back(i);
  }
  int failed = 0;
  for (int n : which) {
    if (n < 1 || n > static_cast<int>(criteria.size())) {
      std::fprintf(stderr, "no criterion %d\n", n);
      return 2;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[n - 1].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %2d %-26s %s  %s [%.1f s]\n", n, criteria[n - 1].first, o.pass ? "PASS" : "FAIL",
                o.detail.c_str(), elapsed(t0));
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed ? 1 : 0;
}
