#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <limits>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "damq/molgraph.hpp"
#include "damq/smiles.hpp"

namespace damq {

struct PropertyResult {
  std::optional<double> bde;  // lowest O-H BDE, kcal/mol; empty without an O-H bond
  double ip = 0.0;            // kcal/mol
  bool valid3d = true;
  double sa = 1.0;

  friend bool operator==(const PropertyResult&, const PropertyResult&) = default;
};

class PredictorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class BackendUnavailable : public PredictorError {
 public:
  using PredictorError::PredictorError;
};
class BackendTimeout : public PredictorError {
 public:
  using PredictorError::PredictorError;
};
class MalformedResponse : public PredictorError {
 public:
  using PredictorError::PredictorError;
};

// Deterministic stand-ins for the learned predictors. Not chemically
// meaningful; they only give the optimizer a smooth, structure-dependent
// signal.
//
// BDE: for each oxygen carrying a hydrogen, 100 - 2 * (heavy atoms within
// distance 2) - 3 * (1 if a neighbor is a ring atom); minimum over those
// oxygens, clamped to [55, 110]. Throws NoOhBond without such an oxygen.
double surrogate_bde(const MolGraph& mol);
// 130 + 0.5 * (surrogate_bde - 100) + 0.8 * heavy atoms, clamped to [95, 220].
double surrogate_ip(const MolGraph& mol);
// False iff some atom lies in three or more rings, or in two 3-rings.
bool surrogate_valid3d(const MolGraph& mol);
// 1 + 0.05 * heavy atoms + 0.3 * rings + 0.5 * (atoms of degree >= 3) / heavy
// atoms, clamped to [1, 10]. A size/complexity proxy, not the Ertl SA score.
double surrogate_sa(const MolGraph& mol);
// All four; bde is empty when the molecule has no O-H bond.
PropertyResult surrogate_properties(const MolGraph& mol);

struct PredictRequest {
  CanonicalSmiles smiles;
  const MolGraph* mol = nullptr;  // optional; backends that need a graph parse `smiles` otherwise
};

class PredictorBackend {
 public:
  virtual ~PredictorBackend() = default;
  // One result per request, in request order.
  virtual std::vector<PropertyResult> predict(const std::vector<PredictRequest>& batch) = 0;
  virtual std::string name() const = 0;
};

class SurrogateBackend : public PredictorBackend {
 public:
  std::vector<PropertyResult> predict(const std::vector<PredictRequest>& batch) override;
  std::string name() const override { return "surrogate"; }
};

// Wraps a callable; used by tests and by callers that compute properties
// in-process.
class FunctionBackend : public PredictorBackend {
 public:
  using Fn = std::function<PropertyResult(const PredictRequest&)>;
  explicit FunctionBackend(Fn fn, std::string name = "function") : fn_(std::move(fn)), name_(std::move(name)) {}
  std::vector<PropertyResult> predict(const std::vector<PredictRequest>& batch) override;
  std::string name() const override { return name_; }

 private:
  Fn fn_;
  std::string name_;
};

// Counts molecules passed to the wrapped backend.
class CountingBackend : public PredictorBackend {
 public:
  explicit CountingBackend(PredictorBackend& inner) : inner_(inner) {}
  std::vector<PropertyResult> predict(const std::vector<PredictRequest>& batch) override;
  std::string name() const override { return inner_.name(); }
  std::int64_t molecules() const { return molecules_; }
  std::int64_t batches() const { return batches_; }

 private:
  PredictorBackend& inner_;
  std::int64_t molecules_ = 0;
  std::int64_t batches_ = 0;
};

struct ExternalOptions {
  std::chrono::milliseconds timeout{30000};  // per request
  int retries = 1;                           // reconnects after BackendUnavailable
};

// Newline-delimited JSON over a child process's stdin/stdout ("exec:<cmd>",
// run through /bin/sh -c) or a TCP connection ("tcp:<host>:<port>"). All
// requests of a batch are written before responses are read; responses are
// matched by id and may arrive in any order. See docs/predictor-protocol.md.
class ExternalBackend : public PredictorBackend {
 public:
  ExternalBackend(std::string target, ExternalOptions options = {});
  ~ExternalBackend() override;
  ExternalBackend(const ExternalBackend&) = delete;
  ExternalBackend& operator=(const ExternalBackend&) = delete;

  std::vector<PropertyResult> predict(const std::vector<PredictRequest>& batch) override;
  std::string name() const override { return target_; }

 private:
  struct Channel;
  std::vector<PropertyResult> attempt(const std::vector<PredictRequest>& batch);
  void connect();
  void disconnect();

  std::string target_;
  ExternalOptions options_;
  std::unique_ptr<Channel> channel_;
  std::int64_t next_id_ = 0;
};

// "surrogate", "exec:<cmd>" or "tcp:<host>:<port>". Throws
// std::invalid_argument for anything else.
std::unique_ptr<PredictorBackend> make_backend(const std::string& spec, ExternalOptions options = {});

// Strict LRU map from canonical SMILES to properties. Safe to share between
// threads of one process.
class PredictorCache {
 public:
  static constexpr std::size_t kUnbounded = std::numeric_limits<std::size_t>::max();
  static constexpr std::size_t kDefaultCapacity = 100000;

  explicit PredictorCache(std::size_t capacity = kDefaultCapacity);

  // Marks the entry most recently used on a hit.
  std::optional<PropertyResult> lookup(const std::string& key);
  // Inserts or refreshes; evicts least recently used entries beyond capacity.
  void insert(const std::string& key, const PropertyResult& value);

  std::size_t size() const;
  std::size_t capacity() const { return capacity_; }
  std::int64_t hits() const;
  std::int64_t misses() const;
  std::int64_t evictions() const;
  // Most recent first.
  std::vector<std::string> keys() const;

 private:
  using Entry = std::pair<std::string, PropertyResult>;
  std::size_t capacity_;
  mutable std::mutex mutex_;
  std::list<Entry> order_;
  std::unordered_map<std::string, std::list<Entry>::iterator> index_;
  std::int64_t hits_ = 0;
  std::int64_t misses_ = 0;
  std::int64_t evictions_ = 0;
};

// Properties of `mol`, from the cache when present. A miss calls the backend
// once and stores the result. `cache` may be null (no caching).
PropertyResult predict(const MolGraph& mol, PredictorBackend& backend, PredictorCache* cache);

// Batched form: cache misses are deduplicated by canonical SMILES and sent to
// the backend in one call.
std::vector<PropertyResult> predict(const std::vector<const MolGraph*>& mols, PredictorBackend& backend,
                                    PredictorCache* cache);

}  // namespace damq
