#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "damq/agent.hpp"
#include "damq/config.hpp"
#include "damq/predictors.hpp"

namespace damq {

class StragglerTimeout : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MoleculeEntry {
  int id = 0;  // position in the dataset
  MolGraph mol;
};

struct WorkerAssignment {
  int worker_id = 0;
  std::vector<MoleculeEntry> molecules;
  std::uint64_t seed = 0;
};

// Shuffles the dataset with `rng` and deals it into n_workers contiguous
// shards whose sizes differ by at most one. Throws std::invalid_argument when
// a shard would exceed batch_per_worker or a worker would get nothing.
// Seeds are base_seed + worker_id.
std::vector<WorkerAssignment> shard_molecules(const std::vector<MolGraph>& dataset, int n_workers, int batch_per_worker,
                                              std::mt19937_64& rng, std::uint64_t base_seed = 0);

// ---------------------------------------------------------------------------
// Wire format: u32 little-endian length of everything after it, one kind
// byte, then the payload.

enum class MsgKind : std::uint8_t {
  Register = 1,
  Assign = 2,
  GradientShare = 3,
  ParamBroadcast = 4,
  EpisodeBarrier = 5,
  Shutdown = 6,
  Report = 7,
};

const char* to_string(MsgKind kind);

struct Message {
  MsgKind kind = MsgKind::Shutdown;
  std::string payload;
};

inline constexpr std::uint32_t kMaxFrameBytes = 1u << 30;

std::string encode_frame(const Message& msg);

// Accumulates stream bytes and yields complete messages.
class FrameDecoder {
 public:
  void feed(std::string_view bytes) { buffer_.append(bytes); }
  // Throws ProtocolError on an oversized frame or unknown kind.
  std::optional<Message> next();

 private:
  std::string buffer_;
  std::size_t offset_ = 0;
};

// Sparse-by-column encoding: all-zero weight columns are skipped, which
// keeps first-layer gradients small.
std::string encode_gradient(const ModelParams& grad);
ModelParams decode_gradient(std::string_view bytes);

// Elementwise mean, summed in the given order.
ModelParams average(const std::vector<const ModelParams*>& items);

// ---------------------------------------------------------------------------
// Transport

// One end of a coordinator-worker link.
class Endpoint {
 public:
  virtual ~Endpoint() = default;
  virtual void send(const Message& msg) = 0;
  // Throws StragglerTimeout when nothing arrives in time and TransportError
  // when the peer is gone.
  virtual Message recv(std::chrono::milliseconds timeout) = 0;
};

// Two connected in-process endpoints.
std::pair<std::unique_ptr<Endpoint>, std::unique_ptr<Endpoint>> make_local_pair();

class TcpListener {
 public:
  // "host:port"; port 0 picks a free port.
  explicit TcpListener(const std::string& address);
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  int port() const { return port_; }
  std::unique_ptr<Endpoint> accept(std::chrono::milliseconds timeout);

 private:
  int fd_ = -1;
  int port_ = 0;
};

std::unique_ptr<Endpoint> tcp_connect(const std::string& address, std::chrono::milliseconds timeout);

// ---------------------------------------------------------------------------
// Worker

// One metrics row per (episode, molecule), describing the episode's last step.
struct EpisodeRow {
  int episode = 0;
  int worker = 0;
  int molecule_id = 0;
  int step = 0;  // steps taken this episode
  std::string action_kind;
  double reward = 0.0;
  std::optional<double> bde;
  double ip = 0.0;
  bool valid3d = true;
  double epsilon = 0.0;
  std::optional<double> loss;  // mean optimizer loss of the worker this episode

  friend bool operator==(const EpisodeRow&, const EpisodeRow&) = default;
};

struct MoleculeResult {
  int molecule_id = 0;
  std::string initial_smiles;
  std::string smiles;
  double reward = -std::numeric_limits<double>::infinity();
  PropertyResult props;
  int episode = -1;
  int step = -1;
  bool found = false;  // false until a valid state has been seen

  friend bool operator==(const MoleculeResult&, const MoleculeResult&) = default;
};

// Runs the molecules of one assignment through episodes. Used by both the
// distributed worker loop and the sequential simulator.
class Worker {
 public:
  Worker(const RunConfig& cfg, WorkerAssignment assignment, ModelParams initial, PredictorBackend& backend,
         PredictorCache* cache);

  int id() const { return assignment_.worker_id; }
  void begin_episode(int episode);
  // Advances every live molecule by one step: enumerate, select, predict (one
  // batched call), reward, store transitions.
  void step();
  bool episode_done() const;
  int steps_taken() const { return steps_; }

  LossAndGradient compute_gradient();
  void apply_gradient(const ModelParams& grad) { agent_.apply_gradient(grad); }
  void record_loss(double loss) { losses_.push_back(loss); }
  std::vector<EpisodeRow> finish_episode();

  const ModelParams& params() const { return agent_.params(); }
  void set_params(ModelParams params) { agent_.set_params(std::move(params)); }
  void sync_target() { agent_.sync_target(); }

  const std::vector<MoleculeResult>& best() const { return best_; }
  const std::vector<MoleculeResult>& endpoint() const { return endpoint_; }
  const Agent& agent() const { return agent_; }

 private:
  struct Slot;

  const RunConfig& cfg_;
  WorkerAssignment assignment_;
  Agent agent_;
  PredictorBackend& backend_;
  PredictorCache* cache_;
  std::mt19937_64 rng_;
  std::vector<Slot> slots_;
  std::vector<MoleculeResult> best_, endpoint_;
  std::vector<double> losses_;
  int episode_ = 0;
  int steps_ = 0;
  double epsilon_ = 1.0;

 public:
  ~Worker();
};

// ---------------------------------------------------------------------------
// Runs

struct DistribHooks {
  // Called in the worker right before it reports for the sync; may modify the
  // worker's parameters.
  std::function<void(int worker, int episode, ModelParams& params)> before_sync;
  // Called in the worker after each step.
  std::function<void(int worker, int episode, int step)> after_step;
};

struct RunResult {
  ModelParams params;                                  // canonical parameters after the last completed sync
  std::vector<EpisodeRow> rows;                        // ordered by episode, worker, molecule
  std::vector<MoleculeResult> best;                    // ordered by molecule id
  std::vector<MoleculeResult> endpoint;                // state after the last completed episode
  std::vector<std::vector<std::uint64_t>> checksums;   // [episode][worker] after each sync
  std::vector<std::uint64_t> broadcast_checksums;      // [episode]
  std::vector<ModelParams> trajectory;                 // params after each episode, when requested
  int episodes_completed = 0;
  std::string error;                                   // empty on success
};

struct RunOptions {
  bool keep_trajectory = false;
  DistribHooks hooks;
};

// Coordinator plus workers. With cfg.coordinator empty the workers are
// threads of this process talking over in-process endpoints; otherwise the
// coordinator listens on that address for cfg.workers `damq worker`
// processes. Errors are reported in RunResult::error, with everything up to
// the last completed episode kept.
RunResult run_distributed(const RunConfig& cfg, const std::vector<MolGraph>& dataset, const ModelParams& initial,
                          const RunOptions& options = {});

// Same, but the coordinator talks to already-connected endpoints (one per
// worker, in worker-id order).
RunResult run_coordinator(const RunConfig& cfg, const std::vector<MolGraph>& dataset, const ModelParams& initial,
                          std::vector<std::unique_ptr<Endpoint>> links, const RunOptions& options = {});

// Worker side of the protocol: registers, takes its assignment, runs until
// Shutdown. Creates its own predictor backend and cache.
void worker_loop(Endpoint& link, const DistribHooks& hooks = {});

// Connects to a coordinator and runs worker_loop.
void run_worker(const std::string& coordinator, std::chrono::milliseconds connect_timeout);

// Single process, no transport: one Worker with every molecule applying its
// own gradients. Matches a one-worker distributed run exactly.
RunResult run_sequential(const RunConfig& cfg, const std::vector<MolGraph>& dataset, const ModelParams& initial,
                         const RunOptions& options = {});

}  // namespace damq
