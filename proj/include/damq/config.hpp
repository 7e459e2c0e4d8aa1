#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "damq/actions.hpp"
#include "damq/agent.hpp"
#include "damq/fingerprint.hpp"
#include "damq/reward.hpp"

namespace damq {

enum class Mode { Individual, Parallel, General, FineTune };
// Lockstep: gradients are averaged across workers on every optimizer step.
// EpisodeEnd: workers train alone and parameters are averaged at the sync.
enum class SyncMode { Lockstep, EpisodeEnd };

const char* to_string(Mode mode);
const char* to_string(SyncMode mode);
Mode parse_mode(const std::string& text);
SyncMode parse_sync_mode(const std::string& text);

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  Mode mode = Mode::General;
  int episodes = 250;
  int molecules = 256;           // initial molecules taken from the dataset; 0 = all
  int workers = 64;
  int modification_batch = 4;    // molecules per worker
  int max_steps = 10;
  EpsilonSchedule epsilon{1.0, 0.970};
  int train_iters = 1;           // optimizer steps per episode
  SyncMode sync = SyncMode::Lockstep;
  AgentConfig agent;
  RewardConfig reward;
  bool bounds_from_dataset = true;  // replace reward bounds with the dataset's min/max
  ActionConfig actions;
  FpConfig fp;
  std::string predictor = "surrogate";
  int predictor_timeout_ms = 30000;
  bool cache = true;
  std::size_t cache_capacity = 100000;
  std::uint64_t seed = 0;
  double straggler_timeout_s = 120.0;
  std::string dataset;
  std::string output_dir = "damq_run";
  std::string init_checkpoint;   // start from these parameters instead of random ones
  std::string coordinator;       // host:port to listen on; empty runs workers as threads

  // Throws ConfigError on inconsistent values.
  void validate() const;
};

// Table defaults for each training mode.
RunConfig preset(Mode mode);

// Sets one key. Throws ConfigError for unknown keys or unparsable values.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

// Flat "key = value" text; '#' starts a comment. A "mode" line selects the
// preset the other keys override, wherever it appears.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
// Every key, one per line, in a fixed order; parse_config(to_text(c)) == c.
std::string to_text(const RunConfig& cfg);

// Shortest text that reads back as the same double.
std::string format_double(double v);

}  // namespace damq
