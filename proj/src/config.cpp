#include "damq/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace damq {

const char* to_string(Mode mode) {
  switch (mode) {
    case Mode::Individual: return "individual";
    case Mode::Parallel: return "parallel";
    case Mode::General: return "general";
    case Mode::FineTune: return "fine_tune";
  }
  return "?";
}

const char* to_string(SyncMode mode) { return mode == SyncMode::Lockstep ? "lockstep" : "episode_end"; }

Mode parse_mode(const std::string& text) {
  if (text == "individual") return Mode::Individual;
  if (text == "parallel") return Mode::Parallel;
  if (text == "general") return Mode::General;
  if (text == "fine_tune" || text == "finetune") return Mode::FineTune;
  throw ConfigError("unknown mode '" + text + "' (individual, parallel, general, fine_tune)");
}

SyncMode parse_sync_mode(const std::string& text) {
  if (text == "lockstep") return SyncMode::Lockstep;
  if (text == "episode_end") return SyncMode::EpisodeEnd;
  throw ConfigError("unknown sync mode '" + text + "' (lockstep, episode_end)");
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto res = std::from_chars(value.data(), end, out);
  if (res.ec != std::errc() || res.ptr != end) throw ConfigError("bad value for " + key + ": '" + value + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "on" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "off" || value == "0" || value == "no") return false;
  throw ConfigError("bad boolean for " + key + ": '" + value + "'");
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
std::string join(const std::vector<T>& items, const std::function<std::string(const T&)>& fmt) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + fmt(items[i]);
  return out;
}

Element parse_element(const std::string& s) {
  if (s == "C") return Element::C;
  if (s == "N") return Element::N;
  if (s == "O") return Element::O;
  throw ConfigError("allowed_elements: unknown element '" + s + "'");
}


std::vector<int> hidden_layers(const RunConfig& cfg) {
  const auto& sizes = cfg.agent.layer_sizes;
  return {sizes.begin() + 1, sizes.end() - 1};
}

void set_hidden_layers(RunConfig& cfg, const std::vector<int>& hidden) {
  std::vector<int> sizes{cfg.fp.length + 1};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(1);
  cfg.agent.layer_sizes = sizes;
}

}  // namespace

RunConfig preset(Mode mode) {
  RunConfig cfg;
  cfg.mode = mode;
  switch (mode) {
    case Mode::Individual:
      cfg.molecules = 1;
      cfg.workers = 1;
      cfg.modification_batch = 1;
      cfg.episodes = 8000;
      cfg.epsilon = {1.0, 0.999};
      cfg.agent.batch_cap = 128;
      break;
    case Mode::Parallel:
      cfg.molecules = 8;
      cfg.workers = 8;
      cfg.modification_batch = 1;
      cfg.episodes = 8000;
      cfg.epsilon = {1.0, 0.999};
      cfg.agent.batch_cap = 128;
      break;
    case Mode::General:
      cfg.molecules = 256;
      cfg.workers = 64;
      cfg.modification_batch = 4;
      cfg.episodes = 250;
      cfg.epsilon = {1.0, 0.970};
      cfg.agent.batch_cap = 512;
      break;
    case Mode::FineTune:
      cfg.molecules = 1;
      cfg.workers = 1;
      cfg.modification_batch = 1;
      cfg.episodes = 200;
      cfg.epsilon = {0.5, 0.961};
      cfg.agent.batch_cap = 128;
      break;
  }
  return cfg;
}

void RunConfig::validate() const {
  if (episodes < 0) throw ConfigError("episodes must be >= 0");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (modification_batch < 1) throw ConfigError("modification_batch must be >= 1");
  if (molecules < 0) throw ConfigError("molecules must be >= 0");
  if (max_steps < 1) throw ConfigError("max_steps must be >= 1");
  if (train_iters < 0) throw ConfigError("train_iters must be >= 0");
  if (!(epsilon.initial >= 0 && epsilon.initial <= 1) || !(epsilon.decay > 0 && epsilon.decay <= 1)) {
    throw ConfigError("epsilon_initial must be in [0,1] and epsilon_decay in (0,1]");
  }
  if (agent.layer_sizes.size() < 2 || agent.layer_sizes.front() != fp.length + 1 || agent.layer_sizes.back() != 1) {
    throw ConfigError("network must map fp_length + 1 inputs to one output");
  }
  if (fp.length < 1 || fp.length > 65536 || fp.radius < 0) throw ConfigError("bad fingerprint settings");
  if (agent.batch_cap < 1 || agent.replay_capacity < 1 || agent.max_successors < 1) {
    throw ConfigError("batch_cap, replay_capacity and max_successors must be positive");
  }
  if (cache_capacity < 1) throw ConfigError("cache_capacity must be positive");
  if (straggler_timeout_s <= 0) throw ConfigError("straggler_timeout_s must be positive");
  if (!bounds_from_dataset) {
    try {
      reward.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  auto i = [&] { return parse_number<int>(key, value); };
  auto d = [&] { return parse_number<double>(key, value); };
  auto z = [&] { return parse_number<std::size_t>(key, value); };
  if (key == "mode") {
    cfg.mode = parse_mode(value);
  } else if (key == "episodes") {
    cfg.episodes = i();
  } else if (key == "molecules") {
    cfg.molecules = i();
  } else if (key == "workers") {
    cfg.workers = i();
  } else if (key == "modification_batch") {
    cfg.modification_batch = i();
  } else if (key == "max_steps") {
    cfg.max_steps = i();
  } else if (key == "epsilon_initial") {
    cfg.epsilon.initial = d();
  } else if (key == "epsilon_decay") {
    cfg.epsilon.decay = d();
  } else if (key == "epsilon_floor") {
    cfg.epsilon.floor = d();
  } else if (key == "train_iters") {
    cfg.train_iters = i();
  } else if (key == "sync") {
    cfg.sync = parse_sync_mode(value);
  } else if (key == "hidden_layers") {
    std::vector<int> hidden;
    for (const auto& item : split_list(value)) hidden.push_back(parse_number<int>(key, item));
    set_hidden_layers(cfg, hidden);
  } else if (key == "lr") {
    cfg.agent.lr = d();
  } else if (key == "discount") {
    cfg.agent.discount = d();
  } else if (key == "replay_capacity") {
    cfg.agent.replay_capacity = z();
  } else if (key == "batch_cap") {
    cfg.agent.batch_cap = z();
  } else if (key == "max_successors") {
    cfg.agent.max_successors = z();
  } else if (key == "w1") {
    cfg.reward.w1 = d();
  } else if (key == "w2") {
    cfg.reward.w2 = d();
  } else if (key == "w3") {
    cfg.reward.w3 = d();
  } else if (key == "bde_factor") {
    cfg.reward.bde_factor = d();
  } else if (key == "ip_factor") {
    cfg.reward.ip_factor = d();
  } else if (key == "invalid_penalty") {
    cfg.reward.invalid_penalty = d();
  } else if (key == "bounds_from_dataset") {
    cfg.bounds_from_dataset = parse_bool(key, value);
  } else if (key == "bde_min") {
    cfg.reward.bde_bounds.min = d();
    cfg.bounds_from_dataset = false;
  } else if (key == "bde_max") {
    cfg.reward.bde_bounds.max = d();
    cfg.bounds_from_dataset = false;
  } else if (key == "ip_min") {
    cfg.reward.ip_bounds.min = d();
    cfg.bounds_from_dataset = false;
  } else if (key == "ip_max") {
    cfg.reward.ip_bounds.max = d();
    cfg.bounds_from_dataset = false;
  } else if (key == "allowed_elements") {
    cfg.actions.allowed_elements.clear();
    for (const auto& item : split_list(value)) cfg.actions.allowed_elements.push_back(parse_element(item));
  } else if (key == "allowed_rings") {
    cfg.actions.allowed_ring_sizes.clear();
    for (const auto& item : split_list(value)) cfg.actions.allowed_ring_sizes.push_back(parse_number<int>(key, item));
  } else if (key == "protect_oh") {
    cfg.actions.protect_oh = parse_bool(key, value);
  } else if (key == "allow_no_op") {
    cfg.actions.allow_no_op = parse_bool(key, value);
  } else if (key == "fp_radius") {
    cfg.fp.radius = i();
  } else if (key == "fp_length") {
    const auto hidden = hidden_layers(cfg);
    cfg.fp.length = i();
    set_hidden_layers(cfg, hidden);
  } else if (key == "predictor") {
    cfg.predictor = value;
  } else if (key == "predictor_timeout_ms") {
    cfg.predictor_timeout_ms = i();
  } else if (key == "cache") {
    cfg.cache = parse_bool(key, value);
  } else if (key == "cache_capacity") {
    cfg.cache_capacity = z();
  } else if (key == "seed") {
    cfg.seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "straggler_timeout_s") {
    cfg.straggler_timeout_s = d();
  } else if (key == "dataset") {
    cfg.dataset = value;
  } else if (key == "output_dir") {
    cfg.output_dir = value;
  } else if (key == "init_checkpoint") {
    cfg.init_checkpoint = value;
  } else if (key == "coordinator") {
    cfg.coordinator = value;
  } else {
    throw ConfigError("unknown setting '" + key + "'");
  }
}

RunConfig parse_config(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> settings;
  std::optional<Mode> mode;
  std::stringstream ss(text);
  int lineno = 0;
  for (std::string line; std::getline(ss, line);) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key == "mode") {
      mode = parse_mode(value);
    } else {
      settings.emplace_back(std::move(key), std::move(value));
    }
  }
  RunConfig cfg = preset(mode.value_or(Mode::General));
  for (const auto& [key, value] : settings) apply_setting(cfg, key, value);
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_text(const RunConfig& cfg) {
  std::ostringstream out;
  auto kv = [&](const char* key, const std::string& value) { out << key << " = " << value << "\n"; };
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  kv("mode", to_string(cfg.mode));
  kv("episodes", std::to_string(cfg.episodes));
  kv("molecules", std::to_string(cfg.molecules));
  kv("workers", std::to_string(cfg.workers));
  kv("modification_batch", std::to_string(cfg.modification_batch));
  kv("max_steps", std::to_string(cfg.max_steps));
  kv("epsilon_initial", format_double(cfg.epsilon.initial));
  kv("epsilon_decay", format_double(cfg.epsilon.decay));
  kv("epsilon_floor", format_double(cfg.epsilon.floor));
  kv("train_iters", std::to_string(cfg.train_iters));
  kv("sync", to_string(cfg.sync));
  kv("fp_radius", std::to_string(cfg.fp.radius));
  kv("fp_length", std::to_string(cfg.fp.length));
  kv("hidden_layers", join<int>(hidden_layers(cfg), [](const int& v) { return std::to_string(v); }));
  kv("lr", format_double(cfg.agent.lr));
  kv("discount", format_double(cfg.agent.discount));
  kv("replay_capacity", std::to_string(cfg.agent.replay_capacity));
  kv("batch_cap", std::to_string(cfg.agent.batch_cap));
  kv("max_successors", std::to_string(cfg.agent.max_successors));
  kv("w1", format_double(cfg.reward.w1));
  kv("w2", format_double(cfg.reward.w2));
  kv("w3", format_double(cfg.reward.w3));
  kv("bde_factor", format_double(cfg.reward.bde_factor));
  kv("ip_factor", format_double(cfg.reward.ip_factor));
  kv("invalid_penalty", format_double(cfg.reward.invalid_penalty));
  kv("bde_min", format_double(cfg.reward.bde_bounds.min));
  kv("bde_max", format_double(cfg.reward.bde_bounds.max));
  kv("ip_min", format_double(cfg.reward.ip_bounds.min));
  kv("ip_max", format_double(cfg.reward.ip_bounds.max));
  // After the explicit bounds, which would otherwise clear it.
  kv("bounds_from_dataset", b(cfg.bounds_from_dataset));
  kv("allowed_elements",
     join<Element>(cfg.actions.allowed_elements, [](const Element& e) { return std::string(1, element_symbol(e)); }));
  kv("allowed_rings", join<int>(cfg.actions.allowed_ring_sizes, [](const int& v) { return std::to_string(v); }));
  kv("protect_oh", b(cfg.actions.protect_oh));
  kv("allow_no_op", b(cfg.actions.allow_no_op));
  kv("predictor", cfg.predictor);
  kv("predictor_timeout_ms", std::to_string(cfg.predictor_timeout_ms));
  kv("cache", b(cfg.cache));
  kv("cache_capacity", std::to_string(cfg.cache_capacity));
  kv("seed", std::to_string(cfg.seed));
  kv("straggler_timeout_s", format_double(cfg.straggler_timeout_s));
  kv("dataset", cfg.dataset);
  kv("output_dir", cfg.output_dir);
  kv("init_checkpoint", cfg.init_checkpoint);
  kv("coordinator", cfg.coordinator);
  return out.str();
}

}  // namespace damq
