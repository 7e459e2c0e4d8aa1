#include "damq/predictors.hpp"

#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <thread>

#include "damq/rings.hpp"
#include "json.hpp"

namespace damq {

namespace {

double clamp(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

}  // namespace

double surrogate_bde(const MolGraph& mol) {
  std::vector<bool> ring;
  bool found = false;
  double best = 0.0;
  for (int o = 0; o < mol.atom_count(); ++o) {
    if (mol.element(o) != Element::O || free_valence(mol, o) == 0) continue;
    const auto dist = bfs_distances(mol, o, 2);
    int near = 0;
    for (int d : dist) near += d == 1 || d == 2;
    int ring_adj = 0;
    for (const auto& nb : mol.neighbors(o)) {
      if (ring.empty()) ring = ring_atom_flags(mol);
      if (ring[nb.atom]) ring_adj = 1;
    }
    const double score = 100.0 - 2.0 * near - 3.0 * ring_adj;
    if (!found || score < best) best = score;
    found = true;
  }
  if (!found) throw NoOhBond("surrogate_bde: molecule has no O-H bond");
  return clamp(best, 55.0, 110.0);
}

namespace {

double ip_from_bde(double bde, const MolGraph& mol) {
  return clamp(130.0 + 0.5 * (bde - 100.0) + 0.8 * mol.atom_count(), 95.0, 220.0);
}

}  // namespace

double surrogate_ip(const MolGraph& mol) { return ip_from_bde(surrogate_bde(mol), mol); }

bool surrogate_valid3d(const MolGraph& mol) {
  if (cyclomatic_number(mol) < 2) return true;
  const RingInfo info = ring_membership(mol);
  for (int i = 0; i < mol.atom_count(); ++i) {
    if (info.atom_ring_count[i] >= 3) return false;
    const auto& sizes = info.atom_ring_sizes[i];
    if (std::count(sizes.begin(), sizes.end(), 3) >= 2) return false;
  }
  return true;
}

double surrogate_sa(const MolGraph& mol) {
  const int n = mol.atom_count();
  int branched = 0;
  for (int i = 0; i < n; ++i) branched += mol.degree(i) >= 3;
  const double sa = 1.0 + 0.05 * n + 0.3 * cyclomatic_number(mol) + 0.5 * branched / static_cast<double>(n);
  return clamp(sa, 1.0, 10.0);
}

PropertyResult surrogate_properties(const MolGraph& mol) {
  PropertyResult out;
  if (has_oh_bond(mol)) {
    out.bde = surrogate_bde(mol);
    out.ip = ip_from_bde(*out.bde, mol);
  } else {
    // IP is still defined; use the unclamped BDE baseline of 100.
    out.ip = ip_from_bde(100.0, mol);
  }
  out.valid3d = surrogate_valid3d(mol);
  out.sa = surrogate_sa(mol);
  return out;
}

std::vector<PropertyResult> SurrogateBackend::predict(const std::vector<PredictRequest>& batch) {
  std::vector<PropertyResult> out;
  out.reserve(batch.size());
  for (const auto& req : batch) {
    if (req.mol) {
      out.push_back(surrogate_properties(*req.mol));
    } else {
      out.push_back(surrogate_properties(parse_smiles(req.smiles.str())));
    }
  }
  return out;
}

std::vector<PropertyResult> FunctionBackend::predict(const std::vector<PredictRequest>& batch) {
  std::vector<PropertyResult> out;
  out.reserve(batch.size());
  for (const auto& req : batch) out.push_back(fn_(req));
  return out;
}

std::vector<PropertyResult> CountingBackend::predict(const std::vector<PredictRequest>& batch) {
  molecules_ += static_cast<std::int64_t>(batch.size());
  ++batches_;
  return inner_.predict(batch);
}

// ---------------------------------------------------------------------------
// External backend

struct ExternalBackend::Channel {
  int in = -1;   // we read responses here
  int out = -1;  // we write requests here
  pid_t child = -1;
  bool socket = false;
  std::string buffer;

  ~Channel() {
    if (out >= 0 && out != in) ::close(out);
    if (in >= 0) ::close(in);
    if (child > 0) {
      // Closing stdin asks a well-behaved backend to exit; give it a moment.
      for (int i = 0; i < 20; ++i) {
        if (::waitpid(child, nullptr, WNOHANG) == child) return;
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
      }
      ::kill(child, SIGKILL);
      ::waitpid(child, nullptr, 0);
    }
  }
};

namespace {

void set_nonblocking(int fd) { ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL) | O_NONBLOCK); }

using json = nlohmann::json;

PropertyResult parse_response(const json& j) {
  PropertyResult r;
  const auto& bde = j.at("bde");
  if (bde.is_number()) {
    r.bde = bde.get<double>();
  } else if (!bde.is_null()) {
    throw MalformedResponse("field 'bde' must be a number or null");
  }
  if (!j.at("ip").is_number()) throw MalformedResponse("field 'ip' must be a number");
  if (!j.at("valid3d").is_boolean()) throw MalformedResponse("field 'valid3d' must be a boolean");
  if (!j.at("sa").is_number()) throw MalformedResponse("field 'sa' must be a number");
  r.ip = j["ip"].get<double>();
  r.valid3d = j["valid3d"].get<bool>();
  r.sa = j["sa"].get<double>();
  return r;
}

}  // namespace

ExternalBackend::ExternalBackend(std::string target, ExternalOptions options)
    : target_(std::move(target)), options_(options) {
  if (target_.rfind("exec:", 0) != 0 && target_.rfind("tcp:", 0) != 0) {
    throw std::invalid_argument("external predictor must be exec:<cmd> or tcp:<host>:<port>, got '" + target_ + "'");
  }
}

ExternalBackend::~ExternalBackend() = default;

void ExternalBackend::connect() {
  auto ch = std::make_unique<Channel>();
  if (target_.rfind("exec:", 0) == 0) {
    // A dead child must surface as BackendUnavailable, not kill us.
    ::signal(SIGPIPE, SIG_IGN);
    const std::string cmd = target_.substr(5);
    int to_child[2], from_child[2];
    if (::pipe2(to_child, O_CLOEXEC) != 0) throw BackendUnavailable(std::string("pipe: ") + std::strerror(errno));
    if (::pipe2(from_child, O_CLOEXEC) != 0) {
      ::close(to_child[0]);
      ::close(to_child[1]);
      throw BackendUnavailable(std::string("pipe: ") + std::strerror(errno));
    }
    const pid_t pid = ::fork();
    if (pid < 0) throw BackendUnavailable(std::string("fork: ") + std::strerror(errno));
    if (pid == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::execl("/bin/sh", "sh", "-c", cmd.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    ch->child = pid;
    ch->out = to_child[1];
    ch->in = from_child[0];
  } else {
    const std::string hp = target_.substr(4);
    const auto colon = hp.rfind(':');
    if (colon == std::string::npos) throw std::invalid_argument("tcp target needs host:port: '" + hp + "'");
    const std::string host = hp.substr(0, colon), port = hp.substr(colon + 1);
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res); rc != 0) {
      throw BackendUnavailable("resolve " + hp + ": " + ::gai_strerror(rc));
    }
    int fd = -1;
    for (auto* ai = res; ai; ai = ai->ai_next) {
      fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
      if (fd < 0) continue;
      if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
      ::close(fd);
      fd = -1;
    }
    ::freeaddrinfo(res);
    if (fd < 0) throw BackendUnavailable("connect " + hp + ": " + std::strerror(errno));
    ch->in = ch->out = fd;
    ch->socket = true;
  }
  set_nonblocking(ch->in);
  if (ch->out != ch->in) set_nonblocking(ch->out);
  channel_ = std::move(ch);
}

void ExternalBackend::disconnect() { channel_.reset(); }

std::vector<PropertyResult> ExternalBackend::predict(const std::vector<PredictRequest>& batch) {
  if (batch.empty()) return {};
  for (int attempt_no = 0;; ++attempt_no) {
    try {
      if (!channel_) connect();
      return attempt(batch);
    } catch (const BackendUnavailable&) {
      disconnect();
      if (attempt_no >= options_.retries) throw;
    } catch (...) {
      disconnect();
      throw;
    }
  }
}

std::vector<PropertyResult> ExternalBackend::attempt(const std::vector<PredictRequest>& batch) {
  Channel& ch = *channel_;
  std::string pending_out;
  std::unordered_map<std::int64_t, std::size_t> waiting;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const std::int64_t id = next_id_++;
    waiting[id] = i;
    json req = {{"id", id}, {"smiles", batch[i].smiles.str()}, {"props", {"bde", "ip", "valid3d", "sa"}}};
    pending_out += req.dump();
    pending_out += '\n';
  }
  std::vector<PropertyResult> out(batch.size());
  std::size_t written = 0;
  auto deadline = std::chrono::steady_clock::now() + options_.timeout;

  auto handle_line = [&](const std::string& line) {
    if (line.empty()) return;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw MalformedResponse("response is not JSON: " + line.substr(0, 200));
    }
    if (!j.is_object() || !j.contains("id") || !j["id"].is_number_integer()) {
      throw MalformedResponse("response without integer id: " + line.substr(0, 200));
    }
    const auto id = j["id"].get<std::int64_t>();
    auto it = waiting.find(id);
    if (it == waiting.end()) throw MalformedResponse("response for unknown id " + std::to_string(id));
    if (j.contains("error")) {
      throw MalformedResponse("backend reported error for id " + std::to_string(id) + ": " + j["error"].dump());
    }
    try {
      out[it->second] = parse_response(j);
    } catch (const json::exception& e) {
      throw MalformedResponse(std::string("incomplete response: ") + e.what());
    }
    waiting.erase(it);
    deadline = std::chrono::steady_clock::now() + options_.timeout;
  };

  char buf[65536];
  while (!waiting.empty()) {
    pollfd fds[2];
    int nfds = 0;
    fds[nfds++] = {ch.in, POLLIN, 0};
    const bool writing = written < pending_out.size();
    if (writing) {
      if (ch.out == ch.in) {
        fds[0].events |= POLLOUT;
      } else {
        fds[nfds++] = {ch.out, POLLOUT, 0};
      }
    }
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) {
      throw BackendTimeout("no response from " + target_ + " within " + std::to_string(options_.timeout.count()) +
                           " ms (" + std::to_string(waiting.size()) + " pending)");
    }
    const int rc = ::poll(fds, nfds, static_cast<int>(left.count()));
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw BackendUnavailable(std::string("poll: ") + std::strerror(errno));
    }
    if (rc == 0) continue;

    for (int k = 0; k < nfds; ++k) {
      if (writing && fds[k].fd == ch.out && (fds[k].revents & (POLLOUT | POLLERR | POLLHUP))) {
        const ssize_t n = ch.socket ? ::send(ch.out, pending_out.data() + written, pending_out.size() - written, MSG_NOSIGNAL)
                                    : ::write(ch.out, pending_out.data() + written, pending_out.size() - written);
        if (n < 0 && errno != EAGAIN && errno != EINTR) {
          throw BackendUnavailable("write to " + target_ + ": " + std::strerror(errno));
        }
        if (n > 0) written += static_cast<std::size_t>(n);
      }
    }
    if (fds[0].revents & (POLLIN | POLLHUP | POLLERR)) {
      const ssize_t n = ::read(ch.in, buf, sizeof buf);
      if (n == 0) throw BackendUnavailable(target_ + " closed the connection with " + std::to_string(waiting.size()) + " pending");
      if (n < 0) {
        if (errno == EAGAIN || errno == EINTR) continue;
        throw BackendUnavailable("read from " + target_ + ": " + std::strerror(errno));
      }
      ch.buffer.append(buf, static_cast<std::size_t>(n));
      std::size_t start = 0;
      for (std::size_t nl; (nl = ch.buffer.find('\n', start)) != std::string::npos; start = nl + 1) {
        handle_line(ch.buffer.substr(start, nl - start));
      }
      ch.buffer.erase(0, start);
    }
  }
  return out;
}

std::unique_ptr<PredictorBackend> make_backend(const std::string& spec, ExternalOptions options) {
  if (spec == "surrogate") return std::make_unique<SurrogateBackend>();
  if (spec.rfind("exec:", 0) == 0 || spec.rfind("tcp:", 0) == 0) return std::make_unique<ExternalBackend>(spec, options);
  throw std::invalid_argument("unknown predictor '" + spec + "' (expected surrogate, exec:<cmd> or tcp:<host>:<port>)");
}

// ---------------------------------------------------------------------------
// Cache

PredictorCache::PredictorCache(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("PredictorCache capacity must be positive");
}

std::optional<PropertyResult> PredictorCache::lookup(const std::string& key) {
  std::lock_guard lock(mutex_);
  auto it = index_.find(key);
  if (it == index_.end()) {
    ++misses_;
    return std::nullopt;
  }
  ++hits_;
  order_.splice(order_.begin(), order_, it->second);
  return it->second->second;
}

void PredictorCache::insert(const std::string& key, const PropertyResult& value) {
  std::lock_guard lock(mutex_);
  if (auto it = index_.find(key); it != index_.end()) {
    it->second->second = value;
    order_.splice(order_.begin(), order_, it->second);
    return;
  }
  order_.emplace_front(key, value);
  index_[key] = order_.begin();
  while (order_.size() > capacity_) {
    index_.erase(order_.back().first);
    order_.pop_back();
    ++evictions_;
  }
}

std::size_t PredictorCache::size() const {
  std::lock_guard lock(mutex_);
  return order_.size();
}

std::int64_t PredictorCache::hits() const {
  std::lock_guard lock(mutex_);
  return hits_;
}

std::int64_t PredictorCache::misses() const {
  std::lock_guard lock(mutex_);
  return misses_;
}

std::int64_t PredictorCache::evictions() const {
  std::lock_guard lock(mutex_);
  return evictions_;
}

std::vector<std::string> PredictorCache::keys() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> out;
  out.reserve(order_.size());
  for (const auto& [key, value] : order_) out.push_back(key);
  return out;
}

PropertyResult predict(const MolGraph& mol, PredictorBackend& backend, PredictorCache* cache) {
  return predict(std::vector<const MolGraph*>{&mol}, backend, cache).front();
}

std::vector<PropertyResult> predict(const std::vector<const MolGraph*>& mols, PredictorBackend& backend,
                                    PredictorCache* cache) {
  std::vector<PropertyResult> out(mols.size());
  std::vector<PredictRequest> requests;
  std::vector<std::vector<std::size_t>> targets;
  std::unordered_map<std::string, std::size_t> slot;
  for (std::size_t i = 0; i < mols.size(); ++i) {
    CanonicalSmiles smiles = write_smiles(*mols[i]);
    if (cache) {
      if (auto hit = cache->lookup(smiles.str())) {
        out[i] = *hit;
        continue;
      }
    }
    auto [it, fresh] = slot.try_emplace(smiles.str(), requests.size());
    if (fresh) {
      requests.push_back({std::move(smiles), mols[i]});
      targets.emplace_back();
    }
    targets[it->second].push_back(i);
  }
  if (requests.empty()) return out;
  auto results = backend.predict(requests);
  if (results.size() != requests.size()) {
    throw MalformedResponse(backend.name() + " returned " + std::to_string(results.size()) + " results for " +
                            std::to_string(requests.size()) + " requests");
  }
  for (std::size_t r = 0; r < requests.size(); ++r) {
    if (cache) cache->insert(requests[r].smiles.str(), results[r]);
    for (std::size_t i : targets[r]) out[i] = results[r];
  }
  return out;
}

}  // namespace damq
