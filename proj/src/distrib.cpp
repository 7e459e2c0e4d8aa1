#include "damq/distrib.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>
#include <numeric>
#include <thread>

#include "damq/actions.hpp"
#include "damq/fingerprint.hpp"
#include "damq/random.hpp"
#include "damq/reward.hpp"

namespace damq {

std::vector<WorkerAssignment> shard_molecules(const std::vector<MolGraph>& dataset, int n_workers, int batch_per_worker,
                                              std::mt19937_64& rng, std::uint64_t base_seed) {
  if (n_workers <= 0) throw std::invalid_argument("shard_molecules: need at least one worker");
  const int n = static_cast<int>(dataset.size());
  if (n < n_workers) {
    throw std::invalid_argument("shard_molecules: " + std::to_string(n) + " molecules for " + std::to_string(n_workers) +
                                " workers");
  }
  const int per = n / n_workers;
  const int extra = n % n_workers;
  if (per + (extra > 0 ? 1 : 0) > batch_per_worker) {
    throw std::invalid_argument("shard_molecules: " + std::to_string(n) + " molecules do not fit " +
                                std::to_string(n_workers) + " workers x batch " + std::to_string(batch_per_worker));
  }
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (int i = n - 1; i > 0; --i) {
    std::swap(order[i], order[uniform_index(rng, static_cast<std::uint64_t>(i) + 1)]);
  }
  std::vector<WorkerAssignment> out(n_workers);
  int next = 0;
  for (int w = 0; w < n_workers; ++w) {
    out[w].worker_id = w;
    out[w].seed = base_seed + static_cast<std::uint64_t>(w);
    const int size = per + (w < extra ? 1 : 0);
    for (int j = 0; j < size; ++j, ++next) out[w].molecules.push_back({order[next], dataset[order[next]]});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Byte encoding

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void i32(int v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint32_t u32() {
    const auto s = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const auto s = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  int i32() { return static_cast<int>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    return std::string(take(n));
  }
  bool done() const { return pos_ == in_.size(); }
  void expect_done() const {
    if (!done()) throw ProtocolError("trailing bytes in message");
  }

 private:
  std::string_view take(std::size_t n) {
    if (in_.size() - pos_ < n) throw ProtocolError("truncated message");
    const auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

void write_props(Writer& w, const PropertyResult& p) {
  w.u8(p.bde ? 1 : 0);
  w.f64(p.bde.value_or(0.0));
  w.f64(p.ip);
  w.u8(p.valid3d ? 1 : 0);
  w.f64(p.sa);
}

PropertyResult read_props(Reader& r) {
  PropertyResult p;
  const bool has_bde = r.u8() != 0;
  const double bde = r.f64();
  if (has_bde) p.bde = bde;
  p.ip = r.f64();
  p.valid3d = r.u8() != 0;
  p.sa = r.f64();
  return p;
}

void write_row(Writer& w, const EpisodeRow& row) {
  w.i32(row.episode);
  w.i32(row.worker);
  w.i32(row.molecule_id);
  w.i32(row.step);
  w.str(row.action_kind);
  w.f64(row.reward);
  w.u8(row.bde ? 1 : 0);
  w.f64(row.bde.value_or(0.0));
  w.f64(row.ip);
  w.u8(row.valid3d ? 1 : 0);
  w.f64(row.epsilon);
  w.u8(row.loss ? 1 : 0);
  w.f64(row.loss.value_or(0.0));
}

EpisodeRow read_row(Reader& r) {
  EpisodeRow row;
  row.episode = r.i32();
  row.worker = r.i32();
  row.molecule_id = r.i32();
  row.step = r.i32();
  row.action_kind = r.str();
  row.reward = r.f64();
  const bool has_bde = r.u8() != 0;
  const double bde = r.f64();
  if (has_bde) row.bde = bde;
  row.ip = r.f64();
  row.valid3d = r.u8() != 0;
  row.epsilon = r.f64();
  const bool has_loss = r.u8() != 0;
  const double loss = r.f64();
  if (has_loss) row.loss = loss;
  return row;
}

void write_result(Writer& w, const MoleculeResult& m) {
  w.i32(m.molecule_id);
  w.str(m.initial_smiles);
  w.str(m.smiles);
  w.f64(m.reward);
  write_props(w, m.props);
  w.i32(m.episode);
  w.i32(m.step);
  w.u8(m.found ? 1 : 0);
}

MoleculeResult read_result(Reader& r) {
  MoleculeResult m;
  m.molecule_id = r.i32();
  m.initial_smiles = r.str();
  m.smiles = r.str();
  m.reward = r.f64();
  m.props = read_props(r);
  m.episode = r.i32();
  m.step = r.i32();
  m.found = r.u8() != 0;
  return m;
}

void write_results(Writer& w, const std::vector<MoleculeResult>& items) {
  w.u32(static_cast<std::uint32_t>(items.size()));
  for (const auto& m : items) write_result(w, m);
}

std::vector<MoleculeResult> read_results(Reader& r) {
  std::vector<MoleculeResult> items(r.u32());
  for (auto& m : items) m = read_result(r);
  return items;
}

}  // namespace

const char* to_string(MsgKind kind) {
  switch (kind) {
    case MsgKind::Register: return "Register";
    case MsgKind::Assign: return "Assign";
    case MsgKind::GradientShare: return "GradientShare";
    case MsgKind::ParamBroadcast: return "ParamBroadcast";
    case MsgKind::EpisodeBarrier: return "EpisodeBarrier";
    case MsgKind::Shutdown: return "Shutdown";
    case MsgKind::Report: return "Report";
  }
  return "?";
}

std::string encode_frame(const Message& msg) {
  const std::size_t len = msg.payload.size() + 1;
  if (len > kMaxFrameBytes) throw ProtocolError("frame too large");
  Writer w;
  w.u32(static_cast<std::uint32_t>(len));
  w.u8(static_cast<std::uint8_t>(msg.kind));
  std::string out = w.take();
  out.append(msg.payload);
  return out;
}

std::optional<Message> FrameDecoder::next() {
  const std::size_t avail = buffer_.size() - offset_;
  if (avail < 4) return std::nullopt;
  Reader header(std::string_view(buffer_).substr(offset_, 4));
  const std::uint32_t len = header.u32();
  if (len == 0 || len > kMaxFrameBytes) throw ProtocolError("bad frame length " + std::to_string(len));
  if (avail - 4 < len) return std::nullopt;
  const auto kind = static_cast<std::uint8_t>(buffer_[offset_ + 4]);
  if (kind < 1 || kind > 7) throw ProtocolError("unknown message kind " + std::to_string(kind));
  Message msg{static_cast<MsgKind>(kind), buffer_.substr(offset_ + 5, len - 1)};
  offset_ += 4 + len;
  if (offset_ == buffer_.size()) {
    buffer_.clear();
    offset_ = 0;
  } else if (offset_ > buffer_.size() / 2) {
    buffer_.erase(0, offset_);
    offset_ = 0;
  }
  return msg;
}

std::string encode_gradient(const ModelParams& grad) {
  Writer w;
  w.u32(static_cast<std::uint32_t>(grad.layers.size()));
  for (const Layer& layer : grad.layers) {
    const auto rows = layer.w.rows();
    const auto cols = layer.w.cols();
    w.u32(static_cast<std::uint32_t>(rows));
    w.u32(static_cast<std::uint32_t>(cols));
    std::vector<std::uint32_t> kept;
    for (Eigen::Index c = 0; c < cols; ++c) {
      const double* col = layer.w.col(c).data();
      // Bitwise test, so -0.0 survives the round trip.
      if (std::any_of(col, col + rows, [](double x) { return std::bit_cast<std::uint64_t>(x) != 0; })) kept.push_back(c);
    }
    w.u32(static_cast<std::uint32_t>(kept.size()));
    for (std::uint32_t c : kept) {
      w.u32(c);
      for (Eigen::Index r = 0; r < rows; ++r) w.f64(layer.w(r, c));
    }
    for (Eigen::Index r = 0; r < rows; ++r) w.f64(layer.b(r));
  }
  return w.take();
}

ModelParams decode_gradient(std::string_view bytes) {
  Reader r(bytes);
  ModelParams g;
  g.layers.resize(r.u32());
  for (Layer& layer : g.layers) {
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    if (static_cast<std::uint64_t>(rows) * cols > bytes.size() * 8 + (1u << 24)) {
      throw ProtocolError("gradient layer too large");
    }
    layer.w = Eigen::MatrixXd::Zero(rows, cols);
    layer.b = Eigen::VectorXd::Zero(rows);
    const std::uint32_t kept = r.u32();
    for (std::uint32_t k = 0; k < kept; ++k) {
      const std::uint32_t c = r.u32();
      if (c >= cols) throw ProtocolError("gradient column out of range");
      for (std::uint32_t i = 0; i < rows; ++i) layer.w(i, c) = r.f64();
    }
    for (std::uint32_t i = 0; i < rows; ++i) layer.b(i) = r.f64();
  }
  r.expect_done();
  return g;
}

ModelParams average(const std::vector<const ModelParams*>& items) {
  if (items.empty()) throw std::invalid_argument("average: nothing to average");
  ModelParams sum = *items.front();
  for (std::size_t i = 1; i < items.size(); ++i) {
    if (!items[i]->same_shape(sum)) throw ShapeMismatch("average: shape mismatch");
    sum += *items[i];
  }
  sum *= 1.0 / static_cast<double>(items.size());
  return sum;
}

// ---------------------------------------------------------------------------
// In-process transport

namespace {

struct LocalChannel {
  std::mutex mutex;
  std::condition_variable cv;
  std::deque<Message> queue[2];
  bool closed[2] = {false, false};
};

class LocalEndpoint : public Endpoint {
 public:
  LocalEndpoint(std::shared_ptr<LocalChannel> ch, int side) : ch_(std::move(ch)), side_(side) {}
  ~LocalEndpoint() override {
    std::lock_guard lock(ch_->mutex);
    ch_->closed[side_] = true;
    ch_->cv.notify_all();
  }

  void send(const Message& msg) override {
    std::lock_guard lock(ch_->mutex);
    if (ch_->closed[1 - side_]) throw TransportError("peer closed");
    ch_->queue[1 - side_].push_back(msg);
    ch_->cv.notify_all();
  }

  Message recv(std::chrono::milliseconds timeout) override {
    std::unique_lock lock(ch_->mutex);
    auto& q = ch_->queue[side_];
    const bool ready =
        ch_->cv.wait_for(lock, timeout, [&] { return !q.empty() || ch_->closed[1 - side_]; });
    if (!q.empty()) {
      Message msg = std::move(q.front());
      q.pop_front();
      return msg;
    }
    if (ready) throw TransportError("peer closed");
    throw StragglerTimeout("no message within " + std::to_string(timeout.count()) + " ms");
  }

 private:
  std::shared_ptr<LocalChannel> ch_;
  int side_;
};

// ---------------------------------------------------------------------------
// TCP transport

std::pair<std::string, std::string> split_address(const std::string& address) {
  const auto colon = address.rfind(':');
  if (colon == std::string::npos || colon + 1 == address.size()) {
    throw std::invalid_argument("expected host:port, got '" + address + "'");
  }
  std::string host = address.substr(0, colon);
  if (host.empty()) host = "127.0.0.1";
  return {host, address.substr(colon + 1)};
}

struct AddrInfo {
  addrinfo* head = nullptr;
  ~AddrInfo() {
    if (head) freeaddrinfo(head);
  }
};

void resolve(const std::string& address, bool passive, AddrInfo& out) {
  const auto [host, port] = split_address(address);
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  const int rc = getaddrinfo(host.c_str(), port.c_str(), &hints, &out.head);
  if (rc != 0) throw TransportError("cannot resolve " + address + ": " + gai_strerror(rc));
}

class TcpEndpoint : public Endpoint {
 public:
  explicit TcpEndpoint(int fd) : fd_(fd) {
    const int one = 1;
    setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  }
  ~TcpEndpoint() override { close(fd_); }

  void send(const Message& msg) override {
    const std::string frame = encode_frame(msg);
    std::size_t off = 0;
    while (off < frame.size()) {
      const ssize_t n = ::send(fd_, frame.data() + off, frame.size() - off, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw TransportError(std::string("send: ") + std::strerror(errno));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  Message recv(std::chrono::milliseconds timeout) override {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    char buf[65536];
    while (true) {
      if (auto msg = decoder_.next()) return std::move(*msg);
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) throw StragglerTimeout("no message within " + std::to_string(timeout.count()) + " ms");
      pollfd p{fd_, POLLIN, 0};
      const int rc = poll(&p, 1, static_cast<int>(std::min<long long>(left.count(), 1 << 30)));
      if (rc < 0) {
        if (errno == EINTR) continue;
        throw TransportError(std::string("poll: ") + std::strerror(errno));
      }
      if (rc == 0) continue;
      const ssize_t n = ::recv(fd_, buf, sizeof buf, 0);
      if (n == 0) throw TransportError("peer closed");
      if (n < 0) {
        if (errno == EINTR || errno == EAGAIN) continue;
        throw TransportError(std::string("recv: ") + std::strerror(errno));
      }
      decoder_.feed(std::string_view(buf, static_cast<std::size_t>(n)));
    }
  }

 private:
  int fd_;
  FrameDecoder decoder_;
};

}  // namespace

std::pair<std::unique_ptr<Endpoint>, std::unique_ptr<Endpoint>> make_local_pair() {
  auto ch = std::make_shared<LocalChannel>();
  return {std::make_unique<LocalEndpoint>(ch, 0), std::make_unique<LocalEndpoint>(ch, 1)};
}

TcpListener::TcpListener(const std::string& address) {
  AddrInfo ai;
  resolve(address, true, ai);
  std::string last_error = "no addresses";
  for (addrinfo* a = ai.head; a; a = a->ai_next) {
    const int fd = socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC, a->ai_protocol);
    if (fd < 0) continue;
    const int one = 1;
    setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (bind(fd, a->ai_addr, a->ai_addrlen) == 0 && listen(fd, 128) == 0) {
      sockaddr_storage bound{};
      socklen_t len = sizeof bound;
      getsockname(fd, reinterpret_cast<sockaddr*>(&bound), &len);
      port_ = bound.ss_family == AF_INET6 ? ntohs(reinterpret_cast<sockaddr_in6*>(&bound)->sin6_port)
                                          : ntohs(reinterpret_cast<sockaddr_in*>(&bound)->sin_port);
      fd_ = fd;
      return;
    }
    last_error = std::strerror(errno);
    close(fd);
  }
  throw TransportError("cannot listen on " + address + ": " + last_error);
}

TcpListener::~TcpListener() {
  if (fd_ >= 0) close(fd_);
}

std::unique_ptr<Endpoint> TcpListener::accept(std::chrono::milliseconds timeout) {
  pollfd p{fd_, POLLIN, 0};
  const int rc = poll(&p, 1, static_cast<int>(std::min<long long>(timeout.count(), 1 << 30)));
  if (rc == 0) throw StragglerTimeout("no worker connected within " + std::to_string(timeout.count()) + " ms");
  if (rc < 0) throw TransportError(std::string("poll: ") + std::strerror(errno));
  const int fd = ::accept4(fd_, nullptr, nullptr, SOCK_CLOEXEC);
  if (fd < 0) throw TransportError(std::string("accept: ") + std::strerror(errno));
  return std::make_unique<TcpEndpoint>(fd);
}

std::unique_ptr<Endpoint> tcp_connect(const std::string& address, std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  std::string last_error;
  while (true) {
    AddrInfo ai;
    resolve(address, false, ai);
    for (addrinfo* a = ai.head; a; a = a->ai_next) {
      const int fd = socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC, a->ai_protocol);
      if (fd < 0) continue;
      if (connect(fd, a->ai_addr, a->ai_addrlen) == 0) return std::make_unique<TcpEndpoint>(fd);
      last_error = std::strerror(errno);
      close(fd);
    }
    // The coordinator may not be listening yet.
    if (std::chrono::steady_clock::now() >= deadline) {
      throw TransportError("cannot connect to " + address + ": " + last_error);
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
}

// ---------------------------------------------------------------------------
// Worker

struct Worker::Slot {
  explicit Slot(MoleculeEntry entry) : initial(std::move(entry)), current(initial.mol) {}

  MoleculeEntry initial;
  std::string initial_smiles;
  MolGraph current;
  FeatureCache features;
  ActionSet actions;
  std::vector<Features> candidates;
  std::size_t chosen = 0;
  std::optional<Transition> pending;
  bool done = false;
  int steps = 0;
  std::string last_kind = to_string(ActionKind::NoOp);
  double last_reward = 0.0;
  PropertyResult last_props;
};

Worker::Worker(const RunConfig& cfg, WorkerAssignment assignment, ModelParams initial, PredictorBackend& backend,
               PredictorCache* cache)
    : cfg_(cfg),
      assignment_(std::move(assignment)),
      agent_(cfg.agent, std::move(initial)),
      backend_(backend),
      cache_(cache),
      rng_(assignment_.seed) {
  for (const auto& m : assignment_.molecules) slots_.emplace_back(m);
  best_.resize(slots_.size());
  endpoint_.resize(slots_.size());
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    slots_[i].initial_smiles = write_smiles(slots_[i].initial.mol).str();
    best_[i].molecule_id = endpoint_[i].molecule_id = slots_[i].initial.id;
    best_[i].initial_smiles = endpoint_[i].initial_smiles = slots_[i].initial_smiles;
  }
}

Worker::~Worker() = default;

void Worker::begin_episode(int episode) {
  episode_ = episode;
  steps_ = 0;
  epsilon_ = cfg_.epsilon.at(episode);
  losses_.clear();
  for (Slot& s : slots_) {
    s.current = s.initial.mol;
    s.features = compute_features(s.current, cfg_.fp);
    s.pending.reset();
    s.done = false;
    s.steps = 0;
    s.last_kind = to_string(ActionKind::NoOp);
    s.last_reward = 0.0;
    s.last_props = {};
  }
}

bool Worker::episode_done() const {
  if (steps_ >= cfg_.max_steps) return true;
  return std::all_of(slots_.begin(), slots_.end(), [](const Slot& s) { return s.done; });
}

void Worker::step() {
  if (episode_done()) return;
  const int remaining_after = cfg_.max_steps - steps_ - 1;
  std::vector<Slot*> live;
  for (Slot& s : slots_) {
    if (s.done) continue;
    s.actions = enumerate_actions(s.current, cfg_.actions);
    s.candidates.clear();
    s.candidates.reserve(s.actions.size());
    for (const Action& a : s.actions) {
      s.candidates.push_back(make_features(incremental_fp(s.current, s.features, a), remaining_after));
    }
    if (s.pending) {
      s.pending->successors = s.candidates;
      s.pending->terminal = s.candidates.empty();
      agent_.remember(std::move(*s.pending), rng_);
      s.pending.reset();
    }
    if (s.candidates.empty()) {
      s.done = true;
      continue;
    }
    s.chosen = agent_.select(s.candidates, epsilon_, rng_);
    live.push_back(&s);
  }
  if (live.empty()) {
    ++steps_;
    return;
  }

  std::vector<const MolGraph*> mols;
  mols.reserve(live.size());
  for (Slot* s : live) mols.push_back(&s->actions[s->chosen].result);
  std::vector<PropertyResult> props;
  bool failed = false;
  try {
    props = predict(mols, backend_, cache_);
  } catch (const PredictorError&) {
    failed = true;
  }

  for (std::size_t j = 0; j < live.size(); ++j) {
    Slot& s = *live[j];
    const Action& a = s.actions[s.chosen];
    Transition t;
    t.result = std::move(s.candidates[s.chosen]);
    s.last_kind = to_string(a.kind);
    s.current = a.result;
    s.steps += 1;
    if (failed) {
      t.reward = cfg_.reward.invalid_penalty;
      t.terminal = true;
      s.last_reward = t.reward;
      s.last_props = {};
      s.done = true;
      agent_.remember(std::move(t), rng_);
      continue;
    }
    const PropertyResult& p = props[j];
    t.reward = reward(p, s.initial.mol, s.current, remaining_after, cfg_.reward);
    s.last_reward = t.reward;
    s.last_props = p;
    const std::size_t idx = static_cast<std::size_t>(&s - slots_.data());
    MoleculeResult& best = best_[idx];
    if (p.valid3d && p.bde && (!best.found || t.reward > best.reward)) {
      best.found = true;
      best.reward = t.reward;
      best.smiles = a.smiles.str();
      best.props = p;
      best.episode = episode_;
      best.step = s.steps;
    }
    if (remaining_after == 0) {
      t.terminal = true;
      agent_.remember(std::move(t), rng_);
    } else {
      s.pending = std::move(t);
      s.features = compute_features(s.current, cfg_.fp);
    }
  }
  ++steps_;
}

LossAndGradient Worker::compute_gradient() { return agent_.compute_gradient(rng_); }

std::vector<EpisodeRow> Worker::finish_episode() {
  // Transitions still waiting for successors end here.
  for (Slot& s : slots_) {
    if (s.pending) {
      s.pending->terminal = true;
      agent_.remember(std::move(*s.pending), rng_);
      s.pending.reset();
    }
  }
  std::optional<double> loss;
  if (!losses_.empty()) loss = std::accumulate(losses_.begin(), losses_.end(), 0.0) / static_cast<double>(losses_.size());
  std::vector<EpisodeRow> rows;
  rows.reserve(slots_.size());
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    const Slot& s = slots_[i];
    EpisodeRow row;
    row.episode = episode_;
    row.worker = id();
    row.molecule_id = s.initial.id;
    row.step = s.steps;
    row.action_kind = s.last_kind;
    row.reward = s.last_reward;
    row.bde = s.last_props.bde;
    row.ip = s.last_props.ip;
    row.valid3d = s.last_props.valid3d;
    row.epsilon = epsilon_;
    row.loss = loss;
    rows.push_back(std::move(row));

    MoleculeResult& end = endpoint_[i];
    end.smiles = write_smiles(s.current).str();
    end.reward = s.last_reward;
    end.props = s.last_props;
    end.episode = episode_;
    end.step = s.steps;
    end.found = s.steps > 0 && s.last_props.valid3d && s.last_props.bde.has_value();
  }
  std::sort(rows.begin(), rows.end(), [](const EpisodeRow& a, const EpisodeRow& b) { return a.molecule_id < b.molecule_id; });
  return rows;
}

// ---------------------------------------------------------------------------
// Protocol

namespace {

constexpr std::uint32_t kSyncStep = 0xffffffffu;

struct Barrier {
  std::uint32_t episode = 0;
  std::uint32_t step = 0;
  std::uint64_t checksum = 0;
};

Message barrier_msg(const Barrier& b) {
  Writer w;
  w.u32(b.episode);
  w.u32(b.step);
  w.u64(b.checksum);
  return {MsgKind::EpisodeBarrier, w.take()};
}

Barrier read_barrier(const Message& m) {
  Reader r(m.payload);
  Barrier b;
  b.episode = r.u32();
  b.step = r.u32();
  b.checksum = r.u64();
  r.expect_done();
  return b;
}

Message expect(Endpoint& link, MsgKind kind, std::chrono::milliseconds timeout) {
  Message m = link.recv(timeout);
  if (m.kind != kind) {
    if (m.kind == MsgKind::Shutdown) {
      std::string reason = Reader(m.payload).str();
      throw TransportError("shutdown: " + reason);
    }
    throw ProtocolError(std::string("expected ") + to_string(kind) + ", got " + to_string(m.kind));
  }
  return m;
}

Message param_broadcast(int episode, const ModelParams& params) {
  Writer w;
  w.u32(static_cast<std::uint32_t>(episode));
  w.u64(params_checksum(params));
  w.str(encode_params(params));
  return {MsgKind::ParamBroadcast, w.take()};
}

struct Report {
  int episode = 0;
  std::vector<EpisodeRow> rows;
  std::vector<MoleculeResult> best, endpoint;
  std::optional<ModelParams> params;
};

Message report_msg(int episode, const std::vector<EpisodeRow>& rows, const Worker& worker, bool with_params) {
  Writer w;
  w.u32(static_cast<std::uint32_t>(episode));
  w.u32(static_cast<std::uint32_t>(rows.size()));
  for (const auto& row : rows) write_row(w, row);
  write_results(w, worker.best());
  write_results(w, worker.endpoint());
  w.u8(with_params ? 1 : 0);
  if (with_params) w.str(encode_params(worker.params()));
  return {MsgKind::Report, w.take()};
}

Report read_report(const Message& m) {
  Reader r(m.payload);
  Report rep;
  rep.episode = static_cast<int>(r.u32());
  rep.rows.resize(r.u32());
  for (auto& row : rep.rows) row = read_row(r);
  rep.best = read_results(r);
  rep.endpoint = read_results(r);
  if (r.u8() != 0) rep.params = decode_params(r.str());
  r.expect_done();
  return rep;
}

// Worker-side wait for the coordinator, which itself waits on every worker.
std::chrono::milliseconds worker_wait(const RunConfig& cfg) {
  return std::chrono::milliseconds(static_cast<long long>(cfg.straggler_timeout_s * 4000.0) + 60000);
}

std::chrono::milliseconds straggler_wait(const RunConfig& cfg) {
  return std::chrono::milliseconds(static_cast<long long>(cfg.straggler_timeout_s * 1000.0));
}

std::vector<MoleculeResult> merge_by_id(std::vector<std::vector<MoleculeResult>> parts) {
  std::vector<MoleculeResult> out;
  for (auto& p : parts) out.insert(out.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.molecule_id < b.molecule_id; });
  return out;
}

std::unique_ptr<PredictorCache> make_cache(const RunConfig& cfg) {
  if (!cfg.cache) return nullptr;
  return std::make_unique<PredictorCache>(cfg.cache_capacity == 0 ? PredictorCache::kUnbounded : cfg.cache_capacity);
}

ExternalOptions backend_options(const RunConfig& cfg) {
  ExternalOptions o;
  o.timeout = std::chrono::milliseconds(cfg.predictor_timeout_ms);
  return o;
}

}  // namespace

void worker_loop(Endpoint& link, const DistribHooks& hooks) {
  link.send({MsgKind::Register, {}});
  const Message assign = link.recv(std::chrono::hours(24));
  if (assign.kind == MsgKind::Shutdown) return;
  if (assign.kind != MsgKind::Assign) throw ProtocolError(std::string("expected Assign, got ") + to_string(assign.kind));

  Reader r(assign.payload);
  WorkerAssignment a;
  a.worker_id = r.i32();
  a.seed = r.u64();
  const RunConfig cfg = parse_config(r.str());
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    const int id = r.i32();
    a.molecules.push_back({id, parse_smiles(r.str())});
  }
  ModelParams initial = decode_params(r.str());
  r.expect_done();

  auto backend = make_backend(cfg.predictor, backend_options(cfg));
  auto cache = make_cache(cfg);
  Worker worker(cfg, std::move(a), std::move(initial), *backend, cache.get());
  const auto wait = worker_wait(cfg);
  const bool lockstep = cfg.sync == SyncMode::Lockstep;

  try {
    for (int e = 0; e < cfg.episodes; ++e) {
      worker.begin_episode(e);
      for (int s = 0; s < cfg.max_steps; ++s) {
        worker.step();
        if (hooks.after_step) hooks.after_step(worker.id(), e, s);
        if (lockstep) {
          link.send(barrier_msg({static_cast<std::uint32_t>(e), static_cast<std::uint32_t>(s), 0}));
          const Barrier b = read_barrier(expect(link, MsgKind::EpisodeBarrier, wait));
          if (b.episode != static_cast<std::uint32_t>(e) || b.step != static_cast<std::uint32_t>(s)) {
            throw ProtocolError("barrier out of order");
          }
        }
      }
      for (int it = 0; it < cfg.train_iters; ++it) {
        LossAndGradient lg = worker.compute_gradient();
        worker.record_loss(lg.loss);
        if (lockstep) {
          Writer w;
          w.f64(lg.loss);
          w.str(encode_gradient(lg.gradient));
          link.send({MsgKind::GradientShare, w.take()});
          const Message reply = expect(link, MsgKind::GradientShare, wait);
          Reader rr(reply.payload);
          rr.f64();
          const ModelParams avg = decode_gradient(rr.str());
          rr.expect_done();
          worker.apply_gradient(avg);
        } else {
          worker.apply_gradient(lg.gradient);
        }
      }
      const auto rows = worker.finish_episode();
      if (hooks.before_sync) {
        ModelParams p = worker.params();
        hooks.before_sync(worker.id(), e, p);
        worker.set_params(std::move(p));
      }
      link.send(report_msg(e, rows, worker, !lockstep));

      const Message bc = expect(link, MsgKind::ParamBroadcast, wait);
      Reader br(bc.payload);
      const std::uint32_t episode = br.u32();
      const std::uint64_t checksum = br.u64();
      ModelParams params = decode_params(br.str());
      br.expect_done();
      if (episode != static_cast<std::uint32_t>(e)) throw ProtocolError("broadcast for the wrong episode");
      if (params_checksum(params) != checksum) throw ProtocolError("broadcast checksum mismatch");
      worker.set_params(std::move(params));
      worker.sync_target();
      link.send(barrier_msg({static_cast<std::uint32_t>(e), kSyncStep, params_checksum(worker.params())}));
    }
    expect(link, MsgKind::Shutdown, wait);
  } catch (const TransportError&) {
    // Coordinator aborted or went away; nothing left to report to.
  }
}

void run_worker(const std::string& coordinator, std::chrono::milliseconds connect_timeout) {
  auto link = tcp_connect(coordinator, connect_timeout);
  worker_loop(*link);
}

RunResult run_coordinator(const RunConfig& cfg, const std::vector<MolGraph>& dataset, const ModelParams& initial,
                          std::vector<std::unique_ptr<Endpoint>> links, const RunOptions& options) {
  RunResult result;
  result.params = initial;
  const auto wait = straggler_wait(cfg);
  const int n = static_cast<int>(links.size());
  const bool lockstep = cfg.sync == SyncMode::Lockstep;

  auto shutdown_all = [&](const std::string& reason) {
    Writer w;
    w.str(reason);
    const Message m{MsgKind::Shutdown, w.take()};
    for (auto& l : links) {
      try {
        l->send(m);
      } catch (const std::exception&) {
      }
    }
  };

  try {
    if (n == 0) throw std::invalid_argument("run_coordinator: no workers");
    std::mt19937_64 shard_rng(cfg.seed);
    const auto shards = shard_molecules(dataset, n, cfg.modification_batch, shard_rng, cfg.seed);

    const std::string config_text = to_text(cfg);
    const std::string params_blob = encode_params(initial);
    for (int w = 0; w < n; ++w) {
      expect(*links[w], MsgKind::Register, wait);
      Writer out;
      out.i32(shards[w].worker_id);
      out.u64(shards[w].seed);
      out.str(config_text);
      out.u32(static_cast<std::uint32_t>(shards[w].molecules.size()));
      for (const auto& m : shards[w].molecules) {
        out.i32(m.id);
        out.str(write_smiles(m.mol).str());
      }
      out.str(params_blob);
      links[w]->send({MsgKind::Assign, out.take()});
    }

    ModelParams replica = initial;
    Adam adam;
    for (int e = 0; e < cfg.episodes; ++e) {
      if (lockstep) {
        for (int s = 0; s < cfg.max_steps; ++s) {
          for (int w = 0; w < n; ++w) {
            const Barrier b = read_barrier(expect(*links[w], MsgKind::EpisodeBarrier, wait));
            if (b.episode != static_cast<std::uint32_t>(e) || b.step != static_cast<std::uint32_t>(s)) {
              throw ProtocolError("worker " + std::to_string(w) + " barrier out of order");
            }
          }
          for (int w = 0; w < n; ++w) {
            links[w]->send(barrier_msg({static_cast<std::uint32_t>(e), static_cast<std::uint32_t>(s), 0}));
          }
        }
        for (int it = 0; it < cfg.train_iters; ++it) {
          std::vector<ModelParams> grads(n);
          for (int w = 0; w < n; ++w) {
            const Message m = expect(*links[w], MsgKind::GradientShare, wait);
            Reader r(m.payload);
            r.f64();
            grads[w] = decode_gradient(r.str());
            r.expect_done();
          }
          std::vector<const ModelParams*> ptrs;
          for (const auto& g : grads) ptrs.push_back(&g);
          const ModelParams avg = average(ptrs);
          adam.step(replica, avg, cfg.agent.lr);
          Writer out;
          out.f64(0.0);
          out.str(encode_gradient(avg));
          const Message reply{MsgKind::GradientShare, out.take()};
          for (int w = 0; w < n; ++w) links[w]->send(reply);
        }
      }

      std::vector<Report> reports(n);
      for (int w = 0; w < n; ++w) {
        reports[w] = read_report(expect(*links[w], MsgKind::Report, wait));
        if (reports[w].episode != e) throw ProtocolError("report for the wrong episode");
      }
      ModelParams canonical;
      if (lockstep) {
        canonical = replica;
      } else {
        std::vector<const ModelParams*> ptrs;
        for (const auto& r : reports) {
          if (!r.params) throw ProtocolError("episode-end report without parameters");
          ptrs.push_back(&*r.params);
        }
        canonical = average(ptrs);
      }
      const Message bc = param_broadcast(e, canonical);
      for (int w = 0; w < n; ++w) links[w]->send(bc);
      const std::uint64_t expected = params_checksum(canonical);
      std::vector<std::uint64_t> sums(n);
      for (int w = 0; w < n; ++w) {
        const Barrier b = read_barrier(expect(*links[w], MsgKind::EpisodeBarrier, wait));
        if (b.episode != static_cast<std::uint32_t>(e) || b.step != kSyncStep) {
          throw ProtocolError("worker " + std::to_string(w) + " sync out of order");
        }
        sums[w] = b.checksum;
      }
      result.checksums.push_back(sums);
      result.broadcast_checksums.push_back(expected);
      for (int w = 0; w < n; ++w) {
        if (sums[w] != expected) throw ProtocolError("worker " + std::to_string(w) + " parameters diverged after sync");
      }

      std::vector<EpisodeRow> rows;
      std::vector<std::vector<MoleculeResult>> best, endpoint;
      for (auto& r : reports) {
        rows.insert(rows.end(), r.rows.begin(), r.rows.end());
        best.push_back(std::move(r.best));
        endpoint.push_back(std::move(r.endpoint));
      }
      result.rows.insert(result.rows.end(), rows.begin(), rows.end());
      result.best = merge_by_id(std::move(best));
      result.endpoint = merge_by_id(std::move(endpoint));
      if (!lockstep) replica = canonical;
      result.params = std::move(canonical);
      if (options.keep_trajectory) result.trajectory.push_back(result.params);
      result.episodes_completed = e + 1;
    }
    shutdown_all("done");
  } catch (const std::exception& ex) {
    result.error = ex.what();
    shutdown_all(result.error);
  }
  return result;
}

RunResult run_distributed(const RunConfig& cfg, const std::vector<MolGraph>& dataset, const ModelParams& initial,
                          const RunOptions& options) {
  if (!cfg.coordinator.empty()) {
    TcpListener listener(cfg.coordinator);
    std::vector<std::unique_ptr<Endpoint>> links;
    for (int w = 0; w < cfg.workers; ++w) links.push_back(listener.accept(straggler_wait(cfg)));
    return run_coordinator(cfg, dataset, initial, std::move(links), options);
  }
  std::vector<std::unique_ptr<Endpoint>> links;
  std::vector<std::thread> threads;
  std::vector<std::string> errors(cfg.workers);
  for (int w = 0; w < cfg.workers; ++w) {
    auto [coord_end, worker_end] = make_local_pair();
    links.push_back(std::move(coord_end));
    threads.emplace_back([&errors, w, &options, link = std::shared_ptr<Endpoint>(std::move(worker_end))] {
      try {
        worker_loop(*link, options.hooks);
      } catch (const std::exception& ex) {
        errors[w] = ex.what();
      }
    });
  }
  RunResult result = run_coordinator(cfg, dataset, initial, std::move(links), options);
  for (auto& t : threads) t.join();
  for (int w = 0; w < cfg.workers; ++w) {
    if (!errors[w].empty()) {
      const std::string msg = "worker " + std::to_string(w) + ": " + errors[w];
      result.error = result.error.empty() ? msg : result.error + "; " + msg;
    }
  }
  return result;
}

RunResult run_sequential(const RunConfig& cfg, const std::vector<MolGraph>& dataset, const ModelParams& initial,
                         const RunOptions& options) {
  RunResult result;
  result.params = initial;
  try {
    std::mt19937_64 shard_rng(cfg.seed);
    auto shards = shard_molecules(dataset, 1, static_cast<int>(dataset.size()), shard_rng, cfg.seed);
    // Molecules travel as canonical SMILES in the distributed run.
    for (auto& m : shards[0].molecules) m.mol = parse_smiles(write_smiles(m.mol).str());
    auto backend = make_backend(cfg.predictor, backend_options(cfg));
    auto cache = make_cache(cfg);
    Worker worker(cfg, std::move(shards[0]), initial, *backend, cache.get());
    const bool lockstep = cfg.sync == SyncMode::Lockstep;
    for (int e = 0; e < cfg.episodes; ++e) {
      worker.begin_episode(e);
      for (int s = 0; s < cfg.max_steps; ++s) {
        worker.step();
        if (options.hooks.after_step) options.hooks.after_step(0, e, s);
      }
      for (int it = 0; it < cfg.train_iters; ++it) {
        LossAndGradient lg = worker.compute_gradient();
        worker.record_loss(lg.loss);
        worker.apply_gradient(lockstep ? average({&lg.gradient}) : lg.gradient);
      }
      auto rows = worker.finish_episode();
      ModelParams p = worker.params();
      if (!lockstep) p = average({&p});
      worker.set_params(p);
      worker.sync_target();
      const std::uint64_t sum = params_checksum(worker.params());
      result.checksums.push_back({sum});
      result.broadcast_checksums.push_back(sum);
      result.rows.insert(result.rows.end(), rows.begin(), rows.end());
      result.best = worker.best();
      result.endpoint = worker.endpoint();
      std::sort(result.best.begin(), result.best.end(), [](const auto& a, const auto& b) { return a.molecule_id < b.molecule_id; });
      std::sort(result.endpoint.begin(), result.endpoint.end(), [](const auto& a, const auto& b) { return a.molecule_id < b.molecule_id; });
      result.params = std::move(p);
      if (options.keep_trajectory) result.trajectory.push_back(result.params);
      result.episodes_completed = e + 1;
    }
  } catch (const std::exception& ex) {
    result.error = ex.what();
  }
  return result;
}

}  // namespace damq
