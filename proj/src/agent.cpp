#include "damq/agent.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "damq/hash.hpp"
#include "damq/random.hpp"

namespace damq {

Features make_features(const Fingerprint& fp, int steps_remaining) {
  Features f;
  for (int bit : fp.on_bits()) f.bits.push_back(static_cast<std::uint16_t>(bit));
  f.steps_remaining = steps_remaining;
  return f;
}

// ---------------------------------------------------------------------------
// Parameters

ModelParams ModelParams::zeros(const std::vector<int>& sizes) {
  if (sizes.size() < 2) throw ShapeMismatch("a network needs at least an input and an output width");
  ModelParams p;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    if (sizes[l] <= 0 || sizes[l + 1] <= 0) throw ShapeMismatch("layer widths must be positive");
    p.layers.push_back({Eigen::MatrixXd::Zero(sizes[l + 1], sizes[l]), Eigen::VectorXd::Zero(sizes[l + 1])});
  }
  return p;
}

ModelParams ModelParams::random(const std::vector<int>& sizes, std::mt19937_64& rng) {
  ModelParams p = zeros(sizes);
  for (auto& layer : p.layers) {
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.w.cols()));
    // Row by row, so the draw order matches flatten().
    for (Eigen::Index r = 0; r < layer.w.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.w.cols(); ++c) layer.w(r, c) = (2.0 * uniform01(rng) - 1.0) * limit;
    }
  }
  return p;
}

std::vector<int> ModelParams::sizes() const {
  std::vector<int> out;
  if (layers.empty()) return out;
  out.push_back(static_cast<int>(layers.front().w.cols()));
  for (const auto& layer : layers) out.push_back(static_cast<int>(layer.w.rows()));
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers) n += static_cast<std::size_t>(layer.w.size() + layer.b.size());
  return n;
}

bool ModelParams::same_shape(const ModelParams& other) const { return sizes() == other.sizes(); }

bool ModelParams::all_finite() const {
  for (const auto& layer : layers) {
    if (!layer.w.allFinite() || !layer.b.allFinite()) return false;
  }
  return true;
}

std::vector<double> ModelParams::flatten() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto& layer : layers) {
    for (Eigen::Index r = 0; r < layer.w.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.w.cols(); ++c) out.push_back(layer.w(r, c));
    }
    out.insert(out.end(), layer.b.data(), layer.b.data() + layer.b.size());
  }
  return out;
}

void ModelParams::assign(std::span<const double> flat) {
  if (flat.size() != parameter_count()) {
    throw ShapeMismatch("expected " + std::to_string(parameter_count()) + " parameters, got " +
                        std::to_string(flat.size()));
  }
  std::size_t i = 0;
  for (auto& layer : layers) {
    for (Eigen::Index r = 0; r < layer.w.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.w.cols(); ++c) layer.w(r, c) = flat[i++];
    }
    for (Eigen::Index r = 0; r < layer.b.size(); ++r) layer.b(r) = flat[i++];
  }
}

ModelParams& ModelParams::operator+=(const ModelParams& other) {
  if (!same_shape(other)) throw ShapeMismatch("cannot add parameters of different shapes");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].w += other.layers[l].w;
    layers[l].b += other.layers[l].b;
  }
  return *this;
}

ModelParams& ModelParams::operator*=(double s) {
  for (auto& layer : layers) {
    layer.w *= s;
    layer.b *= s;
  }
  return *this;
}

bool operator==(const ModelParams& x, const ModelParams& y) {
  if (!x.same_shape(y)) return false;
  for (std::size_t l = 0; l < x.layers.size(); ++l) {
    if (x.layers[l].w != y.layers[l].w || x.layers[l].b != y.layers[l].b) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Forward and backward passes

namespace {

// Pre-activations of every layer for a batch, one column per input.
std::vector<Eigen::MatrixXd> forward(const ModelParams& params, std::span<const Features> xs) {
  if (params.layers.empty()) throw ShapeMismatch("empty network");
  const Layer& first = params.layers.front();
  const Eigen::Index steps_col = first.w.cols() - 1;
  const Eigen::Index n = static_cast<Eigen::Index>(xs.size());
  std::vector<Eigen::MatrixXd> z(params.layers.size());
  z[0].resize(first.w.rows(), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    auto col = z[0].col(i);
    col = first.b;
    for (std::uint16_t bit : xs[i].bits) {
      if (bit >= steps_col) {
        throw ShapeMismatch("feature bit " + std::to_string(bit) + " outside a network input of " +
                            std::to_string(first.w.cols()));
      }
      col += first.w.col(bit);
    }
    col += xs[i].steps_remaining * first.w.col(steps_col);
  }
  for (std::size_t l = 1; l < params.layers.size(); ++l) {
    const Layer& layer = params.layers[l];
    z[l].noalias() = layer.w * z[l - 1].cwiseMax(0.0);
    z[l].colwise() += layer.b;
  }
  return z;
}

}  // namespace

Eigen::VectorXd q_values(const ModelParams& params, std::span<const Features> xs) {
  if (xs.empty()) return {};
  if (params.layers.back().w.rows() != 1) throw ShapeMismatch("network output must be a single value");
  auto z = forward(params, xs);
  return z.back().row(0).transpose();
}

double q_value(const ModelParams& params, const Features& x) { return q_values(params, std::span(&x, 1))(0); }

double huber(double residual, double delta) {
  const double a = std::abs(residual);
  return a <= delta ? 0.5 * residual * residual : delta * (a - 0.5 * delta);
}

std::vector<double> td_targets(const ModelParams& target, std::span<const Transition* const> batch, double discount) {
  std::vector<double> y;
  y.reserve(batch.size());
  for (const Transition* t : batch) {
    if (t->terminal || t->successors.empty()) {
      y.push_back(t->reward);
    } else {
      y.push_back(t->reward + discount * q_values(target, t->successors).maxCoeff());
    }
  }
  return y;
}

LossAndGradient loss_and_gradient(const ModelParams& params, std::span<const Transition* const> batch,
                                  std::span<const double> targets, double huber_delta) {
  if (batch.empty()) throw EmptyBatch("loss_and_gradient: empty batch");
  if (targets.size() != batch.size()) throw ShapeMismatch("one target per transition required");
  if (params.layers.back().w.rows() != 1) throw ShapeMismatch("network output must be a single value");
  const Eigen::Index n = static_cast<Eigen::Index>(batch.size());
  std::vector<Features> xs;
  xs.reserve(batch.size());
  for (const Transition* t : batch) xs.push_back(t->result);
  const auto z = forward(params, xs);

  LossAndGradient out;
  out.gradient = ModelParams::zeros(params.sizes());
  Eigen::MatrixXd delta(1, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double r = z.back()(0, i) - targets[static_cast<std::size_t>(i)];
    out.loss += huber(r, huber_delta);
    delta(0, i) = std::clamp(r, -huber_delta, huber_delta) / static_cast<double>(n);
  }
  out.loss /= static_cast<double>(n);

  for (std::size_t l = params.layers.size() - 1; l >= 1; --l) {
    const Eigen::MatrixXd a = z[l - 1].cwiseMax(0.0);
    Layer& g = out.gradient.layers[l];
    g.w.noalias() = delta * a.transpose();
    g.b = delta.rowwise().sum();
    Eigen::MatrixXd back = params.layers[l].w.transpose() * delta;
    delta = back.cwiseProduct((z[l - 1].array() > 0.0).cast<double>().matrix());
  }
  Layer& g0 = out.gradient.layers[0];
  const Eigen::Index steps_col = g0.w.cols() - 1;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::uint16_t bit : xs[i].bits) g0.w.col(bit) += delta.col(i);
    g0.w.col(steps_col) += xs[i].steps_remaining * delta.col(i);
  }
  g0.b = delta.rowwise().sum();
  return out;
}

void Adam::step(ModelParams& params, const ModelParams& grad, double lr) {
  if (!params.same_shape(grad)) throw ShapeMismatch("gradient shape does not match parameters");
  if (t_ == 0 || !m_.same_shape(params)) {
    m_ = ModelParams::zeros(params.sizes());
    v_ = ModelParams::zeros(params.sizes());
    t_ = 0;
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
  };
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    update(params.layers[l].w, grad.layers[l].w, m_.layers[l].w, v_.layers[l].w);
    update(params.layers[l].b, grad.layers[l].b, m_.layers[l].b, v_.layers[l].b);
  }
}

double train_step(ModelParams& params, const ModelParams& target, Adam& adam, std::span<const Transition* const> batch,
                  double lr, double discount) {
  const auto y = td_targets(target, batch, discount);
  auto lg = loss_and_gradient(params, batch, y);
  adam.step(params, lg.gradient, lr);
  return lg.loss;
}

// ---------------------------------------------------------------------------
// Replay and exploration

void ReplayBuffer::push(Transition t) {
  items_.push_back(std::move(t));
  while (items_.size() > capacity_) items_.pop_front();
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t n, std::mt19937_64& rng) const {
  n = std::min(n, items_.size());
  std::vector<std::size_t> idx(items_.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::vector<const Transition*> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::swap(idx[i], idx[i + uniform_index(rng, idx.size() - i)]);
    out.push_back(&items_[idx[i]]);
  }
  return out;
}

double EpsilonSchedule::at(int episode) const { return std::max(floor, initial * std::pow(decay, episode)); }

std::size_t select_action(const ModelParams& params, std::span<const Features> candidates, double epsilon,
                          std::mt19937_64& rng) {
  if (candidates.empty()) throw std::invalid_argument("select_action: no candidates");
  if (uniform01(rng) < epsilon) return uniform_index(rng, candidates.size());
  const Eigen::VectorXd q = q_values(params, candidates);
  std::size_t best = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    if (q(static_cast<Eigen::Index>(i)) > q(static_cast<Eigen::Index>(best))) best = i;
  }
  return best;
}

std::vector<Features> cap_successors(std::vector<Features> candidates, std::size_t cap, std::mt19937_64& rng) {
  if (candidates.size() <= cap) return candidates;
  std::vector<std::size_t> idx(candidates.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t i = 0; i < cap; ++i) std::swap(idx[i], idx[i + uniform_index(rng, idx.size() - i)]);
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
  std::vector<Features> out;
  out.reserve(cap);
  for (std::size_t i : idx) out.push_back(std::move(candidates[i]));
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr std::string_view kMagic = "DAMQ1";

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
}
std::uint64_t get_le(std::string_view bytes, std::size_t at, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(bytes[at + i])) << (8 * i);
  return v;
}

std::uint64_t checksum_of(std::string_view bytes) {
  return fnv1a({reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()});
}

}  // namespace

std::string encode_params(const ModelParams& params) {
  std::string out(kMagic);
  const auto sizes = params.sizes();
  put_u32(out, static_cast<std::uint32_t>(params.layers.size()));
  for (int s : sizes) put_u32(out, static_cast<std::uint32_t>(s));
  const auto flat = params.flatten();
  out.reserve(out.size() + flat.size() * 8 + 8);
  for (double v : flat) put_u64(out, std::bit_cast<std::uint64_t>(v));
  put_u64(out, checksum_of(out));
  return out;
}

ModelParams decode_params(std::string_view bytes) {
  if (bytes.size() < kMagic.size() + 4 + 8 || bytes.substr(0, kMagic.size()) != kMagic) {
    throw CheckpointError("not a DAMQ1 checkpoint");
  }
  std::size_t at = kMagic.size();
  const auto layers = get_le(bytes, at, 4);
  at += 4;
  if (layers == 0 || layers > 64 || bytes.size() < at + 4 * (layers + 1) + 8) {
    throw CheckpointError("corrupt checkpoint header");
  }
  std::vector<int> sizes;
  for (std::uint64_t i = 0; i <= layers; ++i, at += 4) {
    const auto s = get_le(bytes, at, 4);
    if (s == 0 || s > (1u << 24)) throw CheckpointError("corrupt checkpoint layer width");
    sizes.push_back(static_cast<int>(s));
  }
  ModelParams params = ModelParams::zeros(sizes);
  const std::size_t count = params.parameter_count();
  if (bytes.size() != at + 8 * count + 8) {
    throw CheckpointError("checkpoint size " + std::to_string(bytes.size()) + " does not match its header");
  }
  const auto stored = get_le(bytes, bytes.size() - 8, 8);
  if (stored != checksum_of(bytes.substr(0, bytes.size() - 8))) throw CheckpointError("checkpoint checksum mismatch");
  std::vector<double> flat(count);
  for (std::size_t i = 0; i < count; ++i, at += 8) flat[i] = std::bit_cast<double>(get_le(bytes, at, 8));
  params.assign(flat);
  return params;
}

void save_checkpoint(const ModelParams& params, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    const std::string bytes = encode_params(params);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("cannot write " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw CheckpointError("cannot rename " + tmp + " to " + path);
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_params(bytes);
}

std::uint64_t params_checksum(const ModelParams& params) {
  const std::string bytes = encode_params(params);
  return get_le(bytes, bytes.size() - 8, 8);
}

// ---------------------------------------------------------------------------
// Agent

namespace {

ModelParams initial_params(const AgentConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return ModelParams::random(cfg.layer_sizes, rng);
}

}  // namespace

Agent::Agent(const AgentConfig& cfg, std::uint64_t seed) : Agent(cfg, initial_params(cfg, seed)) {}

Agent::Agent(const AgentConfig& cfg, ModelParams initial)
    : cfg_(cfg), online_(std::move(initial)), target_(online_), buffer_(cfg.replay_capacity) {
  if (online_.sizes() != cfg_.layer_sizes) throw ShapeMismatch("initial parameters do not match the configured layers");
}

void Agent::remember(Transition t, std::mt19937_64& rng) {
  if (!t.terminal) t.successors = cap_successors(std::move(t.successors), cfg_.max_successors, rng);
  // An evicted transition's address may be reused by the new one.
  target_memo_.clear();
  buffer_.push(std::move(t));
}

double Agent::max_target_q(const Transition& t) {
  auto [it, fresh] = target_memo_.try_emplace(&t, 0.0);
  if (fresh) it->second = q_values(target_, t.successors).maxCoeff();
  return it->second;
}

LossAndGradient Agent::compute_gradient(std::mt19937_64& rng) {
  if (buffer_.size() == 0) return {0.0, ModelParams::zeros(online_.sizes())};
  const auto batch = buffer_.sample(cfg_.batch_cap, rng);
  std::vector<double> y;
  y.reserve(batch.size());
  for (const Transition* t : batch) {
    y.push_back(t->terminal || t->successors.empty() ? t->reward : t->reward + cfg_.discount * max_target_q(*t));
  }
  return loss_and_gradient(online_, batch, y);
}

void Agent::apply_gradient(const ModelParams& grad) { adam_.step(online_, grad, cfg_.lr); }

void Agent::set_params(ModelParams params) {
  if (!params.same_shape(online_)) throw ShapeMismatch("set_params: shape mismatch");
  online_ = std::move(params);
}

void Agent::sync_target() {
  target_ = online_;
  target_memo_.clear();
}

}  // namespace damq
