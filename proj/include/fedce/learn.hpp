#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "fedce/errors.hpp"
#include "fedce/rng.hpp"

namespace fedce {

// Architecture descriptor. hidden_units == 0 gives multinomial logistic
// regression; otherwise input -> hidden (ReLU, dropout) -> classes.
struct ModelSpec {
  std::size_t input_dim = 0;
  std::size_t hidden_units = 64;
  std::size_t num_classes = 10;
  double dropout_p = 0.5;

  static ModelSpec mlp(std::size_t input_dim, std::size_t hidden, std::size_t classes, double dropout = 0.5) {
    return {input_dim, hidden, classes, dropout};
  }
  static ModelSpec logistic(std::size_t input_dim, std::size_t classes) { return {input_dim, 0, classes, 0.0}; }

  bool has_hidden() const { return hidden_units > 0; }

  std::size_t parameter_count() const {
    if (!has_hidden()) return input_dim * num_classes + num_classes;
    return input_dim * hidden_units + hidden_units + hidden_units * num_classes + num_classes;
  }

  void validate() const {
    if (input_dim == 0) throw InvalidArgument("model input_dim must be positive");
    if (num_classes < 2) throw InvalidArgument("model needs at least two classes");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw InvalidArgument("dropout_p must be in [0, 1)");
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// Flat parameter vector. Layout for an MLP: W1 stored input-major
// [input][hidden], b1, W2 stored [hidden][classes], b2. Logistic regression:
// W [input][classes], b.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(const ModelSpec& spec) : spec_(spec), values_(spec.parameter_count(), 0.0) {}
  ParamVector(const ModelSpec& spec, std::vector<double> values) : spec_(spec), values_(std::move(values)) {
    if (values_.size() != spec_.parameter_count()) throw InvalidArgument("parameter count does not match layout");
  }

  const ModelSpec& spec() const { return spec_; }
  std::size_t size() const { return values_.size(); }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<const double> values() const { return values_; }

  ParamVector& operator+=(const ParamVector& o) {
    check_same(o);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += o.values_[i];
    return *this;
  }
  ParamVector& operator-=(const ParamVector& o) {
    check_same(o);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= o.values_[i];
    return *this;
  }
  ParamVector& operator*=(double s) {
    for (double& v : values_) v *= s;
    return *this;
  }
  // this += a * o
  ParamVector& axpy(double a, const ParamVector& o) {
    check_same(o);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += a * o.values_[i];
    return *this;
  }

  friend ParamVector operator+(ParamVector a, const ParamVector& b) { return a += b; }
  friend ParamVector operator-(ParamVector a, const ParamVector& b) { return a -= b; }
  friend ParamVector operator*(double s, ParamVector a) { return a *= s; }

  // a * p + b * q in one pass.
  static ParamVector combine(double a, const ParamVector& p, double b, const ParamVector& q) {
    p.check_same(q);
    ParamVector out(p.spec_);
    for (std::size_t i = 0; i < out.values_.size(); ++i) out.values_[i] = a * p.values_[i] + b * q.values_[i];
    return out;
  }

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  void check_same(const ParamVector& o) const {
    if (o.values_.size() != values_.size()) throw InvalidArgument("parameter vectors have different layouts");
  }

  ModelSpec spec_;
  std::vector<double> values_;
};

// Labelled examples, features stored row-major.
struct EvalSet {
  std::size_t dim = 0;
  std::size_t num_classes = 10;
  std::vector<float> features;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  std::span<const float> row(std::size_t i) const { return {features.data() + i * dim, dim}; }

  void validate() const {
    if (features.size() != dim * labels.size()) throw InvalidArgument("feature rows do not match label count");
    for (int y : labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= num_classes) throw InvalidArgument("label out of range");
    }
  }

  EvalSet subset(std::span<const std::size_t> idx) const {
    EvalSet out{dim, num_classes, {}, {}};
    out.features.reserve(idx.size() * dim);
    out.labels.reserve(idx.size());
    for (std::size_t i : idx) {
      const auto r = row(i);
      out.features.insert(out.features.end(), r.begin(), r.end());
      out.labels.push_back(labels[i]);
    }
    return out;
  }

  friend bool operator==(const EvalSet&, const EvalSet&) = default;
};

enum class Optimizer { Sgd, Adam };

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.5;
  std::size_t batch_size = 64;
  std::size_t epochs = 10;
  Optimizer optimizer = Optimizer::Sgd;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const {
    if (!(lr > 0.0)) throw InvalidArgument("lr must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("momentum must be in [0, 1)");
    if (batch_size == 0) throw InvalidArgument("batch_size must be positive");
  }
};

// Weights uniform in +-1/sqrt(fan_in), biases zero.
inline ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  ParamVector p(spec);
  Rng rng(seed);
  auto fill = [&](std::size_t offset, std::size_t count, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < count; ++i) p[offset + i] = rng.uniform(-bound, bound);
  };
  if (spec.has_hidden()) {
    fill(0, spec.input_dim * spec.hidden_units, spec.input_dim);
    fill(spec.input_dim * spec.hidden_units + spec.hidden_units, spec.hidden_units * spec.num_classes,
         spec.hidden_units);
  } else {
    fill(0, spec.input_dim * spec.num_classes, spec.input_dim);
  }
  return p;
}

namespace detail {

struct Offsets {
  std::size_t w1, b1, w2, b2;
  explicit Offsets(const ModelSpec& s) {
    if (s.has_hidden()) {
      w1 = 0;
      b1 = s.input_dim * s.hidden_units;
      w2 = b1 + s.hidden_units;
      b2 = w2 + s.hidden_units * s.num_classes;
    } else {
      w1 = b1 = 0;
      w2 = 0;
      b2 = s.input_dim * s.num_classes;
    }
  }
};

// Scratch buffers reused across samples.
struct Workspace {
  std::vector<double> pre, hidden, scale, logits, dlogits, dhidden;
  explicit Workspace(const ModelSpec& s)
      : pre(s.hidden_units), hidden(s.hidden_units), scale(s.hidden_units, 1.0), logits(s.num_classes),
        dlogits(s.num_classes), dhidden(s.hidden_units) {}
};

// Forward pass for one sample. When rng is non-null, inverted dropout is
// applied to the hidden layer.
inline void forward(const ModelSpec& s, const Offsets& o, const double* p, std::span<const float> x, Workspace& ws,
                    Rng* rng) {
  const std::size_t H = s.hidden_units, C = s.num_classes;
  if (!s.has_hidden()) {
    std::copy(p + o.b2, p + o.b2 + C, ws.logits.begin());
    for (std::size_t k = 0; k < s.input_dim; ++k) {
      const double xk = x[k];
      if (xk == 0.0) continue;
      const double* w = p + k * C;
      for (std::size_t c = 0; c < C; ++c) ws.logits[c] += xk * w[c];
    }
    return;
  }
  std::copy(p + o.b1, p + o.b1 + H, ws.pre.begin());
  for (std::size_t k = 0; k < s.input_dim; ++k) {
    const double xk = x[k];
    if (xk == 0.0) continue;
    const double* w = p + o.w1 + k * H;
    for (std::size_t j = 0; j < H; ++j) ws.pre[j] += xk * w[j];
  }
  const double keep_scale = 1.0 / (1.0 - s.dropout_p);
  for (std::size_t j = 0; j < H; ++j) {
    double sc = 1.0;
    if (rng != nullptr && s.dropout_p > 0.0) sc = rng->bernoulli(s.dropout_p) ? 0.0 : keep_scale;
    ws.scale[j] = sc;
    ws.hidden[j] = ws.pre[j] > 0.0 ? ws.pre[j] * sc : 0.0;
  }
  std::copy(p + o.b2, p + o.b2 + C, ws.logits.begin());
  for (std::size_t j = 0; j < H; ++j) {
    const double hj = ws.hidden[j];
    if (hj == 0.0) continue;
    const double* w = p + o.w2 + j * C;
    for (std::size_t c = 0; c < C; ++c) ws.logits[c] += hj * w[c];
  }
}

// Softmax cross-entropy of the current logits; leaves p - onehot in dlogits.
inline double softmax_xent(Workspace& ws, int label) {
  const double mx = *std::max_element(ws.logits.begin(), ws.logits.end());
  double z = 0.0;
  for (std::size_t c = 0; c < ws.logits.size(); ++c) {
    ws.dlogits[c] = std::exp(ws.logits[c] - mx);
    z += ws.dlogits[c];
  }
  for (double& d : ws.dlogits) d /= z;
  const auto y = static_cast<std::size_t>(label);
  const double loss = -(ws.logits[y] - mx - std::log(z));
  ws.dlogits[y] -= 1.0;
  return loss;
}

// Adds d(loss)/d(params) for one sample into grad (after forward()).
inline void backward(const ModelSpec& s, const Offsets& o, const double* p, std::span<const float> x, Workspace& ws,
                     double* grad) {
  const std::size_t H = s.hidden_units, C = s.num_classes;
  for (std::size_t c = 0; c < C; ++c) grad[o.b2 + c] += ws.dlogits[c];
  if (!s.has_hidden()) {
    for (std::size_t k = 0; k < s.input_dim; ++k) {
      const double xk = x[k];
      if (xk == 0.0) continue;
      double* g = grad + k * C;
      for (std::size_t c = 0; c < C; ++c) g[c] += xk * ws.dlogits[c];
    }
    return;
  }
  for (std::size_t j = 0; j < H; ++j) {
    const double* w = p + o.w2 + j * C;
    double dh = 0.0;
    for (std::size_t c = 0; c < C; ++c) dh += w[c] * ws.dlogits[c];
    ws.dhidden[j] = ws.pre[j] > 0.0 ? dh * ws.scale[j] : 0.0;
    const double hj = ws.hidden[j];
    if (hj == 0.0) continue;
    double* g = grad + o.w2 + j * C;
    for (std::size_t c = 0; c < C; ++c) g[c] += hj * ws.dlogits[c];
  }
  for (std::size_t j = 0; j < H; ++j) grad[o.b1 + j] += ws.dhidden[j];
  for (std::size_t k = 0; k < s.input_dim; ++k) {
    const double xk = x[k];
    if (xk == 0.0) continue;
    double* g = grad + o.w1 + k * H;
    for (std::size_t j = 0; j < H; ++j) g[j] += xk * ws.dhidden[j];
  }
}

inline void check_compatible(const ModelSpec& spec, const EvalSet& data) {
  if (data.empty()) throw EmptyDataset("dataset is empty");
  if (data.dim != spec.input_dim) throw InvalidArgument("dataset dimension does not match model");
  if (data.num_classes != spec.num_classes) throw InvalidArgument("dataset classes do not match model");
}

}  // namespace detail

struct LossAndGradient {
  double loss = 0.0;
  ParamVector gradient;
};

// Mean cross-entropy and its gradient over data, dropout disabled.
inline LossAndGradient loss_and_gradient(const ParamVector& params, const EvalSet& data) {
  const auto& spec = params.spec();
  detail::check_compatible(spec, data);
  const detail::Offsets off(spec);
  detail::Workspace ws(spec);
  LossAndGradient out{0.0, ParamVector(spec)};
  for (std::size_t i = 0; i < data.size(); ++i) {
    detail::forward(spec, off, params.data(), data.row(i), ws, nullptr);
    out.loss += detail::softmax_xent(ws, data.labels[i]);
    detail::backward(spec, off, params.data(), data.row(i), ws, out.gradient.data());
  }
  const double inv = 1.0 / static_cast<double>(data.size());
  out.loss *= inv;
  out.gradient *= inv;
  return out;
}

inline double mean_loss(const ParamVector& params, const EvalSet& data) {
  const auto& spec = params.spec();
  detail::check_compatible(spec, data);
  const detail::Offsets off(spec);
  detail::Workspace ws(spec);
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    detail::forward(spec, off, params.data(), data.row(i), ws, nullptr);
    total += detail::softmax_xent(ws, data.labels[i]);
  }
  return total / static_cast<double>(data.size());
}

// Minibatch training with cross-entropy loss. Shuffling and dropout masks
// come from seed; the optimizer state starts from zero on every call.
inline ParamVector train_local(const ParamVector& params, const EvalSet& data, const SgdConfig& cfg,
                               std::uint64_t seed) {
  const auto& spec = params.spec();
  detail::check_compatible(spec, data);
  cfg.validate();
  ParamVector w = params;
  if (cfg.epochs == 0) return w;
  const detail::Offsets off(spec);
  detail::Workspace ws(spec);
  const std::size_t P = w.size();
  std::vector<double> grad(P), m1(P, 0.0), m2;
  if (cfg.optimizer == Optimizer::Adam) m2.assign(P, 0.0);
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t b = start; b < stop; ++b) {
        const auto x = data.row(order[b]);
        detail::forward(spec, off, w.data(), x, ws, &rng);
        detail::softmax_xent(ws, data.labels[order[b]]);
        detail::backward(spec, off, w.data(), x, ws, grad.data());
      }
      const double inv = 1.0 / static_cast<double>(stop - start);
      double* pw = w.data();
      ++step;
      if (cfg.optimizer == Optimizer::Sgd) {
        for (std::size_t i = 0; i < P; ++i) {
          m1[i] = cfg.momentum * m1[i] + grad[i] * inv;
          pw[i] -= cfg.lr * m1[i];
        }
      } else {
        const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(step));
        for (std::size_t i = 0; i < P; ++i) {
          const double g = grad[i] * inv;
          m1[i] = cfg.adam_beta1 * m1[i] + (1.0 - cfg.adam_beta1) * g;
          m2[i] = cfg.adam_beta2 * m2[i] + (1.0 - cfg.adam_beta2) * g * g;
          pw[i] -= cfg.lr * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + cfg.adam_eps);
        }
      }
    }
  }
  return w;
}

// Predicted class (argmax, lowest index on ties) for every row.
inline std::vector<int> predict(const ParamVector& params, const EvalSet& data) {
  const auto& spec = params.spec();
  detail::check_compatible(spec, data);
  const detail::Offsets off(spec);
  detail::Workspace ws(spec);
  std::vector<int> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    detail::forward(spec, off, params.data(), data.row(i), ws, nullptr);
    out[i] = static_cast<int>(std::max_element(ws.logits.begin(), ws.logits.end()) - ws.logits.begin());
  }
  return out;
}

inline double evaluate(const ParamVector& params, const EvalSet& data) {
  const auto pred = predict(params, data);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.labels[i];
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

struct GradientCheck {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
};

// Analytic gradient vs central differences on a random sample of
// coordinates. Dropout is forced off.
inline GradientCheck gradient_check(ModelSpec spec, const EvalSet& data, std::uint64_t seed,
                                    std::size_t sample = 50, double h = 1e-5) {
  spec.dropout_p = 0.0;
  auto params = init_params(spec, seed);
  // Nonzero biases so that their gradients are exercised away from zero.
  Rng rng(derive_seed(seed, 1));
  const detail::Offsets off(spec);
  if (spec.has_hidden()) {
    for (std::size_t j = 0; j < spec.hidden_units; ++j) params[off.b1 + j] = rng.uniform(0.05, 0.2);
  }
  for (std::size_t c = 0; c < spec.num_classes; ++c) params[off.b2 + c] = rng.uniform(-0.1, 0.1);

  const auto analytic = loss_and_gradient(params, data).gradient;
  GradientCheck out;
  const std::size_t count = std::min(sample, params.size());
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t i = count == params.size() ? k : rng.below(params.size());
    const double saved = params[i];
    params[i] = saved + h;
    const double up = mean_loss(params, data);
    params[i] = saved - h;
    const double down = mean_loss(params, data);
    params[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
    out.max_relative_error = std::max(out.max_relative_error, std::abs(analytic[i] - numeric) / denom);
    ++out.coordinates;
  }
  return out;
}

// Binary dump: "FCPV", u32 version, u32 input_dim, u32 hidden, u32 classes,
// f32 dropout, u64 count, then count little-endian f32 values.
namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b.data(), 4);
}

inline void put_u64(std::ostream& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v & 0xffffffffu));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

inline void put_f32(std::ostream& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

inline std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw TruncatedFile("parameter file truncated");
  return std::uint32_t{b[0]} | std::uint32_t{b[1]} << 8 | std::uint32_t{b[2]} << 16 | std::uint32_t{b[3]} << 24;
}

inline std::uint64_t get_u64(std::istream& in) {
  const std::uint64_t lo = get_u32(in);
  return lo | (std::uint64_t{get_u32(in)} << 32);
}

inline float get_f32(std::istream& in) {
  const std::uint32_t bits = get_u32(in);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

}  // namespace detail

inline void write_params(std::ostream& out, const ParamVector& p) {
  out.write("FCPV", 4);
  detail::put_u32(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(p.spec().input_dim));
  detail::put_u32(out, static_cast<std::uint32_t>(p.spec().hidden_units));
  detail::put_u32(out, static_cast<std::uint32_t>(p.spec().num_classes));
  detail::put_f32(out, static_cast<float>(p.spec().dropout_p));
  detail::put_u64(out, p.size());
  for (double v : p.values()) detail::put_f32(out, static_cast<float>(v));
}

inline ParamVector read_params(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4)) throw TruncatedFile("parameter file truncated");
  if (std::string(magic.data(), 4) != "FCPV") throw BadMagic("not a parameter file");
  if (detail::get_u32(in) != 1) throw BadMagic("unsupported parameter file version");
  ModelSpec spec;
  spec.input_dim = detail::get_u32(in);
  spec.hidden_units = detail::get_u32(in);
  spec.num_classes = detail::get_u32(in);
  spec.dropout_p = detail::get_f32(in);
  const std::uint64_t count = detail::get_u64(in);
  if (count != spec.parameter_count()) throw CountMismatch("parameter count does not match layout header");
  std::vector<double> values(count);
  for (double& v : values) v = detail::get_f32(in);
  return ParamVector(spec, std::move(values));
}

}  // namespace fedce
