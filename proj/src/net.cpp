#include "ppde/net.h"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ppde {

Mlp::Mlp(std::vector<int> sizes, Activation act) : sizes_(std::move(sizes)), act_(act) {
  if (sizes_.size() < 2) throw std::invalid_argument("Mlp needs at least an input and output size");
  for (int n : sizes_)
    if (n < 1) throw std::invalid_argument("Mlp layer sizes must be positive");
  std::size_t total = 0;
  for (int l = 0; l < layers(); ++l) {
    offsets_.push_back(total);
    const auto in = static_cast<std::size_t>(sizes_[static_cast<std::size_t>(l)]);
    const auto out = static_cast<std::size_t>(sizes_[static_cast<std::size_t>(l) + 1]);
    total += (in + 1) * out;
  }
  params_.assign(total, 0.0);
}

void Mlp::initialize(std::mt19937_64& rng) {
  for (int l = 0; l < layers(); ++l) {
    const auto in = static_cast<std::size_t>(sizes_[static_cast<std::size_t>(l)]);
    const auto out = static_cast<std::size_t>(sizes_[static_cast<std::size_t>(l) + 1]);
    const double bound = std::sqrt(1.0 / static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    double* w = params_.data() + weight_offset(l);
    for (std::size_t i = 0; i < in * out; ++i) w[i] = u(rng);
    for (std::size_t i = 0; i < out; ++i) w[in * out + i] = 0.0;
  }
}

void Mlp::forward(std::span<const double> x, Tape& tape) const {
  if (x.size() != static_cast<std::size_t>(input_dim()))
    throw std::invalid_argument("Mlp input has length " + std::to_string(x.size()) + ", expected " +
                                std::to_string(input_dim()));
  for (double v : x)
    if (!std::isfinite(v)) throw std::domain_error("Mlp input is not finite");
  tape.acts.resize(sizes_.size());
  tape.acts[0].assign(x.begin(), x.end());
  for (int l = 0; l < layers(); ++l) {
    const auto in = static_cast<std::size_t>(sizes_[static_cast<std::size_t>(l)]);
    const auto out = static_cast<std::size_t>(sizes_[static_cast<std::size_t>(l) + 1]);
    const double* w = params_.data() + weight_offset(l);
    const double* b = w + in * out;
    const auto& a = tape.acts[static_cast<std::size_t>(l)];
    auto& z = tape.acts[static_cast<std::size_t>(l) + 1];
    z.resize(out);
    const bool hidden = l + 1 < layers();
    for (std::size_t o = 0; o < out; ++o) {
      double s = b[o];
      const double* row = w + o * in;
      for (std::size_t i = 0; i < in; ++i) s += row[i] * a[i];
      z[o] = (hidden && act_ == Activation::Tanh) ? std::tanh(s) : s;
    }
  }
}

std::vector<double> Mlp::forward(std::span<const double> x) const {
  Tape tape;
  forward(x, tape);
  return std::move(tape.acts.back());
}

void Mlp::backward(const Tape& tape, std::span<const double> cot, std::span<double> grad_x,
                   std::span<double> grad_params) const {
  if (cot.size() != static_cast<std::size_t>(output_dim()))
    throw std::invalid_argument("Mlp cotangent has wrong length");
  if (!grad_x.empty() && grad_x.size() != static_cast<std::size_t>(input_dim()))
    throw std::invalid_argument("Mlp input gradient has wrong length");
  if (!grad_params.empty() && grad_params.size() != params_.size())
    throw std::invalid_argument("Mlp parameter gradient has wrong length");
  if (tape.acts.size() != sizes_.size()) throw std::invalid_argument("Mlp tape does not match");

  std::vector<double> delta(cot.begin(), cot.end());
  std::vector<double> next;
  for (int l = layers() - 1; l >= 0; --l) {
    const auto in = static_cast<std::size_t>(sizes_[static_cast<std::size_t>(l)]);
    const auto out = static_cast<std::size_t>(sizes_[static_cast<std::size_t>(l) + 1]);
    const double* w = params_.data() + weight_offset(l);
    const auto& a = tape.acts[static_cast<std::size_t>(l)];
    if (l + 1 < layers() && act_ == Activation::Tanh) {
      const auto& z = tape.acts[static_cast<std::size_t>(l) + 1];
      for (std::size_t o = 0; o < out; ++o) delta[o] *= 1.0 - z[o] * z[o];
    }
    if (!grad_params.empty()) {
      double* gw = grad_params.data() + weight_offset(l);
      double* gb = gw + in * out;
      for (std::size_t o = 0; o < out; ++o) {
        const double d = delta[o];
        if (d == 0.0) continue;
        double* row = gw + o * in;
        for (std::size_t i = 0; i < in; ++i) row[i] += d * a[i];
        gb[o] += d;
      }
    }
    if (l == 0 && grad_x.empty()) break;
    next.assign(in, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      const double* row = w + o * in;
      for (std::size_t i = 0; i < in; ++i) next[i] += row[i] * d;
    }
    delta.swap(next);
  }
  if (!grad_x.empty()) std::copy(delta.begin(), delta.end(), grad_x.begin());
}

Mlp::Grads Mlp::vjp(std::span<const double> x, std::span<const double> cot) const {
  Tape tape;
  forward(x, tape);
  Grads g;
  g.x.assign(static_cast<std::size_t>(input_dim()), 0.0);
  g.params.assign(params_.size(), 0.0);
  backward(tape, cot, g.x, g.params);
  return g;
}

void adagrad_step(AdagradState& state, std::span<double> params, std::span<const double> grads) {
  if (params.size() != grads.size())
    throw std::invalid_argument("adagrad: parameter and gradient lengths differ");
  if (state.acc.empty()) state.acc.assign(params.size(), 0.0);
  if (state.acc.size() != params.size())
    throw std::invalid_argument("adagrad: accumulator length differs from parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.acc[i] += g * g;
    params[i] -= state.lr * g / (std::sqrt(state.acc[i]) + state.eps);
  }
}

}  // namespace ppde
