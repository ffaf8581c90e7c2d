#ifndef PPDE_NET_H
#define PPDE_NET_H

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace ppde {

enum class Activation { Tanh, Identity };

// Fully connected network: activation on hidden layers, identity on output.
// Parameters are stored flat, per layer: weights row-major (out x in), then
// biases.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<int> sizes, Activation act = Activation::Tanh);

  const std::vector<int>& sizes() const { return sizes_; }
  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  int layers() const { return static_cast<int>(sizes_.size()) - 1; }
  Activation activation() const { return act_; }
  std::size_t param_count() const { return params_.size(); }

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }

  // uniform(+-sqrt(1/n_in)) weights, zero biases
  void initialize(std::mt19937_64& rng);

  // Layer outputs recorded by a forward pass, input first.
  struct Tape {
    std::vector<std::vector<double>> acts;
  };

  std::vector<double> forward(std::span<const double> x) const;
  void forward(std::span<const double> x, Tape& tape) const;

  // Adds d<cot, forward(x)>/dparams to grad_params (if non-empty) and writes
  // d<cot, forward(x)>/dx to grad_x (if non-empty).
  void backward(const Tape& tape, std::span<const double> cot, std::span<double> grad_x,
                std::span<double> grad_params) const;

  struct Grads {
    std::vector<double> x;
    std::vector<double> params;
  };
  Grads vjp(std::span<const double> x, std::span<const double> cot) const;

 private:
  std::size_t weight_offset(int layer) const { return offsets_[static_cast<std::size_t>(layer)]; }

  std::vector<int> sizes_;
  Activation act_ = Activation::Tanh;
  std::vector<double> params_;
  std::vector<std::size_t> offsets_;
};

struct AdagradState {
  double lr = 0.1;
  double eps = 1e-10;
  std::vector<double> acc;
};

// acc += g^2; p -= lr g / (sqrt(acc) + eps)
void adagrad_step(AdagradState& state, std::span<double> params, std::span<const double> grads);

}  // namespace ppde

#endif  // PPDE_NET_H
