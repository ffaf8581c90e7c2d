#ifndef PPDE_NRDE_H
#define PPDE_NRDE_H

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ppde/logsig.h"
#include "ppde/net.h"
#include "ppde/sde.h"

namespace ppde {

enum class Solver { Euler, Midpoint, RK4 };

Solver parse_solver(const std::string& name);
std::string solver_name(Solver s);

// Explicit Runge-Kutta coefficients (strictly lower-triangular a, row-major).
struct ButcherTableau {
  int stages = 1;
  std::vector<double> a;
  std::vector<double> b;
};
const ButcherTableau& tableau(Solver s);

struct NrdeConfig {
  int input_dim = 1;              // d, dimension of the driving path
  int embed_dim = 0;              // 0 disables the embedding layer
  bool time_channel = false;      // append t as the last channel
  int hidden = 15;                // h
  int depth = 2;                  // log-signature depth N
  std::vector<int> xi_hidden;     // hidden widths of the initial layer
  std::vector<int> field_hidden{30, 30};
  bool dx_head = false;
  Solver solver = Solver::Midpoint;
  int ode_steps = 1;              // sub-steps per coarse interval

  int channels() const { return (embed_dim > 0 ? embed_dim : input_dim) + (time_channel ? 1 : 0); }
  void validate() const;
};

// Offsets of each parameter block inside the flat vector, in storage order:
// embedding, xi, field, readout_u, readout_dx.
struct ParamLayout {
  std::size_t embedding = 0, xi = 0, field = 0, readout_u = 0, readout_dx = 0, total = 0;
};

class NrdeModel {
 public:
  explicit NrdeModel(const NrdeConfig& config);

  const NrdeConfig& config() const { return config_; }
  const LyndonBasis& basis() const { return *basis_; }
  int channels() const { return config_.channels(); }
  int hidden() const { return config_.hidden; }
  std::size_t logsig_size() const { return basis_->size(); }

  // embed_dim x input_dim, row-major; empty without an embedding layer
  std::span<const double> embedding() const { return embedding_; }
  const Mlp& xi() const { return xi_; }
  const Mlp& field() const { return field_; }
  const Mlp& readout_u() const { return readout_u_; }
  const Mlp& readout_dx() const { return readout_dx_; }
  Mlp& field_mut() { return field_; }
  Mlp& readout_u_mut() { return readout_u_; }
  Mlp& xi_mut() { return xi_; }

  const ParamLayout& layout() const { return layout_; }
  std::size_t param_count() const { return layout_.total; }
  std::vector<double> params() const;
  void set_params(std::span<const double> flat);
  void initialize(std::uint64_t seed);

  // Embedded sample (with optional time channel) of one raw state.
  void embed_point(std::span<const double> x, double t, std::span<double> out) const;

  // dZ/ds = field(Z) * (w / duration)
  void vector_field(std::span<const double> z, std::span<const double> w, double duration,
                    std::span<double> out) const;

 private:
  NrdeConfig config_;
  std::shared_ptr<const LyndonBasis> basis_;
  std::vector<double> embedding_;
  Mlp xi_, field_, readout_u_, readout_dx_;
  ParamLayout layout_;
};

struct DrivenInterval {
  double start = 0.0;
  double duration = 0.0;
  std::vector<double> logsig;          // Lyndon coefficients over the interval
  std::vector<double> increments;      // embedded fine increments, rows x channels
  std::vector<double> raw_increments;  // raw fine increments, rows x input_dim
};

// Everything the network needs from one driving path.
struct DrivenPath {
  std::vector<double> x0;        // raw initial state
  std::vector<double> z_input;   // embedded initial sample fed to xi
  std::vector<DrivenInterval> intervals;
};

PiecewisePath embed_path(const NrdeModel& model, const PiecewisePath& path);
std::vector<DrivenInterval> interval_features(const NrdeModel& model, const PiecewisePath& embedded,
                                              const GridSpec& grid);
DrivenPath drive(const NrdeModel& model, const PiecewisePath& fine, const GridSpec& grid);

// One fixed step of size dt of dz/ds = field(z) w / duration.
void solver_step(const NrdeModel& model, std::span<const double> w, double duration, double dt,
                 std::span<double> z);

// Hidden states at every coarse node, row-major (intervals+1) x hidden.
std::vector<double> forward_hidden(const NrdeModel& model, const DrivenPath& driven);

struct Prediction {
  std::vector<double> u;   // one per coarse node
  std::vector<double> dx;  // nodes x input_dim when the dx head is present
};

Prediction readout(const NrdeModel& model, std::span<const double> hidden_states);
Prediction predict(const NrdeModel& model, const DrivenPath& driven);
Prediction predict(const NrdeModel& model, const PiecewisePath& fine, const GridSpec& grid);

}  // namespace ppde

#endif  // PPDE_NRDE_H
