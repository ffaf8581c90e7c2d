#include "ppde/nrde.h"

#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

namespace ppde {

Solver parse_solver(const std::string& name) {
  if (name == "euler" || name == "Euler") return Solver::Euler;
  if (name == "midpoint" || name == "Midpoint") return Solver::Midpoint;
  if (name == "rk4" || name == "RK4") return Solver::RK4;
  throw std::invalid_argument("unknown ODE solver '" + name + "' (euler, midpoint, rk4)");
}

std::string solver_name(Solver s) {
  switch (s) {
    case Solver::Euler: return "euler";
    case Solver::Midpoint: return "midpoint";
    case Solver::RK4: return "rk4";
  }
  return "?";
}

const ButcherTableau& tableau(Solver s) {
  static const ButcherTableau euler{1, {0.0}, {1.0}};
  static const ButcherTableau midpoint{2, {0.0, 0.0, 0.5, 0.0}, {0.0, 1.0}};
  static const ButcherTableau rk4{4,
                                  {0.0, 0.0, 0.0, 0.0,  //
                                   0.5, 0.0, 0.0, 0.0,  //
                                   0.0, 0.5, 0.0, 0.0,  //
                                   0.0, 0.0, 1.0, 0.0},
                                  {1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0}};
  switch (s) {
    case Solver::Euler: return euler;
    case Solver::Midpoint: return midpoint;
    case Solver::RK4: return rk4;
  }
  return euler;
}

void NrdeConfig::validate() const {
  if (input_dim < 1) throw std::invalid_argument("model input_dim must be >= 1");
  if (embed_dim < 0) throw std::invalid_argument("model embed_dim must be >= 0");
  if (hidden < 1) throw std::invalid_argument("model hidden must be >= 1");
  if (depth < 1) throw std::invalid_argument("model depth must be >= 1");
  if (ode_steps < 1) throw std::invalid_argument("model ode_steps must be >= 1");
  for (int w : xi_hidden)
    if (w < 1) throw std::invalid_argument("model xi widths must be positive");
  for (int w : field_hidden)
    if (w < 1) throw std::invalid_argument("model field widths must be positive");
}

namespace {
std::vector<int> layer_sizes(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> s{in};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(out);
  return s;
}
}  // namespace

NrdeModel::NrdeModel(const NrdeConfig& config) : config_(config) {
  config_.validate();
  const int c = config_.channels();
  basis_ = std::make_shared<const LyndonBasis>(c, config_.depth);
  const int beta_n = static_cast<int>(basis_->size());
  const int h = config_.hidden;
  if (config_.embed_dim > 0)
    embedding_.assign(static_cast<std::size_t>(config_.embed_dim * config_.input_dim), 0.0);
  xi_ = Mlp(layer_sizes(c, config_.xi_hidden, h));
  field_ = Mlp(layer_sizes(h, config_.field_hidden, h * beta_n));
  readout_u_ = Mlp({h, 1});
  if (config_.dx_head) readout_dx_ = Mlp({h, config_.input_dim});

  layout_.embedding = 0;
  layout_.xi = embedding_.size();
  layout_.field = layout_.xi + xi_.param_count();
  layout_.readout_u = layout_.field + field_.param_count();
  layout_.readout_dx = layout_.readout_u + readout_u_.param_count();
  layout_.total = layout_.readout_dx + readout_dx_.param_count();
}

std::vector<double> NrdeModel::params() const {
  std::vector<double> out;
  out.reserve(layout_.total);
  out.insert(out.end(), embedding_.begin(), embedding_.end());
  for (const Mlp* m : {&xi_, &field_, &readout_u_, &readout_dx_})
    out.insert(out.end(), m->params().begin(), m->params().end());
  return out;
}

void NrdeModel::set_params(std::span<const double> flat) {
  if (flat.size() != layout_.total)
    throw std::invalid_argument("parameter vector has length " + std::to_string(flat.size()) +
                                ", model expects " + std::to_string(layout_.total));
  auto it = flat.begin();
  std::copy(it, it + static_cast<long>(embedding_.size()), embedding_.begin());
  it += static_cast<long>(embedding_.size());
  for (Mlp* m : {&xi_, &field_, &readout_u_, &readout_dx_}) {
    std::copy(it, it + static_cast<long>(m->param_count()), m->params().begin());
    it += static_cast<long>(m->param_count());
  }
}

void NrdeModel::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  if (!embedding_.empty()) {
    const double bound = std::sqrt(1.0 / config_.input_dim);
    std::uniform_real_distribution<double> u(-bound, bound);
    for (double& v : embedding_) v = u(rng);
  }
  xi_.initialize(rng);
  field_.initialize(rng);
  readout_u_.initialize(rng);
  if (readout_dx_.layers() > 0) readout_dx_.initialize(rng);
}

void NrdeModel::embed_point(std::span<const double> x, double t, std::span<double> out) const {
  const auto d = static_cast<std::size_t>(config_.input_dim);
  if (x.size() != d) throw std::invalid_argument("embed: sample has wrong dimension");
  if (out.size() != static_cast<std::size_t>(channels()))
    throw std::invalid_argument("embed: output has wrong dimension");
  std::size_t spatial = d;
  if (config_.embed_dim > 0) {
    spatial = static_cast<std::size_t>(config_.embed_dim);
    for (std::size_t r = 0; r < spatial; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += embedding_[r * d + c] * x[c];
      out[r] = s;
    }
  } else {
    std::copy(x.begin(), x.end(), out.begin());
  }
  if (config_.time_channel) out[spatial] = t;
}

void NrdeModel::vector_field(std::span<const double> z, std::span<const double> w,
                             double duration, std::span<double> out) const {
  const auto h = static_cast<std::size_t>(config_.hidden);
  const std::size_t nb = basis_->size();
  const auto g = field_.forward(z);
  for (std::size_t r = 0; r < h; ++r) {
    double s = 0.0;
    const double* row = g.data() + r * nb;
    for (std::size_t c = 0; c < nb; ++c) s += row[c] * w[c];
    out[r] = s / duration;
  }
}

PiecewisePath embed_path(const NrdeModel& model, const PiecewisePath& path) {
  if (path.dim() != model.config().input_dim)
    throw std::invalid_argument("embed_path: path dimension " + std::to_string(path.dim()) +
                                " does not match model input_dim " +
                                std::to_string(model.config().input_dim));
  const auto c = static_cast<std::size_t>(model.channels());
  std::vector<double> values(path.size() * c);
  for (std::size_t k = 0; k < path.size(); ++k)
    model.embed_point(path.point(k), path.time(k), std::span<double>(values.data() + k * c, c));
  return PiecewisePath(path.times(), std::move(values), static_cast<int>(c));
}

std::vector<DrivenInterval> interval_features(const NrdeModel& model, const PiecewisePath& embedded,
                                              const GridSpec& grid) {
  grid.validate();
  if (embedded.dim() != model.channels())
    throw std::invalid_argument("interval_features: path has wrong channel count");
  if (embedded.size() != static_cast<std::size_t>(grid.fine_steps()) + 1)
    throw std::invalid_argument("interval_features: path does not match the fine grid");
  const auto c = static_cast<std::size_t>(model.channels());
  const auto refine = static_cast<std::size_t>(grid.refine);
  std::vector<DrivenInterval> out(static_cast<std::size_t>(grid.coarse_steps));
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto& iv = out[i];
    const std::size_t first = i * refine;
    iv.start = embedded.time(first);
    iv.duration = embedded.time(first + refine) - iv.start;
    iv.increments.resize(refine * c);
    for (std::size_t k = 0; k < refine; ++k) {
      auto a = embedded.point(first + k);
      auto b = embedded.point(first + k + 1);
      for (std::size_t j = 0; j < c; ++j) iv.increments[k * c + j] = b[j] - a[j];
    }
    iv.logsig = logsig_from_increments(model.basis(), iv.increments);
  }
  return out;
}

DrivenPath drive(const NrdeModel& model, const PiecewisePath& fine, const GridSpec& grid) {
  auto embedded = embed_path(model, fine);
  DrivenPath out;
  out.intervals = interval_features(model, embedded, grid);
  auto x0 = fine.point(0);
  out.x0.assign(x0.begin(), x0.end());
  auto z0 = embedded.point(0);
  out.z_input.assign(z0.begin(), z0.end());
  if (model.config().embed_dim > 0) {
    const auto d = static_cast<std::size_t>(fine.dim());
    const auto refine = static_cast<std::size_t>(grid.refine);
    for (std::size_t i = 0; i < out.intervals.size(); ++i) {
      auto& raw = out.intervals[i].raw_increments;
      raw.resize(refine * d);
      for (std::size_t k = 0; k < refine; ++k) {
        auto a = fine.point(i * refine + k);
        auto b = fine.point(i * refine + k + 1);
        for (std::size_t j = 0; j < d; ++j) raw[k * d + j] = b[j] - a[j];
      }
    }
  }
  return out;
}

void solver_step(const NrdeModel& model, std::span<const double> w, double duration, double dt,
                 std::span<double> z) {
  const auto h = z.size();
  std::vector<double> k1(h), y(h);
  switch (model.config().solver) {
    case Solver::Euler:
      model.vector_field(z, w, duration, k1);
      for (std::size_t r = 0; r < h; ++r) z[r] += dt * k1[r];
      break;
    case Solver::Midpoint: {
      model.vector_field(z, w, duration, k1);
      for (std::size_t r = 0; r < h; ++r) y[r] = z[r] + 0.5 * dt * k1[r];
      std::vector<double> k2(h);
      model.vector_field(y, w, duration, k2);
      for (std::size_t r = 0; r < h; ++r) z[r] += dt * k2[r];
      break;
    }
    case Solver::RK4: {
      std::vector<double> k2(h), k3(h), k4(h);
      model.vector_field(z, w, duration, k1);
      for (std::size_t r = 0; r < h; ++r) y[r] = z[r] + 0.5 * dt * k1[r];
      model.vector_field(y, w, duration, k2);
      for (std::size_t r = 0; r < h; ++r) y[r] = z[r] + 0.5 * dt * k2[r];
      model.vector_field(y, w, duration, k3);
      for (std::size_t r = 0; r < h; ++r) y[r] = z[r] + dt * k3[r];
      model.vector_field(y, w, duration, k4);
      for (std::size_t r = 0; r < h; ++r)
        z[r] += dt / 6.0 * (k1[r] + 2.0 * k2[r] + 2.0 * k3[r] + k4[r]);
      break;
    }
  }
}

std::vector<double> forward_hidden(const NrdeModel& model, const DrivenPath& driven) {
  const auto h = static_cast<std::size_t>(model.hidden());
  const std::size_t n = driven.intervals.size();
  std::vector<double> states((n + 1) * h);
  const auto z0 = model.xi().forward(driven.z_input);
  std::copy(z0.begin(), z0.end(), states.begin());
  const int steps = model.config().ode_steps;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& iv = driven.intervals[i];
    if (!(iv.duration > 0.0)) throw std::invalid_argument("driven interval has non-positive duration");
    if (iv.logsig.size() != model.logsig_size())
      throw std::invalid_argument("driven interval log-signature has wrong length");
    std::span<double> z(states.data() + (i + 1) * h, h);
    std::copy(states.begin() + static_cast<long>(i * h), states.begin() + static_cast<long>((i + 1) * h),
              z.begin());
    const double dt = iv.duration / steps;
    for (int s = 0; s < steps; ++s) solver_step(model, iv.logsig, iv.duration, dt, z);
    for (double v : z) {
      if (!std::isfinite(v)) {
        std::ostringstream os;
        os << "non-finite hidden state in interval " << i;
        throw std::runtime_error(os.str());
      }
    }
  }
  return states;
}

Prediction readout(const NrdeModel& model, std::span<const double> hidden_states) {
  const auto h = static_cast<std::size_t>(model.hidden());
  const std::size_t nodes = hidden_states.size() / h;
  Prediction p;
  p.u.resize(nodes);
  const bool dx = model.config().dx_head;
  for (std::size_t j = 0; j < nodes; ++j) {
    auto z = hidden_states.subspan(j * h, h);
    p.u[j] = model.readout_u().forward(z)[0];
    if (dx) {
      auto g = model.readout_dx().forward(z);
      p.dx.insert(p.dx.end(), g.begin(), g.end());
    }
  }
  return p;
}

Prediction predict(const NrdeModel& model, const DrivenPath& driven) {
  return readout(model, forward_hidden(model, driven));
}

Prediction predict(const NrdeModel& model, const PiecewisePath& fine, const GridSpec& grid) {
  return predict(model, drive(model, fine, grid));
}

}  // namespace ppde
