#include "ppde/adjoint.h"

#include <cmath>
#include <stdexcept>

namespace ppde {

namespace {

using Vec = std::vector<double>;

void check_cotangents(const NrdeModel& model, const DrivenPath& driven, const NodeCotangents& cot) {
  const std::size_t nodes = driven.intervals.size() + 1;
  if (cot.u.size() != nodes) throw std::invalid_argument("cotangents: need one u entry per node");
  if (!cot.dx.empty()) {
    if (!model.config().dx_head) throw std::invalid_argument("cotangents: model has no dx head");
    if (cot.dx.size() != nodes * static_cast<std::size_t>(model.config().input_dim))
      throw std::invalid_argument("cotangents: dx entries must be nodes x input_dim");
  }
}

// Adds the readout contribution at node j to lambda and the readout gradients.
void readout_jump(const NrdeModel& model, const NodeCotangents& cot, std::size_t j,
                  std::span<const double> z, Vec& lambda, Vec& grad) {
  const auto& lay = model.layout();
  const auto h = lambda.size();
  Vec gz(h);
  if (cot.u[j] != 0.0) {
    Mlp::Tape tape;
    model.readout_u().forward(z, tape);
    const double c = cot.u[j];
    model.readout_u().backward(tape, std::span<const double>(&c, 1), gz,
                               std::span<double>(grad.data() + lay.readout_u,
                                                 model.readout_u().param_count()));
    for (std::size_t r = 0; r < h; ++r) lambda[r] += gz[r];
  }
  if (!cot.dx.empty()) {
    const auto d = static_cast<std::size_t>(model.config().input_dim);
    std::span<const double> c(cot.dx.data() + j * d, d);
    bool any = false;
    for (double v : c) any = any || v != 0.0;
    if (!any) return;
    Mlp::Tape tape;
    model.readout_dx().forward(z, tape);
    model.readout_dx().backward(tape, c, gz,
                                std::span<double>(grad.data() + lay.readout_dx,
                                                  model.readout_dx().param_count()));
    for (std::size_t r = 0; r < h; ++r) lambda[r] += gz[r];
  }
}

// Reverse of one evaluation of the vector field at y: given the cotangent
// kappa on field(y) w / duration, writes the cotangent on y to nu and
// accumulates parameter and log-signature cotangents.
void field_vjp(const NrdeModel& model, std::span<const double> y, std::span<const double> w,
               double duration, std::span<const double> kappa, std::span<double> nu, Vec& grad,
               Vec& cot_w) {
  const auto h = static_cast<std::size_t>(model.hidden());
  const std::size_t nb = model.logsig_size();
  Mlp::Tape tape;
  model.field().forward(y, tape);
  const auto& g = tape.acts.back();
  Vec cot_g(h * nb);
  for (std::size_t r = 0; r < h; ++r) {
    const double k = kappa[r] / duration;
    for (std::size_t c = 0; c < nb; ++c) {
      cot_g[r * nb + c] = k * w[c];
      cot_w[c] += k * g[r * nb + c];
    }
  }
  model.field().backward(tape, cot_g, nu,
                         std::span<double>(grad.data() + model.layout().field,
                                           model.field().param_count()));
}

// dM += cot_rows (rows x channels, spatial part only) outer raw_rows (rows x d)
void embedding_outer(const NrdeModel& model, std::span<const double> cot_rows,
                     std::span<const double> raw_rows, Vec& grad) {
  const auto d = static_cast<std::size_t>(model.config().input_dim);
  const auto e = static_cast<std::size_t>(model.config().embed_dim);
  const auto c = static_cast<std::size_t>(model.channels());
  const std::size_t rows = raw_rows.size() / d;
  double* gm = grad.data() + model.layout().embedding;
  for (std::size_t k = 0; k < rows; ++k)
    for (std::size_t r = 0; r < e; ++r) {
      const double a = cot_rows[k * c + r];
      if (a == 0.0) continue;
      for (std::size_t q = 0; q < d; ++q) gm[r * d + q] += a * raw_rows[k * d + q];
    }
}

void interval_embedding_grad(const NrdeModel& model, const DrivenInterval& iv, const Vec& cot_w,
                             Vec& grad) {
  if (model.config().embed_dim == 0) return;
  if (iv.raw_increments.empty())
    throw std::invalid_argument("embedding gradient needs raw increments (use drive())");
  const auto cot_inc = logsig_increments_vjp(model.basis(), iv.increments, cot_w);
  embedding_outer(model, cot_inc, iv.raw_increments, grad);
}

void initial_layer_grad(const NrdeModel& model, const DrivenPath& driven, const Vec& lambda,
                        Vec& grad) {
  Mlp::Tape tape;
  model.xi().forward(driven.z_input, tape);
  Vec gy(static_cast<std::size_t>(model.channels()));
  model.xi().backward(tape, lambda, gy,
                      std::span<double>(grad.data() + model.layout().xi, model.xi().param_count()));
  if (model.config().embed_dim > 0) embedding_outer(model, gy, driven.x0, grad);
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

}  // namespace

std::vector<double> adjoint_grad(const NrdeModel& model, const DrivenPath& driven,
                                 std::span<const double> hidden_states, const NodeCotangents& cot,
                                 AdjointStats* stats) {
  check_cotangents(model, driven, cot);
  const auto h = static_cast<std::size_t>(model.hidden());
  const std::size_t n = driven.intervals.size();
  if (hidden_states.size() != (n + 1) * h)
    throw std::invalid_argument("adjoint: hidden states do not match the interval grid");
  const int steps = model.config().ode_steps;
  const Solver solver = model.config().solver;
  const std::size_t nb = model.logsig_size();

  Vec grad(model.param_count(), 0.0);
  Vec lambda(h, 0.0);
  readout_jump(model, cot, n, hidden_states.subspan(n * h, h), lambda, grad);

  // sub-step trajectory of the current interval only
  Vec sub(static_cast<std::size_t>(steps + 1) * h);
  Vec k1(h), k2(h), k3(h), y2(h), y3(h), y4(h);
  Vec nu1(h), nu2(h), nu3(h), nu4(h), kap(h), cot_w(nb);
  for (std::size_t ii = n; ii-- > 0;) {
    const auto& iv = driven.intervals[ii];
    const double dur = iv.duration;
    const double dt = dur / steps;
    std::copy(hidden_states.begin() + static_cast<long>(ii * h),
              hidden_states.begin() + static_cast<long>((ii + 1) * h), sub.begin());
    for (int s = 0; s < steps; ++s) {
      std::span<double> next(sub.data() + static_cast<std::size_t>(s + 1) * h, h);
      std::copy(sub.begin() + static_cast<long>(s * h), sub.begin() + static_cast<long>((s + 1) * h),
                next.begin());
      solver_step(model, iv.logsig, dur, dt, next);
    }
    std::fill(cot_w.begin(), cot_w.end(), 0.0);

    for (int s = steps; s-- > 0;) {
      std::span<const double> z(sub.data() + static_cast<std::size_t>(s) * h, h);
      switch (solver) {
        case Solver::Euler: {
          for (std::size_t r = 0; r < h; ++r) kap[r] = dt * lambda[r];
          field_vjp(model, z, iv.logsig, dur, kap, nu1, grad, cot_w);
          axpy(1.0, nu1, lambda);
          break;
        }
        case Solver::Midpoint: {
          model.vector_field(z, iv.logsig, dur, k1);
          for (std::size_t r = 0; r < h; ++r) y2[r] = z[r] + 0.5 * dt * k1[r];
          for (std::size_t r = 0; r < h; ++r) kap[r] = dt * lambda[r];
          field_vjp(model, y2, iv.logsig, dur, kap, nu2, grad, cot_w);
          for (std::size_t r = 0; r < h; ++r) kap[r] = 0.5 * dt * nu2[r];
          field_vjp(model, z, iv.logsig, dur, kap, nu1, grad, cot_w);
          axpy(1.0, nu2, lambda);
          axpy(1.0, nu1, lambda);
          break;
        }
        case Solver::RK4: {
          model.vector_field(z, iv.logsig, dur, k1);
          for (std::size_t r = 0; r < h; ++r) y2[r] = z[r] + 0.5 * dt * k1[r];
          model.vector_field(y2, iv.logsig, dur, k2);
          for (std::size_t r = 0; r < h; ++r) y3[r] = z[r] + 0.5 * dt * k2[r];
          model.vector_field(y3, iv.logsig, dur, k3);
          for (std::size_t r = 0; r < h; ++r) y4[r] = z[r] + dt * k3[r];
          for (std::size_t r = 0; r < h; ++r) kap[r] = dt / 6.0 * lambda[r];
          field_vjp(model, y4, iv.logsig, dur, kap, nu4, grad, cot_w);
          for (std::size_t r = 0; r < h; ++r) kap[r] = dt / 3.0 * lambda[r] + dt * nu4[r];
          field_vjp(model, y3, iv.logsig, dur, kap, nu3, grad, cot_w);
          for (std::size_t r = 0; r < h; ++r) kap[r] = dt / 3.0 * lambda[r] + 0.5 * dt * nu3[r];
          field_vjp(model, y2, iv.logsig, dur, kap, nu2, grad, cot_w);
          for (std::size_t r = 0; r < h; ++r) kap[r] = dt / 6.0 * lambda[r] + 0.5 * dt * nu2[r];
          field_vjp(model, z, iv.logsig, dur, kap, nu1, grad, cot_w);
          for (std::size_t r = 0; r < h; ++r) lambda[r] += nu1[r] + nu2[r] + nu3[r] + nu4[r];
          break;
        }
      }
    }
    interval_embedding_grad(model, iv, cot_w, grad);
    readout_jump(model, cot, ii, hidden_states.subspan(ii * h, h), lambda, grad);
    for (double v : lambda)
      if (!std::isfinite(v)) throw std::runtime_error("adjoint: non-finite costate");
  }
  initial_layer_grad(model, driven, lambda, grad);

  if (stats) {
    stats->node_states = n + 1;
    // sub-step trajectory plus the stage vectors of one step
    const int stages = tableau(solver).stages;
    stats->interval_states = static_cast<std::size_t>(steps + 1 + 2 * stages);
  }
  return grad;
}

std::vector<double> adjoint_grad(const NrdeModel& model, const DrivenPath& driven,
                                 const NodeCotangents& cot, AdjointStats* stats) {
  const auto states = forward_hidden(model, driven);
  return adjoint_grad(model, driven, states, cot, stats);
}

std::vector<double> backprop_grad(const NrdeModel& model, const DrivenPath& driven,
                                  const NodeCotangents& cot, std::size_t* tape_states) {
  check_cotangents(model, driven, cot);
  const auto h = static_cast<std::size_t>(model.hidden());
  const std::size_t n = driven.intervals.size();
  const int steps = model.config().ode_steps;
  const ButcherTableau& tab = tableau(model.config().solver);
  const auto S = static_cast<std::size_t>(tab.stages);
  const std::size_t nb = model.logsig_size();

  // Forward sweep recording every stage input, stage output and field tape.
  struct StepRecord {
    std::vector<Vec> stage_in;
    std::vector<Vec> stage_out;
    std::vector<Mlp::Tape> tapes;
  };
  std::vector<std::vector<StepRecord>> records(n);
  Vec nodes((n + 1) * h);
  {
    Mlp::Tape tape;
    model.xi().forward(driven.z_input, tape);
    std::copy(tape.acts.back().begin(), tape.acts.back().end(), nodes.begin());
  }
  std::size_t stored = n + 1;
  Vec z(h);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& iv = driven.intervals[i];
    const double dt = iv.duration / steps;
    std::copy(nodes.begin() + static_cast<long>(i * h), nodes.begin() + static_cast<long>((i + 1) * h),
              z.begin());
    records[i].resize(static_cast<std::size_t>(steps));
    for (int s = 0; s < steps; ++s) {
      auto& rec = records[i][static_cast<std::size_t>(s)];
      rec.stage_in.assign(S, Vec(h));
      rec.stage_out.assign(S, Vec(h));
      rec.tapes.resize(S);
      for (std::size_t st = 0; st < S; ++st) {
        Vec& y = rec.stage_in[st];
        y = z;
        for (std::size_t m = 0; m < st; ++m) {
          const double a = tab.a[st * S + m];
          if (a != 0.0) axpy(dt * a, rec.stage_out[m], y);
        }
        model.field().forward(y, rec.tapes[st]);
        const auto& g = rec.tapes[st].acts.back();
        for (std::size_t r = 0; r < h; ++r) {
          double v = 0.0;
          for (std::size_t c = 0; c < nb; ++c) v += g[r * nb + c] * iv.logsig[c];
          rec.stage_out[st][r] = v / iv.duration;
        }
      }
      for (std::size_t st = 0; st < S; ++st) axpy(dt * tab.b[st], rec.stage_out[st], z);
      stored += 2 * S;
      for (const auto& t : rec.tapes) stored += t.acts.size();
    }
    std::copy(z.begin(), z.end(), nodes.begin() + static_cast<long>((i + 1) * h));
  }
  if (tape_states) *tape_states = stored;

  // Reverse sweep.
  Vec grad(model.param_count(), 0.0);
  Vec lambda(h, 0.0);
  readout_jump(model, cot, n, std::span<const double>(nodes.data() + n * h, h), lambda, grad);
  std::vector<Vec> nu(S, Vec(h));
  Vec kappa(h), cot_g, cot_w(nb);
  for (std::size_t i = n; i-- > 0;) {
    const auto& iv = driven.intervals[i];
    const double dt = iv.duration / steps;
    std::fill(cot_w.begin(), cot_w.end(), 0.0);
    for (int s = steps; s-- > 0;) {
      const auto& rec = records[i][static_cast<std::size_t>(s)];
      for (std::size_t st = S; st-- > 0;) {
        for (std::size_t r = 0; r < h; ++r) kappa[r] = dt * tab.b[st] * lambda[r];
        for (std::size_t m = st + 1; m < S; ++m) {
          const double a = tab.a[m * S + st];
          if (a != 0.0) axpy(dt * a, nu[m], kappa);
        }
        const auto& g = rec.tapes[st].acts.back();
        cot_g.assign(h * nb, 0.0);
        for (std::size_t r = 0; r < h; ++r)
          for (std::size_t c = 0; c < nb; ++c) {
            cot_g[r * nb + c] = kappa[r] * iv.logsig[c] / iv.duration;
            cot_w[c] += kappa[r] * g[r * nb + c] / iv.duration;
          }
        model.field().backward(rec.tapes[st], cot_g, nu[st],
                               std::span<double>(grad.data() + model.layout().field,
                                                 model.field().param_count()));
      }
      for (std::size_t st = 0; st < S; ++st) axpy(1.0, nu[st], lambda);
    }
    interval_embedding_grad(model, iv, cot_w, grad);
    readout_jump(model, cot, i, std::span<const double>(nodes.data() + i * h, h), lambda, grad);
  }
  initial_layer_grad(model, driven, lambda, grad);
  return grad;
}

}  // namespace ppde
