#ifndef PPDE_ADJOINT_H
#define PPDE_ADJOINT_H

#include <cstddef>
#include <span>
#include <vector>

#include "ppde/nrde.h"

namespace ppde {

// Cotangents of a loss with respect to the readouts at every coarse node.
struct NodeCotangents {
  std::vector<double> u;   // one per node
  std::vector<double> dx;  // nodes x input_dim, or empty
};

struct AdjointStats {
  std::size_t node_states = 0;      // hidden states kept from the forward pass
  std::size_t interval_states = 0;  // peak sub-step states held for one interval
};

// Parameter gradient via the backward costate equation, solved interval by
// interval with the adjoint-consistent form of the forward solver. Each
// interval's sub-step trajectory is recomputed from its stored left node.
std::vector<double> adjoint_grad(const NrdeModel& model, const DrivenPath& driven,
                                 std::span<const double> hidden_states,
                                 const NodeCotangents& cot, AdjointStats* stats = nullptr);
std::vector<double> adjoint_grad(const NrdeModel& model, const DrivenPath& driven,
                                 const NodeCotangents& cot, AdjointStats* stats = nullptr);

// Same gradient by reverse-mode differentiation of the fully unrolled solver,
// recording every stage of every step. tape_states receives the number of
// hidden-sized vectors stored.
std::vector<double> backprop_grad(const NrdeModel& model, const DrivenPath& driven,
                                  const NodeCotangents& cot, std::size_t* tape_states = nullptr);

}  // namespace ppde

#endif  // PPDE_ADJOINT_H
