#ifndef PPDE_CHECKPOINT_H
#define PPDE_CHECKPOINT_H

#include <cstdint>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "ppde/nrde.h"

namespace ppde {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  NrdeModel model;
  std::uint64_t init_seed = 0;
};

inline constexpr int kCheckpointVersion = 1;

// JSON with the model configuration, per-block layer sizes, the
// initialization seed and the flat parameter vector.
nlohmann::ordered_json checkpoint_to_json(const NrdeModel& model, std::uint64_t init_seed);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const std::string& path, const NrdeModel& model, std::uint64_t init_seed);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace ppde

#endif  // PPDE_CHECKPOINT_H
