#include "ppde/checkpoint.h"

#include <fstream>

namespace ppde {

namespace {
constexpr const char* kFormat = "ppde-nrde-checkpoint";
}

nlohmann::ordered_json checkpoint_to_json(const NrdeModel& model, std::uint64_t init_seed) {
  const NrdeConfig& c = model.config();
  nlohmann::ordered_json j;
  j["format"] = kFormat;
  j["version"] = kCheckpointVersion;
  j["model"] = {{"input_dim", c.input_dim},     {"embed_dim", c.embed_dim},
                {"time_channel", c.time_channel}, {"hidden", c.hidden},
                {"depth", c.depth},             {"xi_hidden", c.xi_hidden},
                {"field_hidden", c.field_hidden}, {"dx_head", c.dx_head},
                {"solver", solver_name(c.solver)}, {"ode_steps", c.ode_steps}};
  nlohmann::ordered_json layers;
  layers["xi"] = model.xi().sizes();
  layers["field"] = model.field().sizes();
  layers["readout_u"] = model.readout_u().sizes();
  if (c.dx_head) layers["readout_dx"] = model.readout_dx().sizes();
  j["layer_sizes"] = layers;
  j["init_seed"] = init_seed;
  j["params"] = model.params();
  return j;
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kFormat) throw CheckpointError("not a model checkpoint");
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion)
      throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    const auto& m = j.at("model");
    NrdeConfig c;
    c.input_dim = m.at("input_dim").get<int>();
    c.embed_dim = m.at("embed_dim").get<int>();
    c.time_channel = m.at("time_channel").get<bool>();
    c.hidden = m.at("hidden").get<int>();
    c.depth = m.at("depth").get<int>();
    c.xi_hidden = m.at("xi_hidden").get<std::vector<int>>();
    c.field_hidden = m.at("field_hidden").get<std::vector<int>>();
    c.dx_head = m.at("dx_head").get<bool>();
    c.solver = parse_solver(m.at("solver").get<std::string>());
    c.ode_steps = m.at("ode_steps").get<int>();
    c.validate();
    Checkpoint ck{NrdeModel(c), j.at("init_seed").get<std::uint64_t>()};
    const auto params = j.at("params").get<std::vector<double>>();
    if (params.size() != ck.model.param_count())
      throw CheckpointError("checkpoint holds " + std::to_string(params.size()) + " parameters, model needs " +
                            std::to_string(ck.model.param_count()));
    if (j.at("layer_sizes").at("field").get<std::vector<int>>() != ck.model.field().sizes())
      throw CheckpointError("checkpoint layer sizes do not match its model settings");
    ck.model.set_params(params);
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("invalid checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::string& path, const NrdeModel& model, std::uint64_t init_seed) {
  std::ofstream out(path);
  if (!out) throw CheckpointError("cannot write checkpoint '" + path + "'");
  out << checkpoint_to_json(model, init_seed).dump(1) << '\n';
  if (!out) throw CheckpointError("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("checkpoint '" + path + "' is not valid JSON: " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace ppde
