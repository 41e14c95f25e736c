#include "dfw/nn.hpp"

#include "dfw/blob_io.hpp"

namespace dfw {

OutputActivation output_activation_from_string(const std::string& s) {
  if (s == "linear") return OutputActivation::kLinear;
  if (s == "exponential") return OutputActivation::kExponential;
  throw std::invalid_argument("unknown output activation '" + s + "'");
}

nlohmann::json architecture_json(const Mlp<double>& net) {
  return {{"input_dim", net.input_dim()},
          {"hidden", net.hidden()},
          {"output_dim", net.output_dim()},
          {"hidden_activation", "relu"},
          {"output_activation", to_string(net.activation())}};
}

void save_mlp(const std::filesystem::path& path, const Mlp<double>& net, const nlohmann::json& meta) {
  const nlohmann::json header = {{"architecture", architecture_json(net)}, {"meta", meta}};
  write_blob(path, header, {net.params().data(), std::size_t(net.size())});
}

Mlp<double> load_mlp(const std::filesystem::path& path, nlohmann::json* meta) {
  Blob blob = read_blob(path);
  const auto& a = blob.header.at("architecture");
  Mlp<double> net(a.at("input_dim"), a.at("hidden").get<std::vector<int>>(), a.at("output_dim"),
                  output_activation_from_string(a.at("output_activation")));
  if (std::size_t(net.size()) != blob.payload.size()) {
    throw std::runtime_error("checkpoint " + path.string() + ": parameter count mismatch");
  }
  net.params() = Eigen::Map<const Eigen::VectorXd>(blob.payload.data(), net.size());
  if (meta) *meta = blob.header.value("meta", nlohmann::json::object());
  return net;
}

}  // namespace dfw
