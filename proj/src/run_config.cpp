#include "scribda/run_config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

namespace scribda {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) {
      throw ConfigError("unknown config key \"" + it.key() + "\" in " + where);
    }
  }
}

DaMode da_mode_from_string(const std::string& s) {
  if (s == "strict-cross") return DaMode::kStrictCross;
  if (s == "joint") return DaMode::kJoint;
  throw ConfigError("unknown da_mode: " + s);
}

DataLoss data_loss_from_string(const std::string& s) {
  if (s == "dice") return DataLoss::kDice;
  if (s == "cross-entropy") return DataLoss::kCrossEntropy;
  throw ConfigError("unknown data_loss: " + s);
}

void apply_json(TrainConfig& c, const json& j) {
  reject_unknown(j, {"lr", "weight_decay", "batch_source", "batch_target", "lr_drop_factor",
                     "lr_patience_epochs", "early_stop_epochs", "da_warmup_epochs", "data_loss",
                     "mode", "seed", "max_epochs", "h1", "feature_channels", "augment",
                     "threads", "kernel"},
                 "train config");
  if (j.contains("lr")) c.lr = j["lr"].get<double>();
  if (j.contains("weight_decay")) c.weight_decay = j["weight_decay"].get<double>();
  if (j.contains("batch_source")) c.batch_source = j["batch_source"].get<int>();
  if (j.contains("batch_target")) c.batch_target = j["batch_target"].get<int>();
  if (j.contains("lr_drop_factor")) c.lr_drop_factor = j["lr_drop_factor"].get<double>();
  if (j.contains("lr_patience_epochs")) c.lr_patience_epochs = j["lr_patience_epochs"].get<int>();
  if (j.contains("early_stop_epochs")) c.early_stop_epochs = j["early_stop_epochs"].get<int>();
  if (j.contains("da_warmup_epochs")) c.da_warmup_epochs = j["da_warmup_epochs"].get<int>();
  if (j.contains("data_loss")) c.data_loss = data_loss_from_string(j["data_loss"].get<std::string>());
  if (j.contains("mode")) c.mode = train_mode_from_string(j["mode"].get<std::string>());
  if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("max_epochs")) c.max_epochs = j["max_epochs"].get<int>();
  if (j.contains("h1")) c.h1 = j["h1"].get<int>();
  if (j.contains("feature_channels")) c.feature_channels = j["feature_channels"].get<int>();
  if (j.contains("augment")) c.augment = j["augment"].get<bool>();
  if (j.contains("threads")) c.threads = j["threads"].get<int>();

  if (j.contains("kernel")) {
    const json& k = j["kernel"];
    reject_unknown(k, {"sigma_alpha", "sigma_beta", "sigma_gamma", "lambda_i", "lambda_da",
                       "da_mode", "da_channels"},
                   "kernel block");
    if (k.contains("sigma_alpha")) c.kernel.sigma_alpha = k["sigma_alpha"].get<double>();
    if (k.contains("sigma_beta")) c.kernel.sigma_beta = k["sigma_beta"].get<double>();
    if (k.contains("sigma_gamma")) c.kernel.sigma_gamma = k["sigma_gamma"].get<double>();
    if (k.contains("lambda_i")) c.kernel.lambda_i = k["lambda_i"].get<double>();
    if (k.contains("lambda_da")) c.kernel.lambda_da = k["lambda_da"].get<double>();
    if (k.contains("da_mode")) c.kernel.da_mode = da_mode_from_string(k["da_mode"].get<std::string>());
    if (k.contains("da_channels")) c.kernel.da_channels = k["da_channels"].get<int>();
  }
}

// Overrides use flat keys; kernel fields are addressed directly (e.g. "lambda_da").
void apply_override(TrainConfig& c, const std::string& key, const std::string& value) {
  auto as_double = [&] { return std::stod(value); };
  auto as_int = [&] { return std::stoi(value); };
  if (key == "lr") c.lr = as_double();
  else if (key == "weight_decay") c.weight_decay = as_double();
  else if (key == "batch_source") c.batch_source = as_int();
  else if (key == "batch_target") c.batch_target = as_int();
  else if (key == "lr_drop_factor") c.lr_drop_factor = as_double();
  else if (key == "lr_patience_epochs") c.lr_patience_epochs = as_int();
  else if (key == "early_stop_epochs") c.early_stop_epochs = as_int();
  else if (key == "da_warmup_epochs") c.da_warmup_epochs = as_int();
  else if (key == "data_loss") c.data_loss = data_loss_from_string(value);
  else if (key == "mode") c.mode = train_mode_from_string(value);
  else if (key == "seed") c.seed = std::stoull(value);
  else if (key == "max_epochs") c.max_epochs = as_int();
  else if (key == "h1") c.h1 = as_int();
  else if (key == "feature_channels") c.feature_channels = as_int();
  else if (key == "augment") c.augment = (value == "true" || value == "1");
  else if (key == "threads") c.threads = as_int();
  else if (key == "sigma_alpha") c.kernel.sigma_alpha = as_double();
  else if (key == "sigma_beta") c.kernel.sigma_beta = as_double();
  else if (key == "sigma_gamma") c.kernel.sigma_gamma = as_double();
  else if (key == "lambda_i") c.kernel.lambda_i = as_double();
  else if (key == "lambda_da") c.kernel.lambda_da = as_double();
  else if (key == "da_mode") c.kernel.da_mode = da_mode_from_string(value);
  else if (key == "da_channels") c.kernel.da_channels = as_int();
  else throw ConfigError("unknown config override: " + key);
}

}  // namespace

TrainConfig parse_train_config(const std::string& json_text,
                               const std::map<std::string, std::string>& overrides) {
  TrainConfig c;
  if (!json_text.empty()) {
    json j = json::parse(json_text);
    apply_json(c, j);
  }
  for (const auto& [key, value] : overrides) apply_override(c, key, value);
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::string& path,
                              const std::map<std::string, std::string>& overrides) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config " + path);
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return parse_train_config(text, overrides);
}

std::string train_config_to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["lr"] = c.lr;
  j["weight_decay"] = c.weight_decay;
  j["batch_source"] = c.batch_source;
  j["batch_target"] = c.batch_target;
  j["lr_drop_factor"] = c.lr_drop_factor;
  j["lr_patience_epochs"] = c.lr_patience_epochs;
  j["early_stop_epochs"] = c.early_stop_epochs;
  j["da_warmup_epochs"] = c.da_warmup_epochs;
  j["data_loss"] = to_string(c.data_loss);
  j["mode"] = to_string(c.mode);
  j["seed"] = c.seed;
  j["max_epochs"] = c.max_epochs;
  j["h1"] = c.h1;
  j["feature_channels"] = c.feature_channels;
  j["augment"] = c.augment;
  j["threads"] = c.threads;
  j["kernel"] = {{"sigma_alpha", c.kernel.sigma_alpha}, {"sigma_beta", c.kernel.sigma_beta},
                 {"sigma_gamma", c.kernel.sigma_gamma}, {"lambda_i", c.kernel.lambda_i},
                 {"lambda_da", c.kernel.lambda_da},     {"da_mode", to_string(c.kernel.da_mode)},
                 {"da_channels", c.kernel.da_channels}};
  return j.dump(2);
}

}  // namespace scribda
