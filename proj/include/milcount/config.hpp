#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "bags.hpp"
#include "io.hpp"
#include "model_mil.hpp"
#include "model_mlp.hpp"
#include "training.hpp"

namespace milcount {

// Flat key=value settings; '#' starts a comment.
using KeyValues = std::map<std::string, std::string>;

inline KeyValues parse_key_values(std::string_view text, const std::string& name) {
  KeyValues kv;
  const auto ls = io::lines(text);
  for (std::size_t i = 0; i < ls.size(); ++i) {
    std::string_view line = ls[i];
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = io::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ParseError("'" + name + "' line " + std::to_string(i + 1) + ": expected key=value");
    kv[std::string(io::trim(line.substr(0, eq)))] = std::string(io::trim(line.substr(eq + 1)));
  }
  return kv;
}

inline KeyValues read_key_values(const std::filesystem::path& path) {
  return parse_key_values(io::read_text(path), path.string());
}

// Everything a train/cv run needs besides data.
struct RunSettings {
  TrainConfig train;
  MilConfig mil;
  std::vector<int> mlp_hidden = {64, 64};
  BaselineInput baseline_input = BaselineInput::histogram;
  bool baseline_input_set = false;
};

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw ParseError("'" + key + "' must be a boolean, got '" + v + "'");
}

inline void apply_settings(const KeyValues& kv, RunSettings& s) {
  for (const auto& [key, value] : kv) {
    auto num = [&] { return io::parse_double(value, key); };
    auto integer = [&] { return static_cast<int>(io::parse_int(value, key)); };
    if (key == "lr") s.train.lr = num();
    else if (key == "weight_decay") s.train.weight_decay = num();
    else if (key == "max_epochs") s.train.max_epochs = integer();
    else if (key == "patience") s.train.patience = integer();
    else if (key == "accum_steps") s.train.accum_steps = integer();
    else if (key == "dropout") s.train.dropout = s.mil.dropout = num();
    else if (key == "seed") s.train.seed = static_cast<std::uint64_t>(io::parse_int(value, key));
    else if (key == "beta1") s.train.beta1 = num();
    else if (key == "beta2") s.train.beta2 = num();
    else if (key == "eps") s.train.eps = num();
    else if (key == "epsilon_freq") s.train.epsilon_freq = num();
    else if (key == "decoupled_weight_decay") s.train.decoupled_weight_decay = parse_bool(value, key);
    else if (key == "hidden") s.mil.hidden = integer();
    else if (key == "attention") s.mil.attention = integer();
    else if (key == "gated") s.mil.gated = parse_bool(value, key);
    else if (key == "mlp_hidden") {
      s.mlp_hidden.clear();
      if (!value.empty())
        for (const auto& w : io::split(value, ',')) s.mlp_hidden.push_back(static_cast<int>(io::parse_int(w, key)));
    } else if (key == "baseline_input") {
      if (value == "histogram") s.baseline_input = BaselineInput::histogram;
      else if (value == "pooled") s.baseline_input = BaselineInput::pooled;
      else throw ParseError("baseline_input must be histogram or pooled");
      s.baseline_input_set = true;
    } else {
      throw ParseError("unknown config key '" + key + "'");
    }
  }
}

inline KeyValues settings_snapshot(const RunSettings& s) {
  std::string hidden;
  for (std::size_t i = 0; i < s.mlp_hidden.size(); ++i) hidden += (i ? "," : "") + std::to_string(s.mlp_hidden[i]);
  return {{"lr", io::fmt(s.train.lr)},
          {"weight_decay", io::fmt(s.train.weight_decay)},
          {"max_epochs", std::to_string(s.train.max_epochs)},
          {"patience", std::to_string(s.train.patience)},
          {"accum_steps", std::to_string(s.train.accum_steps)},
          {"dropout", io::fmt(s.train.dropout)},
          {"seed", std::to_string(s.train.seed)},
          {"beta1", io::fmt(s.train.beta1)},
          {"beta2", io::fmt(s.train.beta2)},
          {"eps", io::fmt(s.train.eps)},
          {"epsilon_freq", io::fmt(s.train.epsilon_freq)},
          {"decoupled_weight_decay", s.train.decoupled_weight_decay ? "true" : "false"},
          {"hidden", std::to_string(s.mil.hidden)},
          {"attention", std::to_string(s.mil.attention)},
          {"gated", s.mil.gated ? "true" : "false"},
          {"mlp_hidden", hidden},
          {"baseline_input", s.baseline_input == BaselineInput::histogram ? "histogram" : "pooled"}};
}

inline std::string key_values_text(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

}  // namespace milcount
