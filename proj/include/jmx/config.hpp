#pragma once

// Flat `key: value` model configuration files.
//
//   # comment
//   name: pbc1
//   response: log(serBilir)
//   fixed: ns(year, 2)
//   levels.drug: placebo, D-penicil
//   prior.v0: 100
//   mcmc.n_iter: 20000
//   fix.D: 1, 0.2; 0.2, 0.5

#include <string>
#include <vector>

#include "jmx/model.hpp"

namespace jmx {

struct Config {
  std::string name = "model";
  ModelSpec spec;
  // extra-term pieces, assembled by finalize_config
  std::string extra_fixed;
  std::string extra_random;
  std::vector<int> extra_ind_fixed;
  std::vector<int> extra_ind_random;
};

/// Parses and compiles a configuration. Unknown keys, duplicates and bad
/// values are invalid-spec errors naming the line.
Config parse_config(const std::string& text, const std::string& source = "<config>");
Config load_config(const std::string& path);

/// Canonical text for a spec; parse_config(config_text(c)) reproduces it.
std::string config_text(const Config& c);

/// Applies one `key: value` setting (also used for command-line overrides).
/// Call finalize_config afterwards.
void apply_setting(Config& c, const std::string& key, const std::string& value);

/// Builds the extra-term form and compiles the spec.
void finalize_config(Config& c);

}  // namespace jmx
