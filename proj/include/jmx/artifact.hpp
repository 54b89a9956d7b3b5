#pragma once

// Versioned model artifact ("jmx-1"): a JSON document holding the
// configuration, design context, knots, posterior draws, fit statistics,
// initialization metadata and the training-data fingerprint. Numbers are
// written in shortest round-trip form, so save -> load -> save is
// byte-identical.

#include <string>

#include "jmx/config.hpp"
#include "jmx/fit.hpp"

namespace jmx {

inline constexpr const char* kArtifactFormat = "jmx-1";

struct Artifact {
  Config config;
  FittedModel model;
};

std::string artifact_text(const Artifact& a);

/// Throws parse-error with the byte offset on malformed input and
/// version-mismatch when the format tag is not "jmx-1".
Artifact parse_artifact(const std::string& text, const std::string& source = "<artifact>");

void save_model(const Artifact& a, const std::string& path);
Artifact load_model(const std::string& path);

}  // namespace jmx
