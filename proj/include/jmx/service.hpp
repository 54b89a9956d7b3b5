#pragma once

// HTTP model service over a directory of artifacts.
//
//   GET  /models                      list of artifacts in the directory
//   GET  /models/{id}                 metadata of one artifact
//   POST /models/{id}/survfit         dynamic survival prediction
//   POST /models/{id}/predict-long    longitudinal prediction
//   POST /bma/survfit                 model-averaged survival prediction
//
// Request body of the prediction endpoints:
//
//   {"subject": {"id": "2",
//                "covariates": {"drug": "D-penicil", "age": 58.8},
//                "measurements": [{"time": 0, "value": 1.1}, ...]},
//    "options": {"times": [9, 10], "last_time": 8.8, "M": 200, "seed": 1,
//                "simulate": true, "type": "subject", "interval": "confidence"},
//    "models": ["pbc1", "pbc15"]}          (bma only)
//
// Measurement values are on the raw response scale.

#include <map>
#include <memory>
#include <shared_mutex>
#include <string>

#include "jmx/artifact.hpp"

namespace jmx {

struct ServiceResponse {
  int status = 200;
  std::string body;   // JSON
};

class ModelService {
 public:
  explicit ModelService(std::string models_dir);

  /// Routes one request. Never throws: failures become 400 / 404 / 500 bodies.
  ServiceResponse handle(const std::string& method, const std::string& path,
                         const std::string& body) const;

  /// Blocks serving HTTP on host:port.
  void serve(const std::string& host, int port) const;

  /// Artifact for an id, loaded on first use. Throws 404-class errors.
  std::shared_ptr<const Artifact> model(const std::string& id) const;

 private:
  std::string dir_;
  mutable std::shared_mutex mutex_;
  mutable std::map<std::string, std::shared_ptr<const Artifact>> cache_;
};

}  // namespace jmx
