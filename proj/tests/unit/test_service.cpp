#include <filesystem>

#include "doctest.h"
#include "jmx/service.hpp"
#include "json.hpp"
#include "support.hpp"

using namespace jmx;
using nlohmann::json;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "jmx-service" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

json subject_payload(int n_measurements) {
  json m = json::array();
  for (int k = 0; k < n_measurements; ++k) m.push_back({{"time", k}, {"value", 1.0 + 0.3 * k}});
  return {{"subject", {{"id", "new"}, {"covariates", {{"group", "1"}}}, {"measurements", m}}},
          {"options", {{"M", 30}, {"seed", 5}}}};
}

}  // namespace

TEST_SUITE("service") {
  TEST_CASE("empty directory") {
    const ModelService svc(fresh_dir("empty").string());
    const auto r = svc.handle("GET", "/models", "");
    CHECK(r.status == 200);
    CHECK(json::parse(r.body) == json::array());
    CHECK(svc.handle("GET", "/models/none", "").status == 404);
    CHECK(svc.handle("POST", "/models/none/survfit", subject_payload(2).dump()).status == 404);
    CHECK(svc.handle("GET", "/elsewhere", "").status == 404);
  }

  TEST_CASE("prediction endpoints") {
    const auto dir = fresh_dir("models");
    save_model(jmx::testing::toy_fit().artifact, (dir / "toy.jmx").string());
    save_model(jmx::testing::toy_fit().artifact, (dir / "twin.jmx").string());
    const ModelService svc(dir.string());

    const auto list = json::parse(svc.handle("GET", "/models", "").body);
    REQUIRE(list.size() == 2);
    const auto meta = svc.handle("GET", "/models/toy", "");
    CHECK(meta.status == 200);
    CHECK(json::parse(meta.body).contains("covariates"));

    SUBCASE("dynamic update") {
      const auto a = svc.handle("POST", "/models/toy/survfit", subject_payload(3).dump());
      const auto b = svc.handle("POST", "/models/toy/survfit", subject_payload(4).dump());
      REQUIRE(a.status == 200);
      REQUIRE(b.status == 200);
      const auto ja = json::parse(a.body), jb = json::parse(b.body);
      CHECK(jb["last_time"].get<double>() > ja["last_time"].get<double>());
      CHECK(ja["mean"][0] == 1.0);
      CHECK(jb["times"][0].get<double>() == jb["last_time"].get<double>());
    }

    SUBCASE("longitudinal") {
      auto p = subject_payload(3);
      p["options"]["times"] = {0.5, 1.5, 4.0};
      const auto r = svc.handle("POST", "/models/toy/predict-long", p.dump());
      REQUIRE(r.status == 200);
      CHECK(json::parse(r.body)["pred"].size() == 3);
    }

    SUBCASE("invalid payloads") {
      const auto broken = svc.handle("POST", "/models/toy/survfit", "{not json");
      CHECK(broken.status == 400);
      auto p = subject_payload(2);
      p["subject"]["measurements"][0]["value"] = "high";
      const auto bad = svc.handle("POST", "/models/toy/survfit", p.dump());
      CHECK(bad.status == 400);
      CHECK(json::parse(bad.body)["field"].get<std::string>().find("measurements") != std::string::npos);
      auto q = subject_payload(2);
      q["subject"].erase("covariates");
      const auto missing = svc.handle("POST", "/models/toy/survfit", q.dump());
      CHECK(missing.status == 400);
      CHECK(json::parse(missing.body).contains("field"));
    }

    SUBCASE("model averaging over equal models") {
      auto p = subject_payload(3);
      p["models"] = {"toy", "twin"};
      const auto r = svc.handle("POST", "/bma/survfit", p.dump());
      REQUIRE(r.status == 200);
      const auto j = json::parse(r.body);
      REQUIRE(j["weights"].size() == 2);
      CHECK(j["weights"][0].get<double>() == doctest::Approx(0.5).epsilon(1e-12));
      CHECK(j["weights"][1].get<double>() == doctest::Approx(0.5).epsilon(1e-12));
      const auto single = json::parse(svc.handle("POST", "/models/toy/survfit", p.dump()).body);
      for (std::size_t k = 0; k < single["mean"].size(); ++k)
        CHECK(j["mean"][k].get<double>() == doctest::Approx(single["mean"][k].get<double>()).epsilon(1e-12));
    }
  }
}
