#include <gtest/gtest.h>

#include <fstream>

#include "busctl/scenario.hpp"
#include "test_util.hpp"

using namespace busctl;
using busctl::testing::scenario_path;
using nlohmann::json;

namespace {

json bundled(const std::string& name) {
  std::ifstream in(scenario_path(name));
  return json::parse(in, nullptr, true, true);
}

std::string error_of(const json& doc) {
  try {
    parse_scenario(doc);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Scenario, GeneralMatchesTabulatedSetup) {
  const auto sc = load_scenario(scenario_path("paper-general.scenario"));
  EXPECT_EQ(sc.planned_headway, 300.0);
  ASSERT_EQ(sc.stations.size(), 20u);
  for (std::size_t j = 0; j < 20; ++j) {
    EXPECT_EQ(sc.stations[j].travel_time, busctl::testing::table_travel_times()[j]);
    EXPECT_EQ(sc.stations[j].demand_rate, busctl::testing::table_demand_rates()[j]);
    EXPECT_EQ(sc.stations[j].slack, 10.0);
  }
  EXPECT_EQ(sc.delay.lower, -5.0);
  EXPECT_EQ(sc.delay.upper, 30.0);
  EXPECT_EQ(sc.demand.lower, -0.02);
  EXPECT_EQ(sc.demand.upper, 0.02);
  for (double a : {sc.coeffs.schedule, sc.coeffs.headway, sc.coeffs.holding, sc.coeffs.signal, sc.coeffs.speed})
    EXPECT_EQ(a, 0.01);
  EXPECT_EQ(sc.downstream, 5);
  EXPECT_EQ(sc.eval_buses, 19);
  EXPECT_EQ(sc.train_buses, 6);
  EXPECT_FALSE(sc.volume_cost_override.has_value());
  for (double q : sc.volume_costs()) EXPECT_GT(q, 1.0);
}

TEST(Scenario, HighVolumeTable) {
  const auto sc = load_scenario(scenario_path("paper-highvolume.scenario"));
  EXPECT_EQ(sc.volume_costs(), (std::vector<double>{80, 60, 90, 70, 80, 90, 80, 90, 60, 80, 50, 90, 100, 30, 90, 80,
                                                    70, 90, 80, 70}));
}

TEST(Scenario, VaryingVolumeTable) {
  const auto sc = load_scenario(scenario_path("paper-varvolume.scenario"));
  EXPECT_EQ(sc.volume_costs(),
            (std::vector<double>{1, 4, 10, 3, 80, 20, 7, 20, 10, 3, 1, 4, 20, 3, 30, 20, 80, 6, 10, 3}));
}

TEST(Scenario, CorridorCarriesVolumeCostPerBlock) {
  const auto sc = load_scenario(scenario_path("paper-highvolume.scenario"));
  const auto c = sc.corridor(false);
  EXPECT_EQ(c.n_buses, 19);
  EXPECT_EQ(sc.corridor(true).n_buses, 6);
  EXPECT_EQ(c.volume_cost_at(0), 80.0);
  EXPECT_EQ(c.volume_cost_at(5), 60.0);
  EXPECT_EQ(c.volume_cost_at(60 + 38), 100.0);
}

TEST(Scenario, MissingHeadwayNamesTheField) {
  auto doc = bundled("paper-general.scenario");
  doc["corridor"].erase("planned_headway");
  EXPECT_NE(error_of(doc).find("corridor.planned_headway"), std::string::npos) << error_of(doc);
}

TEST(Scenario, ErrorsCarryFieldPaths) {
  auto doc = bundled("paper-general.scenario");
  doc["corridor"]["stations"][3]["demand_rate"] = "high";
  EXPECT_NE(error_of(doc).find("corridor.stations[3].demand_rate"), std::string::npos);

  doc = bundled("paper-general.scenario");
  doc["training"]["episodez"] = 5;
  EXPECT_NE(error_of(doc).find("training.episodez: unknown field"), std::string::npos);

  doc = bundled("paper-general.scenario");
  doc["corridor"]["volume_cost"] = json::array({1, 2});
  EXPECT_NE(error_of(doc).find("corridor.volume_cost"), std::string::npos);

  doc = bundled("paper-general.scenario");
  doc["control"]["strategies"] = json::array({"holding", "teleport"});
  EXPECT_NE(error_of(doc).find("teleport"), std::string::npos);

  doc = bundled("paper-general.scenario");
  doc["corridor"]["stations"][0]["v_max"] = 1.0;
  EXPECT_NE(error_of(doc).find("corridor.stations[0]"), std::string::npos);

  doc = bundled("paper-general.scenario");
  doc["corridor"]["stations"][2]["intersections"][0]["major_phase"] = 9;
  EXPECT_NE(error_of(doc).find("corridor.stations[2].intersections[0]"), std::string::npos);
}

TEST(Scenario, SchemaVersionIsMandatory) {
  auto doc = bundled("paper-general.scenario");
  doc.erase("schema_version");
  EXPECT_NE(error_of(doc).find("schema_version"), std::string::npos);
  doc["schema_version"] = 2;
  EXPECT_NE(error_of(doc).find("unsupported"), std::string::npos);
}

TEST(Scenario, OptionalSectionsFallBackToDefaults) {
  auto doc = bundled("paper-general.scenario");
  for (const char* key : {"disturbance", "reward", "control", "observation", "policy", "evaluation", "training"})
    doc.erase(key);
  const auto sc = parse_scenario(doc);
  EXPECT_EQ(sc.delay.lower, TruncatedNormalSpec{}.lower);
  EXPECT_EQ(sc.replications, 20);
  EXPECT_EQ(sc.trainer.episodes, 2000);
  EXPECT_EQ(sc.trainer.seed, sc.seed);
  EXPECT_TRUE(sc.mask.holding && sc.mask.signal && sc.mask.speed);
}

TEST(Scenario, EchoedJsonParsesToTheSameScenario) {
  const auto sc = load_scenario(scenario_path("paper-varvolume.scenario"));
  const auto echoed = scenario_to_json(sc);
  const auto back = parse_scenario(echoed);
  EXPECT_EQ(scenario_to_json(back).dump(), echoed.dump());
}

TEST(Scenario, StrategyLists) {
  EXPECT_EQ(parse_strategy_list("holding"), (StrategyMask{true, false, false}));
  EXPECT_EQ(parse_strategy_list("speed,signal"), (StrategyMask{false, true, true}));
  EXPECT_THROW(parse_strategy_list(""), ConfigError);
  EXPECT_THROW(parse_strategy_list("hold"), ConfigError);
}

TEST(Scenario, UnreadableFilesAndSyntaxErrors) {
  EXPECT_THROW(load_scenario("/nonexistent/x.scenario"), IoError);
  const std::string path = ::testing::TempDir() + "broken.scenario";
  std::ofstream(path) << "{ \"schema_version\": 1, ";
  EXPECT_THROW(load_scenario(path), ConfigError);
}
