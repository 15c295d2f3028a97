#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedsim/errors.hpp"
#include "fedsim/experiment.hpp"
#include "test_util.hpp"

using namespace fedsim;
using nlohmann::json;

namespace {

std::string tiny_config(const std::string& algorithm, double mu,
                        std::size_t rounds = 3) {
  json cfg{
      {"dataset",
       {{"generator", "synthetic"},
        {"alpha", 1.0},
        {"beta", 1.0},
        {"num_devices", 8},
        {"min_samples", 10},
        {"max_samples", 20},
        {"seed", 4}}},
      {"federation",
       {{"algorithm", algorithm},
        {"mu", mu},
        {"rounds", rounds},
        {"devices_per_round", 4},
        {"epochs", 2},
        {"master_seed", 9}}}};
  return cfg.dump();
}

}  // namespace

TEST_CASE("a minimal config fills the documented defaults") {
  const ExperimentConfig cfg = parse_config(
      R"({"dataset":{"generator":"synthetic_iid"},
          "federation":{"algorithm":"fedavg"}})");
  CHECK(cfg.federation.devices_per_round == 10);
  CHECK(cfg.federation.batch_size == 10);
  CHECK(cfg.federation.learning_rate == doctest::Approx(0.01));
  CHECK(cfg.federation.telemetry_every == 1);
  CHECK(cfg.dataset.synthetic.iid);
  CHECK(cfg.dataset.synthetic.num_devices == 30);
  CHECK(cfg.dataset.split_fraction == doctest::Approx(0.8));
  CHECK(cfg.runs == std::vector<std::uint64_t>{1});
}

TEST_CASE("mnist configs default to the 0.03 learning rate") {
  const ExperimentConfig cfg = parse_config(
      R"({"dataset":{"generator":"mnist","images":["x.idx"],
          "labels":["y.idx"]}})");
  CHECK(cfg.federation.learning_rate == doctest::Approx(0.03));
  CHECK(cfg.federation.telemetry_every == 5);
  CHECK(cfg.dataset.mnist.num_devices == 1000);
  CHECK(cfg.dataset.mnist.classes_per_device == 2);
}

TEST_CASE("validation errors carry the offending field path") {
  try {
    parse_config(
        R"({"dataset":{"generator":"synthetic"},
            "federation":{"straggler_fraction":1.2}})");
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("straggler_fraction") !=
          std::string::npos);
  }

  try {
    parse_config(
        R"({"dataset":{"generator":"synthetic"},
            "federation":{"algorithm":"fedavg","mu":0.5}})");
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("mu") != std::string::npos);
  }
}

TEST_CASE("unknown keys are rejected at every level") {
  CHECK_THROWS_AS(parse_config(R"({"dataset":{"generator":"synthetic"},
                                   "federatio":{}})"),
                  ValidationError);
  CHECK_THROWS_AS(parse_config(R"({"dataset":{"generator":"synthetic",
                                              "alpah":1.0}})"),
                  ValidationError);
  CHECK_THROWS_AS(
      parse_config(R"({"dataset":{"generator":"synthetic"},
                       "federation":{"adaptive_mu":{"mu":1}}})"),
      ValidationError);
}

TEST_CASE("the runs list and sweep block parse") {
  const ExperimentConfig cfg = parse_config(
      R"({"dataset":{"generator":"synthetic"},
          "runs":[3,5,7],
          "sweep":{"mu":[0.1,1.0],"straggler_fractions":[0,0.9]}})");
  CHECK(cfg.runs == std::vector<std::uint64_t>{3, 5, 7});
  CHECK(cfg.sweep_mu == std::vector<double>{0.1, 1.0});
  CHECK(cfg.sweep_straggler_fractions == std::vector<double>{0.0, 0.9});
}

TEST_CASE("malformed configs raise errors instead of crashing") {
  const std::vector<std::string> corpus{
      "",
      "   ",
      "{",
      "]",
      "null",
      "[]",
      "42",
      "\"dataset\"",
      R"({"dataset":null})",
      R"({"dataset":[]})",
      R"({"dataset":{}})",
      R"({"dataset":{"generator":"unknown"}})",
      R"({"dataset":{"generator":"synthetic","alpha":-1}})",
      R"({"dataset":{"generator":"synthetic","num_devices":0}})",
      R"({"dataset":{"generator":"synthetic","min_samples":0}})",
      R"({"dataset":{"generator":"synthetic","split_fraction":2}})",
      R"({"dataset":{"generator":"synthetic","seed":-4}})",
      R"({"dataset":{"generator":"mnist"}})",
      R"({"dataset":{"generator":"file"}})",
      R"({"dataset":{"generator":"synthetic"},"federation":{"rounds":-1}})",
      R"({"dataset":{"generator":"synthetic"},"federation":{"epochs":0}})",
      R"({"dataset":{"generator":"synthetic"},"federation":{"batch_size":0}})",
      R"({"dataset":{"generator":"synthetic"},"federation":{"learning_rate":0}})",
      R"({"dataset":{"generator":"synthetic"},"federation":{"algorithm":7}})",
      R"({"dataset":{"generator":"synthetic"},"federation":{"sampling_scheme":"x"}})",
      R"({"dataset":{"generator":"synthetic"},"runs":[]})",
      R"({"dataset":{"generator":"synthetic"},"runs":[-1]})",
      R"({"dataset":{"generator":"synthetic"},"telemetry":{"every":0}})",
      R"({"dataset":{"generator":"synthetic"},"sweep":{"mu":[]}})",
      std::string("{\"dataset\":\x01\x02\xff}", 15),
  };
  for (const auto& text : corpus) {
    CAPTURE(text);
    CHECK_THROWS_AS(parse_config(text), ValidationError);
  }

  // Seeded random byte strings must error out, never abort.
  RngStream rng(6, StreamPurpose::testing);
  for (int i = 0; i < 40; ++i) {
    std::string noise(1 + rng.next_below(60), '\0');
    for (auto& ch : noise) {
      ch = static_cast<char>(rng.next_below(256));
    }
    CHECK_THROWS_AS(parse_config(noise), ValidationError);
  }
}

TEST_CASE("run artifacts are byte deterministic") {
  const ExperimentConfig cfg = parse_config(tiny_config("fedprox", 0.1));
  const FederatedDataset ds = build_dataset(cfg.dataset);
  const RunArtifacts a = run_all(cfg, ds);
  const RunArtifacts b = run_all(cfg, ds);
  CHECK(a.results_csv == b.results_csv);
  CHECK(a.rounds_jsonl == b.rounds_jsonl);
  CHECK(a.summary_json == b.summary_json);
  CHECK(a.final_params == b.final_params);
}

TEST_CASE("the CSV header is stable and rows carry telemetry") {
  const ExperimentConfig cfg = parse_config(tiny_config("fedprox", 0.0, 5));
  const FederatedDataset ds = build_dataset(cfg.dataset);
  const RunArtifacts artifacts = run_all(cfg, ds);
  const std::string& csv = artifacts.results_csv;
  CHECK(csv.rfind("run_seed,round,algorithm,mu,straggler_fraction,train_loss,"
                  "test_accuracy,B,grad_variance,mean_gamma,dropped_count,"
                  "status\n",
                  0) == 0);
  // Header + 5 telemetry rows.
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);
  // One JSONL line per round.
  CHECK(std::count(artifacts.rounds_jsonl.begin(),
                   artifacts.rounds_jsonl.end(), '\n') == 5);

  const json summary = json::parse(artifacts.summary_json);
  CHECK(summary.at("schema_version") == 1);
  CHECK(summary.at("runs").size() == 1);
  CHECK(summary.at("runs")[0].at("rounds_completed") == 5);
}

TEST_CASE("floats render as shortest round-trip decimals") {
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(1.0) == "1");
  CHECK(format_double(-2.5) == "-2.5");
  RngStream rng(20, StreamPurpose::testing);
  for (int i = 0; i < 100; ++i) {
    const double v = rng.next_normal(0.0, 100.0);
    const double back = std::strtod(format_double(v).c_str(), nullptr);
    CHECK(back == v);
  }
}

TEST_CASE("theory evaluation emits rho, flags, and the estimate") {
  const std::string out = theory_eval_json(
      R"({"L":1,"L_minus":0,"mu":24,"gamma":0,"B":2,"K":64,
          "epsilon":0.01,"delta":1})");
  const json parsed = json::parse(out);
  CHECK(parsed.at("rho").get<double>() > 0.0);
  CHECK(parsed.at("gamma_B_lt_1") == true);
  CHECK(parsed.at("B_lt_sqrt_K") == true);
  CHECK(parsed.at("iteration_estimate").is_number());

  // A gamma B >= 1 setup reports its failed flags and a null estimate.
  const json negative = json::parse(theory_eval_json(
      R"({"L":1,"L_minus":0,"mu":24,"gamma":1,"B":2,"K":64,
          "epsilon":0.01,"delta":1})"));
  CHECK(negative.at("gamma_B_lt_1") == false);
  CHECK(negative.at("rho").get<double>() < 0.0);
  CHECK(negative.at("iteration_estimate").is_null());
}

TEST_CASE("dissimilarity JSON reports the reading fields") {
  const ExperimentConfig cfg = parse_config(tiny_config("fedprox", 0.0));
  const FederatedDataset ds = build_dataset(cfg.dataset);
  const ModelSpec spec = resolve_model(cfg, ds);
  const std::string out =
      dissimilarity_json(ds, spec, zero_params(spec), 1e-10);
  const json parsed = json::parse(out);
  CHECK(parsed.at("B").get<double>() >= 1.0 - 1e-9);
  CHECK(parsed.contains("grad_variance"));
  CHECK(parsed.contains("bounded_variance_cap"));
}

TEST_CASE("feddane runs end to end through the config layer") {
  const ExperimentConfig cfg = parse_config(tiny_config("feddane", 0.5));
  const FederatedDataset ds = build_dataset(cfg.dataset);
  const RunArtifacts artifacts = run_all(cfg, ds);
  CHECK(artifacts.results_csv.find("feddane") != std::string::npos);
}
