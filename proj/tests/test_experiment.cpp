#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "alrelu/experiment.hpp"

namespace alrelu {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

class Workspace : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("alrelu_exp_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path config(const json& j) {
    const fs::path p = dir_ / "config.json";
    std::ofstream(p) << j.dump(2);
    return p;
  }

  static json small_run() {
    return json{{"dataset", {{"type", "blobs"}, {"n_per_class", 15}, {"seed", 2}}},
                {"activations", {"relu", "lrelu", "alrelu"}},
                {"k", 3},
                {"repeats", 1},
                {"train", {{"epochs", 2}, {"batch_size", 16}}},
                {"seed", 5}};
  }

  fs::path dir_;
  std::ostringstream out_, err_;
};

TEST(Config, DefaultsAndOverrides) {
  const auto c = config_from_json(json::parse(R"({"k": 9, "seed": 7, "train": {"optimizer": {"type": "sgd"}}})"));
  EXPECT_EQ(c.k, 9u);
  EXPECT_EQ(c.repeats, 4u);
  EXPECT_EQ(c.train.seed, 7u);
  EXPECT_TRUE(std::holds_alternative<Sgd>(c.train.optimizer));
  EXPECT_EQ(c.activations, (std::vector<std::string>{"relu", "lrelu", "alrelu"}));
}

TEST(Config, RoundTrip) {
  ExperimentConfig c;
  c.dataset.type = "csv";
  c.dataset.path = "x.csv";
  c.dataset.drop_columns = {"id"};
  c.activations = {"alrelu"};
  c.alpha = 0.05f;
  c.train.learning_rate = 0.01;
  c.train.seed = 123456789012345ULL;
  c.stress.bias = -4.0f;
  const auto back = config_from_json(config_to_json(c));
  EXPECT_EQ(back, c);
  EXPECT_EQ(config_from_json(config_to_json(back)), c);
}

TEST(Config, ValidationMessagesNameTheField) {
  auto message = [](const char* text) {
    try {
      config_from_json(json::parse(text));
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_NE(message(R"({"activations": ["relu", "gelu"]})").find("activations[1]"), std::string::npos);
  EXPECT_NE(message(R"({"activations": []})").find("activations"), std::string::npos);
  EXPECT_NE(message(R"({"k": 1})").find("\"k\""), std::string::npos);
  EXPECT_NE(message(R"({"repeats": 0})").find("repeats"), std::string::npos);
  EXPECT_NE(message(R"({"kk": 3})").find("kk"), std::string::npos);
  EXPECT_NE(message(R"({"train": {"learning_rate": 0}})").find("train"), std::string::npos);
  EXPECT_NE(message(R"({"k": "five"})").find("wrong type"), std::string::npos);
  EXPECT_NE(message(R"({"dataset": {"type": "pgm", "path": "x"}})").find("model"), std::string::npos);
  EXPECT_NE(message(R"({"alpha": 1.5})").find("alpha"), std::string::npos);
}

TEST_F(Workspace, RunWritesTableAndDeterministicSummary) {
  const auto cfg = config(small_run());
  RunOptions opts;
  opts.output_dir = (dir_ / "a").string();
  opts.quiet = true;
  ASSERT_EQ(cmd_run(cfg, opts, out_, err_), kExitOk) << err_.str();
  const std::string table = slurp(dir_ / "a" / "table.csv");
  std::istringstream lines(table);
  std::string line;
  std::vector<std::string> rows;
  while (std::getline(lines, line)) rows.push_back(line);
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_EQ(rows[0], "dataset,metric,relu,lrelu,alrelu");
  for (std::size_t r = 1; r < rows.size(); ++r) EXPECT_EQ(std::count(rows[r].begin(), rows[r].end(), ','), 4);
  EXPECT_NE(out_.str().find("Weighted F1"), std::string::npos);

  opts.output_dir = (dir_ / "b").string();
  ASSERT_EQ(cmd_run(cfg, opts, out_, err_), kExitOk);
  EXPECT_EQ(slurp(dir_ / "a" / "summary.json"), slurp(dir_ / "b" / "summary.json"));
  const auto summary = json::parse(slurp(dir_ / "a" / "summary.json"));
  EXPECT_EQ(summary.at("reports").size(), 9u);

  for (const auto& e : fs::recursive_directory_iterator(dir_)) EXPECT_NE(e.path().extension(), ".tmp");
}

TEST_F(Workspace, RunExitCodes) {
  auto bad = small_run();
  bad["activations"] = {"gelu"};
  RunOptions opts;
  opts.output_dir = (dir_ / "out").string();
  EXPECT_EQ(cmd_run(config(bad), opts, out_, err_), kExitUsage);
  EXPECT_NE(err_.str().find("activations[0]"), std::string::npos) << err_.str();
  EXPECT_EQ(cmd_run(dir_ / "missing.json", opts, out_, err_), kExitUsage);

  auto broken = small_run();
  broken["dataset"] = {{"type", "csv"}, {"path", (dir_ / "nope.csv").string()}};
  EXPECT_EQ(cmd_run(config(broken), opts, out_, err_), kExitFailure);
  EXPECT_FALSE(fs::exists(dir_ / "out" / "summary.json"));
}

TEST_F(Workspace, StressSeries) {
  RunOptions opts;
  opts.output_dir = dir_.string();
  ASSERT_EQ(cmd_stress(config(json{{"seed", 42}}), opts, out_, err_), kExitOk) << err_.str();
  std::istringstream csv(slurp(dir_ / "stress.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "epoch,activation,dead_units");
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    ++rows;
    std::istringstream cells(line);
    std::string epoch, act, dead;
    std::getline(cells, epoch, ',');
    std::getline(cells, act, ',');
    std::getline(cells, dead, ',');
    if (act == "alrelu") {
      EXPECT_EQ(dead, "0");
    }
    if (act == "relu" && epoch == "1") {
      EXPECT_GT(std::stoul(dead), 0u);
    }
  }
  EXPECT_EQ(rows, 15u);
}

TEST(Gradcheck, DefaultPassesWithTightActivationErrors) {
  std::ostringstream out, err;
  GradcheckOptions o;
  EXPECT_EQ(cmd_gradcheck(o, out, err), kExitOk) << out.str() << err.str();
  for (const auto& c : run_gradcheck(o)) {
    if (c.name.rfind("activation", 0) == 0) {
      EXPECT_LE(c.max_error, 1e-5) << c.name;
    }
  }
}

TEST(Gradcheck, ZeroTrialsIsUsageError) {
  std::ostringstream out, err;
  GradcheckOptions o;
  o.trials = 0;
  EXPECT_EQ(cmd_gradcheck(o, out, err), kExitUsage);
  EXPECT_NE(err.str().find("nothing to check"), std::string::npos);
}

TEST(Gradcheck, DetectsFlippedNegativeSlope) {
  std::ostringstream out, err;
  GradcheckOptions o;
  o.trials = 200;
  o.derivative = [](const ActivationKind& k, double x) {
    const double g = activate_grad(k, x);
    return k.variant() == Rectifier::ALReLU && x <= 0 ? -g : g;
  };
  EXPECT_EQ(cmd_gradcheck(o, out, err), kExitFailure);
  EXPECT_NE(err.str().find("activation alrelu"), std::string::npos) << err.str();
}

}  // namespace
}  // namespace alrelu
