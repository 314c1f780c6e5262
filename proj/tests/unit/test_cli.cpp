#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "pidi/checkpoint.hpp"
#include "pidi/image.hpp"

using namespace pidi;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string out, err;
};

CliResult run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path work_dir() {
  const fs::path d = fs::temp_directory_path() / "pidi_test_cli";
  fs::create_directories(d);
  return d;
}

std::vector<std::string> tiny_edge_train(const fs::path& out) {
  return {"train",        "--task",          "edge", "--channels", "4",          "--samples",
          "6",            "--val-samples",   "2",    "--size",     "16",         "--batch",
          "2",            "--seed",          "1",    "--out",      out.string()};
}

// Trains once and shares the checkpoint across tests.
const fs::path& trained_edge_model() {
  static const fs::path model = [] {
    const fs::path dir = work_dir() / "edge";
    auto args = tiny_edge_train(dir);
    args.insert(args.end(), {"--epochs", "1"});
    const CliResult r = run(args);
    EXPECT_EQ(r.code, 0) << r.err;
    return dir / "model.pidn";
  }();
  return model;
}

fs::path random_image(const std::string& name, int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> d(0, 255);
  io::Image img{size, size, 3, {}};
  for (int i = 0; i < size * size * 3; ++i) img.samples.push_back(static_cast<std::uint8_t>(d(rng)));
  const fs::path p = work_dir() / name;
  io::write_pnm(p.string(), img);
  return p;
}

int last_epoch(const fs::path& csv) {
  std::ifstream in(csv);
  std::string line, last;
  while (std::getline(in, line)) {
    if (!line.empty()) last = line;
  }
  return std::stoi(last.substr(0, last.find(',')));
}

}  // namespace

TEST(Cli, HelpExitsCleanly) {
  const CliResult r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("reparam-export"), std::string::npos);
  EXPECT_EQ(run({"train", "--help"}).code, 0);
}

TEST(Cli, UsageErrorsExitWithTwo) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({"train", "--task", "segment"}).code, 2);
  EXPECT_EQ(run({"count-ops", "--arch", "vgg"}).code, 2);
  EXPECT_EQ(run({"infer", "--model", "x"}).code, 2);
}

TEST(Cli, TrainWritesCheckpointAndHistory) {
  const fs::path dir = work_dir() / "train_smoke";
  auto args = tiny_edge_train(dir);
  args.insert(args.end(), {"--epochs", "2"});
  const CliResult r = run(args);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "model.pidn"));
  ASSERT_TRUE(fs::exists(dir / "history.csv"));
  EXPECT_EQ(last_epoch(dir / "history.csv"), 2);
  EXPECT_NE(r.out.find("epoch 2"), std::string::npos);
}

TEST(Cli, BadBlockConfigIsAUserError) {
  auto args = tiny_edge_train(work_dir() / "bad_config");
  args.insert(args.end(), {"--config", "[CAQV]x4", "--epochs", "0"});
  const CliResult r = run(args);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("configuration"), std::string::npos);
}

TEST(Cli, ConfigFileValuesYieldToFlags) {
  const fs::path cfg = work_dir() / "train.ini";
  std::ofstream(cfg) << "# options\nepochs = 3\nchannels = 4\nsize = 16\nsamples = 4\nval-samples = 2\n";
  const fs::path a = work_dir() / "cfg_only", b = work_dir() / "cfg_override";
  CliResult r = run({"train", "--config-file", cfg.string(), "--out", a.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(last_epoch(a / "history.csv"), 3);
  r = run({"train", "--config-file", cfg.string(), "--epochs", "1", "--out", b.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(last_epoch(b / "history.csv"), 1);
  EXPECT_EQ(run({"train", "--config-file", (work_dir() / "none.ini").string()}).code, 2);
}

TEST(Cli, InferWritesAnEdgeMapOfTheInputSize) {
  const fs::path img = random_image("infer.ppm", 20, 1);
  const fs::path out = work_dir() / "edges.pgm";
  const CliResult r = run({"infer", "--model", trained_edge_model().string(), "--input", img.string(), "--output",
                     out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const io::Image e = io::read_pnm(out.string());
  EXPECT_EQ(e.width, 20);
  EXPECT_EQ(e.height, 20);
  EXPECT_EQ(e.channels, 1);
}

TEST(Cli, MalformedImageIsAUserError) {
  const fs::path bad = work_dir() / "bad.pgm";
  std::ofstream(bad) << "P5 4 4 255\nxx";
  const CliResult r = run({"infer", "--model", trained_edge_model().string(), "--input", bad.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(run({"infer", "--model", bad.string(), "--input", bad.string()}).code, 2);
}

TEST(Cli, ExportedModelHasReparameterizedKernelsAndSameEdges) {
  const fs::path exported = work_dir() / "exported.pidn";
  const CliResult r = run({"reparam-export", "--model", trained_edge_model().string(), "--out", exported.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const io::Checkpoint cp = io::load_checkpoint(exported.string());
  int five = 0;
  for (const auto& [name, t] : cp.tensors) five += t.h() == 5 && t.w() == 5;
  EXPECT_EQ(five, 4);  // one RPDC block per stage
  EXPECT_TRUE(cp.spec.reparameterized);

  const fs::path img = random_image("export.ppm", 24, 2);
  const fs::path a = work_dir() / "orig.pgm", b = work_dir() / "exp.pgm";
  ASSERT_EQ(run({"infer", "--model", trained_edge_model().string(), "--input", img.string(), "--output", a.string()})
                .code,
            0);
  ASSERT_EQ(run({"infer", "--model", exported.string(), "--input", img.string(), "--output", b.string()}).code, 0);
  const io::Image ia = io::read_pnm(a.string()), ib = io::read_pnm(b.string());
  ASSERT_EQ(ia.samples.size(), ib.samples.size());
  for (std::size_t i = 0; i < ia.samples.size(); ++i) EXPECT_LE(std::abs(ia.samples[i] - ib.samples[i]), 1);
}

TEST(Cli, ClassifierCannotBeExported) {
  const fs::path dir = work_dir() / "cls";
  CliResult r = run({"train", "--task", "cls", "--stem", "8", "--widths", "8,16", "--classes", "3", "--samples", "6",
               "--val-samples", "3", "--size", "16", "--batch", "3", "--epochs", "1", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  r = run({"reparam-export", "--model", (dir / "model.pidn").string(), "--out", (work_dir() / "x.pidn").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("re-parameterization"), std::string::npos);

  r = run({"infer", "--model", (dir / "model.pidn").string(), "--input", random_image("cls.ppm", 16, 3).string(),
           "--top-k", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 2);
}

TEST(Cli, CountOpsPrintsResNetRow) {
  const CliResult r = run({"count-ops", "--arch", "resnet18", "--format", "kv"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("fp_params=11176512"), std::string::npos) << r.out;
}

TEST(Cli, AnalyzeSpectraHaveZeroDc) {
  const fs::path dir = work_dir() / "spectra";
  const CliResult r = run({"analyze", "--what", "spectra", "--kind", "A", "--grid", "8", "--out-dir", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream lines(r.out);
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "filter,dc,min,max,hf_ratio");
  int rows = 0;
  while (std::getline(lines, line)) {
    const auto a = line.find(','), b = line.find(',', a + 1);
    EXPECT_EQ(std::stod(line.substr(a + 1, b - a - 1)), 0.0) << line;
    ++rows;
  }
  EXPECT_EQ(rows, 8);
  EXPECT_TRUE(fs::exists(dir / "filter0.csv"));
}

TEST(Cli, AnalyzeFeaturesAndLbp) {
  CliResult r = run({"analyze", "--what", "features", "--model", trained_edge_model().string(), "--samples", "2", "--size",
               "16", "--tap", "stage1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("hf_ratio,"), std::string::npos);
  r = run({"analyze", "--what", "lbp", "--model", trained_edge_model().string()});
  EXPECT_EQ(r.code, 2);  // PiDiNet has no binary kernels
}

TEST(Cli, BenchChecksumIndependentOfThreads) {
  auto checksum = [](const std::string& threads) {
    const CliResult r = run({"bench", "--arch", "pidinet-tiny", "--size", "32", "--iters", "1", "--warmup", "0",
                       "--threads", threads});
    EXPECT_EQ(r.code, 0) << r.err;
    return r.out.substr(r.out.find("checksum"));
  };
  EXPECT_EQ(checksum("1"), checksum("3"));
}
