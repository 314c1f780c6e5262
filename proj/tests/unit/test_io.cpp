#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "pidi/checkpoint.hpp"
#include "pidi/image.hpp"

using namespace pidi;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "pidi_test_io";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

nn::NetworkSpec tiny_edge_spec() {
  nn::NetworkSpec s;
  s.base_channels = 4;
  return s;
}

}  // namespace

TEST(Checkpoint, RoundTripRestoresEveryParameter) {
  std::mt19937_64 rng(1);
  const nn::NetworkSpec spec = tiny_edge_spec();
  nn::PiDiNet<float> a(spec, rng), b(spec, rng);
  const fs::path p = temp_path("roundtrip.pidn");
  io::save_checkpoint(p.string(), io::make_checkpoint(spec, a.parameters()));
  const io::Checkpoint cp = io::load_checkpoint(p.string());
  EXPECT_EQ(cp.spec.to_string(), spec.to_string());
  ASSERT_NE(cp.find("fuse.weight"), nullptr);
  EXPECT_EQ(cp.find("no.such.tensor"), nullptr);
  io::load_parameters(cp, b.parameters());
  const auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].name, pb[i].name);
    EXPECT_EQ(max_abs_diff(*pa[i].value, *pb[i].value), 0.0f) << pa[i].name;
  }
  const Tensor x = random_uniform<float>({1, 3, 16, 16}, 0, 1, rng);
  EXPECT_EQ(max_abs_diff(a.forward(x).back(), b.forward(x).back()), 0.0f);
}

TEST(Checkpoint, ClassifierRoundTripKeepsTask) {
  std::mt19937_64 rng(2);
  nn::NetworkSpec spec;
  spec.task = nn::Task::classify;
  spec.stem_channels = 8;
  spec.stage_widths = {8, 16};
  spec.num_classes = 3;
  const auto net = nn::build_bipidinet<float>(spec, rng);
  const fs::path p = temp_path("cls.pidn");
  io::save_checkpoint(p.string(), io::make_checkpoint(spec, nn::parameters(*net)));
  const io::Checkpoint cp = io::load_checkpoint(p.string());
  EXPECT_EQ(cp.spec.task, nn::Task::classify);
  EXPECT_EQ(cp.spec.to_string(), spec.to_string());
}

TEST(Checkpoint, RejectsCorruptHeaders) {
  std::mt19937_64 rng(3);
  const nn::NetworkSpec spec = tiny_edge_spec();
  nn::PiDiNet<float> net(spec, rng);
  const fs::path good = temp_path("good.pidn");
  io::save_checkpoint(good.string(), io::make_checkpoint(spec, net.parameters()));
  const std::string bytes = slurp(good);
  const fs::path bad = temp_path("bad.pidn");

  auto expect_rejected = [&](std::string b) {
    spit(bad, b);
    EXPECT_THROW(io::load_checkpoint(bad.string()), FormatError);
  };
  std::string b = bytes;
  b[0] = 'X';
  expect_rejected(b);
  for (std::uint32_t version : {0u, 2u, 77u}) {
    b = bytes;
    std::memcpy(b.data() + 4, &version, 4);
    expect_rejected(b);
  }
  b = bytes;
  const std::uint32_t task = 5;
  std::memcpy(b.data() + 8, &task, 4);
  expect_rejected(b);
  b = bytes;
  const std::uint32_t wrong_task = 1;
  std::memcpy(b.data() + 8, &wrong_task, 4);
  expect_rejected(b);
  expect_rejected(bytes.substr(0, bytes.size() / 2));
  expect_rejected("");
  EXPECT_THROW(io::load_checkpoint(temp_path("missing.pidn").string()), FormatError);
}

TEST(Checkpoint, LoadParametersChecksNamesAndShapes) {
  std::mt19937_64 rng(4);
  const nn::NetworkSpec spec = tiny_edge_spec();
  nn::PiDiNet<float> net(spec, rng);
  const io::Checkpoint full = io::make_checkpoint(spec, net.parameters());

  io::Checkpoint missing = full;
  missing.tensors.pop_back();
  EXPECT_THROW(io::load_parameters(missing, net.parameters()), FormatError);

  io::Checkpoint extra = full;
  extra.tensors.emplace_back("stray", Tensor({1}));
  EXPECT_THROW(io::load_parameters(extra, net.parameters()), FormatError);

  io::Checkpoint reshaped = full;
  reshaped.tensors.front().second = Tensor({1, 1, 1, 1});
  EXPECT_THROW(io::load_parameters(reshaped, net.parameters()), FormatError);

  nn::NetworkSpec wider = spec;
  wider.base_channels = 8;
  nn::PiDiNet<float> other(wider, rng);
  EXPECT_THROW(io::load_parameters(full, other.parameters()), FormatError);
  EXPECT_NO_THROW(io::load_parameters(full, net.parameters()));
}

TEST(Pnm, ParsesAsciiGrayWithComments) {
  const io::Image img = io::parse_pnm("P2\n# a comment\n3 2 # trailing\n4\n0 1 2\n3 4 # mid\n0\n");
  EXPECT_EQ(img.width, 3);
  EXPECT_EQ(img.height, 2);
  EXPECT_EQ(img.channels, 1);
  // maxval 4 is rescaled to 8 bits with rounding.
  EXPECT_EQ(img.samples, (std::vector<std::uint8_t>{0, 64, 128, 191, 255, 0}));
}

TEST(Pnm, ParsesAsciiAndBinaryColour) {
  const io::Image a = io::parse_pnm("P3 2 1 255 10 20 30 40 50 60");
  EXPECT_EQ(a.channels, 3);
  EXPECT_EQ(a.samples, (std::vector<std::uint8_t>{10, 20, 30, 40, 50, 60}));
  const std::string raw = std::string("P6\n2 1\n255\n") + std::string("\x0a\x14\x1e\x28\x32\x3c", 6);
  EXPECT_EQ(io::parse_pnm(raw).samples, a.samples);
}

TEST(Pnm, ParsesBinaryGrayIncludingSixteenBit) {
  const io::Image a = io::parse_pnm(std::string("P5 2 2 255\n") + std::string("\x00\x7f\x80\xff", 4));
  EXPECT_EQ(a.samples, (std::vector<std::uint8_t>{0, 127, 128, 255}));
  const io::Image b = io::parse_pnm(std::string("P5 2 1 65535\n") + std::string("\xff\xff\x80\x00", 4));
  EXPECT_EQ(b.samples, (std::vector<std::uint8_t>{255, 128}));
}

TEST(Pnm, MalformedInputIsRejected) {
  for (const std::string& bad :
       {std::string(""), std::string("P1 1 1\n1"), std::string("Q5 1 1 255\n\x01"), std::string("P2 2 2 255 1 2 3"),
        std::string("P2 1 1 0 0"), std::string("P2 0 1 255"), std::string("P2 1 1 70000 1"),
        std::string("P2 1 1 10 11"), std::string("P5 2 2 255\n\x01\x02"), std::string("P5 1 1 255"),
        std::string("P2 x 1 255 0")}) {
    EXPECT_THROW(io::parse_pnm(bad), FormatError) << bad;
  }
  EXPECT_THROW(io::read_pnm(temp_path("absent.pgm").string()), FormatError);
}

TEST(Pnm, WriteThenReadIsLossless) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> d(0, 255);
  for (int channels : {1, 3}) {
    io::Image img{7, 5, channels, {}};
    for (int i = 0; i < 7 * 5 * channels; ++i) img.samples.push_back(static_cast<std::uint8_t>(d(rng)));
    const fs::path p = temp_path(channels == 1 ? "rt.pgm" : "rt.ppm");
    io::write_pnm(p.string(), img);
    const io::Image back = io::read_pnm(p.string());
    EXPECT_EQ(back.width, 7);
    EXPECT_EQ(back.height, 5);
    EXPECT_EQ(back.channels, channels);
    EXPECT_EQ(back.samples, img.samples);
  }
  EXPECT_THROW(io::write_pnm(temp_path("x.pgm").string(), io::Image{2, 2, 2, std::vector<std::uint8_t>(8)}),
               std::invalid_argument);
  EXPECT_THROW(io::write_pnm(temp_path("x.pgm").string(), io::Image{2, 2, 1, std::vector<std::uint8_t>(3)}),
               std::invalid_argument);
}

TEST(Pnm, TensorConversions) {
  const io::Image gray{2, 1, 1, {0, 255}};
  const Tensor g = io::image_to_tensor(gray);
  EXPECT_EQ(g.shape(), (Shape{1, 3, 1, 2}));
  for (int c = 0; c < 3; ++c) {
    EXPECT_EQ(g(0, c, 0, 0), 0.0f);
    EXPECT_EQ(g(0, c, 0, 1), 1.0f);
  }
  const io::Image rgb{1, 1, 3, {10, 20, 30}};
  const Tensor t = io::image_to_tensor(rgb);
  EXPECT_FLOAT_EQ(t(0, 1, 0, 0), 20.0f / 255.0f);
  EXPECT_EQ(io::tensor_to_image(t).samples, rgb.samples);

  Tensor map({1, 1, 1, 4});
  map(0, 0, 0, 0) = -0.5f;
  map(0, 0, 0, 1) = 0.5f;
  map(0, 0, 0, 2) = 1.0f / 255.0f * 0.49f;
  map(0, 0, 0, 3) = 2.0f;
  EXPECT_EQ(io::map_to_image(map).samples, (std::vector<std::uint8_t>{0, 128, 0, 255}));
  EXPECT_THROW(io::tensor_to_image(Tensor({1, 1, 2, 2})), ShapeError);
}
