#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "pulseprobe/config.hpp"
#include "pulseprobe/io.hpp"

using namespace pulseprobe;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("pulseprobe_test_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

FrameContainer sample_container() {
  FrameContainer c;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(0.0f, 1000.0f);
  for (std::size_t j = 0; j < 3; ++j) {
    IntensityFrame f;
    f.counts = RealGrid(6, 4);
    for (auto& v : f.counts) v = static_cast<double>(u(rng));
    f.frame_index = j;
    f.pitch = 27e-6;
    f.nominal_position = {1e-6 * static_cast<double>(j), -0.5e-6};
    c.frames.frames.push_back(f);
    PositionEstimate p;
    p.frame_index = j;
    p.nominal = f.nominal_position;
    c.positions.push_back(p);
  }
  c.frames.mask = MaskGrid(6, 4, 1);
  c.frames.mask(0, 0) = 0;
  c.positions[1].coarse = Vec2{0.1e-6, 0.2e-6};
  c.positions[1].refined = Vec2{1.0 / 3.0 * 1e-6, -0.7e-6};
  c.positions[2].status = FrameStatus::RejectedOutOfField;
  IntensityFrame dark;
  dark.counts = RealGrid(6, 4, 2.5);
  dark.pitch = 27e-6;
  c.dark = dark;
  c.geometry = json{{"wavelength", 15e-9}};
  c.provenance.stage = "test";
  return c;
}

}  // namespace

TEST(Sha256, KnownVectors) {
  EXPECT_EQ(sha256(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Blobs, LittleEndianRoundTrip) {
  const std::vector<double> v{1.0, -2.5, 1e-300, 3.141592653589793};
  EXPECT_EQ(decode_f64(encode_f64(v.data(), v.size()), v.size(), "v"), v);
  const std::string b = encode_f64(v.data(), 1);
  ASSERT_EQ(b.size(), 8u);
  EXPECT_EQ(static_cast<unsigned char>(b[7]), 0x3f);  // 1.0 = 0x3ff0000000000000
  EXPECT_THROW(decode_f64(b, 2, "short"), Error);
  const ComplexGrid g = oracle::random_grid(3, 5, 1);
  const auto back = decode_c128(encode_c128(g.data(), g.size()), g.size(), "g");
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(back[i], g[i]);
}

TEST(PositionsCsv, RoundTripIsExact) {
  const FrameContainer c = sample_container();
  const std::string text = positions_csv(c.positions);
  const auto back = parse_positions_csv(text, "mem");
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[1].refined->x, c.positions[1].refined->x);
  EXPECT_EQ(back[1].coarse->y, c.positions[1].coarse->y);
  EXPECT_FALSE(back[0].coarse.has_value());
  EXPECT_EQ(back[2].status, FrameStatus::RejectedOutOfField);
  EXPECT_EQ(positions_csv(back), text);
  EXPECT_THROW(parse_positions_csv("frame,x\n0,1\n", "bad"), Error);
  EXPECT_THROW(parse_positions_csv(text.substr(0, text.size() - 10) + "bogus\n", "bad"), Error);
}

TEST(FrameContainer, RoundTripIsBitExact) {
  TempDir t("container");
  const FrameContainer c = sample_container();
  write_container(t.path / "c", c);
  const FrameContainer back = read_container(t.path / "c");
  ASSERT_EQ(back.frames.size(), 3u);
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_EQ(back.frames.frames[j].counts, c.frames.frames[j].counts);
    EXPECT_EQ(back.frames.frames[j].nominal_position.x, c.frames.frames[j].nominal_position.x);
    EXPECT_EQ(back.frames.frames[j].pitch, c.frames.frames[j].pitch);
  }
  EXPECT_EQ(back.frames.mask, c.frames.mask);
  ASSERT_TRUE(back.dark.has_value());
  EXPECT_EQ(back.dark->counts, c.dark->counts);
  EXPECT_EQ(back.provenance.stage, "test");
  EXPECT_EQ(positions_csv(back.positions), positions_csv(c.positions));

  write_container(t.path / "d", back);
  EXPECT_EQ(sha256_tree(t.path / "c"), sha256_tree(t.path / "d"));
}

TEST(FrameContainer, DamagedInputsAreErrors) {
  TempDir t("damaged");
  write_container(t.path / "c", sample_container());
  EXPECT_THROW(read_container(t.path / "missing"), Error);

  const fs::path blob = t.path / "c" / frame_file(1);
  std::string bytes = read_bytes(blob);
  write_bytes(blob, bytes.substr(0, bytes.size() - 4));
  try {
    read_container(t.path / "c");
    FAIL() << "truncated frame accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Input);
  }
  fs::remove(blob);
  EXPECT_THROW(read_container(t.path / "c"), Error);

  write_bytes(t.path / "c" / "manifest.json", "{ not json");
  EXPECT_THROW(read_container(t.path / "c"), Error);
}

TEST(Checkpoint, RoundTripIsExact) {
  TempDir t("checkpoint");
  ReconState s;
  s.object = oracle::random_field(9, 11, 2, 1.6e-7);
  s.object_center = {0.25e-6, -1e-6};
  s.basis.ny = 4;
  s.basis.nx = 5;
  s.basis.pitch = 1.6e-7;
  s.basis.wavelength = 15e-9;
  s.basis.M = oracle::random_matrix(20, 2, 3);
  s.basis.Vhat = oracle::random_matrix(3, 2, 4);
  s.basis.sigma = Eigen::Vector2d(3.0, 1.5);
  s.positions = sample_container().positions;
  s.errors = {5.0, 4.0, 3.5};
  s.iteration = 3;
  s.dm_iterations = 2;
  Provenance prov;
  prov.stage = "reconstruct";
  prov.config_hash = "abc";
  prov.inputs["frames"] = "def";
  write_checkpoint(t.path / "ck", s, prov);

  Provenance got;
  const ReconState b = read_checkpoint(t.path / "ck", &got);
  EXPECT_EQ(b.object.values, s.object.values);
  EXPECT_EQ(b.object_center.x, s.object_center.x);
  EXPECT_EQ(b.basis.M, s.basis.M);
  EXPECT_EQ(b.basis.Vhat, s.basis.Vhat);
  EXPECT_EQ(b.basis.sigma, s.basis.sigma);
  EXPECT_EQ(b.errors, s.errors);
  EXPECT_EQ(b.iteration, 3u);
  EXPECT_EQ(b.dm_iterations, 2u);
  EXPECT_EQ(got.inputs.at("frames"), "def");

  write_bytes(t.path / "ck" / "sigma.f64", "short");
  EXPECT_THROW(read_checkpoint(t.path / "ck"), Error);
  EXPECT_THROW(read_checkpoint(t.path / "nothing"), Error);
}

TEST(Config, DefaultsAndHash) {
  const RunConfig c = parse_config(json::object());
  EXPECT_EQ(c.schedule.engine.dm_iterations, 200u);
  EXPECT_EQ(c.schedule.engine.ml_iterations, 800u);
  EXPECT_DOUBLE_EQ(c.wavelength, 15e-9);
  EXPECT_DOUBLE_EQ(c.detector_distance, 0.150);
  EXPECT_EQ(config_hash(c), config_hash(parse_config(resolved_config(c))));
  RunConfig d = parse_config(json{{"seed", 9}});
  EXPECT_NE(config_hash(c), config_hash(d));
  // The output directory does not enter the hash.
  d = parse_config(json{{"output", "elsewhere"}});
  EXPECT_EQ(config_hash(c), config_hash(d));
}

TEST(Config, StrictKeysAndTypes) {
  auto kind_of = [](const json& j) {
    try {
      parse_config(j);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::Numeric;
  };
  EXPECT_EQ(kind_of(json{{"engine", {{"rnak", 3}}}}), ErrorKind::Config);
  EXPECT_EQ(kind_of(json{{"colour", 1}}), ErrorKind::Config);
  EXPECT_EQ(kind_of(json{{"engine", {{"rank", "four"}}}}), ErrorKind::Config);
  EXPECT_EQ(kind_of(json{{"engine", {{"rank", -1}}}}), ErrorKind::Config);
  EXPECT_EQ(kind_of(json{{"engine", {{"rank", 0}}}}), ErrorKind::Config);
  EXPECT_EQ(kind_of(json{{"geometry", {{"wavelength", -1.0}}}}), ErrorKind::Config);
  EXPECT_EQ(kind_of(json{{"simulation", {{"scans", json::array()}}}}), ErrorKind::Config);
  EXPECT_EQ(parse_config(json{{"engine", {{"rank", 3}}}}).schedule.engine.rank, 3u);
}

TEST(Config, LoadErrors) {
  TempDir t("config");
  EXPECT_THROW(load_config(t.path / "absent.json"), Error);
  write_bytes(t.path / "bad.json", "{\"seed\": ");
  try {
    load_config(t.path / "bad.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
  }
  write_bytes(t.path / "ok.json", "{\"seed\": 4, \"engine\": {\"dm_iterations\": 3}}");
  const RunConfig c = load_config(t.path / "ok.json");
  EXPECT_EQ(c.seed, 4u);
  EXPECT_EQ(c.schedule.engine.dm_iterations, 3u);
}
