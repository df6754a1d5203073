#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "nback/errors.hpp"
#include "nback/run_io.hpp"

using namespace nback;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("nback_io_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("checkpoint round trip") {
  const auto dir = temp_dir("params");
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 8;
  const auto p = init_params<float>(c, 4);
  save_params(p, c, dir / "params.bin");
  const auto [c2, p2] = load_params(dir / "params.bin");
  CHECK(c2 == c);
  std::vector<const Matrix<float>*> a, b;
  p.visit([&](const std::string&, const Matrix<float>& m) { a.push_back(&m); });
  p2.visit([&](const std::string&, const Matrix<float>& m) { b.push_back(&m); });
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i] == *b[i]);

  const auto bytes = slurp(dir / "params.bin");
  CHECK(bytes.substr(0, 8) == "NBACKPRM");
  std::ofstream(dir / "cut.bin", std::ios::binary) << bytes.substr(0, bytes.size() - 3);
  CHECK_THROWS_AS(load_params(dir / "cut.bin"), ParseError);
  std::ofstream(dir / "junk.bin", std::ios::binary) << "not a checkpoint";
  CHECK_THROWS_AS(load_params(dir / "junk.bin"), ParseError);
}

TEST_CASE("float32 matrices are stored little endian") {
  const auto dir = temp_dir("f32");
  const Matrix<float> m{{1.0f, -2.5f}};
  write_f32_matrix(m, dir / "m.f32");
  const auto bytes = slurp(dir / "m.f32");
  REQUIRE(bytes.size() == 8);
  // 1.0f = 0x3f800000
  CHECK(static_cast<unsigned char>(bytes[3]) == 0x3f);
  CHECK(static_cast<unsigned char>(bytes[2]) == 0x80);
  CHECK(read_f32_matrix(dir / "m.f32", 1, 2) == m);
  CHECK_THROWS_AS(read_f32_matrix(dir / "m.f32", 1, 1), ParseError);
  CHECK_THROWS_AS(read_f32_matrix(dir / "m.f32", 2, 2), ParseError);
}

TEST_CASE("a written run loads back with the same metrics") {
  const auto dir = temp_dir("run");
  const auto ds = generate_dataset(2, 5, 64, 16);
  ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  TrainConfig t;
  t.epochs = 2;
  const auto art = train_model(ds, c, t);
  write_run(art, ds, dir / "run", {{"seed_index", 3}});

  for (const char* f : {"config.json", "metrics.csv", "entropy.csv", "predictions.csv", "params.bin"}) {
    CHECK(fs::exists(dir / "run" / f));
  }
  CHECK_FALSE(fs::exists(dir / "run" / "FAILED"));
  CHECK(fs::exists(attention_file(dir / "run", 2, 0, 1)));

  const auto r = load_run(dir / "run");
  CHECK(r.n_back == 2);
  CHECK(r.heads == 2);
  CHECK(r.seed_index == 3);
  CHECK_FALSE(r.failed);
  REQUIRE(r.metrics.size() == 2);
  CHECK(r.final_accuracy() == doctest::Approx(art.epochs.back().test_accuracy).epsilon(1e-8));
  CHECK(r.metrics[0].per_position.size() == 24);
  CHECK(r.entropy[1][1] == doctest::Approx(art.epochs[1].mean_entropy[1]).epsilon(1e-8));
  CHECK(r.attention(2, 0, 1) == art.epochs[1].mean_attention[1].matrix);

  std::istringstream pred(slurp(dir / "run" / "predictions.csv"));
  std::string line;
  int rows = -1;
  while (std::getline(pred, line)) ++rows;
  CHECK(rows == 16);

  const auto all = load_runs(dir);
  CHECK(all.size() == 1);

  std::ofstream(dir / "run" / "metrics.csv", std::ios::app) << "7,0.1,0.5\n";
  CHECK_THROWS_AS(load_run(dir / "run"), ParseError);
}
