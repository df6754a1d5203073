#include "nback/run_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "nback/errors.hpp"

namespace nback {
namespace fs = std::filesystem;

namespace {

constexpr std::array<char, 8> kMagic = {'N', 'B', 'A', 'C', 'K', 'P', 'R', 'M'};

void put_u64(std::ostream& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint64_t get_u64(std::istream& in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    const int c = in.get();
    if (c == EOF) throw ParseError("unexpected end of file in length field");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

void put_f32s(std::ostream& out, std::span<const float> values) {
  std::string buf(values.size() * 4, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) buf[i * 4 + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xffu);
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

void get_f32s(std::istream& in, std::span<float> values) {
  std::string buf(values.size() * 4, '\0');
  in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size()) throw ParseError("truncated float32 buffer");
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) {
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[i * 4 + static_cast<std::size_t>(b)])) << (8 * b);
    }
    values[i] = std::bit_cast<float>(bits);
  }
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot open {} for writing", path.string()));
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

double to_double(const std::string& s, std::size_t line, const fs::path& file) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(fmt::format("{}: bad number '{}'", file.filename().string(), s), line);
  }
}

}  // namespace

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"n_layers", c.n_layers}, {"n_heads", c.n_heads},           {"d_model", c.d_model},
       {"seq_len", c.seq_len},   {"vocab", c.vocab},               {"use_residual", c.use_residual},
       {"init_std", c.init_std},
       {"depth_scaled_init", c.depth_scaled_init}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.n_layers = j.value("n_layers", d.n_layers);
  c.n_heads = j.value("n_heads", d.n_heads);
  c.d_model = j.value("d_model", d.d_model);
  c.seq_len = j.value("seq_len", d.seq_len);
  c.vocab = j.value("vocab", d.vocab);
  c.use_residual = j.value("use_residual", d.use_residual);
  c.init_std = j.value("init_std", d.init_std);
  c.depth_scaled_init = j.value("depth_scaled_init", d.depth_scaled_init);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},         {"batch_size", c.batch_size}, {"lr", c.lr},
       {"adam_beta1", c.adam_beta1}, {"adam_beta2", c.adam_beta2}, {"adam_eps", c.adam_eps},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.lr = j.value("lr", d.lr);
  c.adam_beta1 = j.value("adam_beta1", d.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", d.adam_beta2);
  c.adam_eps = j.value("adam_eps", d.adam_eps);
  c.seed = j.value("seed", d.seed);
}

void save_params(const ModelParams<float>& params, const ModelConfig& config, const fs::path& path) {
  nlohmann::json header;
  header["model_config"] = config;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  params.visit([&](const std::string& name, const Matrix<float>& m) {
    const std::uint64_t bytes = m.size() * 4;
    header["tensors"].push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", offset}, {"bytes", bytes}});
    offset += bytes;
  });
  const std::string text = header.dump();
  auto out = open_out(path);
  out.write(kMagic.data(), kMagic.size());
  put_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  params.visit([&](const std::string&, const Matrix<float>& m) { put_f32s(out, m.data()); });
  if (!out) throw std::runtime_error(fmt::format("write failed: {}", path.string()));
}

std::pair<ModelConfig, ModelParams<float>> load_params(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(fmt::format("cannot open {}", path.string()));
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (in.gcount() != static_cast<std::streamsize>(magic.size()) || magic != kMagic) {
    throw ParseError(fmt::format("{}: not a parameter checkpoint", path.string()));
  }
  const auto len = get_u64(in);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (static_cast<std::uint64_t>(in.gcount()) != len) throw ParseError("truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(fmt::format("checkpoint header: {}", e.what()));
  }
  const auto config = header.at("model_config").get<ModelConfig>();
  auto params = zero_params<float>(config);
  const auto& tensors = header.at("tensors");
  std::size_t k = 0;
  std::uint64_t expected_offset = 0;
  params.visit([&](const std::string& name, Matrix<float>& m) {
    if (k >= tensors.size()) throw ParseError("checkpoint lists too few tensors");
    const auto& t = tensors[k++];
    if (t.at("name").get<std::string>() != name || t.at("rows").get<std::size_t>() != m.rows() ||
        t.at("cols").get<std::size_t>() != m.cols() || t.at("offset").get<std::uint64_t>() != expected_offset) {
      throw ParseError(fmt::format("checkpoint tensor {} does not match the model layout", name));
    }
    get_f32s(in, m.data());
    expected_offset += m.size() * 4;
  });
  if (k != tensors.size()) throw ParseError("checkpoint lists extra tensors");
  return {config, std::move(params)};
}

void write_f32_matrix(const Matrix<float>& m, const fs::path& path) {
  auto out = open_out(path);
  put_f32s(out, m.data());
  if (!out) throw std::runtime_error(fmt::format("write failed: {}", path.string()));
}

Matrix<float> read_f32_matrix(const fs::path& path, std::size_t rows, std::size_t cols) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(fmt::format("cannot open {}", path.string()));
  Matrix<float> m(rows, cols);
  get_f32s(in, m.data());
  if (in.peek() != EOF) throw ParseError(fmt::format("{}: more than {}x{} floats", path.string(), rows, cols));
  return m;
}

fs::path attention_file(const fs::path& run_dir, int epoch, int layer, int head) {
  return run_dir / "attention" / fmt::format("epoch_{}_L{}H{}.f32", epoch, layer, head);
}

void write_run(const RunArtifact& art, const Dataset& dataset, const fs::path& dir, const nlohmann::json& extra) {
  fs::create_directories(dir / "attention");

  nlohmann::json cfg = extra;
  cfg["n_back"] = art.n_back;
  cfg["model_config"] = art.model_config;
  cfg["train_config"] = art.train_config;
  cfg["status"] = art.failed ? "failed" : "ok";
  cfg["epochs_completed"] = art.epochs.size();
  {
    auto out = open_out(dir / "config.json");
    out << cfg.dump(2) << '\n';
  }

  {
    auto out = open_out(dir / "metrics.csv");
    out << "epoch,train_loss,test_accuracy";
    for (int p = 0; p < art.model_config.seq_len; ++p) out << fmt::format(",pos_{:02d}", p);
    out << '\n';
    for (const auto& e : art.epochs) {
      out << fmt::format("{},{:.9g},{:.9g}", e.epoch, e.train_loss, e.test_accuracy);
      for (double a : e.per_position_accuracy) out << fmt::format(",{:.9g}", a);
      out << '\n';
    }
  }

  {
    auto out = open_out(dir / "entropy.csv");
    out << "epoch,layer,head,mean_entropy\n";
    for (const auto& e : art.epochs) {
      for (std::size_t k = 0; k < e.mean_entropy.size(); ++k) {
        out << fmt::format("{},{},{},{:.9g}\n", e.epoch, e.mean_attention[k].layer, e.mean_attention[k].head,
                           e.mean_entropy[k]);
      }
    }
  }

  for (const auto& e : art.epochs) {
    for (const auto& rec : e.mean_attention) write_f32_matrix(rec.matrix, attention_file(dir, e.epoch, rec.layer, rec.head));
  }

  {
    auto out = open_out(dir / "predictions.csv");
    out << "index,sequence,labels,predicted\n";
    for (std::size_t i = 0; i < art.predictions.size() && i < dataset.test.size(); ++i) {
      std::string pred;
      for (int c : art.predictions[i]) pred.push_back(c == 1 ? kMatch : kNonmatch);
      out << fmt::format("{},{},{},{}\n", i, dataset.test[i].sequence, dataset.test[i].labels, pred);
    }
  }

  save_params(art.final_params, art.model_config, dir / "params.bin");

  if (art.failed) {
    auto out = open_out(dir / "FAILED");
    out << art.failure << '\n';
  }
}

Matrix<float> RunRecord::attention(int epoch, int layer, int head) const {
  const auto path = attention_file(dir, epoch, layer, head);
  if (!fs::exists(path)) throw ParseError(fmt::format("missing attention map {}", path.string()));
  return read_f32_matrix(path, kSequenceLength, kSequenceLength);
}

RunRecord load_run(const fs::path& dir) {
  RunRecord r;
  r.dir = dir;
  nlohmann::json cfg;
  {
    std::ifstream in(dir / "config.json");
    if (!in) throw ParseError(fmt::format("missing {}", (dir / "config.json").string()));
    try {
      cfg = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(fmt::format("{}: {}", (dir / "config.json").string(), e.what()));
    }
  }
  r.n_back = cfg.at("n_back").get<int>();
  const auto mc = cfg.at("model_config").get<ModelConfig>();
  r.layers = mc.n_layers;
  r.heads = mc.n_heads;
  r.seed_index = cfg.value("seed_index", 0);
  r.failed = cfg.value("status", std::string("ok")) != "ok" || fs::exists(dir / "FAILED");

  const auto metrics_path = dir / "metrics.csv";
  std::ifstream in(metrics_path);
  if (!in) throw ParseError(fmt::format("missing {}", metrics_path.string()));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 || line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 3 + static_cast<std::size_t>(mc.seq_len)) {
      throw ParseError(fmt::format("{}: expected {} columns, got {}", metrics_path.string(), 3 + mc.seq_len, cells.size()),
                       lineno);
    }
    MetricsRow row;
    row.epoch = static_cast<int>(to_double(cells[0], lineno, metrics_path));
    row.train_loss = to_double(cells[1], lineno, metrics_path);
    row.test_accuracy = to_double(cells[2], lineno, metrics_path);
    for (std::size_t c = 3; c < cells.size(); ++c) row.per_position.push_back(to_double(cells[c], lineno, metrics_path));
    if (row.epoch != static_cast<int>(r.metrics.size()) + 1) {
      throw ParseError(fmt::format("{}: epoch {} out of sequence", metrics_path.string(), row.epoch), lineno);
    }
    r.metrics.push_back(std::move(row));
  }

  const auto entropy_path = dir / "entropy.csv";
  std::ifstream ein(entropy_path);
  if (!ein) throw ParseError(fmt::format("missing {}", entropy_path.string()));
  r.entropy.assign(r.metrics.size(), std::vector<double>(static_cast<std::size_t>(r.layers * r.heads), 0.0));
  lineno = 0;
  while (std::getline(ein, line)) {
    ++lineno;
    if (lineno == 1 || line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 4) throw ParseError(fmt::format("{}: expected 4 columns", entropy_path.string()), lineno);
    const int epoch = static_cast<int>(to_double(cells[0], lineno, entropy_path));
    const int layer = static_cast<int>(to_double(cells[1], lineno, entropy_path));
    const int head = static_cast<int>(to_double(cells[2], lineno, entropy_path));
    if (epoch < 1 || epoch > static_cast<int>(r.metrics.size()) || layer < 0 || layer >= r.layers || head < 0 ||
        head >= r.heads) {
      throw ParseError(fmt::format("{}: entry out of range", entropy_path.string()), lineno);
    }
    r.entropy[static_cast<std::size_t>(epoch - 1)][static_cast<std::size_t>(layer * r.heads + head)] =
        to_double(cells[3], lineno, entropy_path);
  }
  return r;
}

std::vector<RunRecord> load_runs(const fs::path& root) {
  std::vector<fs::path> dirs;
  if (!fs::exists(root)) throw ParseError(fmt::format("runs directory {} does not exist", root.string()));
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.is_regular_file() && entry.path().filename() == "config.json") {
      const auto dir = entry.path().parent_path();
      // Skip in-progress temporaries left by an interrupted grid.
      if (dir.filename().string().starts_with(".tmp")) continue;
      dirs.push_back(dir);
    }
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<RunRecord> out;
  out.reserve(dirs.size());
  for (const auto& d : dirs) out.push_back(load_run(d));
  return out;
}

}  // namespace nback
