#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "lanegraph/graph_io.hpp"
#include "lanegraph/model.hpp"

namespace lanegraph {

namespace {

constexpr char kMagic[6] = {'L', 'G', 'C', 'K', '1', '\n'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

class Reader {
 public:
  explicit Reader(std::string buf) : buf_(std::move(buf)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(buf_[pos_ + static_cast<std::size_t>(i)]);
    pos_ += 4;
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw FormatError("checkpoint: truncated file");
  }
  std::string buf_;
  std::size_t pos_ = 0;
};

void put_tensor(std::string& out, const std::string& name, const Matrix<float>& m) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  put_u32(out, 2);
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    std::uint32_t bits = 0;
    std::memcpy(&bits, m.data() + i, sizeof bits);
    put_u32(out, bits);
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ostringstream header;
  header << "version=" << kCheckpointVersion << '\n';
  for (const auto& [k, v] : ckpt.config.to_map()) header << "model." << k << '=' << v << '\n';
  header << "vocab.num_bins=" << ckpt.vocab.num_bins << '\n'
         << "vocab.max_vertices=" << ckpt.vocab.max_vertices << '\n'
         << "vocab.vertex_len=" << ckpt.vocab.vertex_len << '\n'
         << "vocab.edge_len=" << ckpt.vocab.edge_len << '\n'
         << "step=" << ckpt.step << '\n'
         << "optimizer=" << (ckpt.has_optimizer ? 1 : 0) << '\n';

  std::string out(kMagic, sizeof kMagic);
  const std::string h = header.str();
  put_u32(out, static_cast<std::uint32_t>(h.size()));
  out += h;

  std::vector<std::pair<std::string, const Matrix<float>*>> tensors;
  ckpt.params.for_each([&](const std::string& name, const Matrix<float>& m) { tensors.emplace_back(name, &m); });
  if (ckpt.has_optimizer) {
    ckpt.adam_m.for_each([&](const std::string& name, const Matrix<float>& m) { tensors.emplace_back("adam_m." + name, &m); });
    ckpt.adam_v.for_each([&](const std::string& name, const Matrix<float>& m) { tensors.emplace_back("adam_v." + name, &m); });
  }
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, m] : tensors) put_tensor(out, name, *m);
  write_text_file(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Reader in(read_text_file(path));
  if (in.bytes(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) throw FormatError("checkpoint: bad magic in " + path.string());
  std::map<std::string, std::string> kv;
  {
    std::istringstream header(in.bytes(in.u32()));
    std::string line;
    while (std::getline(header, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw FormatError("checkpoint: bad header line '" + line + "'");
      kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }
  if (kv["version"] != kCheckpointVersion) throw FormatError("checkpoint: unrecognized version '" + kv["version"] + "'");

  Checkpoint ckpt;
  std::map<std::string, std::string> model_kv;
  for (const auto& [k, v] : kv) {
    if (k.rfind("model.", 0) == 0) model_kv[k.substr(6)] = v;
  }
  ckpt.config = ModelConfig::from_map(model_kv);
  try {
    ckpt.vocab.num_bins = std::stoul(kv.at("vocab.num_bins"));
    ckpt.vocab.max_vertices = std::stoul(kv.at("vocab.max_vertices"));
    ckpt.vocab.vertex_len = std::stoul(kv.at("vocab.vertex_len"));
    ckpt.vocab.edge_len = std::stoul(kv.at("vocab.edge_len"));
    ckpt.step = std::stoull(kv.at("step"));
    ckpt.has_optimizer = kv.at("optimizer") == "1";
  } catch (const std::exception&) {
    throw FormatError("checkpoint: missing or malformed vocab/step fields");
  }
  ckpt.config.check();

  std::map<std::string, Matrix<float>> tensors;
  const std::uint32_t count = in.u32();
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::string name = in.bytes(in.u32());
    const std::uint32_t rank = in.u32();
    if (rank != 2) throw FormatError("checkpoint: tensor " + name + " has unsupported rank");
    const std::uint32_t rows = in.u32(), cols = in.u32();
    Matrix<float> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const std::uint32_t bits = in.u32();
      std::memcpy(m.data() + i, &bits, sizeof bits);
    }
    tensors[name] = std::move(m);
  }
  if (!in.done()) throw FormatError("checkpoint: trailing bytes");

  auto fill = [&](Parameters<float>& p, const std::string& prefix) {
    p = make_parameter_shapes(ckpt.config, ckpt.vocab);
    p.for_each([&](const std::string& name, Matrix<float>& m) {
      const auto it = tensors.find(prefix + name);
      if (it == tensors.end()) throw FormatError("checkpoint: missing tensor " + prefix + name);
      if (it->second.rows() != m.rows() || it->second.cols() != m.cols()) {
        throw FormatError("checkpoint: tensor " + prefix + name + " has the wrong shape");
      }
      m = it->second;
    });
  };
  fill(ckpt.params, "");
  if (ckpt.has_optimizer) {
    fill(ckpt.adam_m, "adam_m.");
    fill(ckpt.adam_v, "adam_v.");
  }
  return ckpt;
}

}  // namespace lanegraph
