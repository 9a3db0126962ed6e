#include "tdlab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace tdlab {

namespace {

constexpr char kMagic[7] = {'T', 'D', 'L', 'A', 'B', '1', '\0'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  std::memcpy(b, &v, 8);
  out.write(b, 8);
}

std::uint64_t get_u64(std::istream& in) {
  char b[8];
  if (!in.read(b, 8)) throw std::runtime_error("checkpoint: truncated file");
  std::uint64_t v;
  std::memcpy(&v, b, 8);
  return v;
}

std::string hexfloat(double v) {
  std::ostringstream os;
  os << std::hexfloat << v;
  return os.str();
}

double parse_hexfloat(const std::string& s) { return std::strtod(s.c_str(), nullptr); }

std::string shape_token(const Shape& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "x" : "") + std::to_string(shape[i]);
  return s;
}

Shape parse_shape(const std::string& s) {
  Shape shape;
  std::istringstream is(s);
  std::string part;
  while (std::getline(is, part, 'x')) shape.push_back(std::stoull(part));
  return shape;
}

std::size_t element_size(CheckpointPrecision p) { return p == CheckpointPrecision::f32 ? 4 : 8; }

}  // namespace

std::string to_string(CheckpointPrecision p) { return p == CheckpointPrecision::f32 ? "f32" : "f64"; }

CheckpointPrecision parse_checkpoint_precision(const std::string& s) {
  if (s == "f32") return CheckpointPrecision::f32;
  if (s == "f64") return CheckpointPrecision::f64;
  throw std::invalid_argument("checkpoint precision: expected f32 or f64, got '" + s + "'");
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, const OptimizerState& state,
                     const TrainCursor& cursor, const std::string& config_echo, CheckpointPrecision precision) {
  const ParameterSet& params = model.parameters();
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw std::invalid_argument("save_checkpoint: optimizer state does not match parameters");

  struct Block {
    const char* group;
    const std::string* name;
    const Shape* shape;
    std::span<const double> values;
  };
  std::vector<Block> blocks;
  for (const auto& p : params) blocks.push_back({"param", &p.name, &p.tensor.shape(), p.tensor.data()});
  for (std::size_t i = 0; i < params.size(); ++i)
    blocks.push_back({"m", &params[i].name, &params[i].tensor.shape(), state.m[i]});
  for (std::size_t i = 0; i < params.size(); ++i)
    blocks.push_back({"v", &params[i].name, &params[i].tensor.shape(), state.v[i]});

  std::ostringstream manifest;
  manifest << "precision " << to_string(precision) << '\n'
           << "step " << cursor.step << '\n'
           << "pending_loss_sum " << hexfloat(cursor.pending_loss_sum) << '\n'
           << "pending_loss_count " << cursor.pending_loss_count << '\n'
           << "last_grad_norm " << hexfloat(cursor.last_grad_norm) << '\n';
  const std::size_t esize = element_size(precision);
  std::uint64_t offset = 0;
  for (const auto& b : blocks) {
    manifest << "tensor " << b.group << ' ' << *b.name << ' ' << shape_token(*b.shape) << ' ' << offset << ' '
             << b.values.size() << '\n';
    offset += b.values.size() * esize;
  }
  const std::string manifest_text = manifest.str();

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("save_checkpoint: cannot write " + tmp.string());
    out.write(kMagic, sizeof kMagic);
    put_u64(out, manifest_text.size());
    out.write(manifest_text.data(), static_cast<std::streamsize>(manifest_text.size()));
    for (const auto& b : blocks) {
      if (precision == CheckpointPrecision::f64) {
        out.write(reinterpret_cast<const char*>(b.values.data()), static_cast<std::streamsize>(b.values.size() * 8));
      } else {
        std::vector<float> narrow(b.values.begin(), b.values.end());
        out.write(reinterpret_cast<const char*>(narrow.data()), static_cast<std::streamsize>(narrow.size() * 4));
      }
    }
    put_u64(out, config_echo.size());
    out.write(config_echo.data(), static_cast<std::streamsize>(config_echo.size()));
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
  char magic[sizeof kMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw std::runtime_error("load_checkpoint: " + path.string() + " is not a TDLAB1 checkpoint");
  const std::uint64_t manifest_len = get_u64(in);
  std::string manifest(manifest_len, '\0');
  if (!in.read(manifest.data(), static_cast<std::streamsize>(manifest_len)))
    throw std::runtime_error("load_checkpoint: truncated manifest");

  Checkpoint ck;
  struct Entry {
    std::string group;
    CheckpointTensor tensor;
    std::uint64_t offset;
    std::uint64_t count;
  };
  std::vector<Entry> entries;
  std::istringstream lines(manifest);
  std::string line;
  while (std::getline(lines, line)) {
    std::istringstream f(line);
    std::string key;
    f >> key;
    if (key == "precision") {
      std::string p;
      f >> p;
      ck.precision = parse_checkpoint_precision(p);
    } else if (key == "step") {
      f >> ck.cursor.step;
    } else if (key == "pending_loss_sum") {
      std::string v;
      f >> v;
      ck.cursor.pending_loss_sum = parse_hexfloat(v);
    } else if (key == "pending_loss_count") {
      f >> ck.cursor.pending_loss_count;
    } else if (key == "last_grad_norm") {
      std::string v;
      f >> v;
      ck.cursor.last_grad_norm = parse_hexfloat(v);
    } else if (key == "tensor") {
      Entry e;
      std::string shape;
      f >> e.group >> e.tensor.name >> shape >> e.offset >> e.count;
      if (!f) throw std::runtime_error("load_checkpoint: malformed manifest line '" + line + "'");
      e.tensor.shape = parse_shape(shape);
      if (shape_numel(e.tensor.shape) != e.count)
        throw std::runtime_error("load_checkpoint: shape/count mismatch for " + e.tensor.name);
      entries.push_back(std::move(e));
    } else if (!key.empty()) {
      throw std::runtime_error("load_checkpoint: unknown manifest key '" + key + "'");
    }
  }

  const std::size_t esize = element_size(ck.precision);
  const std::streamoff data_start = in.tellg();
  std::uint64_t data_len = 0;
  for (auto& e : entries) {
    if (e.offset != data_len) throw std::runtime_error("load_checkpoint: non-contiguous tensor offsets");
    data_len += e.count * esize;
    in.seekg(data_start + static_cast<std::streamoff>(e.offset));
    e.tensor.values.resize(e.count);
    if (ck.precision == CheckpointPrecision::f64) {
      in.read(reinterpret_cast<char*>(e.tensor.values.data()), static_cast<std::streamsize>(e.count * 8));
    } else {
      std::vector<float> narrow(e.count);
      in.read(reinterpret_cast<char*>(narrow.data()), static_cast<std::streamsize>(e.count * 4));
      std::copy(narrow.begin(), narrow.end(), e.tensor.values.begin());
    }
    if (!in) throw std::runtime_error("load_checkpoint: truncated tensor data for " + e.tensor.name);
    auto& dst = e.group == "param" ? ck.params : e.group == "m" ? ck.first_moment : ck.second_moment;
    if (e.group != "param" && e.group != "m" && e.group != "v")
      throw std::runtime_error("load_checkpoint: unknown tensor group " + e.group);
    dst.push_back(e.tensor);
  }
  in.seekg(data_start + static_cast<std::streamoff>(data_len));
  const std::uint64_t config_len = get_u64(in);
  ck.config_echo.assign(config_len, '\0');
  if (!in.read(ck.config_echo.data(), static_cast<std::streamsize>(config_len)))
    throw std::runtime_error("load_checkpoint: truncated config echo");
  return ck;
}

void Checkpoint::restore_parameters(Model& model) const {
  ParameterSet& ps = model.parameters();
  if (ps.size() != params.size())
    throw std::runtime_error("checkpoint has " + std::to_string(params.size()) + " parameters, model has " +
                             std::to_string(ps.size()));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (ps[i].name != params[i].name || ps[i].tensor.shape() != params[i].shape)
      throw std::runtime_error("checkpoint parameter " + params[i].name + " " + shape_str(params[i].shape) +
                               " does not match model " + ps[i].name + " " + shape_str(ps[i].tensor.shape()));
    std::copy(params[i].values.begin(), params[i].values.end(), ps[i].tensor.mutable_data().begin());
  }
}

OptimizerState Checkpoint::optimizer_state() const {
  OptimizerState s;
  s.step = cursor.step;
  for (const auto& t : first_moment) s.m.push_back(t.values);
  for (const auto& t : second_moment) s.v.push_back(t.values);
  return s;
}

}  // namespace tdlab
