#include "facegan/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "facegan/error.hpp"

namespace facegan {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

// ---- byte streams --------------------------------------------------------

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.append(c, n);
  }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void i32(std::int32_t v) { bytes(&v, 4); }
  void i64(std::int64_t v) { bytes(&v, 8); }
  void f64(double v) { bytes(&v, 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  template <typename T>
  void tensor(const Tensor<T>& t) {
    u32(static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) i32(d);
    bytes(t.ptr(), t.size() * sizeof(T));
  }
  void save(const fs::path& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path.string());
    f.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!f) throw DataError("write failed: " + path.string());
  }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

  void bytes(void* p, std::size_t n) {
    if (n > data_.size() - pos_) throw DataError(path_ + ": truncated file");
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T pod() {
    T v;
    bytes(&v, sizeof(T));
    return v;
  }
  std::uint8_t u8() { return pod<std::uint8_t>(); }
  std::uint32_t u32() { return pod<std::uint32_t>(); }
  std::int32_t i32() { return pod<std::int32_t>(); }
  std::int64_t i64() { return pod<std::int64_t>(); }
  double f64() { return pod<double>(); }
  std::string str() {
    const std::uint32_t n = u32();
    if (n > data_.size() - pos_) throw DataError(path_ + ": truncated file");
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  template <typename T>
  Tensor<T> tensor() {
    const std::uint32_t rank = u32();
    if (rank > 8) throw DataError(path_ + ": bad tensor rank");
    Shape s;
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      s.push_back(i32());
      if (s.back() < 0) throw DataError(path_ + ": negative tensor dimension");
      n *= static_cast<std::size_t>(s.back());
    }
    if (n * sizeof(T) > data_.size() - pos_) throw DataError(path_ + ": truncated file");
    Tensor<T> t(std::move(s));
    bytes(t.ptr(), n * sizeof(T));
    return t;
  }
  void magic(const char* m) {
    char got[4];
    bytes(got, 4);
    if (std::memcmp(got, m, 4) != 0) throw DataError(path_ + ": not a " + std::string(m, 4) + " file");
  }
  bool done() const { return pos_ == data_.size(); }
  const std::string& path() const { return path_; }

 private:
  std::string data_;
  std::string path_;
  std::size_t pos_ = 0;
};

Reader open_binary(const fs::path& path) { return Reader(read_text(path), path.string()); }

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_value(const std::string& s, const std::string& where) {
  T v{};
  const auto* end = s.data() + s.size();
  const auto r = std::from_chars(s.data(), end, v);
  if (r.ec != std::errc() || r.ptr != end) throw DataError(where + ": cannot parse '" + s + "'");
  return v;
}

void write_netconfig(Writer& w, const NetConfig& c) {
  w.i32(c.resolution);
  w.i32(c.base_filters);
  w.i32(c.latent_dim);
  w.i32(c.label_channels);
  w.u32(static_cast<std::uint32_t>(c.skip_levels.size()));
  for (int s : c.skip_levels) w.i32(s);
}

NetConfig read_netconfig(Reader& r) {
  NetConfig c;
  c.resolution = r.i32();
  c.base_filters = r.i32();
  c.latent_dim = r.i32();
  c.label_channels = r.i32();
  const std::uint32_t n = r.u32();
  if (n > 4) throw DataError(r.path() + ": bad skip level count");
  c.skip_levels.clear();
  for (std::uint32_t i = 0; i < n; ++i) c.skip_levels.push_back(r.i32());
  try {
    c.validate();
  } catch (const ShapeError& e) {
    throw DataError(r.path() + ": " + e.what());
  }
  return c;
}

void write_network(Writer& w, const NetParams<float>& p) {
  w.u8(p.params.empty() ? 0 : 1);
  if (p.params.empty()) return;
  write_netconfig(w, p.config);
  w.u32(static_cast<std::uint32_t>(p.params.size()));
  for (const auto& q : p.params) {
    w.str(q.name);
    w.u8(q.frozen ? 1 : 0);
    w.tensor(q.value);
  }
}

NetParams<float> read_network(Reader& r) {
  if (r.u8() == 0) return {};
  const NetConfig c = read_netconfig(r);
  NetParams<float> p = init_params<float>(c, 0);
  if (r.u32() != p.params.size()) throw DataError(r.path() + ": parameter count does not match the architecture");
  for (auto& q : p.params) {
    const std::string name = r.str();
    if (name != q.name) throw DataError(r.path() + ": expected parameter " + q.name + ", found " + name);
    q.frozen = r.u8() != 0;
    Tensor<float> v = r.tensor<float>();
    if (v.shape() != q.value.shape()) throw DataError(r.path() + ": shape mismatch for " + name);
    q.value = std::move(v);
  }
  return p;
}

void write_adam(Writer& w, const Adam<float>& a) {
  w.f64(a.options().beta1);
  w.f64(a.options().beta2);
  w.f64(a.options().eps);
  w.i64(a.steps());
  w.u32(static_cast<std::uint32_t>(a.first_moments().size()));
  for (std::size_t i = 0; i < a.first_moments().size(); ++i) {
    w.tensor(a.first_moments()[i]);
    w.tensor(a.second_moments()[i]);
  }
}

Adam<float> read_adam(Reader& r) {
  AdamOptions o;
  o.beta1 = r.f64();
  o.beta2 = r.f64();
  o.eps = r.f64();
  Adam<float> a(o);
  a.set_steps(r.i64());
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    a.first_moments().push_back(r.tensor<float>());
    a.second_moments().push_back(r.tensor<float>());
  }
  return a;
}

std::string rng_text(const std::mt19937_64& rng) {
  std::ostringstream s;
  s << rng;
  return s.str();
}

std::mt19937_64 rng_from_text(const std::string& text) {
  std::mt19937_64 rng;
  std::istringstream s(text);
  s >> rng;
  if (!s) throw DataError("checkpoint: malformed rng state");
  return rng;
}

}  // namespace

// ---- text helpers --------------------------------------------------------

std::string format_number(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string());
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
  if (!f) throw DataError("write failed: " + path.string());
}

// ---- OBJ -----------------------------------------------------------------

Mesh load_obj(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::vector<Eigen::Vector3d> v;
  std::vector<Eigen::Vector3i> f;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag)) continue;
    if (tag == "v") {
      std::string x, y, z;
      if (!(ls >> x >> y >> z)) throw DataError(where + ": vertex needs three coordinates");
      v.emplace_back(parse_value<double>(x, where), parse_value<double>(y, where), parse_value<double>(z, where));
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ls >> tok) {
        const int i = parse_value<int>(tok.substr(0, tok.find('/')), where);
        const int n = static_cast<int>(v.size());
        const int k = i > 0 ? i - 1 : n + i;
        if (i == 0 || k < 0 || k >= n) throw DataError(where + ": face index " + std::to_string(i) + " out of range");
        idx.push_back(k);
      }
      if (idx.size() < 3) throw DataError(where + ": face needs at least three vertices");
      for (std::size_t j = 1; j + 1 < idx.size(); ++j) f.emplace_back(idx[0], idx[j], idx[j + 1]);
    }
  }
  if (v.empty()) throw DataError(path.string() + ": no vertices");
  Mesh m;
  m.vertices.resize(static_cast<Eigen::Index>(v.size()), 3);
  for (std::size_t i = 0; i < v.size(); ++i) m.vertices.row(static_cast<Eigen::Index>(i)) = v[i].transpose();
  m.faces.resize(static_cast<Eigen::Index>(f.size()), 3);
  for (std::size_t i = 0; i < f.size(); ++i) m.faces.row(static_cast<Eigen::Index>(i)) = f[i].transpose();
  return m;
}

void save_obj(const fs::path& path, const Mesh& mesh) {
  std::string out;
  for (Eigen::Index i = 0; i < mesh.vertices.rows(); ++i)
    out += "v " + format_number(mesh.vertices(i, 0)) + " " + format_number(mesh.vertices(i, 1)) + " " +
           format_number(mesh.vertices(i, 2)) + "\n";
  for (Eigen::Index i = 0; i < mesh.faces.rows(); ++i)
    out += "f " + std::to_string(mesh.faces(i, 0) + 1) + " " + std::to_string(mesh.faces(i, 1) + 1) + " " +
           std::to_string(mesh.faces(i, 2) + 1) + "\n";
  write_text(path, out);
}

std::map<std::string, int> load_landmarks(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::map<std::string, int> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string name, idx;
    if (!(ls >> name >> idx)) throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 'name index'");
    out[name] = parse_value<int>(idx, path.string() + ":" + std::to_string(lineno));
  }
  return out;
}

void save_landmarks(const fs::path& path, const std::map<std::string, int>& landmarks) {
  std::string out;
  for (const auto& [name, idx] : landmarks) out += name + " " + std::to_string(idx) + "\n";
  write_text(path, out);
}

// ---- UV files ------------------------------------------------------------

void save_uvmap(const fs::path& path, const UVMap& map) {
  Writer w;
  w.bytes("UVF1", 4);
  w.u32(static_cast<std::uint32_t>(map.height));
  w.u32(static_cast<std::uint32_t>(map.width));
  w.u32(static_cast<std::uint32_t>(map.channels));
  std::vector<std::uint8_t> bits((map.valid.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < map.valid.size(); ++i)
    if (map.valid[i]) bits[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  w.bytes(bits.data(), bits.size());
  w.bytes(map.data.data(), map.data.size() * sizeof(float));
  w.save(path);
}

UVMap load_uvmap(const fs::path& path) {
  Reader r = open_binary(path);
  r.magic("UVF1");
  const std::uint32_t h = r.u32(), w = r.u32(), c = r.u32();
  if (h == 0 || w == 0 || c == 0 || h > 16384 || w > 16384 || c > 64)
    throw DataError(path.string() + ": bad UV map dimensions");
  UVMap m(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
  std::vector<std::uint8_t> bits((m.valid.size() + 7) / 8);
  r.bytes(bits.data(), bits.size());
  for (std::size_t i = 0; i < m.valid.size(); ++i) m.valid[i] = (bits[i / 8] >> (i % 8)) & 1u;
  r.bytes(m.data.data(), m.data.size() * sizeof(float));
  if (!r.done()) throw DataError(path.string() + ": trailing bytes after payload");
  return m;
}

void save_layout(const fs::path& path, const UVLayout& layout) {
  Writer w;
  w.bytes("UVL1", 4);
  w.u32(static_cast<std::uint32_t>(layout.uv.rows()));
  w.u32(static_cast<std::uint32_t>(layout.faces.rows()));
  for (Eigen::Index i = 0; i < layout.uv.rows(); ++i) {
    w.f64(layout.uv(i, 0));
    w.f64(layout.uv(i, 1));
  }
  for (Eigen::Index i = 0; i < layout.faces.rows(); ++i)
    for (int k = 0; k < 3; ++k) w.i32(layout.faces(i, k));
  w.save(path);
}

UVLayout load_layout(const fs::path& path) {
  Reader r = open_binary(path);
  r.magic("UVL1");
  const std::uint32_t nv = r.u32(), nf = r.u32();
  UVLayout l;
  l.uv.resize(nv, 2);
  for (std::uint32_t i = 0; i < nv; ++i) {
    l.uv(i, 0) = r.f64();
    l.uv(i, 1) = r.f64();
  }
  l.faces.resize(nf, 3);
  for (std::uint32_t i = 0; i < nf; ++i)
    for (int k = 0; k < 3; ++k) {
      const int v = r.i32();
      if (v < 0 || static_cast<std::uint32_t>(v) >= nv) throw DataError(path.string() + ": face index out of range");
      l.faces(i, k) = v;
    }
  if (!r.done()) throw DataError(path.string() + ": trailing bytes after payload");
  return l;
}

// ---- configuration -------------------------------------------------------

RunConfig parse_config(const std::string& text, RunConfig c) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = "config line " + std::to_string(lineno);
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError(where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
    auto& t = c.train;
    auto& n = c.net;
    auto dbl = [&] { return parse_value<double>(val, where); };
    auto num = [&] { return parse_value<int>(val, where); };
    if (key == "resolution") n.resolution = num();
    else if (key == "base_filters") n.base_filters = num();
    else if (key == "latent_dim") n.latent_dim = num();
    else if (key == "label_channels") n.label_channels = num();
    else if (key == "skip_levels") {
      n.skip_levels.clear();
      std::istringstream ls(val);
      std::string tok;
      while (std::getline(ls, tok, ','))
        if (!trim(tok).empty()) n.skip_levels.push_back(parse_value<int>(trim(tok), where));
    } else if (key == "lambda_adv") t.lambda_adv = dbl();
    else if (key == "lambda_rec") t.lambda_rec = dbl();
    else if (key == "lr") t.lr = dbl();
    else if (key == "adversarial_lr") t.adversarial_lr = dbl();
    else if (key == "lr_decay") t.lr_decay = dbl();
    else if (key == "lr_decay_every") t.lr_decay_every = num();
    else if (key == "decay_mode") {
      if (val == "multiplicative") t.decay_mode = LrDecay::kMultiplicative;
      else if (val == "additive") t.decay_mode = LrDecay::kAdditive;
      else throw DataError(where + ": decay_mode must be multiplicative or additive");
    } else if (key == "pretrain_batch") t.pretrain_batch = num();
    else if (key == "pretrain_epochs") t.pretrain_epochs = num();
    else if (key == "batch") t.batch = num();
    else if (key == "epochs") t.epochs = num();
    else if (key == "seed") t.seed = parse_value<std::uint64_t>(val, where);
    else if (key == "checkpoint_every") t.checkpoint_every = num();
    else if (key == "beta1") t.adam.beta1 = dbl();
    else if (key == "beta2") t.adam.beta2 = dbl();
    else if (key == "eps") t.adam.eps = dbl();
    else throw DataError(where + ": unknown key '" + key + "'");
  }
  try {
    c.net.validate();
  } catch (const ShapeError& e) {
    throw DataError(std::string("config: ") + e.what());
  }
  c.train.validate();
  return c;
}

RunConfig load_config(const fs::path& path, RunConfig base) {
  try {
    return parse_config(read_text(path), std::move(base));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::string format_config(const RunConfig& c) {
  const auto& t = c.train;
  const auto& n = c.net;
  std::string skips;
  for (std::size_t i = 0; i < n.skip_levels.size(); ++i) skips += (i ? "," : "") + std::to_string(n.skip_levels[i]);
  std::ostringstream s;
  s << "resolution = " << n.resolution << "\n"
    << "base_filters = " << n.base_filters << "\n"
    << "latent_dim = " << n.latent_dim << "\n"
    << "label_channels = " << n.label_channels << "\n"
    << "skip_levels = " << skips << "\n"
    << "lambda_adv = " << format_number(t.lambda_adv) << "\n"
    << "lambda_rec = " << format_number(t.lambda_rec) << "\n"
    << "lr = " << format_number(t.lr) << "\n"
    << "adversarial_lr = " << format_number(t.adversarial_lr) << "\n"
    << "lr_decay = " << format_number(t.lr_decay) << "\n"
    << "lr_decay_every = " << t.lr_decay_every << "\n"
    << "decay_mode = " << (t.decay_mode == LrDecay::kMultiplicative ? "multiplicative" : "additive") << "\n"
    << "pretrain_batch = " << t.pretrain_batch << "\n"
    << "pretrain_epochs = " << t.pretrain_epochs << "\n"
    << "batch = " << t.batch << "\n"
    << "epochs = " << t.epochs << "\n"
    << "seed = " << t.seed << "\n"
    << "checkpoint_every = " << t.checkpoint_every << "\n"
    << "beta1 = " << format_number(t.adam.beta1) << "\n"
    << "beta2 = " << format_number(t.adam.beta2) << "\n"
    << "eps = " << format_number(t.adam.eps) << "\n";
  return s.str();
}

// ---- checkpoints ---------------------------------------------------------

Checkpoint make_checkpoint(const PretrainState& state, const TrainConfig& config) {
  Checkpoint ck;
  ck.phase = "pretrain";
  ck.epoch = state.epoch;
  ck.train = config;
  ck.d = state.d;
  ck.adam_d = state.adam;
  ck.rng_state = rng_text(state.rng);
  for (double l : state.history) ck.history.push_back({l});
  return ck;
}

Checkpoint make_checkpoint(const AdversarialState& state, const TrainConfig& config) {
  Checkpoint ck;
  ck.phase = "adversarial";
  ck.epoch = state.epoch;
  ck.train = config;
  ck.d = state.d;
  ck.g = state.g;
  ck.adam_d = state.adam_d;
  ck.adam_g = state.adam_g;
  ck.rng_state = rng_text(state.rng);
  for (const auto& e : state.history) ck.history.push_back({static_cast<double>(e.epoch), e.l_d, e.l_g, e.l_rec});
  return ck;
}

Checkpoint make_network_checkpoint(const NetParams<float>& params, const TrainConfig& config) {
  Checkpoint ck;
  ck.phase = "network";
  ck.train = config;
  ck.d = params;
  return ck;
}

PretrainState to_pretrain_state(const Checkpoint& ck) {
  if (ck.phase != "pretrain") throw DataError("checkpoint is from the " + ck.phase + " phase, expected pretrain");
  PretrainState s;
  s.d = ck.d;
  s.adam = ck.adam_d;
  s.epoch = ck.epoch;
  s.rng = rng_from_text(ck.rng_state);
  for (const auto& row : ck.history) {
    if (row.size() != 1) throw DataError("checkpoint: malformed pretrain history");
    s.history.push_back(row[0]);
  }
  return s;
}

AdversarialState to_adversarial_state(const Checkpoint& ck) {
  if (ck.phase != "adversarial") throw DataError("checkpoint is from the " + ck.phase + " phase, expected adversarial");
  AdversarialState s;
  s.d = ck.d;
  s.g = ck.g;
  s.adam_d = ck.adam_d;
  s.adam_g = ck.adam_g;
  s.epoch = ck.epoch;
  s.rng = rng_from_text(ck.rng_state);
  for (const auto& row : ck.history) {
    if (row.size() != 4) throw DataError("checkpoint: malformed adversarial history");
    s.history.push_back({static_cast<int>(row[0]), row[1], row[2], row[3]});
  }
  return s;
}

const NetParams<float>& inference_network(const Checkpoint& ck) { return ck.g.params.empty() ? ck.d : ck.g; }

void save_checkpoint(const fs::path& path, const Checkpoint& ck) {
  Writer w;
  w.bytes("3DFG", 4);
  w.u32(kCheckpointVersion);
  w.str(ck.phase);
  w.i32(ck.epoch);
  w.str(format_config({ck.d.config, ck.train}));
  write_network(w, ck.d);
  write_network(w, ck.g);
  write_adam(w, ck.adam_d);
  write_adam(w, ck.adam_g);
  w.str(ck.rng_state);
  w.u32(static_cast<std::uint32_t>(ck.history.size()));
  for (const auto& row : ck.history) {
    w.u32(static_cast<std::uint32_t>(row.size()));
    for (double v : row) w.f64(v);
  }
  w.u32(static_cast<std::uint32_t>(ck.meta.size()));
  for (const auto& [k, v] : ck.meta) {
    w.str(k);
    w.str(v);
  }
  w.save(path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  Reader r = open_binary(path);
  r.magic("3DFG");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw DataError(path.string() + ": checkpoint version " + std::to_string(version) + ", this build reads " +
                    std::to_string(kCheckpointVersion));
  Checkpoint ck;
  ck.phase = r.str();
  if (ck.phase != "pretrain" && ck.phase != "adversarial" && ck.phase != "network") throw DataError(path.string() + ": unknown phase");
  ck.epoch = r.i32();
  ck.train = parse_config(r.str()).train;
  ck.d = read_network(r);
  ck.g = read_network(r);
  if (ck.d.params.empty()) throw DataError(path.string() + ": checkpoint has no discriminator");
  ck.adam_d = read_adam(r);
  ck.adam_g = read_adam(r);
  ck.rng_state = r.str();
  const std::uint32_t rows = r.u32();
  for (std::uint32_t i = 0; i < rows; ++i) {
    const std::uint32_t n = r.u32();
    if (n > 16) throw DataError(path.string() + ": malformed history");
    std::vector<double> row(n);
    for (double& v : row) v = r.f64();
    ck.history.push_back(std::move(row));
  }
  const std::uint32_t nmeta = r.u32();
  for (std::uint32_t i = 0; i < nmeta; ++i) {
    std::string k = r.str();
    ck.meta[k] = r.str();
  }
  if (!r.done()) throw DataError(path.string() + ": trailing bytes after payload");
  return ck;
}

// ---- Gaussians -----------------------------------------------------------

void save_gaussians(const fs::path& path, const std::map<int, LatentGaussian>& gaussians) {
  Writer w;
  w.bytes("3DFZ", 4);
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(gaussians.size()));
  for (const auto& [label, g] : gaussians) {
    w.i32(label);
    w.u32(static_cast<std::uint32_t>(g.mean.size()));
    w.u32(static_cast<std::uint32_t>(g.factor.cols()));
    for (Eigen::Index i = 0; i < g.mean.size(); ++i) w.f64(g.mean[i]);
    w.bytes(g.factor.data(), static_cast<std::size_t>(g.factor.size()) * sizeof(double));
  }
  w.save(path);
}

std::map<int, LatentGaussian> load_gaussians(const fs::path& path) {
  Reader r = open_binary(path);
  r.magic("3DFZ");
  if (r.u32() != 1) throw DataError(path.string() + ": unsupported Gaussian file version");
  const std::uint32_t count = r.u32();
  std::map<int, LatentGaussian> out;
  for (std::uint32_t k = 0; k < count; ++k) {
    LatentGaussian g;
    g.label = r.i32();
    const std::uint32_t dim = r.u32(), n = r.u32();
    if (dim == 0 || dim > 65536 || n > (1u << 24)) throw DataError(path.string() + ": bad Gaussian dimensions");
    g.mean.resize(dim);
    for (std::uint32_t i = 0; i < dim; ++i) g.mean[i] = r.f64();
    g.factor.resize(dim, n);
    r.bytes(g.factor.data(), static_cast<std::size_t>(g.factor.size()) * sizeof(double));
    out.emplace(g.label, std::move(g));
  }
  if (!r.done()) throw DataError(path.string() + ": trailing bytes after payload");
  return out;
}

// ---- dataset directories -----------------------------------------------

namespace {

std::string numbered(std::size_t i, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05zu%s", i, ext);
  return buf;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path, std::size_t columns) {
  std::istringstream in(read_text(path));
  std::vector<std::vector<std::string>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || lineno == 1) continue;
    std::vector<std::string> row;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) row.push_back(trim(cell));
    if (line.back() == ',') row.emplace_back();
    if (row.size() != columns)
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(columns) +
                      " columns");
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line))
    if (!trim(line).empty()) out.push_back(trim(line));
  return out;
}

}  // namespace

void save_mesh_collection(const fs::path& dir, const MeshCollection& c) {
  fs::create_directories(dir / "meshes");
  save_obj(dir / "template.obj", c.templ);
  save_landmarks(dir / "landmarks.txt", c.templ.landmarks);
  if (!c.noisy.empty()) fs::create_directories(dir / "noisy");
  std::string csv = "file,subject,label,label_name\n";
  for (std::size_t i = 0; i < c.meshes.size(); ++i) {
    const std::string& f = c.files[i];
    save_obj(dir / "meshes" / f, c.meshes[i]);
    if (!c.noisy.empty()) save_obj(dir / "noisy" / f, c.noisy[i]);
    const int l = c.label.empty() ? 0 : c.label[i];
    csv += f + "," + std::to_string(c.subject.empty() ? static_cast<int>(i) : c.subject[i]) + "," +
           std::to_string(l) + "," + (c.label_names.empty() ? std::string("neutral") : c.label_names.at(static_cast<std::size_t>(l))) + "\n";
  }
  write_text(dir / "labels.csv", csv);
}

MeshCollection load_mesh_collection(const fs::path& dir, const fs::path& templ, const fs::path& landmarks) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  MeshCollection c;
  c.templ = load_obj(templ.empty() ? dir / "template.obj" : templ);
  const fs::path lm = landmarks.empty() ? dir / "landmarks.txt" : landmarks;
  if (fs::exists(lm) || !landmarks.empty()) c.templ.landmarks = load_landmarks(lm);
  c.templ.validate();
  const fs::path mesh_dir = fs::is_directory(dir / "meshes") ? dir / "meshes" : dir;
  if (fs::exists(dir / "labels.csv")) {
    std::map<int, std::string> names;
    for (const auto& row : read_csv(dir / "labels.csv", 4)) {
      c.files.push_back(row[0]);
      c.subject.push_back(parse_value<int>(row[1], (dir / "labels.csv").string()));
      c.label.push_back(parse_value<int>(row[2], (dir / "labels.csv").string()));
      if (c.label.back() < 0) throw DataError((dir / "labels.csv").string() + ": negative label");
      names[c.label.back()] = row[3];
    }
    const int count = names.empty() ? 0 : names.rbegin()->first + 1;
    for (int l = 0; l < count; ++l) c.label_names.push_back(names.count(l) ? names[l] : "label" + std::to_string(l));
  } else {
    for (const auto& e : fs::directory_iterator(mesh_dir))
      if (e.path().extension() == ".obj" && e.path().filename() != "template.obj")
        c.files.push_back(e.path().filename().string());
    std::sort(c.files.begin(), c.files.end());
    for (std::size_t i = 0; i < c.files.size(); ++i) {
      c.subject.push_back(static_cast<int>(i));
      c.label.push_back(0);
    }
    c.label_names = {"neutral"};
  }
  if (c.files.empty()) throw DataError("no meshes found in " + mesh_dir.string());
  for (const auto& f : c.files) {
    Mesh m = load_obj(mesh_dir / f);
    m.landmarks = c.templ.landmarks;
    c.meshes.push_back(std::move(m));
  }
  if (fs::is_directory(dir / "noisy"))
    for (const auto& f : c.files) {
      Mesh m = load_obj(dir / "noisy" / f);
      m.landmarks = c.templ.landmarks;
      c.noisy.push_back(std::move(m));
    }
  return c;
}

std::vector<std::size_t> DataDir::indices(bool test_set) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < test.size(); ++i)
    if (test[i] == test_set) out.push_back(i);
  return out;
}

PairedDataset DataDir::dataset(bool test_set, bool use_inputs, bool with_labels) const {
  if (use_inputs && !paired()) throw DataError("data directory has no paired inputs");
  PairedDataset ds;
  for (std::size_t i : indices(test_set)) {
    ds.inputs.push_back(use_inputs ? inputs[i] : targets[i]);
    ds.targets.push_back(targets[i]);
    if (with_labels) ds.labels.push_back(label[i]);
  }
  if (with_labels) ds.label_count = static_cast<int>(label_names.size());
  ds.validate();
  return ds;
}

void save_data_dir(const fs::path& dir, const DataDir& d) {
  fs::create_directories(dir / "maps");
  save_obj(dir / "template.obj", d.templ);
  save_landmarks(dir / "landmarks.txt", d.templ.landmarks);
  save_layout(dir / "layout.uvl", d.layout);
  write_text(dir / "scale.txt", format_number(d.scale) + "\n");
  std::string names;
  for (const auto& n : d.label_names) names += n + "\n";
  write_text(dir / "labels.txt", names);
  if (d.paired()) fs::create_directories(dir / "inputs");
  std::string csv = "index,file,subject,label,set\n";
  for (std::size_t i = 0; i < d.targets.size(); ++i) {
    const std::string f = numbered(i, ".uvf");
    save_uvmap(dir / "maps" / f, d.targets[i]);
    if (d.paired()) save_uvmap(dir / "inputs" / f, d.inputs[i]);
    csv += std::to_string(i) + "," + d.files[i] + "," + std::to_string(d.subject[i]) + "," + std::to_string(d.label[i]) +
           "," + (d.test[i] ? "test" : "train") + "\n";
  }
  write_text(dir / "samples.csv", csv);
}

DataDir load_data_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  DataDir d;
  d.templ = load_obj(dir / "template.obj");
  d.templ.landmarks = load_landmarks(dir / "landmarks.txt");
  d.layout = load_layout(dir / "layout.uvl");
  d.scale = parse_value<double>(trim(read_text(dir / "scale.txt")), (dir / "scale.txt").string());
  d.label_names = read_lines(dir / "labels.txt");
  const bool paired = fs::is_directory(dir / "inputs");
  const std::string where = (dir / "samples.csv").string();
  for (const auto& row : read_csv(dir / "samples.csv", 5)) {
    const auto i = parse_value<std::size_t>(row[0], where);
    if (i != d.targets.size()) throw DataError(where + ": indices must be consecutive from 0");
    d.files.push_back(row[1]);
    d.subject.push_back(parse_value<int>(row[2], where));
    d.label.push_back(parse_value<int>(row[3], where));
    if (row[4] != "train" && row[4] != "test") throw DataError(where + ": set must be train or test");
    d.test.push_back(row[4] == "test");
    const std::string f = numbered(i, ".uvf");
    d.targets.push_back(load_uvmap(dir / "maps" / f));
    if (paired) d.inputs.push_back(load_uvmap(dir / "inputs" / f));
  }
  if (d.targets.empty()) throw DataError(where + ": no samples");
  if (d.layout.vertex_count() != d.templ.vertex_count()) throw DataError(dir.string() + ": layout does not match the template");
  return d;
}

// ---- reports -------------------------------------------------------------

void save_loss_csv(const fs::path& path, const std::vector<double>& pretrain) {
  std::string out = "epoch,L_D,L_G,L_rec\n";
  for (std::size_t i = 0; i < pretrain.size(); ++i)
    out += std::to_string(i + 1) + ",,," + format_number(pretrain[i]) + "\n";
  write_text(path, out);
}

void save_loss_csv(const fs::path& path, const std::vector<EpochLosses>& adversarial) {
  std::string out = "epoch,L_D,L_G,L_rec\n";
  for (const auto& e : adversarial)
    out += std::to_string(e.epoch) + "," + format_number(e.l_d) + "," + format_number(e.l_g) + "," +
           format_number(e.l_rec) + "\n";
  write_text(path, out);
}

}  // namespace facegan
