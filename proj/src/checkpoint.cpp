#include "cgnet/checkpoint.hpp"

#include "cgnet/errors.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>

namespace cgnet {
namespace {

constexpr char kMagic[4] = {'C', 'G', 'N', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kDtypeF32 = 0;

const std::string kIter = "__train.iter";
const std::string kAdamT = "__train.adam_t";
const std::string kSeed = "__train.seed";
const std::string kConfig = "__net.config";
const std::string kMeans = "__data.means";
constexpr int kConfigFields = 15;

// f32 holds integers exactly up to 2^24.
constexpr double kMaxExactInt = 16777216.0;

bool reserved(const std::string& name) { return name.rfind("__", 0) == 0; }

class Writer {
 public:
  void u8(std::uint8_t v) { out.push_back(v); }
  void u16(std::uint16_t v) {
    for (int k = 0; k < 2; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void u32(std::uint32_t v) {
    for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void u64(std::uint64_t v) {
    for (int k = 0; k < 8; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b, std::size_t end) : buf(b), limit(end) {}

  void need(std::size_t n, const char* what) {
    if (limit - pos < n)
      throw FormatError("checkpoint truncated at byte " + std::to_string(pos) + " while reading " + what);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return buf[pos++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint16_t>(buf[pos] | (buf[pos + 1] << 8));
    pos += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(buf[pos + k]) << (8 * k);
    pos += 4;
    return v;
  }

  const std::vector<std::uint8_t>& buf;
  std::size_t limit;
  std::size_t pos = 0;
};

CheckpointRecord record(const std::string& name, const Tensor<float>& t) {
  return {name, t.dims(), std::vector<float>(t.data(), t.data() + t.size())};
}

CheckpointRecord scalar_record(const std::string& name, std::vector<float> v) {
  return {name, Dims{static_cast<int>(v.size())}, std::move(v)};
}

float exact_int(double v, const std::string& what) {
  if (v < 0 || v > kMaxExactInt) throw std::invalid_argument("checkpoint: " + what + " " + std::to_string(v) + " not storable");
  return static_cast<float>(v);
}

int as_int(float v, const std::string& what) {
  if (!(v >= 0) || v > kMaxExactInt || v != std::floor(v))
    throw FormatError("checkpoint: " + what + " holds non-integer value " + std::to_string(v));
  return static_cast<int>(v);
}

}  // namespace

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

const CheckpointRecord* Checkpoint::find(const std::string& name) const {
  for (const auto& r : records)
    if (r.name == name) return &r;
  return nullptr;
}

const CheckpointRecord& Checkpoint::require(const std::string& name) const {
  const CheckpointRecord* r = find(name);
  if (r == nullptr) throw FormatError("checkpoint: missing tensor '" + name + "'");
  return *r;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(ckpt.records.size()));
  for (const auto& r : ckpt.records) {
    if (r.name.empty() || r.name.size() > std::numeric_limits<std::uint16_t>::max())
      throw std::invalid_argument("checkpoint: bad tensor name length for '" + r.name + "'");
    if (r.values.size() != r.dims.numel()) throw std::invalid_argument("checkpoint: '" + r.name + "' size does not match dims");
    w.u16(static_cast<std::uint16_t>(r.name.size()));
    w.bytes(r.name.data(), r.name.size());
    w.u8(kDtypeF32);
    w.u8(static_cast<std::uint8_t>(r.dims.rank));
    for (int i = 0; i < r.dims.rank; ++i) w.u32(static_cast<std::uint32_t>(r.dims[i]));
    for (float v : r.values) w.u32(std::bit_cast<std::uint32_t>(v));
  }
  w.u64(fnv1a64(w.out.data(), w.out.size()));
  return std::move(w.out);
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 12 + 8) throw FormatError("checkpoint truncated: " + std::to_string(bytes.size()) + " bytes");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("checkpoint: bad magic (expected CGN1)");
  const std::size_t body = bytes.size() - 8;
  Reader r(bytes, body);
  r.pos = 4;
  const std::uint32_t version = r.u32("version");
  if (version != kVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t count = r.u32("tensor count");

  Checkpoint ckpt;
  std::set<std::string> seen;
  for (std::uint32_t k = 0; k < count; ++k) {
    CheckpointRecord rec;
    const std::uint16_t len = r.u16("name length");
    if (len == 0) throw FormatError("checkpoint: empty tensor name at byte " + std::to_string(r.pos - 2));
    r.need(len, "tensor name");
    rec.name.assign(reinterpret_cast<const char*>(bytes.data() + r.pos), len);
    r.pos += len;
    if (!seen.insert(rec.name).second) throw FormatError("checkpoint: duplicate tensor '" + rec.name + "'");
    const std::uint8_t dtype = r.u8("dtype");
    if (dtype != kDtypeF32) throw FormatError("checkpoint: '" + rec.name + "' has unsupported dtype " + std::to_string(dtype));
    const std::uint8_t rank = r.u8("rank");
    if (rank < 1 || rank > 4) throw FormatError("checkpoint: '" + rec.name + "' has unsupported rank " + std::to_string(rank));
    std::vector<int> ext;
    std::uint64_t numel = 1;
    for (int i = 0; i < rank; ++i) {
      const std::uint32_t d = r.u32("dims");
      if (d == 0 || d > static_cast<std::uint32_t>(std::numeric_limits<int>::max()))
        throw FormatError("checkpoint: '" + rec.name + "' has invalid extent " + std::to_string(d));
      numel *= d;
      if (numel > (r.limit - r.pos) / 4) throw FormatError("checkpoint: '" + rec.name + "' dims overrun the file");
      ext.push_back(static_cast<int>(d));
    }
    rec.dims = Dims(ext);
    r.need(numel * 4, "payload");
    rec.values.resize(numel);
    for (std::uint64_t i = 0; i < numel; ++i) rec.values[i] = std::bit_cast<float>(r.u32("payload"));
    ckpt.records.push_back(std::move(rec));
  }
  if (r.pos != body) throw FormatError("checkpoint: " + std::to_string(body - r.pos) + " unexpected bytes before footer");

  std::uint64_t stored = 0;
  for (int k = 0; k < 8; ++k) stored |= static_cast<std::uint64_t>(bytes[body + k]) << (8 * k);
  if (stored != fnv1a64(bytes.data(), body)) throw ChecksumError("checkpoint: checksum mismatch");
  return ckpt;
}

Checkpoint make_checkpoint(const CGNet<float>& model, const TrainState& state) {
  Checkpoint ckpt;
  const auto& store = model.store();
  for (const auto& p : store) ckpt.records.push_back(record(p.name, p.value));
  for (const auto& p : store)
    if (p.learnable()) {
      ckpt.records.push_back(record(p.name + "#adam_m", p.adam_m));
      ckpt.records.push_back(record(p.name + "#adam_v", p.adam_v));
    }
  ckpt.records.push_back(scalar_record(kIter, {exact_int(state.iter, "iteration")}));
  ckpt.records.push_back(scalar_record(kAdamT, {exact_int(static_cast<double>(state.adam_t), "adam step")}));
  std::vector<float> seed;
  for (int k = 0; k < 4; ++k) seed.push_back(static_cast<float>((state.seed >> (16 * k)) & 0xffffu));
  ckpt.records.push_back(scalar_record(kSeed, seed));

  const NetworkConfig& c = model.config();
  ckpt.records.push_back(scalar_record(
      kConfig, {static_cast<float>(c.M), static_cast<float>(c.N), static_cast<float>(c.num_classes),
                static_cast<float>(c.channels[0]), static_cast<float>(c.channels[1]), static_cast<float>(c.channels[2]),
                static_cast<float>(c.dilation2), static_cast<float>(c.dilation3), c.input_injection ? 1.f : 0.f,
                static_cast<float>(c.sur_mode), c.use_glo ? 1.f : 0.f, static_cast<float>(c.residual),
                static_cast<float>(c.activation), c.interchannel_1x1 ? 1.f : 0.f, static_cast<float>(c.glo_reduction)}));
  ckpt.records.push_back(scalar_record(kMeans, {state.means[0], state.means[1], state.means[2]}));
  return ckpt;
}

NetworkConfig checkpoint_config(const Checkpoint& ckpt) {
  const auto& r = ckpt.require(kConfig);
  if (r.values.size() != kConfigFields) throw FormatError("checkpoint: " + kConfig + " has " + std::to_string(r.values.size()) + " fields");
  auto f = [&r](int i, const char* what) { return as_int(r.values[static_cast<std::size_t>(i)], what); };
  NetworkConfig c;
  c.M = f(0, "M");
  c.N = f(1, "N");
  c.num_classes = f(2, "classes");
  c.channels = {f(3, "c1"), f(4, "c2"), f(5, "c3")};
  c.dilation2 = f(6, "dilation2");
  c.dilation3 = f(7, "dilation3");
  c.input_injection = f(8, "injection") != 0;
  const int sur = f(9, "sur_mode"), res = f(11, "residual"), act = f(12, "activation");
  if (sur > 2 || res > 2 || act > 1) throw FormatError("checkpoint: invalid enum in " + kConfig);
  c.sur_mode = static_cast<SurMode>(sur);
  c.use_glo = f(10, "use_glo") != 0;
  c.residual = static_cast<Residual>(res);
  c.activation = static_cast<Activation>(act);
  c.interchannel_1x1 = f(13, "interchannel") != 0;
  c.glo_reduction = f(14, "glo_reduction");
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("checkpoint: stored network config is invalid: ") + e.what());
  }
  return c;
}

TrainState checkpoint_state(const Checkpoint& ckpt) {
  TrainState s;
  auto one = [&ckpt](const std::string& name) {
    const auto& r = ckpt.require(name);
    if (r.values.size() != 1) throw FormatError("checkpoint: " + name + " must hold one value");
    return r.values[0];
  };
  s.iter = as_int(one(kIter), kIter);
  s.adam_t = static_cast<std::uint64_t>(as_int(one(kAdamT), kAdamT));
  const auto& seed = ckpt.require(kSeed);
  if (seed.values.size() != 4) throw FormatError("checkpoint: " + kSeed + " must hold four values");
  s.seed = 0;
  for (int k = 0; k < 4; ++k) {
    const int chunk = as_int(seed.values[static_cast<std::size_t>(k)], kSeed);
    if (chunk > 0xffff) throw FormatError("checkpoint: " + kSeed + " chunk out of range");
    s.seed |= static_cast<std::uint64_t>(chunk) << (16 * k);
  }
  const auto& means = ckpt.require(kMeans);
  if (means.values.size() != 3) throw FormatError("checkpoint: " + kMeans + " must hold three values");
  s.means = {means.values[0], means.values[1], means.values[2]};
  return s;
}

void load_into(CGNet<float>& model, const Checkpoint& ckpt) {
  auto& store = model.store();
  std::set<std::string> used;
  auto fill = [&](const std::string& name, Tensor<float>& dst) {
    const auto& r = ckpt.require(name);
    if (!(r.dims == dst.dims()))
      throw FormatError("checkpoint: '" + name + "' has dims " + r.dims.str() + ", model expects " + dst.dims().str());
    std::copy(r.values.begin(), r.values.end(), dst.data());
    used.insert(name);
  };
  for (auto& p : store) {
    fill(p.name, p.value);
    if (p.learnable()) {
      fill(p.name + "#adam_m", p.adam_m);
      fill(p.name + "#adam_v", p.adam_v);
    }
  }
  for (const auto& r : ckpt.records)
    if (!reserved(r.name) && used.count(r.name) == 0) throw FormatError("checkpoint: unexpected tensor '" + r.name + "'");
  store.zero_grad();
}

CGNet<float> restore_model(const Checkpoint& ckpt) {
  CGNet<float> model(checkpoint_config(ckpt), 0);
  load_into(model, ckpt);
  return model;
}

void save_checkpoint(const std::string& path, const CGNet<float>& model, const TrainState& state) {
  const auto bytes = encode_checkpoint(make_checkpoint(model, state));
  // Write-then-rename so an interrupted save never leaves a half file under the final name.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + tmp + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write to '" + tmp + "' failed");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw std::runtime_error("cannot rename '" + tmp + "' to '" + path + "'");
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const ChecksumError& e) {
    throw ChecksumError(path + ": " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

}  // namespace cgnet
