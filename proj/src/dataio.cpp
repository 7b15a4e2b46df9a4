#include "cgnet/dataio.hpp"

#include "cgnet/errors.hpp"

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

namespace cgnet {

namespace fs = std::filesystem;

namespace {

std::vector<unsigned char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, const std::string& header, const std::vector<unsigned char>& payload) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

struct NetpbmImage {
  int width = 0;
  int height = 0;
  std::size_t payload_offset = 0;
};

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

/// Parses a binary netpbm header with the given magic ("P6"/"P5").
NetpbmImage parse_netpbm(const std::vector<unsigned char>& bytes, const char* magic, int channels, const fs::path& path) {
  auto fail = [&](std::size_t offset, const std::string& what) -> FormatError {
    return FormatError(path.string() + ": " + what + " at byte offset " + std::to_string(offset));
  };
  if (bytes.size() < 2 || bytes[0] != 'P') throw fail(0, "bad magic (not a netpbm file)");
  if (bytes[1] != static_cast<unsigned char>(magic[1])) {
    if (bytes[1] == '3' || bytes[1] == '2' || bytes[1] == '1')
      throw fail(1, std::string("unsupported ASCII format P") + static_cast<char>(bytes[1]) + ", expected " + magic);
    throw fail(1, std::string("bad magic, expected ") + magic);
  }
  std::size_t pos = 2;
  auto read_int = [&](const char* field) {
    for (;;) {
      while (pos < bytes.size() && is_space(bytes[pos])) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    if (pos >= bytes.size()) throw fail(pos, std::string("truncated header, missing ") + field);
    if (bytes[pos] < '0' || bytes[pos] > '9') throw fail(pos, std::string("expected digit for ") + field);
    long long v = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
      v = v * 10 + (bytes[pos] - '0');
      if (v > (1 << 24)) throw fail(pos, std::string(field) + " too large");
      ++pos;
    }
    return static_cast<int>(v);
  };
  NetpbmImage img;
  if (pos >= bytes.size() || !is_space(bytes[pos])) throw fail(pos, "expected whitespace after magic");
  img.width = read_int("width");
  img.height = read_int("height");
  const std::size_t maxval_pos = pos;
  const int maxval = read_int("maxval");
  if (img.width < 1 || img.height < 1) throw fail(maxval_pos, "zero image dimension");
  if (maxval != 255) throw fail(maxval_pos, "unsupported maxval " + std::to_string(maxval) + " (only 255)");
  if (pos >= bytes.size() || !is_space(bytes[pos])) throw fail(pos, "expected single whitespace before payload");
  img.payload_offset = pos + 1;
  const std::size_t need = static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height) * static_cast<std::size_t>(channels);
  if (bytes.size() < img.payload_offset + need)
    throw fail(bytes.size(), "truncated payload, expected " + std::to_string(need) + " bytes");
  if (bytes.size() > img.payload_offset + need) throw fail(img.payload_offset + need, "unexpected trailing data");
  return img;
}

unsigned char to_byte(float v) {
  const float r = std::nearbyint(v);
  return static_cast<unsigned char>(std::clamp(r, 0.0f, 255.0f));
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

Tensor<float> read_ppm(const fs::path& path) {
  const auto bytes = read_bytes(path);
  const NetpbmImage h = parse_netpbm(bytes, "P6", 3, path);
  Tensor<float> img(Dims{1, 3, h.height, h.width});
  const std::size_t hw = img.plane_size();
  for (std::size_t k = 0; k < hw; ++k)
    for (int c = 0; c < 3; ++c) img.plane(0, c)[k] = bytes[h.payload_offset + 3 * k + static_cast<std::size_t>(c)];
  return img;
}

void write_ppm(const fs::path& path, const Tensor<float>& image) {
  detail::require(image.rank() == 4 && image.n() == 1 && image.c() == 3, "write_ppm: image must be [1,3,H,W]");
  const std::size_t hw = image.plane_size();
  std::vector<unsigned char> payload(3 * hw);
  for (std::size_t k = 0; k < hw; ++k)
    for (int c = 0; c < 3; ++c) payload[3 * k + static_cast<std::size_t>(c)] = to_byte(image.plane(0, c)[k]);
  write_bytes(path, "P6\n" + std::to_string(image.w()) + " " + std::to_string(image.h()) + "\n255\n", payload);
}

Labels read_pgm(const fs::path& path) {
  const auto bytes = read_bytes(path);
  const NetpbmImage h = parse_netpbm(bytes, "P5", 1, path);
  Labels labels(1, h.height, h.width);
  for (std::size_t k = 0; k < labels.size(); ++k) labels.v[k] = bytes[h.payload_offset + k];
  return labels;
}

void write_pgm(const fs::path& path, const Labels& labels) {
  detail::require(labels.n == 1, "write_pgm: single label map expected");
  std::vector<unsigned char> payload(labels.size());
  for (std::size_t k = 0; k < labels.size(); ++k) {
    const std::int32_t v = labels.v[k];
    detail::require(v >= 0 && v <= 255, "write_pgm: label " + std::to_string(v) + " does not fit in a byte");
    payload[k] = static_cast<unsigned char>(v);
  }
  write_bytes(path, "P5\n" + std::to_string(labels.w) + " " + std::to_string(labels.h) + "\n255\n", payload);
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest '" + path.string() + "'");
  const fs::path base = path.parent_path();
  Manifest m;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (t.rfind("classes=", 0) == 0) {
      try {
        m.num_classes = std::stoi(t.substr(8));
      } catch (const std::exception&) {
        throw FormatError(where + ": bad classes header '" + t + "'");
      }
      continue;
    }
    const auto tab = t.find('\t');
    if (tab == std::string::npos) throw FormatError(where + ": expected image<TAB>labels");
    ManifestEntry e{trim(t.substr(0, tab)), trim(t.substr(tab + 1))};
    if (e.image.is_relative()) e.image = base / e.image;
    if (e.labels.is_relative()) e.labels = base / e.labels;
    for (const auto& p : {e.image, e.labels})
      if (!fs::exists(p)) throw std::runtime_error(where + ": file '" + p.string() + "' does not exist");
    m.entries.push_back(std::move(e));
  }
  if (m.num_classes < 2) throw FormatError(path.string() + ": missing or invalid classes=K header (K >= 2)");
  return m;
}

void write_manifest(const fs::path& path, const Manifest& manifest) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest '" + path.string() + "'");
  out << "classes=" << manifest.num_classes << "\n";
  const fs::path base = path.parent_path();
  for (const auto& e : manifest.entries) {
    auto rel = [&](const fs::path& p) { return p.is_absolute() ? p.lexically_relative(base) : p; };
    out << rel(e.image).generic_string() << '\t' << rel(e.labels).generic_string() << '\n';
  }
}

std::vector<int> read_category_map(const fs::path& path, int num_classes) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open category map '" + path.string() + "'");
  std::vector<int> map(static_cast<std::size_t>(num_classes), -1);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::istringstream is(t);
    int cls = -1, cat = -1;
    if (!(is >> cls >> cat) || cat < 0)
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 'class_id category_id'");
    if (cls < 0 || cls >= num_classes)
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": class " + std::to_string(cls) + " out of range");
    map[static_cast<std::size_t>(cls)] = cat;
  }
  for (int c = 0; c < num_classes; ++c)
    if (map[static_cast<std::size_t>(c)] < 0)
      throw FormatError(path.string() + ": class " + std::to_string(c) + " has no category");
  return map;
}

std::vector<Sample> load_samples(const Manifest& manifest) {
  std::vector<Sample> out;
  out.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    Sample s{read_ppm(e.image), read_pgm(e.labels)};
    if (s.labels.h != s.image.h() || s.labels.w != s.image.w())
      throw FormatError("'" + e.labels.string() + "' size does not match '" + e.image.string() + "'");
    for (std::size_t k = 0; k < s.labels.size(); ++k) {
      const std::int32_t v = s.labels.v[k];
      if (v != kIgnoreLabel && v >= manifest.num_classes)
        throw FormatError("'" + e.labels.string() + "': label " + std::to_string(v) + " >= K=" +
                          std::to_string(manifest.num_classes) + " at pixel " + std::to_string(k));
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::array<double, 3> compute_means(const std::vector<Sample>& samples) {
  if (samples.empty()) throw std::invalid_argument("compute_means: empty dataset");
  std::array<double, 3> sum{0, 0, 0};
  std::size_t count = 0;
  for (const auto& s : samples) {
    for (int c = 0; c < 3; ++c) {
      const float* p = s.image.plane(0, c);
      for (std::size_t k = 0; k < s.image.plane_size(); ++k) sum[static_cast<std::size_t>(c)] += p[k];
    }
    count += s.image.plane_size();
  }
  for (auto& v : sum) v /= static_cast<double>(count);
  return sum;
}

std::array<double, 3> compute_means(const Manifest& manifest) {
  if (manifest.entries.empty()) throw std::invalid_argument("compute_means: empty manifest");
  std::array<double, 3> sum{0, 0, 0};
  std::size_t count = 0;
  for (const auto& e : manifest.entries) {
    const Tensor<float> img = read_ppm(e.image);
    for (int c = 0; c < 3; ++c) {
      const float* p = img.plane(0, c);
      for (std::size_t k = 0; k < img.plane_size(); ++k) sum[static_cast<std::size_t>(c)] += p[k];
    }
    count += img.plane_size();
  }
  for (auto& v : sum) v /= static_cast<double>(count);
  return sum;
}

// ---------------------------------------------------------------------------
// Synthetic dataset

namespace {

constexpr std::array<std::array<int, 3>, 8> kClassColors{{
    {70, 70, 70},     // background
    {220, 40, 40},
    {40, 200, 40},
    {40, 60, 220},
    {230, 220, 50},
    {200, 60, 210},
    {50, 210, 210},
    {240, 150, 40},
}};

constexpr int kNoise = 20;
constexpr int kTexture = 15;
constexpr int kMaxAttempts = 100;

struct Shape {
  bool disc = false;
  int cls = 0;
  int y0 = 0, x0 = 0, y1 = 0, x1 = 0;  // inclusive bounding box
  bool contains(int y, int x) const {
    if (y < y0 || y > y1 || x < x0 || x > x1) return false;
    if (!disc) return true;
    const double cy = 0.5 * (y0 + y1), cx = 0.5 * (x0 + x1), r = 0.5 * (y1 - y0 + 1);
    const double dy = y - cy, dx = x - cx;
    return dy * dy + dx * dx <= r * r;
  }
};

int uniform_int(Rng& rng, int lo, int hi) { return lo + static_cast<int>(rng.below(static_cast<std::uint32_t>(hi - lo + 1))); }

/// Places shapes; returns nothing when a shape cannot be placed.
std::optional<std::vector<Shape>> place_shapes(Rng& rng, int size, int num_classes) {
  const int count = uniform_int(rng, 2, 5);
  const int lo = std::max(4, size / 6), hi = std::max(lo, size / 3);
  std::vector<Shape> shapes;
  for (int s = 0; s < count; ++s) {
    Shape sh;
    sh.cls = uniform_int(rng, 1, num_classes - 1);
    sh.disc = rng.below(2) == 1;
    bool placed = false;
    for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
      const int hgt = uniform_int(rng, lo, hi);
      const int wid = sh.disc ? hgt : uniform_int(rng, lo, hi);
      sh.y0 = uniform_int(rng, 0, size - hgt);
      sh.x0 = uniform_int(rng, 0, size - wid);
      sh.y1 = sh.y0 + hgt - 1;
      sh.x1 = sh.x0 + wid - 1;
      placed = std::none_of(shapes.begin(), shapes.end(), [&](const Shape& o) {
        constexpr int kGap = 2;
        return sh.y0 <= o.y1 + kGap && o.y0 <= sh.y1 + kGap && sh.x0 <= o.x1 + kGap && o.x0 <= sh.x1 + kGap;
      });
    }
    if (!placed) return std::nullopt;
    shapes.push_back(sh);
  }
  return shapes;
}

}  // namespace

Sample synthesize_sample(std::uint64_t seed, int index, int size, int num_classes) {
  if (num_classes < 3 || num_classes > 8)
    throw std::invalid_argument("gen_synthetic: classes must be between 3 and 8, got " + std::to_string(num_classes));
  if (size < 8 || size % 8 != 0)
    throw std::invalid_argument("gen_synthetic: size must be a positive multiple of 8, got " + std::to_string(size));
  for (std::uint64_t attempt = 0;; ++attempt) {
    Rng rng = Rng::substream(seed, static_cast<std::uint64_t>(index), attempt);
    auto shapes = place_shapes(rng, size, num_classes);
    if (!shapes) continue;

    Sample s{Tensor<float>(Dims{1, 3, size, size}), Labels(1, size, size, 0)};
    std::vector<int> owner(static_cast<std::size_t>(size) * size, -1);
    for (std::size_t k = 0; k < shapes->size(); ++k) {
      const Shape& sh = (*shapes)[k];
      for (int y = sh.y0; y <= sh.y1; ++y)
        for (int x = sh.x0; x <= sh.x1; ++x)
          if (sh.contains(y, x)) owner[static_cast<std::size_t>(y) * size + x] = static_cast<int>(k);
    }
    const double fy = 0.05 + 0.15 * rng.uniform(), fx = 0.05 + 0.15 * rng.uniform();
    const double phase = 6.283185307179586 * rng.uniform();
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const std::size_t k = static_cast<std::size_t>(y) * size + x;
        const int o = owner[k];
        const int cls = o < 0 ? 0 : (*shapes)[static_cast<std::size_t>(o)].cls;
        double texture = 0;
        if (cls == 0) texture = kTexture * std::sin(fy * y + fx * x + phase);
        for (int c = 0; c < 3; ++c) {
          const double noise = static_cast<double>(rng.below(2 * kNoise + 1)) - kNoise;
          const double v = kClassColors[static_cast<std::size_t>(cls)][static_cast<std::size_t>(c)] + texture + noise;
          s.image.plane(0, c)[k] = std::clamp(static_cast<float>(std::nearbyint(v)), 0.0f, 255.0f);
        }
        if (o < 0) continue;
        bool border = y == 0 || x == 0 || y == size - 1 || x == size - 1;
        if (!border) {
          border = owner[k - 1] != o || owner[k + 1] != o || owner[k - static_cast<std::size_t>(size)] != o ||
                   owner[k + static_cast<std::size_t>(size)] != o;
        }
        s.labels.v[k] = border ? kIgnoreLabel : cls;
      }
    return s;
  }
}

fs::path gen_synthetic(std::uint64_t seed, int count, int size, int num_classes, const fs::path& out_dir) {
  if (count < 1) throw std::invalid_argument("gen_synthetic: count must be >= 1");
  fs::create_directories(out_dir);
  Manifest m;
  m.num_classes = num_classes;
  char name[32];
  for (int i = 0; i < count; ++i) {
    const Sample s = synthesize_sample(seed, i, size, num_classes);
    std::snprintf(name, sizeof(name), "img_%04d.ppm", i);
    const fs::path img = out_dir / name;
    std::snprintf(name, sizeof(name), "lbl_%04d.pgm", i);
    const fs::path lbl = out_dir / name;
    write_ppm(img, s.image);
    write_pgm(lbl, s.labels);
    m.entries.push_back({img.filename(), lbl.filename()});
  }
  const fs::path manifest = out_dir / "manifest.txt";
  write_manifest(manifest, m);
  return manifest;
}

}  // namespace cgnet
