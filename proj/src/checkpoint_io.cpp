#include "msinfluence/checkpoint_io.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <vector>

#include "msinfluence/common.hpp"

namespace msi {

namespace {

constexpr char kMagic[4] = {'M', 'S', 'I', 'F'};
constexpr std::uint32_t kFormatVersion = 1;

std::array<std::uint32_t, 256> make_crc_table() {
  std::array<std::uint32_t, 256> table{};
  for (std::uint32_t i = 0; i < 256; ++i) {
    std::uint32_t c = i;
    for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
    table[i] = c;
  }
  return table;
}

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void raw(const char* p, std::size_t n) {
    bytes_.insert(bytes_.end(), p, p + n);
  }
  const std::vector<unsigned char>& bytes() const { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<unsigned char> bytes) : bytes_(std::move(bytes)) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint32_t u32() {
    const unsigned char* p = take(4);
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
           (std::uint32_t(p[3]) << 24);
  }
  std::uint64_t u64() {
    const unsigned char* p = take(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
  }
  double f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    const unsigned char* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  std::size_t pos() const { return pos_; }
  std::size_t size() const { return bytes_.size(); }
  const unsigned char* data() const { return bytes_.data(); }

 private:
  const unsigned char* take(std::size_t n) {
    if (pos_ + n > bytes_.size()) {
      throw CheckpointError("checkpoint: truncated file");
    }
    const unsigned char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::vector<unsigned char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint32_t crc32(const unsigned char* data, std::size_t len) {
  static const std::array<std::uint32_t, 256> table = make_crc_table();
  std::uint32_t c = 0xffffffffu;
  for (std::size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xffu] ^ (c >> 8);
  return c ^ 0xffffffffu;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  ByteWriter w;
  w.raw(kMagic, 4);
  w.u32(kFormatVersion);
  w.str(ckpt.config_hash);
  w.u8(static_cast<std::uint8_t>(ckpt.stage));
  w.u8(static_cast<std::uint8_t>(ckpt.mode));
  w.u8(ckpt.converged ? 1 : 0);
  w.f64(ckpt.objective_value);
  w.f64(ckpt.grad_norm);
  w.f64(ckpt.proximal_alpha);
  w.u64(static_cast<std::uint64_t>(ckpt.steps));
  const auto& segs = ckpt.params.segments();
  w.u32(static_cast<std::uint32_t>(segs.size()));
  for (const Segment& s : segs) {
    w.str(s.name);
    w.u64(s.offset);
    w.u64(s.length);
  }
  for (double v : ckpt.params.data()) w.f64(v);
  const std::uint32_t crc = crc32(w.bytes().data(), w.bytes().size());
  ByteWriter trailer;
  trailer.u32(crc);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("checkpoint: cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(w.bytes().data()),
            static_cast<std::streamsize>(w.bytes().size()));
  out.write(reinterpret_cast<const char*>(trailer.bytes().data()), 4);
  if (!out) throw CheckpointError("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12) throw CheckpointError("checkpoint: file too short");

  // Verify the CRC before parsing anything else.
  const std::size_t body_len = bytes.size() - 4;
  std::uint32_t stored = 0;
  for (int i = 3; i >= 0; --i) stored = (stored << 8) | bytes[body_len + i];
  if (crc32(bytes.data(), body_len) != stored) {
    throw CheckpointError("checkpoint: CRC mismatch (corrupt file)");
  }
  bytes.resize(body_len);

  ByteReader r(std::move(bytes));
  char magic[4];
  std::memcpy(magic, r.data(), 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw CheckpointError("checkpoint: bad magic (not an MSIF file)");
  }
  ByteReader body(std::vector<unsigned char>(r.data() + 4, r.data() + r.size()));
  const std::uint32_t version = body.u32();
  if (version != kFormatVersion) {
    throw CheckpointError("checkpoint: unsupported format version " + std::to_string(version));
  }

  Checkpoint ckpt;
  ckpt.config_hash = body.str();
  ckpt.stage = static_cast<Stage>(body.u8());
  ckpt.mode = static_cast<FinetuneMode>(body.u8());
  ckpt.converged = body.u8() != 0;
  ckpt.objective_value = body.f64();
  ckpt.grad_norm = body.f64();
  ckpt.proximal_alpha = body.f64();
  ckpt.steps = static_cast<long>(body.u64());

  const std::uint32_t num_segs = body.u32();
  std::vector<Segment> segs;
  std::size_t total = 0;
  for (std::uint32_t i = 0; i < num_segs; ++i) {
    Segment s;
    s.name = body.str();
    s.offset = body.u64();
    s.length = body.u64();
    total += s.length;
    segs.push_back(std::move(s));
  }
  std::vector<double> data(total);
  for (std::size_t i = 0; i < total; ++i) data[i] = body.f64();
  try {
    ckpt.params = ParamVector(std::move(segs), std::move(data));
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint: corrupt segment table: ") + e.what());
  }
  return ckpt;
}

}  // namespace msi
