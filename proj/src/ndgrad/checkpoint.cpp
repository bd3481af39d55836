#include "timefilter/ndgrad/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <vector>

namespace timefilter::ndgrad {

namespace {

constexpr std::array<char, 8> kMagic = {'T', 'F', 'L', 'T', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  void u32(std::uint32_t v) { little_endian(v, 4); }
  void u64(std::uint64_t v) { little_endian(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
  void str32(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::vector<char>& buffer() const { return buf_; }

 private:
  void little_endian(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  std::vector<char> buf_;
};

class Reader {
 public:
  explicit Reader(std::vector<char> buf) : buf_(std::move(buf)) {}

  std::uint64_t uint(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(uint(4)); }
  std::uint64_t u64() { return uint(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw CheckpointError("checkpoint: truncated file");
  }
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  Writer w;
  w.bytes(kMagic.data(), kMagic.size());
  w.u32(kCheckpointVersion);
  w.str32(checkpoint.model_hash);
  w.u64(checkpoint.config_json.size());
  w.bytes(checkpoint.config_json.data(), checkpoint.config_json.size());
  w.u32(static_cast<std::uint32_t>(checkpoint.params.count()));
  for (const auto& name : checkpoint.params.names()) {
    const Array& a = checkpoint.params.at(name);
    w.str32(name);
    w.u32(static_cast<std::uint32_t>(a.rank()));
    for (auto d : a.shape()) w.u64(d);
    for (double v : a.values()) w.f64(v);
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("checkpoint: cannot open '" + path.string() + "' for writing");
  out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
  if (!out) throw CheckpointError("checkpoint: write failed for '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open '" + path.string() + "'");
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(buf));

  if (r.str(kMagic.size()) != std::string(kMagic.data(), kMagic.size())) {
    throw CheckpointError("checkpoint: bad magic in '" + path.string() + "'");
  }
  Checkpoint ck;
  ck.version = r.u32();
  if (ck.version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(ck.version));
  }
  ck.model_hash = r.str(r.u32());
  const std::uint64_t config_len = r.u64();
  ck.config_json = r.str(static_cast<std::size_t>(config_len));
  const std::uint32_t count = r.u32();
  for (std::uint32_t p = 0; p < count; ++p) {
    std::string name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.u64());
    std::vector<double> values(shape_size(shape));
    for (auto& v : values) v = r.f64();
    ck.params.add(name, Array(std::move(shape), std::move(values)));
  }
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes in '" + path.string() + "'");
  return ck;
}

}  // namespace timefilter::ndgrad
