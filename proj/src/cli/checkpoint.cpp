#include "d2/cli/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "d2/error.hpp"

namespace d2::cli {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::vector<char>& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

void put_string(std::vector<char>& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

class Reader {
 public:
  explicit Reader(const std::vector<char>& b) : b_(b) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_string(const char* what) {
    const auto n = get<std::uint32_t>(what);
    need(n, what);
    std::string s(b_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (b_.size() - pos_ < n) throw FormatError(std::string("checkpoint truncated while reading ") + what);
  }
  const std::vector<char>& b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<char> encode_checkpoint(const Checkpoint& ck) {
  std::vector<char> out{'D', '2', 'C', 'K'};
  put<std::uint32_t>(out, kCheckpointVersion);
  put_string(out, ck.config);
  for (std::size_t i = 0; i < ck.params.tensors.size(); ++i) {
    const auto& a = ck.params.tensors[i];
    put_string(out, ck.params.names.at(i));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.shape.size()));
    for (std::size_t d : a.shape) put<std::uint64_t>(out, d);
    for (double v : a.values) put<double>(out, v);
  }
  return out;
}

Checkpoint decode_checkpoint(const std::vector<char>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "D2CK", 4) != 0)
    throw FormatError("not a checkpoint: bad magic bytes");
  std::vector<char> rest(bytes.begin() + 4, bytes.end());
  Reader r(rest);
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  ck.config = r.get_string("config");
  while (!r.done()) {
    ck.params.names.push_back(r.get_string("parameter name"));
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank == 0 || rank > 2) throw FormatError("checkpoint parameter has rank " + std::to_string(rank));
    diffmath::Shape shape;
    std::uint64_t total = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto d = r.get<std::uint64_t>("dims");
      if (d == 0 || d > (std::uint64_t{1} << 32)) throw FormatError("checkpoint dimension out of range");
      shape.push_back(static_cast<std::size_t>(d));
      total *= d;
    }
    if (total > (std::uint64_t{1} << 32)) throw FormatError("checkpoint tensor too large");
    std::vector<double> vals(static_cast<std::size_t>(total));
    for (double& v : vals) v = r.get<double>("data");
    ck.params.tensors.emplace_back(std::move(shape), std::move(vals));
  }
  return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  const auto bytes = encode_checkpoint(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write checkpoint '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read checkpoint '" + path + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace d2::cli
