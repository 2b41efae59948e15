#include "capgan/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace capgan {

namespace {

constexpr char kMagic[8] = {'C', 'A', 'P', 'G', 'A', 'N', 'C', 'K'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw CheckpointError("checkpoint truncated");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string Checkpoint::to_bytes() const {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  const std::string head = header.dump();
  put<std::uint64_t>(out, head.size());
  out += head;
  put<std::uint64_t>(out, params.size());
  for (std::size_t s = 0; s < params.size(); ++s) {
    const auto& name = params.name(s);
    const auto& m = params.value(s);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint64_t>(out, m.rows());
    put<std::uint64_t>(out, m.cols());
    for (double v : m.data()) put<double>(out, v);
  }
  return out;
}

Checkpoint Checkpoint::from_bytes(const std::string& bytes) {
  Reader in(bytes);
  if (in.take(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw CheckpointError("not a capgan checkpoint (bad magic)");
  }
  const auto version = in.get<std::uint32_t>();
  if (version != kVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  const auto head_len = in.get<std::uint64_t>();
  try {
    ck.header = nlohmann::json::parse(in.take(head_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint header: ") + e.what());
  }
  ck.params.set_seed(ck.header.value("seed", std::uint64_t{0}));
  const auto n = in.get<std::uint64_t>();
  for (std::uint64_t p = 0; p < n; ++p) {
    const auto name_len = in.get<std::uint32_t>();
    std::string name = in.take(name_len);
    const auto rows = in.get<std::uint64_t>();
    const auto cols = in.get<std::uint64_t>();
    const std::size_t s = ck.params.add(name, rows, cols);
    for (double& v : ck.params.value(s).data()) v = in.get<double>();
  }
  if (!in.done()) throw CheckpointError("trailing bytes after checkpoint payload");
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  const std::string bytes = to_bytes();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_bytes(ss.str());
}

std::string Checkpoint::content_hash() const { return hex64(fnv1a64(to_bytes())); }

}  // namespace capgan
