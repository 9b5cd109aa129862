#include "diffrl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace diffrl {

namespace {

constexpr char kMagic[8] = {'D', 'R', 'L', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kFormatVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

std::uint64_t fnv1a(const std::uint8_t* data, size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
void put(std::vector<std::uint8_t>& out, const T& v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

void put_bytes(std::vector<std::uint8_t>& out, const void* data, size_t n) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  out.insert(out.end(), p, p + n);
}

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    T v;
    take(&v, sizeof(T));
    return v;
  }

  void take(void* dst, size_t n) {
    if (pos_ + n > bytes_.size())
      throw std::runtime_error("checkpoint: truncated file");
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  size_t pos() const { return pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  size_t pos_ = 0;
};

}  // namespace

void Checkpoint::add_tensor(const std::string& name, const Vector& flat) {
  tensors[name] = {{static_cast<std::uint64_t>(flat.size())}, flat};
}

const Vector& Checkpoint::tensor(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end())
    throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
  return it->second.second;
}

std::vector<std::uint8_t> checkpoint_serialize(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out;
  put_bytes(out, kMagic, sizeof(kMagic));
  put(out, kFormatVersion);
  const std::string meta = ckpt.meta.dump();
  put(out, static_cast<std::uint64_t>(meta.size()));
  put_bytes(out, meta.data(), meta.size());
  put(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, entry] : ckpt.tensors) {
    const auto& [shape, data] = entry;
    put(out, static_cast<std::uint32_t>(name.size()));
    put_bytes(out, name.data(), name.size());
    put(out, static_cast<std::uint32_t>(shape.size()));
    std::uint64_t count = 1;
    for (std::uint64_t s : shape) {
      put(out, s);
      count *= s;
    }
    if (count != static_cast<std::uint64_t>(data.size()))
      throw std::runtime_error("checkpoint: tensor shape/data mismatch for '" +
                               name + "'");
    put_bytes(out, data.data(), sizeof(double) * data.size());
  }
  put(out, fnv1a(out.data(), out.size()));
  return out;
}

Checkpoint checkpoint_parse(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t))
    throw std::runtime_error("checkpoint: file too short");
  const std::uint64_t expect =
      fnv1a(bytes.data(), bytes.size() - sizeof(std::uint64_t));
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - sizeof(std::uint64_t),
              sizeof(std::uint64_t));
  if (stored != expect)
    throw std::runtime_error("checkpoint: checksum mismatch (corrupt file)");

  Reader r(bytes);
  char magic[8];
  r.take(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: bad magic (not a checkpoint file)");
  const auto version = r.get<std::uint32_t>();
  if (version != kFormatVersion)
    throw std::runtime_error("checkpoint: unsupported format version " +
                             std::to_string(version));
  Checkpoint ckpt;
  const auto meta_len = r.get<std::uint64_t>();
  std::string meta(meta_len, '\0');
  r.take(meta.data(), meta_len);
  try {
    ckpt.meta = nlohmann::json::parse(meta);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("checkpoint: bad metadata: ") + e.what());
  }
  const auto n_tensors = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    const auto name_len = r.get<std::uint32_t>();
    std::string name(name_len, '\0');
    r.take(name.data(), name_len);
    const auto ndims = r.get<std::uint32_t>();
    std::vector<std::uint64_t> shape(ndims);
    std::uint64_t count = 1;
    for (auto& s : shape) {
      s = r.get<std::uint64_t>();
      count *= s;
    }
    Vector data(count);
    r.take(data.data(), sizeof(double) * count);
    ckpt.tensors[name] = {std::move(shape), std::move(data)};
  }
  return ckpt;
}

void checkpoint_save(const std::string& path, const Checkpoint& ckpt) {
  const auto bytes = checkpoint_serialize(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint checkpoint_load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return checkpoint_parse(bytes);
}

}  // namespace diffrl
