#include "mseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "mseg/errors.hpp"

namespace mseg {

namespace {

constexpr char kMagic[4] = {'M', 'S', 'E', 'G'};

class Writer {
 public:
  template <class T>
  void put(T v) {
    static_assert(std::is_unsigned_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw TruncatedFileError("checkpoint truncated at byte " + std::to_string(pos_) + " (needed " +
                               std::to_string(n) + " more)");
    }
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t.tensor;
  }
  return nullptr;
}

Checkpoint checkpoint_from(const ParameterStore& params) {
  Checkpoint ck;
  for (const auto& [name, t] : params.entries()) ck.tensors.push_back({name, t.detach()});
  return ck;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint) {
  Writer w;
  w.raw(kMagic, 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(checkpoint.tensors.size()));
  for (const auto& [name, t] : checkpoint.tensors) {
    if (name.size() > 0xFFFF) throw ValidationError("tensor name too long: " + name.substr(0, 64));
    w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.raw(name.data(), name.size());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.dtype()));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.ndim()));
    for (auto d : t.shape()) w.put<std::uint64_t>(static_cast<std::uint64_t>(d));
    for (double v : t.data()) {
      if (t.dtype() == DType::f32) {
        w.put<std::uint32_t>(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      } else {
        w.put<std::uint64_t>(std::bit_cast<std::uint64_t>(v));
      }
    }
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.take(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw BadMagicError("not a checkpoint: bad magic bytes");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw UnsupportedVersionError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>();
  Checkpoint ck;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = r.get<std::uint16_t>();
    auto name_bytes = r.take(len);
    std::string name(name_bytes.begin(), name_bytes.end());
    const auto code = r.get<std::uint8_t>();
    if (code > 1) throw CheckpointError("tensor '" + name + "' has unknown dtype code " + std::to_string(code));
    const DType dtype = static_cast<DType>(code);
    const auto ndim = r.get<std::uint8_t>();
    if (ndim == 0) throw CheckpointError("tensor '" + name + "' has zero dimensions");
    Shape shape;
    for (std::uint8_t d = 0; d < ndim; ++d) {
      const auto dim = r.get<std::uint64_t>();
      if (dim == 0 || dim > (std::uint64_t{1} << 40)) {
        throw CheckpointError("tensor '" + name + "' has invalid dimension " + std::to_string(dim));
      }
      shape.push_back(static_cast<std::int64_t>(dim));
    }
    const auto n = static_cast<std::size_t>(numel(shape));
    const std::size_t width = dtype == DType::f32 ? 4 : 8;
    if (n > r.remaining() / width) {
      r.take(r.remaining() + 1);  // reports truncation
    }
    std::vector<double> data(n);
    for (auto& v : data) {
      if (dtype == DType::f32) {
        v = static_cast<double>(std::bit_cast<float>(r.get<std::uint32_t>()));
      } else {
        v = std::bit_cast<double>(r.get<std::uint64_t>());
      }
    }
    ck.tensors.push_back({std::move(name), Tensor::from_data(std::move(shape), std::move(data), dtype)});
  }
  if (r.remaining() != 0) throw CheckpointError("trailing bytes after last tensor");
  return ck;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace mseg
