#include "vqctap/checkpoint.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <vector>

#include "bytes.hpp"
#include "vqctap/errors.hpp"

namespace vqctap {

static_assert(std::endian::native == std::endian::little,
              "tensor payloads are stored in host order and must be little-endian");

namespace {

using detail::get_le;
using detail::put_le;

constexpr std::array<char, 8> kMagic = {'V', 'Q', 'C', 'T', 'A', 'P', 'C', 'K'};

uint8_t dtype_code(torch::Dtype dtype) {
  switch (dtype) {
    case torch::kFloat32: return 0;
    case torch::kFloat64: return 1;
    case torch::kInt64: return 2;
    case torch::kUInt8: return 3;
    case torch::kBool: return 4;
    default: throw FormatError("checkpoint: unsupported tensor dtype");
  }
}

torch::Dtype code_dtype(uint8_t code) {
  switch (code) {
    case 0: return torch::kFloat32;
    case 1: return torch::kFloat64;
    case 2: return torch::kInt64;
    case 3: return torch::kUInt8;
    case 4: return torch::kBool;
    default: throw IntegrityError("checkpoint: unknown dtype code " + std::to_string(code));
  }
}

void put_string(std::ostream& out, const std::string& s) {
  put_le<uint32_t>(out, static_cast<uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

// Bounds-checked reader over the checksummed body.
class Reader {
 public:
  Reader(const unsigned char* data, std::size_t size) : data_(data), size_(size) {}

  template <class T>
  T read() {
    need(sizeof(T));
    T v = get_le<T>(data_ + pos_);
    pos_ += sizeof(T);
    return v;
  }

  std::string string() {
    const auto n = read<uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }

  const unsigned char* bytes(std::size_t n) {
    need(n);
    const unsigned char* p = data_ + pos_;
    pos_ += n;
    return p;
  }

  bool done() const { return pos_ == size_; }

 private:
  void need(std::size_t n) const {
    if (n > size_ - pos_) throw IntegrityError("checkpoint: truncated block data");
  }
  const unsigned char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

}  // namespace

const torch::Tensor& Checkpoint::block(const std::string& name) const {
  auto it = blocks.find(name);
  if (it == blocks.end()) throw FormatError("checkpoint: missing block '" + name + "'");
  return it->second;
}

const std::string& Checkpoint::meta(const std::string& key) const {
  auto it = manifest.find(key);
  if (it == manifest.end()) throw FormatError("checkpoint: missing manifest key '" + key + "'");
  return it->second;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::ostringstream body;
  body.write(kMagic.data(), kMagic.size());
  put_le<uint32_t>(body, kCheckpointVersion);
  put_le<uint32_t>(body, static_cast<uint32_t>(checkpoint.manifest.size()));
  for (const auto& [key, value] : checkpoint.manifest) {
    put_string(body, key);
    put_string(body, value);
  }
  put_le<uint32_t>(body, static_cast<uint32_t>(checkpoint.blocks.size()));
  for (const auto& [name, tensor] : checkpoint.blocks) {
    auto t = tensor.detach().cpu().contiguous();
    put_string(body, name);
    put_le<uint8_t>(body, dtype_code(t.scalar_type()));
    put_le<uint32_t>(body, static_cast<uint32_t>(t.dim()));
    for (int64_t d : t.sizes()) put_le<int64_t>(body, d);
    const auto nbytes = static_cast<uint64_t>(t.nbytes());
    put_le<uint64_t>(body, nbytes);
    body.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
  }
  const std::string bytes = body.str();
  const uint64_t checksum = detail::fnv1a64(bytes);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FileError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  put_le<uint64_t>(out, checksum);
  if (!out) throw FileError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open " + path.string());
  const std::vector<unsigned char> file(std::istreambuf_iterator<char>(in), {});

  const std::size_t header = kMagic.size() + sizeof(uint32_t);
  if (file.size() < kMagic.size() || std::memcmp(file.data(), kMagic.data(), kMagic.size()) != 0) {
    throw FormatError(path.string() + " is not a checkpoint");
  }
  if (file.size() < header) throw IntegrityError("checkpoint: truncated header");
  const auto version = get_le<uint32_t>(file.data() + kMagic.size());
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  if (file.size() < header + sizeof(uint64_t)) throw IntegrityError("checkpoint: truncated");
  const std::size_t body_size = file.size() - sizeof(uint64_t);
  const auto stored = get_le<uint64_t>(file.data() + body_size);
  if (stored != detail::fnv1a64(file.data(), body_size)) {
    throw IntegrityError("checkpoint: checksum mismatch (file truncated or corrupted)");
  }

  Reader r(file.data() + header, body_size - header);
  Checkpoint ckpt;
  const auto n_meta = r.read<uint32_t>();
  for (uint32_t i = 0; i < n_meta; ++i) {
    auto key = r.string();
    ckpt.manifest[key] = r.string();
  }
  const auto n_blocks = r.read<uint32_t>();
  for (uint32_t i = 0; i < n_blocks; ++i) {
    auto name = r.string();
    const auto dtype = code_dtype(r.read<uint8_t>());
    const auto ndim = r.read<uint32_t>();
    if (ndim > 16) throw IntegrityError("checkpoint: implausible rank in block '" + name + "'");
    std::vector<int64_t> sizes(ndim);
    for (auto& d : sizes) {
      d = r.read<int64_t>();
      if (d < 0) throw IntegrityError("checkpoint: negative dimension in block '" + name + "'");
    }
    const auto nbytes = r.read<uint64_t>();
    auto t = torch::empty(sizes, dtype);
    if (nbytes != static_cast<uint64_t>(t.nbytes())) {
      throw IntegrityError("checkpoint: size mismatch in block '" + name + "'");
    }
    std::memcpy(t.data_ptr(), r.bytes(nbytes), nbytes);
    ckpt.blocks.emplace(std::move(name), std::move(t));
  }
  if (!r.done()) throw IntegrityError("checkpoint: trailing bytes");
  return ckpt;
}

namespace {

std::string shape_text(at::IntArrayRef sizes) {
  std::string text = "[";
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (i) text += ", ";
    text += std::to_string(sizes[i]);
  }
  return text + "]";
}

}  // namespace

void store_parameters(Checkpoint& checkpoint, const std::string& prefix,
                      const torch::nn::Module& module) {
  for (const auto& item : module.named_parameters()) {
    checkpoint.blocks[prefix + item.key()] = item.value().detach().clone();
  }
  for (const auto& item : module.named_buffers()) {
    checkpoint.blocks[prefix + item.key()] = item.value().detach().clone();
  }
}

namespace {

void restore_one(const Checkpoint& checkpoint, const std::string& name, torch::Tensor& target) {
  const auto& source = checkpoint.block(name);
  if (source.sizes() != target.sizes()) {
    throw FormatError("checkpoint block '" + name + "' has shape " + shape_text(source.sizes()) +
                      " but the model expects " + shape_text(target.sizes()));
  }
  if (source.scalar_type() != target.scalar_type()) {
    throw FormatError("checkpoint block '" + name + "' has the wrong dtype");
  }
  target.copy_(source);
}

}  // namespace

void restore_parameters(const Checkpoint& checkpoint, const std::string& prefix,
                        torch::nn::Module& module) {
  torch::NoGradGuard no_grad;
  for (auto& item : module.named_parameters()) restore_one(checkpoint, prefix + item.key(), item.value());
  for (auto& item : module.named_buffers()) restore_one(checkpoint, prefix + item.key(), item.value());
}

std::string format_double(double value) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  return std::string(buf.data(), end);
}

double parse_double(const std::string& text) {
  double value = 0.0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || end != text.data() + text.size()) {
    throw FormatError("malformed number '" + text + "'");
  }
  return value;
}

int64_t parse_int(const std::string& text) {
  int64_t value = 0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || end != text.data() + text.size()) {
    throw FormatError("malformed integer '" + text + "'");
  }
  return value;
}

}  // namespace vqctap
