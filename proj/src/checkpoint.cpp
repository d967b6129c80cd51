#include "fairtranslate/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "fairtranslate/common.hpp"

namespace fairtranslate {

namespace {

constexpr char kMagic[4] = {'F', 'T', 'C', 'P'};

enum class DType : std::uint8_t { F32 = 0, F64 = 1, I64 = 2, U8 = 3 };

DType dtype_of(const torch::Tensor& t) {
  switch (t.scalar_type()) {
    case torch::kFloat32: return DType::F32;
    case torch::kFloat64: return DType::F64;
    case torch::kInt64: return DType::I64;
    case torch::kUInt8: return DType::U8;
    default: throw FormatError("unsupported tensor dtype in checkpoint");
  }
}

torch::ScalarType to_torch(DType d) {
  switch (d) {
    case DType::F32: return torch::kFloat32;
    case DType::F64: return torch::kFloat64;
    case DType::I64: return torch::kInt64;
    case DType::U8: return torch::kUInt8;
  }
  throw FormatError("unknown dtype tag");
}

template <typename T>
void write_pod(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw FormatError("truncated checkpoint");
  return value;
}

void write_string(std::ostream& os, const std::string& s) {
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
  const auto len = read_pod<std::uint32_t>(is);
  std::string s(len, '\0');
  is.read(s.data(), len);
  if (!is) throw FormatError("truncated checkpoint");
  return s;
}

}  // namespace

bool Checkpoint::has_tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return true;
  }
  return false;
}

torch::Tensor Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw FormatError("checkpoint is missing tensor '" + name + "'");
}

std::string Checkpoint::meta_str(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) throw FormatError("checkpoint is missing metadata '" + key + "'");
  return it->second;
}

std::int64_t Checkpoint::meta_int(const std::string& key) const {
  return std::stoll(meta_str(key));
}

double Checkpoint::meta_double(const std::string& key) const {
  return std::stod(meta_str(key));
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open " + path + " for writing");

  os.write(kMagic, 4);
  write_pod<std::uint32_t>(os, ckpt.version);
  write_string(os, ckpt.role);

  write_pod<std::uint64_t>(os, ckpt.meta.size());
  for (const auto& [k, v] : ckpt.meta) {
    write_string(os, k);
    write_string(os, v);
  }

  write_pod<std::uint64_t>(os, ckpt.tensors.size());
  for (const auto& [name, tensor] : ckpt.tensors) {
    auto t = tensor.detach().contiguous().cpu();
    write_string(os, name);
    write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(dtype_of(t)));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.dim()));
    for (int i = 0; i < t.dim(); ++i) write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(t.size(i)));
    const auto nbytes = static_cast<std::uint64_t>(t.numel() * t.element_size());
    write_pod<std::uint64_t>(os, nbytes);
    os.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
  }
  if (!os) throw FormatError("failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path, const std::string& expected_role) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint " + path);

  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError(path + " is not a fairtranslate checkpoint");
  }

  Checkpoint ckpt;
  ckpt.version = read_pod<std::uint32_t>(is);
  if (ckpt.version != kCheckpointVersion) {
    throw FormatError("checkpoint format version " + std::to_string(ckpt.version) +
                      " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  ckpt.role = read_string(is);
  if (!expected_role.empty() && ckpt.role != expected_role) {
    throw FormatError(path + " holds a '" + ckpt.role + "' checkpoint, expected '" +
                      expected_role + "'");
  }

  const auto meta_count = read_pod<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < meta_count; ++i) {
    auto k = read_string(is);
    auto v = read_string(is);
    ckpt.meta.emplace(std::move(k), std::move(v));
  }

  const auto tensor_count = read_pod<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < tensor_count; ++i) {
    auto name = read_string(is);
    const auto dtype = static_cast<DType>(read_pod<std::uint8_t>(is));
    const auto ndim = read_pod<std::uint32_t>(is);
    std::vector<std::int64_t> sizes(ndim);
    for (auto& s : sizes) s = static_cast<std::int64_t>(read_pod<std::uint64_t>(is));
    const auto nbytes = read_pod<std::uint64_t>(is);
    auto t = torch::empty(sizes, to_torch(dtype));
    if (static_cast<std::uint64_t>(t.numel() * t.element_size()) != nbytes) {
      throw FormatError("tensor size mismatch for '" + name + "'");
    }
    is.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
    if (!is) throw FormatError("truncated checkpoint");
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ckpt;
}

void pack_module(Checkpoint& ckpt, const std::string& prefix, const torch::nn::Module& module) {
  for (const auto& p : module.named_parameters(/*recurse=*/true)) {
    ckpt.tensors.emplace_back(prefix + p.key(), p.value().detach().clone());
  }
  for (const auto& b : module.named_buffers(/*recurse=*/true)) {
    ckpt.tensors.emplace_back(prefix + b.key(), b.value().detach().clone());
  }
}

void unpack_module(const Checkpoint& ckpt, const std::string& prefix, torch::nn::Module& module) {
  torch::NoGradGuard no_grad;
  for (auto p : module.named_parameters(/*recurse=*/true)) {
    auto stored = ckpt.tensor(prefix + p.key());
    if (!stored.sizes().equals(p.value().sizes())) {
      throw FormatError("shape mismatch for '" + prefix + p.key() + "'");
    }
    p.value().copy_(stored);
  }
  for (auto b : module.named_buffers(/*recurse=*/true)) {
    auto stored = ckpt.tensor(prefix + b.key());
    if (!stored.sizes().equals(b.value().sizes())) {
      throw FormatError("shape mismatch for '" + prefix + b.key() + "'");
    }
    b.value().copy_(stored);
  }
}

std::uint64_t parameter_fingerprint(const torch::nn::Module& module) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  auto absorb = [&hash](const torch::Tensor& t) {
    auto c = t.detach().contiguous().cpu();
    const auto* bytes = static_cast<const std::uint8_t*>(c.data_ptr());
    const auto n = static_cast<std::size_t>(c.numel() * c.element_size());
    for (std::size_t i = 0; i < n; ++i) {
      hash ^= bytes[i];
      hash *= 0x100000001b3ULL;
    }
  };
  for (const auto& p : module.named_parameters(/*recurse=*/true)) absorb(p.value());
  for (const auto& b : module.named_buffers(/*recurse=*/true)) absorb(b.value());
  return hash;
}

}  // namespace fairtranslate
