// SPDX-License-Identifier: Apache-2.0
#include "vtlab/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "vtlab/errors.hpp"

namespace vtlab {

namespace {

constexpr char kMagic[4] = {'V', 'T', 'L', '1'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

void write_f64(std::ostream& os, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  write_u64(os, bits);
}

void write_f32_array(std::ostream& os, const std::vector<float>& data) {
  for (float f : data) {
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    write_u32(os, bits);
  }
}

uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw DataError("checkpoint: truncated file");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw DataError("checkpoint: truncated file");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

double read_f64(std::istream& is) {
  uint64_t bits = read_u64(is);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

std::vector<float> read_f32_array(std::istream& is, size_t count) {
  std::vector<float> out(count);
  for (size_t i = 0; i < count; ++i) {
    uint32_t bits = read_u32(is);
    std::memcpy(&out[i], &bits, 4);
  }
  return out;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::string& family, int64_t step,
                     const NamedParams& params, const AdamState* adam) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("checkpoint: cannot write " + path);
  os.write(kMagic, 4);
  write_u32(os, kVersion);
  write_u32(os, static_cast<uint32_t>(family.size()));
  os.write(family.data(), static_cast<std::streamsize>(family.size()));
  write_u64(os, static_cast<uint64_t>(step));
  write_u32(os, static_cast<uint32_t>(params.size()));
  for (const auto& [name, tensor] : params) {
    write_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<uint32_t>(tensor.shape().size()));
    for (size_t d : tensor.shape()) write_u64(os, d);
    write_u64(os, tensor.size());
    write_f32_array(os, tensor.data());
  }
  if (adam) {
    if (adam->first_moment.size() != params.size() ||
        adam->second_moment.size() != params.size()) {
      throw ContractError("checkpoint: adam moments do not align with parameters");
    }
    os.put(1);
    write_u64(os, static_cast<uint64_t>(adam->step));
    write_f64(os, adam->beta1);
    write_f64(os, adam->beta2);
    write_f64(os, adam->epsilon);
    for (size_t i = 0; i < params.size(); ++i) {
      write_f32_array(os, adam->first_moment[i]);
      write_f32_array(os, adam->second_moment[i]);
    }
  } else {
    os.put(0);
  }
  if (!os) throw DataError("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError("checkpoint: bad magic in " + path);
  }
  const uint32_t version = read_u32(is);
  if (version != kVersion) {
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const uint32_t family_len = read_u32(is);
  ckpt.family.resize(family_len);
  is.read(ckpt.family.data(), family_len);
  ckpt.step = static_cast<int64_t>(read_u64(is));
  const uint32_t n = read_u32(is);
  for (uint32_t i = 0; i < n; ++i) {
    const uint32_t name_len = read_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const uint32_t ndim = read_u32(is);
    CheckpointEntry entry;
    size_t count = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      entry.shape.push_back(static_cast<size_t>(read_u64(is)));
      count *= entry.shape.back();
    }
    const uint64_t stored = read_u64(is);
    if (stored != count) throw DataError("checkpoint: element count mismatch for " + name);
    entry.data = read_f32_array(is, count);
    ckpt.order.push_back(name);
    ckpt.entries.emplace(std::move(name), std::move(entry));
  }
  const int has_adam = is.get();
  if (has_adam == 1) {
    AdamState adam;
    adam.step = static_cast<int64_t>(read_u64(is));
    adam.beta1 = read_f64(is);
    adam.beta2 = read_f64(is);
    adam.epsilon = read_f64(is);
    for (const auto& name : ckpt.order) {
      const size_t count = ckpt.entries.at(name).data.size();
      adam.first_moment.push_back(read_f32_array(is, count));
      adam.second_moment.push_back(read_f32_array(is, count));
    }
    ckpt.adam = std::move(adam);
  } else if (has_adam != 0) {
    throw DataError("checkpoint: corrupt optimizer flag");
  }
  return ckpt;
}

std::vector<std::string> load_into(const Checkpoint& ckpt, NamedParams& params, bool strict) {
  std::vector<std::string> loaded;
  for (auto& [name, tensor] : params) {
    auto it = ckpt.entries.find(name);
    if (it == ckpt.entries.end()) {
      if (strict) throw DataError("checkpoint: missing tensor " + name);
      continue;
    }
    if (it->second.data.size() != tensor.size()) {
      throw DataError("checkpoint: shape mismatch for " + name);
    }
    tensor.data() = it->second.data;
    loaded.push_back(name);
  }
  return loaded;
}

}  // namespace vtlab
