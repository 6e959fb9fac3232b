#include "dgmix/tensorfile.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "dgmix/errors.hpp"
#include "dgmix/hash.hpp"

namespace dgmix {

namespace {

constexpr std::size_t kMagicLen = 8;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

struct Reader {
  std::string_view bytes;
  std::size_t pos = 0;
  const std::string& origin;

  void need(std::size_t n, const char* what) {
    if (bytes.size() - pos < n) throw IoError(origin + ": truncated while reading " + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(bytes[pos++])) << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(bytes[pos++])) << (8 * i);
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
};

}  // namespace

std::string tensor_file_bytes(std::string_view magic, const TensorFile& file) {
  if (magic.size() != kMagicLen) {
    throw UsageError("tensor_file_bytes: magic must be 8 bytes, got \"" + std::string(magic) + "\"");
  }
  std::string out;
  out.append(magic);
  put_u32(out, kTensorFileVersion);
  put_u64(out, file.digest);
  for (const auto& e : file.entries) {
    put_u64(out, e.name.size());
    out.append(e.name);
    put_u64(out, e.value.rank());
    for (std::size_t ext : e.value.shape) put_u64(out, ext);
    for (double v : e.value.data) put_f64(out, v);
  }
  put_u64(out, fnv1a64(out.data(), out.size()));
  return out;
}

TensorFile parse_tensor_file(std::string_view magic, std::string_view bytes,
                             const std::string& origin) {
  if (bytes.size() < kMagicLen + 4 + 8 + 8) throw IoError(origin + ": file too short");
  if (bytes.substr(0, kMagicLen) != magic) {
    throw IoError(origin + ": bad magic, expected \"" + std::string(magic) + "\"");
  }

  Reader head{bytes, kMagicLen, origin};
  const std::uint32_t version = head.u32("format version");
  if (version != kTensorFileVersion) {
    throw VersionError(origin + ": format version " + std::to_string(version) +
                       " is not readable by this build (expected " +
                       std::to_string(kTensorFileVersion) + ")");
  }

  const std::size_t body_len = bytes.size() - 8;
  Reader tail{bytes, body_len, origin};
  const std::uint64_t stored = tail.u64("checksum");
  const std::uint64_t actual = fnv1a64(bytes.data(), body_len);
  if (stored != actual) throw ChecksumError(origin + ": checksum mismatch, file is corrupt");

  TensorFile file;
  Reader r{bytes.substr(0, body_len), head.pos, origin};
  file.digest = r.u64("digest");
  while (r.pos < body_len) {
    NamedTensor e;
    const std::uint64_t name_len = r.u64("name length");
    r.need(name_len, "name");
    e.name.assign(r.bytes.data() + r.pos, name_len);
    r.pos += name_len;
    const std::uint64_t rank = r.u64("rank");
    Shape shape(rank);
    for (auto& ext : shape) ext = r.u64("extent");
    Tensor t(shape);
    for (double& v : t.data) v = r.f64("value");
    e.value = std::move(t);
    file.entries.push_back(std::move(e));
  }
  return file;
}

void write_tensor_file(const std::string& path, std::string_view magic, const TensorFile& file) {
  const std::string bytes = tensor_file_bytes(magic, file);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path + ": cannot open for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(path + ": write failed");
}

TensorFile read_tensor_file(const std::string& path, std::string_view magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_tensor_file(magic, bytes, path);
}

}  // namespace dgmix
