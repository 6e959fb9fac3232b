#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <vector>

#include "dgmix/data.hpp"
#include "dgmix/errors.hpp"

namespace dgmix {

namespace {

constexpr std::uint32_t kImageMagic = 2051;
constexpr std::uint32_t kLabelMagic = 2049;

std::uint32_t read_be32(std::istream& in, const std::string& path, const char* what) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IoError(path + ": truncated while reading " + what);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
         std::uint32_t(b[3]);
}

void write_be32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<char*>(b), 4);
}

}  // namespace

RawDigitSet load_idx(const std::string& image_path, const std::string& label_path) {
  std::ifstream img(image_path, std::ios::binary);
  if (!img) throw IoError(image_path + ": cannot open image file");
  const std::uint32_t img_magic = read_be32(img, image_path, "magic");
  if (img_magic != kImageMagic) {
    throw IoError(image_path + ": bad image magic " + std::to_string(img_magic) + ", expected " +
                  std::to_string(kImageMagic));
  }
  const std::uint32_t m = read_be32(img, image_path, "image count");
  const std::uint32_t rows = read_be32(img, image_path, "rows");
  const std::uint32_t cols = read_be32(img, image_path, "cols");
  if (rows != 28 || cols != 28) {
    throw IoError(image_path + ": expected 28x28 images, got " + std::to_string(rows) + "x" +
                  std::to_string(cols));
  }

  std::ifstream lab(label_path, std::ios::binary);
  if (!lab) throw IoError(label_path + ": cannot open label file");
  const std::uint32_t lab_magic = read_be32(lab, label_path, "magic");
  if (lab_magic != kLabelMagic) {
    throw IoError(label_path + ": bad label magic " + std::to_string(lab_magic) + ", expected " +
                  std::to_string(kLabelMagic));
  }
  const std::uint32_t lab_m = read_be32(lab, label_path, "label count");
  if (lab_m != m) {
    throw IoError(label_path + ": label count " + std::to_string(lab_m) +
                  " does not match image count " + std::to_string(m));
  }

  RawDigitSet set;
  set.images = Tensor({m, 1, 28, 28});
  set.labels.resize(m);

  std::vector<unsigned char> buf(std::size_t(m) * 784);
  img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (img.gcount() != static_cast<std::streamsize>(buf.size())) {
    throw IoError(image_path + ": truncated image data");
  }
  for (std::size_t i = 0; i < buf.size(); ++i) {
    set.images[i] = static_cast<double>(buf[i]) / 255.0;
  }

  std::vector<unsigned char> lbuf(m);
  lab.read(reinterpret_cast<char*>(lbuf.data()), static_cast<std::streamsize>(lbuf.size()));
  if (lab.gcount() != static_cast<std::streamsize>(lbuf.size())) {
    throw IoError(label_path + ": truncated label data");
  }
  for (std::size_t i = 0; i < lbuf.size(); ++i) set.labels[i] = lbuf[i];
  return set;
}

void write_idx(const RawDigitSet& set, const std::string& image_path,
               const std::string& label_path) {
  const std::size_t m = set.count();
  std::ofstream img(image_path, std::ios::binary);
  if (!img) throw IoError(image_path + ": cannot open for writing");
  write_be32(img, kImageMagic);
  write_be32(img, static_cast<std::uint32_t>(m));
  write_be32(img, 28);
  write_be32(img, 28);
  std::vector<unsigned char> buf(m * 784);
  for (std::size_t i = 0; i < buf.size(); ++i) {
    const double v = set.images[i] * 255.0;
    buf[i] = static_cast<unsigned char>(std::lround(std::min(255.0, std::max(0.0, v))));
  }
  img.write(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!img) throw IoError(image_path + ": write failed");

  std::ofstream lab(label_path, std::ios::binary);
  if (!lab) throw IoError(label_path + ": cannot open for writing");
  write_be32(lab, kLabelMagic);
  write_be32(lab, static_cast<std::uint32_t>(m));
  std::vector<unsigned char> lbuf(m);
  for (std::size_t i = 0; i < m; ++i) lbuf[i] = static_cast<unsigned char>(set.labels[i]);
  lab.write(reinterpret_cast<char*>(lbuf.data()), static_cast<std::streamsize>(lbuf.size()));
  if (!lab) throw IoError(label_path + ": write failed");
}

}  // namespace dgmix
