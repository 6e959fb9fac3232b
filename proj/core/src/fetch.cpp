#include "dgmix/fetch.hpp"

#include <zlib.h>

#include <filesystem>
#include <fstream>

#include "dgmix/errors.hpp"

#include <httplib.h>

namespace dgmix {

const std::vector<CorpusFile>& standard_corpus_files() {
  static const std::vector<CorpusFile> files = {
      {"train-images-idx3-ubyte", 47040016},
      {"train-labels-idx1-ubyte", 60008},
      {"t10k-images-idx3-ubyte", 7840016},
      {"t10k-labels-idx1-ubyte", 10008},
  };
  return files;
}

std::string gunzip(std::string_view bytes) {
  z_stream zs{};
  // 15 window bits plus 16 selects the gzip wrapper
  if (inflateInit2(&zs, 15 + 16) != Z_OK) throw DataError("gunzip: cannot initialize zlib");

  std::string out;
  char chunk[1 << 16];
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(bytes.data()));
  zs.avail_in = static_cast<uInt>(bytes.size());
  int rc = Z_OK;
  do {
    zs.next_out = reinterpret_cast<Bytef*>(chunk);
    zs.avail_out = sizeof(chunk);
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw DataError("gunzip: corrupt gzip stream (zlib status " + std::to_string(rc) + ")");
    }
    out.append(chunk, sizeof(chunk) - zs.avail_out);
  } while (rc != Z_STREAM_END);
  inflateEnd(&zs);
  return out;
}

namespace {

std::size_t file_length(const std::string& path) {
  std::error_code ec;
  const auto n = std::filesystem::file_size(path, ec);
  return ec ? 0 : static_cast<std::size_t>(n);
}

/// Split "http://host[:port]/base/path" into the client root and the path part.
std::pair<std::string, std::string> split_url(const std::string& url) {
  if (url.rfind("https://", 0) == 0) {
    throw ConfigError("fetch_corpus: this build speaks plain http only; use an http:// mirror");
  }
  if (url.rfind("http://", 0) != 0) {
    throw ConfigError("fetch_corpus: mirror url must start with http://, got " + url);
  }
  const std::size_t host_start = 7;
  const std::size_t slash = url.find('/', host_start);
  if (slash == std::string::npos) return {url, ""};
  return {url.substr(0, slash), url.substr(slash)};
}

}  // namespace

std::vector<std::string> fetch_corpus(const std::string& mirror_url, const std::string& dest_dir) {
  std::filesystem::create_directories(dest_dir);
  auto [root, base_path] = split_url(mirror_url);
  while (!base_path.empty() && base_path.back() == '/') base_path.pop_back();

  httplib::Client client(root);
  client.set_follow_location(true);
  client.set_connection_timeout(30);
  client.set_read_timeout(120);

  std::vector<std::string> paths;
  for (const CorpusFile& f : standard_corpus_files()) {
    const std::string dest = dest_dir + "/" + f.name;
    if (file_length(dest) == f.expected_bytes) {
      paths.push_back(dest);
      continue;
    }
    const std::string remote = base_path + "/" + f.name + ".gz";
    auto res = client.Get(remote);
    if (!res) {
      throw IoError("fetch_corpus: GET " + root + remote + " failed: " +
                    httplib::to_string(res.error()));
    }
    if (res->status != 200) {
      throw IoError("fetch_corpus: GET " + root + remote + " returned status " +
                    std::to_string(res->status));
    }
    const std::string raw = gunzip(res->body);
    if (raw.size() != f.expected_bytes) {
      throw DataError("fetch_corpus: " + f.name + " decompressed to " +
                      std::to_string(raw.size()) + " bytes, expected " +
                      std::to_string(f.expected_bytes));
    }
    std::ofstream out(dest, std::ios::binary);
    if (!out) throw IoError(dest + ": cannot open for writing");
    out.write(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (!out) throw IoError(dest + ": write failed");
    paths.push_back(dest);
  }
  return paths;
}

}  // namespace dgmix
