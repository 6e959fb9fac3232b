#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace dgmix {

/// One corpus file as served by the standard mirrors: gzipped, with a known
/// decompressed byte length used for verification.
struct CorpusFile {
  std::string name;
  std::size_t expected_bytes;
};

/// The four files of the standard digit corpus.
const std::vector<CorpusFile>& standard_corpus_files();

/// Decompress a gzip byte stream.
std::string gunzip(std::string_view bytes);

/// Download any of the four standard files missing from dest_dir via plain
/// HTTP GET of "<mirror_url>/<name>.gz", decompress, verify the byte length,
/// and write the raw file. Files already present with the right length are
/// left alone. Returns the paths of all four files. Never called by tests;
/// training works from local files alone.
std::vector<std::string> fetch_corpus(const std::string& mirror_url, const std::string& dest_dir);

}  // namespace dgmix
