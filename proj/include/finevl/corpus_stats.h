#ifndef FINEVL_CORPUS_STATS_H_
#define FINEVL_CORPUS_STATS_H_

#include <cstddef>
#include <filesystem>
#include <istream>
#include <string>
#include <vector>

namespace finevl {

struct SourceStats {
  std::string source;
  size_t images = 0;  // distinct image ids
  size_t texts = 0;   // caption lines
};

struct CorpusStats {
  std::vector<SourceStats> sources;
  size_t total_images = 0;
  size_t total_texts = 0;

  // A fixed-width table: one row per source, then the totals.
  std::string Render() const;
  std::string ToJson() const;
};

// Counts one JSONL manifest of {"image_id", "caption"} records. Blank lines
// are skipped. Throws Error{kMalformedLine} naming the 1-based line number.
SourceStats CountManifest(std::istream& in, const std::string& source);

// One source per manifest, named after the file stem. Totals sum the
// per-source counts. Throws Error{kMissingFile, kMalformedLine}.
CorpusStats ComputeCorpusStats(const std::vector<std::filesystem::path>& manifests);

}  // namespace finevl

#endif  // FINEVL_CORPUS_STATS_H_
