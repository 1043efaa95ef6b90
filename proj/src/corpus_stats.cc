#include "finevl/corpus_stats.h"

#include <cstdio>
#include <fstream>
#include <unordered_set>

#include "finevl/error.h"
#include "finevl/text.h"
#include "json.hpp"

namespace finevl {

SourceStats CountManifest(std::istream& in, const std::string& source) {
  SourceStats s;
  s.source = source;
  std::unordered_set<std::string> images;
  std::string line;
  for (size_t line_no = 1; std::getline(in, line); ++line_no) {
    if (Trim(line).empty()) continue;
    auto fail = [&](const std::string& why) {
      throw Error(Errc::kMalformedLine, source + ":" + std::to_string(line_no) + ": " + why);
    };
    nlohmann::json j = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded() || !j.is_object()) fail("not a JSON object");
    auto id = j.find("image_id");
    auto caption = j.find("caption");
    if (id == j.end() || !(id->is_string() || id->is_number_integer())) fail("missing string or integer image_id");
    if (caption == j.end() || !caption->is_string()) fail("missing string caption");
    images.insert(id->is_string() ? "s:" + id->get<std::string>() : "n:" + id->dump());
    ++s.texts;
  }
  s.images = images.size();
  return s;
}

CorpusStats ComputeCorpusStats(const std::vector<std::filesystem::path>& manifests) {
  CorpusStats stats;
  for (const auto& path : manifests) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::kMissingFile, "cannot read manifest " + path.string());
    stats.sources.push_back(CountManifest(in, path.stem().string()));
    stats.total_images += stats.sources.back().images;
    stats.total_texts += stats.sources.back().texts;
  }
  return stats;
}

std::string CorpusStats::Render() const {
  size_t width = 6;
  for (const SourceStats& s : sources) width = std::max(width, s.source.size());
  std::string out;
  char buf[512];
  auto row = [&](const std::string& name, const std::string& images, const std::string& texts) {
    std::snprintf(buf, sizeof buf, "%-*s  %12s  %12s\n", static_cast<int>(width), name.c_str(), images.c_str(),
                  texts.c_str());
    out += buf;
  };
  row("source", "images", "texts");
  for (const SourceStats& s : sources) row(s.source, std::to_string(s.images), std::to_string(s.texts));
  row("total", std::to_string(total_images), std::to_string(total_texts));
  return out;
}

std::string CorpusStats::ToJson() const {
  nlohmann::json j;
  j["sources"] = nlohmann::json::array();
  for (const SourceStats& s : sources) {
    j["sources"].push_back({{"source", s.source}, {"images", s.images}, {"texts", s.texts}});
  }
  j["total_images"] = total_images;
  j["total_texts"] = total_texts;
  return j.dump();
}

}  // namespace finevl
