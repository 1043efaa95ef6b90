#ifndef FINEVL_TESTS_TEST_SUPPORT_H_
#define FINEVL_TESTS_TEST_SUPPORT_H_

#include <filesystem>
#include <string>

#include "finevl/wordnet.h"

namespace finevl::testing {

inline std::filesystem::path FixturePath(const std::string& name) {
  return std::filesystem::path(FINEVL_FIXTURE_DIR) / name;
}

inline const WordNetGraph& MiniWordNet() {
  static const WordNetGraph graph = WordNetGraph::Load(FixturePath("mini_wordnet"));
  return graph;
}

inline bool HaveRealWordNet() {
  return std::filesystem::exists(std::filesystem::path(FINEVL_DEFAULT_WORDNET_DIR) / "data.noun");
}

// Loaded once per test binary; callers check HaveRealWordNet() first.
inline const WordNetGraph& RealWordNet() {
  static const WordNetGraph graph = WordNetGraph::Load(FINEVL_DEFAULT_WORDNET_DIR);
  return graph;
}

}  // namespace finevl::testing

#endif  // FINEVL_TESTS_TEST_SUPPORT_H_
