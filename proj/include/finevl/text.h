#ifndef FINEVL_TEXT_H_
#define FINEVL_TEXT_H_

#include <string>
#include <string_view>
#include <vector>

namespace finevl {

// A word as produced by caption segmentation. `glued` is true when the word
// was split off the previous word without intervening whitespace (e.g. the
// "." in "grass.").
struct Word {
  std::string text;
  bool glued = false;
};

bool IsPunct(char c);
std::string ToLower(std::string_view s);
std::string Trim(std::string_view s);

// Splits on whitespace, then peels leading/trailing punctuation characters
// into their own one-character words. Inner punctuation (hyphens,
// apostrophes) stays with the word.
std::vector<Word> SegmentWords(std::string_view text);

// Inverse of SegmentWords up to whitespace normalization.
std::string JoinWords(const std::vector<Word>& words);

bool IsPunctWord(std::string_view word);

}  // namespace finevl

#endif  // FINEVL_TEXT_H_
