#include "finevl/text.h"

#include <cctype>

namespace finevl {

bool IsPunct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

std::string ToLower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string Trim(std::string_view s) {
  size_t b = 0;
  size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<Word> SegmentWords(std::string_view text) {
  std::vector<Word> words;
  size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (start == i) break;
    std::string_view chunk = text.substr(start, i - start);

    size_t b = 0;
    size_t e = chunk.size();
    while (b < e && IsPunct(chunk[b])) ++b;
    while (e > b && IsPunct(chunk[e - 1])) --e;

    bool glued = false;
    for (size_t k = 0; k < b; ++k) {
      words.push_back({std::string(1, chunk[k]), glued});
      glued = true;
    }
    if (b < e) {
      words.push_back({std::string(chunk.substr(b, e - b)), glued});
      glued = true;
    }
    for (size_t k = e; k < chunk.size(); ++k) {
      words.push_back({std::string(1, chunk[k]), glued});
      glued = true;
    }
  }
  return words;
}

std::string JoinWords(const std::vector<Word>& words) {
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i > 0 && !words[i].glued) out.push_back(' ');
    out += words[i].text;
  }
  return out;
}

bool IsPunctWord(std::string_view word) {
  if (word.empty()) return false;
  for (char c : word) {
    if (!IsPunct(c)) return false;
  }
  return true;
}

}  // namespace finevl
