#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace testsupport {

inline std::filesystem::path source_dir() { return RECHECK_SOURCE_DIR; }

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& tag) {
  std::random_device rd;
  auto dir = std::filesystem::temp_directory_path() / ("recheck-" + tag + "-" + std::to_string(rd()));
  std::filesystem::create_directories(dir);
  return dir;
}

struct GoldenSentences {
  std::vector<std::string> positives;
  std::vector<std::string> negatives;
};

/// Quoted example sentences from the shipped extraction prompt: quotes under
/// "Examples (annotate these)" are positives, quotes under "Do NOT annotate"
/// negatives. Trailing ellipses are dropped.
inline GoldenSentences prompt_examples() {
  const std::string text = slurp(source_dir() / "assets/prompts/activation_extraction.md");
  GoldenSentences out;
  std::vector<std::string>* target = nullptr;
  std::istringstream lines(text);
  std::string line;
  auto strip_ellipsis = [](std::string s) {
    for (const std::string tail : {"\xE2\x80\xA6", "..."}) {
      if (s.size() >= tail.size() && s.compare(s.size() - tail.size(), tail.size(), tail) == 0) {
        s.resize(s.size() - tail.size());
      }
    }
    return s;
  };
  while (std::getline(lines, line)) {
    if (line.rfind("Examples (annotate these)", 0) == 0) {
      target = &out.positives;
      continue;
    }
    if (line.rfind("Do NOT annotate:", 0) == 0) {
      target = &out.negatives;
      continue;
    }
    if (line.rfind("---", 0) == 0) {
      target = nullptr;
      continue;
    }
    if (!target) continue;
    const std::string lq = "\xE2\x80\x9C", rq = "\xE2\x80\x9D";
    std::size_t i = 0;
    while (i < line.size()) {
      std::size_t open_straight = line.find('"', i);
      std::size_t open_curly = line.find(lq, i);
      if (open_straight == std::string::npos && open_curly == std::string::npos) break;
      std::size_t begin, end;
      if (open_curly < open_straight) {
        begin = open_curly + lq.size();
        end = line.find(rq, begin);
        if (end == std::string::npos) break;
        i = end + rq.size();
      } else {
        begin = open_straight + 1;
        end = line.find('"', begin);
        if (end == std::string::npos) break;
        i = end + 1;
      }
      target->push_back(strip_ellipsis(line.substr(begin, end - begin)));
    }
  }
  return out;
}

}  // namespace testsupport
