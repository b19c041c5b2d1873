#pragma once

#include <string>
#include <string_view>

namespace recheck::detail {

struct SplitUrl {
  std::string base;  // scheme://host[:port]
  std::string path;  // starts with '/', may be empty
};

inline SplitUrl split_url(std::string_view url) {
  const auto scheme = url.find("://");
  const auto host_at = scheme == std::string_view::npos ? 0 : scheme + 3;
  const auto slash = url.find('/', host_at);
  if (slash == std::string_view::npos) return {std::string(url), ""};
  std::string path(url.substr(slash));
  while (path.size() > 1 && path.back() == '/') path.pop_back();
  if (path == "/") path.clear();
  return {std::string(url.substr(0, slash)), path};
}

}  // namespace recheck::detail
