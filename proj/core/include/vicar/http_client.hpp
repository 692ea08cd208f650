#pragma once

#include <chrono>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace vicar::http {

struct Response {
  // 0 when the request never produced an HTTP status (connect/read failure).
  int status = 0;
  std::string body;
  std::multimap<std::string, std::string> headers;
  std::string transport_error;

  std::string header(const std::string& name) const;
};

using Headers = std::vector<std::pair<std::string, std::string>>;

// POSTs `body` to `base_url` joined with `path`. `base_url` may carry a path
// prefix (e.g. "https://api.example.com/v1").
Response post_json(const std::string& base_url, const std::string& path,
                   const std::string& body, const Headers& headers,
                   std::chrono::seconds timeout = std::chrono::seconds(120));

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;    // "" or "/prefix"
};
SplitUrl split_url(const std::string& url);

}  // namespace vicar::http
