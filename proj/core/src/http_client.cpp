#include "vicar/http_client.hpp"

#include <httplib.h>

namespace vicar::http {

std::string Response::header(const std::string& name) const {
  auto it = headers.find(name);
  return it == headers.end() ? std::string{} : it->second;
}

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  const std::size_t host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
  const auto path_start = url.find('/', host_start);
  SplitUrl out;
  if (path_start == std::string::npos) {
    out.origin = url;
  } else {
    out.origin = url.substr(0, path_start);
    out.path = url.substr(path_start);
    while (!out.path.empty() && out.path.back() == '/') out.path.pop_back();
  }
  return out;
}

Response post_json(const std::string& base_url, const std::string& path,
                   const std::string& body, const Headers& headers,
                   std::chrono::seconds timeout) {
  const SplitUrl url = split_url(base_url);
  httplib::Client client(url.origin);
  client.set_connection_timeout(std::chrono::seconds(10));
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);

  httplib::Headers request_headers;
  for (const auto& [k, v] : headers) request_headers.emplace(k, v);

  Response out;
  auto result = client.Post(url.path + path, request_headers, body, "application/json");
  if (!result) {
    out.transport_error = httplib::to_string(result.error());
    return out;
  }
  out.status = result->status;
  out.body = result->body;
  for (const auto& [k, v] : result->headers) out.headers.emplace(k, v);
  return out;
}

}  // namespace vicar::http
