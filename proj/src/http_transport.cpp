#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "uq/gateway.hpp"

namespace uq {

namespace {

class HttpTransport final : public Transport {
 public:
  explicit HttpTransport(const EndpointConfig& config) : timeout_(config.timeout) {
    // Split "scheme://host[:port][/prefix]".
    const std::string& url = config.base_url;
    auto scheme_end = url.find("://");
    std::size_t host_begin = scheme_end == std::string::npos ? 0 : scheme_end + 3;
    auto path_begin = url.find('/', host_begin);
    origin_ = url.substr(0, path_begin);
    if (path_begin != std::string::npos) prefix_ = url.substr(path_begin);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
  }

  HttpResponse post(const std::string& path, const std::string& body,
                    const std::map<std::string, std::string>& headers) override {
    std::string full_path = path;
    // Accept base URLs given with or without the "/v1" suffix.
    if (prefix_.size() >= 3 && prefix_.ends_with("/v1") && path.starts_with("/v1"))
      full_path = prefix_ + path.substr(3);
    else
      full_path = prefix_ + path;

    httplib::Client client(origin_);
    const auto seconds = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
    const auto micros = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - seconds);
    client.set_connection_timeout(seconds.count(), micros.count());
    client.set_read_timeout(seconds.count(), micros.count());
    client.set_write_timeout(seconds.count(), micros.count());

    httplib::Headers h;
    std::string content_type = "application/json";
    for (const auto& [k, v] : headers) {
      if (k == "Content-Type") content_type = v;
      else h.emplace(k, v);
    }
    auto res = client.Post(full_path, h, body, content_type);
    if (!res) throw TransportFailure("POST " + origin_ + full_path + ": " + httplib::to_string(res.error()));
    return HttpResponse{res->status, res->body};
  }

 private:
  std::chrono::milliseconds timeout_;
  std::string origin_;
  std::string prefix_;
};

}  // namespace

std::unique_ptr<Transport> make_http_transport(const EndpointConfig& config) {
  return std::make_unique<HttpTransport>(config);
}

}  // namespace uq
