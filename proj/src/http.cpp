#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <thread>

#include "alliance/http.hpp"

namespace alliance {

namespace {

std::atomic<std::size_t> g_requests{0};

class HttplibTransport : public HttpTransport {
 public:
  HttpResponse post(const HttpRequest& request) override {
    g_requests.fetch_add(1);
    // split "scheme://host[:port]" from the path
    std::size_t scheme_end = request.url.find("://");
    std::size_t path_begin =
        request.url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    std::string origin = request.url.substr(0, path_begin);
    std::string path = path_begin == std::string::npos ? "/" : request.url.substr(path_begin);

    httplib::Client client(origin);
    auto secs = std::chrono::duration_cast<std::chrono::seconds>(request.timeout).count();
    client.set_connection_timeout(static_cast<time_t>(std::max<long long>(secs, 1)));
    client.set_read_timeout(static_cast<time_t>(std::max<long long>(secs, 1)));
    httplib::Headers headers;
    for (const auto& [k, v] : request.headers) headers.emplace(k, v);
    auto res = client.Post(path, headers, request.body, "application/json");
    if (!res) return HttpResponse{0, {}, httplib::to_string(res.error())};
    return HttpResponse{res->status, res->body, {}};
  }
};

}  // namespace

std::size_t network_requests_issued() { return g_requests.load(); }

std::unique_ptr<HttpTransport> make_httplib_transport() { return std::make_unique<HttplibTransport>(); }

void RetryPolicy::pause(int attempt) const {
  auto delay = initial_backoff * (1LL << std::max(attempt - 1, 0));
  if (sleep) {
    sleep(delay);
  } else {
    std::this_thread::sleep_for(delay);
  }
}

}  // namespace alliance
