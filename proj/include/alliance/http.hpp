#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace alliance {

struct HttpRequest {
  std::string url;  // absolute, e.g. https://api.example.com/v1/chat/completions
  std::vector<std::pair<std::string, std::string>> headers;
  std::string body;
  std::chrono::milliseconds timeout{120000};
};

struct HttpResponse {
  int status = 0;  // 0: no response (connection failure or timeout)
  std::string body;
  std::string error;
};

class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  virtual HttpResponse post(const HttpRequest& request) = 0;
};

/// cpp-httplib backed transport (HTTP and HTTPS).
std::unique_ptr<HttpTransport> make_httplib_transport();
/// Requests sent by every httplib transport in this process.
std::size_t network_requests_issued();

/// Counts calls before forwarding; used to prove offline runs stay offline.
class CountingTransport : public HttpTransport {
 public:
  explicit CountingTransport(std::shared_ptr<HttpTransport> inner) : inner_(std::move(inner)) {}

  HttpResponse post(const HttpRequest& request) override {
    calls_.fetch_add(1);
    if (!inner_) return HttpResponse{0, {}, "no transport configured"};
    return inner_->post(request);
  }

  std::size_t calls() const { return calls_.load(); }

 private:
  std::shared_ptr<HttpTransport> inner_;
  std::atomic<std::size_t> calls_{0};
};

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{1000};
  std::function<void(std::chrono::milliseconds)> sleep;  // defaults to this_thread::sleep_for

  void pause(int attempt) const;
};

}  // namespace alliance
