#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "codeccap/backend.hpp"
#include "codeccap/error.hpp"

namespace codeccap {

namespace {

class HttpTransport : public Transport {
public:
    HttpReply post(const std::string& url, const Headers& headers, const std::string& body,
                   double timeout_s) override {
        auto scheme_end = url.find("://");
        if (scheme_end == std::string::npos) throw ConfigError("endpoint '" + url + "' is not an absolute URL");
        auto path_start = url.find('/', scheme_end + 3);
        const std::string origin = url.substr(0, path_start);
        const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);

        httplib::Client client(origin);
        const auto secs = static_cast<time_t>(timeout_s);
        client.set_connection_timeout(secs);
        client.set_read_timeout(secs);
        client.set_write_timeout(secs);
        httplib::Headers h;
        std::string content_type = "application/json";
        for (const auto& [k, v] : headers) {
            if (k == "Content-Type") content_type = v;
            else h.emplace(k, v);
        }
        auto res = client.Post(path, h, body, content_type);
        if (!res) throw TransportError("request to " + origin + " failed: " + httplib::to_string(res.error()));
        return HttpReply{res->status, res->body};
    }
};

} // namespace

std::shared_ptr<Transport> make_http_transport() { return std::make_shared<HttpTransport>(); }

} // namespace codeccap
