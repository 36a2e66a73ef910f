#pragma once

#include <cstddef>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace codeccap {

enum class ModelRole { vision_caption, text_reason };

std::string_view to_string(ModelRole role);

/// An encoded frame handed to a vision model. Bytes are shared, not copied.
struct ImageInput {
    double time_s = 0.0;
    std::shared_ptr<const std::string> bytes;

    static ImageInput from_bytes(double time_s, std::string bytes);
    /// sha256 hex of the encoded bytes.
    std::string digest() const;
};

struct DecodeParams {
    int max_tokens = 2048;
    double temperature = 0.0;
};

struct ModelRequest {
    ModelRole role = ModelRole::text_reason;
    std::string prompt;
    std::vector<ImageInput> images;
    DecodeParams decode;

    /// vision_caption needs at least one image; text_reason none.
    void validate() const;
};

struct Usage {
    long prompt_tokens = 0;
    long completion_tokens = 0;
};

struct ModelResponse {
    std::string text;
    Usage usage;
    std::string backend_id;
    bool refusal = false;
};

enum class BackendMode { live, record, replay };

std::string_view to_string(BackendMode mode);
BackendMode backend_mode_from_string(std::string_view name);

struct BackendConfig {
    std::string profile_name = "replay";
    std::string endpoint;        ///< full URL of the chat-completions route
    std::string model;
    std::string credential_env;  ///< defaults to CODECCAP_<PROFILE>_KEY
    double rpm_limit = 60.0;
    int max_retries = 3;
    double retry_backoff_base_s = 1.0;
    double timeout_s = 120.0;
    BackendMode mode = BackendMode::replay;
    std::filesystem::path fixture_dir;
    std::string extra_body_json;  ///< merged into every live payload

    void validate() const;
    std::string credential_variable() const;
};

/// Reads a backend profile (JSON) into a config; mode and fixture_dir are left
/// for the caller.
BackendConfig load_profile(const std::filesystem::path& path);

/// Hex sha256 of role, decode params, prompt and image digests (in order).
std::string request_hash(const ModelRequest& request);

std::string sha256_hex(std::string_view bytes);
std::string base64_encode(std::string_view bytes);

struct HttpReply {
    int status = 0;
    std::string body;
};

using Headers = std::vector<std::pair<std::string, std::string>>;

/// Network seam. Implementations throw TransportError on connection failures.
class Transport {
public:
    virtual ~Transport() = default;
    virtual HttpReply post(const std::string& url, const Headers& headers, const std::string& body,
                           double timeout_s) = 0;
};

std::shared_ptr<Transport> make_http_transport();

class Clock {
public:
    virtual ~Clock() = default;
    virtual double now() = 0;  ///< seconds, monotonic
    virtual void sleep_for(double seconds) = 0;
};

std::shared_ptr<Clock> system_clock();

/// Virtual clock for tests: sleep_for advances time instantly.
class ManualClock : public Clock {
public:
    double now() override;
    void sleep_for(double seconds) override;
    void advance(double seconds);

private:
    std::mutex mu_;
    double t_ = 0.0;
};

/// Sliding 60 s window limiter: at most `rpm` acquisitions in any 60 s span.
class RateLimiter {
public:
    RateLimiter(double rpm, std::shared_ptr<Clock> clock);
    void acquire();

private:
    std::size_t limit_;
    std::shared_ptr<Clock> clock_;
    std::mutex mu_;
    std::deque<double> stamps_;
};

/// Model client for every role. Live mode calls the transport with retries;
/// record mode serves existing fixtures and persists new live responses;
/// replay mode never touches the transport. Thread-safe.
class ModelBackend {
public:
    ModelBackend(BackendConfig cfg, std::shared_ptr<Transport> transport,
                 std::shared_ptr<Clock> clock = system_clock());

    ModelResponse invoke(const ModelRequest& request);

    const BackendConfig& config() const { return cfg_; }
    std::size_t upstream_calls() const;
    std::filesystem::path fixture_path(const std::string& hash) const;

private:
    ModelResponse call_live(const ModelRequest& request);
    std::string build_payload(const ModelRequest& request) const;
    ModelResponse parse_reply(const std::string& body) const;
    void write_fixture(const std::string& hash, const ModelRequest& request, const ModelResponse& response) const;
    ModelResponse read_fixture(const std::filesystem::path& path) const;
    std::mutex& hash_lock(const std::string& hash);

    BackendConfig cfg_;
    std::shared_ptr<Transport> transport_;
    std::shared_ptr<Clock> clock_;
    RateLimiter limiter_;
    std::string credential_;
    mutable std::mutex mu_;
    std::size_t upstream_calls_ = 0;
    std::map<std::string, std::unique_ptr<std::mutex>> hash_locks_;
};

/// PNG encoding used for live payloads; input is any netpbm image.
std::string pnm_to_png(std::string_view pnm_bytes);

} // namespace codeccap
