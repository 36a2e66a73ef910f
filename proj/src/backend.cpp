#include "codeccap/backend.hpp"

#include "codeccap/error.hpp"
#include "codeccap/json_io.hpp"
#include "codeccap/raster.hpp"
#include "text_util.hpp"

#include <openssl/evp.h>
#include <png.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <thread>

namespace codeccap {

namespace fs = std::filesystem;
using json_io::Json;

std::string_view to_string(ModelRole role) {
    return role == ModelRole::vision_caption ? "vision_caption" : "text_reason";
}

std::string_view to_string(BackendMode mode) {
    switch (mode) {
    case BackendMode::live: return "live";
    case BackendMode::record: return "record";
    case BackendMode::replay: return "replay";
    }
    return "replay";
}

BackendMode backend_mode_from_string(std::string_view name) {
    if (name == "live") return BackendMode::live;
    if (name == "record") return BackendMode::record;
    if (name == "replay") return BackendMode::replay;
    throw ConfigError("unknown backend mode '" + std::string(name) + "' (expected live|record|replay)");
}

// --- digests ----------------------------------------------------------------

std::string sha256_hex(std::string_view bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw Error("sha256 digest failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 0xF]);
    }
    return out;
}

std::string base64_encode(std::string_view bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
    int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                            reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

ImageInput ImageInput::from_bytes(double time_s, std::string bytes) {
    return ImageInput{time_s, std::make_shared<const std::string>(std::move(bytes))};
}

std::string ImageInput::digest() const { return sha256_hex(bytes ? std::string_view(*bytes) : std::string_view()); }

void ModelRequest::validate() const {
    if (role == ModelRole::vision_caption && images.empty())
        throw InputError("vision_caption requests need at least one image");
    if (role == ModelRole::text_reason && !images.empty())
        throw InputError("text_reason requests carry no images");
    if (decode.max_tokens <= 0) throw InputError("max_tokens must be positive");
}

std::string request_hash(const ModelRequest& request) {
    std::string canon = "codeccap-request-v1\n";
    canon += to_string(request.role);
    canon += '\n';
    canon += std::to_string(request.decode.max_tokens);
    canon += '\n';
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", request.decode.temperature);
    canon += buf;
    canon += '\n';
    canon += std::to_string(request.prompt.size());
    canon += ':';
    canon += request.prompt;
    canon += '\n';
    for (const auto& img : request.images) {
        canon += img.digest();
        canon += '\n';
    }
    return sha256_hex(canon);
}

// --- config -----------------------------------------------------------------

void BackendConfig::validate() const {
    if (!(rpm_limit > 0.0)) throw ConfigError("backend rpm limit must be > 0");
    if (max_retries < 0) throw ConfigError("backend max_retries must be >= 0");
    if (!(retry_backoff_base_s >= 0.0)) throw ConfigError("backend retry backoff must be >= 0");
    if (mode != BackendMode::live && fixture_dir.empty())
        throw ConfigError("record/replay mode needs a fixture directory (set CODECCAP_REPLAY_DIR)");
    if (mode != BackendMode::replay && endpoint.empty())
        throw ConfigError("backend profile '" + profile_name + "' has no endpoint");
}

std::string BackendConfig::credential_variable() const {
    if (!credential_env.empty()) return credential_env;
    std::string name;
    for (char c : profile_name) name.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
    return "CODECCAP_" + text::upper(name) + "_KEY";
}

BackendConfig load_profile(const fs::path& path) {
    const Json j = json_io::parse(read_file(path));
    BackendConfig cfg;
    cfg.profile_name = j.contains("name") ? json_io::string_field(j, "name") : path.stem().string();
    if (j.contains("endpoint")) cfg.endpoint = json_io::string_field(j, "endpoint");
    if (j.contains("model")) cfg.model = json_io::string_field(j, "model");
    if (j.contains("api_key_env")) cfg.credential_env = json_io::string_field(j, "api_key_env");
    if (j.contains("rpm")) cfg.rpm_limit = json_io::number_field(j, "rpm");
    if (j.contains("max_retries")) cfg.max_retries = static_cast<int>(json_io::number_field(j, "max_retries"));
    if (j.contains("retry_backoff_base_s")) cfg.retry_backoff_base_s = json_io::number_field(j, "retry_backoff_base_s");
    if (j.contains("timeout_s")) cfg.timeout_s = json_io::number_field(j, "timeout_s");
    if (j.contains("extra_body")) cfg.extra_body_json = j["extra_body"].dump();
    if (!(cfg.rpm_limit > 0.0)) throw ConfigError(path.string() + ": rpm must be > 0");
    if (cfg.max_retries < 0) throw ConfigError(path.string() + ": max_retries must be >= 0");
    return cfg;
}

// --- clocks and rate limiting ------------------------------------------------

namespace {

class SystemClock : public Clock {
public:
    double now() override {
        using namespace std::chrono;
        return duration<double>(steady_clock::now().time_since_epoch()).count();
    }
    void sleep_for(double seconds) override {
        if (seconds > 0) std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
    }
};

} // namespace

std::shared_ptr<Clock> system_clock() {
    static auto clock = std::make_shared<SystemClock>();
    return clock;
}

double ManualClock::now() {
    std::lock_guard lk(mu_);
    return t_;
}

void ManualClock::sleep_for(double seconds) { advance(seconds); }

void ManualClock::advance(double seconds) {
    std::lock_guard lk(mu_);
    if (seconds > 0) t_ += seconds;
}

RateLimiter::RateLimiter(double rpm, std::shared_ptr<Clock> clock)
    : limit_(static_cast<std::size_t>(std::max(1.0, std::floor(rpm)))), clock_(std::move(clock)) {}

void RateLimiter::acquire() {
    for (;;) {
        double wait = 0.0;
        {
            std::lock_guard lk(mu_);
            const double now = clock_->now();
            while (!stamps_.empty() && stamps_.front() <= now - 60.0) stamps_.pop_front();
            if (stamps_.size() < limit_) {
                stamps_.push_back(now);
                return;
            }
            wait = stamps_.front() + 60.0 - now;
        }
        clock_->sleep_for(wait);
    }
}

// --- backend ----------------------------------------------------------------

ModelBackend::ModelBackend(BackendConfig cfg, std::shared_ptr<Transport> transport, std::shared_ptr<Clock> clock)
    : cfg_(std::move(cfg)), transport_(std::move(transport)), clock_(std::move(clock)),
      limiter_(cfg_.rpm_limit, clock_) {
    cfg_.validate();
    if (cfg_.mode != BackendMode::replay) {
        const auto var = cfg_.credential_variable();
        const char* key = std::getenv(var.c_str());
        if (!key || !*key) throw ConfigError("credential variable " + var + " is not set");
        credential_ = key;
        if (!transport_) throw ConfigError("live backend needs a transport");
    }
}

std::size_t ModelBackend::upstream_calls() const {
    std::lock_guard lk(mu_);
    return upstream_calls_;
}

fs::path ModelBackend::fixture_path(const std::string& hash) const { return cfg_.fixture_dir / (hash + ".json"); }

std::mutex& ModelBackend::hash_lock(const std::string& hash) {
    std::lock_guard lk(mu_);
    auto& slot = hash_locks_[hash];
    if (!slot) slot = std::make_unique<std::mutex>();
    return *slot;
}

ModelResponse ModelBackend::invoke(const ModelRequest& request) {
    request.validate();
    if (cfg_.mode == BackendMode::live) return call_live(request);

    const auto hash = request_hash(request);
    const auto path = fixture_path(hash);
    if (cfg_.mode == BackendMode::replay) {
        if (!fs::exists(path)) throw FixtureMissingError(hash);
        return read_fixture(path);
    }
    std::lock_guard lk(hash_lock(hash));
    if (fs::exists(path)) return read_fixture(path);
    auto response = call_live(request);
    write_fixture(hash, request, response);
    return response;
}

ModelResponse ModelBackend::call_live(const ModelRequest& request) {
    const auto payload = build_payload(request);
    const Headers headers{{"Authorization", "Bearer " + credential_}, {"Content-Type", "application/json"}};
    std::string last_error;
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
        if (attempt > 0) clock_->sleep_for(cfg_.retry_backoff_base_s * std::pow(2.0, attempt - 1));
        limiter_.acquire();
        {
            std::lock_guard lk(mu_);
            ++upstream_calls_;
        }
        HttpReply reply;
        try {
            reply = transport_->post(cfg_.endpoint, headers, payload, cfg_.timeout_s);
        } catch (const TransportError& e) {
            last_error = e.what();
            continue;
        }
        if (reply.status == 429 || reply.status >= 500) {
            last_error = "HTTP " + std::to_string(reply.status);
            continue;
        }
        if (reply.status < 200 || reply.status >= 300)
            throw BackendError("backend '" + cfg_.profile_name + "' rejected the request: HTTP " +
                               std::to_string(reply.status) + ": " + reply.body.substr(0, 300));
        return parse_reply(reply.body);
    }
    throw TransportError("backend '" + cfg_.profile_name + "' failed after " + std::to_string(cfg_.max_retries + 1) +
                         " attempts: " + last_error);
}

namespace {

std::string image_data_url(const std::string& bytes) {
    if (bytes.rfind("\x89PNG", 0) == 0) return "data:image/png;base64," + base64_encode(bytes);
    if (bytes.rfind("\xFF\xD8", 0) == 0) return "data:image/jpeg;base64," + base64_encode(bytes);
    return "data:image/png;base64," + base64_encode(pnm_to_png(bytes));
}

} // namespace

std::string ModelBackend::build_payload(const ModelRequest& request) const {
    Json content = Json::array();
    content.push_back({{"type", "text"}, {"text", request.prompt}});
    for (const auto& img : request.images)
        content.push_back({{"type", "image_url"}, {"image_url", {{"url", image_data_url(*img.bytes)}}}});
    Json body;
    body["model"] = cfg_.model;
    body["messages"] = Json::array({Json{{"role", "user"}, {"content", std::move(content)}}});
    body["max_tokens"] = request.decode.max_tokens;
    body["temperature"] = request.decode.temperature;
    if (!cfg_.extra_body_json.empty()) {
        const Json extra = Json::parse(cfg_.extra_body_json);
        for (auto it = extra.begin(); it != extra.end(); ++it) body[it.key()] = it.value();
    }
    return body.dump();
}

ModelResponse ModelBackend::parse_reply(const std::string& body) const {
    Json j;
    try {
        j = Json::parse(body);
    } catch (const nlohmann::json::parse_error&) {
        throw BackendError("backend '" + cfg_.profile_name + "' returned non-JSON body");
    }
    ModelResponse r;
    r.backend_id = cfg_.profile_name + (cfg_.model.empty() ? "" : ":" + cfg_.model);
    try {
        const auto& choice = j.at("choices").at(0);
        const auto& msg = choice.at("message");
        if (msg.contains("content") && msg["content"].is_string()) r.text = msg["content"].get<std::string>();
        if (msg.contains("refusal") && msg["refusal"].is_string() && !msg["refusal"].get<std::string>().empty())
            r.refusal = true;
        if (choice.contains("finish_reason") && choice["finish_reason"] == "content_filter") r.refusal = true;
    } catch (const nlohmann::json::exception&) {
        throw BackendError("backend '" + cfg_.profile_name + "' reply lacks choices[0].message");
    }
    if (r.text.empty()) r.refusal = true;
    if (j.contains("usage") && j["usage"].is_object()) {
        r.usage.prompt_tokens = j["usage"].value("prompt_tokens", 0L);
        r.usage.completion_tokens = j["usage"].value("completion_tokens", 0L);
    }
    return r;
}

void ModelBackend::write_fixture(const std::string& hash, const ModelRequest& request,
                                 const ModelResponse& response) const {
    Json j;
    j["request_hash"] = hash;
    j["role"] = std::string(to_string(request.role));
    j["decode"] = {{"max_tokens", request.decode.max_tokens}, {"temperature", request.decode.temperature}};
    j["prompt"] = request.prompt;
    Json images = Json::array();
    for (const auto& img : request.images)
        images.push_back({{"time_s", json_io::time_value(img.time_s)}, {"digest", img.digest()}});
    j["images"] = std::move(images);
    j["response"] = {{"text", response.text},
                     {"refusal", response.refusal},
                     {"backend_id", response.backend_id},
                     {"usage",
                      {{"prompt_tokens", response.usage.prompt_tokens},
                       {"completion_tokens", response.usage.completion_tokens}}}};
    fs::create_directories(cfg_.fixture_dir);
    write_file_atomic(fixture_path(hash), json_io::dump(j));
}

ModelResponse ModelBackend::read_fixture(const fs::path& path) const {
    const Json j = json_io::parse(read_file(path));
    const auto& resp = json_io::field(j, "response");
    ModelResponse r;
    r.text = json_io::string_field(resp, "text");
    r.refusal = resp.value("refusal", r.text.empty());
    r.backend_id = resp.value("backend_id", std::string("replay"));
    if (resp.contains("usage")) {
        r.usage.prompt_tokens = resp["usage"].value("prompt_tokens", 0L);
        r.usage.completion_tokens = resp["usage"].value("completion_tokens", 0L);
    }
    return r;
}

// --- PNG ----------------------------------------------------------------------

std::string pnm_to_png(std::string_view pnm_bytes) {
    const Raster img = decode_pnm(pnm_bytes);
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width);
    image.height = static_cast<png_uint_32>(img.height);
    image.format = PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&image, nullptr, &size, 0, img.rgb.data(), 0, nullptr))
        throw Error(std::string("png sizing failed: ") + image.message);
    std::string out(size, '\0');
    if (!png_image_write_to_memory(&image, out.data(), &size, 0, img.rgb.data(), 0, nullptr))
        throw Error(std::string("png encoding failed: ") + image.message);
    out.resize(size);
    return out;
}

} // namespace codeccap
