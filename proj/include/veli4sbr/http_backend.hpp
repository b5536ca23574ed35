#pragma once

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <cstdlib>
#include <string>

#include <json.hpp>

#include "veli4sbr/gateway.hpp"

namespace veli4sbr {

/// Chat-completion style HTTP backend: one user message carrying the rendered prompt.
class HttpBackend : public Backend {
public:
    /// `endpoint` is a full URL such as https://api.openai.com/v1/chat/completions.
    HttpBackend(std::string endpoint, std::string api_key, int timeout_seconds = 60)
        : api_key_(std::move(api_key)), timeout_seconds_(timeout_seconds) {
        const auto scheme_end = endpoint.find("://");
        if (scheme_end == std::string::npos) throw ConfigError("endpoint must be an absolute URL: " + endpoint);
        const auto path_start = endpoint.find('/', scheme_end + 3);
        base_ = endpoint.substr(0, path_start);
        path_ = path_start == std::string::npos ? "/" : endpoint.substr(path_start);
    }

    static std::string api_key_from_env(const char* var = "VELI4SBR_API_KEY") {
        const char* v = std::getenv(var);
        if (v == nullptr || *v == '\0')
            throw ConfigError(std::string("http backend requires the ") + var + " environment variable");
        return v;
    }

    std::string complete(const PromptRequest& request) override {
        httplib::Client client(base_);
        client.set_connection_timeout(timeout_seconds_, 0);
        client.set_read_timeout(timeout_seconds_, 0);
        nlohmann::json body = {
            {"model", request.model_id},
            {"temperature", request.temperature},
            {"messages", nlohmann::json::array({{{"role", "user"}, {"content", request.rendered_text}}})},
        };
        httplib::Headers headers;
        if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
        const auto res = client.Post(path_, headers, body.dump(), "application/json");
        if (!res) throw TransportError("request failed: " + httplib::to_string(res.error()));
        if (res->status != 200) throw TransportError("HTTP " + std::to_string(res->status));
        const auto j = nlohmann::json::parse(res->body, nullptr, false);
        if (j.is_discarded() || !j.contains("choices") || !j["choices"].is_array() || j["choices"].empty())
            throw TransportError("malformed completion envelope");
        const auto& msg = j["choices"][0];
        if (msg.contains("message") && msg["message"].contains("content") && msg["message"]["content"].is_string())
            return msg["message"]["content"].get<std::string>();
        if (msg.contains("text") && msg["text"].is_string()) return msg["text"].get<std::string>();
        throw TransportError("completion envelope has no message content");
    }

private:
    std::string base_;
    std::string path_;
    std::string api_key_;
    int timeout_seconds_;
};

}  // namespace veli4sbr
