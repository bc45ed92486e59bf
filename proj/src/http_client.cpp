#include <cstdlib>

#include "httplib.h"
#include "json.hpp"
#include "merits/annotator.hpp"

namespace merits {

using nlohmann::json;

HttpChatClient::HttpChatClient(BackendProfile profile) : profile_(std::move(profile)) {}

std::string HttpChatClient::complete(const std::string& prompt) {
    const char* key = std::getenv(profile_.api_key_env.c_str());
    if (!key || !*key)
        throw ConfigError("environment variable " + profile_.api_key_env +
                          " is not set for backend " + profile_.name);

    json body = {
        {"model", profile_.model},
        {"temperature", 0},
        {"messages", json::array({json{{"role", "user"}, {"content", prompt}}})},
    };

    httplib::Client http(profile_.base_url);
    http.set_connection_timeout(30);
    http.set_read_timeout(120);
    httplib::Headers headers = {{"Authorization", std::string("Bearer ") + key}};
    auto res = http.Post("/v1/chat/completions", headers, body.dump(),
                         "application/json");
    if (!res)
        throw TransportError("backend " + profile_.name + " unreachable: " +
                             httplib::to_string(res.error()));
    if (res->status != 200)
        throw TransportError("backend " + profile_.name + " returned HTTP " +
                             std::to_string(res->status));
    try {
        json reply = json::parse(res->body);
        return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
        throw TransportError("backend " + profile_.name +
                             " sent a malformed payload: " + e.what());
    }
}

}  // namespace merits
