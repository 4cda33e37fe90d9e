#pragma once

#include <chrono>
#include <stdexcept>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "prunelab/distill.hpp"

namespace prunelab {

// RewriterClient backed by a JSON-over-HTTP service:
//   POST <endpoint> {"prompt": ..., "temperature": ..., "top_p": ...}
//   -> 200 {"text": ...}
// One retry on transport or protocol failure, then RewriteError.
class HttpRewriter : public RewriterClient {
  public:
    explicit HttpRewriter(const std::string& endpoint, double timeout_seconds = 10.0)
        : timeout_seconds_(timeout_seconds) {
        const size_t scheme = endpoint.find("://");
        if (scheme == std::string::npos) {
            throw std::invalid_argument("HttpRewriter: endpoint must include a scheme: " +
                                        endpoint);
        }
        const size_t path_start = endpoint.find('/', scheme + 3);
        if (path_start == std::string::npos) {
            base_ = endpoint;
            path_ = "/";
        } else {
            base_ = endpoint.substr(0, path_start);
            path_ = endpoint.substr(path_start);
        }
    }

    std::string rewrite(const std::string& source, const std::string& draft_target,
                        const std::string& prompt_template, double temperature,
                        double top_p) override {
        const std::string prompt = render_rewrite_prompt(prompt_template, source, draft_target);
        const nlohmann::json body = {
            {"prompt", prompt}, {"temperature", temperature}, {"top_p", top_p}};
        std::string last_error;
        for (int attempt = 0; attempt < 2; ++attempt) {
            httplib::Client client(base_);
            client.set_connection_timeout(std::chrono::milliseconds(
                static_cast<int64_t>(timeout_seconds_ * 1000)));
            client.set_read_timeout(std::chrono::milliseconds(
                static_cast<int64_t>(timeout_seconds_ * 1000)));
            const httplib::Result res = client.Post(path_, body.dump(), "application/json");
            if (!res) {
                last_error = "transport error: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status != 200) {
                last_error = "service returned status " + std::to_string(res->status);
                continue;
            }
            try {
                const nlohmann::json reply = nlohmann::json::parse(res->body);
                const std::string text = reply.at("text").get<std::string>();
                if (text.empty()) {
                    last_error = "service returned empty text";
                    continue;
                }
                return text;
            } catch (const nlohmann::json::exception& e) {
                last_error = std::string("bad service reply: ") + e.what();
            }
        }
        throw RewriteError("rewrite failed after retry: " + last_error);
    }

  private:
    std::string base_;
    std::string path_;
    double timeout_seconds_;
};

}  // namespace prunelab
