#pragma once

// HTTP+JSON front of the judgment store:
//   GET  /batches/{id}/next?annotator=A  -> next unjudged item, or 204
//   POST /judgments  {"annotator", "pair_id", "marked"}
//   GET  /batches/{id}/report            -> AgreementReport
//   POST /batches/{id}/close
// Items served to annotators never carry the confidence or interval.

#include <memory>
#include <stdexcept>
#include <string>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "pgtask/annotation.hpp"

namespace pgtask {

inline nlohmann::json next_item_payload(const JudgmentStore::NextItem& n) {
    return {{"pair_id", n.item.pair_id},
            {"utterance", n.item.utterance},
            {"profile", n.item.profile},
            {"position", n.position},
            {"batch_size", n.batch_size}};
}

class AnnotationServer {
public:
    explicit AnnotationServer(JudgmentStore& store) : store_(store) { routes(); }

    ~AnnotationServer() { stop(); }

    AnnotationServer(const AnnotationServer&) = delete;
    AnnotationServer& operator=(const AnnotationServer&) = delete;

    /// Binds and serves on a background thread. Port 0 picks a free port.
    int start(const std::string& host = "127.0.0.1", int port = 0) {
        port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
        if (port_ < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
        return port_;
    }

    /// Serves on the calling thread until stop() is called from elsewhere.
    void run(const std::string& host, int port) {
        if (!server_.listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
    }

    void stop() {
        server_.stop();
        if (thread_.joinable()) thread_.join();
    }

    int port() const { return port_; }

private:
    static void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    static void send_error(httplib::Response& res, int status, const std::string& msg) {
        send_json(res, status, {{"error", msg}});
    }

    template <typename Fn>
    static void guarded(httplib::Response& res, Fn&& fn) {
        try {
            fn();
        } catch (const NotFoundError& e) {
            send_error(res, 404, e.what());
        } catch (const ConflictError& e) {
            send_error(res, 409, e.what());
        } catch (const ValidationError& e) {
            send_error(res, 400, e.what());
        } catch (const std::exception& e) {
            send_error(res, 500, e.what());
        }
    }

    void routes() {
        server_.Get("/batches/:id/next", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const auto annotator = req.get_param_value("annotator");
                if (annotator.empty()) throw ValidationError("missing 'annotator' query parameter");
                auto next = store_.next_item(req.path_params.at("id"), annotator);
                if (!next) {
                    res.status = 204;
                    return;
                }
                send_json(res, 200, next_item_payload(*next));
            });
        });

        server_.Post("/judgments", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                nlohmann::json body;
                try {
                    body = nlohmann::json::parse(req.body);
                } catch (const nlohmann::json::parse_error&) {
                    throw ValidationError("request body is not JSON");
                }
                if (!body.is_object() || !body.contains("annotator") || !body["annotator"].is_string() ||
                    !body.contains("pair_id") || !body["pair_id"].is_string() || !body.contains("marked") ||
                    !body["marked"].is_boolean())
                    throw ValidationError("expected {\"annotator\": str, \"pair_id\": str, \"marked\": bool}");
                const auto ack = store_.record(body["annotator"].get<std::string>(),
                                               body["pair_id"].get<std::string>(), body["marked"].get<bool>());
                send_json(res, 200, {{"seq", ack.seq}, {"overwrite", ack.overwrite}, {"changed", ack.changed}});
            });
        });

        server_.Get("/batches/:id/report", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const auto batch = store_.batch(req.path_params.at("id"));
                send_json(res, 200, to_json(make_report(batch, store_.snapshot())));
            });
        });

        server_.Post("/batches/:id/close", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                store_.close_batch(req.path_params.at("id"));
                send_json(res, 200, {{"closed", req.path_params.at("id")}});
            });
        });
    }

    JudgmentStore& store_;
    httplib::Server server_;
    std::thread thread_;
    int port_ = -1;
};

}  // namespace pgtask
