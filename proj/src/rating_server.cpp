#include "earsr/rating_server.hpp"

#include <httplib.h>

#include <json.hpp>

#include "earsr/error.hpp"

namespace earsr::rating {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int status_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::UnknownRater:
    case ErrorCode::UnknownTrial:
    case ErrorCode::MissingManifest:
      return 404;
    case ErrorCode::NoData:
      return 409;
    case ErrorCode::Io:
      return 500;
    default:
      return 400;
  }
}

void send_json(httplib::Response& res, int status, const std::string& body) {
  res.status = status;
  res.set_content(body, "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& msg) {
  send_json(res, status, json{{"v", kSchemaVersion}, {"error", code}, {"message", msg}}.dump());
}

template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    send_error(res, status_for(e.code()), error_code_name(e.code()), e.what());
  } catch (const json::exception& e) {
    send_error(res, 400, "BadRequest", e.what());
  }
}

bool plain_id(const std::string& id) {
  return !id.empty() && id.find_first_of("/\\.") == std::string::npos;
}

}  // namespace

Server::Server(fs::path root, ServerOptions opts)
    : root_(std::move(root)), opts_(opts), http_(std::make_unique<httplib::Server>()) {
  http_->set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Headers", "Authorization, Content-Type"}});
  http_->Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  http_->Get(R"(/study/([^/]+)/next)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      Study& s = study(req.matches[1]);
      if (!req.has_param("rater")) throw Error(ErrorCode::BadArgument, "missing rater parameter");
      const TrialPayload p = s.next_trial(req.get_param_value("rater"));
      send_json(res, 200, payload_to_json(p, s.manifest().study_id));
    });
  });

  http_->Post(R"(/study/([^/]+)/rating)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string id = req.matches[1];
      Study& s = study(id);
      const json body = json::parse(req.body);
      if (body.value("v", 0) != kSchemaVersion) throw Error(ErrorCode::BadArgument, "payload must carry \"v\":1");
      RatingRecord r;
      r.rater = body.at("rater").get<std::string>();
      r.trial_id = body.at("trial_id").get<std::string>();
      r.candidate = body.at("candidate").get<int>();
      r.criterion = body.at("criterion").get<std::string>();
      r.score = body.at("score").get<int>();
      r.idempotency_key = body.value("idempotency_key", std::string{});
      const Ack ack = s.submit(r);
      send_json(res, 200, json{{"v", kSchemaVersion}, {"ok", true}, {"seq", ack.seq}, {"duplicate", ack.duplicate}}.dump());
      if (!ack.duplicate && opts_.compact_every > 0) {
        std::lock_guard lock(studies_mu_);
        if (++since_compact_[id] >= opts_.compact_every) {
          since_compact_[id] = 0;
          s.compact();
        }
      }
    });
  });

  http_->Get(R"(/study/([^/]+)/report)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      Study& s = study(req.matches[1]);
      std::string token = req.has_param("token") ? req.get_param_value("token") : "";
      const std::string auth = req.get_header_value("Authorization");
      if (auth.rfind("Bearer ", 0) == 0) token = auth.substr(7);
      if (token.empty() || token != s.manifest().token) {
        send_error(res, 401, "Unauthorized", "report requires the study token");
        return;
      }
      ReportOptions opts;
      opts.anonymize = req.has_param("anonymize") && req.get_param_value("anonymize") != "0";
      send_json(res, 200, s.analyze(opts).json);
    });
  });

  http_->Get(R"(/assets/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    const auto bytes = read_asset(root_, req.matches[1]);
    if (!bytes) {
      send_error(res, 404, "NotFound", "no such asset");
      return;
    }
    res.set_header("Cache-Control", "public, max-age=31536000, immutable");
    res.set_content(*bytes, "image/png");
  });
}

Server::~Server() { stop(); }

Study& Server::study(const std::string& id) {
  if (!plain_id(id)) throw Error(ErrorCode::MissingManifest, "no such study");
  std::lock_guard lock(studies_mu_);
  auto it = studies_.find(id);
  if (it == studies_.end()) {
    it = studies_.emplace(id, std::make_unique<Study>(root_ / id)).first;
  }
  return *it->second;
}

int Server::bind(const std::string& host, int port) {
  if (port == 0) return http_->bind_to_any_port(host);
  return http_->bind_to_port(host, port) ? port : -1;
}

bool Server::serve() { return http_->listen_after_bind(); }

void Server::stop() {
  if (http_) http_->stop();
}

bool Server::running() const { return http_->is_running(); }

}  // namespace earsr::rating
