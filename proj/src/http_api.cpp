#include "refpred/http_api.hpp"

#include "httplib.h"

namespace refpred {
namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

nlohmann::json parse_body(const httplib::Request& req) {
  auto j = nlohmann::json::parse(req.body, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object()) throw ServiceError(400, "request body must be a JSON object");
  return j;
}

// Runs a handler and maps errors onto status codes.
template <class F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const ServiceError& e) {
      send_json(res, e.status(), {{"error", e.what()}});
    } catch (const nlohmann::json::exception& e) {
      send_json(res, 400, {{"error", std::string("malformed request: ") + e.what()}});
    } catch (const std::exception& e) {
      send_json(res, 500, {{"error", e.what()}});
    }
  };
}

std::string required_param(const httplib::Request& req, const char* name) {
  if (!req.has_param(name)) throw ServiceError(400, std::string("missing parameter '") + name + "'");
  return req.get_param_value(name);
}

}  // namespace

void register_cloze_routes(httplib::Server& server, ClozeService& service,
                           const std::optional<std::filesystem::path>& ui_dir) {
  server.Get("/api/session/new", guarded([&](const httplib::Request&, httplib::Response& res) {
               send_json(res, 200, {{"session", service.new_session()}});
             }));

  server.Get("/api/task", guarded([&](const httplib::Request& req, httplib::Response& res) {
               auto view = service.next_task(required_param(req, "session"));
               if (!view) {
                 send_json(res, 200, {{"done", true}});
                 return;
               }
               send_json(res, 200, {{"done", false}, {"task", to_json(*view)}});
             }));

  server.Post("/api/guess", guarded([&](const httplib::Request& req, httplib::Response& res) {
                const auto body = parse_body(req);
                ClozeAnswer a;
                const auto kind = body.at("kind").get<std::string>();
                if (kind == "clicked") {
                  a.kind = GuessRecord::Kind::kClicked;
                  a.mention = body.at("mention").get<int>();
                } else if (kind == "new") {
                  a.kind = GuessRecord::Kind::kNew;
                  a.text = body.value("text", "");
                } else {
                  throw ServiceError(422, "kind must be \"clicked\" or \"new\"");
                }
                auto g = service.record_guess(body.at("session").get<std::string>(),
                                              body.at("task").get<std::string>(), a);
                send_json(res, 201, {{"guess", to_json(g)}});
              }));

  server.Get("/api/resolution/queue",
             guarded([&](const httplib::Request&, httplib::Response& res) {
               nlohmann::json items = nlohmann::json::array();
               for (const auto& item : service.resolution_queue()) {
                 items.push_back({{"guess", to_json(item.guess)},
                                  {"task", to_json(item.view)},
                                  {"participant_types", item.participant_types}});
               }
               send_json(res, 200, {{"items", items}});
             }));

  server.Post("/api/resolution", guarded([&](const httplib::Request& req, httplib::Response& res) {
                const auto body = parse_body(req);
                Verdict v;
                try {
                  v = verdict_from_json(body.at("verdict"));
                } catch (const std::invalid_argument& e) {
                  throw ServiceError(422, e.what());
                }
                auto r = service.record_resolution(body.at("adjudicator").get<std::string>(),
                                                   body.at("guess_id").get<std::string>(), v);
                send_json(res, 200, {{"resolution", to_json(r)}});
              }));

  server.Get("/api/export", guarded([&](const httplib::Request& req, httplib::Response& res) {
               ExportFilter f;
               if (req.has_param("scenario")) f.scenario = req.get_param_value("scenario");
               if (req.has_param("story")) f.story = req.get_param_value("story");
               send_json(res, 200, to_json(service.export_guesses(f)));
             }));

  if (ui_dir) server.set_mount_point("/", ui_dir->string());
}

}  // namespace refpred
