#include "gencrs/service.h"

#include <algorithm>
#include <ctime>
#include <random>
#include <thread>

#ifndef CPPHTTPLIB_LISTEN_BACKLOG
#define CPPHTTPLIB_LISTEN_BACKLOG 128
#endif
#include <httplib.h>
#include <json.hpp>

namespace gencrs {

using json = nlohmann::json;

std::shared_ptr<const ServingBundle> ServingBundle::load(const std::string& model_path, const std::string& sids_path,
                                                         const std::string& catalog_path) {
  auto b = std::make_shared<ServingBundle>();
  b->sids = load_sid_table(sids_path);
  LoadedLm lm = load_lm(model_path);
  b->model = std::move(lm.model);
  b->tokenizer = std::move(lm.tokenizer);
  b->catalog = load_catalog(catalog_path);
  if (!(b->tokenizer.sids() == b->sids.vocab))
    throw Error(ErrorCode::kMismatch, "model vocabulary and SID table disagree on L/K");
  for (const auto& e : b->sids.entries) {
    if (!b->catalog.contains(e.item_id))
      throw Error(ErrorCode::kMismatch, "SID table item \"" + e.item_id + "\" is not in the catalog");
  }
  return b;
}

namespace {

std::string lower(std::string s) {
  for (char& c : s) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return s;
}

std::string now_iso8601() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

ChatService::ChatService(std::shared_ptr<const ServingBundle> bundle, ServiceOptions opts)
    : bundle_(std::move(bundle)), opts_(opts), id_rng_(std::random_device{}()) {
  if (bundle_) decoder_ = std::make_unique<StructuredDecoder>(bundle_->model, bundle_->tokenizer, bundle_->sids);
}

const ServingBundle& ChatService::bundle() const {
  if (!bundle_) throw Error(ErrorCode::kUnavailable, "model not loaded");
  return *bundle_;
}

std::string ChatService::create_session() {
  if (!bundle_) throw Error(ErrorCode::kUnavailable, "model not loaded");
  auto s = std::make_shared<Slot>();
  s->view.created_at = now_iso8601();
  std::lock_guard<std::mutex> lock(mu_);
  std::string id;
  do {
    id = hex64(id_rng_());
  } while (sessions_.count(id));
  s->view.session_id = id;
  sessions_.emplace(id, std::move(s));
  return id;
}

std::shared_ptr<ChatService::Slot> ChatService::slot(const std::string& session_id) const {
  std::lock_guard<std::mutex> lock(mu_);
  const auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw Error(ErrorCode::kNotFound, "unknown session \"" + session_id + "\"");
  return it->second;
}

std::string ChatService::render_response(std::span<const int> tokens) const {
  const ServingBundle& b = bundle();
  const Tokenizer& tok = b.tokenizer;
  const int boi = tok.id(Special::kBoi), eoi = tok.id(Special::kEoi);
  std::string out;
  std::vector<int> run;
  auto flush = [&] {
    if (run.empty()) return;
    if (!out.empty()) out += ' ';
    out += tok.decode(run);
    run.clear();
  };
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] != boi) {
      if (tokens[i] != Tokenizer::kEos) run.push_back(tokens[i]);
      continue;
    }
    Codes codes;
    std::size_t j = i + 1;
    for (; j < tokens.size() && tokens[j] != eoi; ++j) {
      if (const auto sc = tok.sid_of(tokens[j])) codes.push_back(sc->second);
    }
    flush();
    const auto pos = decoder_->trie().lookup(codes);
    if (!out.empty()) out += ' ';
    if (pos) {
      const std::string& id = b.sids.entries[*pos].item_id;
      out += "«" + b.catalog.at(b.catalog.position(id)).title + "» (" + id + ")";
    } else {
      out += "«?»";
    }
    i = j;
  }
  flush();
  return out;
}

ChatTurnResult ChatService::post_message(const std::string& session_id, const MessageRequest& req) {
  const ServingBundle& b = bundle();
  const Tokenizer& tok = b.tokenizer;
  if (req.item_override && !b.sids.find(*req.item_override))
    throw Error(ErrorCode::kInvalidArgument, "unknown item_override \"" + *req.item_override + "\"");
  if (req.want_topk && *req.want_topk < 1)
    throw Error(ErrorCode::kInvalidArgument, "want_topk must be >= 1");
  if (req.mode_override == Mode::kChat && req.item_override)
    throw Error(ErrorCode::kInvalidArgument, "item_override conflicts with mode_override=chat");

  std::string user_model_text;
  try {
    user_model_text = replace_mentions(req.text, b.sids);
  } catch (const Error& e) {
    throw Error(ErrorCode::kInvalidArgument, e.what());
  }

  const auto s = slot(session_id);
  std::lock_guard<std::mutex> lock(s->mu);
  std::vector<Turn> turns;
  for (const auto& h : s->view.history) turns.push_back({h.role, h.model_text, {}});
  turns.push_back({Role::kUser, user_model_text, {}});
  const std::vector<int> context = tok.encode(serialize_context(turns, turns.size()));

  GenerateOptions g;
  g.mode_override = req.mode_override;
  g.item_override = req.item_override;
  g.max_text_tokens = opts_.max_text_tokens;
  g.inline_items = opts_.inline_items;
  const Generation gen = decoder_->generate(context, g);

  ChatTurnResult r;
  r.mode = gen.mode;
  if (gen.mode == Mode::kRec && gen.item_id) {
    r.item_id = gen.item_id;
    r.item_title = b.catalog.at(b.catalog.position(*gen.item_id)).title;
  }
  if (req.want_topk) {
    const int k = *req.want_topk;
    const RecList list = decoder_->recommend_topk(context, std::max(opts_.beam_width, k), k);
    std::vector<TopkEntry> view;
    for (const auto& e : list.entries) {
      view.push_back({e.item_id, b.catalog.at(b.catalog.position(e.item_id)).title, e.score,
                      render_tokens(e.codes, b.sids.vocab)});
    }
    r.topk = std::move(view);
  }
  r.response_text = render_response(gen.text_tokens);
  if (req.debug) r.raw_tokens = tok.decode(gen.tokens);

  HistoryTurn user{Role::kUser, req.text, std::nullopt, user_model_text};
  HistoryTurn asst{Role::kAssistant, r.response_text, r.item_id, tok.decode(gen.text_tokens)};
  s->view.history.push_back(std::move(user));
  s->view.history.push_back(std::move(asst));
  return r;
}

SessionView ChatService::get_history(const std::string& session_id) const {
  const auto s = slot(session_id);
  std::lock_guard<std::mutex> lock(s->mu);
  return s->view;
}

std::vector<const ItemRecord*> ChatService::search_items(const std::string& query, std::size_t limit) const {
  const std::string q = lower(query);
  std::vector<const ItemRecord*> out;
  for (const auto& item : bundle().catalog.items()) {
    if (out.size() >= limit) break;
    if (lower(item.title).find(q) != std::string::npos) out.push_back(&item);
  }
  return out;
}

// ---- HTTP ----

namespace {

json result_json(const ChatTurnResult& r) {
  json j;
  j["mode"] = r.mode == Mode::kRec ? "REC" : "CHAT";
  if (r.item_id) j["item_id"] = *r.item_id;
  if (r.item_title) j["item_title"] = *r.item_title;
  if (r.topk) {
    json rows = json::array();
    for (const auto& e : *r.topk) rows.push_back({{"item_id", e.item_id}, {"title", e.title}, {"score", e.score}, {"sid", e.sid}});
    j["topk"] = std::move(rows);
  }
  j["response_text"] = r.response_text;
  if (r.raw_tokens) j["raw_tokens"] = *r.raw_tokens;
  return j;
}

json session_json(const SessionView& v) {
  json turns = json::array();
  for (const auto& h : v.history) {
    json t{{"role", role_name(h.role)}, {"text", h.text}};
    if (h.item_id) t["item_id"] = *h.item_id;
    turns.push_back(std::move(t));
  }
  return {{"session_id", v.session_id}, {"created_at", v.created_at}, {"history", std::move(turns)}};
}

int http_status(ErrorCode c) {
  switch (c) {
    case ErrorCode::kNotFound:
      return 404;
    case ErrorCode::kUnavailable:
      return 503;
    case ErrorCode::kIo:
    case ErrorCode::kNonFinite:
      return 500;
    default:
      return 400;
  }
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json; charset=utf-8");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
  send_json(res, status, {{"code", code}, {"message", message}});
}

template <typename F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const Error& e) {
    send_error(res, http_status(e.code()), error_code_name(e.code()), e.what());
  } catch (const json::exception& e) {
    send_error(res, 400, error_code_name(ErrorCode::kParse), e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, "internal", e.what());
  }
}

MessageRequest parse_message(const std::string& body) {
  const json j = json::parse(body);
  if (!j.is_object() || !j.contains("text") || !j["text"].is_string())
    throw Error(ErrorCode::kMissingField, "body needs a string field \"text\"");
  MessageRequest r;
  r.text = j["text"].get<std::string>();
  if (j.contains("mode_override") && !j["mode_override"].is_null()) {
    const std::string m = lower(j["mode_override"].get<std::string>());
    if (m == "rec") {
      r.mode_override = Mode::kRec;
    } else if (m == "chat") {
      r.mode_override = Mode::kChat;
    } else if (m != "auto") {
      throw Error(ErrorCode::kInvalidArgument, "mode_override must be rec, chat or auto");
    }
  }
  if (j.contains("item_override") && !j["item_override"].is_null()) r.item_override = j["item_override"].get<std::string>();
  if (j.contains("want_topk") && !j["want_topk"].is_null()) r.want_topk = j["want_topk"].get<int>();
  if (j.contains("debug")) r.debug = j["debug"].get<bool>();
  return r;
}

}  // namespace

struct HttpServer::Impl {
  ChatService* service;
  httplib::Server server;
};

HttpServer::HttpServer(ChatService& service, std::optional<std::string> static_dir) : impl_(std::make_unique<Impl>()) {
  impl_->service = &service;
  auto& svr = impl_->server;
  ChatService* svc = &service;

  svr.Get("/api/health", [svc](const httplib::Request&, httplib::Response& res) {
    if (!svc->ready()) return send_error(res, 503, error_code_name(ErrorCode::kUnavailable), "model not loaded");
    const auto& b = svc->bundle();
    send_json(res, 200, {{"status", "ok"}, {"items", b.catalog.size()}, {"vocab_size", b.tokenizer.size()}});
  });
  svr.Post("/api/sessions", [svc](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, {{"session_id", svc->create_session()}}); });
  });
  svr.Post(R"(/api/sessions/([^/]+)/messages)", [svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, result_json(svc->post_message(req.matches[1], parse_message(req.body)))); });
  });
  svr.Get(R"(/api/sessions/([^/]+))", [svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, session_json(svc->get_history(req.matches[1]))); });
  });
  svr.Get("/api/items", [svc](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      std::size_t limit = 20;
      if (req.has_param("limit")) limit = static_cast<std::size_t>(std::stoul(req.get_param_value("limit")));
      json items = json::array();
      for (const ItemRecord* it : svc->search_items(req.get_param_value("query"), limit)) {
        json row{{"item_id", it->item_id}, {"title", it->title}, {"genres", it->genres}};
        row["year"] = it->year ? json(*it->year) : json(nullptr);
        items.push_back(std::move(row));
      }
      send_json(res, 200, {{"items", std::move(items)}});
    });
  });
  if (static_dir && !svr.set_mount_point("/", *static_dir))
    throw Error(ErrorCode::kIo, "static directory \"" + *static_dir + "\" does not exist");
}

HttpServer::~HttpServer() = default;

int HttpServer::bind(const std::string& host, int port) {
  auto& svr = impl_->server;
  if (port == 0) {
    const int p = svr.bind_to_any_port(host);
    if (p < 0) throw Error(ErrorCode::kIo, "cannot bind " + host);
    return p;
  }
  if (!svr.bind_to_port(host, port)) throw Error(ErrorCode::kIo, "cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() { impl_->server.stop(); }

}  // namespace gencrs
