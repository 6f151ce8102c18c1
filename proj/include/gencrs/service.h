#pragma once

#include <chrono>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "gencrs/catalog.h"
#include "gencrs/corpus.h"
#include "gencrs/decoder.h"
#include "gencrs/sid.h"
#include "gencrs/toylm.h"

namespace gencrs {

// Everything the service reads; immutable once loaded.
struct ServingBundle {
  LmModel model;
  Tokenizer tokenizer;
  SidTable sids;
  Catalog catalog;

  // Loads the checkpoint, SID table and catalog and checks they agree.
  static std::shared_ptr<const ServingBundle> load(const std::string& model_path, const std::string& sids_path,
                                                   const std::string& catalog_path);
};

struct HistoryTurn {
  Role role = Role::kUser;
  std::string text;  // as shown to users
  std::optional<std::string> item_id;
  std::string model_text;  // as fed back to the model, item segments as tokens
};

struct SessionView {
  std::string session_id;
  std::string created_at;
  std::vector<HistoryTurn> history;
};

struct MessageRequest {
  std::string text;
  std::optional<Mode> mode_override;
  std::optional<std::string> item_override;
  std::optional<int> want_topk;
  bool debug = false;
};

struct TopkEntry {
  std::string item_id;
  std::string title;
  double score = 0.0;
  std::string sid;
};

struct ChatTurnResult {
  Mode mode = Mode::kChat;
  std::optional<std::string> item_id;
  std::optional<std::string> item_title;
  std::optional<std::vector<TopkEntry>> topk;
  std::string response_text;
  std::optional<std::string> raw_tokens;  // debug only
};

struct ServiceOptions {
  int beam_width = 50;
  int max_text_tokens = 48;
  bool inline_items = true;
};

class ChatService {
 public:
  // A null bundle yields a service that answers kUnavailable.
  explicit ChatService(std::shared_ptr<const ServingBundle> bundle, ServiceOptions opts = {});

  bool ready() const { return bundle_ != nullptr; }
  const ServingBundle& bundle() const;

  std::string create_session();
  ChatTurnResult post_message(const std::string& session_id, const MessageRequest& req);
  SessionView get_history(const std::string& session_id) const;
  // Case-insensitive title substring search in catalog order.
  std::vector<const ItemRecord*> search_items(const std::string& query, std::size_t limit = 20) const;

  // "«title» (item_id)" for every item segment, other tokens decoded as text.
  std::string render_response(std::span<const int> tokens) const;

 private:
  struct Slot {
    std::mutex mu;
    SessionView view;
  };
  std::shared_ptr<Slot> slot(const std::string& session_id) const;

  std::shared_ptr<const ServingBundle> bundle_;
  std::unique_ptr<StructuredDecoder> decoder_;
  ServiceOptions opts_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, std::shared_ptr<Slot>> sessions_;
  Rng id_rng_;
};

// HTTP facade. Routes: POST /api/sessions, POST /api/sessions/{id}/messages,
// GET /api/sessions/{id}, GET /api/items?query=, GET /api/health.
class HttpServer {
 public:
  HttpServer(ChatService& service, std::optional<std::string> static_dir = std::nullopt);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace gencrs
