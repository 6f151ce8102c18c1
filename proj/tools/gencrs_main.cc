// gencrs: command-line driver for every pipeline stage.

#include <csignal>
#include <iostream>

#include <CLI11.hpp>

#include "gencrs/catalog.h"
#include "gencrs/decoder.h"
#include "gencrs/eval_protocol.h"
#include "gencrs/pipeline.h"
#include "gencrs/service.h"
#include "gencrs/synth.h"

using namespace gencrs;

namespace {

HttpServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

std::vector<int> read_context(const Tokenizer& tok, const std::string& path) {
  std::string text = path.empty() ? std::string("User: hello\nAssistant:") : read_file(path);
  while (!text.empty() && (text.back() == '\n' || text.back() == ' ')) text.pop_back();
  if (text.size() < 10 || text.compare(text.size() - 10, 10, "Assistant:") != 0) text += "\nAssistant:";
  return tok.encode(text);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generative conversational recommender toolkit"};
  app.require_subcommand(1);

  // embed
  std::string catalog, out, embeddings;
  int dim = kDefaultEmbeddingDim;
  std::uint64_t seed = 17;
  auto* embed = app.add_subcommand("embed", "Embed catalog metadata");
  embed->add_option("--catalog", catalog)->required();
  embed->add_option("--dim", dim);
  embed->add_option("--seed", seed);
  embed->add_option("--out", out)->required();

  // train-rqvae
  RqVaeConfig rq;
  auto* train_rq = app.add_subcommand("train-rqvae", "Train the residual quantizer");
  train_rq->add_option("--embeddings", embeddings)->required();
  train_rq->add_option("--levels", rq.num_levels);
  train_rq->add_option("--codebook-size", rq.codebook_size);
  train_rq->add_option("--latent-dim", rq.latent_dim);
  train_rq->add_option("--hidden-layers", rq.encoder_hidden_layers);
  train_rq->add_option("--beta", rq.commitment_beta);
  train_rq->add_option("--lr", rq.learning_rate);
  train_rq->add_option("--weight-decay", rq.weight_decay);
  train_rq->add_option("--batch-size", rq.batch_size);
  train_rq->add_option("--epochs", rq.epochs);
  train_rq->add_option("--seed", rq.seed);
  train_rq->add_option("--out", out)->required();

  // build-sids
  std::string rqvae_path;
  auto* build = app.add_subcommand("build-sids", "Assign unique semantic IDs");
  build->add_option("--rqvae", rqvae_path)->required();
  build->add_option("--embeddings", embeddings)->required();
  build->add_option("--catalog", catalog)->required();
  build->add_option("--out", out)->required();

  // prepare-corpus
  std::string dialogs, sids_path, format = "full", out_dir;
  PrepareOptions prep;
  auto* prepare = app.add_subcommand("prepare-corpus", "Build structured training samples");
  prepare->add_option("--dialogs", dialogs)->required();
  prepare->add_option("--sids", sids_path)->required();
  prepare->add_option("--catalog", catalog, "Defaults to the item ids of the SID table");
  prepare->add_option("--format", format)->check(CLI::IsMember({"full", "resp", "mode-resp", "sid-only"}));
  prepare->add_option("--split", prep.train_fraction);
  prepare->add_option("--seed", prep.seed);
  prepare->add_option("--out-dir", out_dir)->required();

  // train-lm
  LmConfig lm;
  std::string corpus_dir, policy = "all", optimizer = "adam";
  auto* train_lm_cmd = app.add_subcommand("train-lm", "Train the toy language model");
  train_lm_cmd->add_option("--corpus", corpus_dir)->required();
  train_lm_cmd->add_option("--d-model", lm.d_model);
  train_lm_cmd->add_option("--layers", lm.n_layers);
  train_lm_cmd->add_option("--heads", lm.n_heads);
  train_lm_cmd->add_option("--context-len", lm.context_len);
  train_lm_cmd->add_option("--lr", lm.learning_rate);
  train_lm_cmd->add_option("--weight-decay", lm.weight_decay);
  train_lm_cmd->add_option("--batch-size", lm.batch_size);
  train_lm_cmd->add_option("--steps", lm.steps);
  train_lm_cmd->add_option("--seed", lm.seed);
  train_lm_cmd->add_option("--embedding-policy", policy)->check(CLI::IsMember({"new-only", "all"}));
  train_lm_cmd->add_option("--optimizer", optimizer)->check(CLI::IsMember({"sgd", "adam"}));
  train_lm_cmd->add_option("--out", out)->required();

  // evaluate
  std::string model_path;
  EvalOptions ev;
  bool no_ppl_movie = false, no_inline = false;
  auto* evaluate = app.add_subcommand("evaluate", "Run the evaluation protocol on the test split");
  evaluate->add_option("--model", model_path)->required();
  evaluate->add_option("--sids", sids_path)->required();
  evaluate->add_option("--corpus", corpus_dir)->required();
  evaluate->add_option("--beam", ev.beam_width);
  evaluate->add_option("--runs", ev.runs);
  evaluate->add_option("--max-text-tokens", ev.max_text_tokens);
  evaluate->add_flag("--ppl-raw-items", no_ppl_movie, "Score item tokens in perplexity instead of <movie>");
  evaluate->add_flag("--no-inline-items", no_inline, "Forbid item segments inside generated text");
  evaluate->add_option("--out", out);

  // recommend
  std::string context_file;
  int beam = 50, k = 20;
  auto* recommend = app.add_subcommand("recommend", "Top-k items for a dialog context");
  recommend->add_option("--model", model_path)->required();
  recommend->add_option("--sids", sids_path)->required();
  recommend->add_option("--context-file", context_file);
  recommend->add_option("--beam", beam);
  recommend->add_option("--k", k);

  // generate
  std::string mode = "auto", item;
  int max_text = 48;
  bool inline_items = false, raw = false;
  auto* generate = app.add_subcommand("generate", "Generate one assistant response");
  generate->add_option("--model", model_path)->required();
  generate->add_option("--sids", sids_path)->required();
  generate->add_option("--context-file", context_file);
  generate->add_option("--mode", mode)->check(CLI::IsMember({"rec", "chat", "auto"}));
  generate->add_option("--item", item);
  generate->add_option("--max-text-tokens", max_text);
  generate->add_flag("--inline-items", inline_items);
  generate->add_flag("--raw", raw, "Print the structural tokens too");

  // serve
  std::string static_dir, host = "127.0.0.1";
  int port = 8080;
  ServiceOptions sopts;
  auto* serve = app.add_subcommand("serve", "Serve the chat HTTP API");
  serve->add_option("--model", model_path)->required();
  serve->add_option("--sids", sids_path)->required();
  serve->add_option("--catalog", catalog)->required();
  serve->add_option("--port", port);
  serve->add_option("--host", host);
  serve->add_option("--static", static_dir);
  serve->add_option("--beam", sopts.beam_width);

  // pipeline
  std::string config_path;
  bool force = false;
  auto* pipeline = app.add_subcommand("pipeline", "Run every stage from a config file");
  pipeline->add_option("--config", config_path)->required();
  pipeline->add_flag("--force", force, "Rerun stages that are up to date");

  // synth
  SyntheticSpec spec;
  auto* synth = app.add_subcommand("synth", "Write a synthetic catalog and dialog corpus");
  synth->add_option("--items", spec.n_items);
  synth->add_option("--genres", spec.n_genres);
  synth->add_option("--per-item", spec.dialogs_per_item);
  synth->add_option("--seed", spec.seed);
  synth->add_option("--out-dir", out_dir)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*embed) {
      stage_embed(catalog, dim, seed, out);
    } else if (*train_rq) {
      const auto log = stage_train_rqvae(embeddings, rq, out);
      std::cout << "loss " << log.initial_loss << " -> " << (log.epoch_loss.empty() ? log.initial_loss : log.epoch_loss.back())
                << "\n";
    } else if (*build) {
      const auto changed = stage_build_sids(rqvae_path, embeddings, catalog, out);
      std::cout << "collision resolution changed " << changed << " item(s)\n";
    } else if (*prepare) {
      prep.format = parse_format(format);
      for (const auto& w : stage_prepare_corpus(dialogs, catalog, sids_path, prep, out_dir)) std::cerr << "warning: " << w << "\n";
    } else if (*train_lm_cmd) {
      lm.embedding_policy = parse_policy(policy);
      lm.optimizer = parse_optimizer(optimizer);
      const auto log = stage_train_lm(corpus_dir, lm, out);
      std::cout << "loss " << log.initial_loss << " -> " << log.final_loss << "\n";
    } else if (*evaluate) {
      ev.ppl_movie = !no_ppl_movie;
      ev.inline_items = !no_inline;
      const auto report = stage_evaluate(model_path, sids_path, corpus_dir, ev, out);
      std::cout << report.to_json();
    } else if (*recommend || *generate) {
      const LoadedLm lm_loaded = load_lm(model_path);
      const SidTable sids = load_sid_table(sids_path);
      const StructuredDecoder dec(lm_loaded.model, lm_loaded.tokenizer, sids);
      const auto ctx = read_context(lm_loaded.tokenizer, context_file);
      if (*recommend) {
        const RecList list = dec.recommend_topk(ctx, beam, k);
        for (const auto& w : list.warnings) std::cerr << "warning: " << w << "\n";
        for (std::size_t i = 0; i < list.entries.size(); ++i) {
          const auto& e = list.entries[i];
          std::cout << i + 1 << "\t" << e.item_id << "\t" << e.score << "\t" << render_tokens(e.codes, sids.vocab) << "\n";
        }
      } else {
        GenerateOptions g;
        if (mode == "rec") g.mode_override = Mode::kRec;
        if (mode == "chat") g.mode_override = Mode::kChat;
        if (!item.empty()) g.item_override = item;
        g.max_text_tokens = max_text;
        g.inline_items = inline_items;
        const Generation gen = dec.generate(ctx, g);
        std::cout << "mode\t" << mode_name(gen.mode) << "\n";
        if (gen.item_id) std::cout << "item\t" << *gen.item_id << "\n";
        std::cout << "text\t" << lm_loaded.tokenizer.decode(gen.text_tokens) << "\n";
        if (raw) std::cout << "raw\t" << lm_loaded.tokenizer.decode(gen.tokens) << "\n";
      }
    } else if (*serve) {
      ChatService service(ServingBundle::load(model_path, sids_path, catalog), sopts);
      HttpServer server(service, static_dir.empty() ? std::nullopt : std::optional<std::string>(static_dir));
      const int bound = server.bind(host, port);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cerr << "listening on http://" << host << ":" << bound << "\n";
      server.listen();
      g_server = nullptr;
    } else if (*pipeline) {
      const auto result = run_pipeline(load_pipeline_config(config_path), force,
                                       [](const std::string& m) { std::cerr << m << "\n"; });
      for (const auto& [name, hash] : result.hashes) std::cout << name << "\t" << hash << "\t" << result.artifacts.at(name) << "\n";
    } else if (*synth) {
      write_synthetic(make_synthetic(spec), out_dir);
    }
  } catch (const Error& e) {
    std::cerr << "error (" << error_code_name(e.code()) << "): " << e.what() << "\n";
    return 1;
  }
  return 0;
}
