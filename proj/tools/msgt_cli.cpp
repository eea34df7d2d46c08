// msgt: pool building, training, evaluation, ablation, prediction and the
// HTTP service, all over the msgt library.
#include <csignal>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "msgt/ablation.hpp"
#include "msgt/checkpoint.hpp"
#include "msgt/concept_pool.hpp"
#include "msgt/embedding.hpp"
#include "msgt/fixture.hpp"
#include "msgt/graphs.hpp"
#include "msgt/service.hpp"
#include "msgt/trainer.hpp"

using namespace msgt;
using nlohmann::json;

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path);
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

io::Dataset load_data(const std::string& manifest, bool uncertain_as_negative) {
  io::ManifestOptions options;
  options.uncertain_as_negative = uncertain_as_negative;
  return io::load_dataset(manifest, options);
}

service::HttpService* g_service = nullptr;

void on_signal(int) {
  if (g_service != nullptr) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Concept-bottleneck graph transformer with mixture-of-experts reasoning"};
  app.require_subcommand(1);

  // pool build
  auto* pool_cmd = app.add_subcommand("pool", "Concept pool tools");
  pool_cmd->require_subcommand(1);
  auto* build = pool_cmd->add_subcommand("build", "Dedup candidates, score relevance, keep the top K");
  std::string candidates, candidate_emb, labels_emb, pool_out;
  double tau_c = 0.1, tau_r = 0.85;
  std::size_t k = 0;
  build->add_option("--candidates", candidates, "Candidate phrases, one per line")->required()->check(CLI::ExistingFile);
  build->add_option("--candidate-emb", candidate_emb, "Embedding file covering every candidate")->required();
  build->add_option("--labels-emb", labels_emb, "Embedding file of label names")->required();
  build->add_option("--tau-c", tau_c, "Cosine above which candidates merge")->capture_default_str();
  build->add_option("--tau-r", tau_r, "Mean similarity needed for nonzero relevance")->capture_default_str();
  build->add_option("--k", k, "Pool size")->required();
  build->add_option("--out", pool_out, "Output pool.json")->required();

  // embed
  auto* embed = app.add_subcommand("embed", "Pseudo-embed phrases into an embedding file");
  std::string phrases, embed_out;
  std::size_t embed_dim = 64;
  std::uint64_t embed_seed = 0;
  embed->add_option("--phrases", phrases, "UTF-8 text, one phrase per line")->required()->check(CLI::ExistingFile);
  embed->add_option("--dim", embed_dim)->capture_default_str();
  embed->add_option("--seed", embed_seed)->capture_default_str();
  embed->add_option("--out", embed_out)->required();

  // fixture
  auto* fix = app.add_subcommand("fixture", "Write the synthetic separable fixture");
  std::string fixture_out;
  fixture::FixtureSpec spec;
  fix->add_option("--out", fixture_out, "Output directory")->required();
  fix->add_option("--seed", spec.seed)->capture_default_str();
  fix->add_option("--dim", spec.dim)->capture_default_str();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint");
  std::string config_path, manifest, pool_path, ckpt_out, losses_out;
  std::optional<std::size_t> epochs;
  train_cmd->add_option("--config", config_path, "Training config JSON")->required();
  train_cmd->add_option("--manifest", manifest)->required();
  train_cmd->add_option("--pool", pool_path)->required();
  train_cmd->add_option("--out", ckpt_out, "Checkpoint path")->required();
  train_cmd->add_option("--epochs", epochs, "Override the config's epoch count");
  train_cmd->add_option("--losses", losses_out, "Write per-epoch and per-batch losses as JSON");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  std::string ckpt_path, split = "test", report_out;
  std::size_t threads = 0;
  eval->add_option("--ckpt", ckpt_path)->required();
  eval->add_option("--manifest", manifest)->required();
  eval->add_option("--split", split)->capture_default_str();
  eval->add_option("--report", report_out, "Report JSON path (stdout when omitted)");
  eval->add_option("--threads", threads, "Worker threads, 0 = all cores")->capture_default_str();

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Train and evaluate over swept config values, emit CSV");
  std::vector<std::string> sweeps;
  std::string csv_out, ablate_split = "train";
  ablate->add_option("--config", config_path)->required();
  ablate->add_option("--manifest", manifest)->required();
  ablate->add_option("--pool", pool_path)->required();
  ablate->add_option("--sweep", sweeps, "key=v1,v2,... (repeatable)")->required();
  ablate->add_option("--split", ablate_split, "Split to evaluate")->capture_default_str();
  ablate->add_option("--epochs", epochs, "Override the config's epoch count");
  ablate->add_option("--out", csv_out, "CSV path (stdout when omitted)");

  // predict / intervene
  std::string sample_id, interventions, graph_out;
  auto* predict = app.add_subcommand("predict", "Print the prediction payload for one sample");
  predict->add_option("--ckpt", ckpt_path)->required();
  predict->add_option("--manifest", manifest)->required();
  predict->add_option("--sample", sample_id, "Sample id (taken from the interventions file when omitted)");
  predict->add_option("--interventions", interventions, "Intervention JSON {sample_id, clamps, hint_text?}");
  predict->add_option("--dump-graph", graph_out, "Write the sample's concept and QA graphs as JSON");
  auto* intervene = app.add_subcommand("intervene", "Same as predict with a required interventions file");
  intervene->add_option("--ckpt", ckpt_path)->required();
  intervene->add_option("--manifest", manifest)->required();
  intervene->add_option("--file", interventions)->required();
  intervene->add_option("--dump-graph", graph_out);

  // serve
  auto* serve = app.add_subcommand("serve", "Serve /api/v1 over one checkpoint");
  std::string host = "127.0.0.1", cors = "*";
  int port = 8080;
  serve->add_option("--ckpt", ckpt_path)->required();
  serve->add_option("--manifest", manifest)->required();
  serve->add_option("--pool", pool_path, "Adds relevance scores to /concepts");
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--port", port)->capture_default_str();
  serve->add_option("--cors-origin", cors)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (build->parsed()) {
      const auto names = io::read_phrase_file(candidates);
      const auto cand = io::load_embedding_file(candidate_emb);
      const auto labels = io::load_embedding_file(labels_emb).unit_normalized();
      std::vector<std::string> unknown;
      Tensor rows = Tensor::matrix(names.size(), cand.dim());
      for (std::size_t i = 0; i < names.size(); ++i) {
        auto idx = cand.find(names[i]);
        if (!idx) {
          unknown.push_back(names[i]);
          continue;
        }
        std::copy_n(cand.row(*idx).begin(), cand.dim(), rows.row_span(i).begin());
      }
      if (!unknown.empty()) throw std::runtime_error("candidate '" + unknown.front() + "' has no embedding");
      const auto table = io::EmbeddingTable(names, std::move(rows), false).unit_normalized();
      const auto pool = pool::build_pool(table, labels, tau_c, tau_r, k);
      for (const auto& w : pool.warnings) std::cerr << "warning: " << w << '\n';
      pool::save_pool(pool, pool_out);
      std::cerr << "pool: " << pool.size() << " concepts -> " << pool_out << '\n';
    } else if (embed->parsed()) {
      const auto names = io::read_phrase_file(phrases);
      io::save_embedding_file(io::pseudo_embed_table(names, embed_dim, embed_seed), embed_out);
    } else if (fix->parsed()) {
      fixture::write_fixture(fixture::make_separable(spec), fixture_out);
    } else if (train_cmd->parsed()) {
      auto cfg = train::config_from_json(read_json(config_path));
      if (epochs) cfg.epochs = *epochs;
      const auto data = load_data(manifest, cfg.uncertain_as_negative);
      const auto pool = pool::load_pool(pool_path);
      auto result = train::train(cfg, data, pool);
      const auto version = ckpt::save(result.model, train::config_to_json(cfg), ckpt_out,
                                      json{{"epoch_losses", result.epoch_losses}});
      if (!losses_out.empty())
        write_text(losses_out, json{{"epoch_losses", result.epoch_losses}, {"batch_losses", result.batch_losses}}.dump(2));
      std::cerr << "trained " << cfg.epochs << " epochs, final loss "
                << (result.epoch_losses.empty() ? 0.0 : result.epoch_losses.back()) << ", model " << version << '\n';
    } else if (eval->parsed()) {
      auto ck = ckpt::load(ckpt_path);
      const auto data = load_data(manifest, ck.train_config.value("uncertain_as_negative", true));
      auto ev = train::evaluate(ck.model, data, split, threads);
      ev.report.epoch_losses = ck.history.value("epoch_losses", std::vector<double>{});
      json report = metrics::report_to_json(ev.report);
      report["split"] = split;
      report["model_version"] = ck.version;
      if (report_out.empty())
        std::cout << report.dump(2) << '\n';
      else
        write_text(report_out, report.dump(2) + "\n");
    } else if (ablate->parsed()) {
      auto cfg = train::config_from_json(read_json(config_path));
      if (epochs) cfg.epochs = *epochs;
      const auto data = load_data(manifest, cfg.uncertain_as_negative);
      const auto pool = pool::load_pool(pool_path);
      std::vector<train::SweepAxis> axes;
      for (const auto& s : sweeps) axes.push_back(train::parse_sweep(s));
      const auto csv = train::ablation_csv(train::run_ablation(cfg, data, pool, axes, ablate_split));
      if (csv_out.empty())
        std::cout << csv;
      else
        write_text(csv_out, csv);
    } else if (predict->parsed() || intervene->parsed()) {
      const auto ctx = service::load_context(ckpt_path, manifest);
      json body = interventions.empty() ? json::object() : read_json(interventions);
      if (!sample_id.empty()) body["sample_id"] = sample_id;
      if (!body.contains("sample_id")) throw std::runtime_error("no sample id: pass --sample or an interventions file");
      auto [status, payload] = service::handle_predict(ctx, body.dump(), !interventions.empty());
      if (status != 200) {
        std::cerr << payload.dump() << '\n';
        return 1;
      }
      std::cout << payload.dump(2) << '\n';
      if (!graph_out.empty()) {
        const auto req = service::parse_request(body, ctx.model.concept_names());
        model::ForwardOptions options{req.clamps, req.hint_text};
        if (interventions.empty()) options = {};
        Tape tape;
        const auto& sample = ctx.data.manifest.sample(body.at("sample_id").get<std::string>());
        auto fwd = ctx.model.forward(tape, model::sample_input(ctx.data, sample), options);
        json dump{{"ac", graphs::graph_to_json(fwd.ac_graph)}, {"reason", graphs::graph_to_json(fwd.reasoning.graph)}};
        if (fwd.aq_graph) dump["aq"] = graphs::graph_to_json(*fwd.aq_graph);
        write_text(graph_out, dump.dump(2) + "\n");
      }
    } else if (serve->parsed()) {
      auto ctx = std::make_shared<service::Context>(
          service::load_context(ckpt_path, manifest,
                                pool_path.empty() ? std::nullopt : std::optional<std::filesystem::path>(pool_path)));
      service::HttpService http(ctx, cors);
      g_service = &http;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cerr << "serving model " << ctx->model_version << " on http://" << host << ':' << port << "/api/v1\n";
      http.run(host, port);
      g_service = nullptr;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
