#include "fits/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fits/checkpoint.hpp"
#include "fits/config.hpp"
#include "fits/corpus.hpp"
#include "fits/diagnostics.hpp"
#include "fits/numerics.hpp"
#include "fits/rng.hpp"
#include "fits/trainer.hpp"

namespace fits::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;  // key=value overrides
  std::string out_dir;
};

void add_common(CLI::App* sub, CommonArgs& a, bool config_required = true) {
  auto* c = sub->add_option("--config", a.config_path, "config file");
  if (config_required) c->required();
  sub->add_option("--set", a.sets, "override a config key (key=value)");
  sub->add_option("--out", a.out_dir, "output directory")->required();
}

// one writer per output directory, marked by a sentinel file
struct DirLock {
  fs::path path;
  bool owned = false;

  explicit DirLock(const fs::path& dir) : path(dir / ".fits.lock") {
    fs::create_directories(dir);
    std::FILE* f = std::fopen(path.string().c_str(), "wx");
    if (!f)
      throw ConfigError("output directory is locked (remove " + path.string() +
                        " if no other run is active)");
    std::fclose(f);
    owned = true;
  }
  ~DirLock() {
    if (owned) {
      std::error_code ec;
      fs::remove(path, ec);
    }
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;
};

config::KeyValues resolve_config(const CommonArgs& a) {
  config::KeyValues kv;
  if (!a.config_path.empty()) kv = config::parse_file(a.config_path);
  std::vector<std::pair<std::string, std::string>> overrides;
  for (const auto& s : a.sets) {
    std::size_t eq = s.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("--set expects key=value, got '" + s + "'");
    overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  config::apply_overrides(kv, overrides);
  if (const char* env = std::getenv("FITS_SEED")) kv["seed"] = env;
  return kv;
}

void write_snapshot(const config::KeyValues& kv, const fs::path& out_dir) {
  std::ofstream f(out_dir / "config.snapshot");
  f << config::render(kv);
}

void write_metrics(const std::vector<trainer::EpochMetrics>& metrics,
                   const fs::path& path) {
  std::ofstream f(path);
  for (const auto& m : metrics) {
    json j{{"epoch", m.epoch},         {"loss", m.loss},
           {"loss_ka", m.loss_ka},     {"loss_mlm", m.loss_mlm},
           {"loss_sup", m.loss_sup},   {"loss_ksd", m.loss_ksd},
           {"loss_kbr", m.loss_kbr},   {"ka_skipped", m.ka_skipped},
           {"dev_acc", m.dev_acc}};
    f << j.dump() << "\n";
  }
}

struct Pipeline {
  kg::KnowledgeGraph graph;
  corpus::Dataset train_ds, dev_ds, test_ds;
  corpus::Vocab vocab;
  std::vector<trainer::PreparedExample> train, dev, test;
};

Pipeline load_pipeline(const config::TrainConfig& cfg) {
  if (cfg.data_kg.empty() || cfg.data_train.empty())
    throw ConfigError("data.kg and data.train are required");
  Pipeline p;
  p.graph = kg::KnowledgeGraph::from_tsv(cfg.data_kg);
  p.train_ds = corpus::read_jsonl(cfg.data_train);
  if (!cfg.data_dev.empty()) p.dev_ds = corpus::read_jsonl(cfg.data_dev);
  if (!cfg.data_test.empty()) p.test_ds = corpus::read_jsonl(cfg.data_test);
  p.vocab = trainer::build_vocab_for(p.train_ds);
  p.train = trainer::prepare_examples(p.train_ds, p.graph, p.vocab);
  p.dev = trainer::prepare_examples(p.dev_ds, p.graph, p.vocab);
  p.test = trainer::prepare_examples(p.test_ds, p.graph, p.vocab);
  return p;
}

encoder::EncoderConfig wanted_encoder_config(const config::TrainConfig& cfg,
                                             const Pipeline& p) {
  return trainer::make_encoder_config(cfg, p.vocab.size(),
                                      p.graph.entity_count(),
                                      p.graph.relation_count());
}

encoder::ModelState fresh_model(const config::TrainConfig& cfg,
                                const Pipeline& p) {
  return encoder::ModelState::init(wanted_encoder_config(cfg, p), cfg.seed);
}

bool same_encoder_config(const encoder::EncoderConfig& a,
                         const encoder::EncoderConfig& b) {
  return a.d_l == b.d_l && a.d_g == b.d_g && a.n_unimodal == b.n_unimodal &&
         a.m_fusion == b.m_fusion && a.text_heads == b.text_heads &&
         a.gat_heads == b.gat_heads && a.max_seq == b.max_seq &&
         a.vocab_size == b.vocab_size &&
         a.relation_count == b.relation_count &&
         a.entity_count == b.entity_count && a.ff_width == b.ff_width;
}

// Loads checkpoint.in when given, otherwise a fresh seeded model.
checkpoint::Checkpoint incoming_model(const config::TrainConfig& cfg,
                                      const Pipeline& p) {
  checkpoint::Checkpoint ck;
  if (!cfg.checkpoint_in.empty()) {
    ck = checkpoint::load(cfg.checkpoint_in);
    if (!same_encoder_config(ck.model.cfg, wanted_encoder_config(cfg, p)))
      throw ConfigError("checkpoint " + cfg.checkpoint_in +
                        " was trained with a different model/data shape");
  } else {
    ck.stage = checkpoint::Stage::kInit;
    ck.model = fresh_model(cfg, p);
    ck.optimizer = Adam(cfg.optim);
  }
  return ck;
}

// deterministic eval-time injection, mirroring the training-time wiring
std::vector<trainer::PreparedExample> injected_copy(
    const std::vector<trainer::PreparedExample>& split,
    const kg::KnowledgeGraph& graph, const config::TrainConfig& cfg) {
  auto out = split;
  for (auto& ex : out)
    for (std::size_t c = 0; c < ex.candidates.size(); ++c)
      ex.candidates[c].subgraph = kg::inject_irrelevant_relaxed(
          ex.candidates[c].subgraph, graph, cfg.hops, cfg.k_irr,
          derive_seed(cfg.seed,
                      static_cast<std::uint64_t>(ex.id) * 16 + c + 1));
  return out;
}

int cmd_gen_data(const CommonArgs& a) {
  auto kv = resolve_config(a);
  auto gc = config::parse_gen_config(kv);
  DirLock lock(a.out_dir);
  auto data = corpus::generate_synthetic_dataset(gc.gen);
  fs::path out(a.out_dir);
  data.graph.to_tsv((out / "kg.tsv").string());
  corpus::write_jsonl(data.train, (out / "train.jsonl").string());
  corpus::write_jsonl(data.dev, (out / "dev.jsonl").string());
  corpus::write_jsonl(data.test, (out / "test.jsonl").string());
  write_snapshot(kv, out);
  std::cout << "wrote " << data.train.size() << "/" << data.dev.size() << "/"
            << data.test.size() << " train/dev/test examples to " << a.out_dir
            << "\n";
  return 0;
}

int cmd_train(const CommonArgs& a, config::Stage stage) {
  auto kv = resolve_config(a);
  kv["stage"] = stage == config::Stage::kPost ? "post" : "finetune";
  auto cfg = config::parse_train_config(kv);
  DirLock lock(a.out_dir);
  fs::path out(a.out_dir);
  auto p = load_pipeline(cfg);
  auto ck = incoming_model(cfg, p);

  trainer::TrainResult result;
  if (stage == config::Stage::kPost) {
    if (ck.stage == checkpoint::Stage::kFinetune)
      throw ConfigError("cannot post-train from a fine-tuned checkpoint");
    result = trainer::post_train(ck.model, p.train, cfg);
    ck.stage = checkpoint::Stage::kPost;
  } else {
    result = trainer::fine_tune(ck.model, p.train, p.dev, p.graph, cfg);
    ck.stage = checkpoint::Stage::kFinetune;
  }
  ck.optimizer = result.optimizer;
  ck.config_hash = checkpoint::fnv1a64(config::render(kv));

  std::string ckpt_path =
      cfg.checkpoint_out.empty()
          ? (out / (stage == config::Stage::kPost ? "post.ckpt"
                                                  : "finetune.ckpt"))
                .string()
          : cfg.checkpoint_out;
  checkpoint::save(ck, ckpt_path);
  write_metrics(result.metrics, out / "metrics.jsonl");
  write_snapshot(kv, out);

  const auto& last = result.metrics.back();
  std::cout << "epochs " << result.metrics.size() << ", final loss "
            << last.loss;
  if (last.dev_acc >= 0.0) std::cout << ", dev acc " << last.dev_acc;
  std::cout << ", checkpoint " << ckpt_path << "\n";
  return 0;
}

int cmd_eval(const CommonArgs& a) {
  auto kv = resolve_config(a);
  auto cfg = config::parse_train_config(kv);
  DirLock lock(a.out_dir);
  auto p = load_pipeline(cfg);
  if (p.test.empty()) throw ConfigError("data.test is required for eval");
  auto ck = incoming_model(cfg, p);

  const auto& split = cfg.eval_inject && cfg.k_irr > 0
                          ? injected_copy(p.test, p.graph, cfg)
                          : p.test;
  double acc = trainer::evaluate_accuracy(ck.model, split);
  json j{{"accuracy", acc},
         {"examples", split.size()},
         {"stage", checkpoint::stage_name(ck.stage)},
         {"injected", cfg.eval_inject && cfg.k_irr > 0}};
  std::ofstream(fs::path(a.out_dir) / "accuracy.json") << j.dump(2) << "\n";
  write_snapshot(kv, a.out_dir);
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_transform(const CommonArgs& a, const std::string& op,
                  const std::string& in_path) {
  config::KeyValues kv;
  if (!a.config_path.empty()) kv = config::parse_file(a.config_path);
  kv["transform.op"] = op;
  kv["transform.in"] = in_path;
  DirLock lock(a.out_dir);
  auto ds = corpus::read_jsonl(in_path);
  corpus::Dataset transformed =
      op == "A" ? corpus::apply_operation_a(ds) : corpus::apply_operation_b(ds);
  fs::path out(a.out_dir);
  corpus::write_jsonl(transformed, (out / "transformed.jsonl").string());
  write_snapshot(kv, out);
  std::cout << "wrote " << transformed.size() << " examples to "
            << (out / "transformed.jsonl").string() << "\n";
  return 0;
}

int cmd_diagnose(const CommonArgs& a) {
  auto kv = resolve_config(a);
  auto cfg = config::parse_train_config(kv);
  DirLock lock(a.out_dir);
  fs::path out(a.out_dir);
  auto p = load_pipeline(cfg);
  auto ck = incoming_model(cfg, p);

  const auto& sample = !p.dev.empty() ? p.dev
                       : !p.test.empty() ? p.test
                                         : p.train;

  auto rep = diagnostics::entity_alignment_correlation(ck.model, sample,
                                                       cfg.seed);
  json aj{{"same_mean", rep.same_mean},
          {"same_stddev", rep.same_stddev},
          {"mismatched_mean", rep.mismatched_mean},
          {"mismatched_stddev", rep.mismatched_stddev},
          {"samples", rep.sample_count},
          {"common_width", rep.common_width}};
  std::ofstream(out / "alignment.json") << aj.dump(2) << "\n";

  auto pca = diagnostics::modality_pca(ck.model, sample);
  diagnostics::write_pca_tsv(pca, (out / "pca.tsv").string());
  std::ofstream(out / "pca_summary.json")
      << json{{"centroid_gap", pca.centroid_gap},
              {"points", pca.points.size()}}
             .dump(2)
      << "\n";

  auto att = diagnostics::attention_report(ck.model, sample.front(), p.graph);
  json cj = json::array();
  for (const auto& cand : att.per_candidate) {
    json entries = json::array();
    for (const auto& e : cand)
      entries.push_back({{"surface", e.surface}, {"weight", e.weight}});
    cj.push_back(entries);
  }
  std::ofstream(out / "attention.json")
      << json{{"example", sample.front().id}, {"candidates", cj}}.dump(2)
      << "\n";

  write_snapshot(kv, out);
  std::cout << "same-entity r " << rep.same_mean << ", mismatched r "
            << rep.mismatched_mean << ", centroid gap " << pca.centroid_gap
            << "\n";
  return 0;
}

int cmd_ablate(const CommonArgs& a) {
  auto kv = resolve_config(a);
  auto cfg = config::parse_train_config(kv);
  DirLock lock(a.out_dir);
  fs::path out(a.out_dir);
  auto p = load_pipeline(cfg);
  const auto& eval_split = !p.test.empty() ? p.test : p.dev;
  if (eval_split.empty())
    throw ConfigError("ablate needs data.test or data.dev");

  auto base = fresh_model(cfg, p);

  // shared post-trained starting point for the four post arms
  auto posted = base;
  {
    auto pcfg = cfg;
    pcfg.stage = config::Stage::kPost;
    pcfg.loss_mlm = pcfg.loss_ka = true;
    if (cfg.post_epochs > 0) pcfg.epochs = cfg.post_epochs;
    trainer::post_train(posted, p.train, pcfg);
  }

  struct Arm {
    const char* name;
    bool ksd, kbr;
  };
  const Arm arms[] = {{"sup", false, false},
                      {"sup+ksd", true, false},
                      {"sup+kbr", false, true},
                      {"sup+ksd+kbr", true, true}};

  json table = json::array();
  for (bool post : {false, true}) {
    for (const Arm& arm : arms) {
      auto model = post ? posted : base;
      auto fcfg = cfg;
      fcfg.stage = config::Stage::kFinetune;
      fcfg.loss_ksd = arm.ksd;
      fcfg.loss_kbr = arm.kbr;
      auto result = trainer::fine_tune(model, p.train, p.dev, p.graph, fcfg);
      double acc = trainer::evaluate_accuracy(model, eval_split);
      table.push_back({{"arm", arm.name},
                       {"post", post},
                       {"test_acc", acc},
                       {"final_loss", result.metrics.back().loss}});
      std::cout << (post ? "post  " : "nopost") << " " << arm.name << " acc "
                << acc << "\n";
    }
  }
  std::ofstream(out / "ablation.json") << table.dump(2) << "\n";
  write_snapshot(kv, out);
  return 0;
}

int cmd_grad_check(const CommonArgs& a, double tol) {
  auto kv = resolve_config(a);
  auto cfg = config::parse_train_config(kv);
  DirLock lock(a.out_dir);
  auto p = load_pipeline(cfg);
  if (p.train.empty()) throw ConfigError("grad-check needs data.train");
  const auto& ex = p.train.front();

  auto run_check = [&](config::Stage stage) {
    auto scfg = cfg;
    scfg.stage = stage;
    auto model = fresh_model(scfg, p);
    std::uint64_t seed = derive_seed(scfg.seed, 0x47c4);
    bool post = stage == config::Stage::kPost;
    bool inject = !post && scfg.loss_ksd && scfg.k_irr > 0;

    auto loss_of = [&](const ParamStore&) {
      Tape t(true);
      Var l = post ? trainer::example_post_loss(t, model, ex, scfg, seed)
                   : trainer::example_finetune_loss(
                         t, model, ex, inject ? &p.graph : nullptr, scfg,
                         seed);
      if (!l.valid()) throw NothingToScore("loss has no active terms");
      return t.scalar(l);
    };

    model.params.zero_grad();
    {
      Tape t;
      Var l = post ? trainer::example_post_loss(t, model, ex, scfg, seed)
                   : trainer::example_finetune_loss(
                         t, model, ex, inject ? &p.graph : nullptr, scfg,
                         seed);
      if (!l.valid()) throw NothingToScore("loss has no active terms");
      t.backward(l);
    }
    auto fd = finite_diff_grad(loss_of, model.params);
    return max_rel_error(model.params, fd);
  };

  double post_err = run_check(config::Stage::kPost);
  double fine_err = run_check(config::Stage::kFinetune);

  json j{{"max_rel_error_post", post_err},
         {"max_rel_error_finetune", fine_err},
         {"tolerance", tol}};
  std::ofstream(fs::path(a.out_dir) / "grad_check.json") << j.dump(2) << "\n";
  write_snapshot(kv, a.out_dir);
  std::cout << j.dump() << "\n";
  if (post_err >= tol || fine_err >= tol) {
    std::cerr << json{{"error", "GradCheckFailed"},
                      {"message", "max relative error exceeds tolerance"}}
                     .dump()
              << "\n";
    return 2;
  }
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"two-stage knowledge-fusion trainer for multiple-choice QA"};
  app.require_subcommand(1);

  CommonArgs gen_a, post_a, fine_a, eval_a, trans_a, diag_a, abl_a, grad_a;
  std::string op, in_path;
  double tol = 1e-4;

  add_common(app.add_subcommand("gen-data", "generate a synthetic benchmark"),
             gen_a);
  add_common(app.add_subcommand("post-train", "stage 1: MLM + KA"), post_a);
  add_common(app.add_subcommand("fine-tune", "stage 2: QA + KSD + KBR"),
             fine_a);
  add_common(app.add_subcommand("eval", "accuracy on the test split"), eval_a);

  auto* trans =
      app.add_subcommand("transform", "rewrite a dataset (operation A or B)");
  add_common(trans, trans_a, /*config_required=*/false);
  trans->add_option("--op", op, "A (test-reason) or B (test-param)")
      ->required()
      ->check(CLI::IsMember({"A", "B"}));
  trans->add_option("--in", in_path, "input JSONL")->required();

  add_common(app.add_subcommand("diagnose",
                                "alignment / PCA / attention reports"),
             diag_a);
  add_common(app.add_subcommand("ablate", "2x2x2 objective ablation grid"),
             abl_a);
  auto* grad = app.add_subcommand("grad-check",
                                  "compare backward with finite differences");
  add_common(grad, grad_a);
  grad->add_option("--tol", tol, "max relative error allowed");

  std::vector<const char*> argv;
  argv.push_back("fits");
  for (const auto& s : args) argv.push_back(s.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << json{{"error", "UsageError"}, {"message", e.what()}}.dump()
              << "\n";
    return 1;
  }

  try {
    if (app.got_subcommand("gen-data")) return cmd_gen_data(gen_a);
    if (app.got_subcommand("post-train"))
      return cmd_train(post_a, config::Stage::kPost);
    if (app.got_subcommand("fine-tune"))
      return cmd_train(fine_a, config::Stage::kFinetune);
    if (app.got_subcommand("eval")) return cmd_eval(eval_a);
    if (app.got_subcommand("transform"))
      return cmd_transform(trans_a, op, in_path);
    if (app.got_subcommand("diagnose")) return cmd_diagnose(diag_a);
    if (app.got_subcommand("ablate")) return cmd_ablate(abl_a);
    if (app.got_subcommand("grad-check")) return cmd_grad_check(grad_a, tol);
  } catch (const ConfigError& e) {
    std::cerr << json{{"error", e.kind()}, {"message", e.what()}}.dump()
              << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << json{{"error", e.kind()}, {"message", e.what()}}.dump()
              << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "RuntimeError"}, {"message", e.what()}}.dump()
              << "\n";
    return 2;
  }
  return 1;
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace fits::cli
