// cmcgns: corpus generation, pretraining, evaluation and verification.
//
// Failures print one line to stderr,
//   error code=<exit> kind=<kind> msg="<message>"
// and exit with the code listed in exit_code() below.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "cmcgns/gradcheck.hpp"
#include "cmcgns/pipeline.hpp"

namespace fs = std::filesystem;
using namespace cmcgns;

namespace {

constexpr int kUsage = 2;
constexpr int kGradcheckFailed = 9;

int exit_code(const std::string& kind) {
  if (kind == "usage") return kUsage;
  if (kind == "io") return 3;
  if (kind == "config") return 4;
  if (kind == "version") return 5;
  if (kind == "checksum") return 6;
  if (kind == "non_finite") return 7;
  if (kind == "dimension" || kind == "degenerate" || kind == "batch_too_small") return 8;
  if (kind == "gradcheck") return kGradcheckFailed;
  return 1;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c == '\n' ? ' ' : c;
  }
  return out;
}

int fail(const std::string& kind, const std::string& msg) {
  const int code = exit_code(kind);
  std::cerr << "error code=" << code << " kind=" << kind << " msg=\"" << escape(msg) << "\"\n";
  return code;
}

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::string> stage2_objective;
  std::optional<double> mu;
  std::optional<Index> k;
  bool no_cgns = false;
  bool no_mir = false;
  std::string checkpoint;
  std::string corpus;
  std::string component = "all";
  std::size_t samples = 4;
};

RunConfig resolve_config(const Options& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.seed) cfg.train.seed = *o.seed;
  if (o.stage2_objective) cfg.train.stage2_objective = parse_stage2_objective(*o.stage2_objective);
  if (o.mu) cfg.model.cgns.mu_hard = *o.mu;
  if (o.k) cfg.model.cgns.clusters = *o.k;
  if (o.no_cgns) cfg.train.use_cgns = false;
  if (o.no_mir) cfg.train.use_mir = false;
  cfg.validate();
  return cfg;
}

// A stored corpus replaces the generated one; its config must agree with the model.
std::vector<PairedSample> resolve_corpus(const Options& o, RunConfig& cfg) {
  if (o.corpus.empty()) return generate_corpus(cfg.corpus);
  Corpus c = read_corpus(o.corpus);
  cfg.corpus = c.config;
  cfg.validate();
  return std::move(c.samples);
}

void write_text(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot write " + p.string());
  f << s;
  if (!f) throw IoError("write failed: " + p.string());
}

fs::path require_out(const Options& o) {
  if (o.out.empty()) throw ConfigError("--out is required");
  return o.out;
}

int cmd_gen(const Options& o) {
  RunConfig cfg = resolve_config(o);
  const fs::path out = require_out(o);
  const auto samples = generate_corpus(cfg.corpus);
  write_corpus(cfg.corpus, samples, out);
  std::cout << "wrote " << samples.size() << " samples to " << out.string() << '\n';
  return 0;
}

std::string attention_json(const AttnAlignmentReport& a) {
  return nlohmann::json{{"mean_truth_mass", a.mean_truth_mass},
                        {"uniform_baseline", a.uniform_baseline},
                        {"ratio", a.ratio},
                        {"sentences", a.sentences}}
      .dump(2);
}

int cmd_pretrain(const Options& o) {
  RunConfig cfg = resolve_config(o);
  const fs::path out = require_out(o);
  const auto corpus = resolve_corpus(o, cfg);
  fs::create_directories(out);
  const PipelineResult r = run_pipeline(cfg, corpus, {}, [&](const Checkpoint& ck) {
    if (cfg.train.checkpoint_interval > 0) save_checkpoint(ck, out / ("step_" + std::to_string(ck.step) + ".ckpt"));
  });
  save_checkpoint(r.stage1, out / "stage1.ckpt");
  save_checkpoint(r.final, out / "final.ckpt");
  write_text(out / "metrics.csv", r.metrics_csv);
  write_text(out / "retrieval.csv", retrieval_csv({r.image_to_report, r.report_to_image}));
  write_text(out / "attention.json", attention_json(r.attention));
  write_text(out / "config.json", nlohmann::json(cfg).dump(2));
  std::cout << "steps " << r.final.step << " image_to_report_top1 " << format_double(r.image_to_report.top1)
            << " report_to_image_top1 " << format_double(r.report_to_image.top1) << " attention_ratio "
            << format_double(r.attention.ratio) << " seconds " << r.seconds << '\n';
  return 0;
}

struct Loaded {
  RunConfig cfg;
  std::vector<PairedSample> corpus;
  Model model;
  std::vector<const PairedSample*> held;
};

Loaded load_for_eval(const Options& o) {
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  Loaded l;
  l.model = model_from_checkpoint(load_checkpoint(o.checkpoint));
  l.cfg = resolve_config(o);
  l.corpus = resolve_corpus(o, l.cfg);
  const auto& d = l.model.config().dims;
  if (d.grid_side != static_cast<Index>(l.cfg.corpus.grid_side) ||
      d.image_res != static_cast<Index>(l.cfg.corpus.image_res) ||
      d.vocab_size != static_cast<Index>(l.cfg.corpus.vocab_size))
    throw ConfigError("checkpoint model does not match the corpus (grid_side/image_res/vocab_size)");
  l.held = select(l.corpus, split_corpus(l.corpus, l.cfg.holdout).heldout);
  return l;
}

int cmd_eval_retrieval(const Options& o) {
  const Loaded l = load_for_eval(o);
  const auto [i2r, r2i] = eval_retrieval(l.model, l.held);
  const std::string csv = retrieval_csv({i2r, r2i});
  if (o.out.empty())
    std::cout << csv;
  else
    write_text(o.out, csv);
  return 0;
}

int cmd_export_embeddings(const Options& o) {
  const Loaded l = load_for_eval(o);
  const std::string csv = embeddings_csv(global_embeddings(l.model, l.held));
  if (o.out.empty())
    std::cout << csv;
  else
    write_text(o.out, csv);
  return 0;
}

// Score maps (CSV, raw sigmoid values) and one PGM per sentence over the
// region grid, plus the reconstruction triplet of each exported sample.
int cmd_export_attn(const Options& o) {
  Loaded l = load_for_eval(o);
  const fs::path out = require_out(o);
  fs::create_directories(out);
  const Index g = l.model.config().dims.grid_side;
  std::ostringstream summary;
  summary << "sample_id,sentence,truth_region,truth_mass\n";
  const std::size_t n = std::min(o.samples, l.held.size());
  for (std::size_t i = 0; i < n; ++i) {
    const PairedSample& s = *l.held[i];
    const std::string stem = "sample_" + std::to_string(s.sample_id);
    const SampleForward f = l.model.encode(s);
    const Matrix& sc = f.text_cross.scores;
    write_text(out / (stem + "_text_over_regions.csv"), matrix_csv(sc));
    write_text(out / (stem + "_regions_over_text.csv"), matrix_csv(f.image_cross.scores));
    for (Index m = 0; m < sc.rows(); ++m) {
      const Matrix grid = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
          Matrix(sc.row(m)).data(), g, g);
      write_pgm(out / (stem + "_sentence_" + std::to_string(m) + ".pgm"), grid);
      summary << s.sample_id << ',' << m << ',' << s.truth_map[static_cast<std::size_t>(m)] << ','
              << format_double(truth_mass(sc, m, static_cast<Index>(s.truth_map[static_cast<std::size_t>(m)]))) << '\n';
    }

    ObjectiveOptions opt;
    opt.alignment = false;
    opt.reconstruction = true;
    opt.seed = l.cfg.train.seed;
    const std::vector<const PairedSample*> one{&s};
    const BatchResult r = l.model.evaluate(one, opt, false);
    const auto& rf = r.samples.front();
    Matrix mask_map(g, g);
    for (Index p = 0; p < g * g; ++p) mask_map(p / g, p % g) = rf.masked.flags[static_cast<std::size_t>(p)] ? 1.0 : 0.0;
    write_pgm(out / (stem + "_target.pgm"), s.image);
    write_pgm(out / (stem + "_mask.pgm"), mask_map);
    write_pgm(out / (stem + "_reconstruction.pgm"), rf.reconstruction);
  }
  write_text(out / "truth_mass.csv", summary.str());
  const AttnAlignmentReport a = attention_alignment(l.model, l.held);
  write_text(out / "attention.json", attention_json(a));
  std::cout << "exported " << n << " samples; attention_ratio " << format_double(a.ratio) << '\n';
  return 0;
}

int cmd_gradcheck(const Options& o) {
  const std::uint64_t seed = o.seed.value_or(1);
  std::vector<std::string> components;
  if (o.component == "all")
    components = gradcheck_components();
  else
    components.push_back(o.component);
  nlohmann::json reports = nlohmann::json::array();
  bool passed = true;
  for (const auto& c : components) {
    const GradcheckReport r = run_gradcheck(c, seed);
    passed = passed && r.passed;
    reports.push_back(r);
    std::cout << (r.passed ? "PASS " : "FAIL ") << c << '\n';
    if (!r.passed)
      for (const auto& g : r.groups)
        if (!g.passed)
          std::cout << "  " << g.name << " rel_error " << format_double(g.rel_error) << " index " << g.worst_index
                    << " analytic " << format_double(g.worst_analytic) << " numeric "
                    << format_double(g.worst_numeric) << '\n';
  }
  const nlohmann::json doc{{"seed", seed}, {"passed", passed}, {"components", reports}};
  if (!o.out.empty()) write_text(o.out, doc.dump(2));
  if (!passed) return fail("gradcheck", "gradient check failed");
  return 0;
}

int cmd_ablate(const Options& o) {
  RunConfig cfg = resolve_config(o);
  const fs::path out = require_out(o);
  const auto corpus = resolve_corpus(o, cfg);
  const auto rows = run_ablation(cfg, corpus, [](const AblationRow& r) {
    std::cout << "cgns " << (r.cgns ? "on" : "off") << " mir " << (r.mir ? "on" : "off") << " image_to_report_top1 "
              << format_double(r.image_to_report.top1) << '\n';
  });
  write_text(out, ablation_csv(rows));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CM-CGNS multimodal pretraining on a synthetic paired corpus"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON run configuration");
    sub->add_option("--seed", o.seed, "Override the training seed");
    sub->add_option("--out", o.out, "Output path");
    sub->add_option("--stage2-objective", o.stage2_objective, "full | recon-only");
    sub->add_option("--mu", o.mu, "Hard-negative weight");
    sub->add_option("--k", o.k, "Cluster count per batch");
    sub->add_flag("--no-cgns", o.no_cgns, "Disable hard negatives and the margin loss");
    sub->add_flag("--no-mir", o.no_mir, "Disable masked image reconstruction");
    sub->add_option("--corpus", o.corpus, "Corpus directory written by gen");
  };
  auto with_checkpoint = [&](CLI::App* sub) { sub->add_option("--checkpoint", o.checkpoint, "Checkpoint file"); };

  auto* gen = app.add_subcommand("gen", "Generate a corpus");
  auto* pretrain = app.add_subcommand("pretrain", "Run stages 1 and 2 and evaluate on the held-out split");
  auto* eval = app.add_subcommand("eval-retrieval", "Held-out retrieval metrics for a checkpoint");
  auto* attn = app.add_subcommand("export-attn", "Export cross-attention score maps and reconstructions");
  auto* emb = app.add_subcommand("export-embeddings", "Export global embeddings as CSV");
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  auto* ablate = app.add_subcommand("ablate", "Train the four CGNS/MIR on-off combinations");
  for (auto* s : {gen, pretrain, eval, attn, emb, ablate}) common(s);
  for (auto* s : {eval, attn, emb}) with_checkpoint(s);
  attn->add_option("--samples", o.samples, "Number of held-out samples to export");
  grad->add_option("--component", o.component, "Component name or 'all'");
  grad->add_option("--seed", o.seed, "Seed for the random tiny configuration");
  grad->add_option("--out", o.out, "JSON report path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what());
  }

  try {
    if (*gen) return cmd_gen(o);
    if (*pretrain) return cmd_pretrain(o);
    if (*eval) return cmd_eval_retrieval(o);
    if (*attn) return cmd_export_attn(o);
    if (*emb) return cmd_export_embeddings(o);
    if (*grad) return cmd_gradcheck(o);
    if (*ablate) return cmd_ablate(o);
  } catch (const Error& e) {
    return fail(e.kind(), e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return fail("usage", "no subcommand");
}
