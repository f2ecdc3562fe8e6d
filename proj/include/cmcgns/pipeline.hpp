#pragma once

// End-to-end runs shared by the CLI and the acceptance suite: corpus ->
// two-stage training -> held-out evaluation, and the CGNS x MIR ablation grid.

#include <chrono>
#include <sstream>
#include <string>
#include <vector>

#include "cmcgns/config.hpp"
#include "cmcgns/eval.hpp"
#include "cmcgns/trainer.hpp"

namespace cmcgns {

struct PipelineResult {
  Checkpoint stage1;
  Checkpoint final;
  std::string metrics_csv;
  std::vector<StepRecord> records;
  RetrievalReport image_to_report;
  RetrievalReport report_to_image;
  AttnAlignmentReport attention;
  double seconds = 0.0;
};

inline Model model_from_checkpoint(const Checkpoint& ck) { return Trainer::from_checkpoint(ck).model(); }

inline PipelineResult run_pipeline(const RunConfig& cfg, const std::vector<PairedSample>& corpus,
                                   const Trainer::StepCallback& on_step = {},
                                   const std::function<void(const Checkpoint&)>& on_checkpoint = {}) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const Split split = split_corpus(corpus, cfg.holdout);
  const auto train = select(corpus, split.train);
  const auto held = select(corpus, split.heldout);

  PipelineResult out;
  std::ostringstream csv;
  csv << kMetricsHeader << '\n';
  auto record = [&](const StepRecord& r) {
    csv << metrics_row(r.step, r.stage, r.lr, r.losses) << '\n';
    out.records.push_back(r);
    if (on_step) on_step(r);
  };

  Trainer t(cfg.model, cfg.train);
  t.run(train, t.stage1_steps(train.size()), record, on_checkpoint);
  out.stage1 = t.checkpoint(1);
  if (on_checkpoint) on_checkpoint(out.stage1);
  t.run_all(train, record, on_checkpoint);
  out.final = t.checkpoint(2);
  out.metrics_csv = csv.str();

  const auto [i2r, r2i] = eval_retrieval(t.model(), held);
  out.image_to_report = i2r;
  out.report_to_image = r2i;
  out.attention = attention_alignment(t.model(), held);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

struct AblationRow {
  bool cgns = true;
  bool mir = true;
  RetrievalReport image_to_report;
  RetrievalReport report_to_image;
  double attention_ratio = 0.0;
};

// The four on/off combinations; every run shares corpus and seed.
inline std::vector<AblationRow> run_ablation(const RunConfig& base, const std::vector<PairedSample>& corpus,
                                             const std::function<void(const AblationRow&)>& on_row = {}) {
  std::vector<AblationRow> rows;
  for (bool cgns : {true, false})
    for (bool mir : {true, false}) {
      RunConfig c = base;
      c.train.use_cgns = cgns;
      c.train.use_mir = mir;
      const PipelineResult r = run_pipeline(c, corpus);
      rows.push_back({cgns, mir, r.image_to_report, r.report_to_image, r.attention.ratio});
      if (on_row) on_row(rows.back());
    }
  return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "cgns,mir,i2r_top1,i2r_top5,i2r_mrr,r2i_top1,r2i_top5,r2i_mrr,attn_ratio\n";
  for (const auto& r : rows)
    os << (r.cgns ? "on" : "off") << ',' << (r.mir ? "on" : "off") << ',' << format_double(r.image_to_report.top1)
       << ',' << format_double(r.image_to_report.top5) << ',' << format_double(r.image_to_report.mrr) << ','
       << format_double(r.report_to_image.top1) << ',' << format_double(r.report_to_image.top5) << ','
       << format_double(r.report_to_image.mrr) << ',' << format_double(r.attention_ratio) << '\n';
  return os.str();
}

}  // namespace cmcgns
