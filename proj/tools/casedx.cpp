// casedx command-line interface.
//
//   casedx generate            synthetic corpus (manifest, scans, knowledge base)
//   casedx pretrain-knowledge  contrastive pretraining of the text encoder
//   casedx train               case-level model training + test evaluation
//   casedx eval                metrics, ROC series and predictions for a split
//   casedx finetune            transfer to an external labelled corpus
//   casedx zeroshot            OR-merged transfer through a label mapping
//   casedx explain             Score-CAM saliency maps
//   casedx report              ROC and probability-distribution plots
//
// Exit codes: 0 success, 2 usage, 3 data error, 4 numeric failure.

#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "casedx/commands.hpp"

namespace {

using namespace casedx;

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool force = false;
  std::optional<double> fraction;
  std::optional<std::string> mapping;
  std::optional<std::string> variant;
  std::optional<std::string> fusion;
  std::optional<std::string> ke;
  std::optional<int> classes;
  std::optional<int> cases;
  std::optional<std::string> checkpoint;
  std::optional<std::string> manifest;
  std::optional<std::string> input;
  std::optional<std::string> split;
  std::vector<std::string> case_ids;
  std::optional<std::string> target;
};

RunConfig resolve(const Flags& f) {
  RunConfig cfg = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (f.out) cfg.out = *f.out;
  if (f.fraction) cfg.fraction = *f.fraction;
  if (f.mapping) cfg.mapping = *f.mapping;
  if (f.variant) cfg.model.encoder.variant = parse_variant(*f.variant);
  if (f.fusion) cfg.model.fusion.mode = parse_fusion_mode(*f.fusion);
  if (f.ke) cfg.model.knowledge = *f.ke == "on";
  if (f.classes) cfg.synthetic.classes = *f.classes;
  if (f.cases) cfg.synthetic.cases = *f.cases;
  if (f.checkpoint) cfg.checkpoint = *f.checkpoint;
  if (f.manifest) cfg.corpus.manifest = *f.manifest;
  if (f.input) cfg.predictions = *f.input;
  if (f.split) cfg.split = *f.split;
  if (!f.case_ids.empty()) cfg.explain.cases = f.case_ids;
  if (f.target) cfg.explain.target = *f.target;
  cfg.propagate_seed();
  cfg.validate();
  cfg.synthetic.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"casedx: case-level diagnosis from multi-scan 2D/3D radiology"};
  app.require_subcommand(1);
  Flags f;

  using Command = void (*)(const RunConfig&, const CommandContext&);
  std::vector<std::pair<CLI::App*, Command>> commands;
  auto add = [&](const char* name, const char* help, Command cmd) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", f.config, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--seed", f.seed, "run seed");
    sub->add_option("--out", f.out, "output directory");
    sub->add_flag("--force", f.force, "write into a non-empty output directory");
    commands.emplace_back(sub, cmd);
    return sub;
  };
  auto model_flags = [&](CLI::App* sub) {
    sub->add_option("--variant", f.variant, "encoder variant")->check(CLI::IsMember({"resnet", "vit", "mix"}));
    sub->add_option("--fusion", f.fusion, "fusion mode")->check(CLI::IsMember({"learnable", "max", "mean", "random"}));
    sub->add_option("--ke", f.ke, "knowledge enhancement")->check(CLI::IsMember({"on", "off"}));
  };
  auto data_flags = [&](CLI::App* sub) {
    sub->add_option("--manifest", f.manifest, "corpus manifest (overrides corpus.manifest)");
    sub->add_option("--checkpoint", f.checkpoint, "model checkpoint");
  };

  CLI::App* gen = add("generate", "write a synthetic planted-signal corpus", cmd_generate);
  gen->add_option("--classes", f.classes, "number of abnormal classes")->check(CLI::Range(1, kMaxSyntheticClasses));
  gen->add_option("--cases", f.cases, "number of cases")->check(CLI::PositiveNumber);

  add("pretrain-knowledge", "pretrain the knowledge text encoder", cmd_pretrain_knowledge);

  CLI::App* tr = add("train", "train a case-level model", cmd_train);
  model_flags(tr);
  tr->add_option("--manifest", f.manifest, "corpus manifest (overrides corpus.manifest)");

  CLI::App* ev = add("eval", "evaluate a checkpoint on a split", cmd_eval);
  data_flags(ev);
  ev->add_option("--split", f.split, "split to score")->check(CLI::IsMember({"train", "val", "test"}));

  CLI::App* ft = add("finetune", "fine-tune a checkpoint on an external corpus", cmd_finetune);
  data_flags(ft);
  ft->add_option("--fraction", f.fraction, "fraction of external training cases")
      ->check(CLI::Validator(
          [](std::string& s) -> std::string {
            double x = 0;
            if (!CLI::detail::lexical_cast(s, x)) return "fraction must be a number";
            for (double v : {0.01, 0.1, 0.3, 1.0})
              if (std::abs(x - v) < 1e-12) return {};
            return "fraction must be one of 0.01, 0.1, 0.3, 1.0";
          },
          "{0.01,0.1,0.3,1.0}"));

  CLI::App* zs = add("zeroshot", "zero-shot transfer through a label mapping", cmd_zeroshot);
  data_flags(zs);
  zs->add_option("--mapping", f.mapping, "JSON mapping external class -> internal classes");

  CLI::App* ex = add("explain", "Score-CAM saliency maps", cmd_explain);
  data_flags(ex);
  ex->add_option("--case", f.case_ids, "case id (repeatable)");
  ex->add_option("--class", f.target, "target class id");

  CLI::App* rp = add("report", "plots from an evaluation directory", cmd_report);
  rp->add_option("--input", f.input, "evaluation directory holding metrics.json and predictions.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    for (const auto& [sub, cmd] : commands)
      if (sub->parsed()) {
        const RunConfig cfg = resolve(f);
        cmd(cfg, CommandContext{f.force, &std::cerr});
      }
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed input: " << e.what() << '\n';
    return 3;
  }
}
