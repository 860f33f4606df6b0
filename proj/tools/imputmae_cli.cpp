// Command-line driver: synth, pretrain, finetune, impute, evaluate, ablate-pretraining.

#include "imputmae/harness.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace imputmae;

namespace {

struct Common {
  std::string config;
  std::string data;
  std::string out;
  std::string profile = "desk";
  std::string modalities;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* app, Common& c, bool data_required = true) {
  app->add_option("--config", c.config, "key = value training configuration file");
  auto* d = app->add_option("--data", c.data, "dataset directory holding manifest.json");
  if (data_required) d->required();
  app->add_option("--out", c.out, "output directory")->required();
  app->add_option("--profile", c.profile, "model geometry: desk, full or micro");
  app->add_option("--modalities", c.modalities, "comma list of rna,dnam,mri,wsi,clinical");
  app->add_option("--seed", c.seed, "master seed");
}

TrainConfig resolve(const Common& c, TrainConfig base) {
  if (!c.config.empty()) {
    std::ifstream in(c.config);
    if (!in) throw Error("cannot open config " + c.config);
    base = parse_config(in, base);
  }
  if (!c.modalities.empty()) {
    base.modalities = parse_modality_list(c.modalities);
    if (base.stage == Stage::Finetune && base.profile == "full") base.lr = finetune_lr(base.modalities);
  }
  if (c.seed) base.seed = *c.seed;
  base.validate();
  return base;
}

void write_json(const fs::path& p, const nlohmann::json& j) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw Error("cannot write " + p.string());
  out << j.dump(2) << "\n";
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot open " + p.string());
  return nlohmann::json::parse(in);
}

Checkpoint load_for(const fs::path& p, const ModelConfig& mc) {
  Checkpoint ck = load_checkpoint(p);
  check_checkpoint_config(ck, mc);
  return ck;
}

std::vector<ModalityKind> checkpoint_modalities(const Checkpoint& ck) {
  const auto at = ck.config_text.find("\nmodalities=");
  if (at == std::string::npos) throw Error("checkpoint does not record its modality subset");
  return parse_modality_list(ck.config_text.substr(at + 12));
}

int cmd_synth(const Common& c, std::size_t n, const std::string& missing) {
  const ModelConfig mc = profile_by_name(c.profile);
  std::map<ModalityKind, Scalar> rates{{ModalityKind::DNAM, 0.2}, {ModalityKind::MRI, 0.2}, {ModalityKind::WSI, 0.2},
                                       {ModalityKind::CLINICAL, 0.1}};
  std::stringstream ss(missing);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw Error("--missing expects modality=rate pairs");
    rates[parse_modality(item.substr(0, eq))] = std::stod(item.substr(eq + 1));
  }
  std::vector<Eigen::VectorXd> latents;
  Dataset ds = synthesize_dataset(n, mc.specs, rates, c.seed.value_or(0), {}, &latents);
  save_dataset(ds, c.out);
  nlohmann::json lat = nlohmann::json::object();
  for (std::size_t i = 0; i < ds.size(); ++i) lat[ds.records[i].id] = std::vector<Scalar>(latents[i].data(), latents[i].data() + latents[i].size());
  write_json(fs::path(c.out) / "latents.json", lat);
  std::cout << "wrote " << ds.size() << " patients to " << c.out << "\n";
  return 0;
}

int cmd_pretrain(const Common& c) {
  const ModelConfig mc = profile_by_name(c.profile);
  TrainConfig cfg = resolve(c, pretrain_defaults(c.profile));
  cfg.stage = Stage::Pretrain;
  const Dataset ds = load_dataset(c.data, mc.specs);
  fs::create_directories(c.out);
  std::ofstream logf(fs::path(c.out) / "pretrain_log.jsonl");
  JsonlLog log(&logf);
  MaeModel model(mc, maskable_only(cfg.modalities), cfg.seed);
  const auto res = run_pretrain(model, ds, cfg, log, fs::path(c.out));
  std::cout << "pretraining finished: final loss " << res.epochs.back().total << ", best epoch " << res.best_epoch << "\n";
  return 0;
}

int cmd_finetune(const Common& c, const std::string& checkpoint) {
  const ModelConfig mc = profile_by_name(c.profile);
  TrainConfig cfg = finetune_defaults({ModalityKind::RNA, ModalityKind::DNAM, ModalityKind::MRI, ModalityKind::WSI,
                                       ModalityKind::CLINICAL},
                                      c.profile);
  cfg = resolve(c, cfg);
  cfg.stage = Stage::Finetune;
  const Dataset ds = load_dataset(c.data, mc.specs);
  std::optional<Checkpoint> ck;
  if (!checkpoint.empty()) ck = load_for(checkpoint, mc);
  fs::create_directories(c.out);
  std::ofstream logf(fs::path(c.out) / "finetune_log.jsonl");
  JsonlLog log(&logf);
  auto res = run_finetune(ds, mc, ck ? &ck->params : nullptr, cfg, log);
  write_predictions_csv(fs::path(c.out) / "predictions.csv", res.test_ids, res.test_predictions);
  write_json(fs::path(c.out) / "bin_edges.json", res.edges);
  nlohmann::json metrics{{"all_present", report_json(res.all_present)}, {"rna_present", report_json(res.rna_present)},
                         {"train_nll", res.epoch_loss}, {"config", describe(cfg)}};
  write_json(fs::path(c.out) / "metrics.json", metrics);
  ModelConfig saved = mc;
  saved.time_bins = cfg.time_bins;
  save_checkpoint(fs::path(c.out) / "finetuned.ckpt", make_checkpoint(res.model->params(), saved, cfg.seed, cfg.modalities));
  std::cout << metrics["rna_present"].dump() << "\n";
  return 0;
}

int cmd_impute(const Common& c, const std::string& checkpoint) {
  const ModelConfig mc = profile_by_name(c.profile);
  const Checkpoint ck = load_for(checkpoint, mc);
  std::vector<ModalityKind> subset = c.modalities.empty() ? checkpoint_modalities(ck) : maskable_only(parse_modality_list(c.modalities));
  MaeModel model(mc, subset, ck.seed);
  check_compatible(model.params(), ck.params);
  model.params().load_from(ck.params);
  const Dataset ds = load_dataset(c.data, mc.specs);
  fs::create_directories(c.out);
  nlohmann::json written = nlohmann::json::object();
  for (const auto& r : ds.records) {
    bool any = false;
    for (auto k : subset) any = any || r.has(k);
    if (!any) continue;
    for (const auto& [k, a] : impute_missing(r, model)) {
      const std::string rel = r.id + "/" + io::file_name(k);
      io::write_modality_file(fs::path(c.out) / rel, k, a);
      written[r.id][std::string(modality_name(k))] = {{"file", rel}, {"shape", a.shape}};
    }
  }
  write_json(fs::path(c.out) / "provenance.json",
             {{"checkpoint", fs::path(checkpoint).filename().string()},
              {"checkpoint_config_hash", ck.config_hash},
              {"checkpoint_seed", ck.seed},
              {"modalities", modality_list(subset)},
              {"imputed", written}});
  std::cout << "imputed " << written.size() << " patients into " << c.out << "\n";
  return 0;
}

int cmd_evaluate(const Common& c, const std::string& predictions, std::string edges_path) {
  const ModelConfig mc = profile_by_name(c.profile);
  const Dataset ds = load_dataset(c.data, mc.specs);
  if (edges_path.empty()) edges_path = (fs::path(predictions).parent_path() / "bin_edges.json").string();
  const auto edges = read_json(edges_path).get<std::vector<Scalar>>();
  const auto preds = read_predictions_csv(predictions);
  std::vector<EvalInput> in;
  for (const auto& r : ds.records) {
    auto it = preds.find(r.id);
    if (it == preds.end()) continue;
    in.push_back({it->second, r.label});
  }
  if (in.size() != preds.size()) throw Error("predictions reference patients missing from the manifest");
  const SurvivalReport rep = evaluate_survival(in, edges);
  if (rep.dropped_terms > 0)
    std::cerr << "warning: " << rep.dropped_terms << " Brier terms dropped (zero censoring weight)\n";
  const nlohmann::json j{{"c_index", rep.c_index},
                         {"ibs", rep.ibs},
                         {"cs_score", rep.cs_score},
                         {"n", rep.n},
                         {"comparable_pairs", rep.comparable_pairs}};
  write_json(fs::path(c.out) / "evaluation.json", j);
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_ablate(const Common& c, const std::string& checkpoint, std::size_t n_seeds) {
  const ModelConfig mc = profile_by_name(c.profile);
  TrainConfig cfg = finetune_defaults({ModalityKind::RNA, ModalityKind::DNAM, ModalityKind::MRI, ModalityKind::WSI,
                                       ModalityKind::CLINICAL},
                                      c.profile);
  cfg = resolve(c, cfg);
  cfg.stage = Stage::Finetune;
  const Dataset ds = load_dataset(c.data, mc.specs);
  const Checkpoint ck = load_for(checkpoint, mc);
  fs::create_directories(c.out);
  std::ofstream logf(fs::path(c.out) / "ablation_log.jsonl");
  JsonlLog log(&logf);
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < n_seeds; ++i) seeds.push_back(cfg.seed + i);
  const auto runs = run_ablation(ds, mc, ck.params, cfg, seeds, log);
  nlohmann::json j = nlohmann::json::array();
  std::size_t wins = 0;
  for (const auto& r : runs) {
    j.push_back({{"seed", r.seed}, {"pretrained_c_index", r.pretrained_c}, {"random_init_c_index", r.random_c}});
    wins += r.pretrained_c >= r.random_c ? 1 : 0;
  }
  write_json(fs::path(c.out) / "ablation.json", {{"runs", j}, {"pretrained_not_worse", wins}, {"seeds", runs.size()}});
  std::cout << "pretrained >= random init in " << wins << " of " << runs.size() << " seeds\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal masked autoencoder for imputation and survival prediction"};
  app.require_subcommand(1);

  Common synth_c, pre_c, ft_c, imp_c, ev_c, ab_c;
  std::size_t n_patients = 64;
  std::string missing;
  auto* synth = app.add_subcommand("synth", "write a synthetic shared-latent cohort");
  add_common(synth, synth_c, false);
  synth->add_option("--patients", n_patients, "number of patients");
  synth->add_option("--missing", missing, "missing rates, e.g. dnam=0.2,mri=0.3");

  auto* pre = app.add_subcommand("pretrain", "masked multimodal reconstruction pretraining");
  add_common(pre, pre_c);

  std::string ft_ckpt;
  auto* ft = app.add_subcommand("finetune", "survival fine-tuning and test evaluation");
  add_common(ft, ft_c);
  ft->add_option("--checkpoint", ft_ckpt, "pretrained checkpoint (omit for random initialization)");

  std::string imp_ckpt;
  auto* imp = app.add_subcommand("impute", "reconstruct missing modalities");
  add_common(imp, imp_c);
  imp->add_option("--checkpoint", imp_ckpt, "pretrained checkpoint")->required();

  std::string preds, edges;
  auto* ev = app.add_subcommand("evaluate", "C-index, IBS and CS-score of a predictions file");
  add_common(ev, ev_c);
  ev->add_option("--predictions", preds, "predictions CSV")->required();
  ev->add_option("--edges", edges, "bin edges JSON (default: bin_edges.json next to the predictions)");

  std::string ab_ckpt;
  std::size_t n_seeds = 3;
  auto* ab = app.add_subcommand("ablate-pretraining", "fine-tune with and without the pretrained checkpoint");
  add_common(ab, ab_c);
  ab->add_option("--checkpoint", ab_ckpt, "pretrained checkpoint")->required();
  ab->add_option("--seeds", n_seeds, "number of seeds");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*synth) return cmd_synth(synth_c, n_patients, missing);
    if (*pre) return cmd_pretrain(pre_c);
    if (*ft) return cmd_finetune(ft_c, ft_ckpt);
    if (*imp) return cmd_impute(imp_c, imp_ckpt);
    if (*ev) return cmd_evaluate(ev_c, preds, edges);
    if (*ab) return cmd_ablate(ab_c, ab_ckpt, n_seeds);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
