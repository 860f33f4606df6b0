#pragma once

// Training configuration, pretraining and fine-tuning loops, result files.

#include "imputmae/metrics.hpp"
#include "imputmae/optim.hpp"
#include "imputmae/survival.hpp"

#include <iomanip>
#include <ostream>
#include <sstream>

namespace imputmae {

enum class Stage { Pretrain, Finetune };

struct TrainConfig {
  Stage stage = Stage::Pretrain;
  Scalar lr = 1e-3;
  Scalar weight_decay = 1e-2;
  std::size_t epochs = 800;
  std::size_t batch_size = 24;
  Scalar mask_ratio = 0.5;
  Scalar dropout = 0.0;
  std::uint64_t seed = 0;
  std::vector<ModalityKind> modalities{ModalityKind::RNA, ModalityKind::DNAM, ModalityKind::MRI, ModalityKind::WSI};
  std::string scheduler = "cosine";
  std::size_t time_bins = 20;
  std::string profile = "desk";
  Scalar test_fraction = 0.2;
  std::uint64_t split_seed = 0;

  void validate() const {
    if (!(lr > 0.0)) throw Error("config: lr must be positive");
    if (weight_decay < 0.0) throw Error("config: weight_decay must be non-negative");
    if (epochs == 0) throw Error("config: epochs must be positive");
    if (batch_size == 0) throw Error("config: batch_size must be positive");
    if (!(mask_ratio >= 0.0 && mask_ratio <= 1.0)) throw Error("config: mask_ratio outside [0,1]");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw Error("config: dropout outside [0,1)");
    if (scheduler != "cosine") throw Error("config: unsupported scheduler '" + scheduler + "'");
    if (modalities.empty()) throw Error("config: empty modality subset");
    if (time_bins == 0) throw Error("config: T must be positive");
  }
};

inline bool contains(const std::vector<ModalityKind>& v, ModalityKind k) { return std::find(v.begin(), v.end(), k) != v.end(); }

/// Fine-tuning learning rate per modality subset: 1e-4 for RNA+DNAM, 1e-3
/// with MRI, 3e-4 whenever WSI is included.
inline Scalar finetune_lr(const std::vector<ModalityKind>& subset) {
  if (contains(subset, ModalityKind::WSI)) return 3e-4;
  if (contains(subset, ModalityKind::MRI)) return 1e-3;
  return 1e-4;
}

/// Full-size defaults; the small profiles take more, smaller steps over fewer epochs.
inline TrainConfig pretrain_defaults(const std::string& profile = "full") {
  TrainConfig c;
  c.profile = profile;
  if (profile != "full") {
    c.epochs = 30;
    c.batch_size = 4;
    c.lr = 2e-3;
  }
  return c;
}

inline TrainConfig finetune_defaults(const std::vector<ModalityKind>& subset, const std::string& profile = "full") {
  TrainConfig c;
  c.profile = profile;
  c.stage = Stage::Finetune;
  c.epochs = 20;
  c.dropout = 0.1;
  c.mask_ratio = 0.0;
  c.modalities = subset;
  c.lr = finetune_lr(subset);
  if (profile != "full") {
    c.batch_size = 8;
    c.lr = 1e-3;
  }
  return c;
}

inline std::vector<ModalityKind> parse_modality_list(const std::string& s) {
  std::vector<ModalityKind> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty()) continue;
    const ModalityKind k = parse_modality(item);
    if (!contains(out, k)) out.push_back(k);
  }
  if (out.empty()) throw Error("empty modality list '" + s + "'");
  std::sort(out.begin(), out.end());
  return out;
}

inline std::string modality_list(const std::vector<ModalityKind>& v) {
  std::string s;
  for (auto k : v) s += (s.empty() ? "" : ",") + std::string(modality_name(k));
  return s;
}

/// Applies "key = value" lines (blank lines and '#' comments ignored) on top of `base`.
inline TrainConfig parse_config(std::istream& in, TrainConfig base) {
  std::string line;
  std::size_t lineno = 0;
  bool lr_set = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error("config line " + std::to_string(lineno) + ": expected key = value");
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t\r"));
      s.erase(s.find_last_not_of(" \t\r") + 1);
      return s;
    };
    const std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
    auto num = [&](auto& dst) {
      std::istringstream vs(val);
      vs >> dst;
      if (!vs || !(vs >> std::ws).eof()) throw Error("config line " + std::to_string(lineno) + ": bad value for " + key);
    };
    if (key == "stage") {
      if (val == "pretrain") base.stage = Stage::Pretrain;
      else if (val == "finetune") base.stage = Stage::Finetune;
      else throw Error("config: unknown stage '" + val + "'");
    } else if (key == "lr") {
      num(base.lr);
      lr_set = true;
    } else if (key == "weight_decay") num(base.weight_decay);
    else if (key == "epochs") num(base.epochs);
    else if (key == "batch_size") num(base.batch_size);
    else if (key == "mask_ratio") num(base.mask_ratio);
    else if (key == "dropout") num(base.dropout);
    else if (key == "seed") num(base.seed);
    else if (key == "split_seed") num(base.split_seed);
    else if (key == "T") num(base.time_bins);
    else if (key == "test_fraction") num(base.test_fraction);
    else if (key == "scheduler") base.scheduler = val;
    else if (key == "profile") base.profile = val;
    else if (key == "modality_subset" || key == "modalities") base.modalities = parse_modality_list(val);
    else throw Error("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  if (base.stage == Stage::Finetune && !lr_set && base.profile == "full") base.lr = finetune_lr(base.modalities);
  base.validate();
  return base;
}

inline std::string describe(const TrainConfig& c) {
  std::ostringstream s;
  s << std::setprecision(17) << "stage=" << (c.stage == Stage::Pretrain ? "pretrain" : "finetune") << ";lr=" << c.lr
    << ";wd=" << c.weight_decay << ";epochs=" << c.epochs << ";batch=" << c.batch_size << ";mask=" << c.mask_ratio
    << ";dropout=" << c.dropout << ";seed=" << c.seed << ";modalities=" << modality_list(c.modalities)
    << ";T=" << c.time_bins << ";profile=" << c.profile;
  return s.str();
}

/// JSON-lines sink; a null stream discards records.
class JsonlLog {
 public:
  explicit JsonlLog(std::ostream* out = nullptr) : out_(out) {}
  void write(const nlohmann::json& j) {
    if (out_) *out_ << j.dump() << "\n" << std::flush;
  }

 private:
  std::ostream* out_;
};

inline std::vector<ModalityKind> maskable_only(const std::vector<ModalityKind>& v) {
  std::vector<ModalityKind> out;
  for (auto k : v)
    if (is_maskable(k)) out.push_back(k);
  return out;
}

inline Checkpoint make_checkpoint(const ParamStore& ps, const ModelConfig& mc, std::uint64_t seed,
                                  const std::vector<ModalityKind>& subset) {
  Checkpoint ck;
  ck.params = ps;
  ck.config_hash = mc.hash();
  ck.seed = seed;
  ck.config_text = mc.describe() + "\nmodalities=" + modality_list(subset);
  return ck;
}

/// Rejects checkpoints produced for another model geometry.
inline void check_checkpoint_config(const Checkpoint& ck, const ModelConfig& mc) {
  if (ck.config_hash != mc.hash())
    throw Error("checkpoint mismatch: built for configuration '" + ck.config_text.substr(0, ck.config_text.find('\n')) +
                "', expected '" + mc.describe() + "'");
}

struct EpochLoss {
  Scalar total = 0.0;
  std::map<ModalityKind, Scalar> per_modality;
};

struct PretrainResult {
  std::vector<EpochLoss> epochs;
  std::size_t best_epoch = 0;
  std::size_t steps = 0;
};

/// Masked-reconstruction pretraining. One random WSI tile per sample and
/// step; epoch losses are means of per-sample losses seen while training.
/// With out_dir set, writes final.ckpt and best.ckpt there.
inline PretrainResult run_pretrain(MaeModel& model, const Dataset& ds, const TrainConfig& cfg, JsonlLog& log,
                                   const std::optional<std::filesystem::path>& out_dir = std::nullopt) {
  cfg.validate();
  if (ds.size() == 0) throw Error("run_pretrain: empty dataset");
  const std::size_t n = ds.size();
  const std::size_t per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = per_epoch * cfg.epochs;
  AdamW opt(cfg.weight_decay);
  const MaskConfig mcfg{cfg.mask_ratio, cfg.seed};
  const auto counts = model.patch_counts();
  PretrainResult res;
  Scalar best = std::numeric_limits<Scalar>::infinity();
  const auto subset = model.modalities();
  log.write({{"event", "pretrain_start"}, {"patients", n}, {"steps", total_steps}, {"config", describe(cfg)},
             {"model", model.config().describe()}, {"parameters", model.params().scalar_count()}});

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuf = derive_rng(cfg.seed, {0x73687566ULL, epoch});
    detail::shuffle(order, shuf);
    EpochLoss el;
    std::map<ModalityKind, std::size_t> contributions;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::size_t lo = b * cfg.batch_size, hi = std::min(n, lo + cfg.batch_size);
      ag::Tape tape;
      std::vector<ag::Var> losses;
      for (std::size_t i = lo; i < hi; ++i) {
        const PatientRecord& r = ds.records[order[i]];
        Rng draw = derive_rng(cfg.seed, {0x6d61736bULL, epoch, order[i]});
        const MaskPlan plan = plan_masks(r, counts, mcfg, draw);
        const std::size_t tile = r.tile_count() > 0 ? uniform_index(draw, r.tile_count()) : 0;
        auto f = model.forward(tape, model.patch_inputs(r, tile), plan, true);
        losses.push_back(f.loss->total);
        el.total += f.loss->total.value()(0, 0);
        for (const auto& [k, v] : f.loss->per_modality) {
          el.per_modality[k] += v.value()(0, 0);
          ++contributions[k];
        }
      }
      ag::Var loss = ag::scale(ag::sum_scalars(losses), 1.0 / static_cast<Scalar>(losses.size()));
      const Scalar lv = loss.value()(0, 0);
      if (!std::isfinite(lv)) {
        if (out_dir) save_checkpoint(*out_dir / "last_good.ckpt", make_checkpoint(model.params(), model.config(), cfg.seed, subset));
        log.write({{"event", "diverged"}, {"epoch", epoch + 1}, {"step", res.steps}});
        throw Error("pretraining diverged: non-finite loss at epoch " + std::to_string(epoch + 1));
      }
      tape.backward(loss);
      opt.step(model.params(), tape.param_grads(), cosine_schedule(res.steps, total_steps, cfg.lr));
      ++res.steps;
    }
    el.total /= static_cast<Scalar>(n);
    for (auto& [k, v] : el.per_modality) v /= static_cast<Scalar>(contributions[k]);
    nlohmann::json rec{{"event", "epoch"}, {"epoch", epoch + 1}, {"loss", el.total}};
    for (const auto& [k, v] : el.per_modality) rec["loss_" + std::string(modality_name(k))] = v;
    log.write(rec);
    res.epochs.push_back(el);
    if (el.total < best) {
      best = el.total;
      res.best_epoch = epoch + 1;
      if (out_dir) save_checkpoint(*out_dir / "best.ckpt", make_checkpoint(model.params(), model.config(), cfg.seed, subset));
    }
  }
  if (out_dir) save_checkpoint(*out_dir / "final.ckpt", make_checkpoint(model.params(), model.config(), cfg.seed, subset));
  log.write({{"event", "pretrain_end"}, {"best_epoch", res.best_epoch}, {"final_loss", res.epochs.back().total}});
  return res;
}

/// Imputes every missing modality of every record; the result maps record index to arrays.
inline std::vector<std::map<ModalityKind, NdArray>> impute_dataset(const MaeModel& model, const Dataset& ds) {
  std::vector<std::map<ModalityKind, NdArray>> out;
  out.reserve(ds.size());
  for (const auto& r : ds.records) out.push_back(impute_missing(r, model));
  return out;
}

/// Mean squared error of imputed arrays to ground truth for one modality.
inline Scalar imputation_mse(const std::vector<NdArray>& imputed, const std::vector<NdArray>& truth) {
  if (imputed.size() != truth.size() || imputed.empty()) throw Error("imputation_mse: size mismatch");
  Scalar s = 0.0;
  std::size_t c = 0;
  for (std::size_t i = 0; i < imputed.size(); ++i) {
    if (imputed[i].size() != truth[i].size()) throw Error("imputation_mse: shape mismatch");
    for (std::size_t j = 0; j < truth[i].size(); ++j) s += (imputed[i].data[j] - truth[i].data[j]) * (imputed[i].data[j] - truth[i].data[j]);
    c += truth[i].size();
  }
  return s / static_cast<Scalar>(c);
}

/// Expected survival time implied by a discrete curve: e_0 + sum_k S_k (e_k - e_{k-1}).
inline Scalar expected_survival_time(const RowVec& survival, const std::vector<Scalar>& edges) {
  if (static_cast<std::size_t>(survival.size()) + 1 != edges.size()) throw Error("expected_survival_time: length mismatch");
  Scalar e = edges.front();
  for (Eigen::Index k = 0; k < survival.size(); ++k) e += survival(k) * (edges[static_cast<std::size_t>(k) + 1] - edges[static_cast<std::size_t>(k)]);
  return e;
}

struct ConditionReport {
  std::string name;
  std::optional<SurvivalReport> report;  // empty when the condition has no comparable pair
  std::size_t patients = 0;
};

struct FinetuneResult {
  std::unique_ptr<SurvivalModel> model;
  std::vector<Scalar> edges;
  std::vector<Scalar> epoch_loss;
  std::vector<std::string> test_ids;
  std::vector<SurvivalPrediction> test_predictions;
  std::vector<SurvivalLabel> test_labels;
  std::vector<bool> test_all_present;
  ConditionReport all_present;  // every subset modality observed
  ConditionReport rna_present;  // at least RNA observed, others imputed
};

inline ConditionReport evaluate_condition(const std::string& name, const std::vector<SurvivalPrediction>& preds,
                                          const std::vector<SurvivalLabel>& labels, const std::vector<bool>& keep,
                                          const std::vector<Scalar>& edges) {
  ConditionReport c;
  c.name = name;
  std::vector<EvalInput> in;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (keep[i]) in.push_back({preds[i].survival, labels[i]});
  c.patients = in.size();
  try {
    c.report = evaluate_survival(in, edges);
  } catch (const Error&) {
    c.report.reset();
  }
  return c;
}

/// Fine-tunes the survival model. `pretrained` holds the autoencoder
/// parameters (encoders, decoder, heads); without it every part starts
/// from a fresh initialization, imputation included. Missing modalities
/// are imputed once before training and the frozen encoder prefixes are
/// cached per patient.
inline FinetuneResult run_finetune(const Dataset& ds, const ModelConfig& mc, const ParamStore* pretrained,
                                   const TrainConfig& cfg, JsonlLog& log, const FreezePolicy* policy = nullptr) {
  cfg.validate();
  if (!contains(cfg.modalities, ModalityKind::RNA)) throw Error("run_finetune: modality subset must include RNA");
  ModelConfig mcfg = mc;
  mcfg.time_bins = cfg.time_bins;
  const auto encoders = maskable_only(cfg.modalities);

  auto [train, test] = split_train_test(ds, cfg.test_fraction, cfg.split_seed);
  for (const auto* part : {&train, &test})
    for (const auto& r : part->records)
      if (!r.has(ModalityKind::RNA)) throw Error("patient " + r.id + ": RNA required for fine-tuning and evaluation");
  std::vector<SurvivalLabel> train_labels;
  for (const auto& r : train.records) train_labels.push_back(r.label);
  FinetuneResult res;
  res.edges = discretize_times(train_labels, cfg.time_bins);
  assign_intervals(train, res.edges);
  assign_intervals(test, res.edges);

  MaeModel imputer(mcfg, encoders, cfg.seed);
  if (pretrained) {
    check_compatible(imputer.params(), *pretrained);
    imputer.params().load_from(*pretrained);
  }
  res.model = std::make_unique<SurvivalModel>(mcfg, cfg.modalities, policy ? *policy : FreezePolicy::standard(mcfg), cfg.seed);
  SurvivalModel& model = *res.model;
  if (pretrained) model.load_encoders(*pretrained);

  auto caches = [&](const Dataset& part) {
    std::vector<EncoderCache> out;
    for (const auto& r : part.records) out.push_back(build_encoder_cache(model, with_imputations(r, impute_missing(r, imputer))));
    return out;
  };
  const auto train_cache = caches(train);
  const auto test_cache = caches(test);
  log.write({{"event", "finetune_start"}, {"train", train.size()}, {"test", test.size()}, {"config", describe(cfg)},
             {"pretrained", pretrained != nullptr}});

  const std::size_t n = train.size();
  const std::size_t per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = per_epoch * cfg.epochs;
  AdamW opt(cfg.weight_decay);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuf = derive_rng(cfg.seed, {0x66747368ULL, epoch});
    detail::shuffle(order, shuf);
    Scalar epoch_loss = 0.0;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::size_t lo = b * cfg.batch_size, hi = std::min(n, lo + cfg.batch_size);
      ag::Tape tape;
      std::vector<ag::Var> logits;
      std::vector<SurvivalLabel> labels;
      for (std::size_t i = lo; i < hi; ++i) {
        Rng drng = derive_rng(cfg.seed, {0x64726f70ULL, epoch, order[i]});
        const DropoutCtx drop{cfg.dropout, &drng};
        logits.push_back(survival_logits(tape, model, train_cache[order[i]], drop));
        labels.push_back(train.records[order[i]].label);
      }
      ag::Var loss = nll_loss(logits, labels);
      const Scalar lv = loss.value()(0, 0);
      if (!std::isfinite(lv)) throw Error("fine-tuning diverged: non-finite loss at epoch " + std::to_string(epoch + 1));
      epoch_loss += lv * static_cast<Scalar>(hi - lo);
      tape.backward(loss);
      opt.step(model.params(), tape.param_grads(), cosine_schedule(step++, total, cfg.lr));
    }
    res.epoch_loss.push_back(epoch_loss / static_cast<Scalar>(n));
    log.write({{"event", "epoch"}, {"epoch", epoch + 1}, {"nll", res.epoch_loss.back()}});
  }

  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto& r = test.records[i];
    res.test_ids.push_back(r.id);
    res.test_predictions.push_back(predict(model, test_cache[i]));
    res.test_labels.push_back(r.label);
    bool all = true;
    for (auto k : encoders) all = all && r.has(k);
    res.test_all_present.push_back(all);
  }
  res.all_present = evaluate_condition("all_present", res.test_predictions, res.test_labels, res.test_all_present, res.edges);
  res.rna_present = evaluate_condition("rna_present", res.test_predictions, res.test_labels,
                                       std::vector<bool>(res.test_ids.size(), true), res.edges);
  auto to_json = [](const ConditionReport& c) {
    nlohmann::json j{{"patients", c.patients}};
    if (c.report) {
      j["c_index"] = c.report->c_index;
      j["ibs"] = c.report->ibs;
      j["cs_score"] = c.report->cs_score;
      j["comparable_pairs"] = c.report->comparable_pairs;
      j["dropped_terms"] = c.report->dropped_terms;
    } else {
      j["c_index"] = nullptr;
    }
    return j;
  };
  log.write({{"event", "finetune_end"}, {"all_present", to_json(res.all_present)}, {"rna_present", to_json(res.rna_present)}});
  for (const auto* c : {&res.all_present, &res.rna_present})
    if (c->report && c->report->dropped_terms > 0)
      log.write({{"event", "warning"}, {"message", "zero censoring weight; Brier terms dropped"}, {"condition", c->name},
                 {"dropped", c->report->dropped_terms}});
  return res;
}

inline nlohmann::json report_json(const ConditionReport& c) {
  nlohmann::json j{{"patients", c.patients}};
  if (!c.report) {
    j["c_index"] = nullptr;
    j["ibs"] = nullptr;
    j["cs_score"] = nullptr;
    return j;
  }
  j["c_index"] = c.report->c_index;
  j["ibs"] = c.report->ibs;
  j["cs_score"] = c.report->cs_score;
  j["n"] = c.report->n;
  j["comparable_pairs"] = c.report->comparable_pairs;
  j["dropped_terms"] = c.report->dropped_terms;
  return j;
}

inline void write_predictions_csv(const std::filesystem::path& p, const std::vector<std::string>& ids,
                                  const std::vector<SurvivalPrediction>& preds) {
  std::ofstream out(p);
  if (!out) throw Error("cannot write " + p.string());
  const std::size_t T = preds.empty() ? 0 : static_cast<std::size_t>(preds.front().hazards.size());
  out << "id";
  for (std::size_t t = 1; t <= T; ++t) out << ",h_" << t;
  for (std::size_t t = 1; t <= T; ++t) out << ",S_" << t;
  out << "\n" << std::setprecision(17);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out << ids[i];
    for (Eigen::Index t = 0; t < preds[i].hazards.size(); ++t) out << "," << preds[i].hazards(t);
    for (Eigen::Index t = 0; t < preds[i].survival.size(); ++t) out << "," << preds[i].survival(t);
    out << "\n";
  }
}

/// Reads the prediction CSV back as id -> survival curve.
inline std::map<std::string, RowVec> read_predictions_csv(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot open predictions " + p.string());
  std::string line;
  if (!std::getline(in, line)) throw Error("predictions file is empty");
  std::size_t cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  if (cols == 0 || cols % 2 != 0) throw Error("predictions header must hold id, h_1..h_T, S_1..S_T");
  const std::size_t T = cols / 2;
  std::map<std::string, RowVec> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, cell;
    std::getline(ss, id, ',');
    std::vector<Scalar> v;
    while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
    if (v.size() != 2 * T) throw Error("predictions row for " + id + " has the wrong number of columns");
    RowVec s(static_cast<Eigen::Index>(T));
    for (std::size_t t = 0; t < T; ++t) s(static_cast<Eigen::Index>(t)) = v[T + t];
    out[id] = s;
  }
  return out;
}

struct AblationRun {
  std::uint64_t seed = 0;
  Scalar pretrained_c = 0.0;
  Scalar random_c = 0.0;
};

/// Fine-tunes from the pretrained parameters and from a fresh initialization on
/// the same split for each seed; reports RNA-condition test C-indices.
inline std::vector<AblationRun> run_ablation(const Dataset& ds, const ModelConfig& mc, const ParamStore& pretrained,
                                             TrainConfig cfg, const std::vector<std::uint64_t>& seeds, JsonlLog& log) {
  std::vector<AblationRun> runs;
  for (auto s : seeds) {
    cfg.seed = s;
    AblationRun r;
    r.seed = s;
    auto with = run_finetune(ds, mc, &pretrained, cfg, log);
    auto without = run_finetune(ds, mc, nullptr, cfg, log);
    if (!with.rna_present.report || !without.rna_present.report) throw Error("ablation: test split has no comparable pair");
    r.pretrained_c = with.rna_present.report->c_index;
    r.random_c = without.rna_present.report->c_index;
    log.write({{"event", "ablation"}, {"seed", s}, {"pretrained_c_index", r.pretrained_c}, {"random_c_index", r.random_c}});
    runs.push_back(r);
  }
  return runs;
}

}  // namespace imputmae
