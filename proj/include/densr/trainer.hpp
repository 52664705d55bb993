#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "densr/config.hpp"
#include "densr/critic.hpp"
#include "densr/dataset.hpp"
#include "densr/features.hpp"
#include "densr/losses.hpp"
#include "densr/metrics.hpp"
#include "densr/optim.hpp"
#include "densr/serialize.hpp"
#include "densr/superres.hpp"

namespace densr {

template <class S>
struct TrainState {
  TrainConfig cfg;
  std::unique_ptr<Generator<S>> gen;
  std::unique_ptr<Critic<S>> critic;
  std::unique_ptr<FeatureExtractor<S>> feats;
  std::unique_ptr<IdentityEmbedder<S>> embedder;
  std::unique_ptr<Adam<S>> opt_g, opt_c;
  std::int64_t step = 0;
  Pcg32 rng;
};

template <class S>
struct Batch {
  Tensor<S> lr_masked, lr_clean, hr_clean, gamma_gt, landmarks_gt, parsing_gt;
  int size = 0;
};

namespace traindet {

template <class S>
Tensor<S> stack(const std::vector<const Tensor<S>*>& parts) {
  std::vector<int> shape = parts[0]->shape;
  shape.insert(shape.begin(), static_cast<int>(parts.size()));
  Tensor<S> out(shape);
  const std::int64_t per = parts[0]->numel();
  for (std::size_t i = 0; i < parts.size(); ++i)
    std::copy(parts[i]->data.begin(), parts[i]->data.end(),
              out.data.begin() + static_cast<std::int64_t>(i) * per);
  return out;
}

/// Counter-based RNG: every stochastic draw of a step is a pure function of
/// (seed, step, stream), which is what makes resume exact.
inline Pcg32 step_rng(std::uint64_t seed, std::int64_t step, std::uint64_t stream) {
  return Pcg32(seed ^ Pcg32::splitmix64(static_cast<std::uint64_t>(step) + 1), stream);
}

inline double term_weight(const LossWeights& w, const std::string& name) {
  for (int i = 0; i < 6; ++i)
    if (name == denoise_term_names()[static_cast<std::size_t>(i)]) return w.lambda1[static_cast<std::size_t>(i)];
  for (int i = 0; i < 6; ++i)
    if (name == fsr_term_names()[static_cast<std::size_t>(i)]) return w.lambda2[static_cast<std::size_t>(i)];
  throw std::logic_error("unknown loss term: " + name);
}

}  // namespace traindet

template <class S>
Batch<S> make_batch(const dataset::Dataset<S>& ds, const std::vector<int>& indices) {
  Batch<S> b;
  b.size = static_cast<int>(indices.size());
  auto gather = [&](auto member) {
    std::vector<const Tensor<S>*> parts;
    for (int i : indices) parts.push_back(&(ds.samples[static_cast<std::size_t>(i)].*member));
    return traindet::stack<S>(parts);
  };
  b.lr_masked = gather(&dataset::PairedSample<S>::lr_masked);
  b.lr_clean = gather(&dataset::PairedSample<S>::lr_clean);
  b.hr_clean = gather(&dataset::PairedSample<S>::hr_clean);
  b.gamma_gt = gather(&dataset::PairedSample<S>::gamma_gt);
  b.landmarks_gt = gather(&dataset::PairedSample<S>::landmarks_gt);
  b.parsing_gt = gather(&dataset::PairedSample<S>::parsing_gt);
  return b;
}

inline std::vector<int> batch_indices(const TrainConfig& cfg, std::int64_t step, int dataset_size) {
  Pcg32 rng = traindet::step_rng(cfg.seed, step, 0xba7c);
  std::vector<int> idx(static_cast<std::size_t>(cfg.batch_size));
  for (auto& i : idx) i = static_cast<int>(rng.below(static_cast<std::uint32_t>(dataset_size)));
  return idx;
}

template <class S>
TrainState<S> make_state(const TrainConfig& cfg, bool pretrain_embedder = true) {
  cfg.validate();
  TrainState<S> st;
  st.cfg = cfg;

  Pcg32 init_rng(cfg.seed, 0x12a7);
  DenoiserConfig dcfg;
  dcfg.noise_width = cfg.width_noise;
  dcfg.denoise_width = cfg.width_denoise;
  dcfg.attention = !cfg.disable_attention;
  SuperresConfig scfg;
  scfg.width = cfg.width_sr;
  scfg.coarse_blocks = cfg.coarse_blocks;
  scfg.trunk_blocks = cfg.trunk_blocks;
  scfg.num_landmarks = cfg.num_landmarks;
  scfg.parsing_classes = cfg.num_parsing_classes;
  scfg.scale = cfg.scale;
  scfg.attention = !cfg.disable_attention;
  st.gen = std::make_unique<Generator<S>>(dcfg, scfg, init_rng);

  CriticConfig ccfg;
  ccfg.base_width = cfg.width_critic;
  ccfg.input_size = dataset::kFaceSize;
  st.critic = std::make_unique<Critic<S>>(ccfg, init_rng);

  FeatureExtractorConfig fcfg;
  fcfg.width = cfg.width_features;
  fcfg.seed = Pcg32::splitmix64(cfg.seed ^ 0xfea7);
  st.feats = std::make_unique<FeatureExtractor<S>>(fcfg);

  IdentityEmbedderConfig icfg;
  icfg.width = cfg.width_identity;
  icfg.dim = cfg.identity_dim;
  icfg.seed = Pcg32::splitmix64(cfg.seed ^ 0x1d);
  st.embedder = std::make_unique<IdentityEmbedder<S>>(icfg);
  if (pretrain_embedder && !cfg.disable_identity && cfg.identity_pretrain_steps > 0)
    pretrain_identity_embedder(*st.embedder, cfg.identity_pretrain_ids,
                               cfg.identity_pretrain_steps, 8,
                               static_cast<S>(cfg.identity_pretrain_lr), cfg.seed ^ 0x1d01);

  st.opt_g = std::make_unique<Adam<S>>(static_cast<S>(cfg.learning_rate), static_cast<S>(cfg.beta1),
                                       static_cast<S>(cfg.beta2));
  st.gen->for_each_param(
      [&](const std::string& n, ag::Var<S>& p) { st.opt_g->add_param("gen." + n, p); });
  st.opt_c = std::make_unique<Adam<S>>(static_cast<S>(cfg.learning_rate), static_cast<S>(cfg.beta1),
                                       static_cast<S>(cfg.beta2));
  st.critic->for_each_param(
      [&](const std::string& n, ag::Var<S>& p) { st.opt_c->add_param("critic." + n, p); });

  st.rng = Pcg32(cfg.seed, 0xeb5);
  return st;
}

/// One optimization step: n_critic critic updates on [real HR | detached
/// generator output], then a single joint generator update on the full
/// composite objective. Returns the per-term report; the critic objective
/// value is written to critic_loss_out when given.
template <class S>
LossReport train_step(TrainState<S>& st, const Batch<S>& batch, double* critic_loss_out = nullptr) {
  const TrainConfig& cfg = st.cfg;
  const LossWeights& w = cfg.weights;
  st.gen->set_training(true);

  Var<S> lr_in = Var<S>::constant(batch.lr_masked);
  auto [den, trace] = st.gen->forward(lr_in);
  const Tensor<S>& fake = trace.sr.value();  // detached view for critic updates

  double closs = 0;
  for (int k = 0; k < cfg.n_critic; ++k) {
    Pcg32 erng = traindet::step_rng(cfg.seed, st.step, 0xe9 + static_cast<std::uint64_t>(k));
    std::vector<S> eps(static_cast<std::size_t>(batch.size));
    for (auto& e : eps) e = static_cast<S>(erng.uniform());
    st.opt_c->zero_grad();
    ag::Var<S> cl = critic_loss(*st.critic, batch.hr_clean, fake, eps, static_cast<S>(w.eta));
    closs = static_cast<double>(cl.item());
    if (!std::isfinite(closs)) throw std::runtime_error("non-finite loss term: critic");
    ag::backward(cl);
    st.opt_c->step();
  }

  Var<S> gamma_gt = Var<S>::constant(batch.gamma_gt);
  Var<S> lr_clean = Var<S>::constant(batch.lr_clean);
  Var<S> hr_clean = Var<S>::constant(batch.hr_clean);
  PriorTensor<S> prior_gt;
  prior_gt.parsing = Var<S>::constant(batch.parsing_gt);
  prior_gt.landmarks = Var<S>::constant(batch.landmarks_gt);

  std::vector<std::pair<std::string, Var<S>>> terms;
  terms.emplace_back("asym", asym_loss(den.gamma, gamma_gt, static_cast<S>(w.alpha)));
  terms.emplace_back("tv", tv_loss(den.gamma));
  if (!cfg.disable_style)
    terms.emplace_back("style_lr", style_loss(den.lr_denoised, lr_clean, *st.feats,
                                              FeatureExtractor<S>::layer_names()));
  if (!cfg.disable_perceptual)
    terms.emplace_back("per_lr",
                       perceptual_loss(den.lr_denoised, lr_clean, *st.feats, cfg.perceptual_layer));
  terms.emplace_back("pixel_lr", pixel_loss(den.lr_denoised, lr_clean));
  if (!cfg.disable_smooth) terms.emplace_back("smooth_lr", smooth_loss(den.lr_denoised));
  terms.emplace_back("fp", face_prior_loss(trace.prior, prior_gt, static_cast<S>(w.mu),
                                           static_cast<S>(w.nu)));
  if (!cfg.disable_perceptual)
    terms.emplace_back("per_hr", perceptual_loss(trace.sr, hr_clean, *st.feats, cfg.perceptual_layer));
  terms.emplace_back("pixel_hr", pixel_loss(trace.sr, hr_clean));
  if (!cfg.disable_smooth) terms.emplace_back("smooth_hr", smooth_loss(trace.sr));
  if (!cfg.disable_identity)
    terms.emplace_back("identity", identity_loss(trace.sr, hr_clean, *st.embedder));
  terms.emplace_back("adv", adversarial_generator_loss(*st.critic, trace.sr));

  Var<S> total;
  std::map<std::string, double> values;
  for (auto& [name, term] : terms) {
    const double v = static_cast<double>(term.item());
    if (!std::isfinite(v)) throw std::runtime_error("non-finite loss term: " + name);
    values[name] = v;
    Var<S> weighted = ag::mul_scalar(term, static_cast<S>(traindet::term_weight(w, name)));
    total = total.defined() ? ag::add(total, weighted) : weighted;
  }

  st.opt_g->zero_grad();
  ag::backward(total);
  st.opt_g->step();

  ++st.step;
  if (critic_loss_out) *critic_loss_out = closs;
  return LossReport::build(std::move(values), w);
}

/// True when at least one denoiser parameter receives gradient from the
/// super-resolution composite alone (the joint-training path).
template <class S>
bool joint_path_probe(TrainState<S>& st, const Batch<S>& batch) {
  const TrainConfig& cfg = st.cfg;
  const LossWeights& w = cfg.weights;
  st.gen->set_training(true);
  st.gen->zero_grad();

  auto [den, trace] = st.gen->forward(Var<S>::constant(batch.lr_masked));
  Var<S> hr_clean = Var<S>::constant(batch.hr_clean);
  PriorTensor<S> prior_gt;
  prior_gt.parsing = Var<S>::constant(batch.parsing_gt);
  prior_gt.landmarks = Var<S>::constant(batch.landmarks_gt);

  Var<S> fsr = ag::mul_scalar(
      face_prior_loss(trace.prior, prior_gt, static_cast<S>(w.mu), static_cast<S>(w.nu)),
      static_cast<S>(w.lambda2[0]));
  if (!cfg.disable_perceptual)
    fsr = ag::add(fsr, ag::mul_scalar(perceptual_loss(trace.sr, hr_clean, *st.feats, cfg.perceptual_layer),
                                      static_cast<S>(w.lambda2[1])));
  fsr = ag::add(fsr, ag::mul_scalar(pixel_loss(trace.sr, hr_clean), static_cast<S>(w.lambda2[2])));
  if (!cfg.disable_smooth)
    fsr = ag::add(fsr, ag::mul_scalar(smooth_loss(trace.sr), static_cast<S>(w.lambda2[3])));
  if (!cfg.disable_identity)
    fsr = ag::add(fsr, ag::mul_scalar(identity_loss(trace.sr, hr_clean, *st.embedder),
                                      static_cast<S>(w.lambda2[4])));
  fsr = ag::add(fsr, ag::mul_scalar(adversarial_generator_loss(*st.critic, trace.sr),
                                    static_cast<S>(w.lambda2[5])));
  ag::backward(fsr);

  bool nonzero = false;
  st.gen->denoiser().for_each_param([&](const std::string&, ag::Var<S>& p) {
    if (nonzero || !p.has_grad()) return;
    for (auto v : p.grad().data)
      if (v != S(0)) {
        nonzero = true;
        break;
      }
  });
  st.gen->zero_grad();
  return nonzero;
}

// ---------------------------------------------------------------------------
// Checkpointing: magic + version + step/rng header + length-prefixed named
// float32 arrays + the config text as trailer.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointMagic = 0x314b4344u;  // "DCK1"
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace traindet {

template <class S>
std::vector<std::pair<std::string, Tensor<S>*>> checkpoint_arrays(TrainState<S>& st) {
  std::vector<std::pair<std::string, Tensor<S>*>> arrays;
  st.gen->for_each_param([&](const std::string& n, ag::Var<S>& p) {
    arrays.emplace_back("gen." + n, &p.mutable_value());
  });
  st.gen->for_each_buffer(
      [&](const std::string& n, Tensor<S>& t) { arrays.emplace_back("gen_buf." + n, &t); });
  st.critic->for_each_param([&](const std::string& n, ag::Var<S>& p) {
    arrays.emplace_back("critic." + n, &p.mutable_value());
  });
  st.feats->for_each_param([&](const std::string& n, ag::Var<S>& p) {
    arrays.emplace_back("feat." + n, &p.mutable_value());
  });
  st.embedder->for_each_param([&](const std::string& n, ag::Var<S>& p) {
    arrays.emplace_back("id." + n, &p.mutable_value());
  });
  for (auto& slot : st.opt_g->slots()) {
    arrays.emplace_back("opt_g.m." + slot.name, &slot.m);
    arrays.emplace_back("opt_g.v." + slot.name, &slot.v);
  }
  for (auto& slot : st.opt_c->slots()) {
    arrays.emplace_back("opt_c.m." + slot.name, &slot.m);
    arrays.emplace_back("opt_c.v." + slot.name, &slot.v);
  }
  return arrays;
}

}  // namespace traindet

template <class S>
void save_checkpoint(TrainState<S>& st, const std::string& path) {
  io::detail::FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  auto w32 = [&](std::uint32_t v) { std::fwrite(&v, sizeof(v), 1, f.get()); };
  auto w64 = [&](std::uint64_t v) { std::fwrite(&v, sizeof(v), 1, f.get()); };
  w32(kCheckpointMagic);
  w32(kCheckpointVersion);
  w64(static_cast<std::uint64_t>(st.step));
  w64(st.rng.state());
  w64(st.rng.inc());
  w64(static_cast<std::uint64_t>(st.opt_g->step_count()));
  w64(static_cast<std::uint64_t>(st.opt_c->step_count()));

  auto arrays = traindet::checkpoint_arrays(st);
  w32(static_cast<std::uint32_t>(arrays.size()));
  for (auto& [name, t] : arrays) io::write_named_array(f.get(), name, *t);

  const std::string cfg = st.cfg.to_ini();
  w32(static_cast<std::uint32_t>(cfg.size()));
  std::fwrite(cfg.data(), 1, cfg.size(), f.get());
}

template <class S>
TrainState<S> load_checkpoint(const std::string& path) {
  io::detail::FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("cannot read checkpoint: " + path);
  auto r32 = [&] {
    std::uint32_t v = 0;
    if (std::fread(&v, sizeof(v), 1, f.get()) != 1) throw std::runtime_error("truncated checkpoint");
    return v;
  };
  auto r64 = [&] {
    std::uint64_t v = 0;
    if (std::fread(&v, sizeof(v), 1, f.get()) != 1) throw std::runtime_error("truncated checkpoint");
    return v;
  };
  if (r32() != kCheckpointMagic) throw std::runtime_error("bad checkpoint magic: " + path);
  if (r32() != kCheckpointVersion) throw std::runtime_error("unsupported checkpoint version: " + path);
  const std::uint64_t step = r64();
  const std::uint64_t rng_state = r64(), rng_inc = r64();
  const std::uint64_t tg = r64(), tc = r64();

  const std::uint32_t count = r32();
  std::map<std::string, Tensor<S>> loaded;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, t] = io::read_named_array<S>(f.get());
    loaded.emplace(std::move(name), std::move(t));
  }
  const std::uint32_t cfg_len = r32();
  std::string cfg_text(cfg_len, '\0');
  if (cfg_len && std::fread(cfg_text.data(), 1, cfg_len, f.get()) != cfg_len)
    throw std::runtime_error("truncated checkpoint config trailer");

  TrainState<S> st = make_state<S>(TrainConfig::from_ini(cfg_text), /*pretrain_embedder=*/false);
  auto arrays = traindet::checkpoint_arrays(st);
  for (auto& [name, t] : arrays) {
    auto it = loaded.find(name);
    if (it == loaded.end()) throw std::runtime_error("checkpoint missing array: " + name);
    if (!(it->second.shape == t->shape))
      throw std::runtime_error("checkpoint shape mismatch for " + name);
    *t = it->second;
  }
  st.step = static_cast<std::int64_t>(step);
  st.rng.set_state(rng_state, rng_inc);
  st.opt_g->set_step_count(static_cast<std::int64_t>(tg));
  st.opt_c->set_step_count(static_cast<std::int64_t>(tc));
  return st;
}

// ---------------------------------------------------------------------------
// Evaluation / fit / ablation
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> clamp01(Tensor<S> t) {
  for (auto& v : t.data) v = v < S(0) ? S(0) : (v > S(1) ? S(1) : v);
  return t;
}

/// Runs the generator over every sample in eval mode; PSNR/SSIM on the
/// luma channel against the HR ground truth, FID over pooled extractor
/// descriptors. Optionally returns the clamped outputs.
template <class S>
metrics::MetricsReport evaluate(TrainState<S>& st, const dataset::Dataset<S>& ds,
                                std::vector<Tensor<S>>* outputs = nullptr) {
  const bool was_training = st.gen->training();
  st.gen->set_training(false);
  metrics::MetricsReport rep;
  const int n = static_cast<int>(ds.samples.size());
  Tensor<double> fr, fg;
  for (int i = 0; i < n; ++i) {
    const auto& s = ds.samples[static_cast<std::size_t>(i)];
    ag::NoGradGuard ng;
    Tensor<S> in = s.lr_masked.reshaped({1, 3, s.lr_masked.shape[1], s.lr_masked.shape[2]});
    auto [den, trace] = st.gen->forward(Var<S>::constant(std::move(in)));
    Tensor<S> sr = clamp01(trace.sr.value().reshaped(
        {3, trace.sr.value().shape[2], trace.sr.value().shape[3]}));
    if (outputs) outputs->push_back(sr);

    metrics::SampleMetrics m;
    m.sample_id = dataset::sample_dir_name(i);
    const Tensor<double> ya = metrics::rgb_to_y(sr);
    const Tensor<double> yb = metrics::rgb_to_y(s.hr_clean);
    m.psnr_db = metrics::psnr(ya, yb);
    m.ssim = metrics::ssim(ya, yb);
    rep.rows.push_back(m);

    const Tensor<S> da = st.feats->pooled_descriptor(sr);
    const Tensor<S> db = st.feats->pooled_descriptor(s.hr_clean);
    if (i == 0) {
      fr = Tensor<double>({n, da.shape[0]});
      fg = Tensor<double>({n, da.shape[0]});
    }
    for (int j = 0; j < da.shape[0]; ++j) {
      fr.at2(i, j) = static_cast<double>(da[j]);
      fg.at2(i, j) = static_cast<double>(db[j]);
    }
  }
  rep.finalize();
  if (n >= 2) rep.fid = metrics::fid(fr, fg);
  rep.config_hash = std::to_string(st.cfg.hash());
  st.gen->set_training(was_training);
  return rep;
}

/// Full training loop: loads the dataset, builds (or resumes) the state,
/// writes one JSONL loss record per step, checkpoints on cadence and at the
/// end. Returns the final state.
template <class S>
TrainState<S> fit(TrainConfig cfg, const std::string& out_dir, const std::string& resume_path = "") {
  namespace fs = std::filesystem;
  if (!fs::exists(fs::path(cfg.dataset_dir) / "manifest.json"))
    throw std::runtime_error("dataset not found at: " + cfg.dataset_dir);
  dataset::Dataset<S> ds = dataset::load_dataset<S>(cfg.dataset_dir);
  cfg.scale = ds.meta.scale;
  cfg.num_landmarks = ds.meta.num_landmarks;
  cfg.num_parsing_classes = ds.meta.num_parsing_classes;
  cfg.prior_size = ds.meta.prior_size;
  cfg.validate();

  fs::create_directories(out_dir);
  TrainState<S> st = resume_path.empty() ? make_state<S>(cfg) : load_checkpoint<S>(resume_path);
  if (!resume_path.empty()) st.cfg.total_steps = cfg.total_steps;

  {
    std::ofstream echo(fs::path(out_dir) / "config.ini");
    echo << st.cfg.to_ini();
  }
  std::ofstream log(fs::path(out_dir) / "train_log.jsonl",
                    resume_path.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw std::runtime_error("cannot write training log in " + out_dir);

  const std::string ckpt = (fs::path(out_dir) / "checkpoint.bin").string();
  while (st.step < st.cfg.total_steps) {
    Batch<S> batch = make_batch(ds, batch_indices(st.cfg, st.step, static_cast<int>(ds.samples.size())));
    double closs = 0;
    LossReport rep = train_step(st, batch, &closs);
    nlohmann::json j = rep.to_json();
    j["step"] = st.step;
    j["critic_loss"] = closs;
    log << j.dump() << "\n";
    log.flush();
    if (st.cfg.checkpoint_every > 0 && st.step % st.cfg.checkpoint_every == 0 &&
        st.step < st.cfg.total_steps)
      save_checkpoint(st, ckpt);
    if (st.cfg.eval_every > 0 && st.step % st.cfg.eval_every == 0 && st.step < st.cfg.total_steps) {
      metrics::MetricsReport mrep = evaluate(st, ds);
      mrep.write_csv((fs::path(out_dir) / ("eval_step_" + std::to_string(st.step) + ".csv")).string());
    }
  }
  save_checkpoint(st, ckpt);
  return st;
}

inline const std::vector<std::string>& ablation_axis_names() {
  static const std::vector<std::string> axes = {"style", "perceptual", "identity", "smooth",
                                                "attention"};
  return axes;
}

inline TrainConfig apply_ablation_axis(TrainConfig cfg, const std::string& axis) {
  if (axis == "style") cfg.disable_style = true;
  else if (axis == "perceptual") cfg.disable_perceptual = true;
  else if (axis == "identity") cfg.disable_identity = true;
  else if (axis == "smooth") cfg.disable_smooth = true;
  else if (axis == "attention") cfg.disable_attention = true;
  else {
    std::string valid;
    for (const auto& a : ablation_axis_names()) valid += (valid.empty() ? "" : ", ") + a;
    throw std::invalid_argument("unknown ablation axis '" + axis + "' (valid: " + valid + ")");
  }
  return cfg;
}

struct AblationRow {
  std::string config;
  double psnr_db = 0, ssim = 0, fid = 0;
  std::size_t params = 0;
};

/// Trains one model per configuration (full + one per axis, identical seeds),
/// evaluates each on the same dataset, writes `config,psnr_db,ssim,fid,params`.
template <class S>
std::vector<AblationRow> run_ablation(const TrainConfig& base, const std::vector<std::string>& axes,
                                      const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::vector<std::pair<std::string, TrainConfig>> configs;
  configs.emplace_back("full", base);
  for (const auto& axis : axes) configs.emplace_back("no_" + axis, apply_ablation_axis(base, axis));

  fs::create_directories(out_dir);
  std::vector<AblationRow> rows;
  for (auto& [name, cfg] : configs) {
    TrainState<S> st = fit<S>(cfg, (fs::path(out_dir) / ("ablate_" + name)).string());
    dataset::Dataset<S> ds = dataset::load_dataset<S>(cfg.dataset_dir);
    metrics::MetricsReport rep = evaluate(st, ds);
    AblationRow row;
    row.config = name;
    row.psnr_db = rep.mean_psnr;
    row.ssim = rep.mean_ssim;
    row.fid = rep.fid;
    row.params = st.gen->param_count();
    rows.push_back(row);
  }

  std::ofstream csv(fs::path(out_dir) / "ablation.csv");
  csv << "config,psnr_db,ssim,fid,params\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%zu\n", r.config.c_str(), r.psnr_db, r.ssim,
                  r.fid, r.params);
    csv << buf;
  }
  return rows;
}

template <class S>
std::size_t count_params(nn::Module<S>& model) {
  return model.param_count();
}

template <class S>
std::int64_t count_multiadds(const Generator<S>& gen, int lr_h, int lr_w) {
  return gen.multiadds(lr_h, lr_w);
}

}  // namespace densr
