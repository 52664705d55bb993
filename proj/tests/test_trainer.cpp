#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "densr/trainer.hpp"

using namespace densr;

namespace {

namespace fs = std::filesystem;

std::string temp_dir(const char* tag) {
  auto p = fs::temp_directory_path() / (std::string("densr_trainer_") + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

TrainConfig tiny_config(const std::string& dataset_dir) {
  TrainConfig c = TrainConfig::smoke();
  c.dataset_dir = dataset_dir;
  c.width_sr = 8;
  c.width_noise = 8;
  c.width_denoise = 8;
  c.coarse_blocks = 1;
  c.trunk_blocks = 1;
  c.width_critic = 8;
  c.width_features = 4;
  c.width_identity = 4;
  c.identity_dim = 16;
  c.identity_pretrain_steps = 2;
  c.identity_pretrain_ids = 2;
  c.batch_size = 2;
  c.total_steps = 2;
  c.checkpoint_every = 0;
  c.seed = 3;
  return c;
}

const std::string& shared_dataset() {
  static std::string dir = [] {
    std::string d = temp_dir("data");
    dataset::SampleConfig scfg;
    auto samples = dataset::synthesize_dataset<float>(5, 3, scfg, 81, 4);
    dataset::DatasetMeta meta;
    meta.seed = 5;
    meta.count = 3;
    dataset::write_dataset(samples, d, meta);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("train step: update partition between critic and generator") {
  TrainConfig cfg = tiny_config(shared_dataset());
  auto ds = dataset::load_dataset<float>(cfg.dataset_dir);
  cfg.num_landmarks = ds.meta.num_landmarks;
  TrainState<float> st = make_state<float>(cfg, /*pretrain_embedder=*/false);
  Batch<float> batch = make_batch(ds, {0, 1});

  // critic-only update leaves generator parameters untouched
  const std::uint64_t gen_h0 = st.gen->param_hash();
  {
    Pcg32 erng(1, 2);
    std::vector<float> eps = {0.3f, 0.6f};
    st.opt_c->zero_grad();
    ag::NoGradGuard ng;
    Tensor<float> fake(batch.hr_clean.shape, 0.25f);
    (void)erng;
    ag::GradGuard gg(true);
    auto cl = critic_loss(*st.critic, batch.hr_clean, fake, eps, 0.1f);
    ag::backward(cl);
    st.opt_c->step();
  }
  REQUIRE(st.gen->param_hash() == gen_h0);

  // a full step with nonzero losses changes at least one denoiser parameter
  const std::uint64_t critic_h1 = st.critic->param_hash();
  const std::uint64_t den_h0 = st.gen->denoiser().param_hash();
  LossReport rep = train_step(st, batch);
  REQUIRE(st.gen->denoiser().param_hash() != den_h0);
  REQUIRE(rep.l_total > 0.0);
  REQUIRE(st.critic->param_hash() != critic_h1);  // critic stepped too

  // all published term names are present without ablation
  for (const char* n : denoise_term_names()) REQUIRE(rep.terms.count(n) == 1);
  for (const char* n : fsr_term_names()) REQUIRE(rep.terms.count(n) == 1);
}

TEST_CASE("zero loss weights leave generator parameters exactly unchanged") {
  TrainConfig cfg = tiny_config(shared_dataset());
  cfg.weights.lambda1.fill(0.0);
  cfg.weights.lambda2.fill(0.0);
  auto ds = dataset::load_dataset<float>(cfg.dataset_dir);
  TrainState<float> st = make_state<float>(cfg, false);
  Batch<float> batch = make_batch(ds, {0, 1});

  const std::uint64_t h0 = st.gen->param_hash();
  train_step(st, batch);
  REQUIRE(st.gen->param_hash() == h0);
}

TEST_CASE("joint-path probe: fsr composite reaches denoiser parameters") {
  TrainConfig cfg = tiny_config(shared_dataset());
  auto ds = dataset::load_dataset<float>(cfg.dataset_dir);
  TrainState<float> st = make_state<float>(cfg, false);
  Batch<float> batch = make_batch(ds, {0, 1});
  REQUIRE(joint_path_probe(st, batch));
}

TEST_CASE("non-finite loss aborts naming the offending term") {
  TrainConfig cfg = tiny_config(shared_dataset());
  auto ds = dataset::load_dataset<float>(cfg.dataset_dir);
  TrainState<float> st = make_state<float>(cfg, false);
  Batch<float> batch = make_batch(ds, {0, 1});

  // poison one denoiser parameter
  bool done = false;
  st.gen->denoiser().for_each_param([&](const std::string&, Var<float>& p) {
    if (done) return;
    p.mutable_value()[0] = std::numeric_limits<float>::quiet_NaN();
    done = true;
  });
  try {
    train_step(st, batch);
    FAIL("expected a non-finite abort");
  } catch (const std::runtime_error& e) {
    REQUIRE(std::string(e.what()).find("non-finite loss term:") != std::string::npos);
  }
}

TEST_CASE("checkpoint: byte-identical save/load/save and exact resume") {
  const std::string out = temp_dir("ckpt");
  TrainConfig cfg = tiny_config(shared_dataset());
  cfg.total_steps = 2;

  // uninterrupted: 2 steps, checkpoint after step 2, then step 3
  TrainState<float> st = fit<float>(cfg, out + "/run");
  const std::string cp = out + "/state.bin";
  save_checkpoint(st, cp);

  auto ds = dataset::load_dataset<float>(cfg.dataset_dir);
  Batch<float> batch3 = make_batch(ds, batch_indices(st.cfg, st.step, 3));
  double closs_a = 0;
  LossReport next_a = train_step(st, batch3, &closs_a);

  // resumed: load the checkpoint, take the same step
  TrainState<float> rs = load_checkpoint<float>(cp);
  REQUIRE(rs.step == 2);
  Batch<float> batch3b = make_batch(ds, batch_indices(rs.cfg, rs.step, 3));
  double closs_b = 0;
  LossReport next_b = train_step(rs, batch3b, &closs_b);

  REQUIRE(next_a.terms == next_b.terms);
  REQUIRE(next_a.l_total == next_b.l_total);
  REQUIRE(closs_a == closs_b);

  // save -> load -> save produces identical bytes
  const std::string cp2 = out + "/state2.bin";
  TrainState<float> rs2 = load_checkpoint<float>(cp);
  save_checkpoint(rs2, cp2);
  std::ifstream f1(cp, std::ios::binary), f2(cp2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  REQUIRE(b1 == b2);

  fs::remove_all(out);
}

TEST_CASE("fit writes one log record per step and a config echo") {
  const std::string out = temp_dir("fit");
  TrainConfig cfg = tiny_config(shared_dataset());
  cfg.total_steps = 3;
  TrainState<float> st = fit<float>(cfg, out);
  REQUIRE(st.step == 3);

  std::ifstream log(fs::path(out) / "train_log.jsonl");
  int records = 0;
  std::string line;
  std::vector<nlohmann::json> parsed;
  while (std::getline(log, line)) {
    parsed.push_back(nlohmann::json::parse(line));
    ++records;
  }
  REQUIRE(records == 3);

  // every record's totals recompute from its terms
  for (const auto& j : parsed) {
    LossReport r = LossReport::from_json(j);
    LossReport re = LossReport::build(r.terms, cfg.weights);
    REQUIRE(std::abs(re.l_total - r.l_total) <= 1e-9 * std::max(1.0, std::abs(r.l_total)));
  }

  REQUIRE(fs::exists(fs::path(out) / "config.ini"));
  REQUIRE(fs::exists(fs::path(out) / "checkpoint.bin"));

  // missing dataset produces an error naming the path
  TrainConfig bad = cfg;
  bad.dataset_dir = "/nonexistent/deadbeef";
  try {
    fit<float>(bad, out + "/bad");
    FAIL("expected missing-dataset error");
  } catch (const std::runtime_error& e) {
    REQUIRE(std::string(e.what()).find("/nonexistent/deadbeef") != std::string::npos);
  }
  fs::remove_all(out);
}

TEST_CASE("ablation harness: rows, switch effects, parameter reduction") {
  const std::string out = temp_dir("ablate");
  TrainConfig cfg = tiny_config(shared_dataset());
  cfg.total_steps = 1;

  auto rows = run_ablation<float>(cfg, ablation_axis_names(), out);
  REQUIRE(rows.size() == 6);
  REQUIRE(rows[0].config == "full");

  std::size_t full_params = rows[0].params;
  for (const auto& r : rows) {
    if (r.config == "no_attention") REQUIRE(r.params < full_params);
    else REQUIRE(r.params == full_params);
  }

  std::ifstream csv(fs::path(out) / "ablation.csv");
  std::string line;
  std::getline(csv, line);
  REQUIRE(line == "config,psnr_db,ssim,fid,params");
  int n = 0;
  while (std::getline(csv, line)) ++n;
  REQUIRE(n == 6);

  // a disabled loss is absent from the logged report
  {
    std::ifstream log(fs::path(out) / "ablate_no_style" / "train_log.jsonl");
    std::getline(log, line);
    auto j = nlohmann::json::parse(line);
    REQUIRE(j["terms"].count("style_lr") == 0);
    REQUIRE(j["terms"].count("pixel_lr") == 1);
  }

  REQUIRE_THROWS_AS(apply_ablation_axis(cfg, "bogus"), std::invalid_argument);
  fs::remove_all(out);
}

TEST_CASE("config: ini round trip, unknown keys, validation") {
  TrainConfig c = TrainConfig::smoke();
  c.dataset_dir = "/tmp/x";
  c.seed = 42;
  c.weights.lambda1[2] = 3.5;
  TrainConfig d = TrainConfig::from_ini(c.to_ini());
  REQUIRE(d.hash() == c.hash());
  REQUIRE(d.weights.lambda1[2] == 3.5);
  REQUIRE(d.seed == 42);

  REQUIRE_THROWS_AS(TrainConfig::from_ini("bogus_key = 1\n"), std::invalid_argument);
  TrainConfig bad;
  bad.scale = 5;
  REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("parameter and multiply-add accounting entry points") {
  struct Empty : nn::Module<float> {};
  Empty empty;
  REQUIRE(count_params(empty) == 0);

  TrainConfig cfg = tiny_config(shared_dataset());
  TrainState<float> st = make_state<float>(cfg, false);
  REQUIRE(count_params(*st.gen) > 0);
  const std::int64_t macs4 = count_multiadds(*st.gen, 32, 32);
  REQUIRE(macs4 > 0);

  // attention removal strictly reduces parameters at equal widths
  TrainConfig noatt = cfg;
  noatt.disable_attention = true;
  TrainState<float> st2 = make_state<float>(noatt, false);
  REQUIRE(count_params(*st2.gen) < count_params(*st.gen));
}
