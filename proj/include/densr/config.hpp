#pragma once

#include <cstdint>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include "densr/losses.hpp"

namespace densr {

/// Flat key = value configuration with [section] headers. Serialization is
/// deterministic (fixed field order), so effective-config echoes diff
/// cleanly across runs.
struct TrainConfig {
  // [data]
  std::string dataset_dir;
  int scale = 4;
  int num_landmarks = 81;
  int num_parsing_classes = 4;
  int prior_size = 32;

  // [model]
  int width_sr = 64;
  int width_noise = 32;
  int width_denoise = 64;
  int coarse_blocks = 3;
  int trunk_blocks = 2;
  int width_critic = 64;
  int width_features = 16;
  int width_identity = 16;
  int identity_dim = 512;

  // [train]
  int batch_size = 8;
  int total_steps = 300;
  int n_critic = 1;
  double learning_rate = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  std::uint64_t seed = 0;
  int checkpoint_every = 100;
  int eval_every = 0;  // 0 disables periodic evaluation
  int identity_pretrain_ids = 4;
  int identity_pretrain_steps = 40;
  double identity_pretrain_lr = 1e-3;

  // [loss]
  LossWeights weights;
  std::string perceptual_layer = "conv4";

  // [ablation]
  bool disable_style = false;
  bool disable_perceptual = false;
  bool disable_identity = false;
  bool disable_smooth = false;
  bool disable_attention = false;

  /// Reduced widths, a short identity pretrain, and desk-scale rebalancing
  /// of the sum-reduced regularizers (tv/smooth/prior), whose published
  /// weights assume full-dataset magnitudes; the configuration the
  /// smoke/acceptance runs use. Full defaults keep the published values.
  static TrainConfig smoke() {
    TrainConfig c;
    c.width_sr = 16;
    c.width_noise = 12;
    c.width_denoise = 16;
    c.coarse_blocks = 2;
    c.trunk_blocks = 1;
    c.width_critic = 16;
    c.width_features = 8;
    c.width_identity = 8;
    c.identity_dim = 64;
    c.identity_pretrain_ids = 2;
    c.identity_pretrain_steps = 10;
    c.weights.lambda1 = {0.5, 1e-4, 10.0, 0.1, 1.0, 1e-4};
    c.weights.lambda2 = {0.01, 0.1, 1.0, 1e-6, 0.1, 1e-3};
    return c;
  }

  void validate() const {
    if (scale != 4 && scale != 8) throw std::invalid_argument("scale must be 4 or 8");
    if (batch_size <= 0 || total_steps < 0 || n_critic <= 0)
      throw std::invalid_argument("counts must be positive");
    if (learning_rate <= 0) throw std::invalid_argument("learning rate must be positive");
    weights.validate();
  }

  std::string to_ini() const {
    std::ostringstream o;
    o.precision(17);
    o << "[data]\n";
    o << "dataset_dir = " << dataset_dir << "\n";
    o << "scale = " << scale << "\n";
    o << "num_landmarks = " << num_landmarks << "\n";
    o << "num_parsing_classes = " << num_parsing_classes << "\n";
    o << "prior_size = " << prior_size << "\n";
    o << "[model]\n";
    o << "width_sr = " << width_sr << "\n";
    o << "width_noise = " << width_noise << "\n";
    o << "width_denoise = " << width_denoise << "\n";
    o << "coarse_blocks = " << coarse_blocks << "\n";
    o << "trunk_blocks = " << trunk_blocks << "\n";
    o << "width_critic = " << width_critic << "\n";
    o << "width_features = " << width_features << "\n";
    o << "width_identity = " << width_identity << "\n";
    o << "identity_dim = " << identity_dim << "\n";
    o << "[train]\n";
    o << "batch_size = " << batch_size << "\n";
    o << "total_steps = " << total_steps << "\n";
    o << "n_critic = " << n_critic << "\n";
    o << "learning_rate = " << learning_rate << "\n";
    o << "beta1 = " << beta1 << "\n";
    o << "beta2 = " << beta2 << "\n";
    o << "seed = " << seed << "\n";
    o << "checkpoint_every = " << checkpoint_every << "\n";
    o << "eval_every = " << eval_every << "\n";
    o << "identity_pretrain_ids = " << identity_pretrain_ids << "\n";
    o << "identity_pretrain_steps = " << identity_pretrain_steps << "\n";
    o << "identity_pretrain_lr = " << identity_pretrain_lr << "\n";
    o << "[loss]\n";
    o << "alpha = " << weights.alpha << "\n";
    for (int i = 0; i < 6; ++i) o << "lambda1_" << (i + 1) << " = " << weights.lambda1[i] << "\n";
    for (int i = 0; i < 6; ++i) o << "lambda2_" << (i + 1) << " = " << weights.lambda2[i] << "\n";
    o << "eta = " << weights.eta << "\n";
    o << "mu = " << weights.mu << "\n";
    o << "nu = " << weights.nu << "\n";
    o << "perceptual_layer = " << perceptual_layer << "\n";
    o << "[ablation]\n";
    o << "disable_style = " << (disable_style ? 1 : 0) << "\n";
    o << "disable_perceptual = " << (disable_perceptual ? 1 : 0) << "\n";
    o << "disable_identity = " << (disable_identity ? 1 : 0) << "\n";
    o << "disable_smooth = " << (disable_smooth ? 1 : 0) << "\n";
    o << "disable_attention = " << (disable_attention ? 1 : 0) << "\n";
    return o.str();
  }

  static TrainConfig from_ini(const std::string& text) {
    TrainConfig c;
    c.apply_ini(text);
    return c;
  }

  /// Applies key = value lines over the current values; unknown keys raise.
  void apply_ini(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty() || line.front() == '[') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
      set_key(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }

  void set_key(const std::string& key, const std::string& value) {
    auto as_int = [&] { return std::stoi(value); };
    auto as_double = [&] { return std::stod(value); };
    auto as_u64 = [&] { return static_cast<std::uint64_t>(std::stoull(value)); };
    auto as_bool = [&] {
      if (value == "1" || value == "true" || value == "yes") return true;
      if (value == "0" || value == "false" || value == "no") return false;
      throw std::invalid_argument("bad boolean value: " + value);
    };

    if (key == "dataset_dir") dataset_dir = value;
    else if (key == "scale") scale = as_int();
    else if (key == "num_landmarks") num_landmarks = as_int();
    else if (key == "num_parsing_classes") num_parsing_classes = as_int();
    else if (key == "prior_size") prior_size = as_int();
    else if (key == "width_sr") width_sr = as_int();
    else if (key == "width_noise") width_noise = as_int();
    else if (key == "width_denoise") width_denoise = as_int();
    else if (key == "coarse_blocks") coarse_blocks = as_int();
    else if (key == "trunk_blocks") trunk_blocks = as_int();
    else if (key == "width_critic") width_critic = as_int();
    else if (key == "width_features") width_features = as_int();
    else if (key == "width_identity") width_identity = as_int();
    else if (key == "identity_dim") identity_dim = as_int();
    else if (key == "batch_size") batch_size = as_int();
    else if (key == "total_steps") total_steps = as_int();
    else if (key == "n_critic") n_critic = as_int();
    else if (key == "learning_rate") learning_rate = as_double();
    else if (key == "beta1") beta1 = as_double();
    else if (key == "beta2") beta2 = as_double();
    else if (key == "seed") seed = as_u64();
    else if (key == "checkpoint_every") checkpoint_every = as_int();
    else if (key == "eval_every") eval_every = as_int();
    else if (key == "identity_pretrain_ids") identity_pretrain_ids = as_int();
    else if (key == "identity_pretrain_steps") identity_pretrain_steps = as_int();
    else if (key == "identity_pretrain_lr") identity_pretrain_lr = as_double();
    else if (key == "alpha") weights.alpha = as_double();
    else if (key.rfind("lambda1_", 0) == 0) weights.lambda1[static_cast<std::size_t>(std::stoi(key.substr(8)) - 1)] = as_double();
    else if (key.rfind("lambda2_", 0) == 0) weights.lambda2[static_cast<std::size_t>(std::stoi(key.substr(8)) - 1)] = as_double();
    else if (key == "eta") weights.eta = as_double();
    else if (key == "mu") weights.mu = as_double();
    else if (key == "nu") weights.nu = as_double();
    else if (key == "perceptual_layer") perceptual_layer = value;
    else if (key == "disable_style") disable_style = as_bool();
    else if (key == "disable_perceptual") disable_perceptual = as_bool();
    else if (key == "disable_identity") disable_identity = as_bool();
    else if (key == "disable_smooth") disable_smooth = as_bool();
    else if (key == "disable_attention") disable_attention = as_bool();
    else throw std::invalid_argument("unknown config key: " + key);
  }

  std::uint64_t hash() const {
    const std::string s = to_ini();
    return fnv1a(s.data(), s.size());
  }
};

}  // namespace densr
