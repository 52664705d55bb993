#pragma once

#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "densr/dataset.hpp"
#include "densr/nn.hpp"
#include "densr/optim.hpp"
#include "densr/serialize.hpp"

namespace densr {

struct FeatureExtractorConfig {
  int width = 16;
  std::uint64_t seed = 0x5eedf00d;
  bool frozen = true;
};

/// VGG-style stack: four conv stages, two pooling stages. Stage outputs
/// (post-rectifier, pre-pool) are addressable as "conv1".."conv4".
/// Deterministically seeded; weights can be replaced from a weight file to
/// plug in a pretrained backbone.
template <class S>
class FeatureExtractor : public nn::Module<S> {
 public:
  explicit FeatureExtractor(const FeatureExtractorConfig& cfg = {}) : cfg_(cfg) {
    Pcg32 rng(cfg.seed, 0xfe47);
    const int w = cfg.width;
    conv1_ = std::make_unique<nn::Conv2d<S>>(3, w, 3, 1, 1, rng);
    conv2_ = std::make_unique<nn::Conv2d<S>>(w, w, 3, 1, 1, rng);
    conv3_ = std::make_unique<nn::Conv2d<S>>(w, 2 * w, 3, 1, 1, rng);
    conv4_ = std::make_unique<nn::Conv2d<S>>(2 * w, 2 * w, 3, 1, 1, rng);
    this->add_child("conv1", conv1_.get());
    this->add_child("conv2", conv2_.get());
    this->add_child("conv3", conv3_.get());
    this->add_child("conv4", conv4_.get());
    if (cfg.frozen) this->set_requires_grad(false);
    this->set_training(false);
  }

  static const std::vector<std::string>& layer_names() {
    static const std::vector<std::string> names = {"conv1", "conv2", "conv3", "conv4"};
    return names;
  }
  static std::string default_perceptual_layer() { return "conv4"; }  // before the 2nd pool

  /// Feature maps for the requested layers. Unknown ids raise.
  std::map<std::string, ag::Var<S>> extract(const ag::Var<S>& img,
                                            const std::vector<std::string>& layer_ids) const {
    std::set<std::string> want(layer_ids.begin(), layer_ids.end());
    for (const auto& id : want)
      if (std::find(layer_names().begin(), layer_names().end(), id) == layer_names().end())
        throw std::invalid_argument("unknown feature layer: " + id);

    std::map<std::string, ag::Var<S>> out;
    ag::Var<S> y = ag::relu(conv1_->forward(img));
    if (want.count("conv1")) out.emplace("conv1", y);
    y = ag::relu(conv2_->forward(y));
    if (want.count("conv2")) out.emplace("conv2", y);
    y = ag::avg_pool2(y);
    y = ag::relu(conv3_->forward(y));
    if (want.count("conv3")) out.emplace("conv3", y);
    y = ag::relu(conv4_->forward(y));
    if (want.count("conv4")) out.emplace("conv4", y);
    return out;
  }

  /// Pooled per-channel statistics of the deepest stage; the default feature
  /// vectors for distribution metrics.
  Tensor<S> pooled_descriptor(const Tensor<S>& img_chw) {
    ag::NoGradGuard ng;
    Tensor<S> batched = img_chw.reshaped({1, img_chw.shape[0], img_chw.shape[1], img_chw.shape[2]});
    auto feats = extract(ag::Var<S>::constant(batched), {"conv4"});
    ag::Var<S> pooled = ag::global_avg_pool(feats.at("conv4"));
    Tensor<S> v = pooled.value();
    return v.reshaped({v.shape[1]});
  }

  void save_weights(const std::string& path) {
    std::vector<std::pair<std::string, const Tensor<S>*>> arrays;
    this->for_each_param([&](const std::string& n, ag::Var<S>& p) {
      arrays.emplace_back(n, &p.value());
    });
    io::write_weights_file<S>(path, arrays);
  }
  void load_weights(const std::string& path) {
    auto arrays = io::read_weights_file<S>(path);
    this->for_each_param([&](const std::string& n, ag::Var<S>& p) {
      auto it = arrays.find(n);
      if (it == arrays.end()) throw std::runtime_error("weight file missing array: " + n);
      if (!(it->second.shape == p.value().shape))
        throw std::runtime_error("weight shape mismatch for " + n);
      p.mutable_value() = it->second;
    });
  }

 private:
  FeatureExtractorConfig cfg_;
  std::unique_ptr<nn::Conv2d<S>> conv1_, conv2_, conv3_, conv4_;
};

struct IdentityEmbedderConfig {
  int width = 16;
  int dim = 512;
  std::uint64_t seed = 0x1dba5e;
};

namespace embeddet {

/// BN-free residual unit; zero-initialized second conv makes it an identity
/// at construction.
template <class S>
class PlainResidual : public nn::Module<S> {
 public:
  PlainResidual(int channels, Pcg32& rng)
      : c1_(channels, channels, 3, 1, 1, rng), c2_(channels, channels, 3, 1, 1, rng, true) {
    this->add_child("c1", &c1_);
    this->add_child("c2", &c2_);
  }
  ag::Var<S> forward(const ag::Var<S>& x) const {
    return ag::add(x, c2_.forward(ag::leaky_relu(c1_.forward(x), S(0.2))));
  }

 private:
  nn::Conv2d<S> c1_, c2_;
};

}  // namespace embeddet

/// Residual conv trunk + global pooling + fully connected map to a fixed
/// embedding dimension. Pretrained briefly on toy identities, then frozen.
template <class S>
class IdentityEmbedder : public nn::Module<S> {
 public:
  explicit IdentityEmbedder(const IdentityEmbedderConfig& cfg = {}) : cfg_(cfg) {
    Pcg32 rng(cfg.seed, 0xe3bd);
    const int w = cfg.width;
    c0_ = std::make_unique<nn::Conv2d<S>>(3, w, 3, 2, 1, rng);
    r1_ = std::make_unique<embeddet::PlainResidual<S>>(w, rng);
    c1_ = std::make_unique<nn::Conv2d<S>>(w, 2 * w, 3, 2, 1, rng);
    r2_ = std::make_unique<embeddet::PlainResidual<S>>(2 * w, rng);
    c2_ = std::make_unique<nn::Conv2d<S>>(2 * w, 4 * w, 3, 2, 1, rng);
    fc_ = std::make_unique<nn::Linear<S>>(4 * w, cfg.dim, rng);
    this->add_child("c0", c0_.get());
    this->add_child("r1", r1_.get());
    this->add_child("c1", c1_.get());
    this->add_child("r2", r2_.get());
    this->add_child("c2", c2_.get());
    this->add_child("fc", fc_.get());
    this->set_training(false);
  }

  /// [N,3,H,W] -> [N,dim]
  ag::Var<S> embed(const ag::Var<S>& img) const {
    ag::Var<S> y = ag::leaky_relu(c0_->forward(img), S(0.2));
    y = r1_->forward(y);
    y = ag::leaky_relu(c1_->forward(y), S(0.2));
    y = r2_->forward(y);
    y = ag::leaky_relu(c2_->forward(y), S(0.2));
    return fc_->forward(ag::global_avg_pool(y));
  }

  Tensor<S> embed_one(const Tensor<S>& img_chw) {
    ag::NoGradGuard ng;
    Tensor<S> batched = img_chw.reshaped({1, img_chw.shape[0], img_chw.shape[1], img_chw.shape[2]});
    Tensor<S> e = embed(ag::Var<S>::constant(batched)).value();
    return e.reshaped({e.shape[1]});
  }

  int dim() const { return cfg_.dim; }

 private:
  IdentityEmbedderConfig cfg_;
  std::unique_ptr<nn::Conv2d<S>> c0_, c1_, c2_;
  std::unique_ptr<embeddet::PlainResidual<S>> r1_, r2_;
  std::unique_ptr<nn::Linear<S>> fc_;
};

/// Short classification run on procedural toy identities; the classifier
/// head is discarded and the embedder frozen afterwards.
template <class S>
void pretrain_identity_embedder(IdentityEmbedder<S>& embedder, int num_identities, int steps,
                                int batch, S lr, std::uint64_t seed) {
  const int variants = static_cast<int>(dataset::kVariantsPerIdentity);
  std::vector<Tensor<S>> faces;
  std::vector<int> ids;
  for (int id = 0; id < num_identities; ++id)
    for (int v = 0; v < variants; ++v) {
      faces.push_back(
          dataset::make_toy_face<S>(static_cast<std::uint64_t>(id) * variants + v).image);
      ids.push_back(id);
    }

  Pcg32 rng(seed, 0x1d7e11);
  nn::Linear<S> head(embedder.dim(), num_identities, rng);
  embedder.set_requires_grad(true);

  Adam<S> opt(lr, S(0.9), S(0.999));
  embedder.for_each_param([&](const std::string& n, ag::Var<S>& p) { opt.add_param(n, p); });
  head.for_each_param([&](const std::string& n, ag::Var<S>& p) { opt.add_param("head." + n, p); });

  const int h = faces[0].shape[1], w = faces[0].shape[2];
  for (int step = 0; step < steps; ++step) {
    Tensor<S> x({batch, 3, h, w});
    std::vector<int> labels(static_cast<std::size_t>(batch));
    for (int b = 0; b < batch; ++b) {
      const auto pick = rng.below(static_cast<std::uint32_t>(faces.size()));
      std::copy(faces[pick].data.begin(), faces[pick].data.end(),
                x.data.begin() + static_cast<std::int64_t>(b) * 3 * h * w);
      labels[static_cast<std::size_t>(b)] = ids[pick];
    }
    opt.zero_grad();
    ag::Var<S> logits = head.forward(embedder.embed(ag::Var<S>::leaf(std::move(x), false)));
    ag::Var<S> loss = ag::softmax_cross_entropy(logits, labels);
    ag::backward(loss);
    opt.step();
  }
  embedder.set_requires_grad(false);
}

}  // namespace densr
