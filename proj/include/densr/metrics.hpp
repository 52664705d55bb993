#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "densr/tensor.hpp"

namespace densr {
namespace metrics {

/// Full-range BT.601 luma: Y = 0.299 R + 0.587 G + 0.114 B.
template <class S>
Tensor<double> rgb_to_y(const Tensor<S>& img) {
  if (img.rank() != 3 || img.shape[0] != 3) throw std::invalid_argument("rgb_to_y expects [3,H,W]");
  const int h = img.shape[1], w = img.shape[2];
  Tensor<double> y({h, w});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      y.at2(i, j) = 0.299 * static_cast<double>(img.at3(0, i, j)) +
                    0.587 * static_cast<double>(img.at3(1, i, j)) +
                    0.114 * static_cast<double>(img.at3(2, i, j));
  return y;
}

/// 10*log10(1/MSE) for images in [0,1]; +infinity for identical inputs.
inline double psnr(const Tensor<double>& a, const Tensor<double>& b) {
  check_same_shape(a, b, "psnr");
  double mse = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    const double d = a[i] - b[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.numel());
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

namespace detail {
inline std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(static_cast<std::size_t>(size));
  const double c = (size - 1) / 2.0;
  double sum = 0;
  for (int i = 0; i < size; ++i) {
    w[static_cast<std::size_t>(i)] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
    sum += w[static_cast<std::size_t>(i)];
  }
  for (auto& v : w) v /= sum;
  return w;
}

/// Separable valid-mode filtering of a [H,W] map.
inline Tensor<double> filter_valid(const Tensor<double>& img, const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int h = img.shape[0], w = img.shape[1];
  Tensor<double> mid({h, w - n + 1});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x + n <= w; ++x) {
      double acc = 0;
      for (int i = 0; i < n; ++i) acc += k[static_cast<std::size_t>(i)] * img.at2(y, x + i);
      mid.at2(y, x) = acc;
    }
  Tensor<double> out({h - n + 1, w - n + 1});
  for (int y = 0; y + n <= h; ++y)
    for (int x = 0; x < mid.shape[1]; ++x) {
      double acc = 0;
      for (int i = 0; i < n; ++i) acc += k[static_cast<std::size_t>(i)] * mid.at2(y + i, x);
      out.at2(y, x) = acc;
    }
  return out;
}
}  // namespace detail

struct SsimConfig {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01, k2 = 0.03;
  double range = 1.0;
};

/// Mean local SSIM over an 11x11 Gaussian window (valid region).
inline double ssim(const Tensor<double>& a, const Tensor<double>& b, const SsimConfig& cfg = {}) {
  check_same_shape(a, b, "ssim");
  if (a.rank() != 2) throw std::invalid_argument("ssim expects [H,W]");
  if (a.shape[0] < cfg.window || a.shape[1] < cfg.window)
    throw std::invalid_argument("ssim: image smaller than the window");
  const auto k = detail::gaussian_window(cfg.window, cfg.sigma);
  const double c1 = (cfg.k1 * cfg.range) * (cfg.k1 * cfg.range);
  const double c2 = (cfg.k2 * cfg.range) * (cfg.k2 * cfg.range);

  Tensor<double> aa(a.shape), bb(a.shape), ab(a.shape);
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const Tensor<double> mu_a = detail::filter_valid(a, k);
  const Tensor<double> mu_b = detail::filter_valid(b, k);
  const Tensor<double> e_aa = detail::filter_valid(aa, k);
  const Tensor<double> e_bb = detail::filter_valid(bb, k);
  const Tensor<double> e_ab = detail::filter_valid(ab, k);

  double total = 0;
  for (std::int64_t i = 0; i < mu_a.numel(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = e_aa[i] - ma * ma;
    const double vb = e_bb[i] - mb * mb;
    const double cov = e_ab[i] - ma * mb;
    total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(mu_a.numel());
}

/// Frechet distance between Gaussian fits of two feature sets [N,D]:
/// ||mu1-mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}), matrix square roots via
/// symmetric eigendecomposition with negative eigenvalues clamped to zero
/// (tolerated down to -1e-8).
inline double fid(const Tensor<double>& feats_a, const Tensor<double>& feats_b) {
  if (feats_a.rank() != 2 || feats_b.rank() != 2) throw std::invalid_argument("fid expects [N,D]");
  if (feats_a.shape[1] != feats_b.shape[1]) throw std::invalid_argument("fid: dimension mismatch");
  if (feats_a.shape[0] < 2 || feats_b.shape[0] < 2)
    throw std::invalid_argument("fid: need at least 2 samples per set");
  const int d = feats_a.shape[1];

  auto stats = [d](const Tensor<double>& f) {
    const int n = f.shape[0];
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(d);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) mu[j] += f.at2(i, j);
    mu /= n;
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd x(d);
      for (int j = 0; j < d; ++j) x[j] = f.at2(i, j) - mu[j];
      cov.noalias() += x * x.transpose();
    }
    cov /= (n - 1);
    return std::make_pair(mu, cov);
  };

  auto [mu1, s1] = stats(feats_a);
  auto [mu2, s2] = stats(feats_b);

  auto psd_sqrt = [](const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    Eigen::VectorXd ev = es.eigenvalues();
    for (int i = 0; i < ev.size(); ++i) ev[i] = ev[i] > 0 ? std::sqrt(ev[i]) : 0.0;
    return Eigen::MatrixXd(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
  };

  const Eigen::MatrixXd a_half = psd_sqrt(s1);
  // Tr((S1 S2)^{1/2}) = Tr((S1^{1/2} S2 S1^{1/2})^{1/2})
  Eigen::MatrixXd inner = a_half * s2 * a_half;
  inner = 0.5 * (inner + inner.transpose());  // symmetrize against roundoff
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inner);
  double tr_sqrt = 0;
  for (int i = 0; i < es.eigenvalues().size(); ++i) {
    const double ev = es.eigenvalues()[i];
    tr_sqrt += ev > 0 ? std::sqrt(ev) : 0.0;  // clamp, tolerated to -1e-8
  }

  const double mean_term = (mu1 - mu2).squaredNorm();
  return mean_term + s1.trace() + s2.trace() - 2.0 * tr_sqrt;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct SampleMetrics {
  std::string sample_id;
  double psnr_db = 0;
  double ssim = 0;
};

struct MetricsReport {
  std::vector<SampleMetrics> rows;
  double mean_psnr = 0, mean_ssim = 0, fid = 0;
  std::string config_hash;

  void finalize() {
    mean_psnr = mean_ssim = 0;
    for (const auto& r : rows) {
      mean_psnr += r.psnr_db;
      mean_ssim += r.ssim;
    }
    if (!rows.empty()) {
      mean_psnr /= static_cast<double>(rows.size());
      mean_ssim /= static_cast<double>(rows.size());
    }
  }

  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write metrics CSV: " + path);
    out << "sample_id,psnr_db,ssim\n";
    char buf[128];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f\n", r.sample_id.c_str(), r.psnr_db, r.ssim);
      out << buf;
    }
    std::snprintf(buf, sizeof(buf), "mean,%.6f,%.6f\n", mean_psnr, mean_ssim);
    out << buf;
    std::snprintf(buf, sizeof(buf), "fid,%.6f,\n", fid);
    out << buf;
    out << "config_hash," << config_hash << ",\n";
  }
};

}  // namespace metrics
}  // namespace densr
