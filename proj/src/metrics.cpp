#include "demorph/metrics.hpp"

#include <array>
#include <cmath>

#include <Eigen/Dense>

namespace demorph {

namespace {

bool found_match(const std::optional<Embedding>& a, const std::optional<Embedding>& b, double tau,
                 std::optional<double>* sim = nullptr) {
  const auto d = decide_match(a, b, tau);
  if (sim) *sim = d.result.similarity;
  return d.matched;
}

std::array<double, kSsimWindow> gaussian_window() {
  std::array<double, kSsimWindow> g{};
  double sum = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double x = i - kSsimWindow / 2;
    g[i] = std::exp(-(x * x) / (2.0 * kSsimSigma * kSsimSigma));
    sum += g[i];
  }
  for (auto& v : g) v /= sum;
  return g;
}

// Valid-mode separable filtering of an h x w plane.
std::vector<double> filter_valid(const std::vector<double>& plane, int h, int w,
                                 const std::array<double, kSsimWindow>& g) {
  const int oh = h - kSsimWindow + 1;
  const int ow = w - kSsimWindow + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kSsimWindow; ++k) acc += g[k] * plane[y * w + x + k];
      rows[y * ow + x] = acc;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kSsimWindow; ++k) acc += g[k] * rows[(y + k) * ow + x];
      out[y * ow + x] = acc;
    }
  }
  return out;
}

Eigen::MatrixXd to_matrix(const std::vector<std::vector<double>>& rows, const char* what) {
  if (rows.empty()) throw MetricError(std::string("fid: ") + what + " is empty");
  const std::size_t dim = rows.front().size();
  Eigen::MatrixXd m(rows.size(), dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != dim) throw DimensionError("fid: inconsistent feature lengths");
    for (std::size_t j = 0; j < dim; ++j) m(i, j) = rows[i][j];
  }
  return m;
}

Eigen::MatrixXd covariance(const Eigen::MatrixXd& x, const Eigen::VectorXd& mean) {
  const Eigen::MatrixXd centered = x.rowwise() - mean.transpose();
  return (centered.transpose() * centered) / static_cast<double>(x.rows() - 1);
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

std::vector<std::vector<double>> embed_all(std::span<const Image> images, const Comparator& embedder) {
  std::vector<std::vector<double>> out;
  out.reserve(images.size());
  for (const auto& img : images) {
    auto e = embedder.embed(img);
    if (!e) throw MetricError("fid: embedder found no face in an input image");
    out.push_back(std::move(e->vector));
  }
  return out;
}

}  // namespace

MatchAccuracy match_accuracy(std::span<const ImagePair> pairs, const Comparator& comparator,
                             double tau, bool exclude_not_found) {
  if (pairs.empty()) throw MetricError("match_accuracy: no pairs");
  MatchAccuracy acc;
  for (const auto& [a, b] : pairs) {
    const auto d = is_match(comparator, a, b, tau);
    if (d.result.status == MatchResult::Status::NotFound) {
      ++acc.not_found;
      if (exclude_not_found) continue;
    }
    ++acc.evaluated;
    if (d.matched) ++acc.matches;
  }
  if (acc.evaluated == 0) throw MetricError("match_accuracy: every pair was NotFound");
  acc.value = static_cast<double>(acc.matches) / acc.evaluated;
  return acc;
}

RestorationAccuracy restoration_accuracy(std::span<const RestorationInput> results,
                                         const Comparator& comparator, double tau) {
  if (results.empty()) throw MetricError("restoration_accuracy: no results");
  RestorationAccuracy out;
  int ok1 = 0;
  int ok2 = 0;
  for (const auto& r : results) {
    const auto e_o1 = comparator.embed(r.o1);
    const auto e_o2 = comparator.embed(r.o2);
    const auto e_b1 = comparator.embed(r.b1);
    const auto e_b2 = comparator.embed(r.b2);
    RestorationRecord rec;
    const bool m11 = found_match(e_o1, e_b1, tau, &rec.o1_b1);
    const bool m12 = found_match(e_o1, e_b2, tau, &rec.o1_b2);
    const bool m21 = found_match(e_o2, e_b1, tau, &rec.o2_b1);
    const bool m22 = found_match(e_o2, e_b2, tau, &rec.o2_b2);
    rec.not_found = !(e_o1 && e_o2 && e_b1 && e_b2);
    // NotFound similarities count as -1, the floor of the clamped range.
    auto s = [](const std::optional<double>& v) { return v.value_or(-1.0); };
    const double natural = s(rec.o1_b1) + s(rec.o2_b2);
    const double swapped = s(rec.o1_b2) + s(rec.o2_b1);
    rec.swapped = swapped > natural;
    if (rec.swapped) {
      rec.subject1_correct = m21 && !m22;
      rec.subject2_correct = m12 && !m11;
    } else {
      rec.subject1_correct = m11 && !m12;
      rec.subject2_correct = m22 && !m21;
    }
    ok1 += rec.subject1_correct;
    ok2 += rec.subject2_correct;
    out.records.push_back(rec);
  }
  out.subject1 = static_cast<double>(ok1) / results.size();
  out.subject2 = static_cast<double>(ok2) / results.size();
  return out;
}

LeakageReport component_leakage(Decomposer<float>& decomposer, Merger<float>& merger,
                                std::span<const Image> images, const Comparator& comparator,
                                double tau) {
  if (merger.config().heads != 1) {
    throw ModeError("component leakage needs a decomposition-mode (one-head) checkpoint");
  }
  const int k = merger.config().k;
  LeakageReport rep;
  rep.images = static_cast<int>(images.size());
  rep.leak_rate.assign(k, 0.0);
  rep.leak_rate_found.assign(k, std::nullopt);
  rep.not_found.assign(k, 0);
  std::vector<int> leaks(k, 0);
  int rec_matches = 0;
  for (const auto& image : images) {
    const auto reference = comparator.embed(image);
    const ComponentSet comps = decompose(decomposer, image);
    const auto rec = decide_match(reference, comparator.embed(merge(merger, 0, comps)), tau);
    rec_matches += rec.matched;
    rep.reconstruction_not_found += rec.result.status == MatchResult::Status::NotFound;
    for (int i = 0; i < k; ++i) {
      const ComponentSet replicated(k, comps[i]);
      const auto d = decide_match(reference, comparator.embed(merge(merger, 0, replicated)), tau);
      leaks[i] += d.matched;
      rep.not_found[i] += d.result.status == MatchResult::Status::NotFound;
    }
  }
  if (rep.images > 0) {
    rep.reconstruction_rate = static_cast<double>(rec_matches) / rep.images;
    const int found = rep.images - rep.reconstruction_not_found;
    if (found > 0) rep.reconstruction_rate_found = static_cast<double>(rec_matches) / found;
    for (int i = 0; i < k; ++i) {
      rep.leak_rate[i] = static_cast<double>(leaks[i]) / rep.images;
      const int f = rep.images - rep.not_found[i];
      if (f > 0) rep.leak_rate_found[i] = static_cast<double>(leaks[i]) / f;
    }
  }
  return rep;
}

double ssim(const Image& a, const Image& b) {
  require_same_shape(a.shape(), b.shape(), "ssim");
  const Shape s = a.shape();
  if (s.h < kSsimWindow || s.w < kSsimWindow) {
    throw MetricError("ssim: image " + s.str() + " is smaller than the 11x11 window");
  }
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  const auto g = gaussian_window();
  const std::size_t plane = s.plane();
  double total = 0.0;
  std::size_t windows = 0;
  for (int p = 0; p < s.n * s.c; ++p) {
    std::vector<double> x(plane), y(plane), xx(plane), yy(plane), xy(plane);
    for (std::size_t i = 0; i < plane; ++i) {
      x[i] = a.data()[p * plane + i];
      y[i] = b.data()[p * plane + i];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, s.h, s.w, g);
    const auto my = filter_valid(y, s.h, s.w, g);
    const auto mxx = filter_valid(xx, s.h, s.w, g);
    const auto myy = filter_valid(yy, s.h, s.w, g);
    const auto mxy = filter_valid(xy, s.h, s.w, g);
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = mxx[i] - mx[i] * mx[i];
      const double vy = myy[i] - my[i] * my[i];
      const double cxy = mxy[i] - mx[i] * my[i];
      total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2)) /
               ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    windows += mx.size();
  }
  return total / static_cast<double>(windows);
}

double psnr(const Image& a, const Image& b) {
  require_same_shape(a.shape(), b.shape(), "psnr");
  double se = 0.0;
  auto x = a.values();
  auto y = b.values();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - y[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(x.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double fid_from_features(const std::vector<std::vector<double>>& a,
                         const std::vector<std::vector<double>>& b) {
  const Eigen::MatrixXd xa = to_matrix(a, "first set");
  const Eigen::MatrixXd xb = to_matrix(b, "second set");
  if (xa.cols() != xb.cols()) throw DimensionError("fid: feature dimensions differ");
  const Eigen::Index need = xa.cols() + 1;
  if (xa.rows() < need || xb.rows() < need) {
    throw MetricError("fid: each set needs at least " + std::to_string(need) + " samples, got " +
                      std::to_string(xa.rows()) + " and " + std::to_string(xb.rows()));
  }
  const Eigen::VectorXd mu_a = xa.colwise().mean();
  const Eigen::VectorXd mu_b = xb.colwise().mean();
  const Eigen::MatrixXd sa = covariance(xa, mu_a);
  const Eigen::MatrixXd sb = covariance(xb, mu_b);
  // tr((Sa Sb)^1/2) == tr((Sa^1/2 Sb Sa^1/2)^1/2), which is symmetric PSD.
  const Eigen::MatrixXd ra = psd_sqrt(sa);
  const Eigen::MatrixXd inner = ra * sb * ra;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()),
                                                    Eigen::EigenvaluesOnly);
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  return (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
}

double fid(std::span<const Image> set_a, std::span<const Image> set_b, const Comparator& embedder) {
  return fid_from_features(embed_all(set_a, embedder), embed_all(set_b, embedder));
}

int fid_min_samples(const Comparator& embedder, const Image& probe) {
  auto e = embedder.embed(probe);
  if (!e) throw MetricError("fid: embedder found no face in the probe image");
  return static_cast<int>(e->vector.size()) + 1;
}

IqaReport image_quality(std::span<const Image> reference, std::span<const Image> restored,
                        const Comparator& embedder) {
  if (reference.size() != restored.size() || reference.empty()) {
    throw MetricError("image_quality: needs two non-empty sets of equal size");
  }
  IqaReport rep;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    rep.ssim += ssim(reference[i], restored[i]);
    rep.psnr += psnr(reference[i], restored[i]);
  }
  rep.ssim /= static_cast<double>(reference.size());
  rep.psnr /= static_cast<double>(reference.size());
  const int need = fid_min_samples(embedder, reference.front());
  if (static_cast<int>(reference.size()) < need) {
    rep.fid_note = "not computed: " + std::to_string(reference.size()) + " samples, " +
                   embedder.name() + " features need at least " + std::to_string(need);
  } else {
    rep.fid = fid(reference, restored, embedder);
    rep.fid_note = "features: " + embedder.name() + " embedder (not comparable to Inception FID)";
  }
  return rep;
}

}  // namespace demorph
