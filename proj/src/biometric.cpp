#include "demorph/biometric.hpp"

#include <unistd.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "demorph/image_io.hpp"

namespace demorph {

namespace {

void normalize_in_place(std::vector<double>& v) {
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
}

}  // namespace

Embedding embed_toy(const Image& image) {
  if (image.n() != 1 || image.c() != 3) {
    throw DimensionError("embed_toy expects a 1x3xHxW image, got " + image.shape().str());
  }
  constexpr int grid = ToyComparator::kGrid;
  const int h = image.h();
  const int w = image.w();
  if (h % grid != 0 || w % grid != 0) {
    throw DimensionError("embed_toy: image sides must be multiples of 8");
  }

  std::vector<double> gray(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      gray[y * w + x] =
          0.299 * image(0, 0, y, x) + 0.587 * image(0, 1, y, x) + 0.114 * image(0, 2, y, x);
    }
  }
  // 3x3 box blur with edge replication
  std::vector<double> blurred(gray.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int dy = -1; dy <= 1; ++dy) {
        const int yy = std::clamp(y + dy, 0, h - 1);
        for (int dx = -1; dx <= 1; ++dx) {
          acc += gray[yy * w + std::clamp(x + dx, 0, w - 1)];
        }
      }
      blurred[y * w + x] = acc / 9.0;
    }
  }
  const int by = h / grid;
  const int bx = w / grid;
  std::vector<double> feat(grid * grid, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) feat[(y / by) * grid + x / bx] += blurred[y * w + x];
  }
  double mean = 0.0;
  for (double& f : feat) {
    f /= static_cast<double>(by * bx);
    mean += f;
  }
  mean /= feat.size();
  double norm2 = 0.0;
  for (double& f : feat) {
    f -= mean;
    norm2 += f * f;
  }
  if (norm2 < 1e-20) {
    std::vector<double> canonical(feat.size(), 0.0);
    canonical[0] = 1.0;
    return Embedding{std::move(canonical)};
  }
  normalize_in_place(feat);
  return Embedding{std::move(feat)};
}

std::optional<Embedding> ToyComparator::embed(const Image& image) const {
  return embed_toy(image);
}

ExternalComparator::ExternalComparator(std::string command) : command_(std::move(command)) {
  if (command_.empty()) throw ConfigError("external comparator needs a command");
}

std::optional<Embedding> ExternalComparator::embed(const Image& image) const {
  std::lock_guard lock(mutex_);
  char tmpl[] = "/tmp/demorph-embed-XXXXXX.png";
  const int fd = mkstemps(tmpl, 4);
  if (fd < 0) throw IoError("cannot create temporary image file");
  close(fd);
  const std::filesystem::path path(tmpl);
  save_png(image, path);

  const std::string cmd = command_ + " '" + path.string() + "'";
  std::FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) {
    std::filesystem::remove(path);
    throw IoError("cannot launch external embedder: " + command_);
  }
  std::string output;
  std::array<char, 4096> buf{};
  while (std::size_t got = std::fread(buf.data(), 1, buf.size(), pipe)) output.append(buf.data(), got);
  const int status = pclose(pipe);
  std::filesystem::remove(path);
  if (status != 0) return std::nullopt;

  std::istringstream in(output);
  std::vector<double> v;
  double x;
  while (in >> x) v.push_back(x);
  double norm2 = 0.0;
  for (double e : v) norm2 += e * e;
  if (v.empty() || !(norm2 > 0.0) || !std::isfinite(norm2)) return std::nullopt;
  normalize_in_place(v);
  return Embedding{std::move(v)};
}

std::unique_ptr<Comparator> make_comparator(const std::string& kind, const std::string& command) {
  if (kind == "toy") return std::make_unique<ToyComparator>();
  if (kind == "external") return std::make_unique<ExternalComparator>(command);
  throw ConfigError("unknown comparator '" + kind + "' (expected toy or external)");
}

double similarity(const Embedding& a, const Embedding& b) {
  if (a.vector.size() != b.vector.size()) {
    throw DimensionError("similarity: embedding lengths differ (" +
                         std::to_string(a.vector.size()) + " vs " +
                         std::to_string(b.vector.size()) + ")");
  }
  double dot = 0.0;
  for (std::size_t i = 0; i < a.vector.size(); ++i) dot += a.vector[i] * b.vector[i];
  return std::clamp(dot, -1.0, 1.0);
}

MatchDecision decide_match(const std::optional<Embedding>& a, const std::optional<Embedding>& b,
                           double tau) {
  if (!(tau > -1.0 && tau < 1.0)) throw DomainError("tau must lie in (-1,1)");
  MatchDecision d;
  if (!a || !b) return d;
  d.result.status = MatchResult::Status::Found;
  d.result.similarity = similarity(*a, *b);
  d.matched = *d.result.similarity > tau;
  return d;
}

MatchDecision is_match(const Comparator& comparator, const Image& a, const Image& b, double tau) {
  return decide_match(comparator.embed(a), comparator.embed(b), tau);
}

}  // namespace demorph
