#pragma once

#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "demorph/tensor.hpp"

namespace demorph {

inline constexpr double kDefaultTau = 0.4;

// Unit-norm feature vector.
struct Embedding {
  std::vector<double> vector;
};

struct MatchResult {
  enum class Status { Found, NotFound };
  Status status = Status::NotFound;
  std::optional<double> similarity;  // present iff Found
};

struct MatchDecision {
  MatchResult result;
  bool matched = false;
};

// Biometric embedder. NotFound is reported as std::nullopt.
class Comparator {
 public:
  virtual ~Comparator() = default;
  virtual std::string name() const = 0;
  virtual std::optional<Embedding> embed(const Image& image) const = 0;
};

// Grayscale, 3x3 box blur, 8x8 block average, mean removal, L2 normalisation.
class ToyComparator final : public Comparator {
 public:
  static constexpr int kGrid = 8;
  std::string name() const override { return "toy"; }
  std::optional<Embedding> embed(const Image& image) const override;
};

// Runs `command <png-path>`; stdout carries whitespace-separated reals, nonzero exit = NotFound.
class ExternalComparator final : public Comparator {
 public:
  explicit ExternalComparator(std::string command);
  std::string name() const override { return "external:" + command_; }
  std::optional<Embedding> embed(const Image& image) const override;

 private:
  std::string command_;
  mutable std::mutex mutex_;
};

// Selects "toy" or "external" (the latter requires a command).
std::unique_ptr<Comparator> make_comparator(const std::string& kind,
                                            const std::string& command = {});

Embedding embed_toy(const Image& image);

double similarity(const Embedding& a, const Embedding& b);

MatchDecision decide_match(const std::optional<Embedding>& a, const std::optional<Embedding>& b,
                           double tau);

MatchDecision is_match(const Comparator& comparator, const Image& a, const Image& b, double tau);

}  // namespace demorph
