#include "demorph/experiment.hpp"

#include <fstream>

#include "demorph/image_io.hpp"
#include "demorph/losses.hpp"
#include "demorph/metrics.hpp"

namespace demorph {

namespace fs = std::filesystem;

namespace {

Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

Json iqa_json(const IqaReport& r) {
  return Json{{"ssim", r.ssim}, {"psnr", r.psnr}, {"fid", optional_json(r.fid)}, {"fid_note", r.fid_note}};
}

Json accuracy_json(const MatchAccuracy& all, const std::optional<MatchAccuracy>& found) {
  return Json{{"match_accuracy", all.value},
              {"match_accuracy_found", found ? Json(found->value) : Json(nullptr)},
              {"matches", all.matches},
              {"evaluated", all.evaluated},
              {"not_found", all.not_found}};
}

std::optional<MatchAccuracy> accuracy_found(std::span<const ImagePair> pairs, const Comparator& cmp, double tau) {
  try {
    return match_accuracy(pairs, cmp, tau, true);
  } catch (const MetricError&) {
    return std::nullopt;
  }
}

Json restoration_json(std::span<const MorphSample> samples, std::span<const DemorphOutput> outputs,
                      const Comparator& cmp, double tau) {
  std::vector<RestorationInput> inputs;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    inputs.push_back({outputs[i].output1, outputs[i].output2, samples[i].bonafide1, samples[i].bonafide2});
  }
  const auto acc = restoration_accuracy(inputs, cmp, tau);
  Json records = Json::array();
  int not_found = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& r = acc.records[i];
    not_found += r.not_found;
    records.push_back(Json{{"id1", samples[i].identity1},
                           {"id2", samples[i].identity2},
                           {"pairing", r.swapped ? "swapped" : "natural"},
                           {"o1_b1", optional_json(r.o1_b1)},
                           {"o1_b2", optional_json(r.o1_b2)},
                           {"o2_b1", optional_json(r.o2_b1)},
                           {"o2_b2", optional_json(r.o2_b2)},
                           {"subject1_correct", r.subject1_correct},
                           {"subject2_correct", r.subject2_correct},
                           {"not_found", r.not_found}});
  }
  return Json{{"morphs", samples.size()},
              {"subject1_accuracy", acc.subject1},
              {"subject2_accuracy", acc.subject2},
              {"not_found", not_found},
              {"records", std::move(records)}};
}

std::vector<DemorphOutput> run_demorph(Networks<float>& nets, std::span<const MorphSample> samples) {
  std::vector<DemorphOutput> out;
  for (const auto& s : samples) out.push_back(demorph(nets.decomposer, nets.merger, s.morph));
  return out;
}

Image white_canvas(int rows, int cols, int side) {
  const int gutter = 2;
  return Image(Shape{1, 3, rows * side + (rows + 1) * gutter, cols * side + (cols + 1) * gutter}, 1.0f);
}

}  // namespace

Json evaluate_decomposition(Networks<float>& nets, const Dataset& dataset, const Comparator& cmp, double tau) {
  if (nets.config().heads != 1) throw ModeError("decomposition evaluation needs a one-head merger");
  if (dataset.bonafides.empty()) throw DataError("dataset holds no bonafides to decompose");
  const int k = nets.config().k;
  std::vector<Image> inputs, recs;
  std::vector<ImagePair> pairs;
  std::vector<double> comp_l1(k, 0.0);
  std::vector<int> comp_direct(k, 0);
  double rec_l1 = 0.0;
  for (const auto& b : dataset.bonafides) {
    const auto comps = decompose(nets.decomposer, b.image);
    Image rec = merge(nets.merger, 0, comps);
    rec_l1 += l1(b.image, rec);
    for (int i = 0; i < k; ++i) {
      comp_l1[i] += l1(b.image, comps[i]);
      comp_direct[i] += is_match(cmp, comps[i], b.image, tau).matched;
    }
    pairs.emplace_back(b.image, rec);
    inputs.push_back(b.image);
    recs.push_back(std::move(rec));
  }
  const double n = static_cast<double>(inputs.size());
  rec_l1 /= n;
  for (auto& v : comp_l1) v /= n;
  std::vector<double> direct_rate;
  for (int v : comp_direct) direct_rate.push_back(v / n);

  const auto leak = component_leakage(nets.decomposer, nets.merger, inputs, cmp, tau);
  Json leak_found = Json::array();
  for (const auto& v : leak.leak_rate_found) leak_found.push_back(optional_json(v));

  Json rec = accuracy_json(match_accuracy(pairs, cmp, tau, false), accuracy_found(pairs, cmp, tau));
  rec["l1_mean"] = rec_l1;
  return Json{{"mode", "decomposition"},
              {"tau", tau},
              {"comparator", cmp.name()},
              {"images", inputs.size()},
              {"reconstruction", std::move(rec)},
              {"components",
               Json{{"l1_mean", comp_l1},
                    {"direct_match_rate", direct_rate},
                    {"leak_rate", leak.leak_rate},
                    {"leak_rate_found", std::move(leak_found)},
                    {"not_found", leak.not_found}}},
              {"leakage_control",
               Json{{"reconstruction_rate", leak.reconstruction_rate},
                    {"reconstruction_rate_found", optional_json(leak.reconstruction_rate_found)},
                    {"not_found", leak.reconstruction_not_found}}},
              {"iqa", iqa_json(image_quality(inputs, recs, cmp))}};
}

Json evaluate_demorph(Networks<float>& nets, const Dataset& dataset, const Comparator& cmp, double tau) {
  if (nets.config().heads != 2) throw ModeError("demorph evaluation needs a two-head merger");
  if (dataset.split.test.empty()) throw DataError("dataset holds no test morphs");
  const auto& test = dataset.split.test;
  const auto& train = dataset.split.train;
  const auto test_out = run_demorph(nets, test);
  const auto train_out = run_demorph(nets, train);

  Json report{{"mode", "demorphing"}, {"tau", tau}, {"comparator", cmp.name()}};
  report["test"] = restoration_json(test, test_out, cmp, tau);
  Json train_json = train.empty() ? Json(nullptr) : restoration_json(train, train_out, cmp, tau);
  if (!train.empty()) {
    double cross = 0.0;
    for (std::size_t i = 0; i < train.size(); ++i) {
      cross += crossroad_loss(train_out[i].output1, train_out[i].output2, train[i].bonafide1, train[i].bonafide2);
    }
    train_json["crossroad_mean"] = cross / static_cast<double>(train.size());
  }
  report["train"] = std::move(train_json);

  // IQA on test outputs placed against the bonafide they were assigned to.
  std::vector<Image> refs, outs;
  const auto& records = report["test"]["records"];
  for (std::size_t i = 0; i < test.size(); ++i) {
    const bool swapped = records[i]["pairing"] == "swapped";
    refs.push_back(test[i].bonafide1);
    outs.push_back(swapped ? test_out[i].output2 : test_out[i].output1);
    refs.push_back(test[i].bonafide2);
    outs.push_back(swapped ? test_out[i].output1 : test_out[i].output2);
  }
  report["iqa"] = iqa_json(image_quality(refs, outs, cmp));

  Json non_morph{{"probes", dataset.probes.size()}};
  if (dataset.probes.empty()) {
    non_morph["both_match_rate"] = nullptr;
  } else {
    int both = 0, not_found = 0;
    Json sims = Json::array();
    for (const auto& p : dataset.probes) {
      const auto out = demorph(nets.decomposer, nets.merger, p.image);
      const auto m1 = is_match(cmp, out.output1, p.image, tau);
      const auto m2 = is_match(cmp, out.output2, p.image, tau);
      both += m1.matched && m2.matched;
      not_found += m1.result.status == MatchResult::Status::NotFound ||
                   m2.result.status == MatchResult::Status::NotFound;
      sims.push_back(Json{{"id", p.identity},
                          {"o1", optional_json(m1.result.similarity)},
                          {"o2", optional_json(m2.result.similarity)}});
    }
    non_morph["both_match_rate"] = static_cast<double>(both) / static_cast<double>(dataset.probes.size());
    non_morph["not_found"] = not_found;
    non_morph["records"] = std::move(sims);
  }
  report["non_morph"] = std::move(non_morph);
  return report;
}

Json evaluate(Networks<float>& nets, TrainMode mode, const Dataset& dataset, const Comparator& cmp, double tau) {
  return mode == TrainMode::Decomposition ? evaluate_decomposition(nets, dataset, cmp, tau)
                                          : evaluate_demorph(nets, dataset, cmp, tau);
}

void save_grid(const fs::path& path, const std::vector<std::vector<Image>>& rows, const std::string& caption) {
  if (rows.empty() || rows.front().empty()) throw DataError("grid has no images");
  const int side = rows.front().front().h();
  std::size_t cols = 0;
  for (const auto& r : rows) cols = std::max(cols, r.size());
  Image canvas = white_canvas(static_cast<int>(rows.size()), static_cast<int>(cols), side);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      const Image& img = rows[r][c];
      if (img.h() != side || img.w() != side) throw DimensionError("grid images must share one size");
      const int y0 = 2 + static_cast<int>(r) * (side + 2);
      const int x0 = 2 + static_cast<int>(c) * (side + 2);
      for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < side; ++y)
          for (int x = 0; x < side; ++x) canvas(0, ch, y0 + y, x0 + x) = img(0, ch, y, x);
    }
  }
  save_png(canvas, path);
  std::ofstream txt(fs::path(path).concat(".txt"));
  if (!txt) throw IoError("cannot write caption for " + path.string());
  txt << caption << '\n';
}

void write_grids(const fs::path& dir, Networks<float>& nets, TrainMode mode, const Dataset& dataset, int limit) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const int k = nets.config().k;
  std::vector<std::vector<Image>> rows;
  if (mode == TrainMode::Decomposition) {
    for (const auto& b : dataset.bonafides) {
      if (static_cast<int>(rows.size()) == limit) break;
      auto comps = decompose(nets.decomposer, b.image);
      std::vector<Image> row{b.image};
      for (auto& c : comps) row.push_back(c);
      row.push_back(merge(nets.merger, 0, comps));
      rows.push_back(std::move(row));
    }
    save_grid(dir / "decomposition.png", rows,
              "columns: input, components 1.." + std::to_string(k) + ", reconstruction");
    return;
  }
  for (const auto& s : dataset.split.test) {
    if (static_cast<int>(rows.size()) == limit) break;
    auto out = demorph(nets.decomposer, nets.merger, s.morph);
    std::vector<Image> row{s.morph, s.bonafide1, s.bonafide2};
    for (auto& c : out.components) row.push_back(c);
    row.push_back(out.output1);
    row.push_back(out.output2);
    rows.push_back(std::move(row));
  }
  save_grid(dir / "demorph_test.png", rows,
            "test morphs; columns: morph, B1, B2, components 1.." + std::to_string(k) + ", O1, O2");
  rows.clear();
  for (const auto& p : dataset.probes) {
    if (static_cast<int>(rows.size()) == limit) break;
    auto out = demorph(nets.decomposer, nets.merger, p.image);
    rows.push_back({p.image, out.output1, out.output2});
  }
  if (!rows.empty()) save_grid(dir / "non_morph.png", rows, "non-morph probes; columns: input, O1, O2");
}

}  // namespace demorph
