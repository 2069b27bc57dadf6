#include "pimms/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>

#include "pimms/parallel.hpp"

namespace pimms::eval {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double median(std::vector<double> v) {
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return kNaN;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::string num(double v, const char* fmt = "%.6f") {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

}  // namespace

std::string Pattern::code() const {
  std::string s;
  for (bool b : present) s += b ? '1' : '0';
  return s;
}

std::size_t Pattern::count() const { return static_cast<std::size_t>(std::count(present.begin(), present.end(), true)); }

std::vector<Pattern> all_patterns(std::size_t modalities) {
  if (modalities == 0 || modalities > 16) throw std::invalid_argument("all_patterns: unsupported modality count");
  std::vector<Pattern> out;
  if (modalities == 3) {
    for (const char* code : {"111", "110", "011", "101", "100", "010", "001"}) {
      Pattern p;
      for (const char* c = code; *c; ++c) p.present.push_back(*c == '1');
      out.push_back(p);
    }
    return out;
  }
  for (std::size_t bits = (1u << modalities) - 1; bits > 0; --bits) {
    Pattern p;
    for (std::size_t m = 0; m < modalities; ++m) p.present.push_back((bits >> (modalities - 1 - m)) & 1u);
    out.push_back(p);
  }
  std::stable_sort(out.begin(), out.end(), [](const Pattern& a, const Pattern& b) { return a.count() > b.count(); });
  return out;
}

std::vector<Tensor> apply_pattern(const synth::Subject& subject, const Pattern& pattern) {
  std::vector<Tensor> scans;
  for (std::size_t n = 0; n < subject.scans.size(); ++n) {
    const std::size_t m = subject.labels.at(n).index();
    if (m >= pattern.present.size()) throw std::invalid_argument("apply_pattern: modality outside the pattern");
    scans.push_back(pattern.present[m] ? subject.scans[n] : Tensor(subject.scans[n].shape()));
  }
  return scans;
}

bool SubsetGrid::has_significance() const {
  return variants.size() > 1 && std::find(variants.begin(), variants.end(), Variant::hemis) != variants.end();
}

const Cell& SubsetGrid::cell(std::size_t pattern, Variant v) const {
  auto it = std::find(variants.begin(), variants.end(), v);
  if (it == variants.end()) throw std::invalid_argument("grid has no " + to_string(v) + " column");
  return cells.at(pattern).at(static_cast<std::size_t>(it - variants.begin()));
}

void aggregate(SubsetGrid& grid) {
  const auto hemis = std::find(grid.variants.begin(), grid.variants.end(), Variant::hemis);
  const bool compare = grid.has_significance();
  for (auto& row : grid.cells) {
    for (std::size_t v = 0; v < row.size(); ++v) {
      Cell& c = row[v];
      if (c.dice.size() != grid.subjects.size() || c.asd.size() != grid.subjects.size())
        throw std::invalid_argument("aggregate: cell lists are not aligned with the subject list");
      std::vector<double> asd;
      for (double a : c.asd)
        if (!std::isnan(a)) asd.push_back(a);
      c.median_dice = median(c.dice);
      c.mean_dice = mean(c.dice);
      c.mean_asd = mean(asd);
      c.median_asd = median(asd);
      c.n_asd = asd.size();
      c.p_vs_hemis.reset();
      c.flag = false;
    }
    if (!compare) continue;
    const Cell& base = row[static_cast<std::size_t>(hemis - grid.variants.begin())];
    for (std::size_t v = 0; v < row.size(); ++v) {
      if (grid.variants[v] == Variant::hemis) continue;
      Cell& c = row[v];
      try {
        c.p_vs_hemis = wilcoxon_signed_rank(base.dice, c.dice).p;
      } catch (const std::invalid_argument&) {
        continue;  // identical columns: no test, no flag
      }
      c.flag = *c.p_vs_hemis < kSignificance && c.median_dice > base.median_dice;
    }
  }
}

SubsetGrid evaluate_subsets(std::span<const VariantModel> models, const std::vector<synth::Subject>& subjects) {
  if (models.empty()) throw std::invalid_argument("evaluate_subsets: no models");
  if (subjects.empty()) throw std::invalid_argument("evaluate_subsets: empty subject list");
  std::set<Variant> seen;
  for (const auto& m : models) {
    if (!m.model || m.model->variant != m.variant)
      throw std::invalid_argument("evaluate_subsets: model does not match its variant column " + to_string(m.variant));
    if (!seen.insert(m.variant).second)
      throw std::invalid_argument("evaluate_subsets: duplicate variant " + to_string(m.variant));
  }
  const std::size_t M = models.front().model->seg.modalities;
  for (const auto& m : models)
    if (m.model->seg.modalities != M) throw std::invalid_argument("evaluate_subsets: models disagree on modality count");

  std::vector<const synth::Subject*> order;
  std::set<std::string> ids;
  for (const auto& s : subjects) {
    if (!ids.insert(s.id).second) throw std::invalid_argument("evaluate_subsets: duplicate subject id " + s.id);
    if (s.labels.size() != s.scans.size())
      throw std::invalid_argument("evaluate_subsets: subject " + s.id + " lacks modality labels");
    order.push_back(&s);
  }
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->id < b->id; });

  SubsetGrid grid;
  grid.patterns = all_patterns(M);
  for (const auto& m : models) grid.variants.push_back(m.variant);
  for (auto* s : order) grid.subjects.push_back(s->id);
  grid.cells.assign(grid.patterns.size(), std::vector<Cell>(models.size()));
  for (auto& row : grid.cells)
    for (auto& c : row) {
      c.dice.assign(order.size(), 0.0);
      c.asd.assign(order.size(), kNaN);
    }

  for (std::size_t p = 0; p < grid.patterns.size(); ++p) {
    parallel_for(order.size(), [&](std::size_t i) {
      const synth::Subject& s = *order[i];
      const auto scans = apply_pattern(s, grid.patterns[p]);
      for (std::size_t v = 0; v < models.size(); ++v) {
        Model& model = *models[v].model;
        const auto labels = model.variant == Variant::hemis ? std::span<const ModalityLabel>(s.labels)
                                                             : std::span<const ModalityLabel>();
        const Tensor mask = threshold(predict(model, scans, labels));
        Cell& c = grid.cells[p][v];
        c.dice[i] = dice_score(mask, s.mask);
        if (boundary_pixels(mask).empty() || boundary_pixels(s.mask).empty()) continue;
        c.asd[i] = avg_symmetric_distance(mask, s.mask);
      }
    });
  }
  aggregate(grid);
  return grid;
}

std::string SubsetGrid::to_csv() const {
  const bool sig = has_significance();
  std::string out = "pattern,variant,n,median_dice,mean_asd";
  if (sig) out += ",p_vs_hemis,flag";
  out += ",mean_dice,median_asd,n_asd\n";
  for (std::size_t p = 0; p < patterns.size(); ++p)
    for (std::size_t v = 0; v < variants.size(); ++v) {
      const Cell& c = cells[p][v];
      out += patterns[p].code() + "," + to_string(variants[v]) + "," + std::to_string(c.dice.size()) + "," +
             num(c.median_dice) + "," + num(c.mean_asd);
      if (sig) {
        out += "," + (c.p_vs_hemis ? num(*c.p_vs_hemis, "%.6g") : std::string("")) + "," + (c.flag ? "1" : "0");
      }
      out += "," + num(c.mean_dice) + "," + num(c.median_asd) + "," + std::to_string(c.n_asd) + "\n";
    }
  return out;
}

std::string SubsetGrid::to_table() const {
  const std::size_t M = patterns.empty() ? 0 : patterns.front().present.size();
  auto pad = [](std::string s, std::size_t w) {
    if (s.size() < w) s.insert(0, w - s.size(), ' ');
    return s;
  };
  std::string head;
  for (std::size_t m = 0; m < M; ++m) head += pad(M == kNumModalities ? std::string(kModalityNames[m]) : "m" + std::to_string(m), 6);
  // Wide enough that the group titles fit over a single column.
  const std::size_t cw = variants.empty() ? 9 : std::max<std::size_t>(9, (11 + variants.size() - 1) / variants.size());
  std::string dice_h, asd_h;
  for (Variant v : variants) {
    dice_h += pad(to_string(v), cw);
    asd_h += pad(to_string(v), cw);
  }
  std::string out = head + " |" + pad("median Dice", cw * variants.size()) + " |" +
                    pad("mean ASD", cw * variants.size()) + "\n";
  out += std::string(head.size(), ' ') + " |" + dice_h + " |" + asd_h + "\n";
  out += std::string(out.find('\n'), '-') + "\n";
  for (std::size_t p = 0; p < patterns.size(); ++p) {
    std::string line;
    for (bool b : patterns[p].present) line += pad(b ? "x" : "o", 6);
    line += " |";
    for (std::size_t v = 0; v < variants.size(); ++v)
      line += pad(num(cells[p][v].median_dice, "%.3f") + (cells[p][v].flag ? "*" : " "), cw);
    line += " |";
    for (std::size_t v = 0; v < variants.size(); ++v) line += pad(num(cells[p][v].mean_asd, "%.2f") + " ", cw);
    out += line + "\n";
  }
  out += "\nx present, o missing. n=" + std::to_string(subjects.size()) + " subjects.";
  if (has_significance()) out += " * beats hemis (Wilcoxon signed-rank, p < 0.01, higher median).";
  out += "\n";
  return out;
}

}  // namespace pimms::eval
