#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "pimms/evaluation.hpp"

namespace pimms::eval {

namespace {

void require_binary(const Tensor& m, const char* what) {
  for (double v : m.data())
    if (v != 0.0 && v != 1.0) throw std::invalid_argument(std::string(what) + " must be a binary mask");
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
}

constexpr double kInf = std::numeric_limits<double>::infinity();

// Squared distance transform of a 1D sampled function (lower envelope of parabolas).
void edt_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v, std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (k < 0) {
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      k = 0;
      continue;
    }
    auto meet = [&](int p) { return ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * q - 2.0 * p); };
    double s = meet(v[k]);
    while (s <= z[k]) s = meet(v[--k]);  // z[0] = -inf stops the walk
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (k < 0) {
    std::fill(d.begin(), d.end(), kInf);
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double dq = q - v[j];
    d[q] = dq * dq + f[v[j]];
  }
}

// Exact squared Euclidean distance from every pixel to the nearest seed.
std::vector<double> squared_edt(const std::vector<std::size_t>& seeds, std::size_t H, std::size_t W) {
  std::vector<double> grid(H * W, kInf);
  for (auto s : seeds) grid[s] = 0.0;
  const std::size_t L = std::max(H, W);
  std::vector<double> f(L), d(L), z(L + 1);
  std::vector<int> v(L);
  for (std::size_t x = 0; x < W; ++x) {
    f.resize(H);
    d.resize(H);
    for (std::size_t y = 0; y < H; ++y) f[y] = grid[y * W + x];
    edt_1d(f, d, v, z);
    for (std::size_t y = 0; y < H; ++y) grid[y * W + x] = d[y];
  }
  for (std::size_t y = 0; y < H; ++y) {
    f.resize(W);
    d.resize(W);
    for (std::size_t x = 0; x < W; ++x) f[x] = grid[y * W + x];
    edt_1d(f, d, v, z);
    for (std::size_t x = 0; x < W; ++x) grid[y * W + x] = d[x];
  }
  return grid;
}

}  // namespace

double dice_score(const Tensor& pred, const Tensor& gt) {
  require_same(pred, gt, "dice_score");
  require_binary(pred, "dice_score prediction");
  require_binary(gt, "dice_score ground truth");
  double inter = 0.0, p = 0.0, g = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += pred[i] * gt[i];
    p += pred[i];
    g += gt[i];
  }
  if (p + g == 0.0) return 1.0;
  return 2.0 * inter / (p + g);
}

std::vector<std::size_t> boundary_pixels(const Tensor& mask) {
  if (mask.rank() != 2) throw std::invalid_argument("boundary_pixels: mask must be [H, W]");
  const std::size_t H = mask.dim(0), W = mask.dim(1);
  std::vector<std::size_t> out;
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      if (mask[y * W + x] == 0.0) continue;
      const bool edge = y == 0 || x == 0 || y + 1 == H || x + 1 == W || mask[(y - 1) * W + x] == 0.0 ||
                        mask[(y + 1) * W + x] == 0.0 || mask[y * W + x - 1] == 0.0 || mask[y * W + x + 1] == 0.0;
      if (edge) out.push_back(y * W + x);
    }
  return out;
}

double avg_symmetric_distance(const Tensor& pred, const Tensor& gt, double spacing) {
  require_same(pred, gt, "avg_symmetric_distance");
  require_binary(pred, "avg_symmetric_distance prediction");
  require_binary(gt, "avg_symmetric_distance ground truth");
  if (!(spacing > 0.0)) throw std::invalid_argument("avg_symmetric_distance: spacing must be positive");
  const auto bp = boundary_pixels(pred);
  const auto bg = boundary_pixels(gt);
  if (bp.empty() || bg.empty())
    throw std::invalid_argument("avg_symmetric_distance: undefined for an empty mask");
  const std::size_t H = pred.dim(0), W = pred.dim(1);
  const auto to_g = squared_edt(bg, H, W);
  const auto to_p = squared_edt(bp, H, W);
  double total = 0.0;
  for (auto i : bp) total += std::sqrt(to_g[i]);
  for (auto i : bg) total += std::sqrt(to_p[i]);
  return spacing * total / static_cast<double>(bp.size() + bg.size());
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("wilcoxon_signed_rank: paired lists differ in length");
  std::vector<double> diff;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = b[i] - a[i];
    if (!std::isfinite(d)) throw std::invalid_argument("wilcoxon_signed_rank: non-finite value");
    if (d != 0.0) diff.push_back(d);
  }
  const std::size_t n = diff.size();
  if (n == 0) throw std::invalid_argument("wilcoxon_signed_rank: all paired differences are zero");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t i, std::size_t j) { return std::abs(diff[i]) < std::abs(diff[j]); });
  // Doubled midranks stay integral.
  std::vector<long> rank2(n);
  double tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(diff[order[j + 1]]) == std::abs(diff[order[i]])) ++j;
    const long r2 = static_cast<long>(i + j + 2);  // 2 * mean of ranks i+1..j+1
    for (std::size_t k = i; k <= j; ++k) rank2[order[k]] = r2;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }

  WilcoxonResult r;
  r.n = n;
  long wplus2 = 0, total2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total2 += rank2[i];
    if (diff[i] > 0) wplus2 += rank2[i];
  }
  r.w_plus = wplus2 / 2.0;
  r.w_minus = (total2 - wplus2) / 2.0;
  r.w = std::min(r.w_plus, r.w_minus);

  if (n <= kExactLimit) {
    r.exact = true;
    // counts[s]: sign patterns whose positive doubled ranks sum to s.
    std::vector<double> counts(static_cast<std::size_t>(total2) + 1, 0.0);
    counts[0] = 1.0;
    long reach = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (long s = reach; s >= 0; --s)
        if (counts[s] != 0.0) counts[s + rank2[i]] += counts[s];
      reach += rank2[i];
    }
    double lower = 0.0, upper = 0.0, all = 0.0;
    for (long s = 0; s <= total2; ++s) {
      all += counts[s];
      if (s <= wplus2) lower += counts[s];
      if (s >= wplus2) upper += counts[s];
    }
    r.p = std::min(1.0, 2.0 * std::min(lower, upper) / all);
  } else {
    const double nn = static_cast<double>(n);
    const double mean = nn * (nn + 1) / 4.0;
    const double var = nn * (nn + 1) * (2 * nn + 1) / 24.0 - tie_term / 48.0;
    const double z = std::max(0.0, std::abs(r.w_plus - mean) - 0.5) / std::sqrt(var);
    r.p = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  }
  return r;
}

Tensor threshold(const Tensor& probabilities) {
  if (probabilities.rank() != 3 || probabilities.dim(2) != seg::kClasses)
    throw std::invalid_argument("threshold: expected [H, W, 2] probabilities");
  const std::size_t H = probabilities.dim(0), W = probabilities.dim(1);
  Tensor mask(Shape{H, W});
  for (std::size_t p = 0; p < H * W; ++p) mask[p] = probabilities[p * 2 + seg::kLesionChannel] > 0.5 ? 1.0 : 0.0;
  return mask;
}

}  // namespace pimms::eval
