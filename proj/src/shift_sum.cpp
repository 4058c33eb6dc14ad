#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>

#include "magic/cost_model.hpp"
#include "magic/metrics.hpp"

namespace magic {

namespace {

struct Candidate {
  double value;
  std::vector<ShiftSumTerm> terms;
  double magnitude;  // sum of |term|
};

bool better_repr(const Candidate& a, const Candidate& b) {
  if (a.terms.size() != b.terms.size()) return a.terms.size() < b.terms.size();
  return a.magnitude < b.magnitude;
}

/// Every representable value once, with its preferred representation, sorted.
std::vector<Candidate> build_table(int max_terms, int min_exp) {
  std::vector<Candidate> all;
  all.push_back(Candidate{0.0, {}, 0.0});
  std::vector<ShiftSumTerm> cur;
  auto rec = [&](auto&& self, int next_exp, double value, double magnitude) -> void {
    if (!cur.empty()) all.push_back(Candidate{value, cur, magnitude});
    if (static_cast<int>(cur.size()) == max_terms) return;
    for (int e = next_exp; e >= min_exp; --e) {
      for (int sign : {1, -1}) {
        cur.push_back(ShiftSumTerm{sign, e});
        self(self, e - 1, value + sign * std::ldexp(1.0, e), magnitude + std::ldexp(1.0, e));
        cur.pop_back();
      }
    }
  };
  rec(rec, 0, 0.0, 0.0);
  std::sort(all.begin(), all.end(), [](const Candidate& a, const Candidate& b) {
    if (a.value != b.value) return a.value < b.value;
    return better_repr(a, b);
  });
  std::vector<Candidate> unique;
  for (Candidate& c : all) {
    if (unique.empty() || unique.back().value != c.value) unique.push_back(std::move(c));
  }
  return unique;
}

const std::vector<Candidate>& table(int max_terms, int min_exp) {
  static std::mutex mu;
  static std::map<std::pair<int, int>, std::vector<Candidate>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto key = std::make_pair(max_terms, min_exp);
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, build_table(max_terms, min_exp)).first;
  return it->second;
}

}  // namespace

ShiftSum shift_sum_approx(double w, int terms, int min_exp) {
  if (terms < 0 || terms > 3) throw ConfigError("shift-sum terms must be in [0, 3], got " + std::to_string(terms));
  if (min_exp > 0 || min_exp < -30) throw ConfigError("shift-sum exponent range must lie in [-30, 0]");
  if (!std::isfinite(w) || std::abs(w) > 1.0) throw InputError("shift-sum weight must satisfy |w| <= 1");
  ShiftSum out;
  if (w == 0.0 || terms == 0) {
    out.abs_error = std::abs(w);
    out.rel_error = w == 0.0 ? 0.0 : 1.0;
    return out;
  }
  const auto& t = table(terms, min_exp);
  auto hi = std::lower_bound(t.begin(), t.end(), w, [](const Candidate& c, double v) { return c.value < v; });
  const Candidate* best = nullptr;
  auto consider = [&](const Candidate& c) {
    if (best == nullptr) {
      best = &c;
      return;
    }
    const double dc = std::abs(c.value - w), db = std::abs(best->value - w);
    if (dc < db || (dc == db && (better_repr(c, *best) || (!better_repr(*best, c) && c.value < best->value)))) best = &c;
  };
  if (hi != t.end()) consider(*hi);
  if (hi != t.begin()) consider(*(hi - 1));
  out.value = best->value;
  out.terms = best->terms;
  out.abs_error = std::abs(out.value - w);
  out.rel_error = out.abs_error / std::abs(w);
  return out;
}

MagicModel<float> shift_sum_quantize(const MagicModel<float>& model, int terms, int min_exp) {
  MagicModel<float> q = model;
  auto quantize_tensor = [&](Tensor<float>& t) {
    const double peak = t.values().abs().maxCoeff();
    if (peak == 0.0) return;
    const double scale = std::ldexp(1.0, static_cast<int>(std::ceil(std::log2(peak))));
    for (Eigen::Index i = 0; i < t.values().size(); ++i) {
      const double v = std::clamp(static_cast<double>(t.values()[i]) / scale, -1.0, 1.0);
      t.values()[i] = static_cast<float>(shift_sum_approx(v, terms, min_exp).value * scale);
    }
  };
  for (const Layer& L : q.network.layers) {
    if (L.kind == LayerKind::kConv) quantize_tensor(q.params[static_cast<std::size_t>(L.kernel_param)].tensor);
    if (L.kind == LayerKind::kIir) {
      for (int p : L.iir_params) quantize_tensor(q.params[static_cast<std::size_t>(p)].tensor);
    }
  }
  q.project();
  return q;
}

QuantizedDelta quantized_forward_delta(const MagicModel<float>& model, const std::vector<Tensor<float>>& images,
                                       int terms) {
  const MagicModel<float> q = shift_sum_quantize(model, terms);
  QuantizedDelta d;
  for (const Tensor<float>& img : images) {
    const Tensor<float> ref = infer_image(model, img);
    const Tensor<float> out = infer_image(q, img);
    d.per_image.push_back(psnr(out, ref));
  }
  double sum = 0.0;
  for (double v : d.per_image) sum += v;
  d.psnr = d.per_image.empty() ? 0.0 : sum / static_cast<double>(d.per_image.size());
  return d;
}

}  // namespace magic
