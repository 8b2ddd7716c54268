#pragma once

// Scalar-loop reference of the contrastive objectives, written directly from
// the formulas and sharing no code with the library.

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

namespace hsa::oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

inline double dotp(const Vec& a, const Vec& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// log of exp(q.k/tau) / (exp(q.k/tau) + sum_i exp(q.n_i/tau)).
inline double log_ratio(const Vec& q, const Vec& k, const Mat& neg, double tau) {
  std::vector<double> logits{dotp(q, k) / tau};
  for (const auto& n : neg) logits.push_back(dotp(q, n) / tau);
  const double mx = *std::max_element(logits.begin(), logits.end());
  double s = 0;
  for (double l : logits) s += std::exp(l - mx);
  return logits[0] - (mx + std::log(s));
}

inline double info_nce(const Vec& q, const Vec& k, const Mat& neg, double tau) { return -log_ratio(q, k, neg, tau); }

inline double pair(const Vec& q, const Vec& ka, const Vec& kp, const Mat& neg, double tau) {
  return 0.5 * (info_nce(q, ka, neg, tau) + info_nce(q, kp, neg, tau));
}

inline double mixed(const Vec& q, const Vec& ka, const Vec& kp, const Mat& neg, double tau, double lam) {
  return -(lam * log_ratio(q, ka, neg, tau) + (1 - lam) * log_ratio(q, kp, neg, tau));
}

struct Head {
  Mat qa, qp, qm, ka, kp, neg;
  Vec lambda;
};

inline double mean(const Vec& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / double(v.size());
}

/// wa * L_qa + wp * L_qp + wm * L_qhat, each a batch mean.
inline double head(const Head& h, double tau, double wa, double wp, double wm) {
  Vec a, p, m;
  for (std::size_t i = 0; i < h.qa.size(); ++i) {
    a.push_back(pair(h.qa[i], h.ka[i], h.kp[i], h.neg, tau));
    p.push_back(pair(h.qp[i], h.ka[i], h.kp[i], h.neg, tau));
    m.push_back(mixed(h.qm[i], h.ka[i], h.kp[i], h.neg, tau, h.lambda[i]));
  }
  return wa * mean(a) + wp * mean(p) + wm * mean(m);
}

/// Main head plus equal-weight stage heads.
inline double total(const Head& main, const std::map<int, Head>& stages, double tau, double wa, double wp, double wm) {
  double t = head(main, tau, wa, wp, wm);
  for (const auto& [l, h] : stages) t += head(h, tau, 1.0 / 3, 1.0 / 3, 1.0 / 3);
  return t;
}

}  // namespace hsa::oracle
