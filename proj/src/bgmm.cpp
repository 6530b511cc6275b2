#include "mopr/bgmm.hpp"

#include "mopr/so3.hpp"

#include <json.hpp>

#include <boost/math/special_functions/digamma.hpp>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <numeric>

namespace mopr::bgmm {

namespace {

constexpr double kLn2Pi = 1.8378770664093453;  // ln(2*pi)
constexpr int kD = 3;

double digamma(double x) { return boost::math::digamma(x); }

// ln B(W, nu): Wishart normalizer, PRML B.79.
double ln_wishart_b(const Mat3& w, double nu) {
  const double ld = std::log(w.determinant());
  double s = -(nu / 2.0) * ld - (nu * kD / 2.0) * std::log(2.0) - (kD * (kD - 1) / 4.0) * std::log(M_PI);
  for (int i = 1; i <= kD; ++i) s -= std::lgamma((nu + 1 - i) / 2.0);
  return s;
}

double expected_ln_det_lambda(const Mat3& w, double nu) {
  double s = kD * std::log(2.0) + std::log(w.determinant());
  for (int i = 1; i <= kD; ++i) s += digamma((nu + 1 - i) / 2.0);
  return s;
}

struct RotationSpace {
  using Point = Rotation;
  static TangentVec log(const Point& anchor, const Point& x) { return log_raw(anchor, x); }
  static Point exp(const Point& anchor, const TangentVec& tau) { return so3::exp_at(anchor, tau); }
  static double distance(const Point& a, const Point& b) { return so3::geodesic_distance(a, b); }
};

struct EuclideanSpace {
  using Point = Vec3;
  static TangentVec log(const Point& anchor, const Point& x) { return x - anchor; }
  static Point exp(const Point& anchor, const TangentVec& tau) { return anchor + tau; }
  static double distance(const Point& a, const Point& b) { return (a - b).norm(); }
};

// k-means++ seeding under the space's metric.
template <class S>
std::vector<typename S::Point> seed_centers(const std::vector<typename S::Point>& data, int k, std::uint64_t& rng) {
  std::vector<typename S::Point> centers;
  centers.push_back(data[so3::splitmix64(rng) % data.size()]);
  std::vector<double> d2(data.size());
  while (int(centers.size()) < k) {
    double total = 0.0;
    for (std::size_t n = 0; n < data.size(); ++n) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centers) best = std::min(best, S::distance(data[n], c));
      d2[n] = best * best;
      total += d2[n];
    }
    std::size_t pick = 0;
    if (total < 1e-18) {
      pick = centers.size() % data.size();  // all points coincide with a center
    } else {
      const double r = so3::uniform01(rng) * total;
      double acc = 0.0;
      for (std::size_t n = 0; n < data.size(); ++n) {
        acc += d2[n];
        if (r <= acc) {
          pick = n;
          break;
        }
      }
    }
    centers.push_back(data[pick]);
  }
  return centers;
}

template <class S>
struct FitState {
  std::vector<Component> comps;
  std::vector<typename S::Point> means;
  Eigen::MatrixXd resp;  // N x K
  double lower_bound = 0.0;
  double initial_lower_bound = 0.0;
  int iterations = 0;
};

template <class S>
void e_step(const std::vector<typename S::Point>& data, FitState<S>& st) {
  const int n = int(data.size());
  const int k = int(st.comps.size());
  double alpha_sum = 0.0;
  for (const auto& c : st.comps) alpha_sum += c.alpha;
  const double dg_alpha_sum = digamma(alpha_sum);

  std::vector<double> ln_pi(k), ln_lambda(k);
  for (int j = 0; j < k; ++j) {
    ln_pi[j] = digamma(st.comps[j].alpha) - dg_alpha_sum;
    ln_lambda[j] = expected_ln_det_lambda(st.comps[j].w, st.comps[j].nu);
  }

  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd ln_rho(k);
    for (int j = 0; j < k; ++j) {
      const TangentVec tau = S::log(st.means[j], data[i]);
      const double quad = kD / st.comps[j].beta + st.comps[j].nu * tau.dot(st.comps[j].w * tau);
      ln_rho(j) = ln_pi[j] + 0.5 * ln_lambda[j] - 0.5 * kD * kLn2Pi - 0.5 * quad;
    }
    const double mx = ln_rho.maxCoeff();
    double denom = 0.0;
    for (int j = 0; j < k; ++j) denom += std::exp(ln_rho(j) - mx);
    for (int j = 0; j < k; ++j) st.resp(i, j) = std::exp(ln_rho(j) - mx) / denom;
  }
}

// Variational lower bound, PRML 10.70-10.77 with tangent-frame statistics.
template <class S>
double lower_bound(const std::vector<typename S::Point>& data, const FitState<S>& st, const BgmmConfig& cfg,
                   const typename S::Point& m0, const Mat3& w0_inv) {
  const int n = int(data.size());
  const int k = int(st.comps.size());
  const double alpha0 = cfg.alpha0_or_default();
  const Mat3 w0 = w0_inv.inverse();

  double alpha_sum = 0.0;
  for (const auto& c : st.comps) alpha_sum += c.alpha;
  const double dg_alpha_sum = digamma(alpha_sum);

  double lb = 0.0;
  // ln C(alpha_0 * 1) and ln C(alpha)
  double ln_c_alpha0 = std::lgamma(k * alpha0) - k * std::lgamma(alpha0);
  double ln_c_alpha = std::lgamma(alpha_sum);
  for (const auto& c : st.comps) ln_c_alpha -= std::lgamma(c.alpha);

  double sum_ln_pi_prior = 0.0;
  for (int j = 0; j < k; ++j) {
    const double ln_pi = digamma(st.comps[j].alpha) - dg_alpha_sum;
    sum_ln_pi_prior += ln_pi;
  }

  for (int j = 0; j < k; ++j) {
    const Component& c = st.comps[j];
    const double ln_pi = digamma(c.alpha) - dg_alpha_sum;
    const double ln_lambda = expected_ln_det_lambda(c.w, c.nu);

    // Weighted statistics in the tangent frame at the component mean.
    double n_k = 0.0;
    TangentVec xbar = TangentVec::Zero();
    for (int i = 0; i < n; ++i) {
      const double r = st.resp(i, j);
      n_k += r;
      xbar += r * S::log(st.means[j], data[i]);
    }
    const double n_safe = std::max(n_k, 1e-12);
    xbar /= n_safe;
    Mat3 s_k = Mat3::Zero();
    for (int i = 0; i < n; ++i) {
      const TangentVec d = S::log(st.means[j], data[i]) - xbar;
      s_k += st.resp(i, j) * d * d.transpose();
    }
    s_k /= n_safe;

    // 10.71
    lb += 0.5 * n_k *
          (ln_lambda - kD / c.beta - c.nu * (s_k * c.w).trace() - c.nu * xbar.dot(c.w * xbar) - kD * kLn2Pi);
    // 10.72
    for (int i = 0; i < n; ++i) lb += st.resp(i, j) * ln_pi;
    // 10.74 component part
    const TangentVec dm = S::log(st.means[j], m0);
    lb += 0.5 * (kD * std::log(cfg.beta0 / (2.0 * M_PI)) + ln_lambda - kD * cfg.beta0 / c.beta -
                 cfg.beta0 * c.nu * dm.dot(c.w * dm));
    lb += 0.5 * (cfg.nu0 - kD - 1.0) * ln_lambda - 0.5 * c.nu * (w0_inv * c.w).trace();
    // -10.76 part: -(alpha_k - 1) ln pi
    lb -= (c.alpha - 1.0) * ln_pi;
    // -10.77
    const double h_wishart = -ln_wishart_b(c.w, c.nu) - 0.5 * (c.nu - kD - 1.0) * ln_lambda + 0.5 * c.nu * kD;
    lb -= 0.5 * ln_lambda + 0.5 * kD * std::log(c.beta / (2.0 * M_PI)) - 0.5 * kD - h_wishart;
  }
  // 10.73
  lb += ln_c_alpha0 + (alpha0 - 1.0) * sum_ln_pi_prior;
  // 10.74 normalizer
  lb += k * ln_wishart_b(w0, cfg.nu0);
  // -10.75
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) {
      const double r = st.resp(i, j);
      if (r > 1e-300) lb -= r * std::log(r);
    }
  // -10.76 normalizer
  lb -= ln_c_alpha;
  return lb;
}

template <class S>
FitState<S> fit(const std::vector<typename S::Point>& data, const BgmmConfig& cfg) {
  if (data.empty()) throw Error(ErrorCode::empty_input, "bgmm: no data");
  const int n = int(data.size());
  const int k = std::max(cfg.max_components, 1);
  const double alpha0 = cfg.alpha0_or_default();
  const Mat3 w0 = Mat3::Identity() / (cfg.sigma0 * cfg.sigma0);
  const Mat3 w0_inv = Mat3::Identity() * (cfg.sigma0 * cfg.sigma0);

  std::uint64_t rng = cfg.seed * 0x9e3779b97f4a7c15ULL + 0x1234567;
  FitState<S> st;
  st.means = seed_centers<S>(data, k, rng);
  const typename S::Point m0 = st.means.front();  // prior mean = first seeded center
  st.comps.assign(k, Component{});
  for (auto& c : st.comps) {
    c.alpha = alpha0;
    c.beta = cfg.beta0;
    c.nu = cfg.nu0;
    c.w = w0;
  }
  st.resp = Eigen::MatrixXd::Zero(n, k);

  // Hard assignment to the nearest seeded center breaks the symmetry between
  // components; duplicate centers collapse to prior weight.
  for (int i = 0; i < n; ++i) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int j = 0; j < k; ++j) {
      const double d = S::distance(data[std::size_t(i)], st.means[std::size_t(j)]);
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    st.resp(i, best) = 1.0;
  }
  bool have_initial_bound = false;

  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    st.iterations = iter + 1;
    double max_mean_change = 0.0;

    for (int j = 0; j < k; ++j) {
      Component& c = st.comps[j];
      const typename S::Point mean_prev = st.means[j];

      double n_k = 0.0;
      TangentVec xbar = TangentVec::Zero();  // Log at the previous mean
      for (int i = 0; i < n; ++i) {
        n_k += st.resp(i, j);
        xbar += st.resp(i, j) * S::log(mean_prev, data[i]);
      }
      const double n_safe = std::max(n_k, 1e-12);
      xbar /= n_safe;

      c.n_k = n_k;
      c.alpha = alpha0 + n_k;
      c.beta = cfg.beta0 + n_k;
      c.nu = cfg.nu0 + n_k;

      const TangentVec m0_local = S::log(mean_prev, m0);
      const TangentVec step = (cfg.beta0 * m0_local + n_k * xbar) / c.beta;
      const typename S::Point mean_new = S::exp(mean_prev, step);

      // Re-express the data mean in the updated tangent frame.
      const TangentVec xtilde = S::log(mean_new, S::exp(mean_prev, xbar));
      Mat3 s_k = Mat3::Zero();
      for (int i = 0; i < n; ++i) {
        const TangentVec d = S::log(mean_new, data[i]) - xtilde;
        s_k += st.resp(i, j) * d * d.transpose();
      }
      s_k /= n_safe;

      const TangentVec dp = xtilde - S::log(mean_new, m0);
      Mat3 w_inv = w0_inv + n_k * s_k + (cfg.beta0 * n_k / (cfg.beta0 + n_k)) * dp * dp.transpose();

      Eigen::LLT<Mat3> llt(w_inv);
      if (llt.info() != Eigen::Success) {
        w_inv += 1e-9 * Mat3::Identity();
        llt.compute(w_inv);
        if (llt.info() != Eigen::Success)
          throw Error(ErrorCode::numerical, "bgmm: Wishart scale lost positive-definiteness");
      }
      c.w = llt.solve(Mat3::Identity());

      max_mean_change = std::max(max_mean_change, S::log(mean_prev, mean_new).cwiseAbs().maxCoeff());
      st.means[j] = mean_new;
    }

    e_step<S>(data, st);
    if (!have_initial_bound) {
      st.initial_lower_bound = lower_bound<S>(data, st, cfg, m0, w0_inv);
      have_initial_bound = true;
    }
    if (max_mean_change < cfg.convergence_tol) break;
  }

  double alpha_sum = 0.0;
  for (const auto& c : st.comps) alpha_sum += c.alpha;
  for (auto& c : st.comps) c.mix_weight = c.alpha / alpha_sum;
  st.lower_bound = lower_bound<S>(data, st, cfg, m0, w0_inv);
  return st;
}

template <class R, class S>
R to_result(FitState<S>&& st) {
  R r;
  r.components = std::move(st.comps);
  r.means = std::move(st.means);
  r.responsibilities = std::move(st.resp);
  r.lower_bound = st.lower_bound;
  r.initial_lower_bound = st.initial_lower_bound;
  r.iterations = st.iterations;
  return r;
}

template <class R>
int dominant(const R& res) {
  int best = 0;
  for (std::size_t j = 1; j < res.components.size(); ++j)
    if (res.components[j].mix_weight > res.components[best].mix_weight) best = int(j);
  return best;
}

template <class R>
std::vector<int> effective(const R& res) {
  std::vector<int> out;
  const double thr = 1.0 / (10.0 * double(res.components.size()));
  for (std::size_t j = 0; j < res.components.size(); ++j)
    if (res.components[j].mix_weight > thr) out.push_back(int(j));
  return out;
}

}  // namespace

TangentVec log_raw(const Rotation& anchor, const Rotation& x) {
  return so3::log_so3(Rotation(anchor.transpose() * x));
}

int So3FitResult::dominant_component() const { return dominant(*this); }
std::vector<int> So3FitResult::effective_components() const { return effective(*this); }
int EuclideanFitResult::dominant_component() const { return dominant(*this); }
std::vector<int> EuclideanFitResult::effective_components() const { return effective(*this); }

So3FitResult fit_so3(const std::vector<Rotation>& rotations, const BgmmConfig& config) {
  return to_result<So3FitResult>(fit<RotationSpace>(rotations, config));
}

EuclideanFitResult fit_euclidean(const std::vector<Vec3>& points, const BgmmConfig& config) {
  return to_result<EuclideanFitResult>(fit<EuclideanSpace>(points, config));
}

PcgMixture fit_pcg3(const std::vector<Pose>& poses, const SymmetryGroup& sym, const BgmmConfig& config) {
  if (poses.empty()) throw Error(ErrorCode::empty_input, "fit_pcg3: no poses");

  std::vector<Rotation> rotations;
  rotations.reserve(poses.size());
  for (const auto& p : poses) rotations.push_back(p.rotation);

  const So3FitResult pass1 = fit_so3(rotations, config);
  const Rotation r0 = pass1.means[std::size_t(pass1.dominant_component())];

  std::vector<Rotation> canonical(rotations.size());
  for (std::size_t i = 0; i < rotations.size(); ++i) canonical[i] = so3::canonicalize(rotations[i], r0, sym);

  BgmmConfig cfg2 = config;
  cfg2.seed = config.seed + 1;
  const So3FitResult pass2 = fit_so3(canonical, cfg2);

  // Hard assignment for nested translation fits; ties to the lower index.
  const int k = int(pass2.components.size());
  std::vector<std::vector<Vec3>> member_t{std::size_t(k)};
  for (std::size_t i = 0; i < poses.size(); ++i) {
    int best = 0;
    for (int j = 1; j < k; ++j)
      if (pass2.responsibilities(Eigen::Index(i), j) > pass2.responsibilities(Eigen::Index(i), best)) best = j;
    member_t[std::size_t(best)].push_back(poses[i].translation);
  }

  PcgMixture mix;
  mix.r0 = r0;
  mix.sym = sym;
  double weight_sum = 0.0;
  for (int j = 0; j < k; ++j) {
    if (member_t[std::size_t(j)].empty()) continue;
    BgmmConfig tcfg = config;
    tcfg.seed = config.seed + 2 + std::uint64_t(j);
    tcfg.sigma0 = 0.05;
    const EuclideanFitResult tfit = fit_euclidean(member_t[std::size_t(j)], tcfg);

    TranslationMixture tm;
    double tw_sum = 0.0;
    // Retain translation components that own at least a nominal share of data.
    std::vector<std::vector<int>> owners(tfit.components.size());
    for (Eigen::Index i = 0; i < tfit.responsibilities.rows(); ++i) {
      int best = 0;
      for (int c = 1; c < int(tfit.components.size()); ++c)
        if (tfit.responsibilities(i, c) > tfit.responsibilities(i, best)) best = c;
      owners[std::size_t(best)].push_back(int(i));
    }
    for (std::size_t c = 0; c < tfit.components.size(); ++c) {
      if (owners[c].empty()) continue;
      tm.components.push_back(tfit.components[c]);
      tm.means.push_back(tfit.means[c]);
      tw_sum += tfit.components[c].mix_weight;
    }
    for (auto& tc : tm.components) tc.mix_weight /= tw_sum;

    mix.rot_components.push_back(pass2.components[std::size_t(j)]);
    mix.rot_means.push_back(pass2.means[std::size_t(j)]);
    mix.translations.push_back(std::move(tm));
    weight_sum += pass2.components[std::size_t(j)].mix_weight;
  }
  for (auto& c : mix.rot_components) c.mix_weight /= weight_sum;
  return mix;
}

namespace {

Vec3 sample_gaussian_precision(const Mat3& precision, std::uint64_t& rng) {
  Eigen::LLT<Mat3> llt(precision);
  Vec3 z;
  for (int i = 0; i < 3; ++i) {
    const double u1 = std::max(so3::uniform01(rng), 1e-300);
    const double u2 = so3::uniform01(rng);
    z(i) = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }
  // cov = precision^-1 = L^-T L^-1, so x = L^-T z.
  return llt.matrixU().solve(z);
}

int pick_weighted(const std::vector<Component>& comps, std::uint64_t& rng) {
  const double r = so3::uniform01(rng);
  double acc = 0.0;
  for (std::size_t j = 0; j < comps.size(); ++j) {
    acc += comps[j].mix_weight;
    if (r <= acc) return int(j);
  }
  return int(comps.size()) - 1;
}

}  // namespace

std::vector<Pose> sample(const PcgMixture& mixture, int n, std::uint64_t seed) {
  std::vector<Pose> out;
  if (n <= 0 || mixture.rot_components.empty()) return out;
  std::uint64_t rng = seed * 0x9e3779b97f4a7c15ULL + 99;
  out.reserve(std::size_t(n));
  for (int i = 0; i < n; ++i) {
    const int j = pick_weighted(mixture.rot_components, rng);
    Pose p;
    const Vec3 tau = sample_gaussian_precision(mixture.rot_components[std::size_t(j)].expected_precision(), rng);
    p.rotation = so3::exp_at(mixture.rot_means[std::size_t(j)], tau);
    const auto& tm = mixture.translations[std::size_t(j)];
    const int c = pick_weighted(tm.components, rng);
    p.translation =
        tm.means[std::size_t(c)] + sample_gaussian_precision(tm.components[std::size_t(c)].expected_precision(), rng);
    out.push_back(p);
  }
  return out;
}

ContainsResult bounding_volume_contains(const PcgMixture& mixture, const Pose& pose, double n_sigma) {
  ContainsResult res;
  res.rotation = rotation_mahalanobis(mixture, pose.rotation) <= n_sigma;
  for (const auto& tm : mixture.translations)
    for (std::size_t c = 0; c < tm.components.size() && !res.translation; ++c) {
      const Vec3 d = pose.translation - tm.means[c];
      if (std::sqrt(d.dot(tm.components[c].expected_precision() * d)) <= n_sigma) res.translation = true;
    }
  return res;
}

double rotation_mahalanobis(const PcgMixture& mixture, const Rotation& r) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < mixture.rot_components.size(); ++j) {
    const TangentVec tau = log_raw(mixture.rot_means[j], r);
    best = std::min(best, std::sqrt(tau.dot(mixture.rot_components[j].expected_precision() * tau)));
  }
  return best;
}

namespace {

// Nearest point of the ellipsoid {x : (x-mu)^T A (x-mu) = s2} to an outside
// point, via the standard 1-D secular equation on the eigenbasis of A.
Vec3 nearest_on_ellipsoid(const Vec3& mu, const Mat3& a, double s2, const Vec3& t) {
  Eigen::SelfAdjointEigenSolver<Mat3> es(a);
  const Vec3 lam = es.eigenvalues();
  const Vec3 d = es.eigenvectors().transpose() * (t - mu);
  auto value = [&](double theta) {
    double v = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double den = 1.0 + theta * lam(i);
      v += lam(i) * d(i) * d(i) / (den * den);
    }
    return v;
  };
  double lo = 0.0, hi = 1.0;
  while (value(hi) > s2 && hi < 1e12) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (value(mid) > s2)
      lo = mid;
    else
      hi = mid;
  }
  const double theta = 0.5 * (lo + hi);
  Vec3 y;
  for (int i = 0; i < 3; ++i) y(i) = d(i) / (1.0 + theta * lam(i));
  return mu + es.eigenvectors() * y;
}

}  // namespace

Vec3 nearest_translation_in_bound(const PcgMixture& mixture, const Vec3& t, double n_sigma) {
  Vec3 best = t;
  double best_dist = std::numeric_limits<double>::infinity();
  for (const auto& tm : mixture.translations)
    for (std::size_t c = 0; c < tm.components.size(); ++c) {
      const Mat3 prec = tm.components[c].expected_precision();
      const Vec3 d = t - tm.means[c];
      if (std::sqrt(d.dot(prec * d)) <= n_sigma) return t;
      const Vec3 p = nearest_on_ellipsoid(tm.means[c], prec, n_sigma * n_sigma, t);
      const double dist = (p - t).norm();
      if (dist < best_dist) {
        best_dist = dist;
        best = p;
      }
    }
  return best;
}

std::string mixture_to_json(const PcgMixture& mixture) {
  nlohmann::json j;
  j["version"] = 1;
  j["r0"] = std::vector<double>(mixture.r0.data(), mixture.r0.data() + 9);
  auto upper6 = [](const Mat3& m) {
    return std::vector<double>{m(0, 0), m(0, 1), m(0, 2), m(1, 1), m(1, 2), m(2, 2)};
  };
  j["rotation_components"] = nlohmann::json::array();
  for (std::size_t k = 0; k < mixture.rot_components.size(); ++k) {
    nlohmann::json cj;
    std::vector<double> mean;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) mean.push_back(mixture.rot_means[k](r, c));
    cj["mean"] = mean;
    cj["weight"] = mixture.rot_components[k].mix_weight;
    cj["covariance_upper"] = upper6(mixture.rot_components[k].expected_precision().inverse());
    cj["translations"] = nlohmann::json::array();
    const auto& tm = mixture.translations[k];
    for (std::size_t c = 0; c < tm.components.size(); ++c) {
      nlohmann::json tj;
      tj["mean"] = {tm.means[c].x(), tm.means[c].y(), tm.means[c].z()};
      tj["weight"] = tm.components[c].mix_weight;
      tj["covariance_upper"] = upper6(tm.components[c].expected_precision().inverse());
      cj["translations"].push_back(tj);
    }
    j["rotation_components"].push_back(cj);
  }
  return j.dump(2);
}

}  // namespace mopr::bgmm
