#include <cmath>
#include <sstream>

#include "nullctl/errors.hpp"
#include "nullctl/weights.hpp"

namespace nullctl {

std::string to_string(GammaVariant v) {
  switch (v) {
    case GammaVariant::Backward: return "backward";
    case GammaVariant::BackwardRegularized: return "backward-regularized";
    case GammaVariant::Forward: return "forward";
    case GammaVariant::ForwardRegularized: return "forward-regularized";
  }
  return "?";
}

GammaVariant parse_gamma_variant(const std::string& s) {
  if (s == "backward") return GammaVariant::Backward;
  if (s == "backward-regularized") return GammaVariant::BackwardRegularized;
  if (s == "forward") return GammaVariant::Forward;
  if (s == "forward-regularized") return GammaVariant::ForwardRegularized;
  throw ValidationError("unknown weight variant '" + s + "'");
}

bool is_regularized(GammaVariant v) {
  return v == GammaVariant::BackwardRegularized || v == GammaVariant::ForwardRegularized;
}

bool is_forward(GammaVariant v) {
  return v == GammaVariant::Forward || v == GammaVariant::ForwardRegularized;
}

GammaVariant unregularized(GammaVariant v) {
  return is_forward(v) ? GammaVariant::Forward : GammaVariant::Backward;
}

namespace {

constexpr GammaValue kOne{1.0, 0.0, 0.0};

}  // namespace

Gamma::Gamma(GammaVariant variant, double T, double m, double sigma, double eps,
             std::optional<BridgeKind> force_main)
    : variant_(variant), T_(T), m_(m), sigma_(sigma), eps_(eps) {
  if (!(T > 0.0 && T < 1.0)) throw ValidationError("gamma: T must be in (0, 1)");
  if (!(m >= 1.0)) throw ValidationError("gamma: m must be >= 1");
  if (!(sigma > 2.0)) throw ValidationError("gamma: sigma must exceed 2");
  if (is_regularized(variant) && !(eps > 0.0 && eps < T / 4))
    throw ValidationError("gamma: eps must be in (0, T/4) for regularized variants");
  if (!is_regularized(variant)) eps_ = 0.0;

  auto build = [&](BridgeKind main_kind, BridgeKind reg_kind) {
    main_ = make_bridge(T_ / 4, T_ / 2, head_power(T_ / 4), kOne, main_kind, false);
    if (main_kind == BridgeKind::Quintic && !bridge_monotone(main_))
      main_ = make_bridge(T_ / 4, T_ / 2, head_power(T_ / 4), kOne, BridgeKind::Smoothstep, false);
    if (variant_ == GammaVariant::ForwardRegularized) {
      const double t0 = T_ / 2 + eps_, t1 = 3 * T_ / 4;
      fwd_reg_ = make_bridge(t0, t1, kOne, fwd_reg_power(t1), reg_kind, true);
      if (reg_kind == BridgeKind::Quintic && !bridge_monotone(fwd_reg_))
        fwd_reg_ = make_bridge(t0, t1, kOne, fwd_reg_power(t1), BridgeKind::Smoothstep, true);
    }
  };

  const BridgeKind first = force_main.value_or(BridgeKind::Quintic);
  build(first, BridgeKind::Quintic);
  if (is_regularized(variant_) && !regularized_below_plain()) {
    build(first, BridgeKind::Smoothstep);
    if (!regularized_below_plain() && !force_main) build(BridgeKind::Smoothstep, BridgeKind::Smoothstep);
    if (!regularized_below_plain())
      throw NumericalError("gamma: regularized profile exceeds the plain profile");
  }
}

GammaValue Gamma::head_power(double t) const {
  const double v = std::pow(t, -m_);
  return {v, -m_ * v / t, m_ * (m_ + 1) * v / (t * t)};
}

GammaValue Gamma::fwd_reg_power(double t) const {
  const double r = T_ - t + eps_;
  const double v = std::pow(r, -m_);
  return {v, m_ * v / r, m_ * (m_ + 1) * v / (r * r)};
}

GammaValue Gamma::tail(double t) const {
  const double q = 4.0 * t / T_ - 3.0;
  if (q <= 0.0) return kOne;
  const double lq = std::log(q);
  const double k = 4.0 / T_;
  return {1.0 + std::exp(sigma_ * lq), sigma_ * std::exp((sigma_ - 1) * lq) * k,
          sigma_ * (sigma_ - 1) * std::exp((sigma_ - 2) * lq) * k * k};
}

Gamma::Bridge Gamma::make_bridge(double t0, double t1, GammaValue left, GammaValue right,
                                 BridgeKind kind, bool increasing) const {
  Bridge b;
  b.t0 = t0;
  b.t1 = t1;
  b.kind = kind;
  b.increasing = increasing;
  const double L = t1 - t0;
  b.c[0] = left.value;
  b.c[1] = L * left.d1;
  b.c[2] = 0.5 * L * L * left.d2;
  const double P = right.value - (b.c[0] + b.c[1] + b.c[2]);
  const double D = L * right.d1 - (b.c[1] + 2 * b.c[2]);
  const double A = L * L * right.d2 - 2 * b.c[2];
  b.c[3] = 10 * P - 4 * D + 0.5 * A;
  b.c[4] = -15 * P + 7 * D - A;
  b.c[5] = 6 * P - 3 * D + 0.5 * A;
  return b;
}

GammaValue Gamma::eval_bridge(const Bridge& b, double t) const {
  const double L = b.t1 - b.t0;
  const double s = (t - b.t0) / L;
  if (b.kind == BridgeKind::Quintic) {
    const double* c = b.c;
    const double p = c[0] + s * (c[1] + s * (c[2] + s * (c[3] + s * (c[4] + s * c[5]))));
    const double dp = c[1] + s * (2 * c[2] + s * (3 * c[3] + s * (4 * c[4] + s * 5 * c[5])));
    const double ddp = 2 * c[2] + s * (6 * c[3] + s * (12 * c[4] + s * 20 * c[5]));
    return {p, dp / L, ddp / (L * L)};
  }
  // (1 - S) * left + S * right, both closed forms continued across the bridge
  const GammaValue lf = b.increasing ? kOne : head_power(t);
  const GammaValue rf = b.increasing ? fwd_reg_power(t) : kOne;
  const double S = s * s * s * (10 + s * (-15 + 6 * s));
  const double dS = 30 * s * s * (1 + s * (-2 + s)) / L;
  const double ddS = 60 * s * (1 + s * (-3 + 2 * s)) / (L * L);
  const double diff = rf.value - lf.value;
  const double ddiff = rf.d1 - lf.d1;
  return {(1 - S) * lf.value + S * rf.value, (1 - S) * lf.d1 + S * rf.d1 + dS * diff,
          (1 - S) * lf.d2 + S * rf.d2 + 2 * dS * ddiff + ddS * diff};
}

bool Gamma::bridge_monotone(const Bridge& b) const {
  constexpr int kSamples = 4000;
  double prev = eval_bridge(b, b.t0).value;
  for (int j = 1; j <= kSamples; ++j) {
    const double t = b.t0 + (b.t1 - b.t0) * j / kSamples;
    const GammaValue g = eval_bridge(b, t);
    const double slack = 1e-13 * std::abs(g.value);
    if (b.increasing ? (g.value < prev - slack) : (g.value > prev + slack)) return false;
    prev = g.value;
  }
  return true;
}

bool Gamma::regularized_below_plain() const {
  constexpr int kSamples = 8000;
  for (int j = 0; j <= kSamples; ++j) {
    const double t = T_ * j / kSamples;
    if (plain_singular_at(t)) continue;
    const double r = eval(t).value;
    const double p = eval_plain(t).value;
    if (r > p * (1 + 1e-14)) return false;
  }
  return true;
}

GammaValue Gamma::backward(double t) const {
  if (t <= T_ / 4) return head_power(t);
  if (t <= T_ / 2) return eval_bridge(main_, t);
  if (t <= 3 * T_ / 4) return kOne;
  return tail(t);
}

GammaValue Gamma::forward(double t) const {
  const GammaValue g = backward(T_ - t);
  return {g.value, -g.d1, g.d2};
}

GammaValue Gamma::backward_reg(double t) const {
  if (t <= T_ / 2 - eps_) return backward(t + eps_);
  if (t <= 3 * T_ / 4) return kOne;
  return tail(t);
}

GammaValue Gamma::forward_reg(double t) const {
  if (t <= T_ / 4) {
    const GammaValue g = tail(T_ - t);
    return {g.value, -g.d1, g.d2};
  }
  if (t <= T_ / 2 + eps_) return kOne;
  if (t <= 3 * T_ / 4) return eval_bridge(fwd_reg_, t);
  return fwd_reg_power(t);
}

bool Gamma::plain_singular_at(double t) const {
  return is_forward(variant_) ? t >= T_ : t <= 0.0;
}

bool Gamma::singular_at(double t) const {
  return is_regularized(variant_) ? false : plain_singular_at(t);
}

namespace {

void check_range(double t, double T) {
  if (!(t >= 0.0 && t <= T)) {
    std::ostringstream os;
    os << "gamma: t=" << t << " outside [0, T]";
    throw ValidationError(os.str());
  }
}

}  // namespace

GammaValue Gamma::eval_plain(double t) const {
  check_range(t, T_);
  if (plain_singular_at(t)) {
    std::ostringstream os;
    os << "gamma: singular endpoint t=" << t << " for the " << to_string(unregularized(variant_))
       << " profile";
    throw SingularityError(os.str());
  }
  return is_forward(variant_) ? forward(t) : backward(t);
}

GammaValue Gamma::eval(double t) const {
  switch (variant_) {
    case GammaVariant::Backward:
    case GammaVariant::Forward: return eval_plain(t);
    case GammaVariant::BackwardRegularized: check_range(t, T_); return backward_reg(t);
    case GammaVariant::ForwardRegularized: check_range(t, T_); return forward_reg(t);
  }
  return kOne;
}

std::vector<double> Gamma::junctions() const {
  switch (variant_) {
    case GammaVariant::Backward:
    case GammaVariant::Forward: return {T_ / 4, T_ / 2, 3 * T_ / 4};
    case GammaVariant::BackwardRegularized: return {T_ / 4 - eps_, T_ / 2 - eps_, 3 * T_ / 4};
    case GammaVariant::ForwardRegularized: return {T_ / 4, T_ / 2 + eps_, 3 * T_ / 4};
  }
  return {};
}

std::vector<JunctionCheck> check_junctions(const Gamma& g, double step) {
  // second-order one-sided extrapolations of value, first and second derivative
  auto one_sided = [&](double t, double h, double out[3]) {
    const double f0 = g.value(t + 1 * h), f1 = g.value(t + 2 * h), f2 = g.value(t + 3 * h),
                 f3 = g.value(t + 4 * h);
    // samples at t + h, t + 2h, ... extrapolated to t (h may be negative)
    out[0] = 3 * f0 - 3 * f1 + f2;
    out[1] = (-(26.0 / 6) * f0 + (57.0 / 6) * f1 - 7 * f2 + (11.0 / 6) * f3) / h;
    out[2] = (3 * f0 - 8 * f1 + 7 * f2 - 2 * f3) / (h * h);
  };
  std::vector<JunctionCheck> out;
  for (double tj : g.junctions()) {
    JunctionCheck jc{};
    jc.t = tj;
    double l[3], r[3], lh[3], rh[3];
    one_sided(tj, -step, l);
    one_sided(tj, step, r);
    one_sided(tj, -step / 2, lh);
    one_sided(tj, step / 2, rh);
    const double scale = std::abs(g.value(tj));
    jc.pass = true;
    for (int k = 0; k < 3; ++k) {
      jc.jump[k] = std::abs(l[k] - r[k]);
      jc.jump_half[k] = std::abs(lh[k] - rh[k]);
      // rounding floor of the k-th difference quotient
      const double floor = 1e4 * 2.2e-16 * scale / std::pow(step / 2, k);
      const bool tiny = jc.jump[k] <= floor && jc.jump_half[k] <= floor;
      // an O(step^2) discrepancy shrinks about fourfold when the step halves
      const bool second_order = jc.jump_half[k] <= 0.35 * jc.jump[k] + floor;
      if (!(tiny || second_order)) jc.pass = false;
    }
    out.push_back(jc);
  }
  return out;
}

}  // namespace nullctl
