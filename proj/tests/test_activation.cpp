#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace snid;
using snid::testing::tanh_act;

TEST(Activation, TanhShiftRadius) { EXPECT_DOUBLE_EQ(tanh_act().tau_inf(), 0.6); }

TEST(Activation, TanhThirdDerivativeAtZero) { EXPECT_DOUBLE_EQ(tanh_act().d3(0.0), -2.0); }

TEST(Activation, SigmoidThirdDerivativeAtZero) {
  EXPECT_DOUBLE_EQ(make_activation(ActivationKind::Sigmoid).d3(0.0), -0.125);
}

TEST(Activation, SigmoidRadiusStaysInsideMonotoneRegion) {
  const Activation s = make_activation(ActivationKind::Sigmoid);
  EXPECT_DOUBLE_EQ(s.tau_inf(), 1.3);
  // g'' of the logistic turns at log(2 + sqrt 3); a 1.5 radius crosses it.
  EXPECT_LT(std::log(2.0 + std::sqrt(3.0)), 1.5);
  CustomActivation wide{[&](double t) { return s(t); }, [&](double t) { return s.d1(t); },
                        [&](double t) { return s.d2(t); }, [&](double t) { return s.d3(t); }, 1.5,
                        "sigmoid-wide"};
  EXPECT_THROW(make_activation(wide), ValidationError);
}

TEST(Activation, CustomRejectsTanhBeyondTurningPoint) {
  const Activation t = tanh_act();
  auto bundle = [&](double radius) {
    return CustomActivation{[&](double x) { return t(x); }, [&](double x) { return t.d1(x); },
                            [&](double x) { return t.d2(x); }, [&](double x) { return t.d3(x); },
                            radius, "tanh-custom"};
  };
  EXPECT_NO_THROW(make_activation(bundle(0.65)));
  try {
    make_activation(bundle(0.7));
    FAIL() << "expected a monotonicity violation";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("violation between"), std::string::npos);
  }
}

TEST(Activation, CustomBundleMustBeComplete) {
  CustomActivation c;
  c.tau_inf = 1.0;
  EXPECT_THROW(make_activation(c), ValidationError);
  EXPECT_THROW(make_activation(ActivationKind::Custom), ValidationError);
  EXPECT_THROW(parse_activation("relu"), ValidationError);
}

TEST(Activation, MonotoneAndSignInvariants) {
  for (auto kind : {ActivationKind::Tanh, ActivationKind::Sigmoid}) {
    const Activation a = make_activation(kind);
    const int grid = 1000;
    const double step = 2.0 * a.tau_inf() / (grid - 1);
    for (int i = 1; i < grid; ++i) {
      const double t = -a.tau_inf() + i * step;
      EXPECT_GT((a.d2(t) - a.d2(t - step)) * a.g2_monotone_sign(), 0.0);
      EXPECT_GT(a.d1(t), 0.0);
    }
  }
}

TEST(Activation, KappaBoundsDerivatives) {
  for (auto kind : {ActivationKind::Tanh, ActivationKind::Sigmoid}) {
    const Activation a = make_activation(kind);
    for (int i = 0; i <= 2000; ++i) {
      const double t = -10.0 + 20.0 * i / 2000.0;
      for (int n = 1; n <= 3; ++n) EXPECT_LE(std::abs(a.derivative(n, t)), a.kappa() + 1e-15);
    }
  }
  // |tanh'''| peaks at 2 at the origin.
  EXPECT_NEAR(tanh_act().kappa(), 2.0, 1e-9);
}

TEST(Activation, DerivativeConsistencyByFiniteDifferences) {
  const double h = 1e-4;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  for (auto kind : {ActivationKind::Tanh, ActivationKind::Sigmoid}) {
    const Activation a = make_activation(kind);
    for (int i = 0; i < 1000; ++i) {
      const double t = u(rng);
      for (int n = 0; n < 3; ++n) {
        const double fd = (a.derivative(n, t + h) - a.derivative(n, t - h)) / (2 * h);
        EXPECT_NEAR(fd, a.derivative(n + 1, t), 10 * h * h) << "order " << n << " at " << t;
      }
    }
  }
}

TEST(Activation, DerivativeOrderOutOfRange) {
  EXPECT_THROW(tanh_act().derivative(4, 0.0), ValidationError);
}

TEST(InvertG2, Examples) {
  const Activation a = tanh_act();
  EXPECT_NEAR(invert_g2(a, 0.0), 0.0, 1e-15);
  EXPECT_NEAR(invert_g2(a, a.d2(0.3)), 0.3, 1e-10);
  // g'' decreases on [-0.6, 0.6]: values above the image clamp to -0.6,
  // values below it to 0.6.
  EXPECT_DOUBLE_EQ(invert_g2(a, a.d2(-0.6) + 1.0), -0.6);
  EXPECT_DOUBLE_EQ(invert_g2(a, a.d2(0.6) - 1.0), 0.6);
  EXPECT_NEAR(a.d2(invert_g2(a, a.d2(-0.6) - 1.0)), a.d2(-0.6) - 1.0, 1e-12);
}

TEST(InvertG2, ResidualInsideImage) {
  const Activation a = tanh_act();
  const double lo = a.d2(a.tau_inf()), hi = a.d2(-a.tau_inf());
  for (int i = 1; i < 50; ++i) {
    const double y = lo + (hi - lo) * i / 50.0;
    EXPECT_LE(std::abs(a.d2(invert_g2(a, y)) - y), 1e-12);
  }
}

TEST(InvertG2, RoundTrip) {
  std::mt19937_64 rng(5);
  for (auto kind : {ActivationKind::Tanh, ActivationKind::Sigmoid}) {
    const Activation a = make_activation(kind);
    std::uniform_real_distribution<double> u(-a.tau_inf() + 0.01, a.tau_inf() - 0.01);
    for (int i = 0; i < 100; ++i) {
      const double tau = u(rng);
      EXPECT_NEAR(invert_g2(a, a.d2(tau)), tau, 1e-9);
    }
  }
}

TEST(InvertG2, RejectsNonFinite) {
  EXPECT_THROW(invert_g2(tanh_act(), std::nan("")), ValidationError);
  EXPECT_THROW(invert_g2(tanh_act(), INFINITY), ValidationError);
}

TEST(Activation, SignConstantCertificate) {
  EXPECT_EQ(certify_sign_constant(tanh_act()), 1);
  EXPECT_EQ(certify_sign_constant(make_activation(ActivationKind::Sigmoid)), 1);
}

TEST(Quadrature, GaussianMoments) {
  const GaussHermiteRule r = gauss_hermite(40);
  EXPECT_NEAR(r.expectation([](double) { return 1.0; }), 1.0, 1e-14);
  EXPECT_NEAR(r.expectation([](double x) { return x; }), 0.0, 1e-13);
  EXPECT_NEAR(r.expectation([](double x) { return x * x; }), 1.0, 1e-13);
  EXPECT_NEAR(r.expectation([](double x) { return x * x * x * x; }), 3.0, 1e-12);
  EXPECT_NEAR(r.expectation([](double x) { return std::pow(x, 6); }), 15.0, 1e-11);
}

TEST(Quadrature, HermiteOrthonormality) {
  const GaussHermiteRule r = gauss_hermite(60);
  const int rmax = 12;
  for (int i = 0; i <= rmax; ++i)
    for (int j = 0; j <= rmax; ++j) {
      const double v = r.expectation([&](double y) {
        const auto h = hermite_values(y, rmax);
        return h[i] * h[j];
      });
      EXPECT_NEAR(v, i == j ? 1.0 : 0.0, 1e-11) << i << "," << j;
    }
}
