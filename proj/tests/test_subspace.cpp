#include <cmath>

#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace snid;
using namespace snid::testing;

namespace {

Eigen::MatrixXd orthonormal_columns(Rng& rng, Eigen::Index D, Eigen::Index m) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian_matrix(rng, D, D));
  return qr.householderQ() * Eigen::MatrixXd::Identity(D, m);
}

Eigen::MatrixXd exact_columns(const Eigen::MatrixXd& w) {
  Eigen::MatrixXd c(hvec_size(w.rows()), w.cols());
  for (Eigen::Index k = 0; k < w.cols(); ++k) c.col(k) = hvec(w.col(k) * w.col(k).transpose());
  return c;
}

}  // namespace

TEST(HalfVec, Isometry) {
  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    const Eigen::Index D = 1 + t % 9;
    const Eigen::MatrixXd a = random_symmetric(rng, D), b = random_symmetric(rng, D);
    EXPECT_NEAR(hvec(a).dot(hvec(b)), (a.array() * b.array()).sum(), 1e-12);
    EXPECT_LE((unhvec(hvec(a), D) - a).norm(), 1e-14);
  }
}

TEST(HalfVec, OuterProductShortcut) {
  Rng rng(2);
  const Eigen::VectorXd u = gaussian_vector(rng, 6);
  EXPECT_LE((hvec_outer(u) - hvec(u * u.transpose())).norm(), 1e-14);
  EXPECT_EQ(hvec_size(20), 210);
  EXPECT_THROW(unhvec(Eigen::VectorXd::Zero(5), 3), ValidationError);
  EXPECT_THROW(hvec(Eigen::MatrixXd::Zero(2, 3)), ValidationError);
}

TEST(HessianMatrix, ColumnCountAndQueries) {
  const auto net = random_teacher(5, 3, 1);
  const HessianSample hs = build_hessian_matrix(net, 7, DerivativeMode{false, FDConfig{}}, 9);
  EXPECT_EQ(hs.columns.cols(), 7);
  EXPECT_EQ(hs.columns.rows(), 15);
  EXPECT_EQ(hs.queries, 7u * 51u);
  EXPECT_EQ(net.query_count(), 7u * 51u);
  EXPECT_EQ(net.oracle_calls(), 0u);

  const auto exact = build_hessian_matrix(net, 7, DerivativeMode{true, {}}, 9);
  EXPECT_EQ(exact.oracle_calls, 7u);
  EXPECT_EQ(net.query_count(), 7u * 51u);
  // Same seed, same anchors.
  EXPECT_EQ(exact.anchors, hs.anchors);
}

TEST(HessianMatrix, DefaultCountAtGridPoint) {
  PipelineConfig cfg;
  cfg.D = 20;
  cfg.beta_order = 1.5;
  EXPECT_EQ(cfg.resolved_m(), 36);
  EXPECT_EQ(cfg.resolved_n_hessians(), 108);
}

TEST(HessianMatrix, ExactModeHasFullNumericalRank) {
  const auto net = random_teacher(10, 15, 3);
  const auto hs = build_hessian_matrix(net, 15, DerivativeMode{true, {}}, 4);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(hs.columns);
  const auto& sv = svd.singularValues();
  EXPECT_GT(sv[14] / sv[0], 1e-8);
}

TEST(HessianMatrix, SingleNeuronColumnsAlignWithWeight) {
  const auto net = single_neuron(4, 0.25);
  const auto hs = build_hessian_matrix(net, 6, DerivativeMode{false, FDConfig{0.01}}, 5);
  const Eigen::VectorXd target = hvec_outer(Eigen::VectorXd::Unit(4, 0));
  for (Eigen::Index i = 0; i < 6; ++i) {
    const Eigen::VectorXd c = hs.columns.col(i);
    EXPECT_LE((c - c.dot(target) * target).norm(), 1e-4);
  }
}

TEST(TopMProjector, ExactSpanningSetOrthonormalW) {
  Rng rng(3);
  const Eigen::MatrixXd w = orthonormal_columns(rng, 6, 4);
  const SubspaceProjector p = top_m_projector(exact_columns(w), 4, 6);
  EXPECT_LE(projector_distance(p, exact_projector(w)), 1e-10);
}

TEST(TopMProjector, AnnihilatesCrossTerm) {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(3, 2);
  w(0, 0) = 1.0;
  w(1, 1) = 1.0;
  const SubspaceProjector p = top_m_projector(exact_columns(w), 2, 3);
  EXPECT_EQ(p.rank(), 2);
  const Eigen::MatrixXd cross = w.col(0) * w.col(1).transpose() + w.col(1) * w.col(0).transpose();
  EXPECT_LE(p.apply(hvec(cross)).norm(), 1e-10);
}

TEST(TopMProjector, BasisInvariants) {
  const auto net = random_teacher(7, 5, 6);
  for (Eigen::Index n_h : {Eigen::Index{6}, Eigen::Index{20}}) {  // Gram route and SVD route
    const auto hs = build_hessian_matrix(net, n_h, DerivativeMode{false, FDConfig{}}, 7);
    const SubspaceProjector p = top_m_projector(hs.columns, 5, 7);
    EXPECT_LE((p.basis().transpose() * p.basis() - Eigen::MatrixXd::Identity(5, 5)).norm(), 1e-10);
    Rng rng(8);
    const Eigen::MatrixXd x = random_symmetric(rng, 7);
    const Eigen::MatrixXd px = p.apply_matrix(x);
    EXPECT_LE((p.apply_matrix(px) - px).norm(), 1e-10);
    EXPECT_LE((px - px.transpose()).norm(), 1e-14);
    EXPECT_EQ(p.singular_values().size(), n_h);
  }
}

TEST(TopMProjector, BothRoutesAgree) {
  const auto net = random_teacher(6, 4, 2);
  const auto hs = build_hessian_matrix(net, 5, DerivativeMode{false, FDConfig{}}, 3);
  const SubspaceProjector gram = top_m_projector(hs.columns, 4, 6);  // 4 * 5 <= 42
  Eigen::BDCSVD<Eigen::MatrixXd> svd(hs.columns, Eigen::ComputeThinU);
  const SubspaceProjector direct(6, svd.matrixU().leftCols(4));
  EXPECT_LE(projector_distance(gram, direct), 1e-10);
}

TEST(TopMProjector, DeficientSubspaceIsReported) {
  Rng rng(4);
  const Eigen::MatrixXd w = orthonormal_columns(rng, 5, 2);
  Eigen::MatrixXd cols = exact_columns(w);
  try {
    top_m_projector(cols, 3, 5);
    FAIL();
  } catch (const ValidationError&) {
  }
  Eigen::MatrixXd three(cols.rows(), 3);
  three << cols, cols.col(0) + cols.col(1);
  try {
    top_m_projector(three, 3, 5);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("sigma_m / sigma_1"), std::string::npos);
  }
}

TEST(ProjectorDistance, Examples) {
  const auto net = random_teacher(5, 3, 1);
  const SubspaceProjector p = exact_projector(net.weights());
  EXPECT_LE(projector_distance(p, p), 1e-12);

  Eigen::VectorXd a = Eigen::VectorXd::Zero(hvec_size(3)), b = a;
  a[0] = 1.0;
  b[1] = 1.0;
  EXPECT_NEAR(projector_distance(SubspaceProjector(3, a), SubspaceProjector(3, b)), 1.0, 1e-15);
  EXPECT_THROW(projector_distance(p, exact_projector(random_teacher(5, 2, 1).weights())), ValidationError);
}

TEST(ProjectorDistance, MatchesDenseReference) {
  Rng rng(9);
  for (int t = 0; t < 10; ++t) {
    const Eigen::Index D = 3 + t % 6, m = 1 + t % 4;
    const SubspaceProjector p = exact_projector(sphere_columns(rng, D, m));
    const SubspaceProjector q = exact_projector(sphere_columns(rng, D, m));
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(p.dense() - q.dense());
    EXPECT_NEAR(projector_distance(p, q), svd.singularValues()[0], 1e-10);
  }
}

TEST(TopMProjector, ResidualBoundedByProjectorDistance) {
  const auto net = random_teacher(8, 6, 12);
  const auto hs = build_hessian_matrix(net, 12, DerivativeMode{false, FDConfig{0.02}}, 13);
  const SubspaceProjector p = top_m_projector(hs.columns, 6, 8);
  const double dist = projector_distance(p, exact_projector(net.weights()));
  for (Eigen::Index k = 0; k < 6; ++k) {
    const Eigen::VectorXd v = hvec_outer(net.weights().col(k));
    EXPECT_LE((v - p.apply(v)).norm(), 2.0 * dist + 1e-15);
  }
}

TEST(TopMProjector, WedinBound) {
  Rng rng(21);
  for (int t = 0; t < 20; ++t) {
    const Eigen::MatrixXd w = sphere_columns(rng, 8, 6);
    Eigen::MatrixXd cols(hvec_size(8), 18);
    for (Eigen::Index i = 0; i < 18; ++i) {
      Eigen::VectorXd c = Eigen::VectorXd::Zero(hvec_size(8));
      for (Eigen::Index k = 0; k < 6; ++k) c += gaussian_vector(rng, 1)[0] * hvec_outer(w.col(k));
      cols.col(i) = c;
    }
    const Eigen::MatrixXd noise = 1e-2 * (t + 1) * gaussian_matrix(rng, cols.rows(), cols.cols());
    const SubspaceProjector truth = top_m_projector(cols, 6, 8);
    const SubspaceProjector pert = top_m_projector(cols + noise, 6, 8);
    EXPECT_LE(projector_distance(truth, pert), noise.norm() / pert.singular_values()[5]);
  }
}

TEST(Spectrum, CsvDump) {
  const auto net = random_teacher(4, 2, 1);
  const auto hs = build_hessian_matrix(net, 3, DerivativeMode{true, {}}, 1);
  std::stringstream ss;
  write_spectrum_csv(ss, top_m_projector(hs.columns, 2, 4));
  std::string line;
  int rows = 0;
  while (std::getline(ss, line)) ++rows;
  EXPECT_EQ(rows, 4);
}
