// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>

#include "test_util.hpp"

using namespace sga;
using sga::test::random_array;

TEST(Matmul, IdentityAndDot) {
  const auto b = Array<float>::from_rows({{5, 6}, {7, 8}});
  EXPECT_EQ(matmul(Array<float>::identity(2), b), b);
  const auto c = matmul(Array<float>::from_rows({{1, 2}}), Array<float>::from_rows({{3}, {4}}));
  EXPECT_FLOAT_EQ(c(0, 0), 11.0f);
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(1);
  const auto a = random_array<double>({7, 5}, rng);
  const auto b = random_array<double>({5, 3}, rng);
  EXPECT_LE(max_abs_diff(matmul(a, b), test::naive_matmul(a, b)), 1e-6);
  EXPECT_THROW(matmul(a, a), ShapeError);
}

TEST(Matmul, TransposedVariants) {
  Rng rng(2);
  const auto a = random_array<double>({4, 6}, rng);
  const auto b = random_array<double>({5, 6}, rng);
  const auto c = random_array<double>({4, 5}, rng);
  EXPECT_LE(max_abs_diff(matmul_nt(a, b), test::naive_matmul(a, transpose(b))), 1e-12);
  EXPECT_LE(max_abs_diff(matmul_tn(a, c), test::naive_matmul(transpose(a), c)), 1e-12);
}

TEST(Matmul, Associative) {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const auto a = random_array<float>({3, 4}, rng), b = random_array<float>({4, 2}, rng),
               c = random_array<float>({2, 5}, rng);
    EXPECT_LE(max_abs_diff(matmul(matmul(a, b), c), matmul(a, matmul(b, c))), 1e-5f);
  }
}

TEST(MaskedSoftmax, Examples) {
  auto s = Array<double>::from_rows({{0, 0}});
  auto p = masked_softmax(s, AttentionMask(1, 2));
  EXPECT_DOUBLE_EQ(p(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(p(0, 1), 0.5);

  Array<float> add({1, 2});
  add(0, 1) = -INFINITY;
  p = masked_softmax(Array<double>::from_rows({{3, 9}}), AttentionMask::from_additive(add));
  EXPECT_EQ(p(0, 0), 1.0);
  EXPECT_EQ(p(0, 1), 0.0);
}

TEST(MaskedSoftmax, HighPrecisionOracle) {
  const auto p = masked_softmax(Array<double>::from_rows({{1, 2, 3}}), AttentionMask(1, 3));
  const long double z = std::exp(1.0L) + std::exp(2.0L) + std::exp(3.0L);
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(p(0, i), double(std::exp(static_cast<long double>(i + 1)) / z), 1e-7);
  }
}

TEST(MaskedSoftmax, RowsSumToOneAndMaskedAreZero) {
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    const auto s = random_array<float>({6, 9}, rng, 5.0);
    AttentionMask m(6, 9);
    for (std::size_t i = 0; i < 6; ++i) {
      for (std::size_t j = 0; j < 9; ++j) m.set(i, j, rng.uniform() < 0.6 || j == i);
    }
    const auto p = masked_softmax(s, m);
    for (std::size_t i = 0; i < 6; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < 9; ++j) {
        if (!m.kept(i, j)) {
          EXPECT_EQ(p(i, j), 0.0f);
        }
        EXPECT_GE(p(i, j), 0.0f);
        sum += p(i, j);
      }
      EXPECT_NEAR(sum, 1.0, 1e-6);
    }
  }
}

TEST(MaskedSoftmax, DegenerateRow) {
  AttentionMask m(2, 3);
  for (std::size_t j = 0; j < 3; ++j) m.set(1, j, false);
  try {
    masked_softmax(Array<float>({2, 3}), m);
    FAIL() << "expected DegenerateRowError";
  } catch (const DegenerateRowError& e) {
    EXPECT_EQ(e.row(), 1u);
  }
}

TEST(MaskedSoftmax, RejectsNonBinaryAdditiveMask) {
  EXPECT_THROW(AttentionMask::from_additive(Array<float>::from_rows({{0, -1}})), ValidationError);
}

TEST(AvgPool, Examples) {
  EXPECT_EQ(avg_pool_matrix(Array<float>({4, 4}, 3.0f), 2), Array<float>({2, 2}, 3.0f));
  EXPECT_FLOAT_EQ(avg_pool_matrix(Array<float>::from_rows({{1, 2}, {3, 4}}), 2)(0, 0), 2.5f);
  const auto big = avg_pool_matrix(Array<float>({256, 256}), 4);
  EXPECT_EQ(big.rows(), 64u);
  EXPECT_EQ(big.cols(), 64u);
  EXPECT_THROW(avg_pool_matrix(Array<float>({6, 6}), 4), ShapeError);
}

TEST(AvgPool, FullKernelIsGlobalMean) {
  Rng rng(5);
  const auto m = random_array<double>({8, 8}, rng);
  double mean = 0.0;
  for (double v : m.values()) mean += v;
  EXPECT_NEAR(avg_pool_matrix(m, 8)(0, 0), mean / 64.0, 1e-12);
}

TEST(Peg, ZeroKernelAndCentreTap) {
  Rng rng(6);
  const auto x = random_array<float>({3, 4, 2}, rng);
  EXPECT_LE(max_abs_diff(peg(x, Array<float>({5, 5, 2})), x), 1e-7f);
  Array<float> k({5, 5, 2});
  k(2, 2, 0) = k(2, 2, 1) = 1.0f;
  EXPECT_LE(max_abs_diff(peg(x, k), scale(x, 2.0f)), 1e-6f);
  EXPECT_THROW(peg(x, Array<float>({3, 3, 2})), ShapeError);
}

TEST(Peg, DirectSummationOracle) {
  Rng rng(7);
  const auto x = random_array<double>({4, 4, 2}, rng);
  const auto k = random_array<double>({5, 5, 2}, rng);
  const auto y = peg(x, k);
  for (long i = 0; i < 4; ++i) {
    for (long j = 0; j < 4; ++j) {
      for (std::size_t c = 0; c < 2; ++c) {
        double s = x(i, j, c);
        for (long a = -2; a <= 2; ++a) {
          for (long b = -2; b <= 2; ++b) {
            if (i + a < 0 || i + a >= 4 || j + b < 0 || j + b >= 4) continue;
            s += k(a + 2, b + 2, c) * x(i + a, j + b, c);
          }
        }
        EXPECT_NEAR(y(i, j, c), s, 1e-6);
      }
    }
  }
}

TEST(LayerNorm, Examples) {
  const Array<float> g({4}, 1.0f), b({4});
  const auto z = layer_norm(Array<float>({1, 4}, 2.5f), g, b);
  for (float v : z.values()) EXPECT_EQ(v, 0.0f);
  const auto y = layer_norm(Array<double>::from_rows({{-1, 1}}), Array<double>({2}, 1.0), Array<double>({2}));
  EXPECT_NEAR(y(0, 0), -1.0, 1e-5);
  EXPECT_NEAR(y(0, 1), 1.0, 1e-5);
}

TEST(LayerNorm, TwoPassOracle) {
  Rng rng(8);
  const auto x = random_array<double>({5, 7}, rng, 3.0);
  const auto g = random_array<double>({7}, rng), b = random_array<double>({7}, rng);
  const auto y = layer_norm(x, g, b);
  for (std::size_t r = 0; r < 5; ++r) {
    double mean = 0.0, var = 0.0;
    for (std::size_t c = 0; c < 7; ++c) mean += x(r, c);
    mean /= 7;
    for (std::size_t c = 0; c < 7; ++c) var += (x(r, c) - mean) * (x(r, c) - mean);
    var /= 7;
    for (std::size_t c = 0; c < 7; ++c) {
      EXPECT_NEAR(y(r, c), (x(r, c) - mean) / std::sqrt(var + 1e-5) * g[c] + b[c], 1e-6);
    }
  }
}

TEST(GradCheck, QuadraticIsExact) {
  Rng rng(9);
  const auto x = random_array<double>({3, 4}, rng);
  using Tape = GradTape<double>;
  std::function<Tape::Var(Tape&, Tape::Var)> f = [](Tape& t, Tape::Var v) { return t.sum_squares(v); };
  EXPECT_LE(grad_check<double>(f, x, 1e-3).max_rel_error, 1e-5);
}

TEST(GradCheck, SoftmaxCrossEntropyOnFourLogits) {
  Rng rng(10);
  using Tape = GradTape<double>;
  std::function<Tape::Var(Tape&, Tape::Var)> f = [](Tape& t, Tape::Var v) {
    return t.cross_entropy(v, {0}, {2});
  };
  EXPECT_LE(grad_check<double>(f, random_array<double>({1, 4}, rng), 1e-5).max_rel_error, 1e-4);
}

TEST(GradCheck, NonFiniteEvaluationIsReported) {
  using Tape = GradTape<double>;
  std::function<Tape::Var(Tape&, Tape::Var)> f = [](Tape& t, Tape::Var v) {
    return t.sum_squares(t.scale(v, 1e300));
  };
  EXPECT_THROW(grad_check<double>(f, Array<double>({2}, 1e10), 1e-3), NumericalError);
}

TEST(GradTape, ReplayIsBitIdentical) {
  Rng rng(11);
  GradTape<float> t(true);
  auto a = t.parameter(random_array<float>({4, 3}, rng));
  auto b = t.parameter(random_array<float>({3, 5}, rng));
  auto y = t.gelu(t.matmul(a, b));
  auto loss = t.sum_squares(y);
  const auto before = t.value(loss);
  t.replay();
  EXPECT_EQ(t.value(loss), before);
}

TEST(Sgat, RoundTripAndFormat) {
  Rng rng(12);
  const auto a = random_array<float>({3, 2, 4}, rng);
  const std::string bytes = encode_sgat(a);
  EXPECT_EQ(bytes.substr(0, 4), "SGAT");
  const auto hlen = detail::get_u32_le(reinterpret_cast<const unsigned char*>(bytes.data()) + 4);
  const auto header = nlohmann::json::parse(bytes.substr(8, hlen));
  EXPECT_EQ(header["dtype"], "f32");
  EXPECT_EQ(header["shape"], nlohmann::json({3, 2, 4}));
  EXPECT_EQ(decode_sgat(bytes), a);
  const auto path = std::filesystem::temp_directory_path() / "sga_test_roundtrip.sgat";
  write_sgat(path, a);
  EXPECT_EQ(read_sgat(path), a);
  std::filesystem::remove(path);
  EXPECT_THROW(decode_sgat("XXXX0000"), IoError);
}

TEST(DenseArray, ShapeInvariant) {
  EXPECT_THROW(Array<float>({2, 3}, std::vector<float>(5)), ShapeError);
  EXPECT_EQ(Array<float>({2, 3, 4}).size(), 24u);
}
