#include "testkit.hpp"

#include <sipfuse/errors.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <functional>

namespace {

using namespace sipfuse;
using testkit::randn;
using testkit::random_mask;
using ops::SeqVar;

using M = Mat<double>;

M rows(std::initializer_list<std::initializer_list<double>> r) {
  M m(static_cast<Index>(r.size()), static_cast<Index>(r.begin()->size()));
  Index i = 0;
  for (const auto& row : r) {
    Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

SeqVar seq(Tape<double>& t, const M& values, Mask mask = {}, double rate = 1.0) {
  if (mask.empty()) mask = full_mask(values.rows());
  return ops::constant_seq(t, MaskedSeq<double>::make(values, mask, rate));
}

// Sequence leaf that keeps arbitrary values at invalid frames.
SeqVar raw_seq(Tape<double>& t, const M& values, const Mask& mask, double rate = 1.0) {
  return SeqVar{t.constant(values), mask, rate};
}

// ---------------------------------------------------------------------------

TEST(MaskedSeq, MakeZeroesInvalidFrames) {
  auto s = MaskedSeq<double>::make(rows({{1, 2}, {3, 4}, {5, 6}}), {1, 0, 1}, 12.5);
  EXPECT_EQ(s.values(1, 0), 0.0);
  EXPECT_EQ(s.values(1, 1), 0.0);
  EXPECT_EQ(s.values(2, 1), 6.0);
  EXPECT_EQ(s.valid_count(), 2);
  EXPECT_EQ(s.extent(), 3);
}

TEST(MaskedSeq, RejectsInconsistentInput) {
  EXPECT_THROW(MaskedSeq<double>::make(M::Zero(3, 2), {1, 1}, 1.0), DimensionError);
  EXPECT_THROW(MaskedSeq<double>::make(M::Zero(3, 0), {1, 1, 1}, 1.0), DimensionError);
  EXPECT_THROW(MaskedSeq<double>::make(M::Zero(3, 2), {1, 1, 1}, 0.0), ArgumentError);
}

TEST(MaskedSeq, PaddedAppendsInvalidZeroFrames) {
  auto s = MaskedSeq<double>::dense(rows({{1}, {2}}), 50.0).padded(3);
  ASSERT_EQ(s.length(), 5);
  EXPECT_EQ(s.valid_count(), 2);
  EXPECT_EQ(s.extent(), 2);
  EXPECT_EQ(s.values(4, 0), 0.0);
  EXPECT_EQ(s.frame_rate_hz, 50.0);
}

TEST(Tape, BackwardAddsIntoParameterGradients) {
  ParamStore<double> p;
  p.add("w", rows({{2.0, -1.0}}));
  p.add("unused", rows({{1.0}}));
  p.add("frozen", rows({{3.0, 3.0}}), false);
  p.zero_grad();
  Tape<double> t;
  const Var w = t.param(p.at("w"));
  const Var f = t.param(p.at("frozen"));
  t.backward(ops::sum(t, ops::square(t, ops::add(t, w, f))));
  EXPECT_DOUBLE_EQ(p.at("w").grad(0, 0), 10.0);
  EXPECT_DOUBLE_EQ(p.at("w").grad(0, 1), 4.0);
  EXPECT_EQ(p.at("unused").grad(0, 0), 0.0);
  EXPECT_FALSE(p.at("frozen").has_grad());
  EXPECT_FALSE(t.requires_grad(f));
}

TEST(Tape, BackwardRequiresScalarRoot) {
  Tape<double> t;
  ParamStore<double> p;
  p.add("w", M::Ones(2, 2));
  const Var w = t.param(p.at("w"));
  EXPECT_THROW(t.backward(w), DimensionError);
}

// ---------------------------------------------------------------------------
// linear

TEST(Linear, IdentityAndBias) {
  Tape<double> t;
  const Var x = t.constant(rows({{1, 2}}));
  const Var eye = t.constant(M::Identity(2, 2));
  EXPECT_EQ(t.value(ops::linear(t, x, eye, t.constant(M::Zero(1, 2)))), rows({{1, 2}}));
  EXPECT_EQ(t.value(ops::linear(t, x, eye, t.constant(rows({{3, 3}})))), rows({{4, 5}}));
}

TEST(Linear, SequenceKeepsInvalidFramesZero) {
  Tape<double> t;
  const auto y = ops::linear(t, seq(t, rows({{1, 2}, {3, 4}}), {0, 1}), t.constant(M::Identity(2, 2)),
                             t.constant(rows({{1, 1}})));
  EXPECT_EQ(t.value(y.values), rows({{0, 0}, {4, 5}}));
  EXPECT_EQ(y.mask, (Mask{0, 1}));
}

TEST(Linear, ShapeMismatchIsDimensionError) {
  Tape<double> t;
  EXPECT_THROW(ops::linear(t, t.constant(M::Zero(1, 3)), t.constant(M::Zero(2, 2)), t.constant(M::Zero(1, 2))),
               DimensionError);
}

// ---------------------------------------------------------------------------
// conv1d / tconv1d

TEST(Conv1d, LengthArithmeticAndRate) {
  Tape<double> t;
  const auto y = ops::conv1d(t, seq(t, M::Ones(16, 2), {}, 50.0), t.constant(M::Ones(8, 3)),
                             t.constant(M::Zero(1, 3)), 4);
  EXPECT_EQ(y.length(), 4);
  EXPECT_DOUBLE_EQ(y.frame_rate_hz, 12.5);
}

TEST(Conv1d, ConstantInputMatchesDirectSummation) {
  const int k = 3, d = 2;
  Tape<double> t;
  const auto y = ops::conv1d(t, seq(t, M::Constant(7, d, 1.5)), t.constant(M::Constant(k * d, 1, 1.0 / (k * d))),
                             t.constant(M::Zero(1, 1)), 2);
  ASSERT_EQ(y.length(), 3);
  for (Index i = 0; i < 3; ++i) EXPECT_NEAR(t.value(y.values)(i, 0), 1.5, 1e-15);
}

TEST(Conv1d, FullyInvalidWindowGivesInvalidZeroFrame) {
  Tape<double> t;
  const auto y = ops::conv1d(t, seq(t, M::Ones(4, 1), {1, 1, 0, 0}), t.constant(M::Ones(2, 1)),
                             t.constant(M::Ones(1, 1)), 2);
  EXPECT_EQ(y.mask, (Mask{1, 0}));
  EXPECT_EQ(t.value(y.values)(0, 0), 3.0);
  EXPECT_EQ(t.value(y.values)(1, 0), 0.0);
}

TEST(Conv1d, ShortInputGivesEmptySequence) {
  Tape<double> t;
  const auto y = ops::conv1d(t, seq(t, M::Ones(2, 1)), t.constant(M::Ones(4, 1)), t.constant(M::Zero(1, 1)), 1);
  EXPECT_EQ(y.length(), 0);
}

TEST(Conv1d, NonPositiveStrideIsArgumentError) {
  Tape<double> t;
  EXPECT_THROW(ops::conv1d(t, seq(t, M::Ones(4, 1)), t.constant(M::Ones(2, 1)), t.constant(M::Zero(1, 1)), -1),
               ArgumentError);
}

TEST(Tconv1d, LengthArithmetic) {
  Tape<double> t;
  const auto y = ops::tconv1d(t, seq(t, M::Ones(4, 1), {}, 12.5), t.constant(M::Ones(4, 1)),
                              t.constant(M::Zero(1, 1)), 4);
  EXPECT_EQ(y.length(), 16);
  EXPECT_DOUBLE_EQ(y.frame_rate_hz, 50.0);
}

TEST(Tconv1d, SingleValidFrameReachesExactlyKOutputs) {
  Tape<double> t;
  const auto y = ops::tconv1d(t, seq(t, M::Ones(3, 1), {0, 1, 0}), t.constant(M::Ones(3, 1)),
                              t.constant(M::Zero(1, 1)), 2);
  ASSERT_EQ(y.length(), 7);
  EXPECT_EQ(mask_valid_count(y.mask), 3);
  EXPECT_EQ(y.mask, (Mask{0, 0, 1, 1, 1, 0, 0}));
}

TEST(Tconv1d, EmptyInputGivesEmptyOutput) {
  Tape<double> t;
  const auto y = ops::tconv1d(t, seq(t, M::Zero(0, 1)), t.constant(M::Ones(3, 1)), t.constant(M::Zero(1, 1)), 2);
  EXPECT_EQ(y.length(), 0);
}

TEST(Tconv1d, AdjointOfConv1d) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = testkit::uniform_int(rng, 1, 6), stride = testkit::uniform_int(rng, 1, 5);
    const Index d_in = testkit::uniform_int(rng, 1, 4), d_out = testkit::uniform_int(rng, 1, 4);
    const Index len = testkit::uniform_int(rng, k, 40);
    const Index len_out = (len - k) / stride + 1;
    const M kernel = randn(k * d_in, d_out, rng);
    // Transposed kernel: tap j maps d_out -> d_in.
    M kernel_t(k * d_out, d_in);
    for (int j = 0; j < k; ++j) kernel_t.block(j * d_out, 0, d_out, d_in) = kernel.block(j * d_in, 0, d_in, d_out).transpose();
    const M x = randn(len, d_in, rng), y = randn(len_out, d_out, rng);
    Tape<double> t;
    const auto cx = ops::conv1d(t, seq(t, x), t.constant(kernel), t.constant(M::Zero(1, d_out)), stride);
    const auto ty = ops::tconv1d(t, seq(t, y), t.constant(kernel_t), t.constant(M::Zero(1, d_in)), stride);
    const double lhs = (t.value(cx.values).array() * y.array()).sum();
    // Input frames beyond the last full window receive nothing from tconv1d.
    const M& back = t.value(ty.values);
    const Index overlap = std::min(len, back.rows());
    const double rhs = (x.topRows(overlap).array() * back.topRows(overlap).array()).sum();
    EXPECT_NEAR(lhs, rhs, 1e-10 * std::max(1.0, std::abs(lhs))) << "trial " << trial;
  }
}

TEST(LengthSweep, ConvTconvResizeClosedForms) {
  for (Index len = 0; len <= 64; ++len) {
    for (int k = 1; k <= 8; ++k) {
      for (int stride = 1; stride <= 8; ++stride) {
        Tape<double> t;
        const auto x = seq(t, M::Ones(len, 1));
        const Var kern = t.constant(M::Ones(k, 1));
        const Var bias = t.constant(M::Zero(1, 1));
        const Index conv_len = len < k ? 0 : (len - k) / stride + 1;
        ASSERT_EQ(ops::conv1d(t, x, kern, bias, stride).length(), conv_len) << len << " " << k << " " << stride;
        const Index tconv_len = len == 0 ? 0 : (len - 1) * stride + k;
        ASSERT_EQ(ops::tconv1d(t, x, kern, bias, stride).length(), tconv_len) << len << " " << k << " " << stride;
        const Index down_len = (len + stride - 1) / stride;
        ASSERT_EQ(ops::masked_avg_downsample(t, x, stride).length(), down_len);
      }
    }
    for (Index target = 1; target <= 64; target += 7) {
      Tape<double> t;
      ASSERT_EQ(ops::adaptive_resize(t, seq(t, M::Ones(len, 1)), target).length(), target);
    }
  }
}

// ---------------------------------------------------------------------------
// masked_avg_downsample / adaptive_resize / linear_interp_upsample

TEST(MaskedAvgDownsample, Examples) {
  Tape<double> t;
  EXPECT_EQ(t.value(ops::masked_avg_downsample(t, seq(t, M::Ones(4, 1)), 4).values), rows({{1}}));
  const auto y = ops::masked_avg_downsample(t, seq(t, rows({{1}, {2}, {3}, {4}}), {1, 1, 0, 0}), 4);
  EXPECT_EQ(t.value(y.values), rows({{1.5}}));
  const M x = rows({{1, 2}, {3, 4}, {5, 6}});
  const auto id = ops::masked_avg_downsample(t, seq(t, x, {1, 0, 1}), 1);
  EXPECT_EQ(t.value(id.values), rows({{1, 2}, {0, 0}, {5, 6}}));
  EXPECT_EQ(id.mask, (Mask{1, 0, 1}));
}

TEST(MaskedAvgDownsample, RateAndInvalidWindow) {
  Tape<double> t;
  const auto y = ops::masked_avg_downsample(t, seq(t, M::Ones(6, 1), {1, 1, 0, 0, 0, 1}, 50.0), 2);
  EXPECT_EQ(y.mask, (Mask{1, 0, 1}));
  EXPECT_DOUBLE_EQ(y.frame_rate_hz, 25.0);
}

TEST(AdaptiveResize, Examples) {
  Tape<double> t;
  const M x = rows({{1}, {2}, {3}, {4}, {5}});
  EXPECT_EQ(t.value(ops::adaptive_resize(t, seq(t, x), 5).values), x);
  EXPECT_EQ(t.value(ops::adaptive_resize(t, seq(t, M::Constant(8, 1, 5.0)), 4).values), M::Constant(4, 1, 5.0));
  EXPECT_TRUE(t.value(ops::adaptive_resize(t, seq(t, x), 2).values).isApprox(rows({{1.5}, {4.0}}), 1e-15));
}

TEST(AdaptiveResize, UpsamplingRepeatsFrames) {
  Tape<double> t;
  EXPECT_EQ(t.value(ops::adaptive_resize(t, seq(t, rows({{1}, {2}})), 4).values), rows({{1}, {1}, {2}, {2}}));
}

TEST(AdaptiveResize, ExtentsLimitValidOutput) {
  Tape<double> t;
  const auto y = ops::adaptive_resize(t, seq(t, rows({{1}, {2}, {3}, {4}}), {1, 1, 0, 0}), 3, 2, 2);
  EXPECT_EQ(y.mask, (Mask{1, 1, 0}));
  EXPECT_EQ(t.value(y.values), rows({{1}, {2}, {0}}));
}

TEST(LinearInterpUpsample, Examples) {
  Tape<double> t;
  EXPECT_EQ(t.value(ops::linear_interp_upsample(t, seq(t, rows({{0}, {10}})), 3).values), rows({{0}, {5}, {10}}));
  const M x = rows({{1, 2}, {3, 4}});
  EXPECT_EQ(t.value(ops::linear_interp_upsample(t, seq(t, x), 2).values), x);
  const auto c = ops::linear_interp_upsample(t, seq(t, M::Constant(3, 2, 4.25)), 11);
  EXPECT_TRUE(t.value(c.values).isApproxToConstant(4.25, 1e-14));
}

TEST(LinearInterpUpsample, SingleValidEndpointIsCopied) {
  Tape<double> t;
  const auto y = ops::linear_interp_upsample(t, seq(t, rows({{2}, {0}, {8}}), {1, 0, 1}), 5);
  // Positions 0, 0.5, 1, 1.5, 2: frame 1 is invalid, so 0.5 and 1.5 copy the valid neighbour
  // and position 1 has no valid endpoint.
  EXPECT_EQ(y.mask, (Mask{1, 1, 0, 1, 1}));
  EXPECT_EQ(t.value(y.values), rows({{2}, {2}, {0}, {8}, {8}}));
}

TEST(LinearInterpUpsample, EmptyInputIsError) {
  Tape<double> t;
  EXPECT_THROW(ops::linear_interp_upsample(t, seq(t, M::Zero(0, 1)), 3), ArgumentError);
}

// ---------------------------------------------------------------------------
// masked_softmax

TEST(MaskedSoftmax, Examples) {
  Tape<double> t;
  EXPECT_EQ(t.value(ops::masked_softmax(t, t.constant(rows({{0}, {0}})), {1, 1})), rows({{0.5}, {0.5}}));
  const M big = t.value(ops::masked_softmax(t, t.constant(rows({{0}, {1000}})), {1, 1}));
  EXPECT_TRUE(big.allFinite());
  EXPECT_NEAR(big(0, 0), 0.0, 1e-300);
  EXPECT_DOUBLE_EQ(big(1, 0), 1.0);
  const M a = t.value(ops::masked_softmax(t, t.constant(rows({{3}, {-1}, {2}})), {1, 0, 1}));
  const double z = std::exp(3.0) + std::exp(2.0);
  EXPECT_NEAR(a(0, 0), std::exp(3.0) / z, 1e-15);
  EXPECT_EQ(a(1, 0), 0.0);
  EXPECT_NEAR(a(2, 0), std::exp(2.0) / z, 1e-15);
}

TEST(MaskedSoftmax, SumsToOne) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const Index len = testkit::uniform_int(rng, 1, 64);
    Tape<double> t;
    const M a = t.value(ops::masked_softmax(t, t.constant(randn(len, 1, rng, 20.0)), random_mask(len, rng)));
    EXPECT_NEAR(a.sum(), 1.0, 1e-12);
  }
}

TEST(MaskedSoftmax, EmptySupportIsNumericError) {
  Tape<double> t;
  try {
    ops::masked_softmax(t, t.constant(rows({{1}, {2}})), {0, 0});
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_STREQ(e.what(), "empty attention support");
  }
}

TEST(MaskedRowSoftmax, RowsSumToOneOverValidKeys) {
  std::mt19937_64 rng(4);
  Tape<double> t;
  const Mask m = {1, 0, 1, 1};
  const M a = t.value(ops::masked_row_softmax(t, t.constant(randn(3, 4, rng)), m));
  for (Index r = 0; r < 3; ++r) {
    EXPECT_NEAR(a.row(r).sum(), 1.0, 1e-12);
    EXPECT_EQ(a(r, 1), 0.0);
  }
}

// ---------------------------------------------------------------------------
// bilstm

ops::BiLstmParams lstm_params(Tape<double>& t, Index d, Index h, std::mt19937_64* rng) {
  auto m = [&](Index r, Index c) { return t.constant(rng ? randn(r, c, *rng, 0.5) : M::Zero(r, c)); };
  return {{m(d, 4 * h), m(h, 4 * h), m(1, 4 * h)}, {m(d, 4 * h), m(h, 4 * h), m(1, 4 * h)}};
}

TEST(BiLstm, ZeroParametersGiveConstantOutput) {
  std::mt19937_64 rng(5);
  Tape<double> t;
  const auto y = ops::bilstm(t, seq(t, randn(6, 3, rng)), lstm_params(t, 3, 2, nullptr));
  const M& v = t.value(y.values);
  ASSERT_EQ(v.cols(), 4);
  for (Index i = 1; i < v.rows(); ++i) EXPECT_EQ(v.row(i), v.row(0));
}

TEST(BiLstm, TrailingInvalidFramesLeaveOutputsBitIdentical) {
  std::mt19937_64 rng(6);
  const M x = randn(5, 3, rng);
  M padded = M::Zero(8, 3);
  padded.topRows(5) = x;
  Tape<double> t;
  std::mt19937_64 prng(7);
  const auto params = lstm_params(t, 3, 2, &prng);
  const auto a = ops::bilstm(t, seq(t, x), params);
  const auto b = ops::bilstm(t, seq(t, padded, {1, 1, 1, 1, 1, 0, 0, 0}), params);
  EXPECT_EQ(t.value(a.values), t.value(b.values).topRows(5));
  EXPECT_TRUE(t.value(b.values).bottomRows(3).isZero(0));
}

TEST(BiLstm, InvalidFramesHoldState) {
  std::mt19937_64 rng(8);
  const M x = randn(3, 2, rng);
  M gapped = M::Zero(5, 2);
  gapped.row(0) = x.row(0);
  gapped.row(3) = x.row(1);
  gapped.row(4) = x.row(2);
  Tape<double> t;
  std::mt19937_64 prng(9);
  const auto params = lstm_params(t, 2, 3, &prng);
  const M a = t.value(ops::bilstm(t, seq(t, x), params).values);
  const M b = t.value(ops::bilstm(t, seq(t, gapped, {1, 0, 0, 1, 1}), params).values);
  EXPECT_EQ(a.row(0), b.row(0));
  EXPECT_EQ(a.row(1), b.row(3));
  EXPECT_EQ(a.row(2), b.row(4));
}

// ---------------------------------------------------------------------------
// attention_pool

TEST(AttentionPool, SingleValidFrameReturnsThatFrame) {
  std::mt19937_64 rng(10);
  const M x = randn(4, 3, rng);
  Tape<double> t;
  const Var u = ops::attention_pool(t, seq(t, x, {0, 0, 1, 0}), t.constant(randn(3, 3, rng)),
                                    t.constant(randn(3, 1, rng)));
  EXPECT_EQ(t.value(u), x.row(2));
}

TEST(AttentionPool, ZeroVectorGivesMaskedMean) {
  std::mt19937_64 rng(12);
  const M x = randn(4, 3, rng);
  Tape<double> t;
  const Var u = ops::attention_pool(t, seq(t, x, {1, 0, 1, 1}), t.constant(randn(3, 3, rng)),
                                    t.constant(M::Zero(3, 1)));
  const M expect = (x.row(0) + x.row(2) + x.row(3)) / 3.0;
  EXPECT_TRUE(t.value(u).isApprox(expect, 1e-14));
}

TEST(AttentionPool, MatchesDirectFormula) {
  std::mt19937_64 rng(13);
  const M x = randn(3, 4, rng), wa = randn(4, 4, rng), w = randn(4, 1, rng);
  Tape<double> t;
  const M u = t.value(ops::attention_pool(t, seq(t, x), t.constant(wa), t.constant(w)));
  const M e = (x * wa).array().tanh().matrix() * w;
  const M alpha = (e.array() - e.maxCoeff()).exp() / (e.array() - e.maxCoeff()).exp().sum();
  const M expect = alpha.transpose() * x;
  EXPECT_TRUE(u.isApprox(expect, 1e-13));
}

TEST(AttentionPool, EmptySupportIsNumericError) {
  Tape<double> t;
  EXPECT_THROW(ops::attention_pool(t, seq(t, M::Ones(2, 2), {0, 0}), t.constant(M::Ones(2, 2)),
                                   t.constant(M::Ones(2, 1))),
               NumericError);
}

// ---------------------------------------------------------------------------
// temporal_shift

TEST(TemporalShift, Examples) {
  const M x = rows({{1}, {2}, {3}, {4}});
  Tape<double> t;
  const auto id = ops::temporal_shift(t, seq(t, x, {1, 0, 1, 1}), 0);
  EXPECT_EQ(t.value(id.values), rows({{1}, {0}, {3}, {4}}));
  EXPECT_EQ(id.mask, (Mask{1, 0, 1, 1}));
  const auto right = ops::temporal_shift(t, seq(t, x.topRows(3)), 1);
  EXPECT_EQ(t.value(right.values), rows({{0}, {1}, {2}}));
  EXPECT_EQ(right.mask, (Mask{0, 1, 1}));
  const auto left = ops::temporal_shift(t, seq(t, x), -2);
  EXPECT_EQ(t.value(left.values), rows({{3}, {4}, {0}, {0}}));
  EXPECT_EQ(left.mask, (Mask{1, 1, 0, 0}));
}

TEST(TemporalShift, LargeShiftInvalidatesEverything) {
  Tape<double> t;
  for (int delta : {-4, 4, 9}) {
    const auto y = ops::temporal_shift(t, seq(t, M::Ones(4, 2)), delta);
    EXPECT_EQ(mask_valid_count(y.mask), 0);
    EXPECT_TRUE(t.value(y.values).isZero(0));
  }
}

// ---------------------------------------------------------------------------
// Mask and padding invariance across the sequence op set.

struct SeqOpCase {
  const char* name;
  std::function<SeqVar(Tape<double>&, const SeqVar&, std::mt19937_64&)> apply;
  bool aligned;  // output frame t corresponds to input frame t
};

std::vector<SeqOpCase> seq_op_cases() {
  auto c = [](Tape<double>& t, std::mt19937_64& rng, Index r, Index cols) { return t.constant(randn(r, cols, rng)); };
  return {
      {"linear", [c](Tape<double>& t, const SeqVar& x, std::mt19937_64& r) {
         return ops::linear(t, x, c(t, r, 3, 2), c(t, r, 1, 2));
       }, true},
      {"conv1d", [c](Tape<double>& t, const SeqVar& x, std::mt19937_64& r) {
         return ops::conv1d(t, x, c(t, r, 9, 2), c(t, r, 1, 2), 2);
       }, false},
      {"conv1d_same", [c](Tape<double>& t, const SeqVar& x, std::mt19937_64& r) {
         return ops::conv1d_same(t, x, c(t, r, 9, 2), c(t, r, 1, 2));
       }, true},
      {"tconv1d", [c](Tape<double>& t, const SeqVar& x, std::mt19937_64& r) {
         return ops::tconv1d(t, x, c(t, r, 12, 2), c(t, r, 1, 2), 4);
       }, false},
      {"masked_avg_downsample", [](Tape<double>& t, const SeqVar& x, std::mt19937_64&) {
         return ops::masked_avg_downsample(t, x, 3);
       }, false},
      {"adaptive_resize", [](Tape<double>& t, const SeqVar& x, std::mt19937_64&) {
         const Index e = std::max<Index>(1, mask_extent(x.mask));
         return ops::adaptive_resize(t, x, 7, e, 7);
       }, false},
      {"linear_interp_upsample", [](Tape<double>& t, const SeqVar& x, std::mt19937_64&) {
         const Index e = std::max<Index>(1, mask_extent(x.mask));
         return ops::linear_interp_upsample(t, x, 4 * x.length(), e, 4 * e);
       }, false},
      {"bilstm", [c](Tape<double>& t, const SeqVar& x, std::mt19937_64& r) {
         const ops::LstmDirection f{c(t, r, 3, 8), c(t, r, 2, 8), c(t, r, 1, 8)};
         const ops::LstmDirection b{c(t, r, 3, 8), c(t, r, 2, 8), c(t, r, 1, 8)};
         return ops::bilstm(t, x, {f, b});
       }, true},
      {"temporal_shift", [](Tape<double>& t, const SeqVar& x, std::mt19937_64&) {
         return ops::temporal_shift(t, x, 2);
       }, false},
      {"attention_pool", [c](Tape<double>& t, const SeqVar& x, std::mt19937_64& r) {
         return SeqVar{ops::attention_pool(t, x, c(t, r, 3, 3), c(t, r, 3, 1)), Mask{1}, 1.0};
       }, false},
  };
}

class SeqOpInvariance : public ::testing::TestWithParam<SeqOpCase> {};

TEST_P(SeqOpInvariance, InvalidFrameValuesDoNotMatter) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const Index len = testkit::uniform_int(rng, 3, 12);
    const Mask mask = random_mask(len, rng, 0.6);
    const M x = randn(len, 3, rng);
    M noisy = x;
    for (Index i = 0; i < len; ++i) {
      if (!mask[std::size_t(i)]) noisy.row(i) = randn(1, 3, rng, 100.0);
    }
    const std::uint64_t pseed = rng();
    Tape<double> t;
    std::mt19937_64 r1(pseed), r2(pseed);
    const SeqVar a = GetParam().apply(t, seq(t, x, mask), r1);
    const SeqVar b = GetParam().apply(t, raw_seq(t, noisy, mask), r2);
    ASSERT_EQ(a.mask, b.mask);
    EXPECT_EQ(t.value(a.values), t.value(b.values)) << "trial " << trial;
    for (Index i = 0; i < a.length(); ++i) {
      if (!a.mask[std::size_t(i)]) EXPECT_TRUE(t.value(a.values).row(i).isZero(0));
    }
  }
}

TEST_P(SeqOpInvariance, TrailingPaddingLeavesValidOutputs) {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 20; ++trial) {
    const Index len = testkit::uniform_int(rng, 3, 12);
    Mask mask = random_mask(len, rng, 0.7);
    mask[std::size_t(len - 1)] = 1;
    const M x = randn(len, 3, rng);
    const Index extra = testkit::uniform_int(rng, 1, 8);
    M padded = M::Zero(len + extra, 3);
    padded.topRows(len) = x;
    Mask pmask = mask;
    pmask.resize(std::size_t(len + extra), 0);
    const std::uint64_t pseed = rng();
    Tape<double> t;
    std::mt19937_64 r1(pseed), r2(pseed);
    const SeqVar a = GetParam().apply(t, seq(t, x, mask), r1);
    const SeqVar b = GetParam().apply(t, seq(t, padded, pmask), r2);
    const auto& va = t.value(a.values);
    const auto& vb = t.value(b.values);
    // Every valid output of the unpadded run is reproduced exactly.
    for (Index i = 0; i < a.length(); ++i) {
      if (!a.mask[std::size_t(i)]) continue;
      ASSERT_LT(i, b.length());
      EXPECT_TRUE(b.mask[std::size_t(i)]);
      EXPECT_EQ(va.row(i), vb.row(i)) << GetParam().name << " frame " << i;
    }
    if (GetParam().aligned) {
      for (Index i = a.length(); i < b.length(); ++i) EXPECT_FALSE(b.mask[std::size_t(i)]);
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Ops, SeqOpInvariance, ::testing::ValuesIn(seq_op_cases()),
                         [](const auto& info) { return std::string(info.param.name); });

// ---------------------------------------------------------------------------
// Gradient checks.

TEST(GradCheck, LinearRandomInput) {
  std::mt19937_64 rng(30);
  ParamStore<double> p;
  p.add("x", randn(3, 2, rng));
  p.add("w", randn(2, 2, rng));
  p.add("b", randn(1, 2, rng));
  const auto r = grad_check(p, [](Tape<double>& t, ParamStore<double>& s) {
    return ops::sum(t, ops::linear(t, t.param(s.at("x")), t.param(s.at("w")), t.param(s.at("b"))));
  });
  EXPECT_LE(r.worst(), 1e-4);
  EXPECT_EQ(r.max_rel_error.size(), 3u);
}

TEST(GradCheck, FrozenInputIsSkipped) {
  ParamStore<double> p;
  p.add("w", M::Ones(2, 2));
  p.add("x", M::Ones(1, 2), false);
  const auto r = grad_check(p, [](Tape<double>& t, ParamStore<double>& s) {
    return ops::sum(t, ops::square(t, ops::matmul(t, t.param(s.at("x")), t.param(s.at("w")))));
  });
  EXPECT_EQ(r.skipped, std::vector<std::string>{"x"});
  EXPECT_EQ(r.max_rel_error.count("x"), 0u);
  EXPECT_TRUE(r.passed(1e-4));
}

TEST(GradCheck, NonFiniteLossIsReported) {
  ParamStore<double> p;
  p.add("w", M::Constant(1, 1, std::numeric_limits<double>::infinity()));
  EXPECT_THROW(grad_check(p, [](Tape<double>& t, ParamStore<double>& s) { return ops::sum(t, t.param(s.at("w"))); }),
               NumericError);
}

class OpGradient : public ::testing::TestWithParam<testkit::GradCase> {};

TEST_P(OpGradient, MatchesFiniteDifferences) {
  const auto& c = GetParam();
  EXPECT_LE(testkit::run_grad_case(c, 1234), c.tolerance) << c.name;
}

INSTANTIATE_TEST_SUITE_P(Ops, OpGradient, ::testing::ValuesIn(testkit::op_grad_cases()),
                         [](const auto& info) { return info.param.name; });

}  // namespace
