#include <sipfuse/model.hpp>
#include <sipfuse/ops.hpp>

#include <benchmark/benchmark.h>

#include <random>

namespace {

using namespace sipfuse;

Mat<float> random_matrix(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<float> n(0.0f, 0.1f);
  Mat<float> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

MaskedSeq<float> dense(Index t, Index d, double rate, std::mt19937_64& rng) {
  return MaskedSeq<float>::dense(random_matrix(t, d, rng), rate);
}

void BM_Conv1d(benchmark::State& state) {
  std::mt19937_64 rng(1);
  const Index t = state.range(0), d = 192, k = 3;
  const auto x = dense(t, d, 12.5, rng);
  const Mat<float> w = random_matrix(k * d, d, rng), b = random_matrix(1, d, rng);
  for (auto _ : state) {
    Tape<float> tape;
    const auto y = ops::conv1d_same(tape, ops::constant_seq(tape, x), tape.constant(w), tape.constant(b));
    benchmark::DoNotOptimize(tape.value(y.values).data());
  }
  state.SetItemsProcessed(state.iterations() * t);
}
BENCHMARK(BM_Conv1d)->Arg(80)->Arg(320);

void BM_BiLstm(benchmark::State& state) {
  std::mt19937_64 rng(2);
  const Index t = state.range(0), d = 192, h = 96;
  const auto x = dense(t, d, 12.5, rng);
  const Mat<float> wf = random_matrix(d, 4 * h, rng), hf = random_matrix(h, 4 * h, rng), bf = random_matrix(1, 4 * h, rng);
  const Mat<float> wb = random_matrix(d, 4 * h, rng), hb = random_matrix(h, 4 * h, rng), bb = random_matrix(1, 4 * h, rng);
  for (auto _ : state) {
    Tape<float> tape;
    const ops::BiLstmParams p{{tape.constant(wf), tape.constant(hf), tape.constant(bf)},
                              {tape.constant(wb), tape.constant(hb), tape.constant(bb)}};
    const auto y = ops::bilstm(tape, ops::constant_seq(tape, x), p);
    benchmark::DoNotOptimize(tape.value(y.values).data());
  }
  state.SetItemsProcessed(state.iterations() * t);
}
BENCHMARK(BM_BiLstm)->Arg(80)->Arg(320);

UtteranceInput<float> utterance(Index tc, int dim, std::mt19937_64& rng) {
  UtteranceInput<float> in;
  for (int e = 0; e < 2; ++e) {
    in.canary[e] = dense(tc, dim, 12.5, rng);
    in.wavlm[e] = dense(4 * tc, dim, 50.0, rng);
  }
  return in;
}

ModelConfig variant(int which) {
  switch (which) {
    case 0: return ModelConfig::defaults({FusionKind::frame_aligned, Prep::conv, 0});
    case 1: return ModelConfig::defaults({FusionKind::frame_aligned, Prep::avg, 0});
    case 2: return ModelConfig::defaults({FusionKind::pool_late, Prep::none, 0});
    default: return ModelConfig::defaults({FusionKind::cross_attn, Prep::none, 0});
  }
}

void BM_ModelForward(benchmark::State& state) {
  std::mt19937_64 rng(3);
  auto model = init_model<float>(variant(int(state.range(0))), 1);
  const auto in = utterance(50, kEncoderDim, rng);
  for (auto _ : state) benchmark::DoNotOptimize(predict_score(model, in));
}
BENCHMARK(BM_ModelForward)->DenseRange(0, 3);

void BM_ModelForwardBackward(benchmark::State& state) {
  std::mt19937_64 rng(4);
  auto model = init_model<float>(variant(int(state.range(0))), 1);
  const auto in = utterance(50, kEncoderDim, rng);
  for (auto _ : state) {
    Tape<float> tape;
    const Var r = forward_logit(tape, model, in);
    model.params.zero_grad();
    tape.backward(r);
    benchmark::DoNotOptimize(model.params.at("output.final.weight").grad.data());
  }
}
BENCHMARK(BM_ModelForwardBackward)->DenseRange(0, 3);

}  // namespace
BENCHMARK_MAIN();
