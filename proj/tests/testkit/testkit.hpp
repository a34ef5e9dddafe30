#pragma once

#include <sipfuse/data.hpp>
#include <sipfuse/grad_check.hpp>
#include <sipfuse/model.hpp>
#include <sipfuse/ops.hpp>

#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace testkit {

using namespace sipfuse;

Mat<double> randn(Index rows, Index cols, std::mt19937_64& rng, double scale = 1.0);
/// Each frame valid with probability p; at least one valid frame when
/// `ensure_valid`.
Mask random_mask(Index length, std::mt19937_64& rng, double p = 0.7, bool ensure_valid = true);
int uniform_int(std::mt19937_64& rng, int lo, int hi);

/// Registers `values` as a trainable tensor and returns it as a sequence
/// leaf, so grad checks cover the input gradient too.
ops::SeqVar seq_leaf(Tape<double>& tape, ParamStore<double>& p, const std::string& name, const Mask& mask,
                     double rate = 1.0);

/// sum((y + C)^2) with a fixed, shape-derived offset C.
Var probe_loss(Tape<double>& tape, Var y);

/// A parameter store with a scalar loss over it.
struct GradProblem {
  std::shared_ptr<Model<double>> model;  // owns the store
  LossClosure loss;
  Index max_entries = 0;
};

struct GradCase {
  std::string name;
  double tolerance;
  int trials;
  std::function<GradProblem(std::mt19937_64&)> make;
};

/// Every differentiable primitive and sequence op.
std::vector<GradCase> op_grad_cases();
/// Fusion, head blocks, and the full model for every variant.
std::vector<GradCase> model_grad_cases();

/// Runs all trials of a case; returns the worst relative error seen.
double run_grad_case(const GradCase& c, std::uint64_t seed);

/// Small model configuration for fast tests.
ModelConfig small_config(FusionKind kind, Prep prep = Prep::none, int input_dim = 6, int d = 4);

/// Random binaural input on 12.5/50 Hz timelines with T_w = 4 T_c + jitter.
UtteranceInput<float> random_input(std::mt19937_64& rng, int input_dim, int tc_lo, int tc_hi);
/// Appends the given numbers of invalid frames to each stream
/// (canary L, canary R, wavlm L, wavlm R).
UtteranceInput<float> pad_input(const UtteranceInput<float>& in, const std::array<int, 4>& extra);

std::vector<FusionVariant> all_variants();
std::string variant_name(const FusionVariant& v);

}  // namespace testkit
