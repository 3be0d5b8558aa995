#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "cpgd/params.hpp"
#include "cpgd/prior_extract.hpp"
#include "cpgd/tensor.hpp"

namespace cpgd {

struct CpcInit {
    std::size_t dim = 16;          // token width D
    std::size_t heads = 1;         // D must be divisible by heads
    std::size_t latent_factor = 4; // pixel tiles per token side
    std::uint64_t seed = 0;
    bool zero_query_modulation = false;  // start the modulated-query projection at 0
};

// Attention and toy-predictor weights.
//
// Layers: prior_mask (3 x 1, bias 1) over per-token (dy, dx, r);
// query, query_mod, key, value (D x D, bias D); embed (3 x D, bias D) maps
// pooled stage-one pixels to tokens; predictor.0 (3 x D), predictor.1 (D x 3).
// `meta` holds {heads, latent_factor}.
class CpcParams {
public:
    static constexpr const char* kMagic = "CPCA";

    static CpcParams init(const CpcInit& init);
    static CpcParams from_set(ParamSet set);
    static CpcParams load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const { set_.save(path); }

    std::size_t dim() const noexcept { return dim_; }
    std::size_t heads() const noexcept { return heads_; }
    std::size_t head_dim() const noexcept { return dim_ / heads_; }
    std::size_t latent_factor() const noexcept { return factor_; }

    const Tensor& weight(const std::string& layer) const { return set_.get(layer + ".weight"); }
    const Tensor& bias(const std::string& layer) const { return set_.get(layer + ".bias"); }
    Tensor apply(const std::string& layer, const Tensor& tokens) const;
    void zero_layer(const std::string& layer);

    const ParamSet& set() const noexcept { return set_; }
    ParamSet& set() noexcept { return set_; }

private:
    ParamSet set_;
    std::size_t dim_ = 0;
    std::size_t heads_ = 1;
    std::size_t factor_ = 1;
};

// Priors pooled to token resolution.
struct LatentPriors {
    Tensor motion;    // 2 x h x w, pixels at token scale
    Tensor residual;  // 1 x h x w
};

// Mean pooling over factor x factor tiles (partial edge tiles average what
// they cover); motion is also divided by `factor`.
LatentPriors downsample_priors(const DenseMotionField& motion, const ResidualMap& residual, std::size_t factor);

// A = sigmoid(L_m(dy, dx, r)) per token; returns N x 1 with N = h * w.
Tensor prior_mask(const Tensor& motion_latent, const Tensor& residual_latent, const CpcParams& params);

// Q' = L_q(F) + L_qm(F * A); K = L_k(F); V = L_v(F);
// per head softmax(Q' K^T / sqrt(d)) V, heads concatenated. F is N x D, A is N x 1.
Tensor cp_attention(const Tensor& features, const Tensor& mask, const CpcParams& params);

// Attention weights of one head (N x N), for inspection.
Tensor cp_attention_weights(const Tensor& features, const Tensor& mask, const CpcParams& params, std::size_t head);

// Linear betas from 1e-4 to 2e-2 over `t_train` steps, respaced to `steps` indices.
struct SamplerSchedule {
    int t_train = 0;
    std::vector<double> betas;         // original, length t_train
    std::vector<double> alpha_bars;    // original cumulative products, length t_train
    std::vector<int> indices;          // selected steps, strictly increasing
    std::vector<double> step_betas;    // respaced, per selected step
    std::vector<double> step_alphas;
    std::vector<double> step_alpha_bars;

    std::size_t steps() const noexcept { return indices.size(); }
};

// indices = unique(round_half_up(linspace(0, t_train - 1, steps)));
// step beta k = 1 - alpha_bar(i_k) / alpha_bar(i_{k-1}).
// Throws std::invalid_argument if steps < 2 or steps > t_train.
SamplerSchedule build_schedule(int t_train = 1000, int steps = 50);

// One position at t_train - 1 carrying the full alpha_bar, so a single
// noise-free update maps y_T straight to y_0.
SamplerSchedule single_step_schedule(int t_train = 1000);

// Stage-one output and priors that condition the sampler.
struct Conditioning {
    Tensor stage_one;                       // X, 3 x H x W
    DenseMotionField motion;                // V
    ResidualMap residual;                   // R
    std::vector<std::uint32_t> prompt_ids;  // opaque P
};

// Noise estimate for y_t given the timestep embedding (length D) and control tokens (N x D).
using NoisePredictor =
    std::function<Tensor(const Tensor& y_t, std::span<const float> timestep_embedding, const Tensor& control)>;

// Always predicts zero noise.
NoisePredictor zero_predictor();

// Two per-token linear layers around the control tokens:
// eps = up(L1(lrelu(L0(pool(y_t)) + temb + control))).
NoisePredictor toy_predictor(const CpcParams& params);

// Sinusoidal embedding of a training timestep, length `dim`.
std::vector<float> timestep_embedding(int timestep, std::size_t dim);

// Hashes prompt token ids into a D-vector in [-0.1, 0.1); empty prompt gives zeros.
std::vector<float> prompt_bias(std::span<const std::uint32_t> ids, std::size_t dim);

// Control tokens: cp_attention over embedded stage-one tiles (plus the prompt
// bias) with the prior mask from the pooled motion and residual.
Tensor control_features(const Conditioning& cond, const CpcParams& params);

// One ancestral DDPM update at schedule position k (k = steps-1 is the
// noisiest). Position 0 injects no noise. `noise` is drawn from only when k > 0.
Tensor denoise_step(const Conditioning& cond, const Tensor& y_t, std::size_t k, const SamplerSchedule& schedule,
                    const CpcParams& params, const NoisePredictor& predictor, Rng& noise);

// y_T ~ N(0, I) drawn from `noise`, then denoise_step for k = steps-1 .. 0.
Tensor sample(const Conditioning& cond, const SamplerSchedule& schedule, const CpcParams& params,
              const NoisePredictor& predictor, Rng& noise);

// Same as sample() but starting from a given y_T.
Tensor sample_from(Tensor y_T, const Conditioning& cond, const SamplerSchedule& schedule, const CpcParams& params,
                   const NoisePredictor& predictor, Rng& noise);

float sigmoid(float x);

}  // namespace cpgd
