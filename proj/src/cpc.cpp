#include "cpgd/cpc.hpp"

#include <cmath>
#include <stdexcept>

namespace cpgd {

namespace {

constexpr double kBetaStart = 1e-4;
constexpr double kBetaEnd = 2e-2;

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

// Mean over factor x factor tiles; returns C x ceil(H/f) x ceil(W/f).
Tensor mean_pool(const Tensor& x, std::size_t f) {
    require_rank(x, 3, "mean_pool");
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const std::size_t h = ceil_div(H, f), w = ceil_div(W, f);
    Tensor out({C, h, w});
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t ty = 0; ty < h; ++ty) {
            for (std::size_t tx = 0; tx < w; ++tx) {
                double sum = 0.0;
                std::size_t n = 0;
                for (std::size_t y = ty * f; y < std::min(H, ty * f + f); ++y) {
                    for (std::size_t xx = tx * f; xx < std::min(W, tx * f + f); ++xx, ++n) sum += x.at(c, y, xx);
                }
                out.at(c, ty, tx) = static_cast<float>(sum / static_cast<double>(n));
            }
        }
    }
    return out;
}

// C x h x w plane to N x C tokens.
Tensor to_tokens(const Tensor& x) {
    const std::size_t C = x.dim(0), n = x.dim(1) * x.dim(2);
    Tensor t({n, C});
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t p = 0; p < n; ++p) t.at(p, c) = x.slice(c)[p];
    }
    return t;
}

// N x C tokens on an h x w token grid to C x H x W by nearest replication.
Tensor from_tokens(const Tensor& tokens, std::size_t w_tokens, std::size_t H, std::size_t W, std::size_t f) {
    const std::size_t C = tokens.dim(1);
    Tensor out({C, H, W});
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t x = 0; x < W; ++x) out.at(c, y, x) = tokens.at((y / f) * w_tokens + x / f, c);
        }
    }
    return out;
}

void require_tokens(const Tensor& t, std::size_t dim, const char* what) {
    require_rank(t, 2, what);
    if (t.dim(1) != dim) {
        throw ShapeError(std::string(what) + ": token width (axis 1) is " + std::to_string(t.dim(1)) +
                         ", parameters expect " + std::to_string(dim));
    }
}

struct Projections {
    Tensor query, key, value;
};

Projections project(const Tensor& features, const Tensor& mask, const CpcParams& params) {
    require_tokens(features, params.dim(), "cp_attention features");
    require_rank(mask, 2, "cp_attention mask");
    if (mask.dim(0) != features.dim(0) || mask.dim(1) != 1) {
        throw ShapeError("cp_attention: mask must be " + shape_string({features.dim(0), 1}) + ", got " +
                         shape_string(mask.shape()));
    }
    Tensor gated = features;
    const std::size_t N = features.dim(0), D = features.dim(1);
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t d = 0; d < D; ++d) gated.at(n, d) *= mask.at(n, 0);
    }
    Tensor q = params.apply("query", features);
    const Tensor qm = params.apply("query_mod", gated);
    for (std::size_t i = 0; i < q.size(); ++i) q[i] += qm[i];
    return {std::move(q), params.apply("key", features), params.apply("value", features)};
}

Tensor head_scores(const Projections& p, std::size_t head, std::size_t d) {
    const std::size_t N = p.query.dim(0), off = head * d;
    const float scale = 1.0f / std::sqrt(static_cast<float>(d));
    Tensor s({N, N});
    for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t j = 0; j < N; ++j) {
            float acc = 0.0f;
            for (std::size_t e = 0; e < d; ++e) acc += p.query.at(i, off + e) * p.key.at(j, off + e);
            s.at(i, j) = acc * scale;
        }
    }
    return s;
}

Tensor step_with_control(const Tensor& y_t, const Tensor& control, std::size_t k, const SamplerSchedule& schedule,
                         const CpcParams& params, const NoisePredictor& predictor, Rng& noise) {
    if (k >= schedule.steps()) {
        throw std::out_of_range("denoise_step: schedule position " + std::to_string(k) + " outside [0, " +
                                std::to_string(schedule.steps()) + ")");
    }
    const auto temb = timestep_embedding(schedule.indices[k], params.dim());
    const Tensor eps = predictor(y_t, temb, control);
    if (eps.shape() != y_t.shape()) {
        throw ShapeError("noise predictor returned " + shape_string(eps.shape()) + " for input " +
                         shape_string(y_t.shape()));
    }
    const double alpha = schedule.step_alphas[k];
    const double beta = schedule.step_betas[k];
    const double ab = schedule.step_alpha_bars[k];
    const double ab_prev = k > 0 ? schedule.step_alpha_bars[k - 1] : 1.0;
    const float inv_sqrt_alpha = static_cast<float>(1.0 / std::sqrt(alpha));
    const float eps_coef = static_cast<float>(beta / std::sqrt(1.0 - ab));

    Tensor out(y_t.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = inv_sqrt_alpha * (y_t[i] - eps_coef * eps[i]);
    if (k > 0) {
        const float sigma = static_cast<float>(std::sqrt(beta * (1.0 - ab_prev) / (1.0 - ab)));
        for (float& v : out.values()) v += sigma * noise.normal();
    }
    return out;
}

}  // namespace

float sigmoid(float x) { return 1.0f / (1.0f + std::exp(-x)); }

CpcParams CpcParams::init(const CpcInit& init) {
    if (init.dim == 0 || init.heads == 0 || init.dim % init.heads != 0) {
        throw std::invalid_argument("token width " + std::to_string(init.dim) + " is not divisible by " +
                                    std::to_string(init.heads) + " heads");
    }
    if (init.latent_factor == 0) throw std::invalid_argument("latent factor must be positive");
    const std::size_t D = init.dim;
    CpcParams p;
    p.set_ = ParamSet(kMagic, init.seed);
    Rng rng(init.seed);
    auto layer = [&](const char* name, std::size_t in, std::size_t out) {
        p.set_.add(std::string(name) + ".weight", seeded_uniform({in, out}, in, rng));
        p.set_.add(std::string(name) + ".bias", Tensor({out}));
    };
    layer("prior_mask", 3, 1);
    layer("query", D, D);
    layer("query_mod", D, D);
    layer("key", D, D);
    layer("value", D, D);
    layer("embed", 3, D);
    layer("predictor.0", 3, D);
    layer("predictor.1", D, 3);
    p.set_.add("meta", Tensor({2}, {static_cast<float>(init.heads), static_cast<float>(init.latent_factor)}));
    if (init.zero_query_modulation) p.set_.get("query_mod.weight") = Tensor({D, D});
    return from_set(std::move(p.set_));
}

CpcParams CpcParams::from_set(ParamSet set) {
    if (set.magic() != kMagic) throw std::invalid_argument("CPC parameters need magic CPCA, got " + set.magic());
    const Tensor& meta = set.get("meta");
    if (meta.shape() != std::vector<std::size_t>{2}) throw ShapeError("meta: expected 2 values");
    CpcParams p;
    p.dim_ = set.get("query.weight").dim(0);
    p.heads_ = static_cast<std::size_t>(meta[0]);
    p.factor_ = static_cast<std::size_t>(meta[1]);
    if (p.heads_ == 0 || p.dim_ % p.heads_ != 0 || p.factor_ == 0) {
        throw std::invalid_argument("meta: invalid head count or latent factor");
    }
    const std::size_t D = p.dim_;
    const std::pair<const char*, std::vector<std::size_t>> shapes[] = {
        {"prior_mask", {3, 1}}, {"query", {D, D}}, {"query_mod", {D, D}}, {"key", {D, D}},
        {"value", {D, D}},      {"embed", {3, D}}, {"predictor.0", {3, D}}, {"predictor.1", {D, 3}},
    };
    for (const auto& [name, shape] : shapes) {
        const std::string w = std::string(name) + ".weight", b = std::string(name) + ".bias";
        if (set.get(w).shape() != shape) {
            throw ShapeError(w + ": expected " + shape_string(shape) + ", got " + shape_string(set.get(w).shape()));
        }
        if (set.get(b).shape() != std::vector<std::size_t>{shape[1]}) {
            throw ShapeError(b + ": expected length " + std::to_string(shape[1]));
        }
    }
    p.set_ = std::move(set);
    return p;
}

CpcParams CpcParams::load(const std::filesystem::path& path) { return from_set(ParamSet::load(path, kMagic)); }

Tensor CpcParams::apply(const std::string& layer, const Tensor& tokens) const {
    return linear(tokens, weight(layer), bias(layer).data());
}

void CpcParams::zero_layer(const std::string& layer) {
    for (float& v : set_.get(layer + ".weight").values()) v = 0.0f;
    for (float& v : set_.get(layer + ".bias").values()) v = 0.0f;
}

LatentPriors downsample_priors(const DenseMotionField& motion, const ResidualMap& residual, std::size_t factor) {
    if (factor == 0) throw std::invalid_argument("downsample_priors: factor must be positive");
    if (motion.height() != residual.height() || motion.width() != residual.width()) {
        throw ShapeError("downsample_priors: motion " + shape_string(motion.field.shape()) + " and residual " +
                         shape_string(residual.map.shape()) + " differ in extent");
    }
    LatentPriors out{mean_pool(motion.field, factor), mean_pool(residual.map, factor)};
    const float inv = 1.0f / static_cast<float>(factor);
    if (factor != 1) {
        for (float& v : out.motion.values()) v *= inv;
    }
    return out;
}

Tensor prior_mask(const Tensor& motion_latent, const Tensor& residual_latent, const CpcParams& params) {
    require_rank(motion_latent, 3, "prior_mask motion");
    require_rank(residual_latent, 3, "prior_mask residual");
    if (motion_latent.dim(0) != 2 || residual_latent.dim(0) != 1 || motion_latent.dim(1) != residual_latent.dim(1) ||
        motion_latent.dim(2) != residual_latent.dim(2)) {
        throw ShapeError("prior_mask: expected 2xhxw motion and 1xhxw residual, got " +
                         shape_string(motion_latent.shape()) + " and " + shape_string(residual_latent.shape()));
    }
    const Tensor stacked = concat_channels({&motion_latent, &residual_latent});
    Tensor a = params.apply("prior_mask", to_tokens(stacked));
    for (float& v : a.values()) v = sigmoid(v);
    return a;
}

Tensor cp_attention(const Tensor& features, const Tensor& mask, const CpcParams& params) {
    const Projections p = project(features, mask, params);
    const std::size_t N = features.dim(0), D = params.dim(), d = params.head_dim();
    Tensor out({N, D});
    for (std::size_t h = 0; h < params.heads(); ++h) {
        const Tensor weights = softmax_rows(head_scores(p, h, d));
        const std::size_t off = h * d;
        for (std::size_t i = 0; i < N; ++i) {
            for (std::size_t e = 0; e < d; ++e) {
                float acc = 0.0f;
                for (std::size_t j = 0; j < N; ++j) acc += weights.at(i, j) * p.value.at(j, off + e);
                out.at(i, off + e) = acc;
            }
        }
    }
    return out;
}

Tensor cp_attention_weights(const Tensor& features, const Tensor& mask, const CpcParams& params, std::size_t head) {
    if (head >= params.heads()) throw std::out_of_range("attention head " + std::to_string(head) + " out of range");
    return softmax_rows(head_scores(project(features, mask, params), head, params.head_dim()));
}

SamplerSchedule build_schedule(int t_train, int steps) {
    if (steps < 2) throw std::invalid_argument("sampling steps must be at least 2, got " + std::to_string(steps));
    if (steps > t_train) {
        throw std::invalid_argument("sampling steps " + std::to_string(steps) + " exceed training steps " +
                                    std::to_string(t_train));
    }
    SamplerSchedule s;
    s.t_train = t_train;
    s.betas.resize(static_cast<std::size_t>(t_train));
    s.alpha_bars.resize(s.betas.size());
    double ab = 1.0;
    for (int i = 0; i < t_train; ++i) {
        const double frac = t_train == 1 ? 0.0 : static_cast<double>(i) / (t_train - 1);
        s.betas[i] = kBetaStart + (kBetaEnd - kBetaStart) * frac;
        ab *= 1.0 - s.betas[i];
        s.alpha_bars[i] = ab;
    }

    const double stride = static_cast<double>(t_train - 1) / (steps - 1);
    for (int k = 0; k < steps; ++k) {
        const int idx = static_cast<int>(std::floor(k * stride + 0.5));
        if (s.indices.empty() || idx != s.indices.back()) s.indices.push_back(idx);
    }

    double prev = 1.0;
    for (int idx : s.indices) {
        const double cur = s.alpha_bars[static_cast<std::size_t>(idx)];
        const double alpha = cur / prev;
        s.step_alphas.push_back(alpha);
        s.step_betas.push_back(1.0 - alpha);
        s.step_alpha_bars.push_back(s.step_alpha_bars.empty() ? alpha : s.step_alpha_bars.back() * alpha);
        prev = cur;
    }
    return s;
}

SamplerSchedule single_step_schedule(int t_train) {
    SamplerSchedule s = build_schedule(t_train, 2);
    const double ab = s.alpha_bars.back();
    s.indices = {t_train - 1};
    s.step_alphas = {ab};
    s.step_betas = {1.0 - ab};
    s.step_alpha_bars = {ab};
    return s;
}

std::vector<float> timestep_embedding(int timestep, std::size_t dim) {
    std::vector<float> e(dim);
    const std::size_t half = dim / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(std::max<std::size_t>(half, 1)));
        e[i] = static_cast<float>(std::sin(timestep * freq));
        e[half + i] = static_cast<float>(std::cos(timestep * freq));
    }
    if (dim % 2) e[dim - 1] = static_cast<float>(std::sin(static_cast<double>(timestep)));
    return e;
}

std::vector<float> prompt_bias(std::span<const std::uint32_t> ids, std::size_t dim) {
    std::vector<float> b(dim, 0.0f);
    if (ids.empty()) return b;
    std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a 64
    for (std::uint32_t id : ids) {
        for (int i = 0; i < 4; ++i) {
            h ^= (id >> (8 * i)) & 0xffu;
            h *= 0x100000001b3ull;
        }
    }
    Rng rng(h);
    for (float& v : b) v = rng.uniform(-0.1f, 0.1f);
    return b;
}

NoisePredictor zero_predictor() {
    return [](const Tensor& y_t, std::span<const float>, const Tensor&) { return Tensor(y_t.shape()); };
}

NoisePredictor toy_predictor(const CpcParams& params) {
    return [&params](const Tensor& y_t, std::span<const float> temb, const Tensor& control) {
        require_rank(y_t, 3, "toy predictor input");
        const std::size_t f = params.latent_factor();
        const Tensor pooled = mean_pool(y_t, f);
        Tensor h = params.apply("predictor.0", to_tokens(pooled));
        if (control.shape() != h.shape()) {
            throw ShapeError("toy predictor: control tokens " + shape_string(control.shape()) + " do not match " +
                             shape_string(h.shape()));
        }
        const std::size_t N = h.dim(0), D = h.dim(1);
        for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t d = 0; d < D; ++d) h.at(n, d) += temb[d] + control.at(n, d);
        }
        leaky_relu_inplace(h, 0.1f);
        const Tensor eps = params.apply("predictor.1", h);
        return from_tokens(eps, pooled.dim(2), y_t.dim(1), y_t.dim(2), f);
    };
}

Tensor control_features(const Conditioning& cond, const CpcParams& params) {
    require_rank(cond.stage_one, 3, "conditioning stage-one frame");
    if (cond.stage_one.dim(0) != 3) throw ShapeError("conditioning stage-one frame must have 3 channels");
    if (cond.motion.height() != cond.stage_one.dim(1) || cond.motion.width() != cond.stage_one.dim(2)) {
        throw ShapeError("conditioning priors " + shape_string(cond.motion.field.shape()) +
                         " do not match stage-one frame " + shape_string(cond.stage_one.shape()));
    }
    const std::size_t f = params.latent_factor();
    const LatentPriors latent = downsample_priors(cond.motion, cond.residual, f);
    const Tensor mask = prior_mask(latent.motion, latent.residual, params);
    Tensor tokens = params.apply("embed", to_tokens(mean_pool(cond.stage_one, f)));
    const auto bias = prompt_bias(cond.prompt_ids, params.dim());
    for (std::size_t n = 0; n < tokens.dim(0); ++n) {
        for (std::size_t d = 0; d < tokens.dim(1); ++d) tokens.at(n, d) += bias[d];
    }
    return cp_attention(tokens, mask, params);
}

Tensor denoise_step(const Conditioning& cond, const Tensor& y_t, std::size_t k, const SamplerSchedule& schedule,
                    const CpcParams& params, const NoisePredictor& predictor, Rng& noise) {
    if (k >= schedule.steps()) {
        throw std::out_of_range("denoise_step: schedule position " + std::to_string(k) + " outside [0, " +
                                std::to_string(schedule.steps()) + ")");
    }
    return step_with_control(y_t, control_features(cond, params), k, schedule, params, predictor, noise);
}

Tensor sample_from(Tensor y, const Conditioning& cond, const SamplerSchedule& schedule, const CpcParams& params,
                   const NoisePredictor& predictor, Rng& noise) {
    if (y.shape() != cond.stage_one.shape()) {
        throw ShapeError("sample: initial noise " + shape_string(y.shape()) + " does not match stage-one frame " +
                         shape_string(cond.stage_one.shape()));
    }
    // Conditioning is fixed across steps, so the control tokens are computed once.
    const Tensor control = control_features(cond, params);
    for (std::size_t i = 0; i < schedule.steps(); ++i) {
        const std::size_t k = schedule.steps() - 1 - i;
        y = step_with_control(y, control, k, schedule, params, predictor, noise);
    }
    return y;
}

Tensor sample(const Conditioning& cond, const SamplerSchedule& schedule, const CpcParams& params,
              const NoisePredictor& predictor, Rng& noise) {
    Tensor y(cond.stage_one.shape());
    for (float& v : y.values()) v = noise.normal();
    return sample_from(std::move(y), cond, schedule, params, predictor, noise);
}

}  // namespace cpgd
