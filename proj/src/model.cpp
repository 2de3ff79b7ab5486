#include "pttt/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "pttt/common.hpp"
#include "pttt/digest.hpp"
#include "pttt/kernels.hpp"
#include "pttt/nn.hpp"
#include "pttt/rng.hpp"

namespace pttt {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;

std::size_t numel_of(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

void check_image(const Image& img, const ArchConfig& arch) {
    if (img.h <= 0 || img.w <= 0) throw ShapeError("image dims must be positive");
    const int s = arch.downsample();
    if (img.h % s != 0 || img.w % s != 0)
        throw ShapeError("image dims " + std::to_string(img.w) + "x" + std::to_string(img.h) +
                         " not divisible by encoder downsample factor " + std::to_string(s));
    for (double v : img.v)
        if (!(v >= 0.0 && v <= 1.0))
            throw ValidationError("image values must be finite and within [0,1]");
}
}  // namespace

// ---------------------------------------------------------------------------
// ParamSet
// ---------------------------------------------------------------------------

ParamArray& ParamSet::add(const std::string& name, std::vector<int> shape) {
    if (index_.count(name)) throw ConfigError("duplicate parameter array: " + name);
    ParamArray arr;
    arr.name = name;
    arr.shape = std::move(shape);
    arr.data.assign(numel_of(arr.shape), 0.0);
    index_[name] = arrays_.size();
    arrays_.push_back(std::move(arr));
    return arrays_.back();
}

ParamArray& ParamSet::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValidationError("unknown parameter array: " + name);
    return arrays_[it->second];
}

const ParamArray& ParamSet::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValidationError("unknown parameter array: " + name);
    return arrays_[it->second];
}

bool ParamSet::has(const std::string& name) const { return index_.count(name) != 0; }

void ParamSet::zero() {
    for (auto& a : arrays_) std::fill(a.data.begin(), a.data.end(), 0.0);
}

std::size_t ParamSet::total_values() const {
    std::size_t n = 0;
    for (const auto& a : arrays_) n += a.numel();
    return n;
}

ParamSet ParamSet::zeros_like(const ParamSet& other) {
    ParamSet out;
    for (const auto& a : other.arrays()) out.add(a.name, a.shape);
    return out;
}

// ---------------------------------------------------------------------------
// ArchConfig
// ---------------------------------------------------------------------------

void ArchConfig::validate() const {
    if (embed_dim <= 0) throw ConfigError("embed_dim must be positive");
    if (embed_dim % 4 != 0) throw ConfigError("embed_dim must be divisible by 4");
    if (enc_channels.size() < 2 || enc_channels.size() > 5)
        throw ConfigError("encoder must have between 2 and 5 stages");
    for (int c : enc_channels)
        if (c <= 0) throw ConfigError("encoder channel counts must be positive");
    if (enc_channels.back() != embed_dim)
        throw ConfigError("last encoder stage must emit embed_dim channels");
    if (dec_channels.size() != 2) throw ConfigError("decoders use exactly two upsampling stages");
    for (int c : dec_channels)
        if (c <= 0) throw ConfigError("decoder channel counts must be positive");
    if (image_size <= 0 || image_size % downsample() != 0)
        throw ConfigError("image_size must be a positive multiple of the downsample factor");
    if (!(pe_min_freq > 0.0) || !(pe_max_freq >= pe_min_freq))
        throw ConfigError("positional-encoding band must satisfy 0 < min <= max");
    if (rot_head_hidden <= 0) throw ConfigError("rot_head_hidden must be positive");
    if (!(init_scale > 0.0)) throw ConfigError("init_scale must be positive");
}

const std::vector<std::string>& model_components() {
    static const std::vector<std::string> comps = {"encoder",  "prompt_encoder", "dseg",
                                                   "daux",     "rot_head",       "recon_head"};
    return comps;
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

namespace {

std::uint64_t array_seed(std::uint64_t seed, const std::string& name) {
    Fnv1a64 h;
    h.update(name);
    return seed_mix({seed, h.value()});
}

void fill_normal(ParamArray& arr, std::uint64_t seed, double stddev) {
    Rng rng(array_seed(seed, arr.name));
    for (double& v : arr.data) v = stddev * rng.normal();
}

void add_decoder_params(ParamSet& set, const std::string& comp, const ArchConfig& arch,
                        std::uint64_t seed) {
    const int d = arch.embed_dim;
    const int dc0 = arch.dec_channels[0];
    const int dc1 = arch.dec_channels[1];
    const double s = arch.init_scale;
    fill_normal(set.add(comp + ".key.w", {d, d}), seed, s * std::sqrt(1.0 / d));
    set.add(comp + ".key.b", {d});
    fill_normal(set.add(comp + ".val.w", {d, d}), seed, s * std::sqrt(1.0 / d));
    set.add(comp + ".val.b", {d});
    fill_normal(set.add(comp + ".conv0.w", {dc0, d, 3, 3}), seed, s * std::sqrt(2.0 / (d * 9.0)));
    set.add(comp + ".conv0.b", {dc0});
    fill_normal(set.add(comp + ".conv1.w", {dc1, dc0, 3, 3}), seed,
                s * std::sqrt(2.0 / (dc0 * 9.0)));
    set.add(comp + ".conv1.b", {dc1});
    // Small head keeps untrained logits near zero (probabilities near 0.5).
    fill_normal(set.add(comp + ".head.w", {1, dc1}), seed, s * 0.05 * std::sqrt(1.0 / dc1));
    set.add(comp + ".head.b", {1});
}

}  // namespace

ModelParams init_params(std::uint64_t seed, const ArchConfig& arch) {
    arch.validate();
    ModelParams mp;
    mp.arch = arch;
    ParamSet& set = mp.set;
    const int d = arch.embed_dim;
    const double s = arch.init_scale;

    int ci = 1;
    for (std::size_t i = 0; i < arch.enc_channels.size(); ++i) {
        const int co = arch.enc_channels[i];
        const std::string base = "encoder.stage" + std::to_string(i);
        fill_normal(set.add(base + ".w", {co, ci, 3, 3}), seed, s * std::sqrt(2.0 / (ci * 9.0)));
        set.add(base + ".b", {co});
        ci = co;
    }
    fill_normal(set.add("encoder.neck.w", {d, d}), seed, s * std::sqrt(2.0 / d));
    set.add("encoder.neck.b", {d});

    fill_normal(set.add("prompt_encoder.proj.w", {d, d}), seed, s * std::sqrt(1.0 / d));
    set.add("prompt_encoder.proj.b", {d});
    fill_normal(set.add("prompt_encoder.type_point", {d}), seed, 0.5 * s);
    fill_normal(set.add("prompt_encoder.type_box_min", {d}), seed, 0.5 * s);
    fill_normal(set.add("prompt_encoder.type_box_max", {d}), seed, 0.5 * s);

    add_decoder_params(set, "dseg", arch, seed);
    add_decoder_params(set, "daux", arch, seed);

    const int rh = arch.rot_head_hidden;
    fill_normal(set.add("rot_head.fc0.w", {rh, d}), seed, s * std::sqrt(2.0 / d));
    set.add("rot_head.fc0.b", {rh});
    fill_normal(set.add("rot_head.fc1.w", {4, rh}), seed, s * 0.05 * std::sqrt(1.0 / rh));
    set.add("rot_head.fc1.b", {4});

    const int patch = arch.downsample() * arch.downsample();
    fill_normal(set.add("recon_head.proj.w", {patch, d}), seed, s * 0.05 * std::sqrt(1.0 / d));
    set.add("recon_head.proj.b", {patch});

    return mp;
}

std::string param_digest(const ModelParams& params, const std::string& component) {
    const auto& comps = model_components();
    if (std::find(comps.begin(), comps.end(), component) == comps.end())
        throw ValidationError("unknown model component: " + component);
    Fnv1a64 h;
    for (const auto& arr : params.set.arrays()) {
        if (component_of(arr.name) != component) continue;
        h.update(arr.name);
        for (int dim : arr.shape) h.update_pod(dim);
        h.update(arr.data.data(), arr.data.size() * sizeof(double));
    }
    return h.hex();
}

// ---------------------------------------------------------------------------
// Prompt encoding
// ---------------------------------------------------------------------------

std::vector<double> positional_encoding(const ArchConfig& arch, double x, double y,
                                        int image_h, int image_w) {
    const int nf = arch.embed_dim / 4;
    const double u = (x + 0.5) / image_w;
    const double v = (y + 0.5) / image_h;
    std::vector<double> out(static_cast<std::size_t>(arch.embed_dim));
    for (int i = 0; i < nf; ++i) {
        const double t = nf > 1 ? static_cast<double>(i) / (nf - 1) : 0.0;
        const double f = arch.pe_min_freq * std::pow(arch.pe_max_freq / arch.pe_min_freq, t);
        out[4 * i + 0] = std::sin(kTwoPi * f * u);
        out[4 * i + 1] = std::cos(kTwoPi * f * u);
        out[4 * i + 2] = std::sin(kTwoPi * f * v);
        out[4 * i + 3] = std::cos(kTwoPi * f * v);
    }
    return out;
}

namespace {

std::vector<double> project_token(const ModelParams& params, const std::vector<double>& raw,
                                  const std::string& type_name) {
    const int d = params.arch.embed_dim;
    const auto& w = params.set.at("prompt_encoder.proj.w").data;
    const auto& b = params.set.at("prompt_encoder.proj.b").data;
    const auto& type = params.set.at(type_name).data;
    std::vector<double> tok(static_cast<std::size_t>(d));
    const auto& ops = kernels::active();
    for (int c = 0; c < d; ++c)
        tok[static_cast<std::size_t>(c)] =
            ops.dot(w.data() + static_cast<std::size_t>(c) * d, raw.data(),
                    static_cast<std::size_t>(d)) +
            b[static_cast<std::size_t>(c)] + type[static_cast<std::size_t>(c)];
    return tok;
}

}  // namespace

PromptEmbedding encode_prompt(const std::vector<PointPrompt>& pts, const ModelParams& params,
                              int image_h, int image_w) {
    if (pts.empty()) throw ValidationError("point prompt list must be non-empty");
    PromptEmbedding emb;
    emb.kind = PromptKind::point;
    emb.dim = params.arch.embed_dim;
    for (const auto& p : pts) {
        validate_point(p, image_h, image_w);
        auto raw = positional_encoding(params.arch, p.x, p.y, image_h, image_w);
        emb.tokens.push_back(project_token(params, raw, "prompt_encoder.type_point"));
        emb.raw.push_back(std::move(raw));
        emb.type_names.push_back("prompt_encoder.type_point");
    }
    return emb;
}

PromptEmbedding encode_prompt(const PointPrompt& p, const ModelParams& params,
                              int image_h, int image_w) {
    return encode_prompt(std::vector<PointPrompt>{p}, params, image_h, image_w);
}

PromptEmbedding encode_prompt(const BoxPrompt& box, const ModelParams& params,
                              int image_h, int image_w) {
    validate_box(box, image_h, image_w);
    PromptEmbedding emb;
    emb.kind = PromptKind::box;
    emb.dim = params.arch.embed_dim;
    auto raw_min = positional_encoding(params.arch, box.x_min, box.y_min, image_h, image_w);
    auto raw_max = positional_encoding(params.arch, box.x_max, box.y_max, image_h, image_w);
    emb.tokens.push_back(project_token(params, raw_min, "prompt_encoder.type_box_min"));
    emb.raw.push_back(std::move(raw_min));
    emb.type_names.push_back("prompt_encoder.type_box_min");
    emb.tokens.push_back(project_token(params, raw_max, "prompt_encoder.type_box_max"));
    emb.raw.push_back(std::move(raw_max));
    emb.type_names.push_back("prompt_encoder.type_box_max");
    return emb;
}

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

FeatureMap encode_image(const Image& image, const ModelParams& params, EncoderCache* cache) {
    const ArchConfig& arch = params.arch;
    check_image(image, arch);

    Volume cur(1, image.h, image.w);
    cur.v = image.v;

    EncoderCache local;
    EncoderCache& c = cache ? *cache : local;
    c = EncoderCache{};
    c.input = cur;
    const std::size_t stages = arch.enc_channels.size();
    c.pre.resize(stages);
    c.sig.resize(stages);
    c.cols.resize(stages);

    for (std::size_t i = 0; i < stages; ++i) {
        const auto& w = params.set.at("encoder.stage" + std::to_string(i) + ".w");
        const auto& b = params.set.at("encoder.stage" + std::to_string(i) + ".b");
        Volume z;
        nn::conv3x3_forward(cur, w.data.data(), b.data.data(), arch.enc_channels[i], 2, z,
                            c.cols[i]);
        c.pre[i] = z;
        nn::silu_forward(z, c.sig[i]);
        cur = std::move(z);
    }

    c.neck_in = cur;
    const auto& nw = params.set.at("encoder.neck.w");
    const auto& nb = params.set.at("encoder.neck.b");
    Volume feat;
    nn::conv1x1_forward(cur, nw.data.data(), nb.data.data(), arch.embed_dim, feat);
    return feat;
}

void encoder_backward(const Volume& dfeat, const EncoderCache& cache,
                      const ModelParams& params, ParamSet& grads) {
    const ArchConfig& arch = params.arch;
    const auto& nw = params.set.at("encoder.neck.w");

    Volume dcur;
    nn::conv1x1_backward(dfeat, cache.neck_in, nw.data.data(),
                         grads.at("encoder.neck.w").data.data(),
                         grads.at("encoder.neck.b").data.data(), &dcur);

    for (int i = static_cast<int>(arch.enc_channels.size()) - 1; i >= 0; --i) {
        const std::string base = "encoder.stage" + std::to_string(i);
        const auto& w = params.set.at(base + ".w");
        Volume dz;
        nn::silu_backward(dcur, cache.pre[static_cast<std::size_t>(i)],
                          cache.sig[static_cast<std::size_t>(i)], dz);
        const Volume& in = i == 0 ? cache.input : cache.pre[static_cast<std::size_t>(i - 1)];
        Volume din;
        nn::conv3x3_backward(dz, cache.cols[static_cast<std::size_t>(i)], w.data.data(), in.c,
                             in.h, in.w, 2, grads.at(base + ".w").data.data(),
                             grads.at(base + ".b").data.data(), i > 0 ? &din : nullptr);
        if (i > 0) dcur = std::move(din);
    }
}

// ---------------------------------------------------------------------------
// Prompted decoder
// ---------------------------------------------------------------------------

namespace {

// d x N sinusoidal encodings of cell centers, rows are channels.
std::vector<double> dense_pe_grid(const ArchConfig& arch, int gh, int gw) {
    const int d = arch.embed_dim;
    const int s = arch.downsample();
    const int image_h = gh * s;
    const int image_w = gw * s;
    const std::size_t n = static_cast<std::size_t>(gh) * gw;
    std::vector<double> grid(static_cast<std::size_t>(d) * n);
    for (int gy = 0; gy < gh; ++gy) {
        for (int gx = 0; gx < gw; ++gx) {
            const double cx = gx * s + (s - 1) * 0.5;
            const double cy = gy * s + (s - 1) * 0.5;
            const auto pe = positional_encoding(arch, cx, cy, image_h, image_w);
            const std::size_t col = static_cast<std::size_t>(gy) * gw + gx;
            for (int c = 0; c < d; ++c) grid[static_cast<std::size_t>(c) * n + col] = pe[static_cast<std::size_t>(c)];
        }
    }
    return grid;
}

}  // namespace

MaskProb decoder_forward(const FeatureMap& feat, const PromptEmbedding& prompt,
                         const ModelParams& params, const std::string& comp,
                         DecoderCache* cache) {
    const ArchConfig& arch = params.arch;
    const int d = arch.embed_dim;
    if (feat.c != d) throw ShapeError("feature map channel count does not match embed_dim");
    if (prompt.dim != d) throw ShapeError("prompt embedding dim does not match embed_dim");
    const int gh = feat.h, gw = feat.w;
    const std::size_t n = static_cast<std::size_t>(gh) * gw;
    const std::size_t m = prompt.tokens.size();
    const auto& ops = kernels::active();

    DecoderCache local;
    DecoderCache& c = cache ? *cache : local;
    c = DecoderCache{};
    c.prompt = prompt;
    c.grid_h = gh;
    c.grid_w = gw;

    // Queries: features plus the projected positional grid.
    c.pe_grid_raw = dense_pe_grid(arch, gh, gw);
    const auto& pw = params.set.at("prompt_encoder.proj.w").data;
    const auto& pb = params.set.at("prompt_encoder.proj.b").data;
    c.queries.assign(static_cast<std::size_t>(d) * n, 0.0);
    ops.matmul_nn(pw.data(), c.pe_grid_raw.data(), c.queries.data(),
                  static_cast<std::size_t>(d), static_cast<std::size_t>(d), n, false);
    for (int ch = 0; ch < d; ++ch) {
        double* row = c.queries.data() + static_cast<std::size_t>(ch) * n;
        const double bias = pb[static_cast<std::size_t>(ch)];
        const double* f = feat.v.data() + static_cast<std::size_t>(ch) * n;
        for (std::size_t i = 0; i < n; ++i) row[i] += bias + f[i];
    }

    // Keys / values per token.
    const auto& kw = params.set.at(comp + ".key.w").data;
    const auto& kb = params.set.at(comp + ".key.b").data;
    const auto& vw = params.set.at(comp + ".val.w").data;
    const auto& vb = params.set.at(comp + ".val.b").data;
    c.keys.assign(m * static_cast<std::size_t>(d), 0.0);
    c.vals.assign(m * static_cast<std::size_t>(d), 0.0);
    for (std::size_t t = 0; t < m; ++t) {
        const double* tok = prompt.tokens[t].data();
        double* kt = c.keys.data() + t * d;
        double* vt = c.vals.data() + t * d;
        for (int ch = 0; ch < d; ++ch) {
            kt[ch] = ops.dot(kw.data() + static_cast<std::size_t>(ch) * d, tok,
                             static_cast<std::size_t>(d)) + kb[static_cast<std::size_t>(ch)];
            vt[ch] = ops.dot(vw.data() + static_cast<std::size_t>(ch) * d, tok,
                             static_cast<std::size_t>(d)) + vb[static_cast<std::size_t>(ch)];
        }
    }

    // Per-cell dot-product attention; the similarity map carries the spatial
    // signal, so scores weight the value vectors directly (no softmax).
    c.scores.assign(m * n, 0.0);
    ops.matmul_nn(c.keys.data(), c.queries.data(), c.scores.data(), m,
                  static_cast<std::size_t>(d), n, false);
    ops.scale(1.0 / std::sqrt(static_cast<double>(d)), c.scores.data(), m * n);

    Volume conditioned(d, gh, gw);
    conditioned.v.assign(feat.v.begin(), feat.v.end());
    std::vector<double> ctx(static_cast<std::size_t>(d) * n, 0.0);
    ops.matmul_tn(c.vals.data(), c.scores.data(), ctx.data(), m, static_cast<std::size_t>(d), n,
                  false);
    ops.axpy(1.0 / static_cast<double>(m), ctx.data(), conditioned.v.data(), ctx.size());

    // Two conv + x2 upsample stages, then a 1x1 head and fixed bilinear rescale.
    const auto& c0w = params.set.at(comp + ".conv0.w").data;
    const auto& c0b = params.set.at(comp + ".conv0.b").data;
    Volume z0;
    nn::conv3x3_forward(conditioned, c0w.data(), c0b.data(), arch.dec_channels[0], 1, z0,
                        c.cols[0]);
    c.pre0 = z0;
    nn::silu_forward(z0, c.sig0);
    nn::upsample2x_nearest(z0, c.up0);

    const auto& c1w = params.set.at(comp + ".conv1.w").data;
    const auto& c1b = params.set.at(comp + ".conv1.b").data;
    Volume z1;
    nn::conv3x3_forward(c.up0, c1w.data(), c1b.data(), arch.dec_channels[1], 1, z1, c.cols[1]);
    c.pre1 = z1;
    nn::silu_forward(z1, c.sig1);
    nn::upsample2x_nearest(z1, c.up1);

    const auto& hw = params.set.at(comp + ".head.w").data;
    const auto& hb = params.set.at(comp + ".head.b").data;
    Volume logits_small;
    nn::conv1x1_forward(c.up1, hw.data(), hb.data(), 1, logits_small);

    Grid2 small(logits_small.h, logits_small.w);
    small.v = logits_small.v;
    const int factor = arch.downsample() / 4;
    nn::upsample_bilinear(small, factor, c.logits);

    c.probs = MaskProb(c.logits.h, c.logits.w);
    for (std::size_t i = 0; i < c.logits.v.size(); ++i)
        c.probs.v[i] = nn::sigmoid(c.logits.v[i]);
    return c.probs;
}

Volume decoder_backward(const Grid2& dprobs, const DecoderCache& c, const ModelParams& params,
                        const std::string& comp, ParamSet* grads, bool with_prompt_grads) {
    const ArchConfig& arch = params.arch;
    const int d = arch.embed_dim;
    const int gh = c.grid_h, gw = c.grid_w;
    const std::size_t n = static_cast<std::size_t>(gh) * gw;
    const std::size_t m = c.prompt.tokens.size();
    const auto& ops = kernels::active();

    // Through the sigmoid.
    Grid2 dlogits(dprobs.h, dprobs.w);
    for (std::size_t i = 0; i < dlogits.v.size(); ++i) {
        const double p = c.probs.v[i];
        dlogits.v[i] = dprobs.v[i] * p * (1.0 - p);
    }

    const int factor = arch.downsample() / 4;
    Grid2 dsmall;
    nn::upsample_bilinear_backward(dlogits, factor, dsmall);
    Volume dhead_out(1, dsmall.h, dsmall.w);
    dhead_out.v = dsmall.v;

    const auto& hw = params.set.at(comp + ".head.w").data;
    Volume dup1;
    nn::conv1x1_backward(dhead_out, c.up1, hw.data(),
                         grads ? grads->at(comp + ".head.w").data.data() : nullptr,
                         grads ? grads->at(comp + ".head.b").data.data() : nullptr, &dup1);

    Volume da1;
    nn::upsample2x_nearest_backward(dup1, da1);
    Volume dz1;
    nn::silu_backward(da1, c.pre1, c.sig1, dz1);
    const auto& c1w = params.set.at(comp + ".conv1.w").data;
    Volume dup0;
    nn::conv3x3_backward(dz1, c.cols[1], c1w.data(), arch.dec_channels[0], c.up0.h, c.up0.w, 1,
                         grads ? grads->at(comp + ".conv1.w").data.data() : nullptr,
                         grads ? grads->at(comp + ".conv1.b").data.data() : nullptr, &dup0);

    Volume da0;
    nn::upsample2x_nearest_backward(dup0, da0);
    Volume dz0;
    nn::silu_backward(da0, c.pre0, c.sig0, dz0);
    const auto& c0w = params.set.at(comp + ".conv0.w").data;
    Volume dcond;
    nn::conv3x3_backward(dz0, c.cols[0], c0w.data(), d, gh, gw, 1,
                         grads ? grads->at(comp + ".conv0.w").data.data() : nullptr,
                         grads ? grads->at(comp + ".conv0.b").data.data() : nullptr, &dcond);

    // Attention backward. conditioned = feat + (1/m) * V^T S, S = K Q / sqrt(d).
    const double inv_m = 1.0 / static_cast<double>(m);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    std::vector<double> dscores(m * n, 0.0);  // w.r.t. scaled scores
    ops.matmul_nn(c.vals.data(), dcond.v.data(), dscores.data(), m, static_cast<std::size_t>(d),
                  n, false);
    ops.scale(inv_m, dscores.data(), dscores.size());

    std::vector<double> dvals(m * static_cast<std::size_t>(d), 0.0);
    ops.matmul_nt(c.scores.data(), dcond.v.data(), dvals.data(), m, n,
                  static_cast<std::size_t>(d), false);
    ops.scale(inv_m, dvals.data(), dvals.size());

    // dQ = K^T dS / sqrt(d); dK = dS Q^T / sqrt(d)
    std::vector<double> dqueries(static_cast<std::size_t>(d) * n, 0.0);
    ops.matmul_tn(c.keys.data(), dscores.data(), dqueries.data(), m, static_cast<std::size_t>(d),
                  n, false);
    ops.scale(inv_sqrt_d, dqueries.data(), dqueries.size());

    std::vector<double> dkeys(m * static_cast<std::size_t>(d), 0.0);
    ops.matmul_nt(dscores.data(), c.queries.data(), dkeys.data(), m, n,
                  static_cast<std::size_t>(d), false);
    ops.scale(inv_sqrt_d, dkeys.data(), dkeys.size());

    // dfeat = dcond + dqueries (features feed both paths).
    Volume dfeat(d, gh, gw);
    dfeat.v = dcond.v;
    ops.axpy(1.0, dqueries.data(), dfeat.v.data(), dqueries.size());

    if (grads) {
        // Key/value projections live in the decoder component.
        auto& dkw = grads->at(comp + ".key.w").data;
        auto& dkb = grads->at(comp + ".key.b").data;
        auto& dvw = grads->at(comp + ".val.w").data;
        auto& dvb = grads->at(comp + ".val.b").data;
        std::vector<double> toks(m * static_cast<std::size_t>(d));
        for (std::size_t t = 0; t < m; ++t)
            std::memcpy(toks.data() + t * d, c.prompt.tokens[t].data(),
                        static_cast<std::size_t>(d) * sizeof(double));
        ops.matmul_tn(dkeys.data(), toks.data(), dkw.data(), m, static_cast<std::size_t>(d),
                      static_cast<std::size_t>(d), true);
        ops.matmul_tn(dvals.data(), toks.data(), dvw.data(), m, static_cast<std::size_t>(d),
                      static_cast<std::size_t>(d), true);
        for (std::size_t t = 0; t < m; ++t) {
            ops.axpy(1.0, dkeys.data() + t * d, dkb.data(), static_cast<std::size_t>(d));
            ops.axpy(1.0, dvals.data() + t * d, dvb.data(), static_cast<std::size_t>(d));
        }

        if (with_prompt_grads) {
            const auto& kw = params.set.at(comp + ".key.w").data;
            const auto& vw = params.set.at(comp + ".val.w").data;
            // dtok = dK Wk + dV Wv
            std::vector<double> dtoks(m * static_cast<std::size_t>(d), 0.0);
            ops.matmul_nn(dkeys.data(), kw.data(), dtoks.data(), m, static_cast<std::size_t>(d),
                          static_cast<std::size_t>(d), false);
            ops.matmul_nn(dvals.data(), vw.data(), dtoks.data(), m, static_cast<std::size_t>(d),
                          static_cast<std::size_t>(d), true);

            auto& dpw = grads->at("prompt_encoder.proj.w").data;
            auto& dpb = grads->at("prompt_encoder.proj.b").data;
            std::vector<double> raws(m * static_cast<std::size_t>(d));
            for (std::size_t t = 0; t < m; ++t)
                std::memcpy(raws.data() + t * d, c.prompt.raw[t].data(),
                            static_cast<std::size_t>(d) * sizeof(double));
            ops.matmul_tn(dtoks.data(), raws.data(), dpw.data(), m, static_cast<std::size_t>(d),
                          static_cast<std::size_t>(d), true);
            for (std::size_t t = 0; t < m; ++t) {
                ops.axpy(1.0, dtoks.data() + t * d, dpb.data(), static_cast<std::size_t>(d));
                auto& dtype = grads->at(c.prompt.type_names[t]).data;
                ops.axpy(1.0, dtoks.data() + t * d, dtype.data(), static_cast<std::size_t>(d));
            }

            // Dense positional grid also flows through the projection:
            // queries = feat + W * pe_raw + b.
            ops.matmul_nt(dqueries.data(), c.pe_grid_raw.data(), dpw.data(),
                          static_cast<std::size_t>(d), n, static_cast<std::size_t>(d), true);
            for (int ch = 0; ch < d; ++ch)
                dpb[static_cast<std::size_t>(ch)] +=
                    ops.sum(dqueries.data() + static_cast<std::size_t>(ch) * n, n);
        }
    }

    return dfeat;
}

// ---------------------------------------------------------------------------
// Full passes
// ---------------------------------------------------------------------------

MaskProb forward_main(const Image& image, const BoxPrompt& box, const ModelParams& params,
                      ForwardCache* cache) {
    ForwardCache local;
    ForwardCache& c = cache ? *cache : local;
    FeatureMap feat = encode_image(image, params, &c.enc);
    const auto prompt = encode_prompt(box, params, image.h, image.w);
    return decoder_forward(feat, prompt, params, "dseg", &c.dec);
}

MaskProb forward_aux(const Image& image, const std::vector<PointPrompt>& points,
                     const ModelParams& params, ForwardCache* cache) {
    ForwardCache local;
    ForwardCache& c = cache ? *cache : local;
    FeatureMap feat = encode_image(image, params, &c.enc);
    const auto prompt = encode_prompt(points, params, image.h, image.w);
    return decoder_forward(feat, prompt, params, "daux", &c.dec);
}

MaskProb forward_aux(const Image& image, const PointPrompt& point, const ModelParams& params,
                     ForwardCache* cache) {
    return forward_aux(image, std::vector<PointPrompt>{point}, params, cache);
}

// ---------------------------------------------------------------------------
// Rotation head
// ---------------------------------------------------------------------------

double rotation_forward(const Image& rotated, int rotation_label, const ModelParams& params,
                        RotationCache* cache) {
    if (rotation_label < 0 || rotation_label > 3)
        throw ValidationError("rotation label must be in {0,1,2,3}");
    const int d = params.arch.embed_dim;
    RotationCache local;
    RotationCache& c = cache ? *cache : local;
    c = RotationCache{};
    c.label = rotation_label;

    FeatureMap feat = encode_image(rotated, params, &c.enc);
    const std::size_t n = static_cast<std::size_t>(feat.h) * feat.w;
    c.grid_n = static_cast<int>(n);
    c.pooled.assign(static_cast<std::size_t>(d), 0.0);
    const auto& ops = kernels::active();
    for (int ch = 0; ch < d; ++ch)
        c.pooled[static_cast<std::size_t>(ch)] =
            ops.sum(feat.v.data() + static_cast<std::size_t>(ch) * n, n) / static_cast<double>(n);

    const auto& w0 = params.set.at("rot_head.fc0.w");
    const auto& b0 = params.set.at("rot_head.fc0.b").data;
    const int hdim = w0.shape[0];
    c.hidden_pre.assign(static_cast<std::size_t>(hdim), 0.0);
    for (int i = 0; i < hdim; ++i)
        c.hidden_pre[static_cast<std::size_t>(i)] =
            ops.dot(w0.data.data() + static_cast<std::size_t>(i) * d, c.pooled.data(),
                    static_cast<std::size_t>(d)) + b0[static_cast<std::size_t>(i)];
    c.hidden_sig.resize(static_cast<std::size_t>(hdim));
    c.hidden.resize(static_cast<std::size_t>(hdim));
    for (int i = 0; i < hdim; ++i) {
        const double s = nn::sigmoid(c.hidden_pre[static_cast<std::size_t>(i)]);
        c.hidden_sig[static_cast<std::size_t>(i)] = s;
        c.hidden[static_cast<std::size_t>(i)] = c.hidden_pre[static_cast<std::size_t>(i)] * s;
    }

    const auto& w1 = params.set.at("rot_head.fc1.w").data;
    const auto& b1 = params.set.at("rot_head.fc1.b").data;
    double logits[4];
    for (int k = 0; k < 4; ++k)
        logits[k] = ops.dot(w1.data() + static_cast<std::size_t>(k) * hdim, c.hidden.data(),
                            static_cast<std::size_t>(hdim)) + b1[static_cast<std::size_t>(k)];
    double mx = logits[0];
    for (int k = 1; k < 4; ++k) mx = std::max(mx, logits[k]);
    double denom = 0.0;
    for (int k = 0; k < 4; ++k) denom += std::exp(logits[k] - mx);
    c.softmax.assign(4, 0.0);
    for (int k = 0; k < 4; ++k) c.softmax[static_cast<std::size_t>(k)] = std::exp(logits[k] - mx) / denom;
    return -std::log(std::max(c.softmax[static_cast<std::size_t>(rotation_label)], 1e-300));
}

void rotation_backward(const RotationCache& c, const ModelParams& params, ParamSet& grads,
                       bool with_head_grads, double weight) {
    const int d = params.arch.embed_dim;
    const auto& w1 = params.set.at("rot_head.fc1.w");
    const int hdim = w1.shape[1];

    double dlogits[4];
    for (int k = 0; k < 4; ++k)
        dlogits[k] =
            weight * (c.softmax[static_cast<std::size_t>(k)] - (k == c.label ? 1.0 : 0.0));

    std::vector<double> dh(static_cast<std::size_t>(hdim), 0.0);
    for (int k = 0; k < 4; ++k) {
        const double* row = w1.data.data() + static_cast<std::size_t>(k) * hdim;
        for (int i = 0; i < hdim; ++i) dh[static_cast<std::size_t>(i)] += dlogits[k] * row[i];
        if (with_head_grads) {
            auto& dw1 = grads.at("rot_head.fc1.w").data;
            auto& db1 = grads.at("rot_head.fc1.b").data;
            for (int i = 0; i < hdim; ++i)
                dw1[static_cast<std::size_t>(k) * hdim + i] += dlogits[k] * c.hidden[static_cast<std::size_t>(i)];
            db1[static_cast<std::size_t>(k)] += dlogits[k];
        }
    }

    std::vector<double> dpre(static_cast<std::size_t>(hdim));
    for (int i = 0; i < hdim; ++i) {
        const double s = c.hidden_sig[static_cast<std::size_t>(i)];
        dpre[static_cast<std::size_t>(i)] =
            dh[static_cast<std::size_t>(i)] * s *
            (1.0 + c.hidden_pre[static_cast<std::size_t>(i)] * (1.0 - s));
    }

    const auto& w0 = params.set.at("rot_head.fc0.w");
    std::vector<double> dpooled(static_cast<std::size_t>(d), 0.0);
    for (int i = 0; i < hdim; ++i) {
        const double* row = w0.data.data() + static_cast<std::size_t>(i) * d;
        for (int ch = 0; ch < d; ++ch) dpooled[static_cast<std::size_t>(ch)] += dpre[static_cast<std::size_t>(i)] * row[ch];
        if (with_head_grads) {
            auto& dw0 = grads.at("rot_head.fc0.w").data;
            auto& db0 = grads.at("rot_head.fc0.b").data;
            for (int ch = 0; ch < d; ++ch)
                dw0[static_cast<std::size_t>(i) * d + ch] += dpre[static_cast<std::size_t>(i)] * c.pooled[static_cast<std::size_t>(ch)];
            db0[static_cast<std::size_t>(i)] += dpre[static_cast<std::size_t>(i)];
        }
    }

    const std::size_t n = static_cast<std::size_t>(c.grid_n);
    Volume dfeat(d, c.enc.neck_in.h, c.enc.neck_in.w);
    for (int ch = 0; ch < d; ++ch) {
        const double g = dpooled[static_cast<std::size_t>(ch)] / static_cast<double>(n);
        double* row = dfeat.v.data() + static_cast<std::size_t>(ch) * n;
        for (std::size_t i = 0; i < n; ++i) row[i] = g;
    }
    encoder_backward(dfeat, c.enc, params, grads);
}

// ---------------------------------------------------------------------------
// Reconstruction head
// ---------------------------------------------------------------------------

double reconstruction_forward(const Image& masked_image, const Image& target,
                              const std::vector<std::uint8_t>& masked_pixels,
                              const ModelParams& params, ReconstructionCache* cache) {
    if (target.h != masked_image.h || target.w != masked_image.w)
        throw ShapeError("reconstruction target dims mismatch");
    if (masked_pixels.size() != target.v.size())
        throw ShapeError("masked-pixel flags must cover the image");
    const int d = params.arch.embed_dim;
    const int s = params.arch.downsample();

    ReconstructionCache local;
    ReconstructionCache& c = cache ? *cache : local;
    c = ReconstructionCache{};
    c.target = target;
    c.masked = masked_pixels;

    FeatureMap feat = encode_image(masked_image, params, &c.enc);
    const std::size_t n = static_cast<std::size_t>(feat.h) * feat.w;
    const auto& w = params.set.at("recon_head.proj.w").data;
    const auto& b = params.set.at("recon_head.proj.b").data;
    const std::size_t patch = static_cast<std::size_t>(s) * s;
    c.recon.assign(patch * n, 0.0);
    const auto& ops = kernels::active();
    ops.matmul_nn(w.data(), feat.v.data(), c.recon.data(), patch, static_cast<std::size_t>(d), n,
                  false);
    for (std::size_t p = 0; p < patch; ++p) {
        double* row = c.recon.data() + p * n;
        for (std::size_t i = 0; i < n; ++i) row[i] += b[p];
    }

    const int gw = feat.w;
    double sse = 0.0;
    std::size_t count = 0;
    for (int y = 0; y < target.h; ++y) {
        for (int x = 0; x < target.w; ++x) {
            const std::size_t px = static_cast<std::size_t>(y) * target.w + x;
            if (!masked_pixels[px]) continue;
            const std::size_t cell = static_cast<std::size_t>(y / s) * gw + (x / s);
            const std::size_t p = static_cast<std::size_t>(y % s) * s + (x % s);
            const double diff = c.recon[p * n + cell] - target.v[px];
            sse += diff * diff;
            ++count;
        }
    }
    c.masked_count = count;
    // Empty masked set is the documented degenerate case: loss 0.
    return count == 0 ? 0.0 : sse / static_cast<double>(count);
}

void reconstruction_backward(const ReconstructionCache& c, const ModelParams& params,
                             ParamSet& grads, bool with_head_grads, double weight) {
    if (c.masked_count == 0) return;
    const int d = params.arch.embed_dim;
    const int s = params.arch.downsample();
    const int gh = c.enc.neck_in.h, gw = c.enc.neck_in.w;
    const std::size_t n = static_cast<std::size_t>(gh) * gw;
    const std::size_t patch = static_cast<std::size_t>(s) * s;

    std::vector<double> drecon(patch * n, 0.0);
    const double scale = 2.0 * weight / static_cast<double>(c.masked_count);
    for (int y = 0; y < c.target.h; ++y) {
        for (int x = 0; x < c.target.w; ++x) {
            const std::size_t px = static_cast<std::size_t>(y) * c.target.w + x;
            if (!c.masked[px]) continue;
            const std::size_t cell = static_cast<std::size_t>(y / s) * gw + (x / s);
            const std::size_t p = static_cast<std::size_t>(y % s) * s + (x % s);
            drecon[p * n + cell] = scale * (c.recon[p * n + cell] - c.target.v[px]);
        }
    }

    const auto& ops = kernels::active();
    const auto& w = params.set.at("recon_head.proj.w").data;
    if (with_head_grads) {
        auto& dw = grads.at("recon_head.proj.w").data;
        auto& db = grads.at("recon_head.proj.b").data;
        // Feature map recomputed from the cached neck input.
        Volume feat;
        nn::conv1x1_forward(c.enc.neck_in, params.set.at("encoder.neck.w").data.data(),
                            params.set.at("encoder.neck.b").data.data(), d, feat);
        ops.matmul_nt(drecon.data(), feat.v.data(), dw.data(), patch, n,
                      static_cast<std::size_t>(d), true);
        for (std::size_t p = 0; p < patch; ++p) db[p] += ops.sum(drecon.data() + p * n, n);
    }

    Volume dfeat(d, gh, gw);
    ops.matmul_tn(w.data(), drecon.data(), dfeat.v.data(), patch, static_cast<std::size_t>(d), n,
                  false);
    encoder_backward(dfeat, c.enc, params, grads);
}

}  // namespace pttt
