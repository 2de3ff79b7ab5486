#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "pttt/tensor.hpp"

namespace pttt {

// ---------------------------------------------------------------------------
// Parameter registry
// ---------------------------------------------------------------------------

struct ParamArray {
    std::string name;
    std::vector<int> shape;
    std::vector<double> data;

    std::size_t numel() const { return data.size(); }
};

// Named parameter arrays in a fixed registration order. Component membership
// is the name prefix up to the first '.'.
class ParamSet {
public:
    ParamArray& add(const std::string& name, std::vector<int> shape);
    ParamArray& at(const std::string& name);
    const ParamArray& at(const std::string& name) const;
    bool has(const std::string& name) const;

    std::vector<ParamArray>& arrays() { return arrays_; }
    const std::vector<ParamArray>& arrays() const { return arrays_; }

    void zero();
    std::size_t total_values() const;

    // Same names/shapes, zero-filled data.
    static ParamSet zeros_like(const ParamSet& other);

private:
    std::vector<ParamArray> arrays_;
    std::unordered_map<std::string, std::size_t> index_;
};

inline std::string component_of(const std::string& name) {
    const auto pos = name.find('.');
    return pos == std::string::npos ? name : name.substr(0, pos);
}

// ---------------------------------------------------------------------------
// Architecture
// ---------------------------------------------------------------------------

struct ArchConfig {
    int image_size = 256;                       // square inputs
    std::vector<int> enc_channels = {6, 12, 24, 64};  // one stride-2 stage each
    int embed_dim = 64;                         // must equal enc_channels.back()
    std::vector<int> dec_channels = {32, 16};   // two conv + x2 upsample stages
    double pe_min_freq = 1.0;                   // sinusoidal prompt-encoding band
    double pe_max_freq = 8.0;
    double init_scale = 1.0;
    int rot_head_hidden = 32;

    int downsample() const { return 1 << static_cast<int>(enc_channels.size()); }
    int grid(int image_dim) const { return image_dim / downsample(); }

    void validate() const;  // throws ConfigError on inconsistent dims
};

struct ModelParams {
    ArchConfig arch;
    ParamSet set;
};

// The six component names accepted by param_digest and the optimizer filters.
const std::vector<std::string>& model_components();

ModelParams init_params(std::uint64_t seed, const ArchConfig& arch);

// Stable content hash of one component's arrays (names, shapes, raw values).
std::string param_digest(const ModelParams& params, const std::string& component);

// ---------------------------------------------------------------------------
// Prompt encoding
// ---------------------------------------------------------------------------

enum class PromptKind { point, box };

struct PromptEmbedding {
    PromptKind kind = PromptKind::point;
    int dim = 0;
    // tokens[t] = proj * raw[t] + proj_bias + type_embed(type[t])
    std::vector<std::vector<double>> tokens;
    std::vector<std::vector<double>> raw;   // sinusoidal encodings, pre-projection
    std::vector<std::string> type_names;    // parameter name of each type embedding
};

// Sinusoidal encoding of a pixel coordinate, normalized by image dims.
std::vector<double> positional_encoding(const ArchConfig& arch, double x, double y,
                                        int image_h, int image_w);

PromptEmbedding encode_prompt(const PointPrompt& p, const ModelParams& params,
                              int image_h, int image_w);
PromptEmbedding encode_prompt(const std::vector<PointPrompt>& pts, const ModelParams& params,
                              int image_h, int image_w);
PromptEmbedding encode_prompt(const BoxPrompt& b, const ModelParams& params,
                              int image_h, int image_w);

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

struct EncoderCache {
    Volume input;
    std::vector<Volume> pre;                 // conv outputs per stage
    std::vector<Volume> sig;                 // silu sigmoid caches
    std::vector<std::vector<double>> cols;   // im2col buffers per stage
    Volume neck_in;                          // input to the 1x1 neck
};

FeatureMap encode_image(const Image& image, const ModelParams& params,
                        EncoderCache* cache = nullptr);
// Accumulates encoder gradients into grads.
void encoder_backward(const Volume& dfeat, const EncoderCache& cache,
                      const ModelParams& params, ParamSet& grads);

// ---------------------------------------------------------------------------
// Prompted decoders ("dseg" for boxes, "daux" for points)
// ---------------------------------------------------------------------------

struct DecoderCache {
    PromptEmbedding prompt;
    std::vector<double> pe_grid_raw;   // d x N sinusoidal grid
    std::vector<double> queries;       // d x N, features + projected grid
    std::vector<double> keys, vals;    // m x d
    std::vector<double> scores;        // m x N, scaled by 1/sqrt(d)
    Volume pre0, sig0, up0, pre1, sig1, up1;
    std::vector<std::vector<double>> cols{2};
    Grid2 logits;                      // full resolution
    MaskProb probs;
    int grid_h = 0, grid_w = 0;
};

MaskProb decoder_forward(const FeatureMap& feat, const PromptEmbedding& prompt,
                         const ModelParams& params, const std::string& comp,
                         DecoderCache* cache = nullptr);

// dprobs is dL/d(probs). Returns dL/d(feature map). When grads is non-null,
// decoder parameters are accumulated; prompt-encoder gradients additionally
// require with_prompt_grads (the TTT path freezes both and skips the work).
Volume decoder_backward(const Grid2& dprobs, const DecoderCache& cache,
                        const ModelParams& params, const std::string& comp,
                        ParamSet* grads, bool with_prompt_grads);

// ---------------------------------------------------------------------------
// Full forward passes
// ---------------------------------------------------------------------------

struct ForwardCache {
    EncoderCache enc;
    DecoderCache dec;
};

MaskProb forward_main(const Image& image, const BoxPrompt& box, const ModelParams& params,
                      ForwardCache* cache = nullptr);
MaskProb forward_aux(const Image& image, const PointPrompt& point, const ModelParams& params,
                     ForwardCache* cache = nullptr);
MaskProb forward_aux(const Image& image, const std::vector<PointPrompt>& points,
                     const ModelParams& params, ForwardCache* cache = nullptr);

// ---------------------------------------------------------------------------
// Baseline self-supervised heads
// ---------------------------------------------------------------------------

struct RotationCache {
    EncoderCache enc;
    int label = 0;
    std::vector<double> pooled, hidden_pre, hidden_sig, hidden, softmax;
    int grid_n = 0;
};

// Cross-entropy of the 4-way rotation classifier on an already-rotated image.
double rotation_forward(const Image& rotated, int rotation_label, const ModelParams& params,
                        RotationCache* cache);
void rotation_backward(const RotationCache& cache, const ModelParams& params,
                       ParamSet& grads, bool with_head_grads, double weight = 1.0);

struct ReconstructionCache {
    EncoderCache enc;
    std::vector<double> recon;        // s*s x N cell pixels
    std::vector<std::uint8_t> masked; // per-pixel mask of reconstruction targets
    Image target;
    std::size_t masked_count = 0;
};

// Masked-patch reconstruction MSE; masked selects the pixels that were blanked.
double reconstruction_forward(const Image& masked_image, const Image& target,
                              const std::vector<std::uint8_t>& masked_pixels,
                              const ModelParams& params, ReconstructionCache* cache);
void reconstruction_backward(const ReconstructionCache& cache, const ModelParams& params,
                             ParamSet& grads, bool with_head_grads, double weight = 1.0);

}  // namespace pttt
