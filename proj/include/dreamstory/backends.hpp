#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dreamstory/image.hpp"

namespace dreamstory {

// ---------------------------------------------------------------------------
// Language model side

struct ChatMessage {
    std::string role;  // "system" | "user" | "assistant"
    std::string content;
};

class LLMClient {
  public:
    virtual ~LLMClient() = default;
    virtual std::string complete(const std::vector<ChatMessage>& messages) = 0;
    virtual std::string model_id() const = 0;
};

// ---------------------------------------------------------------------------
// Diffusion side

enum class BlockKind { encoder, middle, decoder };
enum class AttnKind { self_attn, cross_attn };

const char* to_string(BlockKind kind);
const char* to_string(AttnKind kind);

// Address of one attention layer within a backend's catalog.
struct LayerId {
    BlockKind block_kind = BlockKind::encoder;
    int layer_index = 0;
    AttnKind attn_kind = AttnKind::self_attn;

    bool operator<(const LayerId& o) const;
    bool operator==(const LayerId& o) const;
    bool operator!=(const LayerId& o) const { return !(*this == o); }
    std::string str() const;  // e.g. "decoder.1.self"
};

struct TokenEmbeddings {
    Eigen::MatrixXd values;  // [n_tokens x embed_dim]
    int token_count() const { return static_cast<int>(values.rows()); }
    int dim() const { return static_cast<int>(values.cols()); }
};

struct Latents {
    Eigen::MatrixXd tokens;  // [grid_h*grid_w x d_model], row-major over the grid
    int grid_h = 0;
    int grid_w = 0;
    int image_width = 0;   // decode target size
    int image_height = 0;
    uint64_t seed = 0;
};

// Text conditioning for one stream of a joint batch.
struct StreamCondition {
    std::string prompt;
    TokenEmbeddings text;    // conditional embeddings
    TokenEmbeddings uncond;  // unconditional embeddings (empty prompt)
};

// One attention invocation over the whole joint batch, as seen by an
// installed processor. Pointers stay valid for the duration of the call.
// Outputs returned by a processor are pre-projection; the backbone owns
// the output projection and the residual addition.
struct AttentionBatch {
    LayerId layer;
    int step_index = 0;  // 0-based denoising step
    int num_steps = 1;
    bool is_cond = true;  // classifier-free guidance branch
    int grid_h = 0;
    int grid_w = 0;
    double scale = 1.0;  // 1/sqrt(d_k)
    std::vector<const Eigen::MatrixXd*> Q;  // per stream, [P x d]
    std::vector<const Eigen::MatrixXd*> K;  // self: [P x d]; cross: [T_text x d]
    std::vector<const Eigen::MatrixXd*> V;

    int batch_size() const { return static_cast<int>(Q.size()); }
};

// Processors replace the attention computation of every stream at a layer.
// Returning an empty vector means "no override, use vanilla attention".
// Observers receive the unmodified row-stochastic attention probabilities
// of each stream, independent of any installed processor; they exist for
// attention-map capture (mask refinement) and are only computed when at
// least one observer is registered.
class ProcessorRegistry {
  public:
    using Processor = std::function<std::vector<Eigen::MatrixXd>(const AttentionBatch&)>;
    using Observer =
        std::function<void(const AttentionBatch&, const std::vector<Eigen::MatrixXd>&)>;

    void set_self_processor(Processor p) { self_ = std::move(p); }
    void set_cross_processor(Processor p) { cross_ = std::move(p); }
    void add_observer(Observer o) { observers_.push_back(std::move(o)); }

    bool has_self() const { return static_cast<bool>(self_); }
    bool has_cross() const { return static_cast<bool>(cross_); }
    const Processor& self_processor() const { return self_; }
    const Processor& cross_processor() const { return cross_; }

    bool wants_probabilities() const { return !observers_.empty(); }
    void notify(const AttentionBatch& batch, const std::vector<Eigen::MatrixXd>& probs) const {
        for (const auto& o : observers_) o(batch, probs);
    }

  private:
    Processor self_;
    Processor cross_;
    std::vector<Observer> observers_;
};

// Pluggable denoising backbone. run_steps drives the full iterative loop
// over a joint batch of streams at aligned timesteps; every attention
// layer consults the processor registry exactly once per guidance branch.
class DenoiserBackend {
  public:
    virtual ~DenoiserBackend() = default;

    virtual TokenEmbeddings encode_text(const std::string& prompt) = 0;
    virtual Latents init_latents(uint64_t seed, int height, int width) = 0;
    virtual std::vector<Latents> run_steps(std::vector<Latents> latents,
                                           const std::vector<StreamCondition>& conditions,
                                           int steps, double guidance_scale,
                                           ProcessorRegistry& processors) = 0;
    virtual Image decode(const Latents& latents) = 0;

    // Stable across calls for a given backend instance.
    virtual std::vector<LayerId> layer_catalog() const = 0;
    // Spatial token grid a layer operates on, given the base latent grid.
    virtual std::pair<int, int> layer_grid(const LayerId& layer, int base_h,
                                           int base_w) const = 0;
    // Requested image dimensions must be divisible by this.
    virtual int latent_factor() const = 0;
    virtual std::string backend_id() const = 0;
};

// ---------------------------------------------------------------------------
// Vision model side

struct Detection {
    std::string phrase;  // category token the detection matched
    double score = 0.0;  // in [0,1]
    Box box;
    Eigen::Matrix<uint8_t, Eigen::Dynamic, Eigen::Dynamic> mask;  // [H x W], {0,1}
};

class Segmenter {
  public:
    virtual ~Segmenter() = default;
    // Open-vocabulary detection + segmentation over category phrases.
    virtual std::vector<Detection> segment(const Image& image,
                                           const std::vector<std::string>& phrases) = 0;
};

struct BoxDetection {
    Box box;
    double score = 0.0;
};

class Detector {
  public:
    virtual ~Detector() = default;
    virtual std::vector<BoxDetection> detect(const Image& image, const std::string& category) = 0;
};

class PerceptualSimilarity {
  public:
    virtual ~PerceptualSimilarity() = default;
    // 1 means identical; symmetric.
    virtual double similarity(const Image& a, const Image& b) = 0;
};

class TextImageScorer {
  public:
    virtual ~TextImageScorer() = default;
    virtual double score(const Image& image, const std::string& text) = 0;
};

class AestheticScorer {
  public:
    virtual ~AestheticScorer() = default;
    virtual double score(const Image& image) = 0;
};

}  // namespace dreamstory
