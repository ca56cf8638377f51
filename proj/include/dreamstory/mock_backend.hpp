#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dreamstory/backends.hpp"

namespace dreamstory {

// Shape of the deterministic test denoiser. The default catalog carries
// one encoder block, one middle block (at half grid) and two decoder
// blocks, each with a self-attention and a cross-attention layer.
struct MockSpec {
    int latent_h = 8;
    int latent_w = 8;
    int token_dim = 16;
    int text_dim = 16;
    int text_tokens = 8;
    int n_encoder_blocks = 1;
    int n_middle_blocks = 1;
    int n_decoder_blocks = 2;
    double step_size = 0.3;

    nlohmann::json to_json() const;
    static MockSpec from_json(const nlohmann::json& j);
};

// Tiny UNet-shaped denoiser over token grids. Fully deterministic: weights,
// text encodings and initial latents all derive from seeds via the project
// PRNG. Attention layers consult the processor registry exactly like a
// production backbone; classifier-free guidance runs a conditional and an
// unconditional branch per step.
class MockDenoiser : public DenoiserBackend {
  public:
    MockDenoiser(uint64_t seed, MockSpec spec = {});

    TokenEmbeddings encode_text(const std::string& prompt) override;
    Latents init_latents(uint64_t seed, int height, int width) override;
    std::vector<Latents> run_steps(std::vector<Latents> latents,
                                   const std::vector<StreamCondition>& conditions, int steps,
                                   double guidance_scale, ProcessorRegistry& processors) override;
    Image decode(const Latents& latents) override;

    std::vector<LayerId> layer_catalog() const override;
    std::pair<int, int> layer_grid(const LayerId& layer, int base_h, int base_w) const override;
    int latent_factor() const override { return 1; }
    std::string backend_id() const override { return "mock"; }

    const MockSpec& spec() const { return spec_; }

  private:
    struct LayerWeights {
        Eigen::MatrixXd Wq, Wk, Wv, Wo;
    };

    const LayerWeights& weights(const LayerId& layer) const;
    std::vector<Eigen::MatrixXd> forward(const std::vector<Eigen::MatrixXd>& tokens,
                                         const std::vector<const TokenEmbeddings*>& text,
                                         int step_index, int num_steps, bool is_cond,
                                         ProcessorRegistry& processors) const;

    uint64_t seed_;
    MockSpec spec_;
    std::vector<LayerId> catalog_;
    std::map<LayerId, LayerWeights> weights_;
    Eigen::MatrixXd rgb_head_;  // [token_dim x 3]
};

// Segmenter with two modes. Fixture mode returns configured detections
// (masks filled from their boxes at the query image's resolution).
// Procedural mode deterministically assigns each phrase a vertical band
// of the image.
class MockSegmenter : public Segmenter {
  public:
    struct Fixture {
        std::string phrase;
        Box box;
        double score = 0.0;
    };

    MockSegmenter() = default;
    explicit MockSegmenter(std::vector<Fixture> fixtures) : fixtures_(std::move(fixtures)) {}

    void add_fixture(const Fixture& f) { fixtures_.push_back(f); }
    std::vector<Detection> segment(const Image& image,
                                   const std::vector<std::string>& phrases) override;

  private:
    std::vector<Fixture> fixtures_;
};

class MockDetector : public Detector {
  public:
    MockDetector() = default;

    void add_fixture(const std::string& category, const Box& box, double score);
    std::vector<BoxDetection> detect(const Image& image, const std::string& category) override;

  private:
    std::map<std::string, std::vector<BoxDetection>> fixtures_;
};

// Pixel-difference similarity on 32x32 thumbnails; identical images score
// exactly 1. Pairs can be pinned to fixed values for metric tests.
class MockPerceptualSimilarity : public PerceptualSimilarity {
  public:
    double similarity(const Image& a, const Image& b) override;
    void pin(const Image& a, const Image& b, double value);

  private:
    std::map<std::pair<uint64_t, uint64_t>, double> pinned_;
};

class MockTextImageScorer : public TextImageScorer {
  public:
    MockTextImageScorer() = default;
    explicit MockTextImageScorer(double constant) : constant_(constant) {}

    void pin(const Image& image, const std::string& text, double value);
    double score(const Image& image, const std::string& text) override;

  private:
    std::optional<double> constant_;
    std::map<std::pair<uint64_t, std::string>, double> pinned_;
};

class MockAestheticScorer : public AestheticScorer {
  public:
    MockAestheticScorer() = default;
    explicit MockAestheticScorer(double constant) : constant_(constant) {}

    double score(const Image& image) override;

  private:
    std::optional<double> constant_;
};

}  // namespace dreamstory
