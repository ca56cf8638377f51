#include "dreamstory/mock_backend.hpp"

#include <algorithm>
#include <cmath>

#include "dreamstory/attention.hpp"
#include "dreamstory/errors.hpp"
#include "dreamstory/hash.hpp"

namespace dreamstory {

using Eigen::MatrixXd;

const char* to_string(BlockKind kind) {
    switch (kind) {
        case BlockKind::encoder: return "encoder";
        case BlockKind::middle: return "middle";
        case BlockKind::decoder: return "decoder";
    }
    return "?";
}

const char* to_string(AttnKind kind) {
    return kind == AttnKind::self_attn ? "self" : "cross";
}

bool LayerId::operator<(const LayerId& o) const {
    if (block_kind != o.block_kind) return block_kind < o.block_kind;
    if (layer_index != o.layer_index) return layer_index < o.layer_index;
    return attn_kind < o.attn_kind;
}

bool LayerId::operator==(const LayerId& o) const {
    return block_kind == o.block_kind && layer_index == o.layer_index && attn_kind == o.attn_kind;
}

std::string LayerId::str() const {
    return std::string(to_string(block_kind)) + "." + std::to_string(layer_index) + "." +
           to_string(attn_kind);
}

nlohmann::json MockSpec::to_json() const {
    return {{"latent_h", latent_h},
            {"latent_w", latent_w},
            {"token_dim", token_dim},
            {"text_dim", text_dim},
            {"text_tokens", text_tokens},
            {"n_encoder_blocks", n_encoder_blocks},
            {"n_middle_blocks", n_middle_blocks},
            {"n_decoder_blocks", n_decoder_blocks},
            {"step_size", step_size}};
}

MockSpec MockSpec::from_json(const nlohmann::json& j) {
    MockSpec s;
    s.latent_h = j.value("latent_h", s.latent_h);
    s.latent_w = j.value("latent_w", s.latent_w);
    s.token_dim = j.value("token_dim", s.token_dim);
    s.text_dim = j.value("text_dim", s.text_dim);
    s.text_tokens = j.value("text_tokens", s.text_tokens);
    s.n_encoder_blocks = j.value("n_encoder_blocks", s.n_encoder_blocks);
    s.n_middle_blocks = j.value("n_middle_blocks", s.n_middle_blocks);
    s.n_decoder_blocks = j.value("n_decoder_blocks", s.n_decoder_blocks);
    s.step_size = j.value("step_size", s.step_size);
    return s;
}

namespace {

MatrixXd random_matrix(uint64_t seed, Eigen::Index rows, Eigen::Index cols) {
    Rng rng(seed);
    MatrixXd m(rows, cols);
    const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.normal() * scale;
    return m;
}

MatrixXd rms_norm_rows(const MatrixXd& x) {
    MatrixXd out = x;
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
        const double rms = std::sqrt(out.row(r).squaredNorm() / out.cols() + 1e-8);
        out.row(r) /= rms;
    }
    return out;
}

// 2x2 mean pooling over a row-major token grid.
MatrixXd pool2(const MatrixXd& x, int h, int w) {
    MatrixXd out(static_cast<Eigen::Index>(h / 2) * (w / 2), x.cols());
    for (int y = 0; y < h / 2; ++y)
        for (int xg = 0; xg < w / 2; ++xg) {
            out.row(static_cast<Eigen::Index>(y) * (w / 2) + xg) =
                0.25 * (x.row(static_cast<Eigen::Index>(2 * y) * w + 2 * xg) +
                        x.row(static_cast<Eigen::Index>(2 * y) * w + 2 * xg + 1) +
                        x.row(static_cast<Eigen::Index>(2 * y + 1) * w + 2 * xg) +
                        x.row(static_cast<Eigen::Index>(2 * y + 1) * w + 2 * xg + 1));
        }
    return out;
}

MatrixXd unpool2(const MatrixXd& x, int h, int w) {
    // h, w are the TARGET (doubled) grid dims.
    MatrixXd out(static_cast<Eigen::Index>(h) * w, x.cols());
    for (int y = 0; y < h; ++y)
        for (int xg = 0; xg < w; ++xg)
            out.row(static_cast<Eigen::Index>(y) * w + xg) =
                x.row(static_cast<Eigen::Index>(y / 2) * (w / 2) + xg / 2);
    return out;
}

MatrixXd plain_softmax_rows(const MatrixXd& logits) {
    MatrixXd out(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double mx = logits.row(r).maxCoeff();
        Eigen::RowVectorXd e = (logits.row(r).array() - mx).exp();
        out.row(r) = e / e.sum();
    }
    return out;
}

}  // namespace

MockDenoiser::MockDenoiser(uint64_t seed, MockSpec spec) : seed_(seed), spec_(spec) {
    const int blocks = spec_.n_encoder_blocks + spec_.n_middle_blocks + spec_.n_decoder_blocks;
    if (blocks <= 0) throw InvalidSpec("denoiser catalog has zero layers");
    if (spec_.latent_h <= 0 || spec_.latent_w <= 0 || spec_.token_dim <= 0 ||
        spec_.text_dim <= 0 || spec_.text_tokens <= 0)
        throw InvalidSpec("denoiser dimensions must be positive");
    if (spec_.n_middle_blocks > 0 && (spec_.latent_h % 2 != 0 || spec_.latent_w % 2 != 0))
        throw InvalidSpec("middle blocks need an even latent grid");

    auto add_block = [&](BlockKind kind, int index) {
        catalog_.push_back({kind, index, AttnKind::self_attn});
        catalog_.push_back({kind, index, AttnKind::cross_attn});
    };
    for (int i = 0; i < spec_.n_encoder_blocks; ++i) add_block(BlockKind::encoder, i);
    for (int i = 0; i < spec_.n_middle_blocks; ++i) add_block(BlockKind::middle, i);
    for (int i = 0; i < spec_.n_decoder_blocks; ++i) add_block(BlockKind::decoder, i);

    const uint64_t wseed = derive_seed(seed_, "weights");
    for (const auto& layer : catalog_) {
        const int d = spec_.token_dim;
        const int kv_in = layer.attn_kind == AttnKind::cross_attn ? spec_.text_dim : d;
        LayerWeights w;
        w.Wq = random_matrix(derive_seed(wseed, layer.str() + ":q"), d, d);
        w.Wk = random_matrix(derive_seed(wseed, layer.str() + ":k"), kv_in, d);
        w.Wv = random_matrix(derive_seed(wseed, layer.str() + ":v"), kv_in, d);
        w.Wo = random_matrix(derive_seed(wseed, layer.str() + ":o"), d, d);
        weights_.emplace(layer, std::move(w));
    }
    rgb_head_ = random_matrix(derive_seed(wseed, "rgb"), spec_.token_dim, 3);
}

const MockDenoiser::LayerWeights& MockDenoiser::weights(const LayerId& layer) const {
    return weights_.at(layer);
}

TokenEmbeddings MockDenoiser::encode_text(const std::string& prompt) {
    TokenEmbeddings e;
    Rng rng(derive_seed(seed_, "text/" + prompt));
    e.values.resize(spec_.text_tokens, spec_.text_dim);
    for (Eigen::Index r = 0; r < e.values.rows(); ++r)
        for (Eigen::Index c = 0; c < e.values.cols(); ++c) e.values(r, c) = rng.normal();
    return e;
}

Latents MockDenoiser::init_latents(uint64_t seed, int height, int width) {
    if (height <= 0 || width <= 0) throw InputError("image dimensions must be positive");
    Latents l;
    l.grid_h = spec_.latent_h;
    l.grid_w = spec_.latent_w;
    l.image_width = width;
    l.image_height = height;
    l.seed = seed;
    Rng rng(derive_seed(seed, "latents"));
    l.tokens.resize(static_cast<Eigen::Index>(l.grid_h) * l.grid_w, spec_.token_dim);
    for (Eigen::Index r = 0; r < l.tokens.rows(); ++r)
        for (Eigen::Index c = 0; c < l.tokens.cols(); ++c) l.tokens(r, c) = rng.normal();
    return l;
}

std::vector<LayerId> MockDenoiser::layer_catalog() const { return catalog_; }

std::pair<int, int> MockDenoiser::layer_grid(const LayerId& layer, int base_h, int base_w) const {
    if (layer.block_kind == BlockKind::middle) return {base_h / 2, base_w / 2};
    return {base_h, base_w};
}

std::vector<MatrixXd> MockDenoiser::forward(const std::vector<MatrixXd>& tokens,
                                            const std::vector<const TokenEmbeddings*>& text,
                                            int step_index, int num_steps, bool is_cond,
                                            ProcessorRegistry& processors) const {
    const size_t n = tokens.size();
    std::vector<MatrixXd> x = tokens;
    std::vector<std::vector<MatrixXd>> skips(n);
    int grid_h = spec_.latent_h, grid_w = spec_.latent_w;

    BlockKind prev_kind = BlockKind::encoder;
    for (const auto& layer : catalog_) {
        if (layer.attn_kind == AttnKind::self_attn) {
            // Grid transitions happen on block entry.
            const bool entering_middle =
                layer.block_kind == BlockKind::middle && prev_kind != BlockKind::middle;
            const bool leaving_middle =
                layer.block_kind == BlockKind::decoder && prev_kind == BlockKind::middle;
            if (entering_middle) {
                for (size_t i = 0; i < n; ++i) {
                    skips[i].push_back(x[i]);
                    x[i] = pool2(x[i], grid_h, grid_w);
                }
                grid_h /= 2;
                grid_w /= 2;
            } else if (leaving_middle) {
                grid_h *= 2;
                grid_w *= 2;
                for (size_t i = 0; i < n; ++i) {
                    x[i] = unpool2(x[i], grid_h, grid_w) + skips[i].back();
                    skips[i].pop_back();
                }
            }
            prev_kind = layer.block_kind;
        }

        const LayerWeights& w = weights(layer);
        const double scale = 1.0 / std::sqrt(static_cast<double>(spec_.token_dim));
        std::vector<MatrixXd> Q(n), K(n), V(n);
        for (size_t i = 0; i < n; ++i) {
            const MatrixXd xn = rms_norm_rows(x[i]);
            Q[i] = xn * w.Wq;
            if (layer.attn_kind == AttnKind::self_attn) {
                K[i] = xn * w.Wk;
                V[i] = xn * w.Wv;
            } else {
                K[i] = text[i]->values * w.Wk;
                V[i] = text[i]->values * w.Wv;
            }
        }

        AttentionBatch batch;
        batch.layer = layer;
        batch.step_index = step_index;
        batch.num_steps = num_steps;
        batch.is_cond = is_cond;
        batch.grid_h = grid_h;
        batch.grid_w = grid_w;
        batch.scale = scale;
        for (size_t i = 0; i < n; ++i) {
            batch.Q.push_back(&Q[i]);
            batch.K.push_back(&K[i]);
            batch.V.push_back(&V[i]);
        }

        std::vector<MatrixXd> probs;
        if (processors.wants_probabilities()) {
            probs.reserve(n);
            for (size_t i = 0; i < n; ++i)
                probs.push_back(plain_softmax_rows(Q[i] * K[i].transpose() * scale));
            processors.notify(batch, probs);
        }

        std::vector<MatrixXd> outs;
        const auto& proc = layer.attn_kind == AttnKind::self_attn ? processors.self_processor()
                                                                  : processors.cross_processor();
        if (proc) outs = proc(batch);
        if (outs.empty()) {
            outs.resize(n);
            for (size_t i = 0; i < n; ++i) {
                const MatrixXd p = probs.empty()
                                       ? plain_softmax_rows(Q[i] * K[i].transpose() * scale)
                                       : probs[i];
                outs[i] = p * V[i];
            }
        }
        if (outs.size() != n) throw ShapeMismatch("processor returned wrong stream count");
        for (size_t i = 0; i < n; ++i) {
            if (outs[i].rows() != x[i].rows() || outs[i].cols() != x[i].cols())
                throw ShapeMismatch("processor output shape mismatch at " + layer.str());
            x[i] += outs[i] * w.Wo;
        }
    }

    // Catalogs that end below full resolution still decode at full grid.
    while (grid_h < spec_.latent_h) {
        grid_h *= 2;
        grid_w *= 2;
        for (size_t i = 0; i < n; ++i) {
            x[i] = unpool2(x[i], grid_h, grid_w);
            if (!skips[i].empty()) {
                x[i] += skips[i].back();
                skips[i].pop_back();
            }
        }
    }
    return x;
}

std::vector<Latents> MockDenoiser::run_steps(std::vector<Latents> latents,
                                             const std::vector<StreamCondition>& conditions,
                                             int steps, double guidance_scale,
                                             ProcessorRegistry& processors) {
    if (latents.empty()) throw InputError("empty latent batch");
    if (conditions.size() != latents.size())
        throw ShapeMismatch("conditions and latents disagree on batch size");
    if (steps < 1) throw InputError("steps must be >= 1");
    for (const auto& l : latents) {
        if (l.grid_h != spec_.latent_h || l.grid_w != spec_.latent_w)
            throw ShapeMismatch("latents were made for a different grid");
        if (l.tokens.cols() != spec_.token_dim)
            throw ShapeMismatch("latents were made for a different token dim");
    }

    const size_t n = latents.size();
    std::vector<const TokenEmbeddings*> cond_text(n), uncond_text(n);
    for (size_t i = 0; i < n; ++i) {
        cond_text[i] = &conditions[i].text;
        uncond_text[i] = &conditions[i].uncond;
        if (conditions[i].text.dim() != spec_.text_dim ||
            conditions[i].uncond.dim() != spec_.text_dim)
            throw ShapeMismatch("text embeddings were made for a different text dim");
    }

    for (int step = 0; step < steps; ++step) {
        std::vector<MatrixXd> current(n);
        for (size_t i = 0; i < n; ++i) current[i] = latents[i].tokens;

        const auto cond_out = forward(current, cond_text, step, steps, true, processors);
        const auto uncond_out = forward(current, uncond_text, step, steps, false, processors);
        const double rate = spec_.step_size / steps;
        for (size_t i = 0; i < n; ++i) {
            const MatrixXd guided =
                uncond_out[i] + guidance_scale * (cond_out[i] - uncond_out[i]);
            latents[i].tokens -= rate * guided;
        }
    }
    return latents;
}

Image MockDenoiser::decode(const Latents& latents) {
    if (latents.tokens.size() == 0) throw InputError("cannot decode empty latents");
    const int gh = latents.grid_h, gw = latents.grid_w;
    const MatrixXd rgb = latents.tokens * rgb_head_;  // [P x 3]
    Image grid_img(gw, gh, 3);
    for (int y = 0; y < gh; ++y)
        for (int x = 0; x < gw; ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = std::tanh(rgb(static_cast<Eigen::Index>(y) * gw + x, c));
                const int byte = static_cast<int>(std::lround((v * 0.5 + 0.5) * 255.0));
                grid_img.at(x, y, c) = static_cast<uint8_t>(std::clamp(byte, 0, 255));
            }
    const int out_w = latents.image_width > 0 ? latents.image_width : gw * 8;
    const int out_h = latents.image_height > 0 ? latents.image_height : gh * 8;
    return grid_img.resized(out_w, out_h);
}

// ---------------------------------------------------------------------------

std::vector<Detection> MockSegmenter::segment(const Image& image,
                                              const std::vector<std::string>& phrases) {
    std::vector<Detection> out;
    if (!fixtures_.empty()) {
        for (const auto& f : fixtures_) {
            if (std::find(phrases.begin(), phrases.end(), f.phrase) == phrases.end()) continue;
            Detection d;
            d.phrase = f.phrase;
            d.score = f.score;
            d.box = f.box.clipped(image.width, image.height);
            d.mask.setZero(image.height, image.width);
            for (int y = d.box.y0; y < d.box.y1; ++y)
                for (int x = d.box.x0; x < d.box.x1; ++x) d.mask(y, x) = 1;
            out.push_back(std::move(d));
        }
        return out;
    }

    // Procedural: phrase i of n owns the i-th vertical band.
    const int n = static_cast<int>(phrases.size());
    for (int i = 0; i < n; ++i) {
        const double band = static_cast<double>(image.width) / n;
        Detection d;
        d.phrase = phrases[i];
        d.score = 0.9 - 0.07 * i;
        d.box = Box{static_cast<int>(i * band + band / 8), image.height / 6,
                    static_cast<int>((i + 1) * band - band / 8), image.height * 5 / 6}
                    .clipped(image.width, image.height);
        d.mask.setZero(image.height, image.width);
        for (int y = d.box.y0; y < d.box.y1; ++y)
            for (int x = d.box.x0; x < d.box.x1; ++x) d.mask(y, x) = 1;
        out.push_back(std::move(d));
    }
    return out;
}

void MockDetector::add_fixture(const std::string& category, const Box& box, double score) {
    fixtures_[category].push_back({box, score});
}

std::vector<BoxDetection> MockDetector::detect(const Image& image, const std::string& category) {
    auto it = fixtures_.find(category);
    if (it != fixtures_.end()) {
        std::vector<BoxDetection> out = it->second;
        for (auto& d : out) d.box = d.box.clipped(image.width, image.height);
        return out;
    }
    // Procedural: one centered box.
    Box b{image.width / 6, image.height / 6, image.width * 5 / 6, image.height * 5 / 6};
    return {{b.clipped(image.width, image.height), 0.8}};
}

double MockPerceptualSimilarity::similarity(const Image& a, const Image& b) {
    if (a.width <= 0 || b.width <= 0) throw InputError("similarity over empty image");
    const uint64_t ha = image_hash(a), hb = image_hash(b);
    auto it = pinned_.find({std::min(ha, hb), std::max(ha, hb)});
    if (it != pinned_.end()) return it->second;

    const Image ta = a.resized(32, 32);
    const Image tb = b.resized(32, 32);
    if (ta.data.size() != tb.data.size()) return 0.0;  // channel mismatch
    double diff = 0.0;
    for (size_t i = 0; i < ta.data.size(); ++i)
        diff += std::abs(static_cast<int>(ta.data[i]) - static_cast<int>(tb.data[i]));
    return 1.0 - diff / (255.0 * ta.data.size());
}

void MockPerceptualSimilarity::pin(const Image& a, const Image& b, double value) {
    const uint64_t ha = image_hash(a), hb = image_hash(b);
    pinned_[{std::min(ha, hb), std::max(ha, hb)}] = value;
}

void MockTextImageScorer::pin(const Image& image, const std::string& text, double value) {
    pinned_[{image_hash(image), text}] = value;
}

double MockTextImageScorer::score(const Image& image, const std::string& text) {
    if (constant_) return *constant_;
    auto it = pinned_.find({image_hash(image), text});
    if (it != pinned_.end()) return it->second;
    const uint64_t h = fnv1a64(text, image_hash(image));
    return 0.15 + 0.3 * static_cast<double>(h % 10000) / 10000.0;
}

double MockAestheticScorer::score(const Image& image) {
    if (image.width <= 0 || image.height <= 0) throw InputError("aesthetic score over empty image");
    if (constant_) return *constant_;
    const uint64_t h = image_hash(image);
    return 4.0 + 3.0 * static_cast<double>(h % 10000) / 10000.0;
}

}  // namespace dreamstory
