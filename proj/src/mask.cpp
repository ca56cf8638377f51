#include "dreamstory/mask.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <set>

#include "dreamstory/errors.hpp"
#include "dreamstory/log.hpp"

namespace dreamstory::mask {

long long PixelMask::count() const {
    long long n = 0;
    for (Eigen::Index r = 0; r < values.rows(); ++r)
        for (Eigen::Index c = 0; c < values.cols(); ++c) n += values(r, c);
    return n;
}

Image PixelMask::to_image() const {
    Image img(static_cast<int>(values.cols()), static_cast<int>(values.rows()), 1);
    for (Eigen::Index r = 0; r < values.rows(); ++r)
        for (Eigen::Index c = 0; c < values.cols(); ++c)
            img.at(static_cast<int>(c), static_cast<int>(r), 0) = values(r, c) ? 255 : 0;
    return img;
}

std::string build_detection_prompt(const std::vector<SubjectSpec>& subjects) {
    std::string prompt;
    std::set<std::string> seen;
    for (const auto& s : subjects) {
        if (s.type_token.empty()) throw InputError("subject '" + s.name + "' has no type token");
        if (!seen.insert(s.type_token).second) continue;
        if (!prompt.empty()) prompt += " ";
        prompt += s.type_token + ".";
    }
    return prompt;
}

namespace {

// Detections of one type token, best first.
std::vector<const Detection*> ranked_detections(const std::vector<Detection>& all,
                                                const std::string& token) {
    std::vector<const Detection*> out;
    for (const auto& d : all)
        if (d.phrase == token) out.push_back(&d);
    std::stable_sort(out.begin(), out.end(),
                     [](const Detection* a, const Detection* b) { return a->score > b->score; });
    return out;
}

}  // namespace

MaskSet segment_subjects(const Image& image, const std::vector<SubjectSpec>& subjects,
                         Segmenter& segmenter) {
    if (image.width <= 0 || image.height <= 0) throw InputError("cannot segment an empty image");

    std::vector<std::string> phrases;
    std::set<std::string> seen;
    for (const auto& s : subjects)
        if (seen.insert(s.type_token).second) phrases.push_back(s.type_token);

    std::vector<Detection> detections = segmenter.segment(image, phrases);
    for (const auto& d : detections) {
        if (d.mask.rows() != image.height || d.mask.cols() != image.width)
            throw SegmenterFailure("detection mask does not match image resolution for '" +
                                   d.phrase + "'");
    }

    // k-th subject sharing a token takes the k-th best detection of it.
    std::map<std::string, int> next_rank;
    MaskSet set;
    for (const auto& s : subjects) {
        auto ranked = ranked_detections(detections, s.type_token);
        int rank = next_rank[s.type_token]++;
        PixelMask pm;
        pm.subject_name = s.name;
        pm.source = PixelMask::Source::segmentation;
        if (rank < static_cast<int>(ranked.size())) {
            const Detection& d = *ranked[rank];
            pm.values = d.mask;
            pm.score = d.score;
            pm.box = d.box;
            pm.found = true;
        } else {
            pm.values.setZero(image.height, image.width);
            pm.score = 0.0;
            pm.found = false;
            set.missing_subjects.push_back(s.name);
        }
        set.pixel_masks.emplace(s.name, std::move(pm));
    }

    // Overlapping pixels go to the higher-scoring mask.
    for (auto it = set.pixel_masks.begin(); it != set.pixel_masks.end(); ++it) {
        for (auto jt = std::next(it); jt != set.pixel_masks.end(); ++jt) {
            PixelMask& a = it->second;
            PixelMask& b = jt->second;
            PixelMask& loser = (a.score >= b.score) ? b : a;
            const PixelMask& winner = (a.score >= b.score) ? a : b;
            for (Eigen::Index r = 0; r < winner.values.rows(); ++r)
                for (Eigen::Index c = 0; c < winner.values.cols(); ++c)
                    if (winner.values(r, c) && loser.values(r, c)) loser.values(r, c) = 0;
        }
    }
    return set;
}

LayerMask downsample_mask(const PixelMask& mask, const LayerId& layer, int grid_h, int grid_w) {
    if (grid_h <= 0 || grid_w <= 0) throw ShapeMismatch("token grid must be positive");
    const auto H = mask.values.rows();
    const auto W = mask.values.cols();
    if (H <= 0 || W <= 0) throw ShapeMismatch("pixel mask is empty");

    LayerMask lm;
    lm.layer = layer;
    lm.subject_name = mask.subject_name;
    lm.values.setZero(static_cast<Eigen::Index>(grid_h) * grid_w);

    // Fractional-area pooling: each token cell averages the mask over its
    // pixel-space rectangle, weighting boundary pixels by overlap.
    const double sy = static_cast<double>(H) / grid_h;
    const double sx = static_cast<double>(W) / grid_w;
    for (int gy = 0; gy < grid_h; ++gy) {
        const double y0 = gy * sy, y1 = (gy + 1) * sy;
        for (int gx = 0; gx < grid_w; ++gx) {
            const double x0 = gx * sx, x1 = (gx + 1) * sx;
            double area = 0.0, covered = 0.0;
            for (auto py = static_cast<Eigen::Index>(std::floor(y0));
                 py < static_cast<Eigen::Index>(std::ceil(y1)) && py < H; ++py) {
                const double oy = std::min<double>(y1, py + 1.0) - std::max<double>(y0, py);
                if (oy <= 0) continue;
                for (auto px = static_cast<Eigen::Index>(std::floor(x0));
                     px < static_cast<Eigen::Index>(std::ceil(x1)) && px < W; ++px) {
                    const double ox = std::min<double>(x1, px + 1.0) - std::max<double>(x0, px);
                    if (ox <= 0) continue;
                    area += oy * ox;
                    if (mask.values(py, px)) covered += oy * ox;
                }
            }
            lm.values(static_cast<Eigen::Index>(gy) * grid_w + gx) =
                (area > 0 && covered / area > 0.5) ? 1.0 : 0.0;
        }
    }
    return lm;
}

SemanticMap semantic_map(const std::vector<AttentionMapPair>& layers, int power_sum_count) {
    if (layers.empty()) throw InputError("semantic map needs at least one layer");
    if (power_sum_count < 1) throw InputError("power sum count must be >= 1");

    const Eigen::Index P = layers.front().self_attn.rows();
    VectorXd acc = VectorXd::Zero(P);
    for (const auto& pair : layers) {
        const MatrixXd& A = pair.self_attn;
        if (A.rows() != A.cols()) throw ShapeMismatch("self-attention map must be square");
        if (A.rows() != P || pair.cross_attn_col.size() != P)
            throw ShapeMismatch("attention maps disagree on token count");
        const double dev = (A.rowwise().sum().array() - 1.0).abs().maxCoeff();
        if (dev > 1e-4)
            log::warn("self-attention rows deviate from sum 1",
                      "max deviation " + std::to_string(dev));

        VectorXd powered = pair.cross_attn_col;
        VectorXd layer_sum = VectorXd::Zero(P);
        for (int r = 0; r < power_sum_count; ++r) {
            powered = A * powered;
            layer_sum += powered;
        }
        acc += layer_sum;
    }
    SemanticMap map;
    map.values = acc / static_cast<double>(layers.size());
    return map;
}

OtsuResult otsu_binarize(const VectorXd& values) {
    if (values.size() < 2) throw InputError("otsu needs at least 2 values");

    OtsuResult result;
    const double lo = values.minCoeff();
    const double hi = values.maxCoeff();
    if (hi <= lo) {
        result.threshold = lo;
        result.binary = VectorXd::Ones(values.size());
        result.degenerate = true;
        return result;
    }

    constexpr int kBins = 256;
    std::array<long long, kBins> hist{};
    const double scale = kBins / (hi - lo);
    for (Eigen::Index i = 0; i < values.size(); ++i) {
        int bin = static_cast<int>((values[i] - lo) * scale);
        hist[std::clamp(bin, 0, kBins - 1)] += 1;
    }

    const double total = static_cast<double>(values.size());
    double sum_all = 0.0;
    for (int b = 0; b < kBins; ++b) sum_all += b * static_cast<double>(hist[b]);

    double w0 = 0.0, sum0 = 0.0, best_var = -1.0;
    int best_bin = 0;
    for (int b = 0; b < kBins - 1; ++b) {
        w0 += static_cast<double>(hist[b]);
        if (w0 == 0.0) continue;
        const double w1 = total - w0;
        if (w1 == 0.0) break;
        sum0 += b * static_cast<double>(hist[b]);
        const double mu0 = sum0 / w0;
        const double mu1 = (sum_all - sum0) / w1;
        const double between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if (between > best_var) {
            best_var = between;
            best_bin = b;
        }
    }

    // Values in bins <= best_bin are background. The reported threshold is
    // the largest background value, so binary[i] = 1 iff values[i] > threshold
    // holds exactly.
    result.binary.resize(values.size());
    double thresh = lo;
    for (Eigen::Index i = 0; i < values.size(); ++i) {
        int bin = std::clamp(static_cast<int>((values[i] - lo) * scale), 0, kBins - 1);
        result.binary[i] = (bin > best_bin) ? 1.0 : 0.0;
        if (bin <= best_bin) thresh = std::max(thresh, values[i]);
    }
    result.threshold = thresh;
    return result;
}

CorrespondenceMatrix correspondence_matrix(const SemanticMap& target,
                                           const SemanticMap& reference) {
    if (target.values.size() == 0 || reference.values.size() == 0)
        throw ShapeMismatch("semantic maps must be non-empty");
    const VectorXd bt = otsu_binarize(target.values).binary;
    const VectorXd br = otsu_binarize(reference.values).binary;
    CorrespondenceMatrix m;
    m.values = bt * br.transpose();
    m.target_subject = target.subject_name;
    m.reference_subject = reference.subject_name;
    return m;
}

bool should_refine(const VectorXd& layer_mask, const VectorXd& attn_mass,
                   double drift_threshold) {
    if (layer_mask.size() != attn_mass.size())
        throw ShapeMismatch("mask and attention mass disagree on token count");
    const double total = attn_mass.sum();
    if (total <= 0.0) return false;
    const double inside = (layer_mask.array() * attn_mass.array()).sum();
    return (total - inside) / total > drift_threshold;
}

void rebuild_fusion_maps(MaskSet& set, UnionMode mode) {
    set.union_mask.clear();
    set.sum_map.clear();
    std::map<LayerId, int> contributors;
    for (const auto& [name, per_layer] : set.layer_masks) {
        for (const auto& [layer, lm] : per_layer) {
            auto [it, fresh] = set.sum_map.try_emplace(layer, VectorXd::Zero(lm.values.size()));
            if (!fresh && it->second.size() != lm.values.size())
                throw ShapeMismatch("layer masks of '" + name + "' disagree on token count");
            it->second += lm.values;
            contributors[layer] += 1;
        }
    }
    for (const auto& [layer, sum] : set.sum_map) {
        VectorXd u(sum.size());
        if (mode == UnionMode::union_max) {
            u = (sum.array() > 0.0).cast<double>();
        } else {
            u = (sum.array() >= static_cast<double>(contributors[layer])).cast<double>();
        }
        set.union_mask.emplace(layer, std::move(u));
    }
}

}  // namespace dreamstory::mask
