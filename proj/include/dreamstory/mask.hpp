#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dreamstory/backends.hpp"
#include "dreamstory/image.hpp"
#include "dreamstory/subject.hpp"

namespace dreamstory::mask {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Binary subject mask in pixel space.
struct PixelMask {
    enum class Source { segmentation, attention_refined };

    Eigen::Matrix<uint8_t, Eigen::Dynamic, Eigen::Dynamic> values;  // [H x W], {0,1}
    Source source = Source::segmentation;
    std::string subject_name;
    double score = 0.0;
    Box box;            // bounding box of the detection that produced the mask
    bool found = true;  // false when the segmenter missed the subject

    bool empty_mask() const { return values.size() == 0 || values.maxCoeff() == 0; }
    long long count() const;
    Image to_image() const;  // lossless grayscale export (0 / 255)
};

// Binary subject mask on one attention layer's token grid, row-major.
struct LayerMask {
    VectorXd values;  // [n_spatial_tokens], {0,1}
    LayerId layer;
    std::string subject_name;
};

// Rank-1 binary matrix linking target tokens of a subject to reference
// tokens of the same subject (symbol M_i).
struct CorrespondenceMatrix {
    MatrixXd values;  // [P_tgt x P_ref]
    std::string target_subject;
    std::string reference_subject;
};

// Non-negative per-token relevance of one subject (symbol m_i).
struct SemanticMap {
    VectorXd values;
    std::string subject_name;
};

// How the overlap normalizer m_u is built from the subject layer masks.
// The fusion term needs the vanilla output to vanish exactly where any
// subject exists, which union provides; intersection is kept behind
// this switch for experimentation.
enum class UnionMode { union_max, intersection_min };

struct MaskSet {
    std::map<std::string, PixelMask> pixel_masks;
    std::map<std::string, std::map<LayerId, LayerMask>> layer_masks;
    std::map<LayerId, VectorXd> union_mask;  // m_u per layer
    std::map<LayerId, VectorXd> sum_map;     // m_s per layer
    std::map<std::string, std::map<LayerId, CorrespondenceMatrix>> correspondence;
    std::vector<std::string> missing_subjects;

    bool has_subject(const std::string& name) const { return pixel_masks.count(name) > 0; }
};

struct OtsuResult {
    double threshold = 0.0;
    VectorXd binary;  // entries {0,1}; binary[i] = 1 iff values[i] > threshold
    bool degenerate = false;
};

// Joins detector category tokens as a period-separated detection prompt;
// duplicate tokens are emitted once.
std::string build_detection_prompt(const std::vector<SubjectSpec>& subjects);

// Runs the segmenter over the subjects' type tokens and assembles
// pairwise-disjoint pixel masks. Overlapping pixels go to the mask with
// the higher segmentation score. When several subjects share a type
// token, the k-th highest-scoring detection of that token goes to the
// k-th subject sharing it. Subjects with no detection get an empty
// mask and are listed in missing_subjects.
MaskSet segment_subjects(const Image& image, const std::vector<SubjectSpec>& subjects,
                         Segmenter& segmenter);

// Area-average pooling onto the layer's token grid, then strict > 0.5
// threshold.
LayerMask downsample_mask(const PixelMask& mask, const LayerId& layer, int grid_h, int grid_w);

// One layer's attention maps cached from the previous timestep.
struct AttentionMapPair {
    MatrixXd self_attn;       // [P x P], row-stochastic
    VectorXd cross_attn_col;  // [P], the subject's text-token column
};

// Mean over layers of sum_{r=1..R} (A_sa)^r * A_ca. Warns (does not
// fail) when a self-attention row deviates from sum 1 by more than 1e-4.
SemanticMap semantic_map(const std::vector<AttentionMapPair>& layers, int power_sum_count);

// 256-bin histogram Otsu threshold over [min, max]; all-equal input is
// degenerate and returns all ones.
OtsuResult otsu_binarize(const VectorXd& values);

// Outer product of the Otsu-binarized target and reference semantic maps.
CorrespondenceMatrix correspondence_matrix(const SemanticMap& target, const SemanticMap& reference);

// True when the fraction of `attn_mass` falling outside the mask exceeds
// `drift_threshold`. Zero total mass never triggers.
bool should_refine(const VectorXd& layer_mask, const VectorXd& attn_mass, double drift_threshold);

// Fills union_mask / sum_map per layer from the current layer masks.
void rebuild_fusion_maps(MaskSet& set, UnionMode mode);

}  // namespace dreamstory::mask
