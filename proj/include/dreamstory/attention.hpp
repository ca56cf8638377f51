#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace dreamstory::attn {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Q/K/V for one attention call. `scale` is 1/sqrt(d_k).
struct AttentionInputs {
    MatrixXd Q;  // [P_q x d]
    MatrixXd K;  // [P_kv x d]
    MatrixXd V;  // [P_kv x d]
    double scale = 0.0;

    static AttentionInputs make(MatrixXd q, MatrixXd k, MatrixXd v);
};

// One reference subject's features at a single layer and timestep.
// `mask` is the correspondence block M_i: [P_tgt x P_ref], rank <= 1
// when built as an outer product of target and reference subject masks.
struct ReferenceFeatures {
    std::string subject;
    MatrixXd K;     // [P_ref x d]
    MatrixXd V;     // [P_ref x d]
    MatrixXd mask;  // [P_tgt x P_ref], entries in {0,1}
    int timestep = -1;
};

// Weights for the mask-weighted cross-attention fusion. `mask_union`
// and `mask_sum` are per-token vectors at the layer's resolution.
struct FusionWeights {
    double lambda = 0.9;
    double epsilon = 1e-8;
    VectorXd mask_union;  // m_u
    VectorXd mask_sum;    // m_s
};

// Row softmax with a binary mask; masked entries are treated as -inf
// logits and come out exactly 0. Rows whose every entry is masked
// return all zeros instead of NaN.
MatrixXd masked_softmax(const MatrixXd& logits, const MatrixXd& mask);

// softmax(Q K^T * scale) V.
MatrixXd vanilla_attention(const AttentionInputs& in);

// Zeroes each 1-entry of `mask` independently with probability `rate`.
// Deterministic for a given seed; the caller derives the seed from
// (run seed, timestep, layer) so ablations are reproducible.
MatrixXd token_dropout(const MatrixXd& mask, double rate, uint64_t rng_seed);

// Masked mutual self-attention: the target's queries attend to the
// concatenation [K_1..K_N, K_tgt] under [M_1..M_N, ones]. Dropout is
// applied to the reference mask blocks only.
MatrixXd mmsa(const MatrixXd& Q_tgt, const MatrixXd& K_tgt, const MatrixXd& V_tgt,
              const std::vector<ReferenceFeatures>& refs, double dropout_rate,
              uint64_t rng_seed);

// Masked mutual cross-attention against one subject's text K/V. The
// subject's target-image mask broadcasts across all text tokens, so
// rows outside the subject region are fully masked (zero rows).
MatrixXd mmca_single(const MatrixXd& Q_tgt, const MatrixXd& text_K, const MatrixXd& text_V,
                     const VectorXd& target_mask);

// O = lambda * m_u/(m_s+eps) * sum(O_i)  +  O_vanilla * (1-m_u) * (1-lambda),
// elementwise over tokens (masks broadcast across the feature dim).
MatrixXd mmca_fuse(const std::vector<MatrixXd>& per_subject_outputs, const MatrixXd& O_vanilla,
                   const FusionWeights& weights);

}  // namespace dreamstory::attn
