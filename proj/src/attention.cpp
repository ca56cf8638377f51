#include "dreamstory/attention.hpp"

#include <cmath>
#include <limits>

#include "dreamstory/errors.hpp"
#include "dreamstory/hash.hpp"

namespace dreamstory::attn {

namespace {
void require(bool cond, const std::string& msg) {
    if (!cond) throw ShapeMismatch(msg);
}

void require_finite(const MatrixXd& m, const char* name) {
    if (!m.allFinite()) throw InputError(std::string(name) + " contains non-finite entries");
}
}  // namespace

AttentionInputs AttentionInputs::make(MatrixXd q, MatrixXd k, MatrixXd v) {
    AttentionInputs in;
    in.Q = std::move(q);
    in.K = std::move(k);
    in.V = std::move(v);
    require(in.Q.cols() == in.K.cols(), "Q/K feature dims differ");
    require(in.K.rows() == in.V.rows(), "K/V token counts differ");
    in.scale = 1.0 / std::sqrt(static_cast<double>(in.Q.cols()));
    return in;
}

MatrixXd masked_softmax(const MatrixXd& logits, const MatrixXd& mask) {
    require(logits.rows() == mask.rows() && logits.cols() == mask.cols(),
            "logits and mask shapes differ");
    MatrixXd out = MatrixXd::Zero(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        // Row max over unmasked entries; masked logits are -inf.
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index c = 0; c < logits.cols(); ++c)
            if (mask(r, c) != 0.0) mx = std::max(mx, logits(r, c));
        if (!std::isfinite(mx)) continue;  // fully masked row stays zero
        double sum = 0.0;
        for (Eigen::Index c = 0; c < logits.cols(); ++c) {
            if (mask(r, c) != 0.0) {
                double w = std::exp(logits(r, c) - mx);
                out(r, c) = w;
                sum += w;
            }
        }
        out.row(r) /= sum;
    }
    return out;
}

MatrixXd vanilla_attention(const AttentionInputs& in) {
    require(in.Q.cols() == in.K.cols(), "Q/K feature dims differ");
    require(in.K.rows() == in.V.rows(), "K/V token counts differ");
    require_finite(in.Q, "Q");
    require_finite(in.K, "K");
    require_finite(in.V, "V");
    MatrixXd logits = in.Q * in.K.transpose() * in.scale;
    MatrixXd weights(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        double mx = logits.row(r).maxCoeff();
        weights.row(r) = (logits.row(r).array() - mx).exp();
        weights.row(r) /= weights.row(r).sum();
    }
    return weights * in.V;
}

MatrixXd token_dropout(const MatrixXd& mask, double rate, uint64_t rng_seed) {
    if (rate < 0.0 || rate >= 1.0) throw InputError("dropout rate must be in [0, 1)");
    if (rate == 0.0) return mask;
    Rng rng(rng_seed);
    MatrixXd out = mask;
    // Row-major traversal; one uniform draw per surviving candidate.
    for (Eigen::Index r = 0; r < out.rows(); ++r)
        for (Eigen::Index c = 0; c < out.cols(); ++c)
            if (out(r, c) != 0.0 && rng.uniform() < rate) out(r, c) = 0.0;
    return out;
}

MatrixXd mmsa(const MatrixXd& Q_tgt, const MatrixXd& K_tgt, const MatrixXd& V_tgt,
              const std::vector<ReferenceFeatures>& refs, double dropout_rate,
              uint64_t rng_seed) {
    const Eigen::Index p_tgt = Q_tgt.rows();
    const Eigen::Index d = Q_tgt.cols();
    require(K_tgt.cols() == d && V_tgt.cols() == d, "target K/V feature dims differ from Q");
    require(K_tgt.rows() == p_tgt && V_tgt.rows() == p_tgt, "target K/V token counts differ from Q");

    int timestep = refs.empty() ? -1 : refs.front().timestep;
    Eigen::Index total = p_tgt;
    for (const auto& ref : refs) {
        require(ref.K.cols() == d && ref.V.cols() == d, "reference feature dim differs");
        require(ref.K.rows() == ref.V.rows(), "reference K/V token counts differ");
        require(ref.mask.rows() == p_tgt && ref.mask.cols() == ref.K.rows(),
                "reference mask must be [P_tgt x P_ref]");
        if (ref.timestep != timestep)
            throw TimestepMisalignment("reference '" + ref.subject + "' is at timestep " +
                                       std::to_string(ref.timestep) + ", expected " +
                                       std::to_string(timestep));
        total += ref.K.rows();
    }

    // K+ = [K_1 .. K_N, K_tgt]; M+ = [drop(M_1) .. drop(M_N), ones].
    MatrixXd K_plus(total, d), V_plus(total, d);
    MatrixXd M_plus(p_tgt, total);
    Eigen::Index offset = 0;
    for (size_t i = 0; i < refs.size(); ++i) {
        const auto& ref = refs[i];
        Eigen::Index p_ref = ref.K.rows();
        K_plus.middleRows(offset, p_ref) = ref.K;
        V_plus.middleRows(offset, p_ref) = ref.V;
        M_plus.middleCols(offset, p_ref) =
            token_dropout(ref.mask, dropout_rate, derive_seed(rng_seed, "ref", i));
        offset += p_ref;
    }
    K_plus.middleRows(offset, p_tgt) = K_tgt;
    V_plus.middleRows(offset, p_tgt) = V_tgt;
    M_plus.middleCols(offset, p_tgt) = MatrixXd::Ones(p_tgt, p_tgt);

    double scale = 1.0 / std::sqrt(static_cast<double>(d));
    MatrixXd A = masked_softmax(Q_tgt * K_plus.transpose() * scale, M_plus);
    return A * V_plus;
}

MatrixXd mmca_single(const MatrixXd& Q_tgt, const MatrixXd& text_K, const MatrixXd& text_V,
                     const VectorXd& target_mask) {
    require(text_K.cols() == Q_tgt.cols(), "text K feature dim differs from Q");
    require(text_K.rows() == text_V.rows(), "text K/V token counts differ");
    require(target_mask.size() == Q_tgt.rows(), "target mask length differs from query rows");
    double scale = 1.0 / std::sqrt(static_cast<double>(Q_tgt.cols()));
    // The mask column broadcasts across all text tokens.
    MatrixXd mask = target_mask * Eigen::RowVectorXd::Ones(text_K.rows());
    MatrixXd A = masked_softmax(Q_tgt * text_K.transpose() * scale, mask);
    return A * text_V;
}

MatrixXd mmca_fuse(const std::vector<MatrixXd>& per_subject_outputs, const MatrixXd& O_vanilla,
                   const FusionWeights& weights) {
    const Eigen::Index p = O_vanilla.rows();
    const Eigen::Index d = O_vanilla.cols();
    require(weights.mask_union.size() == p && weights.mask_sum.size() == p,
            "fusion masks must match token count");
    if (weights.epsilon <= 0.0) throw InputError("epsilon must be positive");

    MatrixXd sum = MatrixXd::Zero(p, d);
    for (const auto& o : per_subject_outputs) {
        require(o.rows() == p && o.cols() == d, "per-subject output shape differs");
        sum += o;
    }
    VectorXd gain = (weights.lambda * weights.mask_union.array() /
                     (weights.mask_sum.array() + weights.epsilon))
                        .matrix();
    VectorXd bg = ((1.0 - weights.lambda) * (1.0 - weights.mask_union.array())).matrix();
    return gain.asDiagonal() * sum + bg.asDiagonal() * O_vanilla;
}

}  // namespace dreamstory::attn
