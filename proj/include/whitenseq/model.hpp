#pragma once

#include <cstdint>
#include <cstddef>
#include <string>
#include <vector>

#include "whitenseq/matrix.hpp"
#include "whitenseq/rng.hpp"
#include "whitenseq/whitening.hpp"

namespace whitenseq {

// Which positions of a training sequence contribute loss terms.
enum class TargetStyle { kLastOnly, kAllPositions };

enum class VariantTag { kId, kText, kTextPlusId, kWhiten, kWhitenPlus };
enum class Combine { kSum, kConcat };

std::string variant_name(VariantTag tag);
VariantTag variant_from_name(const std::string& name);

// Item-encoder configuration. The whitening fields only matter for
// kWhiten (one fully whitened branch) and kWhitenPlus (fully whitened
// plus group-whitened branch through a shared projection head).
struct EncoderVariant {
  VariantTag tag = VariantTag::kId;
  WhiteningMethod method = WhiteningMethod::kZca;
  std::size_t relaxed_groups = 2;
  double epsilon = 1e-5;
  std::size_t head_depth = 2;  // hidden layers in the projection head, 0-3
  Combine combine = Combine::kSum;
};

void validate(const EncoderVariant& variant);
bool uses_id_table(VariantTag tag);
bool uses_text(VariantTag tag);

struct LinearLayer {
  Matrix w;               // in x out; rows act on row vectors from the left
  std::vector<double> b;  // out
};

struct BlockParams {
  Matrix wq, wk, wv, wo;                  // d_model x d_model
  std::vector<double> bq, bk, bv, bo;     // d_model
  Matrix ff1_w, ff2_w;                    // d_model x d_model (hidden = d_model)
  std::vector<double> ff1_b, ff2_b;
  std::vector<double> ln1_gain, ln1_bias;
  std::vector<double> ln2_gain, ln2_bias;
};

struct ModelDims {
  std::size_t d_model = 64;
  std::size_t heads = 2;
  std::size_t max_seq_len = 50;
  std::size_t item_count = 0;
  std::size_t text_dim = 0;  // 0 when the variant carries no text input
};

struct ModelParams {
  ModelDims dims;
  std::vector<LinearLayer> head;  // projection head; empty for the ID variant
  LinearLayer concat_proj;        // only used by kWhitenPlus with kConcat
  std::vector<BlockParams> blocks;
  Matrix pos_table;    // max_seq_len x d_model
  Matrix id_table;     // item_count x d_model; empty when unused
  Matrix frozen_text;  // text_dim x item_count; never updated
};

ModelParams init_params(const EncoderVariant& variant, std::size_t d_model,
                        std::size_t heads, std::size_t blocks,
                        std::size_t max_seq_len, std::size_t item_count,
                        std::size_t text_dim, Rng& rng);

// Flat view of every trainable tensor, in the fixed declaration order
// used by the optimizer, the checkpoint format and gradient checking.
struct TensorRef {
  std::string name;
  double* data = nullptr;
  std::size_t size = 0;
};
std::vector<TensorRef> collect_trainable(ModelParams& params);
std::size_t count_trainable_params(const ModelParams& params);
ModelParams make_zero_like(const ModelParams& params);

// Whitened / raw item features laid out one item per row, computed once
// per run (they depend only on the frozen text matrix).
struct EncoderInputs {
  Matrix text_rows;       // item_count x text_dim
  Matrix z_full_rows;     // item_count x text_dim, G=1 whitening
  Matrix z_relaxed_rows;  // item_count x text_dim, G=relaxed_groups whitening
};
EncoderInputs prepare_encoder_inputs(const EncoderVariant& variant,
                                     const Matrix& frozen_text);

struct HeadCache {
  std::vector<Matrix> inputs;    // per layer: rows fed into the layer
  std::vector<Matrix> pre_acts;  // per layer: rows after w/b, before ReLU
};

struct ItemEncoding {
  Matrix v_rows;  // item_count x d_model
  HeadCache branch_full, branch_relaxed;
  Matrix concat_rows;  // cached input of concat_proj when used
};

ItemEncoding encode_item_rows(const ModelParams& params, const EncoderVariant& variant,
                              const EncoderInputs& inputs);
void backward_items(const ModelParams& params, const EncoderVariant& variant,
                    const EncoderInputs& inputs, const ItemEncoding& encoding,
                    const Matrix& dv_rows, ModelParams& grads);

// Documented d_model x item_count orientation for external callers.
Matrix encode_items(const EncoderVariant& variant, const ModelParams& params);

struct BlockCache {
  Matrix h_in;                       // L x d, block input
  Matrix q, k, v;                    // L x d
  std::vector<Matrix> attn;          // per head: L x L lower-triangular weights
  Matrix a;                          // L x d, concatenated head outputs
  Matrix o;                          // L x d, after the output projection
  Matrix attn_mask, ffn_mask;        // dropout scale factors; empty in eval mode
  Matrix sum1, h1;                   // residual sum and its layer norm
  std::vector<double> ln1_mean, ln1_inv_std;
  Matrix f1_pre, f1_act, f2;         // feed-forward intermediates
  Matrix sum2, h_out;
  std::vector<double> ln2_mean, ln2_inv_std;
};

struct SeqCache {
  std::vector<std::size_t> items;  // input item indices, length L
  Matrix x0;                       // L x d before input dropout
  Matrix input_mask;               // dropout scale factors; empty in eval mode
  std::vector<BlockCache> blocks;
  Matrix h_final;                  // L x d
};

// Runs the causal transformer over one sequence. Overlong sequences are
// truncated to the most recent max_seq_len items. rng supplies dropout
// masks and must be non-null when training and dropout_rate > 0.
void forward_sequence(const ModelParams& params, const Matrix& v_rows,
                      const std::vector<std::size_t>& items, bool training,
                      double dropout_rate, Rng* rng, SeqCache& cache);

// Eval-mode user representation: hidden state at the last position.
std::vector<double> encode_sequence(const ModelParams& params, const Matrix& v_rows,
                                    const std::vector<std::size_t>& items);

struct Batch {
  std::vector<std::vector<std::size_t>> inputs;
  std::vector<std::vector<std::size_t>> targets;  // aligned with inputs
};

struct ForwardResult {
  double loss = 0.0;
  std::size_t supervised_count = 0;
  ItemEncoding items;
  std::vector<SeqCache> seqs;
  // Per sequence: one row of softmax probabilities per supervised
  // position (every position for kAllPositions, the last one otherwise).
  std::vector<Matrix> probs;
};

ForwardResult forward_loss(const ModelParams& params, const EncoderVariant& variant,
                           const EncoderInputs& inputs, const Batch& batch,
                           TargetStyle style, bool training, double dropout_rate,
                           Rng* rng);

ModelParams backward(const ModelParams& params, const EncoderVariant& variant,
                     const EncoderInputs& inputs, const Batch& batch,
                     TargetStyle style, const ForwardResult& fwd);

}  // namespace whitenseq
