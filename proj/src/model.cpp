#include "whitenseq/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "whitenseq/errors.hpp"

namespace whitenseq {

namespace {

constexpr double kLnEps = 1e-5;

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void add_bias_rows(Matrix& m, const std::vector<double>& b) {
  if (b.size() != m.cols()) throw ShapeError("bias length does not match columns");
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double* row = m.row(r);
    for (std::size_t c = 0; c < m.cols(); ++c) row[c] += b[c];
  }
}

void add_into(Matrix& dst, const Matrix& src) {
  if (!dst.same_shape(src)) throw ShapeError("gradient shape mismatch");
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

Matrix add(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw ShapeError("elementwise add shape mismatch");
  Matrix out = a;
  add_into(out, b);
  return out;
}

void accumulate_col_sums(const Matrix& g, std::vector<double>& out) {
  if (out.size() != g.cols()) throw ShapeError("bias gradient length mismatch");
  for (std::size_t r = 0; r < g.rows(); ++r) {
    const double* row = g.row(r);
    for (std::size_t c = 0; c < g.cols(); ++c) out[c] += row[c];
  }
}

Matrix relu(const Matrix& m) {
  Matrix out = m;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

void relu_backward_inplace(Matrix& d, const Matrix& pre) {
  if (!d.same_shape(pre)) throw ShapeError("relu gradient shape mismatch");
  auto dd = d.data();
  auto pp = pre.data();
  for (std::size_t i = 0; i < dd.size(); ++i) {
    if (pp[i] <= 0.0) dd[i] = 0.0;
  }
}

Matrix make_dropout_mask(std::size_t rows, std::size_t cols, double rate, Rng& rng) {
  Matrix mask(rows, cols);
  const double scale = 1.0 / (1.0 - rate);
  for (double& v : mask.data()) v = rng.uniform() < rate ? 0.0 : scale;
  return mask;
}

void apply_mask_inplace(Matrix& x, const Matrix& mask) {
  if (mask.empty()) return;
  auto xd = x.data();
  auto md = mask.data();
  for (std::size_t i = 0; i < xd.size(); ++i) xd[i] *= md[i];
}

Matrix masked(const Matrix& g, const Matrix& mask) {
  Matrix out = g;
  apply_mask_inplace(out, mask);
  return out;
}

void layer_norm_rows(const Matrix& x, const std::vector<double>& gain,
                     const std::vector<double>& bias, Matrix& y,
                     std::vector<double>& means, std::vector<double>& inv_stds) {
  const std::size_t n = x.rows(), d = x.cols();
  y = Matrix(n, d);
  means.assign(n, 0.0);
  inv_stds.assign(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const double* xr = x.row(r);
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += xr[c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double diff = xr[c] - mu;
      var += diff * diff;
    }
    var /= static_cast<double>(d);
    const double s = 1.0 / std::sqrt(var + kLnEps);
    means[r] = mu;
    inv_stds[r] = s;
    double* yr = y.row(r);
    for (std::size_t c = 0; c < d; ++c) yr[c] = gain[c] * (xr[c] - mu) * s + bias[c];
  }
}

void layer_norm_backward_rows(const Matrix& dy, const Matrix& x,
                              const std::vector<double>& gain,
                              const std::vector<double>& means,
                              const std::vector<double>& inv_stds, Matrix& dx,
                              std::vector<double>& dgain, std::vector<double>& dbias) {
  const std::size_t n = x.rows(), d = x.cols();
  dx = Matrix(n, d);
  const double inv_d = 1.0 / static_cast<double>(d);
  for (std::size_t r = 0; r < n; ++r) {
    const double* dyr = dy.row(r);
    const double* xr = x.row(r);
    const double mu = means[r];
    const double s = inv_stds[r];
    double mean_g = 0.0, mean_gx = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double x_hat = (xr[c] - mu) * s;
      const double g = dyr[c] * gain[c];
      dgain[c] += dyr[c] * x_hat;
      dbias[c] += dyr[c];
      mean_g += g;
      mean_gx += g * x_hat;
    }
    mean_g *= inv_d;
    mean_gx *= inv_d;
    double* dxr = dx.row(r);
    for (std::size_t c = 0; c < d; ++c) {
      const double x_hat = (xr[c] - mu) * s;
      const double g = dyr[c] * gain[c];
      dxr[c] = s * (g - mean_g - x_hat * mean_gx);
    }
  }
}

// Projection head forward: head_depth hidden layers with ReLU, then a
// linear map to d_model. Caches per-layer inputs and pre-activations.
Matrix run_head(const std::vector<LinearLayer>& head, const Matrix& input_rows,
                HeadCache& cache) {
  if (head.empty()) throw ConfigError("projection head parameters missing");
  cache.inputs.clear();
  cache.pre_acts.clear();
  Matrix h = input_rows;
  for (std::size_t l = 0; l < head.size(); ++l) {
    cache.inputs.push_back(h);
    Matrix pre = matmul(h, head[l].w);
    add_bias_rows(pre, head[l].b);
    cache.pre_acts.push_back(pre);
    h = l + 1 < head.size() ? relu(pre) : std::move(pre);
  }
  return h;
}

std::vector<std::size_t> truncated_suffix(const std::vector<std::size_t>& v,
                                          std::size_t max_len) {
  if (v.size() <= max_len) return v;
  return std::vector<std::size_t>(v.end() - static_cast<std::ptrdiff_t>(max_len), v.end());
}

}  // namespace

std::string variant_name(VariantTag tag) {
  switch (tag) {
    case VariantTag::kId: return "sasrec_id";
    case VariantTag::kText: return "sasrec_text";
    case VariantTag::kTextPlusId: return "sasrec_text_id";
    case VariantTag::kWhiten: return "whitenrec";
    case VariantTag::kWhitenPlus: return "whitenrec_plus";
  }
  throw ConfigError("unknown variant tag");
}

VariantTag variant_from_name(const std::string& name) {
  if (name == "sasrec_id") return VariantTag::kId;
  if (name == "sasrec_text") return VariantTag::kText;
  if (name == "sasrec_text_id") return VariantTag::kTextPlusId;
  if (name == "whitenrec") return VariantTag::kWhiten;
  if (name == "whitenrec_plus") return VariantTag::kWhitenPlus;
  throw ConfigError("unknown variant '" + name +
                    "' (expected sasrec_id, sasrec_text, sasrec_text_id, "
                    "whitenrec or whitenrec_plus)");
}

bool uses_id_table(VariantTag tag) {
  return tag == VariantTag::kId || tag == VariantTag::kTextPlusId;
}

bool uses_text(VariantTag tag) { return tag != VariantTag::kId; }

void validate(const EncoderVariant& variant) {
  if (variant.head_depth > 3) {
    throw ConfigError("head_depth must be between 0 and 3");
  }
  if (!(variant.epsilon >= 0.0) || !std::isfinite(variant.epsilon)) {
    throw ConfigError("whitening epsilon must be finite and non-negative");
  }
  if (variant.relaxed_groups < 1) {
    throw ConfigError("relaxed_groups must be at least 1");
  }
  if (variant.tag == VariantTag::kWhitenPlus && variant.relaxed_groups < 2) {
    throw ConfigError("whitenrec_plus requires relaxed_groups > 1");
  }
}

ModelParams init_params(const EncoderVariant& variant, std::size_t d_model,
                        std::size_t heads, std::size_t blocks,
                        std::size_t max_seq_len, std::size_t item_count,
                        std::size_t text_dim, Rng& rng) {
  validate(variant);
  if (d_model == 0 || heads == 0 || d_model % heads != 0) {
    throw ConfigError("d_model must be a positive multiple of heads");
  }
  if (max_seq_len == 0) throw ConfigError("max_seq_len must be positive");
  if (item_count == 0) throw ConfigError("item_count must be positive");
  if (uses_text(variant.tag) && text_dim == 0) {
    throw ConfigError(variant_name(variant.tag) + " requires text embeddings");
  }

  ModelParams p;
  p.dims.d_model = d_model;
  p.dims.heads = heads;
  p.dims.max_seq_len = max_seq_len;
  p.dims.item_count = item_count;
  p.dims.text_dim = uses_text(variant.tag) ? text_dim : 0;

  auto init_linear = [&](std::size_t in, std::size_t out) {
    LinearLayer layer;
    layer.w = Matrix(in, out);
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& v : layer.w.data()) v = rng.normal() * scale;
    layer.b.assign(out, 0.0);
    return layer;
  };

  if (uses_text(variant.tag)) {
    for (std::size_t l = 0; l <= variant.head_depth; ++l) {
      p.head.push_back(init_linear(l == 0 ? text_dim : d_model, d_model));
    }
  }
  if (variant.tag == VariantTag::kWhitenPlus && variant.combine == Combine::kConcat) {
    p.concat_proj = init_linear(2 * d_model, d_model);
  }
  for (std::size_t b = 0; b < blocks; ++b) {
    BlockParams block;
    block.wq = init_linear(d_model, d_model).w;
    block.bq.assign(d_model, 0.0);
    block.wk = init_linear(d_model, d_model).w;
    block.bk.assign(d_model, 0.0);
    block.wv = init_linear(d_model, d_model).w;
    block.bv.assign(d_model, 0.0);
    block.wo = init_linear(d_model, d_model).w;
    block.bo.assign(d_model, 0.0);
    block.ff1_w = init_linear(d_model, d_model).w;
    block.ff1_b.assign(d_model, 0.0);
    block.ff2_w = init_linear(d_model, d_model).w;
    block.ff2_b.assign(d_model, 0.0);
    block.ln1_gain.assign(d_model, 1.0);
    block.ln1_bias.assign(d_model, 0.0);
    block.ln2_gain.assign(d_model, 1.0);
    block.ln2_bias.assign(d_model, 0.0);
    p.blocks.push_back(std::move(block));
  }
  p.pos_table = Matrix(max_seq_len, d_model);
  for (double& v : p.pos_table.data()) v = rng.normal() * 0.02;
  if (uses_id_table(variant.tag)) {
    p.id_table = Matrix(item_count, d_model);
    for (double& v : p.id_table.data()) v = rng.normal() * 0.02;
  }
  return p;
}

namespace {

// Single enumeration of the trainable tensors; the order defines the
// optimizer state layout and the checkpoint payload order.
template <class Params, class MatFn, class VecFn>
void walk_trainable(Params& p, MatFn&& on_mat, VecFn&& on_vec) {
  for (std::size_t l = 0; l < p.head.size(); ++l) {
    const std::string base = "head" + std::to_string(l);
    on_mat(base + ".w", p.head[l].w);
    on_vec(base + ".b", p.head[l].b);
  }
  if (!p.concat_proj.w.empty()) {
    on_mat("concat.w", p.concat_proj.w);
    on_vec("concat.b", p.concat_proj.b);
  }
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    const std::string base = "block" + std::to_string(b);
    auto& blk = p.blocks[b];
    on_mat(base + ".wq", blk.wq);
    on_vec(base + ".bq", blk.bq);
    on_mat(base + ".wk", blk.wk);
    on_vec(base + ".bk", blk.bk);
    on_mat(base + ".wv", blk.wv);
    on_vec(base + ".bv", blk.bv);
    on_mat(base + ".wo", blk.wo);
    on_vec(base + ".bo", blk.bo);
    on_mat(base + ".ff1_w", blk.ff1_w);
    on_vec(base + ".ff1_b", blk.ff1_b);
    on_mat(base + ".ff2_w", blk.ff2_w);
    on_vec(base + ".ff2_b", blk.ff2_b);
    on_vec(base + ".ln1_gain", blk.ln1_gain);
    on_vec(base + ".ln1_bias", blk.ln1_bias);
    on_vec(base + ".ln2_gain", blk.ln2_gain);
    on_vec(base + ".ln2_bias", blk.ln2_bias);
  }
  on_mat("pos", p.pos_table);
  if (!p.id_table.empty()) on_mat("id", p.id_table);
}

}  // namespace

std::vector<TensorRef> collect_trainable(ModelParams& params) {
  std::vector<TensorRef> out;
  walk_trainable(
      params,
      [&](const std::string& name, Matrix& m) {
        out.push_back({name, m.data().data(), m.size()});
      },
      [&](const std::string& name, std::vector<double>& v) {
        out.push_back({name, v.data(), v.size()});
      });
  return out;
}

std::size_t count_trainable_params(const ModelParams& params) {
  std::size_t total = 0;
  walk_trainable(
      params, [&](const std::string&, const Matrix& m) { total += m.size(); },
      [&](const std::string&, const std::vector<double>& v) { total += v.size(); });
  return total;
}

ModelParams make_zero_like(const ModelParams& params) {
  ModelParams zero = params;
  walk_trainable(
      zero, [](const std::string&, Matrix& m) { m.fill(0.0); },
      [](const std::string&, std::vector<double>& v) {
        std::fill(v.begin(), v.end(), 0.0);
      });
  zero.frozen_text = Matrix();  // gradients carry no tensor for frozen input
  return zero;
}

EncoderInputs prepare_encoder_inputs(const EncoderVariant& variant,
                                     const Matrix& frozen_text) {
  validate(variant);
  EncoderInputs inputs;
  if (!uses_text(variant.tag)) return inputs;
  if (frozen_text.empty()) {
    throw ConfigError(variant_name(variant.tag) + " requires text embeddings");
  }
  inputs.text_rows = transpose(frozen_text);
  if (variant.tag == VariantTag::kWhiten || variant.tag == VariantTag::kWhitenPlus) {
    inputs.z_full_rows =
        transpose(whiten(frozen_text, variant.method, 1, variant.epsilon).matrix);
  }
  if (variant.tag == VariantTag::kWhitenPlus) {
    inputs.z_relaxed_rows = transpose(
        whiten(frozen_text, variant.method, variant.relaxed_groups, variant.epsilon)
            .matrix);
  }
  return inputs;
}

ItemEncoding encode_item_rows(const ModelParams& params, const EncoderVariant& variant,
                              const EncoderInputs& inputs) {
  validate(variant);
  ItemEncoding enc;
  switch (variant.tag) {
    case VariantTag::kId:
      if (params.id_table.empty()) throw ConfigError("sasrec_id requires an id table");
      enc.v_rows = params.id_table;
      return enc;
    case VariantTag::kText:
      if (inputs.text_rows.empty()) throw ConfigError("sasrec_text requires text embeddings");
      enc.v_rows = run_head(params.head, inputs.text_rows, enc.branch_full);
      return enc;
    case VariantTag::kTextPlusId:
      if (inputs.text_rows.empty()) {
        throw ConfigError("sasrec_text_id requires text embeddings");
      }
      if (params.id_table.empty()) {
        throw ConfigError("sasrec_text_id requires an id table");
      }
      enc.v_rows = add(run_head(params.head, inputs.text_rows, enc.branch_full),
                       params.id_table);
      return enc;
    case VariantTag::kWhiten:
      if (inputs.z_full_rows.empty()) {
        throw ConfigError("whitenrec requires whitened text embeddings");
      }
      enc.v_rows = run_head(params.head, inputs.z_full_rows, enc.branch_full);
      return enc;
    case VariantTag::kWhitenPlus: {
      if (inputs.z_full_rows.empty() || inputs.z_relaxed_rows.empty()) {
        throw ConfigError("whitenrec_plus requires both whitened inputs");
      }
      Matrix full = run_head(params.head, inputs.z_full_rows, enc.branch_full);
      Matrix relaxed = run_head(params.head, inputs.z_relaxed_rows, enc.branch_relaxed);
      if (variant.combine == Combine::kSum) {
        enc.v_rows = add(full, relaxed);
        return enc;
      }
      if (params.concat_proj.w.empty()) {
        throw ConfigError("whitenrec_plus with concat requires concat_proj parameters");
      }
      const std::size_t n = full.rows(), d = full.cols();
      enc.concat_rows = Matrix(n, 2 * d);
      for (std::size_t r = 0; r < n; ++r) {
        double* dst = enc.concat_rows.row(r);
        const double* a = full.row(r);
        const double* b = relaxed.row(r);
        for (std::size_t c = 0; c < d; ++c) dst[c] = a[c];
        for (std::size_t c = 0; c < d; ++c) dst[d + c] = b[c];
      }
      enc.v_rows = matmul(enc.concat_rows, params.concat_proj.w);
      add_bias_rows(enc.v_rows, params.concat_proj.b);
      return enc;
    }
  }
  throw ConfigError("unknown variant tag");
}

void backward_items(const ModelParams& params, const EncoderVariant& variant,
                    const EncoderInputs& inputs, const ItemEncoding& encoding,
                    const Matrix& dv_rows, ModelParams& grads) {
  (void)inputs;
  auto back_head = [&](const HeadCache& cache, const Matrix& dout_in) {
    Matrix d = dout_in;
    for (std::size_t l = params.head.size(); l-- > 0;) {
      if (l + 1 < params.head.size()) relu_backward_inplace(d, cache.pre_acts[l]);
      add_into(grads.head[l].w, matmul_atb(cache.inputs[l], d));
      accumulate_col_sums(d, grads.head[l].b);
      if (l > 0) d = matmul_abt(d, params.head[l].w);
    }
  };

  switch (variant.tag) {
    case VariantTag::kId:
      add_into(grads.id_table, dv_rows);
      return;
    case VariantTag::kText:
      back_head(encoding.branch_full, dv_rows);
      return;
    case VariantTag::kTextPlusId:
      add_into(grads.id_table, dv_rows);
      back_head(encoding.branch_full, dv_rows);
      return;
    case VariantTag::kWhiten:
      back_head(encoding.branch_full, dv_rows);
      return;
    case VariantTag::kWhitenPlus: {
      if (variant.combine == Combine::kSum) {
        back_head(encoding.branch_full, dv_rows);
        back_head(encoding.branch_relaxed, dv_rows);
        return;
      }
      add_into(grads.concat_proj.w, matmul_atb(encoding.concat_rows, dv_rows));
      accumulate_col_sums(dv_rows, grads.concat_proj.b);
      const Matrix dconcat = matmul_abt(dv_rows, params.concat_proj.w);
      const std::size_t n = dconcat.rows();
      const std::size_t d = dconcat.cols() / 2;
      Matrix d_full(n, d), d_relaxed(n, d);
      for (std::size_t r = 0; r < n; ++r) {
        const double* src = dconcat.row(r);
        double* a = d_full.row(r);
        double* b = d_relaxed.row(r);
        for (std::size_t c = 0; c < d; ++c) a[c] = src[c];
        for (std::size_t c = 0; c < d; ++c) b[c] = src[d + c];
      }
      back_head(encoding.branch_full, d_full);
      back_head(encoding.branch_relaxed, d_relaxed);
      return;
    }
  }
  throw ConfigError("unknown variant tag");
}

Matrix encode_items(const EncoderVariant& variant, const ModelParams& params) {
  const EncoderInputs inputs = prepare_encoder_inputs(variant, params.frozen_text);
  const ItemEncoding enc = encode_item_rows(params, variant, inputs);
  return transpose(enc.v_rows);
}

void forward_sequence(const ModelParams& params, const Matrix& v_rows,
                      const std::vector<std::size_t>& items, bool training,
                      double dropout_rate, Rng* rng, SeqCache& cache) {
  if (items.empty()) throw DegenerateInputError("encode_sequence: empty sequence");
  const std::size_t d = params.dims.d_model;
  if (v_rows.cols() != d) throw ShapeError("item matrix width does not match d_model");

  cache = SeqCache();
  cache.items = truncated_suffix(items, params.dims.max_seq_len);
  const std::size_t L = cache.items.size();
  for (std::size_t idx : cache.items) {
    if (idx >= v_rows.rows()) {
      throw ShapeError("sequence item index " + std::to_string(idx) + " out of range");
    }
  }

  const bool use_drop = training && dropout_rate > 0.0;
  if (use_drop && rng == nullptr) {
    throw ConfigError("dropout requires a random stream in training mode");
  }

  cache.x0 = Matrix(L, d);
  for (std::size_t t = 0; t < L; ++t) {
    const double* item_row = v_rows.row(cache.items[t]);
    const double* pos_row = params.pos_table.row(t);
    double* dst = cache.x0.row(t);
    for (std::size_t c = 0; c < d; ++c) dst[c] = item_row[c] + pos_row[c];
  }
  Matrix h = cache.x0;
  if (use_drop) {
    cache.input_mask = make_dropout_mask(L, d, dropout_rate, *rng);
    apply_mask_inplace(h, cache.input_mask);
  }

  const std::size_t heads = params.dims.heads;
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  cache.blocks.resize(params.blocks.size());
  std::vector<double> scratch(L);

  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    const BlockParams& w = params.blocks[b];
    BlockCache& c = cache.blocks[b];
    c.h_in = std::move(h);
    c.q = matmul(c.h_in, w.wq);
    add_bias_rows(c.q, w.bq);
    c.k = matmul(c.h_in, w.wk);
    add_bias_rows(c.k, w.bk);
    c.v = matmul(c.h_in, w.wv);
    add_bias_rows(c.v, w.bv);

    c.attn.assign(heads, Matrix(L, L));
    c.a = Matrix(L, d);
    for (std::size_t hh = 0; hh < heads; ++hh) {
      const std::size_t off = hh * dh;
      Matrix& attn = c.attn[hh];
      for (std::size_t t = 0; t < L; ++t) {
        const double* q_t = c.q.row(t) + off;
        double max_score = -1e300;
        for (std::size_t j = 0; j <= t; ++j) {
          const double s = dot(q_t, c.k.row(j) + off, dh) * inv_sqrt;
          scratch[j] = s;
          max_score = std::max(max_score, s);
        }
        double total = 0.0;
        for (std::size_t j = 0; j <= t; ++j) {
          scratch[j] = std::exp(scratch[j] - max_score);
          total += scratch[j];
        }
        double* a_t = c.a.row(t) + off;
        for (std::size_t j = 0; j <= t; ++j) {
          const double weight = scratch[j] / total;
          attn(t, j) = weight;
          const double* v_j = c.v.row(j) + off;
          for (std::size_t x = 0; x < dh; ++x) a_t[x] += weight * v_j[x];
        }
      }
    }

    c.o = matmul(c.a, w.wo);
    add_bias_rows(c.o, w.bo);
    Matrix o_eff = c.o;
    if (use_drop) {
      c.attn_mask = make_dropout_mask(L, d, dropout_rate, *rng);
      apply_mask_inplace(o_eff, c.attn_mask);
    }
    c.sum1 = add(c.h_in, o_eff);
    layer_norm_rows(c.sum1, w.ln1_gain, w.ln1_bias, c.h1, c.ln1_mean, c.ln1_inv_std);

    c.f1_pre = matmul(c.h1, w.ff1_w);
    add_bias_rows(c.f1_pre, w.ff1_b);
    c.f1_act = relu(c.f1_pre);
    c.f2 = matmul(c.f1_act, w.ff2_w);
    add_bias_rows(c.f2, w.ff2_b);
    Matrix f_eff = c.f2;
    if (use_drop) {
      c.ffn_mask = make_dropout_mask(L, d, dropout_rate, *rng);
      apply_mask_inplace(f_eff, c.ffn_mask);
    }
    c.sum2 = add(c.h1, f_eff);
    layer_norm_rows(c.sum2, w.ln2_gain, w.ln2_bias, c.h_out, c.ln2_mean, c.ln2_inv_std);
    h = c.h_out;
  }
  cache.h_final = std::move(h);
}

std::vector<double> encode_sequence(const ModelParams& params, const Matrix& v_rows,
                                    const std::vector<std::size_t>& items) {
  SeqCache cache;
  forward_sequence(params, v_rows, items, /*training=*/false, 0.0, nullptr, cache);
  const std::size_t L = cache.h_final.rows();
  const double* last = cache.h_final.row(L - 1);
  return std::vector<double>(last, last + cache.h_final.cols());
}

ForwardResult forward_loss(const ModelParams& params, const EncoderVariant& variant,
                           const EncoderInputs& inputs, const Batch& batch,
                           TargetStyle style, bool training, double dropout_rate,
                           Rng* rng) {
  if (batch.inputs.empty()) throw DegenerateInputError("forward_loss: empty batch");
  if (batch.inputs.size() != batch.targets.size()) {
    throw ShapeError("forward_loss: inputs and targets differ in length");
  }

  ForwardResult fwd;
  fwd.items = encode_item_rows(params, variant, inputs);
  const Matrix& v_rows = fwd.items.v_rows;
  const std::size_t n_items = v_rows.rows();
  const std::size_t d = v_rows.cols();

  double total = 0.0;
  for (std::size_t s = 0; s < batch.inputs.size(); ++s) {
    if (batch.inputs[s].size() != batch.targets[s].size()) {
      throw ShapeError("forward_loss: sequence " + std::to_string(s) +
                       " has mismatched targets");
    }
    if (batch.inputs[s].empty()) {
      throw DegenerateInputError("forward_loss: sequence " + std::to_string(s) +
                                 " is empty");
    }
    const std::vector<std::size_t> targets =
        truncated_suffix(batch.targets[s], params.dims.max_seq_len);
    for (std::size_t t : targets) {
      if (t >= n_items) {
        throw ShapeError("forward_loss: target index " + std::to_string(t) +
                         " out of range");
      }
    }

    SeqCache cache;
    forward_sequence(params, v_rows, batch.inputs[s], training, dropout_rate, rng, cache);
    const std::size_t L = cache.items.size();
    const std::size_t first_supervised = style == TargetStyle::kAllPositions ? 0 : L - 1;
    const std::size_t supervised = L - first_supervised;

    Matrix probs(supervised, n_items);
    for (std::size_t si = 0; si < supervised; ++si) {
      const std::size_t pos = first_supervised + si;
      const double* h_row = cache.h_final.row(pos);
      double* p_row = probs.row(si);
      double max_logit = -1e300;
      for (std::size_t i = 0; i < n_items; ++i) {
        p_row[i] = dot(v_rows.row(i), h_row, d);
        max_logit = std::max(max_logit, p_row[i]);
      }
      double z = 0.0;
      for (std::size_t i = 0; i < n_items; ++i) {
        p_row[i] = std::exp(p_row[i] - max_logit);
        z += p_row[i];
      }
      const double inv_z = 1.0 / z;
      for (std::size_t i = 0; i < n_items; ++i) p_row[i] *= inv_z;
      total -= std::log(p_row[targets[pos]]);
    }
    if (!std::isfinite(total)) {
      throw NumericError("non-finite loss at batch index " + std::to_string(s));
    }
    fwd.supervised_count += supervised;
    fwd.seqs.push_back(std::move(cache));
    fwd.probs.push_back(std::move(probs));
  }
  fwd.loss = total / static_cast<double>(fwd.supervised_count);
  return fwd;
}

namespace {

// Backward through one block; returns the gradient w.r.t. the block input.
Matrix block_backward(const BlockParams& w, const BlockCache& c, const Matrix& dh_out,
                      std::size_t heads, BlockParams& g) {
  const std::size_t L = c.h_in.rows();
  const std::size_t d = c.h_in.cols();
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix dsum2;
  layer_norm_backward_rows(dh_out, c.sum2, w.ln2_gain, c.ln2_mean, c.ln2_inv_std,
                           dsum2, g.ln2_gain, g.ln2_bias);
  Matrix dh1 = dsum2;
  Matrix df2 = masked(dsum2, c.ffn_mask);
  add_into(g.ff2_w, matmul_atb(c.f1_act, df2));
  accumulate_col_sums(df2, g.ff2_b);
  Matrix df1 = matmul_abt(df2, w.ff2_w);
  relu_backward_inplace(df1, c.f1_pre);
  add_into(g.ff1_w, matmul_atb(c.h1, df1));
  accumulate_col_sums(df1, g.ff1_b);
  add_into(dh1, matmul_abt(df1, w.ff1_w));

  Matrix dsum1;
  layer_norm_backward_rows(dh1, c.sum1, w.ln1_gain, c.ln1_mean, c.ln1_inv_std,
                           dsum1, g.ln1_gain, g.ln1_bias);
  Matrix dh_in = dsum1;
  Matrix d_attn_out = masked(dsum1, c.attn_mask);
  add_into(g.wo, matmul_atb(c.a, d_attn_out));
  accumulate_col_sums(d_attn_out, g.bo);
  Matrix da = matmul_abt(d_attn_out, w.wo);

  Matrix dq(L, d), dk(L, d), dv(L, d);
  std::vector<double> dweights(L);
  for (std::size_t hh = 0; hh < heads; ++hh) {
    const std::size_t off = hh * dh;
    const Matrix& attn = c.attn[hh];
    for (std::size_t t = 0; t < L; ++t) {
      const double* da_t = da.row(t) + off;
      double weighted_sum = 0.0;
      for (std::size_t j = 0; j <= t; ++j) {
        const double dw = dot(da_t, c.v.row(j) + off, dh);
        dweights[j] = dw;
        const double weight = attn(t, j);
        double* dv_j = dv.row(j) + off;
        for (std::size_t x = 0; x < dh; ++x) dv_j[x] += weight * da_t[x];
        weighted_sum += weight * dw;
      }
      double* dq_t = dq.row(t) + off;
      const double* q_t = c.q.row(t) + off;
      for (std::size_t j = 0; j <= t; ++j) {
        const double dscore = attn(t, j) * (dweights[j] - weighted_sum) * inv_sqrt;
        const double* k_j = c.k.row(j) + off;
        double* dk_j = dk.row(j) + off;
        for (std::size_t x = 0; x < dh; ++x) {
          dq_t[x] += dscore * k_j[x];
          dk_j[x] += dscore * q_t[x];
        }
      }
    }
  }

  add_into(g.wq, matmul_atb(c.h_in, dq));
  accumulate_col_sums(dq, g.bq);
  add_into(dh_in, matmul_abt(dq, w.wq));
  add_into(g.wk, matmul_atb(c.h_in, dk));
  accumulate_col_sums(dk, g.bk);
  add_into(dh_in, matmul_abt(dk, w.wk));
  add_into(g.wv, matmul_atb(c.h_in, dv));
  accumulate_col_sums(dv, g.bv);
  add_into(dh_in, matmul_abt(dv, w.wv));
  return dh_in;
}

}  // namespace

ModelParams backward(const ModelParams& params, const EncoderVariant& variant,
                     const EncoderInputs& inputs, const Batch& batch,
                     TargetStyle style, const ForwardResult& fwd) {
  if (fwd.seqs.size() != batch.inputs.size()) {
    throw ShapeError("backward: cached activations do not match the batch");
  }
  ModelParams grads = make_zero_like(params);
  const Matrix& v_rows = fwd.items.v_rows;
  const std::size_t n_items = v_rows.rows();
  const std::size_t d = v_rows.cols();
  Matrix dv_rows(n_items, d);
  const double inv_count = 1.0 / static_cast<double>(fwd.supervised_count);

  for (std::size_t s = 0; s < fwd.seqs.size(); ++s) {
    const SeqCache& cache = fwd.seqs[s];
    const Matrix& probs = fwd.probs[s];
    const std::vector<std::size_t> targets =
        truncated_suffix(batch.targets[s], params.dims.max_seq_len);
    const std::size_t L = cache.items.size();
    const std::size_t first_supervised = style == TargetStyle::kAllPositions ? 0 : L - 1;
    const std::size_t supervised = L - first_supervised;
    if (probs.rows() != supervised || targets.size() != L) {
      throw ShapeError("backward: cached probabilities do not match the batch");
    }

    Matrix dh_final(L, d);
    for (std::size_t si = 0; si < supervised; ++si) {
      const std::size_t pos = first_supervised + si;
      const std::size_t target = targets[pos];
      const double* p_row = probs.row(si);
      const double* h_row = cache.h_final.row(pos);
      double* dh_row = dh_final.row(pos);
      for (std::size_t i = 0; i < n_items; ++i) {
        double glogit = p_row[i] * inv_count;
        if (i == target) glogit -= inv_count;
        const double* v_i = v_rows.row(i);
        double* dv_i = dv_rows.row(i);
        for (std::size_t c = 0; c < d; ++c) {
          dh_row[c] += glogit * v_i[c];
          dv_i[c] += glogit * h_row[c];
        }
      }
    }

    Matrix dh = std::move(dh_final);
    for (std::size_t b = params.blocks.size(); b-- > 0;) {
      dh = block_backward(params.blocks[b], cache.blocks[b], dh, params.dims.heads,
                          grads.blocks[b]);
    }
    apply_mask_inplace(dh, cache.input_mask);
    for (std::size_t t = 0; t < L; ++t) {
      const double* dh_row = dh.row(t);
      double* dpos = grads.pos_table.row(t);
      double* dv_i = dv_rows.row(cache.items[t]);
      for (std::size_t c = 0; c < d; ++c) {
        dpos[c] += dh_row[c];
        dv_i[c] += dh_row[c];
      }
    }
  }

  backward_items(params, variant, inputs, fwd.items, dv_rows, grads);
  return grads;
}

}  // namespace whitenseq
