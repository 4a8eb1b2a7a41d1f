#include "whitenseq/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "whitenseq/errors.hpp"

namespace whitenseq {

namespace {

constexpr char kMagic[8] = {'W', 'S', 'E', 'Q', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void write_raw(std::ofstream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void write_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  write_raw(out, b, 4);
}

void write_u64(std::ofstream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  write_raw(out, b, 8);
}

void write_f64(std::ofstream& out, double v) {
  write_u64(out, std::bit_cast<std::uint64_t>(v));
}

void write_string(std::ofstream& out, const std::string& s) {
  write_u64(out, s.size());
  write_raw(out, s.data(), s.size());
}

void read_raw(std::ifstream& in, void* p, std::size_t n, const char* what) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw ParseError(std::string("checkpoint truncated while reading ") + what);
  }
}

std::uint32_t read_u32(std::ifstream& in, const char* what) {
  unsigned char b[4];
  read_raw(in, b, 4, what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t read_u64(std::ifstream& in, const char* what) {
  unsigned char b[8];
  read_raw(in, b, 8, what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double read_f64(std::ifstream& in, const char* what) {
  return std::bit_cast<double>(read_u64(in, what));
}

std::string read_string(std::ifstream& in, const char* what) {
  const std::uint64_t len = read_u64(in, what);
  if (len > 4096) throw ParseError("checkpoint tensor name is implausibly long");
  std::string s(len, '\0');
  read_raw(in, s.data(), len, what);
  return s;
}

void write_tensor(std::ofstream& out, const std::string& name, const double* data,
                  std::size_t count) {
  write_string(out, name);
  write_u64(out, count);
  for (std::size_t i = 0; i < count; ++i) write_f64(out, data[i]);
}

void read_tensor_into(std::ifstream& in, const std::string& expected_name,
                      double* data, std::size_t count) {
  const std::string name = read_string(in, "tensor name");
  if (name != expected_name) {
    throw ParseError("checkpoint tensor order mismatch: expected '" + expected_name +
                     "', found '" + name + "'");
  }
  const std::uint64_t stored = read_u64(in, "tensor size");
  if (stored != count) {
    throw ParseError("checkpoint tensor '" + name + "' has " +
                     std::to_string(stored) + " values, expected " +
                     std::to_string(count));
  }
  for (std::size_t i = 0; i < count; ++i) data[i] = read_f64(in, "tensor payload");
}

}  // namespace

void save_checkpoint(const std::string& path, const EncoderVariant& variant,
                     const ModelParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");

  write_raw(out, kMagic, sizeof(kMagic));
  write_u32(out, kVersion);
  write_u32(out, static_cast<std::uint32_t>(variant.tag));
  write_u32(out, static_cast<std::uint32_t>(variant.method));
  write_u32(out, static_cast<std::uint32_t>(variant.combine));
  write_u64(out, variant.relaxed_groups);
  write_f64(out, variant.epsilon);
  write_u64(out, variant.head_depth);
  write_u64(out, params.dims.d_model);
  write_u64(out, params.dims.heads);
  write_u64(out, params.dims.max_seq_len);
  write_u64(out, params.dims.item_count);
  write_u64(out, params.dims.text_dim);
  write_u64(out, params.blocks.size());

  // The walk only reads; collect_trainable needs a mutable reference.
  ModelParams& mutable_params = const_cast<ModelParams&>(params);
  const std::vector<TensorRef> refs = collect_trainable(mutable_params);
  const bool has_text = !params.frozen_text.empty();
  write_u64(out, refs.size() + (has_text ? 1 : 0));
  for (const TensorRef& ref : refs) write_tensor(out, ref.name, ref.data, ref.size);
  if (has_text) {
    write_tensor(out, "frozen_text", params.frozen_text.data().data(),
                 params.frozen_text.size());
  }
  if (!out) throw IoError("write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + " for reading");

  char magic[8];
  read_raw(in, magic, sizeof(magic), "magic");
  for (std::size_t i = 0; i < sizeof(magic); ++i) {
    if (magic[i] != kMagic[i]) throw ParseError(path + " is not a checkpoint file");
  }
  const std::uint32_t version = read_u32(in, "version");
  if (version != kVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version) +
                     " (expected " + std::to_string(kVersion) + ")");
  }

  Checkpoint ckpt;
  const std::uint32_t tag = read_u32(in, "variant tag");
  if (tag > 4) throw ParseError("checkpoint has unknown variant tag");
  ckpt.variant.tag = static_cast<VariantTag>(tag);
  const std::uint32_t method = read_u32(in, "whitening method");
  if (method > 3) throw ParseError("checkpoint has unknown whitening method");
  ckpt.variant.method = static_cast<WhiteningMethod>(method);
  const std::uint32_t combine = read_u32(in, "combine mode");
  if (combine > 1) throw ParseError("checkpoint has unknown combine mode");
  ckpt.variant.combine = static_cast<Combine>(combine);
  ckpt.variant.relaxed_groups = read_u64(in, "relaxed_groups");
  ckpt.variant.epsilon = read_f64(in, "epsilon");
  ckpt.variant.head_depth = read_u64(in, "head_depth");

  const std::uint64_t d_model = read_u64(in, "d_model");
  const std::uint64_t heads = read_u64(in, "heads");
  const std::uint64_t max_seq_len = read_u64(in, "max_seq_len");
  const std::uint64_t item_count = read_u64(in, "item_count");
  const std::uint64_t text_dim = read_u64(in, "text_dim");
  const std::uint64_t blocks = read_u64(in, "block count");

  Rng skeleton_rng(0);
  ckpt.params = init_params(ckpt.variant, d_model, heads, blocks, max_seq_len,
                            item_count, text_dim, skeleton_rng);

  const std::vector<TensorRef> refs = collect_trainable(ckpt.params);
  const bool has_text = uses_text(ckpt.variant.tag);
  const std::uint64_t tensor_count = read_u64(in, "tensor count");
  if (tensor_count != refs.size() + (has_text ? 1 : 0)) {
    throw ParseError("checkpoint holds " + std::to_string(tensor_count) +
                     " tensors, expected " +
                     std::to_string(refs.size() + (has_text ? 1 : 0)));
  }
  for (const TensorRef& ref : refs) read_tensor_into(in, ref.name, ref.data, ref.size);
  if (has_text) {
    ckpt.params.frozen_text = Matrix(text_dim, item_count);
    read_tensor_into(in, "frozen_text", ckpt.params.frozen_text.data().data(),
                     ckpt.params.frozen_text.size());
  }
  return ckpt;
}

}  // namespace whitenseq
