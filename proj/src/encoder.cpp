#include "genref/encoder.hpp"

#include <stdexcept>

namespace genref {

std::string variant_name(InputVariant v) {
  switch (v) {
    case InputVariant::qic:
      return "qic";
    case InputVariant::qi:
      return "qi";
    case InputVariant::qc:
      return "qc";
  }
  return "qic";
}

std::string variant_label(InputVariant v) {
  switch (v) {
    case InputVariant::qic:
      return "Q+I+C";
    case InputVariant::qi:
      return "Q+I";
    case InputVariant::qc:
      return "Q+C";
  }
  return "Q+I+C";
}

InputVariant parse_variant(std::string_view text) {
  if (text == "qic" || text == "Q+I+C") return InputVariant::qic;
  if (text == "qi" || text == "Q+I") return InputVariant::qi;
  if (text == "qc" || text == "Q+C") return InputVariant::qc;
  throw std::invalid_argument("unknown input variant '" + std::string(text) + "' (expected qic, qi or qc)");
}

bool variant_uses_image(InputVariant v) { return v != InputVariant::qc; }
bool variant_uses_caption(InputVariant v) { return v != InputVariant::qi; }

EncoderParams make_encoder(std::size_t text_dim, std::size_t fused_dim, Rng& rng) {
  auto bias = [&] { return Tensor::zeros({fused_dim}, true); };
  EncoderParams e;
  e.question = {xavier_uniform(text_dim, fused_dim, rng), bias()};
  e.caption = {xavier_uniform(text_dim, fused_dim, rng), bias()};
  e.fuse = xavier_uniform(2 * fused_dim, fused_dim, rng);
  e.g_hidden = {xavier_uniform(fused_dim, fused_dim, rng), bias()};
  e.g_out = {xavier_uniform(fused_dim, fused_dim, rng), bias()};
  return e;
}

void register_encoder(ParamSet& params, EncoderParams& enc) {
  enc.question.weight = params.add("encoder.w_q", enc.question.weight);
  enc.question.bias = params.add("encoder.b_q", enc.question.bias);
  enc.caption.weight = params.add("encoder.w_c", enc.caption.weight);
  enc.caption.bias = params.add("encoder.b_c", enc.caption.bias);
  enc.fuse = params.add("encoder.w_t", enc.fuse);
  enc.g_hidden.weight = params.add("encoder.g1.w", enc.g_hidden.weight);
  enc.g_hidden.bias = params.add("encoder.g1.b", enc.g_hidden.bias);
  enc.g_out.weight = params.add("encoder.g2.w", enc.g_out.weight);
  enc.g_out.bias = params.add("encoder.g2.b", enc.g_out.bias);
}

Tensor fuse_question_caption(const Tensor& question, const Tensor& caption, const EncoderParams& params) {
  const std::size_t text_dim = params.question.weight.shape()[0];
  if (question.cols() != text_dim || caption.cols() != text_dim || question.shape() != caption.shape()) {
    throw ShapeError("fuse_question_caption: question " + shape_str(question.shape()) + " and caption " +
                     shape_str(caption.shape()) + " must both have width " + std::to_string(text_dim));
  }
  const Tensor q = tanh(linear(params.question, question));
  const Tensor c = tanh(linear(params.caption, caption));
  const Tensor joint = matmul(concat({q, c}), params.fuse);
  return tanh(linear(params.g_out, relu(linear(params.g_hidden, joint))));
}

Tensor mean_pool_regions(const Tensor& regions) {
  if (regions.ndim() != 2) throw ShapeError("mean_pool_regions: expected [k, D], got " + shape_str(regions.shape()));
  return reshape(mean_row_groups(regions, regions.rows()), {regions.cols()});
}

Tensor mean_pool_regions(const Tensor& regions, std::size_t regions_per_sample) {
  if (regions_per_sample == 0) throw std::invalid_argument("mean_pool_regions: empty region set");
  return mean_row_groups(regions, regions_per_sample);
}

Tensor build_common_input(const Tensor& pooled_regions, const Tensor& fused_text) {
  return concat({pooled_regions, fused_text});
}

FusedFeatures encode_features(const Tensor& regions, std::size_t regions_per_sample, const Tensor& question,
                              const Tensor& caption, bool use_image, bool use_caption, const EncoderParams& params) {
  if (regions_per_sample == 0) throw std::invalid_argument("encode_features: empty region set");
  const std::size_t n = question.rows();
  if (regions.rows() != n * regions_per_sample) {
    throw ShapeError("encode_features: regions " + shape_str(regions.shape()) + " do not hold " +
                     std::to_string(regions_per_sample) + " rows for each of " + std::to_string(n) + " samples");
  }
  FusedFeatures out;
  out.regions_per_sample = regions_per_sample;
  out.image_enabled = use_image;
  const Tensor cap = use_caption ? caption : Tensor::zeros(caption.shape());
  out.text = fuse_question_caption(question, cap, params);
  if (use_image) {
    out.regions = regions;
    out.pooled = mean_pool_regions(regions, regions_per_sample);
  } else {
    out.regions = Tensor::zeros(regions.shape());
    out.pooled = Tensor::zeros({n, regions.cols()});
  }
  out.common = build_common_input(out.pooled, out.text);
  return out;
}

}  // namespace genref
