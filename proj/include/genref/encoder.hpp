#pragma once

#include <string>
#include <string_view>

#include "genref/nn.hpp"

namespace genref {

/// Which modalities feed the common input: question+image+caption, question+image,
/// or question+caption.
enum class InputVariant { qic, qi, qc };

std::string variant_name(InputVariant v);          // "qic", "qi", "qc"
std::string variant_label(InputVariant v);         // "Q+I+C", ...
InputVariant parse_variant(std::string_view text);  // accepts either spelling
bool variant_uses_image(InputVariant v);
bool variant_uses_caption(InputVariant v);

/// One sample's raw features. An absent modality is a zero tensor with its
/// presence flag cleared.
struct MultimodalInput {
  Tensor regions;   // V: [k, D]
  Tensor question;  // Q: [B]
  Tensor caption;   // C: [B]
  bool has_image = true;
  bool has_caption = true;

  std::size_t region_count() const { return regions.rows(); }
};

/// Projection weights for the question/caption fusion. The non-linearity g is
/// two layers: tanh(W_g2 relu(W_g1 x + b1) + b2).
struct EncoderParams {
  Linear question;  // [B, L]
  Linear caption;   // [B, L]
  Tensor fuse;      // W_t: [2L, L]
  Linear g_hidden;  // [L, L]
  Linear g_out;     // [L, L]
};

EncoderParams make_encoder(std::size_t text_dim, std::size_t fused_dim, Rng& rng);
void register_encoder(ParamSet& params, EncoderParams& enc);

/// T = g(W_t (tanh(W_q Q + b_q) ++ tanh(W_c C + b_c))). Accepts [B] or [n, B].
Tensor fuse_question_caption(const Tensor& question, const Tensor& caption, const EncoderParams& params);

/// Mean over regions. [k, D] -> [D]; with `regions_per_sample`, [n*k, D] -> [n, D].
Tensor mean_pool_regions(const Tensor& regions);
Tensor mean_pool_regions(const Tensor& regions, std::size_t regions_per_sample);

/// F = V̄ ++ T.
Tensor build_common_input(const Tensor& pooled_regions, const Tensor& fused_text);

struct FusedFeatures {
  Tensor text;     // T: [n, L]
  Tensor pooled;   // V̄: [n, D]
  Tensor common;   // F: [n, D + L]
  Tensor regions;  // V as seen by attention: [n * k, D], zeros when the image is off
  std::size_t regions_per_sample = 0;
  bool image_enabled = true;
};

/// Batched encoding. `regions` is [n*k, D]; `question`/`caption` are [n, B].
/// A disabled modality is replaced by constant zeros so nothing downstream
/// depends on the supplied values.
FusedFeatures encode_features(const Tensor& regions, std::size_t regions_per_sample, const Tensor& question,
                              const Tensor& caption, bool use_image, bool use_caption, const EncoderParams& params);

}  // namespace genref
