#include <algorithm>

#include "splitfhe/error.hpp"
#include "splitfhe/proto/protocol.hpp"

namespace splitfhe::proto {

namespace {

constexpr std::string_view kDeployMagic = "SFD1";

void put_shape(ByteWriter& w, const nn::Shape& s) {
  w.put_u32(static_cast<std::uint32_t>(s.size()));
  for (auto d : s) w.put_u32(static_cast<std::uint32_t>(d));
}

nn::Shape get_shape(ByteReader& r) {
  const auto n = r.get_u32();
  if (n > 8) throw FormatError("shape rank too large");
  nn::Shape s;
  for (std::uint32_t i = 0; i < n; ++i) s.push_back(r.get_u32());
  return s;
}

nn::Model slice(const nn::Model& m, std::size_t from, std::size_t to) {
  nn::Model part;
  part.input_shape = m.shape_at(from);
  part.layers.assign(m.layers.begin() + from, m.layers.begin() + to);
  part.num_classes = to == m.layers.size() ? m.num_classes : nn::numel(m.shape_at(to));
  part.provenance = "part";
  return part;
}

std::vector<nn::Tensor> run(const nn::Model& m, std::span<const nn::Tensor> xs) {
  std::vector<nn::Tensor> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(nn::forward(m, x));
  return out;
}

// Prefers the im2col path for a leading convolution followed only by
// element-wise layers; anything else runs flat with Toeplitz lowering.
void lower_model1(const nn::Model& m1, const he::CkksParams& params, ServerBundle& b) {
  const std::size_t slots = params.slot_count();
  if (!m1.layers.empty() && std::holds_alternative<nn::Conv2d>(m1.layers.front())) {
    const auto& conv = std::get<nn::Conv2d>(m1.layers.front());
    try {
      auto layers = enc::lower_model(m1, true);
      if (conv.kernel * conv.kernel * enc::im2col_block(m1.input_shape, conv) <= slots) {
        b.enc1 = std::move(layers);
        b.input.im2col = true;
        b.input.conv = conv;
        b.input.conv.weight.clear();
        b.input.conv.bias.clear();
        return;
      }
    } catch (const SplitError&) {
    }
  }
  b.enc1 = enc::lower_model(m1, false);
  b.input.im2col = false;
  b.input.period = enc::segment_period(b.enc1, m1.input_shape);
  if (b.input.period > slots) {
    throw CapacityError("Model 1 needs a packing period of " + std::to_string(b.input.period) + " but only " +
                        std::to_string(slots) + " slots exist");
  }
}

}  // namespace

Bytes encode_deployment(const Deployment& d) {
  ByteWriter w;
  w.put_magic(kDeployMagic);
  w.put_blob(nn::serialize_model(d.model2));
  put_shape(w, d.model1_input);
  w.put_u8(d.input.im2col ? 1 : 0);
  w.put_u32(static_cast<std::uint32_t>(d.input.conv.in_channels));
  w.put_u32(static_cast<std::uint32_t>(d.input.conv.out_channels));
  w.put_u32(static_cast<std::uint32_t>(d.input.conv.kernel));
  w.put_u32(static_cast<std::uint32_t>(d.input.conv.stride));
  w.put_u32(static_cast<std::uint32_t>(d.input.conv.padding));
  w.put_u32(static_cast<std::uint32_t>(d.input.period));
  w.put_u32(static_cast<std::uint32_t>(d.model3_period));
  w.put_u8(static_cast<std::uint8_t>(d.model1_level));
  w.put_u8(static_cast<std::uint8_t>(d.model3_level));
  return w.take();
}

Deployment decode_deployment(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic(kDeployMagic);
  Deployment d;
  d.model2 = nn::deserialize_model(r.get_blob());
  d.model1_input = get_shape(r);
  d.input.im2col = r.get_u8() != 0;
  d.input.conv.in_channels = r.get_u32();
  d.input.conv.out_channels = r.get_u32();
  d.input.conv.kernel = r.get_u32();
  d.input.conv.stride = r.get_u32();
  d.input.conv.padding = r.get_u32();
  d.input.period = r.get_u32();
  d.model3_period = r.get_u32();
  d.model1_level = r.get_u8();
  d.model3_level = r.get_u8();
  r.expect_end();
  return d;
}

std::size_t max_feasible_tail(const nn::Model& m, const he::CkksParams& params,
                              std::span<const nn::Tensor> calibration) {
  const std::size_t total = m.layers.size();
  for (std::size_t t = total >= 2 ? total - 2 : 0; t >= 1; --t) {
    const nn::Model head = slice(m, 0, total - t);
    const auto acts = run(head, calibration);
    try {
      const auto tail = nn::substitute_for_encryption(nn::fold_batchnorm(slice(m, total - t, total)), acts);
      if (enc::segment_depth(enc::lower_model(tail, false)) <= params.depth_budget()) return t;
    } catch (const SplitError&) {
    }
  }
  return 0;
}

PreparedSplit server_offline_prepare(const nn::Model& m, const nn::SplitSpec& spec, const he::CkksParams& params,
                                     std::span<const nn::Tensor> calibration) {
  params.validate();
  nn::validate(m);
  const auto parts = nn::split(m, spec);
  const std::size_t budget = params.depth_budget();

  PreparedSplit out;
  const nn::Model m1 = nn::substitute_for_encryption(nn::fold_batchnorm(parts[0]), calibration);
  const nn::Model& m2 = parts[1];
  const auto acts3 = run(m2, run(m1, calibration));
  const nn::Model m3 = nn::substitute_for_encryption(nn::fold_batchnorm(parts[2]), acts3);

  ServerBundle& b = out.bundle;
  b.model1 = m1;
  b.model3 = m3;
  lower_model1(m1, params, b);
  const std::size_t d1 = enc::segment_depth(b.enc1);
  if (d1 > budget) {
    throw DepthError("Model 1 needs multiplicative depth " + std::to_string(d1) + " but the budget is " +
                     std::to_string(budget));
  }
  b.enc3 = enc::lower_model(m3, false);
  const std::size_t d3 = enc::segment_depth(b.enc3);
  if (d3 > budget) {
    throw DepthError("Model 3 (" + std::to_string(parts[2].layers.size()) + " layers) needs multiplicative depth " +
                     std::to_string(d3) + " but the budget is " + std::to_string(budget) +
                     "; the longest feasible encrypted tail is " +
                     std::to_string(max_feasible_tail(m, params, calibration)) + " layer(s)");
  }
  b.model3_period = enc::segment_period(b.enc3, m3.input_shape);
  if (b.model3_period > params.slot_count()) {
    throw CapacityError("Model 3 needs a packing period of " + std::to_string(b.model3_period) + " but only " +
                        std::to_string(params.slot_count()) + " slots exist");
  }

  out.deployment.model2 = m2;
  out.deployment.model2.provenance = "model2";
  out.deployment.model1_input = m1.input_shape;
  out.deployment.input = b.input;
  out.deployment.model3_period = b.model3_period;
  out.deployment.model1_level = enc::segment_depth(b.enc1);
  out.deployment.model3_level = enc::segment_depth(b.enc3);
  out.deploy_blob = encode_deployment(out.deployment);
  out.reference = nn::concat(nn::concat(m1, m2), m3);
  out.reference.provenance = "reference";
  return out;
}

he::CkksParams params_from_env(const std::string& fallback) {
  const char* env = std::getenv("SPLITFHE_PROFILE");
  const std::string name = env && *env ? env : fallback;
  return he::CkksParams::for_profile(he::parse_profile(name));
}

}  // namespace splitfhe::proto
