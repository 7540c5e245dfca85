#include "splitfhe/nn/model.hpp"

#include <cmath>
#include <json.hpp>

#include "splitfhe/error.hpp"
#include "splitfhe/random.hpp"

namespace splitfhe::nn {

using nlohmann::json;

Shape Model::shape_at(std::size_t i) const {
  Shape s = input_shape;
  for (std::size_t k = 0; k < i && k < layers.size(); ++k) s = nn::output_shape(layers[k], s);
  return s;
}

Shape Model::output_shape() const { return shape_at(layers.size()); }

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) {
    for (auto p : trainable_params(l)) n += p.size();
  }
  return n;
}

void validate(const Model& m) {
  if (m.layers.empty()) throw ShapeError("model has no layers");
  Shape s = m.input_shape;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    s = output_shape(m.layers[i], s);
    LayerSpec sized = m.layers[i];
    for (auto t : stored_tensors(sized)) std::fill(t.begin(), t.end(), 0.0);
    allocate_params(sized);
    auto want = stored_tensors(sized);
    auto have = stored_tensors(m.layers[i]);
    for (std::size_t k = 0; k < want.size(); ++k) {
      if (want[k].size() != have[k].size()) {
        throw FormatError("layer " + std::to_string(i) + " (" + kind_name(m.layers[i]) + ") has " +
                          std::to_string(have[k].size()) + " values in tensor " + std::to_string(k) +
                          ", expected " + std::to_string(want[k].size()));
      }
      for (double v : have[k]) {
        if (!std::isfinite(v)) throw FormatError("non-finite weight in layer " + std::to_string(i));
      }
    }
  }
}

Tensor forward(const Model& m, const Tensor& x) {
  if (x.shape != m.input_shape) {
    throw ShapeError("input shape " + shape_str(x.shape) + " does not match model input " + shape_str(m.input_shape));
  }
  Tensor cur = x;
  for (const auto& l : m.layers) cur = forward_layer(l, cur);
  return cur;
}

std::vector<Tensor> forward_trace(const Model& m, const Tensor& x) {
  if (x.shape != m.input_shape) {
    throw ShapeError("input shape " + shape_str(x.shape) + " does not match model input " + shape_str(m.input_shape));
  }
  std::vector<Tensor> trace;
  trace.reserve(m.layers.size() + 1);
  trace.push_back(x);
  for (const auto& l : m.layers) trace.push_back(forward_layer(l, trace.back()));
  return trace;
}

void init_weights(Model& m, std::uint64_t seed) {
  Prng rng(seed);
  for (auto& layer : m.layers) {
    allocate_params(layer);
    if (auto* c = std::get_if<Conv2d>(&layer)) {
      const double bound = std::sqrt(6.0 / static_cast<double>(c->in_channels * c->kernel * c->kernel));
      for (auto& w : c->weight) w = rng.uniform(-bound, bound);
      std::fill(c->bias.begin(), c->bias.end(), 0.0);
    } else if (auto* d = std::get_if<Dense>(&layer)) {
      const double bound = std::sqrt(6.0 / static_cast<double>(d->in_features));
      for (auto& w : d->weight) w = rng.uniform(-bound, bound);
      std::fill(d->bias.begin(), d->bias.end(), 0.0);
    } else if (auto* b = std::get_if<BatchNorm>(&layer)) {
      std::fill(b->gamma.begin(), b->gamma.end(), 1.0);
      std::fill(b->beta.begin(), b->beta.end(), 0.0);
      std::fill(b->mean.begin(), b->mean.end(), 0.0);
      std::fill(b->var.begin(), b->var.end(), 1.0);
    }
  }
  snap_to_float(m);
}

Model build_model(const Shape& input_shape, std::vector<LayerSpec> arch, std::uint64_t seed,
                  const std::string& provenance) {
  Model m;
  m.input_shape = input_shape;
  m.layers = std::move(arch);
  m.provenance = provenance;
  init_weights(m, seed);
  const Shape out = m.output_shape();
  m.num_classes = numel(out);
  validate(m);
  return m;
}

namespace {

Conv2d conv(std::size_t in, std::size_t out, std::size_t k, std::size_t pad) {
  Conv2d c;
  c.in_channels = in;
  c.out_channels = out;
  c.kernel = k;
  c.padding = pad;
  return c;
}

Dense dense(std::size_t in, std::size_t out) {
  Dense d;
  d.in_features = in;
  d.out_features = out;
  return d;
}

}  // namespace

std::vector<std::string> arch_names() { return {"fixture7", "tinyconv5", "student", "mlp", "linear"}; }

Model make_arch(const std::string& name, const Shape& in, std::size_t classes, std::uint64_t seed) {
  std::vector<LayerSpec> a;
  const std::size_t flat = numel(in);
  if (name == "linear") {
    a = {Flatten{}, dense(flat, classes)};
  } else if (name == "mlp") {
    a = {Flatten{}, dense(flat, 64), ReLU{}, dense(64, classes)};
  } else {
    if (in.size() != 3) throw ShapeError("architecture '" + name + "' needs a [C,H,W] input");
    const std::size_t C = in[0], H = in[1], W = in[2];
    if (name == "fixture7") {
      if (H < 4 || W < 4) throw ShapeError("fixture7 needs at least 4x4 images");
      const std::size_t f = 4 * ((H - 2) / 2) * ((W - 2) / 2);
      a = {conv(C, 4, 3, 0), ReLU{}, AvgPool{2}, Flatten{}, dense(f, 16), ReLU{}, dense(16, classes)};
    } else if (name == "tinyconv5") {
      if (H < 4 || W < 4) throw ShapeError("tinyconv5 needs at least 4x4 images");
      const std::size_t f = 64 * (H / 4) * (W / 4);
      a = {conv(C, 16, 3, 1),  ReLU{}, conv(16, 32, 3, 1), ReLU{}, AvgPool{2}, conv(32, 32, 3, 1), ReLU{},
           conv(32, 64, 3, 1), ReLU{}, AvgPool{2},         conv(64, 64, 3, 1), ReLU{}, Flatten{},
           dense(f, 64),       ReLU{}, dense(64, classes)};
    } else if (name == "student") {
      if (H < 2 || W < 2) throw ShapeError("student needs at least 2x2 images");
      const std::size_t f = 8 * (H / 2) * (W / 2);
      a = {conv(C, 8, 3, 1), ReLU{}, AvgPool{2}, Flatten{}, dense(f, 64), ReLU{}, dense(64, classes)};
    } else {
      throw ParameterError("unknown architecture '" + name + "'");
    }
  }
  return build_model(in, std::move(a), seed);
}

void snap_to_float(Model& m) {
  for (auto& l : m.layers) {
    for (auto t : stored_tensors(l)) {
      for (auto& v : t) v = static_cast<double>(static_cast<float>(v));
    }
  }
}

// ---- model files ----

namespace {

constexpr std::string_view kModelMagic = "SFM1";

json layer_to_json(const LayerSpec& layer) {
  json j;
  j["kind"] = kind_name(layer);
  std::visit(
      [&](const auto& l) {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, Conv2d>) {
          j["in_channels"] = l.in_channels;
          j["out_channels"] = l.out_channels;
          j["kernel"] = l.kernel;
          j["stride"] = l.stride;
          j["padding"] = l.padding;
        } else if constexpr (std::is_same_v<T, Dense>) {
          j["in_features"] = l.in_features;
          j["out_features"] = l.out_features;
        } else if constexpr (std::is_same_v<T, PolyAct>) {
          j["coeffs"] = {l.c0, l.c1, l.c2};
        } else if constexpr (std::is_same_v<T, AvgPool> || std::is_same_v<T, MaxPool>) {
          j["window"] = l.window;
        } else if constexpr (std::is_same_v<T, BatchNorm>) {
          j["channels"] = l.channels;
          j["eps"] = l.eps;
        }
      },
      layer);
  return j;
}

LayerSpec layer_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "conv2d") {
    Conv2d c;
    c.in_channels = j.at("in_channels");
    c.out_channels = j.at("out_channels");
    c.kernel = j.at("kernel");
    c.stride = j.at("stride");
    c.padding = j.at("padding");
    return c;
  }
  if (kind == "dense") return dense(j.at("in_features"), j.at("out_features"));
  if (kind == "relu") return ReLU{};
  if (kind == "polyact") {
    const auto& c = j.at("coeffs");
    return PolyAct{c.at(0), c.at(1), c.at(2)};
  }
  if (kind == "avgpool") return AvgPool{j.at("window")};
  if (kind == "maxpool") return MaxPool{j.at("window")};
  if (kind == "batchnorm") {
    BatchNorm b;
    b.channels = j.at("channels");
    b.eps = j.at("eps");
    return b;
  }
  if (kind == "flatten") return Flatten{};
  throw FormatError("unknown layer kind '" + kind + "'");
}

}  // namespace

Bytes serialize_model(const Model& m) {
  json header;
  header["input_shape"] = m.input_shape;
  header["num_classes"] = m.num_classes;
  header["provenance"] = m.provenance;
  std::size_t count = 0;
  for (const auto& l : m.layers) {
    header["layers"].push_back(layer_to_json(l));
    count += stored_count(l);
  }
  header["weight_count"] = count;
  const std::string text = header.dump();

  ByteWriter w(8 + text.size() + 4 * count);
  w.put_magic(kModelMagic);
  w.put_u32(static_cast<std::uint32_t>(text.size()));
  w.put_bytes({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
  std::vector<float> buf;
  for (const auto& l : m.layers) {
    for (auto t : stored_tensors(l)) {
      buf.assign(t.begin(), t.end());
      w.put_f32s(buf);
    }
  }
  return w.take();
}

Model deserialize_model(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic(kModelMagic);
  const std::uint32_t len = r.get_u32();
  auto text = r.take(len);
  json header;
  try {
    header = json::parse(text.begin(), text.end());
  } catch (const json::exception& e) {
    throw FormatError(std::string("model header is not valid JSON: ") + e.what());
  }
  Model m;
  try {
    m.input_shape = header.at("input_shape").get<Shape>();
    m.num_classes = header.at("num_classes");
    m.provenance = header.value("provenance", "teacher");
    for (const auto& lj : header.at("layers")) m.layers.push_back(layer_from_json(lj));
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed model header: ") + e.what());
  }
  std::size_t declared = header.value("weight_count", std::size_t{0});
  std::size_t expected = 0;
  for (auto& l : m.layers) {
    allocate_params(l);
    expected += stored_count(l);
  }
  if (declared != expected) {
    throw FormatError("header declares " + std::to_string(declared) + " weights, architecture needs " +
                      std::to_string(expected));
  }
  if (r.remaining() != 4 * expected) {
    throw FormatError("weight section holds " + std::to_string(r.remaining()) + " bytes, expected " +
                      std::to_string(4 * expected));
  }
  std::vector<float> buf;
  for (auto& l : m.layers) {
    for (auto t : stored_tensors(l)) {
      buf.resize(t.size());
      r.get_f32s(buf);
      std::copy(buf.begin(), buf.end(), t.begin());
    }
  }
  validate(m);
  return m;
}

void save_model(const Model& m, const std::string& path) { write_file(path, serialize_model(m)); }

Model load_model(const std::string& path) { return deserialize_model(read_file(path)); }

// ---- transformations ----

Model fold_batchnorm(const Model& m) {
  Model out = m;
  out.layers.clear();
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const LayerSpec& cur = m.layers[i];
    const BatchNorm* bn = i + 1 < m.layers.size() ? std::get_if<BatchNorm>(&m.layers[i + 1]) : nullptr;
    auto scale_shift = [&](std::vector<double>& w, std::vector<double>& b, std::size_t per_out) {
      for (std::size_t o = 0; o < bn->channels; ++o) {
        const double a = bn->gamma[o] / std::sqrt(bn->var[o] + bn->eps);
        for (std::size_t k = 0; k < per_out; ++k) w[o * per_out + k] *= a;
        b[o] = a * (b[o] - bn->mean[o]) + bn->beta[o];
      }
    };
    if (bn && std::holds_alternative<Conv2d>(cur) && std::get<Conv2d>(cur).out_channels == bn->channels) {
      Conv2d c = std::get<Conv2d>(cur);
      scale_shift(c.weight, c.bias, c.in_channels * c.kernel * c.kernel);
      out.layers.push_back(std::move(c));
      ++i;
    } else if (bn && std::holds_alternative<Dense>(cur) && std::get<Dense>(cur).out_features == bn->channels) {
      Dense d = std::get<Dense>(cur);
      scale_shift(d.weight, d.bias, d.in_features);
      out.layers.push_back(std::move(d));
      ++i;
    } else {
      out.layers.push_back(cur);
    }
  }
  return out;
}

std::array<Model, 3> split(const Model& m, const SplitSpec& spec) {
  const std::size_t total = m.layers.size();
  if (spec.n < 1) throw SplitError("Model 1 needs at least one layer");
  if (spec.z < 1) throw SplitError("Model 2 needs at least one layer");
  if (spec.n + spec.z >= total) {
    throw SplitError("Model 3 empty: n + z = " + std::to_string(spec.n + spec.z) + " leaves no layers of " +
                     std::to_string(total));
  }
  std::array<Model, 3> parts;
  const std::size_t bounds[4] = {0, spec.n, spec.n + spec.z, total};
  for (std::size_t p = 0; p < 3; ++p) {
    Model& part = parts[p];
    part.input_shape = m.shape_at(bounds[p]);
    part.layers.assign(m.layers.begin() + bounds[p], m.layers.begin() + bounds[p + 1]);
    part.num_classes = numel(m.shape_at(bounds[p + 1]));
    part.provenance = "part";
  }
  parts[2].num_classes = m.num_classes;
  return parts;
}

Model concat(const Model& a, const Model& b) {
  if (a.output_shape() != b.input_shape) {
    throw ShapeError("cannot chain " + shape_str(a.output_shape()) + " into " + shape_str(b.input_shape));
  }
  Model m = a;
  m.layers.insert(m.layers.end(), b.layers.begin(), b.layers.end());
  m.num_classes = b.num_classes;
  return m;
}

PolyAct fit_relu_poly(double lo, double hi) {
  if (!(hi > lo)) throw ParameterError("empty fitting interval");
  auto mono = [](double a, double b, int k) { return (std::pow(b, k + 1) - std::pow(a, k + 1)) / (k + 1); };
  // Normal equations G c = r with G_ij = int x^(i+j), r_i = int x^i relu(x).
  double g[3][4];
  const double plo = std::max(lo, 0.0), phi = std::max(hi, 0.0);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) g[i][j] = mono(lo, hi, i + j);
    g[i][3] = mono(plo, phi, i + 1);
  }
  for (int col = 0; col < 3; ++col) {
    int piv = col;
    for (int r = col + 1; r < 3; ++r) {
      if (std::abs(g[r][col]) > std::abs(g[piv][col])) piv = r;
    }
    std::swap(g[col], g[piv]);
    for (int r = 0; r < 3; ++r) {
      if (r == col) continue;
      const double f = g[r][col] / g[col][col];
      for (int k = col; k < 4; ++k) g[r][k] -= f * g[col][k];
    }
  }
  return PolyAct{g[0][3] / g[0][0], g[1][3] / g[1][1], g[2][3] / g[2][2]};
}

Model substitute_for_encryption(const Model& m, std::span<const Tensor> calibration) {
  Model out = m;
  out.provenance = "substitute";
  std::vector<Tensor> acts(calibration.begin(), calibration.end());
  for (std::size_t i = 0; i < out.layers.size(); ++i) {
    LayerSpec& l = out.layers[i];
    if (std::holds_alternative<ReLU>(l)) {
      if (acts.empty()) {
        l = PolyAct{0.0, 0.0, 1.0};
      } else {
        double lo = 0.0, hi = 0.0;
        for (const auto& t : acts) {
          for (double v : t.data) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
          }
        }
        if (hi - lo < 1e-6) {
          lo -= 1.0;
          hi += 1.0;
        }
        l = fit_relu_poly(lo, hi);
      }
    } else if (auto* mp = std::get_if<MaxPool>(&l)) {
      l = AvgPool{mp->window};
    }
    for (auto& t : acts) t = forward_layer(l, t);
  }
  return out;
}

}  // namespace splitfhe::nn
