// splitfhe: command-line front end for keys, models, the split-inference
// server and client, benchmarks and attack campaigns.

#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "splitfhe/attacks/attacks.hpp"
#include "splitfhe/bytes.hpp"
#include "splitfhe/error.hpp"
#include "splitfhe/he/ckks.hpp"
#include "splitfhe/nn/dataset.hpp"
#include "splitfhe/nn/model.hpp"
#include "splitfhe/nn/train.hpp"
#include "splitfhe/proto/protocol.hpp"

namespace fs = std::filesystem;
using namespace splitfhe;

namespace {

enum Exit { kOk = 0, kFail = 1, kUsage = 2, kIo = 3, kProtocol = 4, kDepth = 5 };

int exit_code_for(const Error& e) {
  const std::string k = e.kind();
  if (k == "parameter" || k == "split" || k == "shape") return kUsage;
  if (k == "io" || k == "format") return kIo;
  if (k == "protocol") return kProtocol;
  if (k == "depth" || k == "capacity" || k == "key" || k == "alignment") return kDepth;
  return kFail;
}

std::string one_line(std::string s) {
  for (auto& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

volatile std::sig_atomic_t g_stop = 0;
void on_signal(int) { g_stop = 1; }

struct Global {
  std::string profile;
  std::uint64_t seed = 1;
  bool quiet = false;
};

he::CkksParams params_for(const Global& g) {
  return g.profile.empty() ? proto::params_from_env("desk") : he::CkksParams::for_profile(he::parse_profile(g.profile));
}

void log(const Global& g, const std::string& msg) {
  if (!g.quiet) std::cerr << msg << '\n';
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ParameterError(std::string("missing ") + what);
  if (!fs::is_regular_file(path)) throw IoError(std::string(what) + " not found: " + path);
}

void write_text(const std::string& path, const std::string& text) {
  if (const auto dir = fs::path(path).parent_path(); !dir.empty()) fs::create_directories(dir);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

// A directory with MNIST IDX pairs (train-* / t10k-*) or CIFAR-10 batches.
nn::Dataset load_data(const std::string& dir, bool train) {
  if (dir.empty()) throw ParameterError("missing --data");
  if (!fs::is_directory(dir)) throw IoError("dataset directory not found: " + dir);
  if (fs::exists(fs::path(dir) / "data_batch_1.bin") || fs::exists(fs::path(dir) / "test_batch.bin")) {
    return nn::load_cifar10(dir, train);
  }
  return nn::load_mnist_idx(dir, train ? "train" : "t10k");
}

nn::Dataset first_n(const nn::Dataset& d, std::size_t n) {
  std::vector<std::size_t> idx(std::min(n, d.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return d.subset(idx);
}

std::vector<std::size_t> parse_list(const std::string& text, const char* flag) {
  // "1,2,3" or "1..3"
  std::vector<std::size_t> out;
  try {
    if (const auto dots = text.find(".."); dots != std::string::npos) {
      const auto lo = std::stoul(text.substr(0, dots)), hi = std::stoul(text.substr(dots + 2));
      for (auto v = lo; v <= hi; ++v) out.push_back(v);
    } else {
      std::stringstream ss(text);
      for (std::string cell; std::getline(ss, cell, ',');) {
        if (!cell.empty()) out.push_back(std::stoul(cell));
      }
    }
  } catch (const std::logic_error&) {
    throw ParameterError(std::string("bad list for ") + flag + ": '" + text + "'");
  }
  if (out.empty()) throw ParameterError(std::string("empty list for ") + flag);
  return out;
}

std::vector<nn::Tensor> calibration_from(const std::string& data_dir, std::size_t n) {
  if (data_dir.empty()) return {};
  return first_n(load_data(data_dir, true), n).samples();
}

he::KeyMaterial load_keys(const std::string& dir, const he::CkksContext& ctx) {
  const auto sk_path = (fs::path(dir) / "secret.key").string();
  const auto pk_path = (fs::path(dir) / "public.keys").string();
  require_file(sk_path, "secret key");
  require_file(pk_path, "public keys");
  he::KeyMaterial km;
  try {
    km.secret_key = he::deserialize_secret_key(read_file(sk_path), ctx);
    km.public_keys = std::make_shared<const he::EvaluationKeys>(he::deserialize_public_keys(read_file(pk_path), ctx));
  } catch (const Error& e) {
    throw ParameterError(std::string("keys in ") + dir + " do not fit profile " + to_string(ctx.params().security_profile) +
                         ": " + e.what());
  }
  return km;
}

// ---- subcommands ----

struct KeygenOpts {
  std::string out;
};

void cmd_keygen(const Global& g, const KeygenOpts& o) {
  if (o.out.empty()) throw ParameterError("missing --out");
  const auto ctx = he::make_context(params_for(g));
  log(g, "generating keys for profile " + to_string(ctx->params().security_profile));
  const auto km = he::keygen(*ctx, g.seed);
  fs::create_directories(o.out);
  write_file((fs::path(o.out) / "secret.key").string(), he::serialize_secret_key(km.secret_key));
  const auto pk = he::serialize_public_keys(*km.public_keys);
  write_file((fs::path(o.out) / "public.keys").string(), pk);
  std::cout << "wrote " << o.out << " (public keys " << pk.size() << " bytes)\n";
}

struct SynthOpts {
  std::string out;
  std::size_t train_per_class = 64, test_per_class = 32, classes = 10, size = 8, modes = 1;
  double noise = 0.15;
};

void cmd_synth(const Global& g, const SynthOpts& o) {
  if (o.out.empty()) throw ParameterError("missing --out");
  nn::SyntheticSpec spec;
  spec.classes = o.classes;
  spec.per_class = o.train_per_class + o.test_per_class;
  spec.shape = {1, o.size, o.size};
  spec.noise = o.noise;
  spec.modes_per_class = o.modes;
  const auto all = nn::gen_synthetic(spec, g.seed);
  // Samples are interleaved by class, so prefixes stay balanced.
  const std::size_t ntrain = o.train_per_class * o.classes;
  std::vector<std::size_t> a(ntrain), b(all.size() - ntrain);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = i;
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = ntrain + i;
  fs::create_directories(o.out);
  const fs::path d(o.out);
  nn::write_mnist_idx(all.subset(a), (d / "train-images-idx3-ubyte").string(), (d / "train-labels-idx1-ubyte").string());
  nn::write_mnist_idx(all.subset(b), (d / "t10k-images-idx3-ubyte").string(), (d / "t10k-labels-idx1-ubyte").string());
  std::cout << "wrote " << a.size() << " train and " << b.size() << " test samples to " << o.out << '\n';
}

struct TrainOpts {
  std::string arch = "fixture7", data, out, teacher;
  std::size_t epochs = 8, batch = 32, limit = 0;
  double lr = 0.05, weight_decay = 0.0;
};

nn::TrainConfig train_cfg(const Global& g, const TrainOpts& o) {
  nn::TrainConfig c;
  c.lr = o.lr;
  c.epochs = o.epochs;
  c.batch = o.batch;
  c.seed = g.seed;
  c.weight_decay = o.weight_decay;
  return c;
}

void cmd_train(const Global& g, const TrainOpts& o) {
  if (o.out.empty()) throw ParameterError("missing --out");
  auto train = load_data(o.data, true);
  if (o.limit) train = first_n(train, o.limit);
  const auto test = load_data(o.data, false);
  auto m = nn::make_arch(o.arch, train.sample_shape, train.num_classes, g.seed);
  const auto r = nn::train_sgd(std::move(m), train, train_cfg(g, o));
  nn::save_model(r.model, o.out);
  std::cout << "train_accuracy=" << nn::accuracy(r.model, train) << " test_accuracy=" << nn::accuracy(r.model, test)
            << " final_loss=" << (r.loss_curve.empty() ? 0.0 : r.loss_curve.back()) << '\n';
}

void cmd_distill(const Global& g, const TrainOpts& o) {
  if (o.out.empty()) throw ParameterError("missing --out");
  require_file(o.teacher, "teacher model");
  const auto teacher = nn::load_model(o.teacher);
  auto train = load_data(o.data, true);
  if (o.limit) train = first_n(train, o.limit);
  const auto test = load_data(o.data, false);
  auto cfg = train_cfg(g, o);
  cfg.loss = nn::Loss::MseLogits;
  auto student = nn::make_arch(o.arch, train.sample_shape, train.num_classes, g.seed);
  student.provenance = "student";
  const auto r = nn::distill(teacher, std::move(student), train, cfg, test);
  nn::save_model(r.student, o.out);
  std::cout << "initial_loss=" << r.initial_loss << " teacher_accuracy=" << r.teacher_accuracy
            << " student_accuracy=" << r.student_accuracy << '\n';
}

nlohmann::json describe_part(const nn::Model& m) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : m.layers) {
    nlohmann::json j = {{"kind", nn::kind_name(l)}};
    if (const auto* p = std::get_if<nn::PolyAct>(&l)) j["coefficients"] = {p->c2, p->c1, p->c0};
    layers.push_back(std::move(j));
  }
  return {{"input_shape", m.input_shape}, {"layers", layers}};
}

struct SplitOpts {
  std::string model, out_dir, data;
  std::size_t n = 1, z = 1, calibration = 100;
};

void cmd_split(const Global& g, const SplitOpts& o) {
  require_file(o.model, "model");
  if (o.out_dir.empty()) throw ParameterError("missing --out-dir");
  const auto m = nn::load_model(o.model);
  const auto params = params_for(g);
  const auto calib = calibration_from(o.data, o.calibration);
  const auto prep = proto::server_offline_prepare(m, {o.n, o.z}, params, calib);
  fs::create_directories(o.out_dir);
  const fs::path d(o.out_dir);
  nn::save_model(prep.bundle.model1, (d / "model1.sfm").string());
  nn::save_model(prep.deployment.model2, (d / "model2.sfm").string());
  nn::save_model(prep.bundle.model3, (d / "model3.sfm").string());
  const nlohmann::json rep = {{"profile", to_string(params.security_profile)},
                              {"n", o.n},
                              {"z", o.z},
                              {"calibration_samples", calib.size()},
                              {"model1", describe_part(prep.bundle.model1)},
                              {"model2", describe_part(prep.deployment.model2)},
                              {"model3", describe_part(prep.bundle.model3)},
                              {"model1_im2col", prep.bundle.input.im2col},
                              {"model1_depth", enc::segment_depth(prep.bundle.enc1)},
                              {"model3_depth", enc::segment_depth(prep.bundle.enc3)},
                              {"depth_budget", params.depth_budget()},
                              {"max_feasible_tail", proto::max_feasible_tail(m, params, calib)}};
  write_text((d / "substitution.json").string(), rep.dump(2) + "\n");
  std::cout << "wrote model1.sfm model2.sfm model3.sfm substitution.json to " << o.out_dir << '\n';
}

// Rebuilds the server side from the three part files written by split.
proto::PreparedSplit prepare_from_parts(const std::string& p1, const std::string& p2, const std::string& p3,
                                        const he::CkksParams& params) {
  require_file(p1, "Model 1");
  require_file(p2, "Model 2");
  require_file(p3, "Model 3");
  const auto m1 = nn::load_model(p1), m2 = nn::load_model(p2), m3 = nn::load_model(p3);
  const auto whole = nn::concat(nn::concat(m1, m2), m3);
  return proto::server_offline_prepare(whole, {m1.layers.size(), m2.layers.size()}, params);
}

struct ServeOpts {
  std::string addr = "127.0.0.1:7000", model1, model2, model3;
};

void cmd_serve(const Global& g, const ServeOpts& o) {
  const auto params = params_for(g);
  const auto prep = prepare_from_parts(o.model1, o.model2, o.model3, params);
  const auto ctx = he::make_context(params);
  proto::Server server(prep.bundle, ctx, prep.deploy_blob);
  const auto port = server.listen(o.addr);
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  server.start();
  std::cout << "listening on port " << port << std::endl;
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  const auto st = server.stats();
  std::cout << "sessions=" << st.sessions << " failed=" << st.failed << " inferences=" << st.inferences << '\n';
}

nn::Tensor read_image(const std::string& path, const nn::Shape& shape) {
  require_file(path, "image");
  std::ifstream in(path);
  nn::Tensor t(shape);
  std::size_t k = 0;
  for (double v; in >> v;) {
    if (k == t.data.size()) throw FormatError(path + ": more values than the input shape " + nn::shape_str(shape));
    t.data[k++] = v;
  }
  if (k != t.data.size()) {
    throw FormatError(path + ": " + std::to_string(k) + " values, input shape " + nn::shape_str(shape) + " needs " +
                      std::to_string(t.data.size()));
  }
  return t;
}

struct InferOpts {
  std::string addr = "127.0.0.1:7000", keys, image, data, metrics_out, model2;
  std::size_t limit = 1, tail_layers = 0;
  bool test_split = true;
};

void cmd_infer(const Global& g, const InferOpts& o) {
  if (o.keys.empty()) throw ParameterError("missing --keys");
  if (o.image.empty() == o.data.empty()) throw ParameterError("give exactly one of --image and --dataset");
  const auto ctx = he::make_context(params_for(g));
  const auto km = load_keys(o.keys, *ctx);
  auto s = proto::client_start_session(o.addr, ctx, km, g.seed);
  const auto& dep = s.deployment();
  if (!o.model2.empty()) {
    require_file(o.model2, "Model 2");
    auto local = nn::load_model(o.model2);
    nn::snap_to_float(local);
    if (!(local.layers == dep.model2.layers)) throw ProtocolError("deployed Model 2 differs from " + o.model2);
  }
  std::vector<nn::Tensor> xs;
  std::vector<int> labels;
  if (!o.image.empty()) {
    xs.push_back(read_image(o.image, dep.model1_input));
  } else {
    const auto d = first_n(load_data(o.data, !o.test_split), o.limit);
    xs = d.samples();
    labels = d.labels;
  }
  std::vector<proto::MetricsRow> rows;
  std::size_t correct = 0;
  std::cout << "index,prediction" << (labels.empty() ? "" : ",label") << '\n';
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto r = s.infer(xs[i]);
    const auto pred = nn::argmax(r.logits);
    std::cout << i << ',' << pred;
    if (!labels.empty()) {
      std::cout << ',' << labels[i];
      correct += static_cast<int>(pred) == labels[i];
    }
    std::cout << '\n';
    rows.push_back({o.tail_layers, r.metrics});
  }
  s.close();
  if (!labels.empty()) log(g, "accuracy " + std::to_string(static_cast<double>(correct) / xs.size()));
  if (!o.metrics_out.empty()) write_text(o.metrics_out, proto::metrics_csv(rows));
}

struct BenchOpts {
  std::string model, data, out, json_out, tails = "1..3";
  std::size_t n = 1, repeats = 3, calibration = 100;
};

void cmd_bench(const Global& g, const BenchOpts& o) {
  require_file(o.model, "model");
  if (o.repeats == 0) throw ParameterError("--repeats must be positive");
  const auto m = nn::load_model(o.model);
  const auto params = params_for(g);
  const auto ctx = he::make_context(params);
  const auto calib = calibration_from(o.data, o.calibration);
  const auto inputs = o.data.empty() ? std::vector<nn::Tensor>{} : first_n(load_data(o.data, false), o.repeats).samples();
  log(g, "generating keys");
  const auto km = he::keygen(*ctx, g.seed);
  std::vector<proto::MetricsRow> rows;
  for (const auto t : parse_list(o.tails, "--tail-layers")) {
    if (o.n + t >= m.layers.size()) {
      throw SplitError("tail of " + std::to_string(t) + " leaves Model 2 empty for a " +
                       std::to_string(m.layers.size()) + "-layer model");
    }
    const auto prep = proto::server_offline_prepare(m, {o.n, m.layers.size() - o.n - t}, params, calib);
    proto::Server server(prep.bundle, ctx, prep.deploy_blob);
    const auto port = server.listen("127.0.0.1:0");
    server.start();
    auto s = proto::client_start_session("127.0.0.1:" + std::to_string(port), ctx, km, g.seed + t);
    std::vector<proto::SessionMetrics> runs;
    for (std::size_t r = 0; r < o.repeats; ++r) {
      const auto x = inputs.empty() ? nn::Tensor(m.input_shape) : inputs[r % inputs.size()];
      runs.push_back(s.infer(x).metrics);
    }
    s.close();
    server.stop();
    rows.push_back({t, proto::mean_metrics(runs)});
    log(g, "tail " + std::to_string(t) + ": total " + std::to_string(rows.back().metrics.total()) + " s");
  }
  const auto csv = proto::metrics_csv(rows);
  if (o.out.empty()) {
    std::cout << csv;
  } else {
    write_text(o.out, csv);
  }
  if (!o.json_out.empty()) write_text(o.json_out, proto::metrics_json(rows));
}

struct AttackOpts {
  std::string model, data, out_dir = "reports", tails = "1..3", budgets = "50,200,400", kinds = "threshold,shadow";
  std::size_t n = 1, seeds = 3, held_out = 200, epochs = 40, width = 8, shadows = 3, shadow_epochs = 8;
  double lr = 0.02, fraction = 0.5;
  bool full_access = true;
};

void cmd_attack_mea(const Global& g, const AttackOpts& o) {
  require_file(o.model, "model");
  const auto m = nn::load_model(o.model);
  const auto train = load_data(o.data, true);
  const auto held = first_n(load_data(o.data, false), o.held_out);
  const auto budgets = parse_list(o.budgets, "--budgets");
  const auto tails = parse_list(o.tails, "--tail-layers");
  std::vector<attacks::MeaReport> rows;
  for (std::size_t si = 0; si < o.seeds; ++si) {
    for (const auto b : budgets) {
      attacks::MeaConfig cfg;
      cfg.attacker_samples = b;
      cfg.epochs = o.epochs;
      cfg.lr = o.lr;
      cfg.width = o.width;
      cfg.seed = g.seed + si;
      // M1' depends only on budget and seed, so it is shared across tails.
      auto first = attacks::PlaintextVictim::from_model(m, o.n, tails.front());
      const auto m1 = attacks::train_model1_substitute(first, train, cfg);
      for (const auto t : tails) {
        auto v = attacks::PlaintextVictim::from_model(m, o.n, t);
        rows.push_back(attacks::mea_run(v, train, held, cfg, &m1));
        log(g, "mea samples=" + std::to_string(b) + " tail=" + std::to_string(t) +
                   " seed=" + std::to_string(cfg.seed) + " fidelity=" + std::to_string(rows.back().fidelity));
      }
    }
  }
  if (o.full_access) {
    auto v = attacks::PlaintextVictim::from_model(m, o.n, tails.front(), true);
    auto r = attacks::mea_full_access(v, held);
    r.seed = g.seed;
    rows.push_back(r);
  }
  fs::create_directories(o.out_dir);
  write_text((fs::path(o.out_dir) / "mea.csv").string(), attacks::mea_csv(rows));
  write_text((fs::path(o.out_dir) / "mea.json").string(), attacks::mea_json(rows));
  std::cout << "wrote " << rows.size() << " MEA rows to " << o.out_dir << '\n';
}

void cmd_attack_mia(const Global& g, const AttackOpts& o) {
  require_file(o.model, "model");
  const auto m = nn::load_model(o.model);
  const auto train = load_data(o.data, true);
  const auto test = load_data(o.data, false);
  // Non-members and the shadow pool are disjoint halves of the test split.
  std::vector<std::size_t> a, b;
  for (std::size_t i = 0; i < test.size(); ++i) (i % 2 ? b : a).push_back(i);
  const auto non_members = test.subset(a);
  const auto pool = test.subset(b);
  const auto members = first_n(train, non_members.size());

  std::vector<attacks::MiaRow> rows;
  std::stringstream ss(o.kinds);
  for (std::string kind; std::getline(ss, kind, ',');) {
    attacks::MiaReport r;
    if (kind == "threshold") {
      r = attacks::mia_threshold(m, members, non_members);
    } else if (kind == "shadow") {
      attacks::MiaConfig cfg;
      cfg.shadow_count = o.shadows;
      cfg.attacker_data_fraction = o.fraction;
      cfg.train.epochs = o.shadow_epochs;
      cfg.seed = g.seed;
      r = attacks::mia_shadow(m, pool, members, non_members, cfg);
    } else if (kind == "knn") {
      r = attacks::mia_trained(m, members, non_members, attacks::MiaKind::TrainedKNN, g.seed);
    } else if (kind == "logistic") {
      r = attacks::mia_trained(m, members, non_members, attacks::MiaKind::TrainedLogistic, g.seed);
    } else if (kind == "mlp") {
      r = attacks::mia_trained(m, members, non_members, attacks::MiaKind::TrainedMLP, g.seed);
    } else {
      throw ParameterError("unknown MIA kind '" + kind + "' (threshold, shadow, knn, logistic, mlp)");
    }
    log(g, "mia " + kind + " auc=" + std::to_string(r.auc) + " advantage=" + std::to_string(r.advantage) +
               " precision=" + std::to_string(r.precision));
    rows.insert(rows.end(), r.per_class.begin(), r.per_class.end());
  }
  fs::create_directories(o.out_dir);
  write_text((fs::path(o.out_dir) / "mia.csv").string(), attacks::mia_csv(rows));
  write_text((fs::path(o.out_dir) / "mia.json").string(), attacks::mia_json(rows));
  std::cout << "wrote " << rows.size() << " MIA rows to " << o.out_dir << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Split neural-network inference with CKKS-encrypted head and tail"};
  app.set_config("--config", "", "key=value configuration file; command-line flags take precedence");
  app.require_subcommand(1);
  Global g;
  app.add_option("--profile", g.profile, "Encryption profile: desk or paper128 (default: $SPLITFHE_PROFILE, else desk)");
  app.add_option("--seed", g.seed, "Seed for every random choice");
  app.add_flag("--quiet", g.quiet, "Suppress progress messages");

  KeygenOpts ko;
  auto* keygen = app.add_subcommand("keygen", "Generate a key pair and evaluation keys");
  keygen->add_option("--out", ko.out, "Output directory")->required();

  SynthOpts so;
  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset as MNIST IDX files");
  synth->add_option("--out", so.out, "Output directory")->required();
  synth->add_option("--train-per-class", so.train_per_class);
  synth->add_option("--test-per-class", so.test_per_class);
  synth->add_option("--classes", so.classes);
  synth->add_option("--size", so.size, "Image side length");
  synth->add_option("--noise", so.noise);
  synth->add_option("--modes", so.modes, "Clusters per class");

  TrainOpts to;
  auto* train = app.add_subcommand("train", "Train a model");
  auto* distill = app.add_subcommand("distill", "Distil a teacher into a student on its logits");
  for (auto* sc : {train, distill}) {
    sc->add_option("--arch", to.arch, "fixture7, tinyconv5, student, mlp or linear");
    sc->add_option("--data", to.data, "Dataset directory")->required();
    sc->add_option("--epochs", to.epochs);
    sc->add_option("--lr", to.lr);
    sc->add_option("--batch", to.batch);
    sc->add_option("--weight-decay", to.weight_decay);
    sc->add_option("--limit", to.limit, "Use only the first N training samples");
    sc->add_option("--out", to.out, "Output model file")->required();
  }
  distill->add_option("--teacher", to.teacher, "Teacher model file")->required();

  SplitOpts sp;
  auto* split = app.add_subcommand("split", "Split a model into three parts and substitute encrypted activations");
  split->add_option("--model", sp.model)->required();
  split->add_option("--n", sp.n, "Layers in Model 1");
  split->add_option("--z", sp.z, "Layers in Model 2");
  split->add_option("--data", sp.data, "Dataset whose training split calibrates the activation fit");
  split->add_option("--calibration", sp.calibration, "Calibration samples");
  split->add_option("--out-dir", sp.out_dir)->required();

  ServeOpts sv;
  auto* serve = app.add_subcommand("serve", "Serve encrypted inference until interrupted");
  serve->add_option("--addr", sv.addr, "host:port to listen on");
  serve->add_option("--model1", sv.model1)->required();
  serve->add_option("--model2", sv.model2)->required();
  serve->add_option("--model3", sv.model3)->required();

  InferOpts in;
  auto* infer = app.add_subcommand("infer", "Run encrypted inference against a server");
  infer->add_option("--addr", in.addr, "Server host:port");
  infer->add_option("--keys", in.keys, "Key directory from keygen")->required();
  infer->add_option("--image", in.image, "Text file with one image's pixel values");
  infer->add_option("--dataset", in.data, "Dataset directory");
  infer->add_option("--limit", in.limit, "Samples to run from --dataset");
  infer->add_option("--model2", in.model2, "Check the deployed Model 2 against this file");
  infer->add_option("--tail-layers", in.tail_layers, "Tail length recorded in the metrics rows");
  infer->add_option("--metrics-out", in.metrics_out, "CSV file for per-inference metrics");

  BenchOpts bo;
  auto* bench = app.add_subcommand("bench", "Time and measure the protocol for several tail lengths");
  bench->add_option("--model", bo.model)->required();
  bench->add_option("--data", bo.data, "Dataset for calibration and inputs");
  bench->add_option("--n", bo.n, "Layers in Model 1");
  bench->add_option("--tail-layers", bo.tails, "Tail lengths, e.g. 1..3 or 1,2,3");
  bench->add_option("--repeats", bo.repeats);
  bench->add_option("--out", bo.out, "CSV output (default: stdout)");
  bench->add_option("--json-out", bo.json_out);

  AttackOpts ao;
  auto* attack = app.add_subcommand("attack", "Run model extraction or membership inference campaigns");
  attack->require_subcommand(1);
  auto* mea = attack->add_subcommand("mea", "Model extraction against the encrypted parts");
  auto* mia = attack->add_subcommand("mia", "Membership inference against the full model");
  for (auto* sc : {mea, mia}) {
    sc->add_option("--model", ao.model)->required();
    sc->add_option("--data", ao.data)->required();
    sc->add_option("--out-dir", ao.out_dir);
  }
  mea->add_option("--n", ao.n, "Layers in Model 1");
  mea->add_option("--tail-layers", ao.tails);
  mea->add_option("--budgets", ao.budgets, "Attacker sample counts");
  mea->add_option("--seeds", ao.seeds, "Repetitions with consecutive seeds");
  mea->add_option("--held-out", ao.held_out);
  mea->add_option("--epochs", ao.epochs);
  mea->add_option("--lr", ao.lr);
  mea->add_option("--width", ao.width, "Channels of the substitute convolutions");
  mea->add_flag("!--no-full-access", ao.full_access, "Skip the full-access reference row");
  mia->add_option("--kinds", ao.kinds, "threshold, shadow, knn, logistic, mlp");
  mia->add_option("--shadows", ao.shadows);
  mia->add_option("--fraction", ao.fraction, "Share of the attacker pool used for shadows");
  mia->add_option("--shadow-epochs", ao.shadow_epochs);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << one_line(e.what()) << '\n';
    return kUsage;
  }

  try {
    if (*keygen) cmd_keygen(g, ko);
    else if (*synth) cmd_synth(g, so);
    else if (*train) cmd_train(g, to);
    else if (*distill) cmd_distill(g, to);
    else if (*split) cmd_split(g, sp);
    else if (*serve) cmd_serve(g, sv);
    else if (*infer) cmd_infer(g, in);
    else if (*bench) cmd_bench(g, bo);
    else if (*mea) cmd_attack_mea(g, ao);
    else if (*mia) cmd_attack_mia(g, ao);
  } catch (const Error& e) {
    std::cerr << "error: " << e.kind() << ": " << one_line(e.what()) << '\n';
    return exit_code_for(e);
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: io: " << one_line(e.what()) << '\n';
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << one_line(e.what()) << '\n';
    return kFail;
  }
  return kOk;
}
