/*
 * Copyright 2026 The DeltaForge Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "deltaforge/cli.h"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "deltaforge/checkpoint.h"
#include "deltaforge/config.h"
#include "deltaforge/data.h"
#include "deltaforge/package.h"
#include "deltaforge/protocol.h"
#include "deltaforge/verify.h"

namespace deltaforge {
namespace {

using Json = nlohmann::ordered_json;

struct Flags {
  std::string config;
  std::string method;
  std::string rank;
  std::string aug;
  std::optional<double> mask_p;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  std::string out;
  bool wire64 = false;
  std::string checkpoint;
  std::string package;
  std::string inject_fault;
};

// Shortest round-trip decimal form, independent of the C++ locale.
std::string Real(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return ec == std::errc() ? std::string(buf, end) : "nan";
}

class Stopwatch {
 public:
  double Seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

Settings LoadSettings(const Flags& flags) {
  Settings s;
  if (!flags.config.empty()) ApplyConfig(LoadConfigFile(flags.config), s);
  if (!flags.method.empty()) s.refine.method = ParseMethod(flags.method);
  if (!flags.rank.empty()) s.rank_spec = ParseHyper(flags.rank);
  if (!flags.aug.empty()) s.aug_spec = ParseHyper(flags.aug);
  if (flags.mask_p) s.refine.mask_p = *flags.mask_p;
  if (flags.seed) s.refine.seed = *flags.seed;
  if (flags.epochs) s.refine.epochs = *flags.epochs;
  if (flags.lr) s.refine.lr = *flags.lr;
  if (flags.wire64) s.refine.wire = WireFormat::kFloat64;
  if (!flags.checkpoint.empty()) s.checkpoint = flags.checkpoint;
  return s;
}

std::filesystem::path DataDir(const Settings& s) {
  if (!s.data_dir.empty()) return s.data_dir;
  if (auto dir = DataDirFromEnv()) return *dir;
  throw Error(ErrorCode::kUsage, "set DELTAFORGE_DATA_DIR or data_dir to the MNIST directory");
}

Json RefineJson(const RefineConfig& c) {
  Json j;
  j["method"] = MethodName(c.method);
  j["rank"] = c.rank;
  j["aug"] = c.aug;
  j["mask_p"] = c.mask_p;
  Json layers = Json::object();
  for (const auto& [id, h] : c.layer_hyper) layers[std::to_string(id)] = h;
  j["layer_hyper"] = layers;
  j["epochs"] = c.epochs;
  j["lr"] = c.lr;
  j["momentum"] = c.momentum;
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["wire_bits"] = 8 * static_cast<int>(c.wire);
  return j;
}

Json InitialJson(const InitialTraining& t) {
  return Json{{"subset_p", t.subset_p},   {"subset_seed", t.subset_seed},
              {"epochs", t.epochs},       {"lr", t.lr},
              {"momentum", t.momentum},   {"batch_size", t.batch_size},
              {"seed", t.seed}};
}

void WriteManifest(const std::filesystem::path& artifact, const Json& manifest) {
  std::filesystem::path path = artifact;
  path += ".manifest.json";
  const std::string text = manifest.dump(2) + "\n";
  WriteBinaryFileAtomic(path, Bytes(text.begin(), text.end()));
}

struct Initial {
  ModelSpec spec;
  ParamStore params;
  TrainReport report;
  double test_accuracy = 0.0;
  std::size_t train_size = 0;
};

Initial TrainInitial(const InitialTraining& cfg, const Dataset& train, const Dataset& test,
                     std::ostream& log) {
  Initial r;
  r.spec = ModelSpec::TinyNet();
  const Dataset d1 = Subset(train, cfg.subset_p, cfg.subset_seed);
  r.train_size = d1.size();
  auto rng = Xoshiro256StarStar::ForStream(cfg.seed, RngStream::kWeightInit);
  r.params = InitializeParams(r.spec, rng);
  TrainOptions options{cfg.epochs, cfg.lr, cfg.momentum, cfg.batch_size, cfg.seed};
  r.report = Train(Network(r.spec), r.params, d1, options, nullptr,
                   [&](std::size_t epoch, double loss) {
                     log << "epoch " << epoch + 1 << " loss " << Real(loss) << "\n";
                   });
  r.test_accuracy = Evaluate(Network(r.spec), r.params, test);
  return r;
}

int CmdTrainInitial(const Flags& flags, std::ostream& out) {
  Stopwatch clock;
  Settings s = LoadSettings(flags);
  if (flags.seed) s.initial.seed = *flags.seed;
  if (flags.epochs) s.initial.epochs = *flags.epochs;
  if (flags.lr) s.initial.lr = *flags.lr;
  const std::string path = flags.out.empty() ? "theta1.dmdl" : flags.out;
  const auto dir = DataDir(s);
  const Dataset train = LoadMnist(dir, "train");
  const Dataset test = LoadMnist(dir, "test");
  const Initial r = TrainInitial(s.initial, train, test, out);
  SaveCheckpoint(path, r.spec, r.params);
  out << "train examples " << r.train_size << "\n";
  out << "test accuracy " << Real(r.test_accuracy) << "\n";
  out << "checkpoint " << path << " fingerprint " << HexDigest(ModelFingerprint(r.params))
      << "\n";
  WriteManifest(path, Json{{"command", "train-initial"},
                           {"config", InitialJson(s.initial)},
                           {"train_examples", r.train_size},
                           {"epoch_loss", r.report.epoch_loss},
                           {"test_accuracy", r.test_accuracy},
                           {"parameters", r.params.LearnableScalarCount()},
                           {"fingerprint", HexDigest(ModelFingerprint(r.params))},
                           {"wall_clock_s", clock.Seconds()}});
  return 0;
}

int CmdRefine(const Flags& flags, std::ostream& out) {
  Stopwatch clock;
  const Settings s = LoadSettings(flags);
  if (s.checkpoint.empty()) throw Error(ErrorCode::kUsage, "refine needs a checkpoint");
  const Checkpoint cp = LoadCheckpoint(s.checkpoint);
  const RefineConfig config = s.Resolve(cp.spec.targeted().size());
  const std::string path = flags.out.empty() ? "update.dlta" : flags.out;
  const auto dir = DataDir(s);
  const Dataset d2 = Subset(LoadMnist(dir, "train"), s.refine_p, s.initial.subset_seed);
  const Dataset test = LoadMnist(dir, "test");
  const RefineResult r = CompactRefine(cp.spec, cp.params, d2, config,
                                       [&](std::size_t epoch, double loss) {
                                         out << "epoch " << epoch + 1 << " loss " << Real(loss)
                                             << "\n";
                                       });
  const Bytes bytes = SerializePackage(r.package);
  WriteBinaryFileAtomic(path, bytes);
  const double fraction = UpdateFraction(r.package, cp.params);
  const double before = Evaluate(Network(cp.spec), cp.params, test);
  const double after = Evaluate(r.network, r.params, test);
  out << "update scalars " << r.package.ScalarCount() << "\n";
  out << "update fraction " << Real(fraction) << "\n";
  out << "wire bytes " << bytes.size() << "\n";
  out << "test accuracy before " << Real(before) << " after " << Real(after) << "\n";
  for (int id : r.package.DenseFallbackLayers()) {
    out << "layer " << id << " refined densely (rank exceeds min(o, i))\n";
  }
  const WireSize ws = ComputeWireSize(r.package);
  WriteManifest(path, Json{{"command", "refine"},
                           {"checkpoint", s.checkpoint},
                           {"config", RefineJson(config)},
                           {"refine_p", s.refine_p},
                           {"train_examples", d2.size()},
                           {"epoch_loss", r.report.epoch_loss},
                           {"test_accuracy_before", before},
                           {"test_accuracy_after", after},
                           {"update_scalars", r.package.ScalarCount()},
                           {"update_fraction", fraction},
                           {"wire_bytes", Json{{"header", ws.header},
                                               {"payload", ws.payload},
                                               {"trailer", ws.trailer},
                                               {"total", ws.total()}}},
                           {"dense_fallback_layers", r.package.DenseFallbackLayers()},
                           {"wall_clock_s", clock.Seconds()}});
  return 0;
}

int CmdReconstitute(const Flags& flags, std::ostream& out) {
  const Checkpoint cp = LoadCheckpoint(flags.checkpoint);
  EdgeDevice edge(cp.spec, cp.params);
  edge.Apply(ReadBinaryFile(flags.package));
  const std::string path = flags.out.empty() ? "theta2.dmdl" : flags.out;
  SaveCheckpoint(path, edge.spec(), edge.params());
  out << "checkpoint " << path << " fingerprint " << HexDigest(edge.fingerprint()) << "\n";
  return 0;
}

int CmdEvaluate(const Flags& flags, std::ostream& out) {
  const Settings s = LoadSettings(flags);
  const Checkpoint cp = LoadCheckpoint(flags.checkpoint);
  const Dataset test = LoadMnist(DataDir(s), "test");
  out << "test accuracy " << Real(Evaluate(Network(cp.spec), cp.params, test)) << "\n";
  return 0;
}

std::string CsvField(const std::string& v) {
  if (v.find_first_of(",\"\n\r") == std::string::npos) return v;
  std::string q = "\"";
  for (char c : v) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

int CmdSweep(const Flags& flags, std::ostream& out, std::ostream& err) {
  Settings s = LoadSettings(flags);
  const auto dir = DataDir(s);
  const bool any = std::any_of(s.sweep.points.begin(), s.sweep.points.end(),
                               [](const auto& kv) { return !kv.second.empty(); });

  std::ofstream file;
  if (!flags.out.empty()) {
    file.open(flags.out, std::ios::trunc);
    if (!file) throw Error(ErrorCode::kIo, "cannot write " + flags.out);
  }
  std::ostream& csv = flags.out.empty() ? out : file;
  csv << "method,hyper,update_scalars,update_fraction,wire_bytes,test_accuracy,seed,error\n";
  if (!any) return 0;

  const Dataset train = LoadMnist(dir, "train");
  const Dataset test = LoadMnist(dir, "test");
  ModelSpec spec;
  ParamStore theta1;
  if (!s.checkpoint.empty()) {
    Checkpoint cp = LoadCheckpoint(s.checkpoint);
    spec = std::move(cp.spec);
    theta1 = std::move(cp.params);
  } else {
    std::ostringstream quiet;
    Initial init = TrainInitial(s.initial, train, test, quiet);
    err << "initial model test accuracy " << Real(init.test_accuracy) << "\n";
    spec = std::move(init.spec);
    theta1 = std::move(init.params);
  }
  const Dataset d2 = Subset(train, s.refine_p, s.initial.subset_seed);

  struct Mean {
    std::string method, hyper, scalars, fraction, bytes;
    double sum = 0.0;
    std::size_t n = 0;
  };
  std::vector<Mean> means;
  for (Method method : {Method::kLra, Method::kMl, Method::kKa, Method::kRm, Method::kLru}) {
    const auto it = s.sweep.points.find(method);
    if (it == s.sweep.points.end()) continue;
    for (const auto& point : it->second) {
      Mean mean{std::string(MethodName(method)), point, "", "", "", 0.0, 0};
      for (std::size_t k = 0; k < s.sweep.seeds; ++k) {
        RefineConfig c = s.refine;
        c.method = method;
        c.seed = s.refine.seed + k;
        std::vector<std::string> row{mean.method, point, "", "", "", "",
                                     std::to_string(c.seed), ""};
        try {
          if (method == Method::kRm) {
            c.mask_p = std::stod(point);
          } else {
            SetHyper(c, ParseHyper(point), spec.targeted().size());
          }
          const RefineResult r = CompactRefine(spec, theta1, d2, c);
          const Bytes bytes = SerializePackage(r.package);
          EdgeDevice edge(spec, theta1);
          edge.Apply(bytes);
          const double acc = Evaluate(Network(spec), edge.params(), test);
          row[2] = std::to_string(r.package.ScalarCount());
          row[3] = Real(UpdateFraction(r.package, theta1));
          row[4] = std::to_string(bytes.size());
          row[5] = Real(acc);
          mean.scalars = row[2];
          mean.fraction = row[3];
          mean.bytes = row[4];
          mean.sum += acc;
          ++mean.n;
        } catch (const std::exception& e) {
          row[7] = e.what();
        }
        for (std::size_t f = 0; f < row.size(); ++f) {
          csv << (f ? "," : "") << CsvField(row[f]);
        }
        csv << "\n" << std::flush;
        err << mean.method << " " << point << " seed " << c.seed
            << (row[7].empty() ? " accuracy " + row[5] : " failed: " + row[7]) << "\n";
      }
      means.push_back(mean);
    }
  }
  if (!flags.out.empty()) {
    std::ofstream summary(flags.out + ".summary.csv", std::ios::trunc);
    summary << "method,hyper,update_scalars,update_fraction,wire_bytes,mean_test_accuracy,runs\n";
    for (const auto& m : means) {
      summary << m.method << "," << CsvField(m.hyper) << "," << m.scalars << "," << m.fraction
              << "," << m.bytes << "," << (m.n ? Real(m.sum / static_cast<double>(m.n)) : "")
              << "," << m.n << "\n";
    }
  }
  return 0;
}

int CmdVerify(const Flags& flags, std::ostream& out) {
  VerifyOptions options;
  options.inject_fault = flags.inject_fault;
  if (flags.seed) options.seed = *flags.seed;
  const auto results = RunVerification(options);
  std::size_t failed = 0;
  for (const auto& r : results) {
    out << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << "\n";
    if (!r.passed) ++failed;
  }
  out << results.size() - failed << "/" << results.size() << " properties hold\n";
  return failed == 0 ? 0 : 1;
}

void AddRefineFlags(CLI::App* cmd, Flags& f) {
  cmd->add_option("--method", f.method, "lra, ml, ka, rm or lru");
  cmd->add_option("--rank", f.rank, "rank r, or one value per targeted layer as a/b/c");
  cmd->add_option("--aug", f.aug, "KA width n, or one value per targeted layer as a/b/c");
  cmd->add_option("--mask-p", f.mask_p, "random-mask proportion P");
  cmd->add_flag("--debug-wire64", f.wire64, "ship 64-bit scalars");
}

void AddCommonFlags(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "key = value config file");
  cmd->add_option("--seed", f.seed, "seed");
  cmd->add_option("--epochs", f.epochs, "training epochs");
  cmd->add_option("--lr", f.lr, "learning rate");
}

}  // namespace

int ExitCodeFor(ErrorCode code) {
  switch (code) {
    case ErrorCode::kStaleModel: return 2;
    case ErrorCode::kCorruptPackage:
    case ErrorCode::kFormat: return 3;
    case ErrorCode::kIncompatiblePackage:
    case ErrorCode::kShape: return 4;
    case ErrorCode::kUsage: return 64;
    default: return 1;
  }
}

int RunCli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Compact model updates for small networks"};
  app.require_subcommand(1);
  Flags f;

  auto* train = app.add_subcommand("train-initial", "train the deployed model on a subset");
  AddCommonFlags(train, f);
  train->add_option("--out", f.out, "checkpoint to write (default theta1.dmdl)");

  auto* refine = app.add_subcommand("refine", "refine a checkpoint and write an update package");
  refine->add_option("checkpoint", f.checkpoint, "deployed model (.dmdl)");
  AddCommonFlags(refine, f);
  AddRefineFlags(refine, f);
  refine->add_option("--out", f.out, "package to write (default update.dlta)");

  auto* recon = app.add_subcommand("reconstitute", "apply an update package to a checkpoint");
  recon->add_option("checkpoint", f.checkpoint, "deployed model (.dmdl)")->required();
  recon->add_option("package", f.package, "update package (.dlta)")->required();
  recon->add_option("--out", f.out, "checkpoint to write (default theta2.dmdl)");

  auto* eval = app.add_subcommand("evaluate", "test accuracy of a checkpoint");
  eval->add_option("checkpoint", f.checkpoint, "model (.dmdl)")->required();
  eval->add_option("--config", f.config, "key = value config file");

  auto* sweep = app.add_subcommand("sweep", "update size versus accuracy as CSV");
  AddCommonFlags(sweep, f);
  sweep->add_flag("--debug-wire64", f.wire64, "ship 64-bit scalars");
  sweep->add_option("--out", f.out, "CSV to write (default stdout)");

  auto* verify = app.add_subcommand("verify", "run the invariant suite");
  verify->add_option("--seed", f.seed, "seed");
  verify->add_option("--inject-fault", f.inject_fault, "'gradient' plants a backward-pass bug");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : ExitCodeFor(ErrorCode::kUsage);
  }

  try {
    if (*train) return CmdTrainInitial(f, out);
    if (*refine) return CmdRefine(f, out);
    if (*recon) return CmdReconstitute(f, out);
    if (*eval) return CmdEvaluate(f, out);
    if (*sweep) return CmdSweep(f, out, err);
    if (*verify) return CmdVerify(f, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return ExitCodeFor(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return ExitCodeFor(ErrorCode::kUsage);
}

}  // namespace deltaforge
