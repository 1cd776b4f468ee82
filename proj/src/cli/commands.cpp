#include "metalens/cli/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "metalens/errors.hpp"
#include "metalens/io/png_io.hpp"
#include "metalens/json_util.hpp"
#include "metalens/log.hpp"
#include "metalens/metrics/metrics.hpp"
#include "metalens/numerics/init.hpp"
#include "metalens/optics/noise.hpp"
#include "metalens/optics/psf.hpp"
#include "metalens/optics/render.hpp"
#include "metalens/stafnet/checkpoint.hpp"
#include "metalens/stafnet/trainer.hpp"
#include "metalens/wiener/wiener.hpp"

namespace metalens::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// Flag values that parse but make no sense.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw FormatError("failed writing " + path.string());
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

fs::path sibling(const fs::path& file, const std::string& suffix) {
  fs::path p = file;
  p += suffix;
  return p;
}

std::vector<fs::path> list_pngs(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FormatError(dir.string() + " is not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (e.is_regular_file() && ext == ".png") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

optics::GridSize parse_grid(const std::string& s) {
  const auto x = s.find_first_of("xX");
  try {
    if (x == std::string::npos) throw std::invalid_argument(s);
    std::size_t used = 0;
    const auto r = std::stoul(s.substr(0, x), &used);
    if (used != x) throw std::invalid_argument(s);
    const auto c = std::stoul(s.substr(x + 1), &used);
    if (used != s.size() - x - 1 || r == 0 || c == 0) throw std::invalid_argument(s);
    return {r, c};
  } catch (const std::logic_error&) {
    throw UsageError("--grid expects ROWSxCOLS with positive extents, got \"" + s + "\"");
  }
}

std::string format_k(double k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4e", k);
  return buf;
}

// ---------------------------------------------------------------------------

struct SynthPsfArgs {
  std::string grid = "9x9";
  std::size_t kernel = 31;
  double severity = 1.0;
  std::uint64_t seed = 0;
  double max_field_angle = 20.0;
  std::string out;
};

int synth_psf(const SynthPsfArgs& a) {
  const auto grid = parse_grid(a.grid);
  if (a.kernel % 2 == 0 || a.kernel == 0) throw UsageError("--kernel must be a positive odd integer");
  if (!(a.severity >= 0.0)) throw UsageError("--severity must be >= 0");
  optics::PsfSynthesisOptions opts;
  opts.max_field_angle_deg = a.max_field_angle;
  const auto psf = optics::synth_psf_grid(a.seed, grid, a.kernel, a.severity, opts);
  const fs::path out(a.out);
  optics::save_psf_grid(out, psf);
  write_json(sibling(out, ".resolved.json"), {{"command", "synth-psf"},
                                              {"grid", a.grid},
                                              {"kernel", a.kernel},
                                              {"severity", a.severity},
                                              {"seed", a.seed},
                                              {"max_field_angle", a.max_field_angle},
                                              {"out", a.out}});
  double lo = 1e300, hi = 0, sum = 0;
  std::printf("second moment per cell (%zux%zu, kernel %zu):\n", grid.rows, grid.cols, a.kernel);
  for (std::size_t r = 0; r < grid.rows; ++r) {
    for (std::size_t c = 0; c < grid.cols; ++c) {
      const double m2 = psf.at(r, c).second_moment();
      lo = std::min(lo, m2);
      hi = std::max(hi, m2);
      sum += m2;
      std::printf("%s%8.4f", c ? " " : "", m2);
    }
    std::printf("\n");
  }
  std::printf("min %.4f  mean %.4f  max %.4f\n", lo, sum / static_cast<double>(grid.cells()), hi);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string clean, psf, out, boundary = "circular";
  double sigma_g = 1e-5, sigma_p = 4e-5;
  std::uint64_t seed = 0;
  bool no_noise = false;
  std::size_t blend = 0;
};

int simulate(const SimulateArgs& a) {
  optics::RenderOptions ropt;
  if (a.boundary == "circular") {
    ropt.boundary = optics::Boundary::Circular;
  } else if (a.boundary == "replicate") {
    ropt.boundary = optics::Boundary::Replicate;
  } else {
    throw UsageError("--boundary must be circular or replicate");
  }
  ropt.blend_overlap = a.blend;
  optics::NoiseModel base{a.sigma_g, a.sigma_p, a.seed};
  if (!a.no_noise) {
    try {
      base.validate();
    } catch (const ContractError& e) {
      throw UsageError(e.what());
    }
  }
  const auto psf = optics::load_psf_grid(a.psf);
  const fs::path out(a.out);
  fs::create_directories(out);
  const auto inputs = list_pngs(a.clean);

  json pairs = json::array(), errors = json::array();
  for (const auto& in : inputs) {
    const std::string id = in.stem().string();
    try {
      const auto img = io::read_png(in);
      std::optional<optics::NoiseModel> noise;
      if (!a.no_noise) noise = optics::NoiseModel{a.sigma_g, a.sigma_p, numerics::seed_for(a.seed, id)};
      const auto rendered = optics::render_aberrated(img.pixels, psf, noise, ropt);
      const fs::path dst = out / in.filename();
      io::write_png(dst, rendered, img.bit_depth);
      pairs.push_back({{"id", id},
                       {"clean", fs::relative(fs::absolute(in), fs::absolute(out)).generic_string()},
                       {"aberrated", dst.filename().generic_string()}});
    } catch (const std::exception& e) {
      log::error("simulate: " + in.string() + ": " + e.what());
      errors.push_back({{"file", in.generic_string()}, {"error", e.what()}});
    }
  }
  json noise = {{"enabled", !a.no_noise}, {"sigma_g", a.sigma_g}, {"sigma_p", a.sigma_p}, {"seed", a.seed}};
  json manifest = {{"psf", fs::relative(fs::absolute(a.psf), fs::absolute(out)).generic_string()},
                   {"noise", noise},
                   {"render", {{"boundary", a.boundary}, {"blend_overlap", a.blend}}},
                   {"pairs", pairs},
                   {"errors", errors}};
  write_json(out / "manifest.json", manifest);
  write_json(out / "resolved_config.json", {{"command", "simulate"},
                                            {"clean", a.clean},
                                            {"psf", a.psf},
                                            {"noise", noise},
                                            {"boundary", a.boundary},
                                            {"blend_overlap", a.blend},
                                            {"out", a.out}});
  std::printf("simulated %zu of %zu images into %s\n", pairs.size(), inputs.size(), a.out.c_str());
  if (pairs.empty()) {
    std::fprintf(stderr, "simulate: no input could be processed\n");
    return kExitFailure;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct DeconvArgs {
  std::string in, psf, bank, out;
  std::optional<bool> patchwise;
  double cutoff = 0.5;
};

int deconv(const DeconvArgs& a) {
  wiener::FilterBankConfig bank;
  if (!a.bank.empty()) bank = wiener::filter_bank_from_json(read_json(a.bank));
  if (a.patchwise) bank.patchwise = *a.patchwise;
  if (!(a.cutoff > 0.0 && a.cutoff < 1.0)) throw UsageError("--cutoff must be in (0, 1)");
  const auto psf = optics::load_psf_grid(a.psf);
  const auto img = io::read_png(a.in);
  const auto stack = wiener::deconvolve_for(img.pixels, psf, bank);

  const fs::path out(a.out);
  fs::create_directories(out);
  const std::string stem = fs::path(a.in).stem().string();
  std::ofstream csv(out / "spectral_energy.csv", std::ios::trunc);
  if (!csv) throw FormatError("cannot write spectral_energy.csv");
  csv << "index,k,highband_energy,median\n";
  json files = json::array();
  for (std::size_t m = 0; m < stack.size(); ++m) {
    const bool median = m == stack.median_index;
    const std::string name = stem + "_k" + format_k(stack.k_values[m]) + (median ? "_median" : "") + ".png";
    io::write_png(out / name, stack.images[m], 16);
    files.push_back({{"index", m}, {"k", stack.k_values[m]}, {"file", name}, {"median", median}});
    char row[128];
    std::snprintf(row, sizeof row, "%zu,%.6e,%.17g,%d\n", m, stack.k_values[m],
                  metrics::highband_energy(stack.images[m], a.cutoff), median ? 1 : 0);
    csv << row;
  }
  csv.close();
  if (!csv) throw FormatError("failed writing spectral_energy.csv");
  wiener::save_deconv_stack(out / "stack.mltn", stack);
  write_json(out / "resolved_config.json", {{"command", "deconv"},
                                            {"in", a.in},
                                            {"psf", a.psf},
                                            {"bank", wiener::to_json(bank)},
                                            {"cutoff", a.cutoff},
                                            {"out", a.out},
                                            {"images", files}});
  std::printf("wrote %zu deconvolved images to %s (median k = %s)\n", stack.size(), a.out.c_str(),
              format_k(stack.k_values[stack.median_index]).c_str());
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string pairs, config, out, psf, loss_csv;
  std::optional<std::size_t> steps;
  std::optional<double> lr;
  std::uint64_t seed = 0;
};

// Network and training settings: either a bare network config or
// {"network": {...}, "training": {...}}.
void read_train_config(const std::string& path, stafnet::NetworkConfig& net, stafnet::TrainOptions& opt) {
  if (path.empty()) return;
  const auto j = read_json(path);
  if (!j.is_object() || !(j.contains("network") || j.contains("training"))) {
    net = stafnet::network_config_from_json(j);
    return;
  }
  require_known_keys(j, {"network", "training"}, "pipeline config");
  if (j.contains("network")) net = stafnet::network_config_from_json(j.at("network"));
  if (j.contains("training")) {
    const auto& t = j.at("training");
    require_known_keys(t, {"steps", "lr", "cosine", "final_lr_ratio"}, "training config");
    read_optional(t, "steps", opt.steps);
    read_optional(t, "lr", opt.lr);
    read_optional(t, "cosine", opt.cosine);
    read_optional(t, "final_lr_ratio", opt.final_lr_ratio);
  }
}

int train(const TrainArgs& a) {
  stafnet::NetworkConfig net;
  stafnet::TrainOptions opt;
  read_train_config(a.config, net, opt);
  if (a.steps) opt.steps = *a.steps;
  if (a.lr) opt.lr = *a.lr;
  if (!(opt.lr >= 0.0)) throw UsageError("learning rate must be >= 0");
  opt.seed = a.seed;

  const fs::path manifest_path(a.pairs);
  const fs::path base = manifest_path.parent_path();
  const auto manifest = read_json(manifest_path);
  const fs::path psf_path = a.psf.empty() ? base / manifest.at("psf").get<std::string>() : fs::path(a.psf);
  const auto psf = optics::load_psf_grid(psf_path);
  std::vector<stafnet::TrainingPair> pairs;
  for (const auto& p : manifest.at("pairs")) {
    pairs.push_back({p.at("id").get<std::string>(),
                     io::read_png(base / p.at("clean").get<std::string>()).pixels,
                     io::read_png(base / p.at("aberrated").get<std::string>()).pixels});
  }
  if (pairs.empty()) throw ContractError("manifest " + a.pairs + " lists no pairs");
  const auto samples = stafnet::prepare_samples(pairs, psf, net.mafg);
  auto result = stafnet::train_toy(samples, net, opt);

  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  stafnet::save_checkpoint(out, result.checkpoint);
  const fs::path csv = a.loss_csv.empty() ? sibling(out, ".loss.csv") : fs::path(a.loss_csv);
  stafnet::write_loss_curve(csv, result.losses);
  write_json(sibling(out, ".resolved.json"),
             {{"command", "train"},
              {"pairs", a.pairs},
              {"psf", psf_path.generic_string()},
              {"seed", a.seed},
              {"network", stafnet::to_json(net)},
              {"config_hash", stafnet::config_hash(net)},
              {"training",
               {{"steps", opt.steps}, {"lr", opt.lr}, {"cosine", opt.cosine}, {"final_lr_ratio", opt.final_lr_ratio}}},
              {"out", a.out},
              {"loss_csv", csv.generic_string()}});
  std::printf("trained %zu steps on %zu pairs, final loss %.6g\n", opt.steps, pairs.size(),
              result.losses.empty() ? 0.0 : result.losses.back());
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct RestoreArgs {
  std::string in, psf, ckpt, config, out;
  int bit_depth = 16;
};

int restore(const RestoreArgs& a) {
  if (a.bit_depth != 8 && a.bit_depth != 16) throw UsageError("--bit-depth must be 8 or 16");
  const auto ck = stafnet::load_checkpoint(a.ckpt);
  if (!a.config.empty()) {
    stafnet::NetworkConfig expected;
    stafnet::TrainOptions unused;
    read_train_config(a.config, expected, unused);
    stafnet::require_config(ck, expected);
  }
  const auto psf = optics::load_psf_grid(a.psf);
  const auto img = io::read_png(a.in);
  const auto restored = stafnet::network_forward(img.pixels, psf, ck.config, ck.params);
  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  io::write_png(out, restored, a.bit_depth);
  write_json(sibling(out, ".resolved.json"), {{"command", "restore"},
                                              {"in", a.in},
                                              {"psf", a.psf},
                                              {"ckpt", a.ckpt},
                                              {"config_hash", ck.config_hash()},
                                              {"bit_depth", a.bit_depth},
                                              {"out", a.out}});
  std::printf("restored %s -> %s\n", a.in.c_str(), a.out.c_str());
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string restored, clean, report, ckpt, psf;
};

int eval(const EvalArgs& a) {
  metrics::RestorationReport report;
  json errors = json::array();
  for (const auto& r : list_pngs(a.restored)) {
    const fs::path c = fs::path(a.clean) / r.filename();
    if (!fs::exists(c)) {
      errors.push_back({{"file", r.filename().generic_string()}, {"error", "no clean counterpart"}});
      continue;
    }
    const auto x = io::read_png(r).pixels, y = io::read_png(c).pixels;
    report.images.push_back({r.stem().string(), metrics::psnr(x, y), metrics::ssim(x, y)});
  }
  report.aggregate();
  report.provenance = {{"restored", a.restored}, {"clean", a.clean}};
  if (!a.ckpt.empty()) report.provenance["checkpoint_hash"] = stafnet::load_checkpoint(a.ckpt).config_hash();
  if (!a.psf.empty()) report.provenance["psf"] = a.psf;
  const fs::path restored_cfg = fs::path(a.restored) / "resolved_config.json";
  if (fs::exists(restored_cfg)) report.provenance["restored_config"] = read_json(restored_cfg);
  json j = report.to_json();
  j["errors"] = errors;
  const fs::path out(a.report);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_json(out, j);
  write_json(sibling(out, ".resolved.json"), {{"command", "eval"},
                                              {"restored", a.restored},
                                              {"clean", a.clean},
                                              {"ckpt", a.ckpt},
                                              {"psf", a.psf},
                                              {"report", a.report}});
  std::printf("evaluated %zu images: mean PSNR %s dB, mean SSIM %.6f\n", report.images.size(),
              metrics::psnr_to_json(report.mean_psnr_db).dump().c_str(), report.mean_ssim);
  if (report.images.empty()) {
    std::fprintf(stderr, "eval: no restored image has a clean counterpart\n");
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Metalens aberration correction: PSF synthesis, simulation, Wiener banks, STAF network", "metalens"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "metalens 1.0");

  SynthPsfArgs sp;
  auto* c_sp = app.add_subcommand("synth-psf", "Synthesize a field-dependent PSF grid");
  c_sp->add_option("--grid", sp.grid, "Patch grid ROWSxCOLS")->capture_default_str();
  c_sp->add_option("--kernel", sp.kernel, "Odd kernel extent")->capture_default_str();
  c_sp->add_option("--severity", sp.severity, "Aberration severity (0 = Dirac)")->capture_default_str();
  c_sp->add_option("--max-field-angle", sp.max_field_angle, "Field angle at the grid corner, degrees")
      ->capture_default_str();
  c_sp->add_option("--seed", sp.seed, "RNG seed")->required();
  c_sp->add_option("--out", sp.out, "Output PSF file")->required();

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Render aberrated observations from clean PNGs");
  c_sim->add_option("--clean", sim.clean, "Directory of clean PNGs")->required();
  c_sim->add_option("--psf", sim.psf, "PSF grid file")->required();
  c_sim->add_option("--noise-sigma-g", sim.sigma_g, "Gaussian read-noise std")->capture_default_str();
  c_sim->add_option("--noise-sigma-p", sim.sigma_p, "Poisson gain")->capture_default_str();
  c_sim->add_flag("--no-noise", sim.no_noise, "Skip the noise model");
  c_sim->add_option("--boundary", sim.boundary, "Patch boundary: circular or replicate")->capture_default_str();
  c_sim->add_option("--blend-overlap", sim.blend, "Cross-fade width between cells, pixels")->capture_default_str();
  c_sim->add_option("--seed", sim.seed, "Noise seed")->required();
  c_sim->add_option("--out", sim.out, "Output directory")->required();

  DeconvArgs dc;
  bool patchwise = false, global = false;
  auto* c_dc = app.add_subcommand("deconv", "Run the adaptive Wiener filter bank");
  c_dc->add_option("--in", dc.in, "Observed PNG")->required();
  c_dc->add_option("--psf", dc.psf, "PSF grid file")->required();
  c_dc->add_option("--bank", dc.bank, "Filter bank JSON");
  auto* f_pw = c_dc->add_flag("--patchwise", patchwise, "Invert each grid patch with its own PSF");
  c_dc->add_flag("--global", global, "Invert the whole image with the centre PSF")->excludes(f_pw);
  c_dc->add_option("--cutoff", dc.cutoff, "High-band cutoff as a fraction of Nyquist")->capture_default_str();
  c_dc->add_option("--out", dc.out, "Output directory")->required();

  TrainArgs tr;
  std::size_t steps = 0;
  double lr = 0;
  auto* c_tr = app.add_subcommand("train", "Train the restoration network on a simulate manifest");
  c_tr->add_option("--pairs", tr.pairs, "manifest.json from simulate")->required();
  c_tr->add_option("--config", tr.config, "Network or pipeline config JSON");
  auto* o_steps = c_tr->add_option("--steps", steps, "Optimizer steps");
  auto* o_lr = c_tr->add_option("--lr", lr, "Peak learning rate");
  c_tr->add_option("--psf", tr.psf, "PSF grid (defaults to the manifest's)");
  c_tr->add_option("--loss-csv", tr.loss_csv, "Loss curve path (defaults to <out>.loss.csv)");
  c_tr->add_option("--seed", tr.seed, "Initialisation and sampling seed")->required();
  c_tr->add_option("--out", tr.out, "Checkpoint path")->required();

  RestoreArgs rs;
  auto* c_rs = app.add_subcommand("restore", "Restore an observation with a trained checkpoint");
  c_rs->add_option("--in", rs.in, "Observed PNG")->required();
  c_rs->add_option("--psf", rs.psf, "PSF grid file")->required();
  c_rs->add_option("--ckpt", rs.ckpt, "Checkpoint")->required();
  c_rs->add_option("--config", rs.config, "Expected network config; mismatches are rejected");
  c_rs->add_option("--bit-depth", rs.bit_depth, "Output PNG bit depth")->capture_default_str();
  c_rs->add_option("--out", rs.out, "Output PNG")->required();

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "PSNR/SSIM report of restored images against clean ones");
  c_ev->add_option("--restored", ev.restored, "Directory of restored PNGs")->required();
  c_ev->add_option("--clean", ev.clean, "Directory of clean PNGs")->required();
  c_ev->add_option("--report", ev.report, "Report JSON path")->required();
  c_ev->add_option("--ckpt", ev.ckpt, "Checkpoint used, recorded in provenance");
  c_ev->add_option("--psf", ev.psf, "PSF grid used, recorded in provenance");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(std::move(reversed));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*c_sp) return synth_psf(sp);
    if (*c_sim) return simulate(sim);
    if (*c_dc) {
      if (patchwise) dc.patchwise = true;
      if (global) dc.patchwise = false;
      return deconv(dc);
    }
    if (*c_tr) {
      if (*o_steps) tr.steps = steps;
      if (*o_lr) tr.lr = lr;
      return train(tr);
    }
    if (*c_rs) return restore(rs);
    if (*c_ev) return eval(ev);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kExitUsage;
  } catch (const TrainingError& e) {
    std::fprintf(stderr, "error: %s (step %ld)\n", e.what(), e.step());
    return kExitFailure;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFailure;
  }
  return kExitUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace metalens::cli
