// geoflow command-line driver.
#include "geoflow/cli/pipeline.hpp"
#include "geoflow/io/container.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

namespace {

using namespace geoflow;

enum Exit { kOk = 0, kConfigOrIo = 1 };

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string profile;
  std::string study;
};

cli::RunConfig resolve(const std::string& command, const Options& o) {
  const cli::Profile profile = o.profile.empty() ? cli::Profile::none : cli::parse_profile(o.profile);
  cli::RunConfig cfg;
  if (!o.config.empty()) {
    cfg = cli::load_config(o.config);
  } else if (command == "reproduce") {
    cfg = cli::study_config(o.study, profile == cli::Profile::none ? cli::Profile::full : profile);
  } else {
    throw ConfigError("--config is required for `" + command + "`");
  }
  cfg.apply_profile(profile);
  if (o.seed) cfg.set_seed(*o.seed);
  if (!o.out.empty()) cfg.output_dir = o.out;
  cfg.validate();
  return cfg;
}

int run(const std::string& command, const Options& o) {
  const cli::RunConfig cfg = resolve(command, o);
  const cli::fs::path out = cfg.output_dir;
  std::error_code ec;
  cli::fs::create_directories(out, ec);
  if (ec) throw io::IoError("cannot create output directory " + out.string() + ": " + ec.message());
  cli::Manifest manifest(out);
  if (command == "train") {
    cli::run_train(cfg, out, manifest);
  } else if (command == "sample") {
    cli::run_sample(cfg, out, manifest);
  } else if (command == "generate") {
    cli::run_generate(cfg, out, manifest);
  } else if (command == "evaluate") {
    cli::run_evaluate(cfg, out, manifest);
  } else {
    const auto st = cli::run_reproduce(o.study, cfg, out, manifest);
    for (const auto& c : st.checks)
      std::cout << (c.held ? "HELD   " : "FAILED ") << c.name << ": " << c.detail << "\n";
    std::cout << "report written to " << out.string() << "\n";
    return kOk;
  }
  manifest.write(cfg);
  std::cout << command << " finished; outputs in " << out.string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"geoflow: flow-matching generators with Euclidean and Riemannian Laplace posteriors"};
  app.require_subcommand(1);
  Options o;
  auto add_common = [&](CLI::App* sub, bool config_required) {
    auto* c = sub->add_option("--config", o.config, "run configuration (JSON)");
    if (config_required) c->required();
    sub->add_option("--out", o.out, "output directory (overrides output_dir)");
    sub->add_option("--seed", o.seed, "global seed (overrides the config)");
    sub->add_option("--profile", o.profile, "size profile")->check(CLI::IsMember({"smoke", "full"}));
  };
  for (const char* name : {"train", "sample", "generate", "evaluate"}) {
    auto* sub = app.add_subcommand(name);
    add_common(sub, true);
  }
  auto* rep = app.add_subcommand("reproduce", "run train, sample, generate and evaluate for a toy study");
  rep->add_option("study", o.study, "1d or 2d")->required()->check(CLI::IsMember({"1d", "2d"}));
  add_common(rep, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigOrIo;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return run(command, o);
  } catch (const std::exception& e) {
    std::cerr << cli::error_label(e) << ": " << e.what() << "\n";
    return cli::exit_status(e);
  }
}
