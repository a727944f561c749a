// semcom: dataset generation, training, batch sessions, rendering,
// reporting and the operator gateway.

#include <csignal>
#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "semcom/gateway.hpp"
#include "semcom/semcom.hpp"

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Config file (key = value with [sections])");
  cmd->add_option("--seed", c.seed, "Seed override for the command's main stream");
  cmd->add_option("--out", c.out, "Output root (default: $SEMCOM_OUT or ./semcom-out)");
  cmd->add_option("--set", c.sets, "Override a config key, e.g. --set denoiser.epochs=4");
}

// Precedence: built-in defaults < config file < $SEMCOM_OUT < --set < --out/--seed.
semcom::ExperimentConfig resolve(const Common& c, const char* seed_key) {
  semcom::ConfigFile f;
  if (!c.config.empty()) f = semcom::ConfigFile::load(c.config);
  if (!f.has("paths.out")) f.set("paths.out", semcom::default_out_root().string());
  for (const auto& s : c.sets) f.set_override(s);
  if (!c.out.empty()) f.set("paths.out", c.out);
  if (c.seed && seed_key) f.set(seed_key, std::to_string(*c.seed));
  return semcom::ExperimentConfig::from(f);
}

void log_line(const std::string& s) { std::cerr << s << std::endl; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Task-adaptive semantic communication experiments"};
  app.require_subcommand(1);

  Common gen_c, train_c, run_c, serve_c;
  auto* gen = app.add_subcommand("gen-data", "Write the training scenes and manifest");
  add_common(gen, gen_c);

  auto* train = app.add_subcommand("train", "Train the classifier or the denoiser");
  add_common(train, train_c);
  std::string which;
  bool resume = false;
  train->add_option("which", which, "classifier | denoiser")->required();
  train->add_flag("--resume", resume, "Continue from the existing checkpoint");

  auto* run = app.add_subcommand("run", "Run every variant on the held-out scenes and write the report");
  add_common(run, run_c);

  auto* render = app.add_subcommand("render", "Write one raster per reconstruction in a transcript");
  std::string transcript, render_out;
  render->add_option("transcript", transcript, "Transcript file (.jsonl)")->required();
  render->add_option("--out", render_out, "Output directory (default: next to the transcript)");

  auto* report = app.add_subcommand("report", "Rebuild the report from stored transcripts");
  std::string runs_dir;
  std::string csv_path;
  report->add_option("dir", runs_dir, "Directory containing transcripts")->required();
  report->add_option("--csv", csv_path, "Also write the delimited report here");

  auto* serve = app.add_subcommand("serve", "Serve the operator HTTP gateway");
  add_common(serve, serve_c);
  std::string host = "127.0.0.1";
  int port = 8080, workers = 1;
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port");
  serve->add_option("--workers", workers, "Sampling threads");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const auto cfg = resolve(gen_c, "data.seed");
      std::printf("manifest digest %s\n", semcom::hex64(semcom::cmd_gen_data(cfg, log_line)).c_str());
    } else if (*train) {
      const auto target = semcom::parse_train_target(which);
      const auto cfg = resolve(train_c, target == semcom::TrainTarget::Classifier ? "classifier.seed" : "denoiser.seed");
      const auto path = semcom::cmd_train(cfg, target, resume, log_line);
      const auto bytes = semcom::read_file(path);
      std::printf("wrote %s (digest %s)\n", path.string().c_str(), semcom::hex64(semcom::fnv1a64(bytes)).c_str());
    } else if (*run) {
      const auto cfg = resolve(run_c, "session.seed");
      const auto res = semcom::cmd_run(cfg, log_line);
      std::fputs(semcom::report_table(res.report).c_str(), stdout);
    } else if (*render) {
      const std::filesystem::path t(transcript);
      const auto dir = render_out.empty() ? t.parent_path() / t.stem() : std::filesystem::path(render_out);
      for (const auto& p : semcom::cmd_render(t, dir)) std::printf("%s\n", p.string().c_str());
    } else if (*report) {
      const auto rep = semcom::cmd_report(runs_dir);
      std::fputs(semcom::report_table(rep).c_str(), stdout);
      if (!csv_path.empty()) semcom::write_text(csv_path, semcom::report_csv(rep));
    } else if (*serve) {
      const auto cfg = resolve(serve_c, "session.seed");
      semcom::Gateway gw(cfg, workers);
      gw.set_models(semcom::load_models(cfg, true));
      httplib::Server server;
      semcom::bind_http(server, gw);
      log_line("listening on http://" + host + ":" + std::to_string(port));
      if (!server.listen(host, port)) {
        std::fprintf(stderr, "error: cannot listen on %s:%d\n", host.c_str(), port);
        return 1;
      }
    }
  } catch (const semcom::Error& e) {
    std::fprintf(stderr, "error: %s: %s\n", e.name().data(), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
