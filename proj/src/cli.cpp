#include "imotion/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include "imotion/error.hpp"
#include "imotion/generator.hpp"
#include "imotion/metrics.hpp"
#include "imotion/training.hpp"

namespace imotion {

namespace {

struct Globals {
  std::uint64_t seed = 0;
  int threads = 0;
  std::string config;
};

int resolve_threads(const CLI::App& app, int flag) {
  if (app.count("--threads")) return flag;
  if (const char* env = std::getenv("IMINR_THREADS")) {
    try {
      const int v = std::stoi(env);
      if (v >= 1) return v;
    } catch (const std::exception&) {
    }
    throw InvalidArgument(std::string("IMINR_THREADS must be a positive integer, got '") + env + "'");
  }
  return 1;
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config '" + path + "'");
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidArgument("config '" + path + "' is not valid JSON: " + e.what());
  }
}

std::string format_loss(const EpochLog& e) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "epoch %d rec %.6g kl %.6g total %.6g", e.epoch, e.reconstruction, e.kl, e.total);
  return buf;
}

MotionDataset load_data(const std::string& path) {
  MotionDataset d = read_motions(path);
  if (d.empty()) throw EmptyDataset("'" + path + "' holds no sequences");
  return d;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Variational implicit neural representations for action-conditional motion generation"};
  app.name("imotion");
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random stream")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads (default: $IMINR_THREADS or 1)")->check(CLI::PositiveNumber);
  app.add_option("--config", g.config, "JSON file of overrides, same schema as a checkpoint's config")
      ->check(CLI::ExistingFile);

  // dataset-gen
  auto* gen_cmd = app.add_subcommand("dataset-gen", "Write the procedural synthetic motion dataset");
  std::string gen_out;
  int per_action = 40;
  double noise = 0.01;
  std::string split = "train";
  gen_cmd->add_option("--out", gen_out, "Motion file to write")->required();
  gen_cmd->add_option("--sequences-per-action", per_action)->check(CLI::PositiveNumber)->capture_default_str();
  gen_cmd->add_option("--noise", noise, "Per-frame joint-angle noise (radians)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  gen_cmd->add_option("--split", split)->check(CLI::IsMember({"train", "test"}))->capture_default_str();

  // train
  auto* train_cmd = app.add_subcommand("train", "Optimize decoder and latent codes");
  std::string train_data, train_out, loss_log, resume;
  int log_every = 0;
  TrainConfig flags;
  std::string composition = to_string(flags.composition);
  train_cmd->add_option("--data", train_data, "Training motion file")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", train_out, "Checkpoint to write")->required();
  train_cmd->add_option("--loss-log", loss_log, "CSV loss log (default: <out>.loss.csv)");
  train_cmd->add_option("--resume", resume, "Continue from this checkpoint")->check(CLI::ExistingFile);
  train_cmd->add_option("--log-every", log_every, "Print losses every N epochs (0: final only)");
  train_cmd->add_option("--epochs", flags.epochs)->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--kl-weight", flags.kl_weight)->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--lr-decoder", flags.lr_decoder)->check(CLI::PositiveNumber);
  train_cmd->add_option("--lr-codes", flags.lr_codes)->check(CLI::PositiveNumber);
  train_cmd->add_option("--temporal-minibatch", flags.temporal_minibatch_size)->check(CLI::PositiveNumber);
  train_cmd->add_option("--batch-size", flags.batch_size)->check(CLI::PositiveNumber);
  train_cmd->add_option("--composition", composition)->check(CLI::IsMember({"concat", "add"}));
  train_cmd->add_option("--init-logvar", flags.init_logvar);
  train_cmd->add_option("--root-loss-weight", flags.root_loss_weight)->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--hidden", flags.hidden, "Hidden layer widths")->delimiter(',');
  train_cmd->add_option("--action-dim", flags.action_dim)->check(CLI::PositiveNumber);
  train_cmd->add_option("--sequence-dim", flags.sequence_dim)->check(CLI::PositiveNumber);
  train_cmd->add_option("--embedding-dim", flags.embedding.dim)->check(CLI::PositiveNumber);

  // fit-gmm
  auto* fit_cmd = app.add_subcommand("fit-gmm", "Fit the length- and action-conditional mixture index");
  std::string fit_ckpt, fit_data, fit_out;
  IndexOptions iopts;
  fit_cmd->add_option("--checkpoint", fit_ckpt)->required()->check(CLI::ExistingFile);
  fit_cmd->add_option("--data", fit_data, "Training motion file")->required()->check(CLI::ExistingFile);
  fit_cmd->add_option("--out", fit_out, "GMM index to write")->required();
  fit_cmd->add_option("--k-init", iopts.gmm.k_init)->check(CLI::PositiveNumber)->capture_default_str();
  fit_cmd->add_option("--max-retries", iopts.gmm.max_retries)->check(CLI::PositiveNumber)->capture_default_str();
  fit_cmd->add_option("--collapse-ratio", iopts.gmm.collapse_threshold_ratio)
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  fit_cmd->add_option("--draws", iopts.draws)->check(CLI::PositiveNumber)->capture_default_str();
  fit_cmd->add_option("--d-min", iopts.intervals.d_min)->capture_default_str();
  fit_cmd->add_option("--p-min", iopts.intervals.p_min)->capture_default_str();
  fit_cmd->add_option("--d-overlap", iopts.intervals.d_overlap)->capture_default_str();

  // sample
  auto* sample_cmd = app.add_subcommand("sample", "Generate novel motions");
  std::string s_ckpt, s_gmm, s_out;
  int s_action = 0, s_length = 0, s_count = 1;
  sample_cmd->add_option("--checkpoint", s_ckpt)->required()->check(CLI::ExistingFile);
  sample_cmd->add_option("--gmm", s_gmm)->required()->check(CLI::ExistingFile);
  sample_cmd->add_option("--action", s_action)->required()->check(CLI::NonNegativeNumber);
  sample_cmd->add_option("--length", s_length)->required()->check(CLI::PositiveNumber);
  sample_cmd->add_option("--count", s_count)->check(CLI::PositiveNumber)->capture_default_str();
  sample_cmd->add_option("--out", s_out, "Motion file to write")->required();

  // reconstruct
  auto* rec_cmd = app.add_subcommand("reconstruct", "Decode a training sequence from its optimized code");
  std::string r_ckpt, r_data, r_id, r_out;
  rec_cmd->add_option("--checkpoint", r_ckpt)->required()->check(CLI::ExistingFile);
  rec_cmd->add_option("--data", r_data, "Training motion file")->required()->check(CLI::ExistingFile);
  rec_cmd->add_option("--id", r_id)->required();
  rec_cmd->add_option("--out", r_out, "Motion file to write")->required();

  // train-classifier
  auto* cls_cmd = app.add_subcommand("train-classifier", "Train and freeze the evaluation feature extractor");
  std::string c_data, c_out;
  ExtractorTrainConfig ccfg;
  cls_cmd->add_option("--data", c_data)->required()->check(CLI::ExistingFile);
  cls_cmd->add_option("--out", c_out)->required();
  cls_cmd->add_option("--epochs", ccfg.epochs)->check(CLI::NonNegativeNumber)->capture_default_str();
  cls_cmd->add_option("--hidden", ccfg.hidden)->check(CLI::PositiveNumber)->capture_default_str();
  cls_cmd->add_option("--target-len", ccfg.target_len)->check(CLI::PositiveNumber)->capture_default_str();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Compute the metrics report over repeated generations");
  std::string e_ckpt, e_gmm, e_data, e_fx, e_report, e_generator = "gmm";
  EvalOptions eopts;
  bool no_timestamp = false;
  eval_cmd->add_option("--data", e_data, "Training motion file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--checkpoint", e_ckpt)->check(CLI::ExistingFile);
  eval_cmd->add_option("--gmm", e_gmm)->check(CLI::ExistingFile);
  eval_cmd->add_option("--extractor", e_fx, "Frozen classifier (default: train one on --data)")
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--report", e_report, "Also write the report here");
  eval_cmd->add_option("--generator", e_generator)->check(CLI::IsMember({"gmm", "replay"}))->capture_default_str();
  eval_cmd->add_option("--repeats", eopts.repeats)->check(CLI::PositiveNumber)->capture_default_str();
  eval_cmd->add_option("--target-len", eopts.target_len)->check(CLI::PositiveNumber)->capture_default_str();
  eval_cmd->add_option("--count", eopts.generated_count, "Motions per repeat (0: training set size)");
  eval_cmd->add_flag("--no-timestamp", no_timestamp, "Omit the timestamp from the report");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    const int threads = resolve_threads(app, g.threads);

    if (*gen_cmd) {
      SyntheticDatasetSpec spec = default_dataset_spec();
      spec.seed = g.seed;
      spec.sequences_per_action = per_action;
      spec.noise = noise;
      spec.split = split == "test" ? Split::kTest : Split::kTrain;
      const MotionDataset d = generate_synthetic_dataset(spec);
      write_motions(gen_out, d);
      out << "wrote " << d.size() << " sequences to " << gen_out << '\n';
    } else if (*train_cmd) {
      const MotionDataset data = load_data(train_data);
      TrainState state;
      if (!resume.empty()) {
        state = load_checkpoint(resume);
        if (train_cmd->count("--epochs")) state.config.epochs = flags.epochs;
      } else {
        TrainConfig cfg;
        if (!g.config.empty()) apply_json(cfg, read_json_file(g.config));
        if (app.count("--seed") || g.config.empty()) cfg.seed = g.seed;
        if (train_cmd->count("--epochs")) cfg.epochs = flags.epochs;
        if (train_cmd->count("--kl-weight")) cfg.kl_weight = flags.kl_weight;
        if (train_cmd->count("--lr-decoder")) cfg.lr_decoder = flags.lr_decoder;
        if (train_cmd->count("--lr-codes")) cfg.lr_codes = flags.lr_codes;
        if (train_cmd->count("--temporal-minibatch")) cfg.temporal_minibatch_size = flags.temporal_minibatch_size;
        if (train_cmd->count("--batch-size")) cfg.batch_size = flags.batch_size;
        if (train_cmd->count("--composition")) cfg.composition = composition_from_string(composition);
        if (train_cmd->count("--init-logvar")) cfg.init_logvar = flags.init_logvar;
        if (train_cmd->count("--root-loss-weight")) cfg.root_loss_weight = flags.root_loss_weight;
        if (train_cmd->count("--hidden")) cfg.hidden = flags.hidden;
        if (train_cmd->count("--action-dim")) cfg.action_dim = flags.action_dim;
        if (train_cmd->count("--sequence-dim")) cfg.sequence_dim = flags.sequence_dim;
        if (train_cmd->count("--embedding-dim")) cfg.embedding.dim = flags.embedding.dim;
        state = init_training(data, cfg);
      }
      state.config.threads = threads;
      Trainer trainer(data, std::move(state));
      while (trainer.state().epoch < trainer.state().config.epochs) {
        const EpochLog e = trainer.run_epoch();
        if (log_every > 0 && e.epoch % log_every == 0) out << format_loss(e) << '\n';
      }
      const TrainState& s = trainer.state();
      save_checkpoint(train_out, s);
      write_loss_log(loss_log.empty() ? train_out + ".loss.csv" : loss_log, s.history);
      if (!s.history.empty()) out << format_loss(s.history.back()) << '\n';
      out << "wrote checkpoint " << train_out << '\n';
    } else if (*fit_cmd) {
      const TrainState s = load_checkpoint(fit_ckpt);
      const MotionDataset data = load_data(fit_data);
      const ConditionalGmmIndex index = build_gmm_index(s.codebook, data, iopts, g.seed);
      save_gmm_index(fit_out, index);
      for (const auto& e : index.entries) {
        out << "action " << e.action << " [" << e.interval.t_left << ", " << e.interval.t_right << "] K "
            << e.gmm.components() << " attempts " << e.attempts << '\n';
      }
    } else if (*sample_cmd) {
      const TrainState s = load_checkpoint(s_ckpt);
      const ConditionalGmmIndex index = load_gmm_index(s_gmm);
      Rng rng(g.seed);
      MotionDataset outset;
      for (int i = 0; i < s_count; ++i) {
        MotionSequence m =
            generate_motion(s.decoder, s.codebook, index, s_action, s_length, s.config.embedding, rng);
        char id[32];
        std::snprintf(id, sizeof id, "sample_%04d", i);
        m.id = id;
        outset.sequences.push_back(std::move(m));
      }
      write_motions(s_out, outset);
      out << "wrote " << s_count << " motions to " << s_out << '\n';
    } else if (*rec_cmd) {
      const TrainState s = load_checkpoint(r_ckpt);
      const MotionDataset data = load_data(r_data);
      const MotionSequence& seq = data.find(r_id);
      const auto beta = s.codebook.sequence_codes.find(r_id);
      const auto alpha = s.codebook.action_codes.find(seq.action);
      if (beta == s.codebook.sequence_codes.end() || alpha == s.codebook.action_codes.end()) {
        throw UnknownSequence("checkpoint has no code for '" + r_id + "'");
      }
      const Eigen::VectorXd code = compose_code(alpha->second.mean, beta->second.mean, s.codebook.composition);
      MotionSequence rec = decode_sequence(s.decoder, code, static_cast<int>(seq.length()), s.config.embedding);
      rec.id = seq.id;
      rec.action = seq.action;
      double se = 0.0;
      for (std::size_t t = 0; t < seq.length(); ++t) se += (rec.poses[t].values - seq.poses[t].values).squaredNorm();
      MotionDataset outset;
      outset.sequences.push_back(std::move(rec));
      write_motions(r_out, outset);
      char buf[96];
      std::snprintf(buf, sizeof buf, "mean per-frame squared error %.6g", se / static_cast<double>(seq.length()));
      out << buf << '\n';
    } else if (*cls_cmd) {
      const MotionDataset data = load_data(c_data);
      ccfg.seed = g.seed;
      ExtractorTrainLog log;
      const FeatureExtractor fx = train_feature_extractor(data, ccfg, &log);
      save_feature_extractor(c_out, fx);
      char buf[128];
      std::snprintf(buf, sizeof buf, "final loss %.6g window accuracy %.4f digest %016llx",
                    log.loss.empty() ? 0.0 : log.loss.back(),
                    log.train_accuracy.empty() ? 0.0 : log.train_accuracy.back(),
                    static_cast<unsigned long long>(fx.digest()));
      out << buf << '\n';
    } else if (*eval_cmd) {
      const MotionDataset data = load_data(e_data);
      FeatureExtractor fx;
      if (e_fx.empty()) {
        ExtractorTrainConfig cfg;
        cfg.seed = g.seed;
        cfg.target_len = eopts.target_len;
        fx = train_feature_extractor(data, cfg);
      } else {
        fx = load_feature_extractor(e_fx);
      }
      eopts.seed = g.seed;
      eopts.threads = threads;
      MetricsReport report;
      if (e_generator == "replay") {
        report = evaluate(replay_generator(data), data, fx, eopts);
      } else {
        if (e_ckpt.empty() || e_gmm.empty()) {
          err << "eval with --generator gmm needs --checkpoint and --gmm\n" << eval_cmd->help();
          return kExitUsage;
        }
        const TrainState s = load_checkpoint(e_ckpt);
        const ConditionalGmmIndex index = load_gmm_index(e_gmm);
        const MotionGenerator gen = [&](int action, int length, Rng& rng) {
          return generate_motion(s.decoder, s.codebook, index, action, length, s.config.embedding, rng);
        };
        report = evaluate(gen, data, fx, eopts);
      }
      const auto j = to_json(report, !no_timestamp);
      out << j.dump(2) << '\n';
      if (!e_report.empty()) write_report(e_report, report, !no_timestamp);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace imotion
