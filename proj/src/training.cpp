#include "imotion/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "imotion/error.hpp"
#include "imotion/parallel.hpp"
#include "imotion/tensor_io.hpp"

namespace imotion {

// ---------------------------------------------------------------------------
// Configuration

void TrainConfig::validate() const {
  auto positive = [](bool ok, const char* what) {
    if (!ok) throw InvalidArgument(std::string(what) + " must be positive");
  };
  positive(lr_decoder > 0, "lr_decoder");
  positive(lr_codes > 0, "lr_codes");
  positive(epochs >= 0, "epochs");
  positive(temporal_minibatch_size > 0, "temporal_minibatch_size");
  positive(batch_size > 0, "batch_size");
  positive(action_dim > 0, "action_dim");
  positive(sequence_dim > 0, "sequence_dim");
  positive(embedding.dim > 0 && embedding.dim % 2 == 0, "embedding_dim (even)");
  positive(embedding.base > 0, "embedding_base");
  if (kl_weight < 0) throw InvalidArgument("kl_weight must be non-negative");
  if (root_loss_weight < 0) throw InvalidArgument("root_loss_weight must be non-negative");
  for (auto h : hidden) positive(h > 0, "hidden layer width");
  (void)code_dim();
}

nlohmann::ordered_json to_json(const TrainConfig& c) {
  return {{"kl_weight", c.kl_weight},
          {"lr_decoder", c.lr_decoder},
          {"lr_codes", c.lr_codes},
          {"epochs", c.epochs},
          {"temporal_minibatch_size", c.temporal_minibatch_size},
          {"batch_size", c.batch_size},
          {"composition", to_string(c.composition)},
          {"init_logvar", c.init_logvar},
          {"seed", c.seed},
          {"root_loss_weight", c.root_loss_weight},
          {"hidden", c.hidden},
          {"action_dim", c.action_dim},
          {"sequence_dim", c.sequence_dim},
          {"embedding_dim", c.embedding.dim},
          {"embedding_base", c.embedding.base}};
}

void apply_json(TrainConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw InvalidArgument("train config must be an object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "kl_weight") c.kl_weight = v.get<double>();
      else if (key == "lr_decoder") c.lr_decoder = v.get<double>();
      else if (key == "lr_codes") c.lr_codes = v.get<double>();
      else if (key == "epochs") c.epochs = v.get<int>();
      else if (key == "temporal_minibatch_size") c.temporal_minibatch_size = v.get<int>();
      else if (key == "batch_size") c.batch_size = v.get<int>();
      else if (key == "composition") c.composition = composition_from_string(v.get<std::string>());
      else if (key == "init_logvar") c.init_logvar = v.get<double>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "root_loss_weight") c.root_loss_weight = v.get<double>();
      else if (key == "hidden") c.hidden = v.get<std::vector<std::size_t>>();
      else if (key == "action_dim") c.action_dim = v.get<std::size_t>();
      else if (key == "sequence_dim") c.sequence_dim = v.get<std::size_t>();
      else if (key == "embedding_dim") c.embedding.dim = v.get<std::size_t>();
      else if (key == "embedding_base") c.embedding.base = v.get<double>();
      else if (key == "threads") c.threads = v.get<int>();
      else throw InvalidArgument("unknown train config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("bad train config value: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Reconstruction loss

namespace {

// Target poses (one column per frame) and root-relative joint positions.
struct SequenceTarget {
  Eigen::MatrixXd poses;
  Eigen::MatrixXd joints;  // 3P x T
};

SequenceTarget make_target(const MotionSequence& seq, const SkeletonTopology& topo) {
  const auto dim = static_cast<Eigen::Index>(topo.pose_dim());
  const auto T = static_cast<Eigen::Index>(seq.length());
  SequenceTarget tgt;
  tgt.poses.resize(dim, T);
  tgt.joints.resize(static_cast<Eigen::Index>(3 * topo.joint_count()), T);
  for (Eigen::Index t = 0; t < T; ++t) {
    const auto& v = seq.poses[static_cast<std::size_t>(t)].values;
    if (v.size() != dim) throw DimensionMismatch("sequence '" + seq.id + "' pose dimension differs from skeleton");
    tgt.poses.col(t) = v;
    const FkTape tape = forward_kinematics_tape({v.data(), static_cast<std::size_t>(dim)}, topo, false);
    for (std::size_t j = 0; j < topo.joint_count(); ++j) {
      tgt.joints.block<3, 1>(static_cast<Eigen::Index>(3 * j), t) = tape.position[j];
    }
  }
  return tgt;
}

struct BatchItem {
  const SequenceTarget* target = nullptr;
  Eigen::VectorXd code;
  std::vector<int> times;
  double weight = 1.0;  // multiplies this item's mean loss in the objective
};

struct BatchOutput {
  std::vector<double> reconstruction;
  std::vector<Eigen::VectorXd> grad_code;
};

template <typename EmbeddingFn>
BatchOutput batch_reconstruction(const MlpDecoder& dec, const SkeletonTopology& topo,
                                 const std::vector<BatchItem>& items, EmbeddingFn&& embedding,
                                 double root_weight, std::span<double> grad_params, bool want_code_grad,
                                 int threads) {
  const std::size_t code_dim = items.empty() ? 0 : static_cast<std::size_t>(items[0].code.size());
  std::vector<std::size_t> first(items.size() + 1, 0);
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].times.empty()) throw EmptyTimeSubset("no time steps selected");
    first[i + 1] = first[i] + items[i].times.size();
  }
  const std::size_t cols = first.back();
  Eigen::MatrixXd X(static_cast<Eigen::Index>(dec.input_dim()), static_cast<Eigen::Index>(cols));
  std::vector<std::pair<std::size_t, int>> owner(cols);
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (static_cast<std::size_t>(items[i].code.size()) != code_dim) throw DimensionMismatch("mixed code sizes");
    for (std::size_t k = 0; k < items[i].times.size(); ++k) {
      const std::size_t c = first[i] + k;
      const int t = items[i].times[k];
      owner[c] = {i, t};
      const Eigen::VectorXd& tau = embedding(t);
      if (code_dim + static_cast<std::size_t>(tau.size()) != dec.input_dim()) {
        throw DimensionMismatch("code + embedding size differs from decoder input");
      }
      X.col(static_cast<Eigen::Index>(c)) << items[i].code, tau;
    }
  }

  MlpDecoder::Cache cache;
  const Eigen::MatrixXd Y = dec.forward_batch(X, &cache);
  const std::size_t P = topo.joint_count();
  const auto rot_dim = static_cast<Eigen::Index>(6 * P);
  Eigen::MatrixXd G(Y.rows(), Y.cols());
  std::vector<double> frame_loss(cols, 0.0);

  parallel_for(cols, threads, [&](std::size_t c) {
    const auto [i, t] = owner[c];
    const BatchItem& item = items[i];
    const auto ci = static_cast<Eigen::Index>(c);
    const Eigen::VectorXd out = Y.col(ci);
    const Eigen::VectorXd diff = out - item.target->poses.col(t);
    double loss = diff.head(rot_dim).squaredNorm() + root_weight * diff.tail<3>().squaredNorm();
    Eigen::VectorXd g(out.size());
    g.head(rot_dim) = 2.0 * diff.head(rot_dim);
    g.tail<3>() = 2.0 * root_weight * diff.tail<3>();

    const std::span<const double> pose(out.data(), static_cast<std::size_t>(out.size()));
    const FkTape tape = forward_kinematics_tape(pose, topo, false);
    std::vector<Eigen::Vector3d> gpos(P);
    for (std::size_t j = 0; j < P; ++j) {
      const Eigen::Vector3d d = tape.position[j] - item.target->joints.block<3, 1>(static_cast<Eigen::Index>(3 * j), t);
      loss += d.squaredNorm();
      gpos[j] = 2.0 * d;
    }
    forward_kinematics_backward(pose, tape, topo, gpos, {g.data(), static_cast<std::size_t>(g.size())}, false);

    const double scale = item.weight / static_cast<double>(item.times.size());
    frame_loss[c] = loss;
    G.col(ci) = scale * g;
  });

  BatchOutput out;
  out.reconstruction.assign(items.size(), 0.0);
  for (std::size_t i = 0; i < items.size(); ++i) {
    double s = 0.0;
    for (std::size_t c = first[i]; c < first[i + 1]; ++c) s += frame_loss[c];
    out.reconstruction[i] = s / static_cast<double>(items[i].times.size());
  }
  if (grad_params.empty() && !want_code_grad) return out;

  Eigen::MatrixXd gin;
  dec.backward_batch(cache, G, grad_params, want_code_grad ? &gin : nullptr);
  if (want_code_grad) {
    out.grad_code.resize(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
      out.grad_code[i] = gin.block(0, static_cast<Eigen::Index>(first[i]), static_cast<Eigen::Index>(code_dim),
                                   static_cast<Eigen::Index>(first[i + 1] - first[i]))
                             .rowwise()
                             .sum();
    }
  }
  return out;
}

}  // namespace

ReconstructionResult reconstruction_loss(const MotionSequence& seq, const Eigen::VectorXd& code_sample,
                                         const MlpDecoder& dec, const SkeletonTopology& topo,
                                         std::span<const int> time_subset, const LossOptions& opts) {
  if (time_subset.empty()) throw EmptyTimeSubset("time subset is empty");
  for (int t : time_subset) {
    if (t < 0 || static_cast<std::size_t>(t) >= seq.length()) {
      throw InvalidArgument("time index " + std::to_string(t) + " outside sequence of length " +
                            std::to_string(seq.length()));
    }
  }
  if (dec.output_dim() != topo.pose_dim()) throw DimensionMismatch("decoder output differs from pose dimension");
  const SequenceTarget tgt = make_target(seq, topo);
  std::vector<BatchItem> items(1);
  items[0].target = &tgt;
  items[0].code = code_sample;
  items[0].times.assign(time_subset.begin(), time_subset.end());

  ReconstructionResult r;
  r.grad_params.assign(dec.parameter_count(), 0.0);
  Eigen::VectorXd tau;
  const auto out = batch_reconstruction(
      dec, topo, items,
      [&](int t) -> const Eigen::VectorXd& { return tau = temporal_embedding(t, opts.embedding); },
      opts.root_loss_weight, r.grad_params, true, 1);
  r.loss = out.reconstruction[0];
  r.grad_code = out.grad_code[0];
  return r;
}

LossBreakdown total_loss(const MotionSequence& seq, const CodeBook& book, const MlpDecoder& dec,
                         const TrainConfig& cfg, Rng& rng) {
  const auto bit = book.sequence_codes.find(seq.id);
  const auto ait = book.action_codes.find(seq.action);
  if (bit == book.sequence_codes.end()) throw UnknownSequence("no code for sequence '" + seq.id + "'");
  if (ait == book.action_codes.end()) throw UnknownSequence("no code for action " + std::to_string(seq.action));
  Eigen::VectorXd na(ait->second.dim()), nb(bit->second.dim());
  rng.fill_normal({na.data(), static_cast<std::size_t>(na.size())});
  rng.fill_normal({nb.data(), static_cast<std::size_t>(nb.size())});
  const Eigen::VectorXd code =
      compose_code(sample_code(ait->second, na), sample_code(bit->second, nb), book.composition);
  std::vector<int> all(seq.length());
  for (std::size_t t = 0; t < all.size(); ++t) all[t] = static_cast<int>(t);
  const auto rec =
      reconstruction_loss(seq, code, dec, default_skeleton(), all, {cfg.root_loss_weight, cfg.embedding});
  LossBreakdown b;
  b.reconstruction = rec.loss;
  b.kl = kl_divergence(ait->second) + kl_divergence(bit->second);
  b.total = b.reconstruction + cfg.kl_weight * b.kl;
  return b;
}

std::vector<int> sample_time_subset(int length, int k, Rng& rng) {
  if (length <= 0) throw EmptyTimeSubset("sequence has no frames");
  std::vector<int> out;
  if (length <= k) {
    for (int t = 0; t < length; ++t) out.push_back(t);
    return out;
  }
  for (std::size_t t : rng.sample_without_replacement(static_cast<std::size_t>(length), static_cast<std::size_t>(k))) {
    out.push_back(static_cast<int>(t));
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Training state

std::uint64_t TrainState::rng_digest() const {
  return mix_seed(config.seed, static_cast<std::uint64_t>(epoch));
}

TrainState init_training(const MotionDataset& data, const TrainConfig& cfg) {
  if (data.empty()) throw EmptyDataset("training set has no sequences");
  cfg.validate();
  data.validate();
  TrainState s;
  s.config = cfg;
  s.decoder = build_decoder(cfg.hidden, cfg.code_dim() + cfg.embedding.dim, data.skeleton.pose_dim(),
                            mix_seed(cfg.seed, 0x646563ULL));
  s.decoder_adam = AdamState(s.decoder.parameter_count(), cfg.lr_decoder);
  s.codebook.composition = cfg.composition;
  for (const auto& seq : data.sequences) {
    s.codebook.sequence_codes.emplace(seq.id, VariationalCode(cfg.sequence_dim, cfg.init_logvar));
    s.sequence_adam.emplace(seq.id, AdamState(2 * cfg.sequence_dim, cfg.lr_codes));
    if (!s.codebook.action_codes.count(seq.action)) {
      s.codebook.action_codes.emplace(seq.action, VariationalCode(cfg.action_dim, cfg.init_logvar));
      s.action_adam.emplace(seq.action, AdamState(2 * cfg.action_dim, cfg.lr_codes));
    }
  }
  return s;
}

struct Trainer::Target : SequenceTarget {};

Trainer::Trainer(const MotionDataset& data, TrainState state) : data_(data), state_(std::move(state)) {
  if (data_.empty()) throw EmptyDataset("training set has no sequences");
  std::size_t max_len = 0;
  for (const auto& seq : data_.sequences) {
    if (!state_.codebook.sequence_codes.count(seq.id)) {
      throw UnknownSequence("checkpoint has no code for sequence '" + seq.id + "'");
    }
    auto t = std::make_shared<Target>();
    static_cast<SequenceTarget&>(*t) = make_target(seq, data_.skeleton);
    targets_.push_back(std::move(t));
    max_len = std::max(max_len, seq.length());
  }
  for (std::size_t t = 0; t < max_len; ++t) {
    embeddings_.push_back(temporal_embedding(static_cast<double>(t), state_.config.embedding));
  }
}

namespace {

void pack(const VariationalCode& vc, std::vector<double>& out) {
  out.assign(vc.mean.data(), vc.mean.data() + vc.mean.size());
  out.insert(out.end(), vc.log_variance.data(), vc.log_variance.data() + vc.log_variance.size());
}

void unpack(const std::vector<double>& in, VariationalCode& vc) {
  const auto d = static_cast<std::size_t>(vc.mean.size());
  for (std::size_t k = 0; k < d; ++k) {
    vc.mean[static_cast<Eigen::Index>(k)] = in[k];
    vc.log_variance[static_cast<Eigen::Index>(k)] = in[d + k];
  }
}

struct Draw {
  Eigen::VectorXd noise_alpha, noise_beta, code;
};

Draw draw_code(const CodeBook& book, const std::string& id, int action, Rng& rng) {
  const VariationalCode& a = book.action_codes.at(action);
  const VariationalCode& b = book.sequence_codes.at(id);
  Draw d;
  d.noise_alpha.resize(a.mean.size());
  d.noise_beta.resize(b.mean.size());
  rng.fill_normal({d.noise_alpha.data(), static_cast<std::size_t>(d.noise_alpha.size())});
  rng.fill_normal({d.noise_beta.data(), static_cast<std::size_t>(d.noise_beta.size())});
  d.code = compose_code(sample_code(a, d.noise_alpha), sample_code(b, d.noise_beta), book.composition);
  return d;
}

}  // namespace

void Trainer::code_step(std::span<const std::size_t> batch, Rng& rng, EpochLog* log) {
  const TrainConfig& cfg = state_.config;
  CodeBook& book = state_.codebook;
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  std::vector<BatchItem> items(batch.size());
  std::vector<Draw> draws(batch.size());
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const MotionSequence& seq = data_.sequences[batch[k]];
    draws[k] = draw_code(book, seq.id, seq.action, rng);
    items[k].target = targets_[batch[k]].get();
    items[k].code = draws[k].code;
    items[k].times = sample_time_subset(static_cast<int>(seq.length()), cfg.temporal_minibatch_size, rng);
    items[k].weight = inv_b;
  }
  const auto out = batch_reconstruction(
      state_.decoder, data_.skeleton, items, [&](int t) -> const Eigen::VectorXd& { return embeddings_[t]; },
      cfg.root_loss_weight, {}, true, cfg.threads);

  std::map<int, CodeGradient> alpha_grad;
  std::vector<double> params, grads;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const MotionSequence& seq = data_.sequences[batch[k]];
    VariationalCode& beta = book.sequence_codes.at(seq.id);
    const VariationalCode& alpha = book.action_codes.at(seq.action);
    const double kl = kl_divergence(alpha) + kl_divergence(beta);
    if (log) {
      log->reconstruction += out.reconstruction[k];
      log->kl += kl;
      log->total += out.reconstruction[k] + cfg.kl_weight * kl;
    }

    Eigen::VectorXd ga, gb;
    compose_code_backward(out.grad_code[k], alpha.dim(), book.composition, ga, gb);
    CodeGradient ca = sample_code_backward(alpha, draws[k].noise_alpha, ga);
    const CodeGradient ka = kl_gradient(alpha);
    ca.mean += cfg.kl_weight * inv_b * ka.mean;
    ca.log_variance += cfg.kl_weight * inv_b * ka.log_variance;
    auto [it, fresh] = alpha_grad.try_emplace(seq.action, ca);
    if (!fresh) {
      it->second.mean += ca.mean;
      it->second.log_variance += ca.log_variance;
    }

    CodeGradient cb = sample_code_backward(beta, draws[k].noise_beta, gb);
    const CodeGradient kb = kl_gradient(beta);
    cb.mean += cfg.kl_weight * inv_b * kb.mean;
    cb.log_variance += cfg.kl_weight * inv_b * kb.log_variance;

    pack(beta, params);
    grads.assign(cb.mean.data(), cb.mean.data() + cb.mean.size());
    grads.insert(grads.end(), cb.log_variance.data(), cb.log_variance.data() + cb.log_variance.size());
    adam_step(state_.sequence_adam.at(seq.id), params, grads);
    unpack(params, beta);
  }
  for (auto& [action, g] : alpha_grad) {
    VariationalCode& alpha = book.action_codes.at(action);
    pack(alpha, params);
    grads.assign(g.mean.data(), g.mean.data() + g.mean.size());
    grads.insert(grads.end(), g.log_variance.data(), g.log_variance.data() + g.log_variance.size());
    adam_step(state_.action_adam.at(action), params, grads);
    unpack(params, alpha);
  }
}

void Trainer::decoder_step(std::span<const std::size_t> batch, Rng& rng) {
  const TrainConfig& cfg = state_.config;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  std::vector<BatchItem> items(batch.size());
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const MotionSequence& seq = data_.sequences[batch[k]];
    items[k].target = targets_[batch[k]].get();
    items[k].code = draw_code(state_.codebook, seq.id, seq.action, rng).code;
    items[k].times = sample_time_subset(static_cast<int>(seq.length()), cfg.temporal_minibatch_size, rng);
    items[k].weight = inv_b;
  }
  std::vector<double> grad(state_.decoder.parameter_count(), 0.0);
  batch_reconstruction(
      state_.decoder, data_.skeleton, items, [&](int t) -> const Eigen::VectorXd& { return embeddings_[t]; },
      cfg.root_loss_weight, grad, false, cfg.threads);
  adam_step(state_.decoder_adam, state_.decoder.parameters(), grad);
}

EpochLog Trainer::run_epoch() {
  const TrainConfig& cfg = state_.config;
  Rng rng = Rng(cfg.seed).split(static_cast<std::uint64_t>(state_.epoch) + 1);
  const std::size_t n = data_.size();
  std::vector<std::size_t> order = rng.sample_without_replacement(n, n);

  EpochLog log;
  log.epoch = state_.epoch + 1;
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  for (std::size_t start = 0; start < n; start += bs) {
    const std::span<const std::size_t> batch(order.data() + start, std::min(bs, n - start));
    code_step(batch, rng, &log);
    decoder_step(batch, rng);
  }
  log.reconstruction /= static_cast<double>(n);
  log.kl /= static_cast<double>(n);
  log.total /= static_cast<double>(n);
  state_.epoch += 1;
  state_.history.push_back(log);
  return log;
}

void Trainer::run(int epochs) {
  for (int e = 0; e < epochs; ++e) run_epoch();
}

TrainResult train(const MotionDataset& data, const TrainConfig& cfg) {
  Trainer trainer(data, init_training(data, cfg));
  trainer.run(cfg.epochs);
  TrainState& s = trainer.state();
  return {std::move(s.decoder), std::move(s.codebook), std::move(s.history)};
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr const char* kCheckpointFormat = "imotion-checkpoint";

std::vector<double> to_vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainState& s) {
  TensorFile f;
  f.header["format"] = kCheckpointFormat;
  f.header["config"] = to_json(s.config);
  f.header["epoch"] = s.epoch;
  f.header["rng_digest"] = s.rng_digest();
  f.header["decoder"] = {{"hidden", s.decoder.hidden_sizes()},
                         {"input_dim", s.decoder.input_dim()},
                         {"output_dim", s.decoder.output_dim()},
                         {"adam_step", s.decoder_adam.step}};

  const auto& book = s.codebook;
  std::vector<std::string> seq_ids;
  std::vector<std::uint64_t> seq_steps, act_steps;
  std::vector<int> act_ids;
  std::vector<double> bm, bl, bam, bav, am, al, aam, aav;
  for (const auto& [id, vc] : book.sequence_codes) {
    seq_ids.push_back(id);
    const AdamState& a = s.sequence_adam.at(id);
    seq_steps.push_back(a.step);
    auto m = to_vec(vc.mean), l = to_vec(vc.log_variance);
    bm.insert(bm.end(), m.begin(), m.end());
    bl.insert(bl.end(), l.begin(), l.end());
    bam.insert(bam.end(), a.m.begin(), a.m.end());
    bav.insert(bav.end(), a.v.begin(), a.v.end());
  }
  for (const auto& [z, vc] : book.action_codes) {
    act_ids.push_back(z);
    const AdamState& a = s.action_adam.at(z);
    act_steps.push_back(a.step);
    auto m = to_vec(vc.mean), l = to_vec(vc.log_variance);
    am.insert(am.end(), m.begin(), m.end());
    al.insert(al.end(), l.begin(), l.end());
    aam.insert(aam.end(), a.m.begin(), a.m.end());
    aav.insert(aav.end(), a.v.begin(), a.v.end());
  }
  f.header["codebook"] = {{"composition", to_string(book.composition)},
                          {"sequence_ids", seq_ids},
                          {"sequence_adam_steps", seq_steps},
                          {"action_ids", act_ids},
                          {"action_adam_steps", act_steps}};

  const std::size_t P = s.decoder.parameter_count();
  const std::size_t S = book.sequence_dim(), A = book.action_dim();
  const std::size_t N = seq_ids.size(), Z = act_ids.size();
  auto params = s.decoder.parameters();
  f.add("decoder.params", {P}, {params.begin(), params.end()});
  f.add("decoder.adam.m", {P}, s.decoder_adam.m);
  f.add("decoder.adam.v", {P}, s.decoder_adam.v);
  f.add("beta.mean", {N, S}, std::move(bm));
  f.add("beta.log_variance", {N, S}, std::move(bl));
  f.add("beta.adam.m", {N, 2 * S}, std::move(bam));
  f.add("beta.adam.v", {N, 2 * S}, std::move(bav));
  f.add("alpha.mean", {Z, A}, std::move(am));
  f.add("alpha.log_variance", {Z, A}, std::move(al));
  f.add("alpha.adam.m", {Z, 2 * A}, std::move(aam));
  f.add("alpha.adam.v", {Z, 2 * A}, std::move(aav));
  std::vector<double> hist;
  for (const auto& e : s.history) hist.insert(hist.end(), {static_cast<double>(e.epoch), e.reconstruction, e.kl, e.total});
  f.add("loss_history", {s.history.size(), 4}, std::move(hist));
  write_tensor_file(path, f);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  const TensorFile f = read_tensor_file(path);
  if (f.header.value("format", "") != kCheckpointFormat) {
    throw FormatVersionMismatch("'" + path.string() + "' is not a checkpoint");
  }
  TrainState s;
  try {
    apply_json(s.config, f.header.at("config"));
    s.epoch = f.header.at("epoch").get<int>();
    const auto& d = f.header.at("decoder");
    s.decoder = MlpDecoder(d.at("hidden").get<std::vector<std::size_t>>(), d.at("input_dim").get<std::size_t>(),
                           d.at("output_dim").get<std::size_t>());
    const std::size_t P = s.decoder.parameter_count();
    const auto& p = f.get("decoder.params").data;
    if (p.size() != P) throw FormatVersionMismatch("decoder parameter count mismatch");
    std::copy(p.begin(), p.end(), s.decoder.parameters().begin());
    s.decoder_adam = AdamState(P, s.config.lr_decoder);
    s.decoder_adam.m = f.get("decoder.adam.m").data;
    s.decoder_adam.v = f.get("decoder.adam.v").data;
    s.decoder_adam.step = d.at("adam_step").get<std::uint64_t>();
    if (s.decoder_adam.m.size() != P || s.decoder_adam.v.size() != P) {
      throw FormatVersionMismatch("decoder Adam state size mismatch");
    }

    const auto& cb = f.header.at("codebook");
    s.codebook.composition = composition_from_string(cb.at("composition").get<std::string>());
    const auto ids = cb.at("sequence_ids").get<std::vector<std::string>>();
    const auto seq_steps = cb.at("sequence_adam_steps").get<std::vector<std::uint64_t>>();
    const auto acts = cb.at("action_ids").get<std::vector<int>>();
    const auto act_steps = cb.at("action_adam_steps").get<std::vector<std::uint64_t>>();

    auto read_block = [&](const std::string& prefix, std::size_t rows, std::size_t& dim) {
      const Tensor& m = f.get(prefix + ".mean");
      if (m.shape.size() != 2 || m.shape[0] != rows) throw FormatVersionMismatch(prefix + " shape mismatch");
      dim = m.shape[1];
      return std::array<const Tensor*, 4>{&m, &f.get(prefix + ".log_variance"), &f.get(prefix + ".adam.m"),
                                          &f.get(prefix + ".adam.v")};
    };
    auto fill = [](const std::array<const Tensor*, 4>& t, std::size_t row, std::size_t dim, VariationalCode& vc,
                   AdamState& a) {
      if (t[1]->data.size() != t[0]->data.size() || t[2]->data.size() != 2 * t[0]->data.size() ||
          t[3]->data.size() != 2 * t[0]->data.size()) {
        throw FormatVersionMismatch("code tensor sizes disagree");
      }
      vc.mean = Eigen::Map<const Eigen::VectorXd>(t[0]->data.data() + row * dim, static_cast<Eigen::Index>(dim));
      vc.log_variance =
          Eigen::Map<const Eigen::VectorXd>(t[1]->data.data() + row * dim, static_cast<Eigen::Index>(dim));
      a.m.assign(t[2]->data.begin() + static_cast<std::ptrdiff_t>(2 * row * dim),
                 t[2]->data.begin() + static_cast<std::ptrdiff_t>(2 * (row + 1) * dim));
      a.v.assign(t[3]->data.begin() + static_cast<std::ptrdiff_t>(2 * row * dim),
                 t[3]->data.begin() + static_cast<std::ptrdiff_t>(2 * (row + 1) * dim));
    };
    if (seq_steps.size() != ids.size() || act_steps.size() != acts.size()) {
      throw FormatVersionMismatch("Adam step lists disagree with code lists");
    }
    std::size_t S = 0, A = 0;
    const auto beta = read_block("beta", ids.size(), S);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      VariationalCode vc(S, 0.0);
      AdamState a(2 * S, s.config.lr_codes);
      fill(beta, i, S, vc, a);
      a.step = seq_steps[i];
      s.codebook.sequence_codes.emplace(ids[i], std::move(vc));
      s.sequence_adam.emplace(ids[i], std::move(a));
    }
    const auto alpha = read_block("alpha", acts.size(), A);
    for (std::size_t i = 0; i < acts.size(); ++i) {
      VariationalCode vc(A, 0.0);
      AdamState a(2 * A, s.config.lr_codes);
      fill(alpha, i, A, vc, a);
      a.step = act_steps[i];
      s.codebook.action_codes.emplace(acts[i], std::move(vc));
      s.action_adam.emplace(acts[i], std::move(a));
    }

    const Tensor& h = f.get("loss_history");
    if (h.shape.size() != 2 || h.shape[1] != 4) throw FormatVersionMismatch("loss history shape mismatch");
    for (std::size_t r = 0; r < h.shape[0]; ++r) {
      s.history.push_back({static_cast<int>(h.data[4 * r]), h.data[4 * r + 1], h.data[4 * r + 2], h.data[4 * r + 3]});
    }
    if (f.header.at("rng_digest").get<std::uint64_t>() != s.rng_digest()) {
      throw FormatVersionMismatch("RNG digest does not match seed and epoch");
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatVersionMismatch(std::string("corrupt checkpoint header: ") + e.what());
  }
  return s;
}

void write_loss_log(const std::filesystem::path& path, std::span<const EpochLog> history) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f << "epoch,rec_loss,kl_loss,total\n";
  char buf[128];
  for (const auto& e : history) {
    std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g,%.10g\n", e.epoch, e.reconstruction, e.kl, e.total);
    f << buf;
  }
  if (!f) throw IoError("write to '" + path.string() + "' failed");
}

}  // namespace imotion
