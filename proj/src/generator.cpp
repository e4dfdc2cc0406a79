#include "imotion/generator.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "imotion/error.hpp"

namespace imotion {

namespace {

constexpr const char* kIndexFormat = "imotion-gmm-index";
constexpr int kIndexSchemaVersion = 1;

}  // namespace

std::vector<BetaSampleSet> collect_beta_samples(const CodeBook& book, const MotionDataset& data, int draws,
                                                Rng& rng) {
  std::vector<BetaSampleSet> out;
  out.reserve(data.size());
  for (const auto& seq : data.sequences) {
    const auto it = book.sequence_codes.find(seq.id);
    if (it == book.sequence_codes.end()) throw UnknownSequence("no code for sequence '" + seq.id + "'");
    const VariationalCode& vc = it->second;
    BetaSampleSet set{seq.id, seq.action, static_cast<int>(seq.length()), vc.mean,
                      Eigen::MatrixXd(vc.mean.size(), draws)};
    Eigen::VectorXd noise(vc.mean.size());
    for (int d = 0; d < draws; ++d) {
      rng.fill_normal({noise.data(), static_cast<std::size_t>(noise.size())});
      set.samples.col(d) = sample_code(vc, noise);
    }
    out.push_back(std::move(set));
  }
  return out;
}

std::vector<LengthInterval> ConditionalGmmIndex::intervals(int action) const {
  std::vector<LengthInterval> out;
  for (const auto& e : entries) {
    if (e.action == action) out.push_back(e.interval);
  }
  return out;
}

const ConditionalGmmIndex::Entry& ConditionalGmmIndex::select(int action, int length) const {
  const Entry* best = nullptr;
  bool known = false;
  for (const auto& e : entries) {
    if (e.action != action) continue;
    known = true;
    if (e.interval.contains(length) && (!best || e.interval.width() < best->interval.width())) best = &e;
  }
  if (!best) {
    throw LengthOutOfRange(known ? "length " + std::to_string(length) + " is outside every interval of action " +
                                       std::to_string(action)
                                 : "action " + std::to_string(action) + " has no fitted intervals");
  }
  return *best;
}

ConditionalGmmIndex build_gmm_index(const CodeBook& book, const MotionDataset& data, const IndexOptions& opts,
                                    std::uint64_t seed) {
  Rng root(seed);
  Rng draw_rng = root.split(0x64726177ULL);
  const auto sets = collect_beta_samples(book, data, opts.draws, draw_rng);

  std::map<int, std::vector<const BetaSampleSet*>> by_action;
  for (const auto& s : sets) by_action[s.action].push_back(&s);

  ConditionalGmmIndex index;
  index.sequence_dim = book.sequence_dim();
  for (const auto& [action, members] : by_action) {
    std::vector<int> lengths;
    for (const auto* m : members) lengths.push_back(m->length);
    const auto intervals = fit_intervals(lengths, opts.intervals);
    for (std::size_t i = 0; i < intervals.size(); ++i) {
      const LengthInterval& iv = intervals[i];
      std::vector<const BetaSampleSet*> inside;
      for (const auto* m : members) {
        if (iv.contains(m->length)) inside.push_back(m);
      }
      const auto S = static_cast<Eigen::Index>(index.sequence_dim);
      Eigen::MatrixXd samples(S, static_cast<Eigen::Index>(inside.size()) * opts.draws);
      Eigen::MatrixXd refs(S, static_cast<Eigen::Index>(inside.size()));
      for (std::size_t m = 0; m < inside.size(); ++m) {
        samples.middleCols(static_cast<Eigen::Index>(m) * opts.draws, opts.draws) = inside[m]->samples;
        refs.col(static_cast<Eigen::Index>(m)) = inside[m]->mean;
      }
      Rng fit_rng = root.split(static_cast<std::uint64_t>(action) * 1000003ULL + i + 1);
      GmmFitReport rep;
      ConditionalGmmIndex::Entry e;
      e.action = action;
      e.interval = iv;
      e.gmm = fit_gmm(samples, refs, opts.gmm, fit_rng, &rep);
      e.components_requested = opts.gmm.k_init;
      e.attempts = rep.attempts;
      index.entries.push_back(std::move(e));
    }
  }
  return index;
}

nlohmann::ordered_json to_json(const ConditionalGmmIndex& index) {
  nlohmann::ordered_json j;
  j["format"] = kIndexFormat;
  j["schema_version"] = kIndexSchemaVersion;
  j["sequence_dim"] = index.sequence_dim;
  nlohmann::ordered_json entries = nlohmann::ordered_json::array();
  for (const auto& e : index.entries) {
    nlohmann::ordered_json je;
    je["action"] = e.action;
    je["t_left"] = e.interval.t_left;
    je["t_right"] = e.interval.t_right;
    je["components_requested"] = e.components_requested;
    je["attempts"] = e.attempts;
    je["weights"] = std::vector<double>(e.gmm.weights.data(), e.gmm.weights.data() + e.gmm.weights.size());
    nlohmann::ordered_json means = nlohmann::ordered_json::array(), vars = nlohmann::ordered_json::array();
    for (Eigen::Index k = 0; k < e.gmm.means.cols(); ++k) {
      const Eigen::VectorXd m = e.gmm.means.col(k), v = e.gmm.variances.col(k);
      means.push_back(std::vector<double>(m.data(), m.data() + m.size()));
      vars.push_back(std::vector<double>(v.data(), v.data() + v.size()));
    }
    je["means"] = std::move(means);
    je["variances"] = std::move(vars);
    entries.push_back(std::move(je));
  }
  j["entries"] = std::move(entries);
  return j;
}

ConditionalGmmIndex gmm_index_from_json(const nlohmann::json& j) {
  ConditionalGmmIndex index;
  try {
    if (j.at("format").get<std::string>() != kIndexFormat) throw FormatVersionMismatch("not a GMM index");
    if (j.at("schema_version").get<int>() != kIndexSchemaVersion) {
      throw FormatVersionMismatch("unsupported GMM index schema version");
    }
    index.sequence_dim = j.at("sequence_dim").get<std::size_t>();
    const auto S = static_cast<Eigen::Index>(index.sequence_dim);
    for (const auto& je : j.at("entries")) {
      ConditionalGmmIndex::Entry e;
      e.action = je.at("action").get<int>();
      e.interval = {je.at("t_left").get<int>(), je.at("t_right").get<int>()};
      e.components_requested = je.value("components_requested", 0);
      e.attempts = je.value("attempts", 0);
      const auto w = je.at("weights").get<std::vector<double>>();
      const auto means = je.at("means").get<std::vector<std::vector<double>>>();
      const auto vars = je.at("variances").get<std::vector<std::vector<double>>>();
      const auto K = static_cast<Eigen::Index>(w.size());
      if (means.size() != w.size() || vars.size() != w.size() || K == 0) {
        throw FormatVersionMismatch("component arrays disagree in length");
      }
      e.gmm.weights = Eigen::Map<const Eigen::VectorXd>(w.data(), K);
      e.gmm.means.resize(S, K);
      e.gmm.variances.resize(S, K);
      for (Eigen::Index k = 0; k < K; ++k) {
        const auto& m = means[static_cast<std::size_t>(k)];
        const auto& v = vars[static_cast<std::size_t>(k)];
        if (static_cast<Eigen::Index>(m.size()) != S || static_cast<Eigen::Index>(v.size()) != S) {
          throw FormatVersionMismatch("component dimension differs from sequence_dim");
        }
        e.gmm.means.col(k) = Eigen::Map<const Eigen::VectorXd>(m.data(), S);
        e.gmm.variances.col(k) = Eigen::Map<const Eigen::VectorXd>(v.data(), S);
      }
      if (e.interval.t_left > e.interval.t_right) throw FormatVersionMismatch("interval with t_left > t_right");
      index.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw FormatVersionMismatch(std::string("corrupt GMM index: ") + ex.what());
  }
  return index;
}

void save_gmm_index(const std::filesystem::path& path, const ConditionalGmmIndex& index) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f << to_json(index).dump(1) << '\n';
  if (!f) throw IoError("write to '" + path.string() + "' failed");
}

ConditionalGmmIndex load_gmm_index(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatVersionMismatch(std::string("GMM index is not valid JSON: ") + e.what());
  }
  return gmm_index_from_json(j);
}

Eigen::VectorXd sample_beta(const ConditionalGmmIndex& index, int action, int length, Rng& rng) {
  return index.select(action, length).gmm.sample(rng);
}

MotionSequence decode_sequence(const MlpDecoder& dec, const Eigen::VectorXd& code, int length,
                               const TemporalEmbeddingConfig& emb) {
  if (length < 1) throw InvalidArgument("length must be at least 1");
  if (static_cast<std::size_t>(code.size()) + emb.dim != dec.input_dim()) {
    throw DimensionMismatch("code + embedding size differs from decoder input");
  }
  Eigen::MatrixXd X(static_cast<Eigen::Index>(dec.input_dim()), length);
  for (int t = 0; t < length; ++t) X.col(t) << code, temporal_embedding(t, emb);
  const Eigen::MatrixXd Y = dec.forward_batch(X);
  MotionSequence seq;
  seq.poses.reserve(static_cast<std::size_t>(length));
  for (int t = 0; t < length; ++t) seq.poses.emplace_back(Y.col(t));
  return seq;
}

MotionSequence generate_motion(const MlpDecoder& dec, const CodeBook& book, const ConditionalGmmIndex& index,
                               int action, int length, const TemporalEmbeddingConfig& emb, Rng& rng) {
  const auto it = book.action_codes.find(action);
  if (it == book.action_codes.end()) throw LengthOutOfRange("action " + std::to_string(action) + " is unknown");
  const Eigen::VectorXd beta = sample_beta(index, action, length, rng);
  MotionSequence seq = decode_sequence(dec, compose_code(it->second.mean, beta, book.composition), length, emb);
  seq.action = action;
  return seq;
}

}  // namespace imotion
