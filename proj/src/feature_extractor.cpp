#include <cmath>

#include "imotion/decoder.hpp"
#include "imotion/error.hpp"
#include "imotion/metrics.hpp"
#include "imotion/tensor_io.hpp"

namespace imotion {

namespace {

constexpr const char* kExtractorFormat = "imotion-feature-extractor";

using Map = Eigen::Map<Eigen::MatrixXd>;
using ConstMap = Eigen::Map<const Eigen::MatrixXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& a) { return (1.0 / (1.0 + (-a.array()).exp())).matrix(); }

Eigen::MatrixXd sequence_frames(const MotionSequence& seq) {
  if (seq.poses.empty()) throw InvalidArgument("empty sequence");
  Eigen::MatrixXd f(seq.poses.front().values.size(), static_cast<Eigen::Index>(seq.length()));
  for (std::size_t t = 0; t < seq.length(); ++t) f.col(static_cast<Eigen::Index>(t)) = seq.poses[t].values;
  return f;
}

}  // namespace

struct FeatureExtractor::Views {
  ConstMap wx, uh;           // 3H x I, 3H x H (rows: z, r, n)
  ConstVecMap b;             // 3H
  ConstMap wo;               // C x H
  ConstVecMap bo;            // C
};

FeatureExtractor::FeatureExtractor(std::size_t input_dim, std::size_t hidden, std::size_t classes)
    : input_dim_(input_dim), hidden_(hidden), classes_(classes),
      params_(3 * hidden * input_dim + 3 * hidden * hidden + 3 * hidden + classes * hidden + classes, 0.0),
      mean_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(input_dim))),
      scale_(Eigen::VectorXd::Ones(static_cast<Eigen::Index>(input_dim))) {
  if (input_dim == 0 || hidden == 0 || classes == 0) throw InvalidArgument("extractor sizes must be positive");
}

FeatureExtractor::Views FeatureExtractor::views() const {
  const auto I = static_cast<Eigen::Index>(input_dim_), H = static_cast<Eigen::Index>(hidden_),
             C = static_cast<Eigen::Index>(classes_);
  const double* p = params_.data();
  const double* wx = p;
  const double* uh = wx + 3 * H * I;
  const double* b = uh + 3 * H * H;
  const double* wo = b + 3 * H;
  const double* bo = wo + C * H;
  return {ConstMap(wx, 3 * H, I), ConstMap(uh, 3 * H, H), ConstVecMap(b, 3 * H), ConstMap(wo, C, H),
          ConstVecMap(bo, C)};
}

std::uint64_t FeatureExtractor::digest() const {
  std::uint64_t h = fnv1a(params_.data(), params_.size() * sizeof(double));
  h = fnv1a(mean_.data(), static_cast<std::size_t>(mean_.size()) * sizeof(double), h);
  return fnv1a(scale_.data(), static_cast<std::size_t>(scale_.size()) * sizeof(double), h);
}

Eigen::VectorXd FeatureExtractor::features(const Eigen::MatrixXd& frames) const {
  if (static_cast<std::size_t>(frames.rows()) != input_dim_) {
    throw DimensionMismatch("frame size " + std::to_string(frames.rows()) + ", extractor expects " +
                            std::to_string(input_dim_));
  }
  const Views v = views();
  const auto H = static_cast<Eigen::Index>(hidden_);
  Eigen::VectorXd h = Eigen::VectorXd::Zero(H);
  for (Eigen::Index t = 0; t < frames.cols(); ++t) {
    const Eigen::VectorXd x = (frames.col(t) - mean_).cwiseQuotient(scale_);
    const Eigen::VectorXd ax = v.wx * x + v.b;
    const Eigen::VectorXd zr = sigmoid(ax.head(2 * H) + v.uh.topRows(2 * H) * h);
    const Eigen::VectorXd z = zr.head(H), r = zr.tail(H);
    const Eigen::VectorXd n = (ax.tail(H) + v.uh.bottomRows(H) * r.cwiseProduct(h)).array().tanh().matrix();
    h = (1.0 - z.array()) * n.array() + z.array() * h.array();
  }
  return h;
}

Eigen::VectorXd FeatureExtractor::features(const MotionSequence& seq) const { return features(sequence_frames(seq)); }

Eigen::VectorXd FeatureExtractor::logits(const Eigen::VectorXd& feature) const {
  const Views v = views();
  return v.wo * feature + v.bo;
}

int FeatureExtractor::predict(const MotionSequence& seq) const {
  Eigen::Index best = 0;
  logits(features(seq)).maxCoeff(&best);
  return static_cast<int>(best);
}

double FeatureExtractor::loss_and_gradient(std::span<const Eigen::MatrixXd> batch, std::span<const int> labels,
                                           std::span<double> grad, int* correct) const {
  if (batch.empty() || batch.size() != labels.size()) throw ShapeMismatch("batch and labels differ in size");
  if (grad.size() != params_.size()) throw ShapeMismatch("gradient buffer size");
  const auto I = static_cast<Eigen::Index>(input_dim_), H = static_cast<Eigen::Index>(hidden_),
             C = static_cast<Eigen::Index>(classes_), B = static_cast<Eigen::Index>(batch.size());
  const Eigen::Index T = batch.front().cols();
  const Views v = views();

  std::vector<Eigen::MatrixXd> xs(T), hs(T + 1), zs(T), rs(T), ns(T);
  hs[0] = Eigen::MatrixXd::Zero(H, B);
  for (Eigen::Index t = 0; t < T; ++t) {
    Eigen::MatrixXd x(I, B);
    for (Eigen::Index b = 0; b < B; ++b) {
      const auto& f = batch[static_cast<std::size_t>(b)];
      if (f.cols() != T || f.rows() != I) throw ShapeMismatch("batch elements differ in shape");
      x.col(b) = (f.col(t) - mean_).cwiseQuotient(scale_);
    }
    const Eigen::MatrixXd ax = (v.wx * x).colwise() + v.b;
    const Eigen::MatrixXd zr = sigmoid(ax.topRows(2 * H) + v.uh.topRows(2 * H) * hs[t]);
    zs[t] = zr.topRows(H);
    rs[t] = zr.bottomRows(H);
    ns[t] = (ax.bottomRows(H) + v.uh.bottomRows(H) * rs[t].cwiseProduct(hs[t])).array().tanh().matrix();
    hs[t + 1] = ((1.0 - zs[t].array()) * ns[t].array() + zs[t].array() * hs[t].array()).matrix();
    xs[t] = std::move(x);
  }

  Eigen::MatrixXd logit = (v.wo * hs[T]).colwise() + v.bo;
  double loss = 0.0;
  int hits = 0;
  Eigen::MatrixXd dlogit(C, B);
  for (Eigen::Index b = 0; b < B; ++b) {
    const int y = labels[static_cast<std::size_t>(b)];
    if (y < 0 || y >= C) throw InvalidArgument("label out of range");
    Eigen::Index arg = 0;
    const double m = logit.col(b).maxCoeff(&arg);
    const Eigen::VectorXd e = (logit.col(b).array() - m).exp().matrix();
    const double s = e.sum();
    loss += std::log(s) + m - logit(y, b);
    dlogit.col(b) = e / s;
    dlogit(y, b) -= 1.0;
    if (arg == y) ++hits;
  }
  loss /= static_cast<double>(B);
  dlogit /= static_cast<double>(B);
  if (correct) *correct = hits;

  double* g = grad.data();
  Map gwx(g, 3 * H, I), guh(g + 3 * H * I, 3 * H, H);
  Eigen::Map<Eigen::VectorXd> gb(g + 3 * H * I + 3 * H * H, 3 * H);
  Map gwo(g + 3 * H * I + 3 * H * H + 3 * H, C, H);
  Eigen::Map<Eigen::VectorXd> gbo(g + 3 * H * I + 3 * H * H + 3 * H + C * H, C);

  gwo += dlogit * hs[T].transpose();
  gbo += dlogit.rowwise().sum();
  Eigen::MatrixXd dh = v.wo.transpose() * dlogit;
  Eigen::MatrixXd da(3 * H, B);
  for (Eigen::Index t = T; t-- > 0;) {
    const Eigen::MatrixXd& h = hs[t];
    const Eigen::ArrayXXd z = zs[t].array(), r = rs[t].array(), n = ns[t].array();
    const Eigen::ArrayXXd dn = dh.array() * (1.0 - z);
    const Eigen::ArrayXXd dz = dh.array() * (h.array() - n);
    Eigen::MatrixXd dh_prev = (dh.array() * z).matrix();
    da.bottomRows(H) = (dn * (1.0 - n.square())).matrix();
    da.topRows(H) = (dz * z * (1.0 - z)).matrix();
    const Eigen::MatrixXd rh = (r * h.array()).matrix();
    const Eigen::MatrixXd drh = v.uh.bottomRows(H).transpose() * da.bottomRows(H);
    da.middleRows(H, H) = (drh.array() * h.array() * r * (1.0 - r)).matrix();
    dh_prev += (drh.array() * r).matrix();
    gwx += da * xs[t].transpose();
    gb += da.rowwise().sum();
    guh.topRows(2 * H) += da.topRows(2 * H) * h.transpose();
    guh.bottomRows(H) += da.bottomRows(H) * rh.transpose();
    dh_prev += v.uh.topRows(2 * H).transpose() * da.topRows(2 * H);
    dh = std::move(dh_prev);
  }
  return loss;
}

FeatureExtractor train_feature_extractor(const MotionDataset& data, const ExtractorTrainConfig& cfg,
                                         ExtractorTrainLog* log) {
  if (data.empty()) throw EmptyDataset("no sequences to train the classifier on");
  if (cfg.epochs < 0 || cfg.batch_size < 1 || cfg.target_len < 1 || !(cfg.learning_rate > 0.0)) {
    throw InvalidArgument("invalid classifier training configuration");
  }
  const std::size_t dim = data.skeleton.pose_dim();
  FeatureExtractor fx(dim, cfg.hidden, data.action_count());

  // Standardization over every training frame.
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim)), sq = sum;
  double frames = 0.0;
  for (const auto& s : data.sequences) {
    for (const auto& p : s.poses) {
      sum += p.values;
      sq += p.values.cwiseAbs2();
      frames += 1.0;
    }
  }
  const Eigen::VectorXd mean = sum / frames;
  const Eigen::VectorXd var = (sq / frames - mean.cwiseAbs2()).cwiseMax(0.0);
  fx.input_mean() = mean;
  fx.input_scale() = var.cwiseSqrt().cwiseMax(cfg.scale_floor);

  Rng rng(cfg.seed);
  Rng init = rng.split(1);
  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.hidden));
  for (double& p : fx.parameters()) p = (2.0 * init.uniform() - 1.0) * bound;

  AdamState adam(fx.parameters().size(), cfg.learning_rate);
  std::vector<double> grad(fx.parameters().size());
  const std::size_t n = data.size();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng erng = rng.split(static_cast<std::uint64_t>(epoch) + 2);
    const auto order = erng.sample_without_replacement(n, n);
    double loss = 0.0;
    int hits = 0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<Eigen::MatrixXd> batch;
      std::vector<int> labels;
      for (std::size_t i = start; i < end; ++i) {
        const auto& seq = data.sequences[order[i]];
        batch.push_back(sequence_frames(adjust_length(seq, cfg.target_len, erng)));
        labels.push_back(seq.action);
      }
      std::fill(grad.begin(), grad.end(), 0.0);
      int correct = 0;
      loss += fx.loss_and_gradient(batch, labels, grad, &correct) * static_cast<double>(end - start);
      hits += correct;
      adam_step(adam, fx.parameters(), grad);
    }
    if (log) {
      log->loss.push_back(loss / static_cast<double>(n));
      log->train_accuracy.push_back(static_cast<double>(hits) / static_cast<double>(n));
    }
  }
  return fx;
}

void save_feature_extractor(const std::filesystem::path& path, const FeatureExtractor& fx) {
  TensorFile f;
  f.header["format"] = kExtractorFormat;
  f.header["input_dim"] = fx.input_dim();
  f.header["hidden"] = fx.hidden_dim();
  f.header["classes"] = fx.classes();
  f.header["digest"] = fx.digest();
  f.add("params", {fx.parameters().size()}, {fx.parameters().begin(), fx.parameters().end()});
  const auto& m = fx.input_mean();
  const auto& s = fx.input_scale();
  f.add("input_mean", {static_cast<std::size_t>(m.size())}, {m.data(), m.data() + m.size()});
  f.add("input_scale", {static_cast<std::size_t>(s.size())}, {s.data(), s.data() + s.size()});
  write_tensor_file(path, f);
}

FeatureExtractor load_feature_extractor(const std::filesystem::path& path) {
  const TensorFile f = read_tensor_file(path);
  try {
    if (f.header.at("format").get<std::string>() != kExtractorFormat) {
      throw FormatVersionMismatch("not a feature extractor file");
    }
    FeatureExtractor fx(f.header.at("input_dim").get<std::size_t>(), f.header.at("hidden").get<std::size_t>(),
                        f.header.at("classes").get<std::size_t>());
    const Tensor& p = f.get("params");
    const Tensor& m = f.get("input_mean");
    const Tensor& s = f.get("input_scale");
    if (p.data.size() != fx.parameters().size() || m.data.size() != fx.input_dim() ||
        s.data.size() != fx.input_dim()) {
      throw FormatVersionMismatch("extractor tensor sizes disagree with header");
    }
    std::copy(p.data.begin(), p.data.end(), fx.parameters().begin());
    fx.input_mean() = Eigen::Map<const Eigen::VectorXd>(m.data.data(), static_cast<Eigen::Index>(m.data.size()));
    fx.input_scale() = Eigen::Map<const Eigen::VectorXd>(s.data.data(), static_cast<Eigen::Index>(s.data.size()));
    if (f.header.at("digest").get<std::uint64_t>() != fx.digest()) {
      throw FormatVersionMismatch("extractor weights do not match the recorded digest");
    }
    return fx;
  } catch (const nlohmann::json::exception& e) {
    throw FormatVersionMismatch(std::string("corrupt extractor header: ") + e.what());
  }
}

}  // namespace imotion
