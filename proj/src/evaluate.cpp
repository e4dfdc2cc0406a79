#include <array>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <map>

#include "imotion/error.hpp"
#include "imotion/metrics.hpp"
#include "imotion/parallel.hpp"

namespace imotion {

namespace {

constexpr const char* kReportFormat = "imotion-metrics-report";
constexpr const char* kMetricOrder[] = {"fid",           "accuracy",      "diversity",     "multimodality",
                                        "mms",           "mms_baseline",  "real_fid",      "real_accuracy",
                                        "real_diversity", "real_multimodality"};
constexpr std::size_t kMetricCount = std::size(kMetricOrder);

double feature_accuracy(const FeatureExtractor& fx, const Eigen::MatrixXd& f, std::span<const int> labels) {
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    Eigen::Index arg = 0;
    fx.logits(f.row(i).transpose()).maxCoeff(&arg);
    if (arg == labels[static_cast<std::size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(f.rows());
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

const MetricRow& MetricsReport::row(const std::string& name) const {
  for (const auto& r : rows) {
    if (r.name == name) return r;
  }
  throw InvalidArgument("report has no metric '" + name + "'");
}

MetricRow summarize(std::string name, std::vector<double> values) {
  MetricRow r;
  r.name = std::move(name);
  r.repeats = static_cast<int>(values.size());
  if (!values.empty()) {
    double m = 0.0;
    for (double v : values) m += v;
    m /= static_cast<double>(values.size());
    r.mean = m;
    if (values.size() > 1) {
      double s = 0.0;
      for (double v : values) s += (v - m) * (v - m);
      const double sd = std::sqrt(s / static_cast<double>(values.size() - 1));
      r.half_width = 1.96 * sd / std::sqrt(static_cast<double>(values.size()));
    }
  }
  r.values = std::move(values);
  return r;
}

MotionGenerator replay_generator(const MotionDataset& train) {
  std::map<int, std::vector<std::size_t>> by_action;
  for (std::size_t i = 0; i < train.size(); ++i) by_action[train.sequences[i].action].push_back(i);
  return [&train, by_action](int action, int length, Rng& rng) {
    const auto it = by_action.find(action);
    if (it == by_action.end()) throw LengthOutOfRange("no training sequence of action " + std::to_string(action));
    std::vector<std::size_t> exact;
    for (std::size_t i : it->second) {
      if (static_cast<int>(train.sequences[i].length()) == length) exact.push_back(i);
    }
    const auto& pool = exact.empty() ? it->second : exact;
    return train.sequences[pool[rng.uniform_index(pool.size())]];
  };
}

MetricsReport evaluate(const MotionGenerator& gen, const MotionDataset& train, const FeatureExtractor& fx,
                       const EvalOptions& opts) {
  if (train.size() < 2) throw InsufficientData("evaluation needs at least 2 training sequences");
  if (opts.repeats < 1 || opts.target_len < 1 || opts.generated_count < 0) {
    throw InvalidArgument("invalid evaluation options");
  }
  const std::size_t count = opts.generated_count > 0 ? static_cast<std::size_t>(opts.generated_count) : train.size();
  if (count < 2) throw InvalidArgument("at least 2 generated motions are needed");
  std::vector<int> train_labels;
  for (const auto& s : train.sequences) train_labels.push_back(s.action);

  const auto R = static_cast<std::size_t>(opts.repeats);
  std::vector<std::array<double, kMetricCount>> results(R);
  const Rng root(opts.seed);
  parallel_for(R, opts.threads, [&](std::size_t r) {
    Rng rng = root.split(r + 1);
    std::vector<MotionSequence> motions;
    std::vector<int> labels;
    motions.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      const auto& ref = train.sequences[rng.uniform_index(train.size())];
      MotionSequence m = gen(ref.action, static_cast<int>(ref.length()), rng);
      m.action = ref.action;
      labels.push_back(ref.action);
      motions.push_back(std::move(m));
    }
    const Eigen::MatrixXd fg = extract_features(motions, fx, opts.target_len, rng);
    const Eigen::MatrixXd ft = extract_features(train.sequences, fx, opts.target_len, rng);
    const Eigen::MatrixXd ft2 = extract_features(train.sequences, fx, opts.target_len, rng);
    auto& out = results[r];
    out[0] = fid(fg, ft).value;
    out[1] = feature_accuracy(fx, fg, labels);
    out[2] = diversity(fg, opts.diversity_subset, rng);
    out[3] = multimodality(fg, labels, opts.multimodality_subset, rng);
    out[4] = mms(fg, ft);
    out[5] = mms(ft2, ft);
    out[6] = fid(ft2, ft).value;
    out[7] = feature_accuracy(fx, ft, train_labels);
    out[8] = diversity(ft, opts.diversity_subset, rng);
    out[9] = multimodality(ft, train_labels, opts.multimodality_subset, rng);
  });

  MetricsReport report;
  report.extractor_digest = fx.digest();
  report.target_len = opts.target_len;
  report.generated_per_repeat = static_cast<int>(count);
  for (std::size_t k = 0; k < kMetricCount; ++k) {
    std::vector<double> values;
    for (const auto& r : results) values.push_back(r[k]);
    report.rows.push_back(summarize(kMetricOrder[k], std::move(values)));
  }
  return report;
}

nlohmann::ordered_json to_json(const MetricsReport& report, bool with_timestamp) {
  nlohmann::ordered_json j;
  j["format"] = kReportFormat;
  j["schema_version"] = 1;
  if (with_timestamp) j["generated_at"] = utc_now();
  j["extractor_digest"] = report.extractor_digest;
  j["target_len"] = report.target_len;
  j["generated_per_repeat"] = report.generated_per_repeat;
  j["diversity_sampling"] = "subsets drawn without replacement when the pool is large enough, else with replacement";
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"name", r.name}, {"mean", r.mean}, {"half_width", r.half_width}, {"repeats", r.repeats},
                    {"values", r.values}});
  }
  j["rows"] = std::move(rows);
  return j;
}

void write_report(const std::filesystem::path& path, const MetricsReport& report, bool with_timestamp) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f << to_json(report, with_timestamp).dump(2) << '\n';
  if (!f) throw IoError("write to '" + path.string() + "' failed");
}

}  // namespace imotion
