#include "promptkit/data_engine.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "promptkit/numeric.hpp"
#include "promptkit/set_losses.hpp"

namespace promptkit {

std::string_view to_string(AnnotationSource s) { return s == AnnotationSource::top_down ? "top_down" : "bottom_up"; }

AnnotationSource parse_annotation_source(std::string_view name) {
  if (name == "top_down") return AnnotationSource::top_down;
  if (name == "bottom_up") return AnnotationSource::bottom_up;
  throw std::invalid_argument("unknown annotation source: '" + std::string(name) + "'");
}

void AnnotationSet::validate() const {
  if (image_id.empty()) throw std::invalid_argument("annotation set: empty image_id");
  if (width < 0 || height < 0) throw std::invalid_argument("annotation set '" + image_id + "': negative image size");
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& inst = instances[i];
    const std::string where = "annotation set '" + image_id + "' instance " + std::to_string(i);
    if (inst.tag.empty()) throw std::invalid_argument(where + ": empty tag");
    if (!inst.box.valid()) throw std::invalid_argument(where + ": box must be ordered and inside [0,1]");
    if (!(inst.score >= 0.0 && inst.score <= 1.0)) throw std::invalid_argument(where + ": score outside [0,1]");
  }
}

AnnotationSet parse_annotation_set(std::string_view json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(std::string("annotation JSON: ") + e.what());
  }
  AnnotationSet set;
  try {
    set.image_id = doc.at("image_id").get<std::string>();
    set.width = doc.at("width").get<int>();
    set.height = doc.at("height").get<int>();
    set.source = parse_annotation_source(doc.at("source").get<std::string>());
    for (const auto& j : doc.at("instances")) {
      Instance inst;
      const auto& box = j.at("box");
      if (!box.is_array() || box.size() != 4) throw std::runtime_error("annotation JSON: box must have 4 numbers");
      inst.box = BoxXYXY::from_array({box[0].get<double>(), box[1].get<double>(), box[2].get<double>(),
                                      box[3].get<double>()});
      inst.tag = j.at("tag").get<std::string>();
      inst.score = j.at("score").get<double>();
      if (j.contains("alias_tag")) inst.alias_tag = j["alias_tag"].get<std::string>();
      if (j.contains("similarity")) inst.similarity = j["similarity"].get<double>();
      set.instances.push_back(std::move(inst));
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("annotation JSON: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("annotation JSON: ") + e.what());
  }
  try {
    set.validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(e.what());
  }
  return set;
}

AnnotationSet load_annotation_set(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_annotation_set(ss.str());
}

std::string dump_annotation_set(const AnnotationSet& set) {
  nlohmann::ordered_json doc;
  doc["image_id"] = set.image_id;
  doc["width"] = set.width;
  doc["height"] = set.height;
  doc["source"] = std::string(to_string(set.source));
  doc["instances"] = nlohmann::ordered_json::array();
  for (const auto& inst : set.instances) {
    nlohmann::ordered_json j;
    j["box"] = inst.box.to_array();
    j["tag"] = inst.tag;
    j["score"] = inst.score;
    if (inst.alias_tag) j["alias_tag"] = *inst.alias_tag;
    if (inst.similarity) j["similarity"] = *inst.similarity;
    doc["instances"].push_back(std::move(j));
  }
  return doc.dump(2) + "\n";
}

RetentionBase parse_retention_base(std::string_view name) {
  if (name == "mean") return RetentionBase::mean_of_inputs;
  if (name == "top_down") return RetentionBase::top_down;
  if (name == "bottom_up") return RetentionBase::bottom_up;
  throw std::invalid_argument("unknown retention base: '" + std::string(name) + "' (expected mean, top_down or bottom_up)");
}

std::string_view to_string(RetentionBase b) {
  switch (b) {
    case RetentionBase::mean_of_inputs:
      return "mean";
    case RetentionBase::top_down:
      return "top_down";
    case RetentionBase::bottom_up:
      return "bottom_up";
  }
  return "unknown";
}

double retention_rate(std::size_t retained, std::size_t input_a, std::size_t input_b, RetentionBase base) {
  double denom = 0.0;
  switch (base) {
    case RetentionBase::mean_of_inputs:
      denom = 0.5 * static_cast<double>(input_a + input_b);
      break;
    case RetentionBase::top_down:
      denom = static_cast<double>(input_a);
      break;
    case RetentionBase::bottom_up:
      denom = static_cast<double>(input_b);
      break;
  }
  return denom > 0.0 ? static_cast<double>(retained) / denom : 0.0;
}

namespace {

double cosine(const Vector& a, const Vector& b) {
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

void check_thresholds(const VerifyThresholds& t) {
  if (!(t.iou_gate >= 0.0 && t.iou_gate <= 1.0)) throw std::invalid_argument("iou_gate must lie in [0, 1]");
  if (!(t.sim_threshold >= -1.0 && t.sim_threshold <= 1.0)) {
    throw std::invalid_argument("sim_threshold must lie in [-1, 1]");
  }
}

}  // namespace

VerifyResult cross_verify(const AnnotationSet& a, const AnnotationSet& b, const EmbeddingProvider& emb,
                          const VerifyThresholds& thresholds) {
  check_thresholds(thresholds);
  a.validate();
  b.validate();
  if (a.image_id != b.image_id) {
    throw std::invalid_argument("cross_verify: image_id mismatch ('" + a.image_id + "' vs '" + b.image_id + "')");
  }
  if (a.source != AnnotationSource::top_down || b.source != AnnotationSource::bottom_up) {
    throw std::invalid_argument("cross_verify: expected a top_down set and a bottom_up set for '" + a.image_id + "'");
  }

  VerifyResult r;
  r.verified.image_id = a.image_id;
  r.verified.width = a.width;
  r.verified.height = a.height;
  r.verified.source = AnnotationSource::top_down;
  auto& rep = r.report;
  rep.input_a = a.instances.size();
  rep.input_b = b.instances.size();

  if (rep.input_a > 0 && rep.input_b > 0) {
    Matrix cost(rep.input_a, rep.input_b);
    for (std::size_t i = 0; i < rep.input_a; ++i)
      for (std::size_t j = 0; j < rep.input_b; ++j) cost(i, j) = 1.0 - iou(a.instances[i].box, b.instances[j].box);
    const Assignment asg = hungarian(cost);

    double sum_before = 0.0;
    double sum_after = 0.0;
    for (std::size_t i = 0; i < rep.input_a; ++i) {
      if (!asg.row_to_col[i]) continue;
      const std::size_t j = *asg.row_to_col[i];
      ScoredPair pair{i, j, 1.0 - cost(i, j), std::nullopt, false};
      ++rep.matched;
      if (pair.iou >= thresholds.iou_gate) {
        ++rep.gated;
        const Instance& top = a.instances[i];
        const Instance& bottom = b.instances[j];
        const double sim = cosine(emb.lookup(top.tag), emb.lookup(bottom.tag));
        pair.similarity = sim;
        sum_before += sim;
        if (sim >= thresholds.sim_threshold) {
          pair.retained = true;
          ++rep.retained;
          sum_after += sim;
          Instance kept = top;
          kept.alias_tag = bottom.tag != top.tag ? std::optional<std::string>(bottom.tag) : std::nullopt;
          kept.similarity = sim;
          r.verified.instances.push_back(std::move(kept));
        }
      }
      r.pairs.push_back(pair);
    }
    if (rep.gated > 0) rep.mean_similarity_before = sum_before / static_cast<double>(rep.gated);
    if (rep.retained > 0) rep.mean_similarity_after = sum_after / static_cast<double>(rep.retained);
  }
  rep.retention_rate = retention_rate(rep.retained, rep.input_a, rep.input_b, thresholds.retention_base);
  return r;
}

VerificationReport combine_reports(std::span<const VerificationReport> reports, RetentionBase base) {
  VerificationReport out;
  double sum_before = 0.0;
  double sum_after = 0.0;
  for (const auto& r : reports) {
    out.input_a += r.input_a;
    out.input_b += r.input_b;
    out.matched += r.matched;
    out.gated += r.gated;
    out.retained += r.retained;
    sum_before += r.mean_similarity_before * static_cast<double>(r.gated);
    sum_after += r.mean_similarity_after * static_cast<double>(r.retained);
  }
  if (out.gated > 0) out.mean_similarity_before = sum_before / static_cast<double>(out.gated);
  if (out.retained > 0) out.mean_similarity_after = sum_after / static_cast<double>(out.retained);
  out.retention_rate = retention_rate(out.retained, out.input_a, out.input_b, base);
  return out;
}

namespace {

struct LoadedDir {
  std::map<std::string, AnnotationSet> sets;
  std::vector<std::pair<std::string, std::string>> errors;
};

LoadedDir load_dir(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  std::sort(files.begin(), files.end());

  LoadedDir out;
  for (const auto& f : files) {
    try {
      AnnotationSet set = load_annotation_set(f);
      const std::string id = set.image_id;
      if (!out.sets.emplace(id, std::move(set)).second) {
        out.errors.emplace_back(f.string(), "duplicate image_id '" + id + "'");
      }
    } catch (const std::exception& e) {
      out.errors.emplace_back(f.string(), e.what());
    }
  }
  return out;
}

}  // namespace

BatchVerifyResult batch_verify(const std::filesystem::path& dir_a, const std::filesystem::path& dir_b,
                               const EmbeddingProvider& emb, const VerifyThresholds& thresholds, std::size_t jobs) {
  check_thresholds(thresholds);
  LoadedDir la = load_dir(dir_a);
  LoadedDir lb = load_dir(dir_b);

  BatchVerifyResult out;
  out.errors = std::move(la.errors);
  out.errors.insert(out.errors.end(), lb.errors.begin(), lb.errors.end());

  std::vector<std::string> ids;
  for (const auto& [id, set] : la.sets) {
    if (lb.sets.count(id)) {
      ids.push_back(id);
    } else {
      out.unpaired.emplace_back(id, "a");
    }
  }
  for (const auto& [id, set] : lb.sets)
    if (!la.sets.count(id)) out.unpaired.emplace_back(id, "b");

  std::vector<std::optional<VerifyResult>> results(ids.size());
  std::vector<std::string> failures(ids.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t k = next++; k < ids.size(); k = next++) {
      try {
        results[k] = cross_verify(la.sets.at(ids[k]), lb.sets.at(ids[k]), emb, thresholds);
      } catch (const std::exception& e) {
        failures[k] = e.what();
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(jobs, ids.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  std::vector<VerificationReport> reports;
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (results[k]) {
      reports.push_back(results[k]->report);
      out.images.emplace(ids[k], std::move(*results[k]));
    } else {
      out.errors.emplace_back(ids[k], failures[k]);
    }
  }
  out.aggregate = combine_reports(reports, thresholds.retention_base);
  return out;
}

void SimilarityHistogram::add(double value) {
  if (!std::isfinite(value)) throw std::invalid_argument("SimilarityHistogram: non-finite value");
  const double t = (value - lo) / (hi - lo) * static_cast<double>(counts.size());
  const auto bin = static_cast<std::ptrdiff_t>(std::floor(t));
  const auto last = static_cast<std::ptrdiff_t>(counts.size()) - 1;
  ++counts[static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(bin, 0, last))];
}

std::size_t SimilarityHistogram::total() const {
  std::size_t n = 0;
  for (std::size_t c : counts) n += c;
  return n;
}

RetentionSummary retention_stats(std::span<const VerifyResult> results, RetentionBase base) {
  RetentionSummary s;
  std::vector<VerificationReport> reports;
  reports.reserve(results.size());
  for (const auto& r : results) {
    reports.push_back(r.report);
    for (const auto& p : r.pairs) {
      if (!p.similarity) continue;
      s.before.add(*p.similarity);
      if (p.retained) s.after.add(*p.similarity);
    }
  }
  s.totals = combine_reports(reports, base);
  return s;
}

}  // namespace promptkit
