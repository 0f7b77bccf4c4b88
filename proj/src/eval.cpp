#include "ovocc/eval.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <numeric>

#include "ovocc/error.hpp"

namespace ovocc::eval {

namespace {

ClassId project(ClassId c, const vocab::ClassEmbeddingTable& table) {
  return c == vocab::kFree ? vocab::kFree : vocab::subclass_to_superclass(c, table);
}

std::ofstream open_csv(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  out << std::setprecision(17);
  return out;
}

}  // namespace

IoUReport miou(const std::vector<ClassId>& pred, const std::vector<ClassId>& gt,
               const std::vector<std::uint8_t>& visible, const vocab::ClassEmbeddingTable& table) {
  if (pred.size() != gt.size() || visible.size() != gt.size()) {
    throw Error(ErrorCode::kShapeMismatch, "miou: pred " + std::to_string(pred.size()) + ", gt " +
                                               std::to_string(gt.size()) + ", visible " +
                                               std::to_string(visible.size()));
  }
  IoUReport r;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!visible[i]) continue;
    const ClassId p = project(pred[i], table), g = project(gt[i], table);
    if (p == g) {
      if (g != vocab::kFree) ++r.counts[g].tp;
      continue;
    }
    if (p != vocab::kFree) ++r.counts[p].fp;
    if (g != vocab::kFree) ++r.counts[g].fn;
  }
  double sum = 0.0;
  for (const auto& [c, k] : r.counts) {
    const double iou = double(k.tp) / double(k.tp + k.fp + k.fn);
    r.per_class_iou[c] = iou;
    sum += iou;
  }
  r.miou = r.per_class_iou.empty() ? 0.0 : sum / double(r.per_class_iou.size());
  return r;
}

double retrieval_ap(const std::vector<double>& scores, const std::vector<std::uint8_t>& relevant) {
  if (scores.size() != relevant.size()) {
    throw Error(ErrorCode::kShapeMismatch, "retrieval_ap: score/relevance length mismatch");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double hits = 0.0, ap = 0.0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (!relevant[order[rank]]) continue;
    hits += 1.0;
    ap += hits / double(rank + 1);
  }
  if (hits == 0.0) throw Error(ErrorCode::kNoRelevantPoints, "retrieval_ap: no relevant points");
  return ap / hits;
}

RetrievalReport retrieval_map(const Tensor& points, const std::vector<Query>& queries,
                              const std::vector<std::vector<std::uint8_t>>& relevance,
                              const std::vector<std::uint8_t>& visible) {
  const std::size_t n = points.rank() == 2 ? points.dim(0) : 0, e = points.last_dim();
  if (points.rank() != 2 || relevance.size() != queries.size() || visible.size() != n) {
    throw Error(ErrorCode::kShapeMismatch, "retrieval_map: inconsistent inputs");
  }
  RetrievalReport r;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    if (queries[q].embedding.size() != e || relevance[q].size() != n) {
      throw Error(ErrorCode::kShapeMismatch, "retrieval_map: query " + queries[q].name);
    }
    std::vector<double> scores(n);
    for (std::size_t p = 0; p < n; ++p) {
      double s = 0.0;
      for (std::size_t k = 0; k < e; ++k) s += points[p * e + k] * queries[q].embedding[k];
      scores[p] = s;
    }
    const bool any = std::any_of(relevance[q].begin(), relevance[q].end(), [](auto v) { return v != 0; });
    if (any) {
      r.ap_all[queries[q].name] = retrieval_ap(scores, relevance[q]);
    } else {
      r.skipped_all.push_back(queries[q].name);
    }
    std::vector<double> vs;
    std::vector<std::uint8_t> vr;
    for (std::size_t p = 0; p < n; ++p) {
      if (!visible[p]) continue;
      vs.push_back(scores[p]);
      vr.push_back(relevance[q][p]);
    }
    if (std::any_of(vr.begin(), vr.end(), [](auto v) { return v != 0; })) {
      r.ap_vis[queries[q].name] = retrieval_ap(vs, vr);
    } else {
      r.skipped_vis.push_back(queries[q].name);
    }
  }
  auto mean = [](const std::map<std::string, double>& m) {
    double s = 0.0;
    for (const auto& [_, v] : m) s += v;
    return m.empty() ? 0.0 : s / double(m.size());
  };
  r.map_all = mean(r.ap_all);
  r.map_vis = mean(r.ap_vis);
  return r;
}

void write_iou_csv(const std::string& path, const IoUReport& r, const vocab::ClassEmbeddingTable& table) {
  std::ofstream out = open_csv(path);
  out << "class,id,iou,tp,fp,fn\n";
  for (const auto& [c, iou] : r.per_class_iou) {
    const ClassCounts& k = r.counts.at(c);
    out << table.superclass_name(c) << ',' << c << ',' << iou << ',' << k.tp << ',' << k.fp << ','
        << k.fn << '\n';
  }
  out << "mean,," << r.miou << ",,,\n";
}

void write_retrieval_csv(const std::string& path, const RetrievalReport& r) {
  std::ofstream out = open_csv(path);
  out << "query,ap_all,ap_vis\n";
  std::vector<std::string> names;
  for (const auto& [q, _] : r.ap_all) names.push_back(q);
  for (const auto& [q, _] : r.ap_vis)
    if (!r.ap_all.count(q)) names.push_back(q);
  std::sort(names.begin(), names.end());
  for (const auto& q : names) {
    out << '"' << q << "\",";
    if (r.ap_all.count(q)) out << r.ap_all.at(q);
    out << ',';
    if (r.ap_vis.count(q)) out << r.ap_vis.at(q);
    out << '\n';
  }
  out << "mean," << r.map_all << ',' << r.map_vis << '\n';
}

}  // namespace ovocc::eval
