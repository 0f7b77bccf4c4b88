#pragma once

#include <map>
#include <string>
#include <vector>

#include "ovocc/tensor.hpp"
#include "ovocc/vocab.hpp"

namespace ovocc::eval {

using vocab::ClassId;

struct ClassCounts {
  std::size_t tp = 0, fp = 0, fn = 0;
};

// Keys are superclass ids. Classes with TP + FP + FN = 0 are absent.
struct IoUReport {
  std::map<ClassId, double> per_class_iou;
  std::map<ClassId, ClassCounts> counts;
  double miou = 0.0;
};

// Both grids hold class ids of `table` (0 = free); they are projected to
// superclasses and scored over visible voxels. Throws ShapeMismatch.
IoUReport miou(const std::vector<ClassId>& pred, const std::vector<ClassId>& gt,
               const std::vector<std::uint8_t>& visible, const vocab::ClassEmbeddingTable& table);

// All-point average precision. Points are ranked by descending score,
// ties by ascending index. Throws NoRelevantPoints.
double retrieval_ap(const std::vector<double>& scores, const std::vector<std::uint8_t>& relevant);

struct Query {
  std::string name;
  std::vector<double> embedding;
};

struct RetrievalReport {
  std::map<std::string, double> ap_all, ap_vis;
  double map_all = 0.0, map_vis = 0.0;
  std::vector<std::string> skipped_vis;  // no relevant visible point
  std::vector<std::string> skipped_all;  // no relevant point at all
};

// point_embeddings is (P, E); relevance[q][p] marks point p relevant to
// query q. Scores are dot products. Queries without relevant points are
// skipped for the affected mean.
RetrievalReport retrieval_map(const Tensor& point_embeddings, const std::vector<Query>& queries,
                              const std::vector<std::vector<std::uint8_t>>& relevance,
                              const std::vector<std::uint8_t>& visible);

void write_iou_csv(const std::string& path, const IoUReport& r, const vocab::ClassEmbeddingTable& table);
void write_retrieval_csv(const std::string& path, const RetrievalReport& r);

}  // namespace ovocc::eval
