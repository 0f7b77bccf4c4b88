#pragma once

#include <memory>
#include <string>
#include <vector>

#include "ovocc/config.hpp"
#include "ovocc/eval.hpp"
#include "ovocc/synthworld.hpp"
#include "ovocc/trainer.hpp"
#include "ovocc/vocab.hpp"

// Builds pipeline objects from a RunConfig.
namespace ovocc::pipeline {

vocab::ClassEmbeddingTable make_table(const config::RunConfig& cfg);
synthworld::SceneSpec make_scene_spec(const config::RunConfig& cfg, const vocab::ClassEmbeddingTable& table);
synthworld::RenderOptions make_render_options(const config::RunConfig& cfg,
                                              const vocab::ClassEmbeddingTable& table);
// Generates the world, renders the rig and computes the visible mask.
trainer::SceneData make_scene(const config::RunConfig& cfg, const vocab::ClassEmbeddingTable& table);

depthbin::DepthModel make_depth_model(const config::RunConfig& cfg);
// Embedding width follows the table.
std::unique_ptr<trainer::OccModel> make_occ_model(const config::RunConfig& cfg,
                                                  const vocab::ClassEmbeddingTable& table);

// Decoding candidates; every table class when the list is empty.
std::vector<vocab::ClassId> candidate_ids(const config::RunConfig& cfg, const vocab::ClassEmbeddingTable& table);

// Query names; defaults to the classes present in the ground truth.
std::vector<std::string> query_names(const config::RunConfig& cfg, const synthworld::World& world,
                                     const vocab::ClassEmbeddingTable& table);

// Retrieval over ground-truth-occupied voxel centres (the point set). A
// point is relevant to a query when its superclass matches the query's.
struct RetrievalSet {
  std::vector<std::size_t> voxels;  // flat voxel index per point
  Tensor points;                    // (P, E) predicted embeddings
  std::vector<eval::Query> queries;
  std::vector<std::vector<std::uint8_t>> relevance;  // per query
  std::vector<std::uint8_t> visible;
};

RetrievalSet retrieval_set(const Tensor& o_sa, const synthworld::World& world, const occupancy::Mask& visible,
                           const vocab::ClassEmbeddingTable& table, const std::vector<std::string>& queries);

// Rows of `points` permuted by a seeded shuffle.
Tensor shuffle_points(const Tensor& points, std::uint64_t seed);

// Decoded occupancy as "i,j,k,class_name" CSV or binary little-endian PLY
// of voxel centres with the class palette. Throws UnsupportedFormat.
void export_occupancy(const std::string& path, const geometry::VoxelGridSpec& grid,
                      const std::vector<vocab::ClassId>& classes, const vocab::ClassEmbeddingTable& table,
                      const std::string& format);

}  // namespace ovocc::pipeline
