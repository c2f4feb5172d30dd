#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scopenet/geometry.hpp"
#include "scopenet/tensor.hpp"

namespace scopenet {

struct DataConfig {
  int image_size = 64;
  int min_objects = 1;
  int max_objects = 6;
  double min_size = 8.0;
  double max_size = 56.0;
  double max_aspect = 8.0;      // side ratio cap before clamping to min/max size
  double max_overlap_iou = 0.5; // rejected above this unless crowding enabled
  bool allow_crowding = false;
  double noise = 0.05;
  int num_classes = 3;          // 1 rectangle, 2 ellipse, 3 triangle
};

struct Scene {
  int id = 0;
  Tensor image;  // [1, H, W], values on the 8-bit grid in [0, 1]
  std::vector<LabeledBox> objects;
};

struct Dataset {
  std::vector<Scene> scenes;
  uint64_t seed = 0;
  DataConfig config;
};

/// Deterministic scenes: each scene draws from its own stream mixed from
/// (seed, scene_id), so any subset regenerates identically. Classes are shape
/// types rendered as filled rasters plus Gaussian noise; images are quantized
/// to the 8-bit grid at creation so a PGM round trip is exact.
Dataset generate_dataset(int count, const DataConfig& cfg, uint64_t seed, int first_id = 0);

/// Layout: images/NNNNNN.pgm, annotations.jsonl, manifest.json (seed+params).
void write_dataset(const Dataset& data, const std::string& dir);
Dataset load_dataset(const std::string& dir);

void write_pgm(const Tensor& image, const std::string& path);
Tensor read_pgm(const std::string& path);

}  // namespace scopenet
