#pragma once

// Dataset plumbing: sample loading, the deterministic K-fold protocol, a
// synthetic ellipse dataset for desk-scale training, and label-preserving
// augmentation.

#include <map>
#include <string>
#include <vector>

#include "qtseg/image_io.hpp"
#include "qtseg/rng.hpp"
#include "qtseg/tensor.hpp"

namespace qtseg {

struct Sample {
  Tensor image;      // [3, H, W] in [0, 1]
  Tensor mask;       // [H, W] class indices, 0 = background
  std::string name;  // source identifier
};

// Reads an image/mask pair and resizes both to target x target (image
// bilinear, mask nearest). The pair must agree on size before resizing.
Sample load_sample(const std::string& image_path, const std::string& mask_path,
                   int64_t target, int64_t num_classes);

// One fold of a K-fold split over per-class ordered name lists. Each class
// list is cut into K contiguous chunks with boundaries floor(j*L/K); the
// test set is the union of chunk k over all classes, the train set the rest.
// Purely positional, so the split is reproducible anywhere from the lists.
struct FoldSpec {
  int fold = 0;
  int folds = 0;
  std::vector<std::string> train;  // in list order, classes concatenated
  std::vector<std::string> test;
};

FoldSpec kfold_split(const std::vector<std::vector<std::string>>& names_per_class,
                     int folds, int fold);

// Synthetic segmentation task: per class, 1-3 filled ellipses with random
// center, half-axes in [size/7, size/4], and rotation, drawn bright on a noisy
// dark background; the mask is the exact rasterization. Deterministic per
// seed. Ellipse centers stay far enough from the border that nothing clips.
std::vector<Sample> synth_dataset(int count, int64_t size, int64_t num_classes,
                                  uint64_t seed);

// The deterministic core of augment(): explicit flip/rotation choices.
// rot90 counts quarter-turns counterclockwise; image and mask move together.
Sample apply_augment(const Sample& s, bool hflip, bool vflip, int rot90);

// Random augmentation: independent 50% horizontal and vertical flips, then a
// uniform quarter-turn rotation. Always consumes exactly three draws.
Sample augment(const Sample& s, Rng& rng);

// Directory layout: <dir>/images/<name>.<ext> paired with
// <dir>/masks/<name>.png. Names are returned sorted; the class key of a
// name is its longest leading run of alphabetic characters (BUSI-style
// "benign (1)" -> "benign"), used to group the K-fold class lists.
struct DatasetIndex {
  std::vector<std::string> names;                      // sorted
  std::map<std::string, std::string> image_paths;      // name -> file
  std::map<std::string, std::string> mask_paths;       // name -> file
  std::vector<std::vector<std::string>> names_per_class;  // sorted class key order
  std::vector<std::string> class_keys;
};

DatasetIndex scan_dataset(const std::string& dir);

std::string class_key(const std::string& name);

// Stacks per-sample tensors into a batch: images -> [B,3,H,W],
// masks -> [B,H,W]. All samples must share one size.
Tensor stack_images(const std::vector<Sample>& samples,
                    const std::vector<int64_t>& indices);
Tensor stack_masks(const std::vector<Sample>& samples,
                   const std::vector<int64_t>& indices);

}  // namespace qtseg
