// SPDX-License-Identifier: Apache-2.0
#include "synthetic.hpp"

#include <algorithm>
#include <cstdio>

#include "genclip/rng.hpp"

namespace genclip::fixtures {

namespace fs = std::filesystem;

EncoderSpec tiny_spec(std::uint64_t seed) {
  EncoderSpec s;
  s.num_vision_layers = 8;
  s.selected_layers = {2, 4, 6, 8};
  s.vision_dims = {32};
  s.text_dim = 16;
  s.patch_size = 4;
  s.image_size = 32;
  s.text_seq_len = 32;
  s.num_text_layers = 4;
  s.vocab_size = 4096;
  s.seed = seed;
  return s;
}

BlobImage make_blob_image(std::uint64_t seed, int image_size, int patch, bool anomalous, const std::string& class_name,
                          int index) {
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(index)));
  BlobImage b;
  Sample& s = b.sample;
  s.image = Image(image_size, image_size, 3);
  s.gt_map = Grid(image_size, image_size, 0.0);
  s.class_name = class_name;
  s.split = Split::test;
  for (int y = 0; y < image_size; ++y)
    for (int x = 0; x < image_size; ++x) {
      const double base = 0.35 + 0.1 * rng.uniform();
      s.image.at(y, x, 0) = base;
      s.image.at(y, x, 1) = base + 0.05 * rng.uniform();
      s.image.at(y, x, 2) = base - 0.05 * rng.uniform();
    }
  const int grid = image_size / patch;
  if (anomalous) {
    const int bw = 2 + static_cast<int>(rng.below(2));
    const int bh = 2;
    const int gx = static_cast<int>(rng.below(static_cast<std::uint64_t>(grid - bw + 1)));
    const int gy = static_cast<int>(rng.below(static_cast<std::uint64_t>(grid - bh + 1)));
    for (int y = gy * patch; y < (gy + bh) * patch; ++y)
      for (int x = gx * patch; x < (gx + bw) * patch; ++x) {
        s.image.at(y, x, 0) = 0.9 + 0.05 * rng.uniform();
        s.image.at(y, x, 1) = 0.15 + 0.05 * rng.uniform();
        s.image.at(y, x, 2) = 0.1;
        s.gt_map.at(y, x) = 1.0;
      }
  }
  s.image_label = anomalous ? 1 : 0;
  s.defect_type = anomalous ? "blob" : "good";
  char stem[16];
  std::snprintf(stem, sizeof stem, "%03d", index);
  b.key = class_name + "/test/" + s.defect_type + "/" + stem;
  return b;
}

std::vector<BlobImage> make_blob_set(std::uint64_t seed, int count, int image_size, int patch,
                                     const std::vector<std::string>& classes, int good_every) {
  std::vector<BlobImage> out;
  for (int i = 0; i < count; ++i) {
    const bool anomalous = good_every <= 0 || (i + 1) % good_every != 0;
    out.push_back(make_blob_image(seed, image_size, patch, anomalous, classes[static_cast<std::size_t>(i) % classes.size()], i));
  }
  return out;
}

std::vector<TrainingSample> to_training(const std::vector<BlobImage>& images, const FrozenEncoder& encoder) {
  std::vector<TrainingSample> out;
  for (const auto& b : images) out.push_back(make_training_sample(b.sample, b.key, encoder));
  return out;
}

fs::path write_mvtec_tree(const fs::path& root, std::uint64_t seed, int per_class, int image_size, int patch,
                          const std::vector<std::string>& classes) {
  int index = 0;
  for (const auto& cls : classes) {
    for (int i = 0; i < per_class; ++i, ++index) {
      const bool train_split = i == 0;
      const bool anomalous = !train_split && i % 3 != 1;
      const BlobImage b = make_blob_image(seed, image_size, patch, anomalous, cls, index);
      char stem[16];
      std::snprintf(stem, sizeof stem, "%03d", i);
      const fs::path dir = root / cls / (train_split ? "train" : "test") / b.sample.defect_type;
      fs::create_directories(dir);
      write_png_rgb8(dir / (std::string(stem) + ".png"), b.sample.image);
      if (anomalous) {
        const fs::path gt = root / cls / "ground_truth" / "blob";
        fs::create_directories(gt);
        write_png_gray8(gt / (std::string(stem) + "_mask.png"), b.sample.gt_map);
      }
    }
  }
  return root;
}

ProInstance quantized_pro_instance(Rng& rng, int num_maps) {
  ProInstance inst;
  for (int i = 0; i < num_maps; ++i) {
    Grid s(16, 16), m(16, 16);
    std::vector<int> j(s.size());
    for (auto& v : j) v = static_cast<int>(rng.below(101));
    const int y0 = static_cast<int>(rng.below(10)), x0 = static_cast<int>(rng.below(10));
    for (int y = y0; y < y0 + 4; ++y)
      for (int x = x0; x < x0 + 5; ++x) {
        m.at(y, x) = 1.0;
        int& v = j[static_cast<std::size_t>(y) * 16 + x];
        v = std::min(100, v + 30);
      }
    j[15 * 16 + 15] = 0;  // outside every region
    j[15 * 16 + 14] = 100;
    for (std::size_t p = 0; p < s.size(); ++p) s.values[p] = j[p] / 100.0;
    inst.maps.push_back(std::move(s));
    inst.masks.push_back(std::move(m));
  }
  return inst;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("genclip_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace genclip::fixtures
