#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace negrefine {

// Small self-contained dataset in a shared text/image space:
//
//   vocab/            text vectors for every label and lexicon word
//   id_labels.txt     in-distribution classes
//   lexicon.txt       candidate negatives
//   images/id, images/ood_far, images/ood_near
//   oracle_script.tsv replies for the scripted oracle
//   config.ini        lookup embedder + scripted oracle, relative paths
//
// Some in-distribution images are deliberately awkward: a subcategory of one
// class, a class photographed next to a proper-noun landmark, and a class that
// co-occurs with a negative object.
struct FixtureOptions {
  std::uint64_t seed = 3;
  std::size_t dim = 128;
  std::size_t id_per_class = 10;
  std::size_t awkward_per_class = 6;
  std::size_t ood_far = 60;
  std::size_t ood_near_negative = 37;
  std::size_t ood_near_decoy = 3;
  // Image noise: a small part inside the span of the vocabulary, a large part
  // orthogonal to every label (content no label describes).
  double label_noise = 0.03;
  double visual_noise = 2.5;
  // Daisy component left in photos of the subcategory.
  double subcategory_daisy = 0.3;
  // Relative size of the sunflower in bee photos.
  double cooccur_weight = 2.0;
  // Far OOD images show their object at a random strength in [min, 1].
  double far_strength_min = 0.1;
};

struct FixtureSummary {
  std::size_t id_labels = 0;
  std::size_t lexicon = 0;
  std::size_t id_images = 0;
  std::size_t ood_images = 0;
  std::filesystem::path config;
};

FixtureSummary write_fixture(const std::filesystem::path& dir, const FixtureOptions& options = {});

}  // namespace negrefine
