#pragma once

#include <string>
#include <vector>

#include "aptlab/checkpoint.hpp"
#include "aptlab/rng.hpp"

namespace aptlab {

enum class DatasetKind { gmm_ring, checkerboard, image_corpus };

struct DatasetSpec {
    DatasetKind kind = DatasetKind::gmm_ring;
    // gmm_ring
    int n_modes = 8;
    double radius = 1.0;
    double mode_std = 0.05;
    // checkerboard
    int grid = 4;
    double extent = 2.0;
    // image_corpus
    std::string path;

    int sample_dim() const;
    int num_classes() const;
    std::vector<std::pair<double, double>> mode_centers() const;  // ring only
};

struct Batch {
    Tensor x;                 // (n x dim)
    std::vector<int> labels;  // class id per row
};

Batch sample_real(const DatasetSpec& spec, Rng& rng, int n);

// Exact log-density of the synthetic distributions (used by eval oracles).
double log_density(const DatasetSpec& spec, const std::vector<double>& x);

// Minimal self-describing image corpus, little-endian:
//   magic "APTC" | u32 version | u32 count | u32 edge | u32 channels | u32 classes
//   | count records of [u32 label | edge*edge*channels bytes, row-major, channel-last]
struct ImageCorpus {
    int edge = 0;
    int channels = 0;
    int classes = 0;
    Tensor images;            // (count x edge*edge*channels), scaled to [-1, 1]
    std::vector<int> labels;

    Batch sample(Rng& rng, int n) const;
};

ImageCorpus load_image_corpus(const std::string& path);
void write_image_corpus(const std::string& path, int edge, int channels, int classes,
                        const std::vector<std::vector<uint8_t>>& pixels, const std::vector<int>& labels);

}  // namespace aptlab
