#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dcdnn/sample.hpp"

namespace dcdnn {

// 8-bit grayscale plane, row-major.
struct Plane {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> samples;
    int image_id = 0;

    std::uint8_t at(int x, int y) const {
        return samples[static_cast<std::size_t>(y) * width + x];
    }
    bool contains(int x, int y) const {
        return x >= 0 && y >= 0 && x < width && y < height;
    }
};

// Binary 8-bit PGM (P5). Anything else is a FormatError.
Plane load_plane(const std::string& path);
void save_plane(const Plane& plane, const std::string& path);

// Offset of one reference sample relative to the block's top-left pixel.
struct RefOffset {
    int dx = 0;
    int dy = 0;
    bool operator==(const RefOffset&) const = default;
};

// Canonical ordering of the 4NL+L^2 reference positions: the LxL corner
// block, then L rows above spanning width 2N, then L columns left spanning
// height 2N; row-major within each region. This ordering is part of the
// model contract (layout version below).
inline constexpr std::uint32_t kLayoutVersion = 1;
std::vector<RefOffset> reference_layout(int block_size, int ref_lines);

// Fills unavailable entries by scanning the vector in its canonical order
// and propagating the nearest previously available value; entries before
// the first available one take its value. No sample available at all means
// mid-gray (128).
Vec substitute_unavailable(const Vec& values, const std::vector<std::uint8_t>& available);

// Gathers the reference region (with substitution for out-of-plane
// positions), zero-centers both the reference vector and the target block
// by the reference mean.
TrainSample extract_sample(const Plane& plane, int x, int y, int block_size,
                           int ref_lines);

// One transform-unit rectangle in plane coordinates.
struct TuRect {
    int x = 0;
    int y = 0;
    int size = 0;
    bool operator==(const TuRect&) const = default;
};

// Reference to a sample inside a per-size dataset.
struct SampleRef {
    int block_size = 0;
    std::uint32_t index = 0;
    bool operator==(const SampleRef&) const = default;
};

// All transform units of one prediction unit. Members are filled when the
// corpus is extracted; the complexity filter may thin them afterwards.
struct PredictionGroup {
    std::uint32_t group_id = 0;
    std::uint32_t image_id = 0;
    int pu_x = 0;
    int pu_y = 0;
    int pu_size = 0;
    std::vector<TuRect> tiles;
    std::vector<SampleRef> members;
};

// Tiling presets: "mixed64" (64x64 mixed quadtree: one 32x32, eight 16x16,
// fourteen 8x8, eight 4x4) or "uniform:<n>".
std::vector<TuRect> tu_tiling(int pu_size, const std::string& spec);

// PU grid over the plane (edges cropped to whole PUs), one group per PU,
// tiles from the preset. Members are left empty here.
std::vector<PredictionGroup> build_groups(const Plane& plane, int pu_size,
                                          const std::string& tiling_spec);

// Per image: threshold = 2 * mean member MSE; keep samples strictly below
// it (non-strict when the mean is 0, so perfectly predictable images
// survive). Returns kept indices in input order.
std::vector<std::size_t> complexity_filter_indices(
    const std::vector<TrainSample>& samples, const std::vector<double>& baseline_mse);
std::vector<TrainSample> complexity_filter(const std::vector<TrainSample>& samples,
                                           const std::vector<double>& baseline_mse);

// Samples of one block size plus the groups they participate in.
struct SizeDataset {
    int block_size = 0;
    int ref_lines = 0;
    std::vector<TrainSample> samples;
};

// Training corpus: one dataset per block size plus PU-level groups whose
// members point into those datasets.
struct Corpus {
    std::vector<SizeDataset> by_size;  // ascending block size
    std::vector<PredictionGroup> groups;

    const SizeDataset* find(int block_size) const;
    SizeDataset* find(int block_size);
    const TrainSample& sample(const SampleRef& ref) const;
    std::size_t total_samples() const;
};

// .dcds container: single block size per file; groups store only the
// members of that size, so a multi-size corpus is a set of sibling files
// sharing group ids.
inline constexpr std::uint32_t kDatasetVersion = 1;
void write_dataset(const std::vector<TrainSample>& samples,
                   const std::vector<PredictionGroup>& groups, int block_size,
                   int ref_lines, const std::string& path);
struct DatasetFile {
    SizeDataset data;
    std::vector<PredictionGroup> groups;
};
DatasetFile read_dataset(const std::string& path);

// Reassembles per-size files into a corpus, merging groups by id.
Corpus merge_corpus(const std::vector<DatasetFile>& files);

// Extraction driver: walks a PU grid (stride defaults to pu_size), extracts
// every tile, and records group membership.
Corpus extract_corpus(const Plane& plane, int pu_size, const std::string& tiling_spec,
                      int ref_lines, int stride = 0);

// Appends src to dst, renumbering group ids and sample indices.
void append_corpus(Corpus& dst, const Corpus& src);

}  // namespace dcdnn
