#include "dcdnn/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>

#include "binio.hpp"
#include "dcdnn/errors.hpp"
#include "dcdnn/fcnet.hpp"

namespace dcdnn {

namespace binio {

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + path);
}

}  // namespace binio

// --- PGM -------------------------------------------------------------------

namespace {

// Reads one whitespace/comment-separated ASCII token from a PGM header.
std::string pgm_token(const std::vector<std::uint8_t>& buf, std::size_t& pos) {
    while (pos < buf.size()) {
        if (buf[pos] == '#') {
            while (pos < buf.size() && buf[pos] != '\n') ++pos;
        } else if (std::isspace(buf[pos])) {
            ++pos;
        } else {
            break;
        }
    }
    std::string tok;
    while (pos < buf.size() && !std::isspace(buf[pos]) && buf[pos] != '#')
        tok.push_back(static_cast<char>(buf[pos++]));
    if (tok.empty()) throw FormatError("malformed PGM header");
    return tok;
}

int pgm_int(const std::vector<std::uint8_t>& buf, std::size_t& pos) {
    const std::string tok = pgm_token(buf, pos);
    for (char c : tok)
        if (!std::isdigit(static_cast<unsigned char>(c)))
            throw FormatError("malformed PGM header field: " + tok);
    return std::stoi(tok);
}

}  // namespace

Plane load_plane(const std::string& path) {
    const auto buf = binio::read_file(path);
    if (buf.empty()) throw FormatError("empty file: " + path);
    std::size_t pos = 0;
    if (pgm_token(buf, pos) != "P5")
        throw FormatError("not a binary PGM (P5): " + path);
    const int width = pgm_int(buf, pos);
    const int height = pgm_int(buf, pos);
    const int maxval = pgm_int(buf, pos);
    if (width <= 0 || height <= 0) throw FormatError("bad PGM dimensions: " + path);
    if (maxval <= 0 || maxval > 255)
        throw FormatError("unsupported PGM bit depth (maxval " + std::to_string(maxval) +
                          "): " + path);
    if (pos >= buf.size() || !std::isspace(buf[pos]))
        throw FormatError("malformed PGM header: " + path);
    ++pos;  // single whitespace between maxval and raster
    const std::size_t count = static_cast<std::size_t>(width) * height;
    if (buf.size() - pos < count) throw FormatError("PGM raster truncated: " + path);
    Plane plane;
    plane.width = width;
    plane.height = height;
    plane.samples.assign(buf.begin() + static_cast<std::ptrdiff_t>(pos),
                         buf.begin() + static_cast<std::ptrdiff_t>(pos + count));
    return plane;
}

void save_plane(const Plane& plane, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << "P5\n" << plane.width << " " << plane.height << "\n255\n";
    f.write(reinterpret_cast<const char*>(plane.samples.data()),
            static_cast<std::streamsize>(plane.samples.size()));
    if (!f) throw IoError("write failed: " + path);
}

// --- reference geometry ------------------------------------------------------

std::vector<RefOffset> reference_layout(int block_size, int ref_lines) {
    const int n = block_size;
    const int l = ref_lines;
    std::vector<RefOffset> out;
    out.reserve(reference_vector_length(n, l));
    for (int dy = -l; dy < 0; ++dy)  // corner block
        for (int dx = -l; dx < 0; ++dx) out.push_back({dx, dy});
    for (int dy = -l; dy < 0; ++dy)  // rows above, spanning above + above-right
        for (int dx = 0; dx < 2 * n; ++dx) out.push_back({dx, dy});
    for (int dy = 0; dy < 2 * n; ++dy)  // columns left, spanning left + below-left
        for (int dx = -l; dx < 0; ++dx) out.push_back({dx, dy});
    return out;
}

Vec substitute_unavailable(const Vec& values, const std::vector<std::uint8_t>& available) {
    if (values.size() != available.size())
        throw ShapeError("substitute_unavailable: length mismatch");
    Vec out(values.size());
    std::size_t first = values.size();
    for (std::size_t i = 0; i < values.size(); ++i)
        if (available[i]) {
            first = i;
            break;
        }
    if (first == values.size()) {
        out.assign(values.size(), 128.0);  // 8-bit default value
        return out;
    }
    for (std::size_t i = 0; i <= first; ++i) out[i] = values[first];
    for (std::size_t i = first + 1; i < values.size(); ++i)
        out[i] = available[i] ? values[i] : out[i - 1];
    return out;
}

TrainSample extract_sample(const Plane& plane, int x, int y, int block_size,
                           int ref_lines) {
    if (block_size < 1 || ref_lines < 1)
        throw UsageError("extract_sample: block size and ref lines must be >= 1");
    if (x < 0 || y < 0 || x + block_size > plane.width || y + block_size > plane.height)
        throw UsageError("extract_sample: block out of bounds");

    const auto layout = reference_layout(block_size, ref_lines);
    Vec raw(layout.size(), 0.0);
    std::vector<std::uint8_t> avail(layout.size(), 0);
    for (std::size_t i = 0; i < layout.size(); ++i) {
        const int px = x + layout[i].dx;
        const int py = y + layout[i].dy;
        if (plane.contains(px, py)) {
            raw[i] = static_cast<double>(plane.at(px, py));
            avail[i] = 1;
        }
    }
    Vec filled = substitute_unavailable(raw, avail);

    double mean = 0.0;
    for (double v : filled) mean += v;
    mean /= static_cast<double>(filled.size());

    TrainSample s;
    s.ref_mean = mean;
    s.ref_vector.resize(filled.size());
    for (std::size_t i = 0; i < filled.size(); ++i) s.ref_vector[i] = filled[i] - mean;
    s.target.resize(static_cast<std::size_t>(block_size) * block_size);
    for (int by = 0; by < block_size; ++by)
        for (int bx = 0; bx < block_size; ++bx)
            s.target[static_cast<std::size_t>(by) * block_size + bx] =
                static_cast<double>(plane.at(x + bx, y + by)) - mean;
    s.origin = BlockOrigin{static_cast<std::uint32_t>(plane.image_id),
                           static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y),
                           static_cast<std::uint32_t>(block_size)};
    return s;
}

// --- groups -----------------------------------------------------------------

namespace {

void quad_fill(std::vector<TuRect>& out, int x, int y, int size, int leaf) {
    if (size == leaf) {
        out.push_back({x, y, size});
        return;
    }
    const int h = size / 2;
    quad_fill(out, x, y, h, leaf);
    quad_fill(out, x + h, y, h, leaf);
    quad_fill(out, x, y + h, h, leaf);
    quad_fill(out, x + h, y + h, h, leaf);
}

std::vector<TuRect> mixed64_tiling() {
    // 64x64 quadtree: top-left 32x32 TU; top-right and bottom-left quadrants
    // as 16x16 TUs; bottom-right refined down to 8x8 with the last 16x16
    // holding two 8x8 TUs and eight 4x4 TUs.
    std::vector<TuRect> t;
    t.push_back({0, 0, 32});
    quad_fill(t, 32, 0, 32, 16);
    quad_fill(t, 0, 32, 32, 16);
    quad_fill(t, 32, 32, 16, 8);
    quad_fill(t, 48, 32, 16, 8);
    quad_fill(t, 32, 48, 16, 8);
    t.push_back({48, 48, 8});
    t.push_back({56, 48, 8});
    quad_fill(t, 48, 56, 8, 4);
    quad_fill(t, 56, 56, 8, 4);
    return t;
}

}  // namespace

std::vector<TuRect> tu_tiling(int pu_size, const std::string& spec) {
    if (spec == "mixed64") {
        if (pu_size != 64) throw ConfigError("mixed64 tiling requires a 64x64 PU");
        return mixed64_tiling();
    }
    if (spec.rfind("uniform:", 0) == 0) {
        int tu = 0;
        try {
            tu = std::stoi(spec.substr(8));
        } catch (...) {
            throw ConfigError("bad tiling spec: " + spec);
        }
        if (tu < 1 || pu_size % tu != 0)
            throw ConfigError("tiling " + spec + " does not cover a " +
                              std::to_string(pu_size) + "x" + std::to_string(pu_size) +
                              " PU");
        std::vector<TuRect> t;
        for (int y = 0; y < pu_size; y += tu)
            for (int x = 0; x < pu_size; x += tu) t.push_back({x, y, tu});
        return t;
    }
    throw ConfigError("unknown tiling spec: " + spec);
}

std::vector<PredictionGroup> build_groups(const Plane& plane, int pu_size,
                                          const std::string& tiling_spec) {
    if (pu_size < 1) throw ConfigError("build_groups: pu_size must be >= 1");
    const auto tiles = tu_tiling(pu_size, tiling_spec);
    std::vector<PredictionGroup> groups;
    std::uint32_t next_id = 0;
    for (int py = 0; py + pu_size <= plane.height; py += pu_size)
        for (int px = 0; px + pu_size <= plane.width; px += pu_size) {
            PredictionGroup g;
            g.group_id = next_id++;
            g.image_id = static_cast<std::uint32_t>(plane.image_id);
            g.pu_x = px;
            g.pu_y = py;
            g.pu_size = pu_size;
            g.tiles.reserve(tiles.size());
            for (const TuRect& t : tiles)
                g.tiles.push_back({px + t.x, py + t.y, t.size});
            groups.push_back(std::move(g));
        }
    return groups;
}

// --- complexity filter --------------------------------------------------------

std::vector<std::size_t> complexity_filter_indices(
    const std::vector<TrainSample>& samples, const std::vector<double>& baseline_mse) {
    if (samples.size() != baseline_mse.size())
        throw UsageError("complexity_filter: one MSE per sample required");

    std::map<std::uint32_t, std::pair<double, std::size_t>> per_image;  // sum, count
    for (std::size_t i = 0; i < samples.size(); ++i) {
        auto& acc = per_image[samples[i].origin.image_id];
        acc.first += baseline_mse[i];
        acc.second += 1;
    }

    std::vector<std::size_t> kept;
    kept.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& acc = per_image[samples[i].origin.image_id];
        const double mean = acc.first / static_cast<double>(acc.second);
        const double threshold = 2.0 * mean;
        const bool keep =
            mean == 0.0 ? baseline_mse[i] <= threshold : baseline_mse[i] < threshold;
        if (keep) kept.push_back(i);
    }
    return kept;
}

std::vector<TrainSample> complexity_filter(const std::vector<TrainSample>& samples,
                                           const std::vector<double>& baseline_mse) {
    std::vector<TrainSample> out;
    for (std::size_t i : complexity_filter_indices(samples, baseline_mse))
        out.push_back(samples[i]);
    return out;
}

// --- corpus -------------------------------------------------------------------

const SizeDataset* Corpus::find(int block_size) const {
    for (const auto& d : by_size)
        if (d.block_size == block_size) return &d;
    return nullptr;
}

SizeDataset* Corpus::find(int block_size) {
    for (auto& d : by_size)
        if (d.block_size == block_size) return &d;
    return nullptr;
}

const TrainSample& Corpus::sample(const SampleRef& ref) const {
    const SizeDataset* d = find(ref.block_size);
    if (!d || ref.index >= d->samples.size())
        throw UsageError("corpus: dangling sample reference");
    return d->samples[ref.index];
}

std::size_t Corpus::total_samples() const {
    std::size_t n = 0;
    for (const auto& d : by_size) n += d.samples.size();
    return n;
}

// --- .dcds container ------------------------------------------------------------

namespace {
constexpr char kDatasetMagic[4] = {'D', 'C', 'D', 'S'};
}

void write_dataset(const std::vector<TrainSample>& samples,
                   const std::vector<PredictionGroup>& groups, int block_size,
                   int ref_lines, const std::string& path) {
    const std::size_t ref_len = reference_vector_length(block_size, ref_lines);
    const std::size_t tgt_len = static_cast<std::size_t>(block_size) * block_size;
    for (const TrainSample& s : samples) {
        if (static_cast<int>(s.origin.n) != block_size)
            throw UsageError("write_dataset: mixed block sizes in one file");
        if (s.ref_vector.size() != ref_len || s.target.size() != tgt_len)
            throw UsageError("write_dataset: sample shape mismatch");
    }

    std::vector<std::uint8_t> out;
    out.insert(out.end(), kDatasetMagic, kDatasetMagic + 4);
    binio::put_u32(out, kDatasetVersion);
    binio::put_u32(out, static_cast<std::uint32_t>(block_size));
    binio::put_u32(out, static_cast<std::uint32_t>(ref_lines));
    binio::put_u32(out, kLayoutVersion);
    binio::put_u64(out, samples.size());
    binio::put_u64(out, groups.size());
    for (const TrainSample& s : samples) {
        binio::put_u32(out, s.origin.image_id);
        binio::put_u32(out, s.origin.x);
        binio::put_u32(out, s.origin.y);
        binio::put_u32(out, s.group_id);
        binio::put_f64(out, s.ref_mean);
        for (double v : s.ref_vector) binio::put_f64(out, v);
        for (double v : s.target) binio::put_f64(out, v);
    }
    for (const PredictionGroup& g : groups) {
        binio::put_u32(out, g.group_id);
        binio::put_u32(out, g.image_id);
        binio::put_u32(out, static_cast<std::uint32_t>(g.pu_x));
        binio::put_u32(out, static_cast<std::uint32_t>(g.pu_y));
        binio::put_u32(out, static_cast<std::uint32_t>(g.pu_size));
        binio::put_u32(out, static_cast<std::uint32_t>(g.tiles.size()));
        for (const TuRect& t : g.tiles) {
            binio::put_u32(out, static_cast<std::uint32_t>(t.x));
            binio::put_u32(out, static_cast<std::uint32_t>(t.y));
            binio::put_u32(out, static_cast<std::uint32_t>(t.size));
        }
        std::uint32_t count = 0;
        for (const SampleRef& m : g.members)
            if (m.block_size == block_size) ++count;
        binio::put_u32(out, count);
        for (const SampleRef& m : g.members)
            if (m.block_size == block_size) binio::put_u32(out, m.index);
    }
    binio::write_file(path, out);
}

DatasetFile read_dataset(const std::string& path) {
    const auto buf = binio::read_file(path);
    binio::Reader rd{buf, 0, path};
    rd.need(4);
    if (std::memcmp(buf.data(), kDatasetMagic, 4) != 0)
        throw FormatError("not a dataset file (bad magic): " + path);
    rd.pos = 4;
    const std::uint32_t version = rd.u32();
    if (version != kDatasetVersion)
        throw FormatError("unsupported dataset version " + std::to_string(version) +
                          ": " + path);
    DatasetFile file;
    file.data.block_size = static_cast<int>(rd.u32());
    file.data.ref_lines = static_cast<int>(rd.u32());
    const std::uint32_t layout = rd.u32();
    if (layout != kLayoutVersion)
        throw FormatError("unsupported reference layout version " +
                          std::to_string(layout) + ": " + path);
    if (file.data.block_size < 1 || file.data.ref_lines < 1)
        throw FormatError("bad dataset dimensions: " + path);
    const std::uint64_t sample_count = rd.u64();
    const std::uint64_t group_count = rd.u64();
    const std::size_t ref_len =
        reference_vector_length(file.data.block_size, file.data.ref_lines);
    const std::size_t tgt_len =
        static_cast<std::size_t>(file.data.block_size) * file.data.block_size;

    file.data.samples.resize(sample_count);
    for (auto& s : file.data.samples) {
        s.origin.image_id = rd.u32();
        s.origin.x = rd.u32();
        s.origin.y = rd.u32();
        s.origin.n = static_cast<std::uint32_t>(file.data.block_size);
        s.group_id = rd.u32();
        s.ref_mean = rd.f64();
        s.ref_vector.resize(ref_len);
        for (double& v : s.ref_vector) v = rd.f64();
        s.target.resize(tgt_len);
        for (double& v : s.target) v = rd.f64();
    }
    file.groups.resize(group_count);
    for (auto& g : file.groups) {
        g.group_id = rd.u32();
        g.image_id = rd.u32();
        g.pu_x = static_cast<int>(rd.u32());
        g.pu_y = static_cast<int>(rd.u32());
        g.pu_size = static_cast<int>(rd.u32());
        g.tiles.resize(rd.u32());
        for (auto& t : g.tiles) {
            t.x = static_cast<int>(rd.u32());
            t.y = static_cast<int>(rd.u32());
            t.size = static_cast<int>(rd.u32());
        }
        g.members.resize(rd.u32());
        for (auto& m : g.members) {
            m.block_size = file.data.block_size;
            m.index = rd.u32();
            if (m.index >= file.data.samples.size())
                throw FormatError("group member index out of range: " + path);
        }
    }
    if (rd.pos != buf.size())
        throw FormatError("trailing bytes after dataset payload: " + path);
    return file;
}

Corpus merge_corpus(const std::vector<DatasetFile>& files) {
    Corpus corpus;
    std::map<std::uint32_t, std::size_t> group_index;
    for (const DatasetFile& f : files) {
        if (corpus.find(f.data.block_size))
            throw UsageError("merge_corpus: duplicate block size " +
                             std::to_string(f.data.block_size));
        if (!corpus.by_size.empty() &&
            corpus.by_size.front().ref_lines != f.data.ref_lines)
            throw FormatError("merge_corpus: ref_lines differ across files");
        corpus.by_size.push_back(f.data);
        for (const PredictionGroup& g : f.groups) {
            auto it = group_index.find(g.group_id);
            if (it == group_index.end()) {
                group_index.emplace(g.group_id, corpus.groups.size());
                corpus.groups.push_back(g);
            } else {
                PredictionGroup& dst = corpus.groups[it->second];
                if (dst.pu_x != g.pu_x || dst.pu_y != g.pu_y ||
                    dst.pu_size != g.pu_size || dst.image_id != g.image_id)
                    throw FormatError("merge_corpus: group geometry mismatch for id " +
                                      std::to_string(g.group_id));
                dst.members.insert(dst.members.end(), g.members.begin(),
                                   g.members.end());
            }
        }
    }
    std::sort(corpus.by_size.begin(), corpus.by_size.end(),
              [](const SizeDataset& a, const SizeDataset& b) {
                  return a.block_size < b.block_size;
              });
    return corpus;
}

Corpus extract_corpus(const Plane& plane, int pu_size, const std::string& tiling_spec,
                      int ref_lines, int stride) {
    if (stride <= 0) stride = pu_size;
    const auto tiles = tu_tiling(pu_size, tiling_spec);
    std::vector<PredictionGroup> groups;
    std::uint32_t next_id = 0;
    for (int py = 0; py + pu_size <= plane.height; py += stride)
        for (int px = 0; px + pu_size <= plane.width; px += stride) {
            PredictionGroup g;
            g.group_id = next_id++;
            g.image_id = static_cast<std::uint32_t>(plane.image_id);
            g.pu_x = px;
            g.pu_y = py;
            g.pu_size = pu_size;
            for (const TuRect& t : tiles) g.tiles.push_back({px + t.x, py + t.y, t.size});
            groups.push_back(std::move(g));
        }

    Corpus corpus;
    for (PredictionGroup& g : groups) {
        for (const TuRect& t : g.tiles) {
            SizeDataset* d = corpus.find(t.size);
            if (!d) {
                corpus.by_size.push_back(SizeDataset{t.size, ref_lines, {}});
                std::sort(corpus.by_size.begin(), corpus.by_size.end(),
                          [](const SizeDataset& a, const SizeDataset& b) {
                              return a.block_size < b.block_size;
                          });
                d = corpus.find(t.size);
            }
            TrainSample s = extract_sample(plane, t.x, t.y, t.size, ref_lines);
            s.group_id = g.group_id;
            g.members.push_back(
                {t.size, static_cast<std::uint32_t>(d->samples.size())});
            d->samples.push_back(std::move(s));
        }
    }
    corpus.groups = std::move(groups);
    return corpus;
}

void append_corpus(Corpus& dst, const Corpus& src) {
    // Reindex the source: group ids continue after the destination's and
    // sample indices shift by the per-size counts already present.
    std::uint32_t id_base = 0;
    for (const PredictionGroup& g : dst.groups)
        id_base = std::max(id_base, g.group_id + 1);

    std::map<int, std::uint32_t> index_base;
    for (const SizeDataset& d : src.by_size) {
        SizeDataset* existing = dst.find(d.block_size);
        if (!existing) {
            dst.by_size.push_back(SizeDataset{d.block_size, d.ref_lines, {}});
            std::sort(dst.by_size.begin(), dst.by_size.end(),
                      [](const SizeDataset& a, const SizeDataset& b) {
                          return a.block_size < b.block_size;
                      });
            existing = dst.find(d.block_size);
        } else if (existing->ref_lines != d.ref_lines) {
            throw UsageError("append_corpus: ref_lines differ");
        }
        index_base[d.block_size] = static_cast<std::uint32_t>(existing->samples.size());
        for (const TrainSample& s : d.samples) {
            TrainSample copy = s;
            copy.group_id += id_base;
            existing->samples.push_back(std::move(copy));
        }
    }
    for (const PredictionGroup& g : src.groups) {
        PredictionGroup copy = g;
        copy.group_id += id_base;
        for (SampleRef& m : copy.members) m.index += index_base[m.block_size];
        dst.groups.push_back(std::move(copy));
    }
}

}  // namespace dcdnn
