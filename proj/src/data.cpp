#include "aptlab/data.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace aptlab {

int DatasetSpec::sample_dim() const {
    switch (kind) {
        case DatasetKind::gmm_ring:
        case DatasetKind::checkerboard:
            return 2;
        case DatasetKind::image_corpus:
            throw ConfigError("sample_dim: image corpus dimension comes from the file header");
    }
    throw ConfigError("sample_dim: unknown dataset kind");
}

int DatasetSpec::num_classes() const {
    switch (kind) {
        case DatasetKind::gmm_ring:
            return n_modes;  // class label = mode index
        case DatasetKind::checkerboard:
            return 1;
        case DatasetKind::image_corpus:
            throw ConfigError("num_classes: image corpus classes come from the file header");
    }
    throw ConfigError("num_classes: unknown dataset kind");
}

std::vector<std::pair<double, double>> DatasetSpec::mode_centers() const {
    if (kind != DatasetKind::gmm_ring) throw ConfigError("mode_centers: only defined for gmm_ring");
    std::vector<std::pair<double, double>> c(n_modes);
    for (int k = 0; k < n_modes; ++k) {
        double a = 2.0 * M_PI * k / n_modes;
        c[k] = {radius * std::cos(a), radius * std::sin(a)};
    }
    return c;
}

Batch sample_real(const DatasetSpec& spec, Rng& rng, int n) {
    if (n < 1) throw std::invalid_argument("sample_real: n must be >= 1");
    Batch out;
    switch (spec.kind) {
        case DatasetKind::gmm_ring: {
            auto centers = spec.mode_centers();
            out.x = Tensor(n, 2);
            out.labels.resize(n);
            for (int i = 0; i < n; ++i) {
                int k = rng.uniform_int(spec.n_modes);
                out.labels[i] = k;
                out.x(i, 0) = centers[k].first + spec.mode_std * rng.normal();
                out.x(i, 1) = centers[k].second + spec.mode_std * rng.normal();
            }
            return out;
        }
        case DatasetKind::checkerboard: {
            // uniform over the black cells of a grid x grid board on [-extent, extent]^2
            out.x = Tensor(n, 2);
            out.labels.assign(n, 0);
            double cell = 2.0 * spec.extent / spec.grid;
            for (int i = 0; i < n; ++i) {
                int cx, cy;
                do {
                    cx = rng.uniform_int(spec.grid);
                    cy = rng.uniform_int(spec.grid);
                } while ((cx + cy) % 2 != 0);
                out.x(i, 0) = -spec.extent + (cx + rng.uniform()) * cell;
                out.x(i, 1) = -spec.extent + (cy + rng.uniform()) * cell;
            }
            return out;
        }
        case DatasetKind::image_corpus:
            throw ConfigError("sample_real: use ImageCorpus::sample for image data");
    }
    throw ConfigError("sample_real: unknown dataset kind");
}

double log_density(const DatasetSpec& spec, const std::vector<double>& x) {
    if (x.size() != 2) throw std::invalid_argument("log_density: expects 2D point");
    switch (spec.kind) {
        case DatasetKind::gmm_ring: {
            auto centers = spec.mode_centers();
            double s2 = spec.mode_std * spec.mode_std;
            double acc = 0.0;
            for (auto& [cx, cy] : centers) {
                double dx = x[0] - cx, dy = x[1] - cy;
                acc += std::exp(-(dx * dx + dy * dy) / (2.0 * s2));
            }
            return std::log(acc / (spec.n_modes * 2.0 * M_PI * s2) + 1e-300);
        }
        case DatasetKind::checkerboard: {
            double cell = 2.0 * spec.extent / spec.grid;
            int cx = static_cast<int>(std::floor((x[0] + spec.extent) / cell));
            int cy = static_cast<int>(std::floor((x[1] + spec.extent) / cell));
            bool inside = cx >= 0 && cx < spec.grid && cy >= 0 && cy < spec.grid && (cx + cy) % 2 == 0;
            if (!inside) return -std::numeric_limits<double>::infinity();
            int black = spec.grid * spec.grid / 2 + (spec.grid % 2);
            return -std::log(black * cell * cell);
        }
        case DatasetKind::image_corpus:
            throw ConfigError("log_density: not available for image corpora");
    }
    throw ConfigError("log_density: unknown dataset kind");
}

static void write_u32le(std::ostream& os, uint32_t x) { os.write(reinterpret_cast<const char*>(&x), 4); }
static uint32_t read_u32le(std::istream& is, const char* what) {
    uint32_t x = 0;
    is.read(reinterpret_cast<char*>(&x), 4);
    if (!is) throw IoError(std::string("image corpus: truncated ") + what);
    return x;
}

void write_image_corpus(const std::string& path, int edge, int channels, int classes,
                        const std::vector<std::vector<uint8_t>>& pixels, const std::vector<int>& labels) {
    if (pixels.size() != labels.size()) throw std::invalid_argument("write_image_corpus: count mismatch");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("image corpus: cannot open for writing: " + path);
    os.write("APTC", 4);
    write_u32le(os, 1);
    write_u32le(os, static_cast<uint32_t>(pixels.size()));
    write_u32le(os, static_cast<uint32_t>(edge));
    write_u32le(os, static_cast<uint32_t>(channels));
    write_u32le(os, static_cast<uint32_t>(classes));
    size_t px = static_cast<size_t>(edge) * edge * channels;
    for (size_t i = 0; i < pixels.size(); ++i) {
        if (pixels[i].size() != px)
            throw std::invalid_argument("write_image_corpus: record " + std::to_string(i) + " has wrong size");
        write_u32le(os, static_cast<uint32_t>(labels[i]));
        os.write(reinterpret_cast<const char*>(pixels[i].data()), static_cast<std::streamsize>(px));
    }
    if (!os) throw IoError("image corpus: write failed: " + path);
}

ImageCorpus load_image_corpus(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("image corpus: cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "APTC", 4) != 0) throw IoError("image corpus: bad magic");
    uint32_t version = read_u32le(is, "version");
    if (version != 1) throw IoError("image corpus: unsupported version");
    uint32_t count = read_u32le(is, "count");
    ImageCorpus c;
    c.edge = static_cast<int>(read_u32le(is, "edge"));
    c.channels = static_cast<int>(read_u32le(is, "channels"));
    c.classes = static_cast<int>(read_u32le(is, "classes"));
    if (c.edge <= 0 || c.channels <= 0 || c.classes <= 0) throw ConfigError("image corpus: bad header dims");
    size_t px = static_cast<size_t>(c.edge) * c.edge * c.channels;
    c.images = Tensor(static_cast<int>(count), static_cast<int>(px));
    c.labels.resize(count);
    std::vector<uint8_t> buf(px);
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t label = 0;
        is.read(reinterpret_cast<char*>(&label), 4);
        is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(px));
        if (!is) throw IoError("image corpus: count field mismatch, truncated at record " + std::to_string(i));
        if (label >= static_cast<uint32_t>(c.classes))
            throw IoError("image corpus: record " + std::to_string(i) + " has label out of range");
        c.labels[i] = static_cast<int>(label);
        for (size_t j = 0; j < px; ++j) c.images(static_cast<int>(i), static_cast<int>(j)) = buf[j] / 127.5 - 1.0;
    }
    // detect trailing garbage so a wrong count field is reported either way
    char probe;
    if (is.read(&probe, 1)) throw IoError("image corpus: payload longer than count field");
    return c;
}

Batch ImageCorpus::sample(Rng& rng, int n) const {
    if (images.rows == 0) throw ConfigError("ImageCorpus::sample: empty corpus");
    Batch b;
    b.x = Tensor(n, images.cols);
    b.labels.resize(n);
    for (int i = 0; i < n; ++i) {
        int k = rng.uniform_int(images.rows);
        std::copy_n(&images.v[static_cast<size_t>(k) * images.cols], images.cols,
                    &b.x.v[static_cast<size_t>(i) * images.cols]);
        b.labels[i] = labels[k];
    }
    return b;
}

}  // namespace aptlab
