#include "bprom/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>

#include "bprom/common.hpp"
#include "bprom/rng.hpp"

namespace fs = std::filesystem;

namespace bprom {

void LabeledImageSet::validate() const {
    if (images.size() != labels.size()) {
        throw Error(ErrorCategory::Data, name + ": image/label count mismatch");
    }
    if (num_classes <= 0) {
        throw Error(ErrorCategory::Data, name + ": num_classes must be positive");
    }
    const Geometry g = geometry();
    for (size_t i = 0; i < images.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes) {
            throw Error(ErrorCategory::Data,
                        name + ": label out of range at index " + std::to_string(i));
        }
        if (images[i].geometry != g) {
            throw Error(ErrorCategory::Data,
                        name + ": inconsistent geometry at index " + std::to_string(i));
        }
        for (float v : images[i].pixels) {
            if (!(v >= 0.0f && v <= 1.0f)) {
                throw Error(ErrorCategory::Data,
                            name + ": pixel outside [0,1] at index " + std::to_string(i));
            }
        }
    }
}

uint64_t LabeledImageSet::content_hash() const {
    Fnv1a h;
    h.update_value(num_classes);
    for (size_t i = 0; i < images.size(); ++i) {
        h.update_value(labels[i]);
        h.update(images[i].pixels.data(), images[i].pixels.size() * sizeof(float));
    }
    return h.digest();
}

LabeledImageSet LabeledImageSet::subset(const std::vector<size_t>& indices,
                                        const std::string& new_name) const {
    LabeledImageSet out;
    out.num_classes = num_classes;
    out.name = new_name;
    out.images.reserve(indices.size());
    out.labels.reserve(indices.size());
    for (size_t i : indices) {
        if (i >= images.size()) {
            throw Error(ErrorCategory::Data, name + ": subset index out of range");
        }
        out.images.push_back(images[i]);
        out.labels.push_back(labels[i]);
    }
    return out;
}

std::pair<std::vector<size_t>, std::vector<size_t>> split_indices(const LabeledImageSet& set,
                                                                  const SplitSpec& spec) {
    if (set.empty()) throw Error(ErrorCategory::Data, "split: empty input set");
    if (!(spec.fraction > 0.0 && spec.fraction <= 1.0)) {
        throw Error(ErrorCategory::Config, "split: fraction must lie in (0,1]");
    }
    const size_t n = set.size();
    const size_t k = static_cast<size_t>(std::llround(spec.fraction * static_cast<double>(n)));
    if (k == 0) {
        throw Error(ErrorCategory::Data, "split: fraction rounds to an empty first part");
    }

    std::vector<size_t> first;
    if (spec.stratified) {
        // Per-class counts by largest remainder; ties resolved by class index.
        std::map<int, std::vector<size_t>> by_class;
        for (size_t i = 0; i < n; ++i) by_class[set.labels[i]].push_back(i);

        std::vector<std::pair<int, double>> remainders;
        std::map<int, size_t> take;
        size_t assigned = 0;
        for (const auto& [cls, idx] : by_class) {
            const double ideal = spec.fraction * static_cast<double>(idx.size());
            size_t base = static_cast<size_t>(std::floor(ideal));
            base = std::min(base, idx.size());
            take[cls] = base;
            assigned += base;
            remainders.emplace_back(cls, ideal - std::floor(ideal));
        }
        std::stable_sort(remainders.begin(), remainders.end(),
                         [](const auto& a, const auto& b) { return a.second > b.second; });
        for (const auto& [cls, rem] : remainders) {
            if (assigned >= k) break;
            if (take[cls] < by_class[cls].size()) {
                ++take[cls];
                ++assigned;
            }
        }
        // Rounding can still leave a shortfall when some classes are exhausted.
        for (const auto& [cls, idx] : by_class) {
            while (assigned < k && take[cls] < idx.size()) {
                ++take[cls];
                ++assigned;
            }
        }

        for (const auto& [cls, idx] : by_class) {
            Rng rng(mix_seed(spec.seed, static_cast<uint64_t>(cls)));
            std::vector<size_t> pool = idx;
            rng.shuffle(pool);
            first.insert(first.end(), pool.begin(), pool.begin() + take[cls]);
        }
    } else {
        Rng rng(spec.seed);
        std::vector<size_t> pool = rng.permutation(n);
        first.assign(pool.begin(), pool.begin() + k);
    }
    std::sort(first.begin(), first.end());

    std::vector<size_t> second;
    second.reserve(n - first.size());
    size_t fi = 0;
    for (size_t i = 0; i < n; ++i) {
        if (fi < first.size() && first[fi] == i) {
            ++fi;
        } else {
            second.push_back(i);
        }
    }
    return {first, second};
}

std::pair<LabeledImageSet, LabeledImageSet> split(const LabeledImageSet& set,
                                                  const SplitSpec& spec) {
    auto [a, b] = split_indices(set, spec);
    return {set.subset(a, set.name + "/part1"), set.subset(b, set.name + "/part2")};
}

std::vector<size_t> sample_query_indices(size_t n, size_t q, uint64_t seed) {
    if (q == 0) throw Error(ErrorCategory::Data, "sample_query_set: q must be positive");
    if (q > n) {
        throw Error(ErrorCategory::Data, "sample_query_set: q=" + std::to_string(q) +
                                             " exceeds set size " + std::to_string(n));
    }
    Rng rng(seed);
    std::vector<size_t> perm = rng.permutation(n);
    perm.resize(q);
    return perm;
}

LabeledImageSet sample_query_set(const LabeledImageSet& test, size_t q, uint64_t seed) {
    auto idx = sample_query_indices(test.size(), q, seed);
    return test.subset(idx, test.name + "/query");
}

namespace {

void hsv_to_rgb(float h, float s, float v, float rgb[3]) {
    h = std::fmod(h, 360.0f);
    if (h < 0) h += 360.0f;
    const float c = v * s;
    const float hp = h / 60.0f;
    const float x = c * (1.0f - std::fabs(std::fmod(hp, 2.0f) - 1.0f));
    float r = 0, g = 0, b = 0;
    if (hp < 1) {
        r = c, g = x;
    } else if (hp < 2) {
        r = x, g = c;
    } else if (hp < 3) {
        g = c, b = x;
    } else if (hp < 4) {
        g = x, b = c;
    } else if (hp < 5) {
        r = x, b = c;
    } else {
        r = c, b = x;
    }
    const float m = v - c;
    rgb[0] = r + m;
    rgb[1] = g + m;
    rgb[2] = b + m;
}

bool inside_shape(int kind, float dx, float dy, float r) {
    switch (kind & 3) {
        case 0:  // square
            return std::fabs(dx) <= r && std::fabs(dy) <= r;
        case 1:  // disc
            return dx * dx + dy * dy <= r * r;
        case 2:  // upward triangle
            return dy >= -r && dy <= r && std::fabs(dx) <= (dy + r) * 0.55f;
        default:  // cross
            return (std::fabs(dx) <= r && std::fabs(dy) <= r * 0.38f) ||
                   (std::fabs(dy) <= r && std::fabs(dx) <= r * 0.38f);
    }
}

Image render_synthetic(const SyntheticSpec& spec, int cls, uint64_t seed) {
    const bool target = spec.domain == "target";
    Rng rng(seed);
    const int s = spec.size;
    Image img(s, s, 3);

    // Background: dark gradient for the source style, light striped for target.
    const float base = target ? static_cast<float>(rng.uniform(0.55, 0.75))
                              : static_cast<float>(rng.uniform(0.10, 0.25));
    const float gx = static_cast<float>(rng.uniform(-0.10, 0.10));
    const float gy = static_cast<float>(rng.uniform(-0.10, 0.10));
    for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
            float v = base + gx * (static_cast<float>(x) / s - 0.5f) +
                      gy * (static_cast<float>(y) / s - 0.5f);
            if (target && (y / 3) % 2 == 0) v += 0.06f;
            for (int c = 0; c < 3; ++c) {
                const float noise = static_cast<float>(rng.uniform(-0.04, 0.04));
                img.at(y, x, c) = std::clamp(v + noise, 0.0f, 1.0f);
            }
        }
    }

    // Class = (shape, hue) pair. The target style renders the same semantics
    // dimmer and slightly larger.
    const int shape = cls & 3;
    const float hue = 360.0f * static_cast<float>(cls) / static_cast<float>(spec.num_classes);
    float rgb[3];
    const float sat = target ? 0.70f : 0.90f;
    const float val = target ? 0.72f : 0.92f;
    hsv_to_rgb(hue, sat, val, rgb);

    const float cx = s / 2.0f + static_cast<float>(rng.uniform(-s * 0.12, s * 0.12));
    const float cy = s / 2.0f + static_cast<float>(rng.uniform(-s * 0.12, s * 0.12));
    const float radius = target ? static_cast<float>(rng.uniform(s * 0.22, s * 0.32))
                                : static_cast<float>(rng.uniform(s * 0.18, s * 0.28));
    for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
            if (!inside_shape(shape, x - cx, y - cy, radius)) continue;
            for (int c = 0; c < 3; ++c) {
                const float jitter = static_cast<float>(rng.uniform(-0.05, 0.05));
                img.at(y, x, c) = std::clamp(rgb[c] + jitter, 0.0f, 1.0f);
            }
        }
    }
    return img;
}

}  // namespace

LabeledImageSet make_synthetic(const SyntheticSpec& spec) {
    if (spec.count == 0 || spec.num_classes <= 0 || spec.size < 8) {
        throw Error(ErrorCategory::Config, "synthetic: need count>0, classes>0, size>=8");
    }
    if (spec.domain != "source" && spec.domain != "target") {
        throw Error(ErrorCategory::Config, "synthetic: domain must be source|target");
    }
    LabeledImageSet out;
    out.num_classes = spec.num_classes;
    out.name = "synthetic-" + spec.domain;
    out.images.reserve(spec.count);
    out.labels.reserve(spec.count);
    const uint64_t domain_tag = spec.domain == "target" ? 0x7a17ull : 0x50c5ull;
    for (size_t i = 0; i < spec.count; ++i) {
        const int cls = static_cast<int>(i % spec.num_classes);
        out.labels.push_back(cls);
        out.images.push_back(
            render_synthetic(spec, cls, mix_seed(spec.seed ^ domain_tag, i)));
    }
    return out;
}

namespace {

std::map<std::string, std::string> parse_query(const std::string& name) {
    std::map<std::string, std::string> kv;
    const auto qpos = name.find('?');
    if (qpos == std::string::npos) return kv;
    std::string rest = name.substr(qpos + 1);
    size_t pos = 0;
    while (pos < rest.size()) {
        size_t amp = rest.find('&', pos);
        if (amp == std::string::npos) amp = rest.size();
        const std::string pair = rest.substr(pos, amp - pos);
        const size_t eq = pair.find('=');
        if (eq == std::string::npos) {
            throw Error(ErrorCategory::Config, "dataset name: malformed parameter '" + pair + "'");
        }
        kv[pair.substr(0, eq)] = pair.substr(eq + 1);
        pos = amp + 1;
    }
    return kv;
}

std::vector<uint8_t> read_file(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorCategory::Data, "missing dataset file: " + path.string());
    f.seekg(0, std::ios::end);
    const auto n = static_cast<size_t>(f.tellg());
    f.seekg(0);
    std::vector<uint8_t> buf(n);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
    if (!f) throw Error(ErrorCategory::Data, "failed to read: " + path.string());
    return buf;
}

fs::path find_existing(const fs::path& root, std::initializer_list<const char*> candidates) {
    for (const char* c : candidates) {
        if (fs::exists(root / c)) return root / c;
    }
    throw Error(ErrorCategory::Data,
                "no dataset file found under " + root.string() + " (tried " +
                    std::string(*candidates.begin()) + " ...)");
}

void append_cifar_batch(LabeledImageSet& out, const fs::path& file) {
    constexpr size_t kRecord = 1 + 3 * 32 * 32;
    const auto buf = read_file(file);
    if (buf.size() % kRecord != 0) {
        throw Error(ErrorCategory::Data, "corrupt cifar batch (size not a record multiple): " +
                                             file.string());
    }
    const size_t count = buf.size() / kRecord;
    for (size_t i = 0; i < count; ++i) {
        const uint8_t* rec = buf.data() + i * kRecord;
        const int label = rec[0];
        if (label > 9) {
            throw Error(ErrorCategory::Data,
                        "corrupt cifar record at index " + std::to_string(i) + " in " +
                            file.string());
        }
        Image img(32, 32, 3);
        // Stored as three 1024-byte channel planes, row-major.
        for (int c = 0; c < 3; ++c) {
            for (int y = 0; y < 32; ++y) {
                for (int x = 0; x < 32; ++x) {
                    img.at(y, x, c) = rec[1 + c * 1024 + y * 32 + x] / 255.0f;
                }
            }
        }
        out.images.push_back(std::move(img));
        out.labels.push_back(label);
    }
}

LabeledImageSet load_cifar10(const std::string& name, const fs::path& root) {
    LabeledImageSet out;
    out.num_classes = 10;
    out.name = name;
    const fs::path base =
        fs::exists(root / "cifar-10-batches-bin") ? root / "cifar-10-batches-bin" : root;
    if (name == "cifar10-test") {
        append_cifar_batch(out, find_existing(base, {"test_batch.bin"}));
    } else {
        for (int b = 1; b <= 5; ++b) {
            append_cifar_batch(out, base / ("data_batch_" + std::to_string(b) + ".bin"));
        }
    }
    return out;
}

LabeledImageSet load_stl10(const std::string& name, const fs::path& root) {
    const fs::path base = fs::exists(root / "stl10_binary") ? root / "stl10_binary" : root;
    const std::string stem = name == "stl10-train" ? "train" : "test";
    const auto xbuf = read_file(base / (stem + "_X.bin"));
    const auto ybuf = read_file(base / (stem + "_y.bin"));
    constexpr size_t kPixels = 3 * 96 * 96;
    if (xbuf.size() % kPixels != 0 || xbuf.size() / kPixels != ybuf.size()) {
        throw Error(ErrorCategory::Data, "corrupt stl10 files under " + base.string());
    }
    LabeledImageSet out;
    out.num_classes = 10;
    out.name = name;
    const size_t count = ybuf.size();
    for (size_t i = 0; i < count; ++i) {
        if (ybuf[i] < 1 || ybuf[i] > 10) {
            throw Error(ErrorCategory::Data,
                        "corrupt stl10 label at index " + std::to_string(i));
        }
        Image img(96, 96, 3);
        const uint8_t* rec = xbuf.data() + i * kPixels;
        // Channel planes, each column-major.
        for (int c = 0; c < 3; ++c) {
            for (int x = 0; x < 96; ++x) {
                for (int y = 0; y < 96; ++y) {
                    img.at(y, x, c) = rec[c * 96 * 96 + x * 96 + y] / 255.0f;
                }
            }
        }
        out.images.push_back(std::move(img));
        out.labels.push_back(ybuf[i] - 1);
    }
    return out;
}

}  // namespace

LabeledImageSet load_dataset(const std::string& name, const std::string& root) {
    const std::string base = name.substr(0, name.find('?'));
    if (base == "synthetic" || base == "synthetic-source" || base == "synthetic-target") {
        auto kv = parse_query(name);
        SyntheticSpec spec;
        if (base == "synthetic-target") spec.domain = "target";
        if (kv.count("domain")) spec.domain = kv["domain"];
        if (kv.count("n")) spec.count = std::stoull(kv["n"]);
        if (kv.count("classes")) spec.num_classes = std::stoi(kv["classes"]);
        if (kv.count("size")) spec.size = std::stoi(kv["size"]);
        if (kv.count("seed")) spec.seed = std::stoull(kv["seed"]);
        return make_synthetic(spec);
    }
    if (base == "cifar10-train" || base == "cifar10-test") return load_cifar10(base, root);
    if (base == "stl10-train" || base == "stl10-test") return load_stl10(base, root);
    throw Error(ErrorCategory::Config, "unknown dataset name: " + name);
}

}  // namespace bprom
