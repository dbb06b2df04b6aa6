#include "bprom/nets.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

#include "bprom/common.hpp"
#include "bprom/rng.hpp"

namespace bprom {

namespace {

constexpr uint32_t kModelMagic = 0x4e4e5042;  // "BPNN"
constexpr uint32_t kModelVersion = 1;

int pooled(int v) { return v / 2; }

// col(row, c*9 + k) layout for 3x3, pad 1, stride 1, channel-last input.
void im2col(const float* src, int h, int w, int cin, Eigen::MatrixXf& col, int row_offset) {
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int row = row_offset + y * w + x;
            for (int ky = 0; ky < 3; ++ky) {
                const int sy = y + ky - 1;
                const bool y_ok = sy >= 0 && sy < h;
                for (int kx = 0; kx < 3; ++kx) {
                    const int sx = x + kx - 1;
                    const int k = ky * 3 + kx;
                    if (y_ok && sx >= 0 && sx < w) {
                        const float* px = src + (static_cast<size_t>(sy) * w + sx) * cin;
                        for (int c = 0; c < cin; ++c) col(row, c * 9 + k) = px[c];
                    } else {
                        for (int c = 0; c < cin; ++c) col(row, c * 9 + k) = 0.0f;
                    }
                }
            }
        }
    }
}

void col2im_add(const Eigen::MatrixXf& dcol, int h, int w, int cin, float* dst, int row_offset) {
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int row = row_offset + y * w + x;
            for (int ky = 0; ky < 3; ++ky) {
                const int sy = y + ky - 1;
                if (sy < 0 || sy >= h) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const int sx = x + kx - 1;
                    if (sx < 0 || sx >= w) continue;
                    const int k = ky * 3 + kx;
                    float* px = dst + (static_cast<size_t>(sy) * w + sx) * cin;
                    for (int c = 0; c < cin; ++c) px[c] += dcol(row, c * 9 + k);
                }
            }
        }
    }
}

}  // namespace

Eigen::MatrixXf softmax_rows(const Eigen::MatrixXf& logits) {
    Eigen::MatrixXf out = logits;
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
        const float mx = out.row(r).maxCoeff();
        out.row(r) = (out.row(r).array() - mx).exp();
        out.row(r) /= out.row(r).sum();
    }
    return out;
}

// Per-image activations are stacked along rows: conv feature maps are
// (batch * h * w, channels), so the same GEMM covers the whole batch.
struct ConvNet::Cache {
    int batch = 0;
    std::vector<Eigen::MatrixXf> cols;     // im2col input of each conv
    std::vector<Eigen::MatrixXf> pre;      // conv output before relu
    std::vector<Eigen::MatrixXf> pooledv;  // after relu + maxpool
    std::vector<std::vector<uint8_t>> argmax;
    Eigen::MatrixXf flat;  // head input (batch, flat_dim)
    Eigen::MatrixXf logits;
};

ConvNet::ConvNet(const ArchConfig& arch, uint64_t init_seed) : arch_(arch) {
    if (arch_.num_classes <= 0) {
        throw Error(ErrorCategory::Config, "net: num_classes must be positive");
    }
    if (arch_.input.pixel_count() <= 0) {
        throw Error(ErrorCategory::Config, "net: input geometry unset");
    }
    Rng rng(init_seed);
    auto he_init = [&rng](Eigen::MatrixXf& m, int fan_in) {
        const float s = std::sqrt(2.0f / static_cast<float>(fan_in));
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            for (Eigen::Index i = 0; i < m.rows(); ++i) {
                m(i, j) = s * static_cast<float>(rng.normal());
            }
        }
    };

    if (arch_.kind == "conv3") {
        if (arch_.input.height % 8 != 0 || arch_.input.width % 8 != 0) {
            throw Error(ErrorCategory::Config,
                        "conv3 arch needs input sides divisible by 8, got " +
                            to_string(arch_.input));
        }
        const int cins[3] = {arch_.input.channels, arch_.width1, arch_.width2};
        const int couts[3] = {arch_.width1, arch_.width2, arch_.width3};
        for (int b = 0; b < 3; ++b) {
            Eigen::MatrixXf w(cins[b] * 9, couts[b]);
            he_init(w, cins[b] * 9);
            weights_.push_back(std::move(w));
            biases_.push_back(Eigen::VectorXf::Zero(couts[b]));
        }
        const int flat =
            pooled(pooled(pooled(arch_.input.height))) * pooled(pooled(pooled(arch_.input.width))) *
            arch_.width3;
        Eigen::MatrixXf head(flat, arch_.num_classes);
        he_init(head, flat);
        weights_.push_back(std::move(head));
        biases_.push_back(Eigen::VectorXf::Zero(arch_.num_classes));
    } else if (arch_.kind == "linear") {
        const int flat = static_cast<int>(arch_.input.pixel_count());
        Eigen::MatrixXf head(flat, arch_.num_classes);
        he_init(head, flat);
        weights_.push_back(std::move(head));
        biases_.push_back(Eigen::VectorXf::Zero(arch_.num_classes));
    } else {
        throw Error(ErrorCategory::Config, "unknown architecture kind: " + arch_.kind);
    }

    for (const auto& w : weights_) w_momentum_.emplace_back(Eigen::MatrixXf::Zero(w.rows(), w.cols()));
    for (const auto& b : biases_) b_momentum_.emplace_back(Eigen::VectorXf::Zero(b.size()));
}

void ConvNet::check_batch(const std::vector<const Image*>& batch) const {
    if (batch.empty()) throw Error(ErrorCategory::Data, "net: empty batch");
    for (const Image* img : batch) {
        if (img->geometry != arch_.input) {
            throw Error(ErrorCategory::Geometry, "net: image geometry " +
                                                     to_string(img->geometry) +
                                                     " does not match " + to_string(arch_.input));
        }
    }
}

void ConvNet::forward(const std::vector<const Image*>& batch, Cache& cache) const {
    check_batch(batch);
    const int n = static_cast<int>(batch.size());
    cache.batch = n;
    cache.cols.clear();
    cache.pre.clear();
    cache.pooledv.clear();
    cache.argmax.clear();

    if (arch_.kind == "linear") {
        const int flat = static_cast<int>(arch_.input.pixel_count());
        cache.flat.resize(n, flat);
        for (int b = 0; b < n; ++b) {
            for (int j = 0; j < flat; ++j) cache.flat(b, j) = batch[b]->pixels[j];
        }
        cache.logits = (cache.flat * weights_[0]).rowwise() + biases_[0].transpose();
        return;
    }

    int h = arch_.input.height, w = arch_.input.width, cin = arch_.input.channels;
    // Stage input as a dense (n*h*w, cin) map per block.
    std::vector<float> stage(static_cast<size_t>(n) * h * w * cin);
    for (int b = 0; b < n; ++b) {
        std::memcpy(stage.data() + static_cast<size_t>(b) * h * w * cin,
                    batch[b]->pixels.data(), sizeof(float) * h * w * cin);
    }

    for (int blk = 0; blk < 3; ++blk) {
        const int cout = static_cast<int>(weights_[blk].cols());
        Eigen::MatrixXf col(n * h * w, cin * 9);
        for (int b = 0; b < n; ++b) {
            im2col(stage.data() + static_cast<size_t>(b) * h * w * cin, h, w, cin, col,
                   b * h * w);
        }
        Eigen::MatrixXf pre = (col * weights_[blk]).rowwise() + biases_[blk].transpose();
        cache.cols.push_back(std::move(col));

        const int ph = pooled(h), pw = pooled(w);
        Eigen::MatrixXf pool(n * ph * pw, cout);
        std::vector<uint8_t> argmax(static_cast<size_t>(n) * ph * pw * cout);
        for (int b = 0; b < n; ++b) {
            for (int y = 0; y < ph; ++y) {
                for (int x = 0; x < pw; ++x) {
                    const int out_row = (b * ph + y) * pw + x;
                    const int r00 = (b * h + 2 * y) * w + 2 * x;
                    const int r01 = r00 + 1;
                    const int r10 = r00 + w;
                    const int r11 = r10 + 1;
                    for (int c = 0; c < cout; ++c) {
                        // relu folded into the pool: max(0, max of window)
                        float best = 0.0f;
                        uint8_t arg = 4;  // 4 = all window values <= 0
                        const float v00 = pre(r00, c), v01 = pre(r01, c);
                        const float v10 = pre(r10, c), v11 = pre(r11, c);
                        if (v00 > best) best = v00, arg = 0;
                        if (v01 > best) best = v01, arg = 1;
                        if (v10 > best) best = v10, arg = 2;
                        if (v11 > best) best = v11, arg = 3;
                        pool(out_row, c) = best;
                        argmax[static_cast<size_t>(out_row) * cout + c] = arg;
                    }
                }
            }
        }
        cache.pre.push_back(std::move(pre));
        cache.argmax.push_back(std::move(argmax));

        h = ph;
        w = pw;
        cin = cout;
        stage.assign(static_cast<size_t>(n) * h * w * cin, 0.0f);
        for (int b = 0; b < n; ++b) {
            for (int p = 0; p < h * w; ++p) {
                for (int c = 0; c < cin; ++c) {
                    stage[(static_cast<size_t>(b) * h * w + p) * cin + c] =
                        pool(b * h * w + p, c);
                }
            }
        }
        cache.pooledv.push_back(std::move(pool));
    }

    const int flat = h * w * cin;
    cache.flat.resize(n, flat);
    for (int b = 0; b < n; ++b) {
        for (int j = 0; j < flat; ++j) {
            cache.flat(b, j) = stage[static_cast<size_t>(b) * flat + j];
        }
    }
    cache.logits = (cache.flat * weights_.back()).rowwise() + biases_.back().transpose();
}

Eigen::MatrixXf ConvNet::logits(const std::vector<const Image*>& batch) const {
    Cache cache;
    forward(batch, cache);
    return cache.logits;
}

std::vector<float> ConvNet::predict(const Image& img) const {
    const std::vector<const Image*> batch{&img};
    const Eigen::MatrixXf probs = softmax_rows(logits(batch));
    return {probs.row(0).data(), probs.row(0).data() + probs.cols()};
}

std::vector<std::vector<float>> ConvNet::predict_batch(
    const std::vector<const Image*>& batch) const {
    const Eigen::MatrixXf probs = softmax_rows(logits(batch));
    std::vector<std::vector<float>> out(batch.size());
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
        out[r].resize(probs.cols());
        for (Eigen::Index c = 0; c < probs.cols(); ++c) out[r][c] = probs(r, c);
    }
    return out;
}

ConvNet::StepStats ConvNet::sgd_step(const std::vector<const Image*>& batch,
                                     const std::vector<int>& labels, float lr, float momentum,
                                     float weight_decay) {
    if (batch.size() != labels.size()) {
        throw Error(ErrorCategory::Data, "net: batch/label size mismatch");
    }
    Cache cache;
    forward(batch, cache);
    const int n = cache.batch;

    Eigen::MatrixXf probs = softmax_rows(cache.logits);
    StepStats stats;
    for (int b = 0; b < n; ++b) {
        const int y = labels[b];
        if (y < 0 || y >= arch_.num_classes) {
            throw Error(ErrorCategory::Data, "net: label out of range");
        }
        stats.loss -= std::log(std::max(probs(b, y), 1e-12f));
        Eigen::Index pred;
        probs.row(b).maxCoeff(&pred);
        stats.correct += pred == y;
        probs(b, y) -= 1.0f;
    }
    stats.loss /= n;
    probs /= static_cast<float>(n);  // dL/dlogits

    // Head backward.
    const size_t head = weights_.size() - 1;
    Eigen::MatrixXf d_head_w = cache.flat.transpose() * probs;
    Eigen::VectorXf d_head_b = probs.colwise().sum();
    Eigen::MatrixXf d_flat = probs * weights_[head].transpose();

    std::vector<Eigen::MatrixXf> d_w(weights_.size());
    std::vector<Eigen::VectorXf> d_b(biases_.size());
    d_w[head] = std::move(d_head_w);
    d_b[head] = std::move(d_head_b);

    if (arch_.kind == "conv3") {
        int hs[4], ws[4], cs[4];
        hs[0] = arch_.input.height, ws[0] = arch_.input.width, cs[0] = arch_.input.channels;
        for (int blk = 0; blk < 3; ++blk) {
            hs[blk + 1] = pooled(hs[blk]);
            ws[blk + 1] = pooled(ws[blk]);
            cs[blk + 1] = static_cast<int>(weights_[blk].cols());
        }

        // d_flat rows are (b, y, x, c) flattened; reshape to pooled layout.
        Eigen::MatrixXf d_pool(n * hs[3] * ws[3], cs[3]);
        for (int b = 0; b < n; ++b) {
            for (int p = 0; p < hs[3] * ws[3]; ++p) {
                for (int c = 0; c < cs[3]; ++c) {
                    d_pool(b * hs[3] * ws[3] + p, c) = d_flat(b, p * cs[3] + c);
                }
            }
        }

        for (int blk = 2; blk >= 0; --blk) {
            const int h = hs[blk], w = ws[blk], cin = cs[blk];
            const int ph = hs[blk + 1], pw = ws[blk + 1], cout = cs[blk + 1];
            // Unpool through the recorded argmax (relu gradient included).
            Eigen::MatrixXf d_pre = Eigen::MatrixXf::Zero(n * h * w, cout);
            const auto& argmax = cache.argmax[blk];
            for (int b = 0; b < n; ++b) {
                for (int y = 0; y < ph; ++y) {
                    for (int x = 0; x < pw; ++x) {
                        const int out_row = (b * ph + y) * pw + x;
                        for (int c = 0; c < cout; ++c) {
                            const uint8_t arg = argmax[static_cast<size_t>(out_row) * cout + c];
                            if (arg == 4) continue;
                            const int r = (b * h + 2 * y + arg / 2) * w + 2 * x + arg % 2;
                            d_pre(r, c) = d_pool(out_row, c);
                        }
                    }
                }
            }
            d_w[blk] = cache.cols[blk].transpose() * d_pre;
            d_b[blk] = d_pre.colwise().sum();
            if (blk > 0) {
                const Eigen::MatrixXf d_col = d_pre * weights_[blk].transpose();
                std::vector<float> d_stage(static_cast<size_t>(n) * h * w * cin, 0.0f);
                for (int b = 0; b < n; ++b) {
                    col2im_add(d_col, h, w, cin, d_stage.data() + static_cast<size_t>(b) * h * w * cin,
                               b * h * w);
                }
                d_pool.resize(n * h * w, cin);
                for (int b = 0; b < n; ++b) {
                    for (int p = 0; p < h * w; ++p) {
                        for (int c = 0; c < cin; ++c) {
                            d_pool(b * h * w + p, c) =
                                d_stage[(static_cast<size_t>(b) * h * w + p) * cin + c];
                        }
                    }
                }
            }
        }
    }

    if (!std::isfinite(stats.loss)) {
        throw Error(ErrorCategory::Training, "loss diverged to non-finite value");
    }

    for (size_t i = 0; i < weights_.size(); ++i) {
        if (weight_decay > 0.0f) d_w[i] += weight_decay * weights_[i];
        w_momentum_[i] = momentum * w_momentum_[i] - lr * d_w[i];
        b_momentum_[i] = momentum * b_momentum_[i] - lr * d_b[i];
        weights_[i] += w_momentum_[i];
        biases_[i] += b_momentum_[i];
    }
    return stats;
}

double ConvNet::input_gradient(const std::vector<const Image*>& batch,
                               const std::vector<int>& target_labels,
                               const std::vector<int>& label_map,
                               std::vector<Image>* grads) const {
    if (batch.size() != target_labels.size()) {
        throw Error(ErrorCategory::Data, "net: batch/label size mismatch");
    }
    for (int src : label_map) {
        if (src < 0 || src >= arch_.num_classes) {
            throw Error(ErrorCategory::Config, "label map entry out of source range");
        }
    }
    Cache cache;
    forward(batch, cache);
    const int n = cache.batch;
    const int kt = static_cast<int>(label_map.size());

    // Softmax restricted to the mapped source classes.
    Eigen::MatrixXf sub(n, kt);
    for (int b = 0; b < n; ++b) {
        for (int j = 0; j < kt; ++j) sub(b, j) = cache.logits(b, label_map[j]);
    }
    Eigen::MatrixXf probs = softmax_rows(sub);
    double loss = 0.0;
    for (int b = 0; b < n; ++b) {
        const int y = target_labels[b];
        if (y < 0 || y >= kt) throw Error(ErrorCategory::Data, "target label out of range");
        loss -= std::log(std::max(probs(b, y), 1e-12f));
        probs(b, y) -= 1.0f;
    }
    loss /= n;
    probs /= static_cast<float>(n);

    // Scatter restricted gradient back into source-logit positions.
    Eigen::MatrixXf d_logits = Eigen::MatrixXf::Zero(n, arch_.num_classes);
    for (int b = 0; b < n; ++b) {
        for (int j = 0; j < kt; ++j) d_logits(b, label_map[j]) += probs(b, j);
    }

    Eigen::MatrixXf d_flat = d_logits * weights_.back().transpose();

    if (grads) {
        grads->assign(n, Image(arch_.input.height, arch_.input.width, arch_.input.channels));
    }
    if (arch_.kind == "linear") {
        if (grads) {
            for (int b = 0; b < n; ++b) {
                for (long long j = 0; j < arch_.input.pixel_count(); ++j) {
                    (*grads)[b].pixels[j] = d_flat(b, j);
                }
            }
        }
        return loss;
    }

    int hs[4], ws[4], cs[4];
    hs[0] = arch_.input.height, ws[0] = arch_.input.width, cs[0] = arch_.input.channels;
    for (int blk = 0; blk < 3; ++blk) {
        hs[blk + 1] = pooled(hs[blk]);
        ws[blk + 1] = pooled(ws[blk]);
        cs[blk + 1] = static_cast<int>(weights_[blk].cols());
    }

    Eigen::MatrixXf d_pool(n * hs[3] * ws[3], cs[3]);
    for (int b = 0; b < n; ++b) {
        for (int p = 0; p < hs[3] * ws[3]; ++p) {
            for (int c = 0; c < cs[3]; ++c) {
                d_pool(b * hs[3] * ws[3] + p, c) = d_flat(b, p * cs[3] + c);
            }
        }
    }

    for (int blk = 2; blk >= 0; --blk) {
        const int h = hs[blk], w = ws[blk], cin = cs[blk];
        const int ph = hs[blk + 1], pw = ws[blk + 1], cout = cs[blk + 1];
        Eigen::MatrixXf d_pre = Eigen::MatrixXf::Zero(n * h * w, cout);
        const auto& argmax = cache.argmax[blk];
        for (int b = 0; b < n; ++b) {
            for (int y = 0; y < ph; ++y) {
                for (int x = 0; x < pw; ++x) {
                    const int out_row = (b * ph + y) * pw + x;
                    for (int c = 0; c < cout; ++c) {
                        const uint8_t arg = argmax[static_cast<size_t>(out_row) * cout + c];
                        if (arg == 4) continue;
                        const int r = (b * h + 2 * y + arg / 2) * w + 2 * x + arg % 2;
                        d_pre(r, c) = d_pool(out_row, c);
                    }
                }
            }
        }
        const Eigen::MatrixXf d_col = d_pre * weights_[blk].transpose();
        std::vector<float> d_stage(static_cast<size_t>(n) * h * w * cin, 0.0f);
        for (int b = 0; b < n; ++b) {
            col2im_add(d_col, h, w, cin, d_stage.data() + static_cast<size_t>(b) * h * w * cin,
                       b * h * w);
        }
        if (blk == 0) {
            if (grads) {
                for (int b = 0; b < n; ++b) {
                    std::memcpy((*grads)[b].pixels.data(),
                                d_stage.data() + static_cast<size_t>(b) * h * w * cin,
                                sizeof(float) * h * w * cin);
                }
            }
        } else {
            d_pool.resize(n * h * w, cin);
            for (int b = 0; b < n; ++b) {
                for (int p = 0; p < h * w; ++p) {
                    for (int c = 0; c < cin; ++c) {
                        d_pool(b * h * w + p, c) =
                            d_stage[(static_cast<size_t>(b) * h * w + p) * cin + c];
                    }
                }
            }
        }
    }
    return loss;
}

uint64_t ConvNet::params_hash() const {
    Fnv1a h;
    for (const auto& w : weights_) {
        h.update(w.data(), static_cast<size_t>(w.size()) * sizeof(float));
    }
    for (const auto& b : biases_) {
        h.update(b.data(), static_cast<size_t>(b.size()) * sizeof(float));
    }
    return h.digest();
}

size_t ConvNet::param_count() const {
    size_t n = 0;
    for (const auto& w : weights_) n += static_cast<size_t>(w.size());
    for (const auto& b : biases_) n += static_cast<size_t>(b.size());
    return n;
}

void ConvNet::save(std::ostream& out) const {
    auto put_u32 = [&out](uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    put_u32(kModelMagic);
    put_u32(kModelVersion);
    put_u32(static_cast<uint32_t>(arch_.kind.size()));
    out.write(arch_.kind.data(), static_cast<std::streamsize>(arch_.kind.size()));
    for (int v : {arch_.width1, arch_.width2, arch_.width3, arch_.input.height,
                  arch_.input.width, arch_.input.channels, arch_.num_classes}) {
        put_u32(static_cast<uint32_t>(v));
    }
    put_u32(static_cast<uint32_t>(weights_.size()));
    for (size_t i = 0; i < weights_.size(); ++i) {
        put_u32(static_cast<uint32_t>(weights_[i].rows()));
        put_u32(static_cast<uint32_t>(weights_[i].cols()));
        out.write(reinterpret_cast<const char*>(weights_[i].data()),
                  static_cast<std::streamsize>(sizeof(float) * weights_[i].size()));
        out.write(reinterpret_cast<const char*>(biases_[i].data()),
                  static_cast<std::streamsize>(sizeof(float) * biases_[i].size()));
    }
    if (!out) throw Error(ErrorCategory::Data, "model serialization failed");
}

ConvNet ConvNet::load(std::istream& in) {
    auto get_u32 = [&in]() {
        uint32_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };
    if (get_u32() != kModelMagic) throw Error(ErrorCategory::Data, "not a model file");
    if (get_u32() != kModelVersion) throw Error(ErrorCategory::Data, "unsupported model version");
    ArchConfig arch;
    arch.kind.resize(get_u32());
    in.read(arch.kind.data(), static_cast<std::streamsize>(arch.kind.size()));
    arch.width1 = static_cast<int>(get_u32());
    arch.width2 = static_cast<int>(get_u32());
    arch.width3 = static_cast<int>(get_u32());
    arch.input.height = static_cast<int>(get_u32());
    arch.input.width = static_cast<int>(get_u32());
    arch.input.channels = static_cast<int>(get_u32());
    arch.num_classes = static_cast<int>(get_u32());

    ConvNet net(arch, 0);
    const uint32_t layers = get_u32();
    if (layers != net.weights_.size()) {
        throw Error(ErrorCategory::Data, "model layer count mismatch");
    }
    for (uint32_t i = 0; i < layers; ++i) {
        const auto rows = static_cast<Eigen::Index>(get_u32());
        const auto cols = static_cast<Eigen::Index>(get_u32());
        if (rows != net.weights_[i].rows() || cols != net.weights_[i].cols()) {
            throw Error(ErrorCategory::Data, "model layer shape mismatch");
        }
        in.read(reinterpret_cast<char*>(net.weights_[i].data()),
                static_cast<std::streamsize>(sizeof(float) * net.weights_[i].size()));
        in.read(reinterpret_cast<char*>(net.biases_[i].data()),
                static_cast<std::streamsize>(sizeof(float) * net.biases_[i].size()));
        net.w_momentum_[i].setZero();
        net.b_momentum_[i].setZero();
    }
    if (!in) throw Error(ErrorCategory::Data, "truncated model file");
    return net;
}

}  // namespace bprom
