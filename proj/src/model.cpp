#include "multimix/model.hpp"

#include <cmath>

#include "multimix/errors.hpp"
#include "multimix/saliency.hpp"

namespace multimix {

void ArchDescriptor::validate() const {
    if (base_width < 1) throw ConfigError("arch: base width must be >= 1");
    if (blocks < 2) throw ConfigError("arch: need at least 2 encoder blocks");
    if (classes < 2) throw ConfigError("arch: need at least 2 classes");
    const int div = 1 << blocks;
    if (extent <= 0 || extent % div != 0)
        throw ConfigError("arch: input extent " + std::to_string(extent) +
                          " must be a positive multiple of 2^blocks = " + std::to_string(div));
}

namespace {

// fan-in Kaiming uniform with leaky-relu(0.2) gain, one stream per parameter
template <typename T>
Tensor<T> kaiming_uniform(const Shape& shape, int64_t fan_in, uint64_t seed) {
    const double gain = std::sqrt(2.0 / (1.0 + 0.2 * 0.2));
    const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
    Rng rng(seed);
    Tensor<T> t(shape);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(-bound, bound));
    return t;
}

template <typename T>
void add_conv(ModelParams<T>& p, uint64_t seed, const std::string& name, int64_t cout,
              int64_t cin, int64_t k) {
    p.tensors[name + ".weight"] =
        kaiming_uniform<T>({cout, cin, k, k}, cin * k * k, hash_mix(seed, hash_str(name)));
    p.tensors[name + ".bias"] = Tensor<T>({cout});
}

}  // namespace

template <typename T>
ModelParams<T> init_params(uint64_t seed, const ArchDescriptor& arch) {
    arch.validate();
    ModelParams<T> p;
    p.arch = arch;
    int64_t cin = 1;
    for (int b = 1; b <= arch.blocks; ++b) {
        const int64_t c = arch.channels(b);
        const std::string prefix = "enc.block" + std::to_string(b);
        add_conv(p, seed, prefix + ".conv1", c, cin, 3);
        add_conv(p, seed, prefix + ".conv2", c, c, 3);
        cin = c;
    }
    const int64_t top = arch.channels(arch.blocks);
    p.tensors["head.fc.weight"] =
        kaiming_uniform<T>({arch.classes, top}, top, hash_mix(seed, hash_str("head.fc")));
    p.tensors["head.fc.bias"] = Tensor<T>({arch.classes});

    // decoder block d consumes upsample(prev) ++ skip(blocks-d) [++ bridge at d=1]
    int64_t prev = top;
    for (int d = 1; d <= arch.blocks - 1; ++d) {
        const int64_t skip_c = arch.channels(arch.blocks - d);
        int64_t in_c = prev + skip_c;
        if (d == 1 && arch.bridge_enabled) in_c += 2;
        const int64_t out_c = skip_c;
        const std::string prefix = "dec.block" + std::to_string(d);
        add_conv(p, seed, prefix + ".conv1", out_c, in_c, 3);
        add_conv(p, seed, prefix + ".conv2", out_c, out_c, 3);
        prev = out_c;
    }
    add_conv(p, seed, "dec.final", 1, prev, 1);
    return p;
}

template <typename T>
MultiMixNet<T>::MultiMixNet(Tape<T>& tape, const ModelParams<T>& params, bool params_need_grad)
    : tape_(&tape), arch_(params.arch) {
    for (const auto& [name, tensor] : params.tensors)
        vars_[name] = params_need_grad ? tape.leaf(tensor) : tape.constant(tensor);
}

template <typename T>
typename Tape<T>::Var MultiMixNet<T>::param(const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw ConfigError("model: unknown parameter " + name);
    return it->second;
}

template <typename T>
typename Tape<T>::Var MultiMixNet<T>::double_conv(Var x, const std::string& prefix) const {
    Tape<T>& t = *tape_;
    auto h = t.leaky_relu(t.instance_norm(
        t.conv2d(x, param(prefix + ".conv1.weight"), param(prefix + ".conv1.bias"))));
    return t.leaky_relu(t.instance_norm(
        t.conv2d(h, param(prefix + ".conv2.weight"), param(prefix + ".conv2.bias"))));
}

template <typename T>
ForwardCache<T> MultiMixNet<T>::encode(Var x, Mode mode, Rng& rng) const {
    Tape<T>& t = *tape_;
    ForwardCache<T> cache;
    Var h = x;
    for (int b = 1; b <= arch_.blocks; ++b) {
        h = double_conv(h, "enc.block" + std::to_string(b));
        h = t.dropout(h, 0.25, mode, rng);
        if (b < arch_.blocks)
            cache.skips.push_back(h);  // pre-pool output feeds the skip concat
        else
            cache.bottleneck = h;
        h = t.maxpool2(h);
    }
    cache.pooled = h;
    return cache;
}

template <typename T>
typename Tape<T>::Var MultiMixNet<T>::classify(const ForwardCache<T>& cache) const {
    Tape<T>& t = *tape_;
    return t.linear(t.avgpool_global(cache.pooled), param("head.fc.weight"),
                    param("head.fc.bias"));
}

template <typename T>
typename Tape<T>::Var MultiMixNet<T>::decode(const ForwardCache<T>& cache,
                                             std::optional<Var> bridge, Mode mode,
                                             Rng& rng) const {
    Tape<T>& t = *tape_;
    if (arch_.bridge_enabled != bridge.has_value())
        throw ShapeError("decode: bridge tensor presence must match bridge_enabled");
    Var h = cache.bottleneck;
    for (int d = 1; d <= arch_.blocks - 1; ++d) {
        h = t.upsample_nearest2(h);
        std::vector<Var> parts{h, cache.skips[static_cast<size_t>(arch_.blocks - 1 - d)]};
        if (d == 1 && bridge) parts.push_back(*bridge);
        h = double_conv(t.concat_channels(parts), "dec.block" + std::to_string(d));
        h = t.dropout(h, 0.25, mode, rng);
    }
    return t.sigmoid(t.conv2d(h, param("dec.final.weight"), param("dec.final.bias")));
}

template <typename T>
JointForward<T> forward_joint(Tape<T>& tape, const ModelParams<T>& params, const Batch<T>& batch,
                              Mode mode, uint64_t step_seed, bool params_need_grad) {
    MultiMixNet<T> net(tape, params, params_need_grad);
    JointForward<T> out;

    {
        Rng rng(hash_mix(step_seed, hash_str("pass.cls_labeled")));
        auto cache = net.encode(tape.constant(batch.cls_images), mode, rng);
        out.cls_logits = net.classify(cache);
    }

    const bool bridge_on = params.arch.bridge_enabled;
    auto seg_pass = [&](const Tensor<T>& images, const char* tag, Tensor<T>& sal_out,
                        Tensor<T>& logits_out) {
        std::optional<typename Tape<T>::Var> bridge;
        if (bridge_on) {
            auto sal = compute_saliency(params, images);
            sal_out = sal.map;
            logits_out = sal.logits;
            bridge =
                tape.constant(build_bridge(sal.map, images, params.arch.bridge_pool_steps()));
        }
        Rng rng(hash_mix(step_seed, hash_str(tag)));
        auto cache = net.encode(tape.constant(images), mode, rng);
        return net.decode(cache, bridge, mode, rng);
    };

    out.seg_pred =
        seg_pass(batch.seg_images, "pass.seg_labeled", out.saliency, out.seg_cls_logits);
    if (batch.seg_unlabeled_images.numel() > 0 && params.arch.ssl_segmentation_enabled)
        out.seg_pred_unlabeled = seg_pass(batch.seg_unlabeled_images, "pass.seg_unlabeled",
                                          out.saliency_unlabeled, out.seg_cls_logits_unlabeled);
    return out;
}

template struct ModelParams<float>;
template struct ModelParams<double>;
template ModelParams<float> init_params<float>(uint64_t, const ArchDescriptor&);
template ModelParams<double> init_params<double>(uint64_t, const ArchDescriptor&);
template class MultiMixNet<float>;
template class MultiMixNet<double>;
template JointForward<float> forward_joint<float>(Tape<float>&, const ModelParams<float>&,
                                                  const Batch<float>&, Mode, uint64_t, bool);
template JointForward<double> forward_joint<double>(Tape<double>&, const ModelParams<double>&,
                                                    const Batch<double>&, Mode, uint64_t, bool);

}  // namespace multimix
