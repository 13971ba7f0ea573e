// 1D residual classifier. Layout:
//
//   input (n, length) -> (n, 1, length)
//   stem:   conv(stem_kernel, stem_stride) -> BN -> ReLU
//   stages: blocks[s] residual blocks of width widths[s]; the first block of a
//           stage uses strides[s], the rest stride 1
//   pool:   global average over length -> deep feature F, (n, widths.back())
//   head:   logits = F W^T, no bias
//
// Residual block: relu(BN(conv(relu(BN(conv(x))))) + shortcut(x)), where the
// shortcut is the identity unless the width or stride changes, in which case
// it is a 1x1 strided conv followed by BN.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "osr/checkpoint.hpp"
#include "osr/ini.hpp"
#include "osr/tensor.hpp"

namespace osr {

struct NetworkConfig {
    std::size_t input_length = 1024;
    std::size_t stem_kernel = 7;
    std::size_t stem_stride = 2;
    std::vector<std::size_t> widths{16, 32, 64};
    std::vector<std::size_t> blocks{2, 2, 2};
    std::vector<std::size_t> strides{1, 2, 2};
    std::size_t kernel_size = 3;
    std::size_t output_count = 20;

    std::size_t feature_dim() const { return widths.empty() ? 0 : widths.back(); }

    void validate() const {
        if (widths.empty()) throw ShapeError("network: at least one stage required");
        if (blocks.size() != widths.size() || strides.size() != widths.size())
            throw ShapeError("network: widths, blocks and strides must have one entry per stage");
        for (std::size_t s = 0; s < widths.size(); ++s) {
            if (widths[s] == 0) throw ShapeError("network: zero stage width");
            if (blocks[s] == 0) throw ShapeError("network: every stage needs at least one block");
            if (strides[s] == 0) throw ShapeError("network: zero stride");
        }
        if (feature_dim() < 2) throw ShapeError("network: feature dimension must be at least 2");
        if (output_count < 2) throw ShapeError("network: at least two outputs required");
        if (kernel_size % 2 == 0 || stem_kernel % 2 == 0) throw ShapeError("network: kernel sizes must be odd");
        if (stem_stride == 0) throw ShapeError("network: zero stem stride");
        if (input_length < stem_kernel / 2 + 1) throw ShapeError("network: input shorter than the stem kernel");
    }

    /// Closed-form parameter count (BN running statistics are buffers, not parameters).
    std::size_t parameter_count() const {
        std::size_t total = stem_kernel * widths[0] + 2 * widths[0];
        std::size_t in = widths[0];
        for (std::size_t s = 0; s < widths.size(); ++s) {
            const std::size_t out = widths[s];
            for (std::size_t b = 0; b < blocks[s]; ++b) {
                const std::size_t stride = b == 0 ? strides[s] : 1;
                total += kernel_size * in * out + kernel_size * out * out + 4 * out;
                if (in != out || stride != 1) total += in * out + 2 * out;
                in = out;
            }
        }
        return total + output_count * feature_dim();
    }

    /// Three stages (16, 32, 64) of two blocks each.
    static NetworkConfig resnet_mini(std::size_t input_length, std::size_t outputs) {
        NetworkConfig c;
        c.input_length = input_length;
        c.output_count = outputs;
        return c;
    }

    /// Four stages of three blocks: 24 block convs + stem + head = 26 weight layers.
    static NetworkConfig resnet26_like(std::size_t input_length, std::size_t outputs) {
        NetworkConfig c;
        c.input_length = input_length;
        c.output_count = outputs;
        c.widths = {16, 32, 64, 128};
        c.blocks = {3, 3, 3, 3};
        c.strides = {1, 2, 2, 2};
        return c;
    }

    IniSection to_ini(std::string name = "network") const {
        IniSection s{std::move(name), {}};
        s.set("input_length", std::to_string(input_length));
        s.set("stem_kernel", std::to_string(stem_kernel));
        s.set("stem_stride", std::to_string(stem_stride));
        s.set("widths", ini::join(widths));
        s.set("blocks", ini::join(blocks));
        s.set("strides", ini::join(strides));
        s.set("kernel_size", std::to_string(kernel_size));
        s.set("output_count", std::to_string(output_count));
        return s;
    }

    /// Keys absent from `s` keep the values already in `base`.
    static NetworkConfig from_ini(const IniSection& s) { return from_ini(s, NetworkConfig{}); }

    static NetworkConfig from_ini(const IniSection& s, NetworkConfig base) {
        auto size = [&](const char* key, std::size_t& field) {
            if (auto v = s.get(key)) field = static_cast<std::size_t>(ini::to_uint(*v, key));
        };
        auto list = [&](const char* key, std::vector<std::size_t>& field) {
            if (auto v = s.get(key)) field = ini::to_uint_list(*v, key);
        };
        if (auto preset = s.get("preset")) {
            if (*preset == "resnet26") base = resnet26_like(base.input_length, base.output_count);
            else if (*preset == "resnet_mini") base = resnet_mini(base.input_length, base.output_count);
            else throw ConfigError("network: unknown preset '" + *preset + "'");
        }
        size("input_length", base.input_length);
        size("stem_kernel", base.stem_kernel);
        size("stem_stride", base.stem_stride);
        list("widths", base.widths);
        list("blocks", base.blocks);
        list("strides", base.strides);
        size("kernel_size", base.kernel_size);
        size("output_count", base.output_count);
        return base;
    }

    bool operator==(const NetworkConfig&) const = default;
};

struct ConvBnLayer {
    Parameter weight;
    Parameter gamma;
    Parameter beta;
    BatchNormState stats;
    std::size_t stride = 1;
    std::size_t padding = 0;

    ConvBnLayer() = default;
    ConvBnLayer(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_,
                std::mt19937_64& rng)
        : weight(name + ".weight", Tensor({out, in, kernel})),
          gamma(name + ".gamma", Tensor({out}, 1.0)),
          beta(name + ".beta", Tensor({out}, 0.0)),
          stats(out),
          stride(stride_),
          padding(kernel / 2) {
        std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(in * kernel)));
        for (auto& v : weight.value.values()) v = normal(rng);
    }
};

struct ResidualBlock {
    ConvBnLayer conv1;
    ConvBnLayer conv2;
    std::optional<ConvBnLayer> shortcut;
};

namespace detail {

template <typename P>
Var leaf(Tape& tape, P& p) {
    if constexpr (std::is_const_v<P>) return tape.constant(p.value);
    else return tape.parameter(p);
}

template <typename L>
Var conv_bn(Tape& tape, Var x, L& layer, Mode mode) {
    Var y = conv1d(x, leaf(tape, layer.weight), layer.stride, layer.padding);
    if constexpr (std::is_const_v<L>) return batch_norm(y, leaf(tape, layer.gamma), leaf(tape, layer.beta), layer.stats);
    else return batch_norm(y, leaf(tape, layer.gamma), leaf(tape, layer.beta), layer.stats, mode);
}

template <typename B>
Var residual_block(Tape& tape, Var x, B& block, Mode mode) {
    Var h = relu(conv_bn(tape, x, block.conv1, mode));
    h = conv_bn(tape, h, block.conv2, mode);
    Var skip = block.shortcut ? conv_bn(tape, x, *block.shortcut, mode) : x;
    if (h.shape() != skip.shape()) throw ShapeError("residual_block", h.shape(), skip.shape());
    return relu(add(h, skip));
}

}  // namespace detail

/// relu(transform(x) + shortcut(x)) for x of shape (n, channels, length).
inline Var residual_block(Tape& tape, Var x, ResidualBlock& block, Mode mode) {
    if (x.shape().size() != 3 || x.shape()[1] != block.conv1.weight.value.dim(1))
        throw ShapeError("residual_block", x.shape(), block.conv1.weight.value.shape());
    return detail::residual_block(tape, x, block, mode);
}

/// Per-sample Euclidean norm of the rows of an (n, f) feature matrix.
inline std::vector<double> feature_norm(const Tensor& features) {
    if (features.rank() != 2) throw ShapeError("feature_norm: expected (n, f), got " + to_string(features.shape()));
    const std::size_t n = features.dim(0), f = features.dim(1);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < f; ++j) s += features[i * f + j] * features[i * f + j];
        out[i] = std::sqrt(s);
    }
    return out;
}

struct ForwardResult {
    Var logits;
    Var features;
};

struct Prediction {
    Tensor logits;    // (n, outputs)
    Tensor features;  // (n, feature_dim)
};

class Model {
public:
    Model() = default;

    /// Kaiming fan-in initialization for convolutions (std sqrt(2 / fan_in)),
    /// fan-in scaled head (std 1 / sqrt(fan_in)), BN scale 1 and shift 0.
    Model(NetworkConfig config, std::uint64_t seed) : config_(std::move(config)) {
        config_.validate();
        std::mt19937_64 rng(seed);
        stem_ = ConvBnLayer("stem", 1, config_.widths[0], config_.stem_kernel, config_.stem_stride, rng);
        std::size_t in = config_.widths[0];
        for (std::size_t s = 0; s < config_.widths.size(); ++s) {
            const std::size_t out = config_.widths[s];
            for (std::size_t b = 0; b < config_.blocks[s]; ++b) {
                const std::size_t stride = b == 0 ? config_.strides[s] : 1;
                const std::string name = "stage" + std::to_string(s) + ".block" + std::to_string(b);
                ResidualBlock block;
                block.conv1 = ConvBnLayer(name + ".conv1", in, out, config_.kernel_size, stride, rng);
                block.conv2 = ConvBnLayer(name + ".conv2", out, out, config_.kernel_size, 1, rng);
                if (in != out || stride != 1) block.shortcut = ConvBnLayer(name + ".shortcut", in, out, 1, stride, rng);
                blocks_.push_back(std::move(block));
                in = out;
            }
        }
        head_ = Parameter("head.weight", Tensor({config_.output_count, config_.feature_dim()}));
        std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(config_.feature_dim())));
        for (auto& v : head_.value.values()) v = normal(rng);
    }

    const NetworkConfig& config() const noexcept { return config_; }
    std::size_t output_count() const noexcept { return config_.output_count; }

    /// Records the forward pass of a (n, input_length) batch with trainable leaves.
    ForwardResult forward(Tape& tape, const Tensor& batch, Mode mode) { return forward_impl(*this, tape, batch, mode); }

    /// Eval-mode forward pass with the parameters as constants.
    ForwardResult forward(Tape& tape, const Tensor& batch) const { return forward_impl(*this, tape, batch, Mode::eval); }

    /// Eval-mode logits and features, evaluated in chunks of `chunk` rows.
    Prediction predict(const Tensor& batch, std::size_t chunk = 128) const {
        check_input(batch);
        const std::size_t n = batch.dim(0), len = batch.dim(1);
        Prediction out{Tensor({n, config_.output_count}), Tensor({n, config_.feature_dim()})};
        for (std::size_t start = 0; start < n; start += chunk) {
            const std::size_t m = std::min(chunk, n - start);
            Tensor part({m, len}, std::vector<double>(batch.data() + start * len, batch.data() + (start + m) * len));
            Tape tape;
            auto r = forward(tape, part);
            std::copy(r.logits.value().data(), r.logits.value().data() + r.logits.value().size(),
                      out.logits.data() + start * config_.output_count);
            std::copy(r.features.value().data(), r.features.value().data() + r.features.value().size(),
                      out.features.data() + start * config_.feature_dim());
        }
        return out;
    }

    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> out;
        visit_layers(*this, [&](auto& layer) {
            out.push_back(&layer.weight);
            out.push_back(&layer.gamma);
            out.push_back(&layer.beta);
        });
        out.push_back(&head_);
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = head_.value.size();
        visit_layers(*this, [&](const auto& layer) {
            n += layer.weight.value.size() + layer.gamma.value.size() + layer.beta.value.size();
        });
        return n;
    }

    Parameter& head() noexcept { return head_; }
    const Parameter& head() const noexcept { return head_; }
    ConvBnLayer& stem() noexcept { return stem_; }
    std::vector<ResidualBlock>& blocks() noexcept { return blocks_; }

    /// Parameters and BN running statistics, in a fixed order.
    std::vector<NamedTensor> state() const {
        std::vector<NamedTensor> out;
        visit_layers(*this, [&](const auto& layer) {
            out.emplace_back(layer.weight.name, layer.weight.value);
            out.emplace_back(layer.gamma.name, layer.gamma.value);
            out.emplace_back(layer.beta.name, layer.beta.value);
            const std::string base = layer.weight.name.substr(0, layer.weight.name.size() - std::string(".weight").size());
            out.emplace_back(base + ".running_mean", layer.stats.running_mean);
            out.emplace_back(base + ".running_var", layer.stats.running_var);
        });
        out.emplace_back(head_.name, head_.value);
        return out;
    }

    void load_state(const std::vector<NamedTensor>& tensors) {
        std::vector<Tensor*> slots;
        std::vector<std::string> names;
        visit_layers(*this, [&](auto& layer) {
            const std::string base = layer.weight.name.substr(0, layer.weight.name.size() - std::string(".weight").size());
            for (auto [name, t] : {std::pair{layer.weight.name, &layer.weight.value},
                                   std::pair{layer.gamma.name, &layer.gamma.value},
                                   std::pair{layer.beta.name, &layer.beta.value},
                                   std::pair{base + ".running_mean", &layer.stats.running_mean},
                                   std::pair{base + ".running_var", &layer.stats.running_var}}) {
                names.push_back(name);
                slots.push_back(t);
            }
        });
        names.push_back(head_.name);
        slots.push_back(&head_.value);
        if (tensors.size() != slots.size())
            throw CheckpointError("checkpoint: expected " + std::to_string(slots.size()) + " tensors, found " +
                                  std::to_string(tensors.size()));
        for (std::size_t i = 0; i < slots.size(); ++i) {
            if (tensors[i].first != names[i])
                throw CheckpointError("checkpoint: expected tensor '" + names[i] + "', found '" + tensors[i].first + "'");
            if (tensors[i].second.shape() != slots[i]->shape())
                throw CheckpointError("checkpoint: tensor '" + names[i] + "' has shape " +
                                      to_string(tensors[i].second.shape()) + ", config implies " +
                                      to_string(slots[i]->shape()));
            *slots[i] = tensors[i].second;
        }
    }

    /// "OSRM" magic, u32 version, u32 config length, config text, tensor block.
    void save(std::ostream& out) const {
        std::ostringstream cfg;
        IniDocument doc;
        doc.sections.push_back(config_.to_ini());
        write_ini(cfg, doc);
        const std::string text = cfg.str();
        out.write("OSRM", 4);
        detail::write_le<std::uint32_t>(out, checkpoint_version);
        detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        write_tensors(out, state());
    }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
        save(out);
    }

    static Model load(std::istream& in) {
        char magic[4];
        if (!in.read(magic, 4) || std::memcmp(magic, "OSRM", 4) != 0) throw CheckpointError("checkpoint: bad model magic");
        const auto version = detail::read_le<std::uint32_t>(in);
        if (version != checkpoint_version)
            throw CheckpointError("checkpoint: unsupported model version " + std::to_string(version));
        const auto len = detail::read_le<std::uint32_t>(in);
        std::string text(len, '\0');
        if (!in.read(text.data(), len)) throw CheckpointError("checkpoint: truncated config header");
        std::istringstream cfg(text);
        const auto doc = parse_ini(cfg, "checkpoint config");
        const auto* section = doc.find("network");
        if (!section) throw CheckpointError("checkpoint: missing [network] header");
        Model model(NetworkConfig::from_ini(*section), 0);
        model.load_state(read_tensors(in));
        return model;
    }

    static Model load(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw CheckpointError("missing checkpoint " + path.string());
        return load(in);
    }

private:
    template <typename Self, typename F>
    static void visit_layers(Self& self, F&& f) {
        f(self.stem_);
        for (auto& b : self.blocks_) {
            f(b.conv1);
            f(b.conv2);
            if (b.shortcut) f(*b.shortcut);
        }
    }

    void check_input(const Tensor& batch) const {
        if (batch.rank() != 2 || batch.dim(1) != config_.input_length)
            throw ShapeError("forward: expected (n, " + std::to_string(config_.input_length) + ") input, got " +
                             to_string(batch.shape()));
    }

    template <typename Self>
    static ForwardResult forward_impl(Self& self, Tape& tape, const Tensor& batch, Mode mode) {
        self.check_input(batch);
        const std::size_t n = batch.dim(0);
        Tensor input({n, 1, self.config_.input_length}, std::vector<double>(batch.values().begin(), batch.values().end()));
        Var h = relu(detail::conv_bn(tape, tape.constant(std::move(input)), self.stem_, mode));
        for (auto& block : self.blocks_) h = detail::residual_block(tape, h, block, mode);
        Var features = global_average_pool(h);
        Var logits = linear(features, detail::leaf(tape, self.head_));
        return {logits, features};
    }

    NetworkConfig config_;
    ConvBnLayer stem_;
    std::vector<ResidualBlock> blocks_;
    Parameter head_;
};

/// Stacks equally long sample vectors into an (n, length) batch.
template <typename Range, typename Proj>
Tensor make_batch(const Range& items, Proj&& proj) {
    std::vector<double> values;
    std::size_t n = 0, len = 0;
    for (const auto& item : items) {
        const auto& x = proj(item);
        if (n == 0) len = x.size();
        else if (x.size() != len) throw ShapeError("make_batch: ragged sample lengths");
        values.insert(values.end(), x.begin(), x.end());
        ++n;
    }
    if (n == 0) throw ShapeError("make_batch: empty batch");
    return Tensor({n, len}, std::move(values));
}

}  // namespace osr
