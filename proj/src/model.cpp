#include "fedskd/model.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <map>
#include <sstream>

#include "fedskd/errors.hpp"

namespace fedskd {
namespace {

std::size_t downsampling_steps(ModelFamily family) { return family == ModelFamily::resnet10 ? 5 : 3; }

std::size_t ceil_div_pow2(std::size_t s, int k) {
    for (int i = 0; i < k; ++i) s = (s + 1) / 2;
    return s;
}

std::string role_name(nn::ParamRole role) {
    switch (role) {
        case nn::ParamRole::weight: return "weight";
        case nn::ParamRole::bias: return "bias";
        case nn::ParamRole::bn_weight: return "bn_weight";
        case nn::ParamRole::bn_bias: return "bn_bias";
        case nn::ParamRole::bn_running_mean: return "bn_running_mean";
        case nn::ParamRole::bn_running_var: return "bn_running_var";
    }
    return "weight";
}

nn::ParamRole parse_role(const std::string& s) {
    for (auto r : {nn::ParamRole::weight, nn::ParamRole::bias, nn::ParamRole::bn_weight, nn::ParamRole::bn_bias,
                   nn::ParamRole::bn_running_mean, nn::ParamRole::bn_running_var}) {
        if (role_name(r) == s) return r;
    }
    throw CheckpointError("checkpoint: unknown parameter role '" + s + "'");
}

}  // namespace

std::string to_string(ModelFamily family) { return family == ModelFamily::resnet10 ? "resnet10" : "tinycnn"; }

ModelFamily parse_model_family(const std::string& text) {
    if (text == "resnet10") return ModelFamily::resnet10;
    if (text == "tinycnn") return ModelFamily::tinycnn;
    throw ConfigError("unknown model family '" + text + "' (expected resnet10 or tinycnn)");
}

void ModelSpec::validate() const {
    if (base_width < 4) throw UnsupportedShapeError("model: base_width must be >= 4, got " + std::to_string(base_width));
    if (num_classes < 1) throw UnsupportedShapeError("model: num_classes must be >= 1");
    if (tap_layers.empty()) throw UnsupportedShapeError("model: tap_layers must be non-empty");
    for (std::size_t i = 0; i < tap_layers.size(); ++i) {
        if (tap_layers[i] < 1 || tap_layers[i] > 4) {
            throw UnsupportedShapeError("model: tap layer " + std::to_string(tap_layers[i]) + " outside 1..4");
        }
        if (i > 0 && tap_layers[i] <= tap_layers[i - 1]) {
            throw UnsupportedShapeError("model: tap_layers must be strictly increasing");
        }
    }
    if (input_shape.size() != 3 && input_shape.size() != 4) {
        throw UnsupportedShapeError("model: input shape " + shape_to_string(input_shape) +
                                    " must be (c, s1, s2) or (c, s1, s2, s3)");
    }
    if (input_shape[0] < 1) throw UnsupportedShapeError("model: input needs at least one channel");
    const std::size_t min_extent = std::size_t{1} << downsampling_steps(family);
    for (std::size_t a = 1; a < input_shape.size(); ++a) {
        if (input_shape[a] < min_extent) {
            throw UnsupportedShapeError("model: " + to_string(family) + " needs spatial extent >= " +
                                        std::to_string(min_extent) + ", got " + shape_to_string(input_shape));
        }
    }
}

std::string ModelSpec::describe() const {
    std::ostringstream os;
    os << to_string(family) << " w=" << base_width << " classes=" << num_classes << " input=" << shape_to_string(input_shape);
    return os.str();
}

bool heterogeneous(const ModelSpec& a, const ModelSpec& b) {
    return a.family != b.family || a.base_width != b.base_width;
}

Shape tap_spatial(const ModelSpec& spec, int layer) {
    Shape out;
    const int halvings = spec.family == ModelFamily::resnet10 ? layer + 1 : layer - 1;
    for (std::size_t a = 1; a < spec.input_shape.size(); ++a) out.push_back(ceil_div_pow2(spec.input_shape[a], halvings));
    return out;
}

Model::Model(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    spec_.validate();
    CounterRng rng(seed);
    const std::size_t dims = spec_.input_shape.size() - 1;
    const std::size_t c_in = spec_.input_shape[0];
    const std::size_t w = spec_.base_width;
    stages_.resize(4);

    std::size_t features = 0;
    if (spec_.family == ModelFamily::resnet10) {
        auto stem = nn::Conv::make(store_, "stage1.stem.conv", c_in, w, 7, 2, 3, dims, rng);
        stem.input_grad = false;
        stages_[0].layers.emplace_back(std::move(stem));
        stages_[0].layers.emplace_back(nn::BatchNorm::make(store_, "stage1.stem.bn", w));
        stages_[0].layers.emplace_back(nn::Relu{});
        stages_[0].layers.emplace_back(nn::MaxPool{});
        stages_[0].layers.emplace_back(nn::BasicBlock::make(store_, "stage1.block", w, w, 1, dims, rng));
        std::size_t in = w;
        for (int s = 1; s < 4; ++s) {
            const std::size_t out = w << s;
            stages_[s].layers.emplace_back(
                nn::BasicBlock::make(store_, "stage" + std::to_string(s + 1) + ".block", in, out, 2, dims, rng));
            in = out;
        }
        features = in;
    } else {
        const std::size_t widths[4] = {w, w, 2 * w, 2 * w};
        std::size_t in = c_in;
        for (int s = 0; s < 4; ++s) {
            const std::string name = "stage" + std::to_string(s + 1);
            auto conv = nn::Conv::make(store_, name + ".conv", in, widths[s], 3, s == 0 ? 1 : 2, 1, dims, rng);
            if (s == 0) conv.input_grad = false;
            stages_[s].layers.emplace_back(std::move(conv));
            stages_[s].layers.emplace_back(nn::BatchNorm::make(store_, name + ".bn", widths[s]));
            stages_[s].layers.emplace_back(nn::Relu{});
            in = widths[s];
        }
        features = in;
    }
    head_ = nn::Linear::make(store_, "head", features, spec_.num_classes, rng, true);
}

ForwardResult Model::forward(const Tensor& x, nn::Mode mode) {
    Shape expected{x.rank() > 0 ? x.dim(0) : 0};
    expected.insert(expected.end(), spec_.input_shape.begin(), spec_.input_shape.end());
    if (x.shape() != expected || x.dim(0) == 0) {
        throw MismatchError("model: input " + shape_to_string(x.shape()) + " does not match (b, " +
                            shape_to_string(spec_.input_shape) + ")");
    }
    ForwardResult result;
    Tensor h = x;
    for (int s = 0; s < 4; ++s) {
        h = stages_[s].forward(store_, h, mode);
        if (std::find(spec_.tap_layers.begin(), spec_.tap_layers.end(), s + 1) != spec_.tap_layers.end()) {
            result.taps.push_back(FeatureMap{h, s + 1, ModelTag::dam});
        }
    }
    result.logits = head_.forward(store_, pool_.forward(h, mode), mode);
    return result;
}

void Model::backward(const Tensor& grad_logits, std::span<const Tensor> grad_taps) {
    if (!grad_taps.empty() && grad_taps.size() != spec_.tap_layers.size()) {
        throw MismatchError("model: got " + std::to_string(grad_taps.size()) + " tap gradients for " +
                            std::to_string(spec_.tap_layers.size()) + " taps");
    }
    Tensor g = pool_.backward(head_.backward(store_, grad_logits));
    for (int s = 3; s >= 0; --s) {
        if (!grad_taps.empty()) {
            const auto it = std::find(spec_.tap_layers.begin(), spec_.tap_layers.end(), s + 1);
            if (it != spec_.tap_layers.end()) g += grad_taps[static_cast<std::size_t>(it - spec_.tap_layers.begin())];
        }
        g = stages_[s].backward(store_, g);
    }
}

std::size_t Model::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : store_) {
        if (nn::is_trainable(p.role)) n += p.value.numel();
    }
    return n;
}

ParamCollection Model::named_parameters() const {
    ParamCollection out;
    out.reserve(store_.size());
    for (const auto& p : store_) out.push_back({p.name, p.value, p.role});
    return out;
}

void Model::load_parameters(const ParamCollection& params, bool (*accept)(nn::ParamRole)) {
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < store_.size(); ++i) index.emplace(store_[i].name, i);
    for (const auto& entry : params) {
        const auto it = index.find(entry.name);
        if (it == index.end()) throw SchemaMismatchError("load parameters: unknown parameter '" + entry.name + "'");
        auto& p = store_[it->second];
        if (p.value.shape() != entry.value.shape()) {
            throw SchemaMismatchError("load parameters: '" + entry.name + "' has shape " +
                                      shape_to_string(entry.value.shape()) + ", model expects " +
                                      shape_to_string(p.value.shape()));
        }
        if (accept != nullptr && !accept(p.role)) continue;
        p.value = entry.value;
    }
}

Model build_model(const ModelSpec& spec, std::uint64_t seed) { return Model(spec, seed); }

std::vector<ModelSpec> heterogeneous_fleet(std::size_t n_clients, const ModelSpec& base, std::size_t step) {
    if (n_clients == 0) return {};
    const std::size_t shrink = step * (n_clients - 1);
    if (shrink > base.base_width || base.base_width - shrink < 4) {
        throw WidthUnderflowError("fleet: width " + std::to_string(base.base_width) + " - " + std::to_string(step) +
                                  " * " + std::to_string(n_clients - 1) + " falls below 4");
    }
    std::vector<ModelSpec> fleet(n_clients, base);
    for (std::size_t i = 0; i < n_clients; ++i) fleet[i].base_width = base.base_width - step * i;
    return fleet;
}

Model clone_model(const Model& m) { return Model(m); }

void set_head_frozen(Model& m, bool frozen) { m.set_head_frozen(frozen); }

void save_checkpoint(const Model& m, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("checkpoint: cannot write " + path.string());
    const auto& spec = m.spec();
    os << "FEDSKD-CKPT 1\n";
    os << "spec " << to_string(spec.family) << ' ' << spec.base_width << ' ' << spec.num_classes << ' '
       << spec.input_shape.size();
    for (auto d : spec.input_shape) os << ' ' << d;
    os << ' ' << spec.tap_layers.size();
    for (auto t : spec.tap_layers) os << ' ' << t;
    os << "\nhead_frozen " << (m.head_frozen() ? 1 : 0) << "\nparams " << m.params().size() << '\n';
    static_assert(std::endian::native == std::endian::little, "checkpoint format is little-endian");
    for (const auto& p : m.params()) {
        os << p.name << ' ' << role_name(p.role) << ' ' << p.value.rank();
        for (auto d : p.value.shape()) os << ' ' << d;
        os << '\n';
        os.write(reinterpret_cast<const char*>(p.value.data()), static_cast<std::streamsize>(p.value.numel() * sizeof(double)));
        os << '\n';
    }
    if (!os) throw CheckpointError("checkpoint: write failed for " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("checkpoint: cannot open " + path.string());
    std::string magic, tag, family;
    int version = 0;
    is >> magic >> version;
    if (magic != "FEDSKD-CKPT" || version != 1) throw CheckpointError("checkpoint: bad header in " + path.string());
    ModelSpec spec;
    std::size_t rank = 0, n_taps = 0;
    is >> tag >> family >> spec.base_width >> spec.num_classes >> rank;
    if (tag != "spec") throw CheckpointError("checkpoint: missing spec line in " + path.string());
    spec.family = parse_model_family(family);
    spec.input_shape.resize(rank);
    for (auto& d : spec.input_shape) is >> d;
    is >> n_taps;
    spec.tap_layers.resize(n_taps);
    for (auto& t : spec.tap_layers) is >> t;
    int frozen = 0;
    std::size_t count = 0;
    is >> tag >> frozen;
    is >> tag >> count;
    if (!is) throw CheckpointError("checkpoint: truncated header in " + path.string());

    Model m(spec, 0);
    m.set_head_frozen(frozen != 0);
    if (count != m.params().size()) {
        throw CheckpointError("checkpoint: " + std::to_string(count) + " parameters, architecture has " +
                              std::to_string(m.params().size()));
    }
    ParamCollection loaded;
    for (std::size_t i = 0; i < count; ++i) {
        std::string name, role;
        std::size_t prank = 0;
        is >> name >> role >> prank;
        Shape shape(prank);
        for (auto& d : shape) is >> d;
        is.get();  // newline before payload
        Tensor value(shape);
        is.read(reinterpret_cast<char*>(value.data()), static_cast<std::streamsize>(value.numel() * sizeof(double)));
        if (!is) throw CheckpointError("checkpoint: truncated payload for '" + name + "' in " + path.string());
        loaded.push_back({name, std::move(value), parse_role(role)});
    }
    m.load_parameters(loaded);
    return m;
}

}  // namespace fedskd
