#include "s3d/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "s3d/ops.hpp"

namespace s3d {

void ArchConfig::validate() const {
    if (in_channels <= 0 || height <= 0 || width <= 0)
        throw std::invalid_argument("ArchConfig: input shape must be positive");
    if (height % 4 != 0 || width % 4 != 0)
        throw std::invalid_argument("ArchConfig: height and width must be divisible by 4 (two 2x2 pools)");
    if (conv1_channels <= 0 || conv2_channels <= 0 || embedding_dim <= 0)
        throw std::invalid_argument("ArchConfig: channel and embedding widths must be positive");
    if (num_classes < 2) throw std::invalid_argument("ArchConfig: num_classes must be >= 2");
    if (!(temperature > 0.0)) throw std::invalid_argument("ArchConfig: temperature must be positive");
}

std::vector<Tensor*> Model::parameters() {
    return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &head_w, &head_b, &classifier_w};
}

std::vector<const Tensor*> Model::parameters() const {
    return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &head_w, &head_b, &classifier_w};
}

const std::vector<std::string>& Model::parameter_names() {
    static const std::vector<std::string> names = {"conv1.weight", "conv1.bias",      "conv2.weight", "conv2.bias",
                                                   "head.weight",  "head.bias",      "classifier.weight"};
    return names;
}

double he_std(int fan_in) {
    if (fan_in <= 0) throw std::invalid_argument("he_std: fan_in must be positive");
    return std::sqrt(2.0 / static_cast<double>(fan_in));
}

namespace {

Tensor gaussian(std::vector<int> shape, double std, Rng& rng) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    std::vector<double> v(n);
    for (auto& e : v) e = std * rng.normal();
    return Tensor::from(std::move(shape), std::move(v), true);
}

}  // namespace

Model init_model(const ArchConfig& arch, Rng& rng) {
    arch.validate();
    Model m;
    m.arch = arch;
    m.conv1_w = gaussian({arch.conv1_channels, arch.in_channels, 3, 3}, he_std(arch.in_channels * 9), rng);
    m.conv2_w = gaussian({arch.conv2_channels, arch.conv1_channels, 3, 3}, he_std(arch.conv1_channels * 9), rng);
    m.head_w = gaussian({arch.flat_dim(), arch.embedding_dim}, he_std(arch.flat_dim()), rng);
    m.classifier_w = gaussian({arch.embedding_dim, arch.num_classes}, he_std(arch.embedding_dim), rng);
    m.conv1_b = Tensor::zeros({arch.conv1_channels}, true);
    m.conv2_b = Tensor::zeros({arch.conv2_channels}, true);
    m.head_b = Tensor::zeros({arch.embedding_dim}, true);
    return m;
}

Model clone_model(const Model& m) {
    Model out;
    out.arch = m.arch;
    auto src = m.parameters();
    auto dst = out.parameters();
    for (size_t i = 0; i < src.size(); ++i) {
        *dst[i] = Tensor::from(src[i]->shape(),
                               std::vector<double>(src[i]->values().begin(), src[i]->values().end()), true);
    }
    return out;
}

std::vector<double> flatten_params(const Model& m) {
    std::vector<double> flat;
    for (const Tensor* p : m.parameters()) flat.insert(flat.end(), p->values().begin(), p->values().end());
    return flat;
}

void load_params(Model& m, const std::vector<double>& flat) {
    size_t off = 0;
    for (Tensor* p : m.parameters()) {
        const size_t n = static_cast<size_t>(p->numel());
        if (off + n > flat.size()) throw std::invalid_argument("load_params: parameter vector too short");
        std::copy(flat.begin() + off, flat.begin() + off + n, p->leaf_values().begin());
        off += n;
    }
    if (off != flat.size()) throw std::invalid_argument("load_params: parameter vector too long");
}

Tensor forward_block(const Model& m, int block_index, const Tensor& input) {
    switch (block_index) {
        case 0:
            return avgpool2x2(relu(conv2d(input, m.conv1_w, m.conv1_b, 1)));
        case 1:
            return avgpool2x2(relu(conv2d(input, m.conv2_w, m.conv2_b, 1)));
        default:
            throw std::invalid_argument("forward_block: block index " + std::to_string(block_index) +
                                        " out of range");
    }
}

Tensor head_embedding(const Model& m, const Tensor& last_block) {
    const int B = last_block.shape()[0];
    Tensor flat = reshape(last_block, {B, m.arch.flat_dim()});
    return add(matmul(flat, m.head_w), m.head_b);
}

Features extract(const Model& m, const Tensor& x) {
    if (!x.defined() || x.shape().size() != 4 || x.shape()[1] != m.arch.in_channels ||
        x.shape()[2] != m.arch.height || x.shape()[3] != m.arch.width)
        throw std::invalid_argument("extract: input must be [B, " + std::to_string(m.arch.in_channels) + ", " +
                                    std::to_string(m.arch.height) + ", " + std::to_string(m.arch.width) +
                                    "], got " + (x.defined() ? shape_to_string(x.shape()) : "empty"));
    Features out;
    Tensor cur = x;
    for (int b = 0; b < kNumBlocks; ++b) {
        cur = forward_block(m, b, cur);
        if (m.arch.hook_mask[b]) {
            out.hooked.push_back(cur);
            out.hook_blocks.push_back(b);
        }
    }
    out.embedding = head_embedding(m, cur);
    return out;
}

Tensor cosine_scores(const Model& m, const Tensor& h) {
    if (!h.defined() || h.shape().size() != 2 || h.shape()[1] != m.arch.embedding_dim)
        throw std::invalid_argument("cosine_scores: embedding must be [B, " +
                                    std::to_string(m.arch.embedding_dim) + "], got " +
                                    (h.defined() ? shape_to_string(h.shape()) : "empty"));
    Tensor hn = l2_normalize(h, 1);
    Tensor wn = l2_normalize(m.classifier_w, 0);
    return matmul(hn, wn);
}

Tensor classify(const Model& m, const Tensor& h) {
    return softmax_rows(scalar_mul(cosine_scores(m, h), 1.0 / m.arch.temperature));
}

Tensor predict(const Model& m, const Tensor& x) { return classify(m, extract(m, x).embedding); }

void save_checkpoint(const Model& m, const std::filesystem::path& path, int64_t iteration, uint64_t seed) {
    nlohmann::ordered_json header;
    header["format_version"] = kCheckpointFormatVersion;
    header["arch"] = {{"in_channels", m.arch.in_channels},
                      {"height", m.arch.height},
                      {"width", m.arch.width},
                      {"conv1_channels", m.arch.conv1_channels},
                      {"conv2_channels", m.arch.conv2_channels},
                      {"embedding_dim", m.arch.embedding_dim},
                      {"num_classes", m.arch.num_classes},
                      {"temperature", m.arch.temperature},
                      {"hook_mask", {m.arch.hook_mask[0], m.arch.hook_mask[1]}}};
    header["iteration"] = iteration;
    header["seed"] = seed;
    const std::vector<double> flat = flatten_params(m);
    header["param_count"] = flat.size();
    const std::string hs = header.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
    f.write("S3DCKPT1", 8);
    const uint32_t hlen = static_cast<uint32_t>(hs.size());
    f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    f.write(reinterpret_cast<const char*>(flat.data()), static_cast<std::streamsize>(flat.size() * sizeof(double)));
    if (!f) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path.string());
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, "S3DCKPT1", 8) != 0)
        throw std::runtime_error("checkpoint: " + path.string() + " is not an s3d checkpoint");
    uint32_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string hs(hlen, '\0');
    f.read(hs.data(), hlen);
    if (!f) throw std::runtime_error("checkpoint: truncated header in " + path.string());

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("checkpoint: malformed header in " + path.string() + ": " + e.what());
    }
    if (header.value("format_version", -1) != kCheckpointFormatVersion)
        throw std::runtime_error("checkpoint version mismatch in " + path.string());

    ArchConfig arch;
    const auto& a = header.at("arch");
    arch.in_channels = a.at("in_channels");
    arch.height = a.at("height");
    arch.width = a.at("width");
    arch.conv1_channels = a.at("conv1_channels");
    arch.conv2_channels = a.at("conv2_channels");
    arch.embedding_dim = a.at("embedding_dim");
    arch.num_classes = a.at("num_classes");
    arch.temperature = a.at("temperature");
    arch.hook_mask = {a.at("hook_mask").at(0).get<bool>(), a.at("hook_mask").at(1).get<bool>()};

    Checkpoint ckpt;
    Rng dummy(0);
    ckpt.model = init_model(arch, dummy);
    ckpt.iteration = header.at("iteration");
    ckpt.seed = header.at("seed");

    const size_t count = header.at("param_count");
    std::vector<double> flat(count);
    f.read(reinterpret_cast<char*>(flat.data()), static_cast<std::streamsize>(count * sizeof(double)));
    if (!f || f.gcount() != static_cast<std::streamsize>(count * sizeof(double)))
        throw std::runtime_error("checkpoint: truncated parameter blob in " + path.string());
    load_params(ckpt.model, flat);
    return ckpt;
}

}  // namespace s3d
