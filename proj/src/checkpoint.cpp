// SPDX-License-Identifier: Apache-2.0
#include "dualvae/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace dualvae::inline DUALVAE_ABI {

namespace {

constexpr char kMagic[4] = {'D', 'V', 'A', 'E'};

class Writer {
public:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void text(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes_.insert(bytes_.end(), s.begin(), s.end());
    }
    void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
    const std::vector<char>& bytes() const { return bytes_; }

private:
    std::vector<char> bytes_;
};

class Reader {
public:
    Reader(std::vector<char> bytes, std::string source) : bytes_(std::move(bytes)), source_(std::move(source)) {}
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string text() {
        const std::uint32_t n = u32();
        need(n);
        std::string s(bytes_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    void expect_magic() {
        need(4);
        if (std::memcmp(bytes_.data(), kMagic, 4) != 0) throw IoError(source_ + ": not a checkpoint (bad magic)");
        pos_ += 4;
    }
    bool at_end() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw IoError(source_ + ": truncated checkpoint");
    }
    std::vector<char> bytes_;
    std::string source_;
    std::size_t pos_ = 0;
};

struct StoredTensor {
    Shape shape;
    std::vector<float> data;
};

void put_tensor(Writer& w, const std::string& name, const Shape& shape, std::span<const real> data) {
    w.text(name);
    w.u32(static_cast<std::uint32_t>(shape.size()));
    for (int d : shape) w.u32(static_cast<std::uint32_t>(d));
    for (real v : data) w.f32(static_cast<float>(v));
}

template <typename T>
std::vector<real> as_real(const std::vector<T>& v) {
    return std::vector<real>(v.begin(), v.end());
}

void fill(const std::string& source, std::map<std::string, StoredTensor>& stored, const std::string& name,
          std::span<real> dst, const Shape& expected) {
    const auto it = stored.find(name);
    if (it == stored.end()) throw IoError(source + ": missing tensor " + name);
    if (it->second.shape != expected) {
        throw IoError(source + ": tensor " + name + " has shape " + shape_str(it->second.shape) + ", expected " +
                      shape_str(expected));
    }
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<real>(it->second.data[i]);
    stored.erase(it);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainConfig& config, const DualVaeModel& model,
                     std::int64_t step, const Adam* adam, const ArPrior* prior) {
    Writer w;
    w.raw(kMagic, 4);
    w.u32(kCheckpointVersion);
    w.u64(static_cast<std::uint64_t>(step));
    w.text(serialize_config(config));

    std::size_t count = model.params().entries().size();
    if (model.is_dual()) count += 4;
    if (adam) count += 1 + 2 * model.params().entries().size();
    if (prior) count += prior->params().entries().size();
    w.u32(static_cast<std::uint32_t>(count));

    for (const auto& p : model.params().entries()) put_tensor(w, "param/" + p.name, p.tensor.shape(), p.tensor.data());
    if (model.is_dual()) {
        const Codebook& cb = model.codebook();
        put_tensor(w, "codebook/embeddings", cb.embeddings().shape(), cb.embeddings().data());
        put_tensor(w, "codebook/ema_size", {cb.size()}, cb.ema_cluster_size());
        put_tensor(w, "codebook/ema_sum", {cb.size(), cb.dim()}, cb.ema_sum());
        put_tensor(w, "codebook/usage", {cb.size()}, as_real(cb.usage()));
    }
    if (adam) {
        const std::vector<real> steps{static_cast<real>(adam->steps())};
        put_tensor(w, "adam/steps", {1}, steps);
        const auto& entries = model.params().entries();
        for (std::size_t i = 0; i < entries.size(); ++i) {
            put_tensor(w, "adam/m/" + entries[i].name, entries[i].tensor.shape(), adam->first_moments()[i]);
            put_tensor(w, "adam/v/" + entries[i].name, entries[i].tensor.shape(), adam->second_moments()[i]);
        }
    }
    if (prior) {
        for (const auto& p : prior->params().entries()) put_tensor(w, "prior/" + p.name, p.tensor.shape(), p.tensor.data());
    }

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
        if (!out) throw IoError("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

CheckpointData load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::string source = path.string();
    Reader r(std::move(bytes), source);
    r.expect_magic();
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw IoError(source + ": checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
    }
    CheckpointData data;
    data.step = static_cast<std::int64_t>(r.u64());
    try {
        data.config = parse_config(r.text());
    } catch (const ConfigError& e) {
        throw IoError(source + ": embedded config is invalid: " + e.what());
    }

    std::map<std::string, StoredTensor> stored;
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = r.text();
        StoredTensor t;
        const std::uint32_t rank = r.u32();
        for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(static_cast<int>(r.u32()));
        const std::size_t n = shape_numel(t.shape);
        t.data.resize(n);
        for (std::size_t k = 0; k < n; ++k) t.data[k] = r.f32();
        if (!stored.emplace(name, std::move(t)).second) throw IoError(source + ": duplicate tensor " + name);
    }
    if (!r.at_end()) throw IoError(source + ": trailing bytes after the tensor directory");

    Rng rng(0);
    data.model = std::make_unique<DualVaeModel>(data.config.model, data.config.vq, rng);
    for (auto& p : data.model->params().entries()) {
        Tensor t = p.tensor;
        fill(source, stored, "param/" + p.name, t.data(), t.shape());
    }
    if (data.model->is_dual()) {
        Codebook& cb = data.model->codebook();
        fill(source, stored, "codebook/embeddings", cb.embeddings().data(), cb.embeddings().shape());
        fill(source, stored, "codebook/ema_size", cb.ema_cluster_size(), {cb.size()});
        fill(source, stored, "codebook/ema_sum", cb.ema_sum(), {cb.size(), cb.dim()});
        std::vector<real> usage(static_cast<std::size_t>(cb.size()));
        fill(source, stored, "codebook/usage", usage, {cb.size()});
        for (std::size_t i = 0; i < usage.size(); ++i) cb.usage()[i] = static_cast<std::int64_t>(usage[i]);
    }
    if (stored.count("adam/steps")) {
        data.has_optimizer = true;
        std::vector<real> steps(1);
        fill(source, stored, "adam/steps", steps, {1});
        data.adam_steps = static_cast<std::int64_t>(steps[0]);
        for (const auto& p : data.model->params().entries()) {
            std::vector<real> m(p.tensor.numel()), v(p.tensor.numel());
            fill(source, stored, "adam/m/" + p.name, m, p.tensor.shape());
            fill(source, stored, "adam/v/" + p.name, v, p.tensor.shape());
            data.adam_m.push_back(std::move(m));
            data.adam_v.push_back(std::move(v));
        }
    }
    bool has_prior = false;
    for (const auto& entry : stored) has_prior = has_prior || entry.first.rfind("prior/", 0) == 0;
    if (has_prior) {
        const int grid = data.config.model.token_grid_size();
        data.prior = std::make_unique<ArPrior>(data.config.model.n_embed, grid, grid, data.config.prior, rng);
        for (auto& p : data.prior->params().entries()) {
            Tensor t = p.tensor;
            fill(source, stored, "prior/" + p.name, t.data(), t.shape());
        }
    }
    if (!stored.empty()) throw IoError(source + ": unexpected tensor " + stored.begin()->first);
    return data;
}

void restore_optimizer(Adam& adam, const CheckpointData& data) {
    DUALVAE_REQUIRE(data.has_optimizer, "checkpoint holds no optimiser state");
    DUALVAE_REQUIRE(adam.first_moments().size() == data.adam_m.size(), "optimiser does not match the checkpoint");
    for (std::size_t i = 0; i < data.adam_m.size(); ++i) {
        adam.first_moments()[i] = data.adam_m[i];
        adam.second_moments()[i] = data.adam_v[i];
    }
    adam.set_steps(data.adam_steps);
}

}  // namespace dualvae
