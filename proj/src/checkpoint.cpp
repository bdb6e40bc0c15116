#include "sfda/nn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "sfda/error.hpp"

namespace sfda::nn {

namespace {

constexpr char kMagic[4] = {'S', 'F', 'C', 'K'};
constexpr uint32_t kVersion = 1;

uint64_t fnv1a64(const char* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    for (size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 0x100000001b3ull;
    }
    return h;
}

void put_u32(std::string& buf, uint32_t v) { buf.append(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::string& buf, uint64_t v) { buf.append(reinterpret_cast<const char*>(&v), 8); }
void put_f32(std::string& buf, float v) { buf.append(reinterpret_cast<const char*>(&v), 4); }
void put_str(std::string& buf, const std::string& s) {
    put_u32(buf, static_cast<uint32_t>(s.size()));
    buf.append(s);
}
void put_tensor(std::string& buf, const std::string& name, const Tensor& t) {
    put_str(buf, name);
    put_u32(buf, static_cast<uint32_t>(t.rank()));
    for (int d : t.shape()) put_u32(buf, static_cast<uint32_t>(d));
    buf.append(reinterpret_cast<const char*>(t.data()), t.numel() * sizeof(float));
}

class Reader {
public:
    Reader(const std::string& bytes, const std::string& path) : b_(bytes), path_(path) {}

    uint32_t u32() {
        need(4);
        uint32_t v;
        std::memcpy(&v, b_.data() + pos_, 4);
        pos_ += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v;
        std::memcpy(&v, b_.data() + pos_, 8);
        pos_ += 8;
        return v;
    }
    float f32() {
        need(4);
        float v;
        std::memcpy(&v, b_.data() + pos_, 4);
        pos_ += 4;
        return v;
    }
    std::string str() {
        const uint32_t n = u32();
        need(n);
        std::string s = b_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    void tensor_into(Tensor& dst, const std::string& expected_name) {
        const std::string name = str();
        if (name != expected_name)
            throw DataError("checkpoint " + path_ + ": expected tensor '" + expected_name +
                            "', found '" + name + "'");
        const uint32_t rank = u32();
        std::vector<int> shape(rank);
        for (auto& d : shape) d = static_cast<int>(u32());
        if (shape != dst.shape())
            throw DataError("checkpoint " + path_ + ": tensor '" + name + "' shape mismatch");
        const size_t bytes = dst.numel() * sizeof(float);
        need(bytes);
        std::memcpy(dst.data(), b_.data() + pos_, bytes);
        pos_ += bytes;
    }
    size_t pos() const { return pos_; }

private:
    void need(size_t n) const {
        if (pos_ + n > b_.size())
            throw DataError("checkpoint " + path_ + ": truncated or corrupt file");
    }
    const std::string& b_;
    std::string path_;
    size_t pos_ = 0;
};

} // namespace

void save_checkpoint(SegModel& model, const std::string& path) {
    std::string buf;
    buf.append(kMagic, 4);
    put_u32(buf, kVersion);
    const ModelConfig& cfg = model.config();
    put_str(buf, cfg.architecture);
    put_f32(buf, cfg.dropout);
    put_str(buf, kChannelTag);
    put_u32(buf, static_cast<uint32_t>(cfg.base_width));
    put_u32(buf, static_cast<uint32_t>(cfg.feature_channels));
    put_f32(buf, cfg.width_mult);
    put_u64(buf, cfg.init_seed);

    auto params = model.parameters();
    auto buffers = model.buffers();
    put_u32(buf, static_cast<uint32_t>(params.size()));
    for (auto& p : params) put_tensor(buf, p.name, *p.value);
    put_u32(buf, static_cast<uint32_t>(buffers.size()));
    for (auto& b : buffers) put_tensor(buf, b.name, *b.value);

    put_u64(buf, fnv1a64(buf.data(), buf.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw DataError("write failed for checkpoint: " + path);
}

std::unique_ptr<SegModel> load_checkpoint(const std::string& path,
                                          const std::string& expected_architecture) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string bytes = ss.str();

    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw DataError("checkpoint " + path + ": bad magic (not a checkpoint file)");
    // Integrity is validated before any model is constructed.
    uint64_t stored_hash;
    std::memcpy(&stored_hash, bytes.data() + bytes.size() - 8, 8);
    const uint64_t computed = fnv1a64(bytes.data(), bytes.size() - 8);
    if (stored_hash != computed)
        throw DataError("checkpoint " + path + ": integrity check failed (truncated or corrupt)");

    Reader r(bytes, path);
    r.u32(); // magic, already checked
    const uint32_t version = r.u32();
    if (version != kVersion)
        throw DataError("checkpoint " + path + ": unsupported format version " +
                        std::to_string(version));

    ModelConfig cfg;
    cfg.architecture = r.str();
    cfg.dropout = r.f32();
    const std::string tag = r.str();
    if (tag != kChannelTag)
        throw DataError("checkpoint " + path + ": unexpected channel convention '" + tag + "'");
    cfg.base_width = static_cast<int>(r.u32());
    cfg.feature_channels = static_cast<int>(r.u32());
    cfg.width_mult = r.f32();
    cfg.init_seed = r.u64();

    if (!expected_architecture.empty() && cfg.architecture != expected_architecture)
        throw DataError("checkpoint " + path + ": architecture mismatch: file has '" +
                        cfg.architecture + "', caller expects '" + expected_architecture + "'");

    auto model = make_model(cfg);
    auto params = model->parameters();
    auto buffers = model->buffers();
    const uint32_t n_params = r.u32();
    if (n_params != params.size())
        throw DataError("checkpoint " + path + ": parameter count mismatch");
    for (auto& p : params) r.tensor_into(*p.value, p.name);
    const uint32_t n_buffers = r.u32();
    if (n_buffers != buffers.size())
        throw DataError("checkpoint " + path + ": buffer count mismatch");
    for (auto& b : buffers) r.tensor_into(*b.value, b.name);
    return model;
}

} // namespace sfda::nn
