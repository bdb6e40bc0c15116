#include "sfda/pseudolabel.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "sfda/error.hpp"

namespace sfda {

PseudoLabelMap threshold_pseudolabels(const Tensor& probs, float gamma) {
    if (!(gamma > 0.0f && gamma < 1.0f))
        throw InvalidArgument("threshold_pseudolabels: gamma must be in (0,1), got " +
                              std::to_string(gamma));
    PseudoLabelMap out;
    out.gamma = gamma;
    out.labels = Tensor(probs.shape());
    for (size_t i = 0; i < probs.numel(); ++i)
        out.labels[i] = probs[i] >= gamma ? 1.0f : 0.0f;
    return out;
}

UncertaintyMap uncertainty_from_passes(const std::vector<Tensor>& pass_probs) {
    if (pass_probs.size() < 2)
        throw InvalidArgument("uncertainty_from_passes: need K >= 2 passes, got " +
                              std::to_string(pass_probs.size()));
    const Tensor& first = pass_probs.front();
    for (const auto& p : pass_probs) require_same_shape(p, first, "uncertainty_from_passes");

    const double k = static_cast<double>(pass_probs.size());
    UncertaintyMap out;
    out.passes = static_cast<int>(pass_probs.size());
    out.mean_probs = Tensor(first.shape());
    out.u = Tensor(first.shape());
    for (size_t i = 0; i < first.numel(); ++i) {
        double mean = 0.0;
        for (const auto& p : pass_probs) mean += p[i];
        mean /= k;
        double var = 0.0;
        for (const auto& p : pass_probs) {
            const double d = p[i] - mean;
            var += d * d;
        }
        var /= k; // population variance, matching the 1/K formula
        out.mean_probs[i] = static_cast<float>(mean);
        out.u[i] = static_cast<float>(std::sqrt(var));
    }
    return out;
}

UncertaintyMap mc_dropout_uncertainty(const nn::SegModel& model, const Tensor& batch, int k,
                                      Rng& rng) {
    if (k < 2) throw InvalidArgument("mc_dropout_uncertainty: K must be >= 2");
    std::vector<Tensor> passes;
    passes.reserve(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) {
        nn::ForwardOptions opts;
        opts.stochastic = true;
        opts.record = false;
        opts.rng = &rng;
        passes.push_back(model.forward(batch, opts).probs);
    }
    return uncertainty_from_passes(passes);
}

Tensor uncertainty_mask(const Tensor& u, float eta) {
    if (!(eta > 0.0f)) throw InvalidArgument("uncertainty_mask: eta must be > 0");
    Tensor mask(u.shape());
    for (size_t i = 0; i < u.numel(); ++i) mask[i] = u[i] < eta ? 1.0f : 0.0f;
    return mask;
}

namespace {

constexpr char kMagic[4] = {'S', 'F', 'P', 'L'};
constexpr uint32_t kVersion = 1;

void put_tensor(std::ofstream& out, const Tensor& t) {
    const uint32_t rank = static_cast<uint32_t>(t.rank());
    out.write(reinterpret_cast<const char*>(&rank), 4);
    for (int d : t.shape()) {
        const uint32_t dd = static_cast<uint32_t>(d);
        out.write(reinterpret_cast<const char*>(&dd), 4);
    }
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.numel() * sizeof(float)));
}

Tensor get_tensor(std::ifstream& in, const std::string& path) {
    uint32_t rank = 0;
    in.read(reinterpret_cast<char*>(&rank), 4);
    if (!in || rank == 0 || rank > 4) throw DataError("pseudolabel cache corrupt: " + path);
    std::vector<int> shape(rank);
    for (auto& d : shape) {
        uint32_t dd = 0;
        in.read(reinterpret_cast<char*>(&dd), 4);
        d = static_cast<int>(dd);
    }
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!in) throw DataError("pseudolabel cache corrupt: " + path);
    return t;
}

std::string record_path(const std::string& dir, const std::string& id) {
    return (std::filesystem::path(dir) / (id + ".plc")).string();
}

} // namespace

void save_pseudolabel_record(const std::string& dir, const std::string& id,
                             const PseudoLabelRecord& rec) {
    std::filesystem::create_directories(dir);
    const std::string path = record_path(dir, id);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write pseudolabel cache: " + path);
    out.write(kMagic, 4);
    out.write(reinterpret_cast<const char*>(&kVersion), 4);
    out.write(reinterpret_cast<const char*>(&rec.gamma), 4);
    out.write(reinterpret_cast<const char*>(&rec.eta), 4);
    const uint32_t k = static_cast<uint32_t>(rec.passes);
    out.write(reinterpret_cast<const char*>(&k), 4);
    put_tensor(out, rec.labels);
    put_tensor(out, rec.u);
    put_tensor(out, rec.mean_probs);
    if (!out) throw DataError("write failed for pseudolabel cache: " + path);
}

std::optional<PseudoLabelRecord> load_pseudolabel_record(const std::string& dir,
                                                         const std::string& id) {
    const std::string path = record_path(dir, id);
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    char magic[4];
    in.read(magic, 4);
    uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0 || version != kVersion)
        throw DataError("pseudolabel cache corrupt: " + path);
    PseudoLabelRecord rec;
    in.read(reinterpret_cast<char*>(&rec.gamma), 4);
    in.read(reinterpret_cast<char*>(&rec.eta), 4);
    uint32_t k = 0;
    in.read(reinterpret_cast<char*>(&k), 4);
    rec.passes = static_cast<int>(k);
    rec.labels = get_tensor(in, path);
    rec.u = get_tensor(in, path);
    rec.mean_probs = get_tensor(in, path);
    return rec;
}

} // namespace sfda
