#include "voxdiff/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "voxdiff/errors.hpp"

namespace voxdiff {

namespace {

constexpr char kMagic[4] = {'M', 'D', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<char*>(&v), 4); }
void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<char*>(&v), 8); }
void write_f64(std::ostream& os, double v) { os.write(reinterpret_cast<char*>(&v), 8); }

std::uint32_t read_u32(std::istream& is, const char* what) {
    std::uint32_t v;
    if (!is.read(reinterpret_cast<char*>(&v), 4)) throw DataError(std::string("checkpoint: truncated ") + what);
    return v;
}

std::uint64_t read_u64(std::istream& is, const char* what) {
    std::uint64_t v;
    if (!is.read(reinterpret_cast<char*>(&v), 8)) throw DataError(std::string("checkpoint: truncated ") + what);
    return v;
}

double read_f64(std::istream& is, const char* what) {
    double v;
    if (!is.read(reinterpret_cast<char*>(&v), 8)) throw DataError(std::string("checkpoint: truncated ") + what);
    return v;
}

std::string read_string(std::istream& is, const char* what) {
    const std::uint32_t len = read_u32(is, what);
    std::string s(len, '\0');
    if (!is.read(s.data(), len)) throw DataError(std::string("checkpoint: truncated ") + what);
    return s;
}

void write_string(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void write_tensors(std::ostream& os,
                   const std::vector<std::pair<std::string, nn::Tensor<float>>>& tensors) {
    write_u32(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        write_string(os, name);
        write_u32(os, static_cast<std::uint32_t>(t.shape.size()));
        for (int d : t.shape) write_u32(os, static_cast<std::uint32_t>(d));
        os.write(reinterpret_cast<const char*>(t.data.data()),
                 static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    }
}

std::vector<std::pair<std::string, nn::Tensor<float>>> read_tensors(std::istream& is) {
    const std::uint32_t count = read_u32(is, "tensor count");
    std::vector<std::pair<std::string, nn::Tensor<float>>> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = read_string(is, "tensor name");
        const std::uint32_t ndims = read_u32(is, "tensor rank");
        if (ndims > 8) throw DataError("checkpoint: implausible tensor rank");
        std::vector<int> shape(ndims);
        for (auto& d : shape) {
            d = static_cast<int>(read_u32(is, "tensor dim"));
            if (d <= 0) throw DataError("checkpoint: non-positive tensor dim");
        }
        nn::Tensor<float> t(shape);
        if (!is.read(reinterpret_cast<char*>(t.data.data()),
                     static_cast<std::streamsize>(t.data.size() * sizeof(float))))
            throw DataError("checkpoint: truncated tensor payload for " + name);
        out.emplace_back(std::move(name), std::move(t));
    }
    return out;
}

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointData& data) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("checkpoint: cannot open for write: " + path);
    os.write(kMagic, 4);
    write_u32(os, kVersion);
    write_string(os, data.config_text);
    write_u32(os, static_cast<std::uint32_t>(data.schedule.T));
    write_f64(os, data.schedule.s);
    for (const auto* arr :
         {&data.schedule.alpha_bar, &data.schedule.alpha, &data.schedule.beta, &data.schedule.sigma})
        for (double v : *arr) write_f64(os, v);
    write_tensors(os, data.params);
    write_tensors(os, data.adam_m);
    write_tensors(os, data.adam_v);
    write_u64(os, data.step);
    write_u64(os, data.seed);
    write_string(os, data.rng_state);
    if (!os) throw DataError("checkpoint: write failed: " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: cannot open: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("checkpoint: bad magic in " + path);
    const std::uint32_t version = read_u32(is, "version");
    if (version != kVersion)
        throw DataError("checkpoint: unsupported version " + std::to_string(version));
    CheckpointData data;
    data.config_text = read_string(is, "config text");
    data.schedule.T = static_cast<int>(read_u32(is, "schedule T"));
    data.schedule.s = read_f64(is, "schedule s");
    const std::size_t n = static_cast<std::size_t>(data.schedule.T) + 1;
    for (auto* arr :
         {&data.schedule.alpha_bar, &data.schedule.alpha, &data.schedule.beta, &data.schedule.sigma}) {
        arr->resize(n);
        for (auto& v : *arr) v = read_f64(is, "schedule array");
    }
    data.params = read_tensors(is);
    data.adam_m = read_tensors(is);
    data.adam_v = read_tensors(is);
    data.step = read_u64(is, "step counter");
    data.seed = read_u64(is, "seed");
    data.rng_state = read_string(is, "rng state");
    return data;
}

std::string config_text_from_map(const std::map<std::string, std::string>& kv) {
    std::ostringstream os;
    for (const auto& [k, v] : kv) os << k << "=" << v << "\n";
    return os.str();
}

std::map<std::string, std::string> config_map_from_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw DataError("checkpoint config: malformed line: " + line);
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

}  // namespace voxdiff
