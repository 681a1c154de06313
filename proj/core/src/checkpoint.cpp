#include <cmarl/checkpoint.hpp>

#include <cstring>
#include <fstream>

namespace cmarl::diff {

namespace {
constexpr char kMagic[4] = {'C', 'M', 'T', 'N'};

template <typename T>
void write_pod(std::ofstream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw CheckpointError("checkpoint: truncated file");
    return v;
}
}  // namespace

void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, Tensor>>& items) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("checkpoint: cannot open for write: " + path);
    os.write(kMagic, 4);
    write_pod<std::uint32_t>(os, kCheckpointVersion);
    write_pod<std::uint64_t>(os, items.size());
    for (const auto& [name, t] : items) {
        write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<long>(name.size()));
        write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
        for (auto e : t.shape()) write_pod<std::uint64_t>(os, e);
        os.write(reinterpret_cast<const char*>(t.data().data()),
                 static_cast<long>(t.size() * sizeof(double)));
    }
    if (!os) throw CheckpointError("checkpoint: write failed: " + path);
}

std::map<std::string, Tensor> load_tensors(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("checkpoint: cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw CheckpointError("checkpoint: bad magic in " + path);
    const auto version = read_pod<std::uint32_t>(is);
    if (version != kCheckpointVersion)
        throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
    const auto count = read_pod<std::uint64_t>(is);
    std::map<std::string, Tensor> out;
    for (std::uint64_t k = 0; k < count; ++k) {
        const auto name_len = read_pod<std::uint32_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const auto rank = read_pod<std::uint32_t>(is);
        std::vector<std::size_t> shape(rank);
        std::size_t n = 1;
        for (auto& e : shape) {
            e = static_cast<std::size_t>(read_pod<std::uint64_t>(is));
            n *= e;
        }
        std::vector<double> data(n);
        is.read(reinterpret_cast<char*>(data.data()), static_cast<long>(n * sizeof(double)));
        if (!is) throw CheckpointError("checkpoint: truncated tensor " + name);
        out.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    return out;
}

}  // namespace cmarl::diff
