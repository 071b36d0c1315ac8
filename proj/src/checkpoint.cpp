#include <cstring>
#include <fstream>
#include <sstream>

#include "reflexsplit/common.hpp"
#include "reflexsplit/model.hpp"

namespace reflexsplit {

namespace {

constexpr char kMagic[8] = {'R', 'X', 'S', 'P', 'L', 'I', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_i64(std::ostream& out, std::int64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_string(std::ostream& out, const std::string& s) {
    write_u64(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
void write_tensor(std::ostream& out, const Tensor& t) {
    write_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) write_u32(out, static_cast<std::uint32_t>(d));
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * static_cast<std::int64_t>(sizeof(double))));
}

std::uint32_t read_u32(std::istream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
std::uint64_t read_u64(std::istream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
std::int64_t read_i64(std::istream& in) {
    std::int64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
std::string read_string(std::istream& in) {
    const std::uint64_t len = read_u64(in);
    std::string s(len, '\0');
    in.read(s.data(), static_cast<std::streamsize>(len));
    return s;
}
Tensor read_tensor(std::istream& in) {
    const std::uint32_t rank = read_u32(in);
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(read_u32(in));
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * static_cast<std::int64_t>(sizeof(double))));
    return t;
}

void read_header(std::istream& in, const std::string& path) {
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) {
        throw DataError("not a checkpoint file: " + path);
    }
    const std::uint32_t version = read_u32(in);
    if (version != kVersion) {
        throw DataError("unsupported checkpoint version " + std::to_string(version) + " in " +
                        path);
    }
}

} // namespace

void save_checkpoint(const std::string& path, const ReflexSplitNet& net, int epoch,
                     const AdamStateView* adam) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out.write(kMagic, 8);
    write_u32(out, kVersion);
    write_u64(out, net.params().structural_hash());
    std::ostringstream cfg;
    write_config(net.config(), cfg);
    write_string(out, cfg.str());
    write_i64(out, epoch);
    write_u64(out, net.config().seed);

    const auto& items = net.params().items();
    write_u64(out, items.size());
    for (const auto& p : items) {
        write_string(out, p.name);
        out.put(p.trainable ? 1 : 0);
        write_tensor(out, p.var->value);
    }
    out.put(adam ? 1 : 0);
    if (adam) {
        write_i64(out, adam->step);
        write_u64(out, adam->moments.size());
        for (const auto& [m, v] : adam->moments) {
            write_tensor(out, *m);
            write_tensor(out, *v);
        }
    }
    if (!out) throw DataError("short write while saving checkpoint: " + path);
}

CheckpointMeta read_checkpoint_meta(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    read_header(in, path);
    CheckpointMeta meta;
    meta.structural_hash = read_u64(in);
    std::istringstream cfg(read_string(in));
    meta.config = parse_config(cfg, path + "#config");
    meta.epoch = static_cast<int>(read_i64(in));
    return meta;
}

int load_checkpoint(const std::string& path, ReflexSplitNet& net,
                    std::vector<std::pair<Tensor, Tensor>>* adam_moments,
                    std::int64_t* adam_step) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    read_header(in, path);
    const std::uint64_t stored_hash = read_u64(in);
    if (stored_hash != net.params().structural_hash()) {
        throw DataError("checkpoint structural hash mismatch: " + path +
                        " was written by an incompatible configuration");
    }
    (void)read_string(in); // config snapshot, already reflected in the hash
    const int epoch = static_cast<int>(read_i64(in));
    (void)read_u64(in); // seed snapshot

    const std::uint64_t count = read_u64(in);
    auto& items = net.params().items();
    if (count != items.size()) throw DataError("checkpoint parameter count mismatch: " + path);
    for (auto& p : items) {
        const std::string name = read_string(in);
        const char trainable = static_cast<char>(in.get());
        Tensor t = read_tensor(in);
        if (name != p.name || (trainable != 0) != p.trainable || !t.same_shape(p.var->value)) {
            throw DataError("checkpoint entry '" + name + "' does not match parameter '" + p.name +
                            "'");
        }
        p.var->value = std::move(t);
    }
    const char has_adam = static_cast<char>(in.get());
    if (has_adam && adam_moments) {
        const std::int64_t step = read_i64(in);
        if (adam_step) *adam_step = step;
        const std::uint64_t n = read_u64(in);
        adam_moments->clear();
        for (std::uint64_t i = 0; i < n; ++i) {
            Tensor m = read_tensor(in);
            Tensor v = read_tensor(in);
            adam_moments->emplace_back(std::move(m), std::move(v));
        }
    }
    if (!in) throw DataError("truncated checkpoint: " + path);
    return epoch;
}

} // namespace reflexsplit
