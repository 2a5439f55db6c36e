#include "dyco/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace dyco {

namespace {

constexpr char kMagic[4] = {'D', 'Y', 'C', '1'};

void put_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
void put_str(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
void put_f64s(std::ostream& os, const std::vector<double>& v) {
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
}

uint32_t get_u32(std::istream& is) {
    uint32_t v;
    is.read(reinterpret_cast<char*>(&v), 4);
    if (!is) throw DataError("checkpoint: truncated file");
    return v;
}
uint64_t get_u64(std::istream& is) {
    uint64_t v;
    is.read(reinterpret_cast<char*>(&v), 8);
    if (!is) throw DataError("checkpoint: truncated file");
    return v;
}
std::string get_str(std::istream& is) {
    uint32_t n = get_u32(is);
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw DataError("checkpoint: truncated string");
    return s;
}
void get_f64s(std::istream& is, std::vector<double>& v, uint64_t n) {
    v.resize(n);
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * 8));
    if (!is) throw DataError("checkpoint: truncated values");
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("checkpoint: cannot open " + path + " for writing");
    os.write(kMagic, 4);
    put_u32(os, static_cast<uint32_t>(ckpt.meta.size()));
    for (const auto& [k, v] : ckpt.meta) {
        put_str(os, k);
        put_str(os, v);
    }
    put_u32(os, static_cast<uint32_t>(ckpt.params.size()));
    for (const auto& p : ckpt.params) {
        put_str(os, p.name);
        put_u32(os, static_cast<uint32_t>(p.value.shape.size()));
        for (int d : p.value.shape) put_u64(os, static_cast<uint64_t>(d));
        put_f64s(os, *p.value.data);
        bool opt = !p.m.empty();
        os.put(opt ? 1 : 0);
        if (opt) {
            put_u64(os, static_cast<uint64_t>(p.step));
            put_f64s(os, p.m);
            put_f64s(os, p.v);
        }
    }
    if (!os) throw DataError("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("checkpoint: bad magic in " + path);
    Checkpoint ckpt;
    uint32_t nmeta = get_u32(is);
    for (uint32_t i = 0; i < nmeta; ++i) {
        std::string k = get_str(is);
        ckpt.meta[k] = get_str(is);
    }
    uint32_t nparams = get_u32(is);
    for (uint32_t i = 0; i < nparams; ++i) {
        ad::Parameter p;
        p.name = get_str(is);
        uint32_t rank = get_u32(is);
        ad::Shape shape(rank);
        uint64_t total = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            shape[d] = static_cast<int>(get_u64(is));
            total *= static_cast<uint64_t>(shape[d]);
        }
        std::vector<double> vals;
        get_f64s(is, vals, total);
        p.value = ad::Tensor::from(shape, std::move(vals));
        int opt = is.get();
        if (opt == 1) {
            p.step = static_cast<long>(get_u64(is));
            get_f64s(is, p.m, total);
            get_f64s(is, p.v, total);
        } else if (opt != 0) {
            throw DataError("checkpoint: corrupt optimizer flag");
        }
        ckpt.params.push_back(std::move(p));
    }
    return ckpt;
}

}  // namespace dyco
