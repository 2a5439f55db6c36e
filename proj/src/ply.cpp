#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "dyco/scene.hpp"

namespace dyco::data {

namespace {

enum class PType { I8, U8, I16, U16, I32, U32, F32, F64 };

int type_size(PType t) {
    switch (t) {
        case PType::I8:
        case PType::U8: return 1;
        case PType::I16:
        case PType::U16: return 2;
        case PType::I32:
        case PType::U32:
        case PType::F32: return 4;
        case PType::F64: return 8;
    }
    return 0;
}

std::optional<PType> parse_type(const std::string& s) {
    if (s == "char" || s == "int8") return PType::I8;
    if (s == "uchar" || s == "uint8") return PType::U8;
    if (s == "short" || s == "int16") return PType::I16;
    if (s == "ushort" || s == "uint16") return PType::U16;
    if (s == "int" || s == "int32") return PType::I32;
    if (s == "uint" || s == "uint32") return PType::U32;
    if (s == "float" || s == "float32") return PType::F32;
    if (s == "double" || s == "float64") return PType::F64;
    return std::nullopt;
}

struct Property {
    std::string name;
    PType type = PType::F32;
    bool is_list = false;
    PType list_count_type = PType::U8;
};

struct Element {
    std::string name;
    long count = 0;
    std::vector<Property> props;
};

double read_binary_value(std::istream& is, PType t, const std::string& path) {
    unsigned char buf[8];
    is.read(reinterpret_cast<char*>(buf), type_size(t));
    if (!is)
        throw DataError("ply parse error in " + path + ": truncated data at byte offset " +
                        std::to_string(static_cast<long>(is.tellg())));
    switch (t) {
        case PType::I8: return static_cast<int8_t>(buf[0]);
        case PType::U8: return buf[0];
        case PType::I16: { int16_t v; std::memcpy(&v, buf, 2); return v; }
        case PType::U16: { uint16_t v; std::memcpy(&v, buf, 2); return v; }
        case PType::I32: { int32_t v; std::memcpy(&v, buf, 4); return v; }
        case PType::U32: { uint32_t v; std::memcpy(&v, buf, 4); return v; }
        case PType::F32: { float v; std::memcpy(&v, buf, 4); return v; }
        case PType::F64: { double v; std::memcpy(&v, buf, 8); return v; }
    }
    return 0;
}

}  // namespace

Scene load_ply(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path);

    auto fail = [&](int line, const std::string& msg) -> void {
        throw DataError("ply parse error in " + path + " at line " + std::to_string(line) + ": " + msg);
    };

    std::string line;
    int lineno = 0;
    auto next_line = [&]() {
        if (!std::getline(is, line)) fail(lineno, "unexpected end of header");
        if (!line.empty() && line.back() == '\r') line.pop_back();
        ++lineno;
    };

    next_line();
    if (line != "ply") fail(lineno, "missing 'ply' magic");
    bool binary = false;
    bool have_format = false;
    std::vector<Element> elements;
    while (true) {
        next_line();
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "comment" || tok == "obj_info" || tok.empty()) continue;
        if (tok == "format") {
            std::string fmt, ver;
            ls >> fmt >> ver;
            if (fmt == "ascii") binary = false;
            else if (fmt == "binary_little_endian") binary = true;
            else fail(lineno, "unsupported format '" + fmt + "'");
            have_format = true;
        } else if (tok == "element") {
            Element e;
            ls >> e.name >> e.count;
            if (!ls || e.count < 0) fail(lineno, "malformed element line");
            elements.push_back(e);
        } else if (tok == "property") {
            if (elements.empty()) fail(lineno, "property before any element");
            Property p;
            std::string t;
            ls >> t;
            if (t == "list") {
                std::string ct, vt;
                ls >> ct >> vt >> p.name;
                auto pc = parse_type(ct), pv = parse_type(vt);
                if (!pc || !pv || !ls) fail(lineno, "malformed list property");
                p.is_list = true;
                p.list_count_type = *pc;
                p.type = *pv;
            } else {
                auto pt = parse_type(t);
                if (!pt) fail(lineno, "unknown property type '" + t + "'");
                p.type = *pt;
                ls >> p.name;
                if (p.name.empty()) fail(lineno, "property without name");
            }
            elements.back().props.push_back(p);
        } else if (tok == "end_header") {
            break;
        } else {
            fail(lineno, "unknown header token '" + tok + "'");
        }
    }
    if (!have_format) fail(lineno, "missing format line");

    const Element* vertex = nullptr;
    for (const Element& e : elements)
        if (e.name == "vertex") { vertex = &e; break; }
    if (!vertex) fail(lineno, "no vertex element");
    if (vertex != &elements.front())
        fail(lineno, "vertex must be the first element");
    for (const Property& p : vertex->props)
        if (p.is_list) fail(lineno, "list property on vertex element is unsupported");

    auto prop_index = [&](std::initializer_list<const char*> names) -> int {
        for (const char* n : names)
            for (size_t i = 0; i < vertex->props.size(); ++i)
                if (vertex->props[i].name == n) return static_cast<int>(i);
        return -1;
    };
    int ix = prop_index({"x"}), iy = prop_index({"y"}), iz = prop_index({"z"});
    if (ix < 0 || iy < 0 || iz < 0)
        fail(lineno, "vertex element is missing x/y/z properties");
    int ir = prop_index({"red", "r"});
    int ig = prop_index({"green", "g"});
    int ib = prop_index({"blue", "b"});
    bool has_rgb = ir >= 0 && ig >= 0 && ib >= 0;
    int il = prop_index({"label", "sem_label", "class"});
    int ii = prop_index({"instance", "inst_label", "instance_id"});

    Scene s;
    s.id = path;
    s.feat_dim = has_rgb ? 3 : 0;
    s.coords.reserve(static_cast<size_t>(vertex->count) * 3);
    s.sem_labels.reserve(vertex->count);
    s.inst_labels.reserve(vertex->count);

    std::vector<double> row(vertex->props.size());
    for (long v = 0; v < vertex->count; ++v) {
        if (binary) {
            for (size_t p = 0; p < vertex->props.size(); ++p)
                row[p] = read_binary_value(is, vertex->props[p].type, path);
        } else {
            next_line();
            std::istringstream ls(line);
            for (size_t p = 0; p < vertex->props.size(); ++p)
                if (!(ls >> row[p]))
                    fail(lineno, "expected " + std::to_string(vertex->props.size()) +
                                     " values for vertex " + std::to_string(v));
        }
        s.coords.push_back(row[ix]);
        s.coords.push_back(row[iy]);
        s.coords.push_back(row[iz]);
        if (has_rgb) {
            auto norm = [&](int p) {
                double val = row[p];
                return vertex->props[p].type == PType::F32 || vertex->props[p].type == PType::F64
                           ? val
                           : val / 255.0;
            };
            s.feats.push_back(norm(ir));
            s.feats.push_back(norm(ig));
            s.feats.push_back(norm(ib));
        }
        s.sem_labels.push_back(il >= 0 ? static_cast<int>(row[il]) : -1);
        s.inst_labels.push_back(ii >= 0 ? static_cast<int>(row[ii]) : -1);
    }
    // trailing elements (faces etc.) are ignored
    return s;
}

namespace {

void write_vertex_header(std::ostream& os, const Scene& s, long n, bool binary, bool labels) {
    os << "ply\n";
    os << (binary ? "format binary_little_endian 1.0\n" : "format ascii 1.0\n");
    os << "element vertex " << n << "\n";
    os << "property float x\nproperty float y\nproperty float z\n";
    if (s.feat_dim >= 3 || !labels)
        os << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    if (labels) os << "property int label\nproperty int instance\n";
    os << "end_header\n";
}

unsigned char to_byte(double v) {
    double c = std::clamp(v, 0.0, 1.0) * 255.0;
    return static_cast<unsigned char>(std::lround(c));
}

}  // namespace

void save_ply(const Scene& s, const std::string& path, bool binary) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open " + path + " for writing");
    int n = s.num_points();
    bool rgb = s.feat_dim >= 3;
    write_vertex_header(os, s, n, binary, true);
    for (int i = 0; i < n; ++i) {
        float xyz[3] = {static_cast<float>(s.coords[3 * i]), static_cast<float>(s.coords[3 * i + 1]),
                        static_cast<float>(s.coords[3 * i + 2])};
        unsigned char col[3] = {0, 0, 0};
        if (rgb)
            for (int d = 0; d < 3; ++d) col[d] = to_byte(s.feats[static_cast<size_t>(i) * s.feat_dim + d]);
        int32_t lab = s.sem_labels[i], inst = s.inst_labels[i];
        if (binary) {
            os.write(reinterpret_cast<const char*>(xyz), 12);
            if (rgb) os.write(reinterpret_cast<const char*>(col), 3);
            os.write(reinterpret_cast<const char*>(&lab), 4);
            os.write(reinterpret_cast<const char*>(&inst), 4);
        } else {
            os << xyz[0] << " " << xyz[1] << " " << xyz[2];
            if (rgb) os << " " << int(col[0]) << " " << int(col[1]) << " " << int(col[2]);
            os << " " << lab << " " << inst << "\n";
        }
    }
    if (!os) throw DataError("write failed for " + path);
}

void save_colored_ply(const Scene& s, const std::vector<std::vector<int>>& masks,
                      const std::string& path) {
    int n = s.num_points();
    std::vector<std::array<unsigned char, 3>> colors(n, {128, 128, 128});
    for (size_t k = 0; k < masks.size(); ++k) {
        // deterministic color per instance rank
        std::mt19937_64 rng(0x9e3779b9ull + k);
        std::uniform_int_distribution<int> dist(40, 255);
        std::array<unsigned char, 3> c = {static_cast<unsigned char>(dist(rng)),
                                          static_cast<unsigned char>(dist(rng)),
                                          static_cast<unsigned char>(dist(rng))};
        for (int i : masks[k])
            if (i >= 0 && i < n) colors[i] = c;
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open " + path + " for writing");
    os << "ply\nformat binary_little_endian 1.0\n";
    os << "element vertex " << n << "\n";
    os << "property float x\nproperty float y\nproperty float z\n";
    os << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    os << "end_header\n";
    for (int i = 0; i < n; ++i) {
        float xyz[3] = {static_cast<float>(s.coords[3 * i]), static_cast<float>(s.coords[3 * i + 1]),
                        static_cast<float>(s.coords[3 * i + 2])};
        os.write(reinterpret_cast<const char*>(xyz), 12);
        os.write(reinterpret_cast<const char*>(colors[i].data()), 3);
    }
    if (!os) throw DataError("write failed for " + path);
}

}  // namespace dyco::data
