#include "lvc/io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "lvc/rng.hpp"

namespace lvc {

namespace {

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
    std::string buf;
    size_t pos = 0;
    const std::filesystem::path& path;

    explicit Reader(const std::filesystem::path& p) : path(p) {
        std::ifstream in(p, std::ios::binary);
        if (!in) throw std::runtime_error("cannot open " + p.string());
        std::ostringstream ss;
        ss << in.rdbuf();
        buf = ss.str();
    }
    void need(size_t n, const char* what) {
        if (pos + n > buf.size())
            throw std::runtime_error(std::string("truncated CVGT file (") + what + "): " + path.string());
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64(const char* what) {
        need(8, what);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<uint8_t>(buf[pos++]);
    }
};

struct Header {
    Shape shape;
    uint8_t dtype;
    size_t payload_off;
    size_t payload_len;
};

Header read_header(Reader& r) {
    r.need(4, "magic");
    if (std::memcmp(r.buf.data(), "CVGT", 4) != 0)
        throw std::runtime_error("not a CVGT file: " + r.path.string());
    r.pos = 4;
    uint32_t version = r.u32("version");
    if (version != 1)
        throw std::runtime_error("unsupported CVGT version " + std::to_string(version) + ": " + r.path.string());
    uint32_t rank = r.u32("rank");
    if (rank > 16) throw std::runtime_error("implausible CVGT rank: " + r.path.string());
    Header h;
    for (uint32_t i = 0; i < rank; ++i) h.shape.push_back(static_cast<size_t>(r.u64("dims")));
    h.dtype = r.u8("dtype");
    if (h.dtype != kDtypeF32 && h.dtype != kDtypeF64)
        throw std::runtime_error("unknown CVGT dtype " + std::to_string(h.dtype) + ": " + r.path.string());
    h.payload_len = r.u32("payload length");
    h.payload_off = r.pos;
    size_t esz = h.dtype == kDtypeF32 ? 4 : 8;
    if (h.payload_len != esz * shape_numel(h.shape) || r.pos + h.payload_len != r.buf.size())
        throw std::runtime_error("payload length mismatch: " + r.path.string());
    return h;
}

template <typename T>
void write_impl(const std::filesystem::path& path, const Shape& shape, const std::vector<T>& data,
                uint8_t dtype) {
    if (data.size() != shape_numel(shape))
        throw std::runtime_error("write_tensor: data does not match shape " + shape_str(shape));
    std::string out;
    out.reserve(21 + shape.size() * 8 + data.size() * sizeof(T));
    out += "CVGT";
    put_u32(out, 1);
    put_u32(out, static_cast<uint32_t>(shape.size()));
    for (size_t d : shape) put_u64(out, static_cast<uint64_t>(d));
    out.push_back(static_cast<char>(dtype));
    put_u32(out, static_cast<uint32_t>(data.size() * sizeof(T)));
    // host is little-endian for every target we build on; serialize per byte
    // anyway so the container stays platform-independent.
    for (T x : data) {
        if constexpr (sizeof(T) == 4) {
            uint32_t bits;
            std::memcpy(&bits, &x, 4);
            put_u32(out, bits);
        } else {
            uint64_t bits;
            std::memcpy(&bits, &x, 8);
            put_u64(out, bits);
        }
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("short write: " + path.string());
}

}  // namespace

void write_tensor_f32(const std::filesystem::path& path, const Shape& shape, const std::vector<float>& data) {
    write_impl(path, shape, data, kDtypeF32);
}
void write_tensor_f64(const std::filesystem::path& path, const Shape& shape, const std::vector<double>& data) {
    write_impl(path, shape, data, kDtypeF64);
}

uint8_t read_tensor_dtype(const std::filesystem::path& path) {
    Reader r(path);
    return read_header(r).dtype;
}

Array<float> read_tensor_f32(const std::filesystem::path& path) {
    Reader r(path);
    Header h = read_header(r);
    Array<float> out;
    out.shape = h.shape;
    out.data.resize(shape_numel(h.shape));
    const unsigned char* p = reinterpret_cast<const unsigned char*>(r.buf.data()) + h.payload_off;
    for (size_t i = 0; i < out.data.size(); ++i) {
        if (h.dtype == kDtypeF32) {
            uint32_t bits = 0;
            for (int b = 0; b < 4; ++b) bits |= static_cast<uint32_t>(p[i * 4 + b]) << (8 * b);
            float v;
            std::memcpy(&v, &bits, 4);
            out.data[i] = v;
        } else {
            uint64_t bits = 0;
            for (int b = 0; b < 8; ++b) bits |= static_cast<uint64_t>(p[i * 8 + b]) << (8 * b);
            double v;
            std::memcpy(&v, &bits, 8);
            out.data[i] = static_cast<float>(v);
        }
    }
    return out;
}

Array<double> read_tensor_f64(const std::filesystem::path& path) {
    Reader r(path);
    Header h = read_header(r);
    Array<double> out;
    out.shape = h.shape;
    out.data.resize(shape_numel(h.shape));
    const unsigned char* p = reinterpret_cast<const unsigned char*>(r.buf.data()) + h.payload_off;
    for (size_t i = 0; i < out.data.size(); ++i) {
        if (h.dtype == kDtypeF64) {
            uint64_t bits = 0;
            for (int b = 0; b < 8; ++b) bits |= static_cast<uint64_t>(p[i * 8 + b]) << (8 * b);
            double v;
            std::memcpy(&v, &bits, 8);
            out.data[i] = v;
        } else {
            uint32_t bits = 0;
            for (int b = 0; b < 4; ++b) bits |= static_cast<uint32_t>(p[i * 4 + b]) << (8 * b);
            float v;
            std::memcpy(&v, &bits, 4);
            out.data[i] = static_cast<double>(v);
        }
    }
    return out;
}

// ---- KvFile -----------------------------------------------------------------

void KvFile::set(const std::string& key, const std::string& value) {
    auto it = index_.find(key);
    if (it != index_.end()) {
        lines_[it->second].second = value;
    } else {
        index_[key] = lines_.size();
        lines_.emplace_back(key, value);
    }
}
void KvFile::set_u64(const std::string& key, uint64_t value) { set(key, std::to_string(value)); }
void KvFile::set_f64(const std::string& key, double value) {
    std::ostringstream os;
    os.precision(17);
    os << value;
    set(key, os.str());
}
bool KvFile::has(const std::string& key) const { return index_.count(key) != 0; }
const std::string& KvFile::get(const std::string& key) const {
    auto it = index_.find(key);
    if (it == index_.end()) throw std::runtime_error("manifest: missing key " + key);
    return lines_[it->second].second;
}
uint64_t KvFile::get_u64(const std::string& key) const { return std::stoull(get(key)); }
double KvFile::get_f64(const std::string& key) const { return std::stod(get(key)); }

std::string KvFile::to_string() const {
    std::string out;
    for (const auto& [k, v] : lines_) {
        out += k;
        out += '=';
        out += v;
        out += '\n';
    }
    return out;
}

void KvFile::save(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << to_string();
    if (!f) throw std::runtime_error("short write: " + path.string());
}

KvFile KvFile::load(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    KvFile kv;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw std::runtime_error("malformed line in " + path.string() + ": " + line);
        kv.set(line.substr(0, eq), line.substr(eq + 1));
    }
    return kv;
}

// ---- RunConfig ----------------------------------------------------------------

void RunConfig::add_default(const std::string& key, const std::string& value) {
    index_[key] = lines_.size();
    lines_.emplace_back(key, value);
}

RunConfig::RunConfig() {
    // world
    add_default("world.frames", "8");
    add_default("world.height", "16");
    add_default("world.width", "16");
    add_default("world.channels", "4");
    add_default("world.fps", "4");
    add_default("world.shapes", "6");
    // diffusion schedule
    add_default("sched.steps", "50");
    add_default("sched.beta_min", "0.002");
    add_default("sched.beta_max", "0.18");
    add_default("sched.sampler", "deterministic");
    // generator
    add_default("gen.width", "32");
    add_default("gen.layers", "3");
    add_default("gen.heads", "4");
    add_default("gen.mlp_ratio", "2");
    add_default("gen.self_attention", "axial");
    add_default("gen.train_iters", "2400");
    add_default("gen.batch", "8");
    add_default("gen.lr", "0.002");
    add_default("gen.weight_decay", "0.01");
    // classifier
    add_default("clf.embed_dim", "128");
    add_default("clf.heads", "4");
    add_default("clf.backbone_dim", "256");
    add_default("clf.backbone_seed", "42");
    add_default("clf.stride", "5");
    add_default("clf.epochs", "4");
    add_default("clf.batch", "16");
    add_default("clf.lr", "0.001");
    add_default("clf.weight_decay", "0.01");
    add_default("clf.dual", "1");
    add_default("clf.holdout", "0.15");
    add_default("clf.mask_augment", "1");
    add_default("clf.time_jitter", "2");
    add_default("clf.invert_fp_iters", "1");
    // guidance
    add_default("guid.mode", "first");   // first | all | none
    add_default("guid.count", "8");
    add_default("guid.eta", "0.5");
    add_default("guid.normalize", "1");
    add_default("guid.inner_iters", "1");
    // autoregressive generation
    add_default("ar.context_frames", "2");
    // evaluation
    add_default("eval.seeds", "200");
    add_default("eval.threads", "1");
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
    RunConfig cfg;
    KvFile kv = KvFile::load(path);
    for (const auto& [k, v] : kv.lines()) cfg.apply_line(k, v);
    return cfg;
}

void RunConfig::apply_line(const std::string& key, const std::string& value) {
    auto it = index_.find(key);
    if (it == index_.end()) throw std::runtime_error("unknown config key: " + key);
    lines_[it->second].second = value;
}

void RunConfig::set(const std::string& key, const std::string& value) { apply_line(key, value); }

const std::string& RunConfig::get(const std::string& key) const {
    auto it = index_.find(key);
    if (it == index_.end()) throw std::runtime_error("unknown config key: " + key);
    return lines_[it->second].second;
}
uint64_t RunConfig::get_u64(const std::string& key) const { return std::stoull(get(key)); }
int64_t RunConfig::get_i64(const std::string& key) const { return std::stoll(get(key)); }
double RunConfig::get_f64(const std::string& key) const { return std::stod(get(key)); }
bool RunConfig::get_bool(const std::string& key) const {
    const std::string& v = get(key);
    return v == "1" || v == "true" || v == "on";
}

KvFile RunConfig::echo(const std::string& prefix) const {
    KvFile kv;
    for (const auto& [k, v] : lines_) kv.set(prefix + k, v);
    return kv;
}

// ---- checksums -----------------------------------------------------------------

uint64_t checksum_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 15];
    while (f) {
        f.read(buf, sizeof(buf));
        std::streamsize n = f.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

uint64_t checksum_tree(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : files) {
        std::string rel = std::filesystem::relative(p, dir).generic_string();
        for (char c : rel) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ULL;
        }
        uint64_t fh = checksum_file(p);
        for (int i = 0; i < 8; ++i) {
            h ^= (fh >> (8 * i)) & 0xff;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

}  // namespace lvc
