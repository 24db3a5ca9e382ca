// SPDX-License-Identifier: Apache-2.0
#include "latentplan/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace latentplan {

namespace {
static_assert(sizeof(double) == 8, "f64 payload requires 8-byte double");
static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian; big-endian hosts unsupported");

void put_u32(std::string& buf, std::uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    buf.append(b, 4);
}
void put_u64(std::string& buf, std::uint64_t v) {
    char b[8];
    std::memcpy(b, &v, 8);
    buf.append(b, 8);
}
void put_str(std::string& buf, const std::string& s) {
    put_u32(buf, static_cast<std::uint32_t>(s.size()));
    buf.append(s);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;
    explicit Reader(const std::string& b) : buf(b) {}
    void need(std::size_t n, const char* what) {
        if (pos + n > buf.size()) throw IoError(std::string("checkpoint truncated at ") + what);
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v;
        std::memcpy(&v, buf.data() + pos, 4);
        pos += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v;
        std::memcpy(&v, buf.data() + pos, 8);
        pos += 8;
        return v;
    }
    std::string str(const char* what) {
        const std::uint32_t n = u32(what);
        need(n, what);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

std::string shape_text(const std::vector<std::size_t>& shape) {
    std::string s;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s;
}
} // namespace

void save_checkpoint(const std::string& path, const std::string& model,
                     const std::map<std::string, std::string>& metadata,
                     const NamedParams& params) {
    std::string buf;
    buf.append("LPCK", 4);
    put_u32(buf, kCheckpointVersion);
    put_str(buf, model);
    put_u32(buf, static_cast<std::uint32_t>(metadata.size()));
    for (const auto& [k, v] : metadata) {
        put_str(buf, k);
        put_str(buf, v);
    }
    put_u32(buf, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, t] : params) {
        put_str(buf, name);
        put_u32(buf, static_cast<std::uint32_t>(t.shape().size()));
        for (std::size_t d : t.shape()) put_u64(buf, d);
    }
    for (const auto& [name, t] : params) {
        const auto& v = t.value();
        buf.append(reinterpret_cast<const char*>(v.data()), v.size() * 8);
    }

    {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot write " + path);
        f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (!f) throw IoError("short write to " + path);
    }

    std::ostringstream man;
    man << "model " << model << "\n";
    man << "version " << kCheckpointVersion << "\n";
    man << "checksum " << hex64(fnv1a64(buf.data(), buf.size())) << "\n";
    for (const auto& [k, v] : metadata) man << "meta " << k << " " << v << "\n";
    for (const auto& [name, t] : params) man << "param " << name << " " << shape_text(t.shape()) << "\n";
    std::ofstream mf(path + ".manifest", std::ios::trunc);
    if (!mf) throw IoError("cannot write " + path + ".manifest");
    mf << man.str();
}

CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    Reader r(buf);
    r.need(4, "magic");
    if (buf.compare(0, 4, "LPCK") != 0) throw IoError(path + ": bad magic");
    r.pos = 4;
    const std::uint32_t ver = r.u32("version");
    if (ver != kCheckpointVersion)
        throw IoError(path + ": version " + std::to_string(ver) + ", expected " +
                      std::to_string(kCheckpointVersion));

    CheckpointData ck;
    ck.model = r.str("model name");
    const std::uint32_t nmeta = r.u32("metadata count");
    for (std::uint32_t i = 0; i < nmeta; ++i) {
        std::string k = r.str("metadata key");
        std::string v = r.str("metadata value");
        ck.metadata.emplace(std::move(k), std::move(v));
    }
    const std::uint32_t nparams = r.u32("param count");
    std::vector<std::vector<std::size_t>> shapes;
    std::vector<std::string> names;
    for (std::uint32_t i = 0; i < nparams; ++i) {
        names.push_back(r.str("param name"));
        const std::uint32_t nd = r.u32("ndim");
        std::vector<std::size_t> shape;
        for (std::uint32_t d = 0; d < nd; ++d) shape.push_back(static_cast<std::size_t>(r.u64("dim")));
        shapes.push_back(std::move(shape));
    }
    for (std::uint32_t i = 0; i < nparams; ++i) {
        std::size_t n = 1;
        for (std::size_t d : shapes[i]) n *= d;
        r.need(n * 8, "payload");
        std::vector<double> vals(n);
        std::memcpy(vals.data(), buf.data() + r.pos, n * 8);
        r.pos += n * 8;
        ck.params.emplace_back(names[i], Tensor::from(shapes[i], std::move(vals), false));
    }
    if (r.pos != buf.size()) throw IoError(path + ": trailing bytes");
    return ck;
}

void restore_params(const CheckpointData& ck, const NamedParams& params) {
    if (ck.params.size() != params.size())
        throw IoError("restore: checkpoint has " + std::to_string(ck.params.size()) +
                      " params, model has " + std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& [sname, sval] = ck.params[i];
        const auto& [dname, dval] = params[i];
        if (sname != dname) throw IoError("restore: param '" + sname + "' vs model '" + dname + "'");
        if (sval.shape() != dval.shape()) throw IoError("restore: shape mismatch for '" + sname + "'");
        dval.value() = sval.value();
    }
}

const std::string& require_meta(const CheckpointData& ck, const std::string& key) {
    auto it = ck.metadata.find(key);
    if (it == ck.metadata.end()) throw IoError("checkpoint '" + ck.model + "' missing metadata '" + key + "'");
    return it->second;
}

} // namespace latentplan
