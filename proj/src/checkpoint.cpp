#include "tbe/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "tbe/errors.hpp"

namespace tbe {

namespace {

static_assert(std::endian::native == std::endian::little,
              "weight files are little-endian; add byte swapping for this platform");

void put_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

bool get_u32(std::istream& in, std::uint32_t& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    return static_cast<bool>(in);
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
    if (v > 0xffffffffu) {
        throw IoError(std::string(what) + " too large for weight file");
    }
    return static_cast<std::uint32_t>(v);
}

}  // namespace

void write_weights(std::ostream& out, const NamedTensors& tensors) {
    out.write(kWeightMagic, 5);
    for (const auto& [name, t] : tensors) {
        put_u32(out, checked_u32(name.size(), "name"));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(out, checked_u32(t.rank(), "rank"));
        for (std::size_t d : t.shape()) {
            put_u32(out, checked_u32(d, "dimension"));
        }
        const auto data = t.data();
        out.write(reinterpret_cast<const char*>(data.data()),
                  static_cast<std::streamsize>(data.size() * sizeof(float)));
    }
    if (!out) {
        throw IoError("failed writing weight stream");
    }
}

NamedTensors read_weights(std::istream& in) {
    char magic[5] = {};
    in.read(magic, 5);
    if (!in || std::memcmp(magic, kWeightMagic, 5) != 0) {
        throw IoError("not a TBEW1 weight file");
    }
    NamedTensors result;
    std::uint32_t name_len = 0;
    while (get_u32(in, name_len)) {
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        std::uint32_t rank = 0;
        if (!in || !get_u32(in, rank) || rank == 0 || rank > 8) {
            throw IoError("corrupt record header in weight file");
        }
        Shape shape(rank);
        for (auto& d : shape) {
            std::uint32_t v = 0;
            if (!get_u32(in, v) || v == 0) {
                throw IoError("corrupt dimensions for '" + name + "'");
            }
            d = v;
        }
        std::vector<float> values(shape_numel(shape));
        in.read(reinterpret_cast<char*>(values.data()),
                static_cast<std::streamsize>(values.size() * sizeof(float)));
        if (!in) {
            throw IoError("truncated payload for '" + name + "'");
        }
        if (!result.emplace(name, Tensor(std::move(shape), std::move(values))).second) {
            throw IoError("duplicate record '" + name + "'");
        }
    }
    if (in.gcount() != 0) {
        throw IoError("trailing bytes in weight file");
    }
    return result;
}

void save_weights(const std::filesystem::path& path, const NamedTensors& tensors) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    write_weights(out, tensors);
}

NamedTensors load_weights(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("missing checkpoint " + path.string());
    }
    return read_weights(in);
}

}  // namespace tbe
