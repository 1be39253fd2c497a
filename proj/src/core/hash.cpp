#include "hash.hpp"

#include <array>
#include <cstdio>
#include <fstream>

#include "error.hpp"

namespace adasmtl {

std::string Fnv1a::hex() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(state_));
    return buf;
}

std::string hash_hex(std::string_view bytes) {
    Fnv1a h;
    h.update(bytes);
    return h.hex();
}

std::string file_hash_hex(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open " + path.string() + " for hashing");
    Fnv1a h;
    std::array<char, 1 << 16> buf;
    while (in) {
        in.read(buf.data(), buf.size());
        h.update(std::string_view(buf.data(), static_cast<std::size_t>(in.gcount())));
    }
    return h.hex();
}

}  // namespace adasmtl
