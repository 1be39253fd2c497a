#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace adasmtl {

/// 64-bit FNV-1a; used for config and content fingerprints, not security.
class Fnv1a {
public:
    void update(std::string_view bytes) noexcept {
        for (unsigned char c : bytes) {
            state_ ^= c;
            state_ *= 1099511628211ULL;
        }
    }
    std::uint64_t digest() const noexcept { return state_; }
    std::string hex() const;

private:
    std::uint64_t state_ = 1469598103934665603ULL;
};

std::string hash_hex(std::string_view bytes);
std::string file_hash_hex(const std::filesystem::path& path);

}  // namespace adasmtl
