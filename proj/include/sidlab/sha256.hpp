#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace sidlab {

// Incremental SHA-256 (FIPS 180-4). Used for corpus digests.
class Sha256 {
public:
    Sha256() { reset(); }

    void reset();
    void update(const void* data, size_t len);
    // Finalizes and returns the lowercase hex digest. The object must be
    // reset() before reuse.
    std::string hex_digest();

private:
    void process_block(const uint8_t* block);

    uint32_t h_[8];
    uint8_t buffer_[64];
    size_t buffer_len_ = 0;
    uint64_t total_len_ = 0;
};

std::string sha256_hex(const void* data, size_t len);

}  // namespace sidlab
