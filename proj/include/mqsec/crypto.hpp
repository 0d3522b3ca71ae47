#pragma once

#include <openssl/evp.h>
#include <openssl/hmac.h>
#include <openssl/rand.h>
#include <openssl/sha.h>
#include <zlib.h>

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "mqsec/bytes.hpp"

namespace mqsec {

inline constexpr size_t kAesKeyLen = 16;   // AES-128
inline constexpr size_t kAesBlockLen = 16;
inline constexpr size_t kMacKeyLen = 20;   // HMAC-SHA1
inline constexpr size_t kMacLen = 20;
inline constexpr size_t kHashLen = 32;     // SHA-256

using Sha256Digest = std::array<uint8_t, kHashLen>;
using MacTag = std::array<uint8_t, kMacLen>;

inline Sha256Digest sha256(const uint8_t* data, size_t n) {
    Sha256Digest out;
    SHA256(data, n, out.data());
    return out;
}
inline Sha256Digest sha256(const Bytes& b) { return sha256(b.data(), b.size()); }
inline Sha256Digest sha256(const std::string& s) {
    return sha256(reinterpret_cast<const uint8_t*>(s.data()), s.size());
}

inline MacTag hmac_sha1(const uint8_t* key, size_t key_len, const uint8_t* data,
                        size_t n) {
    MacTag out;
    unsigned int out_len = 0;
    if (!HMAC(EVP_sha1(), key, static_cast<int>(key_len), data, n, out.data(), &out_len) ||
        out_len != kMacLen)
        throw std::runtime_error("HMAC-SHA1 failed");
    return out;
}
inline MacTag hmac_sha1(const Bytes& key, const Bytes& data) {
    return hmac_sha1(key.data(), key.size(), data.data(), data.size());
}

// Constant-time tag comparison.
inline bool mac_equal(const MacTag& a, const MacTag& b) {
    uint8_t diff = 0;
    for (size_t i = 0; i < kMacLen; ++i) diff |= a[i] ^ b[i];
    return diff == 0;
}

inline void random_bytes(uint8_t* out, size_t n) {
    if (RAND_bytes(out, static_cast<int>(n)) != 1)
        throw std::runtime_error("RAND_bytes failed");
}
inline Bytes random_bytes(size_t n) {
    Bytes b(n);
    random_bytes(b.data(), n);
    return b;
}

// AES-128-CBC with PKCS#7 padding.
inline Bytes aes128_cbc_encrypt(const uint8_t* key, const uint8_t* iv,
                                const Bytes& plaintext) {
    EVP_CIPHER_CTX* ctx = EVP_CIPHER_CTX_new();
    if (!ctx) throw std::runtime_error("EVP_CIPHER_CTX_new failed");
    Bytes out(plaintext.size() + kAesBlockLen);
    int len1 = 0, len2 = 0;
    bool ok = EVP_EncryptInit_ex(ctx, EVP_aes_128_cbc(), nullptr, key, iv) == 1 &&
              EVP_EncryptUpdate(ctx, out.data(), &len1, plaintext.data(),
                                static_cast<int>(plaintext.size())) == 1 &&
              EVP_EncryptFinal_ex(ctx, out.data() + len1, &len2) == 1;
    EVP_CIPHER_CTX_free(ctx);
    if (!ok) throw std::runtime_error("AES-128-CBC encryption failed");
    out.resize(static_cast<size_t>(len1 + len2));
    return out;
}

inline Bytes aes128_cbc_decrypt(const uint8_t* key, const uint8_t* iv,
                                const Bytes& ciphertext) {
    EVP_CIPHER_CTX* ctx = EVP_CIPHER_CTX_new();
    if (!ctx) throw std::runtime_error("EVP_CIPHER_CTX_new failed");
    Bytes out(ciphertext.size() + kAesBlockLen);
    int len1 = 0, len2 = 0;
    bool ok = EVP_DecryptInit_ex(ctx, EVP_aes_128_cbc(), nullptr, key, iv) == 1 &&
              EVP_DecryptUpdate(ctx, out.data(), &len1, ciphertext.data(),
                                static_cast<int>(ciphertext.size())) == 1 &&
              EVP_DecryptFinal_ex(ctx, out.data() + len1, &len2) == 1;
    EVP_CIPHER_CTX_free(ctx);
    if (!ok) throw std::runtime_error("AES-128-CBC decryption failed (bad padding or key)");
    out.resize(static_cast<size_t>(len1 + len2));
    return out;
}

inline uint32_t crc32_of(const uint8_t* data, size_t n) {
    return static_cast<uint32_t>(::crc32(0L, data, static_cast<uInt>(n)));
}
inline uint32_t crc32_of(const Bytes& b) { return crc32_of(b.data(), b.size()); }

}  // namespace mqsec
