#include "fedlight/crypto.hpp"

#include <sodium.h>

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "fedlight/exactsum.hpp"

namespace fedlight {

namespace {

void ensure_sodium() {
  static const int rc = sodium_init();
  if (rc < 0) throw std::runtime_error("libsodium initialisation failed");
}

Bytes item_id_plaintext(ItemId item) {
  // 8-byte big-endian; the canonical encoding the privacy audit greps for
  Bytes b(8);
  std::uint64_t v = item;
  for (int i = 7; i >= 0; --i) {
    b[i] = static_cast<std::uint8_t>(v & 0xff);
    v >>= 8;
  }
  return b;
}

constexpr std::size_t kNonceLen = 24;
constexpr std::size_t kTagLen = 16;
constexpr std::size_t kKeyLen = 32;

}  // namespace

Nonce Nonce::counter(std::uint32_t sender, std::uint64_t seq) {
  Nonce n;
  for (int i = 0; i < 8; ++i) n.v[i] = static_cast<std::uint8_t>(seq >> (8 * i));
  for (int i = 0; i < 4; ++i) n.v[8 + i] = static_cast<std::uint8_t>(sender >> (8 * i));
  return n;
}

void AccessLog::record(std::string_view principal, std::string_view op, std::string_view detail) {
  ++counts_[{std::string(principal), std::string(op)}];
  if (verbose_) events_.push_back({std::string(principal), std::string(op), std::string(detail)});
}

void AccessLog::append(const AccessLog& other) {
  for (const auto& [key, n] : other.counts_) counts_[key] += n;
  if (verbose_)
    events_.insert(events_.end(), other.events_.begin(), other.events_.end());
}

std::size_t AccessLog::count(std::string_view principal, std::string_view op) const {
  auto it = counts_.find({std::string(principal), std::string(op)});
  return it == counts_.end() ? 0 : it->second;
}

std::size_t AccessLog::count_op_anywhere(std::string_view op) const {
  std::size_t n = 0;
  for (const auto& [key, c] : counts_)
    if (key.second == op) n += c;
  return n;
}

std::string AccessLog::to_text() const {
  std::ostringstream os;
  for (const auto& [key, n] : counts_)
    os << "count " << key.first << " " << key.second << " " << n << "\n";
  for (const auto& e : events_)
    os << "event " << e.principal << " " << e.op << (e.detail.empty() ? "" : " ") << e.detail
       << "\n";
  return os.str();
}

ItemTag CryptoProvider::prf_tag(const SharedKey& key, ItemId item, std::string_view principal,
                                AccessLog& log) {
  ensure_sodium();
  log.record(principal, "prf_tag", "item=" + std::to_string(item));
  const Bytes in = item_id_plaintext(item);
  ItemTag tag;
  crypto_generichash(tag.v.data(), tag.v.size(), in.data(), in.size(), key.v.data(),
                     key.v.size());
  return tag;
}

namespace {

class RealCrypto final : public CryptoProvider {
 public:
  std::string mode() const override { return "real"; }

  KeyPair gen_keypair(RngStream& rng, std::string_view principal, AccessLog& log) override {
    ensure_sodium();
    log.record(principal, "gen_keypair", "");
    std::array<std::uint8_t, kKeyLen> seed;
    rng.fill_bytes(seed.data(), seed.size());
    KeyPair kp;
    kp.public_key.resize(crypto_box_PUBLICKEYBYTES);
    kp.secret_key.resize(crypto_box_SECRETKEYBYTES);
    crypto_box_seed_keypair(kp.public_key.data(), kp.secret_key.data(), seed.data());
    return kp;
  }

  Bytes kem_encrypt(const Bytes& recipient_pub, const KeyPair& sender, const Nonce& nonce,
                    const Bytes& msg, std::string_view principal, AccessLog& log) override {
    ensure_sodium();
    log.record(principal, "kem_encrypt", "");
    Bytes out(kNonceLen + msg.size() + kTagLen);
    std::memcpy(out.data(), nonce.v.data(), kNonceLen);
    if (crypto_box_detached(out.data() + kNonceLen, out.data() + kNonceLen + msg.size(),
                            msg.data(), msg.size(), nonce.v.data(), recipient_pub.data(),
                            sender.secret_key.data()) != 0)
      throw std::runtime_error("kem_encrypt failed");
    return out;
  }

  Bytes kem_decrypt(const Bytes& sender_pub, const KeyPair& recipient, const Bytes& ct,
                    std::string_view principal, AccessLog& log) override {
    ensure_sodium();
    log.record(principal, "kem_decrypt", "");
    if (ct.size() < kNonceLen + kTagLen) throw std::runtime_error("tampered ciphertext: short");
    const std::size_t body = ct.size() - kNonceLen - kTagLen;
    Bytes out(body);
    if (crypto_box_open_detached(out.data(), ct.data() + kNonceLen,
                                 ct.data() + kNonceLen + body, body, ct.data(),
                                 sender_pub.data(), recipient.secret_key.data()) != 0)
      throw std::runtime_error("tampered ciphertext: box auth failure");
    return out;
  }

  Bytes sym_encrypt(const SharedKey& key, const Nonce& nonce, const Bytes& plaintext,
                    std::string_view principal, AccessLog& log) override {
    ensure_sodium();
    log.record(principal, "sym_encrypt", "");
    Bytes out(kNonceLen + plaintext.size() + kTagLen);
    std::memcpy(out.data(), nonce.v.data(), kNonceLen);
    crypto_secretbox_detached(out.data() + kNonceLen, out.data() + kNonceLen + plaintext.size(),
                              plaintext.data(), plaintext.size(), nonce.v.data(), key.v.data());
    return out;
  }

  Bytes sym_decrypt(const SharedKey& key, const Bytes& ct, std::string_view principal,
                    AccessLog& log) override {
    ensure_sodium();
    log.record(principal, "sym_decrypt", "");
    if (ct.size() < kNonceLen + kTagLen) throw std::runtime_error("tampered ciphertext: short");
    const std::size_t body = ct.size() - kNonceLen - kTagLen;
    Bytes out(body);
    if (crypto_secretbox_open_detached(out.data(), ct.data() + kNonceLen,
                                       ct.data() + kNonceLen + body, body, ct.data(),
                                       key.v.data()) != 0)
      throw std::runtime_error("tampered ciphertext: secretbox auth failure");
    return out;
  }
};

// Body in the clear; integrity tag is keyed BLAKE2b over (context | nonce | body).
class TransparentCrypto final : public CryptoProvider {
 public:
  std::string mode() const override { return "transparent"; }

  KeyPair gen_keypair(RngStream& rng, std::string_view principal, AccessLog& log) override {
    ensure_sodium();
    log.record(principal, "gen_keypair", "");
    KeyPair kp;
    kp.public_key.resize(kKeyLen);
    rng.fill_bytes(kp.public_key.data(), kKeyLen);
    kp.secret_key = kp.public_key;  // identity pair: enough to check "right recipient"
    return kp;
  }

  Bytes kem_encrypt(const Bytes& recipient_pub, const KeyPair& sender, const Nonce& nonce,
                    const Bytes& msg, std::string_view principal, AccessLog& log) override {
    log.record(principal, "kem_encrypt", "");
    return seal(mac_key(recipient_pub, sender.public_key), nonce, msg);
  }

  Bytes kem_decrypt(const Bytes& sender_pub, const KeyPair& recipient, const Bytes& ct,
                    std::string_view principal, AccessLog& log) override {
    log.record(principal, "kem_decrypt", "");
    return open(mac_key(recipient.public_key, sender_pub), ct);
  }

  Bytes sym_encrypt(const SharedKey& key, const Nonce& nonce, const Bytes& plaintext,
                    std::string_view principal, AccessLog& log) override {
    log.record(principal, "sym_encrypt", "");
    return seal(Bytes(key.v.begin(), key.v.end()), nonce, plaintext);
  }

  Bytes sym_decrypt(const SharedKey& key, const Bytes& ct, std::string_view principal,
                    AccessLog& log) override {
    log.record(principal, "sym_decrypt", "");
    return open(Bytes(key.v.begin(), key.v.end()), ct);
  }

 private:
  static Bytes mac_key(const Bytes& recipient_pub, const Bytes& sender_pub) {
    ensure_sodium();
    Bytes key(kKeyLen);
    Bytes in;
    in.insert(in.end(), recipient_pub.begin(), recipient_pub.end());
    in.insert(in.end(), sender_pub.begin(), sender_pub.end());
    crypto_generichash(key.data(), key.size(), in.data(), in.size(), nullptr, 0);
    return key;
  }

  static Bytes seal(const Bytes& key, const Nonce& nonce, const Bytes& body) {
    ensure_sodium();
    Bytes out(kNonceLen + body.size() + kTagLen);
    std::memcpy(out.data(), nonce.v.data(), kNonceLen);
    std::memcpy(out.data() + kNonceLen, body.data(), body.size());
    tag_into(key, out.data(), kNonceLen + body.size(), out.data() + kNonceLen + body.size());
    return out;
  }

  static Bytes open(const Bytes& key, const Bytes& ct) {
    ensure_sodium();
    if (ct.size() < kNonceLen + kTagLen) throw std::runtime_error("tampered ciphertext: short");
    const std::size_t body = ct.size() - kNonceLen - kTagLen;
    std::array<std::uint8_t, kTagLen> want;
    tag_into(key, ct.data(), kNonceLen + body, want.data());
    if (sodium_memcmp(want.data(), ct.data() + kNonceLen + body, kTagLen) != 0)
      throw std::runtime_error("tampered ciphertext: integrity tag mismatch");
    return Bytes(ct.begin() + kNonceLen, ct.begin() + kNonceLen + body);
  }

  static void tag_into(const Bytes& key, const std::uint8_t* data, std::size_t n,
                       std::uint8_t* out16) {
    crypto_generichash(out16, kTagLen, data, n, key.data(), key.size());
  }
};

}  // namespace

std::unique_ptr<CryptoProvider> make_crypto(const std::string& mode) {
  if (mode == "real") return std::make_unique<RealCrypto>();
  if (mode == "transparent") return std::make_unique<TransparentCrypto>();
  throw std::invalid_argument("unknown crypto mode: " + mode);
}

VecShares split_share(const Vec& v, RngStream& rng) {
  double maxabs = 0.0;
  for (double x : v) maxabs = std::max(maxabs, std::fabs(x));
  const double bound = 4.0 * (1.0 + maxabs);
  VecShares s;
  s.mask.reserve(v.size());
  s.mask_err.reserve(v.size());
  s.transfer.reserve(v.size());
  for (double x : v) {
    const double r = rng.uniform(-bound, bound);
    const auto [sum, err] = two_sum(x, -r);  // r + err + sum == x exactly
    s.mask.push_back(r);
    s.mask_err.push_back(err);
    s.transfer.push_back(sum);
  }
  return s;
}

Vec reconstruct_share(const VecShares& s) {
  if (s.mask.size() != s.mask_err.size() || s.mask.size() != s.transfer.size())
    throw std::runtime_error("shape mismatch: shares");
  Vec out(s.mask.size());
  for (std::size_t k = 0; k < out.size(); ++k) {
    ExactAccumulator acc;
    acc.add(s.mask[k]);
    acc.add(s.mask_err[k]);
    acc.add(s.transfer[k]);
    out[k] = acc.round();
  }
  return out;
}

std::int64_t FixedPointCodec::encode(double v) const {
  const double scaled = std::ldexp(v, scale_bits);
  if (!(std::fabs(scaled) < 9.2e18)) throw std::invalid_argument("fixed-point overflow");
  return std::llrint(scaled);
}

double FixedPointCodec::decode(std::int64_t q) const {
  return std::ldexp(static_cast<double>(q), -scale_bits);
}

std::pair<std::int64_t, std::int64_t> FixedPointCodec::split(std::int64_t q,
                                                            RngStream& rng) const {
  const std::uint64_t mask = rng.next_u64();
  const std::uint64_t kept = mask;
  const std::uint64_t sent = static_cast<std::uint64_t>(q) - mask;  // wrapping ring
  return {static_cast<std::int64_t>(kept), static_cast<std::int64_t>(sent)};
}

}  // namespace fedlight
