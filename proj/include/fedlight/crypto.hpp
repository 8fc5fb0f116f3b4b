#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "fedlight/bytes.hpp"
#include "fedlight/ids.hpp"
#include "fedlight/rng.hpp"
#include "fedlight/vec.hpp"

namespace fedlight {

// 16-byte pseudorandom item identifier: PRF(shared key, item id). Tags are
// what the server is allowed to see instead of item ids.
struct ItemTag {
  std::array<std::uint8_t, 16> v{};
  auto operator<=>(const ItemTag&) const = default;
  Bytes bytes() const { return Bytes(v.begin(), v.end()); }
  std::string hex() const { return to_hex(bytes()); }
};

struct KeyPair {
  Bytes public_key;
  Bytes secret_key;
};

struct SharedKey {
  std::array<std::uint8_t, 32> v{};
  bool operator==(const SharedKey&) const = default;
  Bytes bytes() const { return Bytes(v.begin(), v.end()); }
};

// Deterministic nonces: (sender id, per-sender sequence number). The shared
// symmetric key is used by many senders, so the sender id must be part of the
// nonce for uniqueness. No randomness: reruns must be byte-identical.
struct Nonce {
  std::array<std::uint8_t, 24> v{};
  static Nonce counter(std::uint32_t sender, std::uint64_t seq);
};

// Ledger of which principal invoked which primitive. Counts are always kept;
// verbatim events only while `verbose` (they grow linearly with traffic).
// The privacy audit is built on this: e.g. the server must show zero decrypt
// and zero prf invocations over a whole run.
class AccessLog {
 public:
  struct Event {
    std::string principal;
    std::string op;
    std::string detail;
  };

  explicit AccessLog(bool verbose = true) : verbose_(verbose) {}

  void record(std::string_view principal, std::string_view op, std::string_view detail);
  void append(const AccessLog& other);  // merge: counts add up, events concatenate
  std::size_t count(std::string_view principal, std::string_view op) const;
  std::size_t count_op_anywhere(std::string_view op) const;
  const std::vector<Event>& events() const { return events_; }
  std::string to_text() const;
  bool verbose() const { return verbose_; }

 private:
  bool verbose_;
  std::map<std::pair<std::string, std::string>, std::size_t> counts_;
  std::vector<Event> events_;
};

// Two providers behind one interface. "real": libsodium X25519 box (KEM) and
// XSalsa20-Poly1305 secretbox (symmetric), both with caller-supplied
// deterministic nonces. "transparent": the body travels in the clear with a
// keyed integrity tag, so tests can read every payload off the wire while
// tamper detection still works. Item tags are REAL keyed BLAKE2b in both
// modes: tags are the matching primitive the protocol correctness rests on,
// and keeping them real preserves the no-plaintext-ids wire invariant that
// the transparent-mode audit checks.
//
// Ciphertext layout, both modes: nonce(24) | body | auth-tag(16).
class CryptoProvider {
 public:
  virtual ~CryptoProvider() = default;
  virtual std::string mode() const = 0;

  virtual KeyPair gen_keypair(RngStream& rng, std::string_view principal, AccessLog& log) = 0;
  virtual Bytes kem_encrypt(const Bytes& recipient_pub, const KeyPair& sender, const Nonce& nonce,
                            const Bytes& msg, std::string_view principal, AccessLog& log) = 0;
  // Throws std::runtime_error("tampered ciphertext...") on auth failure.
  virtual Bytes kem_decrypt(const Bytes& sender_pub, const KeyPair& recipient, const Bytes& ct,
                            std::string_view principal, AccessLog& log) = 0;
  virtual Bytes sym_encrypt(const SharedKey& key, const Nonce& nonce, const Bytes& plaintext,
                            std::string_view principal, AccessLog& log) = 0;
  virtual Bytes sym_decrypt(const SharedKey& key, const Bytes& ct, std::string_view principal,
                            AccessLog& log) = 0;

  ItemTag prf_tag(const SharedKey& key, ItemId item, std::string_view principal, AccessLog& log);
};

// mode is "real" or "transparent"
std::unique_ptr<CryptoProvider> make_crypto(const std::string& mode);

// --- Lossless additive sharing -------------------------------------------
//
// A share split that reconstructs bit-exactly. The naive float scheme
// (keep r, send fl(v - r)) discards the rounding error of the subtraction,
// so r + fl(v - r) != v in general. Instead the rounding error is retained:
// TwoSum(v, -r) yields s = fl(v - r) and the exact residual e with
// r + e + s == v over the reals. The kept share is the limb pair (r, e), the
// transferred share is the single double s. Reconstruction and multi-party
// aggregation sum limbs in an exact accumulator, so the result is the
// correctly rounded true value regardless of order.
struct VecShares {
  Vec mask;      // r, uniform in [-B, B]
  Vec mask_err;  // e, exact residual limb
  Vec transfer;  // s, the share that travels
};

VecShares split_share(const Vec& v, RngStream& rng);
Vec reconstruct_share(const VecShares& s);  // bit-exact: returns v

// Optional integer mode: values quantised to scale_bits fractional bits and
// shared in the wrapping int64 ring, where cancellation is trivially exact.
// Provided as a primitive; the default protocol path stays in floats.
struct FixedPointCodec {
  int scale_bits = 20;
  std::int64_t encode(double v) const;
  double decode(std::int64_t q) const;
  std::pair<std::int64_t, std::int64_t> split(std::int64_t q, RngStream& rng) const;
};

}  // namespace fedlight
