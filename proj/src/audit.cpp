#include "fedlight/audit.hpp"

#include <stdexcept>

#include "fedlight/bytes.hpp"

namespace fedlight {

namespace {

void skip_tag(ByteReader& r) { r.raw(16); }

// Parses one payload against the wire schema of its type. Item references in
// every schema are 16-byte tags; there is no field position that could carry
// a raw item id. Throws on any structural mismatch.
void check_schema(const Message& m) {
  ByteReader r(m.payload);
  switch (m.type) {
    case MsgType::kPubKeyUpload:
      if (r.remaining() == 0) throw std::runtime_error("empty key");
      return;  // opaque public key bytes
    case MsgType::kPubKeyDirectory: {
      const std::uint32_t n = r.u32();
      for (std::uint32_t k = 0; k < n; ++k) r.bytes();
      r.expect_done();
      return;
    }
    case MsgType::kSharedKeyCipher:
      r.bytes();  // sender public key
      r.bytes();  // boxed key
      r.expect_done();
      return;
    case MsgType::kTagUpload: {
      const std::uint32_t n = r.u32();
      for (std::uint32_t k = 0; k < n; ++k) skip_tag(r);
      r.expect_done();
      return;
    }
    case MsgType::kExpansionInfo: {
      r.u32();  // num_users
      r.u32();  // catalog size
      const std::uint32_t own = r.u32();
      for (std::uint32_t k = 0; k < own; ++k) {
        skip_tag(r);
        r.u32();  // item degree
      }
      const std::uint32_t nbr = r.u32();
      for (std::uint32_t k = 0; k < nbr; ++k) {
        r.u32();  // neighbour user id (user ids are server-known, not private)
        r.u32();  // neighbour degree
        const std::uint32_t cnt = r.u32();
        for (std::uint32_t e = 0; e < cnt; ++e) skip_tag(r);
      }
      r.expect_done();
      return;
    }
    case MsgType::kEmbeddingSync:
    case MsgType::kGradSync:
      if (r.remaining() == 0) throw std::runtime_error("empty envelope");
      return;  // one cipher envelope, opaque to the relay
    case MsgType::kNegEmbedRequest:
      skip_tag(r);
      r.expect_done();
      return;
    case MsgType::kNegEmbedReply:
    case MsgType::kNegGradRoute:
    case MsgType::kShareTransfer:
      skip_tag(r);
      if (r.remaining() == 0) throw std::runtime_error("empty envelope");
      return;  // tag | cipher envelope
    case MsgType::kMaskedGradUpload: {
      skip_tag(r);
      const std::uint32_t n = r.u32();
      if (n < 2) throw std::runtime_error("too few limbs");
      for (std::uint32_t k = 0; k < n; ++k) r.vec();
      r.expect_done();
      return;
    }
    case MsgType::kAggregatedGrad:
      skip_tag(r);
      r.vec();
      r.expect_done();
      return;
    case MsgType::kItemEmbedRequest: {
      const std::uint32_t n = r.u32();
      for (std::uint32_t k = 0; k < n; ++k) skip_tag(r);
      r.expect_done();
      return;
    }
    case MsgType::kItemEmbedUpload:
    case MsgType::kNegItemEmbeds: {
      const std::uint32_t n = r.u32();
      for (std::uint32_t k = 0; k < n; ++k) {
        skip_tag(r);
        if (r.bytes().empty()) throw std::runtime_error("empty envelope");
      }
      r.expect_done();
      return;
    }
  }
  throw std::runtime_error("unknown message type");
}

const char* kCryptoOps[] = {"gen_keypair", "kem_encrypt", "kem_decrypt",
                            "sym_encrypt", "sym_decrypt", "prf_tag"};

}  // namespace

AuditReport audit_run(const Transcript& transcript, const AccessLog& log,
                      const ServerState& server, const std::vector<Bytes>& secrets) {
  if (!transcript.full())
    throw std::invalid_argument("audit requires a full transcript");
  AuditReport rep;

  for (const char* op : kCryptoOps) rep.server_crypto_ops += log.count("server", op);
  for (const auto& ev : log.events())
    if (ev.principal == "server") {
      ++rep.server_crypto_ops;
      rep.notes.push_back("server performed " + ev.op);
    }

  for (const Message& m : transcript.messages()) {
    ++rep.messages_checked;
    try {
      check_schema(m);
    } catch (const std::exception& e) {
      ++rep.schema_violations;
      if (rep.notes.size() < 32)
        rep.notes.push_back(std::string(msg_type_name(m.type)) + " from " +
                            std::to_string(m.sender) + ": " + e.what());
    }
  }

  // scans use only secrets long enough to make chance collisions impossible
  const Bytes dump = server.debug_dump();
  for (const Bytes& s : secrets) {
    if (s.size() < 16) continue;
    for (const Message& m : transcript.messages())
      if (contains_bytes(m.payload, s)) ++rep.secret_hits_transcript;
    if (contains_bytes(dump, s)) ++rep.secret_hits_server_state;
  }
  return rep;
}

std::string AuditReport::to_text() const {
  std::string out;
  out += "messages_checked " + std::to_string(messages_checked) + "\n";
  out += "server_crypto_ops " + std::to_string(server_crypto_ops) + "\n";
  out += "schema_violations " + std::to_string(schema_violations) + "\n";
  out += "secret_hits_transcript " + std::to_string(secret_hits_transcript) + "\n";
  out += "secret_hits_server_state " + std::to_string(secret_hits_server_state) + "\n";
  for (const auto& n : notes) out += "note " + n + "\n";
  return out;
}

}  // namespace fedlight
