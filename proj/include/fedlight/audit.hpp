#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedlight/crypto.hpp"
#include "fedlight/protocol.hpp"

namespace fedlight {

// What the wire and the server retained, checked against the privacy
// contract: the server computes no cryptography, item references travel as
// 16-byte tags only, and sensitive vectors sit inside cipher envelopes. The
// envelope claim is structural (every payload parses as its declared schema,
// which has no raw-id field); secret scans catch accidental envelope misuse.
struct AuditReport {
  std::uint64_t messages_checked = 0;
  std::uint64_t server_crypto_ops = 0;       // any crypto op logged by the server
  std::uint64_t schema_violations = 0;       // payloads that fail their format
  std::uint64_t secret_hits_transcript = 0;  // secret byte strings inside payloads
  std::uint64_t secret_hits_server_state = 0;
  std::vector<std::string> notes;

  // open_payloads: transparent crypto deliberately exposes vector bodies, so
  // transcript secret hits are expected there and not a failure
  bool clean(bool open_payloads) const {
    return server_crypto_ops == 0 && schema_violations == 0 &&
           secret_hits_server_state == 0 && (open_payloads || secret_hits_transcript == 0);
  }
  std::string to_text() const;
};

// Requires a full transcript (stored messages). `secrets` comes from
// FederatedRun::secret_material().
AuditReport audit_run(const Transcript& transcript, const AccessLog& log,
                      const ServerState& server, const std::vector<Bytes>& secrets);

}  // namespace fedlight
