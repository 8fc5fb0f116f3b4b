#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "fedlight/central.hpp"
#include "fedlight/crypto.hpp"
#include "fedlight/gnn.hpp"
#include "fedlight/graph.hpp"
#include "fedlight/snapshot.hpp"

namespace fedlight {

enum class MsgType : std::uint8_t {
  kPubKeyUpload = 1,
  kPubKeyDirectory,   // server -> key distributor: all enrolled public keys
  kSharedKeyCipher,   // key distributor -> peer (relayed): shared key, boxed
  kTagUpload,         // client -> server: its item tags
  kExpansionInfo,     // server -> client: tag-level neighbourhood view
  kEmbeddingSync,     // client -> neighbour (relayed): layer embedding, encrypted
  kGradSync,          // client -> neighbour (relayed): backward partial, encrypted
  kNegEmbedRequest,   // client -> server -> designated owner: tag of a sampled negative
  kNegEmbedReply,     // designated owner -> requester (relayed): final item embedding
  kNegGradRoute,      // sampler -> designated owner (relayed): negative-item gradient
  kShareTransfer,     // client -> aggregation partner (relayed): transferred share
  kMaskedGradUpload,  // client -> server: plaintext limb list for one tag
  kAggregatedGrad,    // server -> owners: correctly rounded aggregate
  kItemEmbedRequest,  // server -> representative: which tags to upload
  kItemEmbedUpload,   // representative -> server: final item embeddings, encrypted
  kNegItemEmbeds,     // server -> client: candidate (tag, ciphertext) catalogue
};

const char* msg_type_name(MsgType t);

struct Message {
  std::uint32_t round = 0;
  MsgType type{};
  std::uint32_t sender = 0;     // kServerId when the server originates
  std::uint32_t recipient = 0;  // kServerId when addressed to the server
  Bytes payload;
};

// Wire frame: round u32 | type u8 | sender u32 | payload bytes. The recipient
// is implied by the channel the frame travels on.
Bytes encode_frame(const Message& m);
Message decode_frame(const Bytes& frame, std::uint32_t recipient);

// Duplex star topology: every client talks to the server only. client_send
// always lands in the server's inbox; server_send lands in the recipient's.
// Drains normalise order to ascending sender id (FIFO within one sender), so
// downstream processing is independent of physical arrival interleaving.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void client_send(const Message& m) = 0;
  virtual void server_send(const Message& m) = 0;
  virtual std::vector<Message> drain_server() = 0;
  virtual std::vector<Message> drain_client(UserId u) = 0;
};

class InProcessTransport final : public Transport {
 public:
  explicit InProcessTransport(std::uint32_t num_clients);
  void client_send(const Message& m) override;
  void server_send(const Message& m) override;
  std::vector<Message> drain_server() override;
  std::vector<Message> drain_client(UserId u) override;

 private:
  std::vector<std::deque<Message>> to_server_;  // one lane per sender
  std::vector<std::deque<Message>> to_client_;
  std::vector<std::uint32_t> dirty_;  // lanes with pending uplink traffic
  std::vector<bool> dirty_flag_;
};

// Same contract over AF_UNIX socket pairs, one per client. Each frame
// travels in an envelope u32 length | u32 recipient; the recipient rides
// outside the frame so relayed traffic keeps its destination across the
// uplink hop. Exists to pin the wire format; intended for small-scale runs
// (two fds per client).
class SocketTransport final : public Transport {
 public:
  explicit SocketTransport(std::uint32_t num_clients);
  ~SocketTransport() override;
  void client_send(const Message& m) override;
  void server_send(const Message& m) override;
  std::vector<Message> drain_server() override;
  std::vector<Message> drain_client(UserId u) override;

 private:
  std::vector<int> server_fd_;  // server end per client
  std::vector<int> client_fd_;
  std::vector<Bytes> server_buf_;  // partial reads per channel
  std::vector<Bytes> client_buf_;
};

// One line per delivered logical message; counters always, full lines with
// payload bytes only when `full` (they grow with traffic).
class Transcript {
 public:
  explicit Transcript(bool full) : full_(full) {}
  void on_deliver(const Message& m);
  std::uint64_t count(MsgType t) const;
  std::uint64_t total() const { return total_; }
  const std::vector<Message>& messages() const { return messages_; }
  std::string to_text() const;  // one line per message in full mode
  bool full() const { return full_; }

 private:
  bool full_;
  std::uint64_t total_ = 0;
  std::map<std::uint8_t, std::uint64_t> counts_;
  std::vector<Message> messages_;
};

std::string transcript_line(const Message& m);

// What the server retains across the run. Deliberately no field can hold the
// shared symmetric key or a plaintext item id; debug_dump() serialises every
// retained byte so tests can scan for leaked secrets.
struct ServerState {
  std::uint32_t num_users = 0;
  std::uint32_t round = 0;
  std::vector<Bytes> client_pub;
  bool enrollment_complete = false;
  UserId key_distributor = 0;
  std::map<ItemTag, std::vector<UserId>> tag_owners;  // owners ascending
  std::map<UserId, std::uint32_t> user_tag_count;
  std::map<UserId, std::vector<UserId>> neighbors;  // learned during expansion, ascending
  std::deque<std::pair<ItemTag, UserId>> pending_neg_requests;  // (tag, requester) FIFO

  Bytes debug_dump() const;
};

struct ClientState {
  UserId id = 0;
  std::vector<ItemId> items;  // the client's raw interaction list, ascending
  std::uint32_t num_users = 0;  // learned from expansion; node numbering base
  KeyPair kp;
  SharedKey shared_key{};
  bool has_shared_key = false;
  std::vector<Bytes> peer_pubs;  // key distributor only, transient
  std::map<ItemId, ItemTag> tag_of_own;
  std::map<ItemTag, ItemId> own_of_tag;
  ExpandedSubgraph sub;
  Neighborhood local_nbh;  // rows/transpose over own nodes only

  EmbeddingMap theta;                // own user node + own item nodes
  std::vector<EmbeddingMap> layers;  // forward activations, own nodes
  EmbeddingMap neighbor_emb;         // current layer's received embeddings
  EmbeddingMap final_emb;
  EmbeddingMap final_grad;  // local loss contributions + routed negatives
  EmbeddingMap grad;        // current backward layer adjoints
  std::vector<std::pair<UserId, Vec>> received_partials;  // GradSync, arrival order
  std::vector<std::pair<UserId, Vec>> outgoing_partials;  // next GradSync batch, neighbour asc
  std::optional<Vec> pending_neg_reply;
  std::optional<ItemTag> awaiting_tag;
  std::vector<std::tuple<UserId, ItemId, Vec>> routed_neg_grads;  // arrival order
  std::map<ItemId, std::pair<Vec, Vec>> share_kept;               // (mask, mask_err)
  std::map<ItemTag, std::vector<std::pair<UserId, Vec>>> received_shares;
  std::vector<std::pair<ItemTag, Bytes>> candidate_items;  // predict catalogue
  std::uint64_t send_seq = 0;  // nonce sequence
  double local_loss = 0.0;

  NodeId own_user_node() const { return user_node(id); }
  NodeId own_item_node(ItemId i) const { return item_node(i, num_users); }
};

struct RunConfig {
  TrainConfig train;
  std::string crypto_mode = "real";
  std::uint32_t threads = 1;
  std::uint32_t topn = 5;
  bool full_transcript = true;
  bool verbose_access_log = true;
  bool check_replicas = true;  // bitwise item replica agreement after every update
};

struct FederatedEpochStats {
  std::uint32_t epoch = 0;
  double loss = 0.0;  // sum of client-local losses, ascending client id
  std::uint32_t users_skipped = 0;
  std::uint64_t embedding_syncs = 0;  // delivered during this epoch
  std::uint64_t grad_syncs = 0;
};

// The protocol simulator: one server, one state machine per user, all
// communication through the Transport. The graph argument hands each client
// its own interaction row and sizes the enrollment; protocol phases never
// read it globally (assemble_theta and the replica cross-check are
// simulator-side verification, not protocol steps).
class FederatedRun {
 public:
  FederatedRun(const InteractionGraph& g, const RunConfig& cfg, Transport* transport = nullptr);

  void run_initialize();
  void run_expand();
  FederatedEpochStats run_epoch(std::uint32_t epoch);
  void train(SnapshotWriter* snapshots = nullptr);  // initialize + expand + all epochs
  std::vector<std::vector<ItemId>> run_predict(std::uint32_t topn);

  // post-update global view: users from their owner, items from the
  // lowest-id owner; verifies bitwise replica agreement when configured
  EmbeddingMap assemble_theta() const;

  const ServerState& server() const { return server_; }
  const ClientState& client(UserId u) const { return clients_.at(u); }
  std::uint32_t num_clients() const { return static_cast<std::uint32_t>(clients_.size()); }
  Transcript& transcript() { return transcript_; }
  const Transcript& transcript() const { return transcript_; }
  AccessLog& access_log() { return log_; }
  CryptoProvider& crypto() { return *crypto_; }
  const RunConfig& config() const { return cfg_; }
  const std::vector<FederatedEpochStats>& epoch_stats() const { return epoch_stats_; }

  // audit support: byte strings the wire must never carry in real mode
  // (shared key, canonical item-id encodings, initial embedding payloads)
  std::vector<Bytes> secret_material() const;

 private:
  void pump();
  void deliver_one(UserId u);
  void deliver_all();
  void server_handle(const Message& m);
  void relay_validate(const Message& m);  // consumes the pending-request queue
  void client_handle(ClientState& c, const Message& m);
  void send_from_client(ClientState& c, MsgType t, std::uint32_t recipient, Bytes payload);
  void send_from_server(MsgType t, std::uint32_t recipient, Bytes payload);
  Bytes encrypt_for_peers(ClientState& c, const Bytes& plaintext);
  void build_local_structures(ClientState& c, const Message& m);
  void run_forward_pass();
  void run_local_loss(std::uint32_t epoch, FederatedEpochStats& stats);
  void run_backward(std::uint32_t epoch);
  void run_aggregate(std::uint32_t epoch);
  void apply_updates();
  void parallel_over_clients(const std::function<void(ClientState&)>& fn);
  std::string principal(UserId u) const { return "client:" + std::to_string(u); }

  RunConfig cfg_;
  std::unique_ptr<CryptoProvider> crypto_;
  std::unique_ptr<InProcessTransport> owned_transport_;
  Transport* transport_;
  Transcript transcript_;
  AccessLog log_;
  ServerState server_;
  std::vector<ClientState> clients_;
  RngStream server_rng_;
  std::uint32_t round_ = 0;
  InteractionGraph graph_;  // simulator-side only: client construction + verification
  std::map<ItemId, std::shared_ptr<const Row>> item_row_cache_;
  std::map<ItemTag, std::vector<std::pair<UserId, std::vector<Vec>>>> agg_buffer_;
  std::map<ItemTag, std::pair<UserId, Bytes>> rep_uploads_;  // predict, transient
  std::vector<FederatedEpochStats> epoch_stats_;
};

}  // namespace fedlight
