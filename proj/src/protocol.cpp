#include "fedlight/protocol.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <mutex>
#include <set>
#include <stdexcept>
#include <thread>

#include "fedlight/exactsum.hpp"

namespace fedlight {

namespace {

Bytes tag_payload(const ItemTag& tag) { return tag.bytes(); }

ItemTag read_tag(ByteReader& r) {
  ItemTag t;
  const Bytes b = r.raw(16);
  std::copy(b.begin(), b.end(), t.v.begin());
  return t;
}

ItemTag tag_of_payload_head(const Bytes& payload) {
  ByteReader r(payload);
  return read_tag(r);
}

void ensure(bool cond, const char* what) {
  if (!cond) throw std::runtime_error(what);
}

}  // namespace

Bytes ServerState::debug_dump() const {
  ByteWriter w;
  w.u32(num_users);
  w.u32(round);
  w.u32(enrollment_complete ? 1 : 0);
  w.u32(key_distributor);
  w.u32(static_cast<std::uint32_t>(client_pub.size()));
  for (const auto& pk : client_pub) w.bytes(pk);
  w.u32(static_cast<std::uint32_t>(tag_owners.size()));
  for (const auto& [tag, owners] : tag_owners) {
    w.raw(tag.v.data(), tag.v.size());
    w.u32(static_cast<std::uint32_t>(owners.size()));
    for (UserId u : owners) w.u32(u);
  }
  w.u32(static_cast<std::uint32_t>(user_tag_count.size()));
  for (const auto& [u, n] : user_tag_count) {
    w.u32(u);
    w.u32(n);
  }
  w.u32(static_cast<std::uint32_t>(neighbors.size()));
  for (const auto& [u, nb] : neighbors) {
    w.u32(u);
    w.u32(static_cast<std::uint32_t>(nb.size()));
    for (UserId other : nb) w.u32(other);
  }
  w.u32(static_cast<std::uint32_t>(pending_neg_requests.size()));
  for (const auto& [tag, u] : pending_neg_requests) {
    w.raw(tag.v.data(), tag.v.size());
    w.u32(u);
  }
  return w.take();
}

FederatedRun::FederatedRun(const InteractionGraph& g, const RunConfig& cfg, Transport* transport)
    : cfg_(cfg),
      crypto_(make_crypto(cfg.crypto_mode)),
      transcript_(cfg.full_transcript),
      log_(cfg.verbose_access_log),
      server_rng_(cfg.train.seed, "choose"),
      graph_(g) {
  cfg_.train.validate();
  if (cfg_.threads == 0) throw std::invalid_argument("config: threads must be >= 1");
  server_.num_users = g.num_users;
  server_.client_pub.resize(g.num_users);
  clients_.resize(g.num_users);
  for (UserId u = 0; u < g.num_users; ++u) {
    clients_[u].id = u;
    clients_[u].items = g.items_of_user[u];  // the one thing a client is born with
  }
  if (!transport) {
    owned_transport_ = std::make_unique<InProcessTransport>(g.num_users);
    transport_ = owned_transport_.get();
  } else {
    transport_ = transport;
  }
}

void FederatedRun::send_from_client(ClientState& c, MsgType t, std::uint32_t recipient,
                                    Bytes payload) {
  Message m;
  m.round = round_;
  m.type = t;
  m.sender = c.id;
  m.recipient = recipient;
  m.payload = std::move(payload);
  transport_->client_send(m);
}

void FederatedRun::send_from_server(MsgType t, std::uint32_t recipient, Bytes payload) {
  Message m;
  m.round = round_;
  m.type = t;
  m.sender = kServerId;
  m.recipient = recipient;
  m.payload = std::move(payload);
  transport_->server_send(m);
}

void FederatedRun::pump() {
  server_.round = round_;
  for (Message& m : transport_->drain_server()) {
    if (m.round != round_)
      throw std::runtime_error("round desync: message for round " + std::to_string(m.round) +
                               " arrived in round " + std::to_string(round_));
    if (m.recipient == kServerId && m.type != MsgType::kNegEmbedRequest) {
      transcript_.on_deliver(m);
      server_handle(m);
    } else if (m.type == MsgType::kNegEmbedRequest) {
      server_handle(m);  // routing duty; counted when the owner receives it
    } else {
      relay_validate(m);
      transport_->server_send(m);
    }
  }
}

void FederatedRun::deliver_one(UserId u) {
  for (Message& m : transport_->drain_client(u)) {
    transcript_.on_deliver(m);
    client_handle(clients_[u], m);
  }
}

void FederatedRun::deliver_all() {
  for (UserId u = 0; u < num_clients(); ++u) deliver_one(u);
}

void FederatedRun::server_handle(const Message& m) {
  switch (m.type) {
    case MsgType::kPubKeyUpload: {
      ensure(m.sender < server_.num_users, "malformed upload: unknown sender");
      ensure(server_.client_pub[m.sender].empty(), "malformed upload: duplicate enrollment");
      ensure(!m.payload.empty(), "malformed upload: empty public key");
      server_.client_pub[m.sender] = m.payload;
      return;
    }
    case MsgType::kTagUpload: {
      ensure(server_.enrollment_complete, "round desync: tags before enrollment");
      ensure(server_.user_tag_count.find(m.sender) == server_.user_tag_count.end(),
             "malformed upload: duplicate tag upload");
      ByteReader r(m.payload);
      const std::uint32_t n = r.u32();
      ensure(n > 0, "malformed upload: empty tag list");
      std::set<ItemTag> seen;
      for (std::uint32_t k = 0; k < n; ++k) {
        const ItemTag tag = read_tag(r);
        ensure(seen.insert(tag).second, "malformed upload: duplicate tag");
        server_.tag_owners[tag].push_back(m.sender);  // uploads arrive sender-ascending
      }
      r.expect_done();
      server_.user_tag_count[m.sender] = n;
      return;
    }
    case MsgType::kNegEmbedRequest: {
      ByteReader r(m.payload);
      const ItemTag tag = read_tag(r);
      r.expect_done();
      auto it = server_.tag_owners.find(tag);
      ensure(it != server_.tag_owners.end(), "malformed request: unknown tag");
      const auto& owners = it->second;
      ensure(!std::binary_search(owners.begin(), owners.end(), m.sender),
             "malformed request: negative owned by requester");
      server_.pending_neg_requests.emplace_back(tag, m.sender);
      Message fwd = m;
      fwd.recipient = owners.front();  // designated owner: lowest interacting user id
      transport_->server_send(fwd);
      return;
    }
    case MsgType::kMaskedGradUpload: {
      ByteReader r(m.payload);
      const ItemTag tag = read_tag(r);
      const std::uint32_t limbs = r.u32();
      ensure(limbs >= 2, "malformed upload: too few limbs");
      std::vector<Vec> vecs;
      vecs.reserve(limbs);
      for (std::uint32_t k = 0; k < limbs; ++k) vecs.push_back(r.vec());
      r.expect_done();
      auto it = server_.tag_owners.find(tag);
      ensure(it != server_.tag_owners.end(), "malformed upload: unknown tag");
      ensure(std::binary_search(it->second.begin(), it->second.end(), m.sender),
             "malformed upload: uploader does not own tag");
      agg_buffer_[tag].emplace_back(m.sender, std::move(vecs));
      return;
    }
    case MsgType::kItemEmbedUpload: {
      ByteReader r(m.payload);
      const std::uint32_t n = r.u32();
      for (std::uint32_t k = 0; k < n; ++k) {
        const ItemTag tag = read_tag(r);
        Bytes ct = r.bytes();
        auto it = rep_uploads_.find(tag);
        ensure(it != rep_uploads_.end(), "malformed upload: unsolicited item embedding");
        ensure(it->second.first == m.sender, "malformed upload: wrong representative");
        ensure(it->second.second.empty(), "malformed upload: duplicate item embedding");
        it->second.second = std::move(ct);
      }
      r.expect_done();
      return;
    }
    default:
      throw std::runtime_error("malformed upload: unexpected message type at server");
  }
}

void FederatedRun::relay_validate(const Message& m) {
  ensure(m.recipient < server_.num_users, "relay to unknown client");
  switch (m.type) {
    case MsgType::kSharedKeyCipher:
      ensure(server_.enrollment_complete, "round desync: key transfer before enrollment");
      ensure(m.sender == server_.key_distributor, "key transfer from non-distributor");
      ensure(m.recipient != m.sender, "key transfer to self");
      return;
    case MsgType::kEmbeddingSync:
    case MsgType::kGradSync: {
      auto it = server_.neighbors.find(m.sender);
      ensure(it != server_.neighbors.end() &&
                 std::binary_search(it->second.begin(), it->second.end(), m.recipient),
             "sync between non-neighbours");
      return;
    }
    case MsgType::kNegEmbedReply: {
      ensure(!server_.pending_neg_requests.empty(), "unexpected reply: no pending request");
      const auto [tag, requester] = server_.pending_neg_requests.front();
      const ItemTag reply_tag = tag_of_payload_head(m.payload);
      ensure(reply_tag == tag, "unexpected reply: tag mismatch");
      ensure(m.recipient == requester, "unexpected reply: wrong recipient");
      const auto& owners = server_.tag_owners.at(tag);
      ensure(m.sender == owners.front(), "unexpected reply: not the designated owner");
      server_.pending_neg_requests.pop_front();
      return;
    }
    case MsgType::kNegGradRoute: {
      const ItemTag tag = tag_of_payload_head(m.payload);
      auto it = server_.tag_owners.find(tag);
      ensure(it != server_.tag_owners.end(), "gradient routed to unknown tag");
      ensure(m.recipient == it->second.front(), "gradient routed past designated owner");
      ensure(!std::binary_search(it->second.begin(), it->second.end(), m.sender),
             "gradient routed by an owner");
      return;
    }
    case MsgType::kShareTransfer: {
      const ItemTag tag = tag_of_payload_head(m.payload);
      auto it = server_.tag_owners.find(tag);
      ensure(it != server_.tag_owners.end(), "share routed to unknown tag");
      const auto& owners = it->second;
      ensure(std::binary_search(owners.begin(), owners.end(), m.sender),
             "share routed by non-owner");
      ensure(std::binary_search(owners.begin(), owners.end(), m.recipient),
             "share routed to non-owner");
      // deterministic partner: the lowest co-owner distinct from the sender
      UserId partner = kServerId;
      for (UserId w : owners)
        if (w != m.sender) {
          partner = w;
          break;
        }
      ensure(m.recipient == partner, "share routed to non-partner");
      return;
    }
    default:
      throw std::runtime_error("relay of unexpected message type");
  }
}

Bytes FederatedRun::encrypt_for_peers(ClientState& c, const Bytes& plaintext) {
  ensure(c.has_shared_key, "incomplete enrollment: client has no shared key");
  return crypto_->sym_encrypt(c.shared_key, Nonce::counter(c.id, c.send_seq++), plaintext,
                              principal(c.id), log_);
}

void FederatedRun::client_handle(ClientState& c, const Message& m) {
  switch (m.type) {
    case MsgType::kPubKeyDirectory: {
      ByteReader r(m.payload);
      const std::uint32_t n = r.u32();
      ensure(n == server_.num_users, "malformed directory");
      c.peer_pubs.clear();
      for (std::uint32_t k = 0; k < n; ++k) c.peer_pubs.push_back(r.bytes());
      r.expect_done();
      return;
    }
    case MsgType::kSharedKeyCipher: {
      ByteReader r(m.payload);
      const Bytes sender_pub = r.bytes();
      const Bytes ct = r.bytes();
      r.expect_done();
      const Bytes key = crypto_->kem_decrypt(sender_pub, c.kp, ct, principal(c.id), log_);
      ensure(key.size() == c.shared_key.v.size(), "malformed key transfer");
      std::copy(key.begin(), key.end(), c.shared_key.v.begin());
      c.has_shared_key = true;
      for (ItemId i : c.items) {
        const ItemTag t = crypto_->prf_tag(c.shared_key, i, principal(c.id), log_);
        c.tag_of_own[i] = t;
        c.own_of_tag[t] = i;
      }
      return;
    }
    case MsgType::kExpansionInfo: {
      build_local_structures(c, m);
      return;
    }
    case MsgType::kEmbeddingSync: {
      ensure(std::binary_search(c.sub.neighbor_users.begin(), c.sub.neighbor_users.end(),
                                m.sender),
             "sync from non-neighbour");
      const Bytes plain = crypto_->sym_decrypt(c.shared_key, m.payload, principal(c.id), log_);
      const NodeId n = user_node(m.sender);
      ensure(c.neighbor_emb.find(n) == c.neighbor_emb.end(), "duplicate sync");
      c.neighbor_emb[n] = deserialize_vec(plain);
      return;
    }
    case MsgType::kGradSync: {
      ensure(std::binary_search(c.sub.neighbor_users.begin(), c.sub.neighbor_users.end(),
                                m.sender),
             "sync from non-neighbour");
      const Bytes plain = crypto_->sym_decrypt(c.shared_key, m.payload, principal(c.id), log_);
      c.received_partials.emplace_back(m.sender, deserialize_vec(plain));
      return;
    }
    case MsgType::kNegEmbedRequest: {
      ByteReader r(m.payload);
      const ItemTag tag = read_tag(r);
      r.expect_done();
      auto it = c.own_of_tag.find(tag);
      ensure(it != c.own_of_tag.end(), "negative request for foreign tag");
      ByteWriter w;
      w.raw(tag_payload(tag));
      w.raw(encrypt_for_peers(c, serialize_vec(c.final_emb.at(c.own_item_node(it->second)))));
      send_from_client(c, MsgType::kNegEmbedReply, m.sender, w.take());
      return;
    }
    case MsgType::kNegEmbedReply: {
      ByteReader r(m.payload);
      const ItemTag tag = read_tag(r);
      const Bytes ct = r.raw(r.remaining());
      ensure(c.awaiting_tag && tag == *c.awaiting_tag, "unexpected reply");
      const Bytes plain = crypto_->sym_decrypt(c.shared_key, ct, principal(c.id), log_);
      c.pending_neg_reply = deserialize_vec(plain);
      return;
    }
    case MsgType::kNegGradRoute: {
      ByteReader r(m.payload);
      const ItemTag tag = read_tag(r);
      const Bytes ct = r.raw(r.remaining());
      auto it = c.own_of_tag.find(tag);
      ensure(it != c.own_of_tag.end(), "gradient routed for foreign tag");
      const Bytes plain = crypto_->sym_decrypt(c.shared_key, ct, principal(c.id), log_);
      c.routed_neg_grads.emplace_back(m.sender, it->second, deserialize_vec(plain));
      return;
    }
    case MsgType::kShareTransfer: {
      ByteReader r(m.payload);
      const ItemTag tag = read_tag(r);
      const Bytes ct = r.raw(r.remaining());
      ensure(c.own_of_tag.find(tag) != c.own_of_tag.end(), "share for foreign tag");
      const Bytes plain = crypto_->sym_decrypt(c.shared_key, ct, principal(c.id), log_);
      c.received_shares[tag].emplace_back(m.sender, deserialize_vec(plain));
      return;
    }
    case MsgType::kAggregatedGrad: {
      ByteReader r(m.payload);
      const ItemTag tag = read_tag(r);
      const Vec agg = r.vec();
      r.expect_done();
      auto it = c.own_of_tag.find(tag);
      ensure(it != c.own_of_tag.end(), "aggregate for foreign tag");
      const ItemId i = it->second;
      ensure(!std::binary_search(c.sub.exclusive_items.begin(), c.sub.exclusive_items.end(), i),
             "aggregate for exclusive item");
      c.grad[c.own_item_node(i)] = agg;
      return;
    }
    case MsgType::kItemEmbedRequest: {
      ByteReader r(m.payload);
      const std::uint32_t n = r.u32();
      ByteWriter w;
      w.u32(n);
      for (std::uint32_t k = 0; k < n; ++k) {
        const ItemTag tag = read_tag(r);
        auto it = c.own_of_tag.find(tag);
        ensure(it != c.own_of_tag.end(), "representative request for foreign tag");
        w.raw(tag_payload(tag));
        w.bytes(encrypt_for_peers(c, serialize_vec(c.final_emb.at(c.own_item_node(it->second)))));
      }
      r.expect_done();
      send_from_client(c, MsgType::kItemEmbedUpload, kServerId, w.take());
      return;
    }
    case MsgType::kNegItemEmbeds: {
      ByteReader r(m.payload);
      const std::uint32_t n = r.u32();
      c.candidate_items.clear();
      c.candidate_items.reserve(n);
      for (std::uint32_t k = 0; k < n; ++k) {
        const ItemTag tag = read_tag(r);
        ensure(c.own_of_tag.find(tag) == c.own_of_tag.end(), "owned tag offered as candidate");
        c.candidate_items.emplace_back(tag, r.bytes());
      }
      r.expect_done();
      return;
    }
    default:
      throw std::runtime_error("unexpected message type at client");
  }
}

void FederatedRun::run_initialize() {
  round_ = 1;
  for (UserId u = 0; u < num_clients(); ++u) {
    ClientState& c = clients_[u];
    RngStream key_rng(cfg_.train.seed, "keypair", {static_cast<std::uint64_t>(u)});
    c.kp = crypto_->gen_keypair(key_rng, principal(u), log_);
    send_from_client(c, MsgType::kPubKeyUpload, kServerId, c.kp.public_key);
  }
  pump();
  for (UserId u = 0; u < num_clients(); ++u)
    ensure(!server_.client_pub[u].empty(), "incomplete enrollment");
  server_.enrollment_complete = true;

  round_ = 2;
  server_.key_distributor = server_rng_.uniform_index(num_clients());
  {
    ByteWriter w;
    w.u32(num_clients());
    for (const auto& pk : server_.client_pub) w.bytes(pk);
    send_from_server(MsgType::kPubKeyDirectory, server_.key_distributor, w.take());
  }
  deliver_one(server_.key_distributor);

  // the chosen client mints the shared key and boxes it to every peer
  ClientState& dist = clients_[server_.key_distributor];
  RngStream key_rng(cfg_.train.seed, "shared-key",
                    {static_cast<std::uint64_t>(server_.key_distributor)});
  key_rng.fill_bytes(dist.shared_key.v.data(), dist.shared_key.v.size());
  dist.has_shared_key = true;
  for (ItemId i : dist.items) {
    const ItemTag t = crypto_->prf_tag(dist.shared_key, i, principal(dist.id), log_);
    dist.tag_of_own[i] = t;
    dist.own_of_tag[t] = i;
  }
  for (UserId w = 0; w < num_clients(); ++w) {
    if (w == dist.id) continue;
    const Bytes ct =
        crypto_->kem_encrypt(dist.peer_pubs.at(w), dist.kp, Nonce::counter(dist.id, dist.send_seq++),
                             dist.shared_key.bytes(), principal(dist.id), log_);
    ByteWriter pw;
    pw.bytes(dist.kp.public_key);
    pw.bytes(ct);
    send_from_client(dist, MsgType::kSharedKeyCipher, w, pw.take());
  }
  dist.peer_pubs.clear();
  pump();
  deliver_all();
  for (const auto& c : clients_) ensure(c.has_shared_key, "incomplete enrollment: key missing");
}

void FederatedRun::run_expand() {
  round_ = 3;
  for (UserId u = 0; u < num_clients(); ++u) {
    ClientState& c = clients_[u];
    ByteWriter w;
    w.u32(static_cast<std::uint32_t>(c.items.size()));
    for (ItemId i : c.items) w.raw(tag_payload(c.tag_of_own.at(i)));
    send_from_client(c, MsgType::kTagUpload, kServerId, w.take());
  }
  pump();
  for (UserId u = 0; u < num_clients(); ++u)
    ensure(server_.user_tag_count.count(u), "incomplete enrollment: missing tag upload");

  round_ = 4;
  const std::uint32_t catalog = static_cast<std::uint32_t>(server_.tag_owners.size());
  for (UserId u = 0; u < num_clients(); ++u) {
    // one pass over the tag table per client keeps peak memory at one
    // client's view; cost is |tags| * avg owners per tag
    ByteWriter w;
    w.u32(server_.num_users);
    w.u32(catalog);
    ByteWriter own;
    std::uint32_t own_count = 0;
    std::map<UserId, std::vector<ItemTag>> shared;
    for (const auto& [tag, owners] : server_.tag_owners) {
      if (!std::binary_search(owners.begin(), owners.end(), u)) continue;
      own.raw(tag_payload(tag));
      own.u32(static_cast<std::uint32_t>(owners.size()));
      ++own_count;
      for (UserId other : owners)
        if (other != u) shared[other].push_back(tag);
    }
    w.u32(own_count);
    w.raw(own.data());
    w.u32(static_cast<std::uint32_t>(shared.size()));
    for (const auto& [other, tags] : shared) {
      w.u32(other);
      w.u32(server_.user_tag_count.at(other));
      w.u32(static_cast<std::uint32_t>(tags.size()));
      for (const ItemTag& t : tags) w.raw(tag_payload(t));
    }
    auto& nb = server_.neighbors[u];
    for (const auto& [other, tags] : shared) nb.push_back(other);
    send_from_server(MsgType::kExpansionInfo, u, w.take());
    deliver_one(u);
  }

  // local parameters exist from here on; init is per-node keyed, so item
  // replicas across owners are bit-identical by construction
  for (auto& c : clients_) {
    c.theta[c.own_user_node()] =
        init_node_embedding(cfg_.train.seed, c.own_user_node(), cfg_.train.dim);
    for (ItemId i : c.items)
      c.theta[c.own_item_node(i)] =
          init_node_embedding(cfg_.train.seed, c.own_item_node(i), cfg_.train.dim);
  }
}

void FederatedRun::build_local_structures(ClientState& c, const Message& m) {
  ByteReader r(m.payload);
  c.num_users = r.u32();
  ensure(c.num_users > c.id, "malformed expansion: bad user count");
  ExpandedSubgraph sub;
  sub.owner = c.id;
  sub.catalog_items = r.u32();
  ensure(sub.catalog_items >= c.items.size(), "malformed expansion: catalogue too small");
  const std::uint32_t own_count = r.u32();
  ensure(own_count == c.items.size(), "malformed expansion: own item count mismatch");
  for (std::uint32_t k = 0; k < own_count; ++k) {
    const ItemTag tag = read_tag(r);
    const std::uint32_t degree = r.u32();
    auto it = c.own_of_tag.find(tag);
    ensure(it != c.own_of_tag.end(), "malformed expansion: foreign own tag");
    ensure(degree >= 1, "malformed expansion: zero degree");
    sub.item_degree[it->second] = degree;
  }
  ensure(sub.item_degree.size() == c.items.size(), "malformed expansion: duplicate own tag");
  const std::uint32_t nbr_count = r.u32();
  for (std::uint32_t k = 0; k < nbr_count; ++k) {
    const UserId other = r.u32();
    const std::uint32_t degree = r.u32();
    const std::uint32_t cnt = r.u32();
    ensure(other != c.id && other < c.num_users, "malformed expansion: bad neighbour id");
    ensure(cnt >= 1 && degree >= cnt, "malformed expansion: neighbour degree");
    auto& edges = sub.neighbor_edges[other];
    for (std::uint32_t e = 0; e < cnt; ++e) {
      const ItemTag tag = read_tag(r);
      auto it = c.own_of_tag.find(tag);
      ensure(it != c.own_of_tag.end(), "malformed expansion: shared tag not mine");
      edges.push_back(it->second);
    }
    std::sort(edges.begin(), edges.end());
    ensure(std::adjacent_find(edges.begin(), edges.end()) == edges.end(),
           "malformed expansion: duplicate shared tag");
    sub.neighbor_degree[other] = degree;
  }
  r.expect_done();

  sub.own_items = c.items;
  sub.owner_degree = static_cast<std::uint32_t>(c.items.size());
  for (const auto& [other, edges] : sub.neighbor_edges) sub.neighbor_users.push_back(other);
  for (ItemId i : sub.own_items)
    if (sub.item_degree.at(i) == 1) sub.exclusive_items.push_back(i);

  // degree cross-check: every sharing neighbour accounts for one unit of an
  // item's degree, the owner for one more
  std::map<ItemId, std::uint32_t> seen;
  for (const auto& [other, edges] : sub.neighbor_edges)
    for (ItemId i : edges) ++seen[i];
  for (ItemId i : sub.own_items) {
    const std::uint32_t expect = sub.item_degree.at(i);
    const std::uint32_t got = 1 + (seen.count(i) ? seen.at(i) : 0);
    ensure(got == expect, "malformed expansion: degree mismatch");
  }
  c.sub = std::move(sub);

  // kernel rows: the client computes its own user node and its own items
  Neighborhood nbh;
  auto user_row = std::make_shared<Row>();
  for (ItemId i : c.sub.own_items)
    user_row->emplace_back(c.own_item_node(i),
                           sym_norm_coeff(c.sub.owner_degree, c.sub.item_degree.at(i)));
  nbh.rows[c.own_user_node()] = user_row;
  nbh.transpose[c.own_user_node()] = user_row;
  for (ItemId i : c.sub.own_items) {
    auto cached = item_row_cache_.find(i);
    std::shared_ptr<const Row> row;
    if (cached != item_row_cache_.end()) {
      row = cached->second;  // identical from any owner: global ids and degrees
    } else {
      auto fresh = std::make_shared<Row>();
      std::vector<std::pair<UserId, std::uint32_t>> holders;
      holders.emplace_back(c.id, c.sub.owner_degree);
      for (const auto& [other, edges] : c.sub.neighbor_edges)
        if (std::binary_search(edges.begin(), edges.end(), i))
          holders.emplace_back(other, c.sub.neighbor_degree.at(other));
      std::sort(holders.begin(), holders.end());
      for (const auto& [holder, deg] : holders)
        fresh->emplace_back(user_node(holder), sym_norm_coeff(deg, c.sub.item_degree.at(i)));
      item_row_cache_[i] = fresh;
      row = fresh;
    }
    nbh.rows[c.own_item_node(i)] = row;
    auto tr = std::make_shared<Row>();
    tr->emplace_back(c.own_user_node(),
                     sym_norm_coeff(c.sub.owner_degree, c.sub.item_degree.at(i)));
    nbh.transpose[c.own_item_node(i)] = tr;
  }
  c.local_nbh = std::move(nbh);
}

void FederatedRun::parallel_over_clients(const std::function<void(ClientState&)>& fn) {
  const std::uint32_t n = num_clients();
  const std::uint32_t threads = std::min(cfg_.threads, n);
  if (threads <= 1) {
    for (auto& c : clients_) fn(c);
    return;
  }
  std::vector<std::thread> pool;
  std::mutex err_mu;
  std::exception_ptr first_error;
  const std::uint32_t chunk = (n + threads - 1) / threads;
  for (std::uint32_t t = 0; t < threads; ++t) {
    const std::uint32_t lo = t * chunk;
    const std::uint32_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&, lo, hi] {
      try {
        for (std::uint32_t u = lo; u < hi; ++u) fn(clients_[u]);
      } catch (...) {
        std::lock_guard<std::mutex> lk(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

void FederatedRun::run_forward_pass() {
  parallel_over_clients([&](ClientState& c) {
    c.layers.clear();
    c.layers.push_back(c.theta);
    c.neighbor_emb.clear();
  });
  for (std::uint32_t l = 0; l < cfg_.train.layers; ++l) {
    ++round_;
    for (UserId u = 0; u < num_clients(); ++u) {
      ClientState& c = clients_[u];
      if (c.sub.neighbor_users.empty()) continue;
      // one encryption per sender per layer; every neighbour gets the same bytes
      const Bytes ct =
          encrypt_for_peers(c, serialize_vec(c.layers[l].at(c.own_user_node())));
      for (UserId w : c.sub.neighbor_users)
        send_from_client(c, MsgType::kEmbeddingSync, w, ct);
    }
    pump();
    deliver_all();
    parallel_over_clients([&, l](ClientState& c) {
      EmbeddingMap in_view = c.layers[l];
      for (auto& [n, v] : c.neighbor_emb) in_view[n] = v;
      ensure(c.neighbor_emb.size() == c.sub.neighbor_users.size(),
             "incomplete layer state: missing neighbour sync");
      c.layers.push_back(convolve_layer(c.local_nbh, in_view));
      c.neighbor_emb.clear();
    });
  }
  parallel_over_clients([&](ClientState& c) { c.final_emb = combine_layers(c.layers); });
}

void FederatedRun::run_local_loss(std::uint32_t epoch, FederatedEpochStats& stats) {
  ++round_;
  for (UserId u = 0; u < num_clients(); ++u) {
    ClientState& c = clients_[u];
    c.local_loss = 0.0;
    if (c.items.size() >= c.sub.catalog_items) {
      ++stats.users_skipped;  // holds the whole catalogue: nothing to contrast
      continue;
    }
    const Vec& uf = c.final_emb.at(c.own_user_node());
    for (ItemId i : c.items) {
      for (std::uint32_t k = 0; k < cfg_.train.neg_per_pos; ++k) {
        const ItemId j =
            sample_negative(cfg_.train.seed, epoch, u, i, k, c.sub.catalog_items, c.items);
        const ItemTag jtag = crypto_->prf_tag(c.shared_key, j, principal(u), log_);
        c.awaiting_tag = jtag;
        send_from_client(c, MsgType::kNegEmbedRequest, kServerId, tag_payload(jtag));
        pump();  // request reaches the designated owner
        deliver_one(server_.tag_owners.at(jtag).front());
        pump();  // owner's reply comes back
        deliver_one(u);
        ensure(c.pending_neg_reply.has_value(), "incomplete layer state: no negative reply");
        const Vec neg = std::move(*c.pending_neg_reply);
        c.pending_neg_reply.reset();
        c.awaiting_tag.reset();

        const auto g = bpr_loss_and_grad(uf, c.final_emb.at(c.own_item_node(i)), neg);
        c.local_loss += g.loss;
        auto add_into = [](EmbeddingMap& m, NodeId n, const Vec& v) {
          auto it = m.find(n);
          if (it == m.end())
            m.emplace(n, v);
          else
            add_in_place(it->second, v);
        };
        add_into(c.final_grad, c.own_user_node(), g.d_user);
        add_into(c.final_grad, c.own_item_node(i), g.d_pos);

        ByteWriter w;
        w.raw(tag_payload(jtag));
        w.raw(encrypt_for_peers(c, serialize_vec(g.d_neg)));
        send_from_client(c, MsgType::kNegGradRoute, server_.tag_owners.at(jtag).front(),
                         w.take());
        pump();
        deliver_one(server_.tag_owners.at(jtag).front());
      }
    }
  }
  // routed negative-item gradients join the owner's contributions before the
  // top-of-chain step, in (sender, sample) arrival order
  for (auto& c : clients_) {
    for (const auto& [sender, item, v] : c.routed_neg_grads) {
      auto it = c.final_grad.find(c.own_item_node(item));
      if (it == c.final_grad.end())
        c.final_grad.emplace(c.own_item_node(item), v);
      else
        add_in_place(it->second, v);
      (void)sender;
    }
    c.routed_neg_grads.clear();
    stats.loss += c.local_loss;
  }
}

void FederatedRun::run_backward(std::uint32_t epoch) {
  (void)epoch;
  // top of the chain: alpha * G, materialised with explicit zeros over every
  // own node (the transpose key set), so later partial sums can index any
  // own item even when the loss never touched it
  parallel_over_clients([&](ClientState& c) {
    c.grad = backprop_layer(c.local_nbh, {}, cfg_.train.alpha(), c.final_grad, cfg_.train.dim);
  });
  for (std::uint32_t step = 0; step < cfg_.train.layers; ++step) {
    ++round_;
    // partials use the recipient's symmetric weight: w(recipient, item)
    parallel_over_clients([&](ClientState& c) {
      c.outgoing_partials.clear();
      for (const auto& [other, edges] : c.sub.neighbor_edges) {
        Vec acc(cfg_.train.dim, 0.0);
        for (ItemId i : edges)
          axpy(acc,
               sym_norm_coeff(c.sub.neighbor_degree.at(other), c.sub.item_degree.at(i)),
               c.grad.at(c.own_item_node(i)));
        c.outgoing_partials.emplace_back(other, std::move(acc));
      }
    });
    for (UserId u = 0; u < num_clients(); ++u) {
      ClientState& c = clients_[u];
      for (const auto& [other, acc] : c.outgoing_partials)
        send_from_client(c, MsgType::kGradSync, other,
                         encrypt_for_peers(c, serialize_vec(acc)));
      c.outgoing_partials.clear();
    }
    pump();
    deliver_all();
    parallel_over_clients([&](ClientState& c) {
      EmbeddingMap next =
          backprop_layer(c.local_nbh, c.grad, cfg_.train.alpha(), c.final_grad, cfg_.train.dim);
      Vec& mine = next.at(c.own_user_node());
      for (const auto& [sender, v] : c.received_partials) {
        add_in_place(mine, v);
        (void)sender;
      }
      c.received_partials.clear();
      c.grad = std::move(next);
    });
  }
}

void FederatedRun::run_aggregate(std::uint32_t epoch) {
  ++round_;
  for (UserId u = 0; u < num_clients(); ++u) {
    ClientState& c = clients_[u];
    for (ItemId i : c.items) {
      if (std::binary_search(c.sub.exclusive_items.begin(), c.sub.exclusive_items.end(), i))
        continue;  // exclusive items never appear in aggregation traffic
      // partner = lowest co-owner: neighbor_edges iterates ascending, and the
      // co-owners of i are exactly this client plus its sharing neighbours
      UserId partner = kServerId;
      for (const auto& [other, edges] : c.sub.neighbor_edges) {
        if (std::binary_search(edges.begin(), edges.end(), i)) {
          partner = other;
          break;
        }
      }
      ensure(partner != kServerId, "aggregation: shared item without co-owner");
      RngStream mask_rng(cfg_.train.seed, "mask",
                         {static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(u),
                          static_cast<std::uint64_t>(i)});
      VecShares shares = split_share(c.grad.at(c.own_item_node(i)), mask_rng);
      c.share_kept[i] = {std::move(shares.mask), std::move(shares.mask_err)};
      ByteWriter w;
      w.raw(tag_payload(c.tag_of_own.at(i)));
      w.raw(encrypt_for_peers(c, serialize_vec(shares.transfer)));
      send_from_client(c, MsgType::kShareTransfer, partner, w.take());
    }
  }
  pump();
  deliver_all();

  ++round_;
  for (UserId u = 0; u < num_clients(); ++u) {
    ClientState& c = clients_[u];
    for (ItemId i : c.items) {
      auto kept = c.share_kept.find(i);
      if (kept == c.share_kept.end()) continue;
      const ItemTag tag = c.tag_of_own.at(i);
      ByteWriter w;
      w.raw(tag_payload(tag));
      const auto received = c.received_shares.find(tag);
      const std::uint32_t extra =
          received == c.received_shares.end()
              ? 0
              : static_cast<std::uint32_t>(received->second.size());
      w.u32(2 + extra);
      w.vec(kept->second.first);
      w.vec(kept->second.second);
      if (received != c.received_shares.end())
        for (const auto& [sender, v] : received->second) {
          w.vec(v);
          (void)sender;
        }
      send_from_client(c, MsgType::kMaskedGradUpload, kServerId, w.take());
    }
    c.share_kept.clear();
    c.received_shares.clear();
  }
  pump();

  // exact aggregation: limb sums are order-invariant and rounded exactly once
  for (const auto& [tag, uploads] : agg_buffer_) {
    const auto& owners = server_.tag_owners.at(tag);
    ensure(uploads.size() == owners.size(), "malformed upload: missing shares");
    std::size_t limbs = 0;
    std::size_t dim = 0;
    for (const auto& [sender, vecs] : uploads) {
      limbs += vecs.size();
      for (const auto& v : vecs) {
        if (dim == 0) dim = v.size();
        ensure(v.size() == dim, "malformed upload: limb dimension mismatch");
      }
      (void)sender;
    }
    ensure(limbs == 3 * owners.size(), "malformed upload: limb count mismatch");
    Vec agg(dim, 0.0);
    for (std::size_t k = 0; k < dim; ++k) {
      ExactAccumulator acc;
      for (const auto& [sender, vecs] : uploads) {
        for (const auto& v : vecs) acc.add(v[k]);
        (void)sender;
      }
      agg[k] = acc.round();
    }
    ByteWriter w;
    w.raw(tag_payload(tag));
    w.vec(agg);
    for (UserId owner : owners) send_from_server(MsgType::kAggregatedGrad, owner, w.data());
  }
  agg_buffer_.clear();
  deliver_all();
}

void FederatedRun::apply_updates() {
  parallel_over_clients(
      [&](ClientState& c) { sgd_step(c.theta, c.grad, cfg_.train.lr, cfg_.train.l2); });
}

FederatedEpochStats FederatedRun::run_epoch(std::uint32_t epoch) {
  ensure(!clients_.empty() && !clients_[0].sub.own_items.empty(),
         "round desync: epoch before expansion");
  FederatedEpochStats stats;
  stats.epoch = epoch;
  for (auto& c : clients_) {
    c.final_grad.clear();
    c.grad.clear();
    c.local_loss = 0.0;
  }
  const std::uint64_t sync0 = transcript_.count(MsgType::kEmbeddingSync);
  const std::uint64_t grad0 = transcript_.count(MsgType::kGradSync);
  run_forward_pass();
  run_local_loss(epoch, stats);
  run_backward(epoch);
  run_aggregate(epoch);
  apply_updates();
  stats.embedding_syncs = transcript_.count(MsgType::kEmbeddingSync) - sync0;
  stats.grad_syncs = transcript_.count(MsgType::kGradSync) - grad0;
  epoch_stats_.push_back(stats);
  return stats;
}

EmbeddingMap FederatedRun::assemble_theta() const {
  EmbeddingMap out;
  for (UserId u = 0; u < graph_.num_users; ++u)
    out[user_node(u)] = clients_[u].theta.at(user_node(u));
  for (ItemId i = 0; i < graph_.num_items; ++i) {
    const auto& owners = graph_.users_of_item[i];
    const NodeId n = item_node(i, graph_.num_users);
    const Vec& primary = clients_[owners.front()].theta.at(n);
    if (cfg_.check_replicas) {
      for (std::size_t k = 1; k < owners.size(); ++k) {
        const Vec& other = clients_[owners[k]].theta.at(n);
        bool same = other.size() == primary.size();
        for (std::size_t d = 0; same && d < primary.size(); ++d)
          same = std::bit_cast<std::uint64_t>(primary[d]) ==
                 std::bit_cast<std::uint64_t>(other[d]);
        if (!same)
          throw std::runtime_error("replica drift at item " + std::to_string(i) +
                                   " between clients " + std::to_string(owners.front()) +
                                   " and " + std::to_string(owners[k]));
      }
    }
    out[n] = primary;
  }
  return out;
}

void FederatedRun::train(SnapshotWriter* snapshots) {
  run_initialize();
  run_expand();
  for (std::uint32_t t = 0; t < cfg_.train.epochs; ++t) {
    const FederatedEpochStats stats = run_epoch(t);
    if (snapshots) snapshots->append(t, stats.loss, assemble_theta());
  }
}

std::vector<std::vector<ItemId>> FederatedRun::run_predict(std::uint32_t topn) {
  run_forward_pass();  // score on the post-training parameters

  ++round_;
  rep_uploads_.clear();
  std::map<UserId, std::vector<ItemTag>> requests;
  for (const auto& [tag, owners] : server_.tag_owners) {
    const UserId rep = owners[server_rng_.uniform_index(static_cast<std::uint32_t>(owners.size()))];
    rep_uploads_[tag] = {rep, Bytes{}};
    requests[rep].push_back(tag);
  }
  for (const auto& [rep, tags] : requests) {
    ByteWriter w;
    w.u32(static_cast<std::uint32_t>(tags.size()));
    for (const ItemTag& t : tags) w.raw(tag_payload(t));
    send_from_server(MsgType::kItemEmbedRequest, rep, w.take());
  }
  deliver_all();  // representatives answer with kItemEmbedUpload
  pump();
  for (const auto& [tag, entry] : rep_uploads_)
    ensure(!entry.second.empty(), "incomplete layer state: missing representative upload");

  ++round_;
  for (UserId u = 0; u < num_clients(); ++u) {
    // the server's own ownership table decides what is a candidate for u
    ByteWriter w;
    std::uint32_t n = 0;
    ByteWriter body;
    for (const auto& [tag, entry] : rep_uploads_) {
      const auto& owners = server_.tag_owners.at(tag);
      if (std::binary_search(owners.begin(), owners.end(), u)) continue;
      body.raw(tag_payload(tag));
      body.bytes(entry.second);
      ++n;
    }
    w.u32(n);
    w.raw(body.data());
    send_from_server(MsgType::kNegItemEmbeds, u, w.take());
    deliver_one(u);
  }
  rep_uploads_.clear();

  std::vector<std::vector<ItemId>> rankings(num_clients());
  for (UserId u = 0; u < num_clients(); ++u) {
    ClientState& c = clients_[u];
    ensure(c.candidate_items.size() == c.sub.catalog_items - c.items.size(),
           "incomplete layer state: candidate count mismatch");
    std::map<ItemTag, ItemId> inverse;
    for (ItemId j = 0; j < c.sub.catalog_items; ++j) {
      if (std::binary_search(c.items.begin(), c.items.end(), j)) continue;
      inverse[crypto_->prf_tag(c.shared_key, j, principal(u), log_)] = j;
    }
    std::vector<std::pair<ItemId, Vec>> decoded;
    decoded.reserve(c.candidate_items.size());
    for (const auto& [tag, ct] : c.candidate_items) {
      auto it = inverse.find(tag);
      ensure(it != inverse.end(), "unknown candidate tag");
      decoded.emplace_back(it->second,
                           deserialize_vec(crypto_->sym_decrypt(c.shared_key, ct,
                                                                principal(u), log_)));
    }
    std::sort(decoded.begin(), decoded.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<std::pair<ItemId, const Vec*>> candidates;
    candidates.reserve(decoded.size());
    for (const auto& [item, vec] : decoded) candidates.emplace_back(item, &vec);
    rankings[u] = rank_top_n(c.final_emb.at(c.own_user_node()), candidates, topn);
    c.candidate_items.clear();
  }
  return rankings;
}

std::vector<Bytes> FederatedRun::secret_material() const {
  std::vector<Bytes> out;
  for (const auto& c : clients_)
    if (c.has_shared_key) {
      out.push_back(c.shared_key.bytes());
      break;
    }
  for (const auto& c : clients_) {
    for (ItemId i : c.items) {
      Bytes b(8);
      std::uint64_t v = i;
      for (int k = 7; k >= 0; --k) {
        b[k] = static_cast<std::uint8_t>(v & 0xff);
        v >>= 8;
      }
      out.push_back(std::move(b));
    }
  }
  for (NodeId n = 0; n < graph_.num_nodes(); ++n)
    out.push_back(serialize_vec(init_node_embedding(cfg_.train.seed, n, cfg_.train.dim)));
  return out;
}

}  // namespace fedlight
