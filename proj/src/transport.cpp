#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "fedlight/protocol.hpp"

namespace fedlight {

const char* msg_type_name(MsgType t) {
  switch (t) {
    case MsgType::kPubKeyUpload: return "PubKeyUpload";
    case MsgType::kPubKeyDirectory: return "PubKeyDirectory";
    case MsgType::kSharedKeyCipher: return "SharedKeyCipher";
    case MsgType::kTagUpload: return "TagUpload";
    case MsgType::kExpansionInfo: return "ExpansionInfo";
    case MsgType::kEmbeddingSync: return "EmbeddingSync";
    case MsgType::kGradSync: return "GradSync";
    case MsgType::kNegEmbedRequest: return "NegEmbedRequest";
    case MsgType::kNegEmbedReply: return "NegEmbedReply";
    case MsgType::kNegGradRoute: return "NegGradRoute";
    case MsgType::kShareTransfer: return "ShareTransfer";
    case MsgType::kMaskedGradUpload: return "MaskedGradUpload";
    case MsgType::kAggregatedGrad: return "AggregatedGrad";
    case MsgType::kItemEmbedRequest: return "ItemEmbedRequest";
    case MsgType::kItemEmbedUpload: return "ItemEmbedUpload";
    case MsgType::kNegItemEmbeds: return "NegItemEmbeds";
  }
  return "Unknown";
}

Bytes encode_frame(const Message& m) {
  ByteWriter w;
  w.u32(m.round);
  w.u8(static_cast<std::uint8_t>(m.type));
  w.u32(m.sender);
  w.raw(m.payload);
  return w.take();
}

Message decode_frame(const Bytes& frame, std::uint32_t recipient) {
  ByteReader r(frame);
  Message m;
  m.round = r.u32();
  m.type = static_cast<MsgType>(r.u8());
  m.sender = r.u32();
  m.recipient = recipient;
  m.payload = r.raw(r.remaining());
  return m;
}

// --- in-process ----------------------------------------------------------

InProcessTransport::InProcessTransport(std::uint32_t num_clients)
    : to_server_(num_clients), to_client_(num_clients), dirty_flag_(num_clients, false) {}

void InProcessTransport::client_send(const Message& m) {
  if (m.sender >= to_server_.size()) throw std::runtime_error("transport: bad sender");
  if (!dirty_flag_[m.sender]) {
    dirty_flag_[m.sender] = true;
    dirty_.push_back(m.sender);
  }
  to_server_[m.sender].push_back(m);
}

void InProcessTransport::server_send(const Message& m) {
  if (m.recipient >= to_client_.size()) throw std::runtime_error("transport: bad recipient");
  to_client_[m.recipient].push_back(m);
}

std::vector<Message> InProcessTransport::drain_server() {
  std::sort(dirty_.begin(), dirty_.end());
  std::vector<Message> out;
  for (std::uint32_t u : dirty_) {  // ascending sender, FIFO within each
    for (auto& m : to_server_[u]) out.push_back(std::move(m));
    to_server_[u].clear();
    dirty_flag_[u] = false;
  }
  dirty_.clear();
  return out;
}

std::vector<Message> InProcessTransport::drain_client(UserId u) {
  if (u >= to_client_.size()) throw std::runtime_error("transport: bad client");
  std::vector<Message> out(std::make_move_iterator(to_client_[u].begin()),
                           std::make_move_iterator(to_client_[u].end()));
  to_client_[u].clear();
  std::stable_sort(out.begin(), out.end(),
                   [](const Message& a, const Message& b) { return a.sender < b.sender; });
  return out;
}

// --- socket --------------------------------------------------------------

namespace {

void write_all(int fd, const std::uint8_t* p, std::size_t n) {
  while (n) {
    const ssize_t w = ::write(fd, p, n);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw std::runtime_error(std::string("transport write: ") + std::strerror(errno));
    }
    p += w;
    n -= static_cast<std::size_t>(w);
  }
}

// Envelope: u32 length | u32 recipient | frame. The recipient is routing
// metadata and stays outside the frame proper; relayed traffic keeps its
// destination across the uplink hop this way.
void send_framed(int fd, const Message& m) {
  const Bytes frame = encode_frame(m);
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(4 + frame.size()));
  w.u32(m.recipient);
  w.raw(frame);
  const Bytes& wire = w.data();
  write_all(fd, wire.data(), wire.size());
}

// appends whatever is pending on fd to buf without blocking
void slurp(int fd, Bytes& buf) {
  std::uint8_t tmp[4096];
  for (;;) {
    const ssize_t r = ::recv(fd, tmp, sizeof tmp, MSG_DONTWAIT);
    if (r > 0) {
      buf.insert(buf.end(), tmp, tmp + r);
      continue;
    }
    if (r < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) return;
    if (r < 0 && errno == EINTR) continue;
    if (r == 0) return;  // peer closed
    throw std::runtime_error(std::string("transport read: ") + std::strerror(errno));
  }
}

// pops complete length-prefixed frames from the front of buf
std::vector<Bytes> pop_frames(Bytes& buf) {
  std::vector<Bytes> frames;
  std::size_t off = 0;
  while (buf.size() - off >= 4) {
    std::uint32_t len = 0;
    for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(buf[off + i]) << (8 * i);
    if (buf.size() - off - 4 < len) break;
    frames.emplace_back(buf.begin() + static_cast<std::ptrdiff_t>(off + 4),
                        buf.begin() + static_cast<std::ptrdiff_t>(off + 4 + len));
    off += 4 + len;
  }
  buf.erase(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(off));
  return frames;
}

}  // namespace

SocketTransport::SocketTransport(std::uint32_t num_clients)
    : server_buf_(num_clients), client_buf_(num_clients) {
  server_fd_.resize(num_clients, -1);
  client_fd_.resize(num_clients, -1);
  for (std::uint32_t u = 0; u < num_clients; ++u) {
    int fds[2];
    if (::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) != 0)
      throw std::runtime_error(std::string("socketpair: ") + std::strerror(errno));
    server_fd_[u] = fds[0];
    client_fd_[u] = fds[1];
    const int sz = 4 * 1024 * 1024;  // whole-phase bursts must fit: no reader runs mid-send
    ::setsockopt(fds[0], SOL_SOCKET, SO_SNDBUF, &sz, sizeof sz);
    ::setsockopt(fds[1], SOL_SOCKET, SO_SNDBUF, &sz, sizeof sz);
    ::setsockopt(fds[0], SOL_SOCKET, SO_RCVBUF, &sz, sizeof sz);
    ::setsockopt(fds[1], SOL_SOCKET, SO_RCVBUF, &sz, sizeof sz);
  }
}

SocketTransport::~SocketTransport() {
  for (int fd : server_fd_)
    if (fd >= 0) ::close(fd);
  for (int fd : client_fd_)
    if (fd >= 0) ::close(fd);
}

void SocketTransport::client_send(const Message& m) {
  if (m.sender >= client_fd_.size()) throw std::runtime_error("transport: bad sender");
  send_framed(client_fd_[m.sender], m);
}

void SocketTransport::server_send(const Message& m) {
  if (m.recipient >= server_fd_.size()) throw std::runtime_error("transport: bad recipient");
  send_framed(server_fd_[m.recipient], m);
}

namespace {

Message decode_envelope(const Bytes& envelope) {
  if (envelope.size() < 4) throw std::runtime_error("transport: truncated envelope");
  std::uint32_t recipient = 0;
  for (int i = 0; i < 4; ++i) recipient |= static_cast<std::uint32_t>(envelope[i]) << (8 * i);
  return decode_frame(Bytes(envelope.begin() + 4, envelope.end()), recipient);
}

}  // namespace

std::vector<Message> SocketTransport::drain_server() {
  std::vector<Message> out;
  for (std::uint32_t u = 0; u < server_fd_.size(); ++u) {
    slurp(server_fd_[u], server_buf_[u]);
    for (const Bytes& f : pop_frames(server_buf_[u])) {
      Message m = decode_envelope(f);
      if (m.sender != u) throw std::runtime_error("transport: sender forged on channel");
      out.push_back(std::move(m));
    }
  }
  return out;
}

std::vector<Message> SocketTransport::drain_client(UserId u) {
  if (u >= client_fd_.size()) throw std::runtime_error("transport: bad client");
  slurp(client_fd_[u], client_buf_[u]);
  std::vector<Message> out;
  for (const Bytes& f : pop_frames(client_buf_[u])) {
    Message m = decode_envelope(f);
    if (m.recipient != u) throw std::runtime_error("transport: recipient forged on channel");
    out.push_back(std::move(m));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Message& a, const Message& b) { return a.sender < b.sender; });
  return out;
}

// --- transcript ----------------------------------------------------------

std::string transcript_line(const Message& m) {
  std::ostringstream os;
  os << "round=" << m.round << " type=" << msg_type_name(m.type) << " from=";
  if (m.sender == kServerId)
    os << "server";
  else
    os << m.sender;
  os << " to=";
  if (m.recipient == kServerId)
    os << "server";
  else
    os << m.recipient;
  os << " bytes=" << m.payload.size() << " payload=" << to_hex(m.payload);
  return os.str();
}

void Transcript::on_deliver(const Message& m) {
  ++total_;
  ++counts_[static_cast<std::uint8_t>(m.type)];
  if (full_) messages_.push_back(m);
}

std::uint64_t Transcript::count(MsgType t) const {
  auto it = counts_.find(static_cast<std::uint8_t>(t));
  return it == counts_.end() ? 0 : it->second;
}

std::string Transcript::to_text() const {
  std::ostringstream os;
  for (const auto& [t, n] : counts_)
    os << "count " << msg_type_name(static_cast<MsgType>(t)) << " " << n << "\n";
  for (const auto& m : messages_) os << transcript_line(m) << "\n";
  return os.str();
}

}  // namespace fedlight
