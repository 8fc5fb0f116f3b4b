// Command-line driver. Every subcommand loads a dataset ("fixture" or a
// tab-separated ratings file), runs the requested trainer(s), and writes its
// artifacts under --out. Nothing here depends on wall-clock time or process
// identity: the same config produces byte-identical artifacts on every run.
//
// Exit codes: 0 pass, 1 failure (including a failed comparison or a dirty
// audit), 2 usage or config error.

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedlight/audit.hpp"
#include "fedlight/central.hpp"
#include "fedlight/dataset.hpp"
#include "fedlight/metrics.hpp"
#include "fedlight/protocol.hpp"
#include "fedlight/snapshot.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace fedlight;

namespace {

// Ratings at or above this count as positive interactions; the rest are
// dropped before the graph is built. Test positives use the same bar.
constexpr double kPositiveThreshold = 4.0;

// Config or flag values outside their domain; maps to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string dataset = "fixture";
  std::uint32_t layers = 3;
  std::uint32_t dim = 64;
  double lr = 0.01;
  std::uint32_t epochs = 100;
  double l2 = 1e-4;
  std::uint64_t seed = 0;
  std::uint32_t topn = 5;
  std::string crypto = "real";
  double tol = 1e-9;
  std::uint32_t threads = 1;
  std::string out = "out";
  std::string test_path;           // evaluate only
  std::string side = "federated";  // evaluate only
  bool full_transcript = false;    // audit-transcript turns this on itself
  std::string config_path;
};

// The shared option set exists on every subcommand so flags can follow the
// subcommand name. A config file fills in whatever the command line left
// unset; a flag given explicitly always wins (see apply_config).
void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config_path,
                  "key=value config file; explicit flags override its entries");
  cmd->add_option("--dataset", o.dataset,
                  "'fixture' or a ratings file (user<TAB>item<TAB>rating<TAB>timestamp)")
      ->capture_default_str();
  cmd->add_option("--layers", o.layers, "propagation depth")->capture_default_str();
  cmd->add_option("--dim", o.dim, "embedding width")->capture_default_str();
  cmd->add_option("--lr", o.lr, "learning rate")->capture_default_str();
  cmd->add_option("--epochs,--T", o.epochs, "training epochs")->capture_default_str();
  cmd->add_option("--l2", o.l2, "weight decay coefficient")->capture_default_str();
  cmd->add_option("--seed", o.seed, "master seed; fixes every random draw")
      ->capture_default_str();
  cmd->add_option("--topn", o.topn, "recommendation list length")->capture_default_str();
  cmd->add_option("--crypto", o.crypto, "payload protection mode: real or transparent")
      ->capture_default_str();
  cmd->add_option("--tol", o.tol, "relative tolerance for trajectory comparison")
      ->capture_default_str();
  cmd->add_option("--threads", o.threads, "client worker threads (output is identical)")
      ->capture_default_str();
  cmd->add_option("--out", o.out, "artifact directory, created if missing")
      ->capture_default_str();
  cmd->add_flag("--full-transcript", o.full_transcript,
                "store full message bodies in transcript.log, not just counters");
  cmd->add_option("--test", o.test_path, "held-out ratings file (evaluate)");
  cmd->add_option("--side", o.side,
                  "which trainer produces the scored rankings: federated or centralized")
      ->capture_default_str();
}

std::string strip(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::uint64_t config_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw UsageError("config: bad value for " + key + ": '" + v + "'");
  return out;
}

std::uint32_t config_u32(const std::string& key, const std::string& v) {
  const std::uint64_t wide = config_u64(key, v);
  if (wide > 0xffffffffull) throw UsageError("config: value for " + key + " out of range");
  return static_cast<std::uint32_t>(wide);
}

double config_f64(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw UsageError("config: bad value for " + key + ": '" + v + "'");
  return out;
}

bool config_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw UsageError("config: bad value for " + key + ": '" + v + "'");
}

// key=value per line, '#' comments, later entries win. Keys are the long flag
// names without dashes; "T" is accepted for "epochs". A key whose flag was
// given on the command line is skipped: flags outrank the file. One file can
// serve every subcommand, so keys some command ignores are still accepted.
void apply_config(CLI::App* cmd, Options& o) {
  std::ifstream in(o.config_path);
  if (!in) throw UsageError("config: cannot open " + o.config_path);
  const auto given = [&](const char* flag) {
    const CLI::Option* opt = cmd->get_option_no_throw(flag);
    return opt != nullptr && opt->count() > 0;
  };
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = strip(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw UsageError("config line " + std::to_string(line_no) + ": expected key=value");
    const std::string key = strip(t.substr(0, eq));
    const std::string value = strip(t.substr(eq + 1));
    if (key == "dataset") {
      if (!given("--dataset")) o.dataset = value;
    } else if (key == "layers") {
      if (!given("--layers")) o.layers = config_u32(key, value);
    } else if (key == "dim") {
      if (!given("--dim")) o.dim = config_u32(key, value);
    } else if (key == "lr") {
      if (!given("--lr")) o.lr = config_f64(key, value);
    } else if (key == "epochs" || key == "T") {
      if (!given("--epochs")) o.epochs = config_u32(key, value);
    } else if (key == "l2") {
      if (!given("--l2")) o.l2 = config_f64(key, value);
    } else if (key == "seed") {
      if (!given("--seed")) o.seed = config_u64(key, value);
    } else if (key == "topn") {
      if (!given("--topn")) o.topn = config_u32(key, value);
    } else if (key == "crypto") {
      if (!given("--crypto")) o.crypto = value;
    } else if (key == "tol") {
      if (!given("--tol")) o.tol = config_f64(key, value);
    } else if (key == "threads") {
      if (!given("--threads")) o.threads = config_u32(key, value);
    } else if (key == "out") {
      if (!given("--out")) o.out = value;
    } else if (key == "test") {
      if (!given("--test")) o.test_path = value;
    } else if (key == "side") {
      if (!given("--side")) o.side = value;
    } else if (key == "full-transcript") {
      if (!given("--full-transcript")) o.full_transcript = config_bool(key, value);
    } else {
      throw UsageError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
  }
}

// One authority for value domains, whatever the source: command line and
// config file both land here before any work starts.
void validate_options(const Options& o, bool needs_test) {
  if (o.dataset.empty()) throw UsageError("dataset must be 'fixture' or a ratings file path");
  if (o.dim == 0) throw UsageError("dim must be >= 1");
  if (!(o.lr > 0.0) || !std::isfinite(o.lr)) throw UsageError("lr must be positive and finite");
  if (!(o.l2 >= 0.0) || !std::isfinite(o.l2))
    throw UsageError("l2 must be non-negative and finite");
  if (o.topn == 0) throw UsageError("topn must be >= 1");
  if (o.crypto != "real" && o.crypto != "transparent")
    throw UsageError("crypto must be 'real' or 'transparent'");
  if (!(o.tol > 0.0) || !std::isfinite(o.tol))
    throw UsageError("tol must be positive and finite");
  if (o.threads == 0 || o.threads > 256) throw UsageError("threads must be in [1, 256]");
  if (o.out.empty()) throw UsageError("out must name a directory");
  if (o.side != "federated" && o.side != "centralized")
    throw UsageError("side must be 'federated' or 'centralized'");
  if (needs_test && o.test_path.empty())
    throw UsageError("evaluate needs --test (held-out ratings file)");
}

struct DataBundle {
  InteractionGraph graph;
  PositiveSet positives;  // original-id mapping; identity for the fixture
};

DataBundle load_bundle(const Options& o) {
  DataBundle b;
  if (o.dataset == "fixture") {
    b.graph = fixture_graph();
    // the fixture is already densely numbered, so the mapping is identity
    for (UserId u = 0; u < b.graph.num_users; ++u) {
      b.positives.user_original.push_back(u);
      b.positives.user_index[u] = u;
    }
    for (ItemId i = 0; i < b.graph.num_items; ++i) {
      b.positives.item_original.push_back(i);
      b.positives.item_index[i] = i;
    }
    b.positives.edges = b.graph.edges();
    return b;
  }
  const auto records = load_movielens(o.dataset);
  b.positives = filter_positive(records, kPositiveThreshold);
  if (b.positives.edges.empty())
    throw std::runtime_error("dataset: no rating reaches the positive threshold " +
                             std::to_string(kPositiveThreshold));
  b.graph = build_graph(b.positives.edges);
  return b;
}

TrainConfig train_config(const Options& o) {
  TrainConfig cfg;
  cfg.layers = o.layers;
  cfg.dim = o.dim;
  cfg.lr = o.lr;
  cfg.epochs = o.epochs;
  cfg.l2 = o.l2;
  cfg.seed = o.seed;
  cfg.validate();
  return cfg;
}

RunConfig fed_config(const Options& o) {
  RunConfig cfg;
  cfg.train = train_config(o);
  cfg.crypto_mode = o.crypto;
  cfg.threads = o.threads;
  cfg.topn = o.topn;
  cfg.full_transcript = o.full_transcript;
  cfg.verbose_access_log = o.full_transcript;
  return cfg;
}

void write_text_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
  if (!out) throw std::runtime_error("short write on " + p.string());
}

ordered_json base_report(const std::string& command, const Options& o, const DataBundle& b) {
  ordered_json j;
  j["command"] = command;
  j["dataset"] = o.dataset;
  j["config"] = {{"layers", o.layers}, {"dim", o.dim},       {"lr", o.lr},
                 {"epochs", o.epochs}, {"l2", o.l2},         {"seed", o.seed},
                 {"topn", o.topn},     {"crypto", o.crypto}, {"tol", o.tol},
                 {"threads", o.threads}};
  j["graph"] = {{"users", b.graph.num_users},
                {"items", b.graph.num_items},
                {"edges", b.graph.num_edges()}};
  return j;
}

// report.txt is the flat rendering of report.json: one dotted-path line per
// leaf, values in JSON literal form so doubles round-trip.
void render_text(const ordered_json& j, const std::string& prefix, std::ostream& os) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object())
      render_text(*it, key, os);
    else
      os << key << " = " << it->dump() << "\n";
  }
}

void write_reports(const fs::path& dir, const ordered_json& j) {
  write_text_file(dir / "report.json", j.dump(2) + "\n");
  std::ostringstream os;
  render_text(j, "", os);
  write_text_file(dir / "report.txt", os.str());
}

ordered_json message_counts(const Transcript& t) {
  ordered_json counts = ordered_json::object();
  for (std::uint8_t raw = 1; raw <= static_cast<std::uint8_t>(MsgType::kNegItemEmbeds); ++raw) {
    const auto n = t.count(static_cast<MsgType>(raw));
    if (n) counts[msg_type_name(static_cast<MsgType>(raw))] = n;
  }
  return counts;
}

// Runs the federated side end to end and leaves snapshot/rankings/logs under
// `dir` with the given artifact names.
struct FedArtifacts {
  std::vector<std::vector<ItemId>> rankings;
  double final_loss = 0.0;
  std::uint32_t users_skipped = 0;
};

FedArtifacts run_federated_side(FederatedRun& run, const DataBundle& b, const Options& o,
                                const fs::path& dir, const std::string& snapshot_name,
                                const std::string& rankings_name) {
  FedArtifacts a;
  SnapshotWriter snap((dir / snapshot_name).string(), b.graph.num_users, b.graph.num_items,
                      o.dim);
  run.train(&snap);
  snap.close();
  a.rankings = run.run_predict(o.topn);
  write_rankings((dir / rankings_name).string(), a.rankings);
  write_text_file(dir / "transcript.log", run.transcript().to_text());
  write_text_file(dir / "access.log", run.access_log().to_text());
  if (!run.epoch_stats().empty()) {
    a.final_loss = run.epoch_stats().back().loss;
    a.users_skipped = run.epoch_stats().back().users_skipped;
  }
  return a;
}

struct CentralArtifacts {
  std::vector<std::vector<ItemId>> rankings;
  double final_loss = 0.0;
  std::uint32_t users_skipped = 0;
};

CentralArtifacts run_central_side(CentralTrainer& trainer, const DataBundle& b, const Options& o,
                                  const fs::path& dir, const std::string& snapshot_name,
                                  const std::string& rankings_name) {
  CentralArtifacts a;
  SnapshotWriter snap((dir / snapshot_name).string(), b.graph.num_users, b.graph.num_items,
                      o.dim);
  trainer.train([&](const EpochStats& s, const EmbeddingMap& theta) {
    snap.append(s.epoch, s.loss, theta);
    a.final_loss = s.loss;
    a.users_skipped = s.users_skipped;
  });
  snap.close();
  a.rankings = trainer.predict(o.topn);
  write_rankings((dir / rankings_name).string(), a.rankings);
  return a;
}

int cmd_train_federated(const Options& o) {
  const DataBundle b = load_bundle(o);
  fs::create_directories(o.out);
  FederatedRun run(b.graph, fed_config(o));
  const FedArtifacts a = run_federated_side(run, b, o, o.out, "snapshot.bin", "rankings.txt");
  ordered_json j = base_report("train-federated", o, b);
  j["result"] = {{"final_loss", a.final_loss},
                 {"users_skipped_last_epoch", a.users_skipped},
                 {"messages_total", run.transcript().total()},
                 {"message_counts", message_counts(run.transcript())}};
  write_reports(o.out, j);
  std::cout << "train-federated: " << o.epochs << " epochs, final loss " << a.final_loss
            << ", artifacts in " << o.out << "\n";
  return 0;
}

int cmd_train_centralized(const Options& o) {
  const DataBundle b = load_bundle(o);
  fs::create_directories(o.out);
  CentralTrainer trainer(b.graph, train_config(o));
  const CentralArtifacts a =
      run_central_side(trainer, b, o, o.out, "snapshot.bin", "rankings.txt");
  ordered_json j = base_report("train-centralized", o, b);
  j["result"] = {{"final_loss", a.final_loss}, {"users_skipped_last_epoch", a.users_skipped}};
  write_reports(o.out, j);
  std::cout << "train-centralized: " << o.epochs << " epochs, final loss " << a.final_loss
            << ", artifacts in " << o.out << "\n";
  return 0;
}

int cmd_compare(const Options& o) {
  const DataBundle b = load_bundle(o);
  fs::create_directories(o.out);

  CentralTrainer trainer(b.graph, train_config(o));
  const CentralArtifacts central =
      run_central_side(trainer, b, o, o.out, "centralized.bin", "rankings_centralized.txt");

  FederatedRun run(b.graph, fed_config(o));
  const FedArtifacts fed =
      run_federated_side(run, b, o, o.out, "federated.bin", "rankings_federated.txt");

  const TrajectoryComparison cmp = compare_trajectories(
      (fs::path(o.out) / "federated.bin").string(), (fs::path(o.out) / "centralized.bin").string(),
      o.tol);
  const RankingComparison rk = compare_rankings(fed.rankings, central.rankings);
  const bool pass = cmp.error.empty() && cmp.within_tolerance && rk.identical;

  ordered_json j = base_report("compare", o, b);
  j["comparison"] = {{"max_rel_diff", cmp.max_rel_diff},
                     {"first_divergent_epoch", cmp.first_divergent_epoch},
                     {"within_tolerance", cmp.within_tolerance},
                     {"rankings_identical", rk.identical},
                     {"first_mismatch_user", rk.first_mismatch_user},
                     {"federated_final_loss", fed.final_loss},
                     {"centralized_final_loss", central.final_loss},
                     {"pass", pass}};
  if (!cmp.error.empty()) j["comparison"]["error"] = cmp.error;
  write_reports(o.out, j);

  if (pass) {
    std::cout << "compare: PASS, " << o.epochs << " epochs within " << o.tol << " (max rel "
              << cmp.max_rel_diff << "), rankings identical\n";
    return 0;
  }
  std::cout << "compare: FAIL";
  if (!cmp.error.empty())
    std::cout << ", " << cmp.error;
  else if (!cmp.within_tolerance)
    std::cout << ", trajectories diverge at epoch " << cmp.first_divergent_epoch << " (max rel "
              << cmp.max_rel_diff << " > " << o.tol << ")";
  else
    std::cout << ", rankings differ first at user " << rk.first_mismatch_user;
  std::cout << "\n";
  return 1;
}

int cmd_evaluate(const Options& o) {
  const DataBundle b = load_bundle(o);
  const auto test_records = load_movielens(o.test_path);
  const auto test_positives = map_test_positives(test_records, b.positives, kPositiveThreshold);

  fs::create_directories(o.out);
  std::vector<std::vector<ItemId>> rankings;
  if (o.side == "federated") {
    FederatedRun run(b.graph, fed_config(o));
    rankings = run_federated_side(run, b, o, o.out, "snapshot.bin", "rankings.txt").rankings;
  } else {
    CentralTrainer trainer(b.graph, train_config(o));
    rankings = run_central_side(trainer, b, o, o.out, "snapshot.bin", "rankings.txt").rankings;
  }

  const RankingMetrics m = precision_recall_at_n(rankings, test_positives, o.topn);
  ordered_json j = base_report("evaluate", o, b);
  j["evaluation"] = {{"side", o.side},
                     {"test", o.test_path},
                     {"n", o.topn},
                     {"precision", m.precision},
                     {"recall", m.recall},
                     {"users_evaluated", m.users_evaluated}};
  write_reports(o.out, j);
  std::cout << "evaluate (" << o.side << "): precision@" << o.topn << " = " << m.precision
            << ", recall@" << o.topn << " = " << m.recall << " over " << m.users_evaluated
            << " users\n";
  return 0;
}

int cmd_audit_transcript(Options o) {
  o.full_transcript = true;  // the audit walks stored message bodies
  const DataBundle b = load_bundle(o);
  fs::create_directories(o.out);

  FederatedRun run(b.graph, fed_config(o));
  run.train(nullptr);
  run.run_predict(o.topn);  // prediction traffic is part of the audited surface
  write_text_file(fs::path(o.out) / "transcript.log", run.transcript().to_text());
  write_text_file(fs::path(o.out) / "access.log", run.access_log().to_text());

  const AuditReport report =
      audit_run(run.transcript(), run.access_log(), run.server(), run.secret_material());
  const bool open_payloads = o.crypto == "transparent";
  const bool clean = report.clean(open_payloads);

  ordered_json j = base_report("audit-transcript", o, b);
  j["audit"] = {{"messages_checked", report.messages_checked},
                {"server_crypto_ops", report.server_crypto_ops},
                {"schema_violations", report.schema_violations},
                {"secret_hits_transcript", report.secret_hits_transcript},
                {"secret_hits_server_state", report.secret_hits_server_state},
                {"notes", report.notes},
                {"clean", clean}};
  write_reports(o.out, j);

  std::cout << report.to_text();
  std::cout << "audit-transcript: " << (clean ? "CLEAN" : "DIRTY") << " (" << o.crypto
            << " mode)\n";
  return clean ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "federated LightGCN driver: train, compare against the full-graph"
      " trainer, evaluate, or audit a protocol transcript"};
  app.require_subcommand(1);

  Options o;
  CLI::App* train_fed = app.add_subcommand(
      "train-federated", "run the protocol simulation and write its artifacts");
  CLI::App* train_cen =
      app.add_subcommand("train-centralized", "run the full-graph trainer on the same data");
  CLI::App* compare = app.add_subcommand(
      "compare", "run both sides and verify per-epoch equivalence and ranking identity");
  CLI::App* evaluate =
      app.add_subcommand("evaluate", "train one side and score it against held-out ratings");
  CLI::App* audit = app.add_subcommand(
      "audit-transcript", "run the protocol and check what the server saw against the privacy contract");
  for (CLI::App* cmd : {train_fed, train_cen, compare, evaluate, audit}) add_common(cmd, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  CLI::App* active = nullptr;
  for (CLI::App* cmd : {train_fed, train_cen, compare, evaluate, audit})
    if (cmd->parsed()) active = cmd;

  try {
    if (!o.config_path.empty()) apply_config(active, o);
    validate_options(o, active == evaluate);
    if (active == train_fed) return cmd_train_federated(o);
    if (active == train_cen) return cmd_train_centralized(o);
    if (active == compare) return cmd_compare(o);
    if (active == evaluate) return cmd_evaluate(o);
    return cmd_audit_transcript(o);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
