#include "medu/fl.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "medu/bitio.hpp"
#include "medu/errors.hpp"

namespace medu {
namespace {

constexpr char kCheckpointMagic[8] = {'M', 'E', 'D', 'U', 'C', 'K', 'P', 'T'};
constexpr std::uint16_t kCheckpointVersion = 1;

// Marsaglia-Tsang; the alpha < 1 case boosts through alpha + 1.
double gamma_sample(RngStream& stream, double alpha) {
  if (alpha < 1.0) {
    const double u = stream.uniform01();
    return gamma_sample(stream, alpha + 1.0) * std::pow(u, 1.0 / alpha);
  }
  const double d = alpha - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = stream.gaussian();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = 1.0 - stream.uniform01();  // (0, 1]
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

void parallel_for(std::size_t n, int threads,
                  const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mutex;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

// Shared loop behind run_fl and run_retrain. `skip` drops one client from
// every round; gradients and the mean divisor then cover the kept clients.
ParamVector run_loop(const FLConfig& cfg, const ClientData& clients,
                     std::optional<std::uint32_t> skip,
                     std::span<HistorySink* const> sinks,
                     std::vector<ParamVector>* trajectory) {
  cfg.validate();
  if (clients.size() != cfg.users) {
    throw std::invalid_argument("client count does not match config");
  }
  std::vector<std::uint32_t> kept;
  for (std::uint32_t u = 0; u < cfg.users; ++u) {
    if (!skip || *skip != u) kept.push_back(u);
  }
  for (std::uint32_t u : kept) {
    if (clients[u].empty()) {
      throw std::invalid_argument("client " + std::to_string(u + 1) +
                                  " has no data");
    }
  }

  ParamVector w = init_params(cfg.model, cfg.seed);
  if (trajectory) {
    trajectory->clear();
    trajectory->push_back(w);
  }
  const double inv_kept = 1.0 / static_cast<double>(kept.size());

  for (int t = 0; t <= cfg.final_round; ++t) {
    const double eta_t = cfg.eta.at(t);
    RoundGradients grads;
    grads.t = t;
    grads.per_user.resize(kept.size());
    parallel_for(kept.size(), cfg.threads, [&](std::size_t i) {
      const std::uint32_t u = kept[i];
      RngStream stream = derive_stream(cfg.seed, StreamTag::Batch,
                                       {static_cast<std::uint64_t>(t), u});
      grads.per_user[i] = local_update(cfg.model, w, clients[u], eta_t,
                                       cfg.local_epochs, cfg.batch_size, stream)
                              .effective_gradient;
    });

    // Index-ascending sum, then divide, then step.
    ParamVector mean(w.size(), 0.0);
    for (const ParamVector& g : grads.per_user) {
      for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += g[i];
    }
    for (std::size_t i = 0; i < mean.size(); ++i) {
      w[i] -= eta_t * (mean[i] * inv_kept);
    }

    for (HistorySink* sink : sinks) {
      try {
        sink->on_round(grads);
      } catch (const std::exception& e) {
        throw std::runtime_error("history sink failed at round " +
                                 std::to_string(t) +
                                 " (store is partial): " + e.what());
      }
    }
    if (trajectory) trajectory->push_back(w);
  }
  return w;
}

}  // namespace

EtaSchedule EtaSchedule::constant(double c) {
  if (!(c > 0.0)) throw std::invalid_argument("eta must be positive");
  EtaSchedule s;
  s.kind = Kind::Constant;
  s.value = c;
  return s;
}

EtaSchedule EtaSchedule::decaying(double a, double b0) {
  if (!(a > 0.0) || !(b0 > 0.0)) {
    throw std::invalid_argument("decaying schedule needs a > 0, b0 > 0");
  }
  EtaSchedule s;
  s.kind = Kind::Decaying;
  s.a = a;
  s.b0 = b0;
  return s;
}

double EtaSchedule::at(int t) const {
  if (t < 0) throw std::invalid_argument("round index must be non-negative");
  return kind == Kind::Constant ? value : a / (static_cast<double>(t) + b0);
}

void FLConfig::validate() const {
  if (users < 2) throw std::invalid_argument("need at least two users");
  if (final_round < 0) throw std::invalid_argument("final_round must be >= 0");
  if (local_epochs < 1 || batch_size < 1) {
    throw std::invalid_argument("local_epochs and batch_size must be positive");
  }
  if (threads < 1) throw std::invalid_argument("threads must be positive");
  eta.at(0);  // validates schedule parameters
  validate_spec(model);
  if (unlearn_user && *unlearn_user >= users) {
    throw std::invalid_argument("unlearn target out of range");
  }
}

ClientData partition_dirichlet(const Dataset& data, std::uint32_t users,
                               double concentration, RngStream& stream) {
  if (!(concentration > 0.0)) {
    throw std::invalid_argument("concentration must be positive");
  }
  if (users == 0) throw std::invalid_argument("need at least one client");
  if (data.examples.size() < users) {
    throw std::invalid_argument("dataset smaller than the client count");
  }

  ClientData clients(users);
  std::vector<std::vector<std::size_t>> by_class(
      static_cast<std::size_t>(data.num_classes));
  for (std::size_t i = 0; i < data.examples.size(); ++i) {
    by_class[static_cast<std::size_t>(data.examples[i].label)].push_back(i);
  }

  for (auto& idx : by_class) {
    if (idx.empty()) continue;
    stream.shuffle(idx);
    // Client proportions for this class.
    std::vector<double> props(users);
    double total = 0.0;
    for (auto& p : props) {
      p = gamma_sample(stream, concentration);
      total += p;
    }
    if (total <= 0.0) {
      props.assign(users, 1.0);
      total = static_cast<double>(users);
    }
    for (auto& p : props) p /= total;

    // Largest-remainder apportionment of the class count.
    const std::size_t n = idx.size();
    std::vector<std::size_t> counts(users);
    std::vector<std::pair<double, std::uint32_t>> remainders;
    std::size_t assigned = 0;
    for (std::uint32_t u = 0; u < users; ++u) {
      const double share = props[u] * static_cast<double>(n);
      counts[u] = static_cast<std::size_t>(std::floor(share));
      assigned += counts[u];
      remainders.emplace_back(share - std::floor(share), u);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < n; ++r, ++assigned) {
      counts[remainders[r % remainders.size()].second]++;
    }

    std::size_t cursor = 0;
    for (std::uint32_t u = 0; u < users; ++u) {
      for (std::size_t c = 0; c < counts[u]; ++c) {
        clients[u].push_back(data.examples[idx[cursor++]]);
      }
    }
  }

  // Every client must end up non-empty: move one example from the largest.
  for (std::uint32_t u = 0; u < users; ++u) {
    if (!clients[u].empty()) continue;
    std::uint32_t donor = 0;
    for (std::uint32_t v = 1; v < users; ++v) {
      if (clients[v].size() > clients[donor].size()) donor = v;
    }
    if (clients[donor].size() <= 1) {
      throw std::invalid_argument("dataset too small for non-empty clients");
    }
    clients[u].push_back(clients[donor].back());
    clients[donor].pop_back();
  }
  return clients;
}

FlRoundResult fl_round(const ParamVector& w, const ClientData& clients,
                       double eta_t, int t, const FLConfig& cfg) {
  for (std::size_t u = 0; u < clients.size(); ++u) {
    if (clients[u].empty()) {
      throw std::invalid_argument("client " + std::to_string(u + 1) +
                                  " has no data");
    }
  }
  FlRoundResult out;
  out.grads.t = t;
  out.grads.per_user.resize(clients.size());
  parallel_for(clients.size(), cfg.threads, [&](std::size_t u) {
    RngStream stream = derive_stream(cfg.seed, StreamTag::Batch,
                                     {static_cast<std::uint64_t>(t),
                                      static_cast<std::uint64_t>(u)});
    out.grads.per_user[u] = local_update(cfg.model, w, clients[u], eta_t,
                                         cfg.local_epochs, cfg.batch_size,
                                         stream)
                                .effective_gradient;
  });
  ParamVector mean(w.size(), 0.0);
  for (const ParamVector& g : out.grads.per_user) {
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += g[i];
  }
  const double inv = 1.0 / static_cast<double>(clients.size());
  out.next_params = w;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    out.next_params[i] -= eta_t * (mean[i] * inv);
  }
  return out;
}

ParamVector run_fl(const FLConfig& cfg, const ClientData& clients,
                   std::span<HistorySink* const> sinks,
                   std::vector<ParamVector>* trajectory) {
  return run_loop(cfg, clients, std::nullopt, sinks, trajectory);
}

ParamVector run_retrain(const FLConfig& cfg, const ClientData& clients,
                        std::uint32_t exclude,
                        std::span<HistorySink* const> sinks,
                        std::vector<ParamVector>* trajectory) {
  if (cfg.users < 2) {
    throw std::invalid_argument("retraining needs at least two users");
  }
  if (exclude >= cfg.users) {
    throw std::invalid_argument("excluded user out of range");
  }
  return run_loop(cfg, clients, exclude, sinks, trajectory);
}

void save_checkpoint(const std::filesystem::path& path, const ParamVector& w) {
  std::vector<std::uint8_t> bytes;
  write_bytes(bytes, kCheckpointMagic, sizeof(kCheckpointMagic));
  write_u16(bytes, kCheckpointVersion);
  write_u64(bytes, w.size());
  for (double v : w) write_f64(bytes, v);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

ParamVector load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  ByteReader reader(bytes, path.string());
  auto magic = reader.take(8);
  if (std::memcmp(magic.data(), kCheckpointMagic, 8) != 0) {
    throw ParseError(path.string() + ": bad checkpoint magic");
  }
  const std::uint16_t version = reader.u16();
  if (version != kCheckpointVersion) {
    throw ParseError(path.string() + ": unsupported checkpoint version " +
                     std::to_string(version));
  }
  const std::uint64_t m = reader.u64();
  if (reader.remaining() != m * 8) {
    throw ParseError(path.string() + ": payload size does not match M");
  }
  ParamVector w(m);
  for (auto& v : w) {
    v = reader.f64();
    if (!std::isfinite(v)) {
      throw ParseError(path.string() + ": non-finite parameter");
    }
  }
  return w;
}

}  // namespace medu
