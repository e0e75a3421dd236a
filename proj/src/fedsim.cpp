#include "protofed/fedsim.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

#include "protofed/errors.hpp"
#include "protofed/losses.hpp"

namespace protofed {

std::vector<int> sample_clients(std::size_t num_clients, double rate, Rng& rng) {
  if (!(rate > 0) || rate > 1) throw ConfigError("participation rate must lie in (0, 1]");
  const auto k = std::min(num_clients, static_cast<std::size_t>(std::ceil(rate * static_cast<double>(num_clients) - 1e-9)));
  std::vector<int> ids(num_clients);
  std::iota(ids.begin(), ids.end(), 0);
  if (k < num_clients) {
    // Partial Fisher-Yates: the first k slots are a uniform k-subset.
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, num_clients - 1);
      std::swap(ids[i], ids[pick(rng)]);
    }
    ids.resize(k);
    std::sort(ids.begin(), ids.end());
  }
  return ids;
}

ParamStore fedavg_aggregate(std::span<const ClientUpdate> updates) {
  if (updates.empty()) throw LayoutError("fedavg_aggregate needs at least one update");
  const Layout layout = updates[0].params.layout();
  std::size_t total = 0;
  for (const auto& u : updates) {
    if (u.params.layout() != layout) throw LayoutError("client updates have differing parameter layouts");
    total += u.num_samples;
  }
  if (total == 0) throw DataError("fedavg_aggregate: updates carry no samples");
  const std::vector<double> base = updates[0].params.flatten();
  std::vector<double> acc = base;
  for (std::size_t i = 0; i < updates.size(); ++i) {
    const double w = static_cast<double>(updates[i].num_samples) / static_cast<double>(total);
    const std::vector<double> flat = updates[i].params.flatten();
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += w * (flat[j] - base[j]);
  }
  return ParamStore::unflatten(layout, acc);
}

void LossTotals::add(const LossTotals& o) {
  total += o.total;
  ce += o.ce;
  cmpr += o.cmpr;
  cmpc += o.cmpc;
  cma += o.cma;
  prox += o.prox;
  batches += o.batches;
}

LossTotals LossTotals::mean() const {
  if (batches == 0) return *this;
  const double b = static_cast<double>(batches);
  return {total / b, ce / b, cmpr / b, cmpc / b, cma / b, prox / b, 1};
}

std::size_t thread_count() {
  if (const char* env = std::getenv("PROTOFED_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) return static_cast<std::size_t>(v);
  }
  return 1;
}

namespace {

bool uses_prototypes(AlgorithmKind a) {
  return a == AlgorithmKind::MFCPL || a == AlgorithmKind::MFCPL_UNIMODAL || a == AlgorithmKind::FEDPROTO;
}

LossToggles effective_toggles(const ExperimentConfig& cfg) {
  switch (cfg.algorithm) {
    case AlgorithmKind::MFCPL:
    case AlgorithmKind::MFCPL_UNIMODAL: return cfg.toggles;
    case AlgorithmKind::FEDPROTO: return {true, false, false};
    case AlgorithmKind::FEDAVG:
    case AlgorithmKind::FEDPROX: return LossToggles::none();
  }
  return LossToggles::none();
}

/// Per class, the mean of U_m^k over the modalities in `available` that hold class k.
PrototypeSet unimodal_target(std::span<const PrototypeSet> per_modality, const ModalitySet& available) {
  if (per_modality.empty()) return {};
  const std::size_t K = per_modality[0].num_classes(), d = per_modality[0].dim();
  PrototypeSet out(K, d);
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<double> acc(d, 0.0);
    std::size_t n = 0;
    for (std::size_t m = 0; m < per_modality.size(); ++m) {
      if (!available[m] || !per_modality[m].has(k)) continue;
      const auto& v = per_modality[m].at(k).vector;
      for (std::size_t j = 0; j < d; ++j) acc[j] += v[j];
      ++n;
    }
    if (n == 0) continue;
    for (double& v : acc) v /= static_cast<double>(n);
    out.set(k, std::move(acc), n);
  }
  return out;
}

/// CMPC restricted to modalities whose prototype table is nonempty.
std::optional<ad::Var> cmpc_per_modality(std::span<const ad::Var> zprimes, const Tensor& presence,
                                         std::span<const int> labels, std::span<const PrototypeSet> tables,
                                         double tau) {
  std::vector<std::size_t> keep;
  for (std::size_t m = 0; m < tables.size(); ++m)
    if (!tables[m].empty()) keep.push_back(m);
  if (keep.empty()) return std::nullopt;
  const std::size_t B = presence.dim(0);
  std::vector<ad::Var> zs;
  std::vector<const PrototypeSet*> ts;
  Tensor sub(Shape{B, keep.size()});
  for (std::size_t c = 0; c < keep.size(); ++c) {
    zs.push_back(zprimes[keep[c]]);
    ts.push_back(&tables[keep[c]]);
    for (std::size_t i = 0; i < B; ++i) sub.at(i, c) = presence.at(i, keep[c]);
  }
  return cmpc_loss(zs, sub, labels, ts, tau);
}

constexpr std::size_t kEvalChunk = 512;

}  // namespace

Federation::Federation(ExperimentConfig cfg, std::shared_ptr<const MultimodalDataset> data, std::uint64_t seed)
    : cfg_(std::move(cfg)), data_(std::move(data)), seed_(seed), net_(make_net_spec(cfg_, *data_)) {
  cfg_.validate();
  shards_ = build_shards(*data_, cfg_.shard_options(), seed_);
  Rng init = stream(seed_, Purpose::Init);
  state_.theta = net_.init_params(init);
}

LocalResult Federation::local_update(std::size_t client, const ServerState& server, int round) const {
  const ClientShard& shard = shards_.at(client);
  const std::size_t n = shard.size();
  const LossToggles toggles = effective_toggles(cfg_);
  const LossWeights weights = cfg_.loss_weights();
  const bool unimodal = cfg_.algorithm == AlgorithmKind::MFCPL_UNIMODAL;
  const bool have_complete = !server.complete.empty();
  const PrototypeSet cmpr_target = unimodal ? unimodal_target(server.unimodal, shard.available) : server.complete;

  LocalResult out;
  out.client_id = shard.client_id;
  out.num_samples = n;
  out.params = server.theta;
  ParamStore& theta = out.params;

  Rng order_rng = stream(seed_, Purpose::LocalTrain, static_cast<std::uint64_t>(round), client);
  Rng drop_rng = stream(seed_, Purpose::Dropout, static_cast<std::uint64_t>(round), client);
  const ForwardOptions train_opts{cfg_.stochastic, &drop_rng};
  std::vector<std::size_t> positions(n);
  std::iota(positions.begin(), positions.end(), std::size_t{0});

  auto fail = [&](const std::string& what) {
    return TrainingError("round " + std::to_string(round) + ", client " + std::to_string(shard.client_id) + ": " + what);
  };

  for (std::size_t epoch = 0; epoch < cfg_.local_epochs; ++epoch) {
    std::shuffle(positions.begin(), positions.end(), order_rng);
    for (std::size_t start = 0; start < n; start += cfg_.batch) {
      const std::size_t end = std::min(n, start + cfg_.batch);
      const std::span<const std::size_t> rows(positions.data() + start, end - start);
      const MultimodalBatch batch = shard_batch(*data_, shard, rows);
      LossTotals step;
      step.batches = 1;
      try {
        ad::Tape tape;
        const BoundParams bound = bind(tape, theta);
        const ForwardResult f = net_.forward_full(tape, bound, batch, train_opts);
        LossParts parts{cross_entropy(f.logits, batch.labels), std::nullopt, std::nullopt, std::nullopt};
        if (toggles.cmpr && !cmpr_target.empty()) parts.cmpr = cmpr_loss(f.r, batch.labels, cmpr_target);
        if (toggles.cmpc) {
          if (unimodal) {
            parts.cmpc = cmpc_per_modality(f.zprime, batch.presence, batch.labels, server.unimodal, cfg_.tau);
          } else if (have_complete) {
            parts.cmpc = cmpc_loss(f.zprime, batch.presence, batch.labels, server.complete, cfg_.tau);
          }
        }
        if (toggles.cma) parts.cma = cma_loss(f.zprime, batch.presence, cfg_.cma_kind);
        const ad::Var loss = total_loss(parts, weights, toggles);
        step.ce = parts.ce.value().item();
        if (parts.cmpr) step.cmpr = parts.cmpr->value().item();
        if (parts.cmpc) step.cmpc = parts.cmpc->value().item();
        if (parts.cma) step.cma = parts.cma->value().item();
        step.total = loss.value().item();
        tape.backward(loss);
        std::vector<Tensor> grads = collect_grads(tape, bound.vars);
        if (cfg_.algorithm == AlgorithmKind::FEDPROX) {
          // (mu/2)||theta - theta_t||^2 contributes mu (theta - theta_t).
          double prox = 0;
          for (std::size_t i = 0; i < theta.count(); ++i) {
            auto g = grads[i].data();
            const auto p = theta[i].data();
            const auto p0 = server.theta[i].data();
            for (std::size_t j = 0; j < g.size(); ++j) {
              const double diff = p[j] - p0[j];
              g[j] += cfg_.mu * diff;
              prox += diff * diff;
            }
          }
          step.prox = 0.5 * cfg_.mu * prox;
          step.total += step.prox;
        }
        if (!std::isfinite(step.total)) throw NumericError("non-finite loss");
        sgd_step(theta, grads, cfg_.lr, cfg_.weight_decay);
      } catch (const NumericError& e) {
        throw fail(e.what());
      }
      out.losses.add(step);
    }
  }

  if (!uses_prototypes(cfg_.algorithm) || n == 0) return out;

  // Local prototypes from the updated model, evaluation mode, all local samples.
  const std::size_t M = data_->num_modalities();
  const std::size_t d = net_.spec().proj_dim, K = data_->num_classes;
  Tensor r_all(Shape{n, d});
  std::vector<int> labels(n);
  std::vector<Tensor> c_all;
  std::vector<std::vector<double>> c_mask;
  if (unimodal) {
    c_all.assign(M, Tensor(Shape{n, d}));
    c_mask.assign(M, std::vector<double>(n, 0.0));
  }
  try {
    for (std::size_t start = 0; start < n; start += kEvalChunk) {
      const std::size_t end = std::min(n, start + kEvalChunk);
      std::vector<std::size_t> rows(end - start);
      std::iota(rows.begin(), rows.end(), start);
      const MultimodalBatch batch = shard_batch(*data_, shard, rows);
      ad::Tape tape;
      const BoundParams bound = bind(tape, theta);
      std::vector<ad::Var> z;
      for (std::size_t m = 0; m < M; ++m) z.push_back(net_.encode(bound, tape.constant(batch.inputs[m]), m));
      const ad::Var r = net_.project_shared(bound, net_.fuse(bound, z).fused);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        labels[start + i] = batch.labels[i];
        for (std::size_t j = 0; j < d; ++j) r_all.at(start + i, j) = r.value().at(i, j);
      }
      if (unimodal) {
        for (std::size_t m = 0; m < M; ++m) {
          if (!shard.available[m]) continue;
          const ad::Var c = net_.project_shared(bound, net_.fuse(bound, std::span<const ad::Var>(&z[m], 1)).fused);
          for (std::size_t i = 0; i < rows.size(); ++i) {
            c_mask[m][start + i] = batch.presence.at(i, m);
            for (std::size_t j = 0; j < d; ++j) c_all[m].at(start + i, j) = c.value().at(i, j);
          }
        }
      }
    }
  } catch (const NumericError& e) {
    throw fail(e.what());
  }
  out.prototypes = compute_local_prototypes(shard.client_id, r_all, labels, K);
  if (unimodal) {
    for (std::size_t m = 0; m < M; ++m) {
      const bool any = std::any_of(c_mask[m].begin(), c_mask[m].end(), [](double v) { return v != 0.0; });
      if (!any) {
        out.unimodal.push_back({shard.client_id, PrototypeSet(K, d)});
        continue;
      }
      out.unimodal.push_back(compute_local_prototypes(shard.client_id, c_all[m], labels, K, c_mask[m]));
    }
  }
  return out;
}

RoundReport Federation::run_round() {
  const auto t0 = std::chrono::steady_clock::now();
  const int round = state_.round + 1;
  RoundReport report;
  report.round = round;
  Rng sampler = stream(seed_, Purpose::Sampling, static_cast<std::uint64_t>(round));
  report.clients = sample_clients(shards_.size(), cfg_.participation, sampler);

  const std::size_t P = report.clients.size();
  std::vector<std::optional<LocalResult>> results(P);
  const std::size_t workers = std::min(thread_count(), P);
  if (workers <= 1) {
    for (std::size_t i = 0; i < P; ++i)
      results[i] = local_update(static_cast<std::size_t>(report.clients[i]), state_, round);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto work = [&] {
      for (std::size_t i; (i = next.fetch_add(1)) < P;) {
        try {
          results[i] = local_update(static_cast<std::size_t>(report.clients[i]), state_, round);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
  }

  // Order-fixed reduction at the barrier.
  std::vector<ClientUpdate> updates;
  std::vector<LocalPrototypeSet> locals;
  std::vector<std::vector<LocalPrototypeSet>> uni(data_->num_modalities());
  LossTotals losses;
  for (auto& r : results) {
    LossTotals mean = r->losses.mean();
    mean.batches = 1;
    losses.add(mean);
    if (r->prototypes) locals.push_back(std::move(*r->prototypes));
    for (std::size_t m = 0; m < r->unimodal.size(); ++m)
      if (!r->unimodal[m].prototypes.empty()) uni[m].push_back(std::move(r->unimodal[m]));
    updates.push_back({std::move(r->params), r->num_samples});
  }
  report.losses = losses.mean();
  state_.theta = fedavg_aggregate(updates);
  if (uses_prototypes(cfg_.algorithm)) {
    state_.complete = aggregate_complete(locals, round).prototypes;
    if (cfg_.algorithm == AlgorithmKind::MFCPL_UNIMODAL) {
      state_.unimodal.clear();
      for (std::size_t m = 0; m < uni.size(); ++m) {
        PrototypeSet set = aggregate_complete(uni[m], round).prototypes;
        if (uni[m].empty()) set = PrototypeSet(data_->num_classes, net_.spec().proj_dim);
        state_.unimodal.push_back(std::move(set));
      }
    }
  }
  state_.round = round;

  const EvalResult val = evaluate(state_.theta, Split::Val);
  report.val_metric = val.value;
  report.val_accuracy = val.accuracy;
  report.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

EvalResult Federation::evaluate(const ParamStore& params, Split split) const {
  const std::vector<std::size_t> rows = data_->indices(split);
  if (rows.empty()) throw DataError(std::string("the ") + split_name(split) + " split is empty");
  const std::size_t M = data_->num_modalities(), K = data_->num_classes;
  Tensor presence(Shape{rows.size(), M}, 1.0);
  if (cfg_.test_missing) {
    Rng rng = stream({seed_, static_cast<std::uint64_t>(Purpose::Missingness), 0x7e57, static_cast<std::uint64_t>(split)});
    const auto sets = assign_missing_modalities(rows.size(), M, cfg_.q, rng);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t m = 0; m < M; ++m) presence.at(i, m) = sets[i][m] ? 1.0 : 0.0;
  }
  std::vector<double> logits;
  logits.reserve(rows.size() * K);
  std::vector<int> labels;
  for (std::size_t start = 0; start < rows.size(); start += kEvalChunk) {
    const std::size_t end = std::min(rows.size(), start + kEvalChunk);
    Tensor sub(Shape{end - start, M});
    for (std::size_t i = start; i < end; ++i)
      for (std::size_t m = 0; m < M; ++m) sub.at(i - start, m) = presence.at(i, m);
    const MultimodalBatch batch =
        assemble_batch(*data_, std::span<const std::size_t>(rows).subspan(start, end - start), std::move(sub));
    ad::Tape tape;
    const BoundParams bound = bind(tape, params);
    std::vector<ad::Var> z;
    for (std::size_t m = 0; m < M; ++m) z.push_back(net_.encode(bound, tape.constant(batch.inputs[m]), m));
    const ad::Var out = net_.classify(bound, net_.fuse(bound, z).fused);
    const auto v = out.value().data();
    logits.insert(logits.end(), v.begin(), v.end());
    labels.insert(labels.end(), batch.labels.begin(), batch.labels.end());
  }
  return evaluate_logits(logits, K, labels, cfg_.metric);
}

RunResult run_experiment(const ExperimentConfig& cfg, std::shared_ptr<const MultimodalDataset> data,
                         std::uint64_t seed) {
  Federation fed(cfg, std::move(data), seed);
  RunResult out;
  out.seed = seed;
  out.initial = fed.state().theta;
  out.best_params = out.initial;
  out.best_val = fed.evaluate(out.initial, Split::Val).value;
  out.best_test = fed.evaluate(out.initial, Split::Test).value;
  out.final_test = out.best_test;
  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    RoundReport rep = fed.run_round();
    const bool improved = rep.val_metric > out.best_val;
    if (improved || t % cfg.test_every == 0 || t == cfg.rounds) {
      const EvalResult test = fed.evaluate(fed.state().theta, Split::Test);
      rep.test_metric = test.value;
      rep.test_accuracy = test.accuracy;
      out.final_test = test.value;
    }
    if (improved) {
      out.best_val = rep.val_metric;
      out.best_round = rep.round;
      out.best_params = fed.state().theta;
      out.best_test = *rep.test_metric;
    }
    out.reports.push_back(std::move(rep));
  }
  out.final_params = fed.state().theta;
  out.final_prototypes = fed.state().complete;
  return out;
}

}  // namespace protofed
