#include "strm/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include <json.hpp>

#include "strm/rng.hpp"

namespace strm {

using nn::Mat;

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("TrainConfig: " + m); };
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (max_epochs < 1) fail("max_epochs must be >= 1");
  if (patience < 1) fail("patience must be >= 1");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) fail("val_fraction must lie in (0, 1)");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    fail("adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
  if (!(grad_clip >= 0.0)) fail("grad_clip must be non-negative");
  if (max_steps < 0) fail("max_steps must be non-negative");
}

// --- windows and batches ---------------------------------------------------------

std::vector<Window> dataset_windows(const Dataset& ds) {
  std::vector<Window> out;
  out.reserve(ds.sequence_starts.size());
  for (std::uint64_t s : ds.sequence_starts) {
    Window w(ds.header.seq_len);
    std::iota(w.begin(), w.end(), static_cast<std::size_t>(s));
    out.push_back(std::move(w));
  }
  return out;
}

std::vector<Window> resequence(const Dataset& ds, int length, int frame_step, int stride) {
  if (length < 1 || frame_step < 1 || stride < 1) {
    throw std::invalid_argument("resequence: length, frame_step and stride must be >= 1");
  }
  const double interval = ds.header.frame_interval_s;
  constexpr double kTolerance = 1.0;
  std::vector<Window> out;
  const std::size_t n = ds.records.size();
  std::size_t run_begin = 0;
  for (std::size_t i = 1; i <= n; ++i) {
    const bool breaks = i == n || std::abs(ds.records[i].t_s - ds.records[i - 1].t_s - interval) > kTolerance;
    if (!breaks) continue;
    const std::size_t span = static_cast<std::size_t>(length - 1) * static_cast<std::size_t>(frame_step);
    for (std::size_t s = run_begin; s + span < i; s += static_cast<std::size_t>(stride)) {
      Window w(static_cast<std::size_t>(length));
      for (int t = 0; t < length; ++t) w[static_cast<std::size_t>(t)] = s + static_cast<std::size_t>(t * frame_step);
      out.push_back(std::move(w));
    }
    run_begin = i;
  }
  return out;
}

std::vector<NormalizedCoordinate> window_final_coords(const Dataset& ds, std::span<const Window> windows) {
  std::vector<NormalizedCoordinate> out;
  out.reserve(windows.size());
  for (const Window& w : windows) out.push_back(normalize(ds.records.at(w.back()).coord, ds.header.bounds));
  return out;
}

template <typename S>
Batch<S> make_batch(const Dataset& ds, std::span<const Window> windows, std::span<const std::size_t> pick) {
  if (pick.empty()) throw std::invalid_argument("make_batch: empty selection");
  const std::size_t length = windows[pick.front()].size();
  std::vector<const Image*> fpp, gmp;
  fpp.reserve(pick.size() * length);
  gmp.reserve(pick.size() * length);
  Batch<S> b;
  b.sequences = static_cast<int>(pick.size());
  b.length = static_cast<int>(length);
  b.targets.coords.resize(2, static_cast<Eigen::Index>(pick.size() * length));
  Eigen::Index col = 0;
  for (std::size_t k : pick) {
    const Window& w = windows[k];
    if (w.size() != length) throw std::invalid_argument("make_batch: windows differ in length");
    for (std::size_t r : w) {
      const FrameRecord& rec = ds.records.at(r);
      fpp.push_back(&rec.fpp);
      gmp.push_back(&rec.gmp);
      const NormalizedCoordinate n = normalize(rec.coord, ds.header.bounds);
      b.targets.coords(0, col) = static_cast<S>(n.u);
      b.targets.coords(1, col) = static_cast<S>(n.v);
      ++col;
    }
  }
  b.frames = images_to_map<S>(fpp);
  b.targets.gmp = images_to_map<S>(gmp).data;
  return b;
}

template Batch<float> make_batch<float>(const Dataset&, std::span<const Window>, std::span<const std::size_t>);
template Batch<double> make_batch<double>(const Dataset&, std::span<const Window>, std::span<const std::size_t>);

// --- optimizer and stopping --------------------------------------------------------

void Adam::step(std::span<Mat<float>* const> params, std::span<Mat<float>* const> grads) {
  if (params.size() != grads.size()) throw std::invalid_argument("Adam: parameter/gradient count mismatch");
  if (m_.empty()) {
    for (const Mat<float>* p : params) {
      m_.push_back(Mat<float>::Zero(p->rows(), p->cols()));
      v_.push_back(Mat<float>::Zero(p->rows(), p->cols()));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  const auto b1 = static_cast<float>(b1_), b2 = static_cast<float>(b2_);
  const auto step = static_cast<float>(lr_ / c1);
  const auto inv_c2 = static_cast<float>(1.0 / c2);
  const auto eps = static_cast<float>(eps_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto g = grads[i]->array();
    m_[i].array() = b1 * m_[i].array() + (1.0f - b1) * g;
    v_[i].array() = b2 * v_[i].array() + (1.0f - b2) * g.square();
    params[i]->array() -= step * m_[i].array() / ((v_[i].array() * inv_c2).sqrt() + eps);
  }
}

bool EarlyStopping::update(double val_loss) {
  improved_ = val_loss < best_;
  if (improved_) {
    best_ = val_loss;
    stale_ = 0;
  } else {
    ++stale_;
  }
  return stale_ >= patience_;
}

// --- training ------------------------------------------------------------------------

long long steps_per_epoch(std::size_t n_train, int batch_size) {
  return static_cast<long long>((n_train + static_cast<std::size_t>(batch_size) - 1) / static_cast<std::size_t>(batch_size));
}

long long resolve_anneal_steps(const TrainConfig& cfg, std::size_t n_train) {
  if (cfg.anneal_steps >= 0) return cfg.anneal_steps;
  const long long warm_epochs = std::max(1LL, static_cast<long long>(std::ceil(0.1 * cfg.max_epochs)));
  return std::max(1LL, warm_epochs * steps_per_epoch(n_train, cfg.batch_size));
}

namespace {

void accumulate(LossBreakdown& acc, const LossBreakdown& lb, double w) {
  acc.recon += lb.recon * w;
  acc.kl += lb.kl * w;
  acc.coord += lb.coord * w;
  acc.total += lb.total * w;
}

void scale(LossBreakdown& acc, double w) {
  acc.recon *= w;
  acc.kl *= w;
  acc.coord *= w;
  acc.total *= w;
}

void check_finite(const LossBreakdown& lb, long long step) {
  const std::pair<const char*, double> terms[] = {{"recon", lb.recon}, {"kl", lb.kl}, {"coord", lb.coord}};
  for (const auto& [name, v] : terms) {
    if (!std::isfinite(v)) {
      throw NanLossError(std::string("non-finite ") + name + " loss at step " + std::to_string(step));
    }
  }
}

void clip_gradients(std::span<Mat<float>* const> grads, double max_norm) {
  double sq = 0.0;
  for (const Mat<float>* g : grads) sq += static_cast<double>(g->squaredNorm());
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  const auto s = static_cast<float>(max_norm / norm);
  for (Mat<float>* g : grads) *g *= s;
}

std::vector<std::size_t> shuffled(std::span<const std::size_t> items, Rng& rng) {
  std::vector<std::size_t> v(items.begin(), items.end());
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
  return v;
}

}  // namespace

LossBreakdown evaluate_loss(const Model<float>& model, const Dataset& ds, std::span<const Window> windows,
                            std::span<const std::size_t> pick, int batch_size, KlReduction reduction) {
  LossBreakdown acc;
  acc.beta = 1.0;
  double weight = 0.0;
  for (std::size_t i = 0; i < pick.size(); i += static_cast<std::size_t>(batch_size)) {
    const auto chunk = pick.subspan(i, std::min<std::size_t>(static_cast<std::size_t>(batch_size), pick.size() - i));
    const Batch<float> b = make_batch<float>(ds, windows, chunk);
    const ForwardResult<float> out = model.forward(b.frames, b.length, nullptr);
    const LossBreakdown lb = total_loss(out, b.targets, 1.0, model.config().reconstruction_enabled,
                                         static_cast<OutputGrads<float>*>(nullptr), reduction);
    const double w = static_cast<double>(out.steps());
    accumulate(acc, lb, w);
    weight += w;
  }
  if (weight > 0.0) scale(acc, 1.0 / weight);
  return acc;
}

TrainResult train_split(const Dataset& ds, std::span<const Window> windows, std::span<const std::size_t> train_set,
                        std::span<const std::size_t> val_set, const ModelConfig& model_cfg, const TrainConfig& cfg,
                        const TrainHooks& hooks) {
  cfg.validate();
  model_cfg.validate();
  if (train_set.empty()) throw std::invalid_argument("train: training set is empty");
  if (val_set.empty()) throw std::invalid_argument("train: validation set is empty");
  if (ds.header.fpp_w != static_cast<std::uint32_t>(model_cfg.fpp.width) ||
      ds.header.fpp_h != static_cast<std::uint32_t>(model_cfg.fpp.height) ||
      ds.header.gmp_w != static_cast<std::uint32_t>(model_cfg.gmp.width) ||
      ds.header.gmp_h != static_cast<std::uint32_t>(model_cfg.gmp.height)) {
    throw std::invalid_argument("train: dataset resolution does not match the model config");
  }

  Model<float> model(model_cfg, cfg.seed);
  ModelParams<float> grads(model_cfg);
  const auto param_ptrs = model.params().tensors(model_cfg);
  const auto grad_ptrs = grads.tensors(model_cfg);
  Adam adam(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  Rng shuffle_rng(mix_seed(cfg.seed, 30));
  Rng eps_rng(mix_seed(cfg.seed, 31));
  const long long anneal = resolve_anneal_steps(cfg, train_set.size());
  EarlyStopping stopper(cfg.patience);
  const auto t0 = std::chrono::steady_clock::now();

  TrainResult result;
  result.best = model;
  long long step = 0;
  bool step_cap = false;
  for (int epoch = 1; epoch <= cfg.max_epochs && !step_cap; ++epoch) {
    const auto order = shuffled(train_set, shuffle_rng);
    LossBreakdown train_acc;
    double train_w = 0.0;
    for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(cfg.batch_size)) {
      const std::span<const std::size_t> chunk(order.data() + i,
                                               std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), order.size() - i));
      const Batch<float> b = make_batch<float>(ds, windows, chunk);
      const double beta = beta_schedule(step, anneal);
      const Mat<float> eps = sample_eps<float>(model_cfg.latent_dim, b.sequences * b.length, eps_rng);
      ForwardCache<float> cache;
      const ForwardResult<float> out = model.forward(b.frames, b.length, &eps, &cache);
      OutputGrads<float> og;
      const LossBreakdown lb =
          total_loss(out, b.targets, beta, model_cfg.reconstruction_enabled, &og, cfg.kl_reduction);
      check_finite(lb, step);
      grads.set_zero(model_cfg);
      model.backward(cache, out, og, grads);
      if (cfg.grad_clip > 0.0) clip_gradients(grad_ptrs, cfg.grad_clip);
      adam.step(param_ptrs, grad_ptrs);
      if (hooks.on_step) hooks.on_step(step, lb);
      ++step;
      const double w = static_cast<double>(out.steps());
      accumulate(train_acc, lb, w);
      train_acc.beta = beta;
      train_w += w;
      if (cfg.max_steps > 0 && step >= cfg.max_steps) {
        step_cap = true;
        break;
      }
    }
    scale(train_acc, 1.0 / train_w);

    EpochLog log;
    log.epoch = epoch;
    log.step = step;
    log.train = train_acc;
    log.val = evaluate_loss(model, ds, windows, val_set, cfg.batch_size, cfg.kl_reduction);
    if (!std::isfinite(log.val.total)) {
      check_finite(log.val, step);
      throw NanLossError("non-finite validation loss at step " + std::to_string(step));
    }
    const bool stop = stopper.update(log.val.total);
    log.improved = stopper.improved();
    log.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (log.improved) {
      result.best = model;
      result.best_step = step;
      result.best_epoch = epoch;
      result.best_val_total = log.val.total;
      result.best_val_coord = log.val.coord;
    }
    result.epochs.push_back(log);
    if (hooks.on_epoch) hooks.on_epoch(log);
    if (stop) {
      result.stop_reason = "early stopping: " + std::to_string(cfg.patience) + " epochs without improvement";
      return result;
    }
  }
  result.stop_reason = step_cap ? "max_steps reached" : "max_epochs reached";
  return result;
}

TrainResult train(const Dataset& ds, std::span<const Window> windows, const ModelConfig& model_cfg,
                  const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  if (windows.empty()) throw std::invalid_argument("train: dataset has no sequences");
  const auto finals = window_final_coords(ds, windows);
  const SplitResult split = stratified_split(finals, cfg.val_fraction, cfg.seed);
  return train_split(ds, windows, split.remainder, split.subset, model_cfg, cfg, hooks);
}

TrainResult train(const Dataset& ds, const ModelConfig& model_cfg, const TrainConfig& cfg, const TrainHooks& hooks) {
  const auto windows = dataset_windows(ds);
  return train(ds, windows, model_cfg, cfg, hooks);
}

namespace {

nlohmann::ordered_json losses_json(const LossBreakdown& lb, bool recon) {
  nlohmann::ordered_json j;
  if (recon) j["recon"] = lb.recon;
  j["kl"] = lb.kl;
  j["coord"] = lb.coord;
  j["total"] = lb.total;
  return j;
}

}  // namespace

std::string epoch_log_line(const EpochLog& e, bool reconstruction_enabled) {
  nlohmann::ordered_json j;
  j["epoch"] = e.epoch;
  j["step"] = e.step;
  j["beta"] = e.train.beta;
  j["train"] = losses_json(e.train, reconstruction_enabled);
  j["val"] = losses_json(e.val, reconstruction_enabled);
  j["improved"] = e.improved;
  return j.dump();
}

std::string timing_log_line(const EpochLog& e) {
  nlohmann::ordered_json j;
  j["epoch"] = e.epoch;
  j["wall_time_s"] = e.wall_time_s;
  return j.dump();
}

// --- hyperparameter search -----------------------------------------------------------

bool SearchSpace::empty() const {
  return learning_rates.empty() && seq_lens.empty() && frame_steps.empty() && latent_dims.empty() &&
         d_models.empty() && n_heads.empty() && n_layers.empty();
}

std::vector<SearchCandidate> expand_space(const SearchSpace& space, const ModelConfig& base_model,
                                          const TrainConfig& base_train) {
  if (space.empty()) throw std::invalid_argument("grid_search: search space is empty");
  auto or_base = []<typename T>(const std::vector<T>& v, T base) { return v.empty() ? std::vector<T>{base} : v; };
  const auto lrs = or_base(space.learning_rates, base_train.learning_rate);
  const auto lens = or_base(space.seq_lens, base_model.seq_len);
  const auto steps = or_base(space.frame_steps, 1);
  const auto latents = or_base(space.latent_dims, base_model.latent_dim);
  const auto dms = or_base(space.d_models, base_model.d_model);
  const auto heads = or_base(space.n_heads, base_model.n_heads);
  const auto layers = or_base(space.n_layers, base_model.n_layers);
  std::vector<SearchCandidate> out;
  for (double lr : lrs)
    for (int len : lens)
      for (int fs : steps)
        for (int lat : latents)
          for (int dm : dms)
            for (int nh : heads)
              for (int nl : layers) {
                SearchCandidate c;
                c.id = static_cast<int>(out.size());
                c.model = base_model;
                c.model.seq_len = len;
                c.model.latent_dim = lat;
                c.model.d_model = dm;
                c.model.n_heads = nh;
                c.model.n_layers = nl;
                c.train = base_train;
                c.train.learning_rate = lr;
                c.frame_step = fs;
                c.model.validate();
                out.push_back(std::move(c));
              }
  return out;
}

std::vector<SearchSummary> rank_candidates(const std::vector<SearchCandidate>& candidates,
                                           const std::vector<SearchRow>& rows) {
  std::vector<SearchSummary> out;
  for (const SearchCandidate& c : candidates) {
    std::vector<double> v;
    for (const SearchRow& r : rows) {
      if (r.candidate == c.id) v.push_back(r.val_coord);
    }
    if (v.empty()) continue;
    SearchSummary s;
    s.candidate = c;
    s.mean_val_coord = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean_val_coord) * (x - s.mean_val_coord);
    s.std_val_coord = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    out.push_back(std::move(s));
  }
  std::stable_sort(out.begin(), out.end(), [](const SearchSummary& a, const SearchSummary& b) {
    return a.mean_val_coord < b.mean_val_coord;
  });
  for (std::size_t i = 0; i < out.size(); ++i) out[i].rank = static_cast<int>(i) + 1;
  return out;
}

SearchResult grid_search(const std::vector<SearchCandidate>& candidates, const Dataset& ds,
                         std::span<const std::uint64_t> seeds, double subset_fraction) {
  if (candidates.empty()) throw std::invalid_argument("grid_search: search space is empty");
  if (seeds.empty()) throw std::invalid_argument("grid_search: no seeds");
  SearchResult result;
  for (const SearchCandidate& c : candidates) {
    // The dataset's own windows when the shape matches, otherwise half-overlapping re-windows.
    const bool native = c.frame_step == 1 && static_cast<std::uint32_t>(c.model.seq_len) == ds.header.seq_len;
    const auto windows =
        native ? dataset_windows(ds) : resequence(ds, c.model.seq_len, c.frame_step, std::max(1, c.model.seq_len / 2));
    if (windows.empty()) throw std::invalid_argument("grid_search: candidate " + std::to_string(c.id) + " has no sequences");
    const auto finals = window_final_coords(ds, windows);
    for (std::uint64_t seed : seeds) {
      const SplitResult subset = stratified_split(finals, subset_fraction, seed);
      std::vector<Window> sub;
      sub.reserve(subset.subset.size());
      for (std::size_t i : subset.subset) sub.push_back(windows[i]);
      TrainConfig tc = c.train;
      tc.seed = seed;
      const TrainResult tr = train(ds, sub, c.model, tc);
      result.rows.push_back({c.id, seed, tr.best_val_coord, tr.best_val_total, static_cast<int>(tr.epochs.size())});
    }
  }
  result.ranking = rank_candidates(candidates, result.rows);
  return result;
}

void write_search_csv(const std::filesystem::path& rows_path, const std::filesystem::path& ranking_path,
                      const SearchResult& result, const std::string& config_hash) {
  std::ofstream rows(rows_path);
  if (!rows) throw std::runtime_error("cannot write " + rows_path.string());
  rows.precision(17);
  rows << "candidate,seed,val_coord,val_total,epochs,config_hash\n";
  for (const SearchRow& r : result.rows) {
    rows << r.candidate << ',' << r.seed << ',' << r.val_coord << ',' << r.val_total << ',' << r.epochs << ','
         << config_hash << '\n';
  }
  std::ofstream rank(ranking_path);
  if (!rank) throw std::runtime_error("cannot write " + ranking_path.string());
  rank.precision(17);
  rank << "rank,candidate,learning_rate,seq_len,frame_step,latent_dim,d_model,n_heads,n_layers,mean_val_coord,"
          "std_val_coord,config_hash\n";
  for (const SearchSummary& s : result.ranking) {
    const SearchCandidate& c = s.candidate;
    rank << s.rank << ',' << c.id << ',' << c.train.learning_rate << ',' << c.model.seq_len << ',' << c.frame_step
         << ',' << c.model.latent_dim << ',' << c.model.d_model << ',' << c.model.n_heads << ',' << c.model.n_layers
         << ',' << s.mean_val_coord << ',' << s.std_val_coord << ',' << config_hash << '\n';
  }
}

}  // namespace strm
