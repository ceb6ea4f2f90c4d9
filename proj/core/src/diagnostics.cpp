#include "mrecg/diagnostics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <numeric>
#include <thread>

#include "mrecg/rng.hpp"

namespace mrecg {

OscillationSummary oscillation_score(const std::vector<double>& final_losses) {
  if (final_losses.empty()) {
    throw std::invalid_argument("oscillation_score: empty loss sequence");
  }
  OscillationSummary s;
  s.max_loss = final_losses[0];
  for (size_t i = 0; i + 1 < final_losses.size(); ++i) {
    const double drop = final_losses[i] - final_losses[i + 1];
    if (drop > 0.0) {
      s.score += drop;
      ++s.num_drops;
    }
    s.max_loss = std::max(s.max_loss, final_losses[i + 1]);
  }
  s.final_loss = final_losses.back();
  return s;
}

int worker_threads() {
  if (const char* env = std::getenv("MRECG_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

namespace {

// Runs fn(i) for i in [0, n) on up to worker_threads() threads. Exceptions
// rethrow on the caller thread.
void parallel_for(int n, const std::function<void(int)>& fn) {
  const int threads = std::min(worker_threads(), n);
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
          return;
        }
      }
    });
  }
  for (std::thread& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

std::vector<SchemeSample> sample_schemes(const ModelGraph& g, Granularity gran,
                                         int num_samples, int k_min, int k_max,
                                         uint64_t seed,
                                         const CalibrationSet& calib,
                                         const ReconConfig& cfg) {
  check_shape(num_samples >= 1, "sample_schemes: num_samples >= 1");
  const int num_pairs =
      static_cast<int>(build_modules(g, gran).size()) - 1;
  check_shape(num_pairs >= 1, "sample_schemes: need at least 2 modules");
  check_shape(k_min >= 0 && k_min <= k_max && k_max <= num_pairs,
              "sample_schemes: k range out of bounds");

  // Draw all masks up front so sampling is independent of execution order.
  std::vector<SchemeSample> rows(static_cast<size_t>(num_samples) + 1);
  rows[0].mask.assign(num_pairs, 0);
  rows[0].k = 0;
  Rng rng = Rng(seed).fork(0x7363686d);  // 'schm'
  for (int s = 1; s <= num_samples; ++s) {
    Rng sr = rng.fork(static_cast<uint64_t>(s));
    const int k = k_min + static_cast<int>(sr.next_below(
                              static_cast<uint64_t>(k_max - k_min + 1)));
    std::vector<int> idx(num_pairs);
    std::iota(idx.begin(), idx.end(), 0);
    for (int j = num_pairs - 1; j > 0; --j) {
      std::swap(idx[j], idx[sr.next_below(static_cast<uint64_t>(j + 1))]);
    }
    rows[s].mask.assign(num_pairs, 0);
    for (int j = 0; j < k; ++j) rows[s].mask[idx[j]] = 1;
    rows[s].k = k;
  }

  parallel_for(num_samples + 1, [&](int s) {
    GranularityScheme scheme;
    scheme.mask = rows[s].mask;
    scheme.k_requested = rows[s].k;
    scheme.k_achieved = rows[s].k;
    ReconConfig run_cfg = cfg;
    ReconstructionReport rep = run_pipeline(g, gran, scheme, calib, run_cfg);
    rows[s].max_prev_loss = rep.max_previous_loss();
    rows[s].final_loss = rep.final_loss();
  });
  return rows;
}

double network_loss(const ModelGraph& g, const std::vector<Tensor>& q_weights,
                    const ActQuantMap& act_quant, const Tensor& samples) {
  const int last = g.num_layers() - 1;
  Tensor fp = run_segment(g, 0, last, samples, nullptr, nullptr, nullptr);
  Tensor q_in = samples;
  if (!act_quant.empty() && act_quant[0]) {
    q_in = fake_quantize(q_in, *act_quant[0]);
  }
  WeightFn wfn = [&](int layer) -> const Tensor& { return q_weights[layer]; };
  ActFn afn = [&](int layer, Tensor& t) {
    if (layer < last && layer + 1 < static_cast<int>(act_quant.size()) &&
        act_quant[layer + 1]) {
      t = fake_quantize(t, *act_quant[layer + 1]);
    }
  };
  Tensor q = run_segment(g, 0, last, std::move(q_in), nullptr, &wfn, &afn);
  double acc = 0.0;
  for (int64_t e = 0; e < q.size(); ++e) {
    const double d = q.data[e] - fp.data[e];
    acc += d * d;
  }
  return acc / static_cast<double>(q.dim(0));
}

std::vector<BatchStudyRow> batch_size_study(const ModelGraph& g,
                                            Granularity gran,
                                            const std::vector<int>& sizes,
                                            int seeds_per_size,
                                            const ReconConfig& cfg,
                                            int input_hw, int eval_size) {
  check_shape(!sizes.empty() && seeds_per_size >= 1,
              "batch_size_study: empty study");
  for (size_t i = 0; i + 1 < sizes.size(); ++i) {
    check_shape(sizes[i] < sizes[i + 1],
                "batch_size_study: sizes must be ascending");
  }
  const int c = g.layers.front().in_channels;
  const CalibrationSet eval_set =
      generate_calibration(eval_size, c, input_hw, input_hw,
                           CalibDistribution::kGaussian,
                           cfg.seed ^ 0x6576616cull, eval_size);  // 'eval'

  const int runs = static_cast<int>(sizes.size()) * seeds_per_size;
  std::vector<double> losses(runs);
  const GranularityScheme zero{
      std::vector<int>(build_modules(g, gran).size() - 1, 0), 0, 0};
  parallel_for(runs, [&](int r) {
    const int si = r / seeds_per_size;
    const int seed_i = r % seeds_per_size;
    const int n = sizes[si];
    // Each run draws its own calibration sample of the given size; the whole
    // sample forms one optimization batch.
    CalibrationSet calib = generate_calibration(
        n, c, input_hw, input_hw, CalibDistribution::kGaussian,
        Rng(cfg.seed).fork(0x62737479, r).next_u64(), n);  // 'bsty'
    ReconConfig run_cfg = cfg;
    run_cfg.seed = Rng(cfg.seed).fork(0x73656564, r).next_u64();  // 'seed'
    Reconstructor rec(g, apply_scheme(build_modules(g, gran), zero), calib,
                      run_cfg);
    rec.run_all();
    losses[r] = network_loss(g, rec.quantized_weights(), rec.act_quant(),
                             eval_set.samples);
  });

  std::vector<BatchStudyRow> out;
  for (size_t si = 0; si < sizes.size(); ++si) {
    std::vector<double> v(losses.begin() + si * seeds_per_size,
                          losses.begin() + (si + 1) * seeds_per_size);
    out.push_back({sizes[si], median(v), median_abs_deviation(v)});
  }
  return out;
}

double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median: empty");
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double median_abs_deviation(const std::vector<double>& v) {
  const double m = median(v);
  std::vector<double> dev;
  dev.reserve(v.size());
  for (double x : v) dev.push_back(std::abs(x - m));
  return median(std::move(dev));
}

namespace {

std::vector<double> ranks(const std::vector<double>& x) {
  const size_t n = x.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return x[a] < x[b]; });
  std::vector<double> r(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) +
                       1.0;  // average rank for ties
    for (size_t t = i; t <= j; ++t) r[order[t]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman_correlation(const std::vector<double>& x,
                            const std::vector<double>& y) {
  check_shape(x.size() == y.size() && x.size() >= 2,
              "spearman_correlation: need matched samples");
  const std::vector<double> rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double num = 0, dx = 0, dy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    num += (rx[i] - mx) * (ry[i] - my);
    dx += (rx[i] - mx) * (rx[i] - mx);
    dy += (ry[i] - my) * (ry[i] - my);
  }
  if (dx == 0.0 || dy == 0.0) return 0.0;
  return num / std::sqrt(dx * dy);
}

}  // namespace mrecg
