#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "weakcorr/correlator.hpp"
#include "weakcorr/operator_algebra.hpp"
#include "weakcorr/parallel.hpp"
#include "weakcorr/rng.hpp"

namespace weakcorr {

/// Finite-strength weak measurement settings. Detector noise variance per
/// outcome is exactly 1/(4g).
struct MeasurementConfig {
  double g = 0.02;
  long long n_trajectories = 100000;
  std::uint64_t seed = 1;
  bool deconvolve = true;
};

inline double noise_variance(double g) {
  if (g <= 0.0) throw InvalidInputError("noise_variance: g must be positive");
  return 1.0 / (4.0 * g);
}

struct WeakOutcome {
  double outcome;
  State posterior;
};

/// One Gaussian-Kraus weak measurement on a density matrix. The outcome is
/// drawn from the exact mixture p'(a) = sum_k w_k Normal(lambda_k, 1/4g) with
/// w_k the eigenprojector populations; the posterior is K(a) rho K(a)/p'(a).
inline WeakOutcome apply_weak_measurement(const State& state, const Operator& observable,
                                          const MeasurementConfig& cfg, RngStream& rng) {
  if (!observable.is_hermitian()) {
    throw InvalidInputError("apply_weak_measurement: observable must be Hermitian");
  }
  if (observable.dim() != state.dim()) {
    throw InvalidInputError("apply_weak_measurement: dimension mismatch");
  }
  const SpectralDecomposition sd = spectral_decomposition(observable);
  const int d = state.dim();
  const Matrix rho_a = sd.eigenvectors.adjoint() * state.rho() * sd.eigenvectors;
  const double sigma = std::sqrt(noise_variance(cfg.g));

  const double u = rng.next_uniform();
  double acc = 0.0;
  int comp = d - 1;
  for (int k = 0; k < d; ++k) {
    acc += std::max(0.0, rho_a(k, k).real());
    if (u <= acc) {
      comp = k;
      break;
    }
  }
  const double a = sd.eigenvalues(comp) + sigma * rng.next_gaussian();

  Vector kraus(d);
  for (int k = 0; k < d; ++k) {
    const double x = sd.eigenvalues(k) - a;
    kraus(k) = std::exp(-cfg.g * x * x);
  }
  Matrix post = kraus.asDiagonal() * rho_a * kraus.conjugate().asDiagonal();
  post /= post.trace().real();
  post = (sd.eigenvectors * post * sd.eigenvectors.adjoint()).eval();
  post = cplx(0.5, 0.0) * (post + post.adjoint().eval());
  return WeakOutcome{a, State(std::move(post))};
}

/// Measured outcome density p'(a) = Tr K(a) rho K(a).
inline double outcome_density(const State& state, const Operator& observable, double g,
                              double a) {
  const SpectralDecomposition sd = spectral_decomposition(observable);
  const Matrix rho_a = sd.eigenvectors.adjoint() * state.rho() * sd.eigenvectors;
  double p = 0.0;
  for (int k = 0; k < state.dim(); ++k) {
    const double x = sd.eigenvalues(k) - a;
    p += std::max(0.0, rho_a(k, k).real()) * std::exp(-2.0 * g * x * x);
  }
  return p * std::sqrt(2.0 * g / pi);
}

/// Unconditioned post-measurement state, integrated over outcomes (exact):
/// rho_kl -> rho_kl exp(-g (lambda_k - lambda_l)^2 / 2) in the observable
/// eigenbasis.
inline State averaged_post_measurement(const State& state, const Operator& observable,
                                       double g) {
  const SpectralDecomposition sd = spectral_decomposition(observable);
  const int d = state.dim();
  Matrix rho_a = sd.eigenvectors.adjoint() * state.rho() * sd.eigenvectors;
  for (int k = 0; k < d; ++k) {
    for (int l = 0; l < d; ++l) {
      const double dl = sd.eigenvalues(k) - sd.eigenvalues(l);
      rho_a(k, l) *= std::exp(-0.5 * g * dl * dl);
    }
  }
  Matrix out = sd.eigenvectors * rho_a * sd.eigenvectors.adjoint();
  out = cplx(0.5, 0.0) * (out + out.adjoint().eval());
  return State(std::move(out));
}

enum class KrausMode { PlainGaussian, Superconserving };

/// Kraus family selector. In Superconserving mode every Kraus application is
/// dephased into the eigenspaces of a superconserved Q: K(a) is replaced by
/// sum_q P_q K(a) P_q, renormalized. q-changing channels are not modeled.
struct KrausFamily {
  KrausMode mode = KrausMode::PlainGaussian;
  std::vector<Operator> projectors;

  void validate(int dim) const {
    if (mode == KrausMode::PlainGaussian) return;
    if (projectors.empty()) {
      throw InvalidInputError("KrausFamily: superconserving mode needs projectors");
    }
    Matrix sum = Matrix::Zero(dim, dim);
    for (const auto& p : projectors) {
      if (p.dim() != dim) throw InvalidInputError("KrausFamily: projector dimension mismatch");
      sum += p.entries();
      if (max_abs(p.entries() * p.entries() - p.entries()) > 1e-11) {
        throw InvalidInputError("KrausFamily: non-idempotent projector");
      }
    }
    if (max_abs(sum - Matrix::Identity(dim, dim)) > 1e-11) {
      throw InvalidInputError("KrausFamily: projectors do not resolve the identity");
    }
  }
};

/// Eigenprojectors of a Hermitian operator, grouping eigenvalues within tol.
inline std::vector<Operator> eigenprojectors(const Operator& q, double tol = 1e-9) {
  const SpectralDecomposition sd = spectral_decomposition(q);
  std::vector<Operator> projs;
  const int d = q.dim();
  int start = 0;
  while (start < d) {
    int end = start + 1;
    while (end < d && sd.eigenvalues(end) - sd.eigenvalues(end - 1) <= tol) ++end;
    Matrix p = Matrix::Zero(d, d);
    for (int k = start; k < end; ++k) {
      p += sd.eigenvectors.col(k) * sd.eigenvectors.col(k).adjoint();
    }
    p = cplx(0.5, 0.0) * (p + p.adjoint().eval());
    projs.push_back(Operator::hermitian(std::move(p)));
    start = end;
  }
  return projs;
}

/// Estimator options. These change variance and bookkeeping, never the
/// simulated measurement physics.
struct SequenceOptions {
  int n_batches = 64;           // batch means for standard errors
  bool store_outcomes = false;  // keep raw n_traj x n_slots readouts
  bool rb_last = false;         // read the final detector via its exact
                                // conditional signal moment (the system is not
                                // touched after the final coupling)
  int antithetic_slots = 0;     // leading slots whose detector noise is
                                // sign-flipped across 2^k paired arms
  std::vector<int> max_powers;  // monomial grid bound per slot (default: the
                                // slot exponent)
};

/// Raw product-moment estimators from a batch of measurement trajectories,
/// with batch-means standard errors.
struct TrajectoryBatch {
  int n_slots = 0;
  long long n_trajectories = 0;
  MeasurementConfig cfg;
  SequenceOptions opts;
  std::vector<std::vector<int>> monomial_exponents;
  std::vector<double> moment_mean;
  std::vector<double> moment_se;
  Eigen::MatrixXd batch_means;              // n_batches x n_monomials
  Eigen::MatrixXd outcomes;                 // n_trajectories x n_slots if stored
  std::vector<double> slot_noise_variance;  // 0 for an rb_last final slot

  int monomial_index(const std::vector<int>& e) const {
    for (size_t m = 0; m < monomial_exponents.size(); ++m) {
      if (monomial_exponents[m] == e) return static_cast<int>(m);
    }
    throw InvalidInputError("TrajectoryBatch: moment not accumulated for requested powers");
  }
  double moment(const std::vector<int>& e) const { return moment_mean[monomial_index(e)]; }
  double moment_stderr(const std::vector<int>& e) const {
    return moment_se[monomial_index(e)];
  }
};

namespace detail {

struct PreparedSlot {
  double time = 0.0;
  int exponent = 1;
  Matrix basis;
  RealVector lambda;
  bool identity_basis = false;
};

struct InitComponent {
  double weight;
  Vector vec;
  int block;  // projector index (superconserving), else 0
};

struct PreparedSequence {
  int dim = 0;
  bool diagonal_h = true;
  std::vector<PreparedSlot> slots;
  std::vector<Vector> interval_phase;
  std::vector<Matrix> interval_dense;
  std::vector<InitComponent> init;
  bool superconserving = false;
  std::vector<Matrix> projectors;
};

inline PreparedSequence prepare_sequence(const State& state,
                                         const std::vector<ScheduledObservable>& schedule,
                                         const Operator& h, const KrausFamily& family) {
  if (schedule.empty()) throw InvalidInputError("run_sequence: empty schedule");
  for (size_t i = 0; i + 1 < schedule.size(); ++i) {
    if (!(schedule[i].time < schedule[i + 1].time)) {
      throw InvalidInputError("run_sequence: schedule must be strictly time-ordered");
    }
  }
  if (h.dim() != state.dim()) throw InvalidInputError("run_sequence: dimension mismatch");
  family.validate(state.dim());

  PreparedSequence seq;
  seq.dim = state.dim();
  seq.diagonal_h = is_diagonal(h.entries());
  SpectralDecomposition hd;
  if (!seq.diagonal_h) hd = spectral_decomposition(h);

  double prev_t = schedule.front().time;
  for (const auto& s : schedule) {
    if (s.observable.dim() != seq.dim) {
      throw InvalidInputError("run_sequence: observable dimension mismatch");
    }
    if (s.exponent < 1) throw InvalidInputError("run_sequence: exponent must be >= 1");
    PreparedSlot slot;
    slot.time = s.time;
    slot.exponent = s.exponent;
    const SpectralDecomposition sd = spectral_decomposition(s.observable);
    slot.basis = sd.eigenvectors;
    slot.lambda = sd.eigenvalues;
    slot.identity_basis =
        max_abs(sd.eigenvectors - Matrix::Identity(seq.dim, seq.dim)) < 1e-14;
    const double dt = s.time - prev_t;
    // |psi> -> exp(+iHt)|psi>, matching the Heisenberg direction of evolve()
    if (seq.diagonal_h) {
      Vector ph(seq.dim);
      for (int i = 0; i < seq.dim; ++i) {
        ph(i) = std::exp(cplx(0.0, h.entries()(i, i).real() * dt));
      }
      seq.interval_phase.push_back(std::move(ph));
      seq.interval_dense.emplace_back();
    } else {
      Vector ph(seq.dim);
      for (int i = 0; i < seq.dim; ++i) ph(i) = std::exp(cplx(0.0, hd.eigenvalues(i) * dt));
      seq.interval_dense.push_back(hd.eigenvectors * ph.asDiagonal() *
                                   hd.eigenvectors.adjoint());
      seq.interval_phase.emplace_back();
    }
    seq.slots.push_back(std::move(slot));
    prev_t = s.time;
  }

  if (family.mode == KrausMode::Superconserving) {
    seq.superconserving = true;
    for (const auto& p : family.projectors) seq.projectors.push_back(p.entries());
    // block-restricted mixture components (each lies inside one eigenspace)
    for (size_t b = 0; b < seq.projectors.size(); ++b) {
      Matrix blk = seq.projectors[b] * state.rho() * seq.projectors[b];
      Eigen::SelfAdjointEigenSolver<Matrix> es(blk);
      for (int k = 0; k < seq.dim; ++k) {
        const double w = es.eigenvalues()(k);
        if (w > 1e-14) {
          seq.init.push_back(
              {w, es.eigenvectors().col(k).normalized(), static_cast<int>(b)});
        }
      }
    }
    // canonical ascending-weight order, matching the plain path's
    // eigendecomposition, so commuting schedules consume identical draws
    std::stable_sort(seq.init.begin(), seq.init.end(),
                     [](const InitComponent& x, const InitComponent& y) {
                       return x.weight < y.weight;
                     });
  } else {
    Eigen::SelfAdjointEigenSolver<Matrix> es(state.rho());
    for (int k = 0; k < seq.dim; ++k) {
      const double w = es.eigenvalues()(k);
      if (w > 1e-14) seq.init.push_back({w, es.eigenvectors().col(k), 0});
    }
  }
  double total = 0.0;
  for (const auto& c : seq.init) total += c.weight;
  for (auto& c : seq.init) c.weight /= total;
  return seq;
}

struct ArmWorkspace {
  Vector c, d, scratch;
  void resize(int dim) {
    c.resize(dim);
    d.resize(dim);
    scratch.resize(dim);
  }
};

inline int pick_component(const Vector& d, double u) {
  const int dim = static_cast<int>(d.size());
  double acc = 0.0;
  for (int k = 0; k < dim; ++k) {
    acc += std::norm(d(k));
    if (u <= acc) return k;
  }
  return dim - 1;
}

inline int pick_init(const PreparedSequence& seq, double u) {
  double acc = 0.0;
  for (size_t i = 0; i < seq.init.size(); ++i) {
    acc += seq.init[i].weight;
    if (u <= acc) return static_cast<int>(i);
  }
  return static_cast<int>(seq.init.size()) - 1;
}

/// One plain-Gaussian trajectory arm over a pre-drawn tape. Tape layout:
/// u_init, then (u_comp, z) per sampled slot. sign_mask flips the detector
/// noise of the flagged leading slots. When rb_last is set the final slot is
/// read out through its exact conditional signal moments instead of a sample.
inline void run_arm_plain(const PreparedSequence& seq, double g, const double* tape,
                          unsigned sign_mask, bool rb_last, int rb_max_power,
                          ArmWorkspace& ws, double* outcomes, double* rb_moments) {
  const int dim = seq.dim;
  const int n = static_cast<int>(seq.slots.size());
  const double sigma = std::sqrt(noise_variance(g));
  ws.c = seq.init[pick_init(seq, tape[0])].vec;
  int pos = 1;
  for (int s = 0; s < n; ++s) {
    if (seq.diagonal_h) {
      ws.c.array() *= seq.interval_phase[s].array();
    } else {
      ws.scratch.noalias() = seq.interval_dense[s] * ws.c;
      ws.c.swap(ws.scratch);
    }
    const PreparedSlot& slot = seq.slots[s];
    if (slot.identity_basis) {
      ws.d = ws.c;
    } else {
      ws.d.noalias() = slot.basis.adjoint() * ws.c;
    }
    const bool last = (s == n - 1);
    if (last && rb_last) {
      for (int p = 1; p <= rb_max_power; ++p) {
        double mom = 0.0;
        for (int k = 0; k < dim; ++k) mom += std::norm(ws.d(k)) * std::pow(slot.lambda(k), p);
        rb_moments[p - 1] = mom;
      }
      outcomes[s] = rb_moments[0];
      return;
    }
    const int comp = pick_component(ws.d, tape[pos++]);
    const double flip = (s < 31 && ((sign_mask >> s) & 1u)) ? -1.0 : 1.0;
    const double a = slot.lambda(comp) + flip * sigma * tape[pos++];
    for (int k = 0; k < dim; ++k) {
      const double x = slot.lambda(k) - a;
      ws.d(k) *= std::exp(-g * x * x);
    }
    ws.d /= ws.d.norm();
    if (slot.identity_basis) {
      ws.c = ws.d;
    } else {
      ws.c.noalias() = slot.basis * ws.d;
    }
    outcomes[s] = a;
  }
}

/// One superconserving trajectory arm, sampling live from the stream. Each
/// attempt proposes from the plain outcome mixture and accepts with
/// ||P_q K(a) psi||^2 / ||K(a) psi||^2; the ratio is exactly 1 when the
/// observable commutes with Q, in which case no acceptance uniform is
/// consumed and the draw sequence matches PlainGaussian mode.
inline void run_arm_superconserving(const PreparedSequence& seq, double g, RngStream& rng,
                                    bool rb_last, int rb_max_power, ArmWorkspace& ws,
                                    double* outcomes, double* rb_moments) {
  const int dim = seq.dim;
  const int n = static_cast<int>(seq.slots.size());
  const double sigma = std::sqrt(noise_variance(g));
  const int init_idx = pick_init(seq, rng.next_uniform());
  ws.c = seq.init[init_idx].vec;
  const Matrix& proj = seq.projectors[seq.init[init_idx].block];

  for (int s = 0; s < n; ++s) {
    if (seq.diagonal_h) {
      ws.c.array() *= seq.interval_phase[s].array();
    } else {
      ws.scratch.noalias() = seq.interval_dense[s] * ws.c;
      ws.c.swap(ws.scratch);
    }
    const PreparedSlot& slot = seq.slots[s];
    if (slot.identity_basis) {
      ws.d = ws.c;
    } else {
      ws.d.noalias() = slot.basis.adjoint() * ws.c;
    }
    const bool last = (s == n - 1);
    if (last && rb_last) {
      for (int p = 1; p <= rb_max_power; ++p) {
        double mom = 0.0;
        for (int k = 0; k < dim; ++k) mom += std::norm(ws.d(k)) * std::pow(slot.lambda(k), p);
        rb_moments[p - 1] = mom;
      }
      outcomes[s] = rb_moments[0];
      return;
    }
    bool accepted = false;
    for (int attempt = 0; attempt < 100000; ++attempt) {
      const int comp = pick_component(ws.d, rng.next_uniform());
      const double a = slot.lambda(comp) + sigma * rng.next_gaussian();
      ws.scratch = ws.d;
      for (int k = 0; k < dim; ++k) {
        const double x = slot.lambda(k) - a;
        ws.scratch(k) *= std::exp(-g * x * x);
      }
      Vector kc = slot.identity_basis ? ws.scratch : Vector(slot.basis * ws.scratch);
      Vector pkc = proj * kc;
      const double ratio = pkc.squaredNorm() / kc.squaredNorm();
      if (ratio >= 1.0 - 1e-12 || rng.next_uniform() <= ratio) {
        ws.c = (ratio >= 1.0 - 1e-12) ? Vector(kc / kc.norm()) : Vector(pkc / pkc.norm());
        outcomes[s] = a;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      throw NumericalContractError("superconserving sampler: rejection budget exhausted");
    }
    if (slot.identity_basis) {
      ws.d = ws.c;
    } else {
      ws.d.noalias() = slot.basis.adjoint() * ws.c;
    }
  }
}

inline std::vector<std::vector<int>> monomial_grid(const std::vector<int>& max_powers) {
  std::vector<std::vector<int>> grid;
  std::vector<int> cur(max_powers.size(), 0);
  for (;;) {
    grid.push_back(cur);
    int i = 0;
    while (i < static_cast<int>(cur.size())) {
      if (cur[i] < max_powers[i]) {
        ++cur[i];
        break;
      }
      cur[i] = 0;
      ++i;
    }
    if (i == static_cast<int>(cur.size())) break;
  }
  return grid;
}

}  // namespace detail

/// Sequential weak measurements as stochastic trajectories: evolve under h
/// between scheduled times (Schrodinger picture), apply the Gaussian Kraus
/// update at each slot, and accumulate all outcome monomials up to
/// opts.max_powers with deterministic batch reduction. Per-trajectory RNG
/// streams are keyed by (seed, block index) so results are independent of the
/// parallel schedule.
inline TrajectoryBatch run_sequence(const State& state,
                                    const std::vector<ScheduledObservable>& schedule,
                                    const Operator& h, const MeasurementConfig& cfg,
                                    const SequenceOptions& opts = {},
                                    const KrausFamily& family = {}) {
  const detail::PreparedSequence seq = detail::prepare_sequence(state, schedule, h, family);
  const int n = static_cast<int>(seq.slots.size());
  if (cfg.n_trajectories <= 0) throw InvalidInputError("run_sequence: need trajectories");

  TrajectoryBatch batch;
  batch.n_slots = n;
  batch.cfg = cfg;
  batch.opts = opts;

  std::vector<int> max_powers = opts.max_powers;
  if (max_powers.empty()) {
    for (const auto& s : seq.slots) max_powers.push_back(s.exponent);
  }
  if (static_cast<int>(max_powers.size()) != n) {
    throw InvalidInputError("run_sequence: max_powers size mismatch");
  }
  batch.monomial_exponents = detail::monomial_grid(max_powers);
  const int n_mono = static_cast<int>(batch.monomial_exponents.size());

  batch.slot_noise_variance.assign(n, noise_variance(cfg.g));
  if (opts.rb_last) batch.slot_noise_variance[n - 1] = 0.0;

  int antithetic = opts.antithetic_slots;
  if (seq.superconserving && antithetic != 0) {
    throw InvalidInputError("run_sequence: antithetic arms unsupported in superconserving mode");
  }
  const int sampled_slots = n - (opts.rb_last ? 1 : 0);
  antithetic = std::min(antithetic, sampled_slots);
  const int arms_per_block = 1 << antithetic;
  if (cfg.n_trajectories % arms_per_block != 0) {
    throw InvalidInputError("run_sequence: n_trajectories must divide into antithetic blocks");
  }
  const long long n_blocks = cfg.n_trajectories / arms_per_block;
  const int n_batches = static_cast<int>(std::min<long long>(opts.n_batches, n_blocks));
  const int rb_max_power = max_powers[n - 1];

  if (opts.store_outcomes) {
    batch.outcomes.resize(cfg.n_trajectories, n);
  }

  Eigen::MatrixXd batch_sums = Eigen::MatrixXd::Zero(n_batches, n_mono);
  std::vector<long long> batch_counts(n_batches, 0);

  parallel_batches(n_batches, [&](int b) {
    const long long lo = n_blocks * b / n_batches;
    const long long hi = n_blocks * (b + 1) / n_batches;
    detail::ArmWorkspace ws;
    ws.resize(seq.dim);
    std::vector<double> tape(1 + 2 * sampled_slots);
    std::vector<double> outc(n), rbm(std::max(1, rb_max_power));
    std::vector<double> powers_buf(n);
    Eigen::VectorXd sums = Eigen::VectorXd::Zero(n_mono);
    long long count = 0;
    for (long long blk = lo; blk < hi; ++blk) {
      RngStream rng(cfg.seed, static_cast<std::uint64_t>(blk));
      if (!seq.superconserving) {
        tape[0] = rng.next_uniform();
        for (int s = 0; s < sampled_slots; ++s) {
          tape[1 + 2 * s] = rng.next_uniform();
          tape[2 + 2 * s] = rng.next_gaussian();
        }
      }
      for (int arm = 0; arm < arms_per_block; ++arm) {
        if (seq.superconserving) {
          detail::run_arm_superconserving(seq, cfg.g, rng, opts.rb_last, rb_max_power, ws,
                                          outc.data(), rbm.data());
        } else {
          detail::run_arm_plain(seq, cfg.g, tape.data(), static_cast<unsigned>(arm),
                                opts.rb_last, rb_max_power, ws, outc.data(), rbm.data());
        }
        if (opts.store_outcomes) {
          const long long row = blk * arms_per_block + arm;
          for (int s = 0; s < n; ++s) batch.outcomes(row, s) = outc[s];
        }
        // accumulate monomials; the rb_last slot contributes its exact
        // conditional signal moments
        for (int m = 0; m < n_mono; ++m) {
          double v = 1.0;
          const auto& e = batch.monomial_exponents[m];
          for (int s = 0; s < n; ++s) {
            if (e[s] == 0) continue;
            if (s == n - 1 && opts.rb_last) {
              v *= rbm[e[s] - 1];
            } else {
              double f = outc[s];
              for (int p = 1; p < e[s]; ++p) f *= outc[s];
              v *= f;
            }
          }
          sums(m) += v;
        }
        ++count;
      }
    }
    batch_sums.row(b) = sums.transpose();
    batch_counts[b] = count;
  });

  batch.n_trajectories = cfg.n_trajectories;
  batch.batch_means.resize(n_batches, n_mono);
  for (int b = 0; b < n_batches; ++b) {
    batch.batch_means.row(b) = batch_sums.row(b) / static_cast<double>(batch_counts[b]);
  }
  batch.moment_mean.resize(n_mono);
  batch.moment_se.resize(n_mono);
  for (int m = 0; m < n_mono; ++m) {
    batch.moment_mean[m] = batch_sums.col(m).sum() / static_cast<double>(cfg.n_trajectories);
    double var = 0.0;
    for (int b = 0; b < n_batches; ++b) {
      const double dmu = batch.batch_means(b, m) - batch.moment_mean[m];
      var += dmu * dmu;
    }
    var /= std::max(1, n_batches - 1);
    batch.moment_se[m] = std::sqrt(var / n_batches);
  }
  return batch;
}

struct SuperconservingRun {
  TrajectoryBatch batch;
  double discarded_coherence = 0.0;  // max |off-block element| projected away
};

/// Sequential weak measurements with superconserving Kraus operators for the
/// conserved quantity q. The input state is dephased into q-eigenspaces; the
/// discarded coherence is reported.
inline SuperconservingRun superconserving_sequence(const State& state,
                                                   const std::vector<ScheduledObservable>& schedule,
                                                   const Operator& h, const Operator& q,
                                                   const MeasurementConfig& cfg,
                                                   const SequenceOptions& opts = {}) {
  const double scale = std::max(1.0, max_abs(q.entries())) *
                       std::max(1.0, max_abs(h.entries()));
  if (max_abs(h.entries() * q.entries() - q.entries() * h.entries()) > 1e-10 * scale) {
    throw InvalidInputError("superconserving_sequence: q must be conserved ([h,q] = 0)");
  }
  KrausFamily family;
  family.mode = KrausMode::Superconserving;
  family.projectors = eigenprojectors(q);
  family.validate(state.dim());

  Matrix bd = Matrix::Zero(state.dim(), state.dim());
  for (const auto& p : family.projectors) {
    bd += p.entries() * state.rho() * p.entries();
  }
  SuperconservingRun run;
  run.discarded_coherence = max_abs(state.rho() - bd);
  bd = cplx(0.5, 0.0) * (bd + bd.adjoint().eval());
  bd /= bd.trace().real();
  const State dephased(std::move(bd));
  run.batch = run_sequence(dephased, schedule, h, cfg, opts, family);
  return run;
}

struct DeconvolvedMoment {
  double value = 0.0;
  double stderr = 0.0;
};

namespace detail {

inline double gaussian_raw_moment(double variance, int m) {
  if (m % 2 == 1) return 0.0;
  double v = 1.0;
  for (int k = m - 1; k >= 1; k -= 2) v *= static_cast<double>(k);
  return v * std::pow(variance, m / 2);
}

inline double binomial(int nn, int kk) {
  double r = 1.0;
  for (int i = 1; i <= kk; ++i) r = r * (nn - kk + i) / i;
  return r;
}

/// Triangular inversion of E[prod (s+n)^p] = sum_j prod C(p,j) mu_{p-j}(nu)
/// E[prod s^j] with independent zero-mean Gaussian noises.
inline double deconvolve_from(const std::function<double(const std::vector<int>&)>& measured,
                              const std::vector<double>& noise_var,
                              const std::vector<int>& powers) {
  struct Rec {
    const std::function<double(const std::vector<int>&)>& meas;
    const std::vector<double>& nu;
    double operator()(const std::vector<int>& p) const {
      double value = meas(p);
      // subtract every term with at least one noise pairing
      std::vector<int> j(p.size(), 0);
      const std::function<void(size_t, double, std::vector<int>&)> walk =
          [&](size_t idx, double coeff, std::vector<int>& jj) {
            if (idx == p.size()) {
              bool all_equal = true;
              for (size_t i = 0; i < p.size(); ++i) {
                if (jj[i] != p[i]) all_equal = false;
              }
              if (!all_equal) value -= coeff * (*this)(jj);
              return;
            }
            for (int ji = p[idx]; ji >= 0; --ji) {
              const int m = p[idx] - ji;
              if (m % 2 == 1) continue;
              const double c = binomial(p[idx], ji) * gaussian_raw_moment(nu[idx], m);
              if (c == 0.0) continue;
              jj[idx] = ji;
              walk(idx + 1, coeff * c, jj);
            }
            jj[idx] = 0;
          };
      std::vector<int> jj(p.size(), 0);
      walk(0, 1.0, jj);
      return value;
    }
  };
  Rec rec{measured, noise_var};
  return rec(powers);
}

}  // namespace detail

/// Remove the independent Gaussian detector-noise contributions from a raw
/// mixed product moment. powers is one entry per slot (0..4 each).
inline DeconvolvedMoment deconvolve_moments(const TrajectoryBatch& batch,
                                            const MeasurementConfig& cfg,
                                            const std::vector<int>& powers) {
  if (!cfg.deconvolve) {
    throw InvalidInputError("deconvolve_moments: cfg.deconvolve must be set");
  }
  if (static_cast<int>(powers.size()) != batch.n_slots) {
    throw InvalidInputError("deconvolve_moments: powers size mismatch");
  }
  for (int p : powers) {
    if (p < 0 || p > 4) {
      throw InvalidInputError("deconvolve_moments: power " + std::to_string(p) +
                              " unsupported (max 4)");
    }
  }
  const int n_batches = static_cast<int>(batch.batch_means.rows());
  // deconvolution is linear in the measured moments, so batch means of the
  // corrected value are the corrected batch means
  auto from_row = [&](int row) {
    auto measured = std::function<double(const std::vector<int>&)>(
        [&, row](const std::vector<int>& e) {
          const int idx = batch.monomial_index(e);
          return row < 0 ? batch.moment_mean[idx] : batch.batch_means(row, idx);
        });
    return detail::deconvolve_from(measured, batch.slot_noise_variance, powers);
  };
  DeconvolvedMoment out;
  out.value = from_row(-1);
  double var = 0.0;
  for (int b = 0; b < n_batches; ++b) {
    const double d = from_row(b) - out.value;
    var += d * d;
  }
  var /= std::max(1, n_batches - 1);
  out.stderr = std::sqrt(var / n_batches);
  return out;
}

}  // namespace weakcorr
