use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{step_schedule, FastLstdConfig, Learner, LearnerError, LinearModel, LstdConfig, ProjectedLstdConfig, TdConfig};
use crate::features::SparseFeatures;
use crate::mdp::Transition;
use crate::traces::{TraceMode, TraceState};

const SM_DENOMINATOR_TOL: f64 = 1e-12;

/// Sherman-Morrison maintained inverse of `eta I + sum e (x - gamma' x')^T`.
#[derive(Clone, Debug)]
struct ShermanMorrison {
    inverse: DMatrix<f64>,
    b: DVector<f64>,
    skipped: usize,
}

impl ShermanMorrison {
    fn new(dimension: usize, eta: f64) -> Self {
        ShermanMorrison {
            inverse: DMatrix::identity(dimension, dimension) / eta,
            b: DVector::zeros(dimension),
            skipped: 0,
        }
    }

    /// Adds `u v^T` to the matrix and `reward * u` to `b`; returns `inverse * b`.
    fn update(&mut self, u: &DVector<f64>, v: &DVector<f64>, reward: f64) -> DVector<f64> {
        self.b.axpy(reward, u, 1.0);
        let mu = &self.inverse * u;
        let vm = self.inverse.tr_mul(v);
        let denom = 1.0 + v.dot(&mu);
        if denom.abs() < SM_DENOMINATOR_TOL {
            self.skipped += 1;
            warn!("Sherman-Morrison denominator {denom:e} too small; skipping the rank-one update");
        } else {
            self.inverse.ger(-1.0 / denom, &mu, &vm, 1.0);
        }
        &self.inverse * &self.b
    }
}

/// Incremental LSTD(lambda) with a Sherman-Morrison inverse.
#[derive(Clone, Debug)]
pub struct Lstd {
    model: LinearModel,
    trace: TraceState,
    sm: ShermanMorrison,
    lambda: f64,
}

impl Lstd {
    pub fn new(dimension: usize, config: LstdConfig) -> Self {
        Lstd {
            model: LinearModel::new(dimension),
            trace: TraceState::new(dimension, TraceMode::Conventional),
            sm: ShermanMorrison::new(dimension, config.eta),
            lambda: config.lambda,
        }
    }

    /// Rank-one updates skipped because of a near-zero denominator.
    pub fn skipped_updates(&self) -> usize {
        self.sm.skipped
    }
}

impl Learner for Lstd {
    fn observe(&mut self, tr: &Transition) -> Result<(), LearnerError> {
        let m = &mut self.model;
        m.check_input(tr)?;
        self.trace.update(&tr.x, m.prev_discount, self.lambda, tr.rho);
        let dx = &tr.x - &tr.x_next * tr.discount_next;
        m.w = self.sm.update(&self.trace.e, &dx, tr.reward);
        m.advance(tr)
    }

    fn weights(&self) -> &DVector<f64> {
        &self.model.w
    }

    fn step_count(&self) -> usize {
        self.model.step_count
    }
}

/// LSTD(lambda) on randomly projected features `P x` with `P` a fixed
/// `k x d` Gaussian matrix scaled by `1/sqrt(k)`. The reported weights are
/// `P^T w_k`, so predictions on raw features agree with the projected model.
#[derive(Clone, Debug)]
pub struct ProjectedLstd {
    projection: DMatrix<f64>,
    inner: Lstd,
    model: LinearModel,
}

impl ProjectedLstd {
    pub fn new(dimension: usize, config: ProjectedLstdConfig) -> Self {
        let k = config.rank;
        let mut rng = ChaCha8Rng::seed_from_u64(config.projection_seed);
        let scale = 1.0 / (k as f64).sqrt();
        let projection = DMatrix::from_fn(k, dimension, |_, _| rng.sample::<f64, _>(StandardNormal) * scale);
        Self::with_projection(projection, config)
    }

    pub fn with_projection(projection: DMatrix<f64>, config: ProjectedLstdConfig) -> Self {
        let (k, d) = projection.shape();
        ProjectedLstd {
            inner: Lstd::new(
                k,
                LstdConfig {
                    lambda: config.lambda,
                    eta: config.eta,
                },
            ),
            projection,
            model: LinearModel::new(d),
        }
    }

    pub fn projection(&self) -> &DMatrix<f64> {
        &self.projection
    }
}

impl Learner for ProjectedLstd {
    fn observe(&mut self, tr: &Transition) -> Result<(), LearnerError> {
        self.model.check_input(tr)?;
        let projected = Transition {
            x: &self.projection * &tr.x,
            x_next: &self.projection * &tr.x_next,
            ..tr.clone()
        };
        self.inner.observe(&projected)?;
        self.model.w = self.projection.tr_mul(self.inner.weights());
        self.model.advance(tr)
    }

    fn weights(&self) -> &DVector<f64> {
        &self.model.w
    }

    fn step_count(&self) -> usize {
        self.model.step_count
    }
}

/// iLSTD with one descent dimension per step, on the summed (not averaged)
/// statistics `A_t = sum e (x - gamma' x')^T`, `b_t = sum r e`.
#[derive(Clone, Debug)]
pub struct Ilstd {
    model: LinearModel,
    trace: TraceState,
    a: DMatrix<f64>,
    residual: DVector<f64>,
    config: TdConfig,
}

impl Ilstd {
    pub fn new(dimension: usize, config: TdConfig) -> Self {
        Ilstd {
            model: LinearModel::new(dimension),
            trace: TraceState::new(dimension, TraceMode::Conventional),
            a: DMatrix::zeros(dimension, dimension),
            residual: DVector::zeros(dimension),
            config,
        }
    }

    /// `b_t - A_t w`, maintained incrementally.
    pub fn residual(&self) -> &DVector<f64> {
        &self.residual
    }
}

impl Learner for Ilstd {
    fn observe(&mut self, tr: &Transition) -> Result<(), LearnerError> {
        let m = &mut self.model;
        m.check_input(tr)?;
        self.trace.update(&tr.x, m.prev_discount, self.config.lambda, tr.rho);
        let dx = &tr.x - &tr.x_next * tr.discount_next;
        let e = &self.trace.e;
        self.a.ger(1.0, e, &dx, 1.0);
        // Delta b - Delta A w = e (r - dx^T w).
        self.residual.axpy(tr.reward - dx.dot(&m.w), e, 1.0);

        let mut j = 0;
        let mut best = -1.0;
        for (i, r) in self.residual.iter().enumerate() {
            if r.abs() > best {
                best = r.abs();
                j = i;
            }
        }
        let alpha = step_schedule(self.config.schedule, self.config.alpha0, m.step_count, m.episodes);
        let change = alpha * self.residual[j];
        if change != 0.0 {
            m.w[j] += change;
            self.residual.axpy(-change, &self.a.column(j), 1.0);
        }
        m.advance(tr)
    }

    fn weights(&self) -> &DVector<f64> {
        &self.model.w
    }

    fn step_count(&self) -> usize {
        self.model.step_count
    }
}

#[derive(Clone, Debug)]
struct StoredTransition {
    x: SparseFeatures,
    x_next: SparseFeatures,
    reward: f64,
    discount_next: f64,
    rho: f64,
}

fn sparse_dot(w: &DVector<f64>, x: &SparseFeatures) -> f64 {
    x.active().iter().map(|&(i, v)| w[i] * v).sum()
}

/// Fast LSTD: buffers every transition and, after each block of `rank` new
/// ones, performs `rank` TD(0) updates on transitions drawn uniformly from
/// the whole buffer. Step sizes follow the schedule over the global count of
/// these randomized updates.
#[derive(Clone, Debug)]
pub struct FastLstd {
    model: LinearModel,
    buffer: Vec<StoredTransition>,
    rng: ChaCha8Rng,
    updates: usize,
    config: FastLstdConfig,
}

impl FastLstd {
    pub fn new(dimension: usize, config: FastLstdConfig, seed: u64) -> Result<Self, LearnerError> {
        if config.lambda != 0.0 {
            return Err(LearnerError::Config(format!(
                "fast_lstd is restricted to lambda = 0 (got {})",
                config.lambda
            )));
        }
        if config.rank == 0 {
            return Err(LearnerError::Config("fast_lstd needs a batch size (rank) >= 1".into()));
        }
        Ok(FastLstd {
            model: LinearModel::new(dimension),
            buffer: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            updates: 0,
            config,
        })
    }
}

impl Learner for FastLstd {
    fn observe(&mut self, tr: &Transition) -> Result<(), LearnerError> {
        let m = &mut self.model;
        m.check_input(tr)?;
        self.buffer.push(StoredTransition {
            x: SparseFeatures::from_dense(&tr.x),
            x_next: SparseFeatures::from_dense(&tr.x_next),
            reward: tr.reward,
            discount_next: tr.discount_next,
            rho: tr.rho,
        });
        if self.buffer.len().is_multiple_of(self.config.rank) {
            for _ in 0..self.config.rank {
                let s = &self.buffer[self.rng.random_range(0..self.buffer.len())];
                let delta = s.reward + s.discount_next * sparse_dot(&m.w, &s.x_next) - sparse_dot(&m.w, &s.x);
                let alpha = step_schedule(self.config.schedule, self.config.alpha0, self.updates, m.episodes);
                let scale = alpha * s.rho * delta;
                for &(i, v) in s.x.active() {
                    m.w[i] += scale * v;
                }
                self.updates += 1;
            }
        }
        m.advance(tr)
    }

    fn weights(&self) -> &DVector<f64> {
        &self.model.w
    }

    fn step_count(&self) -> usize {
        self.model.step_count
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::Schedule;

    fn random_transition(rng: &mut ChaCha8Rng, d: usize) -> Transition {
        let x = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let xn = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        Transition::on_policy(x, xn, rng.random_range(-1.0..1.0), 0.9)
    }

    #[test]
    fn zero_samples_zero_weights() {
        let lstd = Lstd::new(4, LstdConfig { lambda: 0.5, eta: 1.0 });
        assert_eq!(lstd.weights(), &DVector::zeros(4));
    }

    #[test]
    fn lstd_matches_dense_solve() {
        let d = 6;
        let eta = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut lstd = Lstd::new(d, LstdConfig { lambda: 0.6, eta });
        let mut a = DMatrix::identity(d, d) * eta;
        let mut b = DVector::zeros(d);
        let mut e = DVector::zeros(d);
        let mut gamma_prev = 0.0;
        for _ in 0..100 {
            let tr = random_transition(&mut rng, d);
            lstd.observe(&tr).unwrap();
            e = e * (gamma_prev * 0.6) + &tr.x;
            a += &e * (&tr.x - &tr.x_next * tr.discount_next).transpose();
            b += &e * tr.reward;
            gamma_prev = tr.discount_next;
            let w = a.clone().lu().solve(&b).unwrap();
            assert!((lstd.weights() - w).amax() < 1e-8);
        }
    }

    #[test]
    fn identity_projection_equals_lstd() {
        let d = 4;
        let cfg = ProjectedLstdConfig {
            lambda: 0.3,
            eta: 1.0,
            rank: d,
            projection_seed: 0,
        };
        let mut projected = ProjectedLstd::with_projection(DMatrix::identity(d, d), cfg);
        let mut plain = Lstd::new(d, LstdConfig { lambda: 0.3, eta: 1.0 });
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let tr = random_transition(&mut rng, d);
            projected.observe(&tr).unwrap();
            plain.observe(&tr).unwrap();
            assert_eq!(projected.weights(), plain.weights());
        }
    }

    #[test]
    fn projection_is_seeded() {
        let cfg = ProjectedLstdConfig {
            lambda: 0.0,
            eta: 1.0,
            rank: 3,
            projection_seed: 42,
        };
        let a = ProjectedLstd::new(8, cfg.clone());
        let b = ProjectedLstd::new(8, cfg);
        assert_eq!(a.projection(), b.projection());
    }

    #[test]
    fn ilstd_zero_residual_no_change() {
        let mut ilstd = Ilstd::new(
            2,
            TdConfig {
                alpha0: 0.5,
                lambda: 0.0,
                schedule: Schedule::Constant,
            },
        );
        let x = DVector::from_vec(vec![1.0, 0.0]);
        ilstd.observe(&Transition::on_policy(x.clone(), x, 0.0, 0.5)).unwrap();
        assert_eq!(ilstd.weights(), &DVector::zeros(2));
    }

    #[test]
    fn ilstd_one_feature_solves_scalar_system() {
        // A_t = t (1 - 0.5), b_t = t; solution w = 2.
        let mut ilstd = Ilstd::new(
            1,
            TdConfig {
                alpha0: 1.0,
                lambda: 0.0,
                schedule: Schedule::OneOverT,
            },
        );
        let x = DVector::from_element(1, 1.0);
        for _ in 0..200 {
            ilstd.observe(&Transition::on_policy(x.clone(), x.clone(), 1.0, 0.5)).unwrap();
        }
        assert!((ilstd.weights()[0] - 2.0).abs() < 1e-10);
        assert!(ilstd.residual()[0].abs() < 1e-8);
    }

    #[test]
    fn fast_lstd_single_transition_is_td0() {
        let cfg = FastLstdConfig {
            alpha0: 0.1,
            rank: 1,
            lambda: 0.0,
            schedule: Schedule::Constant,
        };
        let mut fast = FastLstd::new(2, cfg, 3).unwrap();
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let xn = DVector::from_vec(vec![0.0, 1.0]);
        let tr = Transition::on_policy(x.clone(), xn.clone(), 1.0, 0.9);
        let mut w: DVector<f64> = DVector::zeros(2);
        for _ in 0..20 {
            fast.observe(&tr).unwrap();
            let delta = 1.0 + 0.9 * w.dot(&xn) - w.dot(&x);
            w += &x * (0.1 * delta);
            assert!((fast.weights() - &w).amax() < 1e-15);
        }
    }
}
