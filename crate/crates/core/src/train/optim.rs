use crate::error::{Error, Result};
use crate::nn::{ParamMap, Real, Tensor};

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T: Real> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: ParamMap<T>,
    v: ParamMap<T>,
}

impl<T: Real> Default for Adam<T> {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: ParamMap::new(),
            v: ParamMap::new(),
        }
    }
}

impl<T: Real> Adam<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// First and second moment estimates of `name`.
    pub fn moments(&self, name: &str) -> Option<(&Tensor<T>, &Tensor<T>)> {
        Some((self.m.get(name)?, self.v.get(name)?))
    }

    /// Updates every parameter that has an entry in `grads`. Nothing is
    /// modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamMap<T>, grads: &ParamMap<T>, lr: f64) -> Result<()> {
        for (name, g) in grads {
            if !g.all_finite() {
                return Err(Error::Diverged(format!("non-finite gradient for {name}")));
            }
            match params.get(name) {
                Some(p) if p.shape() == g.shape() => {}
                Some(p) => {
                    return Err(Error::ShapeMismatch(format!("{name}: gradient {:?} for {:?}", g.shape(), p.shape())))
                }
                None => return Err(Error::MissingTensor(name.clone())),
            }
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, g) in grads {
            let p = params.get_mut(name).expect("checked above");
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::param_zeros(g.shape()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::param_zeros(g.shape()));
            for (((p, m), v), &g) in p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data()) {
                let g = g.as_f64();
                let mn = self.beta1 * m.as_f64() + (1.0 - self.beta1) * g;
                let vn = self.beta2 * v.as_f64() + (1.0 - self.beta2) * g * g;
                *m = T::of(mn);
                *v = T::of(vn);
                let upd = lr * (mn / c1) / ((vn / c2).sqrt() + self.eps);
                *p = T::of(p.as_f64() - upd);
            }
        }
        Ok(())
    }
}

/// Optimization schedule. Patience is counted in validation evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSchedule {
    pub lr0: f64,
    pub batch: usize,
    pub halve_patience: usize,
    pub stop_patience: usize,
    pub segment_s: f64,
    /// Training steps between validation evaluations.
    pub eval_every: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            batch: 8,
            halve_patience: 5,
            stop_patience: 10,
            segment_s: 5.0,
            eval_every: 50,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be positive");
        }
        if self.batch == 0 || self.eval_every == 0 {
            return bad("batch and eval_every must be positive");
        }
        if self.halve_patience == 0 || self.stop_patience < self.halve_patience {
            return bad("need 0 < halve_patience <= stop_patience");
        }
        if !(self.segment_s >= 0.025) {
            return bad("segment_s must cover at least one 25 ms window");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlateauEvent {
    Improved,
    Stalled,
    /// The learning rate was halved.
    Halved,
    /// Early stopping triggered.
    Stop,
}

/// Learning-rate halving and early stopping on a validation loss.
///
/// The first observation sets the baseline. Every later observation that
/// does not strictly improve on the best so far counts toward both
/// patiences; the halving counter restarts after each halving, the stopping
/// counter only on improvement.
#[derive(Debug, Clone)]
pub struct Plateau {
    lr: f64,
    best: Option<f64>,
    since_best: usize,
    since_halve: usize,
    halve_patience: usize,
    stop_patience: usize,
}

impl Plateau {
    pub fn new(sched: &TrainSchedule) -> Self {
        Self {
            lr: sched.lr0,
            best: None,
            since_best: 0,
            since_halve: 0,
            halve_patience: sched.halve_patience,
            stop_patience: sched.stop_patience,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn observe(&mut self, val_loss: f64) -> PlateauEvent {
        if self.best.map_or(true, |b| val_loss < b) {
            self.best = Some(val_loss);
            self.since_best = 0;
            self.since_halve = 0;
            return PlateauEvent::Improved;
        }
        self.since_best += 1;
        self.since_halve += 1;
        if self.since_best >= self.stop_patience {
            PlateauEvent::Stop
        } else if self.since_halve >= self.halve_patience {
            self.lr *= 0.5;
            self.since_halve = 0;
            PlateauEvent::Halved
        } else {
            PlateauEvent::Stalled
        }
    }
}
