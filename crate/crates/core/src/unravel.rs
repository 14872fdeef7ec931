//! Lindblad generators and their quantum-jump and diffusive unravelings.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;

use crate::channels::{KrausSet, Label};
use crate::error::{Error, Result};
use crate::linalg::{c, eig_hermitian, CMatrix, DensityOp, Ket, C0, CI};
use crate::trajectories::{normal_pair, sample_index, uniform, PROB_FLOOR};

/// Default bound on `dt · rate` accepted by [`LindbladModel::new`].
pub const DEFAULT_STIFFNESS: f64 = 0.05;

/// Positivity slack tolerated on master-equation outputs before the step
/// size is declared too large.
pub const MASTER_POSITIVITY_TOL: f64 = 1e-8;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type MatrixFn = Arc<dyn Fn(f64) -> CMatrix + Send + Sync>;

/// Operator-valued function of the control parameter `λ`.
#[derive(Clone)]
pub enum OpFn {
    Fixed(CMatrix),
    /// `base + plus·e^{iλ} + minus·e^{-iλ}`, the form of a periodic drive.
    Phased {
        base: CMatrix,
        plus: CMatrix,
        minus: CMatrix,
    },
    Param(MatrixFn),
}

impl fmt::Debug for OpFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpFn::Fixed(m) => f.debug_tuple("Fixed").field(m).finish(),
            OpFn::Phased { base, plus, minus } => f
                .debug_struct("Phased")
                .field("base", base)
                .field("plus", plus)
                .field("minus", minus)
                .finish(),
            OpFn::Param(_) => f.write_str("Param(..)"),
        }
    }
}

impl OpFn {
    pub fn param(f: impl Fn(f64) -> CMatrix + Send + Sync + 'static) -> Self {
        OpFn::Param(Arc::new(f))
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, OpFn::Fixed(_))
    }

    pub fn eval(&self, lambda: f64) -> CMatrix {
        match self {
            OpFn::Fixed(m) => m.clone(),
            OpFn::Param(f) => f(lambda),
            OpFn::Phased { base, .. } => {
                let mut out = base.clone();
                self.eval_into(lambda, &mut out);
                out
            }
        }
    }

    /// Writes the operator at `λ` into `out` without allocating, except for
    /// [`OpFn::Param`].
    pub fn eval_into(&self, lambda: f64, out: &mut CMatrix) {
        match self {
            OpFn::Fixed(m) => out.as_mut_slice().copy_from_slice(m.as_slice()),
            OpFn::Param(f) => {
                let m = f(lambda);
                out.as_mut_slice().copy_from_slice(m.as_slice());
            }
            OpFn::Phased { base, plus, minus } => {
                let ep = Complex64::from_polar(1.0, lambda);
                let em = ep.conj();
                for (((o, &b), &p), &m) in out
                    .as_mut_slice()
                    .iter_mut()
                    .zip(base.as_slice())
                    .zip(plus.as_slice())
                    .zip(minus.as_slice())
                {
                    *o = b + p * ep + m * em;
                }
            }
        }
    }

    /// `d/dλ` of the operator; analytic except for [`OpFn::Param`], which
    /// uses a central difference with step `h`.
    pub fn derivative(&self, lambda: f64, h: f64) -> CMatrix {
        match self {
            OpFn::Fixed(m) => CMatrix::zeros(m.rows(), m.cols()),
            OpFn::Phased { plus, minus, .. } => {
                let ep = Complex64::from_polar(1.0, lambda);
                &plus.scale(CI * ep) + &minus.scale(-CI * ep.conj())
            }
            OpFn::Param(f) => (&f(lambda + h) - &f(lambda - h)).scale_real(0.5 / h),
        }
    }
}

/// Time dependence `t ↦ λ_t` of the control parameter.
#[derive(Clone)]
pub enum Schedule {
    Constant(f64),
    /// `λ_t = rate · t`.
    Linear { rate: f64 },
    Custom(ScalarFn),
}

impl fmt::Debug for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Schedule::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            Schedule::Linear { rate } => f.debug_struct("Linear").field("rate", rate).finish(),
            Schedule::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl Schedule {
    pub fn custom(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Schedule::Custom(Arc::new(f))
    }

    pub fn at(&self, t: f64) -> f64 {
        match self {
            Schedule::Constant(v) => *v,
            Schedule::Linear { rate } => rate * t,
            Schedule::Custom(f) => f(t),
        }
    }
}

/// Markovian open-system model `dρ/dt = -i[H(λ_t), ρ] + Σ_j D[L_j(λ_t)]ρ`
/// together with the time step of its unravelings.
#[derive(Clone, Debug)]
pub struct LindbladModel {
    dim: usize,
    h: OpFn,
    jumps: Vec<OpFn>,
    schedule: Schedule,
    dt: f64,
    rate: f64,
    /// `Σ L†L`, cached when every jump operator is fixed.
    decay_fixed: Option<CMatrix>,
    complex_noise: bool,
}

impl LindbladModel {
    pub fn new(h: OpFn, jumps: Vec<OpFn>, schedule: Schedule, dt: f64) -> Result<Self> {
        Self::with_stiffness(h, jumps, schedule, dt, DEFAULT_STIFFNESS)
    }

    /// Like [`LindbladModel::new`] with a custom bound on `dt · rate`.
    pub fn with_stiffness(h: OpFn, jumps: Vec<OpFn>, schedule: Schedule, dt: f64, stiffness: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Parameter(format!("time step must be positive, got {dt}")));
        }
        let l0 = schedule.at(0.0);
        let h0 = h.eval(l0);
        if !h0.is_square() {
            return Err(Error::Dimension("Hamiltonian must be square".into()));
        }
        let dim = h0.rows();
        for t in [0.0, dt, 0.5] {
            let ht = h.eval(schedule.at(t));
            let scale = ht.max_abs().max(1.0);
            if ht.hermiticity_defect() > 1e-10 * scale {
                return Err(Error::InvalidState(format!("Hamiltonian is not Hermitian at t = {t}")));
            }
        }
        let mut decay = CMatrix::zeros(dim, dim);
        let mut jump_rate = 0.0;
        for (j, l) in jumps.iter().enumerate() {
            let m = l.eval(l0);
            if m.rows() != dim || m.cols() != dim {
                return Err(Error::Dimension(format!("jump operator {j} has the wrong shape")));
            }
            let ltl = &m.adjoint() * &m;
            jump_rate += spectral_radius(&ltl)?;
            decay += &ltl;
        }
        let rate = jump_rate;
        if dt * rate > stiffness {
            return Err(Error::StepSize(format!(
                "dt * rate = {:.3e} exceeds the stiffness guard {stiffness}",
                dt * rate
            )));
        }
        let decay_fixed = jumps.iter().all(OpFn::is_fixed).then_some(decay);
        Ok(Self {
            dim,
            h,
            jumps,
            schedule,
            dt,
            rate,
            decay_fixed,
            complex_noise: false,
        })
    }

    /// Selects complex Wiener increments for [`qsd_step`].
    pub fn with_complex_noise(mut self, on: bool) -> Self {
        self.complex_noise = on;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_jumps(&self) -> usize {
        self.jumps.len()
    }

    /// Sum of the largest eigenvalues of `L_j†L_j` at `t = 0`.
    pub fn jump_rate(&self) -> f64 {
        self.rate
    }

    pub fn complex_noise(&self) -> bool {
        self.complex_noise
    }

    pub fn lambda(&self, t: f64) -> f64 {
        self.schedule.at(t)
    }

    /// `dλ/dt` by central difference with step `dt/10`.
    pub fn dlambda_dt(&self, t: f64) -> f64 {
        match &self.schedule {
            Schedule::Constant(_) => 0.0,
            Schedule::Linear { rate } => *rate,
            Schedule::Custom(f) => {
                let h = self.dt / 10.0;
                (f(t + h) - f(t - h)) / (2.0 * h)
            }
        }
    }

    pub fn hamiltonian(&self, t: f64) -> CMatrix {
        self.h.eval(self.lambda(t))
    }

    pub fn hamiltonian_into(&self, t: f64, out: &mut CMatrix) {
        self.h.eval_into(self.lambda(t), out);
    }

    /// `∂_λ H` at the parameter value reached at time `t`.
    pub fn dh_dlambda(&self, t: f64) -> CMatrix {
        let lam = self.lambda(t);
        self.h.derivative(lam, (self.dt / 10.0).max(1e-6 * lam.abs().max(1.0)))
    }

    pub fn jump_ops(&self, t: f64) -> Vec<CMatrix> {
        let lam = self.lambda(t);
        self.jumps.iter().map(|l| l.eval(lam)).collect()
    }

    pub fn decay_operator(&self, t: f64) -> CMatrix {
        if let Some(k) = &self.decay_fixed {
            return k.clone();
        }
        let mut k = CMatrix::zeros(self.dim, self.dim);
        for l in self.jump_ops(t) {
            k += &(&l.adjoint() * &l);
        }
        k
    }

    /// Non-Hermitian generator `H_eff = H − (i/2) Σ L†L`.
    pub fn effective_hamiltonian(&self, t: f64) -> CMatrix {
        &self.hamiltonian(t) - &self.decay_operator(t).scale(c(0.0, 0.5))
    }

    /// Completeness tolerance `10 (rate·dt)²` of the first-order Kraus sets,
    /// with `rate` the jump rate plus the spectral radius of `H(t)`.
    pub fn tol_cptp(&self, t: f64) -> f64 {
        let h = spectral_radius(&self.hamiltonian(t)).unwrap_or(0.0);
        let r = (self.rate + h) * self.dt;
        10.0 * r * r
    }
}

fn spectral_radius(h: &CMatrix) -> Result<f64> {
    let e = eig_hermitian(&h.hermitian_part())?;
    Ok(e.values.iter().fold(0.0_f64, |a, v| a.max(v.abs())))
}

/// `dρ/dt = -i[H, ρ] + Σ_j (L ρ L† − ½{L†L, ρ})`.
pub fn lindblad_rhs(rho: &CMatrix, model: &LindbladModel, t: f64) -> CMatrix {
    let h = model.hamiltonian(t);
    let hr = &h * rho;
    let rh = rho * &h;
    let mut out = (&hr - &rh).scale(-CI);
    for l in model.jump_ops(t) {
        let ld = l.adjoint();
        let ltl = &ld * &l;
        out += &(&(&l * rho) * &ld);
        let anti = &(&ltl * rho) + &(rho * &ltl);
        out += &anti.scale_real(-0.5);
    }
    out
}

/// Quantum-jump Kraus set at time `t`: `M_0 = 1 − dt(iH + ½ΣL†L)` labelled
/// [`Label::NoJump`] followed by `M_j = √dt L_j` labelled `Label::Jump(j)`.
pub fn qj_kraus(model: &LindbladModel, t: f64) -> Result<KrausSet> {
    let dt = model.dt();
    let n = model.dim();
    let mut m0 = CMatrix::identity(n);
    m0 = &m0 - &model.hamiltonian(t).scale(c(0.0, dt));
    m0 = &m0 - &model.decay_operator(t).scale_real(0.5 * dt);
    let mut ops = vec![(Label::NoJump, m0)];
    for (j, l) in model.jump_ops(t).into_iter().enumerate() {
        ops.push((Label::Jump(j), l.scale_real(dt.sqrt())));
    }
    KrausSet::new(ops, model.tol_cptp(t))
}

/// Outcome of one quantum-jump step; `outcome = 0` is the no-jump branch and
/// `outcome = j + 1` a jump through `L_j`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QjStep {
    pub outcome: usize,
    /// `‖M_α ψ‖²` before renormalization of the outcome weights.
    pub raw_prob: f64,
    /// Probability after dividing by the total weight of all outcomes.
    pub prob: f64,
}

/// Allocation-free quantum-jump stepper equivalent to sampling from
/// [`qj_kraus`] at each step.
pub struct QjStepper<'a> {
    model: &'a LindbladModel,
    h: CMatrix,
    decay: CMatrix,
    lops: Vec<CMatrix>,
    hpsi: Vec<Complex64>,
    kpsi: Vec<Complex64>,
    branches: Vec<Vec<Complex64>>,
    weights: Vec<f64>,
}

impl<'a> QjStepper<'a> {
    pub fn new(model: &'a LindbladModel) -> Self {
        let n = model.dim();
        let lops = model.jump_ops(0.0);
        Self {
            model,
            h: CMatrix::zeros(n, n),
            decay: model.decay_operator(0.0),
            hpsi: vec![C0; n],
            kpsi: vec![C0; n],
            branches: vec![vec![C0; n]; lops.len() + 1],
            weights: vec![0.0; lops.len() + 1],
            lops,
        }
    }

    /// Advances `psi` in place from `t` to `t + dt`.
    pub fn step(&mut self, psi: &mut [Complex64], t: f64, rng: &mut impl Rng) -> Result<QjStep> {
        let dt = self.model.dt();
        self.model.hamiltonian_into(t, &mut self.h);
        if self.model.decay_fixed.is_none() {
            self.lops = self.model.jump_ops(t);
            self.decay = self.model.decay_operator(t);
        }
        self.h.apply_into(psi, &mut self.hpsi);
        self.decay.apply_into(psi, &mut self.kpsi);
        let b0 = &mut self.branches[0];
        for i in 0..psi.len() {
            b0[i] = psi[i] - (CI * self.hpsi[i] + 0.5 * self.kpsi[i]) * dt;
        }
        self.weights[0] = norm_sqr(b0);
        let sdt = dt.sqrt();
        for (j, l) in self.lops.iter().enumerate() {
            let b = &mut self.branches[j + 1];
            l.apply_into(psi, b);
            for z in b.iter_mut() {
                *z *= sdt;
            }
            self.weights[j + 1] = norm_sqr(b);
        }
        let total: f64 = self.weights.iter().sum();
        let outcome = sample_index(&self.weights, uniform(rng));
        let raw = self.weights[outcome];
        if !(raw > PROB_FLOOR) {
            return Err(Error::ImpossibleOutcome(raw));
        }
        let s = 1.0 / raw.sqrt();
        for (p, &b) in psi.iter_mut().zip(&self.branches[outcome]) {
            *p = b * s;
        }
        Ok(QjStep {
            outcome,
            raw_prob: raw,
            prob: raw / total,
        })
    }
}

#[inline]
fn norm_sqr(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// Wiener increments of one diffusive step. `dw` is the innovation and
/// `dy` the measurement signal it generates, one entry per jump channel.
#[derive(Clone, Debug, PartialEq)]
pub struct QsdIncrement {
    pub dw: Vec<Complex64>,
    pub dy: Vec<Complex64>,
}

/// One diffusive step with the Itô Kraus operator
/// `M(dy) = 1 − dt(iH + ½ΣL†L) + Σ_j dy_j L_j`.
///
/// With real noise the signal is `dy_j = dw_j + <L_j + L_j†> dt` and `dw_j`
/// is drawn from `N(0, dt)`. With complex noise `dy_j = dw_j + <L_j†> dt`
/// and `E|dw_j|² = dt`. The returned weight is the outcome density
/// `Π_j p_0(dy_j) ‖M(dy)ψ‖²`; scalar prefactors of the operator cancel in
/// the normalized update and are kept out of it.
pub fn qsd_step(psi: &Ket, model: &LindbladModel, t: f64, rng: &mut impl Rng) -> Result<(Ket, QsdIncrement, f64)> {
    let dt = model.dt();
    let h = model.hamiltonian(t);
    let ls = model.jump_ops(t);
    let mut out = h.apply(psi)?.into_amplitudes();
    let k = model.decay_operator(t).apply(psi)?.into_amplitudes();
    for ((o, &kv), &p) in out.iter_mut().zip(&k).zip(psi.amplitudes()) {
        *o = p - (CI * *o + 0.5 * kv) * dt;
    }
    let mut inc = QsdIncrement {
        dw: Vec::with_capacity(ls.len()),
        dy: Vec::with_capacity(ls.len()),
    };
    let mut density = 1.0;
    for l in &ls {
        let lpsi = l.apply(psi)?;
        let mean_l = psi.inner(&lpsi);
        let (dw, dy) = if model.complex_noise() {
            let (a, b) = normal_pair(rng);
            let s = (0.5 * dt).sqrt();
            let dw = c(a * s, b * s);
            let dy = dw + mean_l.conj() * dt;
            density *= (-dy.norm_sqr() / dt).exp() / (std::f64::consts::PI * dt);
            (dw, dy)
        } else {
            let (a, _) = normal_pair(rng);
            let dw = c(a * dt.sqrt(), 0.0);
            let dy = dw + c(2.0 * mean_l.re * dt, 0.0);
            density *= (-dy.re * dy.re / (2.0 * dt)).exp() / (std::f64::consts::TAU * dt).sqrt();
            (dw, dy)
        };
        for (o, &lv) in out.iter_mut().zip(lpsi.amplitudes()) {
            *o += dy * lv;
        }
        inc.dw.push(dw);
        inc.dy.push(dy);
    }
    let raw = Ket::from_raw(out);
    let p = raw.norm_sqr();
    if !(p > PROB_FLOOR) {
        return Err(Error::ImpossibleOutcome(p));
    }
    let post = Ket::normalized(raw.into_amplitudes())?;
    Ok((post, inc, density * p))
}

/// RK4 integration of the master equation, one step of `model.dt()` at a
/// time, returning the state at every point of the uniform grid `t_grid`.
/// The grid spacing must be a whole number of model steps.
pub fn evolve_master(rho0: &DensityOp, model: &LindbladModel, t_grid: &[f64]) -> Result<Vec<DensityOp>> {
    if t_grid.is_empty() {
        return Ok(Vec::new());
    }
    let dt = model.dt();
    let spacing = if t_grid.len() > 1 { t_grid[1] - t_grid[0] } else { dt };
    let ratio = spacing / dt;
    let sub = ratio.round() as usize;
    if sub == 0 || (ratio - sub as f64).abs() > 1e-6 {
        return Err(Error::Parameter(format!(
            "grid spacing {spacing} is not a multiple of dt = {dt}"
        )));
    }
    for w in t_grid.windows(2) {
        if ((w[1] - w[0]) - spacing).abs() > 1e-9 * spacing.max(1.0) {
            return Err(Error::Parameter("time grid is not uniform".into()));
        }
    }
    let mut rho = rho0.matrix().clone();
    let mut out = Vec::with_capacity(t_grid.len());
    out.push(rho0.clone());
    let mut t = t_grid[0];
    for _ in 1..t_grid.len() {
        for _ in 0..sub {
            rho = rk4_step(&rho, model, t, dt);
            t += dt;
        }
        let state = DensityOp::from_matrix_symmetrized(&rho, MASTER_POSITIVITY_TOL).map_err(|e| {
            Error::StepSize(format!("master-equation state left the state space at t = {t:.4}: {e}"))
        })?;
        rho = state.matrix().clone();
        out.push(state);
    }
    Ok(out)
}

fn rk4_step(rho: &CMatrix, model: &LindbladModel, t: f64, dt: f64) -> CMatrix {
    let k1 = lindblad_rhs(rho, model, t);
    let k2 = lindblad_rhs(&(rho + &k1.scale_real(0.5 * dt)), model, t + 0.5 * dt);
    let k3 = lindblad_rhs(&(rho + &k2.scale_real(0.5 * dt)), model, t + 0.5 * dt);
    let k4 = lindblad_rhs(&(rho + &k3.scale_real(dt)), model, t + dt);
    let mut incr = &k1 + &k4;
    incr += &(&k2 + &k3).scale_real(2.0);
    rho + &incr.scale_real(dt / 6.0)
}
