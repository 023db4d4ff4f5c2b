//! Deterministic SEIR dynamics for one community and for a linear mixture of
//! independent communities.
//!
//! Each community follows
//!
//! ```text
//! dS/dt = alpha*N - beta*S*I/N - mu*S
//! dE/dt = beta*S*I/N - (sigma + mu)*E
//! dI/dt = sigma*E - (gamma + mu)*I
//! dR/dt = gamma*I - mu*R
//! ```
//!
//! integrated with forward Euler. The transmission rate is normalized by the
//! community population, so one grid of `beta` values is meaningful across
//! communities of very different sizes. Compartments are clamped at zero
//! after every step.
//!
//! A mixture is the per-day elementwise sum of its component trajectories.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DT: f64 = 1.0;

/// Relative tolerance used when checking `S + E + I + R = N`.
pub const CONSERVATION_RTOL: f64 = 1e-9;

/// Boundary condition, initial condition and ODE coefficients of one community.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommunityParams {
    pub population: f64,
    pub initial: Compartments,
    /// Normalized transmission rate (1/day); the force of infection is `beta * I / N`.
    pub beta: f64,
    /// Latent-to-infectious rate (1/day).
    pub sigma: f64,
    /// Recovery rate (1/day).
    pub gamma: f64,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub mu: f64,
}

/// The four compartment sizes, in persons.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Compartments {
    pub s: f64,
    pub e: f64,
    pub i: f64,
    pub r: f64,
}

impl Compartments {
    pub fn total(&self) -> f64 {
        self.s + self.e + self.i + self.r
    }

    fn is_finite(&self) -> bool {
        self.s.is_finite() && self.e.is_finite() && self.i.is_finite() && self.r.is_finite()
    }

    fn scaled(&self, w: f64) -> Self {
        Compartments {
            s: self.s * w,
            e: self.e * w,
            i: self.i * w,
            r: self.r * w,
        }
    }
}

impl std::ops::AddAssign for Compartments {
    fn add_assign(&mut self, rhs: Self) {
        self.s += rhs.s;
        self.e += rhs.e;
        self.i += rhs.i;
        self.r += rhs.r;
    }
}

/// Compartments at an integer step index.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CompartmentState {
    pub t: u32,
    #[serde(flatten)]
    pub c: Compartments,
}

impl CompartmentState {
    pub fn new(t: u32, s: f64, e: f64, i: f64, r: f64) -> Self {
        CompartmentState {
            t,
            c: Compartments { s, e, i, r },
        }
    }
}

impl CommunityParams {
    /// Builds a community whose susceptible pool is whatever is left of
    /// `population` after the seeded `exposed`, `infectious` and `recovered`.
    pub fn seeded(
        population: f64,
        exposed: f64,
        infectious: f64,
        recovered: f64,
        beta: f64,
        sigma: f64,
        gamma: f64,
    ) -> Result<Self> {
        let params = CommunityParams {
            population,
            initial: Compartments {
                s: population - exposed - infectious - recovered,
                e: exposed,
                i: infectious,
                r: recovered,
            },
            beta,
            sigma,
            gamma,
            alpha: 0.0,
            mu: 0.0,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.population;
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::config(format!(
                "population must be positive, got {n}"
            )));
        }
        let c = &self.initial;
        if !c.is_finite() || c.s < 0.0 || c.e < 0.0 || c.i < 0.0 || c.r < 0.0 {
            return Err(Error::config(format!(
                "initial compartments must be finite and non-negative, got {c:?}"
            )));
        }
        if (c.total() - n).abs() > CONSERVATION_RTOL * n {
            return Err(Error::config(format!(
                "initial compartments sum to {} but population is {n}",
                c.total()
            )));
        }
        for (name, v) in [
            ("beta", self.beta),
            ("sigma", self.sigma),
            ("gamma", self.gamma),
            ("alpha", self.alpha),
            ("mu", self.mu),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if self.sigma <= 0.0 || self.gamma <= 0.0 {
            return Err(Error::config("sigma and gamma must be positive"));
        }
        Ok(())
    }

    pub fn initial_state(&self) -> CompartmentState {
        CompartmentState {
            t: 0,
            c: self.initial,
        }
    }

    /// The same community with population and initial condition multiplied by
    /// `w`. Because transmission is normalized by `N`, the scaled community's
    /// trajectory is exactly `w` times the original one.
    pub fn scaled(&self, w: f64) -> Self {
        CommunityParams {
            population: self.population * w,
            initial: self.initial.scaled(w),
            ..*self
        }
    }
}

/// Per-step compartment states plus the per-step E→I flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `horizon + 1` states, starting with the initial condition.
    pub states: Vec<CompartmentState>,
    /// `horizon` values; `incidence[t] = sigma * e[t]` (persons/day).
    pub incidence: Vec<f64>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.incidence.len()
    }

    fn zeros(horizon: usize) -> Self {
        Trajectory {
            states: (0..=horizon as u32)
                .map(|t| CompartmentState {
                    t,
                    c: Compartments::default(),
                })
                .collect(),
            incidence: vec![0.0; horizon],
        }
    }

    /// Adds `other` into `self` day by day.
    pub fn accumulate(&mut self, other: &Trajectory) -> Result<()> {
        Error::check_len(self.states.len(), other.states.len(), "trajectory states")?;
        for (a, b) in self.states.iter_mut().zip(&other.states) {
            a.c += b.c;
        }
        for (a, b) in self.incidence.iter_mut().zip(&other.incidence) {
            *a += *b;
        }
        Ok(())
    }
}

/// One forward-Euler step of a single community.
pub fn step_community(
    state: &CompartmentState,
    params: &CommunityParams,
    dt: f64,
) -> Result<CompartmentState> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::config(format!("dt must be positive, got {dt}")));
    }
    if !state.c.is_finite() {
        return Err(Error::InvalidState(format!(
            "non-finite compartments at t={}: {:?}",
            state.t, state.c
        )));
    }
    Ok(CompartmentState {
        t: state.t + 1,
        c: euler(&state.c, params, dt),
    })
}

#[inline]
fn euler(c: &Compartments, p: &CommunityParams, dt: f64) -> Compartments {
    let n = p.population;
    let infection = p.beta * c.s * c.i / n;
    let onset = p.sigma * c.e;
    let recovery = p.gamma * c.i;
    let ds = p.alpha * n - infection - p.mu * c.s;
    let de = infection - onset - p.mu * c.e;
    let di = onset - recovery - p.mu * c.i;
    let dr = recovery - p.mu * c.r;
    Compartments {
        s: (c.s + dt * ds).max(0.0),
        e: (c.e + dt * de).max(0.0),
        i: (c.i + dt * di).max(0.0),
        r: (c.r + dt * dr).max(0.0),
    }
}

/// Drives the Euler loop and hands each (t, state, incidence) to `visit`.
/// The final state at `t = horizon` is visited with incidence `None`.
#[inline]
fn run(
    params: &CommunityParams,
    horizon: usize,
    dt: f64,
    mut visit: impl FnMut(usize, &Compartments, Option<f64>),
) {
    let mut c = params.initial;
    for t in 0..horizon {
        visit(t, &c, Some(params.sigma * c.e));
        c = euler(&c, params, dt);
    }
    visit(horizon, &c, None);
}

fn check_run(params: &CommunityParams, horizon: usize, dt: f64) -> Result<()> {
    if horizon < 1 {
        return Err(Error::config("horizon must be at least 1"));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::config(format!("dt must be positive, got {dt}")));
    }
    params.validate()
}

/// Simulates one community for `horizon` steps of size `dt`.
pub fn simulate_community(params: &CommunityParams, horizon: usize, dt: f64) -> Result<Trajectory> {
    check_run(params, horizon, dt)?;
    let mut states = Vec::with_capacity(horizon + 1);
    let mut incidence = Vec::with_capacity(horizon);
    run(params, horizon, dt, |t, c, inc| {
        states.push(CompartmentState { t: t as u32, c: *c });
        if let Some(x) = inc {
            incidence.push(x);
        }
    });
    if let Some(bad) = states.iter().find(|s| !s.c.is_finite()) {
        return Err(Error::InvalidState(format!(
            "non-finite compartments at t={}",
            bad.t
        )));
    }
    Ok(Trajectory { states, incidence })
}

/// Simulates every community independently, in key order.
pub fn simulate_components(
    communities: &[CommunityParams],
    horizon: usize,
    dt: f64,
) -> Result<Vec<Trajectory>> {
    if communities.is_empty() {
        return Err(Error::config("scenario key has no communities"));
    }
    communities
        .iter()
        .map(|p| simulate_community(p, horizon, dt))
        .collect()
}

/// Per-day sum of the component trajectories.
pub fn simulate_mixture(
    communities: &[CommunityParams],
    horizon: usize,
    dt: f64,
) -> Result<Trajectory> {
    if communities.is_empty() {
        return Err(Error::config("scenario key has no communities"));
    }
    let mut total = Trajectory::zeros(horizon);
    for p in communities {
        check_run(p, horizon, dt)?;
        run(p, horizon, dt, |t, c, inc| {
            total.states[t].c += *c;
            if let Some(x) = inc {
                total.incidence[t] += x;
            }
        });
    }
    if let Some(bad) = total.states.iter().find(|s| !s.c.is_finite()) {
        return Err(Error::InvalidState(format!(
            "non-finite compartments at t={}",
            bad.t
        )));
    }
    Ok(total)
}

/// Aggregate incidence of a mixture written into `out` (length = horizon).
///
/// Produces the same bits as `simulate_mixture(..).incidence` without
/// materializing compartment states; this is the inner loop of calibration.
pub fn mixture_incidence_into(
    communities: &[CommunityParams],
    dt: f64,
    out: &mut [f64],
) -> Result<()> {
    if communities.is_empty() {
        return Err(Error::config("scenario key has no communities"));
    }
    let horizon = out.len();
    out.fill(0.0);
    for p in communities {
        check_run(p, horizon, dt)?;
        run(p, horizon, dt, |t, _, inc| {
            if let Some(x) = inc {
                out[t] += x;
            }
        });
    }
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidState("non-finite incidence".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn example() -> CommunityParams {
        CommunityParams::seeded(1000.0, 0.0, 10.0, 0.0, 0.5, 0.2, 0.1).unwrap()
    }

    #[test]
    fn unseeded_state_is_a_fixed_point() {
        let p = CommunityParams::seeded(5000.0, 0.0, 0.0, 0.0, 0.9, 0.3, 0.2).unwrap();
        let s0 = p.initial_state();
        let s1 = step_community(&s0, &p, 1.0).unwrap();
        assert_eq!(s1.c, s0.c);
        assert_eq!(s1.t, 1);
    }

    #[test]
    fn hand_evaluated_euler_step() {
        let p = example();
        let s1 = step_community(&p.initial_state(), &p, 1.0).unwrap();
        assert!((s1.c.s - 985.05).abs() < 1e-12);
        assert!((s1.c.e - 4.95).abs() < 1e-12);
        assert!((s1.c.i - 9.0).abs() < 1e-12);
        assert!((s1.c.r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_state_is_rejected() {
        let p = example();
        let bad = CompartmentState::new(0, f64::NAN, 0.0, 10.0, 0.0);
        assert!(matches!(
            step_community(&bad, &p, 1.0),
            Err(Error::InvalidState(_))
        ));
        assert!(step_community(&p.initial_state(), &p, 0.0).is_err());
    }

    #[test]
    fn invalid_params_are_rejected() {
        assert!(CommunityParams::seeded(0.0, 0.0, 0.0, 0.0, 0.1, 0.1, 0.1).is_err());
        assert!(CommunityParams::seeded(10.0, 8.0, 8.0, 0.0, 0.1, 0.1, 0.1).is_err());
        assert!(CommunityParams::seeded(10.0, 0.0, 1.0, 0.0, -0.1, 0.1, 0.1).is_err());
        assert!(CommunityParams::seeded(10.0, 0.0, 1.0, 0.0, 0.1, 0.0, 0.1).is_err());
        let mut p = example();
        p.initial.s += 1.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn horizon_one_is_initial_plus_one_step() {
        let p = example();
        let traj = simulate_community(&p, 1, 1.0).unwrap();
        let s1 = step_community(&p.initial_state(), &p, 1.0).unwrap();
        assert_eq!(traj.states, vec![p.initial_state(), s1]);
        assert_eq!(traj.incidence, vec![0.0]);
        assert!(simulate_community(&p, 0, 1.0).is_err());
    }

    #[test]
    fn no_seed_means_no_incidence() {
        let p = CommunityParams::seeded(1e5, 0.0, 0.0, 50.0, 0.7, 0.25, 0.1).unwrap();
        let traj = simulate_community(&p, 60, 1.0).unwrap();
        assert!(traj.incidence.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn incidence_is_sigma_times_exposed() {
        let p = example();
        let traj = simulate_community(&p, 40, 1.0).unwrap();
        for (t, x) in traj.incidence.iter().enumerate() {
            assert_eq!(*x, p.sigma * traj.states[t].c.e);
        }
    }

    #[test]
    fn mixture_of_one_and_mixture_of_twins() {
        let p = example();
        let single = simulate_community(&p, 50, 1.0).unwrap();
        assert_eq!(simulate_mixture(&[p], 50, 1.0).unwrap(), single);

        let twins = simulate_mixture(&[p, p], 50, 1.0).unwrap();
        for (a, b) in twins.states.iter().zip(&single.states) {
            assert_eq!(a.c, b.c.scaled(2.0));
        }
        for (a, b) in twins.incidence.iter().zip(&single.incidence) {
            assert_eq!(*a, 2.0 * b);
        }
    }

    #[test]
    fn empty_mixture_is_a_config_error() {
        assert!(matches!(
            simulate_mixture(&[], 10, 1.0),
            Err(Error::Config(_))
        ));
        assert!(mixture_incidence_into(&[], 1.0, &mut [0.0; 3]).is_err());
    }

    #[test]
    fn incidence_fast_path_matches_full_simulation() {
        let ps = [
            example(),
            CommunityParams::seeded(2e4, 30.0, 6.0, 0.0, 0.8, 0.4, 0.2).unwrap(),
        ];
        let full = simulate_mixture(&ps, 90, 1.0).unwrap();
        let mut buf = vec![0.0; 90];
        mixture_incidence_into(&ps, 1.0, &mut buf).unwrap();
        assert_eq!(buf, full.incidence);
    }

    #[test]
    fn clamping_keeps_overshooting_dynamics_physical() {
        // beta*dt large enough that raw Euler would drive S negative
        let p = CommunityParams::seeded(100.0, 0.0, 60.0, 0.0, 3.0, 1.5, 1.2).unwrap();
        let traj = simulate_community(&p, 30, 1.0).unwrap();
        for s in &traj.states {
            assert!(s.c.s >= 0.0 && s.c.e >= 0.0 && s.c.i >= 0.0 && s.c.r >= 0.0);
        }
    }

    #[test]
    fn scaled_community_scales_trajectory() {
        let p = example();
        let base = simulate_community(&p, 80, 1.0).unwrap();
        let scaled = simulate_community(&p.scaled(0.25), 80, 1.0).unwrap();
        for (a, b) in scaled.incidence.iter().zip(&base.incidence) {
            assert!((a - 0.25 * b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    fn arb_params() -> impl Strategy<Value = CommunityParams> {
        (
            1.0f64..1e7,
            0.0f64..0.01,
            0.0f64..0.01,
            0.0f64..0.2,
            0.0f64..1.0,
            0.01f64..1.0,
            0.01f64..1.0,
        )
            .prop_map(|(n, fe, fi, fr, beta, sigma, gamma)| {
                CommunityParams::seeded(n, fe * n, fi * n, fr * n, beta, sigma, gamma).unwrap()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn conservation_monotone_r_and_non_negativity(p in arb_params()) {
            let traj = simulate_community(&p, 365, 1.0).unwrap();
            let n = p.population;
            for w in traj.states.windows(2) {
                prop_assert!((w[1].c.total() - n).abs() <= CONSERVATION_RTOL * n);
                prop_assert!(w[1].c.r >= w[0].c.r);
                prop_assert!(w[1].c.s >= 0.0 && w[1].c.e >= 0.0 && w[1].c.i >= 0.0);
            }
        }

        #[test]
        fn simulation_is_deterministic(p in arb_params()) {
            let a = simulate_community(&p, 120, 1.0).unwrap();
            let b = simulate_community(&p, 120, 1.0).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
