//! Forward-operator solve accounting, split by algorithmic phase.

use std::fmt;

/// Where a solve was spent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    /// Inner MAP solve: objective, gradient and Newton-CG Hessian applications.
    Map,
    /// Encoded states at a fixed parameter (the reference-point objective).
    State,
    /// Hessian solves of the trace estimator.
    Trace,
    /// Right-hand side and Hessian solve for the parameter multiplier `m*`.
    MStar,
    /// Per-block adjoint solves for `u*`, `p*`.
    Adjoint,
}

impl Phase {
    pub const ALL: [Phase; 5] = [Phase::Map, Phase::State, Phase::Trace, Phase::MStar, Phase::Adjoint];

    fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Map => "map",
            Phase::State => "state",
            Phase::Trace => "trace",
            Phase::MStar => "mstar",
            Phase::Adjoint => "adjoint",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PhaseCounts {
    /// Solves with a factorized `A(m)`.
    pub solves: u64,
    /// Hessian applications (each costs `2 N_w` solves).
    pub hessian_applies: u64,
    /// Conjugate-gradient iterations.
    pub cg_iterations: u64,
    pub factorizations: u64,
    /// Objective evaluations inside the MAP solver (`N_w` state solves each).
    pub objective_evals: u64,
    /// Gradient evaluations inside the MAP solver (`N_w` adjoint solves each).
    pub gradient_evals: u64,
}

impl std::ops::AddAssign for PhaseCounts {
    fn add_assign(&mut self, o: Self) {
        self.solves += o.solves;
        self.hessian_applies += o.hessian_applies;
        self.cg_iterations += o.cg_iterations;
        self.factorizations += o.factorizations;
        self.objective_evals += o.objective_evals;
        self.gradient_evals += o.gradient_evals;
    }
}

/// Mutable tally threaded through every solver call. The active phase is
/// set by the caller; counts land in that phase's bucket.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Counters {
    phase: Option<Phase>,
    counts: [PhaseCounts; 5],
    pub newton_steps: u64,
}

impl Counters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn phase(&self) -> Phase {
        self.phase.unwrap_or(Phase::Map)
    }

    /// Switch phase, returning the previous one.
    pub fn set_phase(&mut self, p: Phase) -> Phase {
        let old = self.phase();
        self.phase = Some(p);
        old
    }

    pub fn current_mut(&mut self) -> &mut PhaseCounts {
        let i = self.phase().index();
        &mut self.counts[i]
    }

    pub fn get(&self, p: Phase) -> PhaseCounts {
        self.counts[p.index()]
    }

    pub fn total_solves(&self) -> u64 {
        self.counts.iter().map(|c| c.solves).sum()
    }

    pub fn merge(&mut self, other: &Counters) {
        for (a, b) in self.counts.iter_mut().zip(other.counts.iter()) {
            *a += *b;
        }
        self.newton_steps += other.newton_steps;
    }

    /// Counts accumulated since `earlier`, a snapshot of this tally.
    pub fn since(&self, earlier: &Counters) -> Counters {
        let mut out = Counters::new();
        for p in Phase::ALL {
            let (a, b) = (self.get(p), earlier.get(p));
            out.counts[p.index()] = PhaseCounts {
                solves: a.solves - b.solves,
                hessian_applies: a.hessian_applies - b.hessian_applies,
                cg_iterations: a.cg_iterations - b.cg_iterations,
                factorizations: a.factorizations - b.factorizations,
                objective_evals: a.objective_evals - b.objective_evals,
                gradient_evals: a.gradient_evals - b.gradient_evals,
            };
        }
        out.newton_steps = self.newton_steps - earlier.newton_steps;
        out
    }
}
