//! Right inverse of the filter error system `(F, B, C)`, `F = A − K C`.
//!
//! The inverse is realized as a receding-horizon least-squares tracker. At
//! each step it chooses the whole input sequence over the next `H` steps that
//! best reproduces the next `H` target outputs (with a vanishing Tikhonov
//! term), and applies only the first input. Because the attacker generates
//! the targets itself, looking `H` steps ahead is free.
//!
//! Unlike a causal inverse of the form `φ_k = M†(t_{k+d} − C F^d ê_k)`, this
//! stays bounded when `(F, B, C)` has invariant zeros on or outside the unit
//! circle: the causal inverse has those zeros as poles.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::matnum::{svd, Matrix, Vector};
use crate::model::{block_toeplitz, is_right_invertible, markov_params};

/// Lookahead used unless the relative delay calls for more.
pub const DEFAULT_PREVIEW: usize = 40;

/// Tikhonov weight relative to `σ_max(T)²`.
const REGULARIZATION: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DelayedRightInverse {
    f: Matrix,
    b: Matrix,
    c: Matrix,
    delay: usize,
    preview: usize,
    /// `[C F; C F²; …; C F^H]`.
    observability: Matrix,
    /// First `N_u` rows of the regularized pseudoinverse of the Toeplitz map.
    gain: Matrix,
}

impl DelayedRightInverse {
    pub fn new(f: &Matrix, b: &Matrix, c: &Matrix) -> Result<Self> {
        Self::with_preview(f, b, c, DEFAULT_PREVIEW)
    }

    pub fn with_preview(f: &Matrix, b: &Matrix, c: &Matrix, preview: usize) -> Result<Self> {
        let n = f.nrows();
        if f.ncols() != n || b.nrows() != n || c.ncols() != n {
            return Err(Error::dims(
                "right inverse",
                format!("F {n}x{n}, B {n}x?, C ?x{n}"),
                format!("F {}x{}, B {}x{}, C {}x{}", f.nrows(), f.ncols(), b.nrows(), b.ncols(), c.nrows(), c.ncols()),
            ));
        }
        let (invertible, delay) = is_right_invertible(f, b, c);
        let delay = match (invertible, delay) {
            (true, Some(d)) => d,
            _ => return Err(Error::NotRightInvertible),
        };
        if preview < delay {
            return Err(Error::InvalidArgument(format!("preview {preview} is shorter than the relative delay {delay}")));
        }
        let (ny, nu) = (c.nrows(), b.ncols());

        let mut observability = Matrix::zeros(preview * ny, n);
        let mut power = f.clone();
        for i in 0..preview {
            observability.view_mut((i * ny, 0), (ny, n)).copy_from(&(c * &power));
            power = f * power;
        }
        // Row block i of T maps inputs φ_k..φ_{k+i} to the output at k+i+1.
        let toeplitz = block_toeplitz(&markov_params(f, b, c, preview), preview);
        let d = svd(&toeplitz);
        let smax = d.singular_values.max();
        let rho = REGULARIZATION * smax * smax;
        let u = d.u.as_ref().expect("left singular vectors requested");
        let v_t = d.v_t.as_ref().expect("right singular vectors requested");
        let mut gain = Matrix::zeros(nu, preview * ny);
        for (i, &s) in d.singular_values.iter().enumerate() {
            if s > 0.0 {
                let head: Vector = v_t.row(i).columns(0, nu).transpose();
                gain.ger(s / (s * s + rho), &head, &u.column(i), 1.0);
            }
        }
        Ok(DelayedRightInverse {
            f: f.clone(),
            b: b.clone(),
            c: c.clone(),
            delay,
            preview,
            observability,
            gain,
        })
    }

    /// Relative delay `d` of `(F, B, C)`: the first output that inputs can
    /// reach is `d` steps ahead.
    pub fn delay(&self) -> usize {
        self.delay
    }

    /// Number of future targets consumed per step.
    pub fn preview(&self) -> usize {
        self.preview
    }

    pub fn nu(&self) -> usize {
        self.b.ncols()
    }

    pub fn ny(&self) -> usize {
        self.c.nrows()
    }

    pub fn nx(&self) -> usize {
        self.f.nrows()
    }

    /// One solve: the first input of the least-squares plan that steers `ê`
    /// through `targets = (t_{k+1}, …, t_{k+H})`, stacked.
    pub fn solve(&self, e_hat: &Vector, targets: &Vector) -> Vector {
        let mut rhs = targets.clone();
        rhs.gemv(-1.0, &self.observability, e_hat, 1.0);
        &self.gain * rhs
    }

    /// Forward dynamics `ê' = F ê + B φ`.
    pub fn advance(&self, e_hat: &Vector, phi: &Vector) -> Vector {
        &self.f * e_hat + &self.b * phi
    }

    /// Output `C ê`.
    pub fn output(&self, e_hat: &Vector) -> Vector {
        &self.c * e_hat
    }
}

/// Running state of the inverse: `ê_k` and the targets `t_{k+1}, …, t_{k+H}`.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseState {
    pub e_hat: Vector,
    buffer: VecDeque<Vector>,
    stacked: Vector,
}

impl InverseState {
    /// Starts at `ê = 0` with the first `H` targets (those for steps
    /// `2, …, H + 1`) already known.
    pub fn primed(inv: &DelayedRightInverse, initial: Vec<Vector>) -> Result<Self> {
        if initial.len() != inv.preview {
            return Err(Error::dims("inverse priming", inv.preview, initial.len()));
        }
        if let Some(t) = initial.iter().find(|t| t.len() != inv.ny()) {
            return Err(Error::dims("inverse target", inv.ny(), t.len()));
        }
        Ok(InverseState {
            e_hat: Vector::zeros(inv.nx()),
            buffer: initial.into(),
            stacked: Vector::zeros(inv.preview * inv.ny()),
        })
    }

    /// Emits `φ_k`, advances `ê`, and shifts `incoming` (the target for step
    /// `k + H + 1`) into the lookahead.
    pub fn step(&mut self, inv: &DelayedRightInverse, incoming: Vector) -> Vector {
        let ny = inv.ny();
        for (i, t) in self.buffer.iter().enumerate() {
            self.stacked.rows_mut(i * ny, ny).copy_from(t);
        }
        let phi = inv.solve(&self.e_hat, &self.stacked);
        self.e_hat = inv.advance(&self.e_hat, &phi);
        self.buffer.pop_front();
        self.buffer.push_back(incoming);
        phi
    }
}
