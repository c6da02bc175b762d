//! Continuous model data: Monod kinetics, diffusivity laws, constraint
//! bounds, sources, and boundary conditions.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::SimplicialMesh;
use crate::scalar::{cast, Real};

/// Spatial function of position.
pub type SpatialFn<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;
/// Function of position and time.
pub type SpaceTimeFn<T> = Arc<dyn Fn(&[T], T) -> T + Send + Sync>;

/// Monod kinetics constants: growth rate, utilization rate, and the
/// half-saturation concentration.
#[derive(Debug, Clone, Copy)]
pub struct MonodSpec<T> {
    pub kappa_b: T,
    pub kappa_n: T,
    pub n_half: T,
}

/// Saturating Monod factor P(N) = N / (N + N0), with negative N clamped
/// to zero (discrete undershoot; callers may count clamps).
pub fn monod_p<T: Real>(n: T, n_half: T) -> T {
    let n = if n < T::zero() { T::zero() } else { n };
    n / (n + n_half)
}

/// Derivative of the Monod factor, P'(N) = N0 / (N + N0)^2, with the
/// same clamping convention.
pub fn monod_p_prime<T: Real>(n: T, n_half: T) -> T {
    let n = if n < T::zero() { T::zero() } else { n };
    let denom = n + n_half;
    n_half / (denom * denom)
}

/// Growth rate F(B, N) = kappa_B * P(N) * B.
pub fn reaction_f<T: Real>(b: T, n: T, monod: &MonodSpec<T>) -> T {
    monod.kappa_b * monod_p(n, monod.n_half) * b
}

/// Utilization rate G(B, N) = -kappa_N * P(N) * B (consumption).
pub fn reaction_g<T: Real>(b: T, n: T, monod: &MonodSpec<T>) -> T {
    -monod.kappa_n * monod_p(n, monod.n_half) * b
}

/// Biomass diffusivity law. The argument is clamped into [0, B*] before
/// evaluation, so outputs always stay inside [D_min, D_max].
#[derive(Debug, Clone, Copy)]
pub enum DiffusivityLaw<T> {
    Constant(T),
    /// D(B) = (D_max - D_min) * (B / B*) + D_min.
    LinearInB {
        d_max: T,
        d_min: T,
        b_star: T,
    },
    /// D(B) = (D_max - D_min) * (B / B*)^exponent + D_min.
    PowerInB {
        d_max: T,
        d_min: T,
        b_star: T,
        exponent: i32,
    },
}

/// Evaluate a diffusivity law at biomass density `b`.
pub fn eval_diffusivity<T: Real>(law: &DiffusivityLaw<T>, b: T) -> T {
    match *law {
        DiffusivityLaw::Constant(d) => d,
        DiffusivityLaw::LinearInB {
            d_max,
            d_min,
            b_star,
        } => {
            let s = clamp01(b / b_star);
            (d_max - d_min) * s + d_min
        }
        DiffusivityLaw::PowerInB {
            d_max,
            d_min,
            b_star,
            exponent,
        } => {
            let s = clamp01(b / b_star);
            (d_max - d_min) * s.powi(exponent) + d_min
        }
    }
}

fn clamp01<T: Real>(s: T) -> T {
    if s < T::zero() {
        T::zero()
    } else if s > T::one() {
        T::one()
    } else {
        s
    }
}

impl<T: Real> DiffusivityLaw<T> {
    /// Lower bound of the law's range (Assumption on uniform ellipticity).
    pub fn min_value(&self) -> T {
        match *self {
            DiffusivityLaw::Constant(d) => d,
            DiffusivityLaw::LinearInB { d_min, .. } | DiffusivityLaw::PowerInB { d_min, .. } => {
                d_min
            }
        }
    }
}

/// Reaction structure of the biomass equation.
#[derive(Clone)]
pub enum GrowthLaw<T> {
    /// F = kappa_B P(N) B, G = -kappa_N P(N) B.
    Monod(MonodSpec<T>),
    /// F = c(x) B with a fixed spatial coefficient; the nutrient equation
    /// is inert in this case (scalar problems run through the same solver
    /// with N frozen).
    SpatialLinear(SpatialFn<T>),
}

/// Boundary condition applied to both fields on the whole boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryKind {
    DirichletZero,
    NeumannZero,
}

/// Initial data: a spatial function, or a characteristic constant driven
/// by vertex subdomain tags (imported porescale meshes label the initial
/// biofilm region on vertices).
#[derive(Clone)]
pub enum InitialData<T> {
    Function(SpatialFn<T>),
    TaggedConstant { tag: i32, inside: T, outside: T },
}

impl<T: Real> InitialData<T> {
    pub fn func(f: impl Fn(&[T]) -> T + Send + Sync + 'static) -> Self {
        InitialData::Function(Arc::new(f))
    }

    pub fn constant(c: T) -> Self {
        InitialData::Function(Arc::new(move |_: &[T]| c))
    }

    pub fn eval(&self, mesh: &SimplicialMesh<T>, vertex: usize) -> T {
        match self {
            InitialData::Function(f) => (f)(mesh.vertex(vertex)),
            InitialData::TaggedConstant {
                tag,
                inside,
                outside,
            } => {
                if mesh.vertex_tag(vertex) == *tag {
                    *inside
                } else {
                    *outside
                }
            }
        }
    }
}

/// Full problem data for one simulation.
#[derive(Clone)]
pub struct ModelSpec<T> {
    pub d_b: DiffusivityLaw<T>,
    pub d_n: DiffusivityLaw<T>,
    pub growth: GrowthLaw<T>,
    /// Lower constraint bound B_*; `-inf` when only the upper bound acts.
    pub b_lower: T,
    /// Upper constraint bound B*; `+inf` disables the constraint.
    pub b_upper: T,
    pub f_source: SpaceTimeFn<T>,
    pub g_source: SpaceTimeFn<T>,
    pub bc: BoundaryKind,
    pub b_init: InitialData<T>,
    pub n_init: InitialData<T>,
    /// When false the nutrient field stays frozen at its initial values.
    pub nutrient_enabled: bool,
}

impl<T: Real> ModelSpec<T> {
    pub fn validate(&self) -> Result<()> {
        // Negated form also rejects NaN bounds.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.b_lower < self.b_upper) {
            return Err(Error::InvalidConfig(format!(
                "constraint bounds must satisfy B_* < B*, got [{}, {}]",
                self.b_lower, self.b_upper
            )));
        }
        Ok(())
    }

    /// Coefficient multiplying R B in the biomass equation.
    pub fn growth_coefficient(&self) -> T {
        match &self.growth {
            GrowthLaw::Monod(m) => m.kappa_b,
            GrowthLaw::SpatialLinear(_) => T::one(),
        }
    }

    /// Coefficient multiplying R B in the nutrient equation (consumption).
    pub fn utilization_coefficient(&self) -> T {
        match &self.growth {
            GrowthLaw::Monod(m) => m.kappa_n,
            GrowthLaw::SpatialLinear(_) => T::zero(),
        }
    }

    /// Estimated Lipschitz constant of the reactions, used by the
    /// time-step advisory (P <= 1, so the Monod rates dominate).
    pub fn reaction_lipschitz(&self, sample_points: &[Vec<T>]) -> T {
        match &self.growth {
            GrowthLaw::Monod(m) => {
                if m.kappa_b > m.kappa_n {
                    m.kappa_b
                } else {
                    m.kappa_n
                }
            }
            GrowthLaw::SpatialLinear(c) => sample_points
                .iter()
                .map(|p| (c)(p).abs())
                .fold(T::zero(), |a, b| if b > a { b } else { a }),
        }
    }
}

/// Zero space-time source.
pub fn zero_source<T: Real>() -> SpaceTimeFn<T> {
    Arc::new(|_: &[T], _| T::zero())
}

/// Characteristic function of the closed interval [a, b] in the first
/// coordinate. Closed so that a vertex landing exactly on an endpoint
/// counts as inside.
pub fn chi_interval<T: Real>(a: f64, b: f64) -> SpatialFn<T> {
    Arc::new(move |x: &[T]| {
        if x[0] >= cast(a) && x[0] <= cast(b) {
            T::one()
        } else {
            T::zero()
        }
    })
}

/// Characteristic function of a closed axis-aligned box.
pub fn chi_box<T: Real>(x_range: (f64, f64), y_range: (f64, f64)) -> SpatialFn<T> {
    Arc::new(move |x: &[T]| {
        if x[0] >= cast(x_range.0)
            && x[0] <= cast(x_range.1)
            && x[1] >= cast(y_range.0)
            && x[1] <= cast(y_range.1)
        {
            T::one()
        } else {
            T::zero()
        }
    })
}

/// Characteristic function of a closed disk centered at the origin.
pub fn chi_disk<T: Real>(radius: f64) -> SpatialFn<T> {
    Arc::new(move |x: &[T]| {
        let r2: T = x.iter().map(|&c| c * c).sum();
        if r2 <= cast(radius * radius) {
            T::one()
        } else {
            T::zero()
        }
    })
}
