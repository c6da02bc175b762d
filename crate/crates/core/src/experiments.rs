//! Built-in experiment definitions, addressable by stable CLI names.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{
    chi_box, chi_disk, chi_interval, zero_source, BoundaryKind, DiffusivityLaw, GrowthLaw,
    InitialData, ModelSpec, MonodSpec,
};
use crate::scalar::{cast, Real};
use crate::timeloop::{MeshSource, RunConfig};

const PORESCALE_2D: &str = include_str!("../fixtures/porescale_2d.txt");
const BALL_TWO_HOLES_3D: &str = include_str!("../fixtures/ball_two_holes_3d.txt");

/// A named model plus its default run configuration.
pub struct Experiment<T> {
    pub name: &'static str,
    pub description: &'static str,
    pub model: ModelSpec<T>,
    pub config: RunConfig<T>,
}

pub const EXPERIMENT_NAMES: [&str; 11] = [
    "ex5_1",
    "ex5_2_i",
    "ex5_2_ii",
    "ex5_2_iii",
    "ex5_2_iv",
    "ex5_3",
    "ex5_4",
    "ex5_5",
    "ex5_6",
    "appendix_A1",
    "appendix_A2",
];

pub fn experiment_names() -> &'static [&'static str] {
    &EXPERIMENT_NAMES
}

fn ex5_1_model<T: Real>(b_upper: T) -> ModelSpec<T> {
    ModelSpec {
        d_b: DiffusivityLaw::Constant(cast(0.5)),
        d_n: DiffusivityLaw::Constant(cast(0.1)),
        growth: GrowthLaw::Monod(MonodSpec {
            kappa_b: cast(2500.0),
            kappa_n: cast(100.0),
            n_half: cast(0.7),
        }),
        b_lower: T::neg_infinity(),
        b_upper,
        f_source: zero_source(),
        g_source: zero_source(),
        bc: BoundaryKind::DirichletZero,
        b_init: InitialData::func(|x: &[T]| cast::<T>(0.01) * (cast::<T>(PI) * x[0]).sin().abs()),
        n_init: InitialData::Function({
            let chi = chi_interval::<T>(0.25, 0.75);
            Arc::new(move |x: &[T]| cast::<T>(0.02) * (chi)(x))
        }),
        nutrient_enabled: true,
    }
}

fn ex5_2_model<T: Real>(d_b: DiffusivityLaw<T>) -> ModelSpec<T> {
    // The initial amplitude is kept below the bound B* = 0.03 so that the
    // growth phase, activation, and tapering are all realized.
    ModelSpec {
        d_b,
        d_n: DiffusivityLaw::Constant(cast(0.5)),
        growth: GrowthLaw::Monod(MonodSpec {
            kappa_b: cast(10.0),
            kappa_n: cast(5.0),
            n_half: cast(0.007),
        }),
        b_lower: T::neg_infinity(),
        b_upper: cast(0.03),
        f_source: zero_source(),
        g_source: zero_source(),
        bc: BoundaryKind::NeumannZero,
        b_init: InitialData::Function({
            let chi = chi_interval::<T>(0.4, 0.6);
            Arc::new(move |x: &[T]| cast::<T>(0.02) * (chi)(x))
        }),
        n_init: InitialData::constant(T::one()),
        nutrient_enabled: true,
    }
}

fn ex5_3_model<T: Real>() -> ModelSpec<T> {
    ModelSpec {
        d_b: DiffusivityLaw::Constant(cast(0.01)),
        d_n: DiffusivityLaw::Constant(cast(0.5)),
        growth: GrowthLaw::Monod(MonodSpec {
            kappa_b: cast(5.0),
            kappa_n: cast(0.5),
            n_half: cast(0.7),
        }),
        b_lower: T::neg_infinity(),
        b_upper: cast(0.3),
        f_source: zero_source(),
        g_source: zero_source(),
        bc: BoundaryKind::DirichletZero,
        b_init: InitialData::Function({
            let chi = chi_disk::<T>(0.5);
            Arc::new(move |x: &[T]| cast::<T>(0.2) * (chi)(x))
        }),
        n_init: InitialData::Function(chi_disk::<T>(0.75)),
        nutrient_enabled: true,
    }
}

fn table3_model<T: Real>() -> ModelSpec<T> {
    let d_star = 0.01;
    ModelSpec {
        d_b: DiffusivityLaw::LinearInB {
            d_max: cast(d_star),
            d_min: cast(1e-4 * d_star),
            b_star: cast(0.12),
        },
        d_n: DiffusivityLaw::Constant(cast(20.0)),
        growth: GrowthLaw::Monod(MonodSpec {
            kappa_b: cast(1.8),
            kappa_n: cast(18.0),
            n_half: cast(0.16),
        }),
        b_lower: T::neg_infinity(),
        b_upper: cast(0.12),
        f_source: zero_source(),
        g_source: zero_source(),
        bc: BoundaryKind::NeumannZero,
        b_init: InitialData::TaggedConstant {
            tag: 1,
            inside: cast(0.03),
            outside: T::zero(),
        },
        n_init: InitialData::constant(T::one()),
        nutrient_enabled: true,
    }
}

fn appendix_a1_model<T: Real>() -> ModelSpec<T> {
    ModelSpec {
        d_b: DiffusivityLaw::Constant(cast(0.5)),
        d_n: DiffusivityLaw::Constant(cast(0.1)),
        growth: GrowthLaw::SpatialLinear(Arc::new(|x: &[T]| cast::<T>(PI * PI) * x[0].sin())),
        b_lower: cast(-0.04),
        b_upper: cast(0.06),
        f_source: Arc::new(|x: &[T], _| {
            let half = cast::<T>(0.5);
            let amp = cast::<T>(3.0);
            if x[0] < half {
                amp
            } else if x[0] > half {
                -amp
            } else {
                T::zero()
            }
        }),
        g_source: zero_source(),
        bc: BoundaryKind::DirichletZero,
        b_init: InitialData::func(|x: &[T]| cast::<T>(0.04) * (cast::<T>(PI) * x[0]).sin()),
        n_init: InitialData::constant(T::zero()),
        nutrient_enabled: false,
    }
}

fn unit_interval<T: Real>(cells: usize) -> MeshSource<T> {
    MeshSource::Interval {
        a: T::zero(),
        b: T::one(),
        cells,
    }
}

fn square2<T: Real>(cells_per_side: usize) -> MeshSource<T> {
    MeshSource::Rectangle {
        x: (cast(-1.0), T::one()),
        y: (cast(-1.0), T::one()),
        cells_per_side,
    }
}

fn samples<T: Real>(ts: &[f64]) -> Vec<T> {
    ts.iter().map(|&t| cast(t)).collect()
}

/// Look up an experiment by its CLI identifier.
pub fn builtin_experiment<T: Real>(name: &str) -> Result<Experiment<T>> {
    let exp = match name {
        "ex5_1" => Experiment {
            name: "ex5_1",
            description: "1D coupled system, Dirichlet bc, constant diffusivities, bound 0.02",
            model: ex5_1_model(cast(0.02)),
            config: RunConfig::new(
                unit_interval(50),
                cast(0.005),
                cast(0.1),
                samples(&[0.05, 0.1]),
            ),
        },
        "ex5_2_i" | "ex5_2_ii" | "ex5_2_iii" | "ex5_2_iv" => {
            let (name, law, dt, desc): (&'static str, DiffusivityLaw<T>, f64, &'static str) =
                match name {
                    "ex5_2_i" => (
                        "ex5_2_i",
                        DiffusivityLaw::Constant(cast(0.1)),
                        0.002,
                        "1D Neumann growth, constant biomass diffusivity 0.1",
                    ),
                    "ex5_2_ii" => (
                        "ex5_2_ii",
                        DiffusivityLaw::Constant(cast(0.001)),
                        0.0002,
                        "1D Neumann growth, constant biomass diffusivity 0.001",
                    ),
                    "ex5_2_iii" => (
                        "ex5_2_iii",
                        DiffusivityLaw::LinearInB {
                            d_max: cast(0.1),
                            d_min: cast(0.001),
                            b_star: cast(0.03),
                        },
                        0.0002,
                        "1D Neumann growth, biomass diffusivity linear in B",
                    ),
                    _ => (
                        "ex5_2_iv",
                        DiffusivityLaw::PowerInB {
                            d_max: cast(0.1),
                            d_min: cast(0.001),
                            b_star: cast(0.03),
                            exponent: 8,
                        },
                        0.0002,
                        "1D Neumann growth, biomass diffusivity steep (B/B*)^8",
                    ),
                };
            Experiment {
                name,
                description: desc,
                model: ex5_2_model(law),
                config: RunConfig::new(
                    unit_interval(100),
                    cast(dt),
                    cast(0.3),
                    samples(&[0.1, 0.2, 0.3]),
                ),
            }
        }
        "ex5_3" => Experiment {
            name: "ex5_3",
            description: "2D square, Dirichlet bc, disk-shaped initial biomass, bound 0.3",
            model: ex5_3_model(),
            config: RunConfig::new(
                square2(20),
                cast(0.004),
                cast(0.3),
                samples(&[0.1, 0.2, 0.3]),
            ),
        },
        "ex5_4" => {
            let mut model = ex5_3_model::<T>();
            model.bc = BoundaryKind::NeumannZero;
            model.b_init = InitialData::Function({
                let chi = chi_box::<T>((-0.75, 0.0), (-0.5, 0.5));
                Arc::new(move |x: &[T]| cast::<T>(0.3) * (chi)(x))
            });
            model.n_init = InitialData::constant(T::one());
            Experiment {
                name: "ex5_4",
                description:
                    "2D square, Neumann bc (isolated system), box initial biomass at the bound",
                model,
                config: RunConfig::new(
                    square2(20),
                    cast(0.004),
                    cast(0.3),
                    samples(&[0.1, 0.2, 0.3]),
                ),
            }
        }
        "ex5_5" => Experiment {
            name: "ex5_5",
            description: "2D porescale cell with solid grains, tagged initial biofilm region",
            model: table3_model(),
            config: RunConfig::new(
                MeshSource::Embedded {
                    name: "porescale_2d",
                    text: PORESCALE_2D,
                },
                cast(0.01),
                T::one(),
                samples(&[0.25, 0.5, 0.75, 1.0]),
            ),
        },
        "ex5_6" => Experiment {
            name: "ex5_6",
            description: "3D ball with two spherical grains, tagged initial biofilm region",
            model: table3_model(),
            config: RunConfig::new(
                MeshSource::Embedded {
                    name: "ball_two_holes_3d",
                    text: BALL_TWO_HOLES_3D,
                },
                cast(0.01),
                T::one(),
                samples(&[0.25, 0.5, 0.75, 1.0]),
            ),
        },
        "appendix_A1" => Experiment {
            name: "appendix_A1",
            description: "scalar double-obstacle problem on (0,1) with step forcing",
            model: appendix_a1_model(),
            config: RunConfig::new(
                unit_interval(50),
                cast(0.005),
                cast(0.1),
                samples(&[0.05, 0.1]),
            ),
        },
        "appendix_A2" => Experiment {
            name: "appendix_A2",
            description: "unconstrained coupled 1D system (no bound)",
            model: ex5_1_model(T::infinity()),
            config: RunConfig::new(
                unit_interval(50),
                cast(0.005),
                cast(0.1),
                samples(&[0.05, 0.1]),
            ),
        },
        _ => {
            return Err(Error::UnknownExperiment {
                name: name.to_string(),
                available: EXPERIMENT_NAMES.join(", "),
            })
        }
    };
    Ok(exp)
}
