//! Built-in named problem instances (all with `n = m = 1`).

use super::{
    ControlHamiltonian, FastOperatorSpec, Func, ProblemInstance, SampleBox, SeparatedTerm,
    SourceTerm,
};
use crate::{Error, Result};

const FIXTURES: &[&str] = &[
    "ou-cos",
    "separated-lip",
    "separated-c2",
    "holder-beta",
    "slow-only",
];

/// Diffusion amplitude of the "diffuse" control shared by all fixtures.
const SIGMA0: f64 = 0.15;

pub fn fixture_names() -> &'static [&'static str] {
    FIXTURES
}

pub fn fixture(name: &str) -> Result<ProblemInstance> {
    let ou = FastOperatorSpec::ornstein_uhlenbeck(1, 1.0, 1.0);
    let ham = ControlHamiltonian::drift_or_diffuse(SIGMA0);
    let p = match name {
        // f = cos y
        "ou-cos" => ProblemInstance {
            name: name.into(),
            fast: ou,
            hamiltonian: ham,
            source: SourceTerm {
                terms: vec![SeparatedTerm {
                    h: Func::constant(1.0),
                    g: Func::cos(0, 1.0),
                }],
                c1: 1.0,
                gamma: 1.0,
                c2: 1.0,
                beta: 1.0,
                c3: 0.0,
                lip_h: Some(0.0),
                c2_norm_h: Some(1.0),
            },
            sample_box: SampleBox::default(),
        },
        // f = |sin x| cos y; tau and b nonconstant so that the alpha
        // compatibility condition fails and must be waived.
        "separated-lip" => ProblemInstance {
            name: name.into(),
            fast: FastOperatorSpec {
                dim: 1,
                tau: vec![Func::Sum {
                    terms: vec![Func::constant(1.0), Func::sin(0, 0.3)],
                }],
                drift: vec![Func::sin(0, 0.9)],
                alpha: 1.0,
                lip_tau: 0.3,
                lip_b: 0.9,
                theta: 0.49,
                tau_sup: 1.3,
                b_sup: 0.9,
            },
            hamiltonian: ham,
            source: SourceTerm {
                terms: vec![SeparatedTerm {
                    h: Func::AbsSinPow {
                        axis: 0,
                        amp: 1.0,
                        freq: 1.0,
                        power: 1.0,
                    },
                    g: Func::cos(0, 1.0),
                }],
                c1: 1.0,
                gamma: 1.0,
                c2: 1.0,
                beta: 1.0,
                c3: 1.0,
                lip_h: Some(1.0),
                c2_norm_h: None,
            },
            sample_box: SampleBox::default(),
        },
        // f = sin x cos y
        "separated-c2" => ProblemInstance {
            name: name.into(),
            fast: ou,
            hamiltonian: ham,
            source: SourceTerm {
                terms: vec![SeparatedTerm {
                    h: Func::sin(0, 1.0),
                    g: Func::cos(0, 1.0),
                }],
                c1: 3.0,
                gamma: 1.0,
                c2: 1.0,
                beta: 1.0,
                c3: 1.0,
                lip_h: Some(1.0),
                c2_norm_h: Some(3.0),
            },
            sample_box: SampleBox::default(),
        },
        // f = |sin x|^(1/2) cos y + 0.25 sin x sin y
        "holder-beta" => ProblemInstance {
            name: name.into(),
            fast: ou,
            hamiltonian: ham,
            source: SourceTerm {
                terms: vec![
                    SeparatedTerm {
                        h: Func::AbsSinPow {
                            axis: 0,
                            amp: 1.0,
                            freq: 1.0,
                            power: 0.5,
                        },
                        g: Func::cos(0, 1.0),
                    },
                    SeparatedTerm {
                        h: Func::sin(0, 0.25),
                        g: Func::sin(0, 1.0),
                    },
                ],
                c1: 1.25,
                gamma: 1.0,
                c2: 1.25,
                beta: 0.5,
                c3: 1.4,
                lip_h: None,
                c2_norm_h: None,
            },
            sample_box: SampleBox::default(),
        },
        // f = sin x + 0.5 cos 2x, no fast dependence
        "slow-only" => ProblemInstance {
            name: name.into(),
            fast: ou,
            hamiltonian: ham,
            source: SourceTerm {
                terms: vec![SeparatedTerm {
                    h: Func::Sum {
                        terms: vec![
                            Func::sin(0, 1.0),
                            Func::Cos {
                                axis: 0,
                                amp: 0.5,
                                freq: 2.0,
                                phase: 0.0,
                            },
                        ],
                    },
                    g: Func::constant(1.0),
                }],
                c1: 1.5,
                gamma: 1.0,
                c2: 0.0,
                beta: 1.0,
                c3: 2.0,
                lip_h: Some(2.0),
                c2_norm_h: Some(6.5),
            },
            sample_box: SampleBox::default(),
        },
        other => {
            return Err(Error::config(format!(
                "problem.fixture: unknown fixture '{other}' (known: {})",
                FIXTURES.join(", ")
            )))
        }
    };
    Ok(p)
}
