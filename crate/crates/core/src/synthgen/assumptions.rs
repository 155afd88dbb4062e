//! Runnable checks of the injectivity and label-heterogeneity conditions
//! under which the concept-learning bound identifies the core latents.

use serde::{Deserialize, Serialize};

use super::mixing::MixingFunction;
use super::spec::GenerativeSpec;
use crate::error::{Error, Result};

/// Relative tolerance for "equal" variance ratios.
pub const RATIO_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectivityCheck {
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityCheck {
    pub passed: bool,
    /// First label pair (in label-space order) satisfying the condition.
    pub witness: Option<(Vec<u8>, Vec<u8>)>,
    /// `core_var[y] / core_var[ỹ]` for the witness.
    pub ratios: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxedHeterogeneityCheck {
    pub passed: bool,
    /// Core-coordinate pairs `(i, j)` (or `(i, i)` when only one coordinate
    /// exists) for which no label pair separates them.
    pub unresolved: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub injectivity: InjectivityCheck,
    pub heterogeneity: HeterogeneityCheck,
    pub relaxed_heterogeneity: RelaxedHeterogeneityCheck,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.injectivity.passed && self.heterogeneity.passed
    }

    /// Human-readable lines, `NAME: PASS|FAIL detail`.
    pub fn lines(&self) -> Vec<String> {
        let pf = |b: bool| if b { "PASS" } else { "FAIL" };
        let witness = match &self.heterogeneity.witness {
            Some((a, b)) => format!(" witness y={a:?} y~={b:?}"),
            None => String::new(),
        };
        vec![
            format!(
                "ASSUMPTION_1.1: {} {}",
                pf(self.injectivity.passed),
                self.injectivity.detail
            ),
            format!(
                "ASSUMPTION_1.2: {}{}",
                pf(self.heterogeneity.passed),
                witness
            ),
            format!(
                "ASSUMPTION_1.2_RELAXED: {} unresolved={:?}",
                pf(self.relaxed_heterogeneity.passed),
                self.relaxed_heterogeneity.unresolved
            ),
        ]
    }
}

fn approx_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= RATIO_RTOL * a.abs().max(b.abs())
}

fn ratios(spec: &GenerativeSpec, a: usize, b: usize) -> Vec<f64> {
    let (va, vb) = (&spec.label_space[a].core_var, &spec.label_space[b].core_var);
    va.iter().zip(vb).map(|(x, y)| x / y).collect()
}

/// Strict condition for one ordered pair: all ratios pairwise distinct and
/// none equal to one.
pub fn pair_is_heterogeneous(r: &[f64]) -> bool {
    if r.iter().any(|&v| approx_eq(v, 1.0)) {
        return false;
    }
    for i in 0..r.len() {
        for j in i + 1..r.len() {
            if approx_eq(r[i], r[j]) {
                return false;
            }
        }
    }
    true
}

pub fn validate_assumptions(spec: &GenerativeSpec) -> Result<AssumptionReport> {
    if spec.label_space.is_empty() {
        return Err(Error::InvalidSpec("label space is empty".into()));
    }
    spec.validate_strict()?;

    let injectivity = match &spec.mixing {
        MixingFunction::Linear { .. } => {
            let m = spec.mixing.linear_matrix().expect("linear");
            let rank = super::mixing::numerical_rank(&m);
            InjectivityCheck {
                passed: rank == m.ncols(),
                detail: format!("rank {rank} of {}x{} mixing matrix", m.nrows(), m.ncols()),
            }
        }
        MixingFunction::Mlp { .. } => {
            let passed = spec.mixing.is_injective();
            InjectivityCheck {
                passed,
                detail: "every mlp layer has full column rank".into(),
            }
        }
        MixingFunction::ToyImage(_) => InjectivityCheck {
            passed: true,
            detail: "toy renderer is injective on its latent range".into(),
        },
    };

    let m = spec.label_space.len();
    let mut heterogeneity = HeterogeneityCheck {
        passed: false,
        witness: None,
        ratios: None,
    };
    'outer: for a in 0..m {
        for b in a + 1..m {
            let r = ratios(spec, a, b);
            if pair_is_heterogeneous(&r) {
                heterogeneity = HeterogeneityCheck {
                    passed: true,
                    witness: Some((spec.label_space[a].y.clone(), spec.label_space[b].y.clone())),
                    ratios: Some(r),
                };
                break 'outer;
            }
        }
    }

    let kc = spec.k_core_true;
    let pairs: Vec<(usize, usize)> = if kc == 1 {
        vec![(0, 0)]
    } else {
        (0..kc)
            .flat_map(|i| (i + 1..kc).map(move |j| (i, j)))
            .collect()
    };
    let unresolved = pairs
        .into_iter()
        .filter(|&(i, j)| {
            !(0..m).any(|a| {
                (0..m).filter(|&b| b != a).any(|b| {
                    let r = ratios(spec, a, b);
                    !approx_eq(r[i], 1.0)
                        && !approx_eq(r[j], 1.0)
                        && (i == j || !approx_eq(r[i], r[j]))
                })
            })
        })
        .collect::<Vec<_>>();

    Ok(AssumptionReport {
        injectivity,
        heterogeneity,
        relaxed_heterogeneity: RelaxedHeterogeneityCheck {
            passed: unresolved.is_empty(),
            unresolved,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::spec::LabelEntry;
    use proptest::prelude::*;

    fn two_label_spec(va: Vec<f64>, vb: Vec<f64>) -> GenerativeSpec {
        let k = va.len();
        GenerativeSpec {
            k_core_true: k,
            k_style_true: 0,
            label_space: vec![
                LabelEntry {
                    y: vec![1],
                    prob: None,
                    core_mean: vec![0.0; k],
                    core_var: va,
                },
                LabelEntry {
                    y: vec![0],
                    prob: None,
                    core_mean: vec![0.0; k],
                    core_var: vb,
                },
            ],
            style_mean: vec![],
            style_cov: vec![],
            mixing: MixingFunction::Linear {
                matrix: (0..k)
                    .map(|i| (0..k).map(|j| (i == j) as u8 as f64).collect())
                    .collect(),
            },
            noise_std: 0.0,
        }
    }

    #[test]
    fn distinct_non_unit_ratios_pass() {
        let r = validate_assumptions(&two_label_spec(vec![2.0, 3.0], vec![1.0, 1.0])).unwrap();
        assert!(r.heterogeneity.passed);
        assert_eq!(r.heterogeneity.ratios, Some(vec![2.0, 3.0]));
        assert!(r.injectivity.passed);
    }

    #[test]
    fn identical_variances_fail() {
        let r = validate_assumptions(&two_label_spec(vec![1.5, 0.7], vec![1.5, 0.7])).unwrap();
        assert!(!r.heterogeneity.passed);
        assert!(!r.relaxed_heterogeneity.passed);
    }

    #[test]
    fn repeated_ratio_fails_strict_check() {
        let r = validate_assumptions(&two_label_spec(vec![2.0, 2.0], vec![1.0, 1.0])).unwrap();
        assert!(!r.heterogeneity.passed);
        assert!(r.lines()[1].starts_with("ASSUMPTION_1.2: FAIL"));
    }

    #[test]
    fn relaxed_variant_can_pass_where_strict_fails() {
        // each coordinate moves under some label change, never both at once
        let k = 2;
        let mut spec = two_label_spec(vec![1.0, 1.0], vec![1.0, 1.0]);
        spec.label_space = vec![
            LabelEntry {
                y: vec![0, 0],
                prob: None,
                core_mean: vec![0.0; k],
                core_var: vec![1.0, 1.0],
            },
            LabelEntry {
                y: vec![1, 0],
                prob: None,
                core_mean: vec![0.0; k],
                core_var: vec![2.0, 1.0],
            },
            LabelEntry {
                y: vec![0, 1],
                prob: None,
                core_mean: vec![0.0; k],
                core_var: vec![1.0, 3.0],
            },
        ];
        let r = validate_assumptions(&spec).unwrap();
        assert!(
            r.heterogeneity.passed,
            "(1,0) vs (0,1) gives ratios (2, 1/3)"
        );
        spec.label_space.pop();
        let r = validate_assumptions(&spec).unwrap();
        assert!(!r.heterogeneity.passed);
        assert!(!r.relaxed_heterogeneity.passed);
    }

    #[test]
    fn empty_label_space_is_invalid() {
        let mut s = two_label_spec(vec![1.0], vec![2.0]);
        s.label_space.clear();
        assert!(matches!(
            validate_assumptions(&s),
            Err(Error::InvalidSpec(_))
        ));
    }

    #[test]
    fn rank_deficient_mixing_fails_injectivity() {
        let mut s = two_label_spec(vec![2.0, 3.0], vec![1.0, 1.0]);
        s.mixing = MixingFunction::Linear {
            matrix: vec![vec![1.0, 1.0], vec![1.0, 1.0], vec![2.0, 2.0]],
        };
        assert!(!validate_assumptions(&s).unwrap().injectivity.passed);
    }

    proptest! {
        #[test]
        fn pair_check_is_symmetric(va in prop::collection::vec(0.1f64..5.0, 3), vb in prop::collection::vec(0.1f64..5.0, 3)) {
            let fwd: Vec<f64> = va.iter().zip(&vb).map(|(a, b)| a / b).collect();
            let bwd: Vec<f64> = vb.iter().zip(&va).map(|(a, b)| a / b).collect();
            prop_assert_eq!(pair_is_heterogeneous(&fwd), pair_is_heterogeneous(&bwd));
        }
    }
}
