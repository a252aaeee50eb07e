use super::equilibria::{find_equilibria, EquilibriumOptions};
use crate::expr::EvalError;
use crate::model::{BoxRegion, FastSlowSystem, RegionSet, ValidationReport};
use crate::monotone::{cooperativity_check, eventual_positivity, halton, halton_points, CooperativityReport, EpdOptions, EpdReport};
use crate::reduction::reduce;
use serde::Serialize;

const MAX_WITNESSES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    EvidenceOnly,
    Structural,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisResult {
    pub id: &'static str,
    pub status: Status,
    pub summary: String,
    pub samples: usize,
    pub violations: usize,
    pub witnesses: Vec<Vec<f64>>,
}

impl HypothesisResult {
    fn structural(id: &'static str, summary: &str) -> Self {
        HypothesisResult { id, status: Status::Structural, summary: summary.into(), samples: 0, violations: 0, witnesses: vec![] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisReport {
    pub epsilon: f64,
    pub validation: ValidationReport,
    pub hypotheses: Vec<HypothesisResult>,
    pub equilibria: Vec<Vec<f64>>,
    pub cooperativity: CooperativityReport,
    pub epd: EpdReport,
    pub all_pass: bool,
}

impl HypothesisReport {
    pub fn get(&self, id: &str) -> Option<&HypothesisResult> {
        self.hypotheses.iter().find(|h| h.id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HypothesisOptions {
    pub face_samples: usize,
    pub graph_samples: usize,
    pub epd: EpdOptions,
    pub equilibria: EquilibriumOptions,
    /// More equilibria than this is read as a non-isolated zero set.
    pub max_equilibria: usize,
}

impl Default for HypothesisOptions {
    fn default() -> Self {
        HypothesisOptions {
            face_samples: 256,
            graph_samples: 1024,
            epd: EpdOptions { ic_samples: 32, ..EpdOptions::default() },
            equilibria: EquilibriumOptions::default(),
            max_equilibria: 1000,
        }
    }
}

/// Points on the face `z_axis = value` of `region`, other coordinates
/// covering the face by Halton points plus the face corners.
fn face_points(region: &BoxRegion, axis: usize, value: f64, count: usize) -> Vec<Vec<f64>> {
    let d = region.dim();
    let mut pts: Vec<Vec<f64>> = (0..count)
        .map(|i| {
            let u = halton(i, d.saturating_sub(1));
            let mut p = Vec::with_capacity(d);
            let mut k = 0;
            for c in 0..d {
                if c == axis {
                    p.push(value);
                } else {
                    p.push(region.lo()[c] + u[k] * (region.hi()[c] - region.lo()[c]));
                    k += 1;
                }
            }
            p
        })
        .collect();
    for mask in 0..(1usize << (d - 1).min(10)) {
        let mut p = Vec::with_capacity(d);
        let mut k = 0;
        for c in 0..d {
            if c == axis {
                p.push(value);
            } else {
                p.push(if mask >> k & 1 == 1 { region.hi()[c] } else { region.lo()[c] });
                k += 1;
            }
        }
        pts.push(p);
    }
    pts
}

/// Inward flow on every face of the closed box `region` in `(x, y)` space:
/// the outward normal component of the vector field must be negative.
fn inward_on_faces(sys: &FastSlowSystem, eps: f64, region: &BoxRegion, count: usize) -> Result<(usize, usize, Vec<Vec<f64>>), EvalError> {
    let n = sys.n();
    let mut checked = 0;
    let mut bad = 0;
    let mut witnesses = Vec::new();
    for axis in 0..region.dim() {
        for (value, outward) in [(region.lo()[axis], -1.0), (region.hi()[axis], 1.0)] {
            for p in face_points(region, axis, value, count) {
                let (x, y) = p.split_at(n);
                let component = if axis < n {
                    sys.slow_field(x, y)?[axis]
                } else {
                    sys.fast_field(x, y)?[axis - n] / eps
                };
                checked += 1;
                if outward * component >= 0.0 {
                    bad += 1;
                    if witnesses.len() < MAX_WITNESSES {
                        witnesses.push(p);
                    }
                }
            }
        }
    }
    Ok((checked, bad, witnesses))
}

fn face_result(id: &'static str, what: &str, (checked, bad, witnesses): (usize, usize, Vec<Vec<f64>>)) -> HypothesisResult {
    let status = if bad == 0 { Status::Pass } else { Status::Fail };
    let summary = if bad == 0 {
        format!("vector field points inward at all {checked} sampled points on the faces of {what}")
    } else {
        format!("vector field fails to point inward at {bad} of {checked} sampled points on the faces of {what}")
    };
    HypothesisResult { id, status, summary, samples: checked, violations: bad, witnesses }
}

/// Testable surrogates for H1-H7 at the working `eps`.
pub fn check_hypotheses(sys: &FastSlowSystem, regions: &RegionSet, eps: f64, opts: &HypothesisOptions) -> Result<HypothesisReport, EvalError> {
    let rs = reduce(sys);
    let mut hyps = Vec::with_capacity(7);

    hyps.push(HypothesisResult::structural("H1", "Ktilde is a compact box with nonempty interior, hence simply connected"));

    let mut pts = halton_points(&regions.k_tilde, opts.graph_samples);
    for mask in 0..(1usize << sys.n().min(12)) {
        pts.push((0..sys.n()).map(|k| if mask >> k & 1 == 1 { regions.k_tilde.hi()[k] } else { regions.k_tilde.lo()[k] }).collect());
    }
    let mut margin = f64::INFINITY;
    let mut bad = 0;
    let mut witnesses = Vec::new();
    for p in &pts {
        let y = rs.m0_values(p)?;
        let gap = (0..sys.m()).map(|j| (y[j] - regions.l.lo()[j]).min(regions.l.hi()[j] - y[j])).fold(f64::INFINITY, f64::min);
        margin = margin.min(gap);
        if gap <= 0.0 {
            bad += 1;
            if witnesses.len() < MAX_WITNESSES {
                witnesses.push(p.clone());
            }
        }
    }
    hyps.push(HypothesisResult {
        id: "H2",
        status: if bad == 0 { Status::Pass } else { Status::Fail },
        summary: format!("graph of m0 over Ktilde stays in L with sampled margin {margin:.6}"),
        samples: pts.len(),
        violations: bad,
        witnesses,
    });

    let epd = eventual_positivity(&rs, &regions.k_tilde, &opts.epd);
    let cooperativity = cooperativity_check(&rs, &regions.k_tilde, opts.graph_samples)?;
    let epd_ok = epd.all_passed();
    hyps.push(HypothesisResult {
        id: "H3",
        status: if epd_ok { Status::EvidenceOnly } else { Status::Fail },
        summary: format!(
            "variational check on [{}, {}]: {} passed, {} failed, {} not applicable; sufficient condition {}",
            epd.t0,
            epd.t1,
            epd.passed,
            epd.failed,
            epd.na,
            if cooperativity.passed { "holds" } else { "does not hold" }
        ),
        samples: epd.checked,
        violations: epd.failed + epd.errors.len(),
        witnesses: epd.witnesses.iter().map(|w| w.ic.clone()).collect(),
    });

    hyps.push(HypothesisResult::structural("H4", "Ktilde is a box, hence convex and p-convex"));

    hyps.push(face_result("H5", "closure of Int Ktilde x L", inward_on_faces(sys, eps, &regions.d_tilde_closure(), opts.face_samples)?));

    let eq = find_equilibria(&rs, &regions.k_tilde, &opts.equilibria)?;
    let isolated = eq.len() < opts.max_equilibria;
    hyps.push(HypothesisResult {
        id: "H6",
        status: if isolated { Status::EvidenceOnly } else { Status::Fail },
        summary: format!("{} isolated zeros of F found in Int Ktilde ({} starts)", eq.len(), eq.starts),
        samples: eq.starts,
        violations: usize::from(!isolated),
        witnesses: vec![],
    });

    hyps.push(face_result("H7", "D = K x L", inward_on_faces(sys, eps, &regions.d_closure(), opts.face_samples)?));

    let all_pass = hyps.iter().all(|h| h.status != Status::Fail);
    Ok(HypothesisReport {
        epsilon: eps,
        validation: sys.validation().clone(),
        hypotheses: hyps,
        equilibria: eq.points.into_iter().map(|e| e.x).collect(),
        cooperativity,
        epd,
        all_pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse_expr, VarContext};
    use nalgebra::DMatrix;

    fn scalar(f: &str, h: &str) -> FastSlowSystem {
        FastSlowSystem::new(
            vec![parse_expr(f, VarContext::new(1, 1)).unwrap()],
            DMatrix::from_element(1, 1, -1.0),
            vec![parse_expr(h, VarContext::slow_only(1)).unwrap()],
        )
        .unwrap()
    }

    fn boxes(k: f64, kt: f64, l: f64) -> RegionSet {
        RegionSet::new(BoxRegion::cube(1, -k, k).unwrap(), BoxRegion::cube(1, -kt, kt).unwrap(), BoxRegion::cube(1, -l, l).unwrap()).unwrap()
    }

    #[test]
    fn counterexample_passes() {
        let sys = scalar("y1 - (x1^3/3 - x1)", "-4*tanh(x1)");
        let rep = check_hypotheses(&sys, &boxes(3.0, 4.0, 5.0), 0.05, &Default::default()).unwrap();
        assert!(rep.all_pass, "{rep:#?}");
        assert_eq!(rep.get("H1").unwrap().status, Status::Structural);
        assert_eq!(rep.get("H5").unwrap().status, Status::Pass);
        assert_eq!(rep.equilibria.len(), 1);
    }

    #[test]
    fn intro_flags_the_x_face() {
        let sys = scalar("-x1 - y1", "x1");
        let rep = check_hypotheses(&sys, &boxes(1.0, 1.5, 2.0), 0.1, &Default::default()).unwrap();
        assert_eq!(rep.get("H2").unwrap().status, Status::Pass);
        let h7 = rep.get("H7").unwrap();
        assert_eq!(h7.status, Status::Fail);
        // Oracle: outward flow only on x = 1 with y <= -1 and on x = -1 with y >= 1.
        assert!(!h7.witnesses.is_empty());
        for w in &h7.witnesses {
            assert_eq!(w[0].abs(), 1.0);
            assert!(w[0] * w[1] <= -1.0);
        }
        assert!(!rep.all_pass);
    }

    #[test]
    fn narrow_fast_box_fails_h2() {
        let sys = scalar("-x1 - y1", "x1");
        let rep = check_hypotheses(&sys, &boxes(1.0, 1.5, 1.2), 0.1, &Default::default()).unwrap();
        assert_eq!(rep.get("H2").unwrap().status, Status::Fail);
    }
}
