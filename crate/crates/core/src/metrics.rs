//! Evaluation metrics over generated and ground-truth frames.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Result, SarError};
use crate::motion::{forward_kinematics, norm3, Pose, Skeleton};

fn check_pair(generated: &[Pose], truth: &[Pose]) -> Result<()> {
    if generated.len() != truth.len() {
        return Err(SarError::invalid(format!(
            "{} generated frames vs {} ground-truth frames",
            generated.len(),
            truth.len()
        )));
    }
    if generated.is_empty() {
        return Err(SarError::invalid("no frames to compare"));
    }
    for (i, (g, t)) in generated.iter().zip(truth).enumerate() {
        if g.joints() != t.joints() {
            return Err(SarError::invalid(format!(
                "frame {i}: {} joints vs {}",
                g.joints(),
                t.joints()
            )));
        }
    }
    Ok(())
}

fn mean_over_joints(generated: &[Pose], truth: &[Pose], f: impl Fn(usize, usize) -> Result<f64>) -> Result<f64> {
    check_pair(generated, truth)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, g) in generated.iter().enumerate() {
        for j in 0..g.joints() {
            sum += f(i, j)?;
            count += 1;
        }
    }
    if count == 0 {
        return Err(SarError::invalid("poses have no joints"));
    }
    Ok(sum / count as f64)
}

/// Mean per-joint L2 norm of the axis-angle difference.
pub fn mpjae(generated: &[Pose], truth: &[Pose]) -> Result<f64> {
    mean_over_joints(generated, truth, |i, j| {
        let (a, b) = (generated[i].0[j].0, truth[i].0[j].0);
        Ok(norm3([a[0] - b[0], a[1] - b[1], a[2] - b[2]]))
    })
}

/// Mean per-joint rotation angle between the two orientations.
pub fn mpjae_geodesic(generated: &[Pose], truth: &[Pose]) -> Result<f64> {
    mean_over_joints(generated, truth, |i, j| {
        let a = generated[i].0[j].to_quat()?;
        let b = truth[i].0[j].to_quat()?;
        Ok(a.angle_to(b))
    })
}

/// Mean per-joint distance between forward-kinematics positions.
pub fn mpjpe(generated: &[Pose], truth: &[Pose], skeleton: &Skeleton) -> Result<f64> {
    check_pair(generated, truth)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (g, t) in generated.iter().zip(truth) {
        let pg = forward_kinematics(g, skeleton)?;
        let pt = forward_kinematics(t, skeleton)?;
        for (a, b) in pg.iter().zip(&pt) {
            sum += norm3([a[0] - b[0], a[1] - b[1], a[2] - b[2]]);
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

fn mean_step(rows: &[Vec<f64>]) -> Result<f64> {
    if rows.len() < 2 {
        return Err(SarError::invalid(format!(
            "neighbor distance needs at least 2 frames, got {}",
            rows.len()
        )));
    }
    let total: f64 = rows
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt())
        .sum();
    Ok(total / (rows.len() - 1) as f64)
}

/// Mean norm of consecutive flattened pose differences (axis-angle space).
pub fn neighbor_l2(frames: &[Pose]) -> Result<f64> {
    mean_step(&frames.iter().map(Pose::flat).collect::<Vec<_>>())
}

/// Neighbor distance over forward-kinematics joint positions.
pub fn neighbor_l2_positions(frames: &[Pose], skeleton: &Skeleton) -> Result<f64> {
    let rows = frames
        .iter()
        .map(|p| Ok(forward_kinematics(p, skeleton)?.into_iter().flatten().collect()))
        .collect::<Result<Vec<Vec<f64>>>>()?;
    mean_step(&rows)
}

/// `|neighbor_l2(generated) - neighbor_l2(truth)|`
pub fn neighbor_gap(generated: &[Pose], truth: &[Pose]) -> Result<f64> {
    Ok((neighbor_l2(generated)? - neighbor_l2(truth)?).abs())
}

/// `|X_k|²` for the direct DFT `X_k = Σ_t x_t e^{-2πi kt/n}`, `k = 0..n`.
pub fn power_spectrum(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &v) in x.iter().enumerate() {
                let a = -2.0 * std::f64::consts::PI * ((k * t) % n) as f64 / n as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            re * re + im * im
        })
        .collect()
}

fn normalized(p: &[f64]) -> Vec<f64> {
    let total: f64 = p.iter().sum();
    if total > 0.0 {
        p.iter().map(|v| v / total).collect()
    } else {
        // a silent signal is treated as all power at DC
        let mut out = vec![0.0; p.len()];
        out[0] = 1.0;
        out
    }
}

/// Earth mover's distance between two distributions on the same 1-D grid.
pub fn emd_1d(a: &[f64], b: &[f64]) -> f64 {
    let (mut ca, mut cb, mut d) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ca += x;
        cb += y;
        d += (ca - cb).abs();
    }
    d
}

/// Power-weighted EMD between normalized per-feature power spectra.
pub fn npss(generated: &[Pose], truth: &[Pose]) -> Result<f64> {
    check_pair(generated, truth)?;
    if generated.len() < 2 {
        return Err(SarError::invalid("NPSS needs at least 2 frames"));
    }
    let g: Vec<Vec<f64>> = generated.iter().map(Pose::flat).collect();
    let t: Vec<Vec<f64>> = truth.iter().map(Pose::flat).collect();
    let features = g[0].len();
    let (mut num, mut den) = (0.0, 0.0);
    for f in 0..features {
        let xg: Vec<f64> = g.iter().map(|r| r[f]).collect();
        let xt: Vec<f64> = t.iter().map(|r| r[f]).collect();
        let pg = power_spectrum(&xg);
        let pt = power_spectrum(&xt);
        let weight: f64 = pt.iter().sum();
        if weight == 0.0 {
            continue;
        }
        num += weight * emd_1d(&normalized(&pg), &normalized(&pt));
        den += weight;
    }
    if den == 0.0 {
        return Err(SarError::UndefinedMetric(
            "ground truth has zero power in every feature".into(),
        ));
    }
    Ok(num / den)
}

/// One row of the evaluation table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRow {
    pub model: String,
    pub mpjae: f64,
    pub mpjpe: f64,
    pub neighbor_l2_gen: f64,
    pub neighbor_l2_gt: f64,
    pub neighbor_gap: f64,
    pub npss: f64,
}

pub const EVAL_COLUMNS: [&str; 7] = [
    "model",
    "mpjae",
    "mpjpe",
    "neighbor_l2_gen",
    "neighbor_l2_gt",
    "neighbor_gap",
    "npss",
];

/// Averages each metric over sequences; the neighbor gap compares the two
/// averaged neighbor distances.
pub fn evaluate(name: &str, generated: &[Vec<Pose>], truth: &[Vec<Pose>], skeleton: &Skeleton) -> Result<EvalRow> {
    if generated.len() != truth.len() || generated.is_empty() {
        return Err(SarError::invalid(format!(
            "{} generated sequences vs {} ground-truth sequences",
            generated.len(),
            truth.len()
        )));
    }
    let k = generated.len() as f64;
    let mut row = EvalRow {
        model: name.to_string(),
        mpjae: 0.0,
        mpjpe: 0.0,
        neighbor_l2_gen: 0.0,
        neighbor_l2_gt: 0.0,
        neighbor_gap: 0.0,
        npss: 0.0,
    };
    for (g, t) in generated.iter().zip(truth) {
        row.mpjae += mpjae(g, t)? / k;
        row.mpjpe += mpjpe(g, t, skeleton)? / k;
        row.neighbor_l2_gen += neighbor_l2(g)? / k;
        row.neighbor_l2_gt += neighbor_l2(t)? / k;
        row.npss += npss(g, t)? / k;
    }
    row.neighbor_gap = (row.neighbor_l2_gen - row.neighbor_l2_gt).abs();
    Ok(row)
}

pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut out = EVAL_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.model, r.mpjae, r.mpjpe, r.neighbor_l2_gen, r.neighbor_l2_gt, r.neighbor_gap, r.npss
        )
        .unwrap();
    }
    out
}
