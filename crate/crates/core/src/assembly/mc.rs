use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::AssemblyError;
use crate::par::Exec;

pub const AVOGADRO: f64 = 6.022e23;
pub const DEFAULT_EPS0: [f64; 10] = [0.01, 0.015, 0.02, 0.03, 0.05, 0.06, 0.08, 0.10, 0.20, 0.50];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonteCarloConfig {
    pub n0: f64,
    pub eps0_list: Vec<f64>,
    pub k_growth: f64,
    pub systematic_sd: f64,
    /// Redraw the systematic term at every step instead of once per
    /// trajectory.
    pub per_step_systematic: bool,
    pub ai_max: u32,
    pub trajectories: u32,
    pub seed: u64,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        MonteCarloConfig {
            n0: AVOGADRO,
            eps0_list: DEFAULT_EPS0.to_vec(),
            k_growth: 0.02,
            systematic_sd: 0.005,
            per_step_systematic: false,
            ai_max: 120,
            trajectories: 5000,
            seed: 0,
        }
    }
}

impl MonteCarloConfig {
    pub fn validate(&self) -> Result<(), AssemblyError> {
        let bad = |m: &str| Err(AssemblyError::Config(m.to_string()));
        if !(self.n0 > 0.0) {
            return bad("n0 must be positive");
        }
        if self.eps0_list.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
            return bad("every eps0 must lie in (0, 1)");
        }
        if self.trajectories == 0 {
            return bad("trajectories must be at least 1");
        }
        if self.ai_max == 0 {
            return bad("ai_max must be at least 1");
        }
        if !(self.systematic_sd >= 0.0) || !self.k_growth.is_finite() {
            return bad("systematic_sd must be >= 0 and k_growth finite");
        }
        Ok(())
    }
}

/// Mean flawless-copy counts: `mean_n[i][a - 1]` for `eps0_list[i]` at
/// assembly index `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCResult {
    pub eps0_list: Vec<f64>,
    pub mean_n: Vec<Vec<f64>>,
}

/// One trajectory of expected flawless counts for steps `1..=ai_max`.
fn trajectory(cfg: &MonteCarloConfig, eps0: f64, stream: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let normal = (cfg.systematic_sd > 0.0).then(|| Normal::new(0.0, cfg.systematic_sd).expect("sd checked"));
    let mut draw = || normal.as_ref().map_or(0.0, |d| d.sample(&mut rng));
    let mut e = draw();
    let mut n = cfg.n0;
    let mut out = Vec::with_capacity(cfg.ai_max as usize);
    for s in 1..=cfg.ai_max {
        if cfg.per_step_systematic && s > 1 {
            e = draw();
        }
        let eps = (eps0 * (cfg.k_growth * (s - 1) as f64).exp() + e).clamp(0.0, 1.0);
        n *= 1.0 - eps;
        out.push(n);
    }
    out
}

/// Compensated sum so that identical terms average back exactly.
fn neumaier(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = sum + x;
        c += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    }
    sum + c
}

/// Run every trajectory and average per assembly index. Trajectory `t` of
/// row `i` draws from its own stream, so results do not depend on
/// scheduling.
pub fn monte_carlo(cfg: &MonteCarloConfig, exec: Exec) -> Result<MCResult, AssemblyError> {
    cfg.validate()?;
    let t = cfg.trajectories as usize;
    let mut mean_n = Vec::with_capacity(cfg.eps0_list.len());
    for (i, &eps0) in cfg.eps0_list.iter().enumerate() {
        let runs = exec.map(t, |j| trajectory(cfg, eps0, (i * t + j) as u64));
        let row: Vec<f64> = (0..cfg.ai_max as usize)
            .map(|a| neumaier(runs.iter().map(|r| r[a])) / t as f64)
            .collect();
        mean_n.push(row);
    }
    Ok(MCResult {
        eps0_list: cfg.eps0_list.clone(),
        mean_n,
    })
}

impl MCResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("eps0,assembly_index,mean_N\n");
        for (e, row) in self.eps0_list.iter().zip(&self.mean_n) {
            for (a, n) in row.iter().enumerate() {
                let _ = writeln!(s, "{e},{},{n:e}", a + 1);
            }
        }
        s
    }

    /// Line chart with a log-scale count axis, one line per baseline error.
    pub fn to_svg(&self) -> String {
        const W: f64 = 720.0;
        const H: f64 = 480.0;
        const L: f64 = 70.0;
        const R: f64 = 150.0;
        const T: f64 = 20.0;
        const B: f64 = 50.0;
        const LOG_LO: f64 = -10.0;
        const LOG_HI: f64 = 25.0;
        const COLORS: [&str; 10] = [
            "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
        ];
        let a_max = self.mean_n.first().map_or(1, Vec::len).max(2) as f64;
        let x = |a: f64| L + (a - 1.0) / (a_max - 1.0) * (W - L - R);
        let y = |n: f64| {
            let l = if n > 0.0 { n.log10().clamp(LOG_LO, LOG_HI) } else { LOG_LO };
            T + (LOG_HI - l) / (LOG_HI - LOG_LO) * (H - T - B)
        };
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<rect x="{L}" y="{T}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            W - L - R,
            H - T - B
        );
        for p in (LOG_LO as i32..=LOG_HI as i32).step_by(5) {
            let yy = y(10f64.powi(p));
            let _ = writeln!(
                s,
                r##"<line x1="{L}" y1="{yy:.2}" x2="{}" y2="{yy:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">1e{p}</text>"##,
                W - R,
                L - 5.0,
                yy + 4.0
            );
        }
        let mut a = 20.0;
        while a <= a_max {
            let xx = x(a);
            let _ = writeln!(
                s,
                r#"<text x="{xx:.2}" y="{}" text-anchor="middle">{a}</text>"#,
                H - B + 15.0
            );
            a += 20.0;
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">assembly index</text>"#,
            (L + W - R) / 2.0,
            H - 10.0
        );
        let _ = writeln!(
            s,
            r#"<text x="15" y="{}" transform="rotate(-90 15 {})" text-anchor="middle">mean flawless copies</text>"#,
            H / 2.0,
            H / 2.0
        );
        for (i, (e, row)) in self.eps0_list.iter().zip(&self.mean_n).enumerate() {
            let c = COLORS[i % COLORS.len()];
            let pts: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(k, n)| format!("{:.2},{:.2}", x((k + 1) as f64), y(*n)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{}"/>"#,
                pts.join(" ")
            );
            let ly = T + 15.0 + 16.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{c}" stroke-width="2"/><text x="{}" y="{}">eps0 = {e}</text>"#,
                W - R + 10.0,
                W - R + 30.0,
                W - R + 35.0,
                ly + 4.0
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> MonteCarloConfig {
        MonteCarloConfig {
            trajectories: 50,
            ai_max: 30,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_across_schedules() {
        let a = monte_carlo(&small(7), Exec::Parallel).unwrap();
        let b = monte_carlo(&small(7), Exec::Sequential).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, monte_carlo(&small(8), Exec::Sequential).unwrap());
    }

    #[test]
    fn degenerate_is_analytic() {
        let cfg = MonteCarloConfig {
            systematic_sd: 0.0,
            k_growth: 0.0,
            trajectories: 10,
            ai_max: 40,
            ..Default::default()
        };
        let r = monte_carlo(&cfg, Exec::Sequential).unwrap();
        for (e, row) in r.eps0_list.iter().zip(&r.mean_n) {
            for (k, n) in row.iter().enumerate() {
                let want = cfg.n0 * (1.0 - e).powi(k as i32 + 1);
                assert!((n - want).abs() <= 1e-12 * want, "{e} {k}");
            }
        }
    }

    #[test]
    fn csv_shape() {
        let r = monte_carlo(&small(1), Exec::Sequential).unwrap();
        let csv = r.to_csv();
        assert!(csv.starts_with("eps0,assembly_index,mean_N\n"));
        assert_eq!(csv.lines().count(), 1 + 10 * 30);
        assert!(r.to_svg().contains("<polyline"));
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = MonteCarloConfig {
            eps0_list: vec![0.0],
            ..Default::default()
        };
        assert!(monte_carlo(&cfg, Exec::Sequential).is_err());
    }
}
