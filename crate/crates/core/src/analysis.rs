//! Correlation curves, CHSH, the single-wing marginals, and the map of the
//! λ region where a joint measurement flips the A-outcome.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{omega_hat, AngleRad, UnitVector};
use crate::models::{gr_outcome, HiddenState, MeasurementContext, Model, Outcome, TieBreak};
use crate::sampling::{child_seed, fold_events, RunConfig, SettingPolicy, SettingsGrid};

/// Cells within this distance of `θ*(ω)` are not compared in region maps.
pub const BOUNDARY_BAND: f64 = 1e-6;

/// Estimated `E[x·y]` with its binomial standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub e: f64,
    pub stderr: f64,
    pub n: u64,
}

#[derive(Clone, Copy, Debug, Default)]
struct Tally {
    n: u64,
    xy: i64,
    x_plus: u64,
    y_plus: u64,
}

impl Tally {
    fn merge(self, o: Tally) -> Tally {
        Tally { n: self.n + o.n, xy: self.xy + o.xy, x_plus: self.x_plus + o.x_plus, y_plus: self.y_plus + o.y_plus }
    }
}

fn tally(model: &Model, grid: &SettingsGrid, a: usize, b: usize, n: u64, seed: u64) -> Result<Tally> {
    let cfg = RunConfig::new(model.clone(), grid.clone(), n, seed).with_policy(SettingPolicy::Fixed(a, b));
    fold_events(
        &cfg,
        Tally::default,
        |mut t, e| {
            t.n += 1;
            t.xy += i64::from(e.x.value() * e.y.value());
            t.x_plus += u64::from(e.x == Outcome::Plus);
            t.y_plus += u64::from(e.y == Outcome::Plus);
            t
        },
        Tally::merge,
    )
}

/// Mean of `x·y` over `n` joint runs at the grid pair `(a, b)`.
pub fn correlation(model: &Model, grid: &SettingsGrid, a: usize, b: usize, n: u64, seed: u64) -> Result<Correlation> {
    let t = tally(model, grid, a, b, n, seed)?;
    let e = t.xy as f64 / t.n as f64;
    Ok(Correlation { e, stderr: ((1.0 - e * e).max(0.0) / t.n as f64).sqrt(), n: t.n })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationPoint {
    pub omega: f64,
    pub e: f64,
    pub e_analytic: f64,
    pub stderr: f64,
    pub n: u64,
    /// `|E − (−cos ω)| ≤ 4·stderr`, after at most one rerun at 4× samples.
    pub within_4_sigma: bool,
    pub rerun: bool,
}

fn within(e: f64, analytic: f64, stderr: f64) -> bool {
    (e - analytic).abs() <= 4.0 * stderr
}

/// `E(ω)` for `a = z`, `b` at angle `ω` in the xz-plane, one point per ω.
/// Points outside 4σ are rerun once with 4× samples.
pub fn correlation_curve(model: &Model, omegas: &[f64], n: u64, seed: u64) -> Result<Vec<CorrelationPoint>> {
    omegas
        .iter()
        .enumerate()
        .map(|(i, &omega)| {
            let grid = SettingsGrid::single_pair(omega);
            let analytic = -omega.cos();
            let point_seed = child_seed(seed, i as u64);
            let mut c = correlation(model, &grid, 0, 0, n, point_seed)?;
            let mut rerun = false;
            if !within(c.e, analytic, c.stderr) {
                rerun = true;
                c = correlation(model, &grid, 0, 0, 4 * n, child_seed(point_seed, 1))?;
            }
            Ok(CorrelationPoint {
                omega,
                e: c.e,
                e_analytic: analytic,
                stderr: c.stderr,
                n: c.n,
                within_4_sigma: within(c.e, analytic, c.stderr),
                rerun,
            })
        })
        .collect()
}

pub fn write_curve_csv<W: Write>(mut w: W, points: &[CorrelationPoint]) -> Result<()> {
    writeln!(w, "omega,E,E_analytic,stderr,N")?;
    for p in points {
        writeln!(w, "{},{},{},{},{}", p.omega, p.e, p.e_analytic, p.stderr, p.n)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChshResult {
    pub s: f64,
    pub stderr: f64,
    /// `E(a,b), E(a,b′), E(a′,b), E(a′,b′)`.
    pub correlators: [Correlation; 4],
}

/// Settings `a, a′ = 0, π/2` and `b, b′ = π/4, 3π/4` in the xz-plane.
pub fn optimal_chsh_grid() -> SettingsGrid {
    SettingsGrid::planar(&[0.0, FRAC_PI_2], &[PI / 4.0, 3.0 * PI / 4.0]).expect("four labelled settings")
}

/// `S = |E(a,b) − E(a,b′) + E(a′,b) + E(a′,b′)|` on a 2×2 grid, with `n`
/// runs per correlator.
pub fn chsh(model: &Model, grid: &SettingsGrid, n: u64, seed: u64) -> Result<ChshResult> {
    if grid.a.len() != 2 || grid.b.len() != 2 {
        return Err(Error::Config("CHSH needs exactly two settings per wing".into()));
    }
    let pairs = [(0, 0), (0, 1), (1, 0), (1, 1)];
    let mut correlators = [Correlation { e: 0.0, stderr: 0.0, n: 0 }; 4];
    for (k, &(a, b)) in pairs.iter().enumerate() {
        correlators[k] = correlation(model, grid, a, b, n, child_seed(seed, k as u64))?;
    }
    let [ab, abp, apb, apbp] = correlators.map(|c| c.e);
    Ok(ChshResult {
        s: (ab - abp + apb + apbp).abs(),
        stderr: correlators.iter().map(|c| c.stderr * c.stderr).sum::<f64>().sqrt(),
        correlators,
    })
}

/// `S` from the model's analytic correlations.
pub fn chsh_exact(model: &Model, grid: &SettingsGrid) -> Result<f64> {
    if grid.a.len() != 2 || grid.b.len() != 2 {
        return Err(Error::Config("CHSH needs exactly two settings per wing".into()));
    }
    let e = |a, b| {
        model
            .exact_correlation(grid.setting_a(a), grid.setting_b(b))
            .expect("every shipped model has an analytic correlation")
    };
    Ok((e(0, 0) - e(0, 1) + e(1, 0) + e(1, 1)).abs())
}

/// Single-wing outcome frequencies at one setting pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalPoint {
    pub a: String,
    pub b: String,
    pub p_x_plus: f64,
    pub p_y_plus: f64,
    pub n: u64,
}

/// `P(x = +1 | a, b)` and `P(y = +1 | a, b)` for every pair of the grid.
pub fn marginals(model: &Model, grid: &SettingsGrid, n: u64, seed: u64) -> Result<Vec<MarginalPoint>> {
    let mut out = Vec::new();
    for a in 0..grid.a.len() {
        for b in 0..grid.b.len() {
            let k = (a * grid.b.len() + b) as u64;
            let t = tally(model, grid, a, b, n, child_seed(seed, k))?;
            out.push(MarginalPoint {
                a: grid.a[a].label.clone(),
                b: grid.b[b].label.clone(),
                p_x_plus: t.x_plus as f64 / t.n as f64,
                p_y_plus: t.y_plus as f64 / t.n as f64,
                n: t.n,
            });
        }
    }
    Ok(out)
}

/// `θ*(ω) = (π/2)·cos²(ω/2) + ω/2`: for `ω ∈ (π/2, π)` and λ placed as in
/// [`flip_configuration`], the joint-mode A-outcome differs from the lone one
/// exactly when `θ > θ*`.
pub fn signaling_threshold(omega: AngleRad) -> Result<AngleRad> {
    let w = omega.value();
    if !(w > FRAC_PI_2 && w < PI) {
        return Err(Error::Domain(format!("omega {w} outside (pi/2, pi)")));
    }
    let c = (w / 2.0).cos();
    Ok(AngleRad::raw(FRAC_PI_2 * c * c + w / 2.0))
}

/// `λ = z`, `a` at angle `θ` from λ, `b` at angle `ω` from `a` on the side
/// of `a⊥` (between `a⊥` and `−a` when `ω > π/2`), all in the xz-plane.
/// The joint rule then turns `â` away from λ by `(ω̂ − ω)/2`.
pub fn flip_configuration(omega: f64, theta: f64) -> (UnitVector, UnitVector, UnitVector) {
    let a = UnitVector::in_xz_plane(theta);
    let b = UnitVector::in_xz_plane(theta - omega);
    (a, b, UnitVector::Z)
}

/// Whether the joint-mode A-outcome differs from the lone A-outcome at λ.
pub fn signaling_witness(a: &UnitVector, b: &UnitVector, lambda: &UnitVector, tie: TieBreak) -> Result<bool> {
    let l = HiddenState(*lambda);
    let single = gr_outcome(&MeasurementContext::SingleA(*a), &l, tie)?.x;
    let joint = gr_outcome(&MeasurementContext::Joint(*a, *b), &l, tie)?.x;
    Ok(single != joint)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionCell {
    pub omega: f64,
    pub theta: f64,
    pub analytic: bool,
    pub mc: bool,
    /// Outside `(π/2, π) × (0, π/2]`; `analytic` then uses the general
    /// sign-change condition instead of the threshold formula.
    pub extrapolated: bool,
    /// Within [`BOUNDARY_BAND`] of `θ*(ω)`.
    pub near_boundary: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionMap {
    pub cells: Vec<RegionCell>,
}

impl RegionMap {
    /// `(agreeing, compared)` over cells away from the boundary.
    pub fn agreement(&self) -> (usize, usize) {
        let compared: Vec<_> = self.cells.iter().filter(|c| !c.near_boundary).collect();
        (compared.iter().filter(|c| c.analytic == c.mc).count(), compared.len())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "omega,theta,analytic,mc")?;
        for c in &self.cells {
            writeln!(w, "{},{},{},{}", c.omega, c.theta, u8::from(c.analytic), u8::from(c.mc))?;
        }
        Ok(())
    }

    /// Heatmap: rows θ, columns ω; dark where the model flips, red where
    /// the two flags disagree.
    pub fn to_svg(&self) -> String {
        let mut omegas: Vec<f64> = self.cells.iter().map(|c| c.omega).collect();
        let mut thetas: Vec<f64> = self.cells.iter().map(|c| c.theta).collect();
        for v in [&mut omegas, &mut thetas] {
            v.sort_by(f64::total_cmp);
            v.dedup();
        }
        let px = 8;
        let (w, h) = (omegas.len() * px, thetas.len() * px);
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
        );
        for c in &self.cells {
            let i = omegas.partition_point(|&o| o < c.omega);
            let j = thetas.partition_point(|&t| t < c.theta);
            let fill = match (c.analytic, c.mc) {
                (true, true) => "#222222",
                (false, false) => "#eeeeee",
                _ if c.near_boundary => "#888888",
                _ => "#d62728",
            };
            // θ grows upwards
            let y = h - (j + 1) * px;
            svg.push_str(&format!(
                "<rect x=\"{}\" y=\"{y}\" width=\"{px}\" height=\"{px}\" fill=\"{fill}\"/>\n",
                i * px
            ));
        }
        svg.push_str("</svg>\n");
        svg
    }
}

fn analytic_flip(omega: f64, theta: f64) -> (bool, bool) {
    let in_domain = omega > FRAC_PI_2 && omega < PI && theta > 0.0 && theta <= FRAC_PI_2;
    if in_domain {
        let star = signaling_threshold(AngleRad::raw(omega)).expect("domain checked").value();
        return (theta > star, false);
    }
    // â·λ = cos(θ + δ) with signed rotation δ = (ω̂ − ω)/2
    let w = omega.clamp(0.0, PI);
    let delta = (omega_hat(AngleRad::raw(w)).expect("clamped").value() - w) / 2.0;
    let before = theta.cos();
    let after = (theta + delta).cos();
    let sgn = |v: f64| v.abs() < 1e-12 || v > 0.0;
    (sgn(before) != sgn(after), true)
}

/// Compares the threshold formula with direct model evaluation on every
/// `(ω, θ)` cell, λ placed by [`flip_configuration`].
pub fn region_map(omegas: &[f64], thetas: &[f64]) -> Result<RegionMap> {
    if omegas.len() < 2 || thetas.len() < 2 {
        return Err(Error::Config("region map needs at least 2 points per axis".into()));
    }
    let mut cells = Vec::with_capacity(omegas.len() * thetas.len());
    for &omega in omegas {
        for &theta in thetas {
            let (analytic, extrapolated) = analytic_flip(omega, theta);
            let (a, b, l) = flip_configuration(omega, theta);
            let mc = signaling_witness(&a, &b, &l, TieBreak::Plus)?;
            let near_boundary = signaling_threshold(AngleRad::raw(omega))
                .map(|s| (theta - s.value()).abs() <= BOUNDARY_BAND)
                .unwrap_or(false);
            cells.push(RegionCell { omega, theta, analytic, mc, extrapolated, near_boundary });
        }
    }
    Ok(RegionMap { cells })
}

/// `n` cell centres spanning the open interval `(lo, hi)`.
pub fn open_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * (i as f64 + 0.5) / n as f64).collect()
}

/// `n` points spanning `(lo, hi]`, the last one exactly `hi`.
pub fn half_open_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|i| if i == n { hi } else { lo + (hi - lo) * i as f64 / n as f64 }).collect()
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| if i == n - 1 { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 }).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{LocalDetMixture, Model};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gr_correlation_is_exact_at_the_ends() {
        let c = correlation(&Model::Gr, &SettingsGrid::single_pair(0.0), 0, 0, 10_000, 1).unwrap();
        assert_eq!(c.e, -1.0);
        let c = correlation(&Model::Gr, &SettingsGrid::single_pair(PI), 0, 0, 10_000, 1).unwrap();
        assert_eq!(c.e, 1.0);
    }

    #[test]
    fn gr_correlation_vanishes_at_right_angle() {
        let c = correlation(&Model::Gr, &SettingsGrid::single_pair(FRAC_PI_2), 0, 0, 1_000_000, 8).unwrap();
        assert!(c.e.abs() < 0.004, "{c:?}");
    }

    #[test]
    fn qm_oracle_chsh_is_two_root_two() {
        let s = chsh_exact(&Model::Qm, &optimal_chsh_grid()).unwrap();
        assert_abs_diff_eq!(s, 2.0 * 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn local_mixtures_respect_chsh_bound() {
        // brute force: every deterministic strategy gives |S| = 2
        let grid = optimal_chsh_grid();
        for s in LocalDetMixture::all_deterministic(2, 2) {
            let m = Model::LocalDet(LocalDetMixture::new(vec![s]).unwrap());
            assert_abs_diff_eq!(chsh_exact(&m, &grid).unwrap(), 2.0, epsilon = 1e-15);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let m = Model::LocalDet(LocalDetMixture::random(2, 2, &mut rng));
            assert!(chsh_exact(&m, &grid).unwrap() <= 2.0 + 1e-12);
        }
    }

    #[test]
    fn threshold_values() {
        let star = signaling_threshold(AngleRad::raw(3.0 * PI / 4.0)).unwrap().value();
        // (π/2)cos²(3π/8) + 3π/8
        assert_abs_diff_eq!(star, 1.408_134_9, epsilon = 1e-6);
        assert!((star.to_degrees() - 80.68).abs() < 0.01);
        let lo = signaling_threshold(AngleRad::raw(FRAC_PI_2 + 1e-9)).unwrap().value();
        let hi = signaling_threshold(AngleRad::raw(PI - 1e-9)).unwrap().value();
        assert_abs_diff_eq!(lo, FRAC_PI_2, epsilon = 1e-8);
        assert_abs_diff_eq!(hi, FRAC_PI_2, epsilon = 1e-8);
        assert!(signaling_threshold(AngleRad::raw(FRAC_PI_2)).is_err());
        assert!(signaling_threshold(AngleRad::raw(PI)).is_err());
        assert!(signaling_threshold(AngleRad::raw(1.0)).is_err());
    }

    #[test]
    fn threshold_stays_below_right_angle() {
        for w in open_grid(FRAC_PI_2, PI, 100_000) {
            assert!(signaling_threshold(AngleRad::raw(w)).unwrap().value() < FRAC_PI_2);
        }
    }

    #[test]
    fn witness_cases() {
        let (a, b, l) = flip_configuration(3.0 * PI / 4.0, 85f64.to_radians());
        assert!(signaling_witness(&a, &b, &l, TieBreak::Resample).unwrap());
        let (a, b, l) = flip_configuration(3.0 * PI / 4.0, 70f64.to_radians());
        assert!(!signaling_witness(&a, &b, &l, TieBreak::Resample).unwrap());
        // no rotation at ω = π/2
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let l = crate::sampling::sample_sphere(&mut rng);
            assert!(!signaling_witness(&UnitVector::Z, &UnitVector::X, &l, TieBreak::Plus).unwrap());
        }
        let (a, b, _) = flip_configuration(3.0 * PI / 4.0, FRAC_PI_2);
        assert!(matches!(signaling_witness(&a, &b, &UnitVector::Z, TieBreak::Resample), Err(Error::SignUndefined(_))));
    }

    #[test]
    fn flip_configuration_geometry() {
        let (a, b, l) = flip_configuration(2.5, 0.7);
        assert_abs_diff_eq!(crate::geometry::angle_between(&a, &b).value(), 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(crate::geometry::angle_between(&a, &l).value(), 0.7, epsilon = 1e-12);
        // b lies between a⊥ (towards λ) and −a
        let a_perp = UnitVector::in_xz_plane(0.7 - FRAC_PI_2);
        assert!(b.dot(&a_perp) > 0.0 && b.dot(&a) < 0.0);
    }

    #[test]
    fn region_map_agrees_and_flags_spot_cell() {
        let map = region_map(&open_grid(FRAC_PI_2, PI, 50), &half_open_grid(0.0, FRAC_PI_2, 50)).unwrap();
        let (agree, total) = map.agreement();
        assert_eq!(agree, total);
        assert_eq!(total + map.cells.iter().filter(|c| c.near_boundary).count(), 2500);

        let spot = region_map(&[3.0 * PI / 4.0, 2.5], &[85f64.to_radians(), 1.0]).unwrap();
        assert!(spot.cells[0].analytic && spot.cells[0].mc);
    }

    #[test]
    fn no_flip_below_right_angle() {
        let map = region_map(&open_grid(0.0, FRAC_PI_2, 40), &half_open_grid(0.0, FRAC_PI_2, 40)).unwrap();
        assert!(map.cells.iter().all(|c| !c.mc && !c.analytic && c.extrapolated));
    }

    #[test]
    fn extrapolated_range_is_consistent() {
        let map = region_map(&linspace(0.0, PI, 41), &linspace(0.01, PI - 0.01, 41)).unwrap();
        let (agree, total) = map.agreement();
        assert_eq!(agree, total);
    }

    #[test]
    fn grids() {
        assert_eq!(linspace(0.0, 1.0, 3), vec![0.0, 0.5, 1.0]);
        assert_eq!(half_open_grid(0.0, 1.0, 2), vec![0.5, 1.0]);
        assert_eq!(open_grid(0.0, 1.0, 2), vec![0.25, 0.75]);
    }

    #[test]
    fn csv_headers() {
        let mut buf = Vec::new();
        write_curve_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "omega,E,E_analytic,stderr,N\n");
        let map = region_map(&[2.0, 2.5], &[0.5, 1.5]).unwrap();
        let mut buf = Vec::new();
        map.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("omega,theta,analytic,mc"));
        assert_eq!(text.lines().count(), 5);
        assert!(map.to_svg().starts_with("<svg"));
    }
}
