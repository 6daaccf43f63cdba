//! Throwaway diagnostic: residual decay and decode stability over long runs.

use fdr_core::calculus::PrimalField;
use fdr_core::grid::{bin_points, make_grid, BinningOptions, PointCloud};
use fdr_core::solver::{parabola_specs, solve_with_inspector, SolverConfig};
use rand::{Rng, SeedableRng};
use rand_distr::Distribution;

fn circle_cloud_2d(n: usize, seed: u64) -> PointCloud {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let normal = rand_distr::Normal::new(0.0, 0.05).unwrap();
    let mut coords = Vec::with_capacity(2 * n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x1: f64 = rng.random();
        let x2: f64 = rng.random();
        let smooth = 0.5 * (x1 + x2)
            + 0.2 * (std::f64::consts::PI * x1).sin() * (std::f64::consts::PI * x2).sin();
        let inside = (x1 - 0.5).powi(2) + (x2 - 0.5).powi(2) <= 0.09;
        let jump = if inside { 0.5 * 0.15013 } else { 0.0 };
        coords.push(x1);
        coords.push(x2);
        ys.push(smooth + jump + normal.sample(&mut rng));
    }
    PointCloud::new(coords, ys, 2).unwrap()
}

fn step_cloud_1d(n: usize, seed: u64) -> PointCloud {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let normal = rand_distr::Normal::new(0.0, 0.05).unwrap();
    let mut coords = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = rng.random();
        let jumps = [(0.2, 0.1286), (0.4, 0.2133), (0.6, 0.3192), (0.8, -0.4220)];
        let mut y = (2.0 * std::f64::consts::PI * x).sin() * 0.2;
        for (loc, size) in jumps {
            if x >= loc {
                y += size;
            }
        }
        coords.push(x);
        ys.push(y + normal.sample(&mut rng));
    }
    PointCloud::new(coords, ys, 1).unwrap()
}

fn trace(label: &str, cloud: &PointCloud, n_cells: &[usize], cfg: &SolverConfig, iters: usize) {
    let grid = make_grid(cloud, n_cells, 32, 0.05).unwrap();
    let binned = bin_points(cloud, &grid, &BinningOptions::default()).unwrap();
    let specs = parabola_specs(&binned, &grid, cfg).unwrap();
    let shape = grid.shape();
    let s = shape.levels;
    let m = shape.spatial_len();
    let d = shape.dim();
    let mut cfg = cfg.clone();
    cfg.max_iter = iters;
    cfg.tol = 1e-12;

    let mut snap_v: Option<Vec<f64>> = None;
    let mut snap_p: Option<Vec<Vec<f64>>> = None;
    let mut last_counts = vec![0usize; m];
    let started = std::time::Instant::now();
    println!("== {label} (m={m}, S={s}) ==");

    let inspector = |iter: usize, v: &PrimalField, dual: &fdr_core::solver::DualState| {
        if iter % 25 != 0 {
            return;
        }
        let v_now = v.data.clone();
        let p_now: Vec<Vec<f64>> = dual.p.comps.clone();
        if iter % 500 == 0 {
            if let (Some(pv), Some(pp)) = (&snap_v, &snap_p) {
                let mut dv: f64 = 0.0;
                let mut mv: f64 = 0.0;
                for (a, b) in pv.iter().zip(&v_now) {
                    dv = dv.max((a - b).abs());
                    mv = mv.max(b.abs());
                }
                let mut dp: f64 = 0.0;
                let mut mp: f64 = 0.0;
                for (ca, cb) in pp.iter().zip(&p_now) {
                    for (a, b) in ca.iter().zip(cb) {
                        dp = dp.max((a - b).abs());
                        mp = mp.max(b.abs());
                    }
                }
                let rv = dv / mv.max(1e-12);
                let rp = dp / mp.max(1e-12);
                // decode: active level counts
                let mut flips = 0usize;
                for c in 0..m {
                    let count = (0..s).filter(|&l| v_now[c * s + l] > 0.5).count();
                    if count != last_counts[c] {
                        flips += 1;
                    }
                    last_counts[c] = count;
                }
                // feasibility: parabola part
                let mut gap: f64 = 0.0;
                for idx in 0..m * s {
                    let nx: f64 = (0..d).map(|j| p_now[j][idx] * p_now[j][idx]).sum();
                    gap = gap.max(specs[idx].alpha * nx - specs[idx].offset - p_now[d][idx]);
                }
                // feasibility: worst range-sum norm over full range [0, s)
                let mut worst: f64 = 0.0;
                for c in 0..m {
                    let mut best_pair: f64 = 0.0;
                    let mut pref = vec![0.0f64; d];
                    let mut sums = vec![vec![0.0f64; s]; d];
                    for l in 0..s {
                        for j in 0..d {
                            pref[j] += p_now[j][c * s + l];
                            sums[j][l] = pref[j];
                        }
                    }
                    for lo in 0..s {
                        for hi in lo..s {
                            let mut nsq = 0.0;
                            for j in 0..d {
                                let sub = sums[j][hi] - if lo > 0 { sums[j][lo - 1] } else { 0.0 };
                                nsq += sub * sub;
                            }
                            best_pair = best_pair.max(nsq.sqrt());
                        }
                    }
                    worst = worst.max(best_pair);
                }
                println!(
                    "iter {iter:>6}  rv={rv:.3e} rp={rp:.3e}  flips={flips:>4}  parab_gap={:.2e}  max_range_norm={:.4e}  [{:.1}s]",
                    gap.max(0.0),
                    worst,
                    started.elapsed().as_secs_f64()
                );
            }
        }
        snap_v = Some(v_now);
        snap_p = Some(p_now);
    };

    let report = solve_with_inspector(&binned, &grid, &cfg, None, Some(inspector)).unwrap();
    println!(
        "final: iters={} residual={:.3e} gap={:.3e} converged={}",
        report.iterations, report.residual, report.feasibility_gap, report.converged
    );
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(String::as_str).unwrap_or("2d");
    let iters: usize = args
        .get(2)
        .and_then(|a| a.parse().ok())
        .unwrap_or(20_000);
    let cfg = SolverConfig {
        lambda: 100.0,
        nu: 0.01,
        ..Default::default()
    };
    match which {
        "1d" => trace("1D n=5000 N=250", &step_cloud_1d(5000, 7), &[250], &cfg, iters),
        _ => trace("2D n=1000 N=26", &circle_cloud_2d(1000, 7), &[26, 26], &cfg, iters),
    }
}
