// Scratch driver for acceptance-protocol tuning. Not part of the library.
use std::time::Instant;

use fdr_core::grid::{bin_points, make_grid, BinningOptions, DensityMode, PointCloud};
use fdr_core::inference::{subsample_bands_with, SubsamplingConfig};
use fdr_core::segmentation::{extract_jump_set, threshold_level_set, FdrEstimate};
use fdr_core::simulate::{run_monte_carlo, GridRule, McProtocol, Scenario, ThetaRule, Truth};
use fdr_core::solver::{solve, solve_warm, SolverConfig};
use fdr_core::sure::{sure_value, SigmaSpec, SureConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn step_cloud(n: usize, a: f64, alpha: f64, x0: f64, sigma: f64, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).unwrap();
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = rng.random();
        let mut y = a + if x >= x0 { alpha } else { 0.0 };
        if sigma > 0.0 {
            y += normal.sample(&mut rng);
        }
        xs.push(x);
        ys.push(y);
    }
    PointCloud::new(xs, ys, 1).unwrap()
}

fn ac4(s_levels: usize, lambda: f64, max_iter: usize) {
    let n = 4000;
    let (a, alpha, x0) = (1.0, 0.8, 0.483);
    let cloud = step_cloud(n, a, alpha, x0, 0.0, 11);
    let mut grid = make_grid(&cloud, &[50], s_levels, 0.0).unwrap();
    let (ylo, yhi) = grid.value_range;
    let s = s_levels as f64;
    let span = (yhi - ylo) * s / (s - 2.0);
    grid.value_range = (ylo - span / s, ylo - span / s + span);
    let binned = bin_points(&cloud, &grid, &BinningOptions::default()).unwrap();
    let cfg = SolverConfig {
        lambda,
        nu: 1e-3,
        tol: 5e-4,
        max_iter,
        ..SolverConfig::default()
    };
    let t = Instant::now();
    let rep = solve(&binned, &grid, &cfg).unwrap();
    let u = threshold_level_set(&rep.v_star, &grid).unwrap();
    let (mask, size, _) = extract_jump_set(&u, &grid, cfg.nu).unwrap();
    let best = (0..u.len() - 1)
        .filter(|&c| mask[c])
        .max_by(|&x, &y| size[x].abs().total_cmp(&size[y].abs()))
        .unwrap();
    let mut run_lo = best;
    while run_lo > 0 && mask[run_lo - 1] {
        run_lo -= 1;
    }
    let mut run_hi = best;
    while run_hi + 1 < u.len() && mask[run_hi + 1] {
        run_hi += 1;
    }
    let total = u[run_hi + 1] - u[run_lo];
    // oracle: best split over cell boundaries, means each side
    let mut best_split = (0usize, f64::INFINITY, 0.0f64);
    let (lo, hi) = grid.domain_box[0];
    let h = (hi - lo) / 50.0;
    for cutcell in 1..50 {
        let cut = lo + h * cutcell as f64;
        let (mut sl, mut nl, mut sr, mut nr) = (0.0, 0usize, 0.0, 0usize);
        for i in 0..cloud.len() {
            if cloud.x(i)[0] < cut {
                sl += cloud.y(i);
                nl += 1;
            } else {
                sr += cloud.y(i);
                nr += 1;
            }
        }
        if nl == 0 || nr == 0 {
            continue;
        }
        let (ml, mr) = (sl / nl as f64, sr / nr as f64);
        let mut sse = 0.0;
        for i in 0..cloud.len() {
            let m = if cloud.x(i)[0] < cut { ml } else { mr };
            sse += (cloud.y(i) - m).powi(2);
        }
        if sse < best_split.1 {
            best_split = (cutcell, sse, mr - ml);
        }
    }
    println!(
        "ac4: {:?} iters {} conv {} | fdr cell {} face {:.6} total {:.6} | oracle boundary {} size {:.6} | rel err {:.4}  masked {}",
        t.elapsed(),
        rep.iterations,
        rep.converged,
        best,
        size[best],
        total,
        best_split.0,
        best_split.2,
        (total - best_split.2).abs() / best_split.2.abs(),
        mask.iter().filter(|&&m| m).count(),
    );
}

fn ac6(nu: f64, n: usize, sigma: f64) {
    let (a, alpha, x0) = (1.0, 0.3, 0.483);
    let reps = 50;
    for lambda in [10.0, 100.0, 1000.0] {
        let mut abias = Vec::new();
        let mut polar_frac = 0.0;
        let t = Instant::now();
        for r in 0..reps {
            let cloud = step_cloud(n, a, alpha, x0, sigma, 1000 + r);
            let grid = make_grid(&cloud, &[50], 32, 0.0).unwrap();
            let binned = bin_points(&cloud, &grid, &BinningOptions::default()).unwrap();
            let cfg = SolverConfig {
                lambda,
                nu,
                tol: 5e-4,
                max_iter: 2000,
                ..SolverConfig::default()
            };
            let rep = solve(&binned, &grid, &cfg).unwrap();
            let est = FdrEstimate::from_solution(&rep.v_star, &grid, cfg.nu).unwrap();
            let (lo, hi) = grid.domain_box[0];
            let h = (hi - lo) / 50.0;
            let c0 = ((x0 - lo) / h) as usize;
            let mut got = 0.0f64;
            let mut best = None;
            for c in c0.saturating_sub(2)..(c0 + 3).min(50) {
                if est.jump_mask[c] && est.jump_size[c].abs() > got.abs() {
                    got = est.jump_size[c];
                    best = Some(c);
                }
            }
            let est_size = match best {
                None => 0.0,
                Some(b) => {
                    let mut lo_c = b;
                    while lo_c > 0 && est.jump_mask[lo_c - 1] {
                        lo_c -= 1;
                    }
                    let mut hi_c = b;
                    while hi_c + 1 < 50 && est.jump_mask[hi_c + 1] {
                        hi_c += 1;
                    }
                    est.u_hat[hi_c + 1] - est.u_hat[lo_c]
                }
            };
            abias.push((est_size - alpha).abs());
            let near: usize = rep
                .v_star
                .data
                .iter()
                .filter(|&&v| v < 0.05 || v > 0.95)
                .count();
            polar_frac += near as f64 / rep.v_star.data.len() as f64;
        }
        abias.sort_by(f64::total_cmp);
        println!(
            "ac6 lambda {lambda}: median|bias| {:.5}  polar {:.4}  ({:?})",
            abias[reps as usize / 2],
            polar_frac / reps as f64,
            t.elapsed()
        );
    }
}

fn ac7(tol: f64, max_iter: usize) {
    let sc = Scenario {
        truth: Truth::Circle2D,
        cohens_d: 0.75,
        sigma: 0.05,
        n: 1500,
        seed: 4242,
    };
    let cloud = sc.generate().unwrap();
    let grid = make_grid(&cloud, &[18, 18], 16, 0.0).unwrap();
    let truth = sc.truth_on(&grid).unwrap();
    let binning = BinningOptions::default();
    let solver = SolverConfig {
        tol,
        max_iter,
        ..SolverConfig::default()
    };
    let sure_cfg = SureConfig {
        sigma: SigmaSpec::RawObservation(0.05),
        seed: 99,
        ..SureConfig::default()
    };
    let lambdas: Vec<f64> = (0..5).map(|i| 0.2 * 10.0f64.powi(i)).collect();
    let nus: Vec<f64> = (0..5).map(|i| 2e-4 * 6.0f64.powi(i)).collect();
    let t = Instant::now();
    let mut pairs = Vec::new();
    for &l in &lambdas {
        for &v in &nus {
            let cfg = SolverConfig {
                lambda: l,
                nu: v,
                ..solver.clone()
            };
            let binned = bin_points(&cloud, &grid, &binning).unwrap();
            let rep = solve(&binned, &grid, &cfg).unwrap();
            let u = threshold_level_set(&rep.v_star, &grid).unwrap();
            let mse: f64 = u
                .iter()
                .zip(&truth.surface)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / u.len() as f64;
            let eta = sure_value(&cloud, &grid, &binning, (l, v), &sure_cfg, &solver).unwrap();
            println!(
                "ac7 l={l:<7.1} nu={v:<9.5} mse={mse:.6} eta={eta:.6} conv={} iters={} res={:.5}",
                rep.converged, rep.iterations, rep.residual
            );
            pairs.push((eta, mse));
        }
    }
    let rho = spearman(&pairs);
    println!("ac7 spearman {rho:.4}  ({:?})", t.elapsed());
}

fn spearman(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len();
    let rank = |vals: Vec<f64>| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        let mut r = vec![0.0; n];
        for (pos, &i) in idx.iter().enumerate() {
            r[i] = pos as f64;
        }
        r
    };
    let ra = rank(pairs.iter().map(|p| p.0).collect());
    let rb = rank(pairs.iter().map(|p| p.1).collect());
    let ma = ra.iter().sum::<f64>() / n as f64;
    let mb = rb.iter().sum::<f64>() / n as f64;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for i in 0..n {
        num += (ra[i] - ma) * (rb[i] - mb);
        da += (ra[i] - ma).powi(2);
        db += (rb[i] - mb).powi(2);
    }
    num / (da * db).sqrt()
}

fn ac8c(sizes: Vec<usize>, sub_iter: usize, j_reps: usize) {
    for r in 0..std::env::var("AC8C_SEEDS").ok().and_then(|v| v.parse().ok()).unwrap_or(1u64) {
        ac8c_one(&sizes, sub_iter, j_reps, r);
    }
}

fn ac8c_one(sizes: &[usize], sub_iter: usize, j_reps: usize, r: u64) {
    let sc = Scenario {
        truth: Truth::Steps1D,
        cohens_d: 1.0,
        sigma: 0.05,
        n: 5000,
        seed: 77 + r,
    };
    let cloud = sc.generate().unwrap();
    let grid = make_grid(&cloud, &[250], 32, 0.0).unwrap();
    let binning = BinningOptions::default();
    let full_cfg = SolverConfig {
        lambda: 98.6712,
        nu: 1e-4,
        tol: 5e-4,
        max_iter: 3000,
        ..SolverConfig::default()
    };
    let t = Instant::now();
    let binned = bin_points(&cloud, &grid, &binning).unwrap();
    let full = solve(&binned, &grid, &full_cfg).unwrap();
    let u_full = threshold_level_set(&full.v_star, &grid).unwrap();
    println!(
        "ac8c full: iters {} conv {} ({:?})",
        full.iterations,
        full.converged,
        t.elapsed()
    );
    let n = cloud.len();
    let v_full = full.v_star.clone();
    let estimate = |sub: &PointCloud| {
        if sub.len() == n {
            return Ok(u_full.clone());
        }
        let budget = if sub_iter > 0 {
            sub_iter
        } else if sub.len() <= 750 {
            1600
        } else if sub.len() <= 1400 {
            1000
        } else if sub.len() <= 2000 {
            700
        } else {
            450
        };
        let sub_cfg_solver = SolverConfig {
            tol: 5e-4,
            max_iter: budget,
            ..full_cfg.clone()
        };
        let b = bin_points(sub, &grid, &binning)?;
        let rep = solve_warm(&b, &grid, &sub_cfg_solver, Some(&v_full))?;
        threshold_level_set(&rep.v_star, &grid)
    };
    let cfg = SubsamplingConfig {
        j_reps,
        block_sizes: sizes.to_vec(),
        alpha: 0.05,
        seed: 5 + r,
        ..SubsamplingConfig::default()
    };
    let t = Instant::now();
    let bands = subsample_bands_with(&cloud, &grid, &cfg, estimate).unwrap();
    println!(
        "ac8c sizes {:?}: beta {:.4} z {:.4} beta_d {:.4} z_d {:.4} width {:.4} dwidth {:.4} ({:?})",
        sizes,
        bands.beta_hat,
        bands.z_alpha,
        bands.beta_hat_diff,
        bands.z_alpha_diff,
        bands.upper[10] - bands.u_hat[10],
        bands.diff_upper[0][10] - (bands.u_hat[11] - bands.u_hat[10]),
        t.elapsed()
    );
    let (lo, hi) = grid.domain_box[0];
    let h = (hi - lo) / 250.0;
    for (loc, d) in [(0.2, 1.0), (0.4, 1.0), (0.6, 1.0), (0.8, -1.0)] {
        let mut found = false;
        let mut diag = String::new();
        for c in 0..249 {
            let face = lo + h * (c + 1) as f64;
            if (face - loc).abs() <= 1.5 * h {
                let du = bands.u_hat[c + 1] - bands.u_hat[c];
                let sig = bands.significant_jump_mask[c];
                diag.push_str(&format!(
                    " [c{} du {:.4} lo {:.4} hi {:.4} sig {}]",
                    c,
                    du,
                    bands.diff_lower[0][c],
                    bands.diff_upper[0][c],
                    sig
                ));
                if sig && (bands.u_hat[c + 1] - bands.u_hat[c]) * d > 0.0 {
                    found = true;
                }
            }
        }
        println!("ac8c r={r} jump at {loc}: found {found} {diag}");
    }
}

fn ac5(d: f64, ns: Vec<usize>, reps: usize) {
    let (lambda, nu) = match d {
        x if x == 0.25 => (65.6470, 0.0010),
        x if x == 0.50 => (107.6274, 0.0019),
        _ => (209.4585, 0.0020),
    };
    let scenarios: Vec<Scenario> = ns
        .iter()
        .enumerate()
        .map(|(i, &n)| Scenario {
            truth: Truth::Circle2D,
            cohens_d: d,
            sigma: 0.05,
            n,
            seed: 9000 + 37 * i as u64,
        })
        .collect();
    let protocol = McProtocol {
        scenarios,
        reps,
        grid_rule: GridRule::CellFraction(2.0 / 3.0),
        s_levels: 32,
        padding: 0.0,
        binning: BinningOptions::default(),
        solver: SolverConfig {
            tol: 5e-4,
            max_iter: 2000,
            ..SolverConfig::default()
        },
        theta: ThetaRule::Fixed { lambda, nu },
    };
    let t = Instant::now();
    let rows = run_monte_carlo(&protocol).unwrap();
    for r in rows {
        println!(
            "ac5 d={d} n={:<6} mse {:.5} fnr {:.4} fpr {:.4} bias {:+.4} ahat {:.4} conv {:.2} ({:?})",
            r.n,
            r.metrics.mse_u,
            r.metrics.fnr,
            r.metrics.fpr,
            r.metrics.bias_tau,
            r.alpha_hat,
            r.converged_fraction,
            t.elapsed()
        );
    }
}

fn subconv() {
    let sc = Scenario {
        truth: Truth::Steps1D,
        cohens_d: 1.0,
        sigma: 0.05,
        n: 5000,
        seed: 77,
    };
    let cloud = sc.generate().unwrap();
    let grid = make_grid(&cloud, &[250], 32, 0.0).unwrap();
    let binning = BinningOptions::default();
    let full_cfg = SolverConfig {
        lambda: 98.6712,
        nu: 1e-4,
        tol: 5e-4,
        max_iter: 3000,
        ..SolverConfig::default()
    };
    let binned = bin_points(&cloud, &grid, &binning).unwrap();
    let full = solve(&binned, &grid, &full_cfg).unwrap();
    let u_full = threshold_level_set(&full.v_star, &grid).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(321);
    for b in [625usize, 2500] {
        let idx = rand::seq::index::sample(&mut rng, cloud.len(), b).into_vec();
        let sub = cloud.subset(&idx).unwrap();
        let sb = bin_points(&sub, &grid, &binning).unwrap();
        let reference = {
            let cfg = SolverConfig { tol: 1e-6, max_iter: 8000, ..full_cfg.clone() };
            let rep = solve_warm(&sb, &grid, &cfg, Some(&full.v_star)).unwrap();
            threshold_level_set(&rep.v_star, &grid).unwrap()
        };
        let zref: f64 = reference.iter().zip(&u_full).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
        for budget in [200usize, 400, 800, 1600, 3200] {
            let cfg = SolverConfig { tol: 1e-6, max_iter: budget, ..full_cfg.clone() };
            let t = Instant::now();
            let rep = solve_warm(&sb, &grid, &cfg, Some(&full.v_star)).unwrap();
            let u = threshold_level_set(&rep.v_star, &grid).unwrap();
            let dev: f64 = u.iter().zip(&reference).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
            let z: f64 = u.iter().zip(&u_full).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
            println!("subconv b={b} budget={budget}: sup|u-uref| {dev:.4} Z {z:.4} Zref {zref:.4} ({:?})", t.elapsed());
        }
    }
}

fn probe5(d: f64, n: usize, budgets: &[usize]) {
    let (lambda, nu) = match d {
        x if x == 0.25 => (65.6470, 0.0010),
        x if x == 0.50 => (107.6274, 0.0019),
        _ => (209.4585, 0.0020),
    };
    let sc = Scenario {
        truth: Truth::Circle2D,
        cohens_d: d,
        sigma: 0.05,
        n,
        seed: 9000,
    };
    let cloud = sc.generate().unwrap();
    let per_axis = GridRule::CellFraction(2.0 / 3.0).n_cells(n, 2).unwrap();
    let grid = make_grid(&cloud, &per_axis, 32, 0.0).unwrap();
    let truth = sc.truth_on(&grid).unwrap();
    let opts = BinningOptions {
        density: DensityMode::Uniform,
        ..Default::default()
    };
    let binned = bin_points(&cloud, &grid, &opts).unwrap();
    for &mi in budgets {
        let cfg = SolverConfig {
            lambda,
            nu,
            tol: 5e-4,
            max_iter: mi,
            ..SolverConfig::default()
        };
        let t = Instant::now();
        let rep = solve(&binned, &grid, &cfg).unwrap();
        let est = FdrEstimate::from_solution(&rep.v_star, &grid, nu).unwrap();
        let m = truth.surface.len();
        let mse: f64 = est.u_hat.iter().zip(&truth.surface).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / m as f64;
        let mut fp = 0usize;
        let mut nonjump = 0usize;
        let mut fnr_miss = 0usize;
        let mut jumps = 0usize;
        for c in 0..m {
            if truth.jump_mask[c] {
                jumps += 1;
                if !est.jump_mask[c] {
                    fnr_miss += 1;
                }
            } else {
                nonjump += 1;
                if est.jump_mask[c] {
                    fp += 1;
                }
            }
        }
        println!(
            "probe5 d={d} n={n} cells {:?} max_iter {mi}: iters {} conv {} res {:.2e} mse {mse:.5} fpr {:.4} fnr {:.4} ({:?})",
            per_axis, rep.iterations, rep.converged, rep.residual,
            fp as f64 / nonjump as f64, fnr_miss as f64 / jumps as f64,
            t.elapsed()
        );
    }
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match args[0].as_str() {
        "subconv" => subconv(),
        "probe5" => {
            let d = args.get(1).map_or(0.25, |v| v.parse().unwrap());
            let n = args.get(2).map_or(10000, |v| v.parse().unwrap());
            let budgets: Vec<usize> = args
                .get(3)
                .map_or("800,1500,3000".to_string(), |v| v.clone())
                .split(',')
                .map(|v| v.parse().unwrap())
                .collect();
            probe5(d, n, &budgets)
        }
        "ac4" => {
            let s = args.get(1).map_or(64, |v| v.parse().unwrap());
            let l = args.get(2).map_or(300.0, |v| v.parse().unwrap());
            let it = args.get(3).map_or(4000, |v| v.parse().unwrap());
            ac4(s, l, it)
        }
        "ac6" => {
            let nu = args.get(1).map_or(2e-3, |v| v.parse().unwrap());
            let n = args.get(2).map_or(2000, |v| v.parse().unwrap());
            let sigma = args.get(3).map_or(0.05, |v| v.parse().unwrap());
            ac6(nu, n, sigma)
        }
        "ac7" => {
            let tol = args.get(1).map_or(4e-3, |v| v.parse().unwrap());
            let it = args.get(2).map_or(4000, |v| v.parse().unwrap());
            ac7(tol, it)
        }
        "ac8c" => {
            let sizes = args[1].split(',').map(|s| s.parse().unwrap()).collect();
            let sub_iter = args.get(2).map_or(500, |s| s.parse().unwrap());
            let j = args.get(3).map_or(100, |s| s.parse().unwrap());
            ac8c(sizes, sub_iter, j)
        }
        "ac5" => {
            let d: f64 = args[1].parse().unwrap();
            let ns = args[2].split(',').map(|s| s.parse().unwrap()).collect();
            let reps = args.get(3).map_or(2, |s| s.parse().unwrap());
            ac5(d, ns, reps)
        }
        other => panic!("unknown mode {other}"),
    }
}
