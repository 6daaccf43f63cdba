use fdr_core::grid::{bin_points, make_grid, BinningOptions, DensityMode, PointCloud};
use fdr_core::solver::{solve, SolverConfig};
use std::time::Instant;

fn main() {
    // 2D scale typical of the Monte Carlo table: N=56 per axis, S=32
    for (n, nx) in [(1000usize, 26usize), (5000, 44), (10000, 56)] {
        let mut coords = Vec::new();
        let mut ys = Vec::new();
        let mut state = 12345u64;
        let mut unif = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..n {
            let x1 = unif();
            let x2 = unif();
            coords.extend_from_slice(&[x1, x2]);
            let inside = ((x1 - 0.5).powi(2) + (x2 - 0.5).powi(2)).sqrt() < 0.3;
            ys.push(0.5 * (x1 + x2) + if inside { 0.1126 } else { 0.0 } + 0.05 * (unif() - 0.5));
        }
        let cloud = PointCloud::new(coords, ys, 2).unwrap();
        let grid = make_grid(&cloud, &[nx, nx], 32, 0.05).unwrap();
        let opts = BinningOptions { density: DensityMode::Uniform, ..Default::default() };
        let binned = bin_points(&cloud, &grid, &opts).unwrap();
        let cfg = SolverConfig { lambda: 100.0, nu: 2e-3, max_iter: 2000, ..Default::default() };
        let t0 = Instant::now();
        let rep = solve(&binned, &grid, &cfg).unwrap();
        let dt = t0.elapsed().as_secs_f64();
        println!(
            "2D n={n} N={nx}: {} iters in {:.2}s ({:.1} ms/iter), converged={}, res={:.2e}, gap={:.2e}",
            rep.iterations, dt, 1000.0 * dt / rep.iterations as f64, rep.converged, rep.residual, rep.feasibility_gap
        );
    }

    // 1D protocol scale: N=250, S=32
    {
        let n = 5000usize;
        let mut coords = Vec::new();
        let mut ys = Vec::new();
        let mut state = 999u64;
        let mut unif = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..n {
            let x = unif();
            let mut y = 0.6443 * (2.0 * std::f64::consts::PI * x).sin();
            for (loc, size) in [(0.2, 0.1286), (0.4, 0.2133), (0.6, 0.3192), (0.8, -0.4220)] {
                if x >= loc { y += size; }
            }
            y += 0.05 * (unif() - 0.5) * 3.46;
            coords.push(x);
            ys.push(y);
        }
        let cloud = PointCloud::new(coords, ys, 1).unwrap();
        let grid = make_grid(&cloud, &[250], 32, 0.05).unwrap();
        let opts = BinningOptions { density: DensityMode::Uniform, ..Default::default() };
        let binned = bin_points(&cloud, &grid, &opts).unwrap();
        let cfg = SolverConfig { lambda: 98.6712, nu: 1e-4, max_iter: 4000, ..Default::default() };
        let t0 = Instant::now();
        let rep = solve(&binned, &grid, &cfg).unwrap();
        let dt = t0.elapsed().as_secs_f64();
        println!(
            "1D n={n} N=250: {} iters in {:.2}s ({:.1} ms/iter), converged={}, res={:.2e}",
            rep.iterations, dt, 1000.0 * dt / rep.iterations as f64, rep.converged, rep.residual
        );
    }
}
