//! Acceptance checks. Each criterion prints one PASS/FAIL line with its
//! measurement and wall time; the process fails if any criterion fails.
//!
//! Run with `cargo test --test acceptance`.

use std::fs;
use std::process::Command;
use std::time::{Duration, Instant};

use cogia::alignment::{align, effective_channels, interference_report};
use cogia::dof::{
    closed_form_feasible, constructive_check, enumerate_region, ClosedForm, Constructive,
    DEFAULT_GRID_CAP,
};
use cogia::numerics::{
    min_norm_right_solve, null_space_basis, svd_factor, Matrix, TolerancePolicy, Vector,
};
use cogia::rates::{
    cell_sum_rate, primary_users, rate_region_sweep, secondary_users, Bisection, CellUser,
    StreamLevel, SweepPlan, WaterLevelSolver,
};
use cogia::scenario::{
    gaussian_matrix, generate_channels, NetworkDims, NoiseAndPower, Seed, StreamAlloc,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

type Check = fn() -> Outcome;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn pol() -> TolerancePolicy {
    TolerancePolicy::default()
}

fn all_dims(max: usize) -> impl Iterator<Item = NetworkDims> {
    (1..=max).flat_map(move |a| {
        (1..=max).flat_map(move |b| {
            (1..=max).flat_map(move |c| (1..=max).map(move |d| NetworkDims::new(a, b, c, d)))
        })
    })
}

fn cancellation() -> Outcome {
    let dims = NetworkDims::new(5, 5, 5, 3);
    let d = StreamAlloc::new(1, 0, 2, 2);
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let ch = generate_channels(dims, Seed(seed));
        let prs = align(&ch, &d, Seed(seed), &pol()).expect("generic draw aligns");
        worst = worst.max(interference_report(&ch, &prs, &pol()).worst_case);
    }
    outcome(
        worst <= 1e-9,
        format!("worst relative residual {worst:.3e} over 100 seeds (limit 1e-9)"),
    )
}

fn bound_sharpness() -> Outcome {
    let mut checked = 0;
    let mut failures = Vec::new();
    for dims in all_dims(6) {
        let k = dims.m_s.saturating_sub(dims.n_s);
        for j in 0..2 {
            let tuple = |s: usize| {
                let mut a = [0; 4];
                a[2 + j] = s;
                StreamAlloc::from_array(a)
            };
            let at = tuple(k);
            if k > 0 && closed_form_feasible(&dims, &at).feasible {
                checked += 1;
                let v = constructive_check(&dims, &at, 20, Seed(1), &pol()).unwrap();
                if !v.feasible {
                    failures.push(format!("{dims} {at} should hold"));
                }
            }
            let above = tuple(k + 1);
            checked += 1;
            let v = constructive_check(&dims, &above, 20, Seed(1), &pol()).unwrap();
            if v.feasible {
                failures.push(format!("{dims} {above} should fail"));
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "{checked} boundary tuples, {} mismatches {:?}",
            failures.len(),
            &failures[..failures.len().min(5)]
        ),
    )
}

fn oracle_agreement() -> Outcome {
    let oracle = Constructive {
        trials: 20,
        seed: Seed(2),
        pol: pol(),
    };
    let (mut tuples, mut mismatches) = (0, Vec::new());
    for dims in all_dims(5) {
        let closed = enumerate_region(&dims, &ClosedForm, DEFAULT_GRID_CAP).unwrap();
        let built = enumerate_region(&dims, &oracle, DEFAULT_GRID_CAP).unwrap();
        tuples += closed.grid.len();
        for ((d, a), (_, b)) in closed.grid.iter().zip(&built.grid) {
            if a != b {
                mismatches.push(format!("{dims} {d}: closed {a} constructive {b}"));
            }
        }
    }
    outcome(
        mismatches.is_empty(),
        format!(
            "{tuples} tuples over 625 quartets, {} disagreements {:?}",
            mismatches.len(),
            &mismatches[..mismatches.len().min(5)]
        ),
    )
}

/// `1/2 sum log2 det(I + A Q A^T / sigma2)` with determinants from LU.
fn direct_rate(users: &[CellUser], covs: &[Matrix]) -> f64 {
    users
        .iter()
        .zip(covs)
        .map(|(u, q)| {
            let n = u.effective.nrows();
            if u.effective.ncols() == 0 {
                return 0.0;
            }
            let m = Matrix::identity(n, n) + &u.effective * q * u.effective.transpose() / u.sigma2;
            0.5 * m.determinant().log2()
        })
        .sum()
}

/// Best rate over random diagonal allocations (in each user's eigenbasis)
/// that spend exactly the trace budget.
fn search_best(users: &[CellUser], budget: f64, points: usize, rng: &mut ChaCha20Rng) -> f64 {
    let users: Vec<CellUser> = users
        .iter()
        .filter(|u| u.effective.ncols() > 0)
        .cloned()
        .collect();
    let bases: Vec<(Matrix, Vec<f64>)> = users
        .iter()
        .map(|u| {
            let svd = u.effective.clone().svd(false, true);
            let psi = svd.v_t.unwrap().transpose();
            let cost = (0..psi.ncols())
                .map(|l| (&u.precoder * psi.column(l)).norm_squared())
                .collect();
            (psi, cost)
        })
        .collect();
    let streams: usize = bases.iter().map(|(_, c)| c.len()).sum();
    let mut best = f64::NEG_INFINITY;
    for p in 0..points {
        let mut w: Vec<f64> = if p < streams {
            (0..streams).map(|l| f64::from(u8::from(l == p))).collect()
        } else {
            (0..streams)
                .map(|_| -rng.random::<f64>().max(1e-300).ln())
                .collect()
        };
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x *= budget / total);
        let mut offset = 0;
        let covs: Vec<Matrix> = bases
            .iter()
            .map(|(psi, cost)| {
                let q = Vector::from_iterator(
                    cost.len(),
                    (0..cost.len()).map(|l| w[offset + l] / cost[l]),
                );
                offset += cost.len();
                psi * Matrix::from_diagonal(&q) * psi.transpose()
            })
            .collect();
        best = best.max(direct_rate(&users, &covs));
    }
    best
}

fn waterfill_optimality() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let dims = NetworkDims::new(5, 5, 5, 3);
    let (mut worst_gap, mut worst_kkt) = (f64::NEG_INFINITY, 0.0f64);
    for i in 0..50u64 {
        let d = if i % 2 == 0 {
            StreamAlloc::new(1, 0, 2, 2)
        } else {
            StreamAlloc::new(2, 2, 1, 0)
        };
        let ch = generate_channels(dims, Seed(100 + i));
        let prs = align(&ch, &d, Seed(100 + i), &pol()).unwrap();
        let eff = effective_channels(&ch, &prs);
        let qav = [0.1, 1.0, 10.0, 100.0][(i % 4) as usize];
        let np = NoiseAndPower {
            sigma2_p1: 1.0 + 0.1 * i as f64,
            sigma2_s2: 0.5,
            ..NoiseAndPower::default()
        }
        .with_budget(qav);
        let users: Vec<CellUser> = if i % 3 == 0 {
            secondary_users(&prs, &eff, &np).into_iter().collect()
        } else {
            primary_users(&prs, &eff, &np).into_iter().collect()
        };
        let cell = cell_sum_rate(&users, qav, &Bisection, &pol()).unwrap();
        let covs: Vec<Matrix> = cell
            .allocation
            .users
            .iter()
            .map(|a| a.covariance.clone())
            .collect();
        let rate = direct_rate(&users, &covs);
        let best = search_best(&users, 2.0 * qav, 1000, &mut rng);
        worst_gap = worst_gap.max(best - rate);
        let k = cell.kkt;
        worst_kkt = worst_kkt
            .max(k.active_gap)
            .max(k.inactive_excess)
            .max(k.budget_gap);
    }

    let levels = [
        StreamLevel {
            floor: 0.5,
            cost: 1.0,
        },
        StreamLevel {
            floor: 2.0,
            cost: 1.0,
        },
    ];
    let lambda = Bisection.solve(&levels, 1.0);
    let powers: Vec<f64> = levels.iter().map(|s| (lambda - s.floor).max(0.0)).collect();
    let hand =
        (lambda - 1.5).abs() <= 1e-10 && (powers[0] - 1.0).abs() <= 1e-10 && powers[1] == 0.0;

    outcome(
        worst_gap <= 1e-6 && worst_kkt <= 1e-8 && hand,
        format!(
            "search beats waterfill by at most {worst_gap:.2e} bits (limit 1e-6), worst KKT residual {worst_kkt:.2e} (limit 1e-8), hand case lambda = {lambda}"
        ),
    )
}

fn rate_region() -> Outcome {
    let dims = NetworkDims::new(5, 5, 5, 3);
    let balanced = StreamAlloc::new(1, 1, 1, 1);
    let p_heavy = StreamAlloc::new(2, 2, 1, 0);
    let s_heavy = StreamAlloc::new(1, 0, 2, 2);
    let splits = [p_heavy, balanced, s_heavy];
    let budgets = [1.0, 10.0, 100.0];
    let plan = SweepPlan {
        dims,
        splits: &splits,
        budgets: &budgets,
        noise: NoiseAndPower::default(),
        trials: 500,
        seed: Seed(1),
    };
    let pts = rate_region_sweep(&plan, &Bisection, &pol()).unwrap();
    let at = |b: usize, s: usize| &pts[b * splits.len() + s];

    let mut worst_z = 0.0f64;
    for b in 0..budgets.len() {
        let p = at(b, 1);
        let z = (p.r_p - p.r_s).abs() / (p.r_p_stderr.powi(2) + p.r_s_stderr.powi(2)).sqrt();
        worst_z = worst_z.max(z);
    }
    let symmetric = worst_z <= 3.0;
    let ordered = (0..budgets.len()).all(|b| at(b, 0).r_p > at(b, 2).r_p);
    let monotone = (1..budgets.len()).all(|b| {
        (0..splits.len())
            .all(|s| at(b, s).r_p > at(b - 1, s).r_p && at(b, s).r_s > at(b - 1, s).r_s)
    });
    let summary: Vec<String> = (0..budgets.len())
        .map(|b| {
            let p = at(b, 1);
            format!(
                "Qav {}: R_P {:.3}±{:.3} R_S {:.3}±{:.3}",
                p.qav, p.r_p, p.r_p_stderr, p.r_s, p.r_s_stderr
            )
        })
        .collect();
    outcome(
        symmetric && ordered && monotone,
        format!(
            "symmetry {} (worst |R_P-R_S| = {worst_z:.1} combined stderr, limit 3; {}), pCell-heavy R_P above SU-heavy {}, monotone in budget {}",
            if symmetric { "ok" } else { "FAILED" },
            summary.join("; "),
            if ordered { "ok" } else { "FAILED" },
            if monotone { "ok" } else { "FAILED" },
        ),
    )
}

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_cogia"))
        .args(args)
        .arg("--quiet")
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

fn determinism() -> Outcome {
    let dir = tempfile::TempDir::new().unwrap();
    let cfg = dir.path().join("scenario.json");
    fs::write(
        &cfg,
        r#"{"dims":{"M_P":5,"M_S":5,"N_P":5,"N_S":3},"alloc":{"d_P1":1,"d_P2":0,"d_S1":2,"d_S2":2},
            "seed":9,"trials":4,"sweep":{"splits":[[2,2,1,0],[1,0,2,2]],"budgets":[1,10]}}"#,
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();
    let mut ran = true;
    for out in ["a", "b"] {
        let out = dir.path().join(out);
        let out = out.to_str().unwrap();
        ran &= run_cli(&["verify", "--config", cfg, "--out", out]);
        ran &= run_cli(&[
            "dof-region",
            "--config",
            cfg,
            "--out",
            out,
            "--constructive",
        ]);
        ran &= run_cli(&["rates", "--config", cfg, "--out", out]);
    }
    let csvs = [
        "verify.csv",
        "region.csv",
        "region_projection.csv",
        "region_constructive.csv",
        "region_diff.csv",
        "rates.csv",
    ];
    let read = |run: &str, f: &str| fs::read(dir.path().join(run).join(f)).ok();
    let differing: Vec<&str> = csvs
        .iter()
        .copied()
        .filter(|f| read("a", f).is_none() || read("a", f) != read("b", f))
        .collect();
    outcome(
        ran && differing.is_empty(),
        format!(
            "{} CSV files compared across reruns, differing or missing: {differing:?}",
            csvs.len()
        ),
    )
}

fn numerics_kernel() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let (mut null_res, mut svd_res, mut solve_res) = (0.0f64, 0.0f64, 0.0f64);
    let mut cases = 0;
    for rows in 1..=16 {
        for cols in 1..=16 {
            let seed = Seed(rng.random());
            let full = gaussian_matrix(rows, cols, seed, 0);
            let r = rng.random_range(1..=rows.min(cols));
            let low = gaussian_matrix(rows, r, seed, 1) * gaussian_matrix(r, cols, seed, 2);
            for a in [&full, &low] {
                cases += 1;
                let scale = a.norm();
                let n = null_space_basis(a, &pol());
                if n.ncols() > 0 {
                    null_res = null_res.max((a * &n).norm() / scale);
                }
                svd_res = svd_res.max((svd_factor(a).reconstruct() - a).norm() / scale);
            }
            if rows <= cols {
                let b = Vector::from_column_slice(gaussian_matrix(rows, 1, seed, 3).as_slice());
                let x = min_norm_right_solve(&full, &b, &pol()).unwrap();
                solve_res = solve_res.max((&full * x - &b).norm() / b.norm());
            }
        }
    }
    outcome(
        null_res <= 1e-10 && svd_res <= 1e-10 && solve_res <= 1e-10,
        format!(
            "{cases} matrices: null-space {null_res:.2e}, SVD reconstruction {svd_res:.2e}, min-norm solve {solve_res:.2e} (limit 1e-10)"
        ),
    )
}

fn main() {
    // Ignore libtest flags such as `--nocapture` passed through by cargo.
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let criteria: [(&str, Duration, Check); 7] = [
        (
            "1 cancellation invariant",
            Duration::from_secs(5),
            cancellation,
        ),
        (
            "2 secondary bound sharpness",
            Duration::from_secs(60),
            bound_sharpness,
        ),
        (
            "3 closed form vs constructive",
            Duration::from_secs(600),
            oracle_agreement,
        ),
        (
            "4 water-filling optimality",
            Duration::from_secs(30),
            waterfill_optimality,
        ),
        ("5 rate region shape", Duration::from_secs(120), rate_region),
        ("6 CLI determinism", Duration::MAX, determinism),
        ("7 numerics kernel", Duration::MAX, numerics_kernel),
    ];
    let mut failed = 0;
    for (name, limit, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= limit;
        let pass = o.pass && in_time;
        failed += usize::from(!pass);
        let budget = if limit == Duration::MAX {
            String::new()
        } else {
            format!(
                ", limit {}s{}",
                limit.as_secs(),
                if in_time { "" } else { " EXCEEDED" }
            )
        };
        println!(
            "{} criterion {name}: {} [{:.2}s{budget}]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
