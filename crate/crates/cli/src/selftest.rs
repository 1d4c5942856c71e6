//! Acceptance criteria with their oracles. Shared by `hscalc selftest` and the
//! `acceptance` test target.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, PI};

use halfspace_calculus::asymptotics::{default_mu_grid, fit_expansion, leading_exponent, log_presence_test, ExpansionModel};
use halfspace_calculus::green::{op_plus_matrix, order_reduction, tr_plus, twist, untwist, KernelValue, OpPlusOptions};
use halfspace_calculus::halfline::{dilation, theta, HalfLineBasis, HalfLineFunction};
use halfspace_calculus::linalg::{c, hermitian_eigen, op_norm, CMat, CVec, C64, I};
use halfspace_calculus::model::{
    assemble_report, boundary_symbol_solve, check_e1, check_pi2, limit_nullspace, EllipticityGrids, LaplaceTypeModel, ProjectionBC,
};
use halfspace_calculus::resolvent::{gauss_legendre, resolvent_norm_scan, trace_density, TraceDensityOptions};
use halfspace_calculus::symbol::{check_transmission, principal_limit_symbol, FullSymbol, ParamPoint, TransmissionDepth};
use halfspace_calculus::toeplitz::{gap_invertible, left_parametrix, random_triple, right_parametrix, toeplitz_invert};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct Criterion {
    pub id: u32,
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Criterion {
    fn new(id: u32, name: &str, pass: bool, detail: String) -> Self {
        Self { id, name: name.into(), pass, detail }
    }

    fn error(id: u32, name: &str, e: impl std::fmt::Display) -> Self {
        Self::new(id, name, false, format!("error: {e}"))
    }

    pub fn line(&self) -> String {
        format!("[{}] {:>2} {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.id, self.name, self.detail)
    }
}

type Check = fn(u64) -> Criterion;

pub const CRITERIA: [(u32, &str, Check); 10] = [
    (1, "boundary solve vs closed-form Green kernel", boundary_solve),
    (2, "Tr+ of Dirichlet/Neumann corrections", trace_signs),
    (3, "trace-density expansion", density_expansion),
    (4, "ray of minimal growth", minimal_growth),
    (5, "order reductions compose to the identity", order_reductions),
    (6, "Toeplitz descent", toeplitz_descent),
    (7, "ellipticity decision suite", ellipticity_suite),
    (8, "limit-symbol machinery", limit_symbols),
    (9, "group-action identities", group_action),
    (10, "transmission checker", transmission),
];

pub fn run_all(seed: u64) -> Vec<Criterion> {
    CRITERIA.iter().map(|(_, _, f)| f(seed)).collect()
}

fn sigma_of(xi: f64, mu: f64, theta: f64) -> C64 {
    // principal root, Re > 0 off the cut
    (c(xi * xi) - C64::from_polar(mu * mu, theta)).sqrt()
}

/// Composite Gauss-Legendre on `[0, panels * h]`.
fn integrate(f: impl Fn(f64) -> C64, h: f64, panels: usize) -> C64 {
    let (x, w) = gauss_legendre(24);
    let mut acc = c(0.0);
    for p in 0..panels {
        let a = p as f64 * h;
        for (xk, wk) in x.iter().zip(&w) {
            acc += f(a + 0.5 * h * (xk + 1.0)) * (0.5 * h * wk);
        }
    }
    acc
}

fn boundary_solve(_: u64) -> Criterion {
    const NAME: &str = "boundary solve vs closed-form Green kernel";
    let run = || -> Result<f64, String> {
        let model = LaplaceTypeModel::laplacian(2, 1, PI).map_err(|e| e.to_string())?;
        let basis = HalfLineBasis::new(128, 1.0).map_err(|e| e.to_string())?;
        let (beta, g) = (2.0, C64::new(0.5, -0.25));
        let f = HalfLineFunction::scalar_fn(&basis, |t| c((-beta * t).exp()));
        let mut worst: f64 = 0.0;
        for k in 0..20 {
            // punctured quarter circle: xi' != 0
            let a = FRAC_PI_2 * k as f64 / 20.0;
            let (xi, mu) = (a.cos(), a.sin());
            let pt = ParamPoint::at_origin(vec![xi], mu).map_err(|e| e.to_string())?;
            let sol = boundary_symbol_solve(&model, &ProjectionBC::dirichlet(1), &pt, &f, &CVec::from_element(1, g))
                .map_err(|e| e.to_string())?;
            let s = sigma_of(xi, mu, PI);
            // int G_s(t, s') e^{-beta s'} ds' with G_s = -(e^{-s|t-s'|} - e^{-s(t+s')}) / (2s), plus e^{-st} g
            let oracle = |t: f64| ((-beta * t).exp() - (-s * t).exp()) / (beta * beta - s * s) + (-s * t).exp() * g;
            for j in 0..=40 {
                let t = 0.25 * j as f64;
                worst = worst.max((sol.u.eval(t)[0] - oracle(t)).norm());
            }
        }
        Ok(worst)
    };
    match run() {
        Ok(e) => Criterion::new(1, NAME, e <= 1e-6, format!("max error {e:.2e} over 20 points x 41 t (tol 1e-6)")),
        Err(e) => Criterion::error(1, NAME, e),
    }
}

fn trace_signs(_: u64) -> Criterion {
    const NAME: &str = "Tr+ of Dirichlet/Neumann corrections";
    let run = || -> Result<f64, String> {
        let mut worst: f64 = 0.0;
        for theta_ in [PI, FRAC_PI_2, 1.5 * PI] {
            let model = LaplaceTypeModel::laplacian(2, 1, theta_).map_err(|e| e.to_string())?;
            for (xi, mu) in [(1.0, 0.0), (0.6, 0.8), (0.1, 2.0), (-3.0, 0.5)] {
                let pt = ParamPoint::at_origin(vec![xi], mu).map_err(|e| e.to_string())?;
                let s = sigma_of(xi, mu, theta_);
                let expected = c(0.25) / (s * s);
                for (bc, sign) in [(ProjectionBC::dirichlet(1), 1.0), (ProjectionBC::neumann(1), -1.0)] {
                    let g = halfspace_calculus::resolvent::green_correction_kernel(&model, &bc, &pt).map_err(|e| e.to_string())?;
                    let symbolic = tr_plus(&g).map_err(|e| e.to_string())?;
                    let quad = integrate(|t| g.eval(t, t)[(0, 0)], 0.5 / s.re, 80);
                    let target = expected * sign;
                    worst = worst.max((symbolic - target).norm() / target.norm()).max((quad - target).norm() / target.norm());
                }
            }
        }
        Ok(worst)
    };
    match run() {
        Ok(e) => Criterion::new(2, NAME, e <= 1e-8, format!("Dirichlet +1/(4 sigma^2), Neumann -1/(4 sigma^2): max rel error {e:.2e} (tol 1e-8)")),
        Err(e) => Criterion::error(2, NAME, e),
    }
}

fn density_expansion(_: u64) -> Criterion {
    const NAME: &str = "trace-density expansion";
    let run = || -> Result<(f64, C64, bool), String> {
        let m = LaplaceTypeModel::laplacian(2, 1, PI).map_err(|e| e.to_string())?;
        let s: Vec<(f64, C64)> = default_mu_grid()
            .into_iter()
            .map(|mu| trace_density(&m, &ProjectionBC::dirichlet(1), mu, TraceDensityOptions::default()).map(|t| (mu, t.value)))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let model = ExpansionModel::from_orders(-2.0, 1.0, 2, 3, 0, false).map_err(|e| e.to_string())?;
        let fit = fit_expansion(&s, &model).map_err(|e| e.to_string())?;
        let c0 = fit.coefficient(-1.0, false).ok_or("no mu^-1 term")?;
        let logs = log_presence_test(&s, &model, -1.0).map_err(|e| e.to_string())?;
        Ok((leading_exponent(&s), c0, logs.present))
    };
    match run() {
        Ok((p, c0, log)) => {
            // int 1/(4 (xi^2 + mu^2)) dxi / (2 pi) = 1/(8 mu)
            let ok = (p + 1.0).abs() <= 1e-3 && (c0 - c(0.125)).norm() <= 1e-4 && !log;
            Criterion::new(3, NAME, ok, format!("exponent {p:.6} (-1 +- 1e-3), coefficient {:.8} (1/8 +- 1e-4), log term {}", c0.re, if log { "present" } else { "absent" }))
        }
        Err(e) => Criterion::error(3, NAME, e),
    }
}

fn minimal_growth(_: u64) -> Criterion {
    const NAME: &str = "ray of minimal growth";
    let run = || -> Result<Vec<f64>, String> {
        let model = LaplaceTypeModel::laplacian(2, 1, PI).map_err(|e| e.to_string())?;
        let mus: Vec<f64> = (0..7).map(|k| 2f64.powi(k)).collect();
        let mut ratios = Vec::new();
        for bc in [ProjectionBC::dirichlet(1), ProjectionBC::neumann(1)] {
            let rows = resolvent_norm_scan(&model, &bc, &mus, 48, &[0.0, 0.25, 1.0, 4.0]).map_err(|e| e.to_string())?;
            let max = rows.iter().map(|r| r.scaled).fold(0.0, f64::max);
            let min = rows.iter().map(|r| r.scaled).fold(f64::INFINITY, f64::min);
            ratios.push(max / min);
        }
        Ok(ratios)
    };
    match run() {
        Ok(r) => Criterion::new(4, NAME, r.iter().all(|v| *v <= 2.0), format!("max/min of mu^2 ||R||, mu = 1, 2, 4, ..., 64: Dirichlet {:.4}, Neumann {:.4} (<= 2)", r[0], r[1])),
        Err(e) => Criterion::error(4, NAME, e),
    }
}

fn order_reductions(_: u64) -> Criterion {
    const NAME: &str = "order reductions compose to the identity";
    let run = || -> Result<f64, String> {
        let mut worst: f64 = 0.0;
        for k in 0..10 {
            let a = 0.1 + 1.4 * k as f64 / 9.0;
            let r = [0.3, 1.0, 3.0, 10.0][k % 4];
            let pt = ParamPoint::at_origin(vec![r * a.cos()], r * a.sin()).map_err(|e| e.to_string())?;
            // the symbols depend on xi_n / [xi', mu]; a matching Laguerre scale keeps the circle samples resolved
            let basis = HalfLineBasis::new(128, pt.bracket()).map_err(|e| e.to_string())?;
            let funcs: Vec<HalfLineFunction> = [0.5, 1.0, 2.0, 4.0]
                .iter()
                .flat_map(|&a| (0..5).map(move |j| (a, j)))
                .map(|(a, j)| HalfLineFunction::scalar_fn(&basis, move |t| c(t.powi(j) * (-a * t).exp())))
                .collect();
            let up = op_plus_matrix(&order_reduction(1, &pt), &basis, OpPlusOptions::default()).map_err(|e| e.to_string())?;
            let down = op_plus_matrix(&order_reduction(-1, &pt), &basis, OpPlusOptions::default()).map_err(|e| e.to_string())?;
            let prod = up * down;
            for f in &funcs {
                let back = f.map_coeffs(&prod);
                worst = worst.max((back.coeffs - &f.coeffs).norm() / f.coeffs.norm());
            }
        }
        Ok(worst)
    };
    match run() {
        Ok(e) => Criterion::new(5, NAME, e <= 1e-4, format!("max relative L2 error {e:.2e} over 20 functions x 10 points (tol 1e-4)")),
        Err(e) => Criterion::error(5, NAME, e),
    }
}

fn toeplitz_descent(seed: u64) -> Criterion {
    const NAME: &str = "Toeplitz descent";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst, mut invertible, mut mismatch): (f64, usize, f64) = (0.0, 0, 0.0);
    for _ in 0..500 {
        let n0 = rng.gen_range(2..=20);
        let n1 = rng.gen_range(2..=20);
        let r = rng.gen_range(1..=n0.min(n1));
        let t = random_triple(&mut rng, n0, n1, r, r);
        if gap_invertible(&t).0 {
            invertible += 1;
        }
        match (left_parametrix(&t), toeplitz_invert(&t), right_parametrix(&t)) {
            (Ok(bl), Ok(b), Ok(br)) => {
                worst = worst.max(op_norm(&(&bl * &t.a - &t.pi0))).max(op_norm(&(&t.a * &b - &t.pi1)));
                mismatch = mismatch.max(op_norm(&(bl - br)));
            }
            _ => worst = f64::INFINITY,
        }
    }
    let mut singular = 0;
    for _ in 0..100 {
        let n = rng.gen_range(3..=20);
        let r = rng.gen_range(2..=n);
        let t = random_triple(&mut rng, n, n, r, r - 1);
        if !gap_invertible(&t).0 && toeplitz_invert(&t).is_err() {
            singular += 1;
        }
    }
    let ok = worst <= 1e-9 && invertible == 500 && singular == 100;
    Criterion::new(
        6,
        NAME,
        ok,
        format!("max ||b_L a - pi0||, ||a b - pi1|| = {worst:.2e} (tol 1e-9); ||b_L - b_R|| = {mismatch:.1e}; invertible {invertible}/500; singular controls {singular}/100"),
    )
}

fn ellipticity_suite(_: u64) -> Criterion {
    const NAME: &str = "ellipticity decision suite";
    let run = || -> Result<(usize, f64, bool, f64, bool), String> {
        let g = EllipticityGrids::default();
        let mut passed = 0;
        for theta_ in [PI / 4.0, FRAC_PI_2, PI, 1.5 * PI] {
            let m = LaplaceTypeModel::laplacian(2, 1, theta_).map_err(|e| e.to_string())?;
            for bc in [ProjectionBC::dirichlet(1), ProjectionBC::neumann(1)] {
                if assemble_report(&m, &bc, &g).map_err(|e| e.to_string())?.pass {
                    passed += 1;
                }
            }
        }
        let q = halfspace_calculus::model::scalar_times_identity(1, |xi| xi.iter().map(|v| v * v).sum());
        let zero = LaplaceTypeModel::negative_control(2, 1, 0.0, q).map_err(|e| e.to_string())?;
        let e1 = check_e1(&zero, &g).map_err(|e| e.to_string())?;
        let w = e1.witness.clone().ok_or("no witness")?;
        // the symbol mu^2 - |xi|^2 at the witness
        let residual = (w.mu * w.mu - w.xi.iter().map(|v| v * v).sum::<f64>()).abs();
        let lap = LaplaceTypeModel::laplacian(2, 1, PI).map_err(|e| e.to_string())?;
        let abs_b = ProjectionBC::robin(1, halfspace_calculus::model::scalar_times_identity(1, |xi| xi[0].abs()));
        let pi2 = check_pi2(&lap, &abs_b, &g);
        let mu_w = pi2.witness.as_ref().map(|w| w.mu).unwrap_or(f64::NAN);
        Ok((passed, residual, e1.pass, mu_w, pi2.pass))
    };
    match run() {
        Ok((passed, res, e1_pass, mu_w, pi2_pass)) => {
            let ok = passed == 8 && !e1_pass && res <= 1e-10 && !pi2_pass && mu_w.abs() <= 1e-12;
            Criterion::new(
                7,
                NAME,
                ok,
                format!(
                    "Dirichlet/Neumann pass {passed}/8; theta=0 E1 {} with witness residual {res:.1e}; B=|xi'| Pi2 {} with witness mu={mu_w:.1e}",
                    if e1_pass { "passes" } else { "fails" },
                    if pi2_pass { "passes" } else { "fails" }
                ),
            )
        }
        Err(e) => Criterion::error(7, NAME, e),
    }
}

fn limit_symbols(_: u64) -> Criterion {
    const NAME: &str = "limit-symbol machinery";
    let run = || -> Result<(f64, usize, f64), String> {
        // p = e^{i pi/3} mu^2 + (1 + x1^2) xi1^2 + 3 xi1 + 1, so p^{(2)}(x', 0, 1) = e^{i pi/3}
        let e = C64::from_polar(1.0, FRAC_PI_3);
        let p = move |pt: &ParamPoint| {
            let (x, xi) = (pt.x_prime[0], pt.xi_prime[0]);
            CMat::from_element(1, 1, e * pt.mu * pt.mu + c((1.0 + x * x) * xi * xi + 3.0 * xi + 1.0))
        };
        let ladder: Vec<f64> = (0..=10).map(|k| 1e4 / 2f64.powi(10 - k)).collect();
        let mut err: f64 = 0.0;
        for (x, xi) in [(0.0, 0.7), (1.5, -2.0), (-0.3, 0.0)] {
            let rep = principal_limit_symbol(p, 2.0, 0.0, &[x], &[xi], &ladder).map_err(|e| e.to_string())?;
            err = err.max((rep.value[(0, 0)] - e).norm());
        }
        // kernel of e^{i theta} + d^2, checked against e^{-rho t}, rho = e^{i (theta - pi)/2}
        let mut dim_ok = usize::MAX;
        let mut angle: f64 = 0.0;
        for (l, theta_) in [(1, 0.8 * PI), (2, 0.8 * PI), (1, 0.3 * PI)] {
            let model = LaplaceTypeModel::laplacian(2, l, theta_).map_err(|e| e.to_string())?;
            let basis = HalfLineBasis::new(128, 1.0).map_err(|e| e.to_string())?;
            let ns = limit_nullspace(&model, &basis);
            if ns.dimension != l {
                dim_ok = ns.dimension;
            }
            angle = angle.max(ns.misalignment);
            let n = basis.n_modes;
            let d = basis.derivative_matrix();
            let op = CMat::identity(n, n) * C64::from_polar(1.0, theta_) + &d * &d;
            let m = op.rows(0, n - 1).into_owned();
            let (_, v) = hermitian_eigen(&(m.adjoint() * &m));
            let null = v.column(0).into_owned();
            let rho = C64::from_polar(1.0, 0.5 * (theta_ - PI));
            let mode = basis.exp_coefficients(rho);
            let mode = &mode / c(mode.norm());
            let overlap = mode.dotc(&null).norm() / null.norm();
            angle = angle.max((1.0 - overlap * overlap).max(0.0).sqrt());
        }
        Ok((err, if dim_ok == usize::MAX { 0 } else { dim_ok }, angle))
    };
    match run() {
        Ok((err, bad_dim, angle)) => Criterion::new(
            8,
            NAME,
            err <= 1e-6 && bad_dim == 0 && angle <= 1e-6,
            format!("limit at mu=1e4 error {err:.1e} (tol 1e-6); nullspace dimension {}; mode misalignment {angle:.1e} (tol 1e-6)", if bad_dim == 0 { "= L".to_string() } else { format!("{bad_dim} != L") }),
        ),
        Err(e) => Criterion::error(8, NAME, e),
    }
}

fn group_action(seed: u64) -> Criterion {
    const NAME: &str = "group-action identities";
    let run = || -> Result<(f64, f64, f64), String> {
        let basis = HalfLineBasis::new(128, 1.0).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
        let mut unit: f64 = 0.0;
        let mut fd_err: f64 = 0.0;
        for _ in 0..5 {
            let mut coeffs = CMat::zeros(basis.n_modes, 1);
            for k in 0..12 {
                coeffs[(k, 0)] = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
            let u = HalfLineFunction::new(basis.clone(), coeffs).map_err(|e| e.to_string())?;
            for lambda in [0.5, 1.7, 3.0] {
                let v = dilation(&u, lambda).map_err(|e| e.to_string())?;
                unit = unit.max((v.l2_norm() - u.l2_norm()).abs() / u.l2_norm());
            }
            let h = 1e-3;
            let dil = |l: f64| dilation(&u, l).map(|f| f.coeffs).map_err(|e| e.to_string());
            for lambda in [1.0, 1.6] {
                let fd = (dil(lambda - 2.0 * h)? - dil(lambda - h)? * c(8.0) + dil(lambda + h)? * c(8.0) - dil(lambda + 2.0 * h)?) * c(1.0 / (12.0 * h));
                let th = theta(&u, 1).map_err(|e| e.to_string())?;
                let exact = dilation(&th, lambda).map_err(|e| e.to_string())?.coeffs * c(1.0 / lambda);
                fd_err = fd_err.max((fd - exact).norm());
            }
        }
        let mut round: f64 = 0.0;
        let kernels = [
            KernelValue::exp_poisson(C64::new(1.0, 0.5)),
            KernelValue::exp_trace(c(2.0)),
            KernelValue::exp_green(c(0.7), C64::new(1.0, -0.3), c(1.5)),
            KernelValue::function(halfspace_calculus::green::KernelKind::Green, 1, 1, |t, s| CMat::from_element(1, 1, c((-(t + 2.0 * s)).exp() * (1.0 + t * s)))),
        ];
        for (xi, mu) in [(0.3, 0.1), (2.0, 1.0), (-5.0, 7.0)] {
            let pt = ParamPoint::at_origin(vec![xi], mu).map_err(|e| e.to_string())?;
            for k in &kernels {
                let back = untwist(&twist(k, &pt).map_err(|e| e.to_string())?, &pt).map_err(|e| e.to_string())?;
                for (t, s) in [(0.0, 0.0), (0.3, 1.1), (2.0, 0.5), (5.0, 4.0)] {
                    round = round.max((back.eval(t, s) - k.eval(t, s)).norm());
                }
            }
        }
        Ok((unit, fd_err, round))
    };
    match run() {
        Ok((u, fd, r)) => Criterion::new(
            9,
            NAME,
            u <= 1e-8 && fd <= 1e-6 && r <= 1e-12,
            format!("dilation norm defect {u:.1e} (1e-8); d/dlambda vs Theta_1 {fd:.1e} (1e-6); twist round trip {r:.1e} (1e-12)"),
        ),
        Err(e) => Criterion::error(9, NAME, e),
    }
}

fn transmission(_: u64) -> Criterion {
    const NAME: &str = "transmission checker";
    let d = TransmissionDepth { k: 1, alpha: 2, j: 2, ell: 0 };
    let sq = check_transmission(&FullSymbol::scalar(2, 1, |_, _, _, xin, _| c(xin * xin)), d, &[0.0]).pass;
    let abs = check_transmission(&FullSymbol::scalar(1, 1, |_, _, xi, xin, mu| c((xi[0] * xi[0] + xin * xin + mu * mu).sqrt())), d, &[0.0]).pass;
    let lin = check_transmission(&FullSymbol::scalar(1, 1, |_, _, _, xin, _| I * xin), d, &[0.0]).pass;
    let verdict = |b: bool| if b { "passes" } else { "fails" };
    Criterion::new(10, NAME, sq && !abs && lin, format!("xi_n^2 {}, |xi| {}, xi_n {}", verdict(sq), verdict(abs), verdict(lin)))
}
