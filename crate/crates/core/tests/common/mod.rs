#![allow(dead_code)]

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use expabs_lm::data::{load_delimited, RawData, SchemaConfig};
use expabs_lm::{init_network, Network, NetworkSpec};

pub fn datasets_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../datasets")
}

pub fn load(name: &str) -> (SchemaConfig, RawData) {
    let dir = datasets_dir();
    let schema = SchemaConfig::load(dir.join(format!("{name}.toml"))).unwrap();
    let data = [
        format!("{name}.data"),
        format!("{name}.csv"),
        format!("{name}_subsample.data"),
    ]
    .into_iter()
    .map(|f| dir.join(f))
    .find(|p| p.exists())
    .unwrap_or_else(|| panic!("no data file for {name}"));
    let raw = load_delimited(data, &schema).unwrap();
    (schema, raw)
}

/// Ridders' extrapolation of central differences. Returns the derivative
/// and the error estimate.
pub fn ridders<F: Fn(f64) -> f64>(f: F, x: f64, h0: f64) -> (f64, f64) {
    const CON: f64 = 1.4;
    const CON2: f64 = CON * CON;
    const NTAB: usize = 12;
    const SAFE: f64 = 2.0;
    let mut a = [[0.0f64; NTAB]; NTAB];
    let mut h = h0;
    a[0][0] = (f(x + h) - f(x - h)) / (2.0 * h);
    let mut err = f64::INFINITY;
    let mut ans = a[0][0];
    for i in 1..NTAB {
        h /= CON;
        a[0][i] = (f(x + h) - f(x - h)) / (2.0 * h);
        let mut fac = CON2;
        for j in 1..=i {
            a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
            fac *= CON2;
            let e = (a[j][i] - a[j - 1][i])
                .abs()
                .max((a[j][i] - a[j - 1][i - 1]).abs());
            if e <= err {
                err = e;
                ans = a[j][i];
            }
        }
        if (a[i][i] - a[i - 1][i - 1]).abs() >= SAFE * err {
            break;
        }
    }
    (ans, err)
}

pub struct Problem {
    pub net: Network,
    pub inputs: DMatrix<f64>,
    pub targets: DMatrix<f64>,
    pub tau: f64,
}

/// Random network, inputs and targets in [0, 1] and τ log-uniform in
/// [0.05, 1e4].
pub fn random_problem(sizes: &[usize], patterns: usize, seed: u64) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = NetworkSpec::new(sizes.to_vec(), rng.gen());
    spec.init_range = (-1.0, 1.0);
    let net = init_network(spec).unwrap();
    let n_in = sizes[0];
    let n_out = *sizes.last().unwrap();
    let inputs = DMatrix::from_fn(patterns, n_in, |_, _| rng.gen::<f64>());
    let targets = DMatrix::from_fn(patterns, n_out, |_, _| rng.gen::<f64>());
    let tau = 10f64.powf(rng.gen_range(0.05f64.log10()..=4.0));
    Problem {
        net,
        inputs,
        targets,
        tau,
    }
}

pub struct GradientReport {
    pub entries: usize,
    pub mismatches: usize,
    /// Largest |analytic - fd| / allowed.
    pub worst: f64,
}

/// Every entry of the extended Jacobian against Ridders-extrapolated central
/// differences of err_p, tolerance 1e-5 relative with a 1e-8 absolute floor.
pub fn check_gradients(p: &Problem) -> GradientReport {
    use expabs_lm::jacobian::build_extended_jacobian;
    use expabs_lm::measures::err_expabs;
    use expabs_lm::Tau;

    let tau = Tau::new(p.tau).unwrap();
    let (j, _) = build_extended_jacobian(&p.net, &p.inputs, &p.targets, tau).unwrap();
    let w = p.net.weight_count();
    let params = p.net.flatten();
    let mut report = GradientReport {
        entries: 0,
        mismatches: 0,
        worst: 0.0,
    };
    let mut compare = |analytic: f64, fd: f64| {
        let allowed = (1e-5 * fd.abs()).max(1e-8);
        let ratio = (analytic - fd).abs() / allowed;
        report.entries += 1;
        report.worst = report.worst.max(ratio);
        if ratio > 1.0 {
            report.mismatches += 1;
        }
    };
    for pat in 0..p.inputs.nrows() {
        let x: Vec<f64> = p.inputs.row(pat).iter().copied().collect();
        let t: Vec<f64> = p.targets.row(pat).iter().copied().collect();
        let err_at = |net: &Network, tv: Tau| {
            let o = net.forward(&x).unwrap();
            let e: Vec<f64> = t
                .iter()
                .zip(o.output().iter())
                .map(|(a, b)| a - b)
                .collect();
            err_expabs(&e, tv)
        };
        for k in 0..w {
            let f = |v: f64| {
                let mut q = params.clone();
                q[k] = v;
                err_at(&p.net.unflatten(&q).unwrap(), tau)
            };
            let (fd, _) = ridders(f, params[k], 0.1 * p.tau.min(1.0));
            compare(j.matrix[(k, pat)], fd);
        }
        let f = |v: f64| err_at(&p.net, Tau::new(v).unwrap());
        let (fd, _) = ridders(f, p.tau, 0.1 * p.tau);
        compare(j.matrix[(w, pat)], fd);
    }
    report
}
