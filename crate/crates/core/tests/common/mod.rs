#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sprinql::mdp::{OccupancyMeasure, Policy, QTable, TabularMdp};
use sprinql::objective::{EmpiricalExpectations, Record};
use sprinql::Table;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_simplex<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    // exponential spacings give a uniform point on the simplex
    let xs: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let z: f64 = xs.iter().sum();
    xs.into_iter().map(|x| x / z).collect()
}

pub fn random_mdp<R: Rng>(rng: &mut R, ns: usize, na: usize, gamma: f64) -> TabularMdp {
    let mut trans = Vec::with_capacity(ns * na * ns);
    for _ in 0..ns * na {
        trans.extend(random_simplex(rng, ns));
    }
    let reward = Table::from_fn(ns, na, |_, _| rng.gen_range(-1.0..1.0));
    let init = random_simplex(rng, ns);
    TabularMdp::new(ns, na, trans, reward, gamma, init).unwrap()
}

pub fn random_policy<R: Rng>(rng: &mut R, ns: usize, na: usize) -> Policy {
    let mut t = Table::zeros(ns, na);
    for s in 0..ns {
        t.row_mut(s).copy_from_slice(&random_simplex(rng, na));
    }
    Policy::new(t).unwrap()
}

pub fn random_q<R: Rng>(rng: &mut R, ns: usize, na: usize, hi: f64) -> QTable {
    QTable(Table::from_fn(ns, na, |_, _| rng.gen_range(0.0..hi)))
}

/// Exact expectations with random positive weight on every pair.
pub fn random_expectations<R: Rng>(rng: &mut R, mdp: &TabularMdp) -> EmpiricalExpectations {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut records = Vec::new();
    let mut d = vec![0.0; ns];
    for s in 0..ns {
        for a in 0..na {
            let w = rng.gen_range(0.05..1.0);
            d[s] += w;
            records.push(Record {
                s,
                a,
                next: mdp.next_dist(s, a).iter().copied().enumerate().collect(),
                weight: w,
            });
        }
    }
    EmpiricalExpectations::from_records(ns, na, mdp.discount(), records, d).unwrap()
}

/// Occupancy measure by truncated power series `(1 - gamma) sum_t gamma^t d_t`.
pub fn occupancy_power_series(mdp: &TabularMdp, pi: &Policy, terms: usize) -> OccupancyMeasure {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut d = mdp.initial_dist().to_vec();
    let mut rho = Table::zeros(ns, na);
    let mut g = 1.0 - mdp.discount();
    for _ in 0..terms {
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            for a in 0..na {
                let m = d[s] * pi.prob(s, a);
                rho[(s, a)] += g * m;
                for (t, p) in mdp.next_dist(s, a).iter().enumerate() {
                    next[t] += m * p;
                }
            }
        }
        d = next;
        g *= mdp.discount();
    }
    OccupancyMeasure(rho)
}

/// Plain soft value iteration without max-shifting, for small well-scaled rewards.
pub fn naive_soft_vi(mdp: &TabularMdp, reward: &Table, sweeps: usize) -> Table {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut q = Table::zeros(ns, na);
    for _ in 0..sweeps {
        let v: Vec<f64> = (0..ns).map(|s| q.row(s).iter().map(|x| x.exp()).sum::<f64>().ln()).collect();
        q = Table::from_fn(ns, na, |s, a| {
            reward[(s, a)]
                + mdp.discount() * mdp.next_dist(s, a).iter().zip(&v).map(|(p, x)| p * x).sum::<f64>()
        });
    }
    q
}

pub fn central_difference(f: impl Fn(&Table) -> f64, x: &Table, h: f64) -> Table {
    let mut g = Table::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let mut plus = x.clone();
            plus[(i, j)] += h;
            let mut minus = x.clone();
            minus[(i, j)] -= h;
            g[(i, j)] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
    }
    g
}
