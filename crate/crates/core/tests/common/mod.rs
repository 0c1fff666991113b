#![allow(dead_code)]

pub mod oracle;

use std::collections::BTreeMap;

use modlock::adjoint::{solve_adjoint, AdjointOptions, AdjointPair};
use modlock::orbit::{default_anchor, default_seed, find_orbit, OrbitOptions, PeriodicOrbit, SeedOptions};
use modlock::system::{builtin, EquivariantSystem, ParamValue};

pub fn system(name: &str, params: &[(&str, &str)]) -> EquivariantSystem {
    let map: BTreeMap<String, ParamValue> = params
        .iter()
        .map(|(k, v)| {
            let value = v
                .parse::<f64>()
                .map(ParamValue::Number)
                .unwrap_or_else(|_| ParamValue::Text(v.to_string()));
            (k.to_string(), value)
        })
        .collect();
    builtin(name, &map).unwrap()
}

pub fn orbit_with(sys: &EquivariantSystem, n_psi: usize) -> PeriodicOrbit {
    let seed = default_seed(sys, &SeedOptions::default()).unwrap();
    let opts = OrbitOptions {
        n_psi,
        anchor: default_anchor(sys),
        ..OrbitOptions::default()
    };
    find_orbit(sys, &seed.state, seed.alpha0, seed.beta0, &opts).unwrap()
}

pub fn pipeline(sys: &EquivariantSystem, n_psi: usize) -> (PeriodicOrbit, AdjointPair) {
    let orbit = orbit_with(sys, n_psi);
    let pair = solve_adjoint(&orbit, sys, &AdjointOptions::default()).unwrap();
    (orbit, pair)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
